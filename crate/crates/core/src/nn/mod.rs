//! Minimal convolutional network engine: NCHW tensors, explicit
//! forward traces and hand-written backward passes, generic over `f32` and
//! `f64` so that gradient checks run in double precision.

mod layers;
mod linalg;
mod optim;
mod tensor;

pub use layers::{upsample2x, upsample2x_backward, Conv2d, GroupNorm, Layer, Module, NormTrace, Param, Seq, SeqTrace};
pub use linalg::matmul;
pub use optim::{Adam, Sgd};
pub use tensor::{Real, Tensor};
