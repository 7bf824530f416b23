use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `stream` of a run seeded with `seed`. Loops
/// draw iteration `i` from stream `i + 1` so that any iteration can be
/// replayed or resumed without replaying earlier ones.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(3, 1).random();
        let b: u64 = stream_rng(3, 2).random();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(3, 1).random::<u64>());
    }
}
