//! Scanner domains and the 4-component style codes that condition the
//! transfer generator.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scanner styles the transfer module is trained on.
pub const NUM_DOMAINS: usize = 4;

/// Scanner id. `0..=3` are training styles; `4` is the held-out style used
/// only for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ScannerDomain(u8);

impl ScannerDomain {
    pub const UNSEEN: ScannerDomain = ScannerDomain(4);
    pub const TRAINING: [ScannerDomain; NUM_DOMAINS] =
        [ScannerDomain(0), ScannerDomain(1), ScannerDomain(2), ScannerDomain(3)];
    pub const ALL: [ScannerDomain; 5] = [
        ScannerDomain(0),
        ScannerDomain(1),
        ScannerDomain(2),
        ScannerDomain(3),
        ScannerDomain(4),
    ];

    pub fn new(id: u8) -> Result<Self> {
        if id <= 4 {
            Ok(Self(id))
        } else {
            Err(Error::InvalidDomain(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_training(self) -> bool {
        self.0 < 4
    }
}

impl TryFrom<u8> for ScannerDomain {
    type Error = Error;
    fn try_from(id: u8) -> Result<Self> {
        Self::new(id)
    }
}

impl From<ScannerDomain> for u8 {
    fn from(d: ScannerDomain) -> u8 {
        d.0
    }
}

impl fmt::Display for ScannerDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scanner-{}", self.0)
    }
}

/// Non-negative mixing weights over the four training styles, summing to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleCode([f64; NUM_DOMAINS]);

impl StyleCode {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(weights: [f64; NUM_DOMAINS]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidStyleCode(weights));
        }
        Ok(Self(weights))
    }

    /// One-hot code selecting a single training scanner.
    pub fn one_hot(domain: ScannerDomain) -> Result<Self> {
        if !domain.is_training() {
            return Err(Error::InvalidDomain(domain.id()));
        }
        let mut w = [0.0; NUM_DOMAINS];
        w[domain.index()] = 1.0;
        Ok(Self(w))
    }

    /// Uniform draw from the 3-simplex: Dirichlet(1, 1, 1, 1), built from
    /// normalized unit exponentials.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let mut w = [0.0; NUM_DOMAINS];
        for v in &mut w {
            let e: f64 = Exp1.sample(rng);
            *v = e;
        }
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        Self(w)
    }

    pub fn weights(&self) -> [f64; NUM_DOMAINS] {
        self.0
    }

    /// Index of the dominant component.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_DOMAINS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}
