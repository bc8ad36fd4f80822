//! Additive noise on outgoing local predictions.
//!
//! Draws are counter-based: the noise for `(seed, stream, draw_index)` is a
//! pure function of those three numbers, so noisy runs replay exactly.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMechanism {
    None,
    /// `Laplace(0, b)`, variance `2 b^2`.
    Laplace,
    /// `Normal(0, b^2)`.
    Gaussian,
}

impl FromStr for NoiseMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseMechanism::None),
            "laplace" => Ok(NoiseMechanism::Laplace),
            "gaussian" | "normal" => Ok(NoiseMechanism::Gaussian),
            other => Err(Error::config(format!("unknown noise mechanism `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMechanism::None => "none",
            NoiseMechanism::Laplace => "laplace",
            NoiseMechanism::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub mechanism: NoiseMechanism,
    /// Scale `b` of the additive distribution.
    pub level: f64,
    pub seed: u64,
    /// Independent stream per party.
    pub stream: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            mechanism: NoiseMechanism::None,
            level: 0.0,
            seed: 0,
            stream: 0,
        }
    }

    pub fn new(mechanism: NoiseMechanism, level: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(level.is_finite() && level >= 0.0) {
            return Err(Error::config(format!("noise level {level} must be finite and non-negative")));
        }
        Ok(NoiseSpec {
            mechanism,
            level,
            seed,
            stream,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.mechanism == NoiseMechanism::None || self.level == 0.0
    }

    /// The noise term alone.
    pub fn sample(&self, draw_index: u64) -> f64 {
        if self.is_identity() {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        // four 32-bit words per draw
        rng.set_word_pos(u128::from(draw_index) * 4);
        let u1 = open_unit(rng.next_u64());
        let u2 = open_unit(rng.next_u64());
        match self.mechanism {
            NoiseMechanism::None => 0.0,
            NoiseMechanism::Laplace => {
                let centred = u1 - 0.5;
                -self.level * centred.signum() * (1.0 - 2.0 * centred.abs()).ln()
            }
            NoiseMechanism::Gaussian => {
                self.level * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
        }
    }
}

/// Maps 64 random bits to the open interval `(0, 1)`.
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `value + noise(draw_index)`; the identity when the mechanism is off or `b = 0`.
pub fn perturb(value: f64, spec: &NoiseSpec, draw_index: u64) -> f64 {
    if spec.is_identity() {
        value
    } else {
        value + spec.sample(draw_index)
    }
}
