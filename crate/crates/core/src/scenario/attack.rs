use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random additive false data injection campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackPlan {
    /// Share of samples that receive an injection.
    pub fraction_attacked: f64,
    /// Inclusive range for how many measurements one attacked sample gets.
    pub meas_per_attack: (usize, usize),
    /// Inclusive range of bias magnitudes, in multiples of the target's σ.
    pub magnitude: (f64, f64),
    pub rng_seed: u64,
}

impl Default for AttackPlan {
    fn default() -> Self {
        AttackPlan {
            fraction_attacked: 0.05,
            meas_per_attack: (1, 3),
            magnitude: (5.0, 15.0),
            rng_seed: 0,
        }
    }
}

impl AttackPlan {
    pub fn validate(&self) -> Result<()> {
        let f = self.fraction_attacked;
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidInput(format!(
                "fraction_attacked must lie in [0, 1), got {f}"
            )));
        }
        let (lo, hi) = self.meas_per_attack;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidInput(format!(
                "meas_per_attack range {lo}..={hi} is invalid"
            )));
        }
        let (a, b) = self.magnitude;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "attack magnitude range [{a}, {b}] is invalid"
            )));
        }
        Ok(())
    }

    /// Number of attacked samples out of `k`.
    pub fn attacked_count(&self, k: usize) -> usize {
        (self.fraction_attacked * k as f64).round() as usize
    }

    /// Draws the campaign for `k` samples. Targets come from `candidates`.
    pub fn draw(&self, k: usize, candidates: &[usize]) -> Result<Vec<Injection>> {
        self.validate()?;
        let n_attacked = self.attacked_count(k);
        if n_attacked == 0 {
            return Ok(Vec::new());
        }
        if candidates.len() < self.meas_per_attack.1 {
            return Err(Error::InvalidInput(format!(
                "only {} attackable measurements for up to {} targets per sample",
                candidates.len(),
                self.meas_per_attack.1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let mut samples = index::sample(&mut rng, k, n_attacked).into_vec();
        samples.sort_unstable();
        let out = samples
            .into_iter()
            .map(|t| {
                let count = rng.random_range(self.meas_per_attack.0..=self.meas_per_attack.1);
                let mut targets: Vec<usize> = candidates.choose_multiple(&mut rng, count).copied().collect();
                targets.sort_unstable();
                let bias = targets
                    .iter()
                    .map(|_| {
                        let m = rng.random_range(self.magnitude.0..=self.magnitude.1);
                        if rng.random_bool(0.5) {
                            m
                        } else {
                            -m
                        }
                    })
                    .collect();
                Injection {
                    sample: t,
                    indices: targets,
                    bias_sigmas: bias,
                }
            })
            .collect();
        Ok(out)
    }
}

/// Biases added to one sample, `bias_sigmas[j]·σ[indices[j]]` at `indices[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub sample: usize,
    pub indices: Vec<usize>,
    pub bias_sigmas: Vec<f64>,
}

impl Injection {
    pub fn apply(&self, z: &mut [f64], sigma: &[f64]) {
        for (&i, &b) in self.indices.iter().zip(&self.bias_sigmas) {
            z[i] += b * sigma[i];
        }
    }
}
