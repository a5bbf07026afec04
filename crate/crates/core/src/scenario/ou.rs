use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::case::NetworkCase;
use crate::error::{Error, Result};
use crate::powerflow::Loads;

/// Smallest load multiplier a drifting path may take.
pub const MIN_MULTIPLIER: f64 = 0.01;

/// Mean-reverting process `dX = β(μ − X)dt + σ_n dW`, stepped exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess {
    pub beta: f64,
    pub sigma_n: f64,
    pub mu: f64,
    pub dt: f64,
    pub state: f64,
}

impl OuProcess {
    pub fn new(beta: f64, sigma_n: f64, mu: f64, dt: f64, x0: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("O-U beta must be positive, got {beta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("O-U dt must be positive, got {dt}")));
        }
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "O-U sigma_n must be non-negative, got {sigma_n}"
            )));
        }
        Ok(OuProcess {
            beta,
            sigma_n,
            mu,
            dt,
            state: x0,
        })
    }

    /// Advances one step given a standard normal draw and returns the new state.
    pub fn step(&mut self, noise: f64) -> f64 {
        let decay = (-self.beta * self.dt).exp();
        let spread = self.sigma_n * ((1.0 - decay * decay) / (2.0 * self.beta)).sqrt();
        self.state = self.mu + (self.state - self.mu) * decay + spread * noise;
        self.state
    }

    /// Variance of the stationary distribution, `σ_n²/(2β)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma_n * self.sigma_n / (2.0 * self.beta)
    }
}

/// Load drift settings shared by every bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuConfig {
    pub beta: f64,
    pub sigma_n: f64,
    pub dt: f64,
    /// Mean multiplier used until the first re-anchoring.
    pub mu: f64,
    /// Samples between redraws of every bus's mean; `None` keeps `mu` forever.
    pub mean_update_period: Option<usize>,
    /// Range the redrawn means are sampled from, uniformly.
    pub mean_range: (f64, f64),
    /// Drive active and reactive demand with one shared path per bus.
    pub shared_pq: bool,
}

impl Default for OuConfig {
    fn default() -> Self {
        let beta = 0.05;
        OuConfig {
            beta,
            // stationary std of 3% of base load
            sigma_n: 0.03 * (2.0 * beta).sqrt(),
            dt: 1.0,
            mu: 1.0,
            mean_update_period: Some(1000),
            mean_range: (0.9, 1.1),
            shared_pq: true,
        }
    }
}

impl OuConfig {
    pub fn validate(&self) -> Result<()> {
        OuProcess::new(self.beta, self.sigma_n, self.mu, self.dt, self.mu)?;
        let (lo, hi) = self.mean_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput(format!("O-U mean range [{lo}, {hi}] is invalid")));
        }
        if self.mean_update_period == Some(0) {
            return Err(Error::InvalidInput("mean_update_period must be positive".into()));
        }
        Ok(())
    }
}

/// Drifting load scenarios and how often a path had to be clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadPaths {
    pub loads: Vec<Loads>,
    pub clamped: usize,
}

/// Draws `k` load vectors by scaling each bus's base demand with its own
/// O-U multiplier path.
pub fn gen_loads(case: &NetworkCase, cfg: &OuConfig, k: usize, seed: u64) -> Result<LoadPaths> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let base = case.base_loads();
    let n = case.n_buses();
    let n_paths = if cfg.shared_pq { n } else { 2 * n };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths: Vec<OuProcess> = (0..n_paths)
        .map(|_| OuProcess::new(cfg.beta, cfg.sigma_n, cfg.mu, cfg.dt, cfg.mu))
        .collect::<Result<_>>()?;

    let mut clamped = 0;
    let mut loads = Vec::with_capacity(k);
    let mut mult = vec![0.0; n_paths];
    for t in 0..k {
        if let Some(period) = cfg.mean_update_period {
            if t > 0 && t % period == 0 {
                for p in &mut paths {
                    p.mu = rng.random_range(cfg.mean_range.0..=cfg.mean_range.1);
                }
            }
        }
        for (p, m) in paths.iter_mut().zip(&mut mult) {
            let noise: f64 = rng.sample(StandardNormal);
            let x = p.step(noise);
            *m = if x < MIN_MULTIPLIER {
                clamped += 1;
                MIN_MULTIPLIER
            } else {
                x
            };
        }
        let q_mult = if cfg.shared_pq { &mult[..n] } else { &mult[n..] };
        loads.push(Loads {
            p: base.p.iter().zip(&mult[..n]).map(|(b, m)| b * m).collect(),
            q: base.q.iter().zip(q_mult).map(|(b, m)| b * m).collect(),
        });
    }
    if clamped > 0 {
        log::warn!("load multiplier clamped at {MIN_MULTIPLIER} {clamped} times");
    }
    Ok(LoadPaths { loads, clamped })
}
