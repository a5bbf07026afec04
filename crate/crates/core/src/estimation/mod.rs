//! Weighted least squares state estimation and the innovation-corrected
//! Chi-square bad data test.
//!
//! Each sample is estimated from a flat start by Gauss-Newton iterations on
//! the normal equations. After convergence the diagonal of the weighted hat
//! matrix gives every measurement's Innovation Index, which rescales the
//! residual into the Composed Measurement Error (CME). The sum of squared,
//! σ-normalised CMEs is the sample's score and is compared with a χ²
//! quantile.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::case::{MeasurementSchema, NetworkCase};
use crate::error::{Error, Result};
use crate::powerflow::{Jacobian, MeasurementFunction, StateVector};
use crate::scenario::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsConfig {
    /// Convergence threshold on the infinity norm of the state update.
    pub tol: f64,
    pub max_iter: usize,
    /// Significance level of the Chi-square test.
    pub alpha_chi: f64,
    /// |CME| assigned to a critical measurement with a nonzero residual, in
    /// multiples of that measurement's σ.
    pub cme_cap: f64,
}

impl Default for WlsConfig {
    fn default() -> Self {
        WlsConfig {
            tol: 1e-6,
            max_iter: 50,
            alpha_chi: 0.05,
            cme_cap: 1e3,
        }
    }
}

impl WlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidInput("WLS needs tol > 0 and max_iter > 0".into()));
        }
        if !(self.alpha_chi > 0.0 && self.alpha_chi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha_chi must lie in (0, 1), got {}",
                self.alpha_chi
            )));
        }
        if !(self.cme_cap > 0.0) {
            return Err(Error::InvalidInput("cme_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal measurement covariance used for weighting, as standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeCovariance {
    sigma_se: Vec<f64>,
}

impl SeCovariance {
    pub fn new(sigma_se: Vec<f64>) -> Result<Self> {
        if let Some(i) = sigma_se.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "sigma_se[{i}] = {} is not positive",
                sigma_se[i]
            )));
        }
        Ok(SeCovariance { sigma_se })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma_se
    }

    pub fn weights(&self) -> Vec<f64> {
        self.sigma_se.iter().map(|s| 1.0 / (s * s)).collect()
    }
}

/// Outcome of the Gauss-Newton iterations for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsEstimate {
    pub x_hat: StateVector,
    /// z − h(x̂).
    pub r: Vec<f64>,
    /// Weighted cost J(x̂).
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gain matrix HᵀWH of a sparse Jacobian.
pub fn gain_matrix(jac: &Jacobian, weights: &[f64]) -> DMatrix<f64> {
    let n = jac.ncols();
    let mut g = DMatrix::zeros(n, n);
    for (i, &w) in weights.iter().enumerate() {
        let row = jac.row(i);
        for &(a, va) in row {
            let wa = w * va;
            for &(b, vb) in row {
                if b >= a {
                    g[(a, b)] += wa * vb;
                }
            }
        }
    }
    g.fill_lower_triangle_with_upper_triangle();
    g
}

fn factor(jac: &Jacobian, weights: &[f64]) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(gain_matrix(jac, weights)).ok_or(Error::Unobservable)
}

/// Estimates the state behind `z` from a flat start.
pub fn wls_estimate(h: &MeasurementFunction, z: &[f64], cov: &SeCovariance, cfg: &WlsConfig) -> Result<WlsEstimate> {
    if z.len() != h.len() || cov.sigma().len() != h.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} measurements, got z of {} and sigma of {}",
            h.len(),
            z.len(),
            cov.sigma().len()
        )));
    }
    let layout = h.layout();
    let w = cov.weights();
    let mut x = StateVector::flat(layout);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let hx = h.eval(&x);
        let jac = h.jacobian(&x);
        let chol = factor(&jac, &w)?;
        let mut rhs = DVector::zeros(layout.n_states());
        for i in 0..z.len() {
            let wr = w[i] * (z[i] - hx[i]);
            for &(c, v) in jac.row(i) {
                rhs[c] += v * wr;
            }
        }
        let dx = chol.solve(&rhs);
        if dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        x.apply(layout, dx.as_slice());
        if dx.amax() < cfg.tol {
            converged = true;
            break;
        }
    }
    let r: Vec<f64> = h.eval(&x).iter().zip(z).map(|(hx, z)| z - hx).collect();
    let cost = r.iter().zip(&w).map(|(r, w)| w * r * r).sum::<f64>();
    let converged = converged && cost.is_finite();
    Ok(WlsEstimate {
        x_hat: x,
        r,
        cost,
        iterations,
        converged,
    })
}

/// Diagonal of the weighted hat matrix K = H(HᵀWH)⁻¹HᵀW, clamped to [0, 1]
/// with values within 1e-10 of one snapped to one.
pub fn projection_diagonal(jac: &Jacobian, cov: &SeCovariance) -> Result<Vec<f64>> {
    let w = cov.weights();
    let ginv = factor(jac, &w)?.inverse();
    Ok((0..jac.nrows())
        .map(|i| {
            let row = jac.row(i);
            let mut q = 0.0;
            for &(a, va) in row {
                for &(b, vb) in row {
                    q += va * vb * ginv[(a, b)];
                }
            }
            let p = (w[i] * q).clamp(0.0, 1.0);
            if 1.0 - p < 1e-10 {
                1.0
            } else {
                p
            }
        })
        .collect())
}

/// Innovation Index `sqrt((1 − P_ii)/P_ii)` per measurement; `+∞` when
/// `P_ii = 0`.
pub fn innovation_index(jac: &Jacobian, cov: &SeCovariance) -> Result<Vec<f64>> {
    Ok(projection_diagonal(jac, cov)?
        .into_iter()
        .map(index_from_projection)
        .collect())
}

fn index_from_projection(p: f64) -> f64 {
    if p == 0.0 {
        f64::INFINITY
    } else {
        ((1.0 - p) / p).sqrt()
    }
}

/// Composed Measurement Error `r·sqrt(1 + 1/II²)`. A critical measurement
/// (II = 0) with a nonzero residual gets `±cap`.
pub fn cme(r: &[f64], ii: &[f64], cap: f64) -> Vec<f64> {
    r.iter().zip(ii).map(|(&r, &ii)| compose(r, ii, cap)).collect()
}

fn compose(r: f64, ii: f64, cap: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if ii.is_infinite() {
        r
    } else if ii == 0.0 {
        log::warn!("critical measurement with residual {r:.3e}; CME capped");
        cap.copysign(r)
    } else {
        r * (1.0 + 1.0 / (ii * ii)).sqrt()
    }
}

/// Upper `alpha` quantile of the χ² distribution with `d` degrees of freedom.
pub fn chi2_quantile(d: usize, alpha: f64) -> f64 {
    ChiSquared::new(d as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Ψ = Σ (CME_i/σ_i)² and whether it exceeds the χ² quantile with `d`
/// degrees of freedom at significance `alpha`.
pub fn chi_square_test(cme: &[f64], sigma: &[f64], d: usize, alpha: f64) -> (f64, bool) {
    let score: f64 = cme.iter().zip(sigma).map(|(c, s)| (c / s).powi(2)).sum();
    (score, score > chi2_quantile(d, alpha))
}

/// Everything the detector knows about one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SeResult {
    pub x_hat: StateVector,
    pub r: Vec<f64>,
    pub ii: Vec<f64>,
    pub cme: Vec<f64>,
    pub score: f64,
    pub converged: bool,
    pub chi2_flag: bool,
    pub iterations: usize,
}

/// Score assigned to samples the estimator could not solve.
pub const SENTINEL_SCORE: f64 = f64::MAX;

/// A compiled estimator for one case, schema and weighting.
pub struct StateEstimator {
    h: MeasurementFunction,
    cov: SeCovariance,
    cfg: WlsConfig,
    threshold: f64,
}

impl StateEstimator {
    pub fn new(case: &NetworkCase, schema: &MeasurementSchema, cov: SeCovariance, cfg: WlsConfig) -> Result<Self> {
        cfg.validate()?;
        if cov.sigma().len() != schema.len() {
            return Err(Error::InvalidInput("covariance does not match the schema".into()));
        }
        let h = MeasurementFunction::new(case, schema);
        let threshold = chi2_quantile(h.len(), cfg.alpha_chi);
        Ok(StateEstimator { h, cov, cfg, threshold })
    }

    pub fn measurement_function(&self) -> &MeasurementFunction {
        &self.h
    }

    /// χ² threshold the score is compared with.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn estimate(&self, z: &[f64]) -> Result<WlsEstimate> {
        wls_estimate(&self.h, z, &self.cov, &self.cfg)
    }

    /// Estimation, innovation analysis and the Chi-square test for one sample.
    pub fn analyze(&self, z: &[f64]) -> Result<SeResult> {
        let est = self.estimate(z)?;
        let d = self.h.len();
        if !est.converged {
            return Ok(SeResult {
                x_hat: est.x_hat,
                r: est.r,
                ii: vec![f64::NAN; d],
                cme: vec![f64::NAN; d],
                score: SENTINEL_SCORE,
                converged: false,
                chi2_flag: true,
                iterations: est.iterations,
            });
        }
        let jac = self.h.jacobian(&est.x_hat);
        let ii = innovation_index(&jac, &self.cov)?;
        let sigma = self.cov.sigma();
        // residuals of critical measurements are zero up to solver tolerance
        let r: Vec<f64> = est
            .r
            .iter()
            .zip(&ii)
            .zip(sigma)
            .map(|((&r, &ii), s)| if ii == 0.0 && r.abs() < 1e-6 * s { 0.0 } else { r })
            .collect();
        let cme: Vec<f64> = r
            .iter()
            .zip(&ii)
            .zip(sigma)
            .map(|((&r, &ii), s)| compose(r, ii, self.cfg.cme_cap * s))
            .collect();
        let (score, _) = chi_square_test(&cme, sigma, d, self.cfg.alpha_chi);
        Ok(SeResult {
            x_hat: est.x_hat,
            r: est.r,
            ii,
            cme,
            score,
            converged: true,
            chi2_flag: score > self.threshold,
            iterations: est.iterations,
        })
    }
}

/// One row of the SE score table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeScore {
    pub t: usize,
    pub psi_se: f64,
    pub flag: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// Scores every sample of a dataset, in sample order. Samples that fail to
/// converge or are unobservable get [`SENTINEL_SCORE`] and are logged.
pub fn run_se_detector(case: &NetworkCase, dataset: &Dataset, cfg: &WlsConfig) -> Result<Vec<SeScore>> {
    let cov = SeCovariance::new(dataset.sigma_se.clone())?;
    let est = StateEstimator::new(case, &dataset.schema, cov, *cfg)?;
    Ok(dataset
        .samples
        .par_iter()
        .map(|s| match est.analyze(&s.z) {
            Ok(res) => {
                if !res.converged {
                    log::warn!("sample {}: state estimation did not converge", s.t);
                }
                SeScore {
                    t: s.t,
                    psi_se: res.score,
                    flag: res.chi2_flag,
                    converged: res.converged,
                    iterations: res.iterations,
                }
            }
            Err(e) => {
                log::warn!("sample {}: {e}", s.t);
                SeScore {
                    t: s.t,
                    psi_se: SENTINEL_SCORE,
                    flag: true,
                    converged: false,
                    iterations: 0,
                }
            }
        })
        .collect())
}
