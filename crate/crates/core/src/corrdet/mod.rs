//! Mahalanobis-distance anomaly detection over measurement vectors: a single
//! global detector and a per-bus ensemble whose members each watch the
//! meters attached to one bus.

mod threshold;

pub(crate) use threshold::mean_std;
pub use threshold::{f1_score, select_threshold, EtaGrid, Threshold};

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::case::MeasurementSchema;
use crate::error::{Error, Result};
use crate::scenario::Dataset;

/// Diagonal loading added to every fitted covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `factor · trace(Σ)/dim`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrDetConfig {
    pub eta_grid: EtaGrid,
    pub ridge: Ridge,
    /// η used when the training labels hold a single class.
    pub default_eta: f64,
}

impl Default for CorrDetConfig {
    fn default() -> Self {
        CorrDetConfig {
            eta_grid: EtaGrid::default(),
            ridge: Ridge::default(),
            default_eta: 3.0,
        }
    }
}

impl CorrDetConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.eta_grid;
        if !(g.step > 0.0) || !(g.stop >= g.start) || !g.start.is_finite() || !g.stop.is_finite() {
            return Err(Error::InvalidInput(format!(
                "eta grid {}..{} step {} is not an increasing finite range",
                g.start, g.stop, g.step
            )));
        }
        let r = match self.ridge {
            Ridge::Relative(r) | Ridge::Absolute(r) => r,
        };
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidInput(format!("ridge {r} must be finite and >= 0")));
        }
        if !self.default_eta.is_finite() {
            return Err(Error::InvalidInput("default_eta must be finite".into()));
        }
        Ok(())
    }
}

/// Sample mean, ridge-loaded inverse covariance and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalStats {
    pub mu: Vec<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub ridge: f64,
    pub condition_number: f64,
}

/// Fits mean and unbiased covariance of `rows`, adds the ridge and inverts.
pub fn fit_detector(rows: &[Vec<f64>], ridge: Ridge) -> Result<NormalStats> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    if n < 2 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least two rows of positive dimension to fit a detector, got {n}"
        )));
    }
    if n <= dim {
        log::warn!("fitting a {dim}-dimensional covariance from {n} rows; relying on the ridge");
    }
    let mut mu = vec![0.0; dim];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mu[j]);
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let ridge = match ridge {
        Ridge::Relative(f) => f * cov.trace() / dim as f64,
        Ridge::Absolute(r) => r,
    };
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite { dim, ridge })?;
    let mut sigma_inv = chol.inverse();
    sigma_inv = (&sigma_inv + sigma_inv.transpose()) * 0.5;
    Ok(NormalStats {
        mu,
        sigma_inv,
        ridge,
        condition_number: hi / lo,
    })
}

/// One CorrDet detector over a fixed set of measurement indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub indices: Vec<usize>,
    pub mu: Vec<f64>,
    /// Inverse covariance, row-major.
    #[serde(with = "row_major")]
    pub sigma_inv: DMatrix<f64>,
    pub tau: f64,
    pub eta: f64,
    pub mu_thr: f64,
    pub sigma_thr: f64,
    pub train_f1: f64,
    pub ridge: f64,
    pub condition_number: f64,
}

mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("inverse covariance must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Squared Mahalanobis distance `(z − μ)ᵀ Σ⁻¹ (z − μ)`.
pub fn mahalanobis(mu: &[f64], sigma_inv: &DMatrix<f64>, z: &[f64]) -> f64 {
    let d: Vec<f64> = z.iter().zip(mu).map(|(z, m)| z - m).collect();
    let n = d.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = sigma_inv.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * d[i];
        }
        acc += d[j] * s;
    }
    acc.max(0.0)
}

impl DetectorModel {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    /// Distance of a full sample, reading only this model's indices.
    pub fn distance(&self, z: &[f64]) -> f64 {
        let sub: Vec<f64> = self.indices.iter().map(|&i| z[i]).collect();
        corrdet_distance(self, &sub)
    }

    pub fn is_anomalous(&self, z: &[f64]) -> bool {
        self.distance(z) >= self.tau
    }

    /// Exponential-forgetting update of μ and Σ⁻¹ with one normal sample:
    /// μ ← μ + (1−λ)d and Σ ← λ(Σ + (1−λ)ddᵀ), d = z − μ, applied to the
    /// inverse with the Sherman-Morrison identity. The threshold is kept.
    pub fn update(&mut self, z: &[f64], lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "forgetting factor must lie in (0, 1), got {lambda}"
            )));
        }
        let d = nalgebra::DVector::from_iterator(self.dim(), self.indices.iter().zip(&self.mu).map(|(&i, m)| z[i] - m));
        let c = 1.0 - lambda;
        let sd = &self.sigma_inv * &d;
        let denom = 1.0 + c * d.dot(&sd);
        self.sigma_inv = (&self.sigma_inv - (&sd * sd.transpose()) * (c / denom)) / lambda;
        for (m, di) in self.mu.iter_mut().zip(d.iter()) {
            *m += c * di;
        }
        Ok(())
    }
}

/// δ for values already restricted to `model.indices`.
pub fn corrdet_distance(model: &DetectorModel, z_sub: &[f64]) -> f64 {
    assert_eq!(z_sub.len(), model.dim(), "sample does not match the model dimension");
    mahalanobis(&model.mu, &model.sigma_inv, z_sub)
}

fn restrict(dataset: &Dataset, rows: &[usize], indices: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| indices.iter().map(|&i| dataset.samples[r].z[i]).collect())
        .collect()
}

/// Training labels as seen by a detector over `indices`: a row is anomalous
/// for it when one of its injected measurements is among them. For a detector
/// over every attackable meter this is the sample label.
pub fn local_labels(dataset: &Dataset, rows: &[usize], indices: &[usize]) -> Vec<u8> {
    let mut watched = vec![false; dataset.dim()];
    for &i in indices {
        watched[i] = true;
    }
    rows.iter()
        .map(|&r| dataset.samples[r].attacked_indices.iter().any(|&i| watched[i]) as u8)
        .collect()
}

/// Fits one detector over `indices` on the training rows: statistics from
/// the normal rows, threshold from all of them against [`local_labels`].
pub fn fit_model(
    dataset: &Dataset,
    train: &[usize],
    indices: Vec<usize>,
    cfg: &CorrDetConfig,
) -> Result<DetectorModel> {
    let normal: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&r| dataset.samples[r].label == 0)
        .collect();
    let stats = fit_detector(&restrict(dataset, &normal, &indices), cfg.ridge)?;
    let rows = restrict(dataset, train, &indices);
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| mahalanobis(&stats.mu, &stats.sigma_inv, r))
        .collect();
    let labels = local_labels(dataset, train, &indices);
    let th = select_threshold(&scores, &labels, &cfg.eta_grid.values(), cfg.default_eta)?;
    Ok(DetectorModel {
        indices,
        mu: stats.mu,
        sigma_inv: stats.sigma_inv,
        tau: th.tau,
        eta: th.eta,
        mu_thr: th.mu_thr,
        sigma_thr: th.sigma_thr,
        train_f1: th.f1,
        ridge: stats.ridge,
        condition_number: stats.condition_number,
    })
}

/// Global CorrDet over every non-zero-injection measurement.
pub fn fit_global(dataset: &Dataset, train: &[usize], cfg: &CorrDetConfig) -> Result<DetectorModel> {
    let model = fit_model(dataset, train, dataset.schema.regular_indices(), cfg)?;
    log::info!(
        "global CorrDet: dim {}, condition number {:.3e}",
        model.dim(),
        model.condition_number
    );
    Ok(model)
}

/// Per-sample global CorrDet distance and thresholded label.
pub fn run_corrdet_global(model: &DetectorModel, dataset: &Dataset, rows: &[usize]) -> Vec<(f64, u8)> {
    rows.par_iter()
        .map(|&r| {
            let d = model.distance(&dataset.samples[r].z);
            (d, (d >= model.tau) as u8)
        })
        .collect()
}

/// Measurement indices watched by each bus's local detector: its own voltage
/// and injection meters plus both P and Q of every flow meter touching it.
/// Zero injections are left out. Buses with nothing to watch are skipped.
pub fn ensemble_groups(schema: &MeasurementSchema) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for e in schema.entries().iter().filter(|e| !e.zero_injection) {
        for bus in e.kind.buses() {
            groups.entry(bus).or_default().push(e.index);
        }
    }
    for g in groups.values_mut() {
        g.sort_unstable();
        g.dedup();
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    /// Local detector per bus id.
    pub locals: BTreeMap<u32, DetectorModel>,
    /// Zero-injection indices no local detector reads.
    pub excluded: Vec<usize>,
}

/// Fits every local detector of the ensemble on the training rows.
pub fn fit_ensemble(dataset: &Dataset, train: &[usize], cfg: &CorrDetConfig) -> Result<EnsembleModel> {
    let groups = ensemble_groups(&dataset.schema);
    let covered: std::collections::HashSet<u32> = groups.keys().copied().collect();
    for e in dataset.schema.entries() {
        for b in e.kind.buses() {
            if !covered.contains(&b) {
                log::warn!("bus {b} has no non-zero-injection meters; no local detector");
            }
        }
    }
    let fitted: Vec<(u32, Result<DetectorModel>)> = groups
        .into_par_iter()
        .map(|(bus, idx)| (bus, fit_model(dataset, train, idx, cfg)))
        .collect();
    let mut locals = BTreeMap::new();
    for (bus, m) in fitted {
        locals.insert(bus, m?);
    }
    let blind = locals
        .values()
        .filter(|m| !local_labels(dataset, train, &m.indices).contains(&1))
        .count();
    if blind > 0 {
        log::warn!(
            "{blind} of {} local detectors saw no attacked training rows and use eta = {}",
            locals.len(),
            cfg.default_eta
        );
    }
    Ok(EnsembleModel {
        locals,
        excluded: dataset.schema.zero_injection_indices(),
    })
}

/// Verdict of the ensemble on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdVerdict {
    /// Local distances in bus id order.
    pub deltas: Vec<(u32, f64)>,
    /// Buses whose local distance reached its threshold.
    pub triggered: Vec<u32>,
    pub label: u8,
    /// Largest triggered distance, or the smallest distance when none fired.
    pub score: f64,
}

pub fn ecd_classify(model: &EnsembleModel, z: &[f64]) -> EcdVerdict {
    let deltas: Vec<(u32, f64)> = model.locals.iter().map(|(&b, m)| (b, m.distance(z))).collect();
    let triggered: Vec<u32> = deltas
        .iter()
        .filter(|(b, d)| *d >= model.locals[b].tau)
        .map(|&(b, _)| b)
        .collect();
    let score = if triggered.is_empty() {
        deltas.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min)
    } else {
        deltas
            .iter()
            .filter(|(b, _)| triggered.contains(b))
            .map(|&(_, d)| d)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    EcdVerdict {
        label: (!triggered.is_empty()) as u8,
        deltas,
        triggered,
        score,
    }
}

impl EnsembleModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
