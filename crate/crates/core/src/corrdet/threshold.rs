use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evenly spaced multipliers `start, start+step, …, stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for EtaGrid {
    fn default() -> Self {
        EtaGrid {
            start: 0.0,
            stop: 10.0,
            step: 0.25,
        }
    }
}

impl EtaGrid {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }
}

/// A selected operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub eta: f64,
    pub mu_thr: f64,
    pub sigma_thr: f64,
    /// F1 on the training labels at `tau`.
    pub f1: f64,
}

/// F1 of predicting anomaly when `score >= tau`. Zero when there are no
/// true positives.
pub fn f1_score(scores: &[f64], labels: &[u8], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= tau, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Picks `τ = μ_thr + η·σ_thr` maximising training F1 over the grid, where
/// μ_thr and σ_thr are the mean and standard deviation of the normal-labelled
/// scores. Ties go to the larger η. With single-class labels `default_eta` is
/// used instead.
pub fn select_threshold(scores: &[f64], labels: &[u8], eta_grid: &[f64], default_eta: f64) -> Result<Threshold> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if eta_grid.is_empty() {
        return Err(Error::InvalidInput("empty eta grid".into()));
    }
    let normal: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    let n_pos = labels.len() - normal.len();
    let (mu_thr, sigma_thr) = if normal.is_empty() {
        mean_std(scores)
    } else {
        mean_std(&normal)
    };
    if normal.is_empty() || n_pos == 0 {
        log::debug!("threshold training labels hold a single class; using eta = {default_eta}");
        let tau = mu_thr + default_eta * sigma_thr;
        return Ok(Threshold {
            tau,
            eta: default_eta,
            mu_thr,
            sigma_thr,
            f1: f1_score(scores, labels, tau),
        });
    }
    let mut best: Option<Threshold> = None;
    for &eta in eta_grid {
        let tau = mu_thr + eta * sigma_thr;
        let f1 = f1_score(scores, labels, tau);
        if best.is_none_or(|b| f1 > b.f1 || (f1 == b.f1 && eta > b.eta)) {
            best = Some(Threshold {
                tau,
                eta,
                mu_thr,
                sigma_thr,
                f1,
            });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
