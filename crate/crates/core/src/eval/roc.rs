use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FPR limit of the truncated area.
pub const TRUNCATION_FPR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1), one step per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    /// Area over FPR in [0, 0.2], divided by 0.2.
    pub auc_trunc: f64,
}

/// ROC curve of `scores` (higher means more anomalous) against binary truth.
/// Tied scores form one step, so ties contribute half credit.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput("scores and truth differ in length".into()));
    }
    let pos = truth.iter().filter(|&&t| t == 1).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC needs both classes in the truth labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("ROC scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the full area in units of 1/(pos·neg), kept exact
    let mut twice_area = 0u64;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += (fp - fp0) * (tp0 + tp);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2 * pos * neg) as f64;
    let auc_trunc = area(&points, TRUNCATION_FPR) / TRUNCATION_FPR;
    Ok(RocCurve { points, auc, auc_trunc })
}

/// Trapezoidal area under a monotone curve for fpr in [0, limit].
fn area(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut a = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            a += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            a += (limit - x0) * (y0 + y) / 2.0;
        }
    }
    a
}

/// TPR of a curve at `fpr`, linearly interpolated; on a vertical segment the
/// highest TPR reached at that FPR.
pub fn tpr_at(points: &[(f64, f64)], fpr: f64) -> f64 {
    let k = points.partition_point(|p| p.0 <= fpr);
    if k == 0 {
        return points[0].1;
    }
    let (x0, y0) = points[k - 1];
    if x0 == fpr || k == points.len() {
        return y0;
    }
    let (x1, y1) = points[k];
    y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
}

/// Evenly spaced FPR grid with `n` points on [0, 1].
pub fn fpr_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

/// Mean TPR of several curves at each grid FPR.
pub fn vertical_average(curves: &[&[(f64, f64)]], grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&f| {
            let sum: f64 = curves.iter().map(|c| tpr_at(c, f)).sum();
            (f, sum / curves.len() as f64)
        })
        .collect()
}
