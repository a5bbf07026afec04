//! Synthetic SCADA measurement streams for transmission grids, false data
//! injection, and three detectors of it: WLS state estimation with an
//! innovation-corrected Chi-square test, a global Mahalanobis (CorrDet)
//! detector and a per-bus ensemble of CorrDet detectors, plus decision-level
//! fusion and ROC evaluation.

pub mod case;
pub mod corrdet;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod powerflow;
pub mod scenario;

pub use error::{Error, Result};
