//! Score fusion and the repeated-split evaluation protocol.

mod roc;

pub use roc::{fpr_grid, roc_auc, tpr_at, vertical_average, RocCurve, TRUNCATION_FPR};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrdet::{ecd_classify, f1_score, fit_ensemble, fit_global, select_threshold, CorrDetConfig, Threshold};
use crate::error::{Error, Result};
use crate::estimation::{SeScore, SENTINEL_SCORE};
use crate::scenario::Dataset;

/// Mean and standard deviation used to standardize one score stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Fits on the finite, non-sentinel scores of `train`.
    pub fn fit(scores: &[f64], train: &[bool], what: &str) -> Result<Self> {
        let v: Vec<f64> = scores
            .iter()
            .zip(train)
            .filter(|(s, &t)| t && s.is_finite() && **s != SENTINEL_SCORE)
            .map(|(&s, _)| s)
            .collect();
        if v.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{what}: fewer than two usable training scores"
            )));
        }
        let (mean, std) = crate::corrdet::mean_std(&v);
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{what}: training scores have zero spread (degenerate detector)"
            )));
        }
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, s: f64) -> f64 {
        (s - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub scores: Vec<f64>,
    pub se: Normalization,
    pub ecd: Normalization,
}

/// Sum of the training-standardized SE and ECD scores. A sample whose SE
/// score is the failure sentinel keeps the sentinel.
pub fn fuse_scores(se: &[f64], ecd: &[f64], train: &[bool]) -> Result<Fusion> {
    if se.len() != ecd.len() || se.len() != train.len() {
        return Err(Error::InvalidInput("score streams are not aligned".into()));
    }
    let se_n = Normalization::fit(se, train, "SE")?;
    let ecd_n = Normalization::fit(ecd, train, "ECD")?;
    let scores = se
        .iter()
        .zip(ecd)
        .map(|(&s, &e)| {
            if s == SENTINEL_SCORE {
                SENTINEL_SCORE
            } else {
                let f = se_n.apply(s) + ecd_n.apply(e);
                if f.is_finite() {
                    f
                } else {
                    SENTINEL_SCORE
                }
            }
        })
        .collect();
    Ok(Fusion {
        scores,
        se: se_n,
        ecd: ecd_n,
    })
}

/// Training-F1 threshold for the fusion score.
pub fn fusion_threshold(scores: &[f64], labels: &[u8], eta_grid: &[f64], default_eta: f64) -> Result<Threshold> {
    select_threshold(scores, labels, eta_grid, default_eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Se,
    Ecd,
    Corrdet,
    Fusion,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Se, Method::Ecd, Method::Corrdet, Method::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Method::Se => "se",
            Method::Ecd => "ecd",
            Method::Corrdet => "corrdet",
            Method::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}` (valid: se, ecd, corrdet, fusion)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Random,
    /// One contiguous training block at a random offset.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub repeats: usize,
    pub train_frac: f64,
    pub split: SplitMode,
    pub fpr_grid_points: usize,
    pub corrdet: CorrDetConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 10,
            train_frac: 0.3,
            split: SplitMode::Random,
            fpr_grid_points: 1001,
            corrdet: CorrDetConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidInput("repeats must be at least 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::InvalidInput(format!(
                "train_frac {} outside (0, 1)",
                self.train_frac
            )));
        }
        if self.fpr_grid_points < 2 {
            return Err(Error::InvalidInput("fpr_grid_points must be at least 2".into()));
        }
        Ok(())
    }
}

/// Sorted training and test row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &r in &self.train {
            m[r] = true;
        }
        m
    }
}

/// Split number `repeat` of `n` rows, drawn from its own ChaCha8 stream of
/// `seed`, so any repeat can be reproduced alone.
pub fn split_rows(n: usize, train_frac: f64, mode: SplitMode, seed: u64, repeat: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat);
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1.min(n), n.saturating_sub(1));
    let mut train: Vec<usize> = match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n_train);
            idx
        }
        SplitMode::Block => {
            let start = rng.random_range(0..=n - n_train);
            (start..start + n_train).collect()
        }
    };
    train.sort_unstable();
    let mut is_train = vec![false; n];
    for &r in &train {
        is_train[r] = true;
    }
    let test = (0..n).filter(|&r| !is_train[r]).collect();
    Split { train, test }
}

/// Per-sample scores of one repeat, aligned on `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub t: usize,
    pub psi_se: f64,
    pub psi_ecd: f64,
    pub psi_fusion: f64,
    pub truth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// Test rows only.
    pub rows: Vec<ScoreRow>,
    pub se: Normalization,
    pub ecd: Normalization,
    pub fusion_threshold: Threshold,
    /// ECD labels of the test rows.
    pub ecd_labels: Vec<u8>,
    /// Triggered buses of the test rows.
    pub triggered: Vec<Vec<u32>>,
}

/// Fits the ensemble on the training rows of `split`, fuses it with the SE
/// scores and returns the test-row table.
pub fn score_table(dataset: &Dataset, se: &[SeScore], split: &Split, cfg: &CorrDetConfig) -> Result<ScoreTable> {
    if se.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} SE scores for {} samples",
            se.len(),
            dataset.len()
        )));
    }
    let ensemble = fit_ensemble(dataset, &split.train, cfg)?;
    let verdicts: Vec<_> = dataset
        .samples
        .par_iter()
        .map(|s| ecd_classify(&ensemble, &s.z))
        .collect();
    let psi_se: Vec<f64> = se.iter().map(|s| s.psi_se).collect();
    let psi_ecd: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
    let fusion = fuse_scores(&psi_se, &psi_ecd, &split.mask(dataset.len()))?;
    let train_f: Vec<f64> = split.train.iter().map(|&r| fusion.scores[r]).collect();
    let train_l: Vec<u8> = split.train.iter().map(|&r| dataset.samples[r].label).collect();
    let th = fusion_threshold(&train_f, &train_l, &cfg.eta_grid.values(), cfg.default_eta)?;
    let rows = split
        .test
        .iter()
        .map(|&r| ScoreRow {
            t: dataset.samples[r].t,
            psi_se: psi_se[r],
            psi_ecd: psi_ecd[r],
            psi_fusion: fusion.scores[r],
            truth: dataset.samples[r].label,
        })
        .collect();
    Ok(ScoreTable {
        rows,
        se: fusion.se,
        ecd: fusion.ecd,
        fusion_threshold: th,
        ecd_labels: split.test.iter().map(|&r| verdicts[r].label).collect(),
        triggered: split.test.iter().map(|&r| verdicts[r].triggered.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub auc: f64,
    pub auc_trunc: f64,
    /// F1 of the method's own decision rule on the test rows.
    pub f1: f64,
    #[serde(skip)]
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    /// ChaCha8 stream of the split seed used by this repeat.
    pub split_stream: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub methods: BTreeMap<Method, MethodResult>,
    pub se_normalization: Option<Normalization>,
    pub ecd_normalization: Option<Normalization>,
    pub fusion_threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub repeat: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanResult {
    pub auc: f64,
    pub auc_trunc: f64,
    pub f1: f64,
    /// Vertically averaged ROC on the report's FPR grid.
    #[serde(skip)]
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub methods: Vec<Method>,
    pub config: EvalConfig,
    pub split_seed: u64,
    pub config_digest: String,
    /// Where the fusion normalization constants come from.
    pub normalization: String,
    pub samples: usize,
    pub anomalies: usize,
    pub repeats: Vec<RepeatResult>,
    pub failed: Vec<RepeatFailure>,
    pub partial: bool,
    pub mean: BTreeMap<Method, MeanResult>,
}

impl ExperimentReport {
    pub fn mean_auc(&self, m: Method) -> Option<f64> {
        self.mean.get(&m).map(|r| r.auc)
    }
}

fn digest(methods: &[Method], cfg: &EvalConfig, seed: u64, dataset: &Dataset) -> Result<String> {
    let text = serde_json::to_string(&(methods, cfg, seed, dataset.len(), &dataset.meta.seeds))?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn evaluate(m: Method, scores: &[f64], truth: &[u8], predicted: &[u8]) -> Result<MethodResult> {
    let roc = roc_auc(scores, truth)?;
    let s: Vec<f64> = predicted.iter().map(|&p| p as f64).collect();
    let f1 = f1_score(&s, truth, 0.5);
    log::debug!("{m}: auc {:.4}, truncated {:.4}, f1 {:.4}", roc.auc, roc.auc_trunc, f1);
    Ok(MethodResult {
        auc: roc.auc,
        auc_trunc: roc.auc_trunc,
        f1,
        roc: roc.points,
    })
}

fn run_repeat(
    dataset: &Dataset,
    se: &[SeScore],
    methods: &[Method],
    cfg: &EvalConfig,
    seed: u64,
    repeat: usize,
) -> Result<RepeatResult> {
    let split = split_rows(dataset.len(), cfg.train_frac, cfg.split, seed, repeat as u64);
    let truth: Vec<u8> = split.test.iter().map(|&r| dataset.samples[r].label).collect();
    let mut out = BTreeMap::new();
    let mut result = RepeatResult {
        repeat,
        split_stream: repeat as u64,
        n_train: split.train.len(),
        n_test: split.test.len(),
        methods: BTreeMap::new(),
        se_normalization: None,
        ecd_normalization: None,
        fusion_threshold: None,
    };
    if methods.contains(&Method::Fusion) {
        let table = score_table(dataset, se, &split, &cfg.corrdet)?;
        if methods.contains(&Method::Ecd) {
            let s: Vec<f64> = table.rows.iter().map(|r| r.psi_ecd).collect();
            out.insert(Method::Ecd, evaluate(Method::Ecd, &s, &truth, &table.ecd_labels)?);
        }
        let s: Vec<f64> = table.rows.iter().map(|r| r.psi_fusion).collect();
        let tau = table.fusion_threshold.tau;
        let p: Vec<u8> = s.iter().map(|&f| (f >= tau) as u8).collect();
        out.insert(Method::Fusion, evaluate(Method::Fusion, &s, &truth, &p)?);
        result.se_normalization = Some(table.se);
        result.ecd_normalization = Some(table.ecd);
        result.fusion_threshold = Some(table.fusion_threshold);
    } else if methods.contains(&Method::Ecd) {
        let ensemble = fit_ensemble(dataset, &split.train, &cfg.corrdet)?;
        let verdicts: Vec<_> = split
            .test
            .par_iter()
            .map(|&r| ecd_classify(&ensemble, &dataset.samples[r].z))
            .collect();
        let s: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
        let p: Vec<u8> = verdicts.iter().map(|v| v.label).collect();
        out.insert(Method::Ecd, evaluate(Method::Ecd, &s, &truth, &p)?);
    }
    if methods.contains(&Method::Se) {
        let s: Vec<f64> = split.test.iter().map(|&r| se[r].psi_se).collect();
        let p: Vec<u8> = split.test.iter().map(|&r| se[r].flag as u8).collect();
        out.insert(Method::Se, evaluate(Method::Se, &s, &truth, &p)?);
    }
    if methods.contains(&Method::Corrdet) {
        let model = fit_global(dataset, &split.train, &cfg.corrdet)?;
        let scored = crate::corrdet::run_corrdet_global(&model, dataset, &split.test);
        let s: Vec<f64> = scored.iter().map(|x| x.0).collect();
        let p: Vec<u8> = scored.iter().map(|x| x.1).collect();
        out.insert(Method::Corrdet, evaluate(Method::Corrdet, &s, &truth, &p)?);
    }
    result.methods = out;
    Ok(result)
}

/// Runs `cfg.repeats` random train/test splits of a labelled dataset. SE
/// scores are split-independent and passed in; the ensemble, the global
/// detector and the fusion normalization are refit on every training split.
/// Repeats that fail are listed in the report, which is then marked partial.
pub fn run_experiment(
    dataset: &Dataset,
    se: &[SeScore],
    methods: &[Method],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    cfg.corrdet.validate()?;
    let mut methods = methods.to_vec();
    methods.sort_unstable();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods selected".into()));
    }
    let needs_se = methods.contains(&Method::Se) || methods.contains(&Method::Fusion);
    if needs_se && se.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} SE scores for {} samples",
            se.len(),
            dataset.len()
        )));
    }
    let labels = dataset.labels();
    let anomalies = labels.iter().filter(|&&l| l == 1).count();
    if anomalies == 0 || anomalies == labels.len() {
        return Err(Error::InvalidInput(
            "dataset must contain both normal and attacked samples".into(),
        ));
    }

    let outcomes: Vec<Result<RepeatResult>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|k| run_repeat(dataset, se, &methods, cfg, seed, k))
        .collect();
    let mut repeats = Vec::new();
    let mut failed = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => repeats.push(r),
            Err(e) => {
                log::warn!("repeat {k} failed and is excluded: {e}");
                failed.push(RepeatFailure {
                    repeat: k,
                    error: e.to_string(),
                });
            }
        }
    }
    if repeats.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every repeat failed; first error: {}",
            failed[0].error
        )));
    }

    let grid = fpr_grid(cfg.fpr_grid_points);
    let n = repeats.len() as f64;
    let mean = methods
        .iter()
        .map(|&m| {
            let per: Vec<&MethodResult> = repeats.iter().map(|r| &r.methods[&m]).collect();
            let curves: Vec<&[(f64, f64)]> = per.iter().map(|r| r.roc.as_slice()).collect();
            let res = MeanResult {
                auc: per.iter().map(|r| r.auc).sum::<f64>() / n,
                auc_trunc: per.iter().map(|r| r.auc_trunc).sum::<f64>() / n,
                f1: per.iter().map(|r| r.f1).sum::<f64>() / n,
                roc: vertical_average(&curves, &grid),
            };
            (m, res)
        })
        .collect();

    Ok(ExperimentReport {
        config_digest: digest(&methods, cfg, seed, dataset)?,
        methods,
        config: cfg.clone(),
        split_seed: seed,
        normalization: "training".into(),
        samples: dataset.len(),
        anomalies,
        partial: !failed.is_empty(),
        repeats,
        failed,
        mean,
    })
}
