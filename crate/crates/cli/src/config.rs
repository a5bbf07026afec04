use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use gridshield::case::{builtin, parse_case, NetworkCase};
use gridshield::corrdet::CorrDetConfig;
use gridshield::estimation::WlsConfig;
use gridshield::eval::{EvalConfig, SplitMode};
use gridshield::scenario::{ScenarioConfig, Seeds};

/// Every seed of a run. All four are required in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub load: u64,
    pub noise: u64,
    pub attack: u64,
    pub split: u64,
}

impl SeedConfig {
    /// Seeds derived from one number: `s`, `s+1`, `s+2`, `s+3`.
    pub fn from_base(s: u64) -> Self {
        SeedConfig {
            load: s,
            noise: s.wrapping_add(1),
            attack: s.wrapping_add(2),
            split: s.wrapping_add(3),
        }
    }

    pub fn generation(&self) -> Seeds {
        Seeds {
            load: self.load,
            noise: self.noise,
            attack: self.attack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats: usize,
    pub train_frac: f64,
    pub split: SplitMode,
    pub fpr_grid_points: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            repeats: d.repeats,
            train_frac: d.train_frac,
            split: d.split,
            fpr_grid_points: d.fpr_grid_points,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// MATPOWER case file, relative to the config file.
    #[serde(default)]
    pub case: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub wls: WlsConfig,
    #[serde(default)]
    pub corrdet: CorrDetConfig,
    #[serde(default)]
    pub eval: EvalSection,
    pub seeds: SeedConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(case) = &cfg.case {
            if case.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.case = Some(base.join(case));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.scenario.ou.validate()?;
        self.scenario.noise.validate()?;
        self.scenario.attack.validate()?;
        self.wls.validate()?;
        self.corrdet.validate()?;
        self.eval_config().validate()?;
        if self.scenario.samples == 0 {
            bail!("scenario.samples must be positive");
        }
        if let Some(case) = &self.case {
            if !case.is_file() {
                bail!("case file {} does not exist", case.display());
            }
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            repeats: self.eval.repeats,
            train_frac: self.eval.train_frac,
            split: self.eval.split,
            fpr_grid_points: self.eval.fpr_grid_points,
            corrdet: self.corrdet.clone(),
        }
    }
}

/// Reads a MATPOWER case file.
pub fn load_case(path: &Path) -> anyhow::Result<NetworkCase> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading case {}", path.display()))?;
    parse_case(&text).with_context(|| format!("parsing case {}", path.display()))
}

/// Bundled case whose name matches a dataset's `case_name`.
pub fn bundled_case(name: &str) -> Option<NetworkCase> {
    [
        builtin::ieee14(),
        builtin::ieee118(),
        builtin::three_bus(),
        builtin::two_bus(),
    ]
    .into_iter()
    .find(|c| c.name == name)
}
