//! Labeled measurement datasets: drifting loads, power flow truth, Gaussian
//! meter noise and randomly placed false data injections.

mod attack;
mod io;
mod ou;

pub use attack::{AttackPlan, Injection};
pub use io::{load_dataset, save_dataset, sidecar_path, SCHEMA_VERSION};
pub use ou::{gen_loads, LoadPaths, OuConfig, OuProcess, MIN_MULTIPLIER};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::case::{build_ybus, MeasurementKind, MeasurementSchema, MeteringPlan, NetworkCase};
use crate::error::{Error, Result};
use crate::powerflow::{branch_flows, Loads, MeasurementFunction, PowerFlowConfig, PowerFlowSolver};

/// Meter noise: σ_i = max(relative·|h_i(x_base)|, sigma_min), with x_base
/// the power flow solution at the case's base loads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub relative: f64,
    pub sigma_min: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            relative: 0.01,
            sigma_min: 1e-4,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative >= 0.0 && self.sigma_min > 0.0 && self.relative.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise model needs relative >= 0 and sigma_min > 0, got {} and {}",
                self.relative, self.sigma_min
            )));
        }
        Ok(())
    }

    fn std(&self, value: f64) -> (f64, bool) {
        let s = self.relative * value.abs();
        if s < self.sigma_min {
            (self.sigma_min, true)
        } else {
            (s, false)
        }
    }
}

/// Standard deviations shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    /// Noise actually added to each meter.
    pub sigma: Vec<f64>,
    /// Weights for state estimation: `sigma` except at zero injections, which
    /// get the root-sum-square of the σ of the flows leaving that bus.
    pub sigma_se: Vec<f64>,
    pub floor_hits: usize,
}

pub fn noise_profile(
    case: &NetworkCase,
    schema: &MeasurementSchema,
    noise: &NoiseModel,
    pf: &PowerFlowConfig,
) -> Result<NoiseProfile> {
    noise.validate()?;
    let base = PowerFlowSolver::new(case, *pf).solve(&case.base_loads())?.state;
    let ybus = build_ybus(case);
    let h = MeasurementFunction::with_ybus(case, &ybus, schema).eval(&base);
    let mut floor_hits = 0;
    let sigma: Vec<f64> = h
        .iter()
        .map(|&v| {
            let (s, hit) = noise.std(v);
            floor_hits += hit as usize;
            s
        })
        .collect();

    let flows = branch_flows(&ybus, &base);
    let mut sigma_se = sigma.clone();
    for e in schema.entries().iter().filter(|e| e.zero_injection) {
        let (bus, active) = match e.kind {
            MeasurementKind::Pinj { bus } => (bus, true),
            MeasurementKind::Qinj { bus } => (bus, false),
            _ => continue,
        };
        let i = case.bus_index(bus).expect("schema matches case");
        let mut var = 0.0;
        for (k, f) in flows.iter().enumerate() {
            let (Some(f), Some(br)) = (f, ybus.branches[k]) else {
                continue;
            };
            let s = if br.from == i {
                f[0]
            } else if br.to == i {
                f[1]
            } else {
                continue;
            };
            let v = if active { s.re } else { s.im };
            var += noise.std(v).0.powi(2);
        }
        sigma_se[e.index] = var.sqrt().max(noise.sigma_min);
    }
    Ok(NoiseProfile {
        sigma,
        sigma_se,
        floor_hits,
    })
}

/// Noise-free measurement vectors h(x*_t), one per load scenario.
pub fn simulate_truth(
    case: &NetworkCase,
    schema: &MeasurementSchema,
    loads: &[Loads],
    pf: &PowerFlowConfig,
) -> Result<Vec<Vec<f64>>> {
    let solver = PowerFlowSolver::new(case, *pf);
    let h = MeasurementFunction::new(case, schema);
    let solved: Vec<Result<Vec<f64>>> = loads
        .par_iter()
        .enumerate()
        .map(|(t, l)| {
            solver
                .solve(l)
                .map(|sol| h.eval(&sol.state))
                .map_err(|e| Error::Sample {
                    sample: t,
                    source: Box::new(e),
                })
        })
        .collect();
    solved.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    pub z: Vec<f64>,
    /// 1 when the sample carries an injection.
    pub label: u8,
    pub attacked_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub load: u64,
    pub noise: u64,
    pub attack: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub case_name: String,
    pub seeds: Seeds,
    pub ou: Option<OuConfig>,
    pub noise: NoiseModel,
    pub attack: AttackPlan,
    pub metering: MeteringPlan,
    pub sigma_floor_hits: usize,
    pub load_clamps: usize,
    /// Seconds since the Unix epoch; the only field that differs between
    /// otherwise identical runs.
    pub generated_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: MeasurementSchema,
    pub samples: Vec<Sample>,
    pub sigma: Vec<f64>,
    pub sigma_se: Vec<f64>,
    pub attacks: Vec<Injection>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of measurements per sample.
    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Adds a campaign drawn from `plan` over the non-zero-injection meters.
    /// A dataset can carry only one campaign.
    pub fn inject(&mut self, plan: &AttackPlan) -> Result<()> {
        if !self.attacks.is_empty() {
            return Err(Error::Dataset("dataset already carries attacks".into()));
        }
        let attacks = plan.draw(self.len(), &self.schema.regular_indices())?;
        for a in &attacks {
            let s = &mut self.samples[a.sample];
            a.apply(&mut s.z, &self.sigma);
            s.label = 1;
            s.attacked_indices = a.indices.clone();
        }
        self.attacks = attacks;
        self.meta.attack = plan.clone();
        self.meta.seeds.attack = plan.rng_seed;
        Ok(())
    }

    /// Checks the structural invariants every loaded or generated dataset obeys.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sigma.len() != d || self.sigma_se.len() != d {
            return Err(Error::Dataset(format!("sigma vectors must have {d} entries")));
        }
        if self
            .sigma
            .iter()
            .chain(&self.sigma_se)
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Dataset("every sigma must be positive and finite".into()));
        }
        for (k, s) in self.samples.iter().enumerate() {
            if s.t != k {
                return Err(Error::Dataset(format!("row {k} carries t = {}", s.t)));
            }
            if s.z.len() != d {
                return Err(Error::Dataset(format!(
                    "sample {k} has {} values, expected {d}",
                    s.z.len()
                )));
            }
            if s.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("sample {k} has a non-finite value")));
            }
            if (s.label == 1) != !s.attacked_indices.is_empty() || s.label > 1 {
                return Err(Error::Dataset(format!("sample {k} label disagrees with its attacks")));
            }
        }
        Ok(())
    }
}

/// Builds a dataset from precomputed truth: adds noise drawn from a
/// per-sample stream of `noise_seed`, then applies the attack campaign.
pub fn assemble_dataset(
    schema: &MeasurementSchema,
    truth: Vec<Vec<f64>>,
    profile: &NoiseProfile,
    noise_seed: u64,
    attack: &AttackPlan,
    meta: DatasetMeta,
) -> Result<Dataset> {
    let sigma = &profile.sigma;
    let samples = truth
        .into_par_iter()
        .enumerate()
        .map(|(t, mut z)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            rng.set_stream(t as u64);
            for (v, s) in z.iter_mut().zip(sigma) {
                let e: f64 = rng.sample(StandardNormal);
                *v += s * e;
            }
            Sample {
                t,
                z,
                label: 0,
                attacked_indices: Vec::new(),
            }
        })
        .collect();
    let mut ds = Dataset {
        schema: schema.clone(),
        samples,
        sigma: profile.sigma.clone(),
        sigma_se: profile.sigma_se.clone(),
        attacks: Vec::new(),
        meta,
    };
    ds.meta.seeds.noise = noise_seed;
    ds.meta.sigma_floor_hits = profile.floor_hits;
    ds.inject(attack)?;
    Ok(ds)
}

/// Solves the power flow for every load vector and turns the results into a
/// noisy, partially attacked dataset.
pub fn gen_dataset(
    case: &NetworkCase,
    schema: &MeasurementSchema,
    loads: &[Loads],
    noise_seed: u64,
    attack: &AttackPlan,
) -> Result<Dataset> {
    let noise = NoiseModel::default();
    let pf = PowerFlowConfig::default();
    let profile = noise_profile(case, schema, &noise, &pf)?;
    let truth = simulate_truth(case, schema, loads, &pf)?;
    let meta = DatasetMeta {
        case_name: case.name.clone(),
        seeds: Seeds::default(),
        ou: None,
        noise,
        attack: attack.clone(),
        metering: MeteringPlan::default(),
        sigma_floor_hits: 0,
        load_clamps: 0,
        generated_at: None,
    };
    assemble_dataset(schema, truth, &profile, noise_seed, attack, meta)
}

/// Everything needed to synthesise a dataset from a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub samples: usize,
    pub ou: OuConfig,
    pub noise: NoiseModel,
    pub attack: AttackPlan,
    pub metering: MeteringPlan,
    pub powerflow: PowerFlowConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            samples: 10_000,
            ou: OuConfig::default(),
            noise: NoiseModel::default(),
            attack: AttackPlan::default(),
            metering: MeteringPlan::default(),
            powerflow: PowerFlowConfig::default(),
        }
    }
}

/// Full pipeline: metering plan, load drift, truth, noise and attacks. The
/// attack seed is taken from `seeds.attack`.
pub fn generate(case: &NetworkCase, cfg: &ScenarioConfig, seeds: Seeds) -> Result<Dataset> {
    let schema = crate::case::build_schema(case, &cfg.metering)?;
    let paths = gen_loads(case, &cfg.ou, cfg.samples, seeds.load)?;
    let profile = noise_profile(case, &schema, &cfg.noise, &cfg.powerflow)?;
    let truth = simulate_truth(case, &schema, &paths.loads, &cfg.powerflow)?;
    let attack = AttackPlan {
        rng_seed: seeds.attack,
        ..cfg.attack.clone()
    };
    let meta = DatasetMeta {
        case_name: case.name.clone(),
        seeds,
        ou: Some(cfg.ou.clone()),
        noise: cfg.noise,
        attack: attack.clone(),
        metering: cfg.metering.clone(),
        sigma_floor_hits: 0,
        load_clamps: paths.clamped,
        generated_at: None,
    };
    assemble_dataset(&schema, truth, &profile, seeds.noise, &attack, meta)
}
