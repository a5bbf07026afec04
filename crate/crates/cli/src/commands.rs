use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use gridshield::case::NetworkCase;
use gridshield::corrdet::{ecd_classify, fit_ensemble, fit_global, run_corrdet_global, Threshold};
use gridshield::estimation::{run_se_detector, SeScore, WlsConfig};
use gridshield::eval::{run_experiment, score_table, split_rows, EvalConfig, Method, Normalization};
use gridshield::scenario::{generate, load_dataset, save_dataset, Dataset, ScenarioConfig};

use crate::config::{bundled_case, load_case, RunConfig, SeedConfig};
use crate::output::{csv_bytes, json_bytes, write_atomic};
use crate::{
    AttackArgs, Cli, Command, DetectArgs, DetectMethod, EvalArgs, Failure, FuseArgs, GenerateArgs, UsageContext,
};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => Some(RunConfig::load(p).usage()?),
        None => None,
    };
    let ctx = Ctx { cli, cfg };
    match &cli.command {
        Command::Generate(a) => ctx.generate(a),
        Command::Attack(a) => ctx.attack(a),
        Command::Detect(a) => ctx.detect(a),
        Command::Fuse(a) => ctx.fuse(a),
        Command::Eval(a) => ctx.eval(a),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: Option<RunConfig>,
}

fn seed(flag: Option<u64>, cfg: Option<u64>, what: &str) -> Result<u64, Failure> {
    flag.or(cfg)
        .ok_or_else(|| Failure::Usage(anyhow!("no {what} seed: pass it as a flag or set seeds in --config")))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

impl Ctx<'_> {
    fn seeds(&self) -> Option<SeedConfig> {
        self.cfg.as_ref().map(|c| c.seeds)
    }

    fn out(&self) -> Result<&Path, Failure> {
        self.cli
            .out
            .as_deref()
            .ok_or_else(|| Failure::Usage(anyhow!("--out is required")))
    }

    fn wls(&self) -> WlsConfig {
        self.cfg.as_ref().map(|c| c.wls).unwrap_or_default()
    }

    fn eval_config(&self) -> EvalConfig {
        self.cfg.as_ref().map(|c| c.eval_config()).unwrap_or_default()
    }

    fn scenario(&self) -> ScenarioConfig {
        self.cfg.as_ref().map(|c| c.scenario.clone()).unwrap_or_default()
    }

    /// Case from the flag, then the config, then the bundled case the
    /// dataset names.
    fn case(&self, flag: Option<&Path>, dataset: Option<&Dataset>) -> Result<NetworkCase, Failure> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.cfg.as_ref().and_then(|c| c.case.clone()));
        if let Some(p) = path {
            if !p.is_file() {
                return Err(Failure::Usage(anyhow!("case file {} does not exist", p.display())));
            }
            return load_case(&p).usage();
        }
        if let Some(ds) = dataset {
            if let Some(c) = bundled_case(&ds.meta.case_name) {
                log::info!("using the bundled case `{}`", c.name);
                return Ok(c);
            }
        }
        Err(Failure::Usage(anyhow!(
            "no case: pass --case or set `case` in --config"
        )))
    }

    fn dataset(&self, path: &Path) -> Result<Dataset, Failure> {
        if !path.is_file() {
            return Err(Failure::Usage(anyhow!("dataset {} does not exist", path.display())));
        }
        Ok(load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?)
    }

    fn se_scores(&self, ds: &Dataset, case: Option<&Path>, file: Option<&Path>) -> Result<Vec<SeScore>, Failure> {
        if let Some(f) = file {
            let scores = read_se_scores(f)?;
            if scores.len() != ds.len() || scores.iter().enumerate().any(|(k, s)| s.t != k) {
                return Err(Failure::Usage(anyhow!(
                    "{} must hold one SE score per dataset row (use `detect --method se --all-rows`)",
                    f.display()
                )));
            }
            return Ok(scores);
        }
        let case = self.case(case, Some(ds))?;
        log::info!("running state estimation on {} samples", ds.len());
        Ok(run_se_detector(&case, ds, &self.wls())?)
    }

    fn generate(&self, a: &GenerateArgs) -> Result<(), Failure> {
        let out = self.out()?;
        let mut scenario = self.scenario();
        if let Some(k) = a.samples {
            if k == 0 {
                return Err(Failure::Usage(anyhow!("--samples must be positive")));
            }
            scenario.samples = k;
        }
        let seeds = match a.seed {
            Some(s) => SeedConfig::from_base(s),
            None => self
                .seeds()
                .ok_or_else(|| Failure::Usage(anyhow!("no seeds: pass --seed or set seeds in --config")))?,
        };
        let case = self.case(a.case.as_deref(), None)?;
        let ds = generate(&case, &scenario, seeds.generation())?;
        ensure_parent(out)?;
        save_dataset(&ds, out)?;
        let anomalies = ds.samples.iter().filter(|s| s.label == 1).count();
        println!(
            "{}: {} samples x {} measurements, {} anomalous ({:.2}%), sigma floor hits {}, load clamps {}",
            out.display(),
            ds.len(),
            ds.dim(),
            anomalies,
            100.0 * anomalies as f64 / ds.len() as f64,
            ds.meta.sigma_floor_hits,
            ds.meta.load_clamps
        );
        Ok(())
    }

    fn attack(&self, a: &AttackArgs) -> Result<(), Failure> {
        let out = self.out()?;
        let mut ds = self.dataset(&a.dataset)?;
        let mut plan = self.scenario().attack;
        if let Some(f) = a.fraction {
            plan.fraction_attacked = f;
        }
        plan.rng_seed = seed(a.seed, self.seeds().map(|s| s.attack), "attack")?;
        plan.validate().usage()?;
        ds.inject(&plan).usage()?;
        ensure_parent(out)?;
        save_dataset(&ds, out)?;
        println!("{}: {} attacked samples", out.display(), ds.attacks.len());
        Ok(())
    }

    fn detect(&self, a: &DetectArgs) -> Result<(), Failure> {
        let out = self.out()?;
        let ds = self.dataset(&a.dataset)?;
        let cfg = self.eval_config();
        let split = if a.all_rows && a.method == DetectMethod::Se {
            None
        } else {
            let s = seed(a.split_seed, self.seeds().map(|s| s.split), "split")?;
            Some(split_rows(ds.len(), cfg.train_frac, cfg.split, s, 0))
        };
        let bytes = match a.method {
            DetectMethod::Se => {
                let scores = self.se_scores(&ds, a.case.as_deref(), None)?;
                let rows: Vec<usize> = match &split {
                    Some(s) => s.test.clone(),
                    None => (0..ds.len()).collect(),
                };
                se_csv(rows.iter().map(|&r| &scores[r]))?
            }
            DetectMethod::Ecd => {
                let split = split.expect("split drawn for ecd");
                let model = fit_ensemble(&ds, &split.train, &cfg.corrdet)?;
                if let Some(p) = &a.model {
                    write_atomic(p, model.to_json()?.as_bytes())?;
                }
                let rows = split.test.iter().map(|&r| {
                    let v = ecd_classify(&model, &ds.samples[r].z);
                    let buses: Vec<String> = v.triggered.iter().map(|b| b.to_string()).collect();
                    vec![r.to_string(), fmt(v.score), v.label.to_string(), buses.join(";")]
                });
                csv_bytes(&["t", "psi_ecd", "label", "triggered_buses"], rows.collect::<Vec<_>>())?
            }
            DetectMethod::Corrdet => {
                let split = split.expect("split drawn for corrdet");
                let model = fit_global(&ds, &split.train, &cfg.corrdet)?;
                if let Some(p) = &a.model {
                    write_atomic(p, &json_bytes(&model)?)?;
                }
                let scored = run_corrdet_global(&model, &ds, &split.test);
                let rows = split
                    .test
                    .iter()
                    .zip(scored)
                    .map(|(&r, (d, l))| vec![r.to_string(), fmt(d), l.to_string()]);
                csv_bytes(&["t", "psi_corrdet", "label"], rows.collect::<Vec<_>>())?
            }
        };
        write_atomic(out, &bytes)?;
        Ok(())
    }

    fn fuse(&self, a: &FuseArgs) -> Result<(), Failure> {
        let out = self.out()?;
        let ds = self.dataset(&a.dataset)?;
        let cfg = self.eval_config();
        let s = seed(a.split_seed, self.seeds().map(|s| s.split), "split")?;
        let se = self.se_scores(&ds, a.case.as_deref(), a.se_scores.as_deref())?;
        let split = split_rows(ds.len(), cfg.train_frac, cfg.split, s, 0);
        let table = score_table(&ds, &se, &split, &cfg.corrdet)?;
        let tau = table.fusion_threshold.tau;
        let rows = table.rows.iter().map(|r| {
            vec![
                r.t.to_string(),
                fmt(r.psi_se),
                fmt(r.psi_ecd),
                fmt(r.psi_fusion),
                r.truth.to_string(),
                ((r.psi_fusion >= tau) as u8).to_string(),
            ]
        });
        let bytes = csv_bytes(
            &["t", "psi_se", "psi_ecd", "psi_fusion", "truth", "label"],
            rows.collect::<Vec<_>>(),
        )?;
        #[derive(Serialize)]
        struct FusionMeta {
            split_seed: u64,
            train_frac: f64,
            normalization: &'static str,
            se: Normalization,
            ecd: Normalization,
            fusion_threshold: Threshold,
        }
        let meta = FusionMeta {
            split_seed: s,
            train_frac: cfg.train_frac,
            normalization: "training",
            se: table.se,
            ecd: table.ecd,
            fusion_threshold: table.fusion_threshold,
        };
        write_atomic(&out.with_extension("json"), &json_bytes(&meta)?)?;
        write_atomic(out, &bytes)?;
        Ok(())
    }

    fn eval(&self, a: &EvalArgs) -> Result<(), Failure> {
        let out = self.out()?;
        let methods: Vec<Method> = a
            .methods
            .iter()
            .map(|m| m.trim().parse::<Method>())
            .collect::<Result<_, _>>()
            .usage()?;
        let mut cfg = self.eval_config();
        if let Some(r) = a.repeats {
            cfg.repeats = r;
        }
        cfg.validate().usage()?;
        let s = seed(a.seed, self.seeds().map(|s| s.split), "split")?;
        let ds = self.dataset(&a.dataset)?;
        let se = if methods.iter().any(|m| matches!(m, Method::Se | Method::Fusion)) {
            self.se_scores(&ds, a.case.as_deref(), a.se_scores.as_deref())?
        } else {
            Vec::new()
        };
        let report = run_experiment(&ds, &se, &methods, &cfg, s)?;
        for m in &report.methods {
            let r = &report.mean[m];
            println!(
                "{m:8} mean AUC {:.4}  truncated {:.4}  F1 {:.4}",
                r.auc, r.auc_trunc, r.f1
            );
        }
        if report.partial {
            log::warn!(
                "{} of {} repeats failed; report is partial",
                report.failed.len(),
                cfg.repeats
            );
        }

        let mut files: Vec<(PathBuf, Vec<u8>)> = vec![(out.join("report.json"), json_bytes(&report)?)];
        let mean_rows = report.methods.iter().flat_map(|m| {
            report.mean[m]
                .roc
                .iter()
                .map(move |&(f, t)| vec![m.to_string(), fmt(f), fmt(t)])
        });
        files.push((
            out.join("roc_mean.csv"),
            csv_bytes(&["method", "fpr", "tpr"], mean_rows.collect::<Vec<_>>())?,
        ));
        for rep in &report.repeats {
            let rows = rep
                .methods
                .iter()
                .flat_map(|(m, r)| r.roc.iter().map(move |&(f, t)| vec![m.to_string(), fmt(f), fmt(t)]));
            files.push((
                out.join(format!("roc_repeat_{}.csv", rep.repeat)),
                csv_bytes(&["method", "fpr", "tpr"], rows.collect::<Vec<_>>())?,
            ));
        }
        for (p, b) in files {
            write_atomic(&p, &b)?;
        }
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn se_csv<'a>(scores: impl Iterator<Item = &'a SeScore>) -> anyhow::Result<Vec<u8>> {
    let rows = scores.map(|s| {
        vec![
            s.t.to_string(),
            fmt(s.psi_se),
            (s.flag as u8).to_string(),
            (s.converged as u8).to_string(),
            s.iterations.to_string(),
        ]
    });
    csv_bytes(
        &["t", "psi_se", "flag", "converged", "iterations"],
        rows.collect::<Vec<_>>(),
    )
}

fn read_se_scores(path: &Path) -> Result<Vec<SeScore>, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("SE scores {} do not exist", path.display())));
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let field =
            |i: usize| -> anyhow::Result<&str> { rec.get(i).ok_or_else(|| anyhow!("{}: short row", path.display())) };
        out.push(SeScore {
            t: field(0)?.parse().context("t")?,
            psi_se: field(1)?.parse().context("psi_se")?,
            flag: field(2)? == "1",
            converged: field(3)? == "1",
            iterations: field(4)?.parse().context("iterations")?,
        });
    }
    Ok(out)
}
