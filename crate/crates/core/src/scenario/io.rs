use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Injection, Sample};
use crate::case::MeasurementSchema;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    schema_version: u32,
    samples: usize,
    schema: MeasurementSchema,
    sigma: Vec<f64>,
    sigma_se: Vec<f64>,
    attacks: Vec<Injection>,
    meta: DatasetMeta,
}

/// JSON companion of a dataset CSV: same path with a `.json` extension.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn write_atomically(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let result = body(&mut w).and_then(|_| w.flush().map_err(|e| Error::io(&tmp, e)));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `path` (CSV with columns `t,label,z_0..z_{d-1}`) and its sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let d = ds.dim();
    write_atomically(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "label".to_string()];
        header.extend((0..d).map(|i| format!("z_{i}")));
        csv.write_record(&header)?;
        let mut row = Vec::with_capacity(d + 2);
        for s in &ds.samples {
            row.clear();
            row.push(s.t.to_string());
            row.push(s.label.to_string());
            row.extend(s.z.iter().map(|v| v.to_string()));
            csv.write_record(&row)?;
        }
        csv.flush().map_err(|e| Error::io(path, e))
    })?;
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        samples: ds.len(),
        schema: ds.schema.clone(),
        sigma: ds.sigma.clone(),
        sigma_se: ds.sigma_se.clone(),
        attacks: ds.attacks.clone(),
        meta: ds.meta.clone(),
    };
    let side = sidecar_path(path);
    write_atomically(&side, |w| {
        serde_json::to_writer_pretty(&mut *w, &sidecar)?;
        w.write_all(b"\n").map_err(|e| Error::io(&side, e))
    })
}

/// Reads a dataset written by [`save_dataset`], rejecting version mismatches
/// and truncated or inconsistent files.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    let file = File::open(&side).map_err(|e| Error::io(&side, e))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Dataset(format!(
                "schema version {v} is not supported (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Dataset("sidecar has no schema_version".into())),
    }
    let sidecar: Sidecar = serde_json::from_value(value)?;
    let d = sidecar.schema.len();

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Reader::from_reader(BufReader::new(file));
    let header = csv.headers()?;
    if header.len() != d + 2 || &header[0] != "t" || &header[1] != "label" {
        return Err(Error::Dataset(format!(
            "CSV header does not match a {d}-measurement schema"
        )));
    }
    let mut samples = Vec::with_capacity(sidecar.samples);
    for (k, record) in csv.records().enumerate() {
        let record = record?;
        if record.len() != d + 2 {
            return Err(Error::Dataset(format!(
                "row {k} has {} fields, expected {}",
                record.len(),
                d + 2
            )));
        }
        let bad = |what: &str| Error::Dataset(format!("row {k}: invalid {what}"));
        let t: usize = record[0].parse().map_err(|_| bad("t"))?;
        let label: u8 = record[1].parse().map_err(|_| bad("label"))?;
        let z = record
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("measurement"))?;
        samples.push(Sample {
            t,
            z,
            label,
            attacked_indices: Vec::new(),
        });
    }
    if samples.len() != sidecar.samples {
        return Err(Error::Dataset(format!(
            "{} rows found but the sidecar declares {}; the file is truncated or mismatched",
            samples.len(),
            sidecar.samples
        )));
    }
    for a in &sidecar.attacks {
        let s = samples
            .get_mut(a.sample)
            .ok_or_else(|| Error::Dataset(format!("attack on missing sample {}", a.sample)))?;
        s.attacked_indices = a.indices.clone();
    }
    let ds = Dataset {
        schema: sidecar.schema,
        samples,
        sigma: sidecar.sigma,
        sigma_se: sidecar.sigma_se,
        attacks: sidecar.attacks,
        meta: sidecar.meta,
    };
    ds.validate()?;
    Ok(ds)
}
