use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::NetworkCase;
use crate::error::{Error, Result};

/// What a single meter reads. A flow meter on `branch` (0-based position in
/// the case branch list) sits at bus `from` and measures power leaving it
/// towards `to`; `from` is the branch's from-end unless the plan meters both
/// ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasurementKind {
    Vmag { bus: u32 },
    Pinj { bus: u32 },
    Qinj { bus: u32 },
    Pflow { branch: usize, from: u32, to: u32 },
    Qflow { branch: usize, from: u32, to: u32 },
}

impl MeasurementKind {
    /// Buses the measurement is attached to (one for bus meters, both
    /// endpoints for flows).
    pub fn buses(&self) -> Vec<u32> {
        match *self {
            MeasurementKind::Vmag { bus } | MeasurementKind::Pinj { bus } | MeasurementKind::Qinj { bus } => vec![bus],
            MeasurementKind::Pflow { from, to, .. } | MeasurementKind::Qflow { from, to, .. } => {
                vec![from, to]
            }
        }
    }

    pub fn is_flow(&self) -> bool {
        matches!(self, MeasurementKind::Pflow { .. } | MeasurementKind::Qflow { .. })
    }

    fn rank(&self) -> u8 {
        match self {
            MeasurementKind::Vmag { .. } => 0,
            MeasurementKind::Pinj { .. } => 1,
            MeasurementKind::Qinj { .. } => 2,
            MeasurementKind::Pflow { .. } => 3,
            MeasurementKind::Qflow { .. } => 4,
        }
    }

    fn sort_key(&self) -> (u8, u32, u32, usize) {
        match *self {
            MeasurementKind::Vmag { bus } | MeasurementKind::Pinj { bus } | MeasurementKind::Qinj { bus } => {
                (self.rank(), bus, 0, 0)
            }
            MeasurementKind::Pflow { branch, from, to } | MeasurementKind::Qflow { branch, from, to } => {
                (self.rank(), from, to, branch)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDef {
    pub index: usize,
    #[serde(flatten)]
    pub kind: MeasurementKind,
    pub zero_injection: bool,
}

/// Which flow meters a plan installs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMetering {
    /// One P/Q pair per connected bus pair, on the first in-service branch
    /// of that pair in case order. Parallel circuits are metered once.
    #[default]
    PerCorridor,
    /// Every in-service branch.
    AllBranches,
    /// Explicit 0-based branch positions.
    Branches(Vec<usize>),
}

/// Meter placement. `None` for a bus list means "every bus".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeteringPlan {
    pub voltage: Option<Vec<u32>>,
    pub injection: Option<Vec<u32>>,
    pub flows: FlowMetering,
    /// Meter flows at both ends of each selected branch instead of the
    /// from-end only.
    pub both_ends: bool,
}

/// Ordered measurement definitions; `entries[i].index == i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MeasurementSchema {
    entries: Vec<MeasurementDef>,
}

impl MeasurementSchema {
    /// Rebuilds a schema from exported entries, checking index contiguity.
    pub fn from_entries(entries: Vec<MeasurementDef>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(Error::Dataset(format!("schema entry {i} carries index {}", e.index)));
            }
        }
        Ok(MeasurementSchema { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MeasurementDef] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &MeasurementDef {
        &self.entries[i]
    }

    pub fn zero_injection_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.zero_injection)
            .map(|e| e.index)
            .collect()
    }

    /// Indices of every measurement that is not a zero injection.
    pub fn regular_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| !e.zero_injection)
            .map(|e| e.index)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("schema serializes")
    }
}

impl<'de> Deserialize<'de> for MeasurementSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<MeasurementDef>::deserialize(d)?;
        MeasurementSchema::from_entries(entries).map_err(serde::de::Error::custom)
    }
}

fn bus_set(case: &NetworkCase, list: &Option<Vec<u32>>, what: &str) -> Result<BTreeSet<u32>> {
    match list {
        None => Ok(case.buses.iter().map(|b| b.id).collect()),
        Some(ids) => {
            let mut set = BTreeSet::new();
            for &id in ids {
                if case.bus_index(id).is_none() {
                    return Err(Error::Plan(format!("{what} meter at nonexistent bus {id}")));
                }
                set.insert(id);
            }
            Ok(set)
        }
    }
}

fn metered_branches(case: &NetworkCase, flows: &FlowMetering) -> Result<Vec<usize>> {
    Ok(match flows {
        FlowMetering::AllBranches => (0..case.branches.len())
            .filter(|&k| case.branches[k].in_service)
            .collect(),
        FlowMetering::PerCorridor => {
            let mut seen = HashSet::new();
            (0..case.branches.len())
                .filter(|&k| {
                    let b = &case.branches[k];
                    b.in_service && seen.insert((b.from.min(b.to), b.from.max(b.to)))
                })
                .collect()
        }
        FlowMetering::Branches(list) => {
            let mut out = BTreeSet::new();
            for &k in list {
                match case.branches.get(k) {
                    None => return Err(Error::Plan(format!("flow meter on nonexistent branch position {k}"))),
                    Some(b) if !b.in_service => {
                        return Err(Error::Plan(format!(
                            "flow meter on out-of-service branch {}-{}",
                            b.from, b.to
                        )))
                    }
                    Some(_) => {
                        out.insert(k);
                    }
                }
            }
            out.into_iter().collect()
        }
    })
}

/// Lays out the measurement vector for `case` under `plan`.
///
/// Order: voltage magnitudes, real injections, reactive injections, real
/// flows, reactive flows; buses ascending within each block and flows by
/// `(from, to, branch)`.
pub fn build_schema(case: &NetworkCase, plan: &MeteringPlan) -> Result<MeasurementSchema> {
    let vbuses = bus_set(case, &plan.voltage, "voltage")?;
    let ibuses = bus_set(case, &plan.injection, "injection")?;
    let branches = metered_branches(case, &plan.flows)?;

    let mut kinds: Vec<MeasurementKind> = Vec::new();
    kinds.extend(vbuses.iter().map(|&bus| MeasurementKind::Vmag { bus }));
    kinds.extend(ibuses.iter().map(|&bus| MeasurementKind::Pinj { bus }));
    kinds.extend(ibuses.iter().map(|&bus| MeasurementKind::Qinj { bus }));
    for &k in &branches {
        let b = &case.branches[k];
        let mut ends = vec![(b.from, b.to)];
        if plan.both_ends {
            ends.push((b.to, b.from));
        }
        for (from, to) in ends {
            kinds.push(MeasurementKind::Pflow { branch: k, from, to });
            kinds.push(MeasurementKind::Qflow { branch: k, from, to });
        }
    }
    kinds.sort_by_key(MeasurementKind::sort_key);

    let entries = kinds
        .into_iter()
        .enumerate()
        .map(|(index, kind)| MeasurementDef {
            index,
            kind,
            zero_injection: is_zero_injection(case, &kind),
        })
        .collect();
    Ok(MeasurementSchema { entries })
}

/// A real (reactive) injection is known to be zero at a bus with no real
/// (reactive) demand and no in-service generator.
fn is_zero_injection(case: &NetworkCase, kind: &MeasurementKind) -> bool {
    let bus_of = |id: u32| &case.buses[case.bus_index(id).expect("validated")];
    match *kind {
        MeasurementKind::Pinj { bus } => bus_of(bus).pd == 0.0 && !case.has_generator(bus),
        MeasurementKind::Qinj { bus } => bus_of(bus).qd == 0.0 && !case.has_generator(bus),
        _ => false,
    }
}
