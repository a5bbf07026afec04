//! Network data: buses, branches and generators of a transmission case, plus
//! the quantities derived from them (bus admittance matrix, measurement
//! schema).
//!
//! Values are kept in MATPOWER units (MW, MVAr, degrees) exactly as they
//! appear in the case file so that a case survives a write/read cycle
//! bit-for-bit. Everything downstream works in per-unit on `mva_base` with
//! angles in radians; use the `*_pu` accessors.

mod parse;
mod schema;
mod ybus;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::parse_case;
pub use schema::{build_schema, FlowMetering, MeasurementDef, MeasurementKind, MeasurementSchema, MeteringPlan};
pub use ybus::{build_ybus, AdmittanceMatrix, BranchAdmittance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    fn from_code(code: f64) -> Option<Self> {
        if code == 1.0 {
            Some(BusKind::Pq)
        } else if code == 2.0 {
            Some(BusKind::Pv)
        } else if code == 3.0 {
            Some(BusKind::Slack)
        } else {
            None
        }
    }

    fn code(self) -> u8 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Real power demand, MW.
    pub pd: f64,
    /// Reactive power demand, MVAr.
    pub qd: f64,
    /// Shunt conductance, MW consumed at 1.0 pu voltage.
    pub gs: f64,
    /// Shunt susceptance, MVAr injected at 1.0 pu voltage.
    pub bs: f64,
    /// Voltage magnitude from the case file, pu.
    pub vm: f64,
    /// Voltage angle from the case file, degrees.
    pub va: f64,
    /// Base voltage in kV; 0 means the case does not specify it.
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, pu.
    pub b: f64,
    /// Off-nominal tap ratio; 0 in the file means a line (ratio 1).
    pub tap: f64,
    /// Phase shift, degrees.
    pub shift: f64,
    pub in_service: bool,
}

impl Branch {
    /// Effective tap ratio (MATPOWER writes 0 for plain lines).
    pub fn tap_ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }

    pub fn phase_shift_rad(&self) -> f64 {
        self.shift.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    /// Real power output, MW.
    pub pg: f64,
    /// Reactive power output, MVAr.
    pub qg: f64,
    pub qmax: f64,
    pub qmin: f64,
    /// Voltage magnitude setpoint, pu.
    pub vg: f64,
    pub in_service: bool,
}

/// A validated transmission network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkCase {
    pub name: String,
    pub mva_base: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(skip)]
    index: HashMap<u32, usize>,
}

impl NetworkCase {
    /// Assembles and validates a case.
    pub fn new(
        name: impl Into<String>,
        mva_base: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        let mut case = NetworkCase {
            name: name.into(),
            mva_base,
            buses,
            branches,
            generators,
            index: HashMap::new(),
        };
        case.validate()?;
        Ok(case)
    }

    fn validate(&mut self) -> Result<()> {
        if !(self.mva_base > 0.0) {
            return Err(Error::CaseSemantic(format!(
                "baseMVA must be positive, got {}",
                self.mva_base
            )));
        }
        if self.buses.is_empty() {
            return Err(Error::CaseSemantic("case has no buses".into()));
        }
        self.index.clear();
        for (i, bus) in self.buses.iter().enumerate() {
            if self.index.insert(bus.id, i).is_some() {
                return Err(Error::CaseSemantic(format!("duplicate bus id {}", bus.id)));
            }
            if bus.base_kv < 0.0 {
                return Err(Error::CaseSemantic(format!(
                    "bus {}: negative base kV {}",
                    bus.id, bus.base_kv
                )));
            }
        }
        let slacks: Vec<u32> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            0 => return Err(Error::CaseSemantic("no slack bus".into())),
            1 => {}
            _ => {
                let ids: Vec<String> = slacks.iter().map(u32::to_string).collect();
                return Err(Error::CaseSemantic(format!(
                    "more than one slack bus: {}",
                    ids.join(", ")
                )));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !self.index.contains_key(&end) {
                    return Err(Error::CaseSemantic(format!(
                        "branch {} ({}-{}): bus {} does not exist",
                        k + 1,
                        br.from,
                        br.to,
                        end
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::CaseSemantic(format!(
                    "branch {} connects bus {} to itself",
                    k + 1,
                    br.from
                )));
            }
            if br.in_service && br.x == 0.0 {
                return Err(Error::CaseSemantic(format!(
                    "branch {} ({}-{}): zero series reactance",
                    k + 1,
                    br.from,
                    br.to
                )));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            let Some(&i) = self.index.get(&g.bus) else {
                return Err(Error::CaseSemantic(format!(
                    "generator {} at nonexistent bus {}",
                    k + 1,
                    g.bus
                )));
            };
            if g.in_service && self.buses[i].kind == BusKind::Pq {
                return Err(Error::CaseSemantic(format!(
                    "generator {} sits on PQ bus {}",
                    k + 1,
                    g.bus
                )));
            }
        }
        for bus in &self.buses {
            if bus.kind != BusKind::Pq && self.voltage_setpoint_of(bus.id).is_none() {
                return Err(Error::CaseSemantic(format!(
                    "bus {} is {:?} but has no in-service generator",
                    bus.id, bus.kind
                )));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (f, t) = (self.index[&br.from], self.index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::CaseSemantic(format!(
                "bus {} is not connected to bus {} through in-service branches",
                self.buses[i].id, self.buses[0].id
            ))),
            None => Ok(()),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Internal (0-based) position of a bus id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn has_generator(&self, id: u32) -> bool {
        self.generators.iter().any(|g| g.in_service && g.bus == id)
    }

    fn voltage_setpoint_of(&self, id: u32) -> Option<f64> {
        self.generators
            .iter()
            .find(|g| g.in_service && g.bus == id)
            .map(|g| g.vg)
    }

    /// Voltage magnitude the solver holds at this bus (generator setpoint for
    /// slack/PV buses, the case value otherwise).
    pub fn v_setpoint(&self, idx: usize) -> f64 {
        let bus = &self.buses[idx];
        match bus.kind {
            BusKind::Pq => bus.vm,
            _ => self.voltage_setpoint_of(bus.id).unwrap_or(bus.vm),
        }
    }

    /// Per-unit (P, Q) demand at every bus, in bus order.
    pub fn base_loads(&self) -> crate::powerflow::Loads {
        crate::powerflow::Loads {
            p: self.buses.iter().map(|b| b.pd / self.mva_base).collect(),
            q: self.buses.iter().map(|b| b.qd / self.mva_base).collect(),
        }
    }

    /// Per-unit scheduled generation (P, Q) per bus, summed over in-service units.
    pub fn generation_pu(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; self.n_buses()];
        let mut q = vec![0.0; self.n_buses()];
        for g in self.generators.iter().filter(|g| g.in_service) {
            let i = self.index[&g.bus];
            p[i] += g.pg / self.mva_base;
            q[i] += g.qg / self.mva_base;
        }
        (p, q)
    }

    /// Per-unit reactive limits per bus, summed over in-service units.
    pub fn q_limits_pu(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.n_buses()];
        let mut hi = vec![0.0; self.n_buses()];
        for g in self.generators.iter().filter(|g| g.in_service) {
            let i = self.index[&g.bus];
            lo[i] += g.qmin / self.mva_base;
            hi[i] += g.qmax / self.mva_base;
        }
        (lo, hi)
    }

    /// Writes the case back out in the supported MATPOWER subset.
    pub fn to_matpower(&self) -> String {
        parse::write_case(self)
    }
}

/// Built-in copies of the IEEE test cases used throughout the crate.
pub mod builtin {
    use super::{parse_case, NetworkCase};

    /// Slack bus 1 feeding bus 2 over a lossless line (x = 0.1 pu), no load.
    pub const TWO_BUS: &str = "\
function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t1\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t300\t-300\t1\t100\t1\t250\t10;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
";

    /// Meshed three-bus network: slack, PV and a loaded PQ bus.
    pub const THREE_BUS: &str = "\
function mpc = three_bus
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1.02\t0\t138\t1\t1.1\t0.9;
\t2\t2\t20\t10\t0\t0\t1\t1.01\t0\t138\t1\t1.1\t0.9;
\t3\t1\t90\t30\t0\t5\t1\t1\t0\t138\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t200\t-200\t1.02\t100\t1\t250\t0;
\t2\t50\t0\t100\t-100\t1.01\t100\t1\t150\t0;
];
mpc.branch = [
\t1\t2\t0.01\t0.08\t0.02\t0\t0\t0\t0\t0\t1\t-360\t360;
\t1\t3\t0.02\t0.12\t0.03\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t3\t0.015\t0.1\t0.025\t0\t0\t0\t0.98\t0\t1\t-360\t360;
];
";

    pub const CASE14: &str = include_str!("../../../../cases/case14.m");
    pub const CASE118: &str = include_str!("../../../../cases/case118.m");

    pub fn two_bus() -> NetworkCase {
        parse_case(TWO_BUS).expect("bundled two-bus case parses")
    }

    pub fn three_bus() -> NetworkCase {
        parse_case(THREE_BUS).expect("bundled three-bus case parses")
    }

    pub fn ieee14() -> NetworkCase {
        parse_case(CASE14).expect("bundled case14 parses")
    }

    pub fn ieee118() -> NetworkCase {
        parse_case(CASE118).expect("bundled case118 parses")
    }
}
