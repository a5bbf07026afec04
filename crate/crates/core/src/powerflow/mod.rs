//! AC power flow (Newton-Raphson, polar form) and the measurement model.

mod measure;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::case::{build_ybus, AdmittanceMatrix, BusKind, NetworkCase};
use crate::error::{Error, Result};

use measure::{injection_terms, Equation};
pub use measure::{Jacobian, MeasurementFunction};

/// Column layout of the state vector: angles of every non-slack bus in bus
/// order, then every voltage magnitude. The slack angle is the reference
/// (0 rad) and is not a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    n_bus: usize,
    slack: usize,
}

impl StateLayout {
    pub fn new(case: &NetworkCase) -> Self {
        StateLayout {
            n_bus: case.n_buses(),
            slack: case.slack_index(),
        }
    }

    /// N = 2M - 1.
    pub fn n_states(&self) -> usize {
        2 * self.n_bus - 1
    }

    pub fn n_buses(&self) -> usize {
        self.n_bus
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn angle_col(&self, bus: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match bus.cmp(&self.slack) {
            Less => Some(bus),
            Equal => None,
            Greater => Some(bus - 1),
        }
    }

    pub fn vm_col(&self, bus: usize) -> usize {
        self.n_bus - 1 + bus
    }
}

/// Bus voltages in polar form. `theta` holds every bus (the slack entry
/// stays at 0); [`StateVector::packed`] gives the (θ non-slack, V) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
    pub vm: Vec<f64>,
}

impl StateVector {
    /// θ = 0, V = 1 everywhere.
    pub fn flat(layout: StateLayout) -> Self {
        StateVector {
            theta: vec![0.0; layout.n_bus],
            vm: vec![1.0; layout.n_bus],
        }
    }

    pub fn from_packed(layout: StateLayout, x: &[f64]) -> Self {
        assert_eq!(x.len(), layout.n_states());
        let mut s = StateVector::flat(layout);
        for i in 0..layout.n_bus {
            if let Some(c) = layout.angle_col(i) {
                s.theta[i] = x[c];
            }
            s.vm[i] = x[layout.vm_col(i)];
        }
        s
    }

    pub fn packed(&self, layout: StateLayout) -> Vec<f64> {
        let mut x = vec![0.0; layout.n_states()];
        for i in 0..layout.n_bus {
            if let Some(c) = layout.angle_col(i) {
                x[c] = self.theta[i];
            }
            x[layout.vm_col(i)] = self.vm[i];
        }
        x
    }

    /// Adds a packed correction in place.
    pub fn apply(&mut self, layout: StateLayout, dx: &[f64]) {
        for i in 0..layout.n_bus {
            if let Some(c) = layout.angle_col(i) {
                self.theta[i] += dx[c];
            }
            self.vm[i] += dx[layout.vm_col(i)];
        }
    }
}

/// Per-unit demand at every bus, in case bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loads {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerFlowConfig {
    /// Infinity-norm mismatch tolerance, pu.
    pub tol: f64,
    pub max_iter: usize,
    /// Convert PV buses that violate generator reactive limits to PQ.
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowConfig {
    fn default() -> Self {
        PowerFlowConfig {
            tol: 1e-8,
            max_iter: 20,
            enforce_q_limits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    /// Newton iterations (summed over reactive-limit outer passes).
    pub iterations: usize,
    /// Final infinity-norm mismatch, pu.
    pub mismatch: f64,
}

/// Newton-Raphson power flow for a case under the given loads.
pub struct PowerFlowSolver {
    layout: StateLayout,
    kinds: Vec<BusKind>,
    p_inj: Vec<Equation>,
    q_inj: Vec<Equation>,
    gen_p: Vec<f64>,
    q_limits: (Vec<f64>, Vec<f64>),
    v_set: Vec<f64>,
    cfg: PowerFlowConfig,
}

impl PowerFlowSolver {
    pub fn new(case: &NetworkCase, cfg: PowerFlowConfig) -> Self {
        let ybus = build_ybus(case);
        let n = case.n_buses();
        PowerFlowSolver {
            layout: StateLayout::new(case),
            kinds: case.buses.iter().map(|b| b.kind).collect(),
            p_inj: (0..n).map(|i| Equation::Active(injection_terms(&ybus, i))).collect(),
            q_inj: (0..n).map(|i| Equation::Reactive(injection_terms(&ybus, i))).collect(),
            gen_p: case.generation_pu().0,
            q_limits: case.q_limits_pu(),
            v_set: (0..n).map(|i| case.v_setpoint(i)).collect(),
            cfg,
        }
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    /// Net injections `(P_i, Q_i)` at a state.
    pub fn injections(&self, x: &StateVector) -> (Vec<f64>, Vec<f64>) {
        (
            self.p_inj.iter().map(|e| e.value(x)).collect(),
            self.q_inj.iter().map(|e| e.value(x)).collect(),
        )
    }

    pub fn solve(&self, loads: &Loads) -> Result<PowerFlowSolution> {
        let n = self.layout.n_bus;
        if loads.p.len() != n || loads.q.len() != n {
            return Err(Error::InvalidInput(format!(
                "load vector length {} / {} does not match {n} buses",
                loads.p.len(),
                loads.q.len()
            )));
        }
        if loads.p.iter().chain(&loads.q).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite load".into()));
        }

        let mut kinds = self.kinds.clone();
        let mut q_spec: Vec<f64> = loads.q.iter().map(|q| -q).collect();
        let p_spec: Vec<f64> = (0..n).map(|i| self.gen_p[i] - loads.p[i]).collect();

        let mut x = StateVector::flat(self.layout);
        for i in 0..n {
            if kinds[i] != BusKind::Pq {
                x.vm[i] = self.v_set[i];
            }
        }

        let mut total_iter = 0;
        loop {
            let (iters, mismatch) = self.newton(&mut x, &kinds, &p_spec, &q_spec)?;
            total_iter += iters;
            if !self.cfg.enforce_q_limits {
                return Ok(PowerFlowSolution {
                    state: x,
                    iterations: total_iter,
                    mismatch,
                });
            }
            let (_, q) = self.injections(&x);
            let (qmin, qmax) = &self.q_limits;
            let mut switched = false;
            for i in 0..n {
                if kinds[i] != BusKind::Pv {
                    continue;
                }
                let qg = q[i] + loads.q[i];
                let limit = if qg > qmax[i] {
                    qmax[i]
                } else if qg < qmin[i] {
                    qmin[i]
                } else {
                    continue;
                };
                log::debug!("bus index {i}: reactive output {qg:.4} pu pinned at {limit:.4}");
                kinds[i] = BusKind::Pq;
                q_spec[i] = limit - loads.q[i];
                switched = true;
            }
            if !switched {
                return Ok(PowerFlowSolution {
                    state: x,
                    iterations: total_iter,
                    mismatch,
                });
            }
        }
    }

    fn newton(&self, x: &mut StateVector, kinds: &[BusKind], p_spec: &[f64], q_spec: &[f64]) -> Result<(usize, f64)> {
        let n = self.layout.n_bus;
        let pvpq: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
        let pq: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
        let mut theta_col = vec![usize::MAX; n];
        for (k, &i) in pvpq.iter().enumerate() {
            theta_col[i] = k;
        }
        let mut v_col = vec![usize::MAX; n];
        for (k, &i) in pq.iter().enumerate() {
            v_col[i] = pvpq.len() + k;
        }
        let dim = pvpq.len() + pq.len();

        let mismatch = |x: &StateVector| -> Vec<f64> {
            let mut f = Vec::with_capacity(dim);
            f.extend(pvpq.iter().map(|&i| self.p_inj[i].value(x) - p_spec[i]));
            f.extend(pq.iter().map(|&i| self.q_inj[i].value(x) - q_spec[i]));
            f
        };
        let norm = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut f = mismatch(x);
        let mut scratch = Vec::new();
        for iter in 0..=self.cfg.max_iter {
            let err = norm(&f);
            if err < self.cfg.tol {
                return Ok((iter, err));
            }
            if iter == self.cfg.max_iter {
                return Err(Error::PowerFlowDiverged {
                    iterations: iter,
                    mismatch: err,
                });
            }
            let mut jac = DMatrix::<f64>::zeros(dim, dim);
            let rows = pvpq
                .iter()
                .map(|&i| &self.p_inj[i])
                .chain(pq.iter().map(|&i| &self.q_inj[i]));
            for (r, eq) in rows.enumerate() {
                eq.partials(x, &mut scratch);
                for &(bus, dth, dv) in &scratch {
                    if theta_col[bus] != usize::MAX {
                        jac[(r, theta_col[bus])] += dth;
                    }
                    if v_col[bus] != usize::MAX {
                        jac[(r, v_col[bus])] += dv;
                    }
                }
            }
            let rhs = DVector::from_iterator(dim, f.iter().map(|v| -v));
            let dx = jac
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularJacobian { iteration: iter + 1 })?;
            for (k, &i) in pvpq.iter().enumerate() {
                x.theta[i] += dx[k];
            }
            for (k, &i) in pq.iter().enumerate() {
                x.vm[i] += dx[pvpq.len() + k];
            }
            f = mismatch(x);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::PowerFlowDiverged {
                    iterations: iter + 1,
                    mismatch: f64::INFINITY,
                });
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}

/// Solves the power flow of `case` under `loads` with default settings.
pub fn solve_powerflow(case: &NetworkCase, loads: &Loads) -> Result<PowerFlowSolution> {
    PowerFlowSolver::new(case, PowerFlowConfig::default()).solve(loads)
}

/// Complex power leaving the from end and the to end of every in-service
/// branch, in pu; `None` for branches out of service.
pub fn branch_flows(ybus: &AdmittanceMatrix, x: &StateVector) -> Vec<Option<[Complex64; 2]>> {
    let v = |i: usize| Complex64::from_polar(x.vm[i], x.theta[i]);
    ybus.branches
        .iter()
        .map(|br| {
            br.map(|br| {
                let (vf, vt) = (v(br.from), v(br.to));
                [
                    vf * (br.yff * vf + br.yft * vt).conj(),
                    vt * (br.ytf * vf + br.ytt * vt).conj(),
                ]
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{build_schema, builtin, MeasurementKind, MeteringPlan};

    #[test]
    fn two_bus_zero_load_is_flat() {
        let case = builtin::two_bus();
        let sol = solve_powerflow(&case, &case.base_loads()).unwrap();
        assert_eq!(sol.state.theta, vec![0.0, 0.0]);
        assert_eq!(sol.state.vm, vec![1.0, 1.0]);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn two_bus_loaded_satisfies_polar_equations() {
        let case = builtin::two_bus();
        let loads = Loads {
            p: vec![0.0, 1.0],
            q: vec![0.0, 0.0],
        };
        let sol = solve_powerflow(&case, &loads).unwrap();
        let (th, v) = (sol.state.theta[1], sol.state.vm[1]);
        let v1 = sol.state.vm[0];
        // lossless line, y = -j10: P2 = 10 V1 V2 sin(θ2), Q2 = 10 V2² - 10 V1 V2 cos(θ2)
        let p2 = 10.0 * v1 * v * th.sin();
        let q2 = 10.0 * v * v - 10.0 * v1 * v * th.cos();
        assert!((p2 + 1.0).abs() < 1e-8, "{p2}");
        assert!(q2.abs() < 1e-8, "{q2}");
    }

    #[test]
    fn ieee118_base_case_converges_quickly() {
        let case = builtin::ieee118();
        let solver = PowerFlowSolver::new(&case, PowerFlowConfig::default());
        let loads = case.base_loads();
        let sol = solver.solve(&loads).unwrap();
        assert!(sol.iterations <= 6, "{} iterations", sol.iterations);
        assert!(sol.mismatch < 1e-8);

        // independent check of the returned state through net injections
        let (p, q) = solver.injections(&sol.state);
        let (pg, _) = case.generation_pu();
        let slack = case.slack_index();
        for i in 0..case.n_buses() {
            if i != slack {
                assert!((p[i] - (pg[i] - loads.p[i])).abs() < 1e-8);
            }
            if case.buses[i].kind == BusKind::Pq {
                assert!((q[i] + loads.q[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        for case in [builtin::ieee14(), builtin::ieee118(), builtin::three_bus()] {
            let solver = PowerFlowSolver::new(&case, PowerFlowConfig::default());
            let sol = solver.solve(&case.base_loads()).unwrap();
            let (p, _) = solver.injections(&sol.state);
            // shunt conductances consume real power too; all are >= 0 here
            let total: f64 = p.iter().sum();
            assert!(total >= -1e-8, "{}: {total}", case.name);
        }
    }

    #[test]
    fn deterministic() {
        let case = builtin::ieee118();
        let a = solve_powerflow(&case, &case.base_loads()).unwrap();
        let b = solve_powerflow(&case, &case.base_loads()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let case = builtin::two_bus();
        let loads = Loads {
            p: vec![0.0, 50.0],
            q: vec![0.0, 0.0],
        };
        match solve_powerflow(&case, &loads) {
            Err(Error::PowerFlowDiverged { .. }) | Err(Error::SingularJacobian { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reactive_limits_pin_generators() {
        let case = builtin::ieee14();
        let cfg = PowerFlowConfig {
            enforce_q_limits: true,
            ..Default::default()
        };
        let solver = PowerFlowSolver::new(&case, cfg);
        let mut loads = case.base_loads();
        for q in &mut loads.q {
            *q *= 3.0;
        }
        let sol = solver.solve(&loads).unwrap();
        let (_, q) = solver.injections(&sol.state);
        let (qmin, qmax) = case.q_limits_pu();
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.kind == BusKind::Pv {
                let qg = q[i] + loads.q[i];
                assert!(qg <= qmax[i] + 1e-6 && qg >= qmin[i] - 1e-6, "bus {}", bus.id);
            }
        }
    }

    #[test]
    fn flat_state_measurements() {
        let mut case = builtin::ieee14();
        for b in &mut case.buses {
            b.gs = 0.0;
            b.bs = 0.0;
        }
        for br in &mut case.branches {
            br.b = 0.0;
            br.tap = 0.0;
        }
        let schema = build_schema(&case, &MeteringPlan::default()).unwrap();
        let h = MeasurementFunction::new(&case, &schema);
        let z = h.eval(&StateVector::flat(h.layout()));
        for (e, v) in schema.entries().iter().zip(z) {
            match e.kind {
                MeasurementKind::Vmag { .. } => assert_eq!(v, 1.0),
                _ => assert!(v.abs() < 1e-12, "{:?} = {v}", e.kind),
            }
        }
    }

    #[test]
    fn slack_injection_equals_outgoing_flow() {
        let case = builtin::two_bus();
        let loads = Loads {
            p: vec![0.0, 0.8],
            q: vec![0.0, 0.3],
        };
        let sol = solve_powerflow(&case, &loads).unwrap();
        let schema = build_schema(&case, &MeteringPlan::default()).unwrap();
        let z = MeasurementFunction::new(&case, &schema).eval(&sol.state);
        // layout: V1 V2 P1 P2 Q1 Q2 Pf Qf
        assert!((z[2] - z[6]).abs() < 1e-12);
        assert!((z[4] - z[7]).abs() < 1e-12);
    }
}
