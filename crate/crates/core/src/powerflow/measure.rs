//! The measurement function h(x) and its Jacobian.
//!
//! Every power measurement (injection or branch-end flow) is a sum of terms
//! of the form `Va*Vb*(g*cos(θa-θb) + b*sin(θa-θb))` for real power or
//! `Va*Vb*(g*sin(θa-θb) - b*cos(θa-θb))` for reactive power. A term with
//! `a == b` is the self (shunt-like) part. Compiling the schema into term
//! lists once makes evaluation and differentiation uniform.

use serde::Serialize;

use super::{StateLayout, StateVector};
use crate::case::{build_ybus, AdmittanceMatrix, MeasurementKind, MeasurementSchema, NetworkCase};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub a: usize,
    pub b: usize,
    pub g: f64,
    pub s: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum Equation {
    Vmag(usize),
    Active(Vec<Term>),
    Reactive(Vec<Term>),
}

impl Equation {
    fn terms(&self) -> &[Term] {
        match self {
            Equation::Vmag(_) => &[],
            Equation::Active(t) | Equation::Reactive(t) => t,
        }
    }

    pub(crate) fn value(&self, x: &StateVector) -> f64 {
        match self {
            Equation::Vmag(i) => x.vm[*i],
            Equation::Active(terms) => terms
                .iter()
                .map(|t| {
                    let (s, c) = (x.theta[t.a] - x.theta[t.b]).sin_cos();
                    x.vm[t.a] * x.vm[t.b] * (t.g * c + t.s * s)
                })
                .sum(),
            Equation::Reactive(terms) => terms
                .iter()
                .map(|t| {
                    let (s, c) = (x.theta[t.a] - x.theta[t.b]).sin_cos();
                    x.vm[t.a] * x.vm[t.b] * (t.g * s - t.s * c)
                })
                .sum(),
        }
    }

    /// Partial derivatives as `(bus, d/dθ_bus, d/dV_bus)` contributions; a bus
    /// may appear more than once.
    pub(crate) fn partials(&self, x: &StateVector, out: &mut Vec<(usize, f64, f64)>) {
        out.clear();
        let reactive = matches!(self, Equation::Reactive(_));
        if let Equation::Vmag(i) = self {
            out.push((*i, 0.0, 1.0));
            return;
        }
        for t in self.terms() {
            let (s, c) = (x.theta[t.a] - x.theta[t.b]).sin_cos();
            let (va, vb) = (x.vm[t.a], x.vm[t.b]);
            let (inner, dinner) = if reactive {
                (t.g * s - t.s * c, t.g * c + t.s * s)
            } else {
                (t.g * c + t.s * s, -t.g * s + t.s * c)
            };
            let dtheta = va * vb * dinner;
            out.push((t.a, dtheta, vb * inner));
            out.push((t.b, -dtheta, va * inner));
        }
    }
}

pub(crate) fn injection_terms(ybus: &AdmittanceMatrix, i: usize) -> Vec<Term> {
    ybus.row(i)
        .iter()
        .map(|&(j, y)| Term {
            a: i,
            b: j,
            g: y.re,
            s: y.im,
        })
        .collect()
}

pub(crate) fn flow_terms(ybus: &AdmittanceMatrix, branch: usize, at_from_end: bool) -> Vec<Term> {
    let br = ybus.branches[branch].expect("metered branch is in service");
    let (a, b, yself, ymutual) = if at_from_end {
        (br.from, br.to, br.yff, br.yft)
    } else {
        (br.to, br.from, br.ytt, br.ytf)
    };
    vec![
        Term {
            a,
            b: a,
            g: yself.re,
            s: yself.im,
        },
        Term {
            a,
            b,
            g: ymutual.re,
            s: ymutual.im,
        },
    ]
}

/// Sparse row-major Jacobian `∂h/∂x`, columns in [`StateLayout`] order.
#[derive(Debug, Clone, Serialize)]
pub struct Jacobian {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Jacobian {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Nonzero `(column, value)` pairs of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub(crate) fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        Jacobian { ncols, rows }
    }
}

/// h(x) for a fixed network and measurement schema.
#[derive(Debug, Clone)]
pub struct MeasurementFunction {
    layout: StateLayout,
    equations: Vec<Equation>,
}

impl MeasurementFunction {
    pub fn new(case: &NetworkCase, schema: &MeasurementSchema) -> Self {
        let ybus = build_ybus(case);
        Self::with_ybus(case, &ybus, schema)
    }

    pub fn with_ybus(case: &NetworkCase, ybus: &AdmittanceMatrix, schema: &MeasurementSchema) -> Self {
        let idx = |id: u32| case.bus_index(id).expect("schema matches case");
        let equations = schema
            .entries()
            .iter()
            .map(|e| match e.kind {
                MeasurementKind::Vmag { bus } => Equation::Vmag(idx(bus)),
                MeasurementKind::Pinj { bus } => Equation::Active(injection_terms(ybus, idx(bus))),
                MeasurementKind::Qinj { bus } => Equation::Reactive(injection_terms(ybus, idx(bus))),
                MeasurementKind::Pflow { branch, from, .. } => {
                    Equation::Active(flow_terms(ybus, branch, from == case.branches[branch].from))
                }
                MeasurementKind::Qflow { branch, from, .. } => {
                    Equation::Reactive(flow_terms(ybus, branch, from == case.branches[branch].from))
                }
            })
            .collect();
        MeasurementFunction {
            layout: StateLayout::new(case),
            equations,
        }
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    /// Number of measurements d.
    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn eval(&self, x: &StateVector) -> Vec<f64> {
        self.equations.iter().map(|e| e.value(x)).collect()
    }

    pub fn jacobian(&self, x: &StateVector) -> Jacobian {
        let mut scratch = Vec::new();
        let rows = self
            .equations
            .iter()
            .map(|e| {
                e.partials(x, &mut scratch);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * scratch.len());
                for &(bus, dth, dv) in &scratch {
                    if let Some(c) = self.layout.angle_col(bus) {
                        row.push((c, dth));
                    }
                    row.push((self.layout.vm_col(bus), dv));
                }
                merge_columns(&mut row);
                row
            })
            .collect();
        Jacobian::from_rows(self.layout.n_states(), rows)
    }
}

fn merge_columns(row: &mut Vec<(usize, f64)>) {
    row.sort_unstable_by_key(|&(c, _)| c);
    let mut w = 0;
    for r in 0..row.len() {
        if w > 0 && row[w - 1].0 == row[r].0 {
            row[w - 1].1 += row[r].1;
        } else {
            row[w] = row[r];
            w += 1;
        }
    }
    row.truncate(w);
    row.retain(|&(_, v)| v != 0.0);
}
