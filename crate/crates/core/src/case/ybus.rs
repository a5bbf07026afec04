use num_complex::Complex64;

use super::NetworkCase;

/// Two-port admittances of one branch, in internal bus indices.
///
/// Current injected at the from end is `yff * V_from + yft * V_to`, at the to
/// end `ytf * V_from + ytt * V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

/// Bus admittance matrix stored row-wise (only structurally nonzero entries)
/// together with the per-branch two-port parameters used by flow equations.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    rows: Vec<Vec<(usize, Complex64)>>,
    /// One entry per case branch; `None` when the branch is out of service.
    pub branches: Vec<Option<BranchAdmittance>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Nonzero entries of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }
}

/// Builds the bus admittance matrix with the usual pi-model: series admittance,
/// half the charging at each end, off-nominal taps and phase shifters on the
/// from side, and bus shunts on the diagonal.
pub fn build_ybus(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| match rows[i].iter_mut().find(|(c, _)| *c == j) {
        Some(entry) => entry.1 += y,
        None => rows[i].push((j, y)),
    };

    let mut branches = Vec::with_capacity(case.branches.len());
    for br in &case.branches {
        if !br.in_service {
            branches.push(None);
            continue;
        }
        let f = case.bus_index(br.from).expect("validated");
        let t = case.bus_index(br.to).expect("validated");
        let ys = Complex64::new(br.r, br.x).inv();
        let charging = Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.tap_ratio(), br.phase_shift_rad());

        let ytt = ys + charging;
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;

        add(f, f, yff);
        add(f, t, yft);
        add(t, f, ytf);
        add(t, t, ytt);
        branches.push(Some(BranchAdmittance {
            from: f,
            to: t,
            yff,
            yft,
            ytf,
            ytt,
        }));
    }

    for (i, bus) in case.buses.iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            add(i, i, Complex64::new(bus.gs, bus.bs) / case.mva_base);
        }
    }
    // Every bus keeps a diagonal entry so that injection equations always
    // have a self term to differentiate.
    for (i, row) in rows.iter_mut().enumerate() {
        if !row.iter().any(|(c, _)| *c == i) {
            row.push((i, Complex64::default()));
        }
        row.sort_by_key(|&(c, _)| c);
    }

    AdmittanceMatrix { rows, branches }
}
