//! Mixed-integer QP model of the MAP problem.
//!
//! Columns, in this order:
//!
//! | block | count | meaning |
//! |-------|-------|---------|
//! | `z`   | nK    | binary assignment |
//! | `μ`   | Kd    | component means |
//! | `t`   | nKd   | `z_ik · μ_k` |
//! | `u`   | K     | epigraph of the chordal `−log π_k` |
//! | `w`   | nK    | `z_ik · u_k` |
//! | `π`   | K     | mixing proportions |
//!
//! The objective is `Σ_i (y_i − Σ_k t_ik)ᵀ W (y_i − Σ_k t_ik) + Σ_ik w_ik`
//! plus the ridge term, stored as `½ xᵀ Q x + cᵀ x + c0`.

use std::fmt::Write as _;

use crate::constraints::{ConstraintSet, Sense, Var};
use crate::error::{contract, Error, Result};
use crate::linalg;
use crate::model::{Assignment, Dataset, Params, Prior, ProblemSpec};
use crate::pwl::{pwl_chords, PwlApprox};

/// Column layout for given `(n, K, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    pub n: usize,
    pub k: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Z { i: usize, k: usize },
    Mu { k: usize, d: usize },
    T { i: usize, k: usize, d: usize },
    U { k: usize },
    W { i: usize, k: usize },
    Pi { k: usize },
}

impl ColumnMap {
    pub fn z(&self, i: usize, k: usize) -> usize {
        i * self.k + k
    }

    pub fn mu(&self, k: usize, d: usize) -> usize {
        self.n * self.k + k * self.d + d
    }

    pub fn t(&self, i: usize, k: usize, d: usize) -> usize {
        self.n * self.k + self.k * self.d + (i * self.k + k) * self.d + d
    }

    pub fn u(&self, k: usize) -> usize {
        self.n * self.k * (1 + self.d) + self.k * self.d + k
    }

    pub fn w(&self, i: usize, k: usize) -> usize {
        self.u(self.k) + i * self.k + k
    }

    pub fn pi(&self, k: usize) -> usize {
        self.w(self.n, 0) + k
    }

    pub fn num_binaries(&self) -> usize {
        self.n * self.k
    }

    pub fn len(&self) -> usize {
        self.pi(self.k)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, idx: usize) -> Column {
        let (n, k, d) = (self.n, self.k, self.d);
        if idx < self.mu(0, 0) {
            Column::Z { i: idx / k, k: idx % k }
        } else if idx < self.t(0, 0, 0) {
            let r = idx - self.mu(0, 0);
            Column::Mu { k: r / d, d: r % d }
        } else if idx < self.u(0) {
            let r = idx - self.t(0, 0, 0);
            Column::T { i: r / (k * d), k: (r / d) % k, d: r % d }
        } else if idx < self.w(0, 0) {
            Column::U { k: idx - self.u(0) }
        } else if idx < self.pi(0) {
            let r = idx - self.w(0, 0);
            Column::W { i: r / k, k: r % k }
        } else {
            debug_assert!(idx < self.len() && n > 0);
            Column::Pi { k: idx - self.pi(0) }
        }
    }

    /// Readable name with 1-based indices, e.g. `t(3,1,2)`.
    pub fn name(&self, idx: usize) -> String {
        match self.column(idx) {
            Column::Z { i, k } => format!("z({},{})", i + 1, k + 1),
            Column::Mu { k, d } => format!("mu({},{})", k + 1, d + 1),
            Column::T { i, k, d } => format!("t({},{},{})", i + 1, k + 1, d + 1),
            Column::U { k } => format!("u({})", k + 1),
            Column::W { i, k } => format!("w({},{})", i + 1, k + 1),
            Column::Pi { k } => format!("pi({})", k + 1),
        }
    }
}

/// What a row encodes; used for reporting and the model dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    RowSum,
    Simplex,
    Product,
    Chord,
    EntropyProduct,
    Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub kind: RowKind,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MiqpModel {
    pub cols: ColumnMap,
    /// Upper-triangle triplets `(r, c, v)` with `r ≤ c` of the symmetric `Q`
    /// in `½ xᵀ Q x`.
    pub q: Vec<(usize, usize, f64)>,
    pub c: Vec<f64>,
    pub c0: f64,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integrality: Vec<bool>,
    pub pwl: PwlApprox<f64>,
    pub e_max: f64,
    /// `−ln π_min`, the cap on `u`.
    pub u_max: f64,
    pub data: Dataset<f64>,
    pub spec: ProblemSpec<f64>,
    pub constraints: ConstraintSet,
    /// `W` of the quadratic term.
    pub weight: Vec<Vec<f64>>,
}

/// Build the MIQP. Constraint consistency is not checked here; see
/// [`ConstraintSet::validate`].
pub fn build_miqp(data: &Dataset, spec: &ProblemSpec, constraints: &ConstraintSet) -> Result<MiqpModel> {
    spec.validate(data)?;
    let (n, k, d) = (data.n(), spec.k, data.d());
    if constraints.n() != n || constraints.k() != k {
        return Err(contract("constraint set built for a different (n, K)"));
    }
    let cols = ColumnMap { n, k, d };
    let m = cols.len();
    let w = spec.precision.weight(d)?;
    let pwl = pwl_chords(spec.pi_floor, spec.breakpoints)?;
    let u_max = -spec.pi_floor.ln();

    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut integrality = vec![false; m];
    for i in 0..n {
        for kk in 0..k {
            upper[cols.z(i, kk)] = 1.0;
            integrality[cols.z(i, kk)] = true;
            upper[cols.w(i, kk)] = u_max;
            for j in 0..d {
                let (lo, hi) = (spec.mu_lower[kk][j], spec.mu_upper[kk][j]);
                lower[cols.t(i, kk, j)] = lo.min(0.0);
                upper[cols.t(i, kk, j)] = hi.max(0.0);
            }
        }
    }
    for kk in 0..k {
        for j in 0..d {
            lower[cols.mu(kk, j)] = spec.mu_lower[kk][j];
            upper[cols.mu(kk, j)] = spec.mu_upper[kk][j];
        }
        upper[cols.u(kk)] = u_max;
        lower[cols.pi(kk)] = spec.pi_floor;
        upper[cols.pi(kk)] = 1.0;
    }
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::Build("a column has lower bound above upper bound".into()));
    }

    let mut q = Vec::new();
    let mut c = vec![0.0; m];
    let mut c0 = 0.0;
    for (i, y) in data.points().iter().enumerate() {
        let wy = linalg::mat_vec(&w, y);
        c0 += linalg::quad_form(&w, y);
        for k1 in 0..k {
            for j1 in 0..d {
                let a = cols.t(i, k1, j1);
                c[a] = -2.0 * wy[j1];
                for k2 in 0..k {
                    for j2 in 0..d {
                        let b = cols.t(i, k2, j2);
                        if a <= b && w[j1][j2] != 0.0 {
                            q.push((a, b, 2.0 * w[j1][j2]));
                        }
                    }
                }
            }
        }
        for kk in 0..k {
            c[cols.w(i, kk)] = 1.0;
        }
    }
    if let Prior::GaussianRidge(lam) = &spec.prior {
        for kk in 0..k {
            for (j, &l) in lam.iter().enumerate() {
                if l != 0.0 {
                    q.push((cols.mu(kk, j), cols.mu(kk, j), l));
                }
            }
        }
    }

    let mut rows = Vec::new();
    let row = |terms: Vec<(usize, f64)>, sense, rhs, kind| Row { terms, sense, rhs, kind };
    for i in 0..n {
        rows.push(row((0..k).map(|kk| (cols.z(i, kk), 1.0)).collect(), Sense::Eq, 1.0, RowKind::RowSum));
    }
    rows.push(row((0..k).map(|kk| (cols.pi(kk), 1.0)).collect(), Sense::Eq, 1.0, RowKind::Simplex));
    for i in 0..n {
        for kk in 0..k {
            let z = cols.z(i, kk);
            for j in 0..d {
                let (t, mu) = (cols.t(i, kk, j), cols.mu(kk, j));
                let (lo, hi) = (spec.mu_lower[kk][j], spec.mu_upper[kk][j]);
                // M^L z ≤ t ≤ M^U z
                rows.push(row(vec![(t, 1.0), (z, -lo)], Sense::Ge, 0.0, RowKind::Product));
                rows.push(row(vec![(t, 1.0), (z, -hi)], Sense::Le, 0.0, RowKind::Product));
                // μ − M^U(1 − z) ≤ t ≤ μ − M^L(1 − z)
                rows.push(row(vec![(t, 1.0), (mu, -1.0), (z, -hi)], Sense::Ge, -hi, RowKind::Product));
                rows.push(row(vec![(t, 1.0), (mu, -1.0), (z, -lo)], Sense::Le, -lo, RowKind::Product));
            }
        }
    }
    for kk in 0..k {
        for ch in &pwl.chords {
            rows.push(row(
                vec![(cols.u(kk), 1.0), (cols.pi(kk), -ch.slope)],
                Sense::Ge,
                ch.intercept,
                RowKind::Chord,
            ));
        }
    }
    for i in 0..n {
        for kk in 0..k {
            let (wc, u, z) = (cols.w(i, kk), cols.u(kk), cols.z(i, kk));
            rows.push(row(vec![(wc, 1.0), (u, -1.0), (z, -u_max)], Sense::Ge, -u_max, RowKind::EntropyProduct));
            rows.push(row(vec![(wc, 1.0)], Sense::Ge, 0.0, RowKind::EntropyProduct));
        }
    }
    for r in constraints.compiled_rows()? {
        let terms = r
            .terms
            .iter()
            .map(|&(v, a)| match v {
                Var::Z(i, kk) => (cols.z(i, kk), a),
                Var::Pi(kk) => (cols.pi(kk), a),
            })
            .collect();
        rows.push(row(terms, r.sense, r.rhs, RowKind::Side));
    }

    Ok(MiqpModel {
        cols,
        q,
        c,
        c0,
        rows,
        lower,
        upper,
        integrality,
        e_max: pwl.e_max,
        pwl,
        u_max,
        data: data.clone(),
        spec: spec.clone(),
        constraints: constraints.clone(),
        weight: w,
    })
}

impl MiqpModel {
    pub fn n(&self) -> usize {
        self.cols.n
    }

    pub fn k(&self) -> usize {
        self.cols.k
    }

    pub fn d(&self) -> usize {
        self.cols.d
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    /// `½ xᵀ Q x + cᵀ x + c0`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for &(r, c, v) in &self.q {
            quad += if r == c { 0.5 * v * x[r] * x[r] } else { v * x[r] * x[c] };
        }
        quad + self.c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.c0
    }

    /// `Q x + c`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.c.clone();
        for &(r, c, v) in &self.q {
            g[r] += v * x[c];
            if r != c {
                g[c] += v * x[r];
            }
        }
        g
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..x.len())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        self.rows.iter().map(|r| r.violation(x)).fold(bounds, f64::max)
    }

    /// The point the model associates with a hard assignment and parameters:
    /// `t = zμ`, `u = max-chord(π)`, `w = z u`.
    pub fn point_for(&self, a: &Assignment, p: &Params) -> Vec<f64> {
        let cols = &self.cols;
        let mut x = vec![0.0; cols.len()];
        for kk in 0..cols.k {
            for j in 0..cols.d {
                x[cols.mu(kk, j)] = p.mu[kk][j];
            }
            x[cols.u(kk)] = self.pwl.eval(p.pi[kk]).clamp(0.0, self.u_max);
            x[cols.pi(kk)] = p.pi[kk];
        }
        for i in 0..cols.n {
            let kk = a.label(i);
            x[cols.z(i, kk)] = 1.0;
            for j in 0..cols.d {
                x[cols.t(i, kk, j)] = p.mu[kk][j];
            }
            x[cols.w(i, kk)] = x[cols.u(kk)];
        }
        x
    }

    /// Model objective at [`point_for`](Self::point_for).
    pub fn objective_at(&self, a: &Assignment, p: &Params) -> f64 {
        self.objective(&self.point_for(a, p))
    }

    /// Plain-text dump; grammar in `docs/model-format.md`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let cols = &self.cols;
        let _ = writeln!(s, "MIQP n={} K={} d={} B={}", cols.n, cols.k, cols.d, self.pwl.chords.len());
        let _ = writeln!(s, "COLUMNS {}", cols.len());
        for j in 0..cols.len() {
            let kind = if self.integrality[j] { 'B' } else { 'C' };
            let _ = writeln!(s, "C {} {} {} {} {}", j, cols.name(j), kind, self.lower[j], self.upper[j]);
        }
        let _ = writeln!(s, "OBJECTIVE");
        let _ = writeln!(s, "CONST {}", self.c0);
        for (j, &v) in self.c.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(s, "L {j} {v}");
            }
        }
        for &(r, c, v) in &self.q {
            let _ = writeln!(s, "Q {r} {c} {v}");
        }
        let _ = writeln!(s, "ROWS {}", self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            let sense = match row.sense {
                Sense::Le => 'L',
                Sense::Eq => 'E',
                Sense::Ge => 'G',
            };
            let _ = write!(s, "R {r} {sense} {} {}", row.rhs, row.terms.len());
            for &(j, a) in &row.terms {
                let _ = write!(s, " {j}:{a}");
            }
            s.push('\n');
        }
        s.push_str("END\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Precision;

    fn small() -> MiqpModel {
        let data = Dataset::from_scalars(&[0.0, 1.0]).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(1.0), &data).with_breakpoints(4);
        build_miqp(&data, &spec, &ConstraintSet::empty(2, 2)).unwrap()
    }

    #[test]
    fn counts_for_two_points() {
        let m = small();
        let count = |kind| m.rows.iter().filter(|r| r.kind == kind).count();
        assert_eq!(m.integrality.iter().filter(|&&b| b).count(), 4);
        // 4 z, 2 μ, 4 t, 2 u, 4 w and the 2 π columns
        assert_eq!(m.num_cols(), 18);
        assert_eq!(count(RowKind::RowSum), 2);
        assert_eq!(count(RowKind::Simplex), 1);
        assert_eq!(count(RowKind::Product), 16);
        assert_eq!(count(RowKind::Chord), 8);
        assert_eq!(count(RowKind::EntropyProduct), 8);
    }

    #[test]
    fn column_map_roundtrip() {
        let cols = ColumnMap { n: 3, k: 2, d: 2 };
        let mut seen = Vec::new();
        for j in 0..cols.len() {
            let back = match cols.column(j) {
                Column::Z { i, k } => cols.z(i, k),
                Column::Mu { k, d } => cols.mu(k, d),
                Column::T { i, k, d } => cols.t(i, k, d),
                Column::U { k } => cols.u(k),
                Column::W { i, k } => cols.w(i, k),
                Column::Pi { k } => cols.pi(k),
            };
            assert_eq!(back, j);
            seen.push(cols.name(j));
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), cols.len());
    }

    fn t_interval(lo: f64, hi: f64, z: f64, mu: f64) -> (f64, f64) {
        let data = Dataset::from_scalars(&[lo, hi]).unwrap();
        let spec = ProblemSpec::new(1, Precision::Scalar(1.0), &data);
        let m = build_miqp(&data, &spec, &ConstraintSet::empty(2, 1)).unwrap();
        let mut tl = f64::NEG_INFINITY;
        let mut th = f64::INFINITY;
        let (zc, mc, tc) = (m.cols.z(0, 0), m.cols.mu(0, 0), m.cols.t(0, 0, 0));
        for r in m.rows.iter().filter(|r| r.kind == RowKind::Product && r.terms.iter().any(|t| t.0 == tc)) {
            let rest: f64 = r
                .terms
                .iter()
                .filter(|t| t.0 != tc)
                .map(|&(j, a)| a * if j == zc { z } else if j == mc { mu } else { unreachable!() })
                .sum();
            let bound = r.rhs - rest;
            match r.sense {
                Sense::Ge => tl = tl.max(bound),
                Sense::Le => th = th.min(bound),
                Sense::Eq => unreachable!(),
            }
        }
        (tl, th)
    }

    #[test]
    fn product_rows_pin_t_at_binaries() {
        assert_eq!(t_interval(-1.0, 2.0, 1.0, 1.5), (1.5, 1.5));
        assert_eq!(t_interval(-1.0, 2.0, 0.0, 1.5), (0.0, 0.0));
        let (a, b) = t_interval(-1.0, 2.0, 0.5, 1.5);
        assert!((a - 0.5).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn objective_at_binary_point_matches_direct() {
        let m = small();
        let a = Assignment::new(vec![0, 1], 2).unwrap();
        let p = Params { mu: vec![vec![0.25], vec![0.75]], pi: vec![0.3, 0.7] };
        let x = m.point_for(&a, &p);
        assert!(m.max_violation(&x) < 1e-12);
        let direct = crate::evaluate_objective(&m.data, &m.spec, &a, &p).unwrap();
        let extra = m.pwl.eval(0.3) + 0.3f64.ln() + m.pwl.eval(0.7) + 0.7f64.ln();
        assert!((m.objective(&x) - direct - extra).abs() < 1e-12);
    }

    #[test]
    fn dump_has_sections() {
        let s = small().dump();
        for tag in ["COLUMNS 18", "OBJECTIVE", "CONST ", "ROWS ", "END"] {
            assert!(s.contains(tag), "{tag}");
        }
    }
}
