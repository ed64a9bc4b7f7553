//! Continuous relaxation of the MIQP at a branch-and-bound node.
//!
//! Fixed binaries are eliminated before solving: a fixed `z_ik` becomes a
//! constant, and the linearisation columns that it determines (`t_ik = z_ik μ_k`
//! and `w_ik = z_ik u_k`) are replaced by `0` or by the `μ_k` / `u_k` columns.
//! This is exact: the product rows pin `t`, and `w` only appears in two lower
//! bounds plus a positive cost, so its minimiser is `max(0, u_k − U(1−z_ik))`.
//!
//! # Lower bound certificate
//!
//! For any point `x̂` of the variable box and any row multipliers `y`, weak
//! duality for the convex objective `f` gives
//!
//! ```text
//! min f ≥ f(x̂) + Σ_r y_r a_rᵀx̂ − Σ_r σ_r(y_r) + Σ_j min(g_j (lo_j − x̂_j), g_j (hi_j − x̂_j))
//! ```
//!
//! where `g = ∇f(x̂) + Σ_r y_r a_r` and `σ_r(y) = y·hi_r` for `y > 0`, `y·lo_r`
//! otherwise (multipliers pointing at an infinite side are zeroed). Every
//! variable is finitely bounded, so the bound is finite. The reported
//! `lower_bound` subtracts a floating-point margin of `10⁻⁹·(1 + |bound|)`.
//! Being valid for every `(x̂, y)`, the bound holds even when the iteration
//! stops early.

pub mod admm;
pub mod ldl;
pub mod sparse;

use std::collections::HashMap;

use crate::constraints::{Fixings, Sense};
use crate::formulation::{Column, MiqpModel};

use admm::{AdmmSettings, AdmmStatus, Iterate, QpProblem, Verdict};
use sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpTolerances {
    /// Absolute primal / dual residual tolerance.
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Stop once the certified bound is within this relative distance of the
    /// primal objective (`None`: rely on residuals only).
    pub bound_gap: Option<f64>,
    pub check_every: usize,
}

impl Default for QpTolerances {
    fn default() -> Self {
        Self { eps_abs: 1e-7, eps_rel: 0.0, max_iter: 200_000, bound_gap: None, check_every: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
    /// Stopped because the certified bound exceeded the caller's cutoff.
    CutoffExceeded,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Full model vector (fixed and eliminated columns filled in).
    pub primal: Vec<f64>,
    /// Multiplier per model row (zero for rows eliminated by fixings).
    pub duals: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Why the node is infeasible, when it is.
    pub certificate: Option<String>,
}

impl QpSolution {
    fn infeasible(model: &MiqpModel, why: String) -> Self {
        Self {
            primal: vec![0.0; model.num_cols()],
            duals: vec![0.0; model.rows.len()],
            objective: f64::INFINITY,
            lower_bound: f64::INFINITY,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            status: QpStatus::Infeasible,
            iterations: 0,
            certificate: Some(why),
        }
    }
}

/// Where a model column went in the reduced problem: `x_j = x'_r` or a constant.
#[derive(Debug, Clone, Copy)]
enum Sub {
    Var(usize),
    Const(f64),
}

struct Reduced {
    sub: Vec<Sub>,
    n: usize,
    p: CscMatrix,
    q: Vec<f64>,
    c0: f64,
    /// Reduced rows: matrix, bounds and originating model row.
    a: CscMatrix,
    rl: Vec<f64>,
    ru: Vec<f64>,
    origin: Vec<usize>,
    lx: Vec<f64>,
    ux: Vec<f64>,
}

fn reduce(model: &MiqpModel, fix: &Fixings) -> Result<Reduced, String> {
    let cols = &model.cols;
    let m = cols.len();
    let mut sub = vec![Sub::Const(0.0); m];
    let mut n = 0usize;
    let mut alias = vec![usize::MAX; m];
    for j in 0..m {
        let decided = match cols.column(j) {
            Column::Z { i, k } => fix.get(i, k).map(|v| Sub::Const(if v { 1.0 } else { 0.0 })),
            Column::T { i, k, d } => match fix.get(i, k) {
                Some(true) => {
                    alias[j] = cols.mu(k, d);
                    None
                }
                Some(false) => Some(Sub::Const(0.0)),
                None => None,
            },
            Column::W { i, k } => match fix.get(i, k) {
                Some(true) => {
                    alias[j] = cols.u(k);
                    None
                }
                Some(false) => Some(Sub::Const(0.0)),
                None => None,
            },
            _ => None,
        };
        match decided {
            Some(s) => sub[j] = s,
            None if alias[j] == usize::MAX => {
                sub[j] = Sub::Var(n);
                n += 1;
            }
            None => {}
        }
    }
    for j in 0..m {
        if alias[j] != usize::MAX {
            sub[j] = sub[alias[j]];
        }
    }

    let mut lx = vec![0.0; n];
    let mut ux = vec![0.0; n];
    for j in 0..m {
        if let Sub::Var(r) = sub[j] {
            if alias[j] == usize::MAX {
                lx[r] = model.lower[j];
                ux[r] = model.upper[j];
            }
        }
    }

    let mut pmap: HashMap<(usize, usize), f64> = HashMap::new();
    let mut q = vec![0.0; n];
    let mut c0 = model.c0;
    for &(a, b, v) in &model.q {
        let h = if a == b { 0.5 * v } else { v };
        match (sub[a], sub[b]) {
            (Sub::Var(ra), Sub::Var(rb)) => {
                if ra == rb {
                    *pmap.entry((ra, ra)).or_default() += 2.0 * h;
                } else {
                    *pmap.entry((ra.min(rb), ra.max(rb))).or_default() += h;
                }
            }
            (Sub::Var(ra), Sub::Const(cb)) => q[ra] += h * cb,
            (Sub::Const(ca), Sub::Var(rb)) => q[rb] += h * ca,
            (Sub::Const(ca), Sub::Const(cb)) => c0 += h * ca * cb,
        }
    }
    for (j, &cj) in model.c.iter().enumerate() {
        if cj != 0.0 {
            match sub[j] {
                Sub::Var(r) => q[r] += cj,
                Sub::Const(v) => c0 += cj * v,
            }
        }
    }
    let mut ptrip: Vec<(usize, usize, f64)> = pmap.into_iter().map(|((a, b), v)| (a, b, v)).collect();
    ptrip.sort_by_key(|t| (t.1, t.0));
    let p = CscMatrix::from_triplets(n, n, &ptrip);

    let mut atrip = Vec::new();
    let mut rl = Vec::new();
    let mut ru = Vec::new();
    let mut origin = Vec::new();
    let mut terms: Vec<(usize, f64)> = Vec::new();
    const TOL: f64 = 1e-9;
    for (ri, row) in model.rows.iter().enumerate() {
        terms.clear();
        let mut rhs = row.rhs;
        for &(j, a) in &row.terms {
            match sub[j] {
                Sub::Var(r) => terms.push((r, a)),
                Sub::Const(v) => rhs -= a * v,
            }
        }
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(r, a) in terms.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == r => last.1 += a,
                _ => merged.push((r, a)),
            }
        }
        merged.retain(|t| t.1.abs() > 1e-14);
        let (lo, hi) = match row.sense {
            Sense::Le => (f64::NEG_INFINITY, rhs),
            Sense::Ge => (rhs, f64::INFINITY),
            Sense::Eq => (rhs, rhs),
        };
        match merged.len() {
            0 => {
                if lo > TOL || hi < -TOL {
                    return Err(format!("row {ri} ({:?}) has all columns fixed and is violated", row.kind));
                }
            }
            1 => {
                let (r, a) = merged[0];
                let (mut blo, mut bhi) = (lo / a, hi / a);
                if a < 0.0 {
                    std::mem::swap(&mut blo, &mut bhi);
                }
                lx[r] = lx[r].max(blo);
                ux[r] = ux[r].min(bhi);
            }
            _ => {
                let idx = origin.len();
                for &(r, a) in &merged {
                    atrip.push((idx, r, a));
                }
                rl.push(lo);
                ru.push(hi);
                origin.push(ri);
            }
        }
    }
    for r in 0..n {
        if lx[r] > ux[r] {
            if lx[r] - ux[r] > TOL * (1.0 + lx[r].abs()) {
                return Err(format!("column bounds cross after fixing ({} > {})", lx[r], ux[r]));
            }
            let mid = 0.5 * (lx[r] + ux[r]);
            lx[r] = mid;
            ux[r] = mid;
        }
    }
    let a = CscMatrix::from_triplets(origin.len(), n, &atrip);
    Ok(Reduced { sub, n, p, q, c0, a, rl, ru, origin, lx, ux })
}

impl Reduced {
    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = self.q.clone();
        self.p.sym_upper_mul_add(x, &mut g);
        let f = 0.5 * (0..self.n).map(|j| x[j] * (g[j] - self.q[j])).sum::<f64>()
            + self.q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + self.c0;
        (f, g)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|j| x[j].clamp(self.lx[j], self.ux[j])).collect()
    }

    fn support(&self, r: usize, y: f64) -> Option<f64> {
        if y > 0.0 {
            self.ru[r].is_finite().then(|| y * self.ru[r])
        } else if y < 0.0 {
            self.rl[r].is_finite().then(|| y * self.rl[r])
        } else {
            Some(0.0)
        }
    }

    /// Certified lower bound from a primal guess and row multipliers; returns
    /// `(bound, objective at projected point)`.
    fn lower_bound(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        let xp = self.project(x);
        let (f, mut g) = self.objective(&xp);
        let mut ax = vec![0.0; self.a.nrows];
        self.a.mul_add(&xp, &mut ax);
        let mut yv = vec![0.0; self.a.nrows];
        let mut lagr = 0.0;
        for r in 0..self.a.nrows {
            if let Some(s) = self.support(r, y[r]) {
                yv[r] = y[r];
                lagr += y[r] * ax[r] - s;
            }
        }
        self.a.tmul_add(&yv, &mut g);
        let boxed: f64 = (0..self.n)
            .map(|j| (g[j] * (self.lx[j] - xp[j])).min(g[j] * (self.ux[j] - xp[j])))
            .sum();
        let lb = f + lagr + boxed;
        (lb - 1e-9 * (1.0 + lb.abs()), f)
    }

    /// Farkas-type check: multipliers `dy` prove infeasibility when
    /// `min_{x ∈ box} (Aᵀdy)ᵀx > Σ_r σ_r(dy_r)`.
    fn proves_infeasible(&self, dy: &[f64]) -> bool {
        let scale = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return false;
        }
        let mut yv = vec![0.0; self.a.nrows];
        let mut supp = 0.0;
        let mut mag = 0.0;
        for r in 0..self.a.nrows {
            let v = dy[r] / scale;
            if let Some(s) = self.support(r, v) {
                yv[r] = v;
                supp += s;
                mag += s.abs();
            }
        }
        let mut g = vec![0.0; self.n];
        self.a.tmul_add(&yv, &mut g);
        let minbox: f64 = (0..self.n).map(|j| (g[j] * self.lx[j]).min(g[j] * self.ux[j])).sum();
        let mag = mag + (0..self.n).map(|j| (g[j] * self.lx[j]).abs().max((g[j] * self.ux[j]).abs())).sum::<f64>();
        minbox - supp > 1e-7 * (1.0 + mag)
    }

    fn qp(&self) -> QpProblem {
        let (m, n) = (self.a.nrows, self.n);
        let mut trip = Vec::with_capacity(self.a.nnz() + n);
        for j in 0..n {
            for (i, v) in self.a.col(j) {
                trip.push((i, j, v));
            }
            trip.push((m + j, j, 1.0));
        }
        let a = CscMatrix::from_triplets(m + n, n, &trip);
        let mut l = self.rl.clone();
        l.extend_from_slice(&self.lx);
        let mut u = self.ru.clone();
        u.extend_from_slice(&self.ux);
        QpProblem { n, p: self.p.clone(), q: self.q.clone(), a, l, u }
    }

    fn expand(&self, model: &MiqpModel, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let primal = self
            .sub
            .iter()
            .map(|s| match *s {
                Sub::Var(r) => x[r],
                Sub::Const(v) => v,
            })
            .collect();
        let mut duals = vec![0.0; model.rows.len()];
        for (r, &o) in self.origin.iter().enumerate() {
            duals[o] = y[r];
        }
        (primal, duals)
    }
}

/// Solve the node relaxation with `z ∈ [0,1]` for free binaries.
pub fn solve_relaxation(
    model: &MiqpModel,
    fix: &Fixings,
    warm: Option<&QpSolution>,
    tol: &QpTolerances,
) -> QpSolution {
    solve_relaxation_with_cutoff(model, fix, warm, tol, None)
}

/// As [`solve_relaxation`], but stops as soon as the certified bound exceeds
/// `cutoff` (status [`QpStatus::CutoffExceeded`]).
pub fn solve_relaxation_with_cutoff(
    model: &MiqpModel,
    fix: &Fixings,
    warm: Option<&QpSolution>,
    tol: &QpTolerances,
    cutoff: Option<f64>,
) -> QpSolution {
    let red = match reduce(model, fix) {
        Ok(r) => r,
        Err(why) => return QpSolution::infeasible(model, why),
    };
    let mr = red.a.nrows;
    if red.n == 0 {
        let (lb, f) = red.lower_bound(&[], &vec![0.0; mr]);
        let (primal, duals) = red.expand(model, &[], &vec![0.0; mr]);
        return QpSolution {
            primal,
            duals,
            objective: f,
            lower_bound: lb,
            primal_residual: 0.0,
            dual_residual: 0.0,
            status: QpStatus::Optimal,
            iterations: 0,
            certificate: None,
        };
    }
    let prob = red.qp();
    let warm_vecs = warm.map(|w| {
        let mut x = vec![0.0; red.n];
        for (j, s) in red.sub.iter().enumerate() {
            if let Sub::Var(r) = *s {
                x[r] = w.primal[j];
            }
        }
        let mut y = vec![0.0; mr + red.n];
        for (r, &o) in red.origin.iter().enumerate() {
            y[r] = w.duals[o];
        }
        (x, y)
    });
    let settings = AdmmSettings {
        eps_abs: tol.eps_abs,
        eps_rel: tol.eps_rel,
        max_iter: tol.max_iter,
        check_every: tol.check_every,
        ..AdmmSettings::default()
    };
    let mut best_lb = f64::NEG_INFINITY;
    let mut check = |it: &Iterate<'_>| -> Verdict {
        let (lb, f) = red.lower_bound(it.x, &it.y[..mr]);
        best_lb = best_lb.max(lb);
        if let Some(c) = cutoff {
            if best_lb > c {
                return Verdict::Stop;
            }
        }
        if let Some(g) = tol.bound_gap {
            if f - best_lb <= g * (1.0 + f.abs()) {
                return Verdict::Stop;
            }
        }
        if red.proves_infeasible(&it.dy[..mr]) {
            return Verdict::Infeasible;
        }
        Verdict::Continue
    };
    let res = admm::solve(&prob, &settings, warm_vecs.as_ref().map(|(x, y)| (&x[..], &y[..])), &mut check);
    if res.status == AdmmStatus::Infeasible {
        return QpSolution::infeasible(model, "dual ray certifies an empty relaxation".into());
    }
    let (lb_final, f) = red.lower_bound(&res.x, &res.y[..mr]);
    let lower_bound = lb_final.max(best_lb);
    let xp = red.project(&res.x);
    let (primal, duals) = red.expand(model, &xp, &res.y[..mr]);
    let status = match res.status {
        AdmmStatus::Solved => QpStatus::Optimal,
        AdmmStatus::Stopped if cutoff.is_some_and(|c| lower_bound > c) => QpStatus::CutoffExceeded,
        AdmmStatus::Stopped => QpStatus::Optimal,
        _ => QpStatus::IterLimit,
    };
    QpSolution {
        primal,
        duals,
        objective: f,
        lower_bound,
        primal_residual: res.prim_res,
        dual_residual: res.dual_res,
        status,
        iterations: res.iterations,
        certificate: None,
    }
}
