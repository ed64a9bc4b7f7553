//! Operator-splitting (ADMM) solver for convex QPs
//!
//! ```text
//! minimise ½ xᵀ P x + qᵀ x   subject to   l ≤ A x ≤ u
//! ```
//!
//! following the OSQP iteration: Ruiz equilibration, one quasi-definite KKT
//! factorisation per penalty value, over-relaxation and adaptive penalty.

use super::ldl::{LdlFactor, ZeroPivot};
use super::sparse::CscMatrix;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub n: usize,
    /// Upper triangle of `P`.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    /// m×n constraint matrix.
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Residuals, callbacks and penalty updates run every this many iterations.
    pub check_every: usize,
    pub scaling_iters: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-7,
            eps_rel: 0.0,
            max_iter: 200_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            check_every: 25,
            scaling_iters: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Solved,
    MaxIter,
    /// The caller's check asked to stop.
    Stopped,
    /// The caller's check certified infeasibility.
    Infeasible,
    /// The KKT system could not be factored.
    NumericalError,
}

/// What the periodic check wants the solver to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Stop,
    Infeasible,
}

/// Unscaled iterate handed to the periodic check.
pub struct Iterate<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Change of `y` over the last iteration (infeasibility direction).
    pub dy: &'a [f64],
    pub iter: usize,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: AdmmStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clamp_scale(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.clamp(1e-4, 1e4)
    }
}

/// Ruiz equilibration of the KKT matrix plus cost scaling. Scales `p`, `a`
/// and `q` in place.
fn equilibrate(p: &mut CscMatrix, a: &mut CscMatrix, q: &mut [f64], iters: usize) -> Scaling {
    let (n, m) = (p.ncols, a.nrows);
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let mut col_norm = vec![0.0f64; n];
    let mut row_norm = vec![0.0f64; m];
    for _ in 0..iters {
        col_norm.iter_mut().for_each(|v| *v = 0.0);
        row_norm.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            for (i, v) in p.col(j) {
                col_norm[j] = col_norm[j].max(v.abs());
                col_norm[i] = col_norm[i].max(v.abs());
            }
            for (i, v) in a.col(j) {
                col_norm[j] = col_norm[j].max(v.abs());
                row_norm[i] = row_norm[i].max(v.abs());
            }
        }
        let dx: Vec<f64> = col_norm.iter().map(|&v| 1.0 / clamp_scale(v).sqrt()).collect();
        let dz: Vec<f64> = row_norm.iter().map(|&v| 1.0 / clamp_scale(v).sqrt()).collect();
        for j in 0..n {
            for k in p.colptr[j]..p.colptr[j + 1] {
                p.values[k] *= dx[p.rowidx[k]] * dx[j];
            }
            for k in a.colptr[j]..a.colptr[j + 1] {
                a.values[k] *= dz[a.rowidx[k]] * dx[j];
            }
            q[j] *= dx[j];
            d[j] *= dx[j];
        }
        for i in 0..m {
            e[i] *= dz[i];
        }
        // Cost scaling.
        let mut pcol = vec![0.0f64; n];
        for j in 0..n {
            for (i, v) in p.col(j) {
                pcol[j] = pcol[j].max(v.abs());
                pcol[i] = pcol[i].max(v.abs());
            }
        }
        let mean = if n > 0 { pcol.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / clamp_scale(mean.max(inf_norm(q)));
        p.values.iter_mut().for_each(|v| *v *= gamma);
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    Scaling { d, e, c }
}

struct Kkt {
    matrix: CscMatrix,
    /// Storage position of the `(n+i, n+i)` diagonal for each constraint.
    rho_pos: Vec<usize>,
    factor: LdlFactor,
}

fn build_kkt(p: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> Result<Kkt, ZeroPivot> {
    let (n, m) = (p.ncols, a.nrows);
    let mut trip = Vec::with_capacity(p.nnz() + a.nnz() + n + m);
    for j in 0..n {
        for (i, v) in p.col(j) {
            trip.push((i, j, v));
        }
        trip.push((j, j, sigma));
        for (i, v) in a.col(j) {
            trip.push((j, n + i, v));
        }
    }
    for i in 0..m {
        trip.push((n + i, n + i, -1.0 / rho[i]));
    }
    let matrix = CscMatrix::from_triplets(n + m, n + m, &trip);
    let rho_pos = (0..m)
        .map(|i| {
            let col = n + i;
            let end = matrix.colptr[col + 1];
            debug_assert_eq!(matrix.rowidx[end - 1], col);
            end - 1
        })
        .collect();
    let factor = LdlFactor::new(&matrix)?;
    Ok(Kkt { matrix, rho_pos, factor })
}

/// Solve the QP. `check` runs on the unscaled iterate every
/// `settings.check_every` iterations and may stop the solve early.
pub fn solve(
    prob: &QpProblem,
    settings: &AdmmSettings,
    warm: Option<(&[f64], &[f64])>,
    check: &mut dyn FnMut(&Iterate<'_>) -> Verdict,
) -> AdmmResult {
    let (n, m) = (prob.n, prob.a.nrows);
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut q = prob.q.clone();
    let sc = equilibrate(&mut p, &mut a, &mut q, settings.scaling_iters);
    let l: Vec<f64> = prob.l.iter().zip(&sc.e).map(|(&v, &e)| v * e).collect();
    let u: Vec<f64> = prob.u.iter().zip(&sc.e).map(|(&v, &e)| v * e).collect();
    let at = a.transpose();

    let mut rho_base = settings.rho;
    let rho_for = |base: f64, i: usize| -> f64 {
        if l[i] == u[i] {
            (base * EQ_RHO_FACTOR).min(RHO_MAX)
        } else if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
            RHO_MIN
        } else {
            base
        }
    };
    let mut rho: Vec<f64> = (0..m).map(|i| rho_for(rho_base, i)).collect();
    let mut kkt = match build_kkt(&p, &a, settings.sigma, &rho) {
        Ok(k) => k,
        Err(_) => {
            return AdmmResult {
                x: vec![0.0; n],
                y: vec![0.0; m],
                status: AdmmStatus::NumericalError,
                iterations: 0,
                prim_res: f64::INFINITY,
                dual_res: f64::INFINITY,
            }
        }
    };

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut z = vec![0.0; m];
    if let Some((wx, wy)) = warm {
        for j in 0..n {
            x[j] = wx[j] / sc.d[j];
        }
        for i in 0..m {
            y[i] = wy[i] * sc.c / sc.e[i];
        }
    }
    {
        let mut ax = vec![0.0; m];
        a.mul_add(&x, &mut ax);
        for i in 0..m {
            z[i] = ax[i].clamp(l[i], u[i]);
        }
    }

    let sigma = settings.sigma;
    let alpha = settings.alpha;
    let mut rhs = vec![0.0; n + m];
    let mut dy = vec![0.0; m];
    let mut ux = vec![0.0; n];
    let mut uy = vec![0.0; m];
    let mut udy = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut px = vec![0.0; n];
    let mut aty = vec![0.0; n];
    let mut prim_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut status = AdmmStatus::MaxIter;
    let mut iter = 0;
    let every = settings.check_every.max(1);

    while iter < settings.max_iter {
        iter += 1;
        for j in 0..n {
            rhs[j] = sigma * x[j] - q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho[i];
        }
        kkt.factor.solve(&mut rhs);
        for j in 0..n {
            x[j] = alpha * rhs[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..m {
            let zt = z[i] + (rhs[n + i] - y[i]) / rho[i];
            let zr = alpha * zt + (1.0 - alpha) * z[i];
            let zn = (zr + y[i] / rho[i]).clamp(l[i], u[i]);
            let step = rho[i] * (zr - zn);
            y[i] += step;
            dy[i] = step;
            z[i] = zn;
        }

        if iter % every != 0 && iter != settings.max_iter {
            continue;
        }
        ax.iter_mut().for_each(|v| *v = 0.0);
        a.mul_add(&x, &mut ax);
        px.iter_mut().for_each(|v| *v = 0.0);
        p.sym_upper_mul_add(&x, &mut px);
        aty.iter_mut().for_each(|v| *v = 0.0);
        at.mul_add(&y, &mut aty);

        prim_res = (0..m).fold(0.0f64, |acc, i| acc.max(((ax[i] - z[i]) / sc.e[i]).abs()));
        dual_res = (0..n).fold(0.0f64, |acc, j| acc.max(((px[j] + q[j] + aty[j]) / sc.d[j]).abs())) / sc.c;
        let prim_scale = (0..m).fold(0.0f64, |acc, i| acc.max((ax[i] / sc.e[i]).abs()).max((z[i] / sc.e[i]).abs()));
        let dual_scale = (0..n).fold(0.0f64, |acc, j| {
            acc.max((px[j] / sc.d[j]).abs()).max((aty[j] / sc.d[j]).abs()).max((q[j] / sc.d[j]).abs())
        }) / sc.c;
        let eps_p = settings.eps_abs + settings.eps_rel * prim_scale;
        let eps_d = settings.eps_abs + settings.eps_rel * dual_scale;

        for j in 0..n {
            ux[j] = x[j] * sc.d[j];
        }
        for i in 0..m {
            uy[i] = y[i] * sc.e[i] / sc.c;
            udy[i] = dy[i] * sc.e[i] / sc.c;
        }
        if prim_res <= eps_p && dual_res <= eps_d {
            status = AdmmStatus::Solved;
            break;
        }
        match check(&Iterate { x: &ux, y: &uy, dy: &udy, iter }) {
            Verdict::Continue => {}
            Verdict::Stop => {
                status = AdmmStatus::Stopped;
                break;
            }
            Verdict::Infeasible => {
                status = AdmmStatus::Infeasible;
                break;
            }
        }

        if settings.adaptive_rho {
            let ps = (0..m).fold(0.0f64, |acc, i| acc.max((ax[i] - z[i]).abs()));
            let ds = (0..n).fold(0.0f64, |acc, j| acc.max((px[j] + q[j] + aty[j]).abs()));
            let pn = inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let dn = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&q)).max(1e-30);
            let ratio = ((ps / pn) / (ds / dn + 1e-30)).sqrt();
            let proposed = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
            if proposed.is_finite() && (proposed > 5.0 * rho_base || proposed < 0.2 * rho_base) {
                rho_base = proposed;
                for i in 0..m {
                    rho[i] = rho_for(rho_base, i);
                    kkt.matrix.values[kkt.rho_pos[i]] = -1.0 / rho[i];
                }
                if kkt.factor.refactor(&kkt.matrix.values).is_err() {
                    status = AdmmStatus::NumericalError;
                    break;
                }
            }
        }
    }

    for j in 0..n {
        ux[j] = x[j] * sc.d[j];
    }
    for i in 0..m {
        uy[i] = y[i] * sc.e[i] / sc.c;
    }
    AdmmResult { x: ux, y: uy, status, iterations: iter, prim_res, dual_res }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn never(_: &Iterate<'_>) -> Verdict {
        Verdict::Continue
    }

    #[test]
    fn box_constrained_quadratic() {
        // min (x0 − 2)² + (x1 + 1)² over [0,1]² → (1, 0)
        let p = CscMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]);
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let prob = QpProblem { n: 2, p, q: vec![-4.0, 2.0], a, l: vec![0.0, 0.0], u: vec![1.0, 1.0] };
        let r = solve(&prob, &AdmmSettings::default(), None, &mut never);
        assert_eq!(r.status, AdmmStatus::Solved);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && r.x[1].abs() < 1e-6);
        // multipliers: gradient + Aᵀy = 0
        assert!((r.y[0] - 2.0).abs() < 1e-5 && (r.y[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn equality_constrained_projection() {
        // min ½‖x‖² s.t. x0 + x1 + x2 = 3, x ∈ [0, 10]
        let p = CscMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
        let mut t = vec![(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0)];
        t.extend((0..3).map(|j| (j + 1, j, 1.0)));
        let a = CscMatrix::from_triplets(4, 3, &t);
        let prob = QpProblem {
            n: 3,
            p,
            q: vec![0.0; 3],
            a,
            l: vec![3.0, 0.0, 0.0, 0.0],
            u: vec![3.0, 10.0, 10.0, 10.0],
        };
        let r = solve(&prob, &AdmmSettings::default(), None, &mut never);
        assert_eq!(r.status, AdmmStatus::Solved);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }
}
