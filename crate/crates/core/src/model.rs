//! Problem data, the exact MAP objective, conditional parameter optima and
//! solution comparison metrics.
//!
//! The objective (negative log posterior, constants dropped) for an assignment
//! `z` and parameters `(μ, π)` is
//!
//! ```text
//! Σ_i Σ_k z_ik (y_i − μ_k)ᵀ W (y_i − μ_k) − Σ_i Σ_k z_ik log π_k  [+ ½ Σ_k μ_kᵀ Λ μ_k]
//! ```
//!
//! with `W = η I` for a scalar precision `η = 1/(2σ²)` and `W = ½ P` for a
//! shared precision matrix `P`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg;
use crate::Real;

/// Observations plus optional identifiers and partially known labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real = f64> {
    points: Vec<Vec<T>>,
    ids: Option<Vec<String>>,
    known_labels: BTreeMap<usize, usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(points: Vec<Vec<T>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(contract("dataset needs at least one point"));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(contract("points need at least one coordinate"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(contract(format!("point {i} has {} coordinates, expected {d}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("point {i} has a non-finite coordinate")));
            }
        }
        Ok(Self { points, ids: None, known_labels: BTreeMap::new() })
    }

    /// Convenience constructor for one-dimensional data.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(contract("id count differs from point count"));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    /// Known labels as `sample index → component index` (both 0-based).
    pub fn with_known_labels(mut self, labels: BTreeMap<usize, usize>) -> Result<Self> {
        if let Some((&i, _)) = labels.iter().find(|(&i, _)| i >= self.n()) {
            return Err(contract(format!("known label for sample {i} out of range")));
        }
        self.known_labels = labels;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn d(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn known_labels(&self) -> &BTreeMap<usize, usize> {
        &self.known_labels
    }

    /// Keep only the listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i].clone()).collect();
        let mut out = Self::new(points)?;
        if let Some(ids) = &self.ids {
            out.ids = Some(indices.iter().map(|&i| ids[i].clone()).collect());
        }
        for (new, &old) in indices.iter().enumerate() {
            if let Some(&k) = self.known_labels.get(&old) {
                out.known_labels.insert(new, k);
            }
        }
        Ok(out)
    }

    /// Per-dimension `(min, max)` over all points.
    pub fn range(&self) -> Vec<(T, T)> {
        (0..self.d())
            .map(|j| {
                self.points.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| {
                    (lo.min(p[j]), hi.max(p[j]))
                })
            })
            .collect()
    }
}

/// Fixed, shared precision of the component densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Precision<T: Real = f64> {
    /// `η = 1/(2σ²)`; the quadratic term is `η‖y − μ‖²`.
    Scalar(T),
    /// Precision matrix `P = Σ⁻¹`; the quadratic term is `½ (y − μ)ᵀ P (y − μ)`.
    Matrix(Vec<Vec<T>>),
}

impl<T: Real> Precision<T> {
    pub fn from_sigma(sigma: T) -> Self {
        Precision::Scalar(T::one() / (T::lit(2.0) * sigma * sigma))
    }

    /// The matrix `W` of the quadratic term `(y − μ)ᵀ W (y − μ)`.
    pub fn weight(&self, d: usize) -> Result<Vec<Vec<T>>> {
        match self {
            Precision::Scalar(eta) => {
                if !(*eta > T::zero()) || !eta.is_finite() {
                    return Err(Error::Domain("scalar precision must be positive".into()));
                }
                Ok((0..d)
                    .map(|i| (0..d).map(|j| if i == j { *eta } else { T::zero() }).collect())
                    .collect())
            }
            Precision::Matrix(p) => {
                if p.len() != d || p.iter().any(|r| r.len() != d) {
                    return Err(contract(format!("precision matrix must be {d}×{d}")));
                }
                if !linalg::is_symmetric(p, T::lit(1e-9)) {
                    return Err(Error::Domain("precision matrix is not symmetric".into()));
                }
                linalg::cholesky(p)?;
                let half = T::lit(0.5);
                Ok(p.iter().map(|r| r.iter().map(|&v| v * half).collect()).collect())
            }
        }
    }

    /// The precision matrix `P` itself (`2η I` for a scalar precision).
    pub fn matrix(&self, d: usize) -> Vec<Vec<T>> {
        match self {
            Precision::Scalar(eta) => (0..d)
                .map(|i| (0..d).map(|j| if i == j { T::lit(2.0) * *eta } else { T::zero() }).collect())
                .collect(),
            Precision::Matrix(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prior<T: Real = f64> {
    Uniform,
    /// Zero-mean Gaussian on each `μ_k` with diagonal precision `λ`
    /// (one strength per dimension), adding `½ Σ_k μ_kᵀ diag(λ) μ_k`.
    GaussianRidge(Vec<T>),
}

/// Everything about the problem that is not data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T: Real = f64> {
    pub k: usize,
    pub precision: Precision<T>,
    /// K×d lower bounds on the means.
    pub mu_lower: Vec<Vec<T>>,
    /// K×d upper bounds on the means.
    pub mu_upper: Vec<Vec<T>>,
    pub prior: Prior<T>,
    pub pi_floor: T,
    pub breakpoints: usize,
}

pub const DEFAULT_PI_FLOOR: f64 = 1e-3;
pub const DEFAULT_BREAKPOINTS: usize = 32;

impl<T: Real> ProblemSpec<T> {
    /// Spec with default mean bounds `[min(y), max(y)]` per dimension, uniform
    /// prior, `π_min = 10⁻³` and 32 breakpoints.
    pub fn new(k: usize, precision: Precision<T>, data: &Dataset<T>) -> Self {
        let range = data.range();
        let lo: Vec<T> = range.iter().map(|r| r.0).collect();
        let hi: Vec<T> = range.iter().map(|r| r.1).collect();
        Self {
            k,
            precision,
            mu_lower: vec![lo; k],
            mu_upper: vec![hi; k],
            prior: Prior::Uniform,
            pi_floor: T::lit(DEFAULT_PI_FLOOR).min(T::one() / T::from_count(k.max(1))),
            breakpoints: DEFAULT_BREAKPOINTS,
        }
    }

    pub fn with_pi_floor(mut self, floor: T) -> Self {
        self.pi_floor = floor;
        self
    }

    pub fn with_breakpoints(mut self, b: usize) -> Self {
        self.breakpoints = b;
        self
    }

    pub fn with_prior(mut self, prior: Prior<T>) -> Self {
        self.prior = prior;
        self
    }

    /// Same box `[lo, hi]` for every component.
    pub fn with_uniform_bounds(mut self, lo: Vec<T>, hi: Vec<T>) -> Self {
        self.mu_lower = vec![lo; self.k];
        self.mu_upper = vec![hi; self.k];
        self
    }

    pub fn d(&self) -> usize {
        self.mu_lower.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, data: &Dataset<T>) -> Result<()> {
        let (k, d) = (self.k, data.d());
        if k == 0 {
            return Err(contract("K must be at least 1"));
        }
        if self.mu_lower.len() != k
            || self.mu_upper.len() != k
            || self.mu_lower.iter().chain(&self.mu_upper).any(|r| r.len() != d)
        {
            return Err(contract(format!("mean bounds must be {k}×{d}")));
        }
        for kk in 0..k {
            for j in 0..d {
                if !(self.mu_lower[kk][j] <= self.mu_upper[kk][j]) {
                    return Err(Error::Build(format!(
                        "mean bound for component {kk}, dimension {j} has lower > upper"
                    )));
                }
            }
        }
        if !(self.pi_floor > T::zero())
            || self.pi_floor > T::one() / T::from_count(k) * (T::one() + T::epsilon())
        {
            return Err(Error::Domain(format!("π floor must lie in (0, 1/K], got {}", self.pi_floor)));
        }
        if self.breakpoints == 0 {
            return Err(contract("need at least one breakpoint"));
        }
        self.precision.weight(d)?;
        if let Prior::GaussianRidge(l) = &self.prior {
            if l.len() != d || l.iter().any(|v| !(*v >= T::zero())) {
                return Err(Error::Domain("ridge strengths must be d nonnegative values".into()));
            }
        }
        if let Some((&i, &lab)) = data.known_labels().iter().find(|(_, &lab)| lab >= k) {
            return Err(contract(format!("known label {lab} of sample {i} exceeds K")));
        }
        Ok(())
    }

    fn ridge(&self) -> Option<&[T]> {
        match &self.prior {
            Prior::Uniform => None,
            Prior::GaussianRidge(l) => Some(l),
        }
    }

    /// `½ Σ_j λ_j μ_j²` under the ridge prior, zero otherwise.
    pub fn ridge_term(&self, mu: &[T]) -> T {
        self.ridge().map_or(T::zero(), |l| {
            T::lit(0.5) * l.iter().zip(mu).map(|(&lj, &m)| lj * m * m).sum::<T>()
        })
    }

    /// Constant dropped from the objective: `n·(d/2·ln 2π − ½ ln det P)`.
    /// Adding it turns reported objectives into a full negative log posterior
    /// under the uniform prior.
    pub fn objective_offset(&self, n: usize) -> Result<T> {
        let d = self.d();
        let p = self.precision.matrix(d);
        let l = linalg::cholesky(&p)?;
        let logdet = T::lit(2.0) * (0..d).map(|j| l[j][j].ln()).sum::<T>();
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        Ok(T::from_count(n) * (T::from_count(d) * T::lit(0.5) * two_pi.ln() - T::lit(0.5) * logdet))
    }
}

/// Hard assignment of each sample to one component (binary `z` with unit
/// row sums, stored as labels).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    k: usize,
    labels: Vec<usize>,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(contract(format!("sample {i} assigned to component {l} ≥ K = {k}")));
        }
        Ok(Self { k, labels })
    }

    /// Build from an n×K 0/1 matrix; every row must sum to exactly one.
    pub fn from_matrix(z: &[Vec<u8>]) -> Result<Self> {
        let k = z.first().map_or(0, Vec::len);
        let mut labels = Vec::with_capacity(z.len());
        for (i, row) in z.iter().enumerate() {
            if row.len() != k || row.iter().any(|&v| v > 1) {
                return Err(contract(format!("row {i} is not a binary row of length {k}")));
            }
            let ones: Vec<usize> = (0..k).filter(|&c| row[c] == 1).collect();
            if ones.len() != 1 {
                return Err(contract(format!("row {i} sums to {}, expected 1", ones.len())));
            }
            labels.push(ones[0]);
        }
        Self::new(labels, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn z(&self, i: usize, k: usize) -> bool {
        self.labels[i] == k
    }

    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        self.labels
            .iter()
            .map(|&l| (0..self.k).map(|c| u8::from(c == l)).collect())
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Apply a relabelling `new = perm[old]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self { k: self.k, labels: self.labels.iter().map(|&l| perm[l]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T: Real = f64> {
    /// K×d component means.
    pub mu: Vec<Vec<T>>,
    /// Mixing proportions on the floored simplex.
    pub pi: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution<T: Real = f64> {
    pub assignment: Assignment,
    pub params: Params<T>,
    pub objective: T,
    pub feasible: bool,
}

/// Restrictions on `π` that side constraints may impose on the conditional
/// parameter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamRule {
    /// `π_1 ≤ π_2 ≤ … ≤ π_K`.
    pub order_pi: bool,
    /// `π_k = n_k / n` exactly.
    pub estimator_link: bool,
}

fn check_shapes<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>, n: usize, k: usize) -> Result<()> {
    if n != data.n() {
        return Err(contract(format!("assignment has {n} rows, data has {}", data.n())));
    }
    if k != spec.k {
        return Err(contract(format!("assignment has K = {k}, spec has K = {}", spec.k)));
    }
    Ok(())
}

fn check_params<T: Real>(spec: &ProblemSpec<T>, d: usize, p: &Params<T>) -> Result<()> {
    if p.mu.len() != spec.k || p.mu.iter().any(|m| m.len() != d) || p.pi.len() != spec.k {
        return Err(contract(format!("parameters must have {} means of length {d}", spec.k)));
    }
    if let Some((k, v)) = p.pi.iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
        return Err(Error::Domain(format!("π_{k} = {v} is not positive")));
    }
    Ok(())
}

fn diff<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Exact objective for a hard assignment. Smaller is better.
pub fn evaluate_objective<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    a: &Assignment,
    p: &Params<T>,
) -> Result<T> {
    check_shapes(data, spec, a.n(), a.k())?;
    check_params(spec, data.d(), p)?;
    let w = spec.precision.weight(data.d())?;
    let mut total = T::zero();
    for (i, y) in data.points().iter().enumerate() {
        let k = a.label(i);
        total = total + linalg::quad_form(&w, &diff(y, &p.mu[k])) - p.pi[k].ln();
    }
    Ok(total + p.mu.iter().map(|m| spec.ridge_term(m)).sum())
}

/// Objective with a relaxed (fractional) `z`; linear in `z` for fixed
/// parameters.
pub fn evaluate_relaxed_objective<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    z: &[Vec<T>],
    p: &Params<T>,
) -> Result<T> {
    check_shapes(data, spec, z.len(), z.first().map_or(spec.k, Vec::len))?;
    check_params(spec, data.d(), p)?;
    let w = spec.precision.weight(data.d())?;
    let mut total = T::zero();
    for (i, y) in data.points().iter().enumerate() {
        for k in 0..spec.k {
            let cost = linalg::quad_form(&w, &diff(y, &p.mu[k])) - p.pi[k].ln();
            total = total + z[i][k] * cost;
        }
    }
    Ok(total + p.mu.iter().map(|m| spec.ridge_term(m)).sum())
}

/// Per-component sufficient statistics of a hard assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats<T: Real = f64> {
    pub count: Vec<usize>,
    pub sum: Vec<Vec<T>>,
    /// `Σ yᵀ W y` over the members.
    pub sq: Vec<T>,
}

impl<T: Real> ClusterStats<T> {
    pub fn empty(k: usize, d: usize) -> Self {
        Self { count: vec![0; k], sum: vec![vec![T::zero(); d]; k], sq: vec![T::zero(); k] }
    }

    pub fn from_assignment(data: &Dataset<T>, w: &[Vec<T>], a: &Assignment) -> Self {
        let mut s = Self::empty(a.k(), data.d());
        for (i, y) in data.points().iter().enumerate() {
            s.add(a.label(i), y, linalg::quad_form(w, y));
        }
        s
    }

    pub fn add(&mut self, k: usize, y: &[T], ywy: T) {
        self.count[k] += 1;
        for (s, &v) in self.sum[k].iter_mut().zip(y) {
            *s = *s + v;
        }
        self.sq[k] = self.sq[k] + ywy;
    }

    pub fn remove(&mut self, k: usize, y: &[T], ywy: T) {
        self.count[k] -= 1;
        for (s, &v) in self.sum[k].iter_mut().zip(y) {
            *s = *s - v;
        }
        self.sq[k] = self.sq[k] - ywy;
        if self.count[k] == 0 {
            self.sum[k].iter_mut().for_each(|s| *s = T::zero());
            self.sq[k] = T::zero();
        }
    }
}

/// Precomputed pieces for repeated conditional-parameter evaluations.
#[derive(Debug, Clone)]
pub struct ParamSolver<'a, T: Real = f64> {
    spec: &'a ProblemSpec<T>,
    w: Vec<Vec<T>>,
    w_diag: bool,
    rule: ParamRule,
}

impl<'a, T: Real> ParamSolver<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>, d: usize, rule: ParamRule) -> Result<Self> {
        let w = spec.precision.weight(d)?;
        let w_diag = linalg::is_diagonal(&w);
        Ok(Self { spec, w, w_diag, rule })
    }

    pub fn weight(&self) -> &[Vec<T>] {
        &self.w
    }

    pub fn rule(&self) -> ParamRule {
        self.rule
    }

    /// Minimiser of the quadratic-plus-ridge term for one component over its box.
    pub fn component_mean(&self, k: usize, count: usize, sum: &[T]) -> Vec<T> {
        self.weighted_mean(k, T::from_count(count), sum)
    }

    /// [`component_mean`](Self::component_mean) for a fractional member
    /// weight, as in the EM M-step.
    pub fn weighted_mean(&self, k: usize, weight: T, sum: &[T]) -> Vec<T> {
        let spec = self.spec;
        let (lo, hi) = (&spec.mu_lower[k], &spec.mu_upper[k]);
        let d = lo.len();
        let ridge = spec.ridge();
        if !(weight > T::zero()) {
            return (0..d)
                .map(|j| match ridge {
                    Some(_) => T::zero().max(lo[j]).min(hi[j]),
                    None => (lo[j] + hi[j]) * T::lit(0.5),
                })
                .collect();
        }
        let nk = weight;
        let two = T::lit(2.0);
        let lam = |j: usize| ridge.map_or(T::zero(), |l| l[j]);
        if self.w_diag {
            return (0..d)
                .map(|j| {
                    let wjj = self.w[j][j];
                    let m = two * wjj * sum[j] / (two * wjj * nk + lam(j));
                    m.max(lo[j]).min(hi[j])
                })
                .collect();
        }
        let h: Vec<Vec<T>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| two * nk * self.w[i][j] + if i == j { lam(j) } else { T::zero() })
                    .collect()
            })
            .collect();
        let g: Vec<T> = linalg::mat_vec(&self.w, sum).into_iter().map(|v| two * v).collect();
        let start: Vec<T> = sum.iter().map(|&s| s / nk).collect();
        linalg::box_qp(&h, &g, lo, hi, &start)
    }

    /// Mixing proportions for the given counts, or `None` when the rule makes
    /// these counts infeasible.
    pub fn proportions(&self, counts: &[usize]) -> Option<Vec<T>> {
        pi_from_counts(counts, self.spec.pi_floor, self.rule)
    }

    pub fn params_from_stats(&self, stats: &ClusterStats<T>) -> Option<Params<T>> {
        let pi = self.proportions(&stats.count)?;
        let mu = (0..self.spec.k)
            .map(|k| self.component_mean(k, stats.count[k], &stats.sum[k]))
            .collect();
        Some(Params { mu, pi })
    }

    /// Objective at the conditional optimum, from sufficient statistics only.
    pub fn profile_objective(&self, stats: &ClusterStats<T>) -> Option<T> {
        let p = self.params_from_stats(stats)?;
        let two = T::lit(2.0);
        let mut total = T::zero();
        for k in 0..self.spec.k {
            let mu = &p.mu[k];
            total = total + self.spec.ridge_term(mu);
            let c = stats.count[k];
            if c == 0 {
                continue;
            }
            let wmu = linalg::mat_vec(&self.w, mu);
            let cross: T = wmu.iter().zip(&stats.sum[k]).map(|(&a, &b)| a * b).sum();
            let mwm: T = wmu.iter().zip(mu).map(|(&a, &b)| a * b).sum();
            let quad = (stats.sq[k] - two * cross + T::from_count(c) * mwm).max(T::zero());
            total = total + quad - T::from_count(c) * p.pi[k].ln();
        }
        Some(total)
    }
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (equal weights).
fn pava<T: Real>(v: &[T]) -> Vec<T> {
    let mut blocks: Vec<(T, usize)> = Vec::new();
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let c = c1 + c2;
            blocks.push(((m1 * T::from_count(c1) + m2 * T::from_count(c2)) / T::from_count(c), c));
        }
    }
    blocks.into_iter().flat_map(|(m, c)| std::iter::repeat(m).take(c)).collect()
}

/// Minimiser of `−Σ_k n_k log π_k` over the simplex with `π_k ≥ floor`,
/// optionally with `π` non-decreasing or pinned to `n_k/n`.
pub fn pi_from_counts<T: Real>(counts: &[usize], floor: T, rule: ParamRule) -> Option<Vec<T>> {
    let weights: Vec<T> = counts.iter().map(|&c| T::from_count(c)).collect();
    pi_from_weights(&weights, floor, rule)
}

/// [`pi_from_counts`] for non-negative real weights (soft counts).
pub fn pi_from_weights<T: Real>(weights: &[T], floor: T, rule: ParamRule) -> Option<Vec<T>> {
    let k = weights.len();
    let total: T = weights.iter().copied().sum();
    let nn = if total > T::zero() { total } else { T::one() };
    let weights = weights.to_vec();
    if rule.estimator_link {
        let pi: Vec<T> = weights.iter().map(|&c| c / nn).collect();
        let tol = T::epsilon() * T::lit(8.0);
        if pi.iter().any(|&p| p < floor * (T::one() - tol)) {
            return None;
        }
        if rule.order_pi && pi.windows(2).any(|w| w[0] > w[1]) {
            return None;
        }
        return Some(pi);
    }
    let v = if rule.order_pi { pava(&weights) } else { weights };
    let mut floored = vec![false; k];
    let mut scale;
    loop {
        let nfloored = floored.iter().filter(|&&f| f).count();
        let free_mass = T::one() - floor * T::from_count(nfloored);
        let free_weight: T = (0..k).filter(|&c| !floored[c]).map(|c| v[c]).sum();
        if !(free_weight > T::zero()) {
            // Every remaining coordinate has zero weight: spread the leftover mass.
            let rest = k - nfloored;
            let share = if rest > 0 { free_mass / T::from_count(rest) } else { T::zero() };
            return Some((0..k).map(|c| if floored[c] { floor } else { share.max(floor) }).collect());
        }
        scale = free_mass / free_weight;
        let newly: Vec<usize> =
            (0..k).filter(|&c| !floored[c] && scale * v[c] < floor).collect();
        if newly.is_empty() {
            break;
        }
        for c in newly {
            floored[c] = true;
        }
    }
    Some((0..k).map(|c| if floored[c] { floor } else { scale * v[c] }).collect())
}

/// Closed-form optimum of `(μ, π)` for a fixed assignment: box-projected
/// component means and floored empirical proportions.
pub fn conditional_params<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    a: &Assignment,
) -> Result<Params<T>> {
    conditional_params_with(data, spec, a, ParamRule::default())?
        .ok_or_else(|| Error::Infeasible("no parameters satisfy the π rule".into()))
}

/// Like [`conditional_params`] but honouring `π` ordering / estimator
/// constraints; `None` when the assignment admits no feasible `π`.
pub fn conditional_params_with<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    a: &Assignment,
    rule: ParamRule,
) -> Result<Option<Params<T>>> {
    check_shapes(data, spec, a.n(), a.k())?;
    let solver = ParamSolver::new(spec, data.d(), rule)?;
    let stats = ClusterStats::from_assignment(data, solver.weight(), a);
    Ok(solver.params_from_stats(&stats))
}

/// Assignment plus conditional parameters and true objective.
pub fn solution_for<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    a: Assignment,
    rule: ParamRule,
) -> Result<Option<MapSolution<T>>> {
    let Some(params) = conditional_params_with(data, spec, &a, rule)? else {
        return Ok(None);
    };
    let objective = evaluate_objective(data, spec, &a, &params)?;
    Ok(Some(MapSolution { assignment: a, params, objective, feasible: true }))
}

/// Linear map `ỹ = Lᵀ y` for `P = L Lᵀ`, so `½(y−μ)ᵀP(y−μ) = ½‖ỹ − Lᵀμ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening<T: Real = f64> {
    /// Lower-triangular factor `L`.
    pub factor: Vec<Vec<T>>,
}

impl<T: Real> Whitening<T> {
    pub fn apply(&self, y: &[T]) -> Vec<T> {
        let d = y.len();
        (0..d).map(|j| (j..d).map(|i| self.factor[i][j] * y[i]).sum()).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        linalg::is_diagonal(&self.factor)
    }
}

/// Transform data into coordinates where the shared precision is the identity.
pub fn whiten<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>) -> Result<(Dataset<T>, Whitening<T>)> {
    let Precision::Matrix(p) = &spec.precision else {
        return Err(contract("whitening needs a matrix precision"));
    };
    if p.len() != data.d() {
        return Err(contract("precision dimension differs from data dimension"));
    }
    let factor = linalg::cholesky(p)?;
    let wt = Whitening { factor };
    let points = data.points().iter().map(|y| wt.apply(y)).collect();
    let mut out = Dataset::new(points)?;
    out.ids = data.ids.clone();
    out.known_labels = data.known_labels.clone();
    Ok((out, wt))
}

/// Table-2 style comparison of an estimate against a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionMetrics<T: Real = f64> {
    /// `sup_k |π̂_k − π_k|` after alignment.
    pub pi_sup: T,
    /// Frobenius distance between aligned mean stacks.
    pub mu_l2: T,
    /// `(1/n) Σ_i sup_k |ẑ_ik − z_ik|` after alignment.
    pub z_mean_sup: T,
    /// `matching[k̂]` is the reference component paired with estimate `k̂`.
    pub matching: Vec<usize>,
}

/// Align components by minimum-cost perfect matching on `‖μ̂_k − μ_l‖₂`, then
/// compare proportions, means and assignments.
pub fn solution_metrics<T: Real>(est: &MapSolution<T>, truth: &MapSolution<T>) -> Result<SolutionMetrics<T>> {
    let k = est.params.mu.len();
    if truth.params.mu.len() != k || est.params.pi.len() != k || truth.params.pi.len() != k {
        return Err(contract("estimate and reference have different K"));
    }
    if est.assignment.n() != truth.assignment.n() {
        return Err(contract("estimate and reference have different n"));
    }
    let dist = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() };
    let cost: Vec<Vec<T>> = est
        .params
        .mu
        .iter()
        .map(|m| truth.params.mu.iter().map(|t| dist(m, t).sqrt()).collect())
        .collect();
    let matching = linalg::min_cost_matching(&cost);
    let pi_sup = (0..k)
        .map(|c| (est.params.pi[c] - truth.params.pi[matching[c]]).abs())
        .fold(T::zero(), T::max);
    let mu_l2 = (0..k)
        .map(|c| dist(&est.params.mu[c], &truth.params.mu[matching[c]]))
        .sum::<T>()
        .sqrt();
    let n = est.assignment.n();
    let mismatched = (0..n)
        .filter(|&i| matching[est.assignment.label(i)] != truth.assignment.label(i))
        .count();
    let z_mean_sup = T::from_count(mismatched) / T::from_count(n.max(1));
    Ok(SolutionMetrics { pi_sup, mu_l2, z_mean_sup, matching })
}
