//! Local-search baselines over assignments and parameters: K-means seeding,
//! EM on the soft relaxation, multi-start EM and simulated annealing. The
//! rounding, repair and polishing steps here are shared with the
//! branch-and-bound incumbent heuristic.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::ConstraintSet;
use crate::error::{contract, Error, Result};
use crate::linalg;
use crate::model::{
    conditional_params, pi_from_weights, solution_for, Assignment, ClusterStats, Dataset, MapSolution, ParamRule,
    ParamSolver, Params, ProblemSpec,
};
use crate::Real;

const MAX_LLOYD: usize = 300;

/// Index of the first minimum.
fn argmin<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map_or(0, |(i, _)| i)
}

fn dist2<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a seeded farthest-point start: the first centre is a
/// uniformly drawn sample, each further centre the sample farthest from the
/// centres so far. Euclidean distances; ties go to the smaller index.
pub fn kmeans_init<T: Real>(data: &Dataset<T>, k: usize, seed: u64) -> Result<Assignment> {
    let n = data.n();
    if k == 0 || n < k {
        return Err(contract(format!("K-means needs n ≥ K ≥ 1, got n = {n}, K = {k}")));
    }
    let pts = data.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut centers = vec![pts[first].clone()];
    let mut nearest: Vec<T> = pts.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let far = argmin(nearest.iter().map(|&v| -v));
        centers.push(pts[far].clone());
        for (i, p) in pts.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &pts[far]));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let best = argmin(centers.iter().map(|c| dist2(p, c)));
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<T>> = pts.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let m = T::from_count(members.len());
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[j]).sum::<T>() / m;
            }
        }
    }
    Assignment::new(labels, k)
}

/// Round a score matrix (larger is preferred) to an assignment and repair
/// side-constraint violations greedily.
///
/// Must-link groups move as a unit; groups holding a fixed label start there
/// and never move. Each pass reassigns the violating group with the smallest
/// score margin to the best-scoring component that strictly lowers the total
/// violation; at most `n` passes. On failure the last state is returned as
/// the error value.
pub fn repair<T: Real>(constraints: &ConstraintSet, scores: &[Vec<T>]) -> std::result::Result<Assignment, Assignment> {
    let (n, k) = (constraints.n(), constraints.k());
    let group_score = |rep: usize, kk: usize| -> T {
        constraints.group_members(rep).iter().map(|&m| scores[m][kk]).sum()
    };
    let mut pinned: Vec<Option<usize>> = vec![None; n];
    for (i, kk) in constraints.pinned_labels() {
        let g = constraints.group_of(i);
        pinned[g].get_or_insert(kk);
    }
    let mut labels = vec![0usize; n];
    for rep in constraints.group_reps() {
        let kk = pinned[rep].unwrap_or_else(|| argmin((0..k).map(|kk| -group_score(rep, kk))));
        for &m in constraints.group_members(rep) {
            labels[m] = kk;
        }
    }
    let mut a = Assignment::new(labels.clone(), k).expect("labels below K");
    for _ in 0..n {
        let viol = constraints.violation(&a);
        if viol == 0 {
            return Ok(a);
        }
        let mut cands: Vec<usize> = constraints
            .violating_samples(&a)
            .into_iter()
            .map(|i| constraints.group_of(i))
            .filter(|&g| pinned[g].is_none())
            .collect();
        cands.sort_unstable();
        cands.dedup();
        let margin = |rep: usize| {
            let cur = labels[rep];
            let other = (0..k).filter(|&kk| kk != cur).map(|kk| group_score(rep, kk)).fold(T::neg_infinity(), T::max);
            group_score(rep, cur) - other
        };
        cands.sort_by(|&a, &b| margin(a).partial_cmp(&margin(b)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let mut moved = false;
        'search: for &rep in &cands {
            let cur = labels[rep];
            let mut targets: Vec<usize> = (0..k).filter(|&kk| kk != cur).collect();
            targets.sort_by(|&x, &y| {
                group_score(rep, y).partial_cmp(&group_score(rep, x)).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y))
            });
            for to in targets {
                let mut trial = labels.clone();
                for &m in constraints.group_members(rep) {
                    trial[m] = to;
                }
                let ta = Assignment::new(trial.clone(), k).expect("labels below K");
                if constraints.violation(&ta) < viol {
                    labels = trial;
                    a = ta;
                    moved = true;
                    break 'search;
                }
            }
        }
        if !moved {
            return Err(a);
        }
    }
    if constraints.violation(&a) == 0 {
        Ok(a)
    } else {
        Err(a)
    }
}

/// [`repair`] followed by conditional parameters and the true objective.
/// `None` when repair fails or the π rule rejects the repaired counts.
pub fn round_scores<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
    scores: &[Vec<T>],
) -> Result<Option<MapSolution<T>>> {
    match repair(constraints, scores) {
        Ok(a) => solution_for(data, spec, a, constraints.param_rule()),
        Err(_) => Ok(None),
    }
}

fn move_group<T: Real>(stats: &mut ClusterStats<T>, data: &Dataset<T>, ywy: &[T], members: &[usize], from: usize, to: usize) {
    for &m in members {
        stats.remove(from, data.point(m), ywy[m]);
        stats.add(to, data.point(m), ywy[m]);
    }
}

/// Labels of must-link groups that carry no fixed label.
fn movable_groups(constraints: &ConstraintSet) -> Vec<usize> {
    let mut pinned = vec![false; constraints.n()];
    for (i, _) in constraints.pinned_labels() {
        pinned[constraints.group_of(i)] = true;
    }
    constraints.group_reps().filter(|&r| !pinned[r]).collect()
}

/// Coordinate descent on the biconvex objective: repeatedly move single
/// must-link groups to the component that lowers the objective at the
/// re-optimised parameters, keeping every side constraint satisfied, until
/// no move gains more than 10⁻¹². Never returns a worse solution than `s`.
pub fn local_polish<T: Real>(
    s: &MapSolution<T>,
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
) -> Result<MapSolution<T>> {
    let rule = constraints.param_rule();
    let solver = ParamSolver::new(spec, data.d(), rule)?;
    let ywy: Vec<T> = data.points().iter().map(|y| linalg::quad_form(solver.weight(), y)).collect();
    let k = spec.k;
    let mut labels = s.assignment.labels().to_vec();
    let mut stats = ClusterStats::from_assignment(data, solver.weight(), &s.assignment);
    let Some(mut cur) = solver.profile_objective(&stats) else {
        return Ok(s.clone());
    };
    let tol = T::lit(1e-12);
    let groups = movable_groups(constraints);
    loop {
        let mut improved = false;
        for &rep in &groups {
            let members = constraints.group_members(rep);
            let from = labels[rep];
            let mut best: Option<(T, usize)> = None;
            for to in (0..k).filter(|&to| to != from) {
                move_group(&mut stats, data, &ywy, members, from, to);
                if let Some(obj) = solver.profile_objective(&stats) {
                    if obj < best.map_or(cur, |b| b.0) - tol {
                        let mut trial = labels.clone();
                        for &m in members {
                            trial[m] = to;
                        }
                        if constraints.satisfied(&Assignment::new(trial, k)?) {
                            best = Some((obj, to));
                        }
                    }
                }
                move_group(&mut stats, data, &ywy, members, to, from);
            }
            if let Some((obj, to)) = best {
                move_group(&mut stats, data, &ywy, members, from, to);
                for &m in members {
                    labels[m] = to;
                }
                cur = obj;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    match solution_for(data, spec, Assignment::new(labels, k)?, rule)? {
        Some(p) if p.objective <= s.objective => Ok(p),
        _ => Ok(s.clone()),
    }
}

/// EM state: responsibilities, parameters and the penalised log-likelihood
/// `Σ_i log Σ_k π_k exp(−(y_i−μ_k)ᵀW(y_i−μ_k)) − Σ_k ridge(μ_k)` after each
/// iteration (the first entry is at the initial parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution<T: Real = f64> {
    pub responsibilities: Vec<Vec<T>>,
    pub params: Params<T>,
    pub loglik_trace: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmRun<T: Real = f64> {
    pub soft: SoftSolution<T>,
    /// Per-row argmax of the responsibilities after constraint repair.
    pub rounded: Option<MapSolution<T>>,
}

fn check_init<T: Real>(spec: &ProblemSpec<T>, d: usize, p: &Params<T>) -> Result<()> {
    if p.mu.len() != spec.k || p.mu.iter().any(|m| m.len() != d) || p.pi.len() != spec.k {
        return Err(contract(format!("initial parameters must have {} means of length {d}", spec.k)));
    }
    if p.pi.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::Domain("initial proportions must be positive".into()));
    }
    Ok(())
}

fn e_step_with<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>, w: &[Vec<T>], p: &Params<T>) -> (Vec<Vec<T>>, T) {
    let k = spec.k;
    let mut ll = T::zero();
    let mut resp = Vec::with_capacity(data.n());
    for y in data.points() {
        let logits: Vec<T> = (0..k)
            .map(|kk| {
                let diff: Vec<T> = y.iter().zip(&p.mu[kk]).map(|(&a, &b)| a - b).collect();
                p.pi[kk].ln() - linalg::quad_form(w, &diff)
            })
            .collect();
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
        let total: T = exps.iter().copied().sum();
        ll = ll + top + total.ln();
        resp.push(exps.into_iter().map(|e| e / total).collect());
    }
    ll = ll - p.mu.iter().map(|m| spec.ridge_term(m)).sum::<T>();
    (resp, ll)
}

fn m_step_with<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>, solver: &ParamSolver<'_, T>, resp: &[Vec<T>]) -> Params<T> {
    let (k, d) = (spec.k, data.d());
    let mut weight = vec![T::zero(); k];
    let mut sums = vec![vec![T::zero(); d]; k];
    for (y, r) in data.points().iter().zip(resp) {
        for kk in 0..k {
            weight[kk] = weight[kk] + r[kk];
            for j in 0..d {
                sums[kk][j] = sums[kk][j] + r[kk] * y[j];
            }
        }
    }
    let mu = (0..k).map(|kk| solver.weighted_mean(kk, weight[kk], &sums[kk])).collect();
    let pi = pi_from_weights(&weight, spec.pi_floor, ParamRule::default()).expect("unrestricted rule always feasible");
    Params { mu, pi }
}

/// Responsibilities `r_ik ∝ π_k exp(−(y_i−μ_k)ᵀW(y_i−μ_k))` and the penalised
/// log-likelihood at `p`.
pub fn e_step<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>, p: &Params<T>) -> Result<(Vec<Vec<T>>, T)> {
    check_init(spec, data.d(), p)?;
    let w = spec.precision.weight(data.d())?;
    Ok(e_step_with(data, spec, &w, p))
}

/// Floored proportions of the soft counts and box-constrained weighted means.
pub fn m_step<T: Real>(data: &Dataset<T>, spec: &ProblemSpec<T>, resp: &[Vec<T>]) -> Result<Params<T>> {
    if resp.len() != data.n() || resp.iter().any(|r| r.len() != spec.k) {
        return Err(contract("responsibilities must be n×K"));
    }
    let solver = ParamSolver::new(spec, data.d(), ParamRule::default())?;
    Ok(m_step_with(data, spec, &solver, resp))
}

/// EM from `init` until the log-likelihood gains less than `tol` or
/// `max_iter` M-steps have run. Side constraints only enter through the
/// final rounding.
pub fn em<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
    init: &Params<T>,
    max_iter: usize,
    tol: T,
) -> Result<EmRun<T>> {
    spec.validate(data)?;
    check_init(spec, data.d(), init)?;
    let solver = ParamSolver::new(spec, data.d(), ParamRule::default())?;
    let w = solver.weight().to_vec();
    let mut params = init.clone();
    let (mut resp, mut ll) = e_step_with(data, spec, &w, &params);
    let mut trace = vec![ll];
    for _ in 0..max_iter {
        params = m_step_with(data, spec, &solver, &resp);
        let (r, next) = e_step_with(data, spec, &w, &params);
        resp = r;
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < tol {
            break;
        }
    }
    let rounded = round_scores(data, spec, constraints, &resp)?;
    Ok(EmRun { soft: SoftSolution { responsibilities: resp, params, loglik_trace: trace }, rounded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStartSettings {
    pub restarts: usize,
    /// Stop starting new runs after this many seconds (at least one run).
    pub time_limit: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for MultiStartSettings {
    fn default() -> Self {
        Self { restarts: 20, time_limit: None, max_iter: 1000, tol: 1e-10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStart<T: Real = f64> {
    pub best: MapSolution<T>,
    /// Rounded objective of each run, `None` where rounding failed.
    pub objectives: Vec<Option<T>>,
}

/// Best rounded EM solution over restarts: the first from the K-means
/// assignment's conditional parameters, the rest from means drawn uniformly
/// in their boxes and uniformly drawn, floored proportions.
pub fn em_multistart<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
    settings: &MultiStartSettings,
) -> Result<MultiStart<T>> {
    if settings.restarts == 0 {
        return Err(contract("multi-start EM needs at least one restart"));
    }
    let start = Instant::now();
    let limit = settings.time_limit.map(Duration::from_secs_f64);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (k, d) = (spec.k, data.d());
    let mut best: Option<MapSolution<T>> = None;
    let mut objectives = Vec::new();
    for run in 0..settings.restarts {
        if run > 0 && limit.is_some_and(|l| start.elapsed() >= l) {
            break;
        }
        let init = if run == 0 {
            conditional_params(data, spec, &kmeans_init(data, k, settings.seed)?)?
        } else {
            let mu = (0..k)
                .map(|kk| {
                    (0..d)
                        .map(|j| {
                            let (lo, hi) = (spec.mu_lower[kk][j], spec.mu_upper[kk][j]);
                            lo + (hi - lo) * T::lit(rng.gen::<f64>())
                        })
                        .collect()
                })
                .collect();
            let raw: Vec<T> = (0..k).map(|_| T::lit(rng.gen_range(f64::EPSILON..1.0))).collect();
            let pi = pi_from_weights(&raw, spec.pi_floor, ParamRule::default()).expect("unrestricted rule");
            Params { mu, pi }
        };
        let run = em(data, spec, constraints, &init, settings.max_iter, T::lit(settings.tol))?;
        objectives.push(run.rounded.as_ref().map(|s| s.objective));
        if let Some(s) = run.rounded {
            if best.as_ref().map_or(true, |b| s.objective < b.objective) {
                best = Some(s);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Infeasible("no EM restart rounded to a feasible assignment".into()))?;
    Ok(MultiStart { best, objectives })
}

/// Geometric cooling schedule. `t0 = None` picks the mean absolute objective
/// change over up to 100 proposals from the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t0: Option<f64>,
    pub decay: f64,
    pub steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { t0: None, decay: 0.995, steps: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaRun<T: Real = f64> {
    pub best: MapSolution<T>,
    /// Objective of the current state after every step.
    pub trajectory: Vec<T>,
    pub accepted: usize,
}

/// Simulated annealing over feasible assignments. A move reassigns one
/// must-link group to another component; moves that break a side constraint
/// or the π rule are rejected outright.
pub fn simulated_annealing<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
    schedule: &Schedule,
    seed: u64,
) -> Result<SaRun<T>> {
    spec.validate(data)?;
    if !(schedule.decay > 0.0 && schedule.decay <= 1.0) {
        return Err(Error::Domain(format!("cooling factor {} outside (0, 1]", schedule.decay)));
    }
    let k = spec.k;
    let start = kmeans_init(data, k, seed)?;
    let one_hot: Vec<Vec<T>> = start
        .labels()
        .iter()
        .map(|&l| (0..k).map(|kk| if kk == l { T::one() } else { T::zero() }).collect())
        .collect();
    let a = repair(constraints, &one_hot).map_err(|last| {
        let blocking: Vec<String> = constraints.violated(&last).iter().map(|c| c.to_string()).collect();
        Error::Infeasible(format!("no feasible starting assignment; blocked by {}", blocking.join(", ")))
    })?;
    let rule = constraints.param_rule();
    let solver = ParamSolver::new(spec, data.d(), rule)?;
    let ywy: Vec<T> = data.points().iter().map(|y| linalg::quad_form(solver.weight(), y)).collect();
    let mut labels = a.labels().to_vec();
    let mut stats = ClusterStats::from_assignment(data, solver.weight(), &a);
    let mut cur = solver
        .profile_objective(&stats)
        .ok_or_else(|| Error::Infeasible("starting assignment violates the proportion constraints".into()))?;
    let groups = movable_groups(constraints);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Proposal: Some(objective after move) when the move is admissible.
    let propose = |labels: &[usize], stats: &mut ClusterStats<T>, rep: usize, to: usize| -> Result<Option<T>> {
        let members = constraints.group_members(rep);
        let from = labels[rep];
        move_group(stats, data, &ywy, members, from, to);
        let obj = solver.profile_objective(stats);
        let ok = match obj {
            Some(_) => {
                let mut trial = labels.to_vec();
                for &m in members {
                    trial[m] = to;
                }
                constraints.satisfied(&Assignment::new(trial, k)?)
            }
            None => false,
        };
        move_group(stats, data, &ywy, members, to, from);
        Ok(obj.filter(|_| ok))
    };
    let draw = |rng: &mut ChaCha8Rng, labels: &[usize]| {
        let rep = groups[rng.gen_range(0..groups.len())];
        let mut to = rng.gen_range(0..k - 1);
        if to >= labels[rep] {
            to += 1;
        }
        (rep, to)
    };

    let mut best = (cur, labels.clone());
    let mut trajectory = Vec::with_capacity(schedule.steps);
    let mut accepted = 0;
    if k > 1 && !groups.is_empty() {
        let mut temp = match schedule.t0 {
            Some(t) => t,
            None => {
                let mut spread = Vec::new();
                for _ in 0..100 {
                    let (rep, to) = draw(&mut rng, &labels);
                    if let Some(obj) = propose(&labels, &mut stats, rep, to)? {
                        spread.push((obj - cur).abs().as_f64());
                    }
                }
                let mean = spread.iter().sum::<f64>() / spread.len().max(1) as f64;
                if mean > 0.0 {
                    mean
                } else {
                    1.0
                }
            }
        };
        for _ in 0..schedule.steps {
            let (rep, to) = draw(&mut rng, &labels);
            let u: f64 = rng.gen();
            if let Some(obj) = propose(&labels, &mut stats, rep, to)? {
                let delta = (obj - cur).as_f64();
                if delta <= 0.0 || u < (-delta / temp).exp() {
                    let members = constraints.group_members(rep);
                    move_group(&mut stats, data, &ywy, members, labels[rep], to);
                    for &m in members {
                        labels[m] = to;
                    }
                    cur = obj;
                    accepted += 1;
                    if cur < best.0 {
                        best = (cur, labels.clone());
                    }
                }
            }
            trajectory.push(cur);
            temp *= schedule.decay;
        }
    }
    let best = solution_for(data, spec, Assignment::new(best.1, k)?, rule)?
        .ok_or_else(|| Error::Infeasible("best state violates the proportion constraints".into()))?;
    Ok(SaRun { best, trajectory, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::SideConstraint::*;
    use crate::model::{evaluate_objective, Precision};
    use approx::assert_relative_eq;

    fn two_points() -> (Dataset, ProblemSpec) {
        let data = Dataset::from_scalars(&[-1.0, 1.0]).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(0.5), &data);
        (data, spec)
    }

    #[test]
    fn kmeans_examples() {
        let (data, _) = two_points();
        let a = kmeans_init(&data, 2, 3).unwrap();
        assert_ne!(a.label(0), a.label(1));

        let same = Dataset::from_scalars(&[0.5, 0.5]).unwrap();
        let a = kmeans_init(&same, 2, 1).unwrap();
        assert_eq!(a.counts().iter().sum::<usize>(), 2);

        let mut xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        xs.extend((0..10).map(|i| 10.0 + i as f64 * 0.1));
        let blobs = Dataset::from_scalars(&xs).unwrap();
        for seed in 0..5 {
            let a = kmeans_init(&blobs, 2, seed).unwrap();
            assert!((0..10).all(|i| a.label(i) == a.label(0)));
            assert!((10..20).all(|i| a.label(i) == a.label(10)));
            assert_ne!(a.label(0), a.label(10));
        }
        assert!(kmeans_init(&data, 3, 0).is_err());
    }

    #[test]
    fn first_em_step_values() {
        let (data, spec) = two_points();
        let init = Params { mu: vec![vec![-1.0], vec![1.0]], pi: vec![0.5, 0.5] };
        let (r, _) = e_step(&data, &spec, &init).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert_relative_eq!(r[0][0], expected, epsilon = 1e-12);
        assert_relative_eq!(r[1][1], expected, epsilon = 1e-12);
        let p = m_step(&data, &spec, &r).unwrap();
        assert_relative_eq!(p.mu[0][0], -(1.0f64).tanh(), epsilon = 1e-12);
        assert_relative_eq!(p.mu[0][0], -0.761594, epsilon = 1e-6);

        let sym = Params { mu: vec![vec![0.0], vec![0.0]], pi: vec![0.5, 0.5] };
        let run = em(&data, &spec, &ConstraintSet::empty(2, 2), &sym, 50, 1e-12).unwrap();
        assert!(run.soft.responsibilities.iter().flatten().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(run.soft.params.mu.iter().all(|m| m[0].abs() < 1e-12));
    }

    #[test]
    fn em_loglik_is_monotone() {
        let data = Dataset::from_scalars(&[-2.0, -1.5, -1.0, 0.2, 1.0, 1.4, 2.5]).unwrap();
        let spec = ProblemSpec::new(3, Precision::from_sigma(0.6), &data);
        let init = Params { mu: vec![vec![-2.0], vec![0.0], vec![0.3]], pi: vec![0.2, 0.5, 0.3] };
        let run = em(&data, &spec, &ConstraintSet::empty(7, 3), &init, 500, 1e-14).unwrap();
        assert!(run.soft.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        for r in &run.soft.responsibilities {
            assert_relative_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(run.rounded.is_some());
    }

    #[test]
    fn repair_fixes_cannot_link() {
        let scores = vec![vec![0.9, 0.1], vec![0.6, 0.4], vec![0.2, 0.8]];
        let cs = ConstraintSet::new(vec![CannotLink(0, 1)], 3, 2).unwrap();
        let a = repair(&cs, &scores).unwrap();
        assert_eq!(a.labels(), &[0, 1, 1]);

        let cs = ConstraintSet::new(vec![MustLink(1, 2)], 3, 2).unwrap();
        let a = repair(&cs, &scores).unwrap();
        assert_eq!(a.label(1), a.label(2));
        assert_eq!(a.label(1), 1);

        let tie = vec![vec![0.5, 0.5]];
        assert_eq!(repair(&ConstraintSet::empty(1, 2), &tie).unwrap().labels(), &[0]);
    }

    #[test]
    fn polish_reaches_two_cluster_optimum() {
        let (data, spec) = two_points();
        let cs = ConstraintSet::new(vec![MinSize { k: 0, l: 1 }, MinSize { k: 1, l: 1 }], 2, 2).unwrap();
        let a = Assignment::new(vec![0, 1], 2).unwrap();
        let s = solution_for(&data, &spec, a, cs.param_rule()).unwrap().unwrap();
        let p = local_polish(&s, &data, &spec, &cs).unwrap();
        assert_eq!(p, s);
        assert_relative_eq!(p.objective, 2.0 * 2.0f64.ln(), epsilon = 1e-12);

        let xs = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
        let data = Dataset::from_scalars(&xs).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(1.0), &data);
        let cs = ConstraintSet::empty(6, 2);
        let a = Assignment::new(vec![1, 0, 1, 0, 1, 0], 2).unwrap();
        let s = solution_for(&data, &spec, a, cs.param_rule()).unwrap().unwrap();
        let p = local_polish(&s, &data, &spec, &cs).unwrap();
        assert!(p.objective <= s.objective);
        assert!((0..3).all(|i| p.assignment.label(i) == p.assignment.label(0)));
        let direct = evaluate_objective(&data, &spec, &p.assignment, &p.params).unwrap();
        assert_relative_eq!(direct, p.objective, epsilon = 1e-12);
    }

    #[test]
    fn annealing_examples() {
        let (data, spec) = two_points();
        let cs = ConstraintSet::new(vec![MinSize { k: 0, l: 1 }, MinSize { k: 1, l: 1 }], 2, 2).unwrap();
        let sched = Schedule { t0: None, decay: 0.99, steps: 200 };
        let run = simulated_annealing(&data, &spec, &cs, &sched, 5).unwrap();
        assert_relative_eq!(run.best.objective, 1.386294, epsilon = 1e-6);
        let again = simulated_annealing(&data, &spec, &cs, &sched, 5).unwrap();
        assert_eq!(run, again);

        let xs = [0.0, 0.3, 0.35, 2.0, 2.2, 4.0, 4.1, 4.5];
        let data = Dataset::from_scalars(&xs).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(2.0), &data);
        let cold = Schedule { t0: Some(1e-9), decay: 0.995, steps: 500 };
        let run = simulated_annealing(&data, &spec, &ConstraintSet::empty(8, 3), &cold, 2).unwrap();
        assert!(run.trajectory.windows(2).all(|w| w[1] <= w[0] + 1e-7));

        let cs = ConstraintSet::new(vec![CannotLink(0, 1), CannotLink(1, 2), CannotLink(0, 2)], 3, 2).unwrap();
        let data = Dataset::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(1.0), &data);
        let err = simulated_annealing(&data, &spec, &cs, &sched, 0).unwrap_err();
        assert!(err.to_string().contains("cannot_link"));
    }

    #[test]
    fn multistart_prefix_property() {
        let xs = [-2.0, -1.8, -0.1, 0.0, 0.4, 1.9, 2.1, 2.2];
        let data = Dataset::from_scalars(&xs).unwrap();
        let spec = ProblemSpec::new(3, Precision::from_sigma(0.5), &data);
        let cs = ConstraintSet::empty(8, 3);
        let mut prev = f64::INFINITY;
        for restarts in 1..6 {
            let s = MultiStartSettings { restarts, seed: 9, ..Default::default() };
            let r = em_multistart(&data, &spec, &cs, &s).unwrap();
            assert!(r.best.objective <= prev);
            prev = r.best.objective;
        }
        let one = em_multistart(&data, &spec, &cs, &MultiStartSettings { restarts: 1, seed: 9, ..Default::default() })
            .unwrap();
        let init = conditional_params(&data, &spec, &kmeans_init(&data, 3, 9).unwrap()).unwrap();
        let single = em(&data, &spec, &cs, &init, 1000, 1e-10).unwrap();
        assert_eq!(Some(one.best), single.rounded);
    }
}
