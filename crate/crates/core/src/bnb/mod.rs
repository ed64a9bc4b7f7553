//! Best-first branch-and-bound over the assignment binaries.
//!
//! Every popped node is propagated, then bounded in two stages: cheap
//! combinatorial bounds from the fixed part of the assignment and the
//! undecided suffix of the branching order, and the certified bound of the
//! continuous relaxation. The relaxation bounds the MIQP, whose chordal
//! `−log π` overestimates the true objective by at most `e_max` per sample,
//! so it enters node bounds shifted down by `n·e_max`. All node bounds, and
//! therefore GLBD, are valid for the true objective. Leaves are scored
//! exactly.
//!
//! Rows are branched in a fixed order of the samples undecided at the root,
//! farthest from the data mean first; the branching strategy picks the
//! component within the row from the relaxed values. When the problem is
//! invariant under relabelling, only canonically labelled assignments are
//! searched (a sample may open at most one new component past those its
//! predecessors in the order can use).

mod suffix;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use crate::constraints::{ConstraintSet, Fixings, SideConstraint};
use crate::formulation::MiqpModel;
use crate::heuristics::{self, MultiStartSettings};
use crate::linalg;
use crate::model::{solution_for, ClusterStats, MapSolution, ParamRule, ParamSolver};
use crate::pwl::true_bound_correction;
use crate::qp::{solve_relaxation_with_cutoff, QpSolution, QpStatus, QpTolerances};

/// Nodes whose bound exceeds `UBD − PRUNE_SLACK` are fathomed.
pub const PRUNE_SLACK: f64 = 1e-9;

/// Relaxed binaries within this distance of 0 or 1 count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Warm starts are dropped for children pushed while the queue is longer
/// than this, to bound memory.
const WARM_QUEUE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchStrategy {
    /// Free binary with relaxed value closest to ½.
    #[default]
    MostInfeasible,
    /// Fractional free binary with the largest relaxed value.
    MostIntegral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOptions {
    /// Relative gap at which the search stops.
    pub epsilon: f64,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    pub strategy: BranchStrategy,
    pub workers: usize,
    /// Forces a single worker so the node sequence is reproducible.
    pub deterministic: bool,
    pub seed: u64,
    /// Node relaxation tolerances.
    pub qp: QpTolerances,
    /// Run the rounding heuristic on every this-many-th node (and the root).
    pub heuristic_every: usize,
    /// Multi-start EM restarts used to seed the incumbent; 0 disables.
    pub em_restarts: usize,
    /// Search nodes allowed for the suffix bounds; 0 disables them.
    pub suffix_budget: usize,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            time_limit: None,
            node_limit: None,
            strategy: BranchStrategy::MostInfeasible,
            workers: 1,
            deterministic: false,
            seed: 0,
            qp: QpTolerances { eps_abs: 1e-6, max_iter: 50, bound_gap: Some(1e-4), ..QpTolerances::default() },
            heuristic_every: 10,
            em_restarts: 10,
            suffix_budget: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    /// Gap closed to ε, or the tree was exhausted.
    OptimalWithinEps,
    /// A limit fired with an incumbent in hand.
    Feasible,
    Infeasible,
    /// A limit fired before any feasible assignment was found.
    NoIncumbent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Seconds since the start of the solve.
    pub t: f64,
    pub ubd: f64,
    pub glbd: f64,
    pub nodes: usize,
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbResult {
    pub incumbent: Option<MapSolution>,
    /// Objective of the incumbent (`+∞` without one).
    pub ubd: f64,
    pub glbd: f64,
    /// `glbd − n·e_max`.
    pub true_glbd: f64,
    pub gap: f64,
    pub e_max: f64,
    pub nodes_explored: usize,
    pub nodes_fathomed: usize,
    pub trace: Vec<TraceRecord>,
    pub status: BnbStatus,
    pub wall_seconds: f64,
}

/// `(UBD − GLBD) / max(1, |UBD|)`.
pub fn relative_gap(ubd: f64, glbd: f64) -> f64 {
    if !ubd.is_finite() {
        return f64::INFINITY;
    }
    ((ubd - glbd) / ubd.abs().max(1.0)).max(0.0)
}

/// Branching variable from a node relaxation; `None` when every binary is
/// integral. Ties go to the smallest `(i, k)`.
pub fn select_branch_var(sol: &QpSolution, strategy: BranchStrategy, model: &MiqpModel) -> Option<(usize, usize)> {
    let cols = &model.cols;
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..cols.n {
        for k in 0..cols.k {
            let z = sol.primal[cols.z(i, k)];
            if z <= INTEGRALITY_TOL || z >= 1.0 - INTEGRALITY_TOL {
                continue;
            }
            let score = match strategy {
                BranchStrategy::MostInfeasible => -(z - 0.5).abs(),
                BranchStrategy::MostIntegral => z,
            };
            if best.map_or(true, |(_, s)| score > s) {
                best = Some(((i, k), score));
            }
        }
    }
    best.map(|(ik, _)| ik)
}

/// The component of sample `i` to branch on: among its free binaries, the
/// strategy's choice by relaxed value, ties to the smallest `k`.
fn select_in_row(sol: &QpSolution, strategy: BranchStrategy, model: &MiqpModel, fix: &Fixings, i: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for k in (0..model.k()).filter(|&k| fix.is_free(i, k)) {
        let z = sol.primal[model.cols.z(i, k)];
        let score = match strategy {
            BranchStrategy::MostInfeasible => -(z - 0.5).abs(),
            BranchStrategy::MostIntegral => z,
        };
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((k, score));
        }
    }
    best.expect("an undecided sample has a free binary").0
}

/// Argmax rounding of the relaxed `z`, greedy constraint repair, conditional
/// parameters and the true objective.
pub fn round_and_repair(sol: &QpSolution, constraints: &ConstraintSet, model: &MiqpModel) -> Option<MapSolution> {
    let cols = &model.cols;
    let scores: Vec<Vec<f64>> =
        (0..cols.n).map(|i| (0..cols.k).map(|k| sol.primal[cols.z(i, k)]).collect()).collect();
    heuristics::round_scores(&model.data, &model.spec, constraints, &scores).ok().flatten()
}

/// Lower bound on the true objective over all completions of `fix`, from
/// the samples already fixed to a component:
///
/// * quadratic part: the larger of the box-constrained fit of each
///   component's fixed members, and their unconstrained scatter plus, for
///   each undecided sample, the least increase `m_k/(m_k+f_k)·q(y − ȳ_k)` it
///   causes by joining an allowed component (`f_k` undecided samples may
///   join `k`);
/// * proportion part: `min_π −Σ n_k log π_k` is concave in the counts, so
///   its minimum over counts dominating the fixed (and required minimum)
///   counts sits at a vertex that sends all remaining samples to one
///   component.
///
/// The second bound adds the fixed part's box-constrained fit, the entropy of
/// the fixed counts on their own, and the relaxed optimum of the longest
/// undecided suffix of the branching order.
struct Bounder<'a> {
    model: &'a MiqpModel,
    solver: ParamSolver<'a, f64>,
    ywy: Vec<f64>,
    min_count: Vec<usize>,
    order: Vec<usize>,
    /// Relaxed optimum of each suffix of `order`, less a rounding margin.
    suffix: Vec<f64>,
}

impl<'a> Bounder<'a> {
    fn new(model: &'a MiqpModel) -> Self {
        let solver = ParamSolver::new(&model.spec, model.d(), ParamRule::default()).expect("model weight validated");
        let ywy = model.data.points().iter().map(|y| linalg::quad_form(&model.weight, y)).collect();
        let mut min_count = vec![0usize; model.k()];
        for c in model.constraints.items() {
            match c {
                SideConstraint::MinSize { k, l }
                | SideConstraint::Cover { k, l, .. }
                | SideConstraint::Partition { k, l, .. } => min_count[*k] = min_count[*k].max(*l),
                _ => {}
            }
        }
        Self { model, solver, ywy, min_count, order: Vec::new(), suffix: vec![0.0] }
    }

    fn with_suffix(mut self, order: Vec<usize>, budget: usize, deadline: Option<Instant>) -> Self {
        let values = if budget == 0 {
            vec![0.0; order.len() + 1]
        } else {
            suffix::suffix_values(self.model.data.points(), &self.model.weight, self.model.k(), &order, budget, deadline)
        };
        self.suffix = values.iter().map(|v| v - 1e-9 * (1.0 + v.abs())).collect();
        self.order = order;
        self
    }

    fn entropy(&self, counts: &[usize]) -> f64 {
        let pi: Vec<f64> = crate::model::pi_from_counts(counts, self.model.spec.pi_floor, ParamRule::default())
            .expect("unrestricted rule");
        counts.iter().zip(&pi).map(|(&c, &p)| -(c as f64) * p.ln()).sum()
    }

    fn bound(&self, fix: &Fixings) -> f64 {
        let (n, k) = (self.model.n(), self.model.k());
        let data = &self.model.data;
        let w = &self.model.weight;
        let mut stats = ClusterStats::empty(k, self.model.d());
        for (i, kk) in fix.fixed_ones() {
            stats.add(kk, data.point(i), self.ywy[i]);
        }
        let mut box_cost = 0.0;
        let mut scatter = 0.0;
        let mut centers: Vec<Option<Vec<f64>>> = vec![None; k];
        for kk in 0..k {
            let m = stats.count[kk];
            let mu = self.solver.component_mean(kk, m, &stats.sum[kk]);
            let wmu = linalg::mat_vec(w, &mu);
            let cross: f64 = wmu.iter().zip(&stats.sum[kk]).map(|(a, b)| a * b).sum();
            let mwm: f64 = wmu.iter().zip(&mu).map(|(a, b)| a * b).sum();
            box_cost += (stats.sq[kk] - 2.0 * cross + m as f64 * mwm).max(0.0) + self.model.spec.ridge_term(&mu);
            if m > 0 {
                let center: Vec<f64> = stats.sum[kk].iter().map(|s| s / m as f64).collect();
                scatter += (stats.sq[kk] - m as f64 * linalg::quad_form(w, &center)).max(0.0);
                centers[kk] = Some(center);
            }
        }
        let undecided: Vec<usize> = (0..n).filter(|&i| fix.label(i).is_none()).collect();
        let joinable: Vec<usize> =
            (0..k).map(|kk| undecided.iter().filter(|&&i| fix.get(i, kk).is_none()).count()).collect();
        let mut increase = 0.0;
        for &i in &undecided {
            let y = data.point(i);
            let least = (0..k)
                .filter(|&kk| fix.get(i, kk).is_none())
                .map(|kk| match &centers[kk] {
                    Some(c) => {
                        let m = stats.count[kk] as f64;
                        let diff: Vec<f64> = y.iter().zip(c).map(|(a, b)| a - b).collect();
                        m / (m + joinable[kk] as f64) * linalg::quad_form(w, &diff)
                    }
                    None => 0.0,
                })
                .fold(f64::INFINITY, f64::min);
            if least.is_finite() {
                increase += least;
            }
        }
        let quad = box_cost.max(scatter + increase);

        let mut p = self.order.len();
        while p > 0 && fix.label(self.order[p - 1]).is_none() {
            p -= 1;
        }
        let nested = box_cost + suffix::own_entropy(&stats.count) + self.suffix[p];

        let mut base: Vec<usize> = (0..k).map(|kk| stats.count[kk].max(self.min_count[kk])).collect();
        if base.iter().sum::<usize>() > n {
            base = stats.count.clone();
        }
        let rest = n - base.iter().sum::<usize>();
        let ent = (0..k)
            .map(|j| {
                let mut c = base.clone();
                c[j] += rest;
                self.entropy(&c)
            })
            .fold(f64::INFINITY, f64::min);
        (quad + ent).max(nested)
    }
}

struct Node {
    fix: Fixings,
    /// Bound inherited from the parent (the priority key).
    lbd: f64,
    depth: usize,
    warm: Option<Arc<QpSolution>>,
    seq: u64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: smaller bound first, then the most recently pushed.
    fn cmp(&self, other: &Self) -> Ordering {
        other.lbd.total_cmp(&self.lbd).then(self.seq.cmp(&other.seq))
    }
}

enum Outcome {
    Fathomed,
    Leaf(Option<MapSolution>),
    Branch { lb: f64, children: [Fixings; 2], depth: usize, warm: Arc<QpSolution> },
}

struct Processed {
    outcome: Outcome,
    found: Vec<MapSolution>,
}

struct Ctx<'a> {
    model: &'a MiqpModel,
    opts: &'a BnbOptions,
    bounder: Bounder<'a>,
    /// `n·e_max`.
    shift: f64,
    /// Restrict the search to canonical labellings along the branching order.
    canonical: bool,
}

impl Ctx<'_> {
    fn polish(&self, s: MapSolution) -> MapSolution {
        let m = self.model;
        heuristics::local_polish(&s, &m.data, &m.spec, &m.constraints).unwrap_or(s)
    }

    /// Propagation, plus the canonical-labelling rule when it applies.
    fn propagate(&self, fix: Fixings) -> Option<Fixings> {
        let cs = &self.model.constraints;
        let k = self.model.k();
        let mut fix = cs.propagate(fix)?;
        if !self.canonical {
            return Some(fix);
        }
        loop {
            let mut changed = false;
            let mut reach = 0;
            for &i in &self.bounder.order {
                for kk in (reach + 1).min(k)..k {
                    match fix.get(i, kk) {
                        Some(true) => return None,
                        Some(false) => {}
                        None => {
                            fix.set(i, kk, false);
                            changed = true;
                        }
                    }
                }
                let top = (0..k).rev().find(|&kk| fix.get(i, kk) != Some(false))?;
                reach = reach.max(top + 1);
            }
            if !changed {
                return Some(fix);
            }
            fix = cs.propagate(fix)?;
        }
    }

    fn process(&self, node: Node, ubd: f64, index: usize) -> Processed {
        let m = self.model;
        let cs = &m.constraints;
        let fathomed = Processed { outcome: Outcome::Fathomed, found: Vec::new() };
        let Some(fix) = self.propagate(node.fix) else {
            return fathomed;
        };
        if fix.free_count() == 0 {
            let sol = fix
                .to_assignment()
                .filter(|a| cs.satisfied(a))
                .and_then(|a| solution_for(&m.data, &m.spec, a, cs.param_rule()).ok().flatten());
            return Processed { outcome: Outcome::Leaf(sol), found: Vec::new() };
        }
        let cutoff = ubd - PRUNE_SLACK;
        let mut lb = node.lbd.max(self.bounder.bound(&fix));
        if lb > cutoff {
            return fathomed;
        }
        let qp_cutoff = ubd.is_finite().then_some(cutoff + self.shift);
        let qp = solve_relaxation_with_cutoff(m, &fix, node.warm.as_deref(), &self.opts.qp, qp_cutoff);
        if qp.status == QpStatus::Infeasible {
            return fathomed;
        }
        lb = lb.max(qp.lower_bound - self.shift);
        if lb > cutoff {
            return fathomed;
        }
        let mut found = Vec::new();
        let every = self.opts.heuristic_every.max(1);
        if index % every == 1 || every == 1 || select_branch_var(&qp, self.opts.strategy, m).is_none() {
            if let Some(s) = round_and_repair(&qp, cs, m) {
                found.push(self.polish(s));
            }
        }
        // An integral relaxation only settles the MIQP, not the true
        // objective, so such nodes are still split.
        let i = *self
            .bounder
            .order
            .iter()
            .find(|&&i| fix.label(i).is_none())
            .expect("a node with free binaries has an undecided sample in the order");
        let k = select_in_row(&qp, self.opts.strategy, m, &fix, i);
        let mut zero = fix.clone();
        zero.set(i, k, false);
        let mut one = fix;
        one.set(i, k, true);
        Processed {
            outcome: Outcome::Branch { lb, children: [zero, one], depth: node.depth + 1, warm: Arc::new(qp) },
            found,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Exhausted,
    Gap,
    Limit,
}

struct Shared {
    heap: BinaryHeap<Node>,
    in_flight: Vec<(u64, f64)>,
    incumbent: Option<MapSolution>,
    ubd: f64,
    glbd: f64,
    explored: usize,
    fathomed: usize,
    trace: Vec<TraceRecord>,
    seq: u64,
    stop: Option<Stop>,
}

impl Shared {
    fn offer(&mut self, s: MapSolution) {
        if s.objective < self.ubd {
            self.ubd = s.objective;
            self.incumbent = Some(s);
        }
    }

    fn current_glbd(&self) -> f64 {
        let open = self.heap.peek().map_or(f64::INFINITY, |n| n.lbd);
        let flying = self.in_flight.iter().map(|&(_, b)| b).fold(f64::INFINITY, f64::min);
        open.min(flying).min(self.ubd).max(self.glbd)
    }

    fn record(&mut self, start: Instant, force: bool) {
        let glbd = self.current_glbd();
        let last = self.trace.last().copied();
        let changed = last.map_or(true, |r| r.ubd != self.ubd || r.glbd != glbd);
        let mut t = start.elapsed().as_secs_f64();
        let due = last.map_or(true, |r| t - r.t >= 1.0);
        self.glbd = glbd;
        if changed || due || force {
            if let Some(r) = last {
                if t <= r.t {
                    t = r.t + 1e-9;
                }
            }
            self.trace.push(TraceRecord {
                t,
                ubd: self.ubd,
                glbd,
                nodes: self.explored,
                queue_len: self.heap.len(),
            });
        }
    }

    fn push(&mut self, fix: Fixings, lbd: f64, depth: usize, warm: Option<Arc<QpSolution>>) {
        self.seq += 1;
        self.heap.push(Node { fix, lbd, depth, warm, seq: self.seq });
    }
}

/// Solve the model to relative gap `epsilon` (or until a limit fires).
pub fn solve(model: &MiqpModel, options: &BnbOptions) -> BnbResult {
    let start = Instant::now();
    let cs = &model.constraints;
    let n = model.n();
    let e_max = model.e_max;
    let finish = |shared: Shared, status: BnbStatus| {
        let glbd = shared.glbd;
        BnbResult {
            gap: relative_gap(shared.ubd, glbd),
            true_glbd: true_bound_correction(glbd, n, e_max),
            ubd: shared.ubd,
            glbd,
            e_max,
            incumbent: shared.incumbent,
            nodes_explored: shared.explored,
            nodes_fathomed: shared.fathomed,
            trace: shared.trace,
            status,
            wall_seconds: start.elapsed().as_secs_f64(),
        }
    };
    let mut shared = Shared {
        heap: BinaryHeap::new(),
        in_flight: Vec::new(),
        incumbent: None,
        ubd: f64::INFINITY,
        glbd: 0.0,
        explored: 0,
        fathomed: 0,
        trace: Vec::new(),
        seq: 0,
        stop: None,
    };
    let root = if cs.validate().is_consistent() { cs.initial_fixings().and_then(|f| cs.probe(f)) } else { None };
    let Some(root) = root else {
        shared.glbd = f64::INFINITY;
        shared.record(start, true);
        return finish(shared, BnbStatus::Infeasible);
    };

    if options.em_restarts > 0 {
        let settings = MultiStartSettings { restarts: options.em_restarts, seed: options.seed, ..Default::default() };
        if let Ok(ms) = heuristics::em_multistart(&model.data, &model.spec, cs, &settings) {
            if root.admits(&ms.best.assignment) || cs.satisfied(&ms.best.assignment) {
                let polished = heuristics::local_polish(&ms.best, &model.data, &model.spec, cs).unwrap_or(ms.best);
                shared.offer(polished);
            }
        }
    }
    let canonical = cs.is_label_symmetric(&model.spec) && root.free_count() == n * model.k();
    let order = branching_order(model, &root);
    let deadline = options.time_limit.map(|l| start + std::time::Duration::from_secs_f64(l));
    let bounder = Bounder::new(model).with_suffix(order, options.suffix_budget, deadline);
    shared.push(root, 0.0, 0, None);
    shared.record(start, true);

    let ctx = Ctx { model, opts: options, bounder, shift: n as f64 * e_max, canonical };
    let workers = if options.deterministic { 1 } else { options.workers.max(1) };
    let sync = (Mutex::new(shared), Condvar::new());
    if workers == 1 {
        worker(&ctx, &sync, start);
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| worker(&ctx, &sync, start));
            }
        });
    }
    let mut shared = sync.0.into_inner().unwrap_or_else(|e| e.into_inner());
    let stop = shared.stop.unwrap_or(Stop::Exhausted);
    if stop == Stop::Exhausted {
        shared.heap.clear();
    }
    shared.record(start, true);
    let status = match (stop, shared.incumbent.is_some()) {
        (Stop::Exhausted | Stop::Gap, true) => BnbStatus::OptimalWithinEps,
        (Stop::Exhausted, false) => BnbStatus::Infeasible,
        (_, true) => BnbStatus::Feasible,
        (_, false) => BnbStatus::NoIncumbent,
    };
    if status == BnbStatus::Infeasible {
        shared.glbd = f64::INFINITY;
    }
    finish(shared, status)
}

/// Samples undecided at the root, farthest from the data mean (in the
/// weight metric) first; ties by index.
fn branching_order(model: &MiqpModel, root: &Fixings) -> Vec<usize> {
    let data = &model.data;
    let n = data.n();
    let mut mean = vec![0.0; model.d()];
    for y in data.points() {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v / n as f64;
        }
    }
    let mut keyed: Vec<(f64, usize)> = (0..n)
        .filter(|&i| root.label(i).is_none())
        .map(|i| {
            let diff: Vec<f64> = data.point(i).iter().zip(&mean).map(|(a, b)| a - b).collect();
            (linalg::quad_form(&model.weight, &diff), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn limit_hit(opts: &BnbOptions, s: &Shared, start: Instant) -> bool {
    opts.node_limit.is_some_and(|l| s.explored >= l)
        || opts.time_limit.is_some_and(|l| start.elapsed().as_secs_f64() >= l)
}

fn worker(ctx: &Ctx<'_>, sync: &(Mutex<Shared>, Condvar), start: Instant) {
    let (lock, cv) = sync;
    loop {
        let (node, ubd, index, seq) = {
            let mut s = lock.lock().unwrap_or_else(|e| e.into_inner());
            loop {
                if s.stop.is_some() {
                    return;
                }
                if s.incumbent.is_some() && relative_gap(s.ubd, s.current_glbd()) <= ctx.opts.epsilon {
                    s.stop = Some(Stop::Gap);
                    cv.notify_all();
                    return;
                }
                if let Some(node) = s.heap.peek() {
                    if node.lbd > s.ubd - PRUNE_SLACK {
                        s.heap.pop();
                        s.fathomed += 1;
                        continue;
                    }
                    if limit_hit(ctx.opts, &s, start) {
                        s.stop = Some(Stop::Limit);
                        cv.notify_all();
                        return;
                    }
                    let node = s.heap.pop().expect("peeked");
                    s.in_flight.push((node.seq, node.lbd));
                    s.explored += 1;
                    let (ubd, index, seq) = (s.ubd, s.explored, node.seq);
                    break (node, ubd, index, seq);
                }
                if s.in_flight.is_empty() {
                    s.stop = Some(Stop::Exhausted);
                    cv.notify_all();
                    return;
                }
                s = cv.wait(s).unwrap_or_else(|e| e.into_inner());
            }
        };
        let done = ctx.process(node, ubd, index);
        let mut s = lock.lock().unwrap_or_else(|e| e.into_inner());
        s.in_flight.retain(|&(q, _)| q != seq);
        for f in done.found {
            s.offer(f);
        }
        match done.outcome {
            Outcome::Fathomed => s.fathomed += 1,
            Outcome::Leaf(sol) => {
                if let Some(sol) = sol {
                    s.offer(sol);
                }
            }
            Outcome::Branch { lb, children, depth, warm } => {
                if lb > s.ubd - PRUNE_SLACK {
                    s.fathomed += 1;
                } else {
                    let warm = (s.heap.len() < WARM_QUEUE_CAP).then_some(warm);
                    for child in children {
                        s.push(child, lb, depth, warm.clone());
                    }
                }
            }
        }
        s.record(start, false);
        cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::SideConstraint::*;
    use crate::formulation::build_miqp;
    use crate::model::{Dataset, Precision, ProblemSpec};
    use crate::oracle::brute_force;
    use approx::assert_relative_eq;

    fn qp_with_z(model: &MiqpModel, z: &[(usize, usize, f64)]) -> QpSolution {
        let mut primal = vec![0.0; model.num_cols()];
        for &(i, k, v) in z {
            primal[model.cols.z(i, k)] = v;
        }
        QpSolution {
            primal,
            duals: vec![0.0; model.rows.len()],
            objective: 0.0,
            lower_bound: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            status: QpStatus::Optimal,
            iterations: 0,
            certificate: None,
        }
    }

    fn two_point_model(items: Vec<SideConstraint>) -> MiqpModel {
        let data = Dataset::from_scalars(&[-1.0, 1.0]).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(0.5), &data);
        let cs = ConstraintSet::new(items, 2, 2).unwrap();
        build_miqp(&data, &spec, &cs).unwrap()
    }

    #[test]
    fn branch_selection_examples() {
        let m = two_point_model(vec![]);
        let half = qp_with_z(&m, &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 1.0)]);
        assert_eq!(select_branch_var(&half, BranchStrategy::MostInfeasible, &m), Some((0, 0)));
        let mixed = qp_with_z(&m, &[(0, 0, 0.9), (0, 1, 0.1), (1, 0, 0.45), (1, 1, 0.55)]);
        assert_eq!(select_branch_var(&mixed, BranchStrategy::MostIntegral, &m), Some((0, 0)));
        assert_eq!(select_branch_var(&mixed, BranchStrategy::MostInfeasible, &m), Some((1, 0)));
        let integral = qp_with_z(&m, &[(0, 0, 1.0), (1, 1, 1.0)]);
        assert_eq!(select_branch_var(&integral, BranchStrategy::MostInfeasible, &m), None);
        assert_eq!(select_branch_var(&integral, BranchStrategy::MostIntegral, &m), None);
    }

    #[test]
    fn rounding_examples() {
        let m = two_point_model(vec![]);
        let cs = m.constraints.clone();
        let s = round_and_repair(&qp_with_z(&m, &[(0, 0, 0.6), (0, 1, 0.4), (1, 0, 0.5), (1, 1, 0.5)]), &cs, &m);
        assert_eq!(s.unwrap().assignment.labels(), &[0, 0]);
        let cl = two_point_model(vec![CannotLink(0, 1)]);
        let s = round_and_repair(&qp_with_z(&cl, &[(0, 0, 0.6), (0, 1, 0.4), (1, 0, 0.7), (1, 1, 0.3)]), &cl.constraints, &cl)
            .unwrap();
        assert!(cl.constraints.satisfied(&s.assignment));
    }

    #[test]
    fn two_point_instance_matches_oracle() {
        let m = two_point_model(vec![MinSize { k: 0, l: 1 }, MinSize { k: 1, l: 1 }]);
        let opts = BnbOptions { epsilon: 1e-6, ..BnbOptions::default() };
        let r = solve(&m, &opts);
        assert_eq!(r.status, BnbStatus::OptimalWithinEps);
        assert_relative_eq!(r.ubd, 1.386294, epsilon = 1e-6);
        let oracle = brute_force(&m.data, &m.spec, &m.constraints).unwrap();
        assert_relative_eq!(r.ubd, oracle.objective, epsilon = 1e-9);
    }

    #[test]
    fn conflicting_constraints_short_circuit() {
        let m = two_point_model(vec![MustLink(0, 1), CannotLink(0, 1)]);
        let r = solve(&m, &BnbOptions::default());
        assert_eq!(r.status, BnbStatus::Infeasible);
        assert_eq!(r.nodes_explored, 0);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn combinatorial_bound_is_below_every_completion() {
        let data = Dataset::from_scalars(&[-1.2, -1.0, 0.1, 0.3, 1.9, 2.4]).unwrap();
        let spec = ProblemSpec::new(3, Precision::from_sigma(0.5), &data);
        let cs = ConstraintSet::new(vec![MinSize { k: 2, l: 1 }], 6, 3).unwrap();
        let m = build_miqp(&data, &spec, &cs).unwrap();
        let b = Bounder::new(&m).with_suffix(vec![5, 0, 4, 1, 3, 2], usize::MAX, None);
        let mut fix = Fixings::new(6, 3);
        fix.set(0, 0, true);
        fix.set(4, 1, true);
        fix.set(2, 0, false);
        let fix = cs.propagate(fix).unwrap();
        let lb = b.bound(&fix);
        let mut labels = vec![0usize; 6];
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(6) {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % 3;
                c /= 3;
            }
            let a = crate::model::Assignment::new(labels.clone(), 3).unwrap();
            if !fix.admits(&a) || !cs.satisfied(&a) {
                continue;
            }
            let s = solution_for(&data, &spec, a, ParamRule::default()).unwrap().unwrap();
            best = best.min(s.objective);
        }
        assert!(lb <= best + 1e-9, "{lb} > {best}");
        assert!(lb > 0.0);
    }

    #[test]
    fn trace_is_monotone() {
        let data = Dataset::from_scalars(&[-2.0, -1.7, -0.2, 0.0, 0.3, 1.8, 2.0, 2.6]).unwrap();
        let spec = ProblemSpec::new(3, Precision::from_sigma(0.5), &data);
        let m = build_miqp(&data, &spec, &ConstraintSet::empty(8, 3)).unwrap();
        let r = solve(&m, &BnbOptions { epsilon: 1e-6, ..BnbOptions::default() });
        assert!(r.trace.windows(2).all(|w| w[1].ubd <= w[0].ubd && w[1].glbd >= w[0].glbd && w[1].t > w[0].t));
        let oracle = brute_force(&data, &spec, &ConstraintSet::empty(8, 3)).unwrap();
        assert_relative_eq!(r.ubd, oracle.objective, epsilon = 1e-6);
        assert!(r.glbd <= oracle.objective + 1e-9);
    }
}
