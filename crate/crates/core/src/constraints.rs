//! Side constraints on assignments and proportions: compilation to linear
//! rows, consistency validation and fixing propagation.
//!
//! All indices are 0-based here; file formats translate from 1-based.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Assignment, ParamRule, ProblemSpec};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SideConstraint {
    /// Samples `i` and `j` share a component.
    MustLink(usize, usize),
    /// Samples `i` and `j` never share a component.
    CannotLink(usize, usize),
    /// Sample `i` belongs to component `k`.
    AssignLabel(usize, usize),
    /// `z_jk ≤ z_ik`: if `j` is in `k` then so is `i`.
    OneWay { i: usize, j: usize, k: usize },
    /// Component `k` receives at least `l` samples.
    MinSize { k: usize, l: usize },
    /// At most `l` samples of `set` in component `k`.
    Pack { set: Vec<usize>, k: usize, l: usize },
    /// Exactly `l` samples of `set` in component `k`.
    Partition { set: Vec<usize>, k: usize, l: usize },
    /// At least `l` samples of `set` in component `k`.
    Cover { set: Vec<usize>, k: usize, l: usize },
    /// `π_1 ≤ π_2 ≤ … ≤ π_K`.
    OrderPi(bool),
    /// `π_k = n_k / n`.
    EstimatorLink(bool),
}

impl fmt::Display for SideConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SideConstraint::*;
        match self {
            MustLink(i, j) => write!(f, "must_link({}, {})", i + 1, j + 1),
            CannotLink(i, j) => write!(f, "cannot_link({}, {})", i + 1, j + 1),
            AssignLabel(i, k) => write!(f, "assign({}, {})", i + 1, k + 1),
            OneWay { i, j, k } => write!(f, "one_way({}, {}, {})", i + 1, j + 1, k + 1),
            MinSize { k, l } => write!(f, "min_size({}, {l})", k + 1),
            Pack { set, k, l } => write!(f, "pack(|S|={}, {}, {l})", set.len(), k + 1),
            Partition { set, k, l } => write!(f, "partition(|S|={}, {}, {l})", set.len(), k + 1),
            Cover { set, k, l } => write!(f, "cover(|S|={}, {}, {l})", set.len(), k + 1),
            OrderPi(on) => write!(f, "order_pi({on})"),
            EstimatorLink(on) => write!(f, "estimator_link({on})"),
        }
    }
}

/// Variables a side-constraint row can touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Z(usize, usize),
    Pi(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearRow {
    fn new(terms: Vec<(Var, f64)>, sense: Sense, rhs: f64) -> Self {
        Self { terms, sense, rhs }
    }

    /// Check the row at a point given as `value(var)`.
    pub fn holds(&self, value: impl Fn(Var) -> f64, tol: f64) -> bool {
        let lhs: f64 = self.terms.iter().map(|&(v, a)| a * value(v)).sum();
        match self.sense {
            Sense::Le => lhs <= self.rhs + tol,
            Sense::Eq => (lhs - self.rhs).abs() <= tol,
            Sense::Ge => lhs >= self.rhs - tol,
        }
    }
}

fn build_err(msg: String) -> Error {
    Error::ConstraintBuild(msg)
}

/// Reject out-of-range indices and malformed sets.
pub fn check_constraint(c: &SideConstraint, n: usize, k: usize) -> Result<()> {
    use SideConstraint::*;
    let sample = |i: usize| {
        if i < n {
            Ok(())
        } else {
            Err(build_err(format!("{c}: sample index out of range (n = {n})")))
        }
    };
    let comp = |kk: usize| {
        if kk < k {
            Ok(())
        } else {
            Err(build_err(format!("{c}: component index out of range (K = {k})")))
        }
    };
    let set_ok = |set: &[usize]| {
        if set.is_empty() {
            return Err(build_err(format!("{c}: empty sample set")));
        }
        let mut seen = BTreeSet::new();
        for &i in set {
            sample(i)?;
            if !seen.insert(i) {
                return Err(build_err(format!("{c}: sample {} listed twice", i + 1)));
            }
        }
        Ok(())
    };
    match c {
        MustLink(i, j) | CannotLink(i, j) => {
            sample(*i)?;
            sample(*j)?;
            if i == j {
                return Err(build_err(format!("{c}: a sample cannot be linked to itself")));
            }
        }
        AssignLabel(i, kk) => {
            sample(*i)?;
            comp(*kk)?;
        }
        OneWay { i, j, k: kk } => {
            sample(*i)?;
            sample(*j)?;
            comp(*kk)?;
        }
        MinSize { k: kk, .. } => comp(*kk)?,
        Pack { set, k: kk, .. } | Partition { set, k: kk, .. } | Cover { set, k: kk, .. } => {
            comp(*kk)?;
            set_ok(set)?;
        }
        OrderPi(_) | EstimatorLink(_) => {}
    }
    Ok(())
}

/// Direct transcription of one constraint into sparse rows.
pub fn to_linear_rows(c: &SideConstraint, n: usize, k: usize) -> Result<Vec<LinearRow>> {
    use SideConstraint::*;
    check_constraint(c, n, k)?;
    let set_rows = |set: &[usize], kk: usize, l: usize, sense: Sense| {
        vec![LinearRow::new(set.iter().map(|&i| (Var::Z(i, kk), 1.0)).collect(), sense, l as f64)]
    };
    Ok(match c {
        MustLink(i, j) => (0..k)
            .map(|kk| LinearRow::new(vec![(Var::Z(*i, kk), 1.0), (Var::Z(*j, kk), -1.0)], Sense::Eq, 0.0))
            .collect(),
        CannotLink(i, j) => (0..k)
            .map(|kk| LinearRow::new(vec![(Var::Z(*i, kk), 1.0), (Var::Z(*j, kk), 1.0)], Sense::Le, 1.0))
            .collect(),
        AssignLabel(i, kk) => vec![LinearRow::new(vec![(Var::Z(*i, *kk), 1.0)], Sense::Eq, 1.0)],
        OneWay { i, j, k: kk } => vec![LinearRow::new(
            vec![(Var::Z(*j, *kk), 1.0), (Var::Z(*i, *kk), -1.0)],
            Sense::Le,
            0.0,
        )],
        MinSize { k: kk, l } => {
            let all: Vec<usize> = (0..n).collect();
            set_rows(&all, *kk, *l, Sense::Ge)
        }
        Pack { set, k: kk, l } => set_rows(set, *kk, *l, Sense::Le),
        Partition { set, k: kk, l } => set_rows(set, *kk, *l, Sense::Eq),
        Cover { set, k: kk, l } => set_rows(set, *kk, *l, Sense::Ge),
        OrderPi(false) | EstimatorLink(false) => Vec::new(),
        OrderPi(true) => (0..k.saturating_sub(1))
            .map(|kk| LinearRow::new(vec![(Var::Pi(kk), 1.0), (Var::Pi(kk + 1), -1.0)], Sense::Le, 0.0))
            .collect(),
        EstimatorLink(true) => (0..k)
            .map(|kk| {
                let mut terms = vec![(Var::Pi(kk), n as f64)];
                terms.extend((0..n).map(|i| (Var::Z(i, kk), -1.0)));
                LinearRow::new(terms, Sense::Eq, 0.0)
            })
            .collect(),
    })
}

/// Outcome of [`ConstraintSet::validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub conflicts: Vec<String>,
    pub warnings: Vec<String>,
    pub order_pi_disabled: bool,
}

impl ValidationReport {
    pub fn is_consistent(&self) -> bool {
        self.conflicts.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// A checked collection of side constraints for a fixed `(n, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n: usize,
    k: usize,
    items: Vec<SideConstraint>,
    /// Must-link group representative per sample (smallest index in group).
    group: Vec<usize>,
    members: Vec<Vec<usize>>,
    order_pi: bool,
    estimator_link: bool,
    has_labels: bool,
}

impl ConstraintSet {
    pub fn empty(n: usize, k: usize) -> Self {
        Self::new(Vec::new(), n, k).expect("empty set is valid")
    }

    pub fn new(items: Vec<SideConstraint>, n: usize, k: usize) -> Result<Self> {
        for c in &items {
            check_constraint(c, n, k)?;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        for c in &items {
            if let SideConstraint::MustLink(i, j) = c {
                let (a, b) = (find(&mut parent, *i), find(&mut parent, *j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let group: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut members = vec![Vec::new(); n];
        for (i, &g) in group.iter().enumerate() {
            members[g].push(i);
        }
        let has_labels = items.iter().any(|c| matches!(c, SideConstraint::AssignLabel(..)));
        let order_pi = items.iter().any(|c| matches!(c, SideConstraint::OrderPi(true))) && !has_labels;
        let estimator_link = items.iter().any(|c| matches!(c, SideConstraint::EstimatorLink(true)));
        Ok(Self { n, k, items, group, members, order_pi, estimator_link, has_labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn items(&self) -> &[SideConstraint] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Representative (smallest member) of the must-link group of `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.group[i]
    }

    /// Members of the group represented by `rep` (empty for non-representatives).
    pub fn group_members(&self, rep: usize) -> &[usize] {
        &self.members[rep]
    }

    /// Group representatives in increasing order.
    pub fn group_reps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.group[i] == i)
    }

    /// Restrictions on `π` after the ordering / label policy is applied.
    pub fn param_rule(&self) -> ParamRule {
        ParamRule { order_pi: self.order_pi, estimator_link: self.estimator_link }
    }

    pub fn order_pi_active(&self) -> bool {
        self.order_pi
    }

    pub fn pinned_labels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.items.iter().filter_map(|c| match c {
            SideConstraint::AssignLabel(i, k) => Some((*i, *k)),
            _ => None,
        })
    }

    pub fn validate(&self) -> ValidationReport {
        use SideConstraint::*;
        let mut report = ValidationReport::default();
        let mut pinned: Vec<Option<usize>> = vec![None; self.n];
        for (i, k) in self.pinned_labels() {
            let g = self.group[i];
            match pinned[g] {
                Some(prev) if prev != k => report.conflicts.push(format!(
                    "sample {} is pinned to components {} and {} (directly or through must-links)",
                    i + 1,
                    prev + 1,
                    k + 1
                )),
                _ => pinned[g] = Some(k),
            }
        }
        for c in &self.items {
            match c {
                CannotLink(i, j) => {
                    let (gi, gj) = (self.group[*i], self.group[*j]);
                    if gi == gj {
                        report.conflicts.push(format!("{c} contradicts the must-link closure"));
                    } else if let (Some(a), Some(b)) = (pinned[gi], pinned[gj]) {
                        if a == b {
                            report.conflicts.push(format!("{c}: both samples pinned to component {}", a + 1));
                        }
                    }
                }
                OneWay { i, j, k } => {
                    if let (Some(a), Some(b)) = (pinned[self.group[*i]], pinned[self.group[*j]]) {
                        if b == *k && a != *k {
                            report.conflicts.push(format!("{c}: pinned labels violate the implication"));
                        }
                    }
                }
                MinSize { l, .. } if *l > self.n => {
                    report.conflicts.push(format!("{c}: more samples required than exist"));
                }
                Partition { set, l, .. } | Cover { set, l, .. } if *l > set.len() => {
                    report.conflicts.push(format!("{c}: more samples required than the set holds"));
                }
                _ => {}
            }
        }
        let wants_order = self.items.iter().any(|c| matches!(c, OrderPi(true)));
        if wants_order && self.has_labels {
            report.order_pi_disabled = true;
            report
                .warnings
                .push("order_pi disabled: fixed labels pin component identities".to_string());
        }
        report
    }

    /// Semantic check of all assignment-level constraints. Constraints on `π`
    /// are enforced through [`ParamRule`] instead.
    pub fn satisfied(&self, a: &Assignment) -> bool {
        use SideConstraint::*;
        let z = |i: usize, k: usize| a.label(i) == k;
        let count = |set: &mut dyn Iterator<Item = usize>, k: usize| set.filter(|&i| z(i, k)).count();
        self.items.iter().all(|c| match c {
            MustLink(i, j) => a.label(*i) == a.label(*j),
            CannotLink(i, j) => a.label(*i) != a.label(*j),
            AssignLabel(i, k) => z(*i, *k),
            OneWay { i, j, k } => !z(*j, *k) || z(*i, *k),
            MinSize { k, l } => count(&mut (0..self.n), *k) >= *l,
            Pack { set, k, l } => count(&mut set.iter().copied(), *k) <= *l,
            Partition { set, k, l } => count(&mut set.iter().copied(), *k) == *l,
            Cover { set, k, l } => count(&mut set.iter().copied(), *k) >= *l,
            OrderPi(_) | EstimatorLink(_) => true,
        })
    }

    /// Total amount by which `a` misses the assignment-level constraints
    /// (count shortfall or excess for cardinality constraints, 1 per violated
    /// pairwise or label constraint). Zero iff [`satisfied`](Self::satisfied).
    pub fn violation(&self, a: &Assignment) -> usize {
        self.items.iter().map(|c| self.item_violation(c, a)).sum()
    }

    /// Constraints that `a` violates.
    pub fn violated(&self, a: &Assignment) -> Vec<&SideConstraint> {
        self.items.iter().filter(|c| self.item_violation(c, a) > 0).collect()
    }

    /// Samples whose reassignment could reduce the violation of `a`.
    pub fn violating_samples(&self, a: &Assignment) -> BTreeSet<usize> {
        use SideConstraint::*;
        let mut out = BTreeSet::new();
        for c in &self.items {
            if self.item_violation(c, a) == 0 {
                continue;
            }
            match c {
                MustLink(i, j) | CannotLink(i, j) | OneWay { i, j, .. } => {
                    out.insert(*i);
                    out.insert(*j);
                }
                AssignLabel(i, _) => {
                    out.insert(*i);
                }
                MinSize { k, .. } => out.extend((0..self.n).filter(|&i| a.label(i) != *k)),
                Cover { set, k, .. } => out.extend(set.iter().copied().filter(|&i| a.label(i) != *k)),
                Pack { set, k, .. } => out.extend(set.iter().copied().filter(|&i| a.label(i) == *k)),
                Partition { set, .. } => out.extend(set.iter().copied()),
                OrderPi(_) | EstimatorLink(_) => {}
            }
        }
        out
    }

    fn item_violation(&self, c: &SideConstraint, a: &Assignment) -> usize {
        use SideConstraint::*;
        let in_k = |set: &mut dyn Iterator<Item = usize>, k: usize| set.filter(|&i| a.label(i) == k).count();
        match c {
            MustLink(i, j) => usize::from(a.label(*i) != a.label(*j)),
            CannotLink(i, j) => usize::from(a.label(*i) == a.label(*j)),
            AssignLabel(i, k) => usize::from(a.label(*i) != *k),
            OneWay { i, j, k } => usize::from(a.label(*j) == *k && a.label(*i) != *k),
            MinSize { k, l } => l.saturating_sub(in_k(&mut (0..self.n), *k)),
            Cover { set, k, l } => l.saturating_sub(in_k(&mut set.iter().copied(), *k)),
            Pack { set, k, l } => in_k(&mut set.iter().copied(), *k).saturating_sub(*l),
            Partition { set, k, l } => in_k(&mut set.iter().copied(), *k).abs_diff(*l),
            OrderPi(_) | EstimatorLink(_) => 0,
        }
    }

    /// Rows for the whole set, with must-links closed transitively (one
    /// equality per group member against the representative) and `OrderPi`
    /// dropped when labels are pinned.
    pub fn compiled_rows(&self) -> Result<Vec<LinearRow>> {
        use SideConstraint::*;
        let mut rows = Vec::new();
        for rep in self.group_reps() {
            for &m in &self.members[rep][1..] {
                rows.extend(to_linear_rows(&MustLink(rep, m), self.n, self.k)?);
            }
        }
        for c in &self.items {
            match c {
                MustLink(..) => {}
                OrderPi(true) if !self.order_pi => {}
                _ => rows.extend(to_linear_rows(c, self.n, self.k)?),
            }
        }
        Ok(rows)
    }

    /// True when every relabelling of components maps feasible assignments to
    /// feasible assignments with the same objective: identical mean boxes, no
    /// component-specific constraints and no ordering of proportions.
    pub fn is_label_symmetric<T: Real>(&self, spec: &ProblemSpec<T>) -> bool {
        use SideConstraint::*;
        if spec.mu_lower.iter().any(|r| r != &spec.mu_lower[0])
            || spec.mu_upper.iter().any(|r| r != &spec.mu_upper[0])
        {
            return false;
        }
        let mut min_size = vec![0usize; self.k];
        for c in &self.items {
            match c {
                AssignLabel(..) | OneWay { .. } | Pack { .. } | Partition { .. } | Cover { .. } | OrderPi(true) => {
                    return false
                }
                MinSize { k, l } => min_size[*k] = min_size[*k].max(*l),
                _ => {}
            }
        }
        min_size.iter().all(|&l| l == min_size[0])
    }

    /// Fixings implied by `AssignLabel`, closed under propagation; `None` if
    /// they are already contradictory.
    pub fn initial_fixings(&self) -> Option<Fixings> {
        let mut f = Fixings::new(self.n, self.k);
        for (i, k) in self.pinned_labels() {
            if !f.set(i, k, true) {
                return None;
            }
        }
        self.propagate(f)
    }

    /// Close `f` under the implication rules of the set. Returns `None` when
    /// the fixings admit no feasible completion by these rules.
    pub fn propagate(&self, mut f: Fixings) -> Option<Fixings> {
        use SideConstraint::*;
        let (n, k) = (self.n, self.k);
        loop {
            let before = f.version;
            for i in 0..n {
                let mut ones = 0;
                let mut zeros = 0;
                let mut one_at = 0;
                let mut free_at = 0;
                for kk in 0..k {
                    match f.get(i, kk) {
                        Some(true) => {
                            ones += 1;
                            one_at = kk;
                        }
                        Some(false) => zeros += 1,
                        None => free_at = kk,
                    }
                }
                if ones > 1 || zeros == k {
                    return None;
                }
                if ones == 1 {
                    for kk in 0..k {
                        if kk != one_at && !f.set(i, kk, false) {
                            return None;
                        }
                    }
                } else if zeros == k - 1 && !f.set(i, free_at, true) {
                    return None;
                }
            }
            for rep in self.group_reps() {
                let members = &self.members[rep];
                if members.len() < 2 {
                    continue;
                }
                for kk in 0..k {
                    let mut value = None;
                    for &m in members {
                        if let Some(v) = f.get(m, kk) {
                            if value.is_some_and(|w| w != v) {
                                return None;
                            }
                            value = Some(v);
                        }
                    }
                    if let Some(v) = value {
                        for &m in members {
                            if !f.set(m, kk, v) {
                                return None;
                            }
                        }
                    }
                }
            }
            for c in &self.items {
                let ok = match c {
                    CannotLink(i, j) => (0..k).all(|kk| {
                        (f.get(*i, kk) != Some(true) || f.set(*j, kk, false))
                            && (f.get(*j, kk) != Some(true) || f.set(*i, kk, false))
                    }),
                    OneWay { i, j, k: kk } => {
                        (f.get(*i, *kk) != Some(false) || f.set(*j, *kk, false))
                            && (f.get(*j, *kk) != Some(true) || f.set(*i, *kk, true))
                    }
                    MinSize { k: kk, l } => f.at_least(0..n, *kk, *l),
                    Cover { set, k: kk, l } => f.at_least(set.iter().copied(), *kk, *l),
                    Pack { set, k: kk, l } => f.at_most(set.iter().copied(), *kk, *l),
                    Partition { set, k: kk, l } => {
                        f.at_least(set.iter().copied(), *kk, *l) && f.at_most(set.iter().copied(), *kk, *l)
                    }
                    _ => true,
                };
                if !ok {
                    return None;
                }
            }
            if f.version == before {
                return Some(f);
            }
        }
    }

    /// Propagation plus failed-literal probing: every free `z_ik` that cannot
    /// be set to 1 without a propagation failure is fixed to 0. Much more
    /// expensive than [`propagate`](Self::propagate); meant for the root.
    pub fn probe(&self, f: Fixings) -> Option<Fixings> {
        let mut f = self.propagate(f)?;
        loop {
            let before = f.version;
            for i in 0..self.n {
                for kk in 0..self.k {
                    if !f.is_free(i, kk) {
                        continue;
                    }
                    let mut trial = f.clone();
                    trial.set(i, kk, true);
                    if self.propagate(trial).is_none() {
                        f.set(i, kk, false);
                        f = self.propagate(f)?;
                    }
                }
            }
            if f.version == before {
                return Some(f);
            }
        }
    }
}

/// Partial 0/1 fixings of the n×K assignment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fixings {
    k: usize,
    state: Vec<i8>,
    version: u64,
}

impl Fixings {
    pub fn new(n: usize, k: usize) -> Self {
        Self { k, state: vec![-1; n * k], version: 0 }
    }

    pub fn n(&self) -> usize {
        self.state.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, k: usize) -> Option<bool> {
        match self.state[i * self.k + k] {
            -1 => None,
            v => Some(v == 1),
        }
    }

    /// Fix `z_ik = value`. Returns `false` if it was fixed the other way.
    pub fn set(&mut self, i: usize, k: usize, value: bool) -> bool {
        let slot = &mut self.state[i * self.k + k];
        let v = i8::from(value);
        if *slot == -1 {
            *slot = v;
            self.version += 1;
            true
        } else {
            *slot == v
        }
    }

    pub fn is_free(&self, i: usize, k: usize) -> bool {
        self.get(i, k).is_none()
    }

    pub fn free_count(&self) -> usize {
        self.state.iter().filter(|&&v| v == -1).count()
    }

    /// Component of sample `i` if its row is decided.
    pub fn label(&self, i: usize) -> Option<usize> {
        (0..self.k).find(|&kk| self.get(i, kk) == Some(true))
    }

    pub fn fixed_ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.state.len()).filter(|&p| self.state[p] == 1).map(|p| (p / self.k, p % self.k))
    }

    pub fn fixed_zeros(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.state.len()).filter(|&p| self.state[p] == 0).map(|p| (p / self.k, p % self.k))
    }

    /// The assignment when every row has its one fixed.
    pub fn to_assignment(&self) -> Option<Assignment> {
        let labels: Option<Vec<usize>> = (0..self.n()).map(|i| self.label(i)).collect();
        labels.and_then(|l| Assignment::new(l, self.k).ok())
    }

    /// Whether a full assignment agrees with every fixing.
    pub fn admits(&self, a: &Assignment) -> bool {
        (0..self.n()).all(|i| (0..self.k).all(|kk| self.get(i, kk).map_or(true, |v| v == a.z(i, kk))))
    }

    fn at_least(&mut self, set: impl Iterator<Item = usize> + Clone, k: usize, l: usize) -> bool {
        let possible = set.clone().filter(|&i| self.get(i, k) != Some(false)).count();
        if possible < l {
            return false;
        }
        if possible == l {
            for i in set {
                if self.get(i, k).is_none() {
                    self.set(i, k, true);
                }
            }
        }
        true
    }

    fn at_most(&mut self, set: impl Iterator<Item = usize> + Clone, k: usize, l: usize) -> bool {
        let ones = set.clone().filter(|&i| self.get(i, k) == Some(true)).count();
        if ones > l {
            return false;
        }
        if ones == l {
            for i in set {
                if self.get(i, k).is_none() {
                    self.set(i, k, false);
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SideConstraint::*;

    #[test]
    fn row_examples() {
        let rows = to_linear_rows(&MustLink(0, 1), 3, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.iter().map(|r| r.terms.len()).sum::<usize>(), 4);
        assert!(rows.iter().all(|r| r.sense == Sense::Eq));

        let rows = to_linear_rows(&OrderPi(true), 3, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].terms, vec![(Var::Pi(0), 1.0), (Var::Pi(1), -1.0)]);
        assert_eq!(rows[1].terms, vec![(Var::Pi(1), 1.0), (Var::Pi(2), -1.0)]);

        let rows = to_linear_rows(&Cover { set: vec![0, 1, 2], k: 0, l: 2 }, 5, 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sense, Sense::Ge);
        assert_eq!(rows[0].rhs, 2.0);
        assert_eq!(rows[0].terms.len(), 3);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(to_linear_rows(&MustLink(0, 5), 3, 2), Err(Error::ConstraintBuild(_))));
        assert!(matches!(to_linear_rows(&AssignLabel(0, 2), 3, 2), Err(Error::ConstraintBuild(_))));
        let dup = Pack { set: vec![1, 1], k: 0, l: 1 };
        assert!(matches!(to_linear_rows(&dup, 3, 2), Err(Error::ConstraintBuild(_))));
    }

    #[test]
    fn validation_examples() {
        let s = ConstraintSet::new(vec![MustLink(0, 1), CannotLink(0, 1)], 3, 2).unwrap();
        assert!(!s.validate().is_consistent());

        let s = ConstraintSet::new(vec![AssignLabel(0, 1), OrderPi(true)], 3, 2).unwrap();
        let r = s.validate();
        assert!(r.is_consistent());
        assert!(r.order_pi_disabled);
        assert_eq!(r.warnings.len(), 1);
        assert!(!s.param_rule().order_pi);

        let s = ConstraintSet::new(vec![MustLink(0, 1), MustLink(1, 2), CannotLink(0, 2)], 3, 2).unwrap();
        assert!(!s.validate().is_consistent());
    }

    #[test]
    fn propagation_examples() {
        let s = ConstraintSet::empty(2, 2);
        let mut f = Fixings::new(2, 2);
        f.set(0, 0, false);
        let f = s.propagate(f).unwrap();
        assert_eq!(f.get(0, 1), Some(true));

        let s = ConstraintSet::new(vec![MustLink(0, 1)], 2, 3).unwrap();
        let mut f = Fixings::new(2, 3);
        f.set(0, 2, true);
        let f = s.propagate(f).unwrap();
        assert_eq!(f.label(1), Some(2));
        assert_eq!((f.get(1, 0), f.get(1, 1)), (Some(false), Some(false)));

        let s = ConstraintSet::new(vec![CannotLink(0, 1), CannotLink(1, 2), CannotLink(0, 2)], 3, 2).unwrap();
        let mut f = Fixings::new(3, 2);
        f.set(0, 0, true);
        assert!(s.propagate(f).is_none());
        assert!(s.probe(Fixings::new(3, 2)).is_none());
    }
}
