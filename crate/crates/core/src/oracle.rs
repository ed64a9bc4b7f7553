//! Exhaustive reference solver for tiny instances.
//!
//! Deliberately naive: every assignment is checked against the side
//! constraints with [`ConstraintSet::satisfied`] (not the compiled rows), gets
//! its conditional parameters from scratch and is scored with
//! [`evaluate_objective`].

use crate::constraints::ConstraintSet;
use crate::error::{contract, Error, Result};
use crate::model::{conditional_params_with, evaluate_objective, Assignment, Dataset, MapSolution, ProblemSpec};
use crate::Real;

/// Largest number of assignments enumerated.
pub const MAX_ASSIGNMENTS: u64 = 1 << 20;

/// Ties closer than this keep the lexicographically smaller assignment.
const TIE: f64 = 1e-12;

/// Global optimum by enumeration of all `Kⁿ` assignments in lexicographic
/// order of the label vector.
pub fn brute_force<T: Real>(
    data: &Dataset<T>,
    spec: &ProblemSpec<T>,
    constraints: &ConstraintSet,
) -> Result<MapSolution<T>> {
    spec.validate(data)?;
    let (n, k) = (data.n(), spec.k);
    if constraints.n() != n || constraints.k() != k {
        return Err(contract("constraint set built for a different (n, K)"));
    }
    let total = u32::try_from(n)
        .ok()
        .and_then(|e| (k as u64).checked_pow(e))
        .filter(|&t| t <= MAX_ASSIGNMENTS)
        .ok_or_else(|| Error::Size(format!("K^n = {k}^{n} exceeds {MAX_ASSIGNMENTS}")))?;
    let rule = constraints.param_rule();
    let tie = T::lit(TIE);
    let mut labels = vec![0usize; n];
    let mut best: Option<MapSolution<T>> = None;
    for _ in 0..total {
        let a = Assignment::new(labels.clone(), k)?;
        if constraints.satisfied(&a) {
            if let Some(params) = conditional_params_with(data, spec, &a, rule)? {
                let objective = evaluate_objective(data, spec, &a, &params)?;
                if best.as_ref().map_or(true, |b| objective < b.objective - tie) {
                    best = Some(MapSolution { assignment: a, params, objective, feasible: true });
                }
            }
        }
        for pos in (0..n).rev() {
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
    }
    best.ok_or_else(|| Error::Infeasible("no assignment satisfies the side constraints".into()))
}
