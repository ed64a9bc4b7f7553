//! Global MAP clustering under the Gaussian mixture model with known covariance.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the problem data, the exact objective and the closed-form
//!   conditional parameter optimum for a fixed assignment.
//! * [`constraints`] describes side constraints, compiles them to linear rows
//!   and propagates fixings during search.
//! * [`pwl`] and [`formulation`] build the mixed-integer QP.
//! * [`qp`] solves node relaxations and certifies their lower bounds.
//! * [`bnb`] is the branch-and-bound driver.
//! * [`heuristics`] and [`oracle`] provide baselines and a brute-force check.
//! * [`io`] handles CSV ingestion, iris preprocessing and result files.
//!
//! Numeric types in `model`, `pwl`, `heuristics` and `oracle` are generic over
//! [`Real`]; the solver layers work in `f64`.

pub mod bnb;
pub mod constraints;
mod error;
pub mod formulation;
pub mod heuristics;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pwl;
pub mod qp;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use bnb::{BnbOptions, BnbResult, BnbStatus, BranchStrategy, TraceRecord};
pub use constraints::{ConstraintSet, Fixings, SideConstraint};
pub use formulation::{build_miqp, MiqpModel};
pub use model::{
    conditional_params, evaluate_objective, solution_metrics, Assignment, Dataset, MapSolution,
    Params, Precision, Prior, ProblemSpec, SolutionMetrics,
};

/// Single-precision aliases for the generic model types.
pub type DatasetF32 = model::Dataset<f32>;
pub type ProblemSpecF32 = model::ProblemSpec<f32>;
pub type ParamsF32 = model::Params<f32>;
pub type MapSolutionF32 = model::MapSolution<f32>;
