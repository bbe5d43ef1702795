//! Projections onto the feasible policy sets, repeated stochastic gradient
//! descent, the best-response map and its fixed-point iteration.

mod fixed_point;
mod inner;
mod projection;
mod rsgd;

pub use fixed_point::{psc_reference, reference_by_route, rrm_run, FixedPointResult};
pub use inner::{minimize_shifted, InnerBudget, InnerSolution};
pub use projection::{project_matrix, project_policy, project_row_affine, project_row_simplex, tie_blocks};
pub use rsgd::{rsgd_run, RsgdConfig, RunTrace, TraceRow, DIVERGENCE_NORM, RECOVERY_TOLERANCE};
