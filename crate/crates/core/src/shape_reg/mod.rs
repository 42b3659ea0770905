//! Shape-constrained regression: bounded Lipschitz max-affine functions,
//! their least-squares fitting, and the equivalent input convex network form.

mod fit;
mod icnn;
mod max_affine;

pub use fit::{fit_affine_ols, fit_max_affine, select_piece_count, FitOutcome, RegressionProblem};
pub use icnn::{icnn_to_max_affine, max_affine_to_icnn, IcnnParams};
pub use max_affine::MaxAffineFn;
