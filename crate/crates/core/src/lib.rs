//! Mixed-precision preconditioned conjugate gradient with per-iteration
//! precision choices learned by tabular Q-learning.
//!
//! Reduced formats are emulated on `f64` storage by rounding to the target
//! grid (see [`precision`]). The solver in [`cgsolver`] asks a
//! [`cgsolver::PrecisionPolicy`] for four precisions every iteration;
//! [`rlagent`] trains such a policy.

pub mod cgsolver;
pub mod experiment;
pub mod precision;
pub mod precond;
pub mod problems;
pub mod report;
pub mod rlagent;
pub mod sparsela;

pub use cgsolver::{cg_solve, fixed_policy, CgConfig, PrecisionAction, PrecisionPolicy, SolveResult, SolveStatus};
pub use precision::{round_scalar, round_vector, EmulationMode, Precision, PrecisionFormat};
pub use precond::{apply_precond, ilut_factor, IlutFactors, IlutParams};
pub use rlagent::{load_policy, save_policy, MdpConfig, QPolicy, RewardConfig, TrainConfig};
pub use sparsela::CsrMatrix;
