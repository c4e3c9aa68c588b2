//! Partial Gromov-Wasserstein distances on finite metric measure spaces.
//!
//! The crate is organised bottom-up:
//!
//! - [`mmspace`]: finite metric measure spaces, validation, eccentricity.
//! - [`coupling`]: coupling matrices and the four feasible families
//!   (exact, relaxed `C_ε`, symmetric-relaxed `S_ε`, mass-constrained `C̃_δ`).
//! - [`distortion`]: the `p`-distortion objective and its gradient.
//! - [`transport_lp`]: exact LP oracles over the coupling polytopes and an
//!   exact Wasserstein-`p` solver.
//! - [`solver`]: Frank-Wolfe solvers for `GW_p`, `PGW_{ε,p}`, `sPGW_{ε,p}`
//!   and `mPGW_{δ,p}`, plus a brute-force oracle for tiny instances.
//! - [`robust`]: the robust metric `PGW_p^k` computed by monotone bisection.
//! - [`verify`]: numerical checks of the structural theorems.
//! - [`io`]: file formats for spaces and results.

pub mod coupling;
pub mod distortion;
pub mod error;
pub mod exponent;
pub mod io;
pub mod mmspace;
pub mod random;
pub mod robust;
pub mod solver;
pub mod transport_lp;
pub mod verify;

mod serde_ext;

pub use coupling::{Coupling, RelaxParams};
pub use error::{Error, Result};
pub use exponent::Exponent;
pub use mmspace::{MmSpace, ValidationReport, Violation, ViolationCode};
pub use robust::{RobustConfig, RobustResult};
pub use solver::{SolveConfig, SolveResult};
pub use verify::CheckReport;
