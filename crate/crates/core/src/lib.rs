//! Stochastic variance-reduced optimization on the Stiefel and Grassmann
//! manifolds without vector transport.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: small dense kernels (positive-diagonal QR, polar factor,
//!   Padé matrix exponential, pseudo-inverse).
//! * [`manifold`]: points, tangent vectors, the `P_{ρ,X}` metric and `D_ρ`.
//! * [`retraction`]: the retraction maps and their constants.
//! * [`problems`]: PCA and matrix-completion finite sums.
//! * [`optimizers`]: S-SVRG, S-SVRG-BB, S-SGD and a full-gradient baseline.
//! * [`oracles`]: independent brute-force and finite-difference checks.

pub mod linalg;
pub mod manifold;
pub mod optimizers;
pub mod oracles;
pub mod problems;
pub mod retraction;
pub mod rng;

pub use linalg::{DenseMatrix, LinalgError};
pub use manifold::{MetricParams, StiefelPoint, TangentSpace, TangentVector};
pub use optimizers::{OutputMode, RunTrace, StepMode, SvrgConfig, TerminalStatus};
pub use problems::{FiniteSum, McInstance, PcaInstance, ProblemConstants};
pub use retraction::{JdPhi, RetractionKind};
