//! Derivative-free optimization with ensemble-estimated derivatives.
//!
//! The library maintains an ensemble of particles whose empirical statistics
//! stand in for a Gaussian distribution. Centered function values turn into
//! derivative estimates through Stein's identity, a regularized ensemble
//! transform contracts the deviations toward the scaled inverse Hessian, and
//! a backtracking line search moves the ensemble mean. The growth-corrected
//! update keeps the ensemble spread alive instead of letting it collapse,
//! which is what separates it from the plain square-root filter baseline.
//!
//! Everything is generic over the scalar type through [`Scalar`]; the
//! `*64`/`*32` aliases at the crate root pin the common instantiations.
//!
//! Modules:
//! - [`ensemble`]: particle container, mean/deviation/covariance primitives.
//! - [`stein`]: projected gradient and Hessian estimates.
//! - [`transform`]: transform matrix, deviation stepping, clipping.
//! - [`optimizer`]: the minimization procedures and the CFD baseline.
//! - [`problems`]: black-box problem abstraction and the benchmark suite.
//! - [`meanfield`]: covariance-flow diagnostics backing the theory tests.

pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod meanfield;
pub mod optimizer;
pub mod problems;
pub mod scalar;
pub mod stein;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use ensemble::{DeviationMatrix, Ensemble};
pub use optimizer::{
    backtracking_line_search, cfd_gd_minimize, cfd_gradient, enksgd_minimize,
    enksgd_minimize_traced, IterationRecord, OptimizerConfig, RunResult,
};
pub use problems::{NoiseModel, ProblemRegistry, ProblemSpec};
pub use stein::{EvaluatedEnsemble, ProjectedDerivatives};
pub use transform::{TransformPair, UpdateVariant};

/// `f64` instantiations of the main public types.
pub type Ensemble64 = ensemble::Ensemble<f64>;
pub type DeviationMatrix64 = ensemble::DeviationMatrix<f64>;
pub type ProblemSpec64 = problems::ProblemSpec<f64>;
pub type OptimizerConfig64 = optimizer::OptimizerConfig<f64>;
pub type RunResult64 = optimizer::RunResult<f64>;
pub type TransformPair64 = transform::TransformPair<f64>;

/// `f32` instantiations for single-precision experimentation.
pub type Ensemble32 = ensemble::Ensemble<f32>;
pub type OptimizerConfig32 = optimizer::OptimizerConfig<f32>;
pub type RunResult32 = optimizer::RunResult<f32>;
