//! Numerical laboratory for entropy-regularized convex-concave min-max games
//! over probability measures on compact strategy spaces.
//!
//! The objective is
//!
//! ```text
//! min over nu  max over mu   V_sigma(nu, mu)
//!     = F(nu, mu) + (sigma^2/2) * (KL(nu|pi) - KL(mu|rho))
//! ```
//!
//! where `F` is convex in `nu`, concave in `mu`, and `pi`, `rho` are fixed
//! reference measures. The crate provides:
//!
//! - [`measure`]: strictly positive probability densities on quadrature grids,
//!   stored in log-domain, with KL / total-variation divergences;
//! - [`payoff`]: payoff functionals `F` (bilinear, separable, smooth composite)
//!   and their flat derivatives, plus the drift functions of the regularized
//!   objective;
//! - [`flow`]: time integration of the Fisher-Rao (birth-death) gradient flow
//!   by log-domain Euler stepping, exponential (Duhamel) stepping, and a
//!   Picard fixed-point construction on a time mesh;
//! - [`mda`]: the discrete-time mirror descent-ascent counterpart
//!   (multiplicative-weights updates);
//! - [`equilibrium`]: the unique mixed Nash equilibrium via damped Gibbs
//!   best-response iteration, Nikaido-Isoda error, Lyapunov series and
//!   exponential-rate fitting;
//! - [`config`] / [`runner`] / [`validate`]: the declarative experiment
//!   runner behind the `fr-minmax` CLI.

pub mod config;
pub mod csvio;
pub mod equilibrium;
pub mod flow;
pub mod grid;
pub mod mda;
pub mod measure;
pub mod payoff;
pub mod rng;
pub mod runner;
pub mod validate;

pub use grid::Grid;
pub use measure::{GridMeasure, ReferenceMeasure};
pub use payoff::{PayoffSpec, RegularizedObjective};

/// Errors shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grids do not match: {0}")]
    GridMismatch(&'static str),
    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: &'static str, index: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("ratio precondition violated for {side}: {detail}")]
    RatioCondition { side: &'static str, detail: String },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
