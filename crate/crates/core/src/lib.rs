//! Variable decision rule (VDR) rating-scale models.
//!
//! A Thurstonian rating model in which the observer mixes three decision
//! rules with free probabilities, on top of independent Gaussian
//! representation and criterion densities. The crate covers trial-level
//! simulation of rating experiments, likelihood evaluation of the rule
//! mixture via nested adaptive Romberg quadrature, annealed stochastic
//! fitting, goodness-of-fit measurement, and AICc-based model selection.

pub mod diag;
pub mod dist;
pub mod error;
pub mod fit;
pub mod gof;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod quad;
pub mod rng;
pub mod sim;

pub use error::VdrError;
pub use model::{CountMatrix, FitResult, ModelClass, ModelSpec, ParamSet, ProbMatrix, RuleSet};
pub use quad::{QuadConfig, QuadResult};

pub type Result<T> = std::result::Result<T, VdrError>;
