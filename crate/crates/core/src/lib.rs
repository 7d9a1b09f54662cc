//! Constant-memory approximate Bayesian inference by rejection filtering.
//!
//! A rejection filter keeps its belief as a Gaussian `(μ, Σ)`. Each update
//! draws candidates from that Gaussian, accepts them with probability
//! `∏ min(P(E|x)/κ_E, 1)`, streams the accepted ones into running moment
//! sums and refits the Gaussian. Memory use depends only on the dimension.
//!
//! Modules:
//! - [`filter`], [`gaussian`], [`accumulator`], [`likelihood`]: the update itself
//! - [`diffusion`]: prediction step for drifting parameters
//! - [`model_selection`]: streaming Bayes factors from acceptance counts
//! - [`batched`]: attempt-sharded updates with mergeable partial sums
//! - [`freq`]: frequency tracking and `κ_E` sensitivity experiments
//! - [`classify`]: active binary classification over a labelled corpus

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accumulator;
pub mod batched;
pub mod classify;
pub mod diffusion;
pub mod error;
pub mod filter;
pub mod freq;
pub mod gaussian;
pub mod likelihood;
pub mod model_selection;
pub mod rng;

pub use accumulator::MomentAccumulator;
pub use diffusion::{diffuse, DiffusionKernel};
pub use error::{FilterError, Result};
pub use filter::{rf_update, ApproxRejectionDiagnostics, RFConfig, UpdateOutcome};
pub use gaussian::{sample_prior, GaussianModel};
pub use likelihood::{accept_sample, FnLikelihood, Likelihood};
pub use model_selection::{bayes_factor, LogLikelihoodRegister};
