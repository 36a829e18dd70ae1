//! Learning instancewise feature selectors ("explainers") for black-box
//! classifiers by maximizing a variational lower bound on the mutual
//! information between a selected feature subset and the model response.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem, clocks or the command line lives in the `l2x` companion crate.
//!
//! Layout:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a define-by-run
//!   reverse-mode tape.
//! - [`sampling`]: Gumbel noise, Concrete vectors and the relaxed k-subset
//!   mask built from their elementwise maximum.
//! - [`models`]: MLPs for the classifier, the explainer and the variational
//!   approximator, plus input masking.
//! - [`training`]: RMSprop, the variational objective and the training loops.
//! - [`synthetic`]: the four synthetic benchmarks with exact conditionals.
//! - [`explainers`]: L2X top-k selection and the Saliency / Taylor baselines.
//! - [`metrics`] and [`oracle`]: median rank, post-hoc accuracy, and exact
//!   information-theoretic computations on finite joints.
#![no_std]
#![warn(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
mod error;
pub mod explainers;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, ParameterGradients, ParameterSet, Var};
pub use error::{Error, Result};
pub use sampling::FeatureSet;
pub use tensor::Tensor;
