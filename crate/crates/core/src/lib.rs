//! Attentive sequential neural processes for meta-transfer learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense arrays, a dynamic computation graph and reverse-mode
//!   differentiation, plus the parameter store and its file format.
//! - [`layers`]: MLPs, LSTM cells, attention, Gaussian heads, KL and
//!   log-likelihood terms.
//! - [`rmr`]: recurrent memory reconstruction, an imaginary key-value
//!   memory that is rebuilt every task-step from its past state and the
//!   current context.
//! - [`models`]: NP, ANP, SNP, ASNP-W and ASNP-RMR, their rollouts, the
//!   ELBO and the target-NLL metric.
//! - [`taskgen`]: dynamic 1D GP regression and moving-sprite image
//!   completion task streams.
//! - [`harness`]: training, evaluation, ablations, metrics and plot export.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod rmr;
pub mod taskgen;

pub use error::{Error, Result};
