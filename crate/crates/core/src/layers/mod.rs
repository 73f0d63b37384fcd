//! Neural building blocks shared by every model.
//!
//! Weights are initialized uniformly in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`
//! and biases at zero, except the LSTM forget-gate bias which starts at
//! [`lstm::FORGET_BIAS`].

pub mod attention;
pub mod gaussian;
mod init;
pub mod linear;
pub mod lstm;

pub use attention::{Attention, AttentionKind, AttentionRead};
pub use gaussian::{
    gaussian_log_likelihood, kl_diag_gaussian, reparameterize, GaussianBelief, GaussianHead, VARIANCE_FLOOR,
};
pub use init::ParamBuilder;
pub use linear::{Linear, Mlp, MlpSpec};
pub use lstm::{Lstm, LstmState};
