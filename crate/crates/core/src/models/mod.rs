//! Neural-process model family: NP, ANP, SNP, ASNP-W and ASNP-RMR.

mod config;
mod model;
mod objective;

pub use config::{ModelConfig, ModelKind};
pub use model::{augment_query, task_step_code, DetPath, Model, Noise, PairVars, RssmState, StepInputs, StepOutput};
pub use objective::{ElboStats, SequenceElbo};
