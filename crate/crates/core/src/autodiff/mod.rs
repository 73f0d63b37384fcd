//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod array;
mod check;
mod graph;
mod params;

pub use array::Array;
pub use check::{finite_difference_check, finite_difference_report, FdEntry, FdReport};
pub use graph::{sigmoid, softplus, Graph, OpTag, Var};
pub use params::{Gradients, Param, ParamId, ParamStore, MAGIC};
