//! Tape autodiff, parameter storage, and gradient verification utilities.

pub mod gradcheck;
mod graph;
mod params;

pub use graph::{kernels, Gradients, Graph, Var};
pub use params::{ParamGroup, ParamId, ParamStore};
