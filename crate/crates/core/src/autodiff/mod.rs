//! Minimal dense reverse-mode differentiation over `f64` tensors.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::grad_check;
pub use graph::{log_softmax_row, sigmoid, Graph, Value};
pub use params::{AdamConfig, Init, Param, ParamId, ParamStore};
