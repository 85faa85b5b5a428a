//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are created, so the forward pass is the graph construction itself.
//! [`Graph::backward`] then walks the tape in reverse creation order, which is
//! a topological order, and accumulates vector-Jacobian products.
//!
//! Shape errors do not panic. The first failing op poisons the graph and is
//! reported by [`Graph::forward`] / [`Graph::backward`].

pub mod check;
pub mod error;
pub mod graph;
pub mod init;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use check::{grad_check, GradCheck, GradCheckReport};
pub use error::AdError;
pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use params::{Param, ParameterSet};
pub use tensor::Tensor;
