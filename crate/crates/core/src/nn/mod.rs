//! Minimal neural-network toolkit: reverse-mode autodiff, layers, Adam.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Graph, Mat, Var};
pub use params::{Grads, ParamId, ParamSet};

#[cfg(test)]
mod tests;
