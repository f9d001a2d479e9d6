//! Minimal differentiable engine for dense 3D grids and the segmentation
//! networks built on it.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod network;
mod params;
mod tensor;

pub use graph::{Function, Gradients, Graph, Var};
pub use network::{Forward, Network, NetworkConfig};
pub use params::{Bindings, Param, ParamSet};
pub use tensor::{Shape, Tensor};
