//! Protuberance-aware kidney tumor segmentation.
//!
//! The crate bundles a synthetic protuberance mask generator, a compact
//! reverse-mode 3D convolution engine, the three-network training procedure
//! (base, protuberance detection, fusion) and lesion-level evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the common instantiations.

pub mod error;
pub mod evalmetrics;
pub mod gradsuite;
pub mod losses;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synthgen;
pub mod tensornet;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensornet::{Graph, Network, NetworkConfig, ParamSet, Tensor};
pub use volume::{Dims, Mask, Spacing, Volume};

pub type Volume32 = Volume<f32>;
pub type Volume64 = Volume<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
