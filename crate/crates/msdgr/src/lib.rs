//! Multiscale dynamic graph representation for occlusion-robust matching.
//!
//! Feature maps, produced either by a small fixed CNN backbone or by a Gabor
//! filter bank, are recrafted into feature graphs: node vectors sampled at
//! salient spatial locations plus a Gaussian spatial adjacency. Graphs are
//! refined by channel-excitation and edge-weighted graph attention layers
//! with analytic gradients, compared through a composite feature/structure
//! similarity, and matched dynamically by pruning node pairs whose cosine
//! similarity falls below the pair-mean gate. The crate also provides an
//! occlusion simulator, a verification/identification metrics harness
//! (FAR/FRR/EER/DET, rank-N), a triplet-loss training loop for the graph
//! layers, and the command layer behind the `msdgr` binary.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); file formats are fixed at 32-bit floats.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod gabor;
pub mod gradcheck;
pub mod graph;
pub mod matcher;
pub mod occlusion;
pub mod pgm;
pub mod pipeline;
pub mod scalar;
pub mod segat;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete aliases for the two supported scalar widths.
pub type Tensor3F32 = tensor::Tensor3<f32>;
pub type Tensor3F64 = tensor::Tensor3<f64>;
pub type FeatureGraphF32 = graph::FeatureGraph<f32>;
pub type FeatureGraphF64 = graph::FeatureGraph<f64>;
pub type RepresentationF32 = matcher::MultiscaleRepresentation<f32>;
pub type RepresentationF64 = matcher::MultiscaleRepresentation<f64>;
