//! Latent score-based data assimilation on toy dynamical systems.
//!
//! The pipeline: simulate a toy system ([`systems`]), compress states into
//! latents ([`autoencoder`]), train a variance-exploding diffusion prior over
//! latent windows ([`diffusion`]), stitch window scores into trajectory
//! scores ([`composition`]), and sample posterior trajectories conditioned on
//! sparse noisy observations ([`observation`], [`assimilation`]). Ensemble
//! verification and exact linear-Gaussian oracles live in [`evaluation`].
//!
//! The numeric core ([`tensor`], [`graph`], [`optim`]) is generic over the
//! scalar type; the pipeline runs on the `f64` aliases exported below.

pub mod assimilation;
pub mod autoencoder;
pub mod composition;
pub mod container;
pub mod diffusion;
pub mod evaluation;
pub mod graph;
pub mod observation;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod systems;
pub mod tensor;

pub use graph::{Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete scalar used by the whole pipeline.
pub type Real = f64;
/// Pipeline tensor type.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single-precision tensor, for callers that trade accuracy for memory.
pub type Tensor32 = tensor::Tensor<f32>;
/// Pipeline autodiff graph.
pub type Graph64 = graph::Graph<f64>;
/// Pipeline optimizer.
pub type Adam64 = optim::Adam<f64>;
