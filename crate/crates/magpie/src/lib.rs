//! Self-supervised pretraining for graph neural networks by masked
//! reconstruction.
//!
//! The training pipeline hides part of a graph and learns to put it back:
//! node features are replaced by a learnable mask token (with the masked set
//! chosen by a learned, reconstruction-error-seeking sampler), edges are
//! dropped at random, and an encoder/decoder pair is trained to reconstruct
//! features, rank true neighbors above random ones, agree with a momentum
//! (EMA) copy of itself in latent space, and match the momentum decoder's
//! reconstructions. Downstream quality is measured with frozen-encoder
//! probes: a linear classifier for nodes, pooled readouts plus a max-margin
//! classifier for whole graphs.
//!
//! Everything is built on a small reverse-mode autodiff tape over dense
//! matrices, generic over `f32`/`f64`, so every loss gradient can be audited
//! against central finite differences and every stop-gradient contract can
//! be checked exactly.

pub mod backbone;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod mat;
pub mod momentum;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use mat::Mat;
pub use tape::{NodeId, Tape};

use num_traits::Float;

/// Floating-point scalar the numeric core is generic over.
///
/// `f32` is the training/checkpoint precision; `f64` is used by the
/// finite-difference gradient audits.
pub trait Scalar: Float + std::fmt::Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
