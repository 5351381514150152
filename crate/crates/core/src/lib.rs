//! Analysis toolkit for transformer attention maps.
//!
//! The crate reads serialized attention extracts (`ATNX1` files) and offers
//! surface statistics, per-head probing against dependency and coreference
//! annotations, trainable attention-based dependency probes, and
//! Jensen-Shannon head clustering with a 2-D multidimensional-scaling layout.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod cli;
pub mod cluster;
pub mod corpora;
pub mod error;
pub mod headprobe;
pub mod interchange;
pub mod probeclf;
pub mod scalar;
pub mod surface;
pub mod synth;
pub mod wordmap;

pub use error::{Error, Result};
pub use interchange::{ExtractSet, GradientReport, HeadId, Segment, TokenKind};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;

pub type WordMatrix = wordmap::WordAttentionMatrix<Real>;
pub type HeadStat = surface::HeadStat<Real>;
pub type Embeddings = corpora::EmbeddingTable<Real>;
pub type AttnOnlyProbe = probeclf::AttnOnlyProbe<Real>;
pub type AttnWordsProbe = probeclf::AttnWordsProbe<Real>;
pub type DistanceProbe = probeclf::DistanceWordsProbe<Real>;
pub type ParseInstance = probeclf::ParseInstance<Real>;
pub type HeadDistances = cluster::HeadDistanceMatrix<Real>;
pub type Embedding2D = cluster::Embedding<Real>;
