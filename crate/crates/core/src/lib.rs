//! Similar-hand mining and weighted contrastive pre-training on 2D hand
//! keypoints.
//!
//! The pipeline runs: synthetic corpus ([`synth`]) → record ingest and
//! left/right balancing ([`ingest`]) → PCA pose embeddings ([`embed`]) →
//! cross-video nearest-neighbor mining ([`mine`]) → contrastive training
//! with adaptive pair weights ([`pretrain`]) → evaluation ([`metrics`]).

pub mod embed;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod mine;
pub mod pipeline;
pub mod pretrain;
pub mod registry;
pub mod synth;

pub use error::{Error, Result};
