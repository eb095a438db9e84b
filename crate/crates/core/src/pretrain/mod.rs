//! Contrastive pre-training from mined similar-hand pairs.
//!
//! A batch holds `N` anchors followed by their `N` positives (sample `i`
//! pairs with `i + N`); every other sample in the batch is a negative.
//! Images are augmented, encoded, projected, and the projections are
//! aligned back through the inverse geometric augmentation before the
//! weighted NT-Xent loss is applied.

mod align;
mod augment;
mod encoder;
mod loss;
mod train;
pub mod weights;

pub use align::{forward_points, inverse_align, inverse_align_backward};
pub use augment::{apply_augment, AugmentParams, AugmentRanges};
pub use encoder::{encoder_forward, flatten_grads, Dense, EncoderModel, EncoderSpec, Forward, Momentum, Tape};
pub use loss::{weighted_ntxent, Denominator, LossReport};
pub use train::{
    batch_objective, build_batch, parameter_gradient, probe_margin, train_loop, train_step, LogRow,
    PositiveSampler, RankedPositives, StepContext, TablePositives, TrainBatch, TrainConfig, TrainData,
    WeightSpace,
};
pub use weights::{adaptive_weights, weighting_registry, BatchWeights, PairWeighting};
