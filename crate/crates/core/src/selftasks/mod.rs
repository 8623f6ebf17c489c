//! Pretext tasks: self-labeled example generators, target statistics and losses.

pub mod generators;
pub mod losses;
pub mod stats;

pub use generators::{
    gen_autoencoder, gen_blend_detection, gen_feature_prediction, gen_fusion_magnitude,
    gen_modality_denoising, gen_odd_segment, gen_temporal_shift, gen_transformation_recognition,
    gen_triplet, generate, shift_range_index,
};
pub use losses::{
    bce, compute_task_loss, cross_entropy, huber, mse, nll, symmetric_triplet_loss, LossOutput,
    TripletLossOutput,
};
pub use stats::{compute_stats, StatVector, NUM_STATS};
