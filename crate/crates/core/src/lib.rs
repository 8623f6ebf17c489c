//! Self-supervised representation learning for multisensor time-series.
//!
//! The crate covers the whole path from raw recordings to evaluation:
//! windowing and subject splits ([`ingest`]), signal transformations
//! ([`transforms`]), self-labeled pretext-task generation and losses
//! ([`selftasks`]), a multi-stream temporal convolutional encoder with manual
//! backpropagation ([`network`]), pre-training and the downstream protocols
//! ([`train`]), and metrics ([`evaluate`]).

pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod network;
pub mod seed;
pub mod selftasks;
pub mod train;
pub mod transforms;
pub mod types;

pub use error::{Error, Result};
pub use seed::SeedStream;
pub use types::{
    validate_sample, ExampleMeta, HeadLayout, LossKind, MultimodalSample, PretextBatch, Sample,
    SelfLabeledBatch, SignalBatch, Target, TaskId, TaskParams, TaskSpec, TripletBatch, Violation,
    Window,
};
