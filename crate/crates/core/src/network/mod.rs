pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod optim;
pub mod real;

pub use checkpoint::{param_hash, Checkpoint, Provenance};
pub use model::{
    EncoderConfig, ForwardCache, GlobalPooling, HeadKind, Inputs, Network, ParamGroup, Top,
    TrainPolicy, NONLINEAR_HIDDEN,
};
pub use optim::Adam;
pub use real::Real;

use crate::error::Result;
use crate::seed::SeedStream;
use crate::types::TaskSpec;

/// Encoder plus pre-training block and task heads.
pub fn build_network<R: Real>(
    config: &EncoderConfig,
    task: &TaskSpec,
    channels: &[usize],
    window_len: usize,
    seed: &SeedStream,
) -> Result<Network<R>> {
    Network::build(config, task, channels, window_len, seed)
}

/// Loads the checkpoint's encoder and puts a fresh classifier on it.
pub fn attach_downstream_head<R: Real>(
    checkpoint: &Checkpoint,
    kind: HeadKind,
    num_classes: usize,
    seed: &SeedStream,
) -> Result<Network<R>> {
    let mut net = checkpoint.to_network::<R>()?;
    net.attach_classifier(kind, num_classes, seed)?;
    Ok(net)
}
