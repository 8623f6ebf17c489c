//! The multi-stream temporal convolutional network.
//!
//! ```text
//! modality m ──conv(32,24)─selu─maxpool(4,2)─conv(64,16)─selu─conv(96,8)─selu─dropout──┐
//!                                                                                     concat
//!                      shared conv(128,4)─selu ──global max pool──▶ z_s (embedding) ◀──┘
//!                              │
//!                 pre-training block: conv(64,4)─selu─global max pool─dense(512)─selu─heads
//!                 (decoder tasks: conv(64,4)─selu─upsample─conv─selu─conv per modality)
//! ```

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_mask, global_max_pool, global_max_pool_backward, selu, selu_backward, upsample,
    upsample_backward, Conv1d, Conv1dCache, Dense, MaxPool1d, MaxPoolCache, ParamSlot,
};
use super::real::Real;
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::types::{HeadLayout, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPooling {
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Selu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub stream_filters: Vec<usize>,
    pub stream_kernels: Vec<usize>,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dropout: f64,
    pub shared_filters: usize,
    pub shared_kernel: usize,
    pub block_filters: usize,
    pub block_kernel: usize,
    pub block_units: usize,
    pub decoder_filters: usize,
    pub decoder_kernel: usize,
    pub global_pooling: GlobalPooling,
    pub activation: Activation,
    /// L2 rate `β` on all weights.
    pub weight_decay: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stream_filters: vec![32, 64, 96],
            stream_kernels: vec![24, 16, 8],
            pool_size: 4,
            pool_stride: 2,
            dropout: 0.1,
            shared_filters: 128,
            shared_kernel: 4,
            block_filters: 64,
            block_kernel: 4,
            block_units: 512,
            decoder_filters: 32,
            decoder_kernel: 16,
            global_pooling: GlobalPooling::Max,
            activation: Activation::Selu,
            weight_decay: 1e-4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.pool_size,
            self.pool_stride,
            self.shared_filters,
            self.shared_kernel,
            self.block_filters,
            self.block_kernel,
            self.block_units,
            self.decoder_filters,
            self.decoder_kernel,
        ];
        if self.stream_filters.is_empty()
            || self.stream_filters.len() != self.stream_kernels.len()
            || self.stream_filters.iter().chain(&self.stream_kernels).any(|&v| v == 0)
            || positive.contains(&0)
        {
            return Err(Error::InvalidArgument(
                "encoder widths and kernels must be positive, one kernel per stream layer".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    fn pool(&self) -> MaxPool1d {
        MaxPool1d {
            size: self.pool_size,
            stride: self.pool_stride,
        }
    }

    pub fn stream_width(&self) -> usize {
        *self.stream_filters.last().expect("validated")
    }

    /// Time steps after the stream pooling layer.
    pub fn pooled_len(&self, window_len: usize) -> usize {
        self.pool().out_len(window_len)
    }
}

/// Which parameters receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPolicy {
    All,
    EncoderFrozen,
    SharedConvOnly,
}

impl FromStr for TrainPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TrainPolicy::All),
            "encoder_frozen" => Ok(TrainPolicy::EncoderFrozen),
            "shared_conv_only" => Ok(TrainPolicy::SharedConvOnly),
            other => Err(Error::InvalidArgument(format!("unknown trainable policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Stream(usize),
    Shared,
    Top,
}

impl TrainPolicy {
    pub fn trains(self, group: ParamGroup) -> bool {
        match (self, group) {
            (_, ParamGroup::Top) => true,
            (TrainPolicy::All, _) => true,
            (TrainPolicy::SharedConvOnly, ParamGroup::Shared) => true,
            _ => false,
        }
    }
}

/// Downstream classifier variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softmax layer on the embedding.
    Linear,
    /// Dense(1024) + SELU + softmax layer.
    Nonlinear1024,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Linear => "linear",
            HeadKind::Nonlinear1024 => "nonlinear_1024",
        })
    }
}

pub const NONLINEAR_HIDDEN: usize = 1024;

#[derive(Debug, Clone)]
pub struct Stream<R: Real> {
    pub convs: Vec<Conv1d<R>>,
}

#[derive(Debug, Clone)]
pub struct Encoder<R: Real> {
    pub streams: Vec<Stream<R>>,
    pub shared: Conv1d<R>,
}

#[derive(Debug, Clone)]
pub struct Decoder<R: Real> {
    pub hidden: Conv1d<R>,
    pub output: Conv1d<R>,
}

#[derive(Debug, Clone)]
pub struct PretextTop<R: Real> {
    pub task: TaskSpec,
    pub block_conv: Conv1d<R>,
    pub block_dense: Option<Dense<R>>,
    pub heads: Vec<Dense<R>>,
    pub decoders: Vec<Decoder<R>>,
}

#[derive(Debug, Clone)]
pub struct ClassifierTop<R: Real> {
    pub kind: HeadKind,
    pub hidden: Option<Dense<R>>,
    pub output: Dense<R>,
}

#[derive(Debug, Clone)]
pub enum Top<R: Real> {
    /// Encoder only; forward yields the embedding.
    None,
    Pretext(PretextTop<R>),
    Classifier(ClassifierTop<R>),
}

#[derive(Debug, Clone)]
pub struct Network<R: Real> {
    pub config: EncoderConfig,
    pub channels: Vec<usize>,
    pub window_len: usize,
    pub encoder: Encoder<R>,
    pub top: Top<R>,
    pub policy: TrainPolicy,
}

/// Per-modality input; `None` zero-fills that stream's feature maps.
pub type Inputs<'a, R> = [Option<ArrayView3<'a, R>>];

struct StreamCache<R: Real> {
    convs: Vec<Conv1dCache<R>>,
    acts: Vec<Array3<R>>,
    pool: MaxPoolCache,
    mask: Option<Array3<R>>,
}

pub struct EncoderCache<R: Real> {
    streams: Vec<Option<StreamCache<R>>>,
    shared: Conv1dCache<R>,
    shared_act: Array3<R>,
    pooled_argmax: Array2<usize>,
}

enum TopCache<R: Real> {
    None,
    Heads {
        block: Conv1dCache<R>,
        block_act: Array3<R>,
        block_argmax: Array2<usize>,
        pooled: Array2<R>,
        dense_act: Array2<R>,
    },
    Decoders {
        block: Conv1dCache<R>,
        block_act: Array3<R>,
        upsampled: Array3<R>,
        hidden: Vec<(Conv1dCache<R>, Array3<R>)>,
        outputs: Vec<Conv1dCache<R>>,
    },
    Classifier {
        z: Array2<R>,
        hidden: Option<Array2<R>>,
    },
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<R: Real> {
    /// `None` when the pass started from a precomputed embedding.
    encoder: Option<EncoderCache<R>>,
    top: TopCache<R>,
    /// Embedding `z_s` computed by this pass.
    pub embedding: Array2<R>,
}

impl<R: Real> Stream<R> {
    fn new(config: &EncoderConfig, in_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::with_capacity(config.stream_filters.len());
        let mut prev = in_ch;
        for (&f, &k) in config.stream_filters.iter().zip(&config.stream_kernels) {
            convs.push(Conv1d::new(prev, f, k, rng));
            prev = f;
        }
        Self { convs }
    }

    fn forward(
        &self,
        config: &EncoderConfig,
        x: ArrayView3<R>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array3<R>, StreamCache<R>) {
        let pool = config.pool();
        let mut convs = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut pool_cache = None;
        let mut h = x.to_owned();
        for (i, conv) in self.convs.iter().enumerate() {
            let (y, c) = conv.forward(h.view());
            convs.push(c);
            let a = selu(y);
            if i == 0 {
                let (p, pc) = pool.forward(a.view());
                pool_cache = Some(pc);
                acts.push(a);
                h = p;
            } else {
                acts.push(a.clone());
                h = a;
            }
        }
        let mask = match rng {
            Some(rng) if config.dropout > 0.0 => {
                let m = dropout_mask::<R, _>(h.dim(), config.dropout, rng);
                h *= &m;
                Some(m)
            }
            _ => None,
        };
        (
            h,
            StreamCache {
                convs,
                acts,
                pool: pool_cache.expect("at least one conv layer"),
                mask,
            },
        )
    }

    fn backward(
        &mut self,
        config: &EncoderConfig,
        cache: &StreamCache<R>,
        mut dy: Array3<R>,
        accumulate: bool,
    ) {
        if let Some(mask) = &cache.mask {
            dy *= mask;
        }
        let pool = config.pool();
        let n = self.convs.len();
        for i in (0..n).rev() {
            if i == 0 && n > 0 {
                dy = pool.backward(&cache.pool, dy.view());
            }
            let da = selu_backward(&cache.acts[i], dy);
            let need_dx = i > 0;
            match self.convs[i].backward(&cache.convs[i], da.view(), need_dx, accumulate) {
                Some(dx) => dy = dx,
                None => return,
            }
        }
    }
}

impl<R: Real> Encoder<R> {
    fn visit<'a>(&'a mut self, f: &mut dyn FnMut(ParamGroup, ParamSlot<'a, R>)) {
        for (m, stream) in self.streams.iter_mut().enumerate() {
            for (i, conv) in stream.convs.iter_mut().enumerate() {
                conv.visit(&format!("stream{m}.conv{i}"), &mut |slot| {
                    f(ParamGroup::Stream(m), slot)
                });
            }
        }
        self.shared
            .visit("shared", &mut |slot| f(ParamGroup::Shared, slot));
    }
}

impl<R: Real> Network<R> {
    /// Encoder with no head attached.
    pub fn encoder_only(
        config: &EncoderConfig,
        channels: &[usize],
        window_len: usize,
        seed: &SeedStream,
    ) -> Result<Self> {
        config.validate()?;
        if channels.is_empty() || channels.len() > 2 || channels.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network supports one or two modalities with >= 1 channel, got {channels:?}"
            )));
        }
        if window_len < config.pool_stride {
            return Err(Error::InvalidArgument(format!("window length {window_len} too short")));
        }
        let mut rng = seed.derive(0).rng();
        let streams = channels
            .iter()
            .map(|&c| Stream::new(config, c, &mut rng))
            .collect();
        let shared = Conv1d::new(
            config.stream_width() * channels.len(),
            config.shared_filters,
            config.shared_kernel,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            channels: channels.to_vec(),
            window_len,
            encoder: Encoder { streams, shared },
            top: Top::None,
            policy: TrainPolicy::All,
        })
    }

    /// Encoder plus the pre-training block and the heads `task` calls for.
    pub fn build(
        config: &EncoderConfig,
        task: &TaskSpec,
        channels: &[usize],
        window_len: usize,
        seed: &SeedStream,
    ) -> Result<Self> {
        task.task_id.check_modalities(channels.len())?;
        let mut net = Self::encoder_only(config, channels, window_len, seed)?;
        net.attach_pretext(task, seed)?;
        Ok(net)
    }

    pub fn attach_pretext(&mut self, task: &TaskSpec, seed: &SeedStream) -> Result<()> {
        task.task_id.check_modalities(self.channels.len())?;
        let config = &self.config;
        let mut rng = seed.derive(1).rng();
        let block_conv = Conv1d::new(
            config.shared_filters,
            config.block_filters,
            config.block_kernel,
            &mut rng,
        );
        let (block_dense, heads, decoders) = match task.head_layout {
            HeadLayout::Decoder => {
                let decoders = self
                    .channels
                    .iter()
                    .map(|&c| Decoder {
                        hidden: Conv1d::new(
                            config.block_filters,
                            config.decoder_filters,
                            config.decoder_kernel,
                            &mut rng,
                        ),
                        output: Conv1d::new(
                            config.decoder_filters,
                            c,
                            config.stream_kernels[0],
                            &mut rng,
                        ),
                    })
                    .collect();
                (None, Vec::new(), decoders)
            }
            HeadLayout::Embedding => (
                Some(Dense::new(config.block_filters, config.block_units, &mut rng)),
                Vec::new(),
                Vec::new(),
            ),
            HeadLayout::FusedSingleHead | HeadLayout::PerModalityHeads => {
                let dense = Dense::new(config.block_filters, config.block_units, &mut rng);
                let heads = task
                    .head_widths(&self.channels)
                    .into_iter()
                    .map(|w| Dense::new(config.block_units, w, &mut rng))
                    .collect();
                (Some(dense), heads, Vec::new())
            }
        };
        self.top = Top::Pretext(PretextTop {
            task: task.clone(),
            block_conv,
            block_dense,
            heads,
            decoders,
        });
        self.policy = TrainPolicy::All;
        Ok(())
    }

    /// Replaces whatever sits on the encoder with a downstream classifier.
    pub fn attach_classifier(
        &mut self,
        kind: HeadKind,
        num_classes: usize,
        seed: &SeedStream,
    ) -> Result<()> {
        if num_classes <= 1 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = seed.rng();
        let width = self.config.shared_filters;
        let (hidden, output) = match kind {
            HeadKind::Linear => (None, Dense::new(width, num_classes, &mut rng)),
            HeadKind::Nonlinear1024 => (
                Some(Dense::new(width, NONLINEAR_HIDDEN, &mut rng)),
                Dense::new(NONLINEAR_HIDDEN, num_classes, &mut rng),
            ),
        };
        self.top = Top::Classifier(ClassifierTop {
            kind,
            hidden,
            output,
        });
        self.policy = match kind {
            HeadKind::Linear => TrainPolicy::EncoderFrozen,
            HeadKind::Nonlinear1024 => TrainPolicy::All,
        };
        Ok(())
    }

    pub fn set_trainable(&mut self, policy: TrainPolicy) {
        self.policy = policy;
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.shared_filters
    }

    /// Stream that embeds a triplet negative drawn from `negative_modality`
    /// for an anchor of modality `anchor`: the anchor's own stream whenever
    /// the channel counts allow, so all three embeddings share one path.
    pub fn triplet_negative_slot(&self, anchor: usize, negative_modality: usize) -> usize {
        if self.channels[anchor] == self.channels[negative_modality] {
            anchor
        } else {
            negative_modality
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.channels.len()
    }

    fn check_inputs(&self, inputs: &Inputs<'_, R>) -> Result<usize> {
        if inputs.len() != self.channels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for a {}-stream network",
                inputs.len(),
                self.channels.len()
            )));
        }
        let mut batch = None;
        for (m, x) in inputs.iter().enumerate() {
            if let Some(x) = x {
                let (b, c, l) = x.dim();
                if c != self.channels[m] || l != self.window_len {
                    return Err(Error::ShapeMismatch(format!(
                        "modality {m}: got [{c} × {l}], expected [{} × {}]",
                        self.channels[m], self.window_len
                    )));
                }
                if batch.is_some_and(|n| n != b) {
                    return Err(Error::ShapeMismatch("modality batch sizes differ".into()));
                }
                batch = Some(b);
            }
        }
        batch.ok_or_else(|| Error::InvalidArgument("no modality present".into()))
    }

    /// Concatenated stream outputs `[B × (96·M) × T]`. Absent streams are zero.
    fn streams_forward(
        &self,
        inputs: &Inputs<'_, R>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array3<R>, Vec<Option<StreamCache<R>>>)> {
        let batch = self.check_inputs(inputs)?;
        let t = self.config.pooled_len(self.window_len);
        let width = self.config.stream_width();
        let mut feats = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for (m, x) in inputs.iter().enumerate() {
            match x {
                Some(x) => {
                    let (f, c) =
                        self.encoder.streams[m].forward(&self.config, x.view(), rng.as_deref_mut());
                    feats.push(f);
                    caches.push(Some(c));
                }
                None => {
                    feats.push(Array3::zeros((batch, width, t)));
                    caches.push(None);
                }
            }
        }
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let cat = concatenate(Axis(1), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok((cat, caches))
    }

    /// Modality-specific features (inference mode), the frozen prefix when
    /// only the shared layer is trained.
    pub fn stream_features(&self, inputs: &Inputs<'_, R>) -> Result<Array3<R>> {
        Ok(self.streams_forward(inputs, None)?.0)
    }

    fn shared_forward(&self, features: ArrayView3<R>) -> (Array3<R>, Conv1dCache<R>, Array2<R>, Array2<usize>) {
        let (y, cache) = self.encoder.shared.forward(features);
        let act = selu(y);
        let (z, arg) = global_max_pool(act.view());
        (act, cache, z, arg)
    }

    /// Training/inference forward pass. Dropout is active iff `rng` is given.
    /// Outputs per top: pretext heads (decoder outputs flattened to
    /// `[B × C·L]`, the triplet embedding as a single output), classifier
    /// logits, or the embedding when no head is attached.
    pub fn forward(
        &self,
        inputs: &Inputs<'_, R>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Array2<R>>, ForwardCache<R>)> {
        let (features, stream_caches) = self.streams_forward(inputs, rng)?;
        self.forward_tail(features.view(), stream_caches)
    }

    /// Forward from precomputed stream features (streams treated as frozen).
    pub fn forward_from_features(
        &self,
        features: ArrayView3<R>,
    ) -> Result<(Vec<Array2<R>>, ForwardCache<R>)> {
        let expected = self.config.stream_width() * self.channels.len();
        if features.len_of(Axis(1)) != expected {
            return Err(Error::ShapeMismatch(format!(
                "stream features have {} channels, expected {expected}",
                features.len_of(Axis(1))
            )));
        }
        let none = (0..self.channels.len()).map(|_| None).collect();
        self.forward_tail(features, none)
    }

    fn forward_tail(
        &self,
        features: ArrayView3<R>,
        stream_caches: Vec<Option<StreamCache<R>>>,
    ) -> Result<(Vec<Array2<R>>, ForwardCache<R>)> {
        let (shared_act, shared_cache, z, pooled_argmax) = self.shared_forward(features);
        let (outputs, top) = match &self.top {
            Top::None => (vec![z.clone()], TopCache::None),
            Top::Classifier(c) => {
                let (logits, hidden) = match &c.hidden {
                    Some(h) => {
                        let a = selu(h.forward(z.view()));
                        (c.output.forward(a.view()), Some(a))
                    }
                    None => (c.output.forward(z.view()), None),
                };
                (
                    vec![logits],
                    TopCache::Classifier {
                        z: z.clone(),
                        hidden,
                    },
                )
            }
            Top::Pretext(p) => {
                let (by, block) = p.block_conv.forward(shared_act.view());
                let block_act = selu(by);
                if p.task.head_layout == HeadLayout::Decoder {
                    let upsampled =
                        upsample(block_act.view(), self.config.pool_stride, self.window_len);
                    let mut outputs = Vec::with_capacity(p.decoders.len());
                    let mut hidden = Vec::with_capacity(p.decoders.len());
                    let mut out_caches = Vec::with_capacity(p.decoders.len());
                    for d in &p.decoders {
                        let (hy, hc) = d.hidden.forward(upsampled.view());
                        let ha = selu(hy);
                        let (oy, oc) = d.output.forward(ha.view());
                        let (b, c, l) = oy.dim();
                        outputs.push(
                            oy.into_shape_with_order((b, c * l))
                                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
                        );
                        hidden.push((hc, ha));
                        out_caches.push(oc);
                    }
                    (
                        outputs,
                        TopCache::Decoders {
                            block,
                            block_act,
                            upsampled,
                            hidden,
                            outputs: out_caches,
                        },
                    )
                } else {
                    let (pooled, block_argmax) = global_max_pool(block_act.view());
                    let dense = p.block_dense.as_ref().expect("dense block for non-decoder task");
                    let dense_act = selu(dense.forward(pooled.view()));
                    let outputs = if p.task.head_layout == HeadLayout::Embedding {
                        vec![dense_act.clone()]
                    } else {
                        p.heads.iter().map(|h| h.forward(dense_act.view())).collect()
                    };
                    (
                        outputs,
                        TopCache::Heads {
                            block,
                            block_act,
                            block_argmax,
                            pooled,
                            dense_act,
                        },
                    )
                }
            }
        };
        Ok((
            outputs,
            ForwardCache {
                encoder: Some(EncoderCache {
                    streams: stream_caches,
                    shared: shared_cache,
                    shared_act,
                    pooled_argmax,
                }),
                top,
                embedding: z,
            },
        ))
    }

    /// Accumulates gradients for `d loss / d outputs` into every parameter the
    /// current policy trains.
    pub fn backward(&mut self, cache: &ForwardCache<R>, grads: &[Array2<R>]) -> Result<()> {
        let policy = self.policy;
        // gradient w.r.t. the shared activation maps, plus any through z
        let mut d_shared_act: Option<Array3<R>> = None;
        let mut dz: Option<Array2<R>> = None;
        match (&mut self.top, &cache.top) {
            (Top::None, TopCache::None) => {
                dz = Some(single(grads)?.clone());
            }
            (Top::Classifier(c), TopCache::Classifier { z, hidden }) => {
                let dlogits = single(grads)?;
                let need = policy != TrainPolicy::EncoderFrozen;
                match (&mut c.hidden, hidden) {
                    (Some(h), Some(a)) => {
                        let da = c
                            .output
                            .backward(a.view(), dlogits.view(), true, true)
                            .expect("input grad requested");
                        let dh = selu_backward(a, da);
                        dz = h.backward(z.view(), dh.view(), need, true);
                    }
                    _ => {
                        dz = c.output.backward(z.view(), dlogits.view(), need, true);
                    }
                }
            }
            (
                Top::Pretext(p),
                TopCache::Heads {
                    block,
                    block_act,
                    block_argmax,
                    pooled,
                    dense_act,
                },
            ) => {
                let d_dense_act = if p.task.head_layout == HeadLayout::Embedding {
                    single(grads)?.clone()
                } else {
                    if grads.len() != p.heads.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "{} gradients for {} heads",
                            grads.len(),
                            p.heads.len()
                        )));
                    }
                    let mut acc = Array2::<R>::zeros(dense_act.raw_dim());
                    for (h, g) in p.heads.iter_mut().zip(grads) {
                        acc += &h
                            .backward(dense_act.view(), g.view(), true, true)
                            .expect("input grad requested");
                    }
                    acc
                };
                let dense = p.block_dense.as_mut().expect("dense block");
                let d_pre = selu_backward(dense_act, d_dense_act);
                let d_pooled = dense
                    .backward(pooled.view(), d_pre.view(), true, true)
                    .expect("input grad requested");
                let d_block_act =
                    global_max_pool_backward(block_argmax, d_pooled.view(), block_act.len_of(Axis(2)));
                let d_block = selu_backward(block_act, d_block_act);
                d_shared_act = p.block_conv.backward(block, d_block.view(), true, true);
            }
            (
                Top::Pretext(p),
                TopCache::Decoders {
                    block,
                    block_act,
                    upsampled,
                    hidden,
                    outputs,
                },
            ) => {
                if grads.len() != p.decoders.len() {
                    return Err(Error::ShapeMismatch("decoder gradient count".into()));
                }
                let mut d_up = Array3::<R>::zeros(upsampled.raw_dim());
                for (((d, g), (hc, ha)), oc) in
                    p.decoders.iter_mut().zip(grads).zip(hidden).zip(outputs)
                {
                    let (b, _, l) = ha.dim();
                    let c = d.output.out_channels();
                    let g3 = g
                        .view()
                        .into_shape_with_order((b, c, l))
                        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                    let dha = d.output.backward(oc, g3, true, true).expect("input grad");
                    let dhy = selu_backward(ha, dha);
                    d_up += &d.hidden.backward(hc, dhy.view(), true, true).expect("input grad");
                }
                let d_block_act =
                    upsample_backward(d_up.view(), self.config.pool_stride, block_act.len_of(Axis(2)));
                let d_block = selu_backward(block_act, d_block_act);
                d_shared_act = p.block_conv.backward(block, d_block.view(), true, true);
            }
            _ => return Err(Error::InvalidArgument("forward cache does not match network top".into())),
        }

        if policy == TrainPolicy::EncoderFrozen {
            return Ok(());
        }
        let enc = cache.encoder.as_ref().ok_or_else(|| {
            Error::InvalidArgument("pass started from an embedding; encoder cannot be trained".into())
        })?;
        let t = enc.shared_act.len_of(Axis(2));
        let mut d_act = d_shared_act.unwrap_or_else(|| {
            Array3::zeros((cache.embedding.nrows(), self.config.shared_filters, t))
        });
        if let Some(dz) = dz {
            d_act += &global_max_pool_backward(&enc.pooled_argmax, dz.view(), t);
        }
        let d_shared = selu_backward(&enc.shared_act, d_act);
        let train_streams = policy == TrainPolicy::All
            && enc.streams.iter().any(Option::is_some);
        let d_features =
            self.encoder
                .shared
                .backward(&enc.shared, d_shared.view(), train_streams, true);
        if let Some(d_features) = d_features {
            let width = self.config.stream_width();
            for (m, (stream, sc)) in self
                .encoder
                .streams
                .iter_mut()
                .zip(&enc.streams)
                .enumerate()
            {
                if let Some(sc) = sc {
                    let d = d_features
                        .slice(s![.., m * width..(m + 1) * width, ..])
                        .to_owned();
                    stream.backward(&self.config, sc, d, true);
                }
            }
        }
        Ok(())
    }

    /// Classifier logits from precomputed embeddings. Only the classifier can
    /// be trained from the resulting cache.
    pub fn forward_from_embedding(&self, z: ArrayView2<R>) -> Result<(Array2<R>, ForwardCache<R>)> {
        let c = match &self.top {
            Top::Classifier(c) => c,
            _ => return Err(Error::InvalidArgument("no classifier attached".into())),
        };
        if z.ncols() != self.embedding_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding width {} vs {}",
                z.ncols(),
                self.embedding_dim()
            )));
        }
        let z = z.to_owned();
        let (logits, hidden) = match &c.hidden {
            Some(h) => {
                let a = selu(h.forward(z.view()));
                (c.output.forward(a.view()), Some(a))
            }
            None => (c.output.forward(z.view()), None),
        };
        Ok((
            logits,
            ForwardCache {
                encoder: None,
                top: TopCache::Classifier { z: z.clone(), hidden },
                embedding: z,
            },
        ))
    }

    /// Embedding `z_s` in inference mode.
    pub fn encode(&self, inputs: &Inputs<'_, R>) -> Result<Array2<R>> {
        let (features, _) = self.streams_forward(inputs, None)?;
        Ok(self.shared_forward(features.view()).2)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.grad.iter_mut().for_each(|g| *g = R::zero()));
    }

    /// Visits every parameter with its group. Order is stable for a given
    /// architecture.
    pub fn visit_params<'a>(&'a mut self, f: &mut dyn FnMut(ParamGroup, ParamSlot<'a, R>)) {
        self.encoder.visit(f);
        match &mut self.top {
            Top::None => {}
            Top::Pretext(p) => {
                let mut g = |slot| f(ParamGroup::Top, slot);
                p.block_conv.visit("block.conv", &mut g);
                if let Some(d) = &mut p.block_dense {
                    d.visit("block.dense", &mut g);
                }
                for (i, h) in p.heads.iter_mut().enumerate() {
                    h.visit(&format!("head{i}"), &mut g);
                }
                for (i, d) in p.decoders.iter_mut().enumerate() {
                    d.hidden.visit(&format!("decoder{i}.hidden"), &mut g);
                    d.output.visit(&format!("decoder{i}.output"), &mut g);
                }
            }
            Top::Classifier(c) => {
                let mut g = |slot| f(ParamGroup::Top, slot);
                if let Some(h) = &mut c.hidden {
                    h.visit("classifier.hidden", &mut g);
                }
                c.output.visit("classifier.output", &mut g);
            }
        }
    }

    /// Encoder parameters only (modality streams and the shared layer).
    pub fn visit_encoder<'a>(&'a mut self, f: &mut dyn FnMut(ParamGroup, ParamSlot<'a, R>)) {
        self.encoder.visit(f);
    }

    /// Named copies of the encoder parameters.
    pub fn encoder_state(&mut self) -> Vec<(String, Vec<usize>, Vec<R>)> {
        let mut out = Vec::new();
        self.visit_encoder(&mut |_, p| out.push((p.name, p.shape, p.value.to_vec())));
        out
    }

    pub fn param_count(&mut self, trainable_only: bool) -> usize {
        let policy = self.policy;
        let mut n = 0;
        self.visit_params(&mut |g, p| {
            if !trainable_only || policy.trains(g) {
                n += p.value.len();
            }
        });
        n
    }

    /// `β · Σ w²` over the weights the current policy trains.
    pub fn l2_penalty(&mut self) -> R {
        let beta = R::c(self.config.weight_decay);
        let policy = self.policy;
        let mut sum = R::zero();
        self.visit_params(&mut |g, p| {
            if p.is_weight && policy.trains(g) {
                sum += p.value.iter().map(|&w| w * w).sum::<R>();
            }
        });
        beta * sum
    }

    /// Adds `∂(β·Σw²)/∂w = 2βw` to the gradients of trained weights.
    pub fn add_l2_grad(&mut self) {
        let two_beta = R::c(2.0 * self.config.weight_decay);
        let policy = self.policy;
        self.visit_params(&mut |g, p| {
            if p.is_weight && policy.trains(g) {
                for (gr, &w) in p.grad.iter_mut().zip(p.value.iter()) {
                    *gr += two_beta * w;
                }
            }
        });
    }

    /// Copy of the network in another element type.
    pub fn cast<S: Real>(&self) -> Network<S> {
        fn conv<R: Real, S: Real>(c: &Conv1d<R>) -> Conv1d<S> {
            Conv1d {
                weight: c.weight.mapv(|v| S::c(v.as_f64())),
                bias: c.bias.mapv(|v| S::c(v.as_f64())),
                grad_weight: ndarray::Array3::zeros(c.weight.raw_dim()),
                grad_bias: ndarray::Array1::zeros(c.bias.raw_dim()),
            }
        }
        fn dense<R: Real, S: Real>(d: &Dense<R>) -> Dense<S> {
            Dense {
                weight: d.weight.mapv(|v| S::c(v.as_f64())),
                bias: d.bias.mapv(|v| S::c(v.as_f64())),
                grad_weight: ndarray::Array2::zeros(d.weight.raw_dim()),
                grad_bias: ndarray::Array1::zeros(d.bias.raw_dim()),
            }
        }
        Network {
            config: self.config.clone(),
            channels: self.channels.clone(),
            window_len: self.window_len,
            encoder: Encoder {
                streams: self
                    .encoder
                    .streams
                    .iter()
                    .map(|s| Stream {
                        convs: s.convs.iter().map(conv).collect(),
                    })
                    .collect(),
                shared: conv(&self.encoder.shared),
            },
            top: match &self.top {
                Top::None => Top::None,
                Top::Pretext(p) => Top::Pretext(PretextTop {
                    task: p.task.clone(),
                    block_conv: conv(&p.block_conv),
                    block_dense: p.block_dense.as_ref().map(dense),
                    heads: p.heads.iter().map(dense).collect(),
                    decoders: p
                        .decoders
                        .iter()
                        .map(|d| Decoder {
                            hidden: conv(&d.hidden),
                            output: conv(&d.output),
                        })
                        .collect(),
                }),
                Top::Classifier(c) => Top::Classifier(ClassifierTop {
                    kind: c.kind,
                    hidden: c.hidden.as_ref().map(dense),
                    output: dense(&c.output),
                }),
            },
            policy: self.policy,
        }
    }
}

fn single<R: Real>(grads: &[Array2<R>]) -> Result<&Array2<R>> {
    match grads {
        [g] => Ok(g),
        _ => Err(Error::ShapeMismatch(format!(
            "expected one output gradient, got {}",
            grads.len()
        ))),
    }
}
