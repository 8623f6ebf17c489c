use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::LabeledSet;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{Adam, Checkpoint, EncoderConfig, ForwardCache, Network, Provenance};
use crate::seed::SeedStream;
use crate::selftasks::{compute_task_loss, cross_entropy, generate};
use crate::types::{PretextBatch, Sample, SignalBatch, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    /// Validation pretext loss before the first update.
    pub initial_val_loss: Option<f64>,
    pub history: Vec<EpochLog>,
}

impl PretrainOutcome {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.history
            .iter()
            .filter_map(|e| e.val_loss)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
    }
}

fn views(mods: &[Array3<f32>]) -> Vec<Option<ArrayView3<'_, f32>>> {
    mods.iter().map(|m| Some(m.view())).collect()
}

fn single<'a>(mods: &'a [Array3<f32>], m: usize, x: &'a Array3<f32>) -> Vec<Option<ArrayView3<'a, f32>>> {
    (0..mods.len()).map(|k| if k == m { Some(x.view()) } else { None }).collect()
}

fn check_finite(value: f64, epoch: usize, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        log::error!("pretext loss diverged at epoch {epoch} step {step}: {value}");
        Err(Error::Diverged { epoch, step, value })
    }
}

/// Task loss of one generated batch. With `backprop` the gradients are
/// accumulated into `net`.
pub fn pretext_loss(
    net: &mut Network<f32>,
    spec: &TaskSpec,
    batch: &PretextBatch,
    mut rng: Option<&mut ChaCha8Rng>,
    backprop: bool,
) -> Result<f64> {
    match batch {
        PretextBatch::Labeled(b) => {
            let (outputs, cache) = net.forward(&views(&b.inputs.modalities), rng)?;
            let (loss, grads) = compute_task_loss(spec, &outputs, &b.targets)?;
            if backprop {
                net.backward(&cache, &grads)?;
            }
            Ok(f64::from(loss))
        }
        PretextBatch::Triplet(t) => {
            let mods = &t.anchors;
            let mut outputs = Vec::with_capacity(3 * mods.len());
            let mut caches: Vec<ForwardCache<f32>> = Vec::with_capacity(3 * mods.len());
            for m in 0..mods.len() {
                let n = net.triplet_negative_slot(m, t.negative_modality[m]);
                for (modality, x) in [(m, &t.anchors[m]), (m, &t.positives[m]), (n, &t.negatives[m])] {
                    let (mut out, cache) =
                        net.forward(&single(mods, modality, x), rng.as_deref_mut())?;
                    outputs.push(out.pop().expect("embedding output"));
                    caches.push(cache);
                }
            }
            let (loss, grads) = compute_task_loss(spec, &outputs, &[])?;
            if backprop {
                for (cache, g) in caches.iter().zip(grads) {
                    net.backward(cache, &[g])?;
                }
            }
            Ok(f64::from(loss))
        }
    }
}

fn chunks(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.div_ceil(size)).map(move |c| (c * size..((c + 1) * size).min(n)).collect())
}

/// Mean pretext loss over `data` with fixed generator seeds.
fn pretext_eval(net: &mut Network<f32>, spec: &TaskSpec, data: &SignalBatch, batch: usize, seed: &SeedStream) -> Result<f64> {
    let mut total = 0.0;
    let n = data.len();
    for (c, idx) in chunks(n, batch).enumerate() {
        let sub = data.select(&idx);
        let gen = generate(spec, &sub, &seed.derive(c as u64))?;
        total += pretext_loss(net, spec, &gen, None, false)? * idx.len() as f64;
    }
    Ok(total / n as f64)
}

/// Self-supervised pre-training on unlabeled windows; returns the encoder
/// checkpoint (pre-training block and heads dropped). Keeps the encoder with
/// the lowest validation pretext loss when `val` is nonempty.
pub fn pretrain(
    train: &[Sample],
    val: &[Sample],
    spec: &TaskSpec,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    mut provenance: Provenance,
) -> Result<PretrainOutcome> {
    config.validate()?;
    let data = SignalBatch::from_samples(train)?;
    spec.task_id.check_modalities(data.num_modalities())?;
    let val_data = if val.is_empty() {
        None
    } else {
        Some(SignalBatch::from_samples(val)?)
    };
    let seed = SeedStream::new(config.seed);
    let mut net = Network::<f32>::build(
        encoder,
        spec,
        &data.channels(),
        data.window_len(),
        &seed.derive(0),
    )?;
    let mut adam = Adam::new(config.learning_rate);
    let eval_seed = seed.derive(2);
    let initial_val_loss = match &val_data {
        Some(v) => Some(pretext_eval(&mut net, spec, v, config.batch_size, &eval_seed)?),
        None => None,
    };
    let mut best = (initial_val_loss.unwrap_or(f64::INFINITY), net.clone(), 0usize);
    let mut history = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut seed.derive_path(&[1, epoch as u64]).rng());
        let mut sum = 0.0;
        let mut steps = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let sub = data.select(idx);
            let gen = generate(spec, &sub, &seed.derive_path(&[3, epoch as u64, step as u64]))?;
            let mut drop_rng = seed.derive_path(&[4, epoch as u64, step as u64]).rng();
            net.zero_grad();
            let loss = pretext_loss(&mut net, spec, &gen, Some(&mut drop_rng), true)?;
            let total = loss + f64::from(net.l2_penalty());
            check_finite(total, epoch, step)?;
            net.add_l2_grad();
            adam.step(&mut net);
            sum += loss;
            steps += 1;
        }
        let train_loss = sum / steps.max(1) as f64;
        let val_loss = match &val_data {
            Some(v) => Some(pretext_eval(&mut net, spec, v, config.batch_size, &eval_seed)?),
            None => None,
        };
        log::info!("{} epoch {epoch}: train {train_loss:.4} val {val_loss:?}", spec.task_id);
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            Some(v) if v.is_finite() && v < best.0 => {
                best = (v, net.clone(), epoch + 1);
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if config.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
            None => best = (f64::INFINITY, net.clone(), epoch + 1),
        }
    }
    let (_, mut best_net, epochs) = best;
    provenance.epochs = epochs;
    provenance.seed = config.seed;
    provenance.subjects = crate::ingest::subjects_of(train);
    let checkpoint = Checkpoint::from_network(&mut best_net, Some(spec.clone()), provenance);
    Ok(PretrainOutcome {
        checkpoint,
        initial_val_loss,
        history,
    })
}

/// What the classifier trainer feeds the network.
pub(crate) enum Feed<'a> {
    /// Raw windows through the whole network.
    Raw(&'a [Array3<f32>]),
    /// Cached stream features; only the shared layer and head run.
    Features(&'a Array3<f32>),
    /// Cached embeddings; only the head runs.
    Embeddings(&'a Array2<f32>),
}

impl Feed<'_> {
    pub(crate) fn len(&self) -> usize {
        match self {
            Feed::Raw(m) => m[0].len_of(Axis(0)),
            Feed::Features(f) => f.len_of(Axis(0)),
            Feed::Embeddings(z) => z.nrows(),
        }
    }

    fn forward(
        &self,
        net: &Network<f32>,
        idx: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f32>, ForwardCache<f32>)> {
        match self {
            Feed::Raw(mods) => {
                let sel: Vec<Array3<f32>> = mods.iter().map(|m| m.select(Axis(0), idx)).collect();
                let (mut out, cache) = net.forward(&views(&sel), rng)?;
                Ok((out.pop().expect("logits"), cache))
            }
            Feed::Features(f) => {
                let sel = f.select(Axis(0), idx);
                let (mut out, cache) = net.forward_from_features(sel.view())?;
                Ok((out.pop().expect("logits"), cache))
            }
            Feed::Embeddings(z) => net.forward_from_embedding(z.select(Axis(0), idx).view()),
        }
    }
}

fn mean_ce(net: &Network<f32>, feed: &Feed, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for idx in chunks(feed.len(), 256) {
        let (logits, _) = feed.forward(net, &idx, None)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        total += f64::from(cross_entropy(logits.view(), &y)?.value) * idx.len() as f64;
    }
    Ok(total / feed.len() as f64)
}

/// Trains the attached classifier (and whatever the policy unfreezes) with
/// cross-entropy. Early stopping restores the best validation epoch.
pub(crate) fn fit_classifier(
    net: &mut Network<f32>,
    feed: &Feed,
    labels: &[usize],
    val: Option<(&Feed, &[usize])>,
    config: &TrainConfig,
    seed: &SeedStream,
) -> Result<usize> {
    let n = feed.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let use_val = val.is_some() && config.patience.is_some();
    let mut best: Option<(f64, Network<f32>, usize)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut seed.derive_path(&[0, epoch as u64]).rng());
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let mut rng = seed.derive_path(&[1, epoch as u64, step as u64]).rng();
            net.zero_grad();
            let (logits, cache) = feed.forward(net, idx, Some(&mut rng))?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = cross_entropy(logits.view(), &y)?;
            check_finite(f64::from(loss.value), epoch, step)?;
            net.backward(&cache, &[loss.grad])?;
            net.add_l2_grad();
            adam.step(net);
        }
        epochs_run = epoch + 1;
        if let (true, Some((vfeed, vlabels))) = (use_val, val) {
            let v = mean_ce(net, vfeed, vlabels)?;
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, net.clone(), epochs_run));
                stale = 0;
            } else {
                stale += 1;
                if config.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        }
    }
    if let Some((_, b, e)) = best {
        *net = b;
        epochs_run = e;
    }
    Ok(epochs_run)
}

/// Argmax class per example, in inference mode.
pub(crate) fn predict_feed(net: &Network<f32>, feed: &Feed) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(feed.len());
    for idx in chunks(feed.len(), 256) {
        let (logits, _) = feed.forward(net, &idx, None)?;
        out.extend(logits.rows().into_iter().map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        }));
    }
    Ok(out)
}

pub fn predict(net: &Network<f32>, set: &LabeledSet) -> Result<Vec<usize>> {
    predict_feed(net, &Feed::Raw(set.modalities()))
}

/// Embeddings of a whole set in inference mode.
pub(crate) fn embed(net: &Network<f32>, mods: &[Array3<f32>]) -> Result<Array2<f32>> {
    let n = mods[0].len_of(Axis(0));
    let mut parts = Vec::new();
    for idx in chunks(n, 256) {
        let sel: Vec<Array3<f32>> = mods.iter().map(|m| m.select(Axis(0), &idx)).collect();
        parts.push(net.encode(&views(&sel))?);
    }
    let v: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &v).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub(crate) fn stream_features(net: &Network<f32>, mods: &[Array3<f32>]) -> Result<Array3<f32>> {
    let n = mods[0].len_of(Axis(0));
    let mut parts = Vec::new();
    for idx in chunks(n, 256) {
        let sel: Vec<Array3<f32>> = mods.iter().map(|m| m.select(Axis(0), &idx)).collect();
        parts.push(net.stream_features(&views(&sel))?);
    }
    let v: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &v).map_err(|e| Error::ShapeMismatch(e.to_string()))
}
