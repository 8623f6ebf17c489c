//! Pretext and downstream losses with analytic gradients w.r.t. head outputs.
//!
//! Classification and logistic heads emit raw logits; the softmax and the
//! sigmoid live inside the losses so both are evaluated in a stable form.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::network::Real;
use crate::types::{LossKind, TaskId, TaskSpec, Target};

/// Scalar loss and its gradient w.r.t. the head output it was computed from.
#[derive(Debug, Clone)]
pub struct LossOutput<R: Real> {
    pub value: R,
    pub grad: Array2<R>,
}

fn check_batch<R: Real>(output: &ArrayView2<R>, n: usize) -> Result<()> {
    if output.nrows() != n || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "head output batch {} vs target batch {n}",
            output.nrows()
        )));
    }
    Ok(())
}

pub fn log_softmax<R: Real>(logits: ArrayView2<R>) -> Array2<R> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(R::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<R>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax<R: Real>(logits: ArrayView2<R>) -> Array2<R> {
    log_softmax(logits).mapv(|v| v.exp())
}

/// Class-averaged negative log-likelihood, `−(1/K)·Σ_k y_k·log p_k` with
/// one-hot `y`, averaged over the batch.
pub fn nll<R: Real>(logits: ArrayView2<R>, labels: &[usize]) -> Result<LossOutput<R>> {
    nll_scaled(logits, labels, true)
}

/// Standard categorical cross-entropy (no `1/K` factor), used for the
/// downstream classifiers.
pub fn cross_entropy<R: Real>(logits: ArrayView2<R>, labels: &[usize]) -> Result<LossOutput<R>> {
    nll_scaled(logits, labels, false)
}

fn nll_scaled<R: Real>(
    logits: ArrayView2<R>,
    labels: &[usize],
    class_average: bool,
) -> Result<LossOutput<R>> {
    check_batch(&logits, labels.len())?;
    let k = logits.ncols();
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::ShapeMismatch(format!("label {bad} outside {k} classes")));
    }
    let logp = log_softmax(logits);
    let n = R::c(labels.len() as f64);
    let scale = if class_average { R::c(k as f64) * n } else { n };
    let mut value = R::zero();
    let mut grad = logp.mapv(|v| v.exp());
    for (i, &y) in labels.iter().enumerate() {
        value -= logp[[i, y]];
        grad[[i, y]] -= R::one();
    }
    grad.mapv_inplace(|g| g / scale);
    Ok(LossOutput {
        value: value / scale,
        grad,
    })
}

/// Binary cross-entropy on logistic outputs with soft targets in `[0, 1]`.
pub fn bce<R: Real>(logits: ArrayView2<R>, targets: ArrayView2<R>) -> Result<LossOutput<R>> {
    check_batch(&logits, targets.nrows())?;
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch("bce output/target shapes differ".into()));
    }
    let count = R::c(logits.len() as f64);
    let mut value = R::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    Zip::from(&mut grad)
        .and(&logits)
        .and(&targets)
        .for_each(|g, &o, &y| {
            // softplus(o) − y·o == −(y·log σ(o) + (1−y)·log(1−σ(o)))
            let softplus = if o > R::zero() {
                o + (-o).exp().ln_1p()
            } else {
                o.exp().ln_1p()
            };
            value += softplus - y * o;
            let sigma = R::one() / (R::one() + (-o).exp());
            *g = (sigma - y) / count;
        });
    Ok(LossOutput {
        value: value / count,
        grad,
    })
}

/// Elementwise Huber loss on `o = output − target`, averaged over elements.
pub fn huber<R: Real>(
    output: ArrayView2<R>,
    targets: ArrayView2<R>,
    delta: R,
) -> Result<LossOutput<R>> {
    check_batch(&output, targets.nrows())?;
    if output.shape() != targets.shape() {
        return Err(Error::ShapeMismatch("huber output/target shapes differ".into()));
    }
    let count = R::c(output.len() as f64);
    let half = R::c(0.5);
    let mut value = R::zero();
    let mut grad = Array2::zeros(output.raw_dim());
    Zip::from(&mut grad)
        .and(&output)
        .and(&targets)
        .for_each(|g, &p, &y| {
            let o = p - y;
            if o.abs() <= delta {
                value += half * o * o;
                *g = o / count;
            } else {
                value += delta * (o.abs() - half * delta);
                *g = delta * o.signum() / count;
            }
        });
    Ok(LossOutput {
        value: value / count,
        grad,
    })
}

/// Mean squared error over all elements.
pub fn mse<R: Real>(output: ArrayView2<R>, targets: ArrayView2<R>) -> Result<LossOutput<R>> {
    check_batch(&output, targets.nrows())?;
    if output.shape() != targets.shape() {
        return Err(Error::ShapeMismatch("mse output/target shapes differ".into()));
    }
    let count = R::c(output.len() as f64);
    let diff = &output - &targets;
    let value = diff.iter().map(|&d| d * d).sum::<R>() / count;
    let grad = diff.mapv(|d| R::c(2.0) * d / count);
    Ok(LossOutput { value, grad })
}

/// Gradients of the symmetric triplet loss w.r.t. each embedding batch.
#[derive(Debug, Clone)]
pub struct TripletLossOutput<R: Real> {
    pub value: R,
    pub grad_anchor: Array2<R>,
    pub grad_positive: Array2<R>,
    pub grad_negative: Array2<R>,
}

/// `max[0, D(a,p) − ½(D(a,n) + D(p,n)) + α]` with squared Euclidean `D`,
/// averaged over the batch.
pub fn symmetric_triplet_loss<R: Real>(
    anchor: ArrayView2<R>,
    positive: ArrayView2<R>,
    negative: ArrayView2<R>,
    margin: R,
) -> Result<TripletLossOutput<R>> {
    if margin < R::zero() {
        return Err(Error::InvalidArgument("triplet margin must be non-negative".into()));
    }
    if anchor.shape() != positive.shape() || anchor.shape() != negative.shape() {
        return Err(Error::ShapeMismatch(format!(
            "triplet embeddings {:?} / {:?} / {:?}",
            anchor.shape(),
            positive.shape(),
            negative.shape()
        )));
    }
    let n = anchor.nrows();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty triplet batch".into()));
    }
    let nf = R::c(n as f64);
    let half = R::c(0.5);
    let two = R::c(2.0);
    let mut value = R::zero();
    let mut ga = Array2::zeros(anchor.raw_dim());
    let mut gp = Array2::zeros(anchor.raw_dim());
    let mut gn = Array2::zeros(anchor.raw_dim());
    for i in 0..n {
        let (a, p, q) = (anchor.row(i), positive.row(i), negative.row(i));
        let ap = &a - &p;
        let an = &a - &q;
        let pn = &p - &q;
        let d_ap = ap.dot(&ap);
        let d_an = an.dot(&an);
        let d_pn = pn.dot(&pn);
        let h = d_ap - half * (d_an + d_pn) + margin;
        if h > R::zero() {
            value += h;
            ga.row_mut(i)
                .assign(&((&ap * two - &an) / nf));
            gp.row_mut(i)
                .assign(&((-(&ap * two) - &pn) / nf));
            gn.row_mut(i).assign(&((&an + &pn) / nf));
        }
    }
    Ok(TripletLossOutput {
        value: value / nf,
        grad_anchor: ga,
        grad_positive: gp,
        grad_negative: gn,
    })
}

/// Standardizes each target column across the batch; constant columns map to 0.
pub fn standardize_columns(values: ArrayView2<f32>) -> Array2<f32> {
    let n = values.nrows() as f64;
    let mut out = values.to_owned();
    for mut col in out.columns_mut() {
        let mean = col.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = col.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        col.mapv_inplace(|v| {
            if std > 1e-8 {
                ((f64::from(v) - mean) / std) as f32
            } else {
                0.0
            }
        });
    }
    out
}

fn to_real<R: Real>(a: ArrayView2<f32>) -> Array2<R> {
    a.mapv(R::from_f32)
}

/// Loss of one head given its output and supervision.
pub fn head_loss<R: Real>(
    kind: LossKind,
    output: ArrayView2<R>,
    target: &Target,
    huber_delta: f64,
) -> Result<LossOutput<R>> {
    match (kind, target) {
        (LossKind::Nll, Target::Classes { labels, num_classes }) => {
            if output.ncols() != *num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "head width {} vs {num_classes} classes",
                    output.ncols()
                )));
            }
            nll(output, labels)
        }
        (LossKind::Bce, Target::Values(v)) => bce(output, to_real::<R>(v.view()).view()),
        (LossKind::Huber, Target::Values(v)) => {
            huber(output, to_real::<R>(v.view()).view(), R::c(huber_delta))
        }
        (LossKind::Mse, Target::Values(v)) => mse(output, to_real::<R>(v.view()).view()),
        (LossKind::Mse, Target::Signals(s)) => {
            let n = s.len_of(Axis(0));
            let flat = s
                .view()
                .into_shape_with_order((n, s.len() / n.max(1)))
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            mse(output, to_real::<R>(flat).view())
        }
        (kind, _) => Err(Error::ShapeMismatch(format!(
            "loss {kind:?} does not accept this target kind"
        ))),
    }
}

/// Targets as fed to the loss: feature-prediction statistics are
/// standardized per column across the batch, everything else passes through.
pub fn prepare_targets(task: TaskId, targets: &[Target]) -> Vec<Target> {
    targets
        .iter()
        .map(|t| match (task, t) {
            (TaskId::FeaturePrediction, Target::Values(v)) => {
                Target::Values(standardize_columns(v.view()))
            }
            _ => t.clone(),
        })
        .collect()
}

/// Equal-weight sum of per-head losses for a self-labeled batch.
///
/// `outputs[h]` is head `h`'s output (decoder outputs flattened to
/// `[batch × channels·length]`). For the triplet task `outputs` holds
/// `(anchor, positive, negative)` embeddings per anchor modality, in that
/// order, and `targets` is empty. The weight penalty is added by the trainer.
pub fn compute_task_loss<R: Real>(
    spec: &TaskSpec,
    outputs: &[Array2<R>],
    targets: &[Target],
) -> Result<(R, Vec<Array2<R>>)> {
    if spec.loss_kind == LossKind::Triplet {
        if outputs.is_empty() || outputs.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(
                "triplet loss expects anchor/positive/negative triples".into(),
            ));
        }
        let mut total = R::zero();
        let mut grads = Vec::with_capacity(outputs.len());
        for t in outputs.chunks(3) {
            let out = symmetric_triplet_loss(
                t[0].view(),
                t[1].view(),
                t[2].view(),
                R::c(spec.params.triplet_margin),
            )?;
            total += out.value;
            grads.extend([out.grad_anchor, out.grad_positive, out.grad_negative]);
        }
        return Ok((total, grads));
    }
    if outputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} head outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let prepared = prepare_targets(spec.task_id, targets);
    let mut total = R::zero();
    let mut grads = Vec::with_capacity(outputs.len());
    for (out, target) in outputs.iter().zip(&prepared) {
        let l = head_loss(spec.loss_kind, out.view(), target, spec.params.huber_delta)?;
        total += l.value;
        grads.push(l.grad);
    }
    Ok((total, grads))
}
