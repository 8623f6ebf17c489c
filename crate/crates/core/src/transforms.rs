//! Signal operations used by the pretext-task generators.
//!
//! Array-level functions work on `[channels × length]` views; the
//! `Window`-level wrappers keep modality/subject metadata intact.

use std::fmt;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::types::Window;

/// The recognized signal transformations. `Identity` is class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Permutation,
    ChannelShuffle,
    Timewarp,
    Scale,
    Noise,
    Rotation,
    Flip,
    Negation,
}

impl TransformKind {
    pub const COUNT: usize = 9;

    pub const ALL: [TransformKind; 9] = [
        TransformKind::Identity,
        TransformKind::Permutation,
        TransformKind::ChannelShuffle,
        TransformKind::Timewarp,
        TransformKind::Scale,
        TransformKind::Noise,
        TransformKind::Rotation,
        TransformKind::Flip,
        TransformKind::Negation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Kinds that are well defined for a window with `channels` channels.
    pub fn applicable(channels: usize) -> Vec<TransformKind> {
        Self::ALL
            .into_iter()
            .filter(|k| channels >= 2 || !matches!(k, TransformKind::Rotation))
            .collect()
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TransformKind::Identity => "identity",
            TransformKind::Permutation => "permutation",
            TransformKind::ChannelShuffle => "channel_shuffle",
            TransformKind::Timewarp => "timewarp",
            TransformKind::Scale => "scale",
            TransformKind::Noise => "noise",
            TransformKind::Rotation => "rotation",
            TransformKind::Flip => "flip",
            TransformKind::Negation => "negation",
        };
        f.write_str(name)
    }
}

const PERMUTATION_SLICES: usize = 4;
const TIMEWARP_KNOTS: usize = 4;
const TIMEWARP_SIGMA: f64 = 0.2;
const SCALE_RANGE: (f32, f32) = (0.7, 1.3);
const SCALE_MIN_DEVIATION: f32 = 0.05;
const NOISE_RELATIVE_STD: f32 = 0.1;

/// Applies `kind` to `[channels × length]` values, drawing randomness from `rng`.
pub fn transform_values<R: Rng + ?Sized>(
    kind: TransformKind,
    x: ArrayView2<f32>,
    rng: &mut R,
) -> Result<Array2<f32>> {
    Ok(match kind {
        TransformKind::Identity => x.to_owned(),
        TransformKind::Permutation => permute_slices(x, rng),
        TransformKind::ChannelShuffle => shuffle_channels(x, rng),
        TransformKind::Timewarp => timewarp(x, rng),
        TransformKind::Scale => {
            let factor = loop {
                let f: f32 = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
                if (f - 1.0).abs() >= SCALE_MIN_DEVIATION {
                    break f;
                }
            };
            x.mapv(|v| v * factor)
        }
        TransformKind::Noise => add_noise(x, rng),
        TransformKind::Rotation => rotate(x, rng)?,
        TransformKind::Flip => flip(x),
        TransformKind::Negation => x.mapv(|v| -v),
    })
}

/// Window-level transformation; deterministic under `seed`.
pub fn apply_transformation(kind: TransformKind, w: &Window, seed: &SeedStream) -> Result<Window> {
    let mut rng = seed.rng();
    Ok(w.with_values(transform_values(kind, w.values.view(), &mut rng)?))
}

fn flip(x: ArrayView2<f32>) -> Array2<f32> {
    x.slice(s![.., ..;-1]).to_owned()
}

/// Cuts the time axis into equal slices (the last absorbs the remainder)
/// and reorders them with a non-identity permutation.
fn permute_slices<R: Rng + ?Sized>(x: ArrayView2<f32>, rng: &mut R) -> Array2<f32> {
    let len = x.ncols();
    let slices = PERMUTATION_SLICES.min(len);
    if slices < 2 {
        return x.to_owned();
    }
    let base = len / slices;
    let bounds: Vec<(usize, usize)> = (0..slices)
        .map(|i| {
            let end = if i + 1 == slices { len } else { (i + 1) * base };
            (i * base, end)
        })
        .collect();
    let order = non_identity_permutation(slices, rng);
    let mut out = Array2::zeros(x.raw_dim());
    let mut cursor = 0;
    for &i in &order {
        let (a, b) = bounds[i];
        out.slice_mut(s![.., cursor..cursor + (b - a)])
            .assign(&x.slice(s![.., a..b]));
        cursor += b - a;
    }
    out
}

fn non_identity_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if n < 2 {
        return order;
    }
    loop {
        order.shuffle(rng);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            return order;
        }
    }
}

/// Single-channel windows have no non-identity channel permutation and are
/// returned unchanged.
fn shuffle_channels<R: Rng + ?Sized>(x: ArrayView2<f32>, rng: &mut R) -> Array2<f32> {
    let order = non_identity_permutation(x.nrows(), rng);
    x.select(Axis(0), &order)
}

fn add_noise<R: Rng + ?Sized>(x: ArrayView2<f32>, rng: &mut R) -> Array2<f32> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f32;
        let mean = row.sum() / n;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n).sqrt();
        let sigma = NOISE_RELATIVE_STD * std;
        for v in row.iter_mut() {
            let z: f32 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    out
}

/// Random orthogonal `C × C` matrix (Gram-Schmidt on a Gaussian matrix).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let g = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
        let mut q: Array2<f64> = Array2::zeros((n, n));
        let mut ok = true;
        for j in 0..n {
            let mut v = g.column(j).to_owned();
            for k in 0..j {
                let qk = q.column(k);
                let proj = qk.dot(&v);
                v.scaled_add(-proj, &qk);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).assign(&(v / norm));
        }
        if ok {
            return q;
        }
    }
}

fn rotate<R: Rng + ?Sized>(x: ArrayView2<f32>, rng: &mut R) -> Result<Array2<f32>> {
    let c = x.nrows();
    if c < 2 {
        return Err(Error::RotationSingleChannel);
    }
    let q = random_orthogonal(c, rng);
    let xd = x.mapv(f64::from);
    Ok(q.dot(&xd).mapv(|v| v as f32))
}

/// Monotone cubic (Fritsch-Carlson) interpolant through `(xs, ys)`.
fn pchip(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let i = match xs.iter().rposition(|&x| x <= t) {
        Some(i) if i < n - 1 => i,
        Some(_) => n - 2,
        None => 0,
    };
    let s = (t - xs[i]) / h[i];
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    h00 * ys[i] + h10 * h[i] * m[i] + h01 * ys[i + 1] + h11 * h[i] * m[i + 1]
}

/// Resamples the time axis along a smooth monotone warp path through
/// randomly displaced interior knots; endpoints stay fixed.
fn timewarp<R: Rng + ?Sized>(x: ArrayView2<f32>, rng: &mut R) -> Array2<f32> {
    let len = x.ncols();
    if len < TIMEWARP_KNOTS + 2 {
        return x.to_owned();
    }
    let last = (len - 1) as f64;
    let spacing = last / (TIMEWARP_KNOTS + 1) as f64;
    let knots: Vec<f64> = (0..TIMEWARP_KNOTS + 2).map(|i| i as f64 * spacing).collect();
    let jitter = Normal::new(0.0, TIMEWARP_SIGMA * spacing).expect("positive std");
    let mut warped: Vec<f64> = knots
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if i == 0 || i == knots.len() - 1 {
                k
            } else {
                (k + jitter.sample(rng)).clamp(0.0, last)
            }
        })
        .collect();
    // keep the warp path monotone
    warped.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..len {
        let src = pchip(&knots, &warped, t as f64).clamp(0.0, last);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        let frac = (src - lo as f64) as f32;
        Zip::from(out.column_mut(t))
            .and(x.column(lo))
            .and(x.column(hi))
            .for_each(|o, &a, &b| *o = a + (b - a) * frac);
    }
    out
}

/// `a·(1−μ) + b·μ` elementwise.
pub fn blend_values(a: ArrayView2<f32>, b: ArrayView2<f32>, mu: f32) -> Result<Array2<f32>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "blend operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!("blend weight {mu} outside [0, 1]")));
    }
    let mut out = Array2::zeros(a.raw_dim());
    Zip::from(&mut out)
        .and(&a)
        .and(&b)
        .for_each(|o, &x, &y| *o = x * (1.0 - mu) + y * mu);
    Ok(out)
}

/// Blends `a` toward `b`; the result keeps `a`'s metadata.
pub fn blend(a: &Window, b: &Window, mu: f32) -> Result<Window> {
    Ok(a.with_values(blend_values(a.values.view(), b.values.view(), mu)?))
}

/// `out[t] = x[(t − k) mod l]` on every channel.
pub fn circular_shift_values(x: ArrayView2<f32>, k: usize) -> Array2<f32> {
    let len = x.ncols();
    let k = k % len.max(1);
    let mut out = Array2::zeros(x.raw_dim());
    if k == 0 {
        out.assign(&x);
        return out;
    }
    out.slice_mut(s![.., k..]).assign(&x.slice(s![.., ..len - k]));
    out.slice_mut(s![.., ..k]).assign(&x.slice(s![.., len - k..]));
    out
}

pub fn circular_shift(w: &Window, k: usize) -> Window {
    w.with_values(circular_shift_values(w.values.view(), k))
}

/// Zeroes `[start, start+length)` on all channels.
pub fn mask_segment_values(x: ArrayView2<f32>, start: usize, length: usize) -> Result<Array2<f32>> {
    if start + length > x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "mask [{start}, {}) exceeds window length {}",
            start + length,
            x.ncols()
        )));
    }
    let mut out = x.to_owned();
    out.slice_mut(s![.., start..start + length]).fill(0.0);
    Ok(out)
}

pub fn mask_segment(w: &Window, start: usize, length: usize) -> Result<Window> {
    Ok(w.with_values(mask_segment_values(w.values.view(), start, length)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstituteMode {
    Swap,
    Blend,
}

/// Time range of slot `index` when slots have length `slot_len`; the last
/// slot is truncated at the window end.
pub fn slot_range(len: usize, slot_len: usize, index: usize) -> Option<(usize, usize)> {
    if slot_len == 0 {
        return None;
    }
    let start = index * slot_len;
    (start < len).then(|| (start, (start + slot_len).min(len)))
}

pub fn substitute_segment_values(
    target: ArrayView2<f32>,
    source: ArrayView2<f32>,
    slot_index: usize,
    mode: SubstituteMode,
    mu: f32,
    slot_len: usize,
) -> Result<Array2<f32>> {
    if target.shape() != source.shape() {
        return Err(Error::ShapeMismatch(format!(
            "substitution source {:?} vs target {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let (a, b) = slot_range(target.ncols(), slot_len, slot_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "slot {slot_index} out of range for length {} / slot {slot_len}",
            target.ncols()
        ))
    })?;
    let mut out = target.to_owned();
    let replacement = match mode {
        SubstituteMode::Swap => source.slice(s![.., a..b]).to_owned(),
        SubstituteMode::Blend => {
            blend_values(target.slice(s![.., a..b]), source.slice(s![.., a..b]), mu)?
        }
    };
    out.slice_mut(s![.., a..b]).assign(&replacement);
    Ok(out)
}

pub fn substitute_segment(
    target: &Window,
    source: &Window,
    slot_index: usize,
    mode: SubstituteMode,
    mu: f32,
    slot_len: usize,
) -> Result<Window> {
    Ok(target.with_values(substitute_segment_values(
        target.values.view(),
        source.values.view(),
        slot_index,
        mode,
        mu,
        slot_len,
    )?))
}
