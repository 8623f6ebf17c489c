//! Finite-difference checks for the losses and for the whole network.

use ndarray::{array, Array2, Array3};
use rand::Rng;

use senselearn::network::{build_network, EncoderConfig, Network};
use senselearn::selftasks::{bce, compute_task_loss, cross_entropy, generate, huber, mse, nll, symmetric_triplet_loss};
use senselearn::{PretextBatch, SeedStream, SignalBatch, TaskId, TaskSpec, Target};

use super::{rng, Check};

fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let h = 1e-6;
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.as_slice_mut().unwrap()[idx] += h;
        minus.as_slice_mut().unwrap()[idx] -= h;
        g.as_slice_mut().unwrap()[idx] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

fn close(name: &str, analytic: &Array2<f64>, numeric: &Array2<f64>, rel: f64) -> Check {
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if (a - n).abs() > rel * scale && (a - n).abs() > 1e-9 {
            return Err(format!("{name}: analytic {a} vs numeric {n}"));
        }
    }
    Ok(())
}

fn random(r: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-2.0..2.0))
}

/// Analytic vs central-difference gradients of every loss w.r.t. its inputs.
pub fn check_loss_gradients(seed: u64) -> Check {
    let mut r = rng(seed);
    let (n, k) = (r.gen_range(1..=5), r.gen_range(2..=6));
    let x = random(&mut r, n, k);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let y = random(&mut r, n, k).mapv(|v| (v + 2.0) / 4.0);
    let e = |err: senselearn::Error| err.to_string();

    close("nll", &nll(x.view(), &labels).map_err(e)?.grad, &numeric_grad(&x, |z| nll(z.view(), &labels).unwrap().value), 1e-4)?;
    close(
        "cross_entropy",
        &cross_entropy(x.view(), &labels).map_err(e)?.grad,
        &numeric_grad(&x, |z| cross_entropy(z.view(), &labels).unwrap().value),
        1e-4,
    )?;
    close("bce", &bce(x.view(), y.view()).map_err(e)?.grad, &numeric_grad(&x, |z| bce(z.view(), y.view()).unwrap().value), 1e-4)?;
    close(
        "huber",
        &huber(x.view(), y.view(), 1.0).map_err(e)?.grad,
        &numeric_grad(&x, |z| huber(z.view(), y.view(), 1.0).unwrap().value),
        1e-4,
    )?;
    close("mse", &mse(x.view(), y.view()).map_err(e)?.grad, &numeric_grad(&x, |z| mse(z.view(), y.view()).unwrap().value), 1e-4)?;

    let (a, p, q) = (random(&mut r, n, k), random(&mut r, n, k), random(&mut r, n, k));
    let margin = r.gen_range(0.5..8.0);
    let out = symmetric_triplet_loss(a.view(), p.view(), q.view(), margin).map_err(e)?;
    let t = |a: &Array2<f64>, p: &Array2<f64>, q: &Array2<f64>| {
        symmetric_triplet_loss(a.view(), p.view(), q.view(), margin).unwrap().value
    };
    close("triplet anchor", &out.grad_anchor, &numeric_grad(&a, |z| t(z, &p, &q)), 1e-4)?;
    close("triplet positive", &out.grad_positive, &numeric_grad(&p, |z| t(&a, z, &q)), 1e-4)?;
    close("triplet negative", &out.grad_negative, &numeric_grad(&q, |z| t(&a, &p, z)), 1e-4)?;
    Ok(())
}

/// The worked loss values, each checked exactly or to rounding.
pub fn check_loss_examples() -> Check {
    let tl = |a: Array2<f64>, p: Array2<f64>, n: Array2<f64>| {
        symmetric_triplet_loss(a.view(), p.view(), n.view(), 1.0).unwrap().value
    };
    let z = array![[0.3, -0.2]];
    let mut fails = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            fails.push(format!("{name}: {got} != {want}"));
        }
    };
    expect("triplet equal", tl(z.clone(), z.clone(), z), 1.0, 0.0);
    expect("triplet 2a", tl(array![[0.0, 0.0]], array![[0.0, 0.0]], array![[2f64.sqrt(), 0.0]]), 0.0, 1e-12);
    expect("triplet far", tl(array![[0.0, 0.0]], array![[1.0, 0.0]], array![[10.0, 0.0]]), 0.0, 0.0);
    let h = |o: f64, d: f64| huber(array![[o]].view(), array![[0.0]].view(), d).unwrap().value;
    expect("huber 0", h(0.0, 1.0), 0.0, 0.0);
    expect("huber delta", h(0.7, 0.7), 0.5 * 0.7 * 0.7, 1e-15);
    expect("huber 2", h(2.0, 1.0), 1.5, 0.0);
    expect("bce half", bce(array![[0.0]].view(), array![[0.5]].view()).unwrap().value, std::f64::consts::LN_2, 1e-12);
    expect("nll certain", nll(array![[0.0, 800.0, 0.0]].view(), &[1]).unwrap().value, 0.0, 0.0);
    let x = array![[1.5, -2.0], [0.25, 3.0]];
    expect("mse identical", mse(x.view(), x.view()).unwrap().value, 0.0, 0.0);
    let spec = TaskSpec::new(TaskId::TemporalShift, 64).unwrap();
    let o = array![[0.5f64.sqrt()]];
    let t = Target::Values(array![[0.0f32]]);
    let (total, _) = compute_task_loss(&spec, &[o.clone(), o], &[t.clone(), t]).unwrap();
    expect("two heads", total, 1.0, 1e-12);
    let q = array![[0.0, 1.0]];
    if symmetric_triplet_loss(q.view(), q.view(), q.view(), -1.0).is_ok() {
        fails.push("negative margin accepted".into());
    }
    if fails.is_empty() {
        Ok(())
    } else {
        Err(fails.join("; "))
    }
}

const L: usize = 32;

fn inputs(b: &SignalBatch) -> Vec<Array3<f64>> {
    b.modalities.iter().map(|m| m.mapv(f64::from)).collect()
}

fn loss_and_grads(net: &mut Network<f64>, s: &TaskSpec, gen: &PretextBatch, backprop: bool) -> f64 {
    if backprop {
        net.zero_grad();
    }
    let loss = match gen {
        PretextBatch::Labeled(b) => {
            let x = inputs(&b.inputs);
            let v: Vec<_> = x.iter().map(|m| Some(m.view())).collect();
            let (out, cache) = net.forward(&v, None).unwrap();
            let (loss, grads) = compute_task_loss(s, &out, &b.targets).unwrap();
            if backprop {
                net.backward(&cache, &grads).unwrap();
            }
            loss
        }
        PretextBatch::Triplet(t) => {
            let mm = t.anchors.len();
            let (mut outs, mut caches) = (Vec::new(), Vec::new());
            for m in 0..mm {
                let slot = net.triplet_negative_slot(m, t.negative_modality[m]);
                for (at, x) in [(m, &t.anchors[m]), (m, &t.positives[m]), (slot, &t.negatives[m])] {
                    let x = x.mapv(f64::from);
                    let v: Vec<_> = (0..mm).map(|k| (k == at).then(|| x.view())).collect();
                    let (mut o, c) = net.forward(&v, None).unwrap();
                    outs.push(o.pop().unwrap());
                    caches.push(c);
                }
            }
            let (loss, grads) = compute_task_loss(s, &outs, &[]).unwrap();
            if backprop {
                for (c, g) in caches.iter().zip(grads) {
                    net.backward(c, &[g]).unwrap();
                }
            }
            loss
        }
    };
    if backprop {
        net.add_l2_grad();
    }
    loss + net.l2_penalty()
}

fn slot_values(net: &mut Network<f64>) -> Vec<usize> {
    let mut sizes = Vec::new();
    net.visit_params(&mut |_, p| sizes.push(p.value.len()));
    sizes
}

fn access(net: &mut Network<f64>, at: (usize, usize), set: Option<f64>) -> (f64, f64) {
    let mut slot = 0;
    let mut out = (0.0, 0.0);
    net.visit_params(&mut |_, p| {
        if slot == at.0 {
            if let Some(v) = set {
                p.value[at.1] = v;
            }
            out = (p.value[at.1], p.grad[at.1]);
        }
        slot += 1;
    });
    out
}

/// Full-network spot check: 20 random parameters, two-example batch, f64.
pub fn check_network_gradients(task: TaskId, channels: &[usize], seed: u64) -> Check {
    let s = TaskSpec::new(task, L).map_err(|e| e.to_string())?;
    let mut net = build_network::<f64>(&EncoderConfig::default(), &s, channels, L, &SeedStream::new(seed))
        .map_err(|e| e.to_string())?;
    let mut r = rng(seed + 1);
    let batch = SignalBatch {
        modalities: channels
            .iter()
            .map(|&c| Array3::from_shape_fn((2, c, L), |_| r.gen_range(-1.5f32..1.5)))
            .collect(),
        modality_ids: (0..channels.len()).map(|m| format!("m{m}")).collect(),
    };
    let gen = generate(&s, &batch, &SeedStream::new(seed + 2)).map_err(|e| e.to_string())?;
    loss_and_grads(&mut net, &s, &gen, true);
    let sizes = slot_values(&mut net);
    let h = 1e-5;
    for _ in 0..20 {
        let slot = r.gen_range(0..sizes.len());
        let at = (slot, r.gen_range(0..sizes[slot]));
        let (w, analytic) = access(&mut net, at, None);
        access(&mut net, at, Some(w + h));
        let plus = loss_and_grads(&mut net, &s, &gen, false);
        access(&mut net, at, Some(w - h));
        let minus = loss_and_grads(&mut net, &s, &gen, false);
        access(&mut net, at, Some(w));
        let numeric = (plus - minus) / (2.0 * h);
        let diff = (analytic - numeric).abs();
        if diff > 1e-3 * analytic.abs().max(numeric.abs()) && diff > 1e-8 {
            return Err(format!("{task} param {at:?}: analytic {analytic} vs numeric {numeric}"));
        }
    }
    Ok(())
}
