use super::model::Network;
use super::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter the network's policy trains, using the
    /// accumulated gradients.
    pub fn step<R: Real>(&mut self, net: &mut Network<R>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let policy = net.policy;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.visit_params(&mut |group, p| {
            let i = idx;
            idx += 1;
            if ms.len() <= i {
                ms.resize_with(i + 1, Vec::new);
                vs.resize_with(i + 1, Vec::new);
            }
            if !policy.trains(group) {
                return;
            }
            let (m, v) = (&mut ms[i], &mut vs[i]);
            if m.len() != p.value.len() {
                *m = vec![0.0; p.value.len()];
                *v = vec![0.0; p.value.len()];
            }
            for (((w, g), m), v) in p.value.iter_mut().zip(p.grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *w -= R::c(update);
            }
        });
    }
}
