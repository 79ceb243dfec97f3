use ndarray::Array2;

use crate::model::ModelParams;

/// Decoupled-weight-decay Adam. Weight decay applies only to tensors
/// flagged for it (matrices and embeddings, not biases or norm gains).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(params: &ModelParams, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: ModelParams::zeros(&params.config),
            v: ModelParams::zeros(&params.config),
            decay: params.tensor_info().into_iter().map(|i| i.decay).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((p, g), m), v), &decay) in ps.into_iter().zip(gs).zip(ms).zip(vs).zip(&self.decay) {
            update_tensor(p, g, m, v, (b1, b2, bc1, bc2, lr, eps, if decay { wd } else { 0.0 }));
        }
    }
}

fn update_tensor(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    (b1, b2, bc1, bc2, lr, eps, wd): (f64, f64, f64, f64, f64, f64, f64),
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
    });
}

/// Scale `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.sum_squares().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
