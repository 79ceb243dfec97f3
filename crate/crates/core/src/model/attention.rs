//! Causal linear attention with the feature map `elu(x) + 1`.
//!
//! `out_t = φ(q_t)ᵀ S_t / (φ(q_t)·z_t + ε)` with running sums
//! `S_t = Σ_{s≤t} φ(k_s) v_sᵀ` and `z_t = Σ_{s≤t} φ(k_s)`.

use ndarray::{Array1, Array2, ArrayView2};

pub const EPS: f64 = 1e-6;

#[inline]
pub fn phi(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn phi_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Linear-time causal attention for one head.
pub fn causal_linear_attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Array2<f64> {
    forward_with_den(q, k, v).0
}

/// Output plus the per-step denominators, which the backward pass reuses.
pub(crate) fn forward_with_den(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (t_len, dk) = q.dim();
    let dv = v.ncols();
    let mut s = Array2::<f64>::zeros((dk, dv));
    let mut z = Array1::<f64>::zeros(dk);
    let mut out = Array2::<f64>::zeros((t_len, dv));
    let mut den = Array1::<f64>::zeros(t_len);
    let mut fq = vec![0.0; dk];
    for t in 0..t_len {
        for i in 0..dk {
            let fk = phi(k[[t, i]]);
            z[i] += fk;
            for j in 0..dv {
                s[[i, j]] += fk * v[[t, j]];
            }
            fq[i] = phi(q[[t, i]]);
        }
        let mut d = EPS;
        for i in 0..dk {
            d += fq[i] * z[i];
        }
        for j in 0..dv {
            let mut num = 0.0;
            for i in 0..dk {
                num += fq[i] * s[[i, j]];
            }
            out[[t, j]] = num / d;
        }
        den[t] = d;
    }
    (out, den)
}

/// Quadratic-time reference: explicit weights over the prefix, normalized by
/// their sum plus `EPS`.
pub fn quadratic_reference(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Array2<f64> {
    let (t_len, dk) = q.dim();
    let dv = v.ncols();
    let mut out = Array2::<f64>::zeros((t_len, dv));
    for t in 0..t_len {
        let w: Vec<f64> = (0..=t)
            .map(|s| (0..dk).map(|i| phi(q[[t, i]]) * phi(k[[s, i]])).sum::<f64>())
            .collect();
        let total: f64 = w.iter().sum::<f64>() + EPS;
        for (s, ws) in w.iter().enumerate() {
            for j in 0..dv {
                out[[t, j]] += ws / total * v[[s, j]];
            }
        }
    }
    out
}

/// Gradients with respect to q, k and v given the upstream gradient `g`.
pub(crate) fn backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    out: ArrayView2<f64>,
    den: &Array1<f64>,
    g: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t_len, dk) = q.dim();
    let dv = v.ncols();
    let mut dq = Array2::<f64>::zeros((t_len, dk));
    let mut dk_out = Array2::<f64>::zeros((t_len, dk));
    let mut dv_out = Array2::<f64>::zeros((t_len, dv));
    // d out_t / d num_t and d den_t
    let mut dnum = Array2::<f64>::zeros((t_len, dv));
    let mut dden = Array1::<f64>::zeros(t_len);
    for t in 0..t_len {
        let mut go = 0.0;
        for j in 0..dv {
            dnum[[t, j]] = g[[t, j]] / den[t];
            go += g[[t, j]] * out[[t, j]];
        }
        dden[t] = -go / den[t];
    }

    // forward sweep: gradient through φ(q_t) needs S_t and z_t
    let mut s = Array2::<f64>::zeros((dk, dv));
    let mut z = Array1::<f64>::zeros(dk);
    for t in 0..t_len {
        for i in 0..dk {
            let fk = phi(k[[t, i]]);
            z[i] += fk;
            for j in 0..dv {
                s[[i, j]] += fk * v[[t, j]];
            }
        }
        for i in 0..dk {
            let mut acc = z[i] * dden[t];
            for j in 0..dv {
                acc += s[[i, j]] * dnum[[t, j]];
            }
            dq[[t, i]] = acc * phi_grad(q[[t, i]]);
        }
    }

    // reverse sweep: R_s = Σ_{t≥s} φ(q_t) dnum_tᵀ, r_s = Σ_{t≥s} φ(q_t) dden_t
    let mut r_mat = Array2::<f64>::zeros((dk, dv));
    let mut r_vec = Array1::<f64>::zeros(dk);
    for t in (0..t_len).rev() {
        for i in 0..dk {
            let fq = phi(q[[t, i]]);
            r_vec[i] += fq * dden[t];
            for j in 0..dv {
                r_mat[[i, j]] += fq * dnum[[t, j]];
            }
        }
        for i in 0..dk {
            let fk = phi(k[[t, i]]);
            let mut acc = r_vec[i];
            for j in 0..dv {
                acc += r_mat[[i, j]] * v[[t, j]];
                dv_out[[t, j]] += r_mat[[i, j]] * fk;
            }
            dk_out[[t, i]] = acc * phi_grad(k[[t, i]]);
        }
    }
    (dq, dk_out, dv_out)
}

/// Running state for one head during incremental decoding.
#[derive(Debug, Clone)]
pub(crate) struct HeadState {
    s: Array2<f64>,
    z: Array1<f64>,
}

impl HeadState {
    pub fn new(dk: usize, dv: usize) -> Self {
        HeadState {
            s: Array2::zeros((dk, dv)),
            z: Array1::zeros(dk),
        }
    }

    /// Fold in one step and return its output, same arithmetic order as the
    /// batched forward pass.
    pub fn step(&mut self, q: &[f64], k: &[f64], v: &[f64], out: &mut [f64]) {
        let (dk, dv) = self.s.dim();
        let mut fq = vec![0.0; dk];
        for i in 0..dk {
            let fk = phi(k[i]);
            self.z[i] += fk;
            for j in 0..dv {
                self.s[[i, j]] += fk * v[j];
            }
            fq[i] = phi(q[i]);
        }
        let mut d = EPS;
        for i in 0..dk {
            d += fq[i] * self.z[i];
        }
        for j in 0..dv {
            let mut num = 0.0;
            for i in 0..dk {
                num += fq[i] * self.s[[i, j]];
            }
            out[j] = num / d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_returns_first_value() {
        let q = array![[0.3, -1.2]];
        let k = array![[2.0, -0.5]];
        let v = array![[1.5, -4.0]];
        let out = causal_linear_attention(q.view(), k.view(), v.view());
        // weight φ(q)·φ(k) / (φ(q)·φ(k) + ε) is 1 up to ε
        for j in 0..2 {
            assert!((out[[0, j]] - v[[0, j]]).abs() < 1e-6 * v[[0, j]].abs());
        }
    }

    #[test]
    fn two_step_hand_example() {
        // φ(q2) = (1, 2), φ(k1) = (2, 1), φ(k2) = (1, 1)
        let q = array![[0.0, 0.0], [0.0, 1.0]];
        let k = array![[1.0, 0.0], [0.0, 0.0]];
        let v = array![[1.0, 0.0], [0.0, 2.0]];
        let out = causal_linear_attention(q.view(), k.view(), v.view());
        // scores: φ(q2)·φ(k1) = 4, φ(q2)·φ(k2) = 3
        let den = 7.0 + EPS;
        assert!((out[[1, 0]] - 4.0 / den).abs() < 1e-15);
        assert!((out[[1, 1]] - 6.0 / den).abs() < 1e-15);
    }
}
