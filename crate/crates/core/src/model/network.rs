//! Forward pass, loss, and hand-derived backward pass.
//!
//! Each block is pre-norm: `x += Attn(LN1(x))`, then `x += FFN(LN2(x))` with
//! a tanh-approximated GELU. A final layer norm feeds four linear heads.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::exec::Exec;

use super::attention;
use super::batch::{Batch, Example, StepInput, StepTarget};
use super::params::ModelParams;
use super::ModelError;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Logits of the four heads, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub event: Array2<f64>,
    pub duration: Array2<f64>,
    pub track: Array2<f64>,
    pub instrument: Array2<f64>,
}

/// Mean cross-entropy per head and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub event: f64,
    pub duration: f64,
    pub track: f64,
    pub instrument: f64,
}

impl LossReport {
    fn from_parts(p: [f64; 4]) -> Self {
        LossReport {
            total: p.iter().sum(),
            event: p[0],
            duration: p[1],
            track: p[2],
            instrument: p[3],
        }
    }

    pub fn parts(&self) -> [f64; 4] {
        [self.event, self.duration, self.track, self.instrument]
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let (t_len, d) = x.dim();
    let mut xhat = Array2::<f64>::zeros((t_len, d));
    let mut inv_std = Array1::<f64>::zeros(t_len);
    for t in 0..t_len {
        let row = x.row(t);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[t] = is;
        for j in 0..d {
            xhat[[t, j]] = (row[j] - mean) * is;
        }
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

/// Returns (dx, dgain, dbias).
fn layer_norm_back(dy: &Array2<f64>, c: &LnCache, gain: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t_len, d) = dy.dim();
    let dgain = (dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let mut dx = Array2::<f64>::zeros((t_len, d));
    for t in 0..t_len {
        let g = dxhat.row(t);
        let xh = c.xhat.row(t);
        let mean_g = g.sum() / d as f64;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[[t, j]] = c.inv_std[t] * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    (dx, dgain, dbias)
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Array2<f64>,
    dens: Vec<Array1<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Array2<f64>,
}

/// Sum of the six embedding rows for every step.
pub fn embed(params: &ModelParams, inputs: &[StepInput]) -> Array2<f64> {
    let d = params.config.embed_dim;
    let mut x = Array2::<f64>::zeros((inputs.len(), d));
    for (t, inp) in inputs.iter().enumerate() {
        let mut row = x.row_mut(t);
        row += &params.emb_event.row(inp.event);
        row += &params.emb_duration.row(inp.duration);
        row += &params.emb_instrument.row(inp.instrument);
        row += &params.pos_measure.row(inp.measure);
        row += &params.pos_onset.row(inp.onset);
        row += &params.pos_track.row(inp.track);
    }
    x
}

fn check_inputs(params: &ModelParams, inputs: &[StepInput]) -> Result<(), ModelError> {
    for (i, inp) in inputs.iter().enumerate() {
        inp.check(i, &params.config)?;
    }
    Ok(())
}

fn check_finite(x: &Array2<f64>, layer: usize) -> Result<(), ModelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { layer })
    }
}

fn forward_cached(params: &ModelParams, inputs: &[StepInput]) -> Result<(HeadLogits, Cache), ModelError> {
    check_inputs(params, inputs)?;
    let cfg = &params.config;
    let dh = cfg.head_dim();
    let mut x = embed(params, inputs);
    check_finite(&x, 0)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, lp) in params.layers.iter().enumerate() {
        let (a, ln1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let q = a.dot(&lp.wq);
        let k = a.dot(&lp.wk);
        let v = a.dot(&lp.wv);
        let mut att = Array2::<f64>::zeros(q.dim());
        let mut dens = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (o, den) = attention::forward_with_den(q.slice(cols), k.slice(cols), v.slice(cols));
            att.slice_mut(cols).assign(&o);
            dens.push(den);
        }
        x += &att.dot(&lp.wo);
        let (b, ln2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let h = b.dot(&lp.w1) + &lp.b1;
        let g = h.mapv(gelu);
        x += &(g.dot(&lp.w2) + &lp.b2);
        check_finite(&x, li + 1)?;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            att,
            dens,
            ln2,
            b,
            h,
            g,
        });
    }
    let (z, lnf) = layer_norm(&x, &params.lnf_gain, &params.lnf_bias);
    let logits = HeadLogits {
        event: z.dot(&params.head_event_w) + &params.head_event_b,
        duration: z.dot(&params.head_duration_w) + &params.head_duration_b,
        track: z.dot(&params.head_track_w) + &params.head_track_b,
        instrument: z.dot(&params.head_instrument_w) + &params.head_instrument_b,
    };
    Ok((logits, Cache { layers, lnf, z }))
}

/// Logits for one sequence. Row `t` depends only on inputs `0..=t`.
pub fn forward(params: &ModelParams, inputs: &[StepInput]) -> Result<HeadLogits, ModelError> {
    forward_cached(params, inputs).map(|(l, _)| l)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Cross-entropy summed over the scored rows, times `weight`; optionally
/// the matching gradient with respect to the logits.
fn head_loss(logits: &Array2<f64>, targets: &[Option<usize>], weight: f64, grad: bool) -> (f64, Option<Array2<f64>>) {
    let mut total = 0.0;
    let mut d = grad.then(|| Array2::<f64>::zeros(logits.dim()));
    for (t, target) in targets.iter().enumerate() {
        let Some(y) = *target else { continue };
        let row = logits.row(t);
        let lp = log_softmax(row.as_slice().expect("logit rows are contiguous"));
        total += -lp[y];
        if let Some(d) = d.as_mut() {
            for (j, l) in lp.iter().enumerate() {
                d[[t, j]] = weight * l.exp();
            }
            d[[t, y]] -= weight;
        }
    }
    (total * weight, d)
}

fn target_columns(targets: &[StepTarget]) -> [Vec<Option<usize>>; 4] {
    [
        targets.iter().map(|t| Some(t.event)).collect(),
        targets.iter().map(|t| t.duration).collect(),
        targets.iter().map(|t| t.track).collect(),
        targets.iter().map(|t| t.instrument).collect(),
    ]
}

fn head_weights(batch: &Batch) -> [f64; 4] {
    batch.target_counts().map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
}

fn example_loss(logits: &HeadLogits, ex: &Example, w: [f64; 4]) -> [f64; 4] {
    let cols = target_columns(&ex.targets);
    let heads = [&logits.event, &logits.duration, &logits.track, &logits.instrument];
    std::array::from_fn(|h| head_loss(heads[h], &cols[h], w[h], false).0)
}

/// Mean cross-entropy per head over the scored targets of the whole batch;
/// heads with nothing to score contribute 0.
pub fn loss(logits: &[HeadLogits], batch: &Batch) -> LossReport {
    let w = head_weights(batch);
    let mut parts = [0.0; 4];
    for (l, ex) in logits.iter().zip(&batch.examples) {
        for (p, v) in parts.iter_mut().zip(example_loss(l, ex, w)) {
            *p += v;
        }
    }
    LossReport::from_parts(parts)
}

/// Forward every example and report the batch loss.
pub fn batch_loss(params: &ModelParams, batch: &Batch, exec: Exec) -> Result<LossReport, ModelError> {
    let w = head_weights(batch);
    let per = exec.map(&batch.examples, |ex| forward(params, &ex.inputs).map(|l| example_loss(&l, ex, w)));
    let mut parts = [0.0; 4];
    for r in per {
        for (p, v) in parts.iter_mut().zip(r?) {
            *p += v;
        }
    }
    Ok(LossReport::from_parts(parts))
}

fn example_gradients(params: &ModelParams, ex: &Example, w: [f64; 4]) -> Result<([f64; 4], ModelParams), ModelError> {
    let (logits, cache) = forward_cached(params, &ex.inputs)?;
    let cols = target_columns(&ex.targets);
    let heads = [&logits.event, &logits.duration, &logits.track, &logits.instrument];
    let mut parts = [0.0; 4];
    let mut dlogits = Vec::with_capacity(4);
    for h in 0..4 {
        let (l, d) = head_loss(heads[h], &cols[h], w[h], true);
        parts[h] = l;
        dlogits.push(d.expect("gradient requested"));
    }
    Ok((parts, backward(params, &ex.inputs, &cache, &dlogits)))
}

fn add_bias_grad(dst: &mut Array2<f64>, dy: &Array2<f64>) {
    *dst += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
}

fn backward(params: &ModelParams, inputs: &[StepInput], cache: &Cache, dlogits: &[Array2<f64>]) -> ModelParams {
    let cfg = &params.config;
    let dh = cfg.head_dim();
    let mut g = ModelParams::zeros(cfg);
    let zt = cache.z.t();

    let heads: [(&Array2<f64>, &mut Array2<f64>, &mut Array2<f64>); 4] = [
        (&params.head_event_w, &mut g.head_event_w, &mut g.head_event_b),
        (&params.head_duration_w, &mut g.head_duration_w, &mut g.head_duration_b),
        (&params.head_track_w, &mut g.head_track_w, &mut g.head_track_b),
        (&params.head_instrument_w, &mut g.head_instrument_w, &mut g.head_instrument_b),
    ];
    let mut dz = Array2::<f64>::zeros(cache.z.dim());
    for ((w, gw, gb), dl) in heads.into_iter().zip(dlogits) {
        *gw += &zt.dot(dl);
        add_bias_grad(gb, dl);
        dz += &dl.dot(&w.t());
    }
    let (mut dx, dg, db) = layer_norm_back(&dz, &cache.lnf, &params.lnf_gain);
    g.lnf_gain += &dg;
    g.lnf_bias += &db;

    for (li, lp) in params.layers.iter().enumerate().rev() {
        let c = &cache.layers[li];
        let gl = &mut g.layers[li];

        // feed-forward residual branch
        gl.w2 += &c.g.t().dot(&dx);
        add_bias_grad(&mut gl.b2, &dx);
        let dgelu = dx.dot(&lp.w2.t());
        let dh_pre = &dgelu * &c.h.mapv(gelu_grad);
        gl.w1 += &c.b.t().dot(&dh_pre);
        add_bias_grad(&mut gl.b1, &dh_pre);
        let db_in = dh_pre.dot(&lp.w1.t());
        let (dx2, dg2, db2) = layer_norm_back(&db_in, &c.ln2, &lp.ln2_gain);
        gl.ln2_gain += &dg2;
        gl.ln2_bias += &db2;
        dx += &dx2;

        // attention residual branch
        gl.wo += &c.att.t().dot(&dx);
        let datt = dx.dot(&lp.wo.t());
        let mut dq = Array2::<f64>::zeros(c.q.dim());
        let mut dk = Array2::<f64>::zeros(c.k.dim());
        let mut dv = Array2::<f64>::zeros(c.v.dim());
        for h in 0..cfg.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (hq, hk, hv) = attention::backward(
                c.q.slice(cols),
                c.k.slice(cols),
                c.v.slice(cols),
                c.att.slice(cols),
                &c.dens[h],
                datt.slice(cols),
            );
            dq.slice_mut(cols).assign(&hq);
            dk.slice_mut(cols).assign(&hk);
            dv.slice_mut(cols).assign(&hv);
        }
        let at = c.a.t();
        gl.wq += &at.dot(&dq);
        gl.wk += &at.dot(&dk);
        gl.wv += &at.dot(&dv);
        let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        let (dx1, dg1, db1) = layer_norm_back(&da, &c.ln1, &lp.ln1_gain);
        gl.ln1_gain += &dg1;
        gl.ln1_bias += &db1;
        dx += &dx1;
    }

    for (t, inp) in inputs.iter().enumerate() {
        let row = dx.row(t);
        let add = |m: &mut Array2<f64>, i: usize| {
            let mut r = m.row_mut(i);
            r += &row;
        };
        add(&mut g.emb_event, inp.event);
        add(&mut g.emb_duration, inp.duration);
        add(&mut g.emb_instrument, inp.instrument);
        add(&mut g.pos_measure, inp.measure);
        add(&mut g.pos_onset, inp.onset);
        add(&mut g.pos_track, inp.track);
    }
    g
}

/// Exact gradient of the batch loss. Examples run independently under
/// `exec`; their gradients are summed in batch order.
pub fn gradients(params: &ModelParams, batch: &Batch, exec: Exec) -> Result<(LossReport, ModelParams), ModelError> {
    let w = head_weights(batch);
    let per = exec.map(&batch.examples, |ex| example_gradients(params, ex, w));
    let mut total = ModelParams::zeros(&params.config);
    let mut parts = [0.0; 4];
    for r in per {
        let (p, g) = r?;
        for (a, b) in parts.iter_mut().zip(p) {
            *a += b;
        }
        total.add_assign(&g);
    }
    Ok((LossReport::from_parts(parts), total))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut r in out.rows_mut() {
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        r.mapv_inplace(|v| (v - max).exp());
        let s = r.sum();
        r.mapv_inplace(|v| v / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let n = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((n - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = ndarray::array![[0.0, 3f64.ln()]];
        let (l, _) = head_loss(&logits, &[Some(1)], 1.0, false);
        assert!((l - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        let logits = ndarray::array![[1e6, 0.0, 0.0]];
        assert!(head_loss(&logits, &[Some(0)], 1.0, false).0.abs() < 1e-12);
        assert_eq!(head_loss(&logits, &[None], 1.0, false).0, 0.0);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let cfg = ModelConfig {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            ..ModelConfig::default()
        };
        let p = ModelParams::zeros(&cfg);
        let inputs = vec![
            StepInput {
                event: 0,
                duration: 0,
                instrument: 129,
                measure: 0,
                onset: 0,
                track: 0,
            };
            3
        ];
        let logits = forward(&p, &inputs).unwrap();
        assert!(logits.event.iter().all(|&v| v == 0.0));
        let ex = Example {
            inputs,
            targets: vec![
                StepTarget {
                    event: 5,
                    duration: Some(3),
                    track: Some(1),
                    instrument: Some(0),
                };
                3
            ],
        };
        let batch = Batch { examples: vec![ex] };
        let r = loss(&[logits], &batch);
        assert!((r.event - 1000f64.ln()).abs() < 1e-12);
        let want = 1000f64.ln() + 66f64.ln() + 33f64.ln() + 131f64.ln();
        assert!((r.total - want).abs() < 1e-12);
    }
}
