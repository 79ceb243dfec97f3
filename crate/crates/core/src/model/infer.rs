//! Step-at-a-time decoding with running attention state.

use ndarray::{s, Array1, Array2};

use super::attention::HeadState;
use super::batch::StepInput;
use super::network::gelu;
use super::params::ModelParams;
use super::ModelError;

/// Logits of the four heads for a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogits {
    pub event: Vec<f64>,
    pub duration: Vec<f64>,
    pub track: Vec<f64>,
    pub instrument: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InferenceCache {
    heads: Vec<Vec<HeadState>>,
    steps: usize,
}

fn layer_norm_row(x: &Array1<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + 1e-5).sqrt();
    let xhat = x.mapv(|v| (v - mean) * inv);
    &xhat * &gain.row(0) + &bias.row(0)
}

impl InferenceCache {
    pub fn new(params: &ModelParams) -> Self {
        let cfg = &params.config;
        let dh = cfg.head_dim();
        InferenceCache {
            heads: (0..cfg.layers).map(|_| (0..cfg.heads).map(|_| HeadState::new(dh, dh)).collect()).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Feed one input and return the logits predicting the next tuple.
    pub fn step(&mut self, params: &ModelParams, input: &StepInput) -> Result<StepLogits, ModelError> {
        let cfg = &params.config;
        input.check(self.steps, cfg)?;
        let dh = cfg.head_dim();
        let mut x = params.emb_event.row(input.event).to_owned();
        x += &params.emb_duration.row(input.duration);
        x += &params.emb_instrument.row(input.instrument);
        x += &params.pos_measure.row(input.measure);
        x += &params.pos_onset.row(input.onset);
        x += &params.pos_track.row(input.track);
        for (li, lp) in params.layers.iter().enumerate() {
            let a = layer_norm_row(&x, &lp.ln1_gain, &lp.ln1_bias);
            let q = a.dot(&lp.wq);
            let k = a.dot(&lp.wk);
            let v = a.dot(&lp.wv);
            let mut att = Array1::<f64>::zeros(cfg.embed_dim);
            for (h, state) in self.heads[li].iter_mut().enumerate() {
                let r = s![h * dh..(h + 1) * dh];
                let mut out = vec![0.0; dh];
                state.step(
                    q.slice(r).as_slice().expect("contiguous"),
                    k.slice(r).as_slice().expect("contiguous"),
                    v.slice(r).as_slice().expect("contiguous"),
                    &mut out,
                );
                att.slice_mut(r).assign(&Array1::from(out));
            }
            x += &att.dot(&lp.wo);
            let b = layer_norm_row(&x, &lp.ln2_gain, &lp.ln2_bias);
            let g = (b.dot(&lp.w1) + &lp.b1.row(0)).mapv(gelu);
            x += &(g.dot(&lp.w2) + &lp.b2.row(0));
            if !x.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite { layer: li + 1 });
            }
        }
        self.steps += 1;
        let z = layer_norm_row(&x, &params.lnf_gain, &params.lnf_bias);
        let head = |w: &Array2<f64>, b: &Array2<f64>| (z.dot(w) + &b.row(0)).to_vec();
        Ok(StepLogits {
            event: head(&params.head_event_w, &params.head_event_b),
            duration: head(&params.head_duration_w, &params.head_duration_b),
            track: head(&params.head_track_w, &params.head_track_b),
            instrument: head(&params.head_instrument_w, &params.head_instrument_b),
        })
    }
}
