use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{DUR_VOCAB, INST_VOCAB, STRUCTURAL_EVENTS, TRACK_VOCAB};

use super::ModelError;

pub const FFN_EXPANSION: usize = 4;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq: usize,
    /// Structural events plus pitch-set tokens.
    pub event_vocab: usize,
    pub duration_vocab: usize,
    pub instrument_vocab: usize,
    pub track_vocab: usize,
    pub measure_positions: usize,
    pub onset_positions: usize,
    pub track_positions: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            layers: 2,
            heads: 4,
            max_seq: 512,
            event_vocab: 1000,
            duration_vocab: DUR_VOCAB,
            instrument_vocab: INST_VOCAB,
            track_vocab: TRACK_VOCAB,
            measure_positions: 256,
            onset_positions: 129,
            track_positions: 33,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Number of config fields stored in a checkpoint header.
    pub const FIELDS: usize = 12;

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.max_seq < 2 {
            return bad("max_seq must be at least 2".into());
        }
        for (name, v) in [
            ("event_vocab", self.event_vocab),
            ("duration_vocab", self.duration_vocab),
            ("instrument_vocab", self.instrument_vocab),
            ("track_vocab", self.track_vocab),
            ("measure_positions", self.measure_positions),
            ("onset_positions", self.onset_positions),
            ("track_positions", self.track_positions),
        ] {
            if v < 2 {
                return bad(format!("{name} must be at least 2"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Pitch-set tokens the event vocabulary leaves room for.
    pub fn pitch_tokens(&self) -> usize {
        self.event_vocab.saturating_sub(STRUCTURAL_EVENTS)
    }

    pub fn to_fields(&self) -> [u64; Self::FIELDS] {
        [
            self.embed_dim as u64,
            self.layers as u64,
            self.heads as u64,
            self.max_seq as u64,
            self.event_vocab as u64,
            self.duration_vocab as u64,
            self.instrument_vocab as u64,
            self.track_vocab as u64,
            self.measure_positions as u64,
            self.onset_positions as u64,
            self.track_positions as u64,
            self.seed,
        ]
    }

    pub fn from_fields(f: &[u64; Self::FIELDS]) -> Self {
        ModelConfig {
            embed_dim: f[0] as usize,
            layers: f[1] as usize,
            heads: f[2] as usize,
            max_seq: f[3] as usize,
            event_vocab: f[4] as usize,
            duration_vocab: f[5] as usize,
            instrument_vocab: f[6] as usize,
            track_vocab: f[7] as usize,
            measure_positions: f[8] as usize,
            onset_positions: f[9] as usize,
            track_positions: f[10] as usize,
            seed: f[11],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// All learnable tensors. Bias and gain vectors are stored as 1 x n.
/// The same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub emb_event: Array2<f64>,
    pub emb_duration: Array2<f64>,
    pub emb_instrument: Array2<f64>,
    pub pos_measure: Array2<f64>,
    pub pos_onset: Array2<f64>,
    pub pos_track: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array2<f64>,
    pub lnf_bias: Array2<f64>,
    pub head_event_w: Array2<f64>,
    pub head_event_b: Array2<f64>,
    pub head_duration_w: Array2<f64>,
    pub head_duration_b: Array2<f64>,
    pub head_track_w: Array2<f64>,
    pub head_track_b: Array2<f64>,
    pub head_instrument_w: Array2<f64>,
    pub head_instrument_b: Array2<f64>,
}

/// What a tensor is, for naming and weight-decay decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub decay: bool,
}

impl ModelParams {
    /// Every tensor zero, including layer-norm gains.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        let f = d * FFN_EXPANSION;
        let z = |r: usize, c: usize| Array2::<f64>::zeros((r, c));
        ModelParams {
            config: *config,
            emb_event: z(config.event_vocab, d),
            emb_duration: z(config.duration_vocab, d),
            emb_instrument: z(config.instrument_vocab, d),
            pos_measure: z(config.measure_positions, d),
            pos_onset: z(config.onset_positions, d),
            pos_track: z(config.track_positions, d),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    ln1_gain: z(1, d),
                    ln1_bias: z(1, d),
                    wq: z(d, d),
                    wk: z(d, d),
                    wv: z(d, d),
                    wo: z(d, d),
                    ln2_gain: z(1, d),
                    ln2_bias: z(1, d),
                    w1: z(d, f),
                    b1: z(1, f),
                    w2: z(f, d),
                    b2: z(1, d),
                })
                .collect(),
            lnf_gain: z(1, d),
            lnf_bias: z(1, d),
            head_event_w: z(d, config.event_vocab),
            head_event_b: z(1, config.event_vocab),
            head_duration_w: z(d, config.duration_vocab),
            head_duration_b: z(1, config.duration_vocab),
            head_track_w: z(d, config.track_vocab),
            head_track_b: z(1, config.track_vocab),
            head_instrument_w: z(d, config.instrument_vocab),
            head_instrument_b: z(1, config.instrument_vocab),
        }
    }

    /// Weights from N(0, 0.02) seeded by `config.seed`; gains 1, biases 0.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let infos = p.tensor_info();
        for (t, info) in p.tensors_mut().into_iter().zip(infos) {
            if info.name.ends_with("gain") {
                t.fill(1.0);
            } else if info.decay {
                t.mapv_inplace(|_| normal.sample(&mut rng));
            }
        }
        Ok(p)
    }

    /// Tensor names in declaration order; matrices decay, biases and gains do not.
    pub fn tensor_info(&self) -> Vec<TensorInfo> {
        let t = |name: String, decay: bool| TensorInfo { name, decay };
        let mut out = vec![
            t("emb_event".into(), true),
            t("emb_duration".into(), true),
            t("emb_instrument".into(), true),
            t("pos_measure".into(), true),
            t("pos_onset".into(), true),
            t("pos_track".into(), true),
        ];
        for i in 0..self.layers.len() {
            for (n, decay) in [
                ("ln1_gain", false),
                ("ln1_bias", false),
                ("wq", true),
                ("wk", true),
                ("wv", true),
                ("wo", true),
                ("ln2_gain", false),
                ("ln2_bias", false),
                ("w1", true),
                ("b1", false),
                ("w2", true),
                ("b2", false),
            ] {
                out.push(t(format!("layer{i}.{n}"), decay));
            }
        }
        for (n, decay) in [
            ("lnf_gain", false),
            ("lnf_bias", false),
            ("head_event_w", true),
            ("head_event_b", false),
            ("head_duration_w", true),
            ("head_duration_b", false),
            ("head_track_w", true),
            ("head_track_b", false),
            ("head_instrument_w", true),
            ("head_instrument_b", false),
        ] {
            out.push(t(n.into(), decay));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![
            &self.emb_event,
            &self.emb_duration,
            &self.emb_instrument,
            &self.pos_measure,
            &self.pos_onset,
            &self.pos_track,
        ];
        for l in &self.layers {
            out.extend([
                &l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2,
            ]);
        }
        out.extend([
            &self.lnf_gain,
            &self.lnf_bias,
            &self.head_event_w,
            &self.head_event_b,
            &self.head_duration_w,
            &self.head_duration_b,
            &self.head_track_w,
            &self.head_track_b,
            &self.head_instrument_w,
            &self.head_instrument_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![
            &mut self.emb_event,
            &mut self.emb_duration,
            &mut self.emb_instrument,
            &mut self.pos_measure,
            &mut self.pos_onset,
            &mut self.pos_track,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.head_event_w,
            &mut self.head_event_b,
            &mut self.head_duration_w,
            &mut self.head_duration_b,
            &mut self.head_track_w,
            &mut self.head_track_b,
            &mut self.head_instrument_w,
            &mut self.head_instrument_b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.tensors_mut() {
            a.mapv_inplace(|x| x * k);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
