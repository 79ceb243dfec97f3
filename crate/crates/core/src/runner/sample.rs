//! Grammar-constrained sampling with temperature and nucleus filtering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chord::ChordLabel;
use crate::codec::{DecoderState, Event, Inst, Phase, TokenSeq, TokenTuple, MAX_DURATION, MAX_TRACK_ORD, PS_BASE};
use crate::model::{InferenceCache, ModelParams, StepInput, StepLogits};
use crate::score::PERCUSSION;

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub temperature: f64,
    /// Nucleus mass in (0, 1].
    pub top_p: f64,
    /// Longest output, counting BOS and EOS.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            top_p: 0.9,
            max_len: 512,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(RunError::Invalid("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(RunError::Invalid("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Unconditional,
    /// Teacher-force these tuples (a grammar-valid prefix), then continue.
    Prime(TokenSeq),
    /// Force `CHORD_{c_m}` at measure m for every listed chord.
    Chords(Vec<ChordLabel>),
}

/// Draw an index from `candidates` with probabilities from `logits`
/// restricted to the candidates, scaled by `1 / temperature`, and cut to the
/// smallest top set whose mass reaches `top_p`. Returns the choice and its
/// log-probability under the filtered distribution.
pub fn nucleus_sample<R: Rng + ?Sized>(
    logits: &[f64],
    candidates: &[usize],
    temperature: f64,
    top_p: f64,
    rng: &mut R,
) -> (usize, f64) {
    assert!(!candidates.is_empty(), "no admissible token");
    let max = candidates.iter().map(|&i| logits[i] / temperature).fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, (logits[i] / temperature - max).exp())).collect();
    let z: f64 = probs.iter().map(|p| p.1).sum();
    for p in &mut probs {
        p.1 /= z;
    }
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    let mut keep = 0;
    for p in &probs {
        mass += p.1;
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    probs.truncate(keep);
    let z: f64 = probs.iter().map(|p| p.1).sum();
    let mut u = rng.random::<f64>() * z;
    for &(i, p) in &probs {
        if u < p {
            return (i, (p / z).ln());
        }
        u -= p;
    }
    let (i, p) = *probs.last().expect("nonempty");
    (i, (p / z).ln())
}

/// An in-progress generation: grammar state, model state, and output so far.
pub struct Generation<'a> {
    params: &'a ModelParams,
    cfg: SampleConfig,
    chords: Vec<ChordLabel>,
    state: DecoderState,
    cache: InferenceCache,
    logits: Option<StepLogits>,
    rng: ChaCha8Rng,
    pub tokens: TokenSeq,
    /// Summed log-probability of the sampled (not forced) event choices.
    pub log_prob: f64,
    pub sampled_steps: usize,
}

impl<'a> Generation<'a> {
    /// `pitch_tokens` is the BPE vocabulary size; ids beyond the model's
    /// event table are never proposed.
    pub fn new(params: &'a ModelParams, pitch_tokens: usize, cfg: SampleConfig, condition: &Condition) -> Result<Self, RunError> {
        cfg.validate()?;
        let pitch_tokens = pitch_tokens.min(params.config.pitch_tokens());
        let chords = match condition {
            Condition::Chords(c) if c.is_empty() => return Err(RunError::Invalid("chord list is empty".into())),
            Condition::Chords(c) => c.clone(),
            _ => Vec::new(),
        };
        let mut g = Generation {
            params,
            cfg,
            chords,
            state: DecoderState::new(pitch_tokens),
            cache: InferenceCache::new(params),
            logits: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tokens: Vec::new(),
            log_prob: 0.0,
            sampled_steps: 0,
        };
        let min_len = 2 + 3 * g.chords.len();
        if cfg.max_len < min_len {
            return Err(RunError::Invalid(format!("max_len {} cannot fit {min_len} required tuples", cfg.max_len)));
        }
        match condition {
            Condition::Prime(prime) => {
                for t in prime {
                    g.state.advance(t).map_err(RunError::Codec)?;
                    g.feed(*t)?;
                }
                if g.tokens.len() + g.state.closing_cost() > cfg.max_len {
                    return Err(RunError::Invalid("prime leaves no room to close within max_len".into()));
                }
            }
            _ => {
                let bos = TokenTuple::bare(Event::Bos);
                g.state.advance(&bos).map_err(RunError::Codec)?;
                g.feed(bos)?;
            }
        }
        Ok(g)
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    fn feed(&mut self, t: TokenTuple) -> Result<(), RunError> {
        self.tokens.push(t);
        let input = StepInput::from_tuple(&t, &self.params.config);
        self.logits = Some(self.cache.step(self.params, &input)?);
        Ok(())
    }

    /// Measures that must still be opened to place every forced chord.
    fn chords_pending_after(&self, e: Event) -> usize {
        let opened = self.state.measure() as usize + matches!(e, Event::Bom(_)) as usize;
        self.chords.len().saturating_sub(opened)
    }

    fn fits(&self, e: Event) -> bool {
        if e == Event::Eos && (self.state.measure() as usize) < self.chords.len() {
            return false;
        }
        let need = self.state.phase_after(e).closing_cost() + 3 * self.chords_pending_after(e);
        self.tokens.len() + 1 + need <= self.cfg.max_len
    }

    fn forced_chord(&self) -> Option<ChordLabel> {
        (self.state.phase() == Phase::ExpectChord)
            .then(|| self.chords.get(self.state.measure() as usize - 1).copied())
            .flatten()
    }

    /// Produce, record and feed the next tuple.
    pub fn sample_step(&mut self) -> Result<TokenTuple, RunError> {
        if self.state.is_done() {
            return Err(RunError::Invalid("generation already finished".into()));
        }
        let logits = self.logits.take().expect("a tuple has been fed");
        let temp = self.cfg.temperature;
        let top_p = self.cfg.top_p;
        let event = if let Some(c) = self.forced_chord() {
            Event::Chord(c)
        } else {
            let n_events = PS_BASE + self.state.pitch_tokens();
            let candidates: Vec<usize> = (0..n_events)
                .filter(|&id| {
                    let e = Event::from_id(id);
                    self.state.admits(e) && self.fits(e)
                })
                .collect();
            let (id, lp) = nucleus_sample(&logits.event, &candidates, temp, top_p, &mut self.rng);
            self.log_prob += lp;
            self.sampled_steps += 1;
            Event::from_id(id)
        };
        let mut t = TokenTuple::bare(event);
        match event {
            Event::Cc => {
                let tracks: Vec<usize> = (1..=MAX_TRACK_ORD as usize)
                    .filter(|&r| r < logits.track.len() && self.state.track_admissible(r as u32))
                    .collect();
                t.track = nucleus_sample(&logits.track, &tracks, temp, top_p, &mut self.rng).0 as u32;
                let programs: Vec<usize> = (0..=PERCUSSION as usize).filter(|&p| p < logits.instrument.len()).collect();
                t.instrument = Inst::Program(nucleus_sample(&logits.instrument, &programs, temp, top_p, &mut self.rng).0 as u8);
            }
            Event::Pos(_) => t.track = self.state.track(),
            Event::PitchSet(_) => {
                let durs: Vec<usize> = (1..=MAX_DURATION as usize).filter(|&d| d < logits.duration.len()).collect();
                t.duration = Some(nucleus_sample(&logits.duration, &durs, temp, top_p, &mut self.rng).0 as u32);
                t.track = self.state.track();
                t.instrument = Inst::Program(self.state.instrument());
            }
            _ => {}
        }
        t.pos = self.state.clone().step(event, t.track).map_err(RunError::Codec)?;
        self.state.advance(&t).map_err(RunError::Codec)?;
        if self.state.is_done() {
            self.tokens.push(t);
        } else {
            self.feed(t)?;
        }
        Ok(t)
    }
}

/// Generate a complete sequence under `condition`.
pub fn generate(
    params: &ModelParams,
    pitch_tokens: usize,
    cfg: &SampleConfig,
    condition: &Condition,
) -> Result<TokenSeq, RunError> {
    let mut g = Generation::new(params, pitch_tokens, *cfg, condition)?;
    while !g.is_done() {
        g.sample_step()?;
    }
    Ok(g.tokens)
}
