use crate::codec::{duration_index, Event, Inst, TokenTuple, INST_MASK, MAX_DURATION};

use super::params::ModelConfig;
use super::ModelError;

/// Embedding indices for one input step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepInput {
    pub event: usize,
    pub duration: usize,
    pub instrument: usize,
    pub measure: usize,
    pub onset: usize,
    pub track: usize,
}

/// Targets for the next tuple; `None` means the channel is not scored here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepTarget {
    pub event: usize,
    pub duration: Option<usize>,
    pub track: Option<usize>,
    pub instrument: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub inputs: Vec<StepInput>,
    pub targets: Vec<StepTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub examples: Vec<Example>,
}

impl StepInput {
    /// Input indices for a tuple. The instrument channel is always masked;
    /// positions past the table sizes are clamped to the last row.
    pub fn from_tuple(t: &TokenTuple, cfg: &ModelConfig) -> StepInput {
        StepInput {
            event: t.event.id(),
            duration: duration_index(t.duration.map(|d| d.min(MAX_DURATION))),
            instrument: INST_MASK,
            measure: (t.pos.measure as usize).min(cfg.measure_positions - 1),
            onset: (t.pos.onset as usize).min(cfg.onset_positions - 1),
            track: (t.pos.track as usize).min(cfg.track_positions - 1),
        }
    }

    pub fn check(&self, step: usize, cfg: &ModelConfig) -> Result<(), ModelError> {
        for (channel, v, n) in [
            ("event", self.event, cfg.event_vocab),
            ("duration", self.duration, cfg.duration_vocab),
            ("instrument", self.instrument, cfg.instrument_vocab),
            ("measure", self.measure, cfg.measure_positions),
            ("onset", self.onset, cfg.onset_positions),
            ("track", self.track, cfg.track_positions),
        ] {
            if v >= n {
                return Err(ModelError::Index { step, channel, index: v, size: n });
            }
        }
        Ok(())
    }
}

impl StepTarget {
    pub fn from_tuple(t: &TokenTuple) -> StepTarget {
        let scored_inst = matches!(t.event, Event::Cc | Event::PitchSet(_));
        StepTarget {
            event: t.event.id(),
            duration: t.event.is_pitch_set().then(|| duration_index(t.duration.map(|d| d.clamp(1, MAX_DURATION)))),
            track: (t.track > 0).then_some(t.track as usize),
            instrument: match t.instrument {
                Inst::Program(p) if scored_inst => Some(p as usize),
                _ => None,
            },
        }
    }

    fn check(&self, step: usize, cfg: &ModelConfig) -> Result<(), ModelError> {
        for (channel, v, n) in [
            ("event target", Some(self.event), cfg.event_vocab),
            ("duration target", self.duration, cfg.duration_vocab),
            ("track target", self.track, cfg.track_vocab),
            ("instrument target", self.instrument, cfg.instrument_vocab),
        ] {
            if let Some(v) = v.filter(|&v| v >= n) {
                return Err(ModelError::Index { step, channel, index: v, size: n });
            }
        }
        Ok(())
    }
}

impl Example {
    /// Teacher-forcing pair: inputs are tuples `0..n-1`, targets `1..n`.
    pub fn from_tokens(tokens: &[TokenTuple], cfg: &ModelConfig) -> Result<Example, ModelError> {
        if tokens.len() < 2 {
            return Err(ModelError::Config("a training window needs at least two tuples".into()));
        }
        if tokens.len() - 1 > cfg.max_seq {
            return Err(ModelError::Config(format!(
                "window of {} steps exceeds max_seq {}",
                tokens.len() - 1,
                cfg.max_seq
            )));
        }
        let inputs: Vec<StepInput> = tokens[..tokens.len() - 1].iter().map(|t| StepInput::from_tuple(t, cfg)).collect();
        let targets: Vec<StepTarget> = tokens[1..].iter().map(StepTarget::from_tuple).collect();
        for (i, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            x.check(i, cfg)?;
            y.check(i, cfg)?;
        }
        Ok(Example { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

impl Batch {
    pub fn from_windows<W: AsRef<[TokenTuple]>>(windows: &[W], cfg: &ModelConfig) -> Result<Batch, ModelError> {
        let examples = windows
            .iter()
            .map(|w| Example::from_tokens(w.as_ref(), cfg))
            .collect::<Result<_, _>>()?;
        Ok(Batch { examples })
    }

    /// Scored targets per head: event, duration, track, instrument.
    pub fn target_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for t in self.examples.iter().flat_map(|e| &e.targets) {
            c[0] += 1;
            c[1] += t.duration.is_some() as usize;
            c[2] += t.track.is_some() as usize;
            c[3] += t.instrument.is_some() as usize;
        }
        c
    }

    pub fn tuples(&self) -> usize {
        self.examples.iter().map(Example::len).sum()
    }
}
