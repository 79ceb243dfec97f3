use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Event, TokenSeq, TokenTuple};
use crate::exec::Exec;
use crate::model::{gradients, Batch, LossReport, ModelConfig, ModelParams};

use super::optim::{clip_grad_norm, AdamW};
use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub clip_norm: f64,
    /// Seeds window shuffling; model init uses the model config seed.
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 means only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_steps: 1000,
            clip_norm: 1.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.lr > 0.0) {
            return Err(RunError::Invalid("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(RunError::Invalid("batch size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(RunError::Invalid("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Split a sequence into windows of at most `max_seq + 1` tuples that start
/// at BOS or a BOM and end after an EOM or EOS. Measure ordinals are
/// re-based so each window's first measure is 1. A single measure longer
/// than a window is cut into consecutive pieces.
pub fn windows(tokens: &[TokenTuple], max_seq: usize) -> Vec<TokenSeq> {
    let cap = max_seq + 1;
    // break points: every index where a measure (or the closing EOS) ends
    let mut units: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(t.event, Event::Eom | Event::Eos) {
            units.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        units.push((start, tokens.len()));
    }
    let mut out = Vec::new();
    let mut cur: Option<(usize, usize)> = None;
    let flush = |range: (usize, usize), out: &mut Vec<TokenSeq>| {
        let slice = &tokens[range.0..range.1];
        if slice.len() >= 2 {
            out.push(rebase(slice));
        }
    };
    for (a, b) in units {
        if b - a > cap {
            if let Some(c) = cur.take() {
                flush(c, &mut out);
            }
            let mut s = a;
            while s < b {
                let mut e = (s + cap).min(b);
                if b - e == 1 {
                    // keep the last piece at two tuples or more
                    e -= 1;
                }
                flush((s, e), &mut out);
                s = e;
            }
            continue;
        }
        cur = match cur {
            Some((s, _)) if b - s <= cap => Some((s, b)),
            Some(c) => {
                flush(c, &mut out);
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some(c) = cur {
        flush(c, &mut out);
    }
    out
}

fn rebase(slice: &[TokenTuple]) -> TokenSeq {
    let first = slice.iter().map(|t| t.pos.measure).find(|&m| m > 0).unwrap_or(1);
    slice
        .iter()
        .map(|t| {
            let mut t = *t;
            if t.pos.measure > 0 {
                t.pos.measure -= first - 1;
            }
            t
        })
        .collect()
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: LossReport,
}

pub fn format_log(entries: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let l = e.loss;
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            e.step, l.total, l.event, l.duration, l.track, l.instrument
        );
    }
    s
}

/// Owns the parameters and optimizer state; one call to `step` is one
/// AdamW update on one batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub config: TrainConfig,
    opt: AdamW,
    exec: Exec,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig, exec: Exec) -> Result<Self, RunError> {
        config.validate()?;
        let opt = AdamW::new(&params, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay);
        Ok(Trainer {
            params,
            config,
            opt,
            exec,
        })
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    /// Loss before the update, as logged.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport, RunError> {
        let step = self.opt.steps() as usize;
        let (loss, mut grads) = gradients(&self.params, batch, self.exec)?;
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(RunError::NonFinite { step });
        }
        clip_grad_norm(&mut grads, self.config.clip_norm);
        self.opt.update(&mut self.params, &grads);
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<LogEntry>,
}

/// Train from scratch on windows of `corpus`. Windows are shuffled once per
/// pass with the train seed, and batches are taken in that order. The
/// callback runs every `checkpoint_every` steps and after the last one.
pub fn train_loop(
    model: &ModelConfig,
    train: &TrainConfig,
    corpus: &[TokenSeq],
    exec: Exec,
    mut on_checkpoint: impl FnMut(usize, &ModelParams),
) -> Result<TrainOutput, RunError> {
    train.validate()?;
    let all: Vec<TokenSeq> = corpus.iter().flat_map(|s| windows(s, model.max_seq)).collect();
    if all.is_empty() {
        return Err(RunError::Invalid("training corpus is empty".into()));
    }
    let params = ModelParams::init(model)?;
    let mut trainer = Trainer::new(params, *train, exec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(train.max_steps);
    for step in 0..train.max_steps {
        let mut picked = Vec::with_capacity(train.batch_size);
        while picked.len() < train.batch_size.min(all.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&all[order[cursor]]);
            cursor += 1;
        }
        let batch = Batch::from_windows(&picked, model)?;
        let loss = trainer.step(&batch)?;
        log.push(LogEntry { step, loss });
        if train.checkpoint_every > 0 && (step + 1) % train.checkpoint_every == 0 && step + 1 < train.max_steps {
            on_checkpoint(step + 1, &trainer.params);
        }
    }
    on_checkpoint(train.max_steps, &trainer.params);
    Ok(TrainOutput {
        params: trainer.params,
        log,
    })
}
