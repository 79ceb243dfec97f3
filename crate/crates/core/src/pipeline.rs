//! The batch pipeline: ingest, stats, bpe-train, encode, train, generate,
//! render and gradcheck, driven by a flat `key=value` configuration.
//!
//! Every stage reads its inputs from paths in the configuration and writes
//! files whose format the next stage reads back unchanged. Given the same
//! inputs and seed, every stage writes the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bpe::{extract_mulpies, train_with, BpeError, MergeVocab, DEFAULT_MIN_FREQ};
use crate::chord::{detect_measure_chords, ChordLabel};
use crate::codec::{self, TokenSeq, STRUCTURAL_EVENTS};
use crate::exec::Exec;
use crate::midi::{parse_midi, write_midi, DEFAULT_TEMPO_BPM};
use crate::model::{checkpoint, Batch, ModelConfig, ModelError, ModelParams};
use crate::runner::{self, Condition, RunError, SampleConfig, TrainConfig};
use crate::score::{self, DEFAULT_MAX_TRACKS};
use crate::stats::{corpus_stats, load_score};
use crate::synth::{random_score, ScoreShape};

pub const SCORE_EXT: &str = "score";
pub const TOKEN_EXT: &str = "tok";
const MIDI_EXTS: [&str; 2] = ["mid", "midi"];

/// Merges that fill the default 1000-event vocabulary exactly.
pub const DEFAULT_MERGES: usize = 1000 - STRUCTURAL_EVENTS - 128;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad arguments or unusable input files; exit status 1.
    #[error("{0}")]
    Input(String),
    /// A broken internal invariant; exit status 2.
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 1,
            PipelineError::Internal(_) => 2,
        }
    }
}

fn input(msg: impl fmt::Display) -> PipelineError {
    PipelineError::Input(msg.to_string())
}

impl From<RunError> for PipelineError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::NonFinite { .. } => PipelineError::Internal(e.to_string()),
            e => PipelineError::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => PipelineError::Internal(e.to_string()),
            e => PipelineError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Stats,
    BpeTrain,
    Encode,
    Train,
    Generate,
    Render,
    GradCheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Ingest,
        Command::Stats,
        Command::BpeTrain,
        Command::Encode,
        Command::Train,
        Command::Generate,
        Command::Render,
        Command::GradCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Stats => "stats",
            Command::BpeTrain => "bpe-train",
            Command::Encode => "encode",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Render => "render",
            Command::GradCheck => "gradcheck",
        }
    }
}

impl FromStr for Command {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| input(format!("unknown command `{s}`")))
    }
}

/// Recognized keys and a one-line description of each.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "input file or directory of the stage"),
    ("out", "output file or directory of the stage"),
    ("vocab", "merge vocabulary file"),
    ("checkpoint", "model checkpoint file"),
    ("log", "loss log file (default: <checkpoint>.log)"),
    ("prime", "token file to continue from (generate)"),
    ("chords", "chord list, one chord per line (generate)"),
    ("seed", "seed for init, shuffling and sampling; required by train and generate"),
    ("bpe.merges", "number of merges to learn"),
    ("bpe.min_freq", "smallest pair count worth merging"),
    ("model.embed_dim", "model width"),
    ("model.layers", "decoder blocks"),
    ("model.heads", "attention heads"),
    ("model.max_seq", "training window length"),
    ("model.event_vocab", "event vocabulary size (393 structural + pitch-set tokens)"),
    ("train.lr", "AdamW learning rate"),
    ("train.batch_size", "windows per step"),
    ("train.max_steps", "optimizer steps"),
    ("train.weight_decay", "decoupled weight decay"),
    ("train.clip_norm", "global gradient norm bound"),
    ("train.checkpoint_every", "steps between intermediate checkpoints (0: final only)"),
    ("sample.temperature", "softmax temperature"),
    ("sample.top_p", "nucleus mass"),
    ("sample.max_len", "longest generated sequence in tuples"),
    ("render.tempo", "tempo written to rendered MIDI, in BPM"),
    ("gradcheck.h", "finite-difference step"),
    ("gradcheck.windows", "windows in the checked batch"),
];

/// Flat string settings; later writes win, so flags set after the file
/// override it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipelineConfig {
    entries: BTreeMap<String, String>,
}

impl PipelineConfig {
    /// Parse `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| input(format!("config line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(input(format!("unknown setting `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, PipelineError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| input(format!("setting `{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, PipelineError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// A required path, with an error naming the flag that sets it.
    pub fn path(&self, key: &str) -> Result<PathBuf, PipelineError> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| input(format!("missing required --{key} (or `{key}=` in the config file)")))
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.parsed("seed")?
            .ok_or_else(|| input("missing required --seed (or `seed=` in the config file)"))
    }

    pub fn model_config(&self, defaults: ModelConfig, seed: u64) -> Result<ModelConfig, PipelineError> {
        let cfg = ModelConfig {
            embed_dim: self.or("model.embed_dim", defaults.embed_dim)?,
            layers: self.or("model.layers", defaults.layers)?,
            heads: self.or("model.heads", defaults.heads)?,
            max_seq: self.or("model.max_seq", defaults.max_seq)?,
            event_vocab: self.or("model.event_vocab", defaults.event_vocab)?,
            seed,
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, PipelineError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            lr: self.or("train.lr", d.lr)?,
            batch_size: self.or("train.batch_size", d.batch_size)?,
            max_steps: self.or("train.max_steps", d.max_steps)?,
            weight_decay: self.or("train.weight_decay", d.weight_decay)?,
            clip_norm: self.or("train.clip_norm", d.clip_norm)?,
            checkpoint_every: self.or("train.checkpoint_every", d.checkpoint_every)?,
            seed,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sample_config(&self, seed: u64) -> Result<SampleConfig, PipelineError> {
        let d = SampleConfig::default();
        let cfg = SampleConfig {
            temperature: self.or("sample.temperature", d.temperature)?,
            top_p: self.or("sample.top_p", d.top_p)?,
            max_len: self.or("sample.max_len", d.max_len)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    String::from_utf8(read(path)?).map_err(|_| input(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Files in `dir` with one of `exts`, sorted by name.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| input(format!("{}: {e}", dir.display())))?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|x| exts.contains(&x.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_vocab(path: &Path) -> Result<MergeVocab, PipelineError> {
    MergeVocab::from_text(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn load_tokens(path: &Path) -> Result<TokenSeq, PipelineError> {
    codec::from_text(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, PipelineError> {
    checkpoint::load(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// One chord per line, bracketed (`[C_maj]`) or bare; blank lines skipped.
pub fn parse_chord_list(text: &str) -> Result<Vec<ChordLabel>, PipelineError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| l.parse().map_err(|e| input(format!("chord {}: {e}", i + 1))))
        .collect()
}

/// Run one stage and return a short human-readable summary.
pub fn run(cmd: Command, cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    match cmd {
        Command::Ingest => ingest(cfg, exec),
        Command::Stats => stats(cfg, exec),
        Command::BpeTrain => bpe_train(cfg, exec),
        Command::Encode => encode(cfg, exec),
        Command::Train => train(cfg, exec),
        Command::Generate => generate(cfg),
        Command::Render => render(cfg),
        Command::GradCheck => gradcheck(cfg, exec),
    }
}

/// MIDI directory -> one `.score` file per parsed file, plus `errors.txt`.
fn ingest(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let src = cfg.path("input")?;
    let dst = cfg.path("out")?;
    let files = list_files(&src, &MIDI_EXTS)?;
    let parsed = exec.map(&files, |p| {
        let bytes = std::fs::read(p).map_err(|e| e.to_string())?;
        let s = parse_midi(&bytes).map_err(|e| e.to_string())?;
        s.validate(DEFAULT_MAX_TRACKS).map_err(|e| e.to_string())?;
        Ok::<_, String>(s)
    });
    let mut report = String::new();
    let mut ok = 0;
    for (p, r) in files.iter().zip(parsed) {
        match r {
            Ok(s) => {
                write(&dst.join(format!("{}.{SCORE_EXT}", stem(p))), score::to_text(&s))?;
                ok += 1;
            }
            Err(e) => {
                warn!("{}: {e}", p.display());
                report.push_str(&format!("{}\t{e}\n", p.display()));
            }
        }
    }
    write(&dst.join("errors.txt"), &report)?;
    Ok(format!("ingested {ok} of {} files", files.len()))
}

fn stats(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let src = cfg.path("input")?;
    let files = list_files(&src, &["mid", "midi", SCORE_EXT])?;
    let text = corpus_stats(&files, exec).to_text();
    match cfg.get("out") {
        Some(out) => {
            write(Path::new(out), &text)?;
            Ok(format!("wrote stats for {} files to {out}", files.len()))
        }
        None => Ok(text.trim_end().to_string()),
    }
}

fn load_scores(dir: &Path) -> Result<Vec<(PathBuf, score::QuantizedScore)>, PipelineError> {
    let files = list_files(dir, &[SCORE_EXT, "mid", "midi"])?;
    if files.is_empty() {
        return Err(input(format!("{}: no .score or MIDI files", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let s = load_score(&p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            Ok((p, s))
        })
        .collect()
}

fn bpe_train(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let scores = load_scores(&cfg.path("input")?)?;
    let out = cfg.path("out")?;
    let merges = cfg.or("bpe.merges", DEFAULT_MERGES)?;
    let min_freq = cfg.or("bpe.min_freq", DEFAULT_MIN_FREQ)?;
    let bag: Vec<_> = scores.iter().enumerate().flat_map(|(i, (_, s))| extract_mulpies(s, i)).collect();
    let vocab = train_with(&bag, 128 + merges, min_freq, exec).map_err(|e: BpeError| input(e))?;
    write(&out, vocab.to_text())?;
    Ok(format!("learned {} merges from {} mulpies", vocab.merges().len(), bag.len()))
}

fn encode(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let src = cfg.path("input")?;
    let out = cfg.path("out")?;
    let vocab = load_vocab(&cfg.path("vocab")?)?;
    let scores = load_scores(&src)?;
    let encoded = exec.map(&scores, |(p, s)| {
        codec::encode(s, &detect_measure_chords(s), &vocab).map_err(|e| input(format!("{}: {e}", p.display())))
    });
    for ((p, _), seq) in scores.iter().zip(encoded) {
        write(&out.join(format!("{}.{TOKEN_EXT}", stem(p))), codec::to_text(&seq?))?;
    }
    Ok(format!("encoded {} files", scores.len()))
}

fn load_token_dir(dir: &Path) -> Result<Vec<TokenSeq>, PipelineError> {
    let files = list_files(dir, &[TOKEN_EXT])?;
    if files.is_empty() {
        return Err(input(format!("{}: no .{TOKEN_EXT} files", dir.display())));
    }
    files.iter().map(|p| load_tokens(p)).collect()
}

fn train(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let seed = cfg.seed()?;
    let corpus = load_token_dir(&cfg.path("input")?)?;
    let ckpt = cfg.path("checkpoint")?;
    let log_path = cfg.get("log").map(PathBuf::from).unwrap_or_else(|| ckpt.with_extension("log"));
    let model = cfg.model_config(ModelConfig::default(), seed)?;
    let tc = cfg.train_config(seed)?;
    let mut io_err = None;
    let out = runner::train_loop(&model, &tc, &corpus, exec, |step, p| {
        if step < tc.max_steps {
            let path = ckpt.with_extension(format!("step{step}"));
            if let Err(e) = write(&path, checkpoint::save(p)) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write(&ckpt, checkpoint::save(&out.params))?;
    write(&log_path, runner::format_log(&out.log))?;
    let last = out.log.last().map(|e| e.loss.total).unwrap_or(f64::NAN);
    info!("final loss {last:.4}");
    Ok(format!("trained {} steps, final loss {last:.4}", tc.max_steps))
}

fn generate(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let seed = cfg.seed()?;
    let params = load_checkpoint(&cfg.path("checkpoint")?)?;
    let vocab = load_vocab(&cfg.path("vocab")?)?;
    let out = cfg.path("out")?;
    let sc = cfg.sample_config(seed)?;
    let condition = match (cfg.get("prime"), cfg.get("chords")) {
        (Some(_), Some(_)) => return Err(input("--prime and --chords are mutually exclusive")),
        (Some(p), None) => Condition::Prime(load_tokens(Path::new(p))?),
        (None, Some(c)) => Condition::Chords(parse_chord_list(&read_text(Path::new(c))?)?),
        (None, None) => Condition::Unconditional,
    };
    let seq = runner::generate(&params, vocab.len(), &sc, &condition)?;
    codec::validate(&seq, vocab.len()).map_err(|e| PipelineError::Internal(format!("generated sequence: {e}")))?;
    write(&out, codec::to_text(&seq))?;
    Ok(format!("generated {} tuples", seq.len()))
}

fn render(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let tokens = load_tokens(&cfg.path("input")?)?;
    let out = cfg.path("out")?;
    let vocab = match cfg.get("vocab") {
        Some(v) => load_vocab(Path::new(v))?,
        None => MergeVocab::base(),
    };
    let tempo = cfg.or("render.tempo", DEFAULT_TEMPO_BPM)?;
    if !(tempo > 0.0 && tempo.is_finite()) {
        return Err(input("render.tempo must be positive"));
    }
    let score = codec::decode(&tokens, &vocab).map_err(input)?;
    write(&out, write_midi(&score, tempo))?;
    Ok(format!("rendered {} notes", score.note_count()))
}

/// Default desk model for gradient checks.
pub fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        max_seq: 32,
        event_vocab: STRUCTURAL_EVENTS + 128,
        ..ModelConfig::default()
    }
}

fn gradcheck(cfg: &PipelineConfig, exec: Exec) -> Result<String, PipelineError> {
    let seed = cfg.or("seed", 42u64)?;
    let model = cfg.model_config(gradcheck_model(), seed)?;
    let h = cfg.or("gradcheck.h", 1e-4)?;
    let n = cfg.or("gradcheck.windows", 2usize)?.max(1);
    let corpus = match cfg.get("input") {
        Some(dir) => load_token_dir(Path::new(dir))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = ScoreShape {
                max_tracks: 2,
                max_measures: 2,
                max_notes_per_track: 8,
                ..ScoreShape::default()
            };
            let base = MergeVocab::base();
            (0..n)
                .map(|_| codec::encode_score(&random_score(&mut rng, &shape), &base))
                .collect::<Result<_, _>>()
                .map_err(|e| PipelineError::Internal(e.to_string()))?
        }
    };
    let ws: Vec<TokenSeq> = corpus.iter().flat_map(|s| runner::windows(s, model.max_seq)).take(n).collect();
    let batch = Batch::from_windows(&ws, &model)?;
    let params = ModelParams::init(&model)?;
    let report = runner::finite_diff_check(&params, &batch, h, exec)?;
    let text = report.to_text();
    if let Some(out) = cfg.get("out") {
        write(Path::new(out), &text)?;
    }
    Ok(format!(
        "checked {} parameters, worst {} at {:.3e}",
        report.checked, report.worst.0, report.worst.1
    ))
}
