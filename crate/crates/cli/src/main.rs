//! `mmr`: the MMR pipeline from MIDI files to trained model and back.
//!
//! Exit status is 0 on success, 1 on bad input or usage, 2 when an internal
//! invariant breaks.

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmr_core::exec::Exec;
use mmr_core::pipeline::{self, Command, PipelineConfig, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "mmr", version, about = "Multi-track music tokenization, training and generation")]
struct Cli {
    #[command(subcommand)]
    command: Stage,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value settings file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting (repeatable), e.g. --set train.lr=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every data-parallel loop on one thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct Io {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Stage {
    /// MIDI directory to .score cache plus errors.txt
    Ingest {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        common: Common,
    },
    /// Corpus statistics as key=value text (stdout unless --out)
    Stats {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        common: Common,
    },
    /// Learn a Music BPE vocabulary from a score directory
    BpeTrain {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        merges: Option<usize>,
        #[arg(long)]
        min_freq: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode a score directory into token files
    Encode {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a token directory
    Train {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a token file from a checkpoint
    Generate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Token file to continue
        #[arg(long, conflicts_with = "chords")]
        prime: Option<PathBuf>,
        /// Chord list, one per line
        #[arg(long)]
        chords: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Token file to Standard MIDI File
    Render {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        common: Common,
    },
}

fn put(cfg: &mut PipelineConfig, key: &str, v: Option<impl ToString>) -> Result<(), PipelineError> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

fn build(stage: Stage) -> Result<(Command, PipelineConfig, Exec), PipelineError> {
    let mut flags: Vec<(&str, Option<String>)> = Vec::new();
    let (cmd, io, common) = match stage {
        Stage::Ingest { io, common } => (Command::Ingest, io, common),
        Stage::Stats { io, common } => (Command::Stats, io, common),
        Stage::BpeTrain { io, merges, min_freq, common } => {
            flags.push(("bpe.merges", merges.map(|m| m.to_string())));
            flags.push(("bpe.min_freq", min_freq.map(|m| m.to_string())));
            (Command::BpeTrain, io, common)
        }
        Stage::Encode { io, vocab, common } => {
            flags.push(("vocab", path_str(vocab)));
            (Command::Encode, io, common)
        }
        Stage::Train { io, checkpoint, log, steps, common } => {
            flags.push(("checkpoint", path_str(checkpoint)));
            flags.push(("log", path_str(log)));
            flags.push(("train.max_steps", steps.map(|s| s.to_string())));
            (Command::Train, io, common)
        }
        Stage::Generate { io, checkpoint, vocab, prime, chords, common } => {
            flags.push(("checkpoint", path_str(checkpoint)));
            flags.push(("vocab", path_str(vocab)));
            flags.push(("prime", path_str(prime)));
            flags.push(("chords", path_str(chords)));
            (Command::Generate, io, common)
        }
        Stage::Render { io, vocab, common } => {
            flags.push(("vocab", path_str(vocab)));
            (Command::Render, io, common)
        }
        Stage::Gradcheck { io, common } => (Command::GradCheck, io, common),
    };
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| PipelineError::Input(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    put(&mut cfg, "input", path_str(io.input))?;
    put(&mut cfg, "out", path_str(io.out))?;
    put(&mut cfg, "seed", common.seed)?;
    for (k, v) in flags {
        put(&mut cfg, k, v)?;
    }
    let exec = if common.sequential { Exec::Sequential } else { Exec::default() };
    Ok((cmd, cfg, exec))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = panic::catch_unwind(|| {
        let (cmd, cfg, exec) = build(cli.command)?;
        pipeline::run(cmd, &cfg, exec)
    });
    match outcome {
        Ok(Ok(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal assertion failed");
            ExitCode::from(2)
        }
    }
}
