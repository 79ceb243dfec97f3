use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmr_core::codec::{self, Event, TokenTuple};
use mmr_core::midi::{parse_midi, write_midi};
use mmr_core::synth::{c_major_chord_score, c_major_scale_score, is_c_major};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmr")).args(args).output().expect("run mmr")
}

fn ok(args: &[&str]) -> String {
    let out = mmr(args);
    assert!(
        out.status.success(),
        "mmr {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path, files: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..files {
        let score = if i % 2 == 0 {
            c_major_scale_score(&mut rng, 8)
        } else {
            c_major_chord_score(&mut rng, 8)
        };
        std::fs::write(dir.join(format!("piece{i}.mid")), write_midi(&score, 120.0)).unwrap();
    }
}

const SMALL_MODEL: &str = "seed=3
model.embed_dim=32
model.layers=1
model.heads=4
model.max_seq=64
train.batch_size=4
train.lr=0.01
sample.max_len=120
";

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        Run { _tmp: tmp, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// ingest through generate; returns the generated token file.
    fn pipeline(&self, steps: usize) -> PathBuf {
        write_corpus(&self.p("midi"), 5, 11);
        std::fs::write(self.p("run.cfg"), SMALL_MODEL).unwrap();
        let cfg = self.p("run.cfg");
        ok(&["ingest", "--input", s(&self.p("midi")), "--out", s(&self.p("scores"))]);
        ok(&["stats", "--input", s(&self.p("scores")), "--out", s(&self.p("stats.txt"))]);
        ok(&["bpe-train", "--input", s(&self.p("scores")), "--out", s(&self.p("vocab.txt")), "--merges", "40"]);
        ok(&[
            "encode", "--input", s(&self.p("scores")), "--vocab", s(&self.p("vocab.txt")), "--out",
            s(&self.p("tokens")),
        ]);
        ok(&[
            "train", "--config", s(&cfg), "--input", s(&self.p("tokens")), "--checkpoint",
            s(&self.p("model.ckpt")), "--steps", &steps.to_string(),
        ]);
        ok(&[
            "generate", "--config", s(&cfg), "--checkpoint", s(&self.p("model.ckpt")), "--vocab",
            s(&self.p("vocab.txt")), "--out", s(&self.p("gen.tok")),
        ]);
        self.p("gen.tok")
    }
}

#[test]
fn render_of_an_empty_sequence_is_an_empty_smf() {
    let run = Run::new();
    let toks = vec![TokenTuple::bare(Event::Bos), TokenTuple::bare(Event::Eos)];
    std::fs::write(run.p("empty.tok"), codec::to_text(&toks)).unwrap();
    ok(&["render", "--input", s(&run.p("empty.tok")), "--out", s(&run.p("empty.mid"))]);
    let score = parse_midi(&std::fs::read(run.p("empty.mid")).unwrap()).unwrap();
    assert!(score.tracks.is_empty());
}

#[test]
fn encode_without_vocab_names_the_flag() {
    let run = Run::new();
    std::fs::create_dir_all(run.p("scores")).unwrap();
    let out = mmr(&["encode", "--input", s(&run.p("scores")), "--out", s(&run.p("tokens"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--vocab"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mmr(&["transmogrify"]).status.code(), Some(1));
    assert_eq!(mmr(&["render", "--bogus"]).status.code(), Some(1));
    assert_eq!(mmr(&["render", "--set", "nope=1"]).status.code(), Some(1));
    assert_eq!(mmr(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_and_generate_require_a_seed() {
    let run = Run::new();
    std::fs::create_dir_all(run.p("tokens")).unwrap();
    let out = mmr(&["train", "--input", s(&run.p("tokens")), "--checkpoint", s(&run.p("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn five_file_pipeline_end_to_end() {
    let run = Run::new();
    let gen = run.pipeline(20);
    let stats = std::fs::read_to_string(run.p("stats.txt")).unwrap();
    assert!(!std::fs::read_to_string(run.p("vocab.txt")).unwrap().is_empty());
    assert!(stats.contains("files=5\n"), "{stats}");
    assert_eq!(std::fs::read_to_string(run.p("scores/errors.txt")).unwrap(), "");
    let log = std::fs::read_to_string(run.p("model.log")).unwrap();
    assert_eq!(log.lines().count(), 20);
    ok(&["render", "--input", s(&gen), "--vocab", s(&run.p("vocab.txt")), "--out", s(&run.p("gen.mid"))]);
    parse_midi(&std::fs::read(run.p("gen.mid")).unwrap()).unwrap();
    let report = ok(&["gradcheck", "--out", s(&run.p("grad.txt"))]);
    assert!(report.contains("worst"), "{report}");

    // the prime and chord modes through the same binary
    std::fs::write(run.p("chords.txt"), "[C_maj]\n[G_maj]\n").unwrap();
    ok(&[
        "generate", "--config", s(&run.p("run.cfg")), "--checkpoint", s(&run.p("model.ckpt")), "--vocab",
        s(&run.p("vocab.txt")), "--chords", s(&run.p("chords.txt")), "--out", s(&run.p("chords.tok")),
    ]);
    let seq = codec::from_text(&std::fs::read_to_string(run.p("chords.tok")).unwrap()).unwrap();
    let names: Vec<String> = codec::chords_of(&seq).iter().take(2).map(|c| c.to_string()).collect();
    assert_eq!(names, ["[C_maj]", "[G_maj]"]);
}

#[test]
fn overfit_model_stays_in_c_major() {
    let run = Run::new();
    let gen = run.pipeline(300);
    let vocab = mmr_core::bpe::MergeVocab::from_text(&std::fs::read_to_string(run.p("vocab.txt")).unwrap()).unwrap();
    let mut total = 0usize;
    let mut inside = 0usize;
    // several samples so the histogram is not one short piece
    for seed in 0..8 {
        let out = run.p(&format!("s{seed}.tok"));
        let toks = if seed == 0 {
            gen.clone()
        } else {
            ok(&[
                "generate", "--config", s(&run.p("run.cfg")), "--seed", &seed.to_string(), "--checkpoint",
                s(&run.p("model.ckpt")), "--vocab", s(&run.p("vocab.txt")), "--out", s(&out),
            ]);
            out
        };
        let seq = codec::from_text(&std::fs::read_to_string(toks).unwrap()).unwrap();
        let score = codec::decode(&seq, &vocab).unwrap();
        for n in score.tracks.iter().flat_map(|t| &t.notes) {
            total += 1;
            inside += is_c_major(n.pitch) as usize;
        }
    }
    assert!(total > 0);
    let frac = inside as f64 / total as f64;
    assert!(frac >= 0.8, "{inside}/{total} = {frac:.3} of generated notes are in C major");
}

#[test]
fn reruns_are_byte_identical() {
    let a = Run::new();
    let b = Run::new();
    a.pipeline(5);
    b.pipeline(5);
    for f in ["vocab.txt", "model.ckpt", "model.log", "gen.tok", "tokens/piece0.tok", "stats.txt"] {
        let x = std::fs::read(a.p(f)).unwrap();
        let y = std::fs::read(b.p(f)).unwrap();
        if f == "stats.txt" {
            // paths differ between the two temp dirs; the counts must not
            let strip = |v: Vec<u8>| String::from_utf8(v).unwrap().lines().filter(|l| !l.starts_with("duplicate.")).collect::<Vec<_>>().join("\n");
            assert_eq!(strip(x), strip(y));
        } else {
            assert_eq!(x, y, "{f} differs");
        }
    }
}
