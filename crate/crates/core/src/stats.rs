//! Corpus scanning: counts, histograms and duplicate detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bpe::MergeVocab;
use crate::chord::detect_measure_chords;
use crate::codec::encode;
use crate::exec::Exec;
use crate::midi::parse_midi;
use crate::score::{self, QuantizedScore};

/// Aggregate statistics over a set of files. Unreadable or unparseable
/// files are listed in `failures` and otherwise ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub files: usize,
    pub parsed: usize,
    pub notes: usize,
    pub tracks: usize,
    pub measures: usize,
    /// Base-vocabulary MMR length, bucketed by powers of two (key = bucket floor).
    pub token_lengths: BTreeMap<usize, usize>,
    /// Scores the codec could not encode (too many tracks, for example).
    pub unencodable: usize,
    /// Measure length in grid units -> number of measures.
    pub measure_lengths: BTreeMap<u32, usize>,
    /// Files whose note content hashes equal, groups of two or more.
    pub duplicate_groups: Vec<Vec<String>>,
    pub failures: Vec<(String, String)>,
}

/// Hex SHA-256 of the score's notes as a multiset of
/// `(instrument, onset, pitch, duration)`; track order and velocity are ignored.
pub fn content_hash(score: &QuantizedScore) -> String {
    let mut notes: Vec<(u8, u32, u8, u32)> = score
        .tracks
        .iter()
        .flat_map(|t| t.notes.iter().map(move |n| (t.instrument, n.onset, n.pitch, n.duration)))
        .collect();
    notes.sort_unstable();
    let mut h = Sha256::new();
    for (i, o, p, d) in notes {
        h.update([i]);
        h.update(o.to_le_bytes());
        h.update([p]);
        h.update(d.to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn bucket(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - len.leading_zeros())
    }
}

/// Read a score from a `.score` text file or a Standard MIDI File.
pub fn load_score(path: &Path) -> Result<QuantizedScore, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    if path.extension().is_some_and(|e| e == "score") {
        let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
        score::from_text(&text).map_err(|e| e.to_string())
    } else {
        parse_midi(&bytes).map_err(|e| e.to_string())
    }
}

struct FileSummary {
    name: String,
    result: Result<(QuantizedScore, String, Option<usize>), String>,
}

fn summarize(path: &PathBuf, base: &MergeVocab) -> FileSummary {
    let result = load_score(path).map(|s| {
        let hash = content_hash(&s);
        let len = encode(&s, &detect_measure_chords(&s), base).ok().map(|t| t.len());
        (s, hash, len)
    });
    FileSummary {
        name: path.display().to_string(),
        result,
    }
}

/// Scan `paths` in order. Per-file work runs under `exec`; merging is
/// sequential so the result does not depend on the strategy.
pub fn corpus_stats(paths: &[PathBuf], exec: Exec) -> CorpusStats {
    let base = MergeVocab::base();
    let summaries = exec.map(paths, |p| summarize(p, &base));
    let mut st = CorpusStats {
        files: paths.len(),
        ..CorpusStats::default()
    };
    let mut by_hash: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in summaries {
        match f.result {
            Ok((s, hash, len)) => {
                st.parsed += 1;
                st.notes += s.note_count();
                st.tracks += s.tracks.len();
                st.measures += s.measures.len();
                for &m in &s.measures {
                    *st.measure_lengths.entry(m).or_default() += 1;
                }
                match len {
                    Some(l) => *st.token_lengths.entry(bucket(l)).or_default() += 1,
                    None => st.unencodable += 1,
                }
                by_hash.entry(hash).or_default().push(f.name);
            }
            Err(e) => st.failures.push((f.name, e)),
        }
    }
    st.duplicate_groups = by_hash.into_values().filter(|g| g.len() > 1).collect();
    st
}

impl CorpusStats {
    /// Line-oriented `key=value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "files={}", self.files);
        let _ = writeln!(s, "parsed={}", self.parsed);
        let _ = writeln!(s, "failed={}", self.failures.len());
        let _ = writeln!(s, "notes={}", self.notes);
        let _ = writeln!(s, "tracks={}", self.tracks);
        let _ = writeln!(s, "measures={}", self.measures);
        let _ = writeln!(s, "unencodable={}", self.unencodable);
        for (b, n) in &self.token_lengths {
            let _ = writeln!(s, "token_length.{b}={n}");
        }
        for (len, n) in &self.measure_lengths {
            let _ = writeln!(s, "measure_length.{len}={n}");
        }
        let _ = writeln!(s, "duplicate_groups={}", self.duplicate_groups.len());
        for (i, g) in self.duplicate_groups.iter().enumerate() {
            let _ = writeln!(s, "duplicate.{i}={}", g.join(","));
        }
        for (i, (name, reason)) in self.failures.iter().enumerate() {
            let _ = writeln!(s, "failure.{i}={name}: {reason}");
        }
        s
    }
}
