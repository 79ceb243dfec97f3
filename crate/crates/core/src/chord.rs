//! Rule-based chord labels, one per measure, by pitch-class template matching.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::score::{QuantizedScore, ScoreError};

pub const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// Chord qualities, in tie-break order. Triads come before sevenths so an
/// exact triad is never reported as a seventh that merely contains it.
///
/// No two (root, quality) templates share a pitch-class set, so every
/// template is recoverable from its own pitch classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quality {
    Maj,
    Min,
    Dim,
    Sus4,
    Maj7,
    Min7,
    Dom7,
    HalfDim7,
    MinMaj7,
    Dom7Sus4,
    Add9,
}

impl Quality {
    pub const ALL: [Quality; 11] = [
        Quality::Maj,
        Quality::Min,
        Quality::Dim,
        Quality::Sus4,
        Quality::Maj7,
        Quality::Min7,
        Quality::Dom7,
        Quality::HalfDim7,
        Quality::MinMaj7,
        Quality::Dom7Sus4,
        Quality::Add9,
    ];

    pub fn intervals(self) -> &'static [u8] {
        match self {
            Quality::Maj => &[0, 4, 7],
            Quality::Min => &[0, 3, 7],
            Quality::Dim => &[0, 3, 6],
            Quality::Sus4 => &[0, 5, 7],
            Quality::Maj7 => &[0, 4, 7, 11],
            Quality::Min7 => &[0, 3, 7, 10],
            Quality::Dom7 => &[0, 4, 7, 10],
            Quality::HalfDim7 => &[0, 3, 6, 10],
            Quality::MinMaj7 => &[0, 3, 7, 11],
            Quality::Dom7Sus4 => &[0, 5, 7, 10],
            Quality::Add9 => &[0, 2, 4, 7],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quality::Maj => "maj",
            Quality::Min => "min",
            Quality::Dim => "dim",
            Quality::Sus4 => "sus4",
            Quality::Maj7 => "maj7",
            Quality::Min7 => "min7",
            Quality::Dom7 => "dom7",
            Quality::HalfDim7 => "halfdim7",
            Quality::MinMaj7 => "minmaj7",
            Quality::Dom7Sus4 => "7sus4",
            Quality::Add9 => "add9",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Template pitch classes as a 12-bit mask for the given root.
    pub fn mask(self, root: u8) -> u16 {
        self.intervals()
            .iter()
            .fold(0u16, |m, &i| m | 1 << ((root + i) % 12))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChordLabel {
    NoChord,
    Chord { root: u8, quality: Quality },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unrecognized chord token `{0}`")]
pub struct ChordParseError(pub String);

impl ChordLabel {
    /// 12 roots x 11 qualities, plus the no-chord label.
    pub const COUNT: usize = 133;

    pub fn index(self) -> usize {
        match self {
            ChordLabel::Chord { root, quality } => root as usize * Quality::ALL.len() + quality.index(),
            ChordLabel::NoChord => Self::COUNT - 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        let q = Quality::ALL.len();
        if i < 12 * q {
            Some(ChordLabel::Chord {
                root: (i / q) as u8,
                quality: Quality::ALL[i % q],
            })
        } else if i == Self::COUNT - 1 {
            Some(ChordLabel::NoChord)
        } else {
            None
        }
    }

    pub fn all() -> impl Iterator<Item = ChordLabel> {
        (0..Self::COUNT).filter_map(ChordLabel::from_index)
    }

    /// Name without brackets: `C_maj7`, `NC`.
    pub fn name(self) -> String {
        match self {
            ChordLabel::NoChord => "NC".to_string(),
            ChordLabel::Chord { root, quality } => format!("{}_{}", NOTE_NAMES[root as usize], quality.name()),
        }
    }

    pub fn parse_name(s: &str) -> Result<Self, ChordParseError> {
        if s == "NC" {
            return Ok(ChordLabel::NoChord);
        }
        let err = || ChordParseError(s.to_string());
        let (root, quality) = s.split_once('_').ok_or_else(err)?;
        let root = NOTE_NAMES.iter().position(|&n| n == root).ok_or_else(err)? as u8;
        let quality = *Quality::ALL.iter().find(|q| q.name() == quality).ok_or_else(err)?;
        Ok(ChordLabel::Chord { root, quality })
    }
}

/// Bracketed token spelling, `[C_maj7]` or `[NC]`.
impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.name())
    }
}

impl FromStr for ChordLabel {
    type Err = ChordParseError;

    /// Accepts `[C_maj7]` or bare `C_maj7`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let inner = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(t);
        ChordLabel::parse_name(inner).map_err(|_| ChordParseError(s.to_string()))
    }
}

/// Non-negative weight per pitch class (C = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PitchClassWeights(pub [u32; 12]);

impl PitchClassWeights {
    pub fn from_classes(classes: &[u8]) -> Self {
        let mut w = [0u32; 12];
        for &c in classes {
            w[(c % 12) as usize] += 1;
        }
        PitchClassWeights(w)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    /// Weights shifted up by `k` semitones.
    pub fn transpose(&self, k: u8) -> Self {
        let mut w = [0u32; 12];
        for (pc, &x) in self.0.iter().enumerate() {
            w[(pc + k as usize) % 12] = x;
        }
        PitchClassWeights(w)
    }

    fn rotated(&self, root: u8) -> [u32; 12] {
        std::array::from_fn(|i| self.0[(root as usize + i) % 12])
    }
}

/// Best-matching chord template for a weighted pitch-class set.
///
/// Score is covered template weight minus half the weight outside the
/// template. Ties go to the earlier quality, then to the root whose rotated
/// weight profile is lexicographically heaviest, then to the lower root. The
/// first two keys are transposition invariant, so the label transposes with
/// its input except for inputs that are themselves rotation symmetric. A
/// winner covering fewer than two distinct pitch classes yields no chord.
pub fn detect_chord(weights: &PitchClassWeights) -> ChordLabel {
    let total: i64 = weights.0.iter().map(|&w| w as i64).sum();
    let mut best: Option<(i64, u32, Quality, [u32; 12], u8)> = None;
    for root in 0..12u8 {
        for &quality in &Quality::ALL {
            let mask = quality.mask(root);
            let mut inside = 0i64;
            let mut covered = 0u32;
            for pc in 0..12 {
                if mask >> pc & 1 == 1 && weights.0[pc] > 0 {
                    inside += weights.0[pc] as i64;
                    covered += 1;
                }
            }
            // Doubled to stay in integers: 2 * inside - outside.
            let score = 2 * inside - (total - inside);
            let rotated = weights.rotated(root);
            let better = match &best {
                None => true,
                Some((s, _, q, r, _)) => {
                    score > *s || (score == *s && (quality < *q || (quality == *q && rotated > *r)))
                }
            };
            if better {
                best = Some((score, covered, quality, rotated, root));
            }
        }
    }
    match best {
        Some((_, covered, quality, _, root)) if covered >= 2 => ChordLabel::Chord { root, quality },
        _ => ChordLabel::NoChord,
    }
}

/// Duration-weighted pitch classes sounding in one measure, percussion excluded.
pub fn measure_pitch_classes(score: &QuantizedScore, measure_index: usize) -> Result<PitchClassWeights, ScoreError> {
    if measure_index >= score.measures.len() {
        return Err(ScoreError::MeasureIndex {
            index: measure_index,
            count: score.measures.len(),
        });
    }
    let start: u32 = score.measures[..measure_index].iter().sum();
    let end = start + score.measures[measure_index];
    let mut w = [0u32; 12];
    for track in score.tracks.iter().filter(|t| !t.is_percussion()) {
        for n in &track.notes {
            let lo = n.onset.max(start);
            let hi = n.end().min(end);
            if hi > lo {
                w[(n.pitch % 12) as usize] += hi - lo;
            }
        }
    }
    Ok(PitchClassWeights(w))
}

/// One label per measure.
pub fn detect_measure_chords(score: &QuantizedScore) -> Vec<ChordLabel> {
    (0..score.measures.len())
        .map(|m| detect_chord(&measure_pitch_classes(score, m).expect("index in range")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{NoteEvent, Track, PERCUSSION};

    fn label(root: u8, quality: Quality) -> ChordLabel {
        ChordLabel::Chord { root, quality }
    }

    /// Exhaustive scorer written out longhand, used to cross-check ties.
    fn brute_force_scores(w: &[u32; 12]) -> Vec<(f64, ChordLabel)> {
        let mut out = Vec::new();
        for root in 0..12u8 {
            for &q in &Quality::ALL {
                let pcs: Vec<usize> = q.intervals().iter().map(|i| ((root + i) % 12) as usize).collect();
                let inside: f64 = pcs.iter().map(|&p| w[p] as f64).sum();
                let outside: f64 = (0..12).filter(|p| !pcs.contains(p)).map(|p| w[p] as f64).sum();
                out.push((inside - 0.5 * outside, label(root, q)));
            }
        }
        out
    }

    #[test]
    fn examples() {
        assert_eq!(detect_chord(&PitchClassWeights::default()), ChordLabel::NoChord);
        let cmaj7 = detect_chord(&PitchClassWeights::from_classes(&[0, 4, 7, 11]));
        assert_eq!(cmaj7, label(0, Quality::Maj7));
        assert_eq!(cmaj7.to_string(), "[C_maj7]");
        assert_eq!(detect_chord(&PitchClassWeights::from_classes(&[2, 5, 9])), label(2, Quality::Min));
        // one pitch class covers a single template tone
        assert_eq!(detect_chord(&PitchClassWeights::from_classes(&[7])), ChordLabel::NoChord);
    }

    #[test]
    fn brute_force_agrees_on_best_score() {
        let cases: [&[u8]; 4] = [&[0, 4, 7, 11], &[2, 5, 9], &[0, 1, 2, 3], &[1, 5, 8, 11, 2]];
        for classes in cases {
            let w = PitchClassWeights::from_classes(classes);
            let scores = brute_force_scores(&w.0);
            let max = scores.iter().map(|s| s.0).fold(f64::MIN, f64::max);
            let got = detect_chord(&w);
            let got_score = scores.iter().find(|s| s.1 == got).unwrap().0;
            assert_eq!(got_score, max, "{classes:?}");
        }
        // {2,5,9}: every template containing all three tones ties at 3; the triad wins
        let scores = brute_force_scores(&PitchClassWeights::from_classes(&[2, 5, 9]).0);
        let tied: Vec<_> = scores.iter().filter(|s| s.0 == 3.0).map(|s| s.1.name()).collect();
        assert_eq!(tied, vec!["D_min", "D_min7", "D_minmaj7", "A#_maj7", "B_halfdim7"]);
    }

    #[test]
    fn templates_are_distinct_and_recovered() {
        let mut masks: Vec<u16> = ChordLabel::all()
            .filter_map(|c| match c {
                ChordLabel::Chord { root, quality } => Some(quality.mask(root)),
                ChordLabel::NoChord => None,
            })
            .collect();
        assert_eq!(masks.len(), 132);
        masks.sort_unstable();
        masks.dedup();
        assert_eq!(masks.len(), 132);
        for c in ChordLabel::all().filter(|c| *c != ChordLabel::NoChord) {
            let ChordLabel::Chord { root, quality } = c else { unreachable!() };
            let classes: Vec<u8> = quality.intervals().iter().map(|i| (root + i) % 12).collect();
            assert_eq!(detect_chord(&PitchClassWeights::from_classes(&classes)), c);
        }
    }

    #[test]
    fn label_text_and_index_roundtrip() {
        for (i, c) in ChordLabel::all().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.to_string().parse::<ChordLabel>().unwrap(), c);
            assert_eq!(c.name().parse::<ChordLabel>().unwrap(), c);
        }
        assert_eq!(ChordLabel::all().count(), 133);
        assert!("[H_maj]".parse::<ChordLabel>().is_err());
    }

    #[test]
    fn measure_weights() {
        let score = QuantizedScore::new(
            vec![
                Track::with_notes(0, vec![NoteEvent::new(60, 0, 32), NoteEvent::new(72, 32, 16), NoteEvent::new(79, 48, 16)]),
                Track::with_notes(PERCUSSION, vec![NoteEvent::new(36, 0, 8)]),
            ],
            vec![32, 32, 32],
        );
        assert_eq!(measure_pitch_classes(&score, 0).unwrap().0[0], 32);
        let m1 = measure_pitch_classes(&score, 1).unwrap();
        assert_eq!((m1.0[0], m1.0[7]), (16, 16));
        assert!(m1.0.iter().enumerate().all(|(pc, &w)| w == 0 || pc == 0 || pc == 7));
        assert!(measure_pitch_classes(&score, 2).unwrap().is_empty());
        assert!(measure_pitch_classes(&score, 3).is_err());
        // a note spanning a barline counts in both measures
        let tie = QuantizedScore::new(vec![Track::with_notes(0, vec![NoteEvent::new(64, 24, 16)])], vec![32, 32]);
        assert_eq!(measure_pitch_classes(&tie, 0).unwrap().0[4], 8);
        assert_eq!(measure_pitch_classes(&tie, 1).unwrap().0[4], 8);
    }

    #[test]
    fn octave_invariance() {
        let a = QuantizedScore::new(vec![Track::with_notes(0, vec![NoteEvent::new(48, 0, 8), NoteEvent::new(64, 0, 8), NoteEvent::new(79, 0, 8)])], vec![32]);
        let b = QuantizedScore::new(vec![Track::with_notes(0, vec![NoteEvent::new(60, 0, 8), NoteEvent::new(52, 0, 8), NoteEvent::new(67, 0, 8)])], vec![32]);
        assert_eq!(detect_measure_chords(&a), detect_measure_chords(&b));
        assert_eq!(detect_measure_chords(&a), vec![label(0, Quality::Maj)]);
    }
}
