//! Canonical quantized score: notes on a 32nd-note grid, grouped into tracks.

use thiserror::Error;

/// Grid units per quarter note (the grid is the 32nd note).
pub const UNITS_PER_QUARTER: u32 = 8;
/// Instrument id used for General MIDI channel 10 percussion.
pub const PERCUSSION: u8 = 128;
/// Longest representable measure, in grid units.
pub const MAX_MEASURE_LEN: u32 = 128;
pub const DEFAULT_MAX_TRACKS: usize = 32;
/// Velocity given to notes that carry no velocity of their own (decoded or generated).
pub const DEFAULT_VELOCITY: u8 = 80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("measure {index} has length {len}, expected 1..={max}", max = MAX_MEASURE_LEN)]
    MeasureLength { index: usize, len: u32 },
    #[error("score has {count} tracks, maximum is {max}")]
    TooManyTracks { count: usize, max: usize },
    #[error("track {track}: invalid instrument {instrument}")]
    Instrument { track: usize, instrument: u8 },
    #[error("track {track}: invalid note {note:?}")]
    InvalidNote { track: usize, note: NoteEvent },
    #[error("track {track} is empty")]
    EmptyTrack { track: usize },
    #[error("track {track} is not in canonical order")]
    NotCanonical { track: usize },
    #[error("notes end at {end} but measures only cover {covered}")]
    NotesPastEnd { end: u32, covered: u32 },
    #[error("note at {onset} starts after the last measure ends at {covered}")]
    OnsetPastEnd { onset: u32, covered: u32 },
    #[error("measure index {index} out of range ({count} measures)")]
    MeasureIndex { index: usize, count: usize },
    #[error("score text line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub pitch: u8,
    /// Grid units from the start of the piece.
    pub onset: u32,
    /// Grid units, at least 1.
    pub duration: u32,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: u32, duration: u32) -> Self {
        NoteEvent {
            pitch,
            onset,
            duration,
            velocity: DEFAULT_VELOCITY,
        }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }

    /// The canonical sort and identity key.
    pub fn key(&self) -> (u32, u8, u32) {
        (self.onset, self.pitch, self.duration)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Track {
    /// General MIDI program 0..=127, or [`PERCUSSION`].
    pub instrument: u8,
    pub notes: Vec<NoteEvent>,
}

impl Track {
    pub fn new(instrument: u8) -> Self {
        Track {
            instrument,
            notes: Vec::new(),
        }
    }

    pub fn with_notes(instrument: u8, notes: Vec<NoteEvent>) -> Self {
        let mut t = Track { instrument, notes };
        t.canonicalize();
        t
    }

    pub fn is_percussion(&self) -> bool {
        self.instrument == PERCUSSION
    }

    /// Sort by (onset, pitch, duration) and drop repeats of the same key,
    /// keeping the first occurrence.
    pub fn canonicalize(&mut self) {
        self.notes.sort_by_key(NoteEvent::key);
        self.notes.dedup_by_key(|n| n.key());
    }

    pub fn is_canonical(&self) -> bool {
        self.notes.windows(2).all(|w| w[0].key() < w[1].key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantizedScore {
    pub tracks: Vec<Track>,
    /// Measure lengths in grid units, in time order.
    pub measures: Vec<u32>,
}

impl QuantizedScore {
    pub fn new(tracks: Vec<Track>, measures: Vec<u32>) -> Self {
        QuantizedScore { tracks, measures }
    }

    /// Absolute grid position at which each measure starts.
    pub fn measure_starts(&self) -> Vec<u32> {
        let mut acc = 0;
        self.measures
            .iter()
            .map(|&len| {
                let start = acc;
                acc += len;
                start
            })
            .collect()
    }

    pub fn total_length(&self) -> u32 {
        self.measures.iter().sum()
    }

    pub fn max_note_end(&self) -> u32 {
        self.tracks
            .iter()
            .flat_map(|t| t.notes.iter())
            .map(NoteEvent::end)
            .max()
            .unwrap_or(0)
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }

    /// Index of the measure containing grid position `t`, if any.
    pub fn measure_of(&self, t: u32) -> Option<usize> {
        let mut start = 0;
        for (i, &len) in self.measures.iter().enumerate() {
            if t < start + len {
                return Some(i);
            }
            start += len;
        }
        None
    }

    /// Sort and dedup every track and drop tracks left without notes.
    pub fn canonicalize(&mut self) {
        for t in &mut self.tracks {
            t.canonicalize();
        }
        self.tracks.retain(|t| !t.notes.is_empty());
    }

    pub fn validate(&self, max_tracks: usize) -> Result<(), ScoreError> {
        if self.tracks.len() > max_tracks {
            return Err(ScoreError::TooManyTracks {
                count: self.tracks.len(),
                max: max_tracks,
            });
        }
        for (index, &len) in self.measures.iter().enumerate() {
            if len == 0 || len > MAX_MEASURE_LEN {
                return Err(ScoreError::MeasureLength { index, len });
            }
        }
        for (ti, track) in self.tracks.iter().enumerate() {
            if track.instrument > PERCUSSION {
                return Err(ScoreError::Instrument {
                    track: ti,
                    instrument: track.instrument,
                });
            }
            if track.notes.is_empty() {
                return Err(ScoreError::EmptyTrack { track: ti });
            }
            if !track.is_canonical() {
                return Err(ScoreError::NotCanonical { track: ti });
            }
            for n in &track.notes {
                if n.pitch > 127 || n.duration == 0 || n.velocity == 0 || n.velocity > 127 {
                    return Err(ScoreError::InvalidNote { track: ti, note: *n });
                }
            }
        }
        let end = self.max_note_end();
        let covered = self.total_length();
        if end > covered {
            return Err(ScoreError::NotesPastEnd { end, covered });
        }
        Ok(())
    }
}

/// Plain-text form used for the ingest cache:
///
/// ```text
/// measures 32 32 24
/// track 0
/// 0 60 8 80
/// ```
///
/// Note lines are `onset pitch duration velocity` and belong to the most
/// recent `track <instrument>` line.
pub fn to_text(score: &QuantizedScore) -> String {
    let mut s = String::from("measures");
    for m in &score.measures {
        s.push_str(&format!(" {m}"));
    }
    s.push('\n');
    for t in &score.tracks {
        s.push_str(&format!("track {}\n", t.instrument));
        for n in &t.notes {
            s.push_str(&format!("{} {} {} {}\n", n.onset, n.pitch, n.duration, n.velocity));
        }
    }
    s
}

pub fn from_text(text: &str) -> Result<QuantizedScore, ScoreError> {
    let mut score = QuantizedScore::default();
    let mut seen_measures = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |reason: &str| ScoreError::Parse {
            line: line_no,
            reason: reason.to_string(),
        };
        let mut words = line.split_whitespace();
        let Some(head) = words.next() else { continue };
        match head {
            "measures" if !seen_measures => {
                score.measures = words.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad measure length"))?;
                seen_measures = true;
            }
            "measures" => return Err(bad("duplicate measures line")),
            "track" => {
                let inst = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| bad("bad instrument"))?;
                score.tracks.push(Track::new(inst));
            }
            _ => {
                let nums: Vec<u32> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("expected `onset pitch duration velocity`"))?;
                let [onset, pitch, duration, velocity] = nums[..] else {
                    return Err(bad("expected four numbers"));
                };
                if pitch > 127 || velocity > 127 {
                    return Err(bad("pitch and velocity must be below 128"));
                }
                let track = score.tracks.last_mut().ok_or_else(|| bad("note before any track"))?;
                track.notes.push(NoteEvent {
                    pitch: pitch as u8,
                    onset,
                    duration,
                    velocity: velocity as u8,
                });
            }
        }
    }
    if !seen_measures {
        return Err(ScoreError::Parse {
            line: 0,
            reason: "missing measures line".into(),
        });
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_idempotent() {
        let mut t = Track::new(0);
        t.notes = vec![
            NoteEvent::new(64, 8, 8),
            NoteEvent::new(60, 0, 8),
            NoteEvent::new(60, 0, 4),
            NoteEvent::new(60, 0, 8),
        ];
        t.canonicalize();
        assert_eq!(
            t.notes.iter().map(NoteEvent::key).collect::<Vec<_>>(),
            vec![(0, 60, 4), (0, 60, 8), (8, 64, 8)]
        );
        let once = t.clone();
        t.canonicalize();
        assert_eq!(once, t);
    }

    #[test]
    fn validation_errors() {
        let s = QuantizedScore::new(vec![Track::with_notes(0, vec![NoteEvent::new(60, 30, 8)])], vec![32]);
        assert_eq!(s.validate(32), Err(ScoreError::NotesPastEnd { end: 38, covered: 32 }));
        let s = QuantizedScore::new(vec![], vec![129]);
        assert!(matches!(s.validate(32), Err(ScoreError::MeasureLength { .. })));
        let s = QuantizedScore::new(vec![Track::new(0)], vec![32]);
        assert!(matches!(s.validate(32), Err(ScoreError::EmptyTrack { .. })));
        assert_eq!(s.measure_of(31), Some(0));
        assert_eq!(s.measure_of(32), None);
    }

    #[test]
    fn text_roundtrip() {
        let s = QuantizedScore::new(
            vec![
                Track::with_notes(0, vec![NoteEvent::new(60, 0, 8), NoteEvent::new(64, 4, 40)]),
                Track::with_notes(PERCUSSION, vec![NoteEvent { velocity: 100, ..NoteEvent::new(36, 0, 1) }]),
            ],
            vec![32, 24],
        );
        assert_eq!(from_text(&to_text(&s)).unwrap(), s);
        assert_eq!(from_text("measures\n").unwrap(), QuantizedScore::default());
        assert!(matches!(from_text("measures 32\n0 60 8 80\n"), Err(ScoreError::Parse { line: 2, .. })));
        assert!(from_text("track 0\n").is_err());
    }
}
