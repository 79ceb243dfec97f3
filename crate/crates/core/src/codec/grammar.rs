//! The token grammar as a state machine.
//!
//! ```text
//! score    := BOS measure* EOS
//! measure  := BOM_i CHORD (CC posgroup+)* EOM
//! posgroup := POS_j PITCHSET+
//! ```
//!
//! POS values ascend within a track segment and stay below the measure
//! length. Each CC carries a track ordinal in 1..=32 that is not reused within
//! the same measure.

use super::tokens::{Event, Inst, Pos3d, TokenTuple, MAX_DURATION, MAX_TRACK_ORD, PS_BASE};
use super::CodecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Nothing consumed yet; only BOS is admissible.
    Start,
    ExpectMeasure,
    ExpectChord,
    ExpectTrackOrEom,
    ExpectPos,
    ExpectNote,
    ExpectNoteOrNext,
    Done,
}

impl Phase {
    /// Fewest tokens that take this phase to the end of the sequence.
    pub fn closing_cost(self) -> usize {
        match self {
            Phase::Start => 2,
            Phase::ExpectMeasure => 1,
            Phase::ExpectChord => 3,
            Phase::ExpectTrackOrEom => 2,
            Phase::ExpectPos => 4,
            Phase::ExpectNote => 3,
            Phase::ExpectNoteOrNext => 2,
            Phase::Done => 0,
        }
    }

    fn expected(self) -> &'static str {
        match self {
            Phase::Start => "BOS",
            Phase::ExpectMeasure => "BOM or EOS",
            Phase::ExpectChord => "CHORD",
            Phase::ExpectTrackOrEom => "CC or EOM",
            Phase::ExpectPos => "POS",
            Phase::ExpectNote => "PITCHSET",
            Phase::ExpectNoteOrNext => "PITCHSET, POS, CC or EOM",
            Phase::Done => "end of sequence",
        }
    }
}

/// Where a (possibly partial) sequence stands in the grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    phase: Phase,
    pitch_tokens: usize,
    measure: u32,
    measure_len: u32,
    track: u32,
    instrument: u8,
    last_pos: Option<u32>,
    onset_ord: u32,
    used_tracks: u64,
    steps: usize,
}

impl DecoderState {
    /// Fresh state before BOS. `pitch_tokens` is the BPE vocabulary size.
    pub fn new(pitch_tokens: usize) -> Self {
        DecoderState {
            phase: Phase::Start,
            pitch_tokens,
            measure: 0,
            measure_len: 0,
            track: 0,
            instrument: 0,
            last_pos: None,
            onset_ord: 0,
            used_tracks: 0,
            steps: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pitch_tokens(&self) -> usize {
        self.pitch_tokens
    }

    /// Ordinal of the current (or last finished) measure, 1-based.
    pub fn measure(&self) -> u32 {
        self.measure
    }

    pub fn measure_len(&self) -> u32 {
        self.measure_len
    }

    /// Track ordinal of the open CC group, 0 outside one.
    pub fn track(&self) -> u32 {
        self.track
    }

    /// Instrument of the open CC group.
    pub fn instrument(&self) -> u8 {
        self.instrument
    }

    pub fn last_pos(&self) -> Option<u32> {
        self.last_pos
    }

    /// Tokens consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn closing_cost(&self) -> usize {
        self.phase.closing_cost()
    }

    pub fn track_used(&self, ord: u32) -> bool {
        (1..=MAX_TRACK_ORD).contains(&ord) && self.used_tracks >> ord & 1 == 1
    }

    /// True when `ord` may open a new track segment in this measure.
    pub fn track_admissible(&self, ord: u32) -> bool {
        (1..=MAX_TRACK_ORD).contains(&ord) && !self.track_used(ord)
    }

    fn tracks_left(&self) -> bool {
        self.used_tracks.count_ones() < MAX_TRACK_ORD
    }

    fn pos_admissible(&self, j: u32) -> bool {
        j < self.measure_len && self.last_pos.is_none_or(|l| j > l)
    }

    /// Whether `event` has a grammar edge out of this state.
    pub fn admits(&self, event: Event) -> bool {
        match (self.phase, event) {
            (Phase::Start, Event::Bos) => true,
            (Phase::ExpectMeasure, Event::Bom(_) | Event::Eos) => true,
            (Phase::ExpectChord, Event::Chord(_)) => true,
            (Phase::ExpectTrackOrEom, Event::Eom) => true,
            (Phase::ExpectTrackOrEom | Phase::ExpectNoteOrNext, Event::Cc) => self.tracks_left(),
            (Phase::ExpectPos | Phase::ExpectNoteOrNext, Event::Pos(j)) => self.pos_admissible(j),
            (Phase::ExpectNote | Phase::ExpectNoteOrNext, Event::PitchSet(k)) => (k as usize) < self.pitch_tokens,
            (Phase::ExpectNoteOrNext, Event::Eom) => true,
            _ => false,
        }
    }

    /// Phase reached by consuming `event`, assuming it is admissible.
    pub fn phase_after(&self, event: Event) -> Phase {
        match event {
            Event::Bos | Event::Eom => Phase::ExpectMeasure,
            Event::Eos => Phase::Done,
            Event::Bom(_) => Phase::ExpectChord,
            Event::Chord(_) => Phase::ExpectTrackOrEom,
            Event::Cc => Phase::ExpectPos,
            Event::Pos(_) => Phase::ExpectNote,
            Event::PitchSet(_) => Phase::ExpectNoteOrNext,
        }
    }

    /// Consume one event and return its position triple. `track` is only
    /// read for CC, where it must be an unused ordinal in this measure.
    pub fn step(&mut self, event: Event, track: u32) -> Result<Pos3d, CodecError> {
        let index = self.steps;
        if !self.admits(event) {
            let expected = match (self.phase, event) {
                (Phase::ExpectPos | Phase::ExpectNoteOrNext, Event::Pos(_)) => {
                    format!("POS after {} and below {}", self.last_pos.map_or(-1, |l| l as i64), self.measure_len)
                }
                (_, Event::PitchSet(k)) if (k as usize) >= self.pitch_tokens && matches!(self.phase, Phase::ExpectNote | Phase::ExpectNoteOrNext) => {
                    format!("PITCHSET below {}", self.pitch_tokens)
                }
                (_, Event::Cc) if !self.tracks_left() => "EOM (all track ordinals used)".to_string(),
                _ => self.phase.expected().to_string(),
            };
            return Err(CodecError::Grammar {
                index,
                expected,
                found: event.to_string(),
            });
        }
        let pos = match event {
            Event::Bos | Event::Eos => Pos3d::ZERO,
            Event::Bom(len) => {
                self.measure += 1;
                self.measure_len = len;
                self.used_tracks = 0;
                Pos3d::new(self.measure, 0, 0)
            }
            Event::Chord(_) => Pos3d::new(self.measure, 0, 0),
            Event::Eom => {
                self.track = 0;
                Pos3d::new(self.measure, 0, 0)
            }
            Event::Cc => {
                if !self.track_admissible(track) {
                    return Err(CodecError::Channel {
                        index,
                        reason: format!("track ordinal {track} is out of range or already used in this measure"),
                    });
                }
                self.used_tracks |= 1 << track;
                self.track = track;
                self.last_pos = None;
                self.onset_ord = 0;
                Pos3d::new(self.measure, 0, track)
            }
            Event::Pos(j) => {
                self.last_pos = Some(j);
                self.onset_ord += 1;
                Pos3d::new(self.measure, self.onset_ord, self.track)
            }
            Event::PitchSet(_) => Pos3d::new(self.measure, self.onset_ord, self.track),
        };
        self.phase = self.phase_after(event);
        self.steps += 1;
        Ok(pos)
    }

    /// Consume a full tuple, checking every channel and the position triple.
    pub fn advance(&mut self, t: &TokenTuple) -> Result<(), CodecError> {
        let index = self.steps;
        let channel = |reason: String| CodecError::Channel { index, reason };
        let pos = self.step(t.event, t.track)?;
        match t.event {
            Event::PitchSet(_) => {
                if !t.duration.is_some_and(|d| (1..=MAX_DURATION).contains(&d)) {
                    return Err(channel(format!("PITCHSET needs a duration in 1..={MAX_DURATION}")));
                }
                if t.instrument != Inst::Program(self.instrument) {
                    return Err(channel(format!("PITCHSET instrument must match its CC ({})", self.instrument)));
                }
            }
            Event::Cc => {
                if t.duration.is_some() {
                    return Err(channel("CC carries no duration".into()));
                }
                match t.instrument {
                    Inst::Program(p) => self.instrument = p,
                    _ => return Err(channel("CC needs an instrument".into())),
                }
            }
            _ => {
                if t.duration.is_some() || t.instrument != Inst::Null {
                    return Err(channel(format!("{} carries no duration or instrument", t.event)));
                }
            }
        }
        let want_track = match t.event {
            Event::Cc | Event::Pos(_) | Event::PitchSet(_) => self.track,
            _ => 0,
        };
        if t.track != want_track {
            return Err(channel(format!("track ordinal {} should be {want_track}", t.track)));
        }
        if t.pos != pos {
            return Err(channel(format!("position {:?} should be {:?}", t.pos, pos)));
        }
        Ok(())
    }
}

/// Every event with a grammar edge out of `state`, in id order.
pub fn grammar_mask(state: &DecoderState) -> Vec<Event> {
    (0..PS_BASE + state.pitch_tokens)
        .map(Event::from_id)
        .filter(|&e| state.admits(e))
        .collect()
}

/// Position triples for a grammar-valid prefix, from its events and CC ordinals.
pub fn assign_positions(tokens: &[TokenTuple], pitch_tokens: usize) -> Result<Vec<Pos3d>, CodecError> {
    let mut state = DecoderState::new(pitch_tokens);
    tokens.iter().map(|t| state.step(t.event, t.track)).collect()
}

/// Check a complete sequence: grammar, channels, positions, and the final EOS.
pub fn validate(tokens: &[TokenTuple], pitch_tokens: usize) -> Result<(), CodecError> {
    let mut state = DecoderState::new(pitch_tokens);
    for t in tokens {
        state.advance(t)?;
    }
    if !state.is_done() {
        return Err(CodecError::Grammar {
            index: tokens.len(),
            expected: state.phase.expected().to_string(),
            found: "end of input".to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chord::ChordLabel;
    use crate::codec::tokens::{STRUCTURAL_EVENTS, CHORD_BASE, POS_BASE};

    fn walk(state: &mut DecoderState, events: &[(Event, u32)]) {
        for &(e, r) in events {
            state.step(e, r).unwrap();
        }
    }

    #[test]
    fn mask_examples() {
        let mut s = DecoderState::new(128);
        assert_eq!(grammar_mask(&s), vec![Event::Bos]);
        s.step(Event::Bos, 0).unwrap();
        let m = grammar_mask(&s);
        assert_eq!(m.len(), 129);
        assert!(m.contains(&Event::Eos));
        assert!((1..=128).all(|i| m.contains(&Event::Bom(i))));

        s.step(Event::Bom(32), 0).unwrap();
        let m = grammar_mask(&s);
        assert_eq!(m.len(), 133);
        assert!(m.iter().all(|e| (CHORD_BASE..POS_BASE).contains(&e.id())));

        walk(&mut s, &[(Event::Chord(ChordLabel::NoChord), 0), (Event::Cc, 1), (Event::Pos(30), 0)]);
        let m = grammar_mask(&s);
        assert_eq!(m.len(), 128);
        assert!(m.iter().all(|e| e.is_pitch_set()));
        s.step(Event::PitchSet(60), 0).unwrap();
        let m = grammar_mask(&s);
        let structural: Vec<Event> = m.iter().copied().filter(|e| e.id() < STRUCTURAL_EVENTS).collect();
        assert_eq!(structural, vec![Event::Eom, Event::Cc, Event::Pos(31)]);
        assert_eq!(m.len(), 3 + 128);
    }

    #[test]
    fn positions_follow_rule() {
        let events = [
            (Event::Bos, 0),
            (Event::Bom(32), 0),
            (Event::Chord(ChordLabel::NoChord), 0),
            (Event::Cc, 1),
            (Event::Pos(0), 0),
            (Event::PitchSet(60), 0),
            (Event::PitchSet(64), 0),
            (Event::Pos(8), 0),
            (Event::PitchSet(62), 0),
            (Event::Cc, 2),
            (Event::Pos(4), 0),
            (Event::PitchSet(40), 0),
            (Event::Eom, 0),
            (Event::Eos, 0),
        ];
        let tokens: Vec<TokenTuple> = events
            .iter()
            .map(|&(e, r)| TokenTuple {
                track: r,
                ..TokenTuple::bare(e)
            })
            .collect();
        let p = assign_positions(&tokens, 128).unwrap();
        let want = [
            (0, 0, 0),
            (1, 0, 0),
            (1, 0, 0),
            (1, 0, 1),
            (1, 1, 1),
            (1, 1, 1),
            (1, 1, 1),
            (1, 2, 1),
            (1, 2, 1),
            (1, 0, 2),
            (1, 1, 2),
            (1, 1, 2),
            (1, 0, 0),
            (0, 0, 0),
        ];
        let got: Vec<(u32, u32, u32)> = p.iter().map(|p| (p.measure, p.onset, p.track)).collect();
        assert_eq!(got, want);
        assert_eq!(assign_positions(&tokens[..1], 128).unwrap(), vec![Pos3d::ZERO]);
    }

    #[test]
    fn violations_name_index_and_class() {
        let mut s = DecoderState::new(128);
        walk(&mut s, &[(Event::Bos, 0), (Event::Bom(32), 0), (Event::Chord(ChordLabel::NoChord), 0), (Event::Cc, 1), (Event::Pos(5), 0), (Event::PitchSet(60), 0)]);
        match s.step(Event::Pos(2), 0) {
            Err(CodecError::Grammar { index: 6, expected, .. }) => assert!(expected.starts_with("POS after 5")),
            other => panic!("{other:?}"),
        }
        let mut s = DecoderState::new(128);
        walk(&mut s, &[(Event::Bos, 0), (Event::Bom(32), 0), (Event::Chord(ChordLabel::NoChord), 0), (Event::Cc, 1)]);
        assert!(matches!(s.step(Event::PitchSet(60), 0), Err(CodecError::Grammar { index: 4, .. })));
        assert!(matches!(s.clone().step(Event::Pos(32), 0), Err(CodecError::Grammar { .. })));
        walk(&mut s, &[(Event::Pos(0), 0), (Event::PitchSet(1), 0)]);
        assert!(matches!(s.clone().step(Event::Cc, 1), Err(CodecError::Channel { .. })));
        assert!(matches!(s.clone().step(Event::Cc, 33), Err(CodecError::Channel { .. })));
        assert!(matches!(s.clone().step(Event::PitchSet(128), 0), Err(CodecError::Grammar { .. })));
        s.step(Event::Cc, 2).unwrap();
    }

    #[test]
    fn track_ordinals_run_out() {
        let mut s = DecoderState::new(128);
        walk(&mut s, &[(Event::Bos, 0), (Event::Bom(4), 0), (Event::Chord(ChordLabel::NoChord), 0)]);
        for r in 1..=32 {
            walk(&mut s, &[(Event::Cc, r), (Event::Pos(0), 0), (Event::PitchSet(60), 0)]);
        }
        assert!(!s.admits(Event::Cc));
        assert!(!s.admits(Event::Pos(4)));
        assert!(s.admits(Event::Pos(1)));
        s.step(Event::Eom, 0).unwrap();
        s.step(Event::Bom(4), 0).unwrap();
        s.step(Event::Chord(ChordLabel::NoChord), 0).unwrap();
        assert!(s.admits(Event::Cc));
    }

    #[test]
    fn closing_costs_are_shortest_paths() {
        // breadth-first search over phases using one representative per event class
        let reps = [
            Event::Bos,
            Event::Eos,
            Event::Bom(4),
            Event::Eom,
            Event::Chord(ChordLabel::NoChord),
            Event::Cc,
            Event::Pos(0),
            Event::PitchSet(0),
        ];
        fn shortest(s: &DecoderState, reps: &[Event], depth: usize) -> Option<usize> {
            if s.is_done() {
                return Some(0);
            }
            if depth == 0 {
                return None;
            }
            reps.iter()
                .filter(|&&e| s.admits(e))
                .filter_map(|&e| {
                    let mut n = s.clone();
                    n.step(e, 1).ok()?;
                    shortest(&n, reps, depth - 1).map(|d| d + 1)
                })
                .min()
        }
        let mut s = DecoderState::new(4);
        let path = [
            (Event::Bos, 0),
            (Event::Bom(4), 0),
            (Event::Chord(ChordLabel::NoChord), 0),
            (Event::Cc, 1),
            (Event::Pos(0), 0),
            (Event::PitchSet(0), 0),
        ];
        assert_eq!(shortest(&s, &reps, 6), Some(s.closing_cost()));
        for (e, r) in path {
            s.step(e, r).unwrap();
            assert_eq!(shortest(&s, &reps, 6), Some(s.closing_cost()), "{:?}", s.phase());
        }
    }
}
