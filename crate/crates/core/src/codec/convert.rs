//! Score to token sequence and back.

use std::collections::{BTreeMap, HashMap};

use crate::bpe::MergeVocab;
use crate::chord::{detect_measure_chords, ChordLabel};
use crate::pitchset::PitchSet;
use crate::score::{NoteEvent, QuantizedScore, ScoreError, Track};

use super::grammar::DecoderState;
use super::tokens::{Event, Inst, TokenSeq, TokenTuple, MAX_DURATION, MAX_TRACK_ORD};
use super::CodecError;

/// Encode with one chord label per measure.
///
/// Tracks keep their score index as ordinal (index + 1) in every measure,
/// so a track is identified across measures even when it rests or shares
/// its instrument with another track.
pub fn encode(score: &QuantizedScore, chords: &[ChordLabel], vocab: &MergeVocab) -> Result<TokenSeq, CodecError> {
    // Notes may ring past the last barline (durations are attributes), but
    // every onset must fall inside a measure.
    match score.validate(MAX_TRACK_ORD as usize) {
        Ok(()) | Err(ScoreError::NotesPastEnd { .. }) => {}
        Err(e) => return Err(CodecError::Unrepresentable(e)),
    }
    let covered = score.total_length();
    if let Some(n) = score.tracks.iter().filter_map(|t| t.notes.last()).find(|n| n.onset >= covered) {
        return Err(CodecError::Unrepresentable(ScoreError::OnsetPastEnd { onset: n.onset, covered }));
    }
    if chords.len() != score.measures.len() {
        return Err(CodecError::ChordCount {
            chords: chords.len(),
            measures: score.measures.len(),
        });
    }
    let mut state = DecoderState::new(vocab.len());
    let mut out = Vec::with_capacity(2 + 3 * score.measures.len() + 2 * score.note_count());
    let mut emit = |out: &mut TokenSeq, event: Event, duration: Option<u32>, track: u32, instrument: Inst| {
        let pos = state.step(event, track).expect("encoder emits grammatical sequences");
        out.push(TokenTuple {
            event,
            duration,
            track,
            instrument,
            pos,
        });
    };

    emit(&mut out, Event::Bos, None, 0, Inst::Null);
    let mut cursors = vec![0usize; score.tracks.len()];
    let mut start = 0;
    for (m, &len) in score.measures.iter().enumerate() {
        let end = start + len;
        emit(&mut out, Event::Bom(len), None, 0, Inst::Null);
        emit(&mut out, Event::Chord(chords[m]), None, 0, Inst::Null);
        for (ti, track) in score.tracks.iter().enumerate() {
            let from = cursors[ti];
            let to = from + track.notes[from..].partition_point(|n| n.onset < end);
            cursors[ti] = to;
            if from == to {
                continue;
            }
            let ord = ti as u32 + 1;
            let inst = Inst::Program(track.instrument);
            emit(&mut out, Event::Cc, None, ord, inst);
            let notes = &track.notes[from..to];
            let mut i = 0;
            while i < notes.len() {
                let onset = notes[i].onset;
                let j = i + notes[i..].partition_point(|n| n.onset == onset);
                emit(&mut out, Event::Pos(onset - start), None, ord, Inst::Null);
                for (_, dur, tok) in pitch_tokens(&notes[i..j], vocab) {
                    emit(&mut out, Event::PitchSet(tok), Some(dur), ord, inst);
                }
                i = j;
            }
        }
        emit(&mut out, Event::Eom, None, 0, Inst::Null);
        start = end;
    }
    emit(&mut out, Event::Eos, None, 0, Inst::Null);
    Ok(out)
}

/// BPE tokens for the notes of one onset, ordered by (lowest pitch, duration).
fn pitch_tokens(notes: &[NoteEvent], vocab: &MergeVocab) -> Vec<(u8, u32, u32)> {
    let mut by_dur: BTreeMap<u32, PitchSet> = BTreeMap::new();
    for n in notes {
        by_dur.entry(n.duration.min(MAX_DURATION)).or_default().insert(n.pitch);
    }
    let mut toks = Vec::new();
    for (dur, set) in by_dur {
        for tok in vocab.apply(set) {
            let lowest = vocab.expand(tok).expect("apply yields known tokens").lowest().unwrap_or(0);
            toks.push((lowest, dur, tok));
        }
    }
    toks.sort_unstable();
    toks
}

/// Encode with chords detected from the score itself.
pub fn encode_score(score: &QuantizedScore, vocab: &MergeVocab) -> Result<TokenSeq, CodecError> {
    encode(score, &detect_measure_chords(score), vocab)
}

/// Chord label of every measure in a sequence.
pub fn chords_of(tokens: &[TokenTuple]) -> Vec<ChordLabel> {
    tokens
        .iter()
        .filter_map(|t| match t.event {
            Event::Chord(c) => Some(c),
            _ => None,
        })
        .collect()
}

/// Rebuild the score. Tracks are keyed by (ordinal, instrument) and ordered by
/// ordinal, then by first appearance; every track comes back canonical.
pub fn decode(tokens: &[TokenTuple], vocab: &MergeVocab) -> Result<QuantizedScore, CodecError> {
    let mut state = DecoderState::new(vocab.len());
    let mut measures = Vec::new();
    let mut tracks: Vec<((u32, u8), Track)> = Vec::new();
    let mut index: HashMap<(u32, u8), usize> = HashMap::new();
    let mut start = 0u32;
    let mut current = 0usize;
    let mut onset = 0u32;
    for (i, t) in tokens.iter().enumerate() {
        if state.is_done() {
            return Err(CodecError::Grammar {
                index: i,
                expected: "end of sequence".into(),
                found: t.event.to_string(),
            });
        }
        state.advance(t)?;
        match t.event {
            Event::Bom(len) => {
                if let Some(&prev) = measures.last() {
                    start += prev;
                }
                measures.push(len);
            }
            Event::Cc => {
                let key = (t.track, state.instrument());
                current = *index.entry(key).or_insert_with(|| {
                    tracks.push((key, Track::new(key.1)));
                    tracks.len() - 1
                });
            }
            Event::Pos(j) => onset = start + j,
            Event::PitchSet(k) => {
                let set = vocab.expand(k).map_err(|_| CodecError::UnknownPitchToken { index: i, token: k })?;
                let duration = t.duration.expect("checked by advance");
                tracks[current]
                    .1
                    .notes
                    .extend(set.iter().map(|p| NoteEvent::new(p, onset, duration)));
            }
            _ => {}
        }
    }
    if !state.is_done() {
        return Err(CodecError::Grammar {
            index: tokens.len(),
            expected: "EOS".into(),
            found: "end of input".into(),
        });
    }
    // stable sort keeps first-appearance order among equal ordinals
    tracks.sort_by_key(|((ord, _), _)| *ord);
    let mut score = QuantizedScore::new(tracks.into_iter().map(|(_, t)| t).collect(), measures);
    score.canonicalize();
    Ok(score)
}

/// Canonical form of a valid sequence: same chords, notes regrouped and
/// re-tokenized, tracks renumbered in score order.
pub fn canonicalize(tokens: &[TokenTuple], vocab: &MergeVocab) -> Result<TokenSeq, CodecError> {
    let score = decode(tokens, vocab)?;
    encode(&score, &chords_of(tokens), vocab)
}
