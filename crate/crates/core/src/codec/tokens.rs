//! Token tuples, the event id layout, and the tab-separated text format.

use std::fmt;
use std::str::FromStr;

use crate::bpe::TokenId;
use crate::chord::ChordLabel;
use crate::score::{MAX_MEASURE_LEN, PERCUSSION};

use super::CodecError;

/// Longest duration the duration channel can carry; longer notes are clamped.
pub const MAX_DURATION: u32 = 64;
/// Track ordinals run 1..=MAX_TRACK_ORD; 0 means "no track".
pub const MAX_TRACK_ORD: u32 = 32;

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const EOM_ID: usize = 2;
pub const CC_ID: usize = 3;
/// `BOM_i` has id `BOM_BASE + i - 1`.
pub const BOM_BASE: usize = 4;
pub const CHORD_BASE: usize = BOM_BASE + MAX_MEASURE_LEN as usize;
pub const POS_BASE: usize = CHORD_BASE + ChordLabel::COUNT;
/// Pitch-set token `k` has event id `PS_BASE + k`.
pub const PS_BASE: usize = POS_BASE + MAX_MEASURE_LEN as usize;
/// Number of non-pitch-set events.
pub const STRUCTURAL_EVENTS: usize = PS_BASE;

/// Duration channel indices: 0 is NULL, `d` is `d` units, then one padding slot.
pub const DUR_NULL: usize = 0;
pub const DUR_PAD: usize = MAX_DURATION as usize + 1;
pub const DUR_VOCAB: usize = DUR_PAD + 1;

/// Instrument channel indices: programs 0..=128, then MASK and NULL.
pub const INST_MASK: usize = PERCUSSION as usize + 1;
pub const INST_NULL: usize = INST_MASK + 1;
pub const INST_VOCAB: usize = INST_NULL + 1;

pub const TRACK_VOCAB: usize = MAX_TRACK_ORD as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    Bos,
    Eos,
    /// Start of a measure of the given length in grid units.
    Bom(u32),
    Eom,
    Chord(ChordLabel),
    /// Opens a track segment within the current measure.
    Cc,
    /// Onset within the measure, in grid units.
    Pos(u32),
    /// A Music BPE token.
    PitchSet(TokenId),
}

impl Event {
    pub fn id(self) -> usize {
        match self {
            Event::Bos => BOS_ID,
            Event::Eos => EOS_ID,
            Event::Eom => EOM_ID,
            Event::Cc => CC_ID,
            Event::Bom(len) => BOM_BASE + len as usize - 1,
            Event::Chord(c) => CHORD_BASE + c.index(),
            Event::Pos(j) => POS_BASE + j as usize,
            Event::PitchSet(k) => PS_BASE + k as usize,
        }
    }

    pub fn from_id(id: usize) -> Event {
        match id {
            BOS_ID => Event::Bos,
            EOS_ID => Event::Eos,
            EOM_ID => Event::Eom,
            CC_ID => Event::Cc,
            i if i < CHORD_BASE => Event::Bom((i - BOM_BASE + 1) as u32),
            i if i < POS_BASE => Event::Chord(ChordLabel::from_index(i - CHORD_BASE).expect("chord id in range")),
            i if i < PS_BASE => Event::Pos((i - POS_BASE) as u32),
            i => Event::PitchSet((i - PS_BASE) as TokenId),
        }
    }

    pub fn is_pitch_set(self) -> bool {
        matches!(self, Event::PitchSet(_))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Bos => f.write_str("BOS"),
            Event::Eos => f.write_str("EOS"),
            Event::Bom(len) => write!(f, "BOM_{len}"),
            Event::Eom => f.write_str("EOM"),
            Event::Chord(c) => write!(f, "CHORD_{}", c.name()),
            Event::Cc => f.write_str("CC"),
            Event::Pos(j) => write!(f, "POS_{j}"),
            Event::PitchSet(k) => write!(f, "PS_{k}"),
        }
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown event `{s}`");
        let num = |v: &str| v.parse::<u32>().map_err(|_| bad());
        Ok(match s {
            "BOS" => Event::Bos,
            "EOS" => Event::Eos,
            "EOM" => Event::Eom,
            "CC" => Event::Cc,
            _ => {
                if let Some(v) = s.strip_prefix("BOM_") {
                    let len = num(v)?;
                    if len == 0 || len > MAX_MEASURE_LEN {
                        return Err(bad());
                    }
                    Event::Bom(len)
                } else if let Some(v) = s.strip_prefix("CHORD_") {
                    Event::Chord(ChordLabel::parse_name(v).map_err(|_| bad())?)
                } else if let Some(v) = s.strip_prefix("POS_") {
                    let j = num(v)?;
                    if j >= MAX_MEASURE_LEN {
                        return Err(bad());
                    }
                    Event::Pos(j)
                } else if let Some(v) = s.strip_prefix("PS_") {
                    Event::PitchSet(num(v)?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Instrument channel value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Inst {
    Null,
    Mask,
    Program(u8),
}

impl Inst {
    pub fn index(self) -> usize {
        match self {
            Inst::Program(p) => p as usize,
            Inst::Mask => INST_MASK,
            Inst::Null => INST_NULL,
        }
    }
}

/// Duration channel index for an optional duration.
pub fn duration_index(d: Option<u32>) -> usize {
    d.map_or(DUR_NULL, |d| d as usize)
}

/// Position triple (measure ordinal, onset ordinal, track ordinal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Pos3d {
    pub measure: u32,
    pub onset: u32,
    pub track: u32,
}

impl Pos3d {
    pub const ZERO: Pos3d = Pos3d {
        measure: 0,
        onset: 0,
        track: 0,
    };

    pub fn new(measure: u32, onset: u32, track: u32) -> Self {
        Pos3d { measure, onset, track }
    }
}

/// One sequence step: the four channels plus its position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenTuple {
    pub event: Event,
    pub duration: Option<u32>,
    pub track: u32,
    pub instrument: Inst,
    pub pos: Pos3d,
}

impl TokenTuple {
    /// A tuple with null channels and zero position.
    pub fn bare(event: Event) -> Self {
        TokenTuple {
            event,
            duration: None,
            track: 0,
            instrument: Inst::Null,
            pos: Pos3d::ZERO,
        }
    }
}

pub type TokenSeq = Vec<TokenTuple>;

/// One line per tuple: `event dur trk inst m o r`, tab-separated.
pub fn to_text(tokens: &[TokenTuple]) -> String {
    let mut out = String::with_capacity(tokens.len() * 24);
    for t in tokens {
        let dur = t.duration.map_or_else(|| "-".to_string(), |d| d.to_string());
        let inst = match t.instrument {
            Inst::Null => "-".to_string(),
            Inst::Mask => "MASK".to_string(),
            Inst::Program(p) => p.to_string(),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            t.event, dur, t.track, inst, t.pos.measure, t.pos.onset, t.pos.track
        ));
    }
    out
}

/// Parse the text format. Only field syntax is checked here; grammar and
/// channel consistency are checked by [`super::validate`].
pub fn from_text(text: &str) -> Result<TokenSeq, CodecError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CodecError::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 tab-separated fields, found {}", fields.len())));
        }
        let event: Event = fields[0].parse().map_err(bad)?;
        let int = |k: usize| {
            fields[k]
                .parse::<u32>()
                .map_err(|_| CodecError::Parse {
                    line: i + 1,
                    reason: format!("field {} `{}` is not an integer", k + 1, fields[k]),
                })
        };
        let duration = match fields[1] {
            "-" => None,
            _ => Some(int(1)?),
        };
        let instrument = match fields[3] {
            "-" => Inst::Null,
            "MASK" => Inst::Mask,
            _ => {
                let p = int(3)?;
                if p > PERCUSSION as u32 {
                    return Err(bad(format!("instrument {p} out of range")));
                }
                Inst::Program(p as u8)
            }
        };
        out.push(TokenTuple {
            event,
            duration,
            track: int(2)?,
            instrument,
            pos: Pos3d::new(int(4)?, int(5)?, int(6)?),
        });
    }
    Ok(out)
}
