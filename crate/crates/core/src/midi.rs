//! Standard MIDI File (type 0/1) reading and writing.
//!
//! Reading is tick based: note times are quantized to the 32nd-note grid
//! from the file's pulses-per-quarter, and tempo is kept only as metadata.
//! Notes are grouped into score tracks by (SMF track, channel, program), so
//! two parts that share an instrument stay separate.
//!
//! Writing produces a type-1 file at 480 ppq: a conductor track carrying
//! tempo and time signatures, then one SMF track per score track. Same-pitch
//! notes that overlap inside one track cannot be paired back unambiguously,
//! so the read/write roundtrip holds for scores without such overlaps.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::score::{NoteEvent, QuantizedScore, Track, MAX_MEASURE_LEN, PERCUSSION, UNITS_PER_QUARTER};

pub const WRITE_PPQ: u16 = 480;
pub const DEFAULT_TEMPO_BPM: f64 = 120.0;
const PERCUSSION_CHANNEL: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed SMF at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("SMF type {0} is not supported")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteDivision,
    #[error("time signature {numerator}/{denominator} at tick {tick} does not give a measure of 1..={max} grid units", max = MAX_MEASURE_LEN)]
    UnsupportedTimeSignature {
        numerator: u8,
        denominator: u32,
        tick: u64,
    },
}

impl MidiError {
    fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        MidiError::Malformed {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportWarning {
    /// A note-on never saw its note-off; it was closed at the end of its track.
    UnmatchedNoteOn { track: usize, channel: u8, pitch: u8, tick: u64 },
    /// A note-off arrived with no sounding note to close.
    OrphanNoteOff { track: usize, channel: u8, pitch: u8, tick: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoChange {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

/// Everything recovered from a file: the score plus metadata the score drops.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiImport {
    pub score: QuantizedScore,
    pub ppq: u16,
    pub tempos: Vec<TempoChange>,
    pub warnings: Vec<ImportWarning>,
}

/// `round(ticks * 8 / ppq)`, rounding halves up.
pub fn quantize_time(ticks: u64, ppq: u16) -> u32 {
    let ppq = ppq.max(1) as u64;
    let q = (ticks * UNITS_PER_QUARTER as u64 * 2 + ppq) / (2 * ppq);
    q as u32
}

/// Quantized duration, floored at one grid unit.
pub fn quantize_duration(ticks: u64, ppq: u16) -> u32 {
    quantize_time(ticks, ppq).max(1)
}

pub fn parse_midi(bytes: &[u8]) -> Result<QuantizedScore, MidiError> {
    parse_midi_detailed(bytes).map(|imp| imp.score)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader {
            bytes,
            pos: 0,
            end: bytes.len(),
        }
    }

    fn remaining(&self) -> usize {
        self.end - self.pos
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(MidiError::malformed(self.pos, "unexpected end of data"));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::malformed(
                self.pos,
                format!("need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::malformed(start, "variable-length quantity longer than 4 bytes"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct GroupKey {
    track: usize,
    channel: u8,
    instrument: u8,
}

struct RawNote {
    group: usize,
    pitch: u8,
    velocity: u8,
    on: u64,
    off: u64,
}

struct TimeSig {
    tick: u64,
    numerator: u8,
    denominator_pow: u8,
}

pub fn parse_midi_detailed(bytes: &[u8]) -> Result<MidiImport, MidiError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| MidiError::malformed(0, "missing MThd header"))? != b"MThd" {
        return Err(MidiError::malformed(0, "missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::malformed(4, format!("header length {header_len} < 6")));
    }
    let format = r.u16()?;
    let ntrks = r.u16()? as usize;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division == 0 {
        return Err(MidiError::malformed(12, "division of zero ticks per quarter"));
    }
    let ppq = division;

    let mut groups: Vec<GroupKey> = Vec::new();
    let mut group_index: HashMap<GroupKey, usize> = HashMap::new();
    let mut notes: Vec<RawNote> = Vec::new();
    let mut tempos = Vec::new();
    let mut sigs: Vec<TimeSig> = Vec::new();
    let mut warnings = Vec::new();
    let mut last_tick = 0u64;

    let mut track_no = 0;
    while track_no < ntrks {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if r.remaining() < len {
            return Err(MidiError::malformed(
                chunk_start,
                format!("chunk length {len} runs past end of file"),
            ));
        }
        if id != b"MTrk" {
            // Unknown chunk types are skipped.
            r.take(len)?;
            continue;
        }
        let mut t = Reader {
            bytes,
            pos: r.pos,
            end: r.pos + len,
        };
        r.pos += len;

        let mut tick = 0u64;
        let mut running: Option<u8> = None;
        let mut program = [0u8; 16];
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8, usize)>> = HashMap::new();
        while t.remaining() > 0 {
            tick += t.varlen()? as u64;
            let at = t.pos;
            let first = t.u8()?;
            if first == 0xff {
                let kind = t.u8()?;
                let dlen = t.varlen()? as usize;
                let data = t.take(dlen)?;
                match kind {
                    0x2f => break,
                    0x51 if dlen == 3 => tempos.push(TempoChange {
                        tick,
                        micros_per_quarter: u32::from_be_bytes([0, data[0], data[1], data[2]]),
                    }),
                    0x58 if dlen >= 2 => sigs.push(TimeSig {
                        tick,
                        numerator: data[0],
                        denominator_pow: data[1],
                    }),
                    _ => {}
                }
                running = None;
                continue;
            }
            if first == 0xf0 || first == 0xf7 {
                let dlen = t.varlen()? as usize;
                t.take(dlen)?;
                running = None;
                continue;
            }
            let (status, d1) = if first & 0x80 != 0 {
                if first >= 0xf0 {
                    return Err(MidiError::malformed(at, format!("unexpected status byte {first:#04x}")));
                }
                running = Some(first);
                (first, t.u8()?)
            } else {
                match running {
                    Some(s) => (s, first),
                    None => return Err(MidiError::malformed(at, "data byte without running status")),
                }
            };
            let channel = status & 0x0f;
            let kind = status & 0xf0;
            let d2 = if kind == 0xc0 || kind == 0xd0 { 0 } else { t.u8()? };
            if d1 & 0x80 != 0 || d2 & 0x80 != 0 {
                return Err(MidiError::malformed(at, "data byte with high bit set"));
            }
            match kind {
                0x90 if d2 > 0 => {
                    let instrument = if channel == PERCUSSION_CHANNEL {
                        PERCUSSION
                    } else {
                        program[channel as usize]
                    };
                    let key = GroupKey {
                        track: track_no,
                        channel,
                        instrument,
                    };
                    let g = *group_index.entry(key).or_insert_with(|| {
                        groups.push(key);
                        groups.len() - 1
                    });
                    open.entry((channel, d1)).or_default().push_back((tick, d2, g));
                }
                0x80 | 0x90 => match open.get_mut(&(channel, d1)).and_then(VecDeque::pop_front) {
                    Some((on, velocity, group)) => notes.push(RawNote {
                        group,
                        pitch: d1,
                        velocity,
                        on,
                        off: tick,
                    }),
                    None => warnings.push(ImportWarning::OrphanNoteOff {
                        track: track_no,
                        channel,
                        pitch: d1,
                        tick,
                    }),
                },
                0xc0 => program[channel as usize] = d1,
                _ => {}
            }
        }
        let mut dangling: Vec<_> = open
            .into_iter()
            .flat_map(|((channel, pitch), q)| q.into_iter().map(move |(on, v, g)| (on, channel, pitch, v, g)))
            .collect();
        dangling.sort_unstable();
        for (on, channel, pitch, velocity, group) in dangling {
            warnings.push(ImportWarning::UnmatchedNoteOn {
                track: track_no,
                channel,
                pitch,
                tick: on,
            });
            notes.push(RawNote {
                group,
                pitch,
                velocity,
                on,
                off: tick,
            });
        }
        last_tick = last_tick.max(tick);
        track_no += 1;
    }

    let mut tracks: Vec<Track> = groups
        .iter()
        .map(|g| Track::new(g.instrument))
        .collect();
    for n in &notes {
        tracks[n.group].notes.push(NoteEvent {
            pitch: n.pitch,
            onset: quantize_time(n.on, ppq),
            duration: quantize_duration(n.off.saturating_sub(n.on), ppq),
            velocity: n.velocity,
        });
    }
    let mut score = QuantizedScore::new(tracks, Vec::new());
    score.canonicalize();

    let total = score.max_note_end().max(quantize_time(last_tick, ppq));
    score.measures = build_measures(&mut sigs, ppq, total)?;

    Ok(MidiImport {
        score,
        ppq,
        tempos,
        warnings,
    })
}

/// Tile `[0, total)` with measures. A time signature takes effect at its
/// quantized position; one landing mid-measure cuts that measure short.
fn build_measures(sigs: &mut [TimeSig], ppq: u16, total: u32) -> Result<Vec<u32>, MidiError> {
    sigs.sort_by_key(|s| s.tick);
    let mut changes: Vec<(u32, u32)> = Vec::with_capacity(sigs.len());
    for s in sigs.iter() {
        let denominator = 1u32.checked_shl(s.denominator_pow as u32).unwrap_or(0);
        let err = MidiError::UnsupportedTimeSignature {
            numerator: s.numerator,
            denominator,
            tick: s.tick,
        };
        if denominator == 0 || s.numerator == 0 {
            return Err(err);
        }
        let units = s.numerator as u32 * 32;
        if units % denominator != 0 {
            return Err(err);
        }
        let len = units / denominator;
        if len > MAX_MEASURE_LEN {
            return Err(err);
        }
        changes.push((quantize_time(s.tick, ppq), len));
    }

    let mut measures = Vec::new();
    let mut pos = 0u32;
    let mut len = 4 * UNITS_PER_QUARTER;
    let mut next = 0;
    while pos < total {
        while next < changes.len() && changes[next].0 <= pos {
            len = changes[next].1;
            next += 1;
        }
        let this = match changes.get(next) {
            Some(&(at, _)) if at < pos + len => at - pos,
            _ => len,
        };
        measures.push(this);
        pos += this;
    }
    Ok(measures)
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7f) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

fn push_chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

/// Time signature (numerator, log2 denominator) for a measure length.
fn signature_for(len: u32) -> (u8, u8) {
    if len % 8 == 0 {
        ((len / 8) as u8, 2)
    } else if len % 4 == 0 {
        ((len / 4) as u8, 3)
    } else if len % 2 == 0 {
        ((len / 2) as u8, 4)
    } else {
        (len as u8, 5)
    }
}

/// Ordered (tick, bytes) events written with delta times.
fn encode_events(events: &[(u64, Vec<u8>)], end_tick: u64) -> Vec<u8> {
    let mut body = Vec::new();
    let mut last = 0u64;
    for (tick, bytes) in events {
        push_varlen(&mut body, (tick - last) as u32);
        body.extend_from_slice(bytes);
        last = *tick;
    }
    push_varlen(&mut body, end_tick.saturating_sub(last) as u32);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);
    body
}

/// Serialize a score as a type-1 SMF at 480 ppq.
///
/// Velocities are written as stored; notes built without one carry
/// [`crate::score::DEFAULT_VELOCITY`].
pub fn write_midi(score: &QuantizedScore, tempo_bpm: f64) -> Vec<u8> {
    let ppq = WRITE_PPQ as u64;
    let unit = ppq / UNITS_PER_QUARTER as u64;
    let mut out = Vec::new();
    let mut header = Vec::with_capacity(6);
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&((score.tracks.len() + 1) as u16).to_be_bytes());
    header.extend_from_slice(&WRITE_PPQ.to_be_bytes());
    push_chunk(&mut out, b"MThd", &header);

    let bpm = if tempo_bpm.is_finite() && tempo_bpm > 0.0 {
        tempo_bpm
    } else {
        DEFAULT_TEMPO_BPM
    };
    let micros = ((60_000_000.0 / bpm).round() as u32).clamp(1, 0xff_ffff);
    let mut conductor: Vec<(u64, Vec<u8>)> = Vec::new();
    let m = micros.to_be_bytes();
    conductor.push((0, vec![0xff, 0x51, 0x03, m[1], m[2], m[3]]));
    let mut start = 0u64;
    let mut prev = None;
    for &len in &score.measures {
        if prev != Some(len) {
            let (nn, dd) = signature_for(len);
            conductor.push((start * unit, vec![0xff, 0x58, 0x04, nn, dd, 24, 8]));
            prev = Some(len);
        }
        start += len as u64;
    }
    if score.measures.is_empty() {
        conductor.push((0, vec![0xff, 0x58, 0x04, 4, 2, 24, 8]));
    }
    let total_ticks = score.total_length() as u64 * unit;
    push_chunk(&mut out, b"MTrk", &encode_events(&conductor, total_ticks));

    let melodic_channels: Vec<u8> = (0u8..16).filter(|&c| c != PERCUSSION_CHANNEL).collect();
    let mut melodic_seen = 0usize;
    for track in &score.tracks {
        let channel = if track.is_percussion() {
            PERCUSSION_CHANNEL
        } else {
            let c = melodic_channels[melodic_seen % melodic_channels.len()];
            melodic_seen += 1;
            if melodic_seen == melodic_channels.len() + 1 {
                log::warn!("more than 15 melodic tracks; MIDI channels are reused");
            }
            c
        };
        let program = if track.is_percussion() { 0 } else { track.instrument & 0x7f };
        let mut events: Vec<(u64, u8, u8, Vec<u8>)> = Vec::with_capacity(track.notes.len() * 2 + 1);
        events.push((0, 0, 0, vec![0xc0 | channel, program]));
        for n in &track.notes {
            let vel = n.velocity.clamp(1, 127);
            let pitch = n.pitch & 0x7f;
            events.push((n.onset as u64 * unit, 2, pitch, vec![0x90 | channel, pitch, vel]));
            events.push((n.end() as u64 * unit, 1, pitch, vec![0x80 | channel, pitch, 0x40]));
        }
        // Program change first, then note-offs before note-ons at equal ticks.
        events.sort_by_key(|e| (e.0, e.1, e.2));
        let last = events.last().map(|e| e.0).unwrap_or(0);
        let flat: Vec<(u64, Vec<u8>)> = events.into_iter().map(|(t, _, _, b)| (t, b)).collect();
        push_chunk(&mut out, b"MTrk", &encode_events(&flat, last));
    }
    out
}
