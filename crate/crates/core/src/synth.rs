//! Seeded synthetic data: random scores, pitch-set bags, and toy corpora.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::bpe::Mulpi;
use crate::pitchset::PitchSet;
use crate::score::{NoteEvent, QuantizedScore, Track, DEFAULT_VELOCITY, MAX_MEASURE_LEN, PERCUSSION};

#[derive(Debug, Clone, Copy)]
pub struct ScoreShape {
    pub max_tracks: usize,
    pub max_measures: usize,
    pub max_duration: u32,
    pub max_notes_per_track: usize,
    /// Draw velocities in 1..=127 instead of the default 80.
    pub random_velocity: bool,
}

impl Default for ScoreShape {
    fn default() -> Self {
        ScoreShape {
            max_tracks: 8,
            max_measures: 16,
            max_duration: 64,
            max_notes_per_track: 48,
            random_velocity: false,
        }
    }
}

const COMMON_LENGTHS: [u32; 8] = [32, 32, 32, 24, 16, 48, 12, 28];

/// A random canonical score. Notes in one track never overlap another note
/// of the same pitch, and every note ends inside the last measure.
pub fn random_score<R: Rng + ?Sized>(rng: &mut R, shape: &ScoreShape) -> QuantizedScore {
    let n_measures = rng.random_range(0..=shape.max_measures);
    let measures: Vec<u32> = (0..n_measures)
        .map(|_| {
            if rng.random_bool(0.8) {
                *COMMON_LENGTHS.choose(rng).unwrap()
            } else {
                rng.random_range(1..=MAX_MEASURE_LEN)
            }
        })
        .collect();
    let total: u32 = measures.iter().sum();
    let n_tracks = if total == 0 { 0 } else { rng.random_range(0..=shape.max_tracks) };
    let tracks = (0..n_tracks)
        .map(|_| {
            let instrument = rng.random_range(0..=PERCUSSION);
            let target = rng.random_range(1..=shape.max_notes_per_track);
            let mut notes = Vec::with_capacity(target);
            while notes.len() < target {
                let onset = rng.random_range(0..total);
                let duration = rng.random_range(1..=shape.max_duration.min(total - onset));
                let chord = if rng.random_bool(0.3) { rng.random_range(2..=4) } else { 1 };
                for _ in 0..chord {
                    let velocity = if shape.random_velocity { rng.random_range(1..=127) } else { DEFAULT_VELOCITY };
                    notes.push(NoteEvent {
                        pitch: rng.random_range(24..=108),
                        onset,
                        duration,
                        velocity,
                    });
                }
            }
            let mut t = Track::with_notes(instrument, notes);
            drop_same_pitch_overlaps(&mut t);
            t
        })
        .collect();
    QuantizedScore::new(tracks, measures)
}

/// Keep, per pitch, only notes that start at or after the previous kept
/// note of that pitch has ended.
pub fn drop_same_pitch_overlaps(track: &mut Track) {
    let mut free_at = [0u32; 128];
    let mut kept = [false; 128];
    track.notes.retain(|n| {
        let p = n.pitch as usize;
        if kept[p] && n.onset < free_at[p] {
            return false;
        }
        kept[p] = true;
        free_at[p] = n.end();
        true
    });
}

/// `size` random pitch sets with cardinality in `sizes` over pitches `lo..=hi`.
pub fn random_bag<R: Rng + ?Sized>(rng: &mut R, size: usize, sizes: (usize, usize), lo: u8, hi: u8) -> Vec<Mulpi> {
    let span = (hi - lo) as usize + 1;
    (0..size)
        .map(|_| {
            let k = rng.random_range(sizes.0..=sizes.1).min(span);
            let mut s = PitchSet::EMPTY;
            while s.len() < k {
                s.insert(rng.random_range(lo..=hi));
            }
            Mulpi::new(s)
        })
        .collect()
}

/// Twenty diatonic triads and sevenths in C major, in two registers.
pub const CHORD_TEMPLATES: [&[u8]; 20] = [
    &[60, 64, 67],
    &[62, 65, 69],
    &[64, 67, 71],
    &[65, 69, 72],
    &[67, 71, 74],
    &[69, 72, 76],
    &[71, 74, 77],
    &[60, 64, 67, 71],
    &[62, 65, 69, 72],
    &[64, 67, 71, 74],
    &[65, 69, 72, 76],
    &[67, 71, 74, 77],
    &[69, 72, 76, 79],
    &[71, 74, 77, 81],
    &[48, 52, 55],
    &[43, 47, 50],
    &[41, 45, 48],
    &[45, 48, 52],
    &[50, 53, 57],
    &[52, 55, 59],
];

/// Mulpies drawn uniformly from [`CHORD_TEMPLATES`]; with probability
/// `noise` a mulpi is instead a uniformly random set of 2 to 4 pitches in 36..=96.
pub fn chord_template_bag<R: Rng + ?Sized>(rng: &mut R, size: usize, noise: f64) -> Vec<Mulpi> {
    (0..size)
        .map(|_| {
            if rng.random_bool(noise) {
                random_bag(rng, 1, (2, 4), 36, 96).pop().unwrap()
            } else {
                Mulpi::new(CHORD_TEMPLATES.choose(rng).unwrap().iter().copied().collect())
            }
        })
        .collect()
}

const C_MAJOR: [u8; 8] = [60, 62, 64, 65, 67, 69, 71, 72];

/// A one-track piano piece of C-major scale runs. The rhythm, direction and
/// octave vary with the rng; every pitch is in the C-major scale.
pub fn c_major_scale_score<R: Rng + ?Sized>(rng: &mut R, measures: usize) -> QuantizedScore {
    let step = *[4u32, 8].choose(rng).unwrap();
    let octave: i16 = *[-12i16, 0, 12].choose(rng).unwrap();
    let mut notes = Vec::new();
    let mut idx = 0usize;
    let mut up = rng.random_bool(0.5);
    let total = measures as u32 * 32;
    let mut t = 0;
    while t < total {
        notes.push(NoteEvent::new((C_MAJOR[idx] as i16 + octave) as u8, t, step));
        if up && idx + 1 == C_MAJOR.len() || !up && idx == 0 {
            up = !up;
        }
        idx = if up { idx + 1 } else { idx - 1 };
        t += step;
    }
    QuantizedScore::new(vec![Track::with_notes(0, notes)], vec![32; measures])
}

/// A one-track piano piece of block chords drawn from [`CHORD_TEMPLATES`],
/// one chord per half or quarter note.
pub fn c_major_chord_score<R: Rng + ?Sized>(rng: &mut R, measures: usize) -> QuantizedScore {
    let step = *[8u32, 16].choose(rng).unwrap();
    let total = measures as u32 * 32;
    let mut notes = Vec::new();
    let mut t = 0;
    while t < total {
        for &p in CHORD_TEMPLATES.choose(rng).unwrap().iter() {
            notes.push(NoteEvent::new(p, t, step));
        }
        t += step;
    }
    QuantizedScore::new(vec![Track::with_notes(0, notes)], vec![32; measures])
}

pub fn is_c_major(pitch: u8) -> bool {
    [0, 2, 4, 5, 7, 9, 11].contains(&(pitch % 12))
}
