//! A set of MIDI pitches packed into a 128-bit mask.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PitchSet(u128);

impl PitchSet {
    pub const EMPTY: PitchSet = PitchSet(0);

    pub fn singleton(pitch: u8) -> Self {
        debug_assert!(pitch < 128);
        PitchSet(1u128 << (pitch & 0x7f))
    }

    pub fn from_bits(bits: u128) -> Self {
        PitchSet(bits)
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn contains(self, pitch: u8) -> bool {
        pitch < 128 && self.0 >> pitch & 1 == 1
    }

    pub fn insert(&mut self, pitch: u8) {
        *self = self.union(PitchSet::singleton(pitch));
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn lowest(self) -> Option<u8> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as u8)
    }

    pub fn union(self, other: PitchSet) -> PitchSet {
        PitchSet(self.0 | other.0)
    }

    pub fn is_disjoint(self, other: PitchSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset(self, other: PitchSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Pitches in ascending order.
    pub fn iter(self) -> impl Iterator<Item = u8> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let p = bits.trailing_zeros();
                bits &= bits - 1;
                Some(p as u8)
            }
        })
    }
}

impl FromIterator<u8> for PitchSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        iter.into_iter().fold(PitchSet::EMPTY, |s, p| s.union(PitchSet::singleton(p)))
    }
}

/// Lexicographic order of the ascending pitch lists.
impl Ord for PitchSet {
    fn cmp(&self, other: &Self) -> Ordering {
        let diff = self.0 ^ other.0;
        if diff == 0 {
            return Ordering::Equal;
        }
        // Below the lowest differing pitch the lists agree. Whoever holds that
        // pitch is smaller unless the other list stops there.
        let p = diff.trailing_zeros();
        let above = if p == 127 { 0 } else { !0u128 << (p + 1) };
        let (holder_less, other_bits) = if self.0 >> p & 1 == 1 {
            (true, other.0)
        } else {
            (false, self.0)
        };
        let other_continues = other_bits & above != 0;
        match (holder_less, other_continues) {
            (true, true) | (false, false) => Ordering::Less,
            _ => Ordering::Greater,
        }
    }
}

impl PartialOrd for PitchSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Comma-separated ascending pitches, e.g. `60,64,67`.
impl fmt::Display for PitchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for p in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for PitchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitchSetParseError(pub String);

impl fmt::Display for PitchSetParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid pitch list `{}`", self.0)
    }
}

impl std::error::Error for PitchSetParseError {}

impl FromStr for PitchSet {
    type Err = PitchSetParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PitchSetParseError(s.to_string());
        let mut set = PitchSet::EMPTY;
        let mut last: Option<u8> = None;
        for part in s.trim().split(',') {
            let p: u8 = part.trim().parse().map_err(|_| err())?;
            if p > 127 || last.is_some_and(|l| p <= l) {
                return Err(err());
            }
            set.insert(p);
            last = Some(p);
        }
        Ok(set)
    }
}
