//! Music BPE: byte-pair encoding over concurrent pitches.
//!
//! The training unit is a *mulpi*, the set of two or more notes in one track
//! that share onset and duration. Every mulpi starts partitioned into
//! singleton pitch sets; each round merges the unordered pair of parts that
//! co-occurs in the most mulpies. Pair counts are maintained incrementally,
//! so a round only touches the mulpies that contain the winning pair.
//!
//! Ties on count go to the lexicographically smallest pair, comparing the
//! sorted pitch lists of the smaller part first. Training stops at the target
//! vocabulary size, when no pair is left, or when the best count drops under
//! `min_freq`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::exec::Exec;
use crate::pitchset::PitchSet;
use crate::score::QuantizedScore;

pub type TokenId = u32;
/// One singleton token per MIDI pitch.
pub const BASE_TOKENS: usize = 128;
pub const DEFAULT_MIN_FREQ: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BpeError {
    #[error("target vocabulary size {0} is below the {BASE_TOKENS} base tokens")]
    VocabTooSmall(usize),
    #[error("min_freq must be at least 1")]
    ZeroMinFreq,
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("vocab line {line}: {reason}")]
    BadVocab { line: usize, reason: String },
}

/// Where a mulpi came from, for debugging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub file: usize,
    pub measure: usize,
    pub track: usize,
    pub onset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mulpi {
    pub pitches: PitchSet,
    pub provenance: Option<Provenance>,
}

impl Mulpi {
    pub fn new(pitches: PitchSet) -> Self {
        Mulpi {
            pitches,
            provenance: None,
        }
    }
}

/// Group notes by (track, onset, duration); groups of two or more are mulpies.
pub fn extract_mulpies(score: &QuantizedScore, file: usize) -> Vec<Mulpi> {
    let mut out = Vec::new();
    for (ti, track) in score.tracks.iter().enumerate() {
        let mut groups: BTreeMap<(u32, u32), PitchSet> = BTreeMap::new();
        for n in &track.notes {
            groups.entry((n.onset, n.duration)).or_default().insert(n.pitch);
        }
        for ((onset, _), pitches) in groups {
            if pitches.len() >= 2 {
                out.push(Mulpi {
                    pitches,
                    provenance: Some(Provenance {
                        file,
                        measure: score.measure_of(onset).unwrap_or(score.measures.len()),
                        track: ti,
                        onset,
                    }),
                });
            }
        }
    }
    out
}

/// One learned rule. `left <= right` in pitch-list order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: PitchSet,
    pub right: PitchSet,
}

impl Merge {
    pub fn new(a: PitchSet, b: PitchSet) -> Self {
        if a <= b {
            Merge { left: a, right: b }
        } else {
            Merge { left: b, right: a }
        }
    }

    pub fn union(&self) -> PitchSet {
        self.left.union(self.right)
    }
}

/// The 128 singleton pitch sets plus the learned merges, in rank order.
/// Token id `p < 128` is the singleton `{p}`; id `128 + k` is the union
/// produced by merge `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeVocab {
    merges: Vec<Merge>,
    sets: Vec<PitchSet>,
    ids: HashMap<PitchSet, TokenId>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

impl Default for MergeVocab {
    fn default() -> Self {
        Self::base()
    }
}

impl MergeVocab {
    pub fn base() -> Self {
        let sets: Vec<PitchSet> = (0..BASE_TOKENS as u8).map(PitchSet::singleton).collect();
        let ids = sets.iter().enumerate().map(|(i, &s)| (s, i as TokenId)).collect();
        MergeVocab {
            merges: Vec::new(),
            sets,
            ids,
            ranks: HashMap::new(),
        }
    }

    /// Build from a rank-ordered merge list, checking that every part already
    /// exists, parts are disjoint, and each union is new.
    pub fn from_merges(merges: impl IntoIterator<Item = Merge>) -> Result<Self, String> {
        let mut v = Self::base();
        for m in merges {
            v.push(m)?;
        }
        Ok(v)
    }

    fn push(&mut self, m: Merge) -> Result<TokenId, String> {
        let l = *self.ids.get(&m.left).ok_or_else(|| format!("part {{{}}} is not in the vocabulary", m.left))?;
        let r = *self.ids.get(&m.right).ok_or_else(|| format!("part {{{}}} is not in the vocabulary", m.right))?;
        if !m.left.is_disjoint(m.right) {
            return Err(format!("parts {{{}}} and {{{}}} overlap", m.left, m.right));
        }
        let u = m.union();
        if self.ids.contains_key(&u) {
            return Err(format!("union {{{u}}} is already a token"));
        }
        let id = self.sets.len() as TokenId;
        self.ranks.insert((l.min(r), l.max(r)), self.merges.len());
        self.merges.push(m);
        self.sets.push(u);
        self.ids.insert(u, id);
        Ok(id)
    }

    /// Total token count, `128 + merges`.
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn id_of(&self, set: PitchSet) -> Option<TokenId> {
        self.ids.get(&set).copied()
    }

    pub fn expand(&self, token: TokenId) -> Result<PitchSet, BpeError> {
        self.sets
            .get(token as usize)
            .copied()
            .ok_or(BpeError::UnknownToken(token))
    }

    /// Tokenize a pitch set: start from singletons and keep applying the
    /// lowest-ranked applicable merge until none applies. Tokens come back
    /// sorted by their lowest pitch.
    pub fn apply(&self, pitches: PitchSet) -> Vec<TokenId> {
        let mut parts: Vec<TokenId> = pitches.iter().map(|p| p as TokenId).collect();
        loop {
            let mut best: Option<(usize, usize, usize)> = None;
            for i in 0..parts.len() {
                for j in i + 1..parts.len() {
                    let key = (parts[i].min(parts[j]), parts[i].max(parts[j]));
                    if let Some(&rank) = self.ranks.get(&key) {
                        if best.is_none_or(|b| rank < b.0) {
                            best = Some((rank, i, j));
                        }
                    }
                }
            }
            let Some((rank, i, j)) = best else { break };
            parts.swap_remove(j);
            parts[i] = (BASE_TOKENS + rank) as TokenId;
        }
        parts.sort_by_key(|&t| self.sets[t as usize].lowest());
        parts
    }

    /// Tokenize many sets.
    pub fn apply_all(&self, sets: &[PitchSet], exec: Exec) -> Vec<Vec<TokenId>> {
        exec.map(sets, |&s| self.apply(s))
    }

    /// One line per merge, `left|right`, pitches comma-separated ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.merges {
            let _ = writeln!(out, "{}|{}", m.left, m.right);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BpeError> {
        let mut v = Self::base();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| BpeError::BadVocab { line: line_no, reason };
            let (l, r) = line.split_once('|').ok_or_else(|| bad("expected `left|right`".into()))?;
            let left: PitchSet = l.parse().map_err(|e: crate::pitchset::PitchSetParseError| bad(e.to_string()))?;
            let right: PitchSet = r.parse().map_err(|e: crate::pitchset::PitchSetParseError| bad(e.to_string()))?;
            if left > right {
                return Err(bad("left part must not sort after right part".into()));
            }
            v.push(Merge { left, right }).map_err(bad)?;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
struct Word {
    parts: Vec<PitchSet>,
    count: u64,
}

impl Word {
    fn position(&self, s: PitchSet) -> Option<usize> {
        self.parts.iter().position(|&p| p == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    count: u64,
    pair: Merge,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (other.pair.left, other.pair.right).cmp(&(self.pair.left, self.pair.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Incremental Music BPE trainer.
///
/// `best_pair` and `merge` are exposed separately so a caller can inspect the
/// partitions between rounds; [`train`] just loops them.
#[derive(Debug, Clone)]
pub struct BpeTrainer {
    words: Vec<Word>,
    counts: HashMap<Merge, u64>,
    holders: HashMap<Merge, Vec<u32>>,
    heap: BinaryHeap<Candidate>,
    vocab: MergeVocab,
}

type PartialIndex = (HashMap<Merge, u64>, HashMap<Merge, Vec<u32>>);

impl BpeTrainer {
    pub fn new(bag: &[Mulpi]) -> Self {
        Self::from_sets(bag.iter().map(|m| m.pitches), Exec::default())
    }

    /// Identical mulpies are folded into one weighted word; the initial pair
    /// count is built from per-chunk partial counts.
    pub fn from_sets(sets: impl IntoIterator<Item = PitchSet>, exec: Exec) -> Self {
        let mut multiplicity: HashMap<PitchSet, u64> = HashMap::new();
        for s in sets {
            if s.len() >= 2 {
                *multiplicity.entry(s).or_default() += 1;
            }
        }
        let mut unique: Vec<(PitchSet, u64)> = multiplicity.into_iter().collect();
        unique.sort_unstable();
        let words: Vec<Word> = unique
            .iter()
            .map(|&(s, count)| Word {
                parts: s.iter().map(PitchSet::singleton).collect(),
                count,
            })
            .collect();

        let indexed: Vec<(u32, &Word)> = words.iter().enumerate().map(|(i, w)| (i as u32, w)).collect();
        let (counts, holders) = exec.map_reduce(
            &indexed,
            2048,
            |chunk| {
                let mut counts: HashMap<Merge, u64> = HashMap::new();
                let mut holders: HashMap<Merge, Vec<u32>> = HashMap::new();
                for &(id, w) in chunk {
                    for i in 0..w.parts.len() {
                        for j in i + 1..w.parts.len() {
                            let pair = Merge::new(w.parts[i], w.parts[j]);
                            *counts.entry(pair).or_default() += w.count;
                            holders.entry(pair).or_default().push(id);
                        }
                    }
                }
                (counts, holders)
            },
            (HashMap::new(), HashMap::new()),
            |(mut counts, mut holders): PartialIndex, (c, h): PartialIndex| {
                for (pair, n) in c {
                    *counts.entry(pair).or_default() += n;
                }
                for (pair, ids) in h {
                    holders.entry(pair).or_default().extend(ids);
                }
                (counts, holders)
            },
        );
        let heap = counts.iter().map(|(&pair, &count)| Candidate { count, pair }).collect();
        BpeTrainer {
            words,
            counts,
            holders,
            heap,
            vocab: MergeVocab::base(),
        }
    }

    pub fn vocab(&self) -> &MergeVocab {
        &self.vocab
    }

    pub fn into_vocab(self) -> MergeVocab {
        self.vocab
    }

    /// Current partition of every distinct mulpi, with its multiplicity.
    pub fn partitions(&self) -> impl Iterator<Item = (&[PitchSet], u64)> {
        self.words.iter().map(|w| (w.parts.as_slice(), w.count))
    }

    /// Current co-occurrence count of an unordered pair.
    pub fn pair_count(&self, a: PitchSet, b: PitchSet) -> u64 {
        self.counts.get(&Merge::new(a, b)).copied().unwrap_or(0)
    }

    /// The most frequent pair and its count, or `None` when no pair remains.
    pub fn best_pair(&mut self) -> Option<(Merge, u64)> {
        while let Some(top) = self.heap.peek() {
            if self.counts.get(&top.pair) == Some(&top.count) {
                return Some((top.pair, top.count));
            }
            self.heap.pop();
        }
        None
    }

    /// Merge `pair` in every mulpi that holds both parts and update the
    /// pair counts of the parts they share a mulpi with.
    pub fn merge(&mut self, pair: Merge) -> TokenId {
        let id = self.vocab.push(pair).expect("trainer merges are always valid");
        let union = pair.union();
        self.counts.remove(&pair);
        let holders = self.holders.remove(&pair).unwrap_or_default();
        let mut touched: HashMap<Merge, ()> = HashMap::new();
        for wid in holders {
            let word = &mut self.words[wid as usize];
            let (Some(li), Some(ri)) = (word.position(pair.left), word.position(pair.right)) else {
                continue;
            };
            let (hi, lo) = (li.max(ri), li.min(ri));
            word.parts.swap_remove(hi);
            word.parts.swap_remove(lo);
            let count = word.count;
            for &q in &word.parts {
                for old in [Merge::new(q, pair.left), Merge::new(q, pair.right)] {
                    if let Some(c) = self.counts.get_mut(&old) {
                        *c -= count;
                        if *c == 0 {
                            self.counts.remove(&old);
                        }
                        touched.insert(old, ());
                    }
                }
                let new = Merge::new(q, union);
                *self.counts.entry(new).or_default() += count;
                self.holders.entry(new).or_default().push(wid);
                touched.insert(new, ());
            }
            word.parts.push(union);
        }
        for pair in touched.into_keys() {
            if let Some(&count) = self.counts.get(&pair) {
                self.heap.push(Candidate { count, pair });
            }
        }
        id
    }

    /// One training round: pick the best pair and merge it.
    pub fn step(&mut self, min_freq: u64) -> Option<(Merge, u64)> {
        let (pair, count) = self.best_pair()?;
        if count < min_freq {
            return None;
        }
        self.merge(pair);
        Some((pair, count))
    }
}

fn check_args(n: usize, min_freq: u64) -> Result<(), BpeError> {
    if n < BASE_TOKENS {
        return Err(BpeError::VocabTooSmall(n));
    }
    if min_freq == 0 {
        return Err(BpeError::ZeroMinFreq);
    }
    Ok(())
}

/// Learn merges until the vocabulary holds `n` tokens.
pub fn train(bag: &[Mulpi], n: usize, min_freq: u64) -> Result<MergeVocab, BpeError> {
    train_with(bag, n, min_freq, Exec::default())
}

pub fn train_with(bag: &[Mulpi], n: usize, min_freq: u64, exec: Exec) -> Result<MergeVocab, BpeError> {
    check_args(n, min_freq)?;
    let mut trainer = BpeTrainer::from_sets(bag.iter().map(|m| m.pitches), exec);
    while trainer.vocab.len() < n && trainer.step(min_freq).is_some() {}
    Ok(trainer.into_vocab())
}

/// Same contract as [`train`], recounting every pair from scratch each round.
/// Quadratic and slow; kept as a test oracle.
pub fn train_reference(bag: &[Mulpi], n: usize, min_freq: u64) -> Result<MergeVocab, BpeError> {
    check_args(n, min_freq)?;
    let mut partitions: Vec<Vec<PitchSet>> = bag
        .iter()
        .filter(|m| m.pitches.len() >= 2)
        .map(|m| m.pitches.iter().map(PitchSet::singleton).collect())
        .collect();
    let mut merges = Vec::new();
    while BASE_TOKENS + merges.len() < n {
        let mut counts: HashMap<(PitchSet, PitchSet), u64> = HashMap::new();
        for parts in &partitions {
            for (i, &a) in parts.iter().enumerate() {
                for &b in &parts[i + 1..] {
                    let key = if a < b { (a, b) } else { (b, a) };
                    *counts.entry(key).or_default() += 1;
                }
            }
        }
        // highest count, then the lexicographically smallest pair
        let mut best: Option<((PitchSet, PitchSet), u64)> = None;
        for (&pair, &c) in &counts {
            if best.is_none_or(|(bp, bc)| c > bc || (c == bc && pair < bp)) {
                best = Some((pair, c));
            }
        }
        let Some(((a, b), c)) = best else { break };
        if c < min_freq {
            break;
        }
        let union = a.union(b);
        for parts in &mut partitions {
            if parts.contains(&a) && parts.contains(&b) {
                parts.retain(|&p| p != a && p != b);
                parts.push(union);
            }
        }
        merges.push(Merge { left: a, right: b });
    }
    MergeVocab::from_merges(merges).map_err(|reason| BpeError::BadVocab { line: 0, reason })
}
