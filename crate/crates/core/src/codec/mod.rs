//! The MMR token representation: tuple layout, grammar, and score conversion.

mod convert;
mod grammar;
mod tokens;

use thiserror::Error;

use crate::score::ScoreError;

pub use convert::{canonicalize, chords_of, decode, encode, encode_score};
pub use grammar::{assign_positions, grammar_mask, validate, DecoderState, Phase};
pub use tokens::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("token {index}: expected {expected}, found {found}")]
    Grammar { index: usize, expected: String, found: String },
    #[error("token {index}: {reason}")]
    Channel { index: usize, reason: String },
    #[error("token {index}: unknown pitch-set token {token}")]
    UnknownPitchToken { index: usize, token: u32 },
    #[error("score cannot be encoded: {0}")]
    Unrepresentable(ScoreError),
    #[error("{chords} chord labels for {measures} measures")]
    ChordCount { chords: usize, measures: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
