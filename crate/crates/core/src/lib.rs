//! Multi-track music modeling on the MMR token grammar: MIDI import and
//! export, chord detection, Music BPE, the MMR codec, a linear-attention
//! decoder with four heads, and the training and sampling loops around it.

pub mod bpe;
pub mod chord;
pub mod codec;
pub mod exec;
pub mod midi;
pub mod model;
pub mod pipeline;
pub mod pitchset;
pub mod runner;
pub mod score;
pub mod stats;
pub mod synth;
