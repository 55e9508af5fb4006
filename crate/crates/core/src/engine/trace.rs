use alloc::vec::Vec;

use crate::block_memory::BlockScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Phase {
    Prefill,
    Decode,
}

/// Blocks chosen by one lookup, with their scores.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionRecord {
    /// Chunk index in prefill, token index in decode.
    pub step: u64,
    pub phase: Phase,
    pub layer: usize,
    /// Ascending block ids.
    pub selected: Vec<u64>,
    /// Scores of the selected blocks, same order as `selected`.
    pub scores: Vec<BlockScore>,
    /// True when the previous selection was reused instead of rescored.
    pub reused: bool,
}
