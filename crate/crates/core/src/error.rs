use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration violates one of its invariants.
    Config(String),
    /// Tensor shapes passed to an operation do not line up.
    Shape(String),
    LayerOutOfRange {
        layer: usize,
        n_layers: usize,
    },
    TokenOutOfRange {
        token: u32,
        vocab_size: usize,
    },
    /// An operation that needs at least one element got none.
    EmptyInput(&'static str),
    /// A query row in masked attention has no unmasked key.
    FullyMaskedRow {
        row: usize,
    },
    UnfinalizedBlock {
        block_id: u64,
    },
    DuplicateBlock {
        block_id: u64,
    },
    BlockNotFound {
        block_id: u64,
    },
    /// The engine tried to read a block payload that is not in the hot tier.
    BlockNotResident {
        block_id: u64,
    },
    GlobalOverflow {
        len: usize,
        budget: usize,
    },
    QueryOverflow {
        len: usize,
        budget: usize,
    },
    /// The session is not in a state that permits the requested call.
    SessionState(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::LayerOutOfRange { layer, n_layers } => {
                write!(f, "layer {layer} out of range (model has {n_layers})")
            }
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token id {token} out of range (vocab size {vocab_size})")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::FullyMaskedRow { row } => {
                write!(f, "query row {row} has no unmasked key")
            }
            Error::UnfinalizedBlock { block_id } => {
                write!(f, "block {block_id} is not finalized")
            }
            Error::DuplicateBlock { block_id } => {
                write!(f, "block {block_id} already admitted")
            }
            Error::BlockNotFound { block_id } => write!(f, "unknown block id {block_id}"),
            Error::BlockNotResident { block_id } => {
                write!(f, "block {block_id} is not resident in the hot tier")
            }
            Error::GlobalOverflow { len, budget } => {
                write!(f, "global segment of {len} tokens exceeds n_init = {budget}")
            }
            Error::QueryOverflow { len, budget } => {
                write!(f, "query segment of {len} tokens exceeds remaining budget {budget}")
            }
            Error::SessionState(msg) => write!(f, "invalid session state: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
