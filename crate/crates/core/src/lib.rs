//! Streaming attention with query-aware block-level context memory.
//!
//! The crate is split along the data path of a single inference session:
//!
//! - [`model`]: a seeded toy decoder transformer that produces per-layer,
//!   per-head query/key/value vectors, plus rotary embeddings and masked
//!   attention over an explicit relative-distance matrix.
//! - [`block_memory`]: memory blocks built from evicted context, their
//!   representative tokens, and the query-aware block lookup.
//! - [`cache_tiers`]: a bounded hot tier over an unbounded cold store with LRU
//!   eviction and an always-resident representative-key index.
//! - [`engine`]: the session loop tying it together (chunked prefill, cache
//!   assembly, positional remapping, greedy decode).
//!
//! Everything here is `no_std` + `alloc`; file formats, workloads and the CLI
//! live in the `qllm-bench` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod block_memory;
pub mod cache_tiers;
pub mod engine;
mod error;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

/// Token identifier in the toy vocabulary.
pub type TokenId = u32;
