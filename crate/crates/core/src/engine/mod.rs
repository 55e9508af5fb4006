//! Streaming inference loop.
//!
//! A session pins the global and query segments, then streams everything
//! else through a local window of `l_L` tokens. Tokens leaving the window
//! are cut into blocks, given representatives and admitted to a per-layer
//! tiered store. Each attention call (one per chunk in prefill, one per token
//! in decode, per layer) looks up the top `n_b` blocks and attends over
//! `G | Q | R | L` plus the current tokens.
//!
//! Keys are stored unrotated; distances are assigned at assembly time.
//! Tokens further than `l_L` back are placed at exactly `l_L`, and retrieved
//! blocks always are. Tokens still waiting in a partially filled block are
//! out of the window and not yet retrievable, so no call attends to them.

mod config;
mod prompt;
mod session;
mod trace;

pub use config::EngineConfig;
pub use prompt::SegmentedPrompt;
pub use session::{start_session, CurrentCache, DecodeOutput, Residency, Session, Span};
pub use trace::{Phase, SelectionRecord};
