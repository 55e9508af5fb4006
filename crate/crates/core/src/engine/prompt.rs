use alloc::vec::Vec;

use crate::model::EmbeddingOverlay;
use crate::TokenId;

/// A prompt cut into the segments the engine treats differently.
///
/// Global and query tokens are pinned in every assembled cache; context and
/// continuation tokens stream through the local window. `overlay` replaces
/// embedding rows for planted tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentedPrompt {
    pub global: Vec<TokenId>,
    pub query: Vec<TokenId>,
    pub context: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub overlay: EmbeddingOverlay,
}

impl SegmentedPrompt {
    /// Context followed by continuation: everything that streams.
    pub fn stream(&self) -> Vec<TokenId> {
        let mut s = Vec::with_capacity(self.context.len() + self.continuation.len());
        s.extend_from_slice(&self.context);
        s.extend_from_slice(&self.continuation);
        s
    }

    /// All segments in prompt order.
    pub fn flat(&self) -> Vec<TokenId> {
        let mut s = Vec::with_capacity(self.global.len() + self.query.len());
        s.extend_from_slice(&self.global);
        s.extend_from_slice(&self.query);
        s.extend(self.stream());
        s
    }
}
