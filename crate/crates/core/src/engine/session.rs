use alloc::vec::Vec;
use core::ops::Range;

use super::{EngineConfig, Phase, SegmentedPrompt, SelectionRecord};
use crate::block_memory::{
    accumulate_representative_scores, finalize_block, rank_blocks, BlockScore, MemoryBlock, QueryMemo, QuerySummary,
    RepresentativeScore,
};
use crate::cache_tiers::{CacheStats, TierConfig, TieredStore};
use crate::model::{argmax, masked_attention_with_table, AttentionInput, QkvChunk, RotaryTable, ToyModel};
use crate::tensor::{HeadMatrix, Matrix};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Global,
    Query,
    Retrieved,
    Local,
}

/// The assembled cache `G | Q | R | L` for one attention call, excluding the
/// current tokens themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentCache {
    pub global: Range<usize>,
    pub query: Range<usize>,
    pub retrieved: Range<usize>,
    pub local: Range<usize>,
    /// Ascending ids of the blocks spliced into `retrieved`.
    pub retrieved_blocks: Vec<u64>,
    pub positions: Vec<u64>,
    pub tokens: Vec<TokenId>,
    /// Distance of each cached token from the newest cached token, clamped
    /// to `l_L`; retrieved tokens always get `l_L`.
    pub assigned_distances: Vec<i64>,
}

impl CurrentCache {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn span_of(&self, index: usize) -> Option<Span> {
        [
            (Span::Global, &self.global),
            (Span::Query, &self.query),
            (Span::Retrieved, &self.retrieved),
            (Span::Local, &self.local),
        ]
        .into_iter()
        .find(|(_, r)| r.contains(&index))
        .map(|(s, _)| s)
    }
}

/// Where every streamed token of one layer currently lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residency {
    pub local: Range<u64>,
    pub pending: Range<u64>,
    pub admitted: Vec<Range<u64>>,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    /// Final residual stream of each decoded token, one row per step.
    pub hidden: Matrix,
    pub trace: Vec<SelectionRecord>,
}

#[derive(Debug, Clone)]
struct LayerState {
    pinned_keys: HeadMatrix,
    pinned_values: HeadMatrix,
    query_summary: QuerySummary,
    memo: QueryMemo,
    local_start: u64,
    local_queries: HeadMatrix,
    local_keys: HeadMatrix,
    local_values: HeadMatrix,
    pending_start: u64,
    pending_keys: HeadMatrix,
    pending_values: HeadMatrix,
    pending_scores: Vec<RepresentativeScore>,
    store: TieredStore,
    next_block_id: u64,
    last_selection: Vec<u64>,
    last_scores: Vec<BlockScore>,
    lookups: u64,
}

impl LayerState {
    fn new(n_heads: usize, d_head: usize, tier: TierConfig) -> Result<Self> {
        let empty = || HeadMatrix::zeros(0, n_heads, d_head);
        Ok(Self {
            pinned_keys: empty(),
            pinned_values: empty(),
            query_summary: QuerySummary::empty(n_heads * d_head),
            memo: QueryMemo::new(QuerySummary::empty(n_heads * d_head)),
            local_start: 0,
            local_queries: empty(),
            local_keys: empty(),
            local_values: empty(),
            pending_start: 0,
            pending_keys: empty(),
            pending_values: empty(),
            pending_scores: Vec::new(),
            store: TieredStore::new(tier)?,
            next_block_id: 0,
            last_selection: Vec::new(),
            last_scores: Vec::new(),
            lookups: 0,
        })
    }

    /// Pick blocks for the current queries. Returns (ids, scores, reused).
    fn select(&mut self, config: &EngineConfig, current: &HeadMatrix) -> (Vec<u64>, Vec<BlockScore>, bool) {
        if config.blocks_per_lookup == 0 || self.store.is_empty() {
            return (Vec::new(), Vec::new(), false);
        }
        let rescore = self.lookups % config.reselect_interval as u64 == 0;
        self.lookups += 1;
        if !rescore {
            return (self.last_selection.clone(), self.last_scores.clone(), true);
        }
        let current = QuerySummary::new(current);
        let memo = &mut self.memo;
        let scores = self.store.scan_index(|e| {
            let sq = memo.s_query(e.block_id, &e.representative_key_sum);
            BlockScore::new(e.block_id, sq, current.score(&e.representative_key_sum), config.beta)
        });
        let selected = rank_blocks(&scores, config.blocks_per_lookup);
        let chosen: Vec<BlockScore> = selected
            .iter()
            .map(|id| *scores.iter().find(|s| s.block_id == *id).expect("selected from scores"))
            .collect();
        self.last_selection = selected.clone();
        self.last_scores = chosen.clone();
        (selected, chosen, false)
    }

    /// Append the chunk to the local window and evict what overflows.
    fn push_stream(&mut self, chunk: &QkvChunk, config: &EngineConfig) -> Result<()> {
        if self.local_keys.is_empty() {
            self.local_start = chunk.absolute_positions[0];
            if self.pending_keys.is_empty() {
                self.pending_start = self.local_start;
            }
        }
        self.local_queries.extend_rows(&chunk.queries);
        self.local_keys.extend_rows(&chunk.keys);
        self.local_values.extend_rows(&chunk.values);

        let l_l = config.local_window;
        let overflow = self.local_keys.rows().saturating_sub(l_l);
        if overflow == 0 {
            return Ok(());
        }
        // Every evicted token has all l_L successors inside the window.
        let successors = self.local_queries.slice_rows(1..overflow + l_l);
        let evicted_keys = self.local_keys.split_front(overflow);
        let evicted_values = self.local_values.split_front(overflow);
        self.local_queries.split_front(overflow);
        let scores = accumulate_representative_scores(&evicted_keys, &successors, l_l);
        self.local_start += overflow as u64;

        self.pending_keys.extend_rows(&evicted_keys);
        self.pending_values.extend_rows(&evicted_values);
        self.pending_scores.extend(scores);
        while self.pending_keys.rows() >= config.block_size {
            let keys = self.pending_keys.split_front(config.block_size);
            let values = self.pending_values.split_front(config.block_size);
            let scores: Vec<RepresentativeScore> = self
                .pending_scores
                .drain(..config.block_size)
                .enumerate()
                .map(|(i, s)| RepresentativeScore { token_index: i, ..s })
                .collect();
            let block = MemoryBlock::unfinalized(self.next_block_id, chunk.layer, self.pending_start, keys, values)?;
            self.store.admit_block(finalize_block(block, &scores, config.representatives)?)?;
            self.next_block_id += 1;
            self.pending_start += config.block_size as u64;
        }
        Ok(())
    }

    fn residency(&self) -> Residency {
        let local_end = self.local_start + self.local_keys.rows() as u64;
        Residency {
            local: self.local_start..local_end,
            pending: self.pending_start..self.pending_start + self.pending_keys.rows() as u64,
            admitted: self.store.blocks().map(|b| b.token_range.clone()).collect(),
        }
    }
}

/// Concatenate `G | Q | R | L | current` and build the distance matrix.
///
/// Cached tokens sit at `min(true distance, l_L)` from each current token,
/// except retrieved tokens, which always sit at `l_L`. Current tokens see
/// each other causally at true distance.
fn assemble(
    state: &LayerState,
    config: &EngineConfig,
    history: &[TokenId],
    n_global: usize,
    selected: &[u64],
    chunk: &QkvChunk,
    rope_base: f32,
) -> Result<(CurrentCache, AttentionInput)> {
    let l_l = config.local_window as i64;
    let reference = chunk.absolute_positions[0] as i64 - 1;
    let (n_heads, d_head) = (chunk.keys.n_heads(), chunk.keys.d_head());
    let mut ids = selected.to_vec();
    ids.sort_unstable();
    ids.dedup();

    let n_pinned = state.pinned_keys.rows();
    let mut keys =
        HeadMatrix::with_capacity(n_pinned + ids.len() * config.block_size + state.local_keys.rows(), n_heads, d_head);
    let mut values = HeadMatrix::with_capacity(keys.rows(), n_heads, d_head);
    let mut positions = Vec::new();
    let mut assigned = Vec::new();
    let clamp = |pos: u64| (reference - pos as i64).clamp(0, l_l);

    keys.extend_rows(&state.pinned_keys);
    values.extend_rows(&state.pinned_values);
    for p in 0..n_pinned as u64 {
        positions.push(p);
        assigned.push(clamp(p));
    }
    let retrieved_start = positions.len();
    for &id in &ids {
        let block = state.store.resident_block(id)?;
        keys.extend_rows(&block.keys);
        values.extend_rows(&block.values);
        for p in block.token_range.clone() {
            positions.push(p);
            assigned.push(l_l);
        }
    }
    let local_start = positions.len();
    keys.extend_rows(&state.local_keys);
    values.extend_rows(&state.local_values);
    for r in 0..state.local_keys.rows() as u64 {
        let p = state.local_start + r;
        positions.push(p);
        assigned.push(clamp(p));
    }
    let n_cached = positions.len();

    let cache = CurrentCache {
        global: 0..n_global.min(n_pinned),
        query: n_global.min(n_pinned)..n_pinned,
        retrieved: retrieved_start..local_start,
        local: local_start..n_cached,
        retrieved_blocks: ids,
        tokens: positions.iter().map(|&p| history[p as usize]).collect(),
        positions,
        assigned_distances: assigned,
    };

    keys.extend_rows(&chunk.keys);
    values.extend_rows(&chunk.values);
    let nq = chunk.len();
    let nk = keys.rows();
    let mut distances = alloc::vec![0i64; nq * nk];
    let mut mask = alloc::vec![false; nq * nk];
    for i in 0..nq {
        let offset = chunk.absolute_positions[i] as i64 - reference;
        let row = i * nk;
        for j in 0..n_cached {
            distances[row + j] =
                if cache.retrieved.contains(&j) { l_l } else { (cache.assigned_distances[j] + offset).min(l_l) };
            mask[row + j] = true;
        }
        for j in 0..=i {
            distances[row + n_cached + j] = (chunk.absolute_positions[i] - chunk.absolute_positions[j]) as i64;
            mask[row + n_cached + j] = true;
        }
    }
    let input = AttentionInput {
        a_q: chunk.queries.clone(),
        a_k: keys,
        a_v: values,
        relative_distances: distances,
        causal_mask: mask,
        rope_base,
    };
    Ok((cache, input))
}

/// One streaming inference session over a shared model.
#[derive(Debug, Clone)]
pub struct Session<'m> {
    model: &'m ToyModel,
    config: EngineConfig,
    overlay: crate::model::EmbeddingOverlay,
    table: RotaryTable,
    layers: Vec<LayerState>,
    history: Vec<TokenId>,
    n_global: usize,
    n_query: usize,
    pinned_hidden: Matrix,
    next_logits: Option<Vec<f32>>,
    trace: Vec<SelectionRecord>,
    prefill_steps: u64,
    decode_steps: u64,
    max_cache_len: usize,
}

/// Encode the pinned segments of `prompt` and return a session ready to
/// stream context.
pub fn start_session<'m>(model: &'m ToyModel, config: EngineConfig, prompt: &SegmentedPrompt) -> Result<Session<'m>> {
    Session::start(model, config, prompt)
}

impl<'m> Session<'m> {
    pub fn start(model: &'m ToyModel, config: EngineConfig, prompt: &SegmentedPrompt) -> Result<Self> {
        config.validate()?;
        let (n_g, n_q) = (prompt.global.len(), prompt.query.len());
        if n_g > config.n_init {
            return Err(Error::GlobalOverflow { len: n_g, budget: config.n_init });
        }
        if n_q > config.n_init - n_g {
            return Err(Error::QueryOverflow { len: n_q, budget: config.n_init - n_g });
        }
        let mc = model.config();
        let tier = TierConfig { hot_capacity_blocks: config.hot_capacity_blocks, track_transfers: true };
        let layers =
            (0..mc.n_layers).map(|_| LayerState::new(mc.n_heads, mc.d_head, tier)).collect::<Result<Vec<_>>>()?;
        let mut session = Self {
            model,
            config,
            overlay: prompt.overlay.clone(),
            table: RotaryTable::new(mc.d_head, mc.rope_base, config.local_window.max(config.chunk_size))?,
            layers,
            history: Vec::new(),
            n_global: n_g,
            n_query: n_q,
            pinned_hidden: Matrix::zeros(0, mc.d_model),
            next_logits: None,
            trace: Vec::new(),
            prefill_steps: 0,
            decode_steps: 0,
            max_cache_len: 0,
        };
        for chunk in prompt.global.chunks(config.chunk_size) {
            session.encode_pinned(chunk, false)?;
        }
        for chunk in prompt.query.chunks(config.chunk_size) {
            session.encode_pinned(chunk, true)?;
        }
        for layer in &mut session.layers {
            layer.memo = QueryMemo::new(layer.query_summary.clone());
        }
        Ok(session)
    }

    /// Global or query tokens: attend to earlier pinned tokens and themselves,
    /// then join the pinned prefix.
    fn encode_pinned(&mut self, tokens: &[TokenId], is_query: bool) -> Result<()> {
        let start = self.history.len() as u64;
        let Self { model, config, overlay, table, layers, history, n_global, max_cache_len, .. } = self;
        let overlay = (!overlay.is_empty()).then_some(&*overlay);
        let rope_base = model.config().rope_base;
        let out = model.forward_chunk(tokens, start, overlay, &mut |chunk: &QkvChunk| -> Result<HeadMatrix> {
            let state = &mut layers[chunk.layer];
            let (cache, input) = assemble(state, config, history, *n_global, &[], chunk, rope_base)?;
            *max_cache_len = (*max_cache_len).max(cache.len());
            let out = masked_attention_with_table(&input, table)?;
            state.pinned_keys.extend_rows(&chunk.keys);
            state.pinned_values.extend_rows(&chunk.values);
            if is_query {
                state.query_summary.extend(&chunk.queries);
            }
            Ok(out)
        })?;
        self.history.extend_from_slice(tokens);
        self.pinned_hidden = Matrix::vstack(self.pinned_hidden.cols(), [&self.pinned_hidden, &out.hidden]);
        self.next_logits = Some(out.logits);
        Ok(())
    }

    /// One streamed chunk through every layer: lookup, fetch, assemble,
    /// attend, then slide the window.
    fn stream_chunk(&mut self, tokens: &[TokenId], phase: Phase, step: u64) -> Result<Matrix> {
        let start = self.history.len() as u64;
        let Self { model, config, overlay, table, layers, history, n_global, max_cache_len, trace, .. } = self;
        let overlay = (!overlay.is_empty()).then_some(&*overlay);
        let rope_base = model.config().rope_base;
        let out = model.forward_chunk(tokens, start, overlay, &mut |chunk: &QkvChunk| -> Result<HeadMatrix> {
            let state = &mut layers[chunk.layer];
            let (selected, scores, reused) = state.select(config, &chunk.queries);
            state.store.fetch_blocks(&selected)?;
            let (cache, input) = assemble(state, config, history, *n_global, &selected, chunk, rope_base)?;
            *max_cache_len = (*max_cache_len).max(cache.len());
            let out = masked_attention_with_table(&input, table)?;
            trace.push(SelectionRecord { step, phase, layer: chunk.layer, selected, scores, reused });
            state.push_stream(chunk, config)?;
            Ok(out)
        })?;
        self.history.extend_from_slice(tokens);
        self.next_logits = Some(out.logits);
        Ok(out.hidden)
    }

    /// Stream `tokens` chunk by chunk; returns their final residual stream.
    pub fn prefill(&mut self, tokens: &[TokenId]) -> Result<Matrix> {
        let mut hidden = Matrix::zeros(0, self.model.config().d_model);
        for chunk in tokens.chunks(self.config.chunk_size) {
            let h = self.stream_chunk(chunk, Phase::Prefill, self.prefill_steps)?;
            self.prefill_steps += 1;
            hidden = Matrix::vstack(hidden.cols(), [&hidden, &h]);
        }
        Ok(hidden)
    }

    /// Greedy decoding, one token and one lookup per layer per step.
    pub fn decode(&mut self, max_new_tokens: usize) -> Result<DecodeOutput> {
        self.decode_with(max_new_tokens, |_, logits| argmax(logits))
    }

    /// Decode steps that feed `tokens` instead of the model's own choices.
    /// Each step still does one lookup per layer; the output holds `tokens`.
    pub fn decode_forced(&mut self, tokens: &[TokenId]) -> Result<DecodeOutput> {
        self.decode_with(tokens.len(), |i, _| tokens[i])
    }

    fn decode_with(&mut self, steps: usize, mut choose: impl FnMut(usize, &[f32]) -> TokenId) -> Result<DecodeOutput> {
        let mut out = DecodeOutput {
            tokens: Vec::with_capacity(steps),
            hidden: Matrix::zeros(0, self.model.config().d_model),
            trace: Vec::new(),
        };
        if steps == 0 {
            return Ok(out);
        }
        let trace_start = self.trace.len();
        for i in 0..steps {
            let logits = self.next_logits.as_ref().ok_or(Error::SessionState("decode before any token was encoded"))?;
            let token = choose(i, logits);
            let h = self.stream_chunk(&[token], Phase::Decode, self.decode_steps)?;
            self.decode_steps += 1;
            out.tokens.push(token);
            out.hidden.push_row(h.row(0));
        }
        out.trace = self.trace[trace_start..].to_vec();
        Ok(out)
    }

    /// Assemble the cache `layer` would use for `current` with the given
    /// blocks, which must already be hot.
    pub fn assemble_cache(
        &self,
        layer: usize,
        selected: &[u64],
        current: &QkvChunk,
    ) -> Result<(CurrentCache, AttentionInput)> {
        let state = self.layer(layer)?;
        if current.is_empty() {
            return Err(Error::EmptyInput("assemble_cache needs current tokens"));
        }
        assemble(state, &self.config, &self.history, self.n_global, selected, current, self.model.config().rope_base)
    }

    fn layer(&self, layer: usize) -> Result<&LayerState> {
        self.layers.get(layer).ok_or(Error::LayerOutOfRange { layer, n_layers: self.layers.len() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &'m ToyModel {
        self.model
    }

    /// Every token encoded so far, indexed by absolute position.
    pub fn history(&self) -> &[TokenId] {
        &self.history
    }

    /// Absolute position of the first streamed token.
    pub fn stream_origin(&self) -> u64 {
        (self.n_global + self.n_query) as u64
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    /// Final residual stream of the global and query tokens.
    pub fn pinned_hidden(&self) -> &Matrix {
        &self.pinned_hidden
    }

    /// Logits for the token after the last encoded one.
    pub fn next_logits(&self) -> Option<&[f32]> {
        self.next_logits.as_deref()
    }

    pub fn trace(&self) -> &[SelectionRecord] {
        &self.trace
    }

    pub fn query_summary(&self, layer: usize) -> Result<&QuerySummary> {
        Ok(&self.layer(layer)?.query_summary)
    }

    pub fn store(&self, layer: usize) -> Result<&TieredStore> {
        Ok(&self.layer(layer)?.store)
    }

    /// Hot-tier stats merged over layers.
    pub fn cache_stats(&self) -> CacheStats {
        self.layers.iter().fold(CacheStats::default(), |acc, l| acc.merge(&l.store.stats()))
    }

    /// Largest assembled cache seen so far, current tokens excluded.
    pub fn max_cache_len(&self) -> usize {
        self.max_cache_len
    }

    pub fn cache_budget(&self) -> usize {
        self.config.cache_budget(self.n_query)
    }

    pub fn residency(&self, layer: usize) -> Result<Residency> {
        Ok(self.layer(layer)?.residency())
    }
}
