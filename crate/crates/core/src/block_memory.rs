//! Memory blocks and query-aware block lookup.
//!
//! Evicted context is cut into blocks of `l_b` tokens. Each block keeps the
//! `n_r` tokens whose keys are most attended by their `l_L` successors
//! ("representative" tokens); lookup scores blocks only through those keys.
//!
//! A block's relevance to a set of query vectors is the double sum
//! `Σ_i Σ_j q_i · k_j` over query rows and representative keys. Dot products
//! are taken per head and summed over heads, which is the plain dot product
//! of the concatenated `d_model` rows, so the double sum factors into
//! `(Σ_i q_i) · (Σ_j k_j)`. Blocks cache `Σ_j k_j` at finalization.
//!
//! The final score is `s_current + β · s_query`. Block ids grow with token
//! position, so ordering by id is context order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::tensor::{dot_f64, HeadMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBlock {
    pub block_id: u64,
    pub layer: usize,
    /// Absolute positions `[start, end)` of the block's tokens.
    pub token_range: Range<u64>,
    pub keys: HeadMatrix,
    pub values: HeadMatrix,
    pub representative_keys: HeadMatrix,
    /// Strictly increasing offsets within the block.
    pub representative_indices: Vec<usize>,
    finalized: bool,
    representative_key_sum: Vec<f64>,
}

impl MemoryBlock {
    /// A block whose representatives have not been chosen yet.
    pub fn unfinalized(block_id: u64, layer: usize, start: u64, keys: HeadMatrix, values: HeadMatrix) -> Result<Self> {
        check_kv(&keys, &values)?;
        let width = keys.width();
        Ok(Self {
            block_id,
            layer,
            token_range: start..start + keys.rows() as u64,
            representative_keys: HeadMatrix::zeros(0, keys.n_heads(), keys.d_head()),
            keys,
            values,
            representative_indices: Vec::new(),
            finalized: false,
            representative_key_sum: alloc::vec![0.0; width],
        })
    }

    /// Rebuild a finalized block from stored parts (snapshot loading).
    pub fn from_parts(
        block_id: u64,
        layer: usize,
        start: u64,
        keys: HeadMatrix,
        values: HeadMatrix,
        representative_indices: Vec<usize>,
    ) -> Result<Self> {
        let mut block = Self::unfinalized(block_id, layer, start, keys, values)?;
        let n = block.keys.rows();
        let increasing = representative_indices.windows(2).all(|w| w[0] < w[1]);
        if !increasing || representative_indices.iter().any(|&i| i >= n) || representative_indices.is_empty() {
            return Err(Error::Shape(alloc::format!(
                "representative indices {representative_indices:?} invalid for a {n}-token block"
            )));
        }
        block.set_representatives(representative_indices);
        Ok(block)
    }

    fn set_representatives(&mut self, indices: Vec<usize>) {
        self.representative_keys = self.keys.gather(&indices);
        self.representative_key_sum = self.representative_keys.row_sum();
        self.representative_indices = indices;
        self.finalized = true;
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// `Σ_j k_j` over representative keys, in `f64`.
    pub fn representative_key_sum(&self) -> &[f64] {
        &self.representative_key_sum
    }
}

fn check_kv(keys: &HeadMatrix, values: &HeadMatrix) -> Result<()> {
    if keys.rows() != values.rows() || !keys.same_layout(values) {
        return Err(Error::Shape(alloc::format!(
            "block keys ({} rows) and values ({} rows) disagree",
            keys.rows(),
            values.rows()
        )));
    }
    Ok(())
}

/// Mean dot product between a token's key and the queries of its successors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepresentativeScore {
    pub token_index: usize,
    /// `-inf` when no successor was observed.
    pub score: f64,
    pub successor_count: usize,
}

/// Scores `keys[i]` against the queries of its first `local_window`
/// successors.
///
/// `successor_queries` is the query stream that starts right after the first
/// key: row `t` belongs to the token at offset `t + 1` from key 0. Tokens
/// near the end of the stream average over however many successors exist;
/// a token with none scores `-inf`.
pub fn accumulate_representative_scores(
    keys: &HeadMatrix,
    successor_queries: &HeadMatrix,
    local_window: usize,
) -> Vec<RepresentativeScore> {
    let m = successor_queries.rows();
    let width = successor_queries.width();
    let mut window = alloc::vec![0.0f64; width];
    let mut hi = 0usize;
    let mut out = Vec::with_capacity(keys.rows());
    for i in 0..keys.rows() {
        // Window covers query rows [i, min(i + local_window, m)).
        let end = (i + local_window).min(m);
        while hi < end {
            for (w, &q) in window.iter_mut().zip(successor_queries.row(hi)) {
                *w += q as f64;
            }
            hi += 1;
        }
        if i > 0 && i - 1 < m {
            for (w, &q) in window.iter_mut().zip(successor_queries.row(i - 1)) {
                *w -= q as f64;
            }
        }
        let count = end.saturating_sub(i);
        let score = if count == 0 {
            f64::NEG_INFINITY
        } else {
            let k: Vec<f64> = keys.row(i).iter().map(|&x| x as f64).collect();
            dot_f64(&k, &window) / count as f64
        };
        out.push(RepresentativeScore { token_index: i, score, successor_count: count });
    }
    out
}

/// Pick the `min(n_r, len)` highest-scoring tokens (ties toward the lower
/// index) as the block's representatives.
pub fn finalize_block(mut block: MemoryBlock, scores: &[RepresentativeScore], n_r: usize) -> Result<MemoryBlock> {
    let n = block.len();
    if n == 0 {
        return Err(Error::EmptyInput("cannot finalize an empty block"));
    }
    if scores.len() != n {
        return Err(Error::Shape(alloc::format!("{} scores for a {n}-token block", scores.len())));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(n_r.min(n)).collect();
    chosen.sort_unstable();
    block.set_representatives(chosen);
    Ok(block)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockScore {
    pub block_id: u64,
    pub s_query: f64,
    pub s_current: f64,
    pub combined: f64,
}

impl BlockScore {
    pub fn new(block_id: u64, s_query: f64, s_current: f64, beta: f64) -> Self {
        Self { block_id, s_query, s_current, combined: s_current + beta * s_query }
    }
}

/// Column sum of a set of query vectors; the left factor of every block
/// score against that set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySummary {
    sum: Vec<f64>,
    count: usize,
}

impl QuerySummary {
    pub fn new(queries: &HeadMatrix) -> Self {
        Self { sum: queries.row_sum(), count: queries.rows() }
    }

    pub fn empty(width: usize) -> Self {
        Self { sum: alloc::vec![0.0; width], count: 0 }
    }

    /// Fold in more query rows.
    pub fn extend(&mut self, queries: &HeadMatrix) {
        for i in 0..queries.rows() {
            for (s, &q) in self.sum.iter_mut().zip(queries.row(i)) {
                *s += q as f64;
            }
        }
        self.count += queries.rows();
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// `Σ_i Σ_j q_i · k_j` against the block's representative keys.
    pub fn score(&self, representative_key_sum: &[f64]) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        dot_f64(&self.sum, representative_key_sum)
    }
}

fn score_block(block: &MemoryBlock, queries: &HeadMatrix) -> Result<f64> {
    if !block.finalized {
        return Err(Error::UnfinalizedBlock { block_id: block.block_id });
    }
    if queries.rows() > 0 && queries.width() != block.keys.width() {
        return Err(Error::Shape(alloc::format!(
            "query width {} vs key width {}",
            queries.width(),
            block.keys.width()
        )));
    }
    Ok(QuerySummary::new(queries).score(&block.representative_key_sum))
}

/// Relevance of a block to the user-query vectors.
pub fn score_block_query(block: &MemoryBlock, query_token_queries: &HeadMatrix) -> Result<f64> {
    score_block(block, query_token_queries)
}

/// Relevance of a block to the current tokens' query vectors.
pub fn score_block_current(block: &MemoryBlock, current_queries: &HeadMatrix) -> Result<f64> {
    score_block(block, current_queries)
}

/// Query-relevance scores for one query set, computed at most once per block.
#[derive(Debug, Clone)]
pub struct QueryMemo {
    summary: QuerySummary,
    scores: BTreeMap<u64, f64>,
}

impl QueryMemo {
    pub fn new(summary: QuerySummary) -> Self {
        Self { summary, scores: BTreeMap::new() }
    }

    pub fn summary(&self) -> &QuerySummary {
        &self.summary
    }

    pub fn s_query(&mut self, block_id: u64, representative_key_sum: &[f64]) -> f64 {
        let summary = &self.summary;
        *self.scores.entry(block_id).or_insert_with(|| summary.score(representative_key_sum))
    }

    /// Number of blocks scored so far.
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LookupRequest {
    pub layer: usize,
    /// May have zero rows: pure current-token lookup.
    pub query_token_queries: HeadMatrix,
    pub current_queries: HeadMatrix,
    pub n_b: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupOutcome {
    /// Selected ids in ascending (context) order.
    pub selected: Vec<u64>,
    /// Scores of every candidate, ascending by block id.
    pub scores: Vec<BlockScore>,
}

/// Ids of the `min(n_b, len)` best blocks by `(combined desc, id asc)`,
/// returned in ascending id order.
pub fn rank_blocks(scores: &[BlockScore], n_b: usize) -> Vec<u64> {
    let mut order: Vec<&BlockScore> = scores.iter().collect();
    order.sort_by(|a, b| ranking(a, b));
    let mut ids: Vec<u64> = order.into_iter().take(n_b).map(|s| s.block_id).collect();
    ids.sort_unstable();
    ids
}

fn ranking(a: &BlockScore, b: &BlockScore) -> Ordering {
    b.combined.total_cmp(&a.combined).then(a.block_id.cmp(&b.block_id))
}

/// Score every block against the request and keep the top `n_b`.
pub fn lookup<'a>(blocks: impl IntoIterator<Item = &'a MemoryBlock>, request: &LookupRequest) -> Result<LookupOutcome> {
    if request.current_queries.rows() == 0 {
        return Err(Error::EmptyInput("lookup needs at least one current query"));
    }
    if !(request.beta >= 0.0 && request.beta.is_finite()) {
        return Err(Error::Config(alloc::format!("beta must be a nonnegative real, got {}", request.beta)));
    }
    let mut memo = QueryMemo::new(QuerySummary::new(&request.query_token_queries));
    let current = QuerySummary::new(&request.current_queries);
    let mut scores = Vec::new();
    for block in blocks {
        if !block.finalized {
            return Err(Error::UnfinalizedBlock { block_id: block.block_id });
        }
        if block.layer != request.layer {
            return Err(Error::Shape(alloc::format!(
                "block {} belongs to layer {}, lookup is for layer {}",
                block.block_id,
                block.layer,
                request.layer
            )));
        }
        let s_query = memo.s_query(block.block_id, &block.representative_key_sum);
        let s_current = current.score(&block.representative_key_sum);
        scores.push(BlockScore::new(block.block_id, s_query, s_current, request.beta));
    }
    scores.sort_by_key(|s| s.block_id);
    let selected = rank_blocks(&scores, request.n_b);
    Ok(LookupOutcome { selected, scores })
}
