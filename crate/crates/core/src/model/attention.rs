use alloc::vec;
use alloc::vec::Vec;

use super::rotary::RotaryTable;
use super::{AttentionProvider, QkvChunk};
use crate::tensor::{column_combination, HeadMatrix};
use crate::{Error, Result};

/// Inputs of one attention call: the current tokens' queries against the
/// concatenation of cached keys/values and the current tokens' own keys/values.
///
/// Keys are stored unrotated. The rotary rotation of key `j` for query `i` is
/// applied at attention time from `relative_distances[i][j]`, with the query at
/// angle zero, so a distance can be remapped without touching stored keys.
#[derive(Debug, Clone)]
pub struct AttentionInput {
    pub a_q: HeadMatrix,
    pub a_k: HeadMatrix,
    pub a_v: HeadMatrix,
    /// Row-major `[a_q.rows() × a_k.rows()]`.
    pub relative_distances: Vec<i64>,
    /// Row-major `[a_q.rows() × a_k.rows()]`; `true` means the key is visible.
    pub causal_mask: Vec<bool>,
    pub rope_base: f32,
}

impl AttentionInput {
    pub fn n_queries(&self) -> usize {
        self.a_q.rows()
    }

    pub fn n_keys(&self) -> usize {
        self.a_k.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (nq, nk) = (self.a_q.rows(), self.a_k.rows());
        if !self.a_q.same_layout(&self.a_k) || !self.a_k.same_layout(&self.a_v) || self.a_k.rows() != self.a_v.rows() {
            return Err(Error::Shape("a_q/a_k/a_v layouts differ".into()));
        }
        if self.relative_distances.len() != nq * nk || self.causal_mask.len() != nq * nk {
            return Err(Error::Shape(alloc::format!(
                "distance/mask matrices must be {nq}x{nk}, got {} and {}",
                self.relative_distances.len(),
                self.causal_mask.len()
            )));
        }
        for (idx, (&d, &visible)) in self.relative_distances.iter().zip(&self.causal_mask).enumerate() {
            if visible && d < 0 {
                return Err(Error::Shape(alloc::format!(
                    "visible entry ({}, {}) has negative distance {d}",
                    idx / nk,
                    idx % nk
                )));
            }
        }
        Ok(())
    }

    fn max_visible_distance(&self) -> usize {
        self.relative_distances
            .iter()
            .zip(&self.causal_mask)
            .filter(|(_, &v)| v)
            .map(|(&d, _)| d as usize)
            .max()
            .unwrap_or(0)
    }
}

/// Per head: `softmax(q · rotate(k, d) / √d_head)` over visible keys, times `v`.
pub fn masked_attention(input: &AttentionInput) -> Result<HeadMatrix> {
    input.validate()?;
    let table = RotaryTable::new(input.a_q.d_head(), input.rope_base, input.max_visible_distance())?;
    attend(input, &table)
}

/// Same as [`masked_attention`] but reuses a precomputed rotary table, which
/// must cover every visible distance.
pub fn masked_attention_with_table(input: &AttentionInput, table: &RotaryTable) -> Result<HeadMatrix> {
    input.validate()?;
    if input.max_visible_distance() > table.max_distance() {
        return Err(Error::Shape(alloc::format!(
            "rotary table covers distances up to {}, input needs {}",
            table.max_distance(),
            input.max_visible_distance()
        )));
    }
    attend(input, table)
}

fn attend(input: &AttentionInput, table: &RotaryTable) -> Result<HeadMatrix> {
    let (nq, nk) = (input.n_queries(), input.n_keys());
    let (n_heads, d_head) = (input.a_q.n_heads(), input.a_q.d_head());
    let scale = 1.0 / libm::sqrt(d_head as f64);
    let mut out = HeadMatrix::zeros(nq, n_heads, d_head);
    if nq == 0 {
        return Ok(out);
    }

    // Most distances are either `anchor[j] - (last - i)` (rows at consecutive
    // positions) or one shared far distance. Both reduce to plain dots of
    // pre-turned vectors, done as column sweeps over keys stored
    // `[head][dim][key]`. Anything else takes the general rotated dot.
    // Anchors come from the last row when it sees the key below the far
    // distance, else from the first row shifted by `last`.
    let last = nq - 1;
    let far = (0..nk)
        .filter(|&j| input.causal_mask[last * nk + j])
        .map(|j| input.relative_distances[last * nk + j] as usize)
        .max()
        .unwrap_or(0);
    let anchor: Vec<Option<usize>> = (0..nk)
        .map(|j| {
            let (dl, d0) = (input.relative_distances[last * nk + j] as usize, input.relative_distances[j] as usize);
            if input.causal_mask[last * nk + j] && dl < far {
                Some(dl)
            } else if input.causal_mask[j] && last <= table.max_distance() {
                Some(d0 + last)
            } else if input.causal_mask[last * nk + j] {
                Some(dl)
            } else {
                None
            }
        })
        .collect();
    let anchored = |j: usize, i: usize, d: usize| {
        let shift = last - i;
        shift <= table.max_distance() && anchor[j].is_some_and(|a| a >= shift && a - shift == d)
    };

    // Columns that are anchored (or far) on every visible row need only one
    // of the two sweeps.
    let (mut all_anchor, mut all_far) = (anchor.iter().map(Option::is_some).collect::<Vec<_>>(), vec![true; nk]);
    for i in 0..nq {
        for j in 0..nk {
            if input.causal_mask[i * nk + j] {
                let d = input.relative_distances[i * nk + j] as usize;
                all_anchor[j] &= anchored(j, i, d);
                all_far[j] &= d == far;
            }
        }
    }
    let anchor_cols: Vec<usize> = (0..nk).filter(|&j| all_anchor[j] || (anchor[j].is_some() && !all_far[j])).collect();
    let far_cols: Vec<usize> = (0..nk).filter(|&j| !all_anchor[j]).collect();
    let (na, nf) = (anchor_cols.len(), far_cols.len());
    let mut slot_anchor = vec![usize::MAX; nk];
    let mut slot_far = vec![usize::MAX; nk];
    anchor_cols.iter().enumerate().for_each(|(p, &j)| slot_anchor[j] = p);
    far_cols.iter().enumerate().for_each(|(p, &j)| slot_far[j] = p);

    let mut k_anchor = vec![0.0f64; n_heads * d_head * na];
    let mut k_far = vec![0.0f64; n_heads * d_head * nf];
    let mut turned = vec![0.0f64; d_head];
    for h in 0..n_heads {
        for (p, &j) in anchor_cols.iter().enumerate() {
            let a = anchor[j].expect("anchored column");
            let k = input.a_k.head(j, h);
            if a <= table.max_distance() {
                table.turn(k, a, 1.0, &mut turned);
            } else {
                table.turn(k, a - last, 1.0, &mut turned);
                table.turn_in_place(&mut turned, last, 1.0);
            }
            for (t, &x) in turned.iter().enumerate() {
                k_anchor[(h * d_head + t) * na + p] = x;
            }
        }
        for (p, &j) in far_cols.iter().enumerate() {
            for (t, &x) in input.a_k.head(j, h).iter().enumerate() {
                k_far[(h * d_head + t) * nf + p] = x as f64;
            }
        }
    }
    let v_wide: Vec<f64> = input.a_v.as_slice().iter().map(|&v| v as f64).collect();
    let mut q_anchor = vec![0.0f64; d_head];
    let mut q_far = vec![0.0f64; d_head];
    let mut by_anchor = vec![0.0f64; na];
    let mut by_far = vec![0.0f64; nf];
    let mut logits = vec![0.0f64; nk];
    let mut acc = vec![0.0f64; d_head];

    for i in 0..nq {
        let mask = &input.causal_mask[i * nk..(i + 1) * nk];
        let dist = &input.relative_distances[i * nk..(i + 1) * nk];
        if !mask.iter().any(|&m| m) {
            return Err(Error::FullyMaskedRow { row: i });
        }
        let shift = last - i;
        for h in 0..n_heads {
            let q = input.a_q.head(i, h);
            if shift <= table.max_distance() {
                table.turn(q, shift, 1.0, &mut q_anchor);
            }
            table.turn(q, far, -1.0, &mut q_far);
            column_combination(&q_anchor, &k_anchor[h * d_head * na..], na, &mut by_anchor);
            column_combination(&q_far, &k_far[h * d_head * nf..], nf, &mut by_far);
            let mut max = f64::NEG_INFINITY;
            for j in 0..nk {
                if mask[j] {
                    let d = dist[j] as usize;
                    let raw = if all_anchor[j] {
                        by_anchor[slot_anchor[j]]
                    } else if all_far[j] {
                        by_far[slot_far[j]]
                    } else if slot_anchor[j] != usize::MAX && anchored(j, i, d) {
                        by_anchor[slot_anchor[j]]
                    } else if d == far {
                        by_far[slot_far[j]]
                    } else {
                        table.rotated_dot(q, input.a_k.head(j, h), d)
                    };
                    let l = raw * scale;
                    logits[j] = l;
                    if l > max {
                        max = l;
                    }
                }
            }
            let mut total = 0.0f64;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for j in 0..nk {
                if mask[j] {
                    let w = libm::exp(logits[j] - max);
                    total += w;
                    let o = (j * n_heads + h) * d_head;
                    for (a, v) in acc.iter_mut().zip(&v_wide[o..o + d_head]) {
                        *a += w * v;
                    }
                }
            }
            debug_assert!(total >= 1.0, "softmax mass must include the max entry");
            for (o, a) in out.head_mut(i, h).iter_mut().zip(&acc) {
                *o = (a / total) as f32;
            }
        }
    }
    Ok(out)
}

/// Causal self-attention over the chunk alone, with true relative distances.
#[derive(Debug, Clone, Copy)]
pub struct ChunkCausalAttention {
    pub rope_base: f32,
}

impl ChunkCausalAttention {
    pub fn input_for(&self, chunk: &QkvChunk) -> AttentionInput {
        let n = chunk.len();
        let mut relative_distances = vec![0i64; n * n];
        let mut causal_mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                relative_distances[i * n + j] = (chunk.absolute_positions[i] - chunk.absolute_positions[j]) as i64;
                causal_mask[i * n + j] = true;
            }
        }
        AttentionInput {
            a_q: chunk.queries.clone(),
            a_k: chunk.keys.clone(),
            a_v: chunk.values.clone(),
            relative_distances,
            causal_mask,
            rope_base: self.rope_base,
        }
    }
}

impl AttentionProvider for ChunkCausalAttention {
    fn attend(&mut self, chunk: &QkvChunk) -> Result<HeadMatrix> {
        masked_attention(&self.input_for(chunk))
    }
}
