//! The `oracle-check` run: engine pieces against plain reference code.
//!
//! References here are written from the definitions, not from the core
//! implementation: a whole-sequence `f64` forward pass that rotates queries
//! and keys by absolute position, quadruple-loop block scores, full sorts,
//! and a list-based LRU. The report holds no wall-clock data, so it is a
//! pure function of (seed, config).

use qllm_core::block_memory::{accumulate_representative_scores, finalize_block, lookup, LookupRequest, MemoryBlock};
use qllm_core::cache_tiers::{FetchEvent, TierConfig, TieredStore};
use qllm_core::engine::{EngineConfig, SegmentedPrompt, Session};
use qllm_core::model::ToyModel;
use qllm_core::rng::SplitMix64;
use qllm_core::tensor::HeadMatrix;
use qllm_core::TokenId;
use serde::Serialize;

use crate::formats;
use crate::report::{TraceLine, SCHEMA_VERSION};

pub const DENSE_TOLERANCE: f64 = 1e-5;
pub const SCORE_TOLERANCE: f64 = 1e-6;
const RMS_EPS: f64 = 1e-5;

/// How many cases each check runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleSizes {
    pub dense_prompts: usize,
    pub decode_steps: usize,
    pub scoring_instances: usize,
    pub lru_traces: usize,
    pub lru_fetches: usize,
    pub stream_tokens: usize,
}

impl Default for OracleSizes {
    fn default() -> Self {
        Self {
            dense_prompts: 6,
            decode_steps: 16,
            scoring_instances: 1000,
            lru_traces: 100,
            lru_fetches: 200,
            stream_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    /// Largest observed error; 0 for exact checks.
    pub max_error: f64,
    pub tolerance: f64,
    pub mismatches: usize,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64, mismatches: usize, detail: String) -> Self {
        let passed = mismatches == 0 && max_error <= tolerance;
        Self { name: name.into(), cases, max_error, tolerance, mismatches, passed, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub seed: u64,
    pub model_checksum: u64,
    pub engine: EngineConfig,
    pub sizes: OracleSizes,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

pub fn run_oracle_check(model: &ToyModel, engine: &EngineConfig, seed: u64, sizes: OracleSizes) -> OracleReport {
    let mut rng = SplitMix64::new(seed);
    let checks = vec![
        check_dense(model, engine, &mut rng.fork(1), sizes),
        check_scoring(&mut rng.fork(2), sizes.scoring_instances),
        check_lru(&mut rng.fork(3), sizes.lru_traces, sizes.lru_fetches),
        check_stream(model, engine, &mut rng.fork(4), sizes.stream_tokens),
        check_weights_format(model),
    ];
    let passed = checks.iter().all(|c| c.passed);
    OracleReport {
        schema_version: SCHEMA_VERSION,
        seed,
        model_checksum: model.checksum(),
        engine: *engine,
        sizes,
        checks,
        passed,
    }
}

// ---- dense forward ----

fn rotate(v: &mut [f64], position: f64, base: f64) {
    let d = v.len();
    for i in 0..d / 2 {
        let theta = position * base.powf(-(2.0 * i as f64) / d as f64);
        let (s, c) = theta.sin_cos();
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

fn matvec(w: &[f32], d_in: usize, x: &[f64]) -> Vec<f64> {
    w.chunks(d_in).map(|row| row.iter().zip(x).map(|(&a, b)| a as f64 * b).sum()).collect()
}

fn rms(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().map(|v| v * inv).collect()
}

/// Hidden states and logits for every position of `tokens`.
pub fn dense_forward(model: &ToyModel, tokens: &[TokenId]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = model.config();
    let (d, dh, base) = (c.d_model, c.d_head, c.rope_base as f64);
    let t = model.tensors();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&tok| t[0][tok as usize * d..(tok as usize + 1) * d].iter().map(|&v| v as f64).collect())
        .collect();
    let n = x.len();
    for l in 0..c.n_layers {
        let w = &t[1 + 6 * l..7 + 6 * l];
        let normed: Vec<Vec<f64>> = x.iter().map(|r| rms(r)).collect();
        let mut q: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[0], d, r)).collect();
        let mut k: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[1], d, r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[2], d, r)).collect();
        // q·R(i−j)k == R(−i)q · R(−j)k
        for i in 0..n {
            for h in 0..c.n_heads {
                rotate(&mut q[i][h * dh..(h + 1) * dh], -(i as f64), base);
                rotate(&mut k[i][h * dh..(h + 1) * dh], -(i as f64), base);
            }
        }
        for i in 0..n {
            let mut attn = vec![0.0; d];
            for h in 0..c.n_heads {
                let hs = h * dh..(h + 1) * dh;
                let logits: Vec<f64> = (0..=i)
                    .map(|j| {
                        q[i][hs.clone()].iter().zip(&k[j][hs.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, wj) in e.iter().enumerate() {
                    for (o, vv) in attn[hs.clone()].iter_mut().zip(&v[j][hs.clone()]) {
                        *o += wj / z * vv;
                    }
                }
            }
            let p = matvec(w[3], d, &attn);
            x[i].iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            let inner: Vec<f64> = matvec(w[4], d, &rms(&x[i])).into_iter().map(|z| z / (1.0 + (-z).exp())).collect();
            let p = matvec(w[5], inner.len(), &inner);
            x[i].iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    let logits = x.iter().map(|r| matvec(t[t.len() - 1], d, &rms(r))).collect();
    (x, logits)
}

fn first_argmax(v: &[f64]) -> TokenId {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best as TokenId
}

fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(&x, y)| (x as f64 - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-30)
}

/// A prompt of `n` tokens: up to 8 global and 16 query tokens, the rest
/// context.
pub fn short_prompt(rng: &mut SplitMix64, n: usize, vocab: usize, n_init: usize) -> SegmentedPrompt {
    let g = (n / 4).min(8).min(n_init);
    let q = (n / 4).min(16).min(n_init - g);
    let mut draw = |k: usize| (0..k).map(|_| rng.below(vocab as u64) as TokenId).collect::<Vec<_>>();
    SegmentedPrompt { global: draw(g), query: draw(q), context: draw(n - g - q), ..Default::default() }
}

/// Max relative error of engine hidden states against the dense pass, and
/// the number of greedy tokens that differ from the dense argmax.
pub fn dense_case(
    model: &ToyModel,
    engine: &EngineConfig,
    prompt: &SegmentedPrompt,
    steps: usize,
) -> qllm_core::Result<(f64, usize)> {
    let mut s = Session::start(model, *engine, prompt)?;
    let hidden = s.prefill(&prompt.stream())?;
    let out = s.decode(steps)?;
    let mut seq = prompt.flat();
    let n = seq.len();
    seq.extend(&out.tokens);
    let (dense_hidden, dense_logits) = dense_forward(model, &seq);
    let origin = s.stream_origin() as usize;
    let pinned = s.pinned_hidden();
    let mut err: f64 = 0.0;
    for i in 0..pinned.rows() {
        err = err.max(rel_err(pinned.row(i), &dense_hidden[i]));
    }
    for i in 0..hidden.rows() {
        err = err.max(rel_err(hidden.row(i), &dense_hidden[origin + i]));
    }
    for i in 0..out.hidden.rows() {
        err = err.max(rel_err(out.hidden.row(i), &dense_hidden[n + i]));
    }
    let wrong = (0..out.tokens.len()).filter(|&i| out.tokens[i] != first_argmax(&dense_logits[n + i - 1])).count();
    Ok((err, wrong))
}

fn check_dense(model: &ToyModel, engine: &EngineConfig, rng: &mut SplitMix64, sizes: OracleSizes) -> CheckResult {
    let vocab = model.config().vocab_size;
    let steps = sizes.decode_steps.min(engine.local_window / 2);
    let (mut err, mut wrong, mut failures) = (0.0f64, 0, Vec::new());
    for case in 0..sizes.dense_prompts {
        // The whole sequence, decode included, fits in l_L. Past that, pinned
        // tokens sit at distance l_L and attention is no longer dense.
        let n = 1 + rng.below((engine.local_window - steps) as u64) as usize;
        let prompt = short_prompt(rng, n, vocab, engine.n_init);
        match dense_case(model, engine, &prompt, steps) {
            Ok((e, w)) => {
                err = err.max(e);
                wrong += w;
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    let detail = format!("{} greedy tokens differ; {}", wrong, failures.join("; "));
    CheckResult::new("dense-equivalence", sizes.dense_prompts, err, DENSE_TOLERANCE, wrong + failures.len(), detail)
}

// ---- block scoring ----

fn normal_rows(rng: &mut SplitMix64, rows: usize, n_heads: usize, d_head: usize) -> HeadMatrix {
    let data = (0..rows * n_heads * d_head).map(|_| rng.standard_normal() as f32).collect();
    HeadMatrix::from_vec(rows, n_heads, d_head, data).expect("sized")
}

/// Σ_i Σ_j q_i · k_j over every head, literally.
fn quad_loop(queries: &HeadMatrix, keys: &HeadMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..queries.rows() {
        for j in 0..keys.rows() {
            for t in 0..queries.width() {
                s += queries.row(i)[t] as f64 * keys.row(j)[t] as f64;
            }
        }
    }
    s
}

fn top_by_sort(scores: &[(u64, f64)], n: usize) -> Vec<u64> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut ids: Vec<u64> = v.into_iter().take(n).map(|x| x.0).collect();
    ids.sort();
    ids
}

fn check_scoring(rng: &mut SplitMix64, instances: usize) -> CheckResult {
    let (mut err, mut mismatches) = (0.0f64, 0);
    let mut track = |a: f64, b: f64| err = err.max((a - b).abs() / b.abs().max(1.0));
    for _ in 0..instances {
        let n_heads = 1 + rng.below(2) as usize;
        let d_head = 1 + rng.below(8) as usize;
        let l_b = 1 + rng.below(8) as usize;
        let n_r = 1 + rng.below(l_b as u64) as usize;
        let window = 1 + rng.below(8) as usize;
        let n_blocks = 1 + rng.below(16) as usize;
        let mut ids: Vec<u64> = (0..n_blocks as u64).map(|i| i * 3 + rng.below(3)).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let mut blocks = Vec::new();
        for &id in &ids {
            let keys = normal_rows(rng, l_b, n_heads, d_head);
            let values = normal_rows(rng, l_b, n_heads, d_head);
            let succ = normal_rows(rng, l_b - 1 + window, n_heads, d_head);
            let reps = accumulate_representative_scores(&keys, &succ, window);
            // Mean over the `window` successors of each key.
            let mut want = Vec::new();
            for i in 0..l_b {
                let mean = (i..i + window)
                    .map(|t| quad_loop(&succ.slice_rows(t..t + 1), &keys.slice_rows(i..i + 1)))
                    .sum::<f64>()
                    / window as f64;
                want.push((i as u64, mean));
                track(reps[i].score, mean);
            }
            let block = MemoryBlock::unfinalized(id, 0, id * l_b as u64, keys, values).expect("shapes agree");
            let block = finalize_block(block, &reps, n_r).expect("sized");
            let chosen: Vec<usize> = top_by_sort(&want, n_r).into_iter().map(|i| i as usize).collect();
            mismatches += usize::from(chosen != block.representative_indices);
            blocks.push(block);
        }
        let (n_query, n_current) = (rng.below(5) as usize, 1 + rng.below(4) as usize);
        let query = normal_rows(rng, n_query, n_heads, d_head);
        let current = normal_rows(rng, n_current, n_heads, d_head);
        let beta = [0.0, 0.5, 1.0, 4.0][rng.below(4) as usize];
        let n_b = rng.below(n_blocks as u64 + 2) as usize;
        let request =
            LookupRequest { layer: 0, query_token_queries: query.clone(), current_queries: current.clone(), n_b, beta };
        let out = lookup(&blocks, &request).expect("valid request");
        let mut combined = Vec::new();
        for b in &blocks {
            let sq = quad_loop(&query, &b.representative_keys);
            let sc = quad_loop(&current, &b.representative_keys);
            let got = out.scores.iter().find(|s| s.block_id == b.block_id).expect("every block scored");
            track(got.s_query, sq);
            track(got.s_current, sc);
            track(got.combined, sc + beta * sq);
            combined.push((b.block_id, sc + beta * sq));
        }
        mismatches += usize::from(out.selected != top_by_sort(&combined, n_b));
    }
    let detail = format!("{mismatches} representative or selection sets differ");
    CheckResult::new("block-scoring", instances, err, SCORE_TOLERANCE, mismatches, detail)
}

// ---- LRU ----

/// Textbook LRU as a recency list, most recent last.
struct ListLru {
    cap: usize,
    order: Vec<u64>,
}

impl ListLru {
    fn access(&mut self, id: u64) -> FetchEvent {
        if let Some(p) = self.order.iter().position(|&x| x == id) {
            self.order.remove(p);
            self.order.push(id);
            return FetchEvent::Hit { block_id: id };
        }
        let evicted = (self.order.len() == self.cap).then(|| self.order.remove(0));
        self.order.push(id);
        FetchEvent::Miss { block_id: id, evicted }
    }
}

fn check_lru(rng: &mut SplitMix64, traces: usize, fetches: usize) -> CheckResult {
    const CAP: usize = 8;
    let mut mismatches = 0;
    for _ in 0..traces {
        let universe = 9 + rng.below(24);
        let mut store =
            TieredStore::new(TierConfig { hot_capacity_blocks: CAP, track_transfers: true }).expect("cap > 0");
        for id in 0..universe {
            let kv = HeadMatrix::zeros(2, 1, 2);
            store
                .admit_block(MemoryBlock::from_parts(id, 0, id * 2, kv.clone(), kv, vec![0]).expect("valid"))
                .expect("fresh id");
        }
        let mut reference = ListLru { cap: CAP, order: Vec::new() };
        let (mut hits, mut misses, mut evictions) = (0u64, 0u64, 0u64);
        for _ in 0..fetches {
            let id = rng.below(universe);
            let want = reference.access(id);
            match want {
                FetchEvent::Hit { .. } => hits += 1,
                FetchEvent::Miss { evicted, .. } => {
                    misses += 1;
                    evictions += u64::from(evicted.is_some());
                }
            }
            let got = store.fetch_blocks(&[id]).expect("admitted");
            mismatches += usize::from(got != [want]);
        }
        let s = store.stats();
        mismatches += usize::from((s.hits, s.misses, s.evictions) != (hits, misses, evictions));
        mismatches += usize::from(s.peak_hot_blocks > CAP as u64);
    }
    CheckResult::new("lru", traces, 0.0, 0.0, mismatches, format!("{mismatches} traces or stats differ"))
}

// ---- streaming invariants and snapshot ----

fn fnv(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn check_stream(model: &ToyModel, engine: &EngineConfig, rng: &mut SplitMix64, tokens: usize) -> CheckResult {
    let vocab = model.config().vocab_size as u64;
    let mut draw = |k: usize| (0..k).map(|_| rng.below(vocab) as TokenId).collect::<Vec<_>>();
    let prompt = SegmentedPrompt { global: draw(4), query: draw(8), context: draw(tokens), ..Default::default() };
    let run = || -> qllm_core::Result<(String, Vec<String>, Vec<u8>)> {
        let mut s = Session::start(model, *engine, &prompt)?;
        for chunk in prompt.stream().chunks(engine.chunk_size) {
            s.prefill(chunk)?;
        }
        s.decode(8)?;
        let mut problems = Vec::new();
        if s.max_cache_len() > s.cache_budget() {
            problems.push(format!("cache {} over budget {}", s.max_cache_len(), s.cache_budget()));
        }
        let peak = s.cache_stats().peak_hot_blocks;
        if peak > engine.hot_capacity_blocks as u64 {
            problems.push(format!("hot peak {peak} over capacity {}", engine.hot_capacity_blocks));
        }
        let mut h = 0xcbf2_9ce4_8422_2325;
        for r in s.trace() {
            h = fnv(serde_json::to_string(&TraceLine::new(0, 0, r)).expect("serializes").as_bytes(), h);
        }
        let mut snapshot = Vec::new();
        formats::write_store(&mut snapshot, s.store(0)?, 0).expect("in-memory write");
        let restored = formats::read_store(&mut &snapshot[..]).ok().and_then(|snap| snap.into_store().ok());
        let mut again = Vec::new();
        if let Some(store) = restored {
            formats::write_store(&mut again, &store, 0).expect("in-memory write");
        }
        if again != snapshot {
            problems.push("block-store snapshot does not round-trip".into());
        }
        let summary = format!("trace digest {h:016x}, {} blocks, peak hot {peak}", s.store(0)?.len());
        Ok((summary, problems, snapshot))
    };
    match (run(), run()) {
        (Ok((a, mut problems, sa)), Ok((b, _, sb))) => {
            if a != b || sa != sb {
                problems.push("two identical sessions disagree".into());
            }
            let detail = std::iter::once(a).chain(problems.iter().cloned()).collect::<Vec<_>>().join("; ");
            CheckResult::new("stream-invariants", 1, 0.0, 0.0, problems.len(), detail)
        }
        (Err(e), _) | (_, Err(e)) => CheckResult::new("stream-invariants", 1, 0.0, 0.0, 1, e.to_string()),
    }
}

fn check_weights_format(model: &ToyModel) -> CheckResult {
    let mut buf = Vec::new();
    formats::write_weights(&mut buf, model).expect("in-memory write");
    let back = formats::read_weights(&mut &buf[..]);
    let ok = back.as_ref().map_or(false, |m| m.checksum() == model.checksum() && m.config() == model.config());
    let detail = format!("{} bytes, checksum {:016x}", buf.len(), model.checksum());
    CheckResult::new("weights-format", 1, 0.0, 0.0, usize::from(!ok), detail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qllm_core::model::ModelConfig;

    #[test]
    fn small_check_passes() {
        let model = ToyModel::new(ModelConfig { n_layers: 2, ..Default::default() }).unwrap();
        let engine = EngineConfig { local_window: 64, block_size: 16, chunk_size: 32, ..EngineConfig::default() };
        let sizes = OracleSizes {
            dense_prompts: 2,
            decode_steps: 4,
            scoring_instances: 50,
            lru_traces: 5,
            lru_fetches: 50,
            stream_tokens: 300,
        };
        let r = run_oracle_check(&model, &engine, 1, sizes);
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(r.passed);
    }
}
