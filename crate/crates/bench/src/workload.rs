//! Synthetic workloads.
//!
//! Ids in the top [`RESERVED`] slots of the vocabulary are never drawn as
//! filler; planted tokens live there and get their embeddings from the
//! prompt's overlay. Planted rows are scaled to [`PLANT_SCALE`] times the
//! mean embedding norm so the token's own direction survives the residual
//! stream through every layer.
//!
//! Planted-needle construction works backward from key/query geometry.
//! One query direction `y` (shared by all query tokens) and one needle
//! direction `x` are fitted jointly so that, at every layer `l`,
//! `Wk_l · x` points along `Wq_l · y`. Layer 0 sees the embeddings directly,
//! so its cosine is pinned to the requested alignment; deeper layers are
//! maximized (soft-min) given that constraint. What the residual stream adds
//! on top of the planted embedding ("drift") is measured by running the
//! model over a probe prompt, and the fit is repeated against it.

use std::ops::Range;

use qllm_core::engine::{EngineConfig, SegmentedPrompt};
use qllm_core::model::{ChunkCausalAttention, EmbeddingOverlay, ToyModel};
use qllm_core::rng::SplitMix64;
use qllm_core::tensor::Matrix;
use qllm_core::TokenId;
use serde::{Deserialize, Serialize};

pub const RESERVED: usize = 64;
pub const PLANT_SCALE: f64 = 3.0;
const PROBE_ROUNDS: usize = 3;
const FIT_STEPS: usize = 1500;
const SOFTMIN_TEMP: f64 = 0.05;
const LAYER0_MARGIN: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    PlantedNeedle,
    KvRetrieval,
    RandomContext,
    OracleCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub context_length: usize,
    /// Fraction of the context before the needle; planted-needle only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_depth: Option<f64>,
    /// Layer-0 cosine between needle keys and the mean query vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_alignment: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    #[serde(default = "defaults::global_len")]
    pub global_len: usize,
    #[serde(default = "defaults::query_len")]
    pub query_len: usize,
    #[serde(default = "defaults::continuation_len")]
    pub continuation_len: usize,
    #[serde(default = "defaults::decode_tokens")]
    pub decode_tokens: usize,
    /// Selects one of a family of mutually orthogonal query directions.
    #[serde(default)]
    pub query_variant: usize,
    /// Decode feeds a fixed filler script instead of greedy choices, so the
    /// decoded tokens do not depend on the query.
    #[serde(default = "defaults::teacher_forced")]
    pub teacher_forced: bool,
}

mod defaults {
    pub fn repetitions() -> usize {
        1
    }
    pub fn global_len() -> usize {
        8
    }
    pub fn query_len() -> usize {
        16
    }
    pub fn continuation_len() -> usize {
        8
    }
    pub fn decode_tokens() -> usize {
        16
    }
    pub fn teacher_forced() -> bool {
        true
    }
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self::planted_needle(4096, 0.5, 0.9, 0)
    }
}

impl WorkloadSpec {
    pub fn planted_needle(context_length: usize, depth: f64, alignment: f64, seed: u64) -> Self {
        Self {
            kind: WorkloadKind::PlantedNeedle,
            context_length,
            needle_depth: Some(depth),
            needle_alignment: Some(alignment),
            seed,
            repetitions: 1,
            global_len: defaults::global_len(),
            query_len: defaults::query_len(),
            continuation_len: defaults::continuation_len(),
            decode_tokens: defaults::decode_tokens(),
            query_variant: 0,
            teacher_forced: true,
        }
    }

    pub fn random_context(context_length: usize, seed: u64) -> Self {
        Self {
            kind: WorkloadKind::RandomContext,
            needle_depth: None,
            needle_alignment: None,
            ..Self::planted_needle(context_length, 0.0, 0.0, seed)
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Spec(m));
        if self.context_length == 0 {
            return bad("context_length must be at least 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.query_len >= RESERVED {
            return bad(format!("query_len must be below {RESERVED}"));
        }
        let needle = self.kind == WorkloadKind::PlantedNeedle;
        match (needle, self.needle_depth, self.needle_alignment) {
            (true, Some(d), Some(a)) => {
                if !(0.0..=1.0).contains(&d) {
                    return bad(format!("needle_depth {d} outside [0, 1]"));
                }
                if !(-1.0..=1.0).contains(&a) {
                    return bad(format!("needle_alignment {a} outside [-1, 1]"));
                }
                if self.query_len == 0 {
                    return bad("a planted needle needs query tokens".into());
                }
            }
            (true, _, _) => return bad("planted-needle needs needle_depth and needle_alignment".into()),
            (false, None, None) => {}
            (false, _, _) => return bad("needle fields are only valid for planted-needle".into()),
        }
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Spec(String),
    #[error("needle cannot be placed: {0}")]
    Placement(String),
    #[error("alignment {requested} unattainable: layer-0 cosine reached {reached:.4} (per-layer {per_layer:?})")]
    Alignment { requested: f64, reached: f64, per_layer: Vec<f64> },
    #[error(transparent)]
    Engine(#[from] qllm_core::Error),
}

/// Ground truth of a workload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Needle {
    pub block_id: u64,
    /// Absolute positions of the needle span.
    pub token_range: Range<u64>,
    pub requested_alignment: Option<f64>,
    /// Probe estimate of the key/query cosine per layer at generation time.
    pub design_cosines: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub prompt: SegmentedPrompt,
    pub needle: Option<Needle>,
    pub decode_tokens: usize,
    /// Tokens fed during decode when teacher forcing; `None` means greedy.
    pub decode_script: Option<Vec<TokenId>>,
}

pub fn filler_vocab(model: &ToyModel) -> u64 {
    (model.config().vocab_size - RESERVED) as u64
}

fn needle_token(model: &ToyModel) -> TokenId {
    (model.config().vocab_size - 1) as TokenId
}

fn query_token(model: &ToyModel, i: usize) -> TokenId {
    (model.config().vocab_size - 2 - i) as TokenId
}

fn filler(rng: &mut SplitMix64, n: usize, vocab: u64) -> Vec<TokenId> {
    (0..n).map(|_| rng.below(vocab) as TokenId).collect()
}

/// Block holding the needle: the block at `depth`, moved back if needed so
/// that it is finalized before decoding starts.
pub fn needle_block(spec: &WorkloadSpec, engine: &EngineConfig) -> Result<u64, WorkloadError> {
    let lb = engine.block_size;
    let stream = spec.context_length + spec.continuation_len;
    let finalized = stream.saturating_sub(engine.local_window) / lb;
    let fits = spec.context_length / lb;
    let last = finalized.min(fits);
    if last == 0 {
        return Err(WorkloadError::Placement(format!(
            "context of {} tokens finalizes no block of {lb} before decoding (local window {})",
            spec.context_length, engine.local_window
        )));
    }
    let depth = spec.needle_depth.unwrap_or(0.0);
    let wanted = (depth * spec.context_length as f64).floor() as usize / lb;
    Ok(wanted.min(last - 1) as u64)
}

fn mean_embedding_norm(model: &ToyModel) -> f64 {
    let v = model.config().vocab_size;
    let total: f64 = (0..v as TokenId).map(|t| norm(&to64(model.embedding_row(t).expect("in vocab")))).sum();
    total / v as f64
}

/// Orthonormal directions from Gram-Schmidt over a fixed random stream;
/// `variant` picks one, so distinct variants are exactly orthogonal.
pub fn query_direction(d: usize, seed: u64, variant: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed).fork(0x9e37);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() <= variant {
        let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis.swap_remove(variant)
}

pub fn generate_workload(
    spec: &WorkloadSpec,
    model: &ToyModel,
    engine: &EngineConfig,
) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mc = model.config();
    let vocab = filler_vocab(model);
    let mut rng = SplitMix64::new(spec.seed);
    let mut tokens = rng.fork(1);
    let global = filler(&mut tokens, spec.global_len, vocab);
    let mut context = filler(&mut tokens, spec.context_length, vocab);
    let continuation = filler(&mut tokens, spec.continuation_len, vocab);
    let script = filler(&mut tokens, spec.decode_tokens, vocab);
    let scale = PLANT_SCALE * mean_embedding_norm(model);
    let origin = (spec.global_len + spec.query_len) as u64;
    let lb = engine.block_size;

    let mut overlay = EmbeddingOverlay::new();
    let mut query = Vec::new();
    let mut needle = None;
    match spec.kind {
        WorkloadKind::PlantedNeedle => {
            let block = needle_block(spec, engine)?;
            let start = block as usize * lb;
            let span = start..start + lb;
            context[span.clone()].iter_mut().for_each(|t| *t = needle_token(model));
            query = (0..spec.query_len).map(|i| query_token(model, i)).collect();
            let alignment = spec.needle_alignment.expect("validated");
            let y0 = query_direction(mc.d_model, spec.seed, spec.query_variant);
            let mut x0: Vec<f64> = (0..mc.d_model).map(|_| rng.standard_normal()).collect();
            normalize(&mut x0);
            let prefix_len = engine.local_window.min(start);
            let probe = Probe {
                global: &global,
                query: &query,
                before: &context[start - prefix_len..start],
                needle_len: lb,
                needle_token: needle_token(model),
                scale,
            };
            let fit = fit_needle(model, &probe, x0, y0, alignment)?;
            overlay = fit.overlay;
            needle = Some(Needle {
                block_id: block,
                token_range: origin + span.start as u64..origin + span.end as u64,
                requested_alignment: Some(alignment),
                design_cosines: fit.cosines,
            });
        }
        WorkloadKind::KvRetrieval => {
            // The query is a key that also appears verbatim inside one block.
            query = filler(&mut tokens, spec.query_len, vocab);
            let sub = WorkloadSpec { needle_depth: Some(spec.needle_depth.unwrap_or(0.5)), ..spec.clone() };
            let block = needle_block(&sub, engine)?;
            let start = block as usize * lb + (lb.saturating_sub(query.len())) / 2;
            let n = query.len().min(lb);
            context[start..start + n].copy_from_slice(&query[..n]);
            needle = Some(Needle {
                block_id: block,
                token_range: origin + block * lb as u64..origin + (block + 1) * lb as u64,
                requested_alignment: None,
                design_cosines: Vec::new(),
            });
        }
        WorkloadKind::RandomContext | WorkloadKind::OracleCheck => {
            if spec.query_len > 0 {
                let dir = query_direction(mc.d_model, spec.seed, spec.query_variant);
                let mut noise = rng.fork(2);
                query = (0..spec.query_len).map(|i| query_token(model, i)).collect();
                for &t in &query {
                    let mut row: Vec<f64> = dir.iter().map(|d| d + 0.1 * noise.standard_normal()).collect();
                    normalize(&mut row);
                    overlay.insert(t, scaled(&row, scale));
                }
            }
        }
    }
    Ok(Workload {
        prompt: SegmentedPrompt { global, query, context, continuation, overlay },
        needle,
        decode_tokens: spec.decode_tokens,
        decode_script: spec.teacher_forced.then_some(script),
    })
}

struct Probe<'a> {
    global: &'a [TokenId],
    query: &'a [TokenId],
    before: &'a [TokenId],
    needle_len: usize,
    needle_token: TokenId,
    scale: f64,
}

struct Fit {
    overlay: EmbeddingOverlay,
    cosines: Vec<f64>,
}

/// Per-layer residual drift of the query tokens and of the needle tokens,
/// plus the resulting key/query cosines.
struct Drift {
    query: Vec<Vec<f64>>,
    needle: Vec<Vec<f64>>,
    cosines: Vec<f64>,
}

fn build_overlay(probe: &Probe, x: &[f64], y: &[f64]) -> EmbeddingOverlay {
    let mut o = EmbeddingOverlay::new();
    for &t in probe.query {
        o.insert(t, scaled(y, probe.scale));
    }
    o.insert(probe.needle_token, scaled(x, probe.scale));
    o
}

fn measure(model: &ToyModel, probe: &Probe, x: &[f64], y: &[f64]) -> Result<Drift, WorkloadError> {
    let mc = model.config();
    let overlay = build_overlay(probe, x, y);
    let mut seq = Vec::new();
    seq.extend_from_slice(probe.global);
    seq.extend_from_slice(probe.query);
    seq.extend_from_slice(probe.before);
    seq.extend(std::iter::repeat(probe.needle_token).take(probe.needle_len));
    let q_rows = probe.global.len()..probe.global.len() + probe.query.len();
    let n_rows = seq.len() - probe.needle_len..seq.len();
    let mut residuals: Vec<Matrix> = Vec::new();
    model.forward_chunk_observed(
        &seq,
        0,
        Some(&overlay),
        &mut ChunkCausalAttention { rope_base: mc.rope_base },
        &mut |_, x| residuals.push(x.clone()),
    )?;
    let mut drift = Drift { query: Vec::new(), needle: Vec::new(), cosines: Vec::new() };
    for (layer, h) in residuals.iter().enumerate() {
        let w = model.layer_weights(layer)?;
        let (mq, sq) = mean_and_normed_sum(h, q_rows.clone());
        let (mn, sn) = mean_and_normed_sum(h, n_rows.clone());
        drift.query.push(mq.iter().zip(y).map(|(m, e)| m - probe.scale * e).collect());
        drift.needle.push(mn.iter().zip(x).map(|(m, e)| m - probe.scale * e).collect());
        drift.cosines.push(cosine(&matvec(&w.wk, &sn), &matvec(&w.wq, &sq)));
    }
    Ok(drift)
}

/// Mean residual row and the sum of RMS-normalized rows over `rows`.
fn mean_and_normed_sum(h: &Matrix, rows: Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let d = h.cols();
    let (mut mean, mut normed) = (vec![0.0; d], vec![0.0; d]);
    let n = rows.len() as f64;
    for i in rows {
        let r = to64(h.row(i));
        let inv = 1.0 / (dot(&r, &r) / d as f64 + 1e-5).sqrt();
        for t in 0..d {
            mean[t] += r[t] / n;
            normed[t] += r[t] * inv;
        }
    }
    (mean, normed)
}

fn fit_needle(
    model: &ToyModel,
    probe: &Probe,
    x0: Vec<f64>,
    y0: Vec<f64>,
    alignment: f64,
) -> Result<Fit, WorkloadError> {
    let mc = model.config();
    let layers: Vec<(Vec<f32>, Vec<f32>)> = (0..mc.n_layers)
        .map(|l| model.layer_weights(l).map(|w| (w.wk.clone(), w.wq.clone())))
        .collect::<Result<_, _>>()?;
    let zero = vec![vec![0.0; mc.d_model]; mc.n_layers];
    let (mut x, mut y) = (x0, y0);
    let mut drift = Drift { query: zero.clone(), needle: zero, cosines: Vec::new() };
    for _ in 0..PROBE_ROUNDS {
        optimize(&layers, &drift, probe.scale, &mut x, &mut y, |cos| Some(joint_weights(cos, alignment)));
        drift = measure(model, probe, &x, &y)?;
    }
    if drift.cosines[0] < alignment {
        // Layer 0 sees no drift, so its cosine can be raised on its own.
        let target = alignment + LAYER0_MARGIN / 2.0;
        let mut only_first = vec![0.0; layers.len()];
        only_first[0] = 1.0;
        optimize(&layers[..1], &drift, probe.scale, &mut x, &mut y, |cos| {
            (cos[0] < target).then(|| only_first.clone())
        });
        drift = measure(model, probe, &x, &y)?;
    }
    let reached = drift.cosines[0];
    if reached < alignment - 1e-3 {
        return Err(WorkloadError::Alignment { requested: alignment, reached, per_layer: drift.cosines });
    }
    Ok(Fit { overlay: build_overlay(probe, &x, &y), cosines: drift.cosines })
}

/// Per-layer gradient weights of `softmin_{l≥1} cos_l − λ·relu(α + margin − cos_0)²`.
fn joint_weights(cos: &[f64], alignment: f64) -> Vec<f64> {
    let mut weight = vec![0.0; cos.len()];
    if cos.len() > 1 {
        let m = cos[1..].iter().cloned().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = cos[1..].iter().map(|c| (-(c - m) / SOFTMIN_TEMP).exp()).collect();
        let z: f64 = e.iter().sum();
        for (w, ei) in weight[1..].iter_mut().zip(&e) {
            *w = ei / z;
        }
    }
    let short = alignment + LAYER0_MARGIN - cos[0];
    weight[0] = if short > 0.0 { 2.0 * 200.0 * short } else { 0.0 };
    if cos.len() == 1 {
        weight[0] += 1.0;
    }
    weight
}

/// Adam ascent on a weighted sum of `cos_l = cos(Wk_l (s·x̂ + δn_l), Wq_l (s·ŷ + δq_l))`.
/// `weights` maps the current cosines to per-layer weights, or `None` to stop.
fn optimize(
    layers: &[(Vec<f32>, Vec<f32>)],
    drift: &Drift,
    scale: f64,
    x: &mut [f64],
    y: &mut [f64],
    mut weights: impl FnMut(&[f64]) -> Option<Vec<f64>>,
) {
    let d = x.len();
    let mut adam = Adam::new(2 * d);
    for _ in 0..FIT_STEPS {
        let (xh, xn) = unit(x);
        let (yh, yn) = unit(y);
        let mut cos = Vec::with_capacity(layers.len());
        let mut grads = Vec::with_capacity(layers.len());
        for (l, (wk, wq)) in layers.iter().enumerate() {
            let u: Vec<f64> = xh.iter().zip(&drift.needle[l]).map(|(a, b)| scale * a + b).collect();
            let v: Vec<f64> = yh.iter().zip(&drift.query[l]).map(|(a, b)| scale * a + b).collect();
            let (a, b) = (matvec(wk, &u), matvec(wq, &v));
            let (an, bn) = (norm(&a), norm(&b));
            let c = dot(&a, &b) / (an * bn);
            let ga: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| (bi / bn - c * ai / an) / an).collect();
            let gb: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| (ai / an - c * bi / bn) / bn).collect();
            cos.push(c);
            grads.push((matvec_t(wk, &ga), matvec_t(wq, &gb)));
        }
        let Some(weight) = weights(&cos) else { break };
        let mut g = vec![0.0; 2 * d];
        for (w, (gu, gv)) in weight.iter().zip(&grads) {
            for i in 0..d {
                g[i] += w * scale * gu[i];
                g[d + i] += w * scale * gv[i];
            }
        }
        // Project onto the tangent of the unit sphere, then undo normalization.
        project_tangent(&mut g[..d], &xh, xn);
        project_tangent(&mut g[d..], &yh, yn);
        let step = adam.step(&g);
        for i in 0..d {
            x[i] += step[i];
            y[i] += step[d + i];
        }
        normalize(x);
        normalize(y);
    }
}

fn project_tangent(g: &mut [f64], dir: &[f64], n: f64) {
    let p = dot(g, dir);
    for (gi, di) in g.iter_mut().zip(dir) {
        *gi = (*gi - p * di) / n;
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const LR: f64 = 0.01;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Ascent step for gradient `g`.
    fn step(&mut self, g: &[f64]) -> Vec<f64> {
        self.t += 1;
        let (b1, b2) = (0.9f64, 0.999f64);
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
                Self::LR * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-12)
            })
            .collect()
    }
}

pub(crate) fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b)).max(1e-300)
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(v);
    (v.iter().map(|x| x / n).collect(), n)
}

fn scaled(v: &[f64], s: f64) -> Vec<f32> {
    v.iter().map(|x| (x * s) as f32).collect()
}

/// Out-major `[rows × d]` weight times `x`.
fn matvec(w: &[f32], x: &[f64]) -> Vec<f64> {
    w.chunks(x.len()).map(|row| row.iter().zip(x).map(|(&a, b)| a as f64 * b).sum()).collect()
}

fn matvec_t(w: &[f32], g: &[f64]) -> Vec<f64> {
    let d = w.len() / g.len();
    let mut out = vec![0.0; d];
    for (row, gi) in w.chunks(d).zip(g) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a as f64 * gi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use qllm_core::model::ModelConfig;

    #[test]
    fn variants_are_orthogonal() {
        let a = query_direction(64, 3, 0);
        let b = query_direction(64, 3, 1);
        assert!(dot(&a, &b).abs() < 1e-12);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(query_direction(64, 3, 1), b);
    }

    #[test]
    fn depth_zero_is_first_block() {
        let spec = WorkloadSpec::planted_needle(4096, 0.0, 0.9, 1);
        assert_eq!(needle_block(&spec, &EngineConfig::default()).unwrap(), 0);
        let deep = WorkloadSpec::planted_needle(4096, 1.0, 0.9, 1);
        // (4096 + 8 − 256) / 64 = 60 finalized blocks before decode.
        assert_eq!(needle_block(&deep, &EngineConfig::default()).unwrap(), 59);
        let short = WorkloadSpec::planted_needle(200, 0.5, 0.9, 1);
        assert!(matches!(needle_block(&short, &EngineConfig::default()), Err(WorkloadError::Placement(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = WorkloadSpec::planted_needle(100, 0.5, 0.9, 1);
        s.needle_alignment = None;
        assert!(s.validate().is_err());
        let mut r = WorkloadSpec::random_context(100, 1);
        r.needle_depth = Some(0.1);
        assert!(r.validate().is_err());
        assert!(WorkloadSpec::planted_needle(100, 1.5, 0.9, 1).validate().is_err());
        assert!(WorkloadSpec::random_context(0, 1).validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = ToyModel::new(ModelConfig::default()).unwrap();
        let spec = WorkloadSpec::planted_needle(1024, 0.3, 0.9, 5);
        let a = generate_workload(&spec, &m, &EngineConfig::default()).unwrap();
        let b = generate_workload(&spec, &m, &EngineConfig::default()).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.needle, b.needle);
    }
}
