//! Seeded toy decoder transformer.
//!
//! Pre-norm decoder: `x += Wo · attn(rmsnorm(x))`, then
//! `x += W2 · silu(W1 · rmsnorm(x))`, with a 4× feed-forward expansion, no
//! biases and no weight tying. Attention itself is delegated to an
//! [`AttentionProvider`] so the engine can splice its memory mechanism in.
//!
//! Weights are drawn from one [`SplitMix64`] stream seeded with
//! `ModelConfig::seed`, consumed in this order:
//!
//! 1. `embedding` `[vocab_size × d_model]`, uniform(−1, 1)
//! 2. per layer: `wq`, `wk`, `wv`, `wo` `[d_model × d_model]`, `w1`
//!    `[4·d_model × d_model]`, `w2` `[d_model × 4·d_model]`
//! 3. `lm_head` `[vocab_size × d_model]`
//!
//! Every projection is out-major and uniform(−1/√d_in, 1/√d_in).

mod attention;
mod rotary;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use attention::{masked_attention, masked_attention_with_table, AttentionInput, ChunkCausalAttention};
pub use rotary::{rotary_rotate, RotaryTable};

use crate::rng::SplitMix64;
use crate::tensor::{matmul_wide, matvec, widen_transposed, HeadMatrix, Matrix};
use crate::{Error, Result, TokenId};

const RMS_EPS: f64 = 1e-5;
const FFN_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub rope_base: f32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_layers: 4, n_heads: 4, d_head: 16, d_model: 64, vocab_size: 512, rope_base: 10_000.0, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("d_model", self.d_model),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(alloc::format!("{name} must be at least 1")));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Config(alloc::format!(
                "d_model = {} but n_heads × d_head = {} × {} = {}",
                self.d_model,
                self.n_heads,
                self.d_head,
                self.n_heads * self.d_head
            )));
        }
        if self.d_head % 2 != 0 {
            return Err(Error::Config(alloc::format!("d_head must be even for rotary embedding, got {}", self.d_head)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::Config(alloc::format!("rope_base must be positive, got {}", self.rope_base)));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        FFN_EXPANSION * self.d_model
    }
}

/// Per-layer query/key/value projections for a run of consecutive tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvChunk {
    pub layer: usize,
    pub queries: HeadMatrix,
    pub keys: HeadMatrix,
    pub values: HeadMatrix,
    pub absolute_positions: Vec<u64>,
}

impl QkvChunk {
    pub fn len(&self) -> usize {
        self.absolute_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.absolute_positions.is_empty()
    }
}

/// Supplies the attention output for each layer of a forward pass.
pub trait AttentionProvider {
    /// Returns `[chunk.len() × n_heads × d_head]`.
    fn attend(&mut self, chunk: &QkvChunk) -> Result<HeadMatrix>;
}

impl<F> AttentionProvider for F
where
    F: FnMut(&QkvChunk) -> Result<HeadMatrix>,
{
    fn attend(&mut self, chunk: &QkvChunk) -> Result<HeadMatrix> {
        self(chunk)
    }
}

/// Replacement embedding rows for selected token ids.
///
/// Workloads use this to plant tokens with engineered geometry without
/// touching the seeded weights.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbeddingOverlay {
    rows: BTreeMap<TokenId, Vec<f32>>,
}

impl EmbeddingOverlay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: TokenId, row: Vec<f32>) {
        self.rows.insert(token, row);
    }

    pub fn get(&self, token: TokenId) -> Option<&[f32]> {
        self.rows.get(&token).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[f32])> {
        self.rows.iter().map(|(&t, r)| (t, r.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub w1: Vec<f32>,
    pub w2: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Final residual stream (before the output norm), one row per token.
    pub hidden: Matrix,
    /// Next-token logits for the last token of the chunk.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    embedding: Vec<f32>,
    layers: Vec<LayerWeights>,
    lm_head: Vec<f32>,
    /// Transposed f64 copies of each layer's `[wq, wk, wv, wo, w1, w2]`.
    wide: Vec<[Vec<f64>; 6]>,
}

fn uniform_tensor(rng: &mut SplitMix64, len: usize, d_in: usize) -> Vec<f32> {
    let bound = 1.0 / libm::sqrtf(d_in as f32);
    (0..len).map(|_| rng.uniform_symmetric(bound)).collect()
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.ffn_dim();
        let mut rng = SplitMix64::new(config.seed);
        let embedding = uniform_tensor(&mut rng, config.vocab_size * d, 1);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: uniform_tensor(&mut rng, d * d, d),
                wk: uniform_tensor(&mut rng, d * d, d),
                wv: uniform_tensor(&mut rng, d * d, d),
                wo: uniform_tensor(&mut rng, d * d, d),
                w1: uniform_tensor(&mut rng, f * d, d),
                w2: uniform_tensor(&mut rng, d * f, f),
            })
            .collect();
        let lm_head = uniform_tensor(&mut rng, config.vocab_size * d, d);
        Ok(Self::assemble(config, embedding, layers, lm_head))
    }

    fn assemble(config: ModelConfig, embedding: Vec<f32>, layers: Vec<LayerWeights>, lm_head: Vec<f32>) -> Self {
        let (d, f) = (config.d_model, config.ffn_dim());
        let wide = layers
            .iter()
            .map(|l| {
                [
                    widen_transposed(&l.wq, d),
                    widen_transposed(&l.wk, d),
                    widen_transposed(&l.wv, d),
                    widen_transposed(&l.wo, d),
                    widen_transposed(&l.w1, d),
                    widen_transposed(&l.w2, f),
                ]
            })
            .collect();
        Self { config, embedding, layers, lm_head, wide }
    }

    /// Rebuild from tensors listed in [`ToyModel::tensors`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Vec<f32>>) -> Result<Self> {
        config.validate()?;
        let shapes = Self::tensor_shapes(&config);
        if tensors.len() != shapes.len() {
            return Err(Error::Shape(alloc::format!("expected {} tensors, got {}", shapes.len(), tensors.len())));
        }
        for ((name, len), t) in shapes.iter().zip(&tensors) {
            if t.len() != *len {
                return Err(Error::Shape(alloc::format!("tensor {name}: expected {len} values, got {}", t.len())));
            }
        }
        let mut it = tensors.into_iter();
        let embedding = it.next().unwrap();
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: it.next().unwrap(),
                wk: it.next().unwrap(),
                wv: it.next().unwrap(),
                wo: it.next().unwrap(),
                w1: it.next().unwrap(),
                w2: it.next().unwrap(),
            })
            .collect();
        let lm_head = it.next().unwrap();
        Ok(Self::assemble(config, embedding, layers, lm_head))
    }

    /// Names and lengths of every weight tensor, in generation order.
    pub fn tensor_shapes(config: &ModelConfig) -> Vec<(String, usize)> {
        let d = config.d_model;
        let f = config.ffn_dim();
        let mut shapes = vec![(String::from("embedding"), config.vocab_size * d)];
        for l in 0..config.n_layers {
            for (name, len) in
                [("wq", d * d), ("wk", d * d), ("wv", d * d), ("wo", d * d), ("w1", f * d), ("w2", d * f)]
            {
                shapes.push((alloc::format!("layers.{l}.{name}"), len));
            }
        }
        shapes.push((String::from("lm_head"), config.vocab_size * d));
        shapes
    }

    /// Every weight tensor in generation order.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.embedding];
        for l in &self.layers {
            out.extend([&l.wq[..], &l.wk, &l.wv, &l.wo, &l.w1, &l.w2]);
        }
        out.push(&self.lm_head);
        out
    }

    /// FNV-1a over the bit patterns of all weights.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for x in t {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layer_weights(&self, layer: usize) -> Result<&LayerWeights> {
        self.layers.get(layer).ok_or(Error::LayerOutOfRange { layer, n_layers: self.config.n_layers })
    }

    pub fn embedding_row(&self, token: TokenId) -> Result<&[f32]> {
        let d = self.config.d_model;
        if token as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange { token, vocab_size: self.config.vocab_size });
        }
        let t = token as usize;
        Ok(&self.embedding[t * d..(t + 1) * d])
    }

    pub fn embed(&self, tokens: &[TokenId], overlay: Option<&EmbeddingOverlay>) -> Result<Matrix> {
        let d = self.config.d_model;
        let mut out = Matrix::zeros(0, d);
        for &t in tokens {
            let base = self.embedding_row(t)?;
            match overlay.and_then(|o| o.get(t)) {
                Some(row) if row.len() == d => out.push_row(row),
                Some(row) => {
                    return Err(Error::Shape(alloc::format!(
                        "overlay row for token {t} has width {}, expected {d}",
                        row.len()
                    )))
                }
                None => out.push_row(base),
            }
        }
        Ok(out)
    }

    /// Linear q/k/v projections of `hidden`, split per head. No rotation is
    /// applied here; positions are recorded for attention-time rotation.
    pub fn project_qkv(&self, hidden: &Matrix, layer: usize, start_position: u64) -> Result<QkvChunk> {
        self.layer_weights(layer)?;
        let w = &self.wide[layer];
        let d = self.config.d_model;
        if hidden.cols() != d {
            return Err(Error::Shape(alloc::format!("hidden has {} columns, expected d_model = {d}", hidden.cols())));
        }
        let n = hidden.rows();
        let (h, dh) = (self.config.n_heads, self.config.d_head);
        let x = widen(hidden.as_slice());
        let project = |weight: &[f64]| {
            let mut out = vec![0.0f32; n * d];
            matmul_wide(weight, d, &x, &mut out);
            HeadMatrix::from_vec(n, h, dh, out)
        };
        Ok(QkvChunk {
            layer,
            queries: project(&w[0])?,
            keys: project(&w[1])?,
            values: project(&w[2])?,
            absolute_positions: (start_position..start_position + n as u64).collect(),
        })
    }

    /// Embedding, then per layer `project_qkv → provider → feed-forward`,
    /// then logits for the last token.
    pub fn forward_chunk<P: AttentionProvider + ?Sized>(
        &self,
        tokens: &[TokenId],
        start_position: u64,
        overlay: Option<&EmbeddingOverlay>,
        provider: &mut P,
    ) -> Result<ForwardOutput> {
        self.forward_chunk_observed(tokens, start_position, overlay, provider, &mut |_, _| {})
    }

    /// [`ToyModel::forward_chunk`], also handing `observer` the residual
    /// stream entering each layer.
    pub fn forward_chunk_observed<P: AttentionProvider + ?Sized>(
        &self,
        tokens: &[TokenId],
        start_position: u64,
        overlay: Option<&EmbeddingOverlay>,
        provider: &mut P,
        observer: &mut dyn FnMut(usize, &Matrix),
    ) -> Result<ForwardOutput> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("forward_chunk needs at least one token"));
        }
        let d = self.config.d_model;
        let f = self.config.ffn_dim();
        let mut x = self.embed(tokens, overlay)?;
        let n = x.rows();
        let mut normed = Matrix::zeros(n, d);
        let mut proj = vec![0.0f32; n * d];
        let mut inner = vec![0.0f32; n * f];

        for (layer, w) in self.wide.iter().enumerate() {
            observer(layer, &x);
            for i in 0..n {
                rms_norm(x.row(i), normed.row_mut(i));
            }
            let chunk = self.project_qkv(&normed, layer, start_position)?;
            let attn = provider.attend(&chunk)?;
            if attn.rows() != n || attn.width() != d {
                return Err(Error::Shape(alloc::format!(
                    "attention provider returned {}x{} for a {n}-token chunk",
                    attn.rows(),
                    attn.width()
                )));
            }
            matmul_wide(&w[3], d, &widen(attn.as_slice()), &mut proj);
            for i in 0..n {
                add_assign(x.row_mut(i), &proj[i * d..(i + 1) * d]);
                rms_norm(x.row(i), normed.row_mut(i));
            }
            matmul_wide(&w[4], d, &widen(normed.as_slice()), &mut inner);
            inner.iter_mut().for_each(|v| *v = silu(*v));
            matmul_wide(&w[5], f, &widen(&inner), &mut proj);
            for i in 0..n {
                add_assign(x.row_mut(i), &proj[i * d..(i + 1) * d]);
            }
        }

        let mut last = vec![0.0f32; d];
        rms_norm(x.row(n - 1), &mut last);
        let mut logits = vec![0.0f32; self.config.vocab_size];
        matvec(&self.lm_head, d, &last, &mut logits);
        Ok(ForwardOutput { hidden: x, logits })
    }
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn rms_norm(x: &[f32], out: &mut [f32]) {
    let ms = crate::tensor::dot(x, x) / x.len() as f64;
    let inv = 1.0 / libm::sqrt(ms + RMS_EPS);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v as f64 * inv) as f32;
    }
}

fn silu(x: f32) -> f32 {
    let x = x as f64;
    (x / (1.0 + libm::exp(-x))) as f32
}

fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Greedy argmax; ties go to the lower token id.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as TokenId
}
