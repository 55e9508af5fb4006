//! Reference implementations written independently of the crate internals:
//! plain `f64` loops, explicit rotation, full sorts, a list-based LRU.
#![allow(dead_code)]

use qllm_core::model::{EmbeddingOverlay, ToyModel};
use qllm_core::TokenId;

pub fn rotate(v: &[f64], distance: f64, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let theta = distance * base.powf(-(2.0 * i as f64) / d as f64);
        let (s, c) = theta.sin_cos();
        out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
        out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Causal attention over a sequence; `q`, `k`, `v` are `[n][d_head]` for one head.
pub fn dense_causal_head(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], base: f64) -> Vec<Vec<f64>> {
    let n = q.len();
    let d = q[0].len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let logits: Vec<f64> =
            (0..=i).map(|j| dot(&q[i], &rotate(&k[j], (i - j) as f64, base)) / (d as f64).sqrt()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut o = vec![0.0; d];
        for j in 0..=i {
            for t in 0..d {
                o[t] += w[j] / z * v[j][t];
            }
        }
        out.push(o);
    }
    out
}

fn matvec(w: &[f32], d_in: usize, x: &[f64]) -> Vec<f64> {
    w.chunks(d_in).map(|row| row.iter().zip(x).map(|(&a, b)| a as f64 * b).sum()).collect()
}

fn rms(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-5).sqrt();
    x.iter().map(|v| v * inv).collect()
}

pub struct DenseOutput {
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

/// Whole-sequence forward pass in `f64` with plain causal attention.
pub fn dense_forward(model: &ToyModel, tokens: &[TokenId], overlay: Option<&EmbeddingOverlay>) -> DenseOutput {
    let c = model.config();
    let (d, h, dh) = (c.d_model, c.n_heads, c.d_head);
    let tensors = model.tensors();
    let emb = tensors[0];
    let lm_head = tensors[tensors.len() - 1];
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| match overlay.and_then(|o| o.get(t)) {
            Some(row) => to64(row),
            None => to64(&emb[t as usize * d..(t as usize + 1) * d]),
        })
        .collect();
    let n = x.len();
    for l in 0..c.n_layers {
        let w = &tensors[1 + 6 * l..1 + 6 * (l + 1)];
        let normed: Vec<Vec<f64>> = x.iter().map(|r| rms(r)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[0], d, r)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[1], d, r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| matvec(w[2], d, r)).collect();
        let mut attn = vec![vec![0.0; d]; n];
        for head in 0..h {
            let sl = |m: &Vec<Vec<f64>>| m.iter().map(|r| r[head * dh..(head + 1) * dh].to_vec()).collect::<Vec<_>>();
            let o = dense_causal_head(&sl(&q), &sl(&k), &sl(&v), c.rope_base as f64);
            for i in 0..n {
                attn[i][head * dh..(head + 1) * dh].copy_from_slice(&o[i]);
            }
        }
        for i in 0..n {
            let p = matvec(w[3], d, &attn[i]);
            for t in 0..d {
                x[i][t] += p[t];
            }
            let nr = rms(&x[i]);
            let inner: Vec<f64> = matvec(w[4], d, &nr).into_iter().map(|z| z / (1.0 + (-z).exp())).collect();
            let p = matvec(w[5], 4 * d, &inner);
            for t in 0..d {
                x[i][t] += p[t];
            }
        }
    }
    let logits = x.iter().map(|r| matvec(lm_head, d, &rms(r))).collect();
    DenseOutput { hidden: x, logits }
}

pub fn argmax(v: &[f64]) -> TokenId {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Greedy decoding by re-running the dense forward pass over the growing sequence.
pub fn dense_decode(model: &ToyModel, prompt: &[TokenId], steps: usize) -> (Vec<TokenId>, Vec<Vec<f64>>) {
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..steps {
        let f = dense_forward(model, &seq, None);
        let t = argmax(f.logits.last().unwrap());
        seq.push(t);
        out.push(t);
    }
    let f = dense_forward(model, &seq, None);
    let hidden = f.hidden[prompt.len()..].to_vec();
    (out, hidden)
}

pub fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, y)| (x as f64 - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-30)
}

/// Textbook LRU as an ordered list, most recent at the back.
pub struct ListLru {
    cap: usize,
    order: Vec<u64>,
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
pub enum LruEvent {
    Hit(u64),
    Miss(u64, Option<u64>),
}

impl ListLru {
    pub fn new(cap: usize) -> Self {
        Self { cap, order: Vec::new() }
    }

    pub fn access(&mut self, id: u64) -> LruEvent {
        if let Some(p) = self.order.iter().position(|&x| x == id) {
            self.order.remove(p);
            self.order.push(id);
            return LruEvent::Hit(id);
        }
        let evicted = if self.order.len() == self.cap { Some(self.order.remove(0)) } else { None };
        self.order.push(id);
        LruEvent::Miss(id, evicted)
    }
}

/// `Σ_i Σ_j Σ_h q_i[h] · k_j[h]`, four nested loops.
pub fn double_loop_score(queries: &[Vec<f32>], keys: &[Vec<f32>]) -> f64 {
    let mut s = 0.0;
    for q in queries {
        for k in keys {
            for t in 0..q.len() {
                s += q[t] as f64 * k[t] as f64;
            }
        }
    }
    s
}

/// Mean score against up to `window` successors, brute force.
pub fn brute_representative(keys: &[Vec<f32>], successors: &[Vec<f32>], window: usize) -> Vec<(f64, usize)> {
    (0..keys.len())
        .map(|i| {
            let avail: Vec<&Vec<f32>> = successors.iter().skip(i).take(window).collect();
            if avail.is_empty() {
                return (f64::NEG_INFINITY, 0);
            }
            let total: f64 = avail.iter().map(|q| double_loop_score(&[(*q).clone()], &[keys[i].clone()])).sum();
            (total / avail.len() as f64, avail.len())
        })
        .collect()
}

/// Top `n` indices by (score desc, index asc) via a full sort, returned ascending.
pub fn sort_then_take(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(n).collect();
    top.sort();
    top
}

pub fn rng(seed: u64) -> qllm_core::rng::SplitMix64 {
    qllm_core::rng::SplitMix64::new(seed)
}
