mod common;

use common::{dense_causal_head, dense_forward, rel_err, rotate, to64};
use qllm_core::model::{masked_attention, rotary_rotate, AttentionInput, ChunkCausalAttention, ModelConfig, ToyModel};
use qllm_core::tensor::{HeadMatrix, Matrix};
use qllm_core::Error;

fn cfg(d_model: usize, n_heads: usize, d_head: usize) -> ModelConfig {
    ModelConfig { n_layers: 2, n_heads, d_head, d_model, vocab_size: 64, rope_base: 10_000.0, seed: 7 }
}

#[test]
fn same_seed_same_weights() {
    let a = ToyModel::new(ModelConfig { seed: 7, ..ModelConfig::default() }).unwrap();
    let b = ToyModel::new(ModelConfig { seed: 7, ..ModelConfig::default() }).unwrap();
    let c = ToyModel::new(ModelConfig { seed: 8, ..ModelConfig::default() }).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn dimension_mismatch_rejected() {
    assert!(ToyModel::new(cfg(64, 4, 16)).is_ok());
    assert!(matches!(ToyModel::new(cfg(60, 4, 16)), Err(Error::Config(_))));
}

#[test]
fn projection_matches_matrix_product() {
    let m = ToyModel::new(ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_head: 2,
        d_model: 4,
        vocab_size: 8,
        rope_base: 10.0,
        seed: 3,
    })
    .unwrap();
    let x = [0.3f32, -1.1, 0.7, 2.0];
    let chunk = m.project_qkv(&Matrix::from_vec(1, 4, x.to_vec()).unwrap(), 0, 0).unwrap();
    let w = m.layer_weights(0).unwrap();
    for (mat, got) in [(&w.wq, &chunk.queries), (&w.wk, &chunk.keys), (&w.wv, &chunk.values)] {
        for r in 0..4 {
            let want: f64 = (0..4).map(|c| mat[r * 4 + c] as f64 * x[c] as f64).sum();
            assert!((got.row(0)[r] as f64 - want).abs() < 1e-6);
        }
    }
    let zeros = m.project_qkv(&Matrix::zeros(8, 4), 0, 0).unwrap();
    assert_eq!(zeros.keys.rows(), 8);
    assert!(zeros.queries.as_slice().iter().chain(zeros.values.as_slice()).all(|&v| v == 0.0));
    assert!(matches!(m.project_qkv(&Matrix::zeros(1, 4), 1, 0), Err(Error::LayerOutOfRange { .. })));
}

#[test]
fn rotation_matches_scalar_trig() {
    let out = rotary_rotate(&[0.6, -0.8], &[1], 2, 1.0).unwrap();
    let (s, c) = 1f64.sin_cos();
    assert!((out[0] as f64 - (0.6 * c + 0.8 * s)).abs() < 1e-7);
    assert!((out[1] as f64 - (0.6 * s - 0.8 * c)).abs() < 1e-7);
    let mut r = common::rng(4);
    let v: Vec<f32> = (0..16).map(|_| r.uniform_symmetric(2.0)).collect();
    let got = rotary_rotate(&v, &[37], 16, 500.0).unwrap();
    let want = rotate(&to64(&v), 37.0, 500.0);
    assert!(rel_err(&got, &want) < 1e-6);
}

fn random_heads(r: &mut qllm_core::rng::SplitMix64, rows: usize, n_heads: usize, d_head: usize) -> HeadMatrix {
    let data = (0..rows * n_heads * d_head).map(|_| r.uniform_symmetric(1.5)).collect();
    HeadMatrix::from_vec(rows, n_heads, d_head, data).unwrap()
}

fn dense_check(n: usize, seed: u64, tol: f64) {
    let mut r = common::rng(seed);
    let (h, dh) = (2, 8);
    let (q, k, v) = (random_heads(&mut r, n, h, dh), random_heads(&mut r, n, h, dh), random_heads(&mut r, n, h, dh));
    let mut dist = vec![0i64; n * n];
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            dist[i * n + j] = (i - j) as i64;
            mask[i * n + j] = true;
        }
    }
    let out = masked_attention(&AttentionInput {
        a_q: q.clone(),
        a_k: k.clone(),
        a_v: v.clone(),
        relative_distances: dist,
        causal_mask: mask,
        rope_base: 10_000.0,
    })
    .unwrap();
    for head in 0..h {
        let sl = |m: &HeadMatrix| (0..n).map(|i| to64(m.head(i, head))).collect::<Vec<_>>();
        let want = dense_causal_head(&sl(&q), &sl(&k), &sl(&v), 10_000.0);
        for i in 0..n {
            let e = rel_err(out.head(i, head), &want[i]);
            assert!(e < tol, "n={n} row {i} head {head}: {e}");
        }
    }
}

#[test]
fn four_token_causal_attention_matches_naive() {
    dense_check(4, 11, 1e-6);
}

#[test]
fn long_causal_attention_matches_naive() {
    dense_check(512, 12, 1e-5);
}

#[test]
fn chunk_provider_equals_monolithic_forward() {
    let m = ToyModel::new(ModelConfig::default()).unwrap();
    let tokens: Vec<u32> = (0..40).map(|i| (i * 37 % 512) as u32).collect();
    let a = m.forward_chunk(&tokens, 0, None, &mut ChunkCausalAttention { rope_base: 10_000.0 }).unwrap();
    let b = m.forward_chunk(&tokens, 0, None, &mut ChunkCausalAttention { rope_base: 10_000.0 }).unwrap();
    assert_eq!(a.logits, b.logits);
    let dense = dense_forward(&m, &tokens, None);
    for i in 0..tokens.len() {
        assert!(rel_err(a.hidden.row(i), &dense.hidden[i]) < 1e-5);
    }
    assert!(rel_err(&a.logits, dense.logits.last().unwrap()) < 1e-5);
    assert_eq!(
        m.forward_chunk(&[], 0, None, &mut ChunkCausalAttention { rope_base: 1.0 }).unwrap_err(),
        Error::EmptyInput("forward_chunk needs at least one token")
    );
    assert!(matches!(
        m.forward_chunk(&[512], 0, None, &mut ChunkCausalAttention { rope_base: 1.0 }),
        Err(Error::TokenOutOfRange { token: 512, .. })
    ));
}
