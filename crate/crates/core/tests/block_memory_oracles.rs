mod common;

use common::{brute_representative, double_loop_score, sort_then_take};
use qllm_core::block_memory::{
    accumulate_representative_scores, finalize_block, lookup, score_block_current, score_block_query, BlockScore,
    LookupRequest, MemoryBlock, RepresentativeScore,
};
use qllm_core::rng::SplitMix64;
use qllm_core::tensor::HeadMatrix;

fn rows(m: &HeadMatrix) -> Vec<Vec<f32>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn random(r: &mut SplitMix64, n: usize, h: usize, dh: usize) -> HeadMatrix {
    HeadMatrix::from_vec(n, h, dh, (0..n * h * dh).map(|_| r.uniform_symmetric(1.0)).collect()).unwrap()
}

fn random_block(r: &mut SplitMix64, id: u64, len: usize, h: usize, dh: usize, n_r: usize) -> MemoryBlock {
    let keys = random(r, len, h, dh);
    let values = random(r, len, h, dh);
    let scores: Vec<RepresentativeScore> = (0..len)
        .map(|i| RepresentativeScore { token_index: i, score: r.uniform_symmetric(1.0) as f64, successor_count: 1 })
        .collect();
    finalize_block(MemoryBlock::unfinalized(id, 0, id * len as u64, keys, values).unwrap(), &scores, n_r).unwrap()
}

#[test]
fn representative_scores_match_hand_rolled_loop() {
    let keys = HeadMatrix::from_vec(4, 1, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0]).unwrap();
    let succ = HeadMatrix::from_vec(5, 1, 2, vec![2.0, 1.0, 0.5, -1.0, 3.0, 0.0, -2.0, 1.0, 1.0, 1.0]).unwrap();
    let got = accumulate_representative_scores(&keys, &succ, 2);
    // token 0: (q1·k0 + q2·k0)/2 = (2 + 0.5)/2
    assert_eq!(got[0].score, 1.25);
    let want = brute_representative(&rows(&keys), &rows(&succ), 2);
    for (g, (s, c)) in got.iter().zip(want) {
        assert!((g.score - s).abs() < 1e-9 && g.successor_count == c);
    }
}

#[test]
fn finalize_matches_full_sort() {
    let mut r = SplitMix64::new(5);
    for _ in 0..50 {
        let keys = random(&mut r, 8, 2, 3);
        let raw: Vec<f64> = (0..8).map(|_| (r.below(5) as f64) - 2.0).collect();
        let scores: Vec<RepresentativeScore> = raw
            .iter()
            .enumerate()
            .map(|(i, &s)| RepresentativeScore { token_index: i, score: s, successor_count: 1 })
            .collect();
        let b = finalize_block(MemoryBlock::unfinalized(0, 0, 0, keys.clone(), keys).unwrap(), &scores, 4).unwrap();
        assert_eq!(b.representative_indices, sort_then_take(&raw, 4));
    }
    let keys = random(&mut r, 3, 1, 2);
    let s: Vec<RepresentativeScore> =
        (0..3).map(|i| RepresentativeScore { token_index: i, score: 0.0, successor_count: 1 }).collect();
    let b = finalize_block(MemoryBlock::unfinalized(0, 0, 0, keys.clone(), keys).unwrap(), &s, 8).unwrap();
    assert_eq!(b.representative_indices, vec![0, 1, 2]);
}

#[test]
fn block_scores_match_scalar_loops() {
    let mut r = SplitMix64::new(6);
    let q = HeadMatrix::from_vec(2, 1, 3, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
    let keys = HeadMatrix::from_vec(2, 1, 3, vec![0.0, 1.0, 1.0, 2.0, -1.0, 0.5]).unwrap();
    let s: Vec<RepresentativeScore> =
        (0..2).map(|i| RepresentativeScore { token_index: i, score: 1.0, successor_count: 1 }).collect();
    let b = finalize_block(MemoryBlock::unfinalized(0, 0, 0, keys.clone(), keys.clone()).unwrap(), &s, 2).unwrap();
    // (1+2-1)·... four terms: q0·k0=1, q0·k1=-0.5, q1·k0=3, q1·k1=2.5
    assert_eq!(score_block_query(&b, &q).unwrap(), 6.0);
    assert_eq!(score_block_current(&b, &q).unwrap(), 6.0);
    let empty = HeadMatrix::zeros(0, 1, 3);
    assert_eq!(score_block_query(&b, &empty).unwrap(), 0.0);

    let unit = HeadMatrix::from_vec(1, 1, 3, vec![0.6, 0.8, 0.0]).unwrap();
    let one =
        finalize_block(MemoryBlock::unfinalized(1, 0, 0, unit.clone(), unit.clone()).unwrap(), &s[..1], 1).unwrap();
    assert!((score_block_query(&one, &unit).unwrap() - 1.0).abs() < 1e-6);

    for _ in 0..100 {
        let b = random_block(&mut r, 0, 6, 2, 4, 3);
        let cur = random(&mut r, 3, 2, 4);
        let want = double_loop_score(&rows(&cur), &rows(&b.representative_keys));
        assert!((score_block_current(&b, &cur).unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn lookup_matches_exhaustive_sort() {
    let mut r = SplitMix64::new(7);
    for _ in 0..20 {
        let blocks: Vec<MemoryBlock> = (0..64).map(|id| random_block(&mut r, id, 8, 2, 4, 4)).collect();
        let req = LookupRequest {
            layer: 0,
            query_token_queries: random(&mut r, 5, 2, 4),
            current_queries: random(&mut r, 3, 2, 4),
            n_b: 4,
            beta: 4.0,
        };
        let out = lookup(&blocks, &req).unwrap();
        let combined: Vec<f64> = blocks
            .iter()
            .map(|b| {
                let rk = rows(&b.representative_keys);
                double_loop_score(&rows(&req.current_queries), &rk)
                    + 4.0 * double_loop_score(&rows(&req.query_token_queries), &rk)
            })
            .collect();
        let want: Vec<u64> = sort_then_take(&combined, 4).into_iter().map(|i| i as u64).collect();
        assert_eq!(out.selected, want);
    }
}

#[test]
fn lookup_examples() {
    let scores = [3.0, 1.0, 2.0].map(|c| c);
    let bs: Vec<BlockScore> = scores.iter().enumerate().map(|(i, &c)| BlockScore::new(i as u64, 0.0, c, 1.0)).collect();
    assert_eq!(qllm_core::block_memory::rank_blocks(&bs, 2), vec![0, 2]);
    let empty: Vec<MemoryBlock> = Vec::new();
    let req = LookupRequest {
        layer: 0,
        query_token_queries: HeadMatrix::zeros(0, 1, 2),
        current_queries: HeadMatrix::zeros(1, 1, 2),
        n_b: 4,
        beta: 1.0,
    };
    assert!(lookup(&empty, &req).unwrap().selected.is_empty());
}
