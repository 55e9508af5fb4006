mod common;

use common::{ListLru, LruEvent};
use qllm_core::block_memory::{
    finalize_block, score_block_current, score_block_query, BlockScore, MemoryBlock, QuerySummary, RepresentativeScore,
};
use qllm_core::cache_tiers::{FetchEvent, TierConfig, TieredStore};
use qllm_core::rng::SplitMix64;
use qllm_core::tensor::HeadMatrix;

fn block(r: &mut SplitMix64, id: u64) -> MemoryBlock {
    let keys = HeadMatrix::from_vec(4, 1, 4, (0..16).map(|_| r.uniform_symmetric(1.0)).collect()).unwrap();
    let s: Vec<RepresentativeScore> =
        (0..4).map(|i| RepresentativeScore { token_index: i, score: -(i as f64), successor_count: 1 }).collect();
    finalize_block(MemoryBlock::unfinalized(id, 0, id * 4, keys.clone(), keys).unwrap(), &s, 2).unwrap()
}

#[test]
fn thousand_admissions() {
    let mut r = SplitMix64::new(1);
    let mut s = TieredStore::new(TierConfig { hot_capacity_blocks: 4, track_transfers: true }).unwrap();
    for id in 0..1000 {
        s.admit_block(block(&mut r, id)).unwrap();
    }
    assert_eq!(s.len(), 1000);
    assert_eq!(s.blocks().count(), 1000);
    assert_eq!(s.scan_index(|e| BlockScore::new(e.block_id, 0.0, 0.0, 0.0)).len(), 1000);
    assert_eq!(s.hot_len(), 0);
}

#[test]
fn random_traces_match_reference_lru() {
    let mut r = SplitMix64::new(2);
    for _ in 0..100 {
        let mut s = TieredStore::new(TierConfig { hot_capacity_blocks: 8, track_transfers: true }).unwrap();
        for id in 0..24 {
            s.admit_block(block(&mut r, id)).unwrap();
        }
        let mut reference = ListLru::new(8);
        for _ in 0..200 {
            let id = r.below(24);
            let got = s.fetch_blocks(&[id]).unwrap()[0];
            let want = match reference.access(id) {
                LruEvent::Hit(b) => FetchEvent::Hit { block_id: b },
                LruEvent::Miss(b, e) => FetchEvent::Miss { block_id: b, evicted: e },
            };
            assert_eq!(got, want);
            assert!(s.hot_len() <= 8);
        }
        let st = s.stats();
        assert_eq!(st.hits + st.misses, 200);
    }
}

#[test]
fn scan_equals_direct_scoring() {
    let mut r = SplitMix64::new(3);
    let mut s = TieredStore::new(TierConfig { hot_capacity_blocks: 2, track_transfers: true }).unwrap();
    let blocks: Vec<MemoryBlock> = (0..12).map(|id| block(&mut r, id)).collect();
    for b in &blocks {
        s.admit_block(b.clone()).unwrap();
    }
    let q = HeadMatrix::from_vec(3, 1, 4, (0..12).map(|_| r.uniform_symmetric(1.0)).collect()).unwrap();
    let h = HeadMatrix::from_vec(1, 1, 4, (0..4).map(|_| r.uniform_symmetric(1.0)).collect()).unwrap();
    let (qs, hs) = (QuerySummary::new(&q), QuerySummary::new(&h));
    let scan = s.scan_index(|e| {
        BlockScore::new(e.block_id, qs.score(&e.representative_key_sum), hs.score(&e.representative_key_sum), 2.0)
    });
    for (sc, b) in scan.iter().zip(&blocks) {
        assert!((sc.s_query - score_block_query(b, &q).unwrap()).abs() < 1e-9);
        assert!((sc.s_current - score_block_current(b, &h).unwrap()).abs() < 1e-9);
    }
    assert_eq!(s.stats().bytes_transferred_analogue, 0);
    let empty = TieredStore::new(TierConfig::default()).unwrap();
    assert!(empty.scan_index(|e| BlockScore::new(e.block_id, 0.0, 0.0, 0.0)).is_empty());
}
