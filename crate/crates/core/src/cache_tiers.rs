//! Two-tier block store: a bounded hot tier over an unbounded cold store.
//!
//! Admission writes a block's payload to the cold store and registers its
//! representative keys in an index that is always resident, so lookup can
//! score every block without moving payloads. Fetching a block that is not
//! hot copies it in (a miss) and, when the hot tier is full, evicts the
//! least recently used resident block. Recency is a per-fetch counter bumped
//! on hits and loads alike.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Range;

use crate::block_memory::{BlockScore, MemoryBlock};
use crate::tensor::HeadMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TierConfig {
    pub hot_capacity_blocks: usize,
    pub track_transfers: bool,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self { hot_capacity_blocks: 32, track_transfers: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Token entries copied from the cold store into the hot tier.
    pub bytes_transferred_analogue: u64,
    pub peak_hot_blocks: u64,
}

impl CacheStats {
    /// Combine stats of independent stores (counts add, peaks take the max).
    pub fn merge(&self, other: &CacheStats) -> CacheStats {
        CacheStats {
            hits: self.hits + other.hits,
            misses: self.misses + other.misses,
            evictions: self.evictions + other.evictions,
            bytes_transferred_analogue: self.bytes_transferred_analogue + other.bytes_transferred_analogue,
            peak_hot_blocks: self.peak_hot_blocks.max(other.peak_hot_blocks),
        }
    }
}

/// Index entry kept for every admitted block.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentEntry {
    pub block_id: u64,
    pub layer: usize,
    pub token_range: Range<u64>,
    pub representative_keys: HeadMatrix,
    pub representative_key_sum: Vec<f64>,
    pub resident: bool,
    /// Recency stamp of the last fetch; 0 if never fetched.
    pub last_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchEvent {
    Hit { block_id: u64 },
    Miss { block_id: u64, evicted: Option<u64> },
}

#[derive(Debug, Clone)]
pub struct TieredStore {
    config: TierConfig,
    cold: BTreeMap<u64, MemoryBlock>,
    hot: BTreeMap<u64, MemoryBlock>,
    index: BTreeMap<u64, ResidentEntry>,
    /// stamp -> id for hot blocks; the first entry is the LRU victim.
    recency: BTreeMap<u64, u64>,
    clock: u64,
    stats: CacheStats,
}

impl TieredStore {
    pub fn new(config: TierConfig) -> Result<Self> {
        if config.hot_capacity_blocks == 0 {
            return Err(Error::Config("hot_capacity_blocks must be at least 1".into()));
        }
        Ok(Self {
            config,
            cold: BTreeMap::new(),
            hot: BTreeMap::new(),
            index: BTreeMap::new(),
            recency: BTreeMap::new(),
            clock: 0,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> TierConfig {
        self.config
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Number of admitted blocks.
    pub fn len(&self) -> usize {
        self.cold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cold.is_empty()
    }

    pub fn hot_len(&self) -> usize {
        self.hot.len()
    }

    pub fn is_hot(&self, block_id: u64) -> bool {
        self.hot.contains_key(&block_id)
    }

    /// Cold payloads in id order.
    pub fn blocks(&self) -> impl Iterator<Item = &MemoryBlock> {
        self.cold.values()
    }

    pub fn index_entry(&self, block_id: u64) -> Option<&ResidentEntry> {
        self.index.get(&block_id)
    }

    /// Store a finalized block in the cold tier. Admission never heats a block.
    pub fn admit_block(&mut self, block: MemoryBlock) -> Result<u64> {
        if !block.is_finalized() {
            return Err(Error::UnfinalizedBlock { block_id: block.block_id });
        }
        let id = block.block_id;
        if self.cold.contains_key(&id) {
            return Err(Error::DuplicateBlock { block_id: id });
        }
        self.index.insert(
            id,
            ResidentEntry {
                block_id: id,
                layer: block.layer,
                token_range: block.token_range.clone(),
                representative_keys: block.representative_keys.clone(),
                representative_key_sum: block.representative_key_sum().to_vec(),
                resident: false,
                last_used: 0,
            },
        );
        self.cold.insert(id, block);
        Ok(id)
    }

    /// Make every id hot, left to right. Ids already hot are hits; the rest
    /// are copied in from the cold store, evicting LRU residents as needed.
    pub fn fetch_blocks(&mut self, ids: &[u64]) -> Result<Vec<FetchEvent>> {
        if let Some(&missing) = ids.iter().find(|id| !self.cold.contains_key(id)) {
            return Err(Error::BlockNotFound { block_id: missing });
        }
        let mut distinct: Vec<u64> = ids.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() > self.config.hot_capacity_blocks {
            return Err(Error::Config(alloc::format!(
                "fetch of {} distinct blocks exceeds hot capacity {}",
                distinct.len(),
                self.config.hot_capacity_blocks
            )));
        }

        let mut events = Vec::with_capacity(ids.len());
        for &id in ids {
            self.clock += 1;
            let stamp = self.clock;
            let entry = self.index.get_mut(&id).expect("index covers every admitted block");
            if self.hot.contains_key(&id) {
                self.recency.remove(&entry.last_used);
                self.stats.hits += 1;
                events.push(FetchEvent::Hit { block_id: id });
            } else {
                let mut evicted = None;
                if self.hot.len() == self.config.hot_capacity_blocks {
                    let (_, victim) = self.recency.pop_first().expect("full hot tier has a recency entry");
                    self.hot.remove(&victim);
                    if let Some(e) = self.index.get_mut(&victim) {
                        e.resident = false;
                    }
                    self.stats.evictions += 1;
                    evicted = Some(victim);
                }
                let payload = self.cold[&id].clone();
                if self.config.track_transfers {
                    self.stats.bytes_transferred_analogue += payload.len() as u64;
                }
                self.hot.insert(id, payload);
                self.stats.misses += 1;
                events.push(FetchEvent::Miss { block_id: id, evicted });
            }
            let entry = self.index.get_mut(&id).expect("index covers every admitted block");
            entry.resident = true;
            entry.last_used = stamp;
            self.recency.insert(stamp, id);
            self.stats.peak_hot_blocks = self.stats.peak_hot_blocks.max(self.hot.len() as u64);
        }
        Ok(events)
    }

    /// Payload of a hot block.
    pub fn resident_block(&self, block_id: u64) -> Result<&MemoryBlock> {
        self.hot.get(&block_id).ok_or(if self.cold.contains_key(&block_id) {
            Error::BlockNotResident { block_id }
        } else {
            Error::BlockNotFound { block_id }
        })
    }

    /// Exact flat scan of the resident index; never touches payloads.
    pub fn scan_index<F>(&self, mut scorer: F) -> Vec<BlockScore>
    where
        F: FnMut(&ResidentEntry) -> BlockScore,
    {
        self.index.values().map(&mut scorer).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_memory::{finalize_block, RepresentativeScore};
    use alloc::vec;

    fn block(id: u64) -> MemoryBlock {
        let k = HeadMatrix::from_vec(2, 1, 2, vec![id as f32, 1.0, 0.5, -1.0]).unwrap();
        let b = MemoryBlock::unfinalized(id, 0, id * 2, k.clone(), k).unwrap();
        let s = [0.0, 1.0].map(|score| RepresentativeScore { token_index: 0, score, successor_count: 1 });
        finalize_block(b, &s, 1).unwrap()
    }

    fn store(cap: usize, n: u64) -> TieredStore {
        let mut s = TieredStore::new(TierConfig { hot_capacity_blocks: cap, track_transfers: true }).unwrap();
        for id in 0..n {
            s.admit_block(block(id)).unwrap();
        }
        s
    }

    #[test]
    fn admission_never_heats() {
        let s = store(4, 10);
        assert_eq!(s.hot_len(), 0);
        assert_eq!(s.len(), 10);
        assert_eq!(s.stats(), CacheStats::default());
        let scores = s.scan_index(|e| BlockScore::new(e.block_id, 0.0, e.representative_key_sum[0], 1.0));
        assert_eq!(scores.len(), 10);
        assert_eq!(s.stats().bytes_transferred_analogue, 0);
    }

    #[test]
    fn duplicate_and_unfinalized_rejected() {
        let mut s = store(2, 1);
        assert_eq!(s.admit_block(block(0)), Err(Error::DuplicateBlock { block_id: 0 }));
        let k = HeadMatrix::zeros(1, 1, 2);
        let raw = MemoryBlock::unfinalized(9, 0, 0, k.clone(), k).unwrap();
        assert_eq!(s.admit_block(raw), Err(Error::UnfinalizedBlock { block_id: 9 }));
    }

    #[test]
    fn lru_textbook_case() {
        let mut s = store(2, 3);
        s.fetch_blocks(&[0]).unwrap();
        s.fetch_blocks(&[1]).unwrap();
        assert_eq!(s.fetch_blocks(&[2]).unwrap(), vec![FetchEvent::Miss { block_id: 2, evicted: Some(0) }]);
        assert_eq!(s.fetch_blocks(&[0]).unwrap(), vec![FetchEvent::Miss { block_id: 0, evicted: Some(1) }]);
    }

    #[test]
    fn recency_refresh() {
        let mut s = store(2, 3);
        s.fetch_blocks(&[0, 1, 0]).unwrap();
        assert_eq!(s.fetch_blocks(&[2]).unwrap(), vec![FetchEvent::Miss { block_id: 2, evicted: Some(1) }]);
        let st = s.stats();
        assert_eq!((st.hits, st.misses, st.evictions, st.peak_hot_blocks), (1, 3, 1, 2));
        assert_eq!(st.bytes_transferred_analogue, 6);
    }

    #[test]
    fn errors() {
        let mut s = store(2, 3);
        assert_eq!(s.fetch_blocks(&[0, 7]), Err(Error::BlockNotFound { block_id: 7 }));
        assert_eq!(s.stats(), CacheStats::default(), "failed fetch must not mutate");
        assert!(matches!(s.fetch_blocks(&[0, 1, 2]), Err(Error::Config(_))));
        assert_eq!(s.resident_block(1).unwrap_err(), Error::BlockNotResident { block_id: 1 });
        assert_eq!(s.resident_block(5).unwrap_err(), Error::BlockNotFound { block_id: 5 });
        assert!(TieredStore::new(TierConfig { hot_capacity_blocks: 0, track_transfers: false }).is_err());
    }

    #[test]
    fn repeated_fetch_is_all_hits() {
        let mut s = store(4, 8);
        s.fetch_blocks(&[1, 5, 6]).unwrap();
        let again = s.fetch_blocks(&[1, 5, 6]).unwrap();
        assert!(again.iter().all(|e| matches!(e, FetchEvent::Hit { .. })));
        assert!(s.index_entry(5).unwrap().resident);
        assert!(!s.index_entry(0).unwrap().resident);
    }

    #[test]
    fn untracked_transfers() {
        let mut s = TieredStore::new(TierConfig { hot_capacity_blocks: 2, track_transfers: false }).unwrap();
        s.admit_block(block(0)).unwrap();
        s.fetch_blocks(&[0]).unwrap();
        assert_eq!(s.stats().bytes_transferred_analogue, 0);
        assert_eq!(s.stats().misses, 1);
    }
}
