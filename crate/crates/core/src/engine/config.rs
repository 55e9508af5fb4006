use crate::{Error, Result};

/// Knobs of one streaming session.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EngineConfig {
    /// `l_L`: context tokens kept with true positions.
    pub local_window: usize,
    /// `l_b`: tokens per memory block.
    pub block_size: usize,
    /// `n_b`: blocks retrieved per lookup. Zero disables lookup entirely.
    pub blocks_per_lookup: usize,
    /// `n_r`: representative tokens per block.
    pub representatives: usize,
    pub beta: f64,
    pub chunk_size: usize,
    /// Pinned-token budget shared by the global and query segments.
    pub n_init: usize,
    pub hot_capacity_blocks: usize,
    /// Rescore every this many lookups per layer; in between, the previous
    /// selection is reused.
    pub reselect_interval: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::preset(512).expect("512 is a preset window")
    }
}

impl EngineConfig {
    /// Preset for a 512, 1024 or 2048 token window.
    pub fn preset(window: usize) -> Result<Self> {
        let (local_window, block_size, blocks_per_lookup) = match window {
            512 => (256, 64, 4),
            1024 => (512, 64, 8),
            2048 => (1024, 128, 8),
            other => return Err(Error::Config(alloc::format!("no preset for a {other}-token window"))),
        };
        Ok(Self {
            local_window,
            block_size,
            blocks_per_lookup,
            representatives: 4,
            beta: 1.0,
            chunk_size: 128,
            n_init: 128,
            hot_capacity_blocks: 32,
            reselect_interval: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("local_window", self.local_window),
            ("block_size", self.block_size),
            ("representatives", self.representatives),
            ("chunk_size", self.chunk_size),
            ("hot_capacity_blocks", self.hot_capacity_blocks),
            ("reselect_interval", self.reselect_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(alloc::format!("{name} must be at least 1")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(alloc::format!("beta must be a nonnegative real, got {}", self.beta)));
        }
        if self.chunk_size > self.local_window {
            return Err(Error::Config(alloc::format!(
                "chunk_size {} exceeds local_window {}",
                self.chunk_size,
                self.local_window
            )));
        }
        if self.hot_capacity_blocks < self.blocks_per_lookup {
            return Err(Error::Config(alloc::format!(
                "hot_capacity_blocks {} cannot hold {} blocks per lookup",
                self.hot_capacity_blocks,
                self.blocks_per_lookup
            )));
        }
        Ok(())
    }

    /// Window excluding pinned tokens: `n_b · l_b + l_L`.
    pub fn context_window(&self) -> usize {
        self.blocks_per_lookup * self.block_size + self.local_window
    }

    /// Upper bound on the assembled cache for a query of `l_q` tokens.
    pub fn cache_budget(&self, l_q: usize) -> usize {
        self.n_init + l_q + self.context_window()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let c = EngineConfig::preset(512).unwrap();
        assert_eq!((c.local_window, c.block_size, c.blocks_per_lookup), (256, 64, 4));
        assert_eq!(c.context_window(), 512);
        assert_eq!(EngineConfig::preset(1024).unwrap().context_window(), 1024);
        assert_eq!(EngineConfig::preset(2048).unwrap().context_window(), 2048);
        assert!(EngineConfig::preset(4096).is_err());
        for w in [512, 1024, 2048] {
            EngineConfig::preset(w).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let base = EngineConfig::default();
        assert!(EngineConfig { chunk_size: 257, ..base }.validate().is_err());
        assert!(EngineConfig { beta: -1.0, ..base }.validate().is_err());
        assert!(EngineConfig { beta: f64::NAN, ..base }.validate().is_err());
        assert!(EngineConfig { block_size: 0, ..base }.validate().is_err());
        assert!(EngineConfig { hot_capacity_blocks: 3, ..base }.validate().is_err());
        EngineConfig { blocks_per_lookup: 0, ..base }.validate().unwrap();
    }
}
