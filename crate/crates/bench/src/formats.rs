//! Binary dumps: model weights and block-store snapshots.
//!
//! Both start with a UTF-8 header of `key=value` lines in a fixed order,
//! closed by a line `end`. Numbers after the header are little-endian.
//!
//! Weights (`qllm-weights`): header fields `schema_version`, `n_layers`,
//! `n_heads`, `d_head`, `d_model`, `vocab_size`, `rope_base`, `seed`,
//! `tensors`; then every tensor as `f32`, in this order: `embedding`
//! `[vocab × d_model]`, per layer `wq wk wv wo` `[d_model × d_model]`, `w1`
//! `[4·d_model × d_model]`, `w2` `[d_model × 4·d_model]`, then `lm_head`
//! `[vocab × d_model]`. Matrices are row-major with one row per output.
//!
//! Block store (`qllm-blocks`): header fields `schema_version`,
//! `hot_capacity_blocks`, `track_transfers`, `layer`, `n_heads`, `d_head`,
//! `blocks`; then per block in id order: `id`, `start`, `end`, `n_rep` as
//! `u64`, `n_rep` representative offsets as `u64`, keys then values as `f32`
//! (`(end − start) × n_heads · d_head` each). Hot-tier residency and LRU
//! state are not saved.

use std::io::{BufRead, Read, Write};

use qllm_core::block_memory::MemoryBlock;
use qllm_core::cache_tiers::{TierConfig, TieredStore};
use qllm_core::model::{ModelConfig, ToyModel};
use qllm_core::tensor::HeadMatrix;

pub const FORMAT_VERSION: u32 = 1;
const WEIGHTS_MAGIC: &str = "qllm-weights";
const BLOCKS_MAGIC: &str = "qllm-blocks";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] qllm_core::Error),
}

fn write_header(w: &mut impl Write, magic: &str, fields: &[(&str, String)]) -> std::io::Result<()> {
    writeln!(w, "{magic}")?;
    for (k, v) in fields {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w, "end")
}

/// Read the header and check that the keys come in exactly `keys` order.
fn read_header(r: &mut impl BufRead, magic: &str, keys: &[&str]) -> Result<Vec<String>, FormatError> {
    let mut line = String::new();
    let mut next = |r: &mut dyn BufRead| -> Result<String, FormatError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(FormatError::Header("unexpected end of file".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let first = next(r)?;
    if first != magic {
        return Err(FormatError::Header(format!("expected {magic:?}, found {first:?}")));
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let l = next(r)?;
        match l.split_once('=') {
            Some((k, v)) if k == *key => values.push(v.to_string()),
            _ => return Err(FormatError::Header(format!("expected field {key}, found {l:?}"))),
        }
    }
    let last = next(r)?;
    if last != "end" {
        return Err(FormatError::Header(format!("expected end of header, found {last:?}")));
    }
    if values[0] != FORMAT_VERSION.to_string() {
        return Err(FormatError::Header(format!("unsupported schema_version {}", values[0])));
    }
    Ok(values)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, FormatError> {
    v.parse().map_err(|_| FormatError::Header(format!("{key}: cannot parse {v:?}")))
}

fn write_f32s(w: &mut impl Write, xs: &[f32]) -> std::io::Result<()> {
    let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
    w.write_all(&bytes)
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

const WEIGHT_KEYS: [&str; 9] =
    ["schema_version", "n_layers", "n_heads", "d_head", "d_model", "vocab_size", "rope_base", "seed", "tensors"];

pub fn write_weights(w: &mut impl Write, model: &ToyModel) -> std::io::Result<()> {
    let c = model.config();
    let tensors = model.tensors();
    let values = [
        FORMAT_VERSION.to_string(),
        c.n_layers.to_string(),
        c.n_heads.to_string(),
        c.d_head.to_string(),
        c.d_model.to_string(),
        c.vocab_size.to_string(),
        c.rope_base.to_string(),
        c.seed.to_string(),
        tensors.len().to_string(),
    ];
    let fields: Vec<_> = WEIGHT_KEYS.iter().copied().zip(values).collect();
    write_header(w, WEIGHTS_MAGIC, &fields)?;
    for t in tensors {
        write_f32s(w, t)?;
    }
    Ok(())
}

pub fn read_weights(r: &mut impl BufRead) -> Result<ToyModel, FormatError> {
    let v = read_header(r, WEIGHTS_MAGIC, &WEIGHT_KEYS)?;
    let config = ModelConfig {
        n_layers: parse("n_layers", &v[1])?,
        n_heads: parse("n_heads", &v[2])?,
        d_head: parse("d_head", &v[3])?,
        d_model: parse("d_model", &v[4])?,
        vocab_size: parse("vocab_size", &v[5])?,
        rope_base: parse("rope_base", &v[6])?,
        seed: parse("seed", &v[7])?,
    };
    config.validate()?;
    let shapes = ToyModel::tensor_shapes(&config);
    let count: usize = parse("tensors", &v[8])?;
    if count != shapes.len() {
        return Err(FormatError::Header(format!("{count} tensors listed, config needs {}", shapes.len())));
    }
    let tensors = shapes.iter().map(|(_, len)| read_f32s(r, *len)).collect::<std::io::Result<Vec<_>>>()?;
    Ok(ToyModel::from_tensors(config, tensors)?)
}

const BLOCK_KEYS: [&str; 7] =
    ["schema_version", "hot_capacity_blocks", "track_transfers", "layer", "n_heads", "d_head", "blocks"];

/// Contents of a block-store snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSnapshot {
    pub config: TierConfig,
    pub layer: usize,
    pub blocks: Vec<MemoryBlock>,
}

impl StoreSnapshot {
    /// A fresh store with every block admitted (all cold).
    pub fn into_store(self) -> Result<TieredStore, FormatError> {
        let mut store = TieredStore::new(self.config)?;
        for b in self.blocks {
            store.admit_block(b)?;
        }
        Ok(store)
    }
}

pub fn write_store(w: &mut impl Write, store: &TieredStore, layer: usize) -> std::io::Result<()> {
    let c = store.config();
    let (n_heads, d_head) = store.blocks().next().map_or((0, 0), |b| (b.keys.n_heads(), b.keys.d_head()));
    let values = [
        FORMAT_VERSION.to_string(),
        c.hot_capacity_blocks.to_string(),
        c.track_transfers.to_string(),
        layer.to_string(),
        n_heads.to_string(),
        d_head.to_string(),
        store.len().to_string(),
    ];
    let fields: Vec<_> = BLOCK_KEYS.iter().copied().zip(values).collect();
    write_header(w, BLOCKS_MAGIC, &fields)?;
    for b in store.blocks() {
        let mut head = vec![b.block_id, b.token_range.start, b.token_range.end, b.representative_indices.len() as u64];
        head.extend(b.representative_indices.iter().map(|&i| i as u64));
        let bytes: Vec<u8> = head.iter().flat_map(|x| x.to_le_bytes()).collect();
        w.write_all(&bytes)?;
        write_f32s(w, b.keys.as_slice())?;
        write_f32s(w, b.values.as_slice())?;
    }
    Ok(())
}

pub fn read_store(r: &mut impl BufRead) -> Result<StoreSnapshot, FormatError> {
    let v = read_header(r, BLOCKS_MAGIC, &BLOCK_KEYS)?;
    let config = TierConfig {
        hot_capacity_blocks: parse("hot_capacity_blocks", &v[1])?,
        track_transfers: parse("track_transfers", &v[2])?,
    };
    let layer: usize = parse("layer", &v[3])?;
    let n_heads: usize = parse("n_heads", &v[4])?;
    let d_head: usize = parse("d_head", &v[5])?;
    let count: usize = parse("blocks", &v[6])?;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let id = read_u64(r)?;
        let (start, end) = (read_u64(r)?, read_u64(r)?);
        let rows = end
            .checked_sub(start)
            .ok_or_else(|| FormatError::Header(format!("block {id}: range {start}..{end} is reversed")))?
            as usize;
        let n_rep = read_u64(r)? as usize;
        if n_rep > rows {
            return Err(FormatError::Header(format!("block {id}: {n_rep} representatives for {rows} tokens")));
        }
        let reps = (0..n_rep).map(|_| read_u64(r).map(|x| x as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let width = n_heads * d_head;
        let keys = HeadMatrix::from_vec(rows, n_heads, d_head, read_f32s(r, rows * width)?)?;
        let values = HeadMatrix::from_vec(rows, n_heads, d_head, read_f32s(r, rows * width)?)?;
        blocks.push(MemoryBlock::from_parts(id, layer, start, keys, values, reps)?);
    }
    Ok(StoreSnapshot { config, layer, blocks })
}
