//! Parameter sweeps and the needle depth × length grid.
//!
//! Grid points run in parallel, each with its own sessions; rows come back
//! in grid order, so the table does not depend on scheduling.

use std::path::Path;

use qllm_core::cache_tiers::CacheStats;
use qllm_core::engine::EngineConfig;
use qllm_core::model::ToyModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::experiment::{run_experiment, ExperimentError, PolicySpec, RunReport};
use crate::report::{write_json, ReportError, SCHEMA_VERSION};
use crate::workload::{WorkloadError, WorkloadKind, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Beta,
    /// `n_r`
    NumRepr,
    /// `l_b`; `n_b` follows so that `n_b · l_b` stays fixed.
    BlockSize,
    /// `n_b`; `l_b` follows so that `n_b · l_b` stays fixed.
    NumBlocks,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beta" => Ok(Self::Beta),
            "num-repr" | "n_r" => Ok(Self::NumRepr),
            "block-size" | "l_b" => Ok(Self::BlockSize),
            "num-blocks" | "n_b" => Ok(Self::NumBlocks),
            other => Err(format!("unknown sweep parameter {other:?} (beta, num-repr, block-size, num-blocks)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Run(#[from] ExperimentError),
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid_points(axes: &[Axis]) -> Result<Vec<Vec<(SweepParam, f64)>>, SweepError> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(SweepError::Grid("grid must have at least one axis and one value per axis".into()));
    }
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((axis.param, v));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn as_count(v: f64, what: &str) -> Result<usize, String> {
    if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format!("{what} = {v} is not a positive integer"))
    }
}

/// Engine config and policy at one grid point, or the reason it is skipped.
pub fn configure(
    base: &EngineConfig,
    policy: PolicySpec,
    point: &[(SweepParam, f64)],
) -> Result<(EngineConfig, PolicySpec), String> {
    let mut c = *base;
    let mut policy = policy;
    let budget = base.blocks_per_lookup * base.block_size;
    let (mut lb, mut nb) = (None, None);
    for &(param, v) in point {
        match param {
            SweepParam::Beta => {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(format!("beta = {v} is not a nonnegative real"));
                }
                policy = PolicySpec::Qllm { beta: v };
            }
            SweepParam::NumRepr => c.representatives = as_count(v, "n_r")?,
            SweepParam::BlockSize => lb = Some(as_count(v, "l_b")?),
            SweepParam::NumBlocks => nb = Some(as_count(v, "n_b")?),
        }
    }
    let derive = |given: usize, other: &str| {
        if budget % given == 0 && budget > 0 {
            Ok(budget / given)
        } else {
            Err(format!("n_b · l_b must stay {budget}; {given} does not divide it into a whole {other}"))
        }
    };
    match (lb, nb) {
        (Some(l), Some(n)) => (c.block_size, c.blocks_per_lookup) = (l, n),
        (Some(l), None) => (c.block_size, c.blocks_per_lookup) = (l, derive(l, "n_b")?),
        (None, Some(n)) => (c.blocks_per_lookup, c.block_size) = (n, derive(n, "l_b")?),
        (None, None) => {}
    }
    if c.context_window() != base.context_window() {
        return Err(format!(
            "window n_b · l_b + l_L = {} differs from the base {}",
            c.context_window(),
            base.context_window()
        ));
    }
    if c.representatives > c.block_size {
        return Err(format!("n_r = {} exceeds l_b = {}", c.representatives, c.block_size));
    }
    policy.apply(c).validate().map_err(|e| e.to_string())?;
    Ok((c, policy))
}

/// Aggregate of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub beta: f64,
    pub representatives: usize,
    pub block_size: usize,
    pub blocks_per_lookup: usize,
    pub policy: String,
    /// Empty when the point ran.
    pub skipped: String,
    pub repetitions: usize,
    pub mean_recall: Option<f64>,
    pub min_recall: Option<f64>,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub peak_hot_blocks: u64,
    pub max_cache_len: usize,
    pub cache_budget: usize,
}

impl SweepRow {
    fn new(engine: &EngineConfig, policy: PolicySpec) -> Self {
        let e = policy.apply(*engine);
        Self {
            schema_version: SCHEMA_VERSION,
            beta: e.beta,
            representatives: e.representatives,
            block_size: e.block_size,
            blocks_per_lookup: e.blocks_per_lookup,
            policy: policy.name(),
            skipped: String::new(),
            repetitions: 0,
            mean_recall: None,
            min_recall: None,
            hits: 0,
            misses: 0,
            evictions: 0,
            peak_hot_blocks: 0,
            max_cache_len: 0,
            cache_budget: 0,
        }
    }

    fn from_report(report: &RunReport) -> Self {
        let mut row = Self::new(&report.engine, report.policy);
        let reps = &report.repetitions;
        row.repetitions = reps.len();
        row.mean_recall = report.mean_recall;
        row.min_recall = reps.iter().filter_map(|r| r.recall).reduce(f64::min);
        let cache = reps.iter().fold(CacheStats::default(), |acc, r| acc.merge(&r.cache));
        (row.hits, row.misses, row.evictions, row.peak_hot_blocks) =
            (cache.hits, cache.misses, cache.evictions, cache.peak_hot_blocks);
        row.max_cache_len = reps.iter().map(|r| r.max_cache_len).max().unwrap_or(0);
        row.cache_budget = reps.iter().map(|r| r.cache_budget).max().unwrap_or(0);
        row
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub axes: Vec<Axis>,
    pub base_engine: EngineConfig,
    pub workload: WorkloadSpec,
    pub rows: Vec<SweepRow>,
}

pub fn sweep(
    model: &ToyModel,
    base: &EngineConfig,
    policy: PolicySpec,
    spec: &WorkloadSpec,
    axes: &[Axis],
) -> Result<SweepReport, SweepError> {
    let points = grid_points(axes)?;
    let rows = points
        .par_iter()
        .map(|point| match configure(base, policy, point) {
            Err(reason) => {
                log::warn!("skipping grid point {point:?}: {reason}");
                let mut row = SweepRow::new(base, policy);
                for &(param, v) in point {
                    match param {
                        SweepParam::Beta => {
                            row.beta = v;
                            row.policy = PolicySpec::Qllm { beta: v }.name();
                        }
                        SweepParam::NumRepr => row.representatives = v as usize,
                        SweepParam::BlockSize => row.block_size = v as usize,
                        SweepParam::NumBlocks => row.blocks_per_lookup = v as usize,
                    }
                }
                row.skipped = reason;
                Ok(row)
            }
            Ok((engine, policy)) => run_experiment(model, &engine, policy, spec).map(|r| SweepRow::from_report(&r)),
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        axes: axes.to_vec(),
        base_engine: *base,
        workload: spec.clone(),
        rows,
    })
}

/// One cell of the needle grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleCell {
    pub schema_version: u32,
    pub context_length: usize,
    pub depth: f64,
    pub skipped: String,
    pub repetitions: usize,
    pub mean_recall: Option<f64>,
    pub min_recall: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeedleGridReport {
    pub schema_version: u32,
    pub engine: EngineConfig,
    pub policy: PolicySpec,
    pub workload: WorkloadSpec,
    pub cells: Vec<NeedleCell>,
}

pub const DEFAULT_LENGTHS: [usize; 6] = [1024, 2048, 4096, 8192, 16384, 32768];
pub const DEFAULT_DEPTHS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Planted-needle recall over context lengths × depths. The base spec
/// supplies seed, repetitions, alignment and segment lengths.
pub fn needle_grid(
    model: &ToyModel,
    engine: &EngineConfig,
    policy: PolicySpec,
    base: &WorkloadSpec,
    lengths: &[usize],
    depths: &[f64],
) -> Result<NeedleGridReport, SweepError> {
    if lengths.is_empty() || depths.is_empty() {
        return Err(SweepError::Grid("needle grid needs at least one length and one depth".into()));
    }
    let alignment = base.needle_alignment.unwrap_or(0.9);
    let cells: Vec<(usize, f64)> = lengths.iter().flat_map(|&n| depths.iter().map(move |&d| (n, d))).collect();
    let cells = cells
        .par_iter()
        .map(|&(context_length, depth)| {
            let spec = WorkloadSpec {
                kind: WorkloadKind::PlantedNeedle,
                context_length,
                needle_depth: Some(depth),
                needle_alignment: Some(alignment),
                ..base.clone()
            };
            let mut cell = NeedleCell {
                schema_version: SCHEMA_VERSION,
                context_length,
                depth,
                skipped: String::new(),
                repetitions: 0,
                mean_recall: None,
                min_recall: None,
            };
            match run_experiment(model, engine, policy, &spec) {
                Ok(r) => {
                    cell.repetitions = r.repetitions.len();
                    cell.mean_recall = r.mean_recall;
                    cell.min_recall = r.repetitions.iter().filter_map(|x| x.recall).reduce(f64::min);
                    Ok(cell)
                }
                Err(ExperimentError {
                    source: e @ (WorkloadError::Placement(_) | WorkloadError::Alignment { .. }),
                    ..
                }) => {
                    let reason = e.to_string();
                    log::warn!("skipping {context_length} tokens at depth {depth}: {reason}");
                    cell.skipped = reason;
                    Ok(cell)
                }
                Err(e) => Err(SweepError::Run(e)),
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NeedleGridReport {
        schema_version: SCHEMA_VERSION,
        engine: policy.apply(*engine),
        policy,
        workload: base.clone(),
        cells,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let err = |e: csv::Error| ReportError { path: path.into(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|source| ReportError { path: path.into(), source })
}

/// `sweep.csv` and `sweep.json` in `dir`.
pub fn emit_sweep(report: &SweepReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError { path: dir.into(), source })?;
    write_rows(&dir.join("sweep.csv"), &report.rows)?;
    write_json(&dir.join("sweep.json"), report)
}

/// `needle_grid.csv` and `needle_grid.json` in `dir`.
pub fn emit_needle_grid(report: &NeedleGridReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError { path: dir.into(), source })?;
    write_rows(&dir.join("needle_grid.csv"), &report.cells)?;
    write_json(&dir.join("needle_grid.json"), report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(param: SweepParam, values: &[f64]) -> Axis {
        Axis { param, values: values.to_vec() }
    }

    #[test]
    fn points_are_a_product() {
        let p =
            grid_points(&[axis(SweepParam::Beta, &[0.0, 1.0]), axis(SweepParam::NumRepr, &[1.0, 2.0, 4.0])]).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p[1], vec![(SweepParam::Beta, 0.0), (SweepParam::NumRepr, 2.0)]);
        assert!(grid_points(&[]).is_err());
        assert!(grid_points(&[axis(SweepParam::Beta, &[])]).is_err());
    }

    #[test]
    fn window_is_conserved() {
        // 1024-token window: l_L = 512, n_b · l_b = 512.
        let base = EngineConfig::preset(1024).unwrap();
        let q = PolicySpec::default();
        let (c, _) = configure(&base, q, &[(SweepParam::BlockSize, 128.0)]).unwrap();
        assert_eq!((c.block_size, c.blocks_per_lookup), (128, 4));
        let (c, _) = configure(&base, q, &[(SweepParam::NumBlocks, 8.0)]).unwrap();
        assert_eq!((c.block_size, c.blocks_per_lookup), (64, 8));
        assert!(configure(&base, q, &[(SweepParam::BlockSize, 100.0)]).is_err());
        assert!(configure(&base, q, &[(SweepParam::BlockSize, 64.0), (SweepParam::NumBlocks, 4.0)]).is_err());
        assert!(configure(&base, q, &[(SweepParam::NumRepr, 128.0)]).is_err());
        assert!(configure(&base, q, &[(SweepParam::NumRepr, 2.5)]).is_err());
        assert!(configure(&base, q, &[(SweepParam::Beta, -1.0)]).is_err());
        // n_b = 64 needs 64 hot slots; the preset has 32.
        assert!(configure(&base, q, &[(SweepParam::NumBlocks, 64.0)]).is_err());
    }

    #[test]
    fn beta_point_sets_the_policy() {
        let base = EngineConfig::default();
        let (_, p) = configure(&base, PolicySpec::CurrentOnly, &[(SweepParam::Beta, 2.0)]).unwrap();
        assert_eq!(p, PolicySpec::Qllm { beta: 2.0 });
    }
}
