//! One workload under one policy: generate, prefill, decode, measure.

use std::time::Instant;

use qllm_core::cache_tiers::CacheStats;
use qllm_core::engine::{EngineConfig, Phase, SelectionRecord, Session};
use qllm_core::model::{ModelConfig, ToyModel};
use qllm_core::TokenId;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::workload::{cosine, generate_workload, Needle, Workload, WorkloadError, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Query-aware lookup with weight `beta` on the query score.
    Qllm { beta: f64 },
    /// Lookup by current-token score alone.
    CurrentOnly,
    /// No retrieval; pinned segments and the local window only.
    LocalOnly,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Qllm { beta: 1.0 }
    }
}

impl PolicySpec {
    pub fn apply(&self, mut config: EngineConfig) -> EngineConfig {
        match *self {
            PolicySpec::Qllm { beta } => config.beta = beta,
            PolicySpec::CurrentOnly => config.beta = 0.0,
            PolicySpec::LocalOnly => config.blocks_per_lookup = 0,
        }
        config
    }

    pub fn name(&self) -> String {
        match self {
            PolicySpec::Qllm { beta } => format!("qllm(beta={beta})"),
            PolicySpec::CurrentOnly => "current-only".into(),
            PolicySpec::LocalOnly => "local-only".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("seed {seed}: {source}")]
pub struct ExperimentError {
    pub seed: u64,
    #[source]
    pub source: WorkloadError,
}

/// Outcome of one repetition.
#[derive(Debug, Clone, Serialize)]
pub struct RepetitionReport {
    pub seed: u64,
    pub needle: Option<Needle>,
    /// Fraction of decode lookups (steps × layers) whose selection holds the
    /// needle block.
    pub recall: Option<f64>,
    /// Cosine per layer between the admitted needle block's representative
    /// key sum and the mean query vector.
    pub measured_alignment: Vec<f64>,
    pub decoded: Vec<TokenId>,
    pub cache: CacheStats,
    pub max_cache_len: usize,
    pub cache_budget: usize,
    pub blocks_admitted: usize,
    /// Decode steps × blocks; each cell counts the layers selecting that block.
    /// Emitted as its own CSV file.
    #[serde(skip)]
    pub heatmap: Vec<Vec<u32>>,
    #[serde(skip)]
    pub trace: Vec<SelectionRecord>,
    /// Wall clock; kept out of the deterministic outputs.
    #[serde(skip)]
    pub timings: Timings,
}

/// Seconds spent per phase of one repetition.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub generate: f64,
    pub prefill_chunks: Vec<f64>,
    pub decode: f64,
}

pub fn run_repetition(
    model: &ToyModel,
    engine: &EngineConfig,
    policy: PolicySpec,
    spec: &WorkloadSpec,
    rep: usize,
) -> Result<RepetitionReport, ExperimentError> {
    let seed = spec.rep_seed(rep);
    let config = policy.apply(*engine);
    let spec = WorkloadSpec { seed, ..spec.clone() };
    let t = Instant::now();
    let workload = config
        .validate()
        .map_err(WorkloadError::from)
        .and_then(|_| generate_workload(&spec, model, &config))
        .map_err(|source| ExperimentError { seed, source })?;
    let generate = t.elapsed().as_secs_f64();
    let mut report = run_workload(model, engine, policy, &workload, seed)?;
    report.timings.generate = generate;
    Ok(report)
}

/// Run an already generated workload; `seed` only labels errors and the
/// report. Policies that share a workload can reuse one generation.
pub fn run_workload(
    model: &ToyModel,
    engine: &EngineConfig,
    policy: PolicySpec,
    workload: &Workload,
    seed: u64,
) -> Result<RepetitionReport, ExperimentError> {
    let fail = |e: qllm_core::Error| ExperimentError { seed, source: e.into() };
    let config = policy.apply(*engine);
    let prompt = &workload.prompt;
    let mut session = Session::start(model, config, prompt).map_err(fail)?;
    let mut timings = Timings::default();
    for chunk in prompt.stream().chunks(config.chunk_size) {
        let t = Instant::now();
        session.prefill(chunk).map_err(fail)?;
        timings.prefill_chunks.push(t.elapsed().as_secs_f64());
    }
    let t = Instant::now();
    let out = match &workload.decode_script {
        Some(script) => session.decode_forced(script),
        None => session.decode(workload.decode_tokens),
    }
    .map_err(fail)?;
    timings.decode = t.elapsed().as_secs_f64();

    let n_layers = model.config().n_layers;
    let needle_id = workload.needle.as_ref().map(|n| n.block_id);
    let recall = needle_id.map(|id| recall_of(&out.trace, id));
    let measured_alignment = match needle_id {
        Some(id) => (0..n_layers)
            .map(|l| {
                let entry = session.store(l)?.index_entry(id);
                let q = session.query_summary(l)?;
                Ok(entry.map_or(f64::NAN, |e| cosine(&e.representative_key_sum, q.sum())))
            })
            .collect::<Result<Vec<_>, qllm_core::Error>>()
            .map_err(fail)?,
        None => Vec::new(),
    };
    let blocks_admitted = session.store(0).map(|s| s.len()).map_err(fail)?;
    Ok(RepetitionReport {
        seed,
        needle: workload.needle.clone(),
        recall,
        measured_alignment,
        decoded: out.tokens,
        cache: session.cache_stats(),
        max_cache_len: session.max_cache_len(),
        cache_budget: session.cache_budget(),
        blocks_admitted,
        heatmap: heatmap(&out.trace, blocks_admitted),
        trace: session.trace().to_vec(),
        timings,
    })
}

/// Fraction of decode lookups whose selection holds `block`; 0 when no
/// lookup happened.
pub fn recall_of(trace: &[SelectionRecord], block: u64) -> f64 {
    let decode: Vec<_> = trace.iter().filter(|r| r.phase == Phase::Decode).collect();
    if decode.is_empty() {
        return 0.0;
    }
    let hits = decode.iter().filter(|r| r.selected.binary_search(&block).is_ok()).count();
    hits as f64 / decode.len() as f64
}

/// Decode selections as a step × block count grid.
pub fn heatmap(trace: &[SelectionRecord], n_blocks: usize) -> Vec<Vec<u32>> {
    let decode = trace.iter().filter(|r| r.phase == Phase::Decode);
    let steps = decode.clone().map(|r| r.step + 1).max().unwrap_or(0);
    let first = decode.clone().map(|r| r.step).min().unwrap_or(0);
    let mut grid = vec![vec![0u32; n_blocks]; (steps - first) as usize];
    for r in decode {
        for &b in &r.selected {
            if let Some(cell) = grid[(r.step - first) as usize].get_mut(b as usize) {
                *cell += 1;
            }
        }
    }
    grid
}

/// All repetitions of one workload under one policy.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub model_checksum: u64,
    pub policy: PolicySpec,
    pub engine: EngineConfig,
    pub workload: WorkloadSpec,
    pub mean_recall: Option<f64>,
    pub repetitions: Vec<RepetitionReport>,
}

pub fn run_experiment(
    model: &ToyModel,
    engine: &EngineConfig,
    policy: PolicySpec,
    spec: &WorkloadSpec,
) -> Result<RunReport, ExperimentError> {
    spec.validate().map_err(|e| ExperimentError { seed: spec.seed, source: e })?;
    let repetitions = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(model, engine, policy, spec, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let recalls: Vec<f64> = repetitions.iter().filter_map(|r| r.recall).collect();
    let mean_recall = (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64);
    Ok(RunReport {
        model: model.config().clone(),
        model_checksum: model.checksum(),
        policy,
        engine: policy.apply(*engine),
        workload: spec.clone(),
        mean_recall,
        repetitions,
    })
}
