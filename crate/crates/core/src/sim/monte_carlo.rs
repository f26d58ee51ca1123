//! Paired-seed Monte Carlo over several policy variants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvSeries;
use crate::error::{Error, Result};
use crate::model::ValidatedModel;
use crate::planner::OfflinePlan;
use crate::rng::child_seed;

use super::{run_episode_on, EpisodeSummary, EpisodeTrace, MetricsSet, PolicyMetrics, Variant};

/// The `k`-th episode seed derived from the model's master seed.
pub fn episode_seeds(model: &ValidatedModel, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| child_seed(model.seed(), k)).collect()
}

/// Wall-clock decision times of one variant, kept out of the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTiming {
    pub policy: String,
    pub median_seconds: f64,
    pub p95_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub metrics: MetricsSet,
    /// Per variant, per seed summaries in seed order.
    pub summaries: Vec<Vec<EpisodeSummary>>,
    /// Per variant, per seed traces when requested.
    pub traces: Vec<Vec<EpisodeTrace>>,
    pub timing: Vec<DecisionTiming>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

/// Runs every variant on every seed. Each seed's environment is generated
/// once and shared by all variants. Results do not depend on `parallelism`.
#[allow(clippy::too_many_arguments)]
pub fn run_monte_carlo(
    model: &ValidatedModel,
    variants: &[Variant],
    plan: Option<&OfflinePlan>,
    seeds: &[u64],
    horizon: usize,
    parallelism: usize,
    keep_traces: bool,
) -> Result<MonteCarloResult> {
    if seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    type Cell = (EpisodeSummary, Option<EpisodeTrace>, Vec<f64>);
    let per_seed: Vec<Vec<Cell>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let env = EnvSeries::generate(model, horizon, seed);
                variants
                    .iter()
                    .map(|&v| {
                        let r = run_episode_on(model, v, plan, &env, seed)?;
                        Ok((r.summary, keep_traces.then_some(r.trace), r.decision_seconds))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summaries = vec![Vec::with_capacity(seeds.len()); variants.len()];
    let mut traces = vec![Vec::new(); variants.len()];
    let mut times = vec![Vec::new(); variants.len()];
    for row in per_seed {
        for (j, (s, t, d)) in row.into_iter().enumerate() {
            summaries[j].push(s);
            if let Some(t) = t {
                traces[j].push(t);
            }
            times[j].extend(d);
        }
    }
    let policies = variants
        .iter()
        .zip(&summaries)
        .map(|(v, s)| PolicyMetrics::aggregate(v.label(), s))
        .collect();
    let timing = variants
        .iter()
        .zip(times.iter_mut())
        .map(|(v, d)| {
            d.sort_by(f64::total_cmp);
            DecisionTiming {
                policy: v.label(),
                median_seconds: quantile(d, 0.5),
                p95_seconds: quantile(d, 0.95),
                max_seconds: d.last().copied().unwrap_or(0.0),
            }
        })
        .collect();
    Ok(MonteCarloResult {
        metrics: MetricsSet {
            config_hash: model.config_hash().to_string(),
            master_seed: model.seed(),
            horizon,
            seeds: seeds.to_vec(),
            policies,
        },
        summaries,
        traces,
        timing,
    })
}
