//! Per-episode summaries and their aggregation across seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{Strategy, ValidatedModel};

use super::EpisodeTrace;

/// Weighted quantiles of `(value, weight)` pairs; the smallest value whose
/// cumulative weight reaches `q` of the total. Empty or weightless input
/// gives zeros.
pub fn latency_quantiles(samples: &[(f64, f64)], qs: &[f64]) -> Vec<f64> {
    let mut v: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, w)| w > 0.0).collect();
    let total: f64 = v.iter().map(|&(_, w)| w).sum();
    if v.is_empty() || total <= 0.0 {
        return vec![0.0; qs.len()];
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    qs.iter()
        .map(|&q| {
            let target = q * total;
            let mut acc = 0.0;
            for &(x, w) in &v {
                acc += w;
                if acc >= target - 1e-12 * total {
                    return x;
                }
            }
            v[v.len() - 1].0
        })
        .collect()
}

/// Mean and two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Fewer than two samples: the interval collapses onto the mean.
    pub degenerate: bool,
}

pub fn t_interval(xs: &[f64]) -> MetricStat {
    let n = xs.len();
    let mean = if n == 0 { 0.0 } else { xs.iter().sum::<f64>() / n as f64 };
    if n < 2 {
        return MetricStat {
            mean,
            ci_low: mean,
            ci_high: mean,
            n,
            degenerate: true,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    MetricStat {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
        degenerate: false,
    }
}

/// Scalar metrics of one episode in a fixed order, plus its risk series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub metrics: Vec<(String, f64)>,
    /// Total expected risk per slot.
    pub risk_series: Vec<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl EpisodeSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }

    pub fn from_trace(model: &ValidatedModel, trace: &EpisodeTrace) -> Self {
        let slots = &trace.slots;
        let n_classes = model.classes().len();
        let horizon = slots.len() as f64;
        let mut out: Vec<(String, f64)> = Vec::new();
        let mut put = |k: String, v: f64| out.push((k, v));

        let risk_series: Vec<f64> = slots.iter().map(|s| s.risk.iter().sum()).collect();
        put("cumulative_risk".into(), risk_series.iter().sum());
        let successes: usize = slots.iter().map(|s| s.successes.iter().filter(|&&x| x).count()).sum();
        put("attack_successes".into(), successes as f64);
        let ledger = trace.ledger();
        put("key_bits_consumed".into(), ledger.consumed as f64);

        // Critical messages delivered on time without a successful attack.
        let mut critical = 0.0;
        for s in slots {
            for i in (0..n_classes).filter(|&i| model.is_compliance_bound(i)) {
                let good = s.arrivals[i] as f64 - s.sla_violations[i] - if s.successes[i] { 1.0 } else { 0.0 };
                critical += good.max(0.0);
            }
        }
        put("key_efficiency".into(), ratio(critical, ledger.consumed as f64));
        put("qosec_rate".into(), ratio(slots.iter().filter(|s| s.qosec_ok).count() as f64, horizon));

        for (i, class) in model.classes().iter().enumerate() {
            let msgs: f64 = slots.iter().map(|s| s.arrivals[i] as f64).sum();
            let late: f64 = slots.iter().map(|s| s.sla_violations[i]).sum();
            put(format!("sla_rate.{}", class.id), ratio(late, msgs).clamp(0.0, 1.0));
            if let Some(cap) = class.qosec_cap {
                let ok = slots.iter().filter(|s| s.rho[i] <= cap).count() as f64;
                put(format!("qosec_rate.{}", class.id), ratio(ok, horizon));
            }
            let samples: Vec<(f64, f64)> = slots
                .iter()
                .map(|s| (s.delay[i], s.arrivals[i] as f64 - s.deferred[i]))
                .collect();
            let q = latency_quantiles(&samples, &[0.5, 0.95, 0.99]);
            put(format!("latency_p50.{}", class.id), q[0]);
            put(format!("latency_p95.{}", class.id), q[1]);
            put(format!("latency_p99.{}", class.id), q[2]);
            let s3: f64 = slots
                .iter()
                .map(|s| {
                    let main = s.arrivals[i] as f64 - s.fallback[i];
                    s.fallback[i] + if s.columns[i].strategy == Strategy::AesMac { main } else { 0.0 }
                })
                .sum();
            put(format!("s3_share.{}", class.id), ratio(s3, msgs));
        }

        let cap_total: f64 = model.nodes().iter().map(|n| n.pool_cap as f64).sum();
        let occ: Vec<f64> = slots.iter().map(|s| ratio(s.pools.iter().sum::<u64>() as f64, cap_total)).collect();
        put("pool_occupancy_mean".into(), ratio(occ.iter().sum(), horizon));
        put("pool_occupancy_min".into(), occ.iter().copied().reduce(f64::min).unwrap_or(0.0));
        put(
            "expiry_share".into(),
            ratio(ledger.expired as f64, (ledger.initial + ledger.generated) as f64),
        );
        let routed: u64 = slots.iter().map(|s| s.routed).sum();
        let cross: u64 = slots.iter().map(|s| s.cross_domain).sum();
        put("cross_domain_share".into(), ratio(cross as f64, routed as f64));
        put("deficit_bits".into(), slots.iter().map(|s| s.deficit as f64).sum());
        put("relaxed_bits".into(), slots.iter().map(|s| s.relaxed_bits.iter().sum::<f64>()).sum());
        put("deferred_msgs".into(), slots.iter().map(|s| s.deferred.iter().sum::<f64>()).sum());
        put("fallback_msgs".into(), slots.iter().map(|s| s.fallback.iter().sum::<f64>()).sum());
        put(
            "strong_share".into(),
            ratio(slots.iter().map(|s| s.strategy_shares[0] + s.strategy_shares[1]).sum(), horizon),
        );
        put("pool_price_mean".into(), ratio(slots.iter().map(|s| s.pool_price).sum(), horizon));
        put("node_price_mean".into(), ratio(slots.iter().map(|s| s.node_price).sum(), horizon));
        Self {
            metrics: out,
            risk_series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    #[serde(flatten)]
    pub stat: MetricStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub policy: String,
    pub rows: Vec<MetricRow>,
    /// Seed-mean total risk per slot.
    pub risk_series: Vec<f64>,
}

impl PolicyMetrics {
    pub fn aggregate(policy: String, episodes: &[EpisodeSummary]) -> Self {
        let names: Vec<String> = episodes
            .first()
            .map(|e| e.metrics.iter().map(|(k, _)| k.clone()).collect())
            .unwrap_or_default();
        let rows = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let xs: Vec<f64> = episodes.iter().map(|e| e.metrics[j].1).collect();
                MetricRow {
                    metric: name.clone(),
                    stat: t_interval(&xs),
                }
            })
            .collect();
        let len = episodes.iter().map(|e| e.risk_series.len()).max().unwrap_or(0);
        let risk_series = (0..len)
            .map(|t| {
                let xs: Vec<f64> = episodes.iter().filter_map(|e| e.risk_series.get(t).copied()).collect();
                ratio(xs.iter().sum(), xs.len() as f64)
            })
            .collect();
        Self {
            policy,
            rows,
            risk_series,
        }
    }

    pub fn stat(&self, metric: &str) -> Option<&MetricStat> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| &r.stat)
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.stat(metric).map(|s| s.mean).unwrap_or(f64::NAN)
    }
}

/// Seed-aggregated metrics for every policy in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSet {
    pub config_hash: String,
    pub master_seed: u64,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyMetrics>,
}

impl MetricsSet {
    pub fn policy(&self, label: &str) -> Option<&PolicyMetrics> {
        self.policies.iter().find(|p| p.policy == label)
    }

    /// Rates within `[0, 1]` and latency quantiles ordered per class.
    pub fn check(&self) -> Result<(), String> {
        for p in &self.policies {
            for r in &p.rows {
                let rate = r.metric.starts_with("sla_rate")
                    || r.metric.starts_with("qosec_rate")
                    || r.metric.ends_with("_share")
                    || r.metric.contains("_share.");
                if rate && !(0.0..=1.0 + 1e-12).contains(&r.stat.mean) {
                    return Err(format!("{} {} = {} outside [0, 1]", p.policy, r.metric, r.stat.mean));
                }
                if let Some(id) = r.metric.strip_prefix("latency_p50.") {
                    let (a, b, c) = (
                        r.stat.mean,
                        p.mean(&format!("latency_p95.{id}")),
                        p.mean(&format!("latency_p99.{id}")),
                    );
                    if !(a <= b && b <= c) {
                        return Err(format!("{} latency quantiles of {id} not ordered: {a} {b} {c}", p.policy));
                    }
                }
            }
        }
        Ok(())
    }

    /// One row per policy and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config_hash,master_seed,policy,metric,mean,ci_low,ci_high,n,degenerate\n");
        for p in &self.policies {
            for r in &p.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    self.config_hash,
                    self.master_seed,
                    p.policy,
                    r.metric,
                    r.stat.mean,
                    r.stat.ci_low,
                    r.stat.ci_high,
                    r.stat.n,
                    r.stat.degenerate
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_quantiles_pick_the_crossing_value() {
        let s = [(3.0, 1.0), (1.0, 1.0), (2.0, 2.0), (9.0, 0.0)];
        assert_eq!(latency_quantiles(&s, &[0.25, 0.5, 0.75, 1.0]), vec![1.0, 2.0, 2.0, 3.0]);
        assert_eq!(latency_quantiles(&[], &[0.5]), vec![0.0]);
    }

    #[test]
    fn t_interval_matches_table_value() {
        // t(0.975, 4) = 2.776445...
        let s = t_interval(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let half = 2.7764451051977987 * (2.5f64 / 5.0).sqrt();
        assert!((s.ci_high - 3.0 - half).abs() < 1e-9);
        assert!(!s.degenerate);
        let one = t_interval(&[7.0]);
        assert!(one.degenerate && one.ci_low == 7.0 && one.ci_high == 7.0);
    }
}
