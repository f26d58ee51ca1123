//! Configuration types, validation, and the bundled default scenario.

mod types;

use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use types::*;

const DEFAULT_CONFIG: &str = include_str!("../../config/default.json");

/// Classes that regulation binds to information-theoretic authentication.
pub const COMPLIANCE_BOUND_CLASSES: [&str; 2] = ["M1", "M4"];

/// A configuration that passed every check, plus resolved cross-references.
///
/// Immutable once built; share it freely between episode runners.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    config: Config,
    node_domain: Vec<usize>,
    link_ends: Vec<(usize, usize)>,
    /// Domains whose transit cap a link counts against.
    link_domains: Vec<Vec<usize>>,
    /// Per class: nodes terminating it.
    class_nodes: Vec<Vec<usize>>,
    hash: String,
}

impl ValidatedModel {
    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn classes(&self) -> &[MessageClassSpec] {
        &self.config.classes
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.config.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.config.links
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.config.domains
    }

    pub fn crypto(&self) -> &CryptoParams {
        &self.config.crypto
    }

    pub fn queue(&self) -> &QueueParams {
        &self.config.queue
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.config.weights
    }

    pub fn sim(&self) -> &SimParams {
        &self.config.sim
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn node_domain(&self, node: usize) -> usize {
        self.node_domain[node]
    }

    pub fn link_ends(&self) -> &[(usize, usize)] {
        &self.link_ends
    }

    pub fn link_domains(&self) -> &[Vec<usize>] {
        &self.link_domains
    }

    pub fn class_nodes(&self, class: usize) -> &[usize] {
        &self.class_nodes[class]
    }

    /// Whether `class` is bound to the strict compliance rules.
    pub fn is_compliance_bound(&self, class: usize) -> bool {
        let c = &self.config.classes[class];
        c.forbid_s3 || c.min_tag_bits > 0
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("config serializes")
    }

    /// Same model with a different configuration, revalidated.
    pub fn with_config(&self, f: impl FnOnce(&mut Config)) -> Result<Self> {
        let mut cfg = self.config.clone();
        f(&mut cfg);
        validate(cfg)
    }
}

/// Parses and validates a JSON configuration document.
pub fn validate_config(raw: &str) -> Result<ValidatedModel> {
    let cfg: Config = serde_json::from_str(raw).map_err(|e| Error::Parse(e.to_string()))?;
    validate(cfg)
}

/// The bundled 16-node, 28-link, five-class testbed.
pub fn default_model() -> ValidatedModel {
    validate_config(DEFAULT_CONFIG).expect("bundled config is valid")
}

pub fn default_config_json() -> &'static str {
    DEFAULT_CONFIG
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invariant(field, "must be finite and >= 0"))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invariant(field, "must be finite and > 0"))
    }
}

fn prob(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invariant(field, "must lie in [0, 1]"))
    }
}

fn unique<'a>(kind: &str, ids: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::invariant(kind, format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

/// Runs every invariant and cross-reference check.
pub fn validate(cfg: Config) -> Result<ValidatedModel> {
    if cfg.classes.is_empty() {
        return Err(Error::invariant("classes", "at least one class required"));
    }
    if cfg.nodes.is_empty() {
        return Err(Error::invariant("nodes", "at least one node required"));
    }
    unique("classes", cfg.classes.iter().map(|c| &c.id))?;
    unique("nodes", cfg.nodes.iter().map(|n| &n.id))?;
    unique("domains", cfg.domains.iter().map(|d| &d.id))?;

    check_crypto(&cfg.crypto)?;
    check_queue(&cfg.queue)?;
    check_weights(&cfg.weights)?;
    check_sim(&cfg.sim)?;

    let domain_index: HashMap<&str, usize> = cfg
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let node_index: HashMap<&str, usize> = cfg
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();

    for d in &cfg.domains {
        nonneg("transit_cap_per_slot", d.transit_cap_per_slot)?;
        nonneg("alloc_quota_per_slot", d.alloc_quota_per_slot)?;
    }

    let mut node_domain = Vec::with_capacity(cfg.nodes.len());
    for n in &cfg.nodes {
        if n.pool_cap == 0 {
            return Err(Error::invariant("pool_cap", "must be > 0"));
        }
        if n.ttl_slots < 1 {
            return Err(Error::invariant("ttl_slots", "must be >= 1"));
        }
        if n.initial_bits > n.pool_cap {
            return Err(Error::invariant("initial_bits", "must not exceed pool_cap"));
        }
        nonneg("key_margin_mult", n.key_margin_mult)?;
        let d = domain_index
            .get(n.domain.as_str())
            .ok_or_else(|| Error::DanglingRef {
                kind: "domain",
                id: n.domain.clone(),
            })?;
        node_domain.push(*d);
    }

    let mut link_ends = Vec::with_capacity(cfg.links.len());
    let mut link_domains = Vec::with_capacity(cfg.links.len());
    for l in &cfg.links {
        let resolve = |id: &String| {
            node_index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::DanglingRef {
                    kind: "node",
                    id: id.clone(),
                })
        };
        let (u, v) = (resolve(&l.from)?, resolve(&l.to)?);
        if u == v {
            return Err(Error::invariant("links", "self-loop"));
        }
        nonneg("yield_max", l.yield_max)?;
        nonneg("env_sensitivity", l.env_sensitivity)?;
        prob("qber_base", l.qber_base)?;
        if !(l.qber_threshold > 0.0 && l.qber_threshold <= 0.5) {
            return Err(Error::invariant("qber_threshold", "must lie in (0, 0.5]"));
        }
        link_ends.push((u, v));
        let (du, dv) = (node_domain[u], node_domain[v]);
        link_domains.push(if du == dv { vec![du] } else { vec![du, dv] });
    }

    let mut class_nodes = Vec::with_capacity(cfg.classes.len());
    for c in &cfg.classes {
        check_class(c, &cfg.crypto)?;
        let mut ns = Vec::with_capacity(c.nodes.len());
        for id in &c.nodes {
            let u = node_index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::DanglingRef {
                    kind: "node",
                    id: id.clone(),
                })?;
            ns.push(u);
        }
        class_nodes.push(ns);
    }

    if cfg.sim.strict_compliance {
        for c in &cfg.classes {
            if COMPLIANCE_BOUND_CLASSES.contains(&c.id.as_str()) {
                if !c.forbid_s3 {
                    return Err(Error::invariant(
                        "forbid_s3",
                        format!("class {} must forbid S3 under strict compliance", c.id),
                    ));
                }
                if c.min_tag_bits < cfg.crypto.compliance_min_tag_bits {
                    return Err(Error::invariant(
                        "min_tag_bits",
                        format!(
                            "class {} needs at least {} tag bits under strict compliance",
                            c.id, cfg.crypto.compliance_min_tag_bits
                        ),
                    ));
                }
            }
        }
    }

    let hash = {
        let canonical = serde_json::to_string(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    };

    Ok(ValidatedModel {
        config: cfg,
        node_domain,
        link_ends,
        link_domains,
        class_nodes,
        hash,
    })
}

fn check_crypto(p: &CryptoParams) -> Result<()> {
    nonneg("iv_bits", p.iv_bits)?;
    nonneg("session_key_bits", p.session_key_bits)?;
    nonneg("comp_tag_bits", p.comp_tag_bits)?;
    nonneg("mac_len_slope", p.mac_len_slope)?;
    nonneg("adv_scale_aes", p.adv_scale_aes)?;
    nonneg("adv_scale_mac", p.adv_scale_mac)?;
    nonneg("adv_sec_level", p.adv_sec_level)?;
    positive("a_max", p.a_max)?;
    if !(0.0..1.0).contains(&p.impl_epsilon) {
        return Err(Error::invariant("impl_epsilon", "must lie in [0, 1)"));
    }
    if p.mac_len_cap > 256 {
        return Err(Error::invariant("mac_len_cap", "must be <= 256"));
    }
    if p.r_max < 1 {
        return Err(Error::invariant("r_max", "must be >= 1"));
    }
    Ok(())
}

fn check_queue(q: &QueueParams) -> Result<()> {
    positive("bandwidth_bits_per_slot", q.bandwidth_bits_per_slot)?;
    nonneg("ca2", q.ca2)?;
    nonneg("cs2", q.cs2)?;
    nonneg("enc_cost_per_bit", q.enc_cost_per_bit)?;
    nonneg("ver_cost_per_bit", q.ver_cost_per_bit)?;
    nonneg("fixed_crypto_overhead", q.fixed_crypto_overhead)?;
    nonneg("header_bits", q.header_bits)?;
    nonneg("net_propagation", q.net_propagation)
}

fn check_weights(w: &ObjectiveWeights) -> Result<()> {
    for (name, v) in [
        ("budget_hinge", w.budget_hinge),
        ("smooth_weight", w.smooth_weight),
        ("smooth_a", w.smooth_a),
        ("smooth_r", w.smooth_r),
        ("smooth_x", w.smooth_x),
        ("prox_a", w.prox_a),
        ("prox_r", w.prox_r),
        ("prox_lr", w.prox_lr),
        ("prox_max_step", w.prox_max_step),
        ("online_dual_step", w.online_dual_step),
        ("terminal_key_value", w.terminal_key_value),
        ("reserve_margin", w.reserve_margin),
        ("dual_step_schedule.initial", w.dual_step_schedule.initial),
        ("dual_step_schedule.decay", w.dual_step_schedule.decay),
    ] {
        nonneg(name, v)?;
    }
    if !(0.0..1.0).contains(&w.explore_fraction) {
        return Err(Error::invariant("explore_fraction", "must lie in [0, 1)"));
    }
    if !(w.lcb_quantile > 0.0 && w.lcb_quantile < 1.0) {
        return Err(Error::invariant("lcb_quantile", "must lie in (0, 1)"));
    }
    positive("variance_halflife", w.variance_halflife)?;
    positive("belief_prior_strength", w.belief_prior_strength)?;
    if !(w.belief_forgetting > 0.0 && w.belief_forgetting <= 1.0) {
        return Err(Error::invariant("belief_forgetting", "must lie in (0, 1]"));
    }
    Ok(())
}

fn check_sim(s: &SimParams) -> Result<()> {
    positive("slot_seconds", s.slot_seconds)?;
    if s.lookahead < 1 {
        return Err(Error::invariant("lookahead", "must be >= 1"));
    }
    if s.scenario_count < 1 {
        return Err(Error::invariant("scenario_count", "must be >= 1"));
    }
    if s.plan_iters < 1 {
        return Err(Error::invariant("plan_iters", "must be >= 1"));
    }
    if s.traffic.diurnal.len() != 24 {
        return Err(Error::invariant("diurnal", "needs 24 hourly entries"));
    }
    for &v in &s.traffic.diurnal {
        nonneg("diurnal", v)?;
    }
    for w in &s.traffic.peak_windows {
        nonneg("peak_windows.amp", w.amp)?;
        if !(0.0..=24.0).contains(&w.start_hour) || !(0.0..=24.0).contains(&w.end_hour) {
            return Err(Error::invariant("peak_windows", "hours must lie in [0, 24]"));
        }
    }
    let a = &s.attack;
    nonneg("drift_amp", a.drift_amp)?;
    prob("pulse_rate", a.pulse_rate)?;
    nonneg("peak_sync", a.peak_sync)?;
    positive("pareto_shape", a.pareto_shape)?;
    positive("pareto_scale", a.pareto_scale)?;
    prob("magnitude_lo", a.magnitude_lo)?;
    prob("magnitude_hi", a.magnitude_hi)?;
    if a.magnitude_lo > a.magnitude_hi {
        return Err(Error::invariant("magnitude_lo", "must not exceed magnitude_hi"));
    }
    nonneg("q_base", a.q_base)?;
    nonneg("q_pulse", a.q_pulse)?;
    nonneg("tau_cap", a.tau_cap)?;
    prob("weather_trigger", a.weather_trigger)?;
    nonneg("peak_amp", a.peak_amp)?;
    let w = &s.weather;
    if !(0.0..1.0).contains(&w.ar_coef) {
        return Err(Error::invariant("ar_coef", "must lie in [0, 1)"));
    }
    nonneg("noise_sd", w.noise_sd)?;
    nonneg("shocks_per_episode", w.shocks_per_episode)?;
    nonneg("shock_severity_lo", w.shock_severity_lo)?;
    if w.shock_severity_lo > w.shock_severity_hi {
        return Err(Error::invariant("shock_severity_lo", "must not exceed shock_severity_hi"));
    }
    if w.shock_slots_lo > w.shock_slots_hi {
        return Err(Error::invariant("shock_slots_lo", "must not exceed shock_slots_hi"));
    }
    nonneg("maintenance_rate", w.maintenance_rate)?;
    prob("degraded_frac", w.degraded_frac)?;
    nonneg("snr_sd", w.snr_sd)?;
    nonneg("forecast_noise_sd", w.forecast_noise_sd)?;
    for sh in &w.scripted_shocks {
        if sh.start_slot > sh.end_slot {
            return Err(Error::invariant("scripted_shocks", "start_slot after end_slot"));
        }
        nonneg("scripted_shocks.severity", sh.severity)?;
        prob("scripted_shocks.attack_magnitude", sh.attack_magnitude)?;
    }
    Ok(())
}

fn check_class(c: &MessageClassSpec, crypto: &CryptoParams) -> Result<()> {
    nonneg("lambda_base", c.lambda_base)?;
    positive("payload_bits", c.payload_bits)?;
    positive("sla_delay", c.sla_delay)?;
    nonneg("unit_loss", c.unit_loss)?;
    nonneg("sla_weight", c.sla_weight)?;
    nonneg("recovery_weight", c.recovery_weight)?;
    nonneg("relax_cap", c.relax_cap)?;
    nonneg("delay_margin_mult", c.delay_margin_mult)?;
    prob("attack_baseline", c.attack_baseline)?;
    if let Some(cap) = c.qosec_cap {
        prob("qosec_cap", cap)?;
    }
    if c.nodes.is_empty() {
        return Err(Error::invariant("class.nodes", "at least one terminating node"));
    }
    if c.a_grid.is_empty() || c.r_grid.is_empty() {
        return Err(Error::invariant("a_grid", "grids must be nonempty"));
    }
    if c.a_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invariant("a_grid", "must be strictly ascending"));
    }
    if c.r_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invariant("r_grid", "must be strictly ascending"));
    }
    if c.a_grid[0] < 0.0 || *c.a_grid.last().unwrap() > crypto.a_max {
        return Err(Error::invariant("a_grid", "values must lie in [0, a_max]"));
    }
    if c.r_grid[0] < 1 || *c.r_grid.last().unwrap() > crypto.r_max {
        return Err(Error::invariant("r_grid", "values must lie in [1, r_max]"));
    }
    let top = crate::crypto::mac_len_clamped(*c.a_grid.last().unwrap(), crypto);
    if top < c.min_tag_bits {
        return Err(Error::invariant(
            "min_tag_bits",
            format!("class {} cannot reach its tag floor on its a_grid", c.id),
        ));
    }
    if c.forbid_s3 && c.static_strategy == Strategy::AesMac {
        return Err(Error::invariant("static_strategy", "S3 on a class that forbids it"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_shape() {
        let m = default_model();
        assert_eq!(m.classes().len(), 5);
        assert_eq!(m.nodes().len(), 16);
        assert_eq!(m.links().len(), 28);
        assert_eq!(m.domains().len(), 3);
    }

    #[test]
    fn default_config_compliance_classes() {
        let m = default_model();
        let lmin = m.crypto().compliance_min_tag_bits;
        for id in COMPLIANCE_BOUND_CLASSES {
            let c = m.classes().iter().find(|c| c.id == id).unwrap();
            assert!(c.forbid_s3);
            assert!(c.min_tag_bits >= lmin);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let m = default_model();
        let err = m
            .with_config(|c| c.classes[0].lambda_base = -1.0)
            .unwrap_err();
        assert!(matches!(err, Error::Invariant { ref field, .. } if field == "lambda_base"));
    }

    #[test]
    fn m4_allowing_s3_rejected_under_strict_mode() {
        let m = default_model();
        let err = m
            .with_config(|c| {
                let m4 = c.classes.iter_mut().find(|k| k.id == "M4").unwrap();
                m4.forbid_s3 = false;
            })
            .unwrap_err();
        assert!(matches!(err, Error::Invariant { ref field, .. } if field == "forbid_s3"));

        let relaxed = m.with_config(|c| {
            c.sim.strict_compliance = false;
            let m4 = c.classes.iter_mut().find(|k| k.id == "M4").unwrap();
            m4.forbid_s3 = false;
        });
        assert!(relaxed.is_ok());
    }

    #[test]
    fn dangling_domain_and_node() {
        let m = default_model();
        let err = m.with_config(|c| c.nodes[0].domain = "nowhere".into()).unwrap_err();
        assert_eq!(
            err,
            Error::DanglingRef {
                kind: "domain",
                id: "nowhere".into()
            }
        );
        let err = m.with_config(|c| c.links[3].to = "ghost".into()).unwrap_err();
        assert!(matches!(err, Error::DanglingRef { kind: "node", .. }));
    }

    #[test]
    fn malformed_and_unknown_keys_are_parse_errors() {
        assert!(matches!(validate_config("{ not json"), Err(Error::Parse(_))));
        let mut v: serde_json::Value = serde_json::from_str(default_config_json()).unwrap();
        v["crypto"]["surprise"] = serde_json::json!(1);
        assert!(matches!(
            validate_config(&v.to_string()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn validation_is_idempotent() {
        let m = default_model();
        let again = validate_config(&m.to_json()).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.config_hash(), again.config_hash());
    }

    #[test]
    fn hash_tracks_content() {
        let m = default_model();
        let other = m.with_config(|c| c.seed += 1).unwrap();
        assert_ne!(m.config_hash(), other.config_hash());
        assert_eq!(m.config_hash().len(), 64);
    }

    #[test]
    fn range_rules() {
        let m = default_model();
        assert!(m.with_config(|c| c.crypto.impl_epsilon = 1.0).is_err());
        assert!(m.with_config(|c| c.crypto.mac_len_cap = 300).is_err());
        assert!(m.with_config(|c| c.nodes[2].pool_cap = 0).is_err());
        assert!(m.with_config(|c| c.nodes[2].ttl_slots = 0).is_err());
        assert!(m.with_config(|c| c.domains[0].alloc_quota_per_slot = -1.0).is_err());
        assert!(m.with_config(|c| c.classes[1].payload_bits = 0.0).is_err());
        assert!(m.with_config(|c| c.classes[1].sla_delay = 0.0).is_err());
    }
}
