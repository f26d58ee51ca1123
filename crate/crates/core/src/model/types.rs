//! Configuration and domain types.
//!
//! Every struct here doubles as the on-disk JSON schema. Unknown keys are
//! rejected so that typos surface as parse errors instead of silently
//! falling back to defaults.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Security strategy of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// One-time pad + Wegman-Carter authentication.
    #[serde(rename = "S1")]
    OtpWc,
    /// AES + Wegman-Carter authentication.
    #[serde(rename = "S2")]
    AesWc,
    /// AES + computational MAC.
    #[serde(rename = "S3")]
    AesMac,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::OtpWc, Strategy::AesWc, Strategy::AesMac];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::OtpWc => "S1",
            Strategy::AesWc => "S2",
            Strategy::AesMac => "S3",
        }
    }

    /// Whether the auth knob changes the column (WC tag present).
    pub fn uses_auth_knob(self) -> bool {
        !matches!(self, Strategy::AesMac)
    }

    /// Whether the refresh interval changes the column (session key present).
    pub fn uses_refresh(self) -> bool {
        !matches!(self, Strategy::OtpWc)
    }

    pub fn index(self) -> usize {
        match self {
            Strategy::OtpWc => 0,
            Strategy::AesWc => 1,
            Strategy::AesMac => 2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One concrete `(strategy, auth knob, refresh)` configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyColumn {
    pub strategy: Strategy,
    pub auth_knob: f64,
    pub refresh: u32,
}

impl StrategyColumn {
    pub fn new(strategy: Strategy, auth_knob: f64, refresh: u32) -> Self {
        Self {
            strategy,
            auth_knob,
            refresh,
        }
    }

    /// Drops the knobs the strategy ignores so that equivalent columns
    /// compare equal.
    pub fn canonical(self) -> Self {
        Self {
            strategy: self.strategy,
            auth_knob: if self.strategy.uses_auth_knob() {
                self.auth_knob
            } else {
                0.0
            },
            refresh: if self.strategy.uses_refresh() {
                self.refresh
            } else {
                1
            },
        }
    }

    /// Bitwise identity of the canonical form, usable as a hash key.
    pub fn key(self) -> (Strategy, u64, u32) {
        let c = self.canonical();
        (c.strategy, c.auth_knob.to_bits(), c.refresh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageClassSpec {
    pub id: String,
    /// Mean arrivals per slot before diurnal and peak shaping.
    pub lambda_base: f64,
    pub payload_bits: f64,
    /// SLA bound on end-to-end delay, seconds.
    pub sla_delay: f64,
    /// Loss per successful attack, currency.
    pub unit_loss: f64,
    /// Hinge weight on SLA excess, currency per second.
    pub sla_weight: f64,
    /// Minimum WC tag length; 0 when unconstrained.
    pub min_tag_bits: u32,
    pub forbid_s3: bool,
    /// Cap on the residual success bound, if the class carries one.
    pub qosec_cap: Option<f64>,
    pub recovery_weight: f64,
    /// Largest demand relief (bits/slot) feasibility recovery may impose.
    pub relax_cap: f64,
    /// Chance-margin multiplier on the delay forecast deviation.
    pub delay_margin_mult: f64,
    /// Baseline attack-attempt probability per slot.
    pub attack_baseline: f64,
    /// Fixed-priority rank for the greedy comparator (1 = served first).
    pub priority: u32,
    /// Strategy used by the static comparator.
    pub static_strategy: Strategy,
    /// Nodes that terminate this class; demand splits evenly.
    pub nodes: Vec<String>,
    /// Candidate auth-knob grid (ascending).
    pub a_grid: Vec<f64>,
    /// Candidate refresh grid (ascending).
    pub r_grid: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoParams {
    pub iv_bits: f64,
    pub session_key_bits: f64,
    pub comp_tag_bits: f64,
    pub impl_epsilon: f64,
    pub mac_len_slope: f64,
    pub mac_len_cap: u32,
    pub adv_scale_aes: f64,
    pub adv_scale_mac: f64,
    pub adv_sec_level: f64,
    pub a_max: f64,
    pub r_max: u32,
    /// Tag floor imposed on compliance-bound classes.
    pub compliance_min_tag_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub domain: String,
    pub pool_cap: u64,
    pub ttl_slots: u32,
    pub initial_bits: u64,
    /// Chance-margin multiplier on the key-supply forecast deviation.
    pub key_margin_mult: f64,
}

/// A QKD link. Its yield is credited to the `to` node; it carries routed
/// key in either direction up to the same yield.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    /// Secret-key yield under perfect conditions, bits/slot.
    pub yield_max: f64,
    pub qber_base: f64,
    pub qber_threshold: f64,
    pub env_sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: String,
    pub transit_cap_per_slot: f64,
    pub alloc_quota_per_slot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueParams {
    pub bandwidth_bits_per_slot: f64,
    pub ca2: f64,
    pub cs2: f64,
    pub enc_cost_per_bit: f64,
    pub ver_cost_per_bit: f64,
    pub fixed_crypto_overhead: f64,
    pub header_bits: f64,
    pub net_propagation: f64,
}

/// `gamma_n = initial * (n + 1)^(-decay)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl StepSchedule {
    pub fn step(&self, n: usize) -> f64 {
        self.initial * ((n + 1) as f64).powf(-self.decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub budget_hinge: f64,
    pub smooth_weight: f64,
    pub smooth_a: f64,
    pub smooth_r: f64,
    pub smooth_x: f64,
    pub prox_a: f64,
    pub prox_r: f64,
    /// Step length of the proximal update on the auth knob.
    pub prox_lr: f64,
    /// Largest move of the auth knob per slot.
    pub prox_max_step: f64,
    pub dual_step_schedule: StepSchedule,
    pub online_dual_step: f64,
    pub terminal_key_value: f64,
    pub explore_fraction: f64,
    pub lcb_quantile: f64,
    pub reserve_margin: f64,
    /// Half-life (slots) of the forecast-error second moments.
    pub variance_halflife: f64,
    /// Pseudo-count weight of each class's Beta prior, centered on its
    /// attack baseline.
    pub belief_prior_strength: f64,
    /// Per-slot discount on posterior pseudo-counts; 1 keeps all history.
    pub belief_forgetting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakWindow {
    pub start_hour: f64,
    pub end_hour: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficParams {
    /// Hourly multipliers (24 entries), linearly interpolated.
    pub diurnal: Vec<f64>,
    pub peak_windows: Vec<PeakWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    pub drift_amp: f64,
    /// Pulse onsets per slot outside peak windows.
    pub pulse_rate: f64,
    /// Multiplier on the onset rate inside peak windows.
    pub peak_sync: f64,
    pub pareto_shape: f64,
    pub pareto_scale: f64,
    pub max_pulse_slots: u32,
    pub magnitude_lo: f64,
    pub magnitude_hi: f64,
    pub q_base: f64,
    pub q_pulse: f64,
    pub tau_cap: f64,
    /// Probability that a weather shock triggers a synchronized pulse.
    pub weather_trigger: f64,
    /// Amplification of loss inside peak windows.
    pub peak_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedShock {
    pub start_slot: usize,
    pub end_slot: usize,
    pub severity: f64,
    pub attack_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherParams {
    pub ar_coef: f64,
    pub noise_sd: f64,
    /// Expected number of random shocks per episode.
    pub shocks_per_episode: f64,
    pub shock_severity_lo: f64,
    pub shock_severity_hi: f64,
    pub shock_slots_lo: u32,
    pub shock_slots_hi: u32,
    /// Maintenance outages per link per episode.
    pub maintenance_rate: f64,
    pub maintenance_slots: u32,
    pub degraded_frac: f64,
    pub snr_sd: f64,
    pub forecast_noise_sd: f64,
    pub scripted_shocks: Vec<ScriptedShock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub slot_seconds: f64,
    pub horizon_slots: usize,
    pub lookahead: usize,
    pub scenario_count: usize,
    pub plan_iters: usize,
    pub strict_compliance: bool,
    pub traffic: TrafficParams,
    pub attack: AttackParams,
    pub weather: WeatherParams,
}

/// Top-level configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub classes: Vec<MessageClassSpec>,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub domains: Vec<DomainSpec>,
    pub crypto: CryptoParams,
    pub queue: QueueParams,
    pub weights: ObjectiveWeights,
    pub sim: SimParams,
    pub seed: u64,
}
