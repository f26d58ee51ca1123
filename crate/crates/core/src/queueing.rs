//! Single-bottleneck delay model: serialization inflated by security
//! overhead, Kingman waiting time, and fixed crypto/network terms.

use crate::crypto::{mac_len_clamped, mac_len_relaxed};
use crate::error::{Error, Result};
use crate::model::{CryptoParams, MessageClassSpec, QueueParams, Strategy, StrategyColumn};

/// Saturated delay is this multiple of the class SLA.
pub const SATURATION_FACTOR: f64 = 10.0;

/// Shared-link conditions in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSlotState {
    pub bandwidth_bits_per_sec: f64,
    /// Per-class arrivals, messages/second.
    pub arrival_rates: Vec<f64>,
    pub net_propagation: f64,
}

impl NetSlotState {
    /// Converts a per-slot bandwidth and per-slot arrival counts into rates.
    pub fn from_slot(
        bandwidth_bits_per_slot: f64,
        arrivals_per_slot: &[f64],
        slot_seconds: f64,
        net_propagation: f64,
    ) -> Self {
        Self {
            bandwidth_bits_per_sec: bandwidth_bits_per_slot / slot_seconds,
            arrival_rates: arrivals_per_slot.iter().map(|a| a / slot_seconds).collect(),
            net_propagation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delay {
    pub seconds: f64,
    pub saturated: bool,
}

fn overhead_with_tag(col: &StrategyColumn, tag: f64, q: &QueueParams, c: &CryptoParams) -> f64 {
    match col.strategy {
        Strategy::OtpWc => q.header_bits + tag,
        Strategy::AesWc => q.header_bits + tag + c.iv_bits,
        Strategy::AesMac => q.header_bits + c.comp_tag_bits + c.iv_bits,
    }
}

/// Wire overhead of a column: header, tag, and IV where one exists.
pub fn overhead_bits(col: &StrategyColumn, q: &QueueParams, c: &CryptoParams) -> f64 {
    overhead_with_tag(col, mac_len_clamped(col.auth_knob, c) as f64, q, c)
}

fn service_time_from_bits(bits: f64, bandwidth: f64, q: &QueueParams) -> f64 {
    bits / bandwidth + (q.enc_cost_per_bit + q.ver_cost_per_bit) * bits + q.fixed_crypto_overhead
}

/// Mean service time `1 / mu` in seconds.
pub fn service_time(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    bandwidth_bits_per_sec: f64,
    q: &QueueParams,
    c: &CryptoParams,
) -> f64 {
    let bits = class.payload_bits + overhead_bits(col, q, c);
    service_time_from_bits(bits, bandwidth_bits_per_sec, q)
}

/// Service time under the relaxed tag length, for gradient use.
pub fn service_time_relaxed(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    bandwidth_bits_per_sec: f64,
    q: &QueueParams,
    c: &CryptoParams,
) -> f64 {
    let bits = class.payload_bits + overhead_with_tag(col, mac_len_relaxed(col.auth_knob, c), q, c);
    service_time_from_bits(bits, bandwidth_bits_per_sec, q)
}

/// Messages per second.
pub fn service_rate(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    state: &NetSlotState,
    q: &QueueParams,
    c: &CryptoParams,
) -> f64 {
    1.0 / service_time(class, col, state.bandwidth_bits_per_sec, q, c)
}

/// Mean GI/G/1 queue wait.
pub fn kingman_wait(util: f64, ca2: f64, cs2: f64, mu: f64) -> Result<f64> {
    if util >= 1.0 || util.is_nan() {
        return Err(Error::Unstable(util));
    }
    if util <= 0.0 {
        return Ok(0.0);
    }
    Ok((util / (1.0 - util)) * ((ca2 + cs2) / 2.0) * (1.0 / mu))
}

/// Aggregate utilization of the shared server given every class's column.
pub fn utilization(
    classes: &[MessageClassSpec],
    cols: &[StrategyColumn],
    state: &NetSlotState,
    q: &QueueParams,
    c: &CryptoParams,
) -> f64 {
    classes
        .iter()
        .zip(cols)
        .zip(&state.arrival_rates)
        .map(|((k, col), lam)| lam * service_time(k, col, state.bandwidth_bits_per_sec, q, c))
        .sum()
}

/// Wait plus fixed crypto overhead plus network time; saturates at
/// `SATURATION_FACTOR * sla` when the queue is unstable.
pub fn end_to_end_delay(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    util: f64,
    state: &NetSlotState,
    q: &QueueParams,
    c: &CryptoParams,
) -> Delay {
    let mu = service_rate(class, col, state, q, c);
    match kingman_wait(util, q.ca2, q.cs2, mu) {
        Ok(w) => {
            let seconds = w + q.fixed_crypto_overhead + state.net_propagation;
            let cap = SATURATION_FACTOR * class.sla_delay;
            Delay {
                seconds: seconds.min(cap),
                saturated: seconds >= cap,
            }
        }
        Err(_) => Delay {
            seconds: SATURATION_FACTOR * class.sla_delay,
            saturated: true,
        },
    }
}
