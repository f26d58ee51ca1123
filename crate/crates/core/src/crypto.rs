//! Key cost, residual attack success, and marginal security value.
//!
//! Cost and risk models only; nothing here touches real ciphers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CryptoParams, MessageClassSpec, Strategy, StrategyColumn};

/// Threat environment a class faces in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackContext {
    pub attempt_prob: f64,
    pub query_budget: f64,
    pub duration_slots: f64,
    /// Expected loss amplification, normalized into [0, 1].
    pub context_amp: f64,
}

impl AttackContext {
    pub fn new(attempt_prob: f64, query_budget: f64, duration_slots: f64, context_amp: f64) -> Self {
        Self {
            attempt_prob,
            query_budget,
            duration_slots,
            context_amp,
        }
    }
}

// Guards against `ceil` rounding up float noise like 0.1 * 30 = 3.0000000000000004.
const CEIL_SLACK: f64 = 1e-9;

/// Wegman-Carter tag length for an auth knob, rejecting knobs outside `[0, a_max]`.
pub fn mac_len(auth_knob: f64, p: &CryptoParams) -> Result<u32> {
    if !(0.0..=p.a_max).contains(&auth_knob) {
        return Err(Error::Range {
            what: "auth_knob",
            value: auth_knob,
            lo: 0.0,
            hi: p.a_max,
        });
    }
    Ok(mac_len_clamped(auth_knob, p))
}

/// Tag length with the knob clamped into the box first.
pub fn mac_len_clamped(auth_knob: f64, p: &CryptoParams) -> u32 {
    let a = auth_knob.clamp(0.0, p.a_max);
    let raw = (p.mac_len_slope * a - CEIL_SLACK).ceil().max(0.0);
    (raw as u32).min(p.mac_len_cap)
}

/// Continuous relaxation `min(cap, slope * a)` used by gradient steps.
pub fn mac_len_relaxed(auth_knob: f64, p: &CryptoParams) -> f64 {
    (p.mac_len_slope * auth_knob.clamp(0.0, p.a_max)).min(p.mac_len_cap as f64)
}

/// Derivative of the relaxed tag length in `a`.
pub fn mac_len_relaxed_slope(auth_knob: f64, p: &CryptoParams) -> f64 {
    if p.mac_len_slope * auth_knob < p.mac_len_cap as f64 {
        p.mac_len_slope
    } else {
        0.0
    }
}

/// Expected key bits per message.
pub fn key_cost(class: &MessageClassSpec, col: &StrategyColumn, p: &CryptoParams) -> f64 {
    let tag = mac_len_clamped(col.auth_knob, p) as f64;
    key_cost_with_tag(class, col, tag, p)
}

fn key_cost_with_tag(class: &MessageClassSpec, col: &StrategyColumn, tag: f64, p: &CryptoParams) -> f64 {
    let refresh = col.refresh.max(1) as f64;
    match col.strategy {
        Strategy::OtpWc => class.payload_bits + tag,
        Strategy::AesWc => p.iv_bits + tag + p.session_key_bits / refresh,
        Strategy::AesMac => p.iv_bits + p.comp_tag_bits + p.session_key_bits / refresh,
    }
}

/// Key cost under the relaxed tag length.
pub fn key_cost_relaxed(class: &MessageClassSpec, col: &StrategyColumn, p: &CryptoParams) -> f64 {
    key_cost_with_tag(class, col, mac_len_relaxed(col.auth_knob, p), p)
}

pub fn adv_aes(query_budget: f64, duration: f64, refresh: u32, p: &CryptoParams) -> f64 {
    let denom = refresh.max(1) as f64 * p.adv_sec_level.exp2();
    (p.adv_scale_aes * query_budget * duration / denom).min(1.0)
}

pub fn adv_mac(query_budget: f64, duration: f64, p: &CryptoParams) -> f64 {
    (p.adv_scale_mac * query_budget * duration / p.adv_sec_level.exp2()).min(1.0)
}

fn residual_with_tag(col: &StrategyColumn, ctx: &AttackContext, tag: f64, p: &CryptoParams) -> f64 {
    let forge = (-tag).exp2();
    let raw = match col.strategy {
        Strategy::OtpWc => forge + p.impl_epsilon,
        Strategy::AesWc => {
            forge + adv_aes(ctx.query_budget, ctx.duration_slots, col.refresh, p)
        }
        Strategy::AesMac => {
            adv_mac(ctx.query_budget, ctx.duration_slots, p) + (-p.comp_tag_bits).exp2()
        }
    };
    raw.clamp(0.0, 1.0)
}

/// Upper bound on attack success given an attempt, clamped to [0, 1].
pub fn residual_success(col: &StrategyColumn, ctx: &AttackContext, p: &CryptoParams) -> f64 {
    residual_with_tag(col, ctx, mac_len_clamped(col.auth_knob, p) as f64, p)
}

/// Residual success under the relaxed tag length.
pub fn residual_success_relaxed(col: &StrategyColumn, ctx: &AttackContext, p: &CryptoParams) -> f64 {
    residual_with_tag(col, ctx, mac_len_relaxed(col.auth_knob, p), p)
}

/// `d rho / d a` under the relaxed tag length. Zero for S3.
pub fn residual_grad_a(col: &StrategyColumn, p: &CryptoParams) -> f64 {
    if !col.strategy.uses_auth_knob() {
        return 0.0;
    }
    let tag = mac_len_relaxed(col.auth_knob, p);
    -std::f64::consts::LN_2 * (-tag).exp2() * mac_len_relaxed_slope(col.auth_knob, p)
}

/// `p * rho * loss * theta` for one slot.
pub fn expected_class_risk(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    ctx: &AttackContext,
    p: &CryptoParams,
) -> f64 {
    risk_from_rho(class, ctx, residual_success(col, ctx, p))
}

pub fn risk_from_rho(class: &MessageClassSpec, ctx: &AttackContext, rho: f64) -> f64 {
    ctx.attempt_prob * rho * class.unit_loss * ctx.context_amp
}

/// Risk reduction per additional key bit when moving `from -> to`.
pub fn msv(
    class: &MessageClassSpec,
    from: &StrategyColumn,
    to: &StrategyColumn,
    ctx: &AttackContext,
    p: &CryptoParams,
) -> Result<f64> {
    let dk = key_cost(class, to, p) - key_cost(class, from, p);
    if dk <= 0.0 {
        return Err(Error::NonpositiveDeltaCost(dk));
    }
    let drho = residual_success(from, ctx, p) - residual_success(to, ctx, p);
    Ok(ctx.attempt_prob * drho * class.unit_loss * ctx.context_amp / dk)
}

/// Hard compliance of a column for a class under a threat context.
pub fn is_compliant(
    class: &MessageClassSpec,
    col: &StrategyColumn,
    ctx: &AttackContext,
    p: &CryptoParams,
) -> bool {
    if class.forbid_s3 && col.strategy == Strategy::AesMac {
        return false;
    }
    if col.strategy.uses_auth_knob() && mac_len_clamped(col.auth_knob, p) < class.min_tag_bits {
        return false;
    }
    match class.qosec_cap {
        Some(cap) => residual_success(col, ctx, p) <= cap,
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_model;

    fn params() -> CryptoParams {
        CryptoParams {
            iv_bits: 96.0,
            session_key_bits: 256.0,
            comp_tag_bits: 128.0,
            impl_epsilon: 0.0,
            mac_len_slope: 1.0,
            mac_len_cap: 128,
            adv_scale_aes: 1.0,
            adv_scale_mac: 1.0,
            adv_sec_level: 128.0,
            a_max: 128.0,
            r_max: 32,
            compliance_min_tag_bits: 64,
        }
    }

    fn class(payload: f64) -> MessageClassSpec {
        let mut c = default_model().classes()[0].clone();
        c.payload_bits = payload;
        c
    }

    fn ctx(p: f64, q: f64, tau: f64, theta: f64) -> AttackContext {
        AttackContext::new(p, q, tau, theta)
    }

    #[test]
    fn mac_len_examples() {
        let p = params();
        assert_eq!(mac_len(0.0, &p).unwrap(), 0);
        assert_eq!(mac_len(64.2, &p).unwrap(), 65);
        assert_eq!(mac_len(64.0, &p).unwrap(), 64);
        assert!(matches!(mac_len(300.0, &p), Err(Error::Range { .. })));
        assert!(matches!(mac_len(-0.5, &p), Err(Error::Range { .. })));
        let mut q = p.clone();
        q.mac_len_slope = 0.1;
        assert_eq!(mac_len(30.0, &q).unwrap(), 3);
        q.mac_len_slope = 4.0;
        assert_eq!(mac_len(100.0, &q).unwrap(), 128);
    }

    #[test]
    fn key_cost_examples() {
        let p = params();
        let c = class(800.0);
        assert_eq!(key_cost(&c, &StrategyColumn::new(Strategy::OtpWc, 0.0, 1), &p), 800.0);
        // 96 + 64 + 256/4
        assert_eq!(key_cost(&c, &StrategyColumn::new(Strategy::AesWc, 64.0, 4), &p), 224.0);
        // 96 + 128 + 256
        assert_eq!(key_cost(&c, &StrategyColumn::new(Strategy::AesMac, 17.0, 1), &p), 480.0);
    }

    #[test]
    fn residual_examples() {
        let mut p = params();
        let col = StrategyColumn::new(Strategy::OtpWc, 32.0, 1);
        let rho = residual_success(&col, &ctx(1.0, 0.0, 0.0, 1.0), &p);
        assert_eq!(rho, 2.3283064365386963e-10);

        p.impl_epsilon = 0.01;
        let col = StrategyColumn::new(Strategy::OtpWc, 0.0, 1);
        assert_eq!(residual_success(&col, &ctx(1.0, 0.0, 0.0, 1.0), &p), 1.0);

        let p = params();
        let col = StrategyColumn::new(Strategy::AesMac, 0.0, 7);
        let rho = residual_success(&col, &ctx(1.0, 2f64.powi(20), 1.0, 1.0), &p);
        assert_eq!(rho, 2f64.powi(-108) + 2f64.powi(-128));
    }

    #[test]
    fn risk_examples() {
        let mut c = class(800.0);
        let p = params();
        // Pick a column whose rho is exactly 2^-10 so the arithmetic is exact.
        let col = StrategyColumn::new(Strategy::OtpWc, 10.0, 1);
        let rho = 2f64.powi(-10);
        c.unit_loss = 1e5;
        let base = expected_class_risk(&c, &col, &ctx(0.1, 0.0, 0.0, 1.0), &p);
        assert!((base - 0.1 * rho * 1e5).abs() < 1e-12);
        assert_eq!(expected_class_risk(&c, &col, &ctx(0.0, 0.0, 0.0, 1.0), &p), 0.0);
        let half = expected_class_risk(&c, &col, &ctx(0.1, 0.0, 0.0, 0.5), &p);
        assert!((half - base / 2.0).abs() < 1e-15);
        assert!((risk_from_rho(&c, &ctx(0.1, 0.0, 0.0, 1.0), 1e-4) - 1.0).abs() < 1e-12);
        assert!((risk_from_rho(&c, &ctx(0.1, 0.0, 0.0, 0.5), 1e-4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn msv_examples() {
        let p = params();
        let mut c = class(800.0);
        c.unit_loss = 1e5;
        let cx = ctx(0.1, 0.0, 0.0, 1.0);
        // Same rho (no risk change), higher cost.
        let from = StrategyColumn::new(Strategy::AesMac, 0.0, 2);
        let to = StrategyColumn::new(Strategy::AesMac, 0.0, 1);
        assert_eq!(msv(&c, &from, &to, &cx, &p).unwrap(), 0.0);
        assert!(matches!(
            msv(&c, &to, &from, &cx, &p),
            Err(Error::NonpositiveDeltaCost(_))
        ));
        assert!(matches!(
            msv(&c, &to, &to, &cx, &p),
            Err(Error::NonpositiveDeltaCost(_))
        ));
    }

    #[test]
    fn compliance_rules() {
        let m = default_model();
        let p = m.crypto();
        let m4 = m.classes().iter().find(|c| c.id == "M4").unwrap();
        let calm = ctx(0.01, p.adv_sec_level, 1.0, 1.0);
        assert!(!is_compliant(m4, &StrategyColumn::new(Strategy::AesMac, 0.0, 1), &calm, p));
        let weak = StrategyColumn::new(Strategy::AesWc, 0.0, 1);
        assert!(!is_compliant(m4, &weak, &calm, p));
        let strong = StrategyColumn::new(Strategy::AesWc, p.a_max, 1);
        assert!(is_compliant(m4, &strong, &calm, p));
    }

    #[test]
    fn relaxed_gradient_matches_finite_difference() {
        let p = params();
        let cx = ctx(1.0, 0.0, 0.0, 1.0);
        for a in [1.0, 5.5, 12.25, 30.0] {
            let col = StrategyColumn::new(Strategy::OtpWc, a, 1);
            let h = 1e-6;
            let up = residual_success_relaxed(&StrategyColumn { auth_knob: a + h, ..col }, &cx, &p);
            let dn = residual_success_relaxed(&StrategyColumn { auth_knob: a - h, ..col }, &cx, &p);
            let fd = (up - dn) / (2.0 * h);
            let g = residual_grad_a(&col, &p);
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-12), "a={a} fd={fd} g={g}");
        }
        assert_eq!(residual_grad_a(&StrategyColumn::new(Strategy::AesMac, 3.0, 1), &p), 0.0);
    }
}
