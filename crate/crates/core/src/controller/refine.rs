//! Continuous refinement of the auth knob and refresh interval.

use crate::crypto::{
    key_cost, mac_len_relaxed_slope, residual_grad_a, residual_success, risk_from_rho, AttackContext,
};
use crate::error::{Error, Result};
use crate::model::{MessageClassSpec, StrategyColumn, ValidatedModel};
use crate::queueing::{end_to_end_delay, NetSlotState};

/// Slot terms the refinement objective depends on.
#[derive(Debug, Clone, Copy)]
pub struct LocalTerms<'a> {
    pub ctx: &'a AttackContext,
    /// Per-bit key price (pool price plus the class premium).
    pub price: f64,
    /// Messages per slot.
    pub lambda: f64,
    pub util: f64,
    pub net: &'a NetSlotState,
}

/// Lowest knob meeting the class's minimum tag.
pub fn a_floor(class: &MessageClassSpec, model: &ValidatedModel) -> f64 {
    let c = model.crypto();
    if c.mac_len_slope > 0.0 {
        (class.min_tag_bits as f64 / c.mac_len_slope).min(c.a_max)
    } else {
        0.0
    }
}

/// One projected proximal step on `a`.
///
/// The gradient terms (risk, priced key use, latency hinge) are normalized by
/// their total magnitude so the step length is `prox_lr * a_max` whatever
/// the scale of the risk; the proximal pull towards `prev_a` is then applied
/// in closed form and the move is clipped to `prox_max_step`.
pub fn proximal_a_step(
    model: &ValidatedModel,
    class: &MessageClassSpec,
    col: &StrategyColumn,
    t: &LocalTerms,
    prev_a: f64,
) -> Result<f64> {
    if !col.strategy.uses_auth_knob() {
        return Err(Error::WrongStrategy(col.strategy.label()));
    }
    let c = model.crypto();
    let q = model.queue();
    let w = model.weights();
    let a = col.auth_knob;
    let slope = mac_len_relaxed_slope(a, c);

    let risk_grad = t.ctx.attempt_prob * class.unit_loss * t.ctx.context_amp * residual_grad_a(col, c);
    let key_grad = t.price * t.lambda * slope;
    let delay = end_to_end_delay(class, col, t.util, t.net, q, c);
    let lat_grad = if delay.seconds > class.sla_delay && !delay.saturated && t.util < 1.0 {
        let d_service = (1.0 / t.net.bandwidth_bits_per_sec + q.enc_cost_per_bit + q.ver_cost_per_bit) * slope;
        class.sla_weight * t.util / (1.0 - t.util) * (q.ca2 + q.cs2) / 2.0 * d_service
    } else {
        0.0
    };
    let scale = risk_grad.abs() + key_grad.abs() + lat_grad.abs();
    let dir = if scale > 0.0 {
        (risk_grad + key_grad + lat_grad) / scale
    } else {
        0.0
    };
    let moved = a - w.prox_lr * c.a_max * dir;
    let prox = (moved + w.prox_a * prev_a) / (1.0 + w.prox_a);
    let step = (prox - a).clamp(-w.prox_max_step, w.prox_max_step);
    let lo = a_floor(class, model);
    Ok((a + step).clamp(lo, c.a_max))
}

/// Exhaustive search over the class refresh grid, ties to the smaller `r`.
pub fn coordinate_r_search(
    model: &ValidatedModel,
    class: &MessageClassSpec,
    col: &StrategyColumn,
    t: &LocalTerms,
    prev_r: u32,
) -> Result<u32> {
    if !col.strategy.uses_refresh() {
        return Err(Error::WrongStrategy(col.strategy.label()));
    }
    let c = model.crypto();
    let w = model.weights();
    let r_max = c.r_max.max(1) as f64;
    let mut best = (f64::INFINITY, col.refresh);
    for &r in &class.r_grid {
        let cand = StrategyColumn::new(col.strategy, col.auth_knob, r);
        let risk = risk_from_rho(class, t.ctx, residual_success(&cand, t.ctx, c));
        let keys = t.price * t.lambda * key_cost(class, &cand, c);
        let dr = (r as f64 - prev_r as f64) / r_max;
        let obj = risk + keys + w.prox_r * w.smooth_weight * dr * dr;
        if obj < best.0 {
            best = (obj, r);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_model, Strategy};

    fn net() -> NetSlotState {
        NetSlotState {
            bandwidth_bits_per_sec: 1.5e5,
            arrival_rates: vec![1.0; 5],
            net_propagation: 0.02,
        }
    }

    #[test]
    fn a_step_examples() {
        let mut m = default_model();
        m = m
            .with_config(|c| {
                c.weights.prox_a = 0.5;
            })
            .unwrap();
        let class = m.classes()[1].clone();
        let net = net();
        let quiet = AttackContext::new(0.0, 0.0, 1.0, 0.0);
        let col = StrategyColumn::new(Strategy::AesWc, 80.0, 8);
        let t = LocalTerms {
            ctx: &quiet,
            price: 0.0,
            lambda: 10.0,
            util: 0.1,
            net: &net,
        };
        assert_eq!(proximal_a_step(&m, &class, &col, &t, 80.0).unwrap(), 80.0);

        let hot = AttackContext::new(0.5, 4096.0, 1.0, 1.0);
        let t = LocalTerms { ctx: &hot, ..t };
        let a = proximal_a_step(&m, &class, &col, &t, 80.0).unwrap();
        assert!(a > 80.0);

        let top = StrategyColumn::new(Strategy::OtpWc, 127.0, 1);
        let a = proximal_a_step(&m, &class, &top, &t, 127.0).unwrap();
        assert_eq!(a, m.crypto().a_max);

        let s3 = StrategyColumn::new(Strategy::AesMac, 0.0, 8);
        assert!(matches!(
            proximal_a_step(&m, &class, &s3, &t, 0.0),
            Err(Error::WrongStrategy(_))
        ));
    }

    #[test]
    fn priced_keys_pull_a_down() {
        let m = default_model();
        let class = m.classes()[1].clone();
        let net = net();
        let ctx = AttackContext::new(0.01, 4096.0, 1.0, 0.5);
        let col = StrategyColumn::new(Strategy::AesWc, 96.0, 32);
        let t = LocalTerms {
            ctx: &ctx,
            price: 1e-6,
            lambda: 30.0,
            util: 0.1,
            net: &net,
        };
        let a = proximal_a_step(&m, &class, &col, &t, 96.0).unwrap();
        assert!(a < 96.0);
        assert!(96.0 - a <= m.weights().prox_max_step + 1e-12);
    }

    #[test]
    fn r_search_examples() {
        let m = default_model();
        let class = m.classes()[1].clone();
        let net = net();
        let ctx = AttackContext::new(0.2, 1e6, 5.0, 1.0);
        let col = StrategyColumn::new(Strategy::AesWc, 64.0, 4);
        let mut t = LocalTerms {
            ctx: &ctx,
            price: 0.0,
            lambda: 30.0,
            util: 0.1,
            net: &net,
        };
        assert_eq!(coordinate_r_search(&m, &class, &col, &t, 4).unwrap(), 32);
        // Larger refresh is also cheaper in key bits, so a huge price keeps r at the top.
        t.price = 1e9;
        assert_eq!(coordinate_r_search(&m, &class, &col, &t, 4).unwrap(), 32);
        let s1 = StrategyColumn::new(Strategy::OtpWc, 64.0, 1);
        assert!(coordinate_r_search(&m, &class, &s1, &t, 1).is_err());
    }

    #[test]
    fn r_search_ties_prefer_small_r() {
        let m = default_model();
        let class = m.classes()[1].clone();
        let net = net();
        let ctx = AttackContext::new(0.0, 0.0, 1.0, 0.0);
        let col = StrategyColumn::new(Strategy::AesMac, 0.0, 8);
        let t = LocalTerms {
            ctx: &ctx,
            price: 0.0,
            lambda: 30.0,
            util: 0.1,
            net: &net,
        };
        let w = m.weights().clone();
        let m0 = m.with_config(|c| c.weights = crate::model::ObjectiveWeights { prox_r: 0.0, ..w }).unwrap();
        assert_eq!(coordinate_r_search(&m0, &class, &col, &t, 8).unwrap(), 1);
    }
}
