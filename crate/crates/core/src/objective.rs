//! Per-slot evaluation of strategy columns: key use, risk, delay.

use crate::crypto::{key_cost, residual_success, risk_from_rho, AttackContext};
use crate::model::{MessageClassSpec, Strategy, StrategyColumn, ValidatedModel};
use crate::queueing::{end_to_end_delay, utilization, Delay, NetSlotState};

/// What a column costs and protects for one class in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnTerms {
    /// Key bits per slot, `lambda * kappa`.
    pub cost: f64,
    pub rho: f64,
    /// Expected loss, `p * rho * loss * theta`.
    pub risk: f64,
    pub delay: Delay,
    /// `phi * (delay - sla)+`.
    pub latency_penalty: f64,
}

impl ColumnTerms {
    /// Risk plus the latency hinge.
    pub fn objective(&self) -> f64 {
        self.risk + self.latency_penalty
    }
}

/// Shared conditions of one slot used when scoring columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotView {
    pub ctx: Vec<AttackContext>,
    /// Messages per slot per class.
    pub lambda: Vec<f64>,
    pub net: NetSlotState,
    /// Server utilization, computed from a reference column per class.
    pub util: f64,
}

impl SlotView {
    pub fn new(model: &ValidatedModel, ctx: Vec<AttackContext>, lambda: Vec<f64>, reference: &[StrategyColumn]) -> Self {
        let q = model.queue();
        let net = NetSlotState::from_slot(
            q.bandwidth_bits_per_slot,
            &lambda,
            model.sim().slot_seconds,
            q.net_propagation,
        );
        let util = utilization(model.classes(), reference, &net, q, model.crypto());
        Self {
            ctx,
            lambda,
            net,
            util,
        }
    }

    pub fn terms(&self, model: &ValidatedModel, class: usize, col: &StrategyColumn) -> ColumnTerms {
        evaluate_column(
            model,
            &model.classes()[class],
            col,
            &self.ctx[class],
            self.lambda[class],
            self.util,
            &self.net,
        )
    }
}

pub fn evaluate_column(
    model: &ValidatedModel,
    class: &MessageClassSpec,
    col: &StrategyColumn,
    ctx: &AttackContext,
    lambda: f64,
    util: f64,
    net: &NetSlotState,
) -> ColumnTerms {
    let c = model.crypto();
    let rho = residual_success(col, ctx, c);
    let delay = end_to_end_delay(class, col, util, net, model.queue(), c);
    ColumnTerms {
        cost: lambda * key_cost(class, col, c),
        rho,
        risk: risk_from_rho(class, ctx, rho),
        delay,
        latency_penalty: class.sla_weight * (delay.seconds - class.sla_delay).max(0.0),
    }
}

/// Strategies a class may use at all.
pub fn allowed_strategies(class: &MessageClassSpec) -> impl Iterator<Item = Strategy> + '_ {
    Strategy::ALL
        .into_iter()
        .filter(move |s| !(class.forbid_s3 && *s == Strategy::AesMac))
}

/// Every grid column of a class that meets its static compliance rules
/// (strategy ban and minimum tag), in canonical form.
pub fn grid_columns(model: &ValidatedModel, class: &MessageClassSpec) -> Vec<StrategyColumn> {
    let c = model.crypto();
    let mut out = Vec::new();
    for s in allowed_strategies(class) {
        let a_vals: Vec<f64> = if s.uses_auth_knob() {
            class
                .a_grid
                .iter()
                .copied()
                .filter(|&a| crate::crypto::mac_len_clamped(a, c) >= class.min_tag_bits)
                .collect()
        } else {
            vec![0.0]
        };
        let r_vals: Vec<u32> = if s.uses_refresh() {
            class.r_grid.clone()
        } else {
            vec![1]
        };
        for &a in &a_vals {
            for &r in &r_vals {
                out.push(StrategyColumn::new(s, a, r).canonical());
            }
        }
    }
    out
}

/// Cheapest statically compliant column, ties to the lowest residual risk.
pub fn cheapest_column(model: &ValidatedModel, class: &MessageClassSpec, ctx: &AttackContext) -> StrategyColumn {
    let c = model.crypto();
    grid_columns(model, class)
        .into_iter()
        .map(|col| (key_cost(class, &col, c), residual_success(&col, ctx, c), col))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|x| x.2)
        .expect("validated classes have at least one column")
}
