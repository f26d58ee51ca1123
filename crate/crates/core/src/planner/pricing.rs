//! Column pricing: grid scan for reduced profit, then secant refinement of
//! the auth knob towards its first-order balance.

use crate::crypto::{is_compliant, key_cost_relaxed, mac_len_clamped, residual_success_relaxed, risk_from_rho};
use crate::model::{StrategyColumn, ValidatedModel};
use crate::objective::{grid_columns, SlotView};
use crate::queueing::end_to_end_delay;

use super::ColumnSet;

/// Most secant iterations per refinement.
pub const MAX_SECANT_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricedColumn {
    pub class: usize,
    pub col: StrategyColumn,
    pub reduced_profit: f64,
}

/// `-(risk + price * cost + latency_dual * delay)` of a column.
fn value(view: &SlotView, model: &ValidatedModel, class: usize, col: &StrategyColumn, price: f64, lat: f64) -> f64 {
    let t = view.terms(model, class, col);
    -(t.risk + price * t.cost + lat * t.delay.seconds)
}

/// Relaxed risk and priced cost (keys plus latency dual) at knob `a`.
fn parts_relaxed(view: &SlotView, model: &ValidatedModel, class: usize, a: f64, base: &StrategyColumn, price: f64, lat: f64) -> (f64, f64) {
    let c = model.crypto();
    let spec = &model.classes()[class];
    let col = StrategyColumn { auth_knob: a, ..*base };
    let ctx = &view.ctx[class];
    let risk = risk_from_rho(spec, ctx, residual_success_relaxed(&col, ctx, c));
    let cost = view.lambda[class] * key_cost_relaxed(spec, &col, c);
    let delay = end_to_end_delay(spec, &col, view.util, &view.net, model.queue(), c).seconds;
    (risk, price * cost + lat * delay)
}

/// Secant search on `ln(-risk') - ln(cost')`, the log of the first-order
/// balance, within `[lo, hi]`. The risk falls geometrically in `a`, so the
/// balance is close to linear and a few steps suffice.
fn secant_balance(f: impl Fn(f64) -> (f64, f64), a0: f64, lo: f64, hi: f64) -> f64 {
    let h = 1e-3;
    let balance = |a: f64| {
        let (l, r) = ((a - h).max(lo), (a + h).min(hi));
        let ((rl, cl), (rr, cr)) = (f(l), f(r));
        let d_risk = (rl - rr) / (r - l);
        let d_cost = (cr - cl) / (r - l);
        d_risk.max(1e-300).ln() - d_cost.max(1e-300).ln()
    };
    let mut x0 = a0.clamp(lo, hi);
    let mut x1 = if x0 + 1.0 <= hi { x0 + 1.0 } else { x0 - 1.0 }.clamp(lo, hi);
    let (mut g0, mut g1) = (balance(x0), balance(x1));
    for _ in 0..MAX_SECANT_STEPS {
        if g1 == g0 || g1 == 0.0 {
            break;
        }
        let x2 = (x1 - g1 * (x1 - x0) / (g1 - g0)).clamp(lo, hi);
        x0 = x1;
        g0 = g1;
        x1 = x2;
        g1 = balance(x1);
        if (x1 - x0).abs() < 1e-9 {
            break;
        }
    }
    x1
}

/// Orders equally valued columns: lower residual success, then longer tag,
/// then longer refresh.
fn stronger(model: &ValidatedModel, ctx: &crate::crypto::AttackContext, a: &StrategyColumn, b: &StrategyColumn) -> bool {
    let c = model.crypto();
    let ka = (crate::crypto::residual_success(a, ctx, c), mac_len_clamped(a.auth_knob, c), a.refresh);
    let kb = (crate::crypto::residual_success(b, ctx, c), mac_len_clamped(b.auth_knob, c), b.refresh);
    ka.0 < kb.0 || (ka.0 == kb.0 && (ka.1, ka.2) > (kb.1, kb.2))
}

/// Best column for one class under the given per-bit price and latency dual,
/// or `None` when no grid column beats the active set by more than `tol`.
pub fn price_class(
    model: &ValidatedModel,
    view: &SlotView,
    active: &[StrategyColumn],
    class: usize,
    price: f64,
    latency_dual: f64,
) -> Option<PricedColumn> {
    let c = model.crypto();
    let spec = &model.classes()[class];
    let ctx = &view.ctx[class];
    let ok = |col: &StrategyColumn| is_compliant(spec, col, ctx, c);
    let val = |col: &StrategyColumn| value(view, model, class, col, price, latency_dual);

    let best_active = active
        .iter()
        .filter(|col| ok(col))
        .map(val)
        .fold(f64::NEG_INFINITY, f64::max);
    let (grid_val, grid_col) = grid_columns(model, spec)
        .into_iter()
        .filter(ok)
        .map(|col| (val(&col), col))
        .fold(None::<(f64, StrategyColumn)>, |best, x| match best {
            Some(b) if b.0 > x.0 || (b.0 == x.0 && !stronger(model, ctx, &x.1, &b.1)) => Some(b),
            _ => Some(x),
        })?;
    let tol = 1e-9 * (1.0 + best_active.abs().min(grid_val.abs()));
    if best_active.is_finite() && grid_val - best_active <= tol {
        return None;
    }

    let mut best = (grid_val, grid_col);
    if grid_col.strategy.uses_auth_knob() && c.mac_len_slope > 0.0 {
        let lo = crate::controller::a_floor(spec, model);
        let f = |a: f64| parts_relaxed(view, model, class, a, &grid_col, price, latency_dual);
        let a_star = secant_balance(f, grid_col.auth_knob, lo, c.a_max);
        let tag = c.mac_len_slope * a_star;
        for t in [tag.floor(), tag.ceil()] {
            let a = (t / c.mac_len_slope).clamp(lo, c.a_max);
            let col = StrategyColumn::new(grid_col.strategy, a, grid_col.refresh).canonical();
            if mac_len_clamped(a, c) < spec.min_tag_bits || !ok(&col) {
                continue;
            }
            let v = val(&col);
            if v > best.0 || (v == best.0 && stronger(model, ctx, &col, &best.1)) {
                best = (v, col);
            }
        }
    }
    Some(PricedColumn {
        class,
        col: best.1,
        reduced_profit: best.0 - best_active,
    })
}

/// Prices every class in one scenario-slot.
pub fn price_columns(
    model: &ValidatedModel,
    view: &SlotView,
    columns: &ColumnSet,
    class_prices: &[f64],
    latency_duals: &[f64],
) -> Vec<PricedColumn> {
    (0..model.classes().len())
        .filter_map(|i| price_class(model, view, &columns.columns[i], i, class_prices[i], latency_duals[i]))
        .filter(|p| !columns.columns[p.class].iter().any(|c| c.key() == p.col.key()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AttackContext;
    use crate::model::{default_model, Strategy};
    use crate::objective::cheapest_column;

    fn view(m: &ValidatedModel, ctx: AttackContext) -> SlotView {
        let quiet = AttackContext::new(0.0, 0.0, 1.0, 0.0);
        let refs: Vec<StrategyColumn> = m.classes().iter().map(|c| cheapest_column(m, c, &quiet)).collect();
        let lambda = m.classes().iter().map(|c| c.lambda_base).collect();
        SlotView::new(m, vec![ctx; 5], lambda, &refs)
    }

    #[test]
    fn huge_prices_price_nothing_in() {
        let m = default_model();
        let v = view(&m, AttackContext::new(0.01, 4096.0, 1.0, 0.5));
        let cs = ColumnSet::initial(&m);
        let out = price_columns(&m, &v, &cs, &[1e9; 5], &[0.0; 5]);
        assert!(out.is_empty(), "{out:?}");
    }

    #[test]
    fn free_keys_price_in_the_strongest_column() {
        let m = default_model();
        let v = view(&m, AttackContext::new(0.2, 1e6, 5.0, 1.0));
        let active = vec![cheapest_column(&m, &m.classes()[1], &v.ctx[1])];
        let p = price_class(&m, &v, &active, 1, 0.0, 0.0).unwrap();
        assert!(p.reduced_profit > 0.0);
        assert_eq!(p.col.strategy, Strategy::OtpWc);
        assert_eq!(mac_len_clamped(p.col.auth_knob, m.crypto()), m.crypto().mac_len_cap);
    }

    #[test]
    fn refined_knob_matches_fine_grid_scan() {
        let m = default_model();
        let ctx = AttackContext::new(0.3, 1e6, 2.0, 0.8);
        let v = view(&m, ctx);
        let class = 1;
        let spec = &m.classes()[class];
        let c = m.crypto();
        for price in [1e-6, 1e-5, 1e-4] {
            let active = vec![cheapest_column(&m, spec, &ctx)];
            let Some(p) = price_class(&m, &v, &active, class, price, 0.0) else {
                continue;
            };
            if !p.col.strategy.uses_auth_knob() {
                continue;
            }
            let mut best = (f64::NEG_INFINITY, 0.0);
            let mut a = crate::controller::a_floor(spec, &m);
            while a <= c.a_max + 1e-12 {
                let col = StrategyColumn::new(p.col.strategy, a, p.col.refresh);
                let val = value(&v, &m, class, &col, price, 0.0);
                if val > best.0 + 1e-18 {
                    best = (val, a);
                }
                a += 0.01;
            }
            let got = value(&v, &m, class, &p.col, price, 0.0);
            assert!(got >= best.0 - 1e-15 * best.0.abs().max(1.0), "price {price}: {got} vs {}", best.0);
            let cell = 1.0 / c.mac_len_slope;
            assert!((p.col.auth_knob - best.1).abs() <= cell + 0.01, "price {price}: a {} vs {}", p.col.auth_knob, best.1);
        }
    }
}
