//! The per-slot decision: candidate columns, two-pass threshold greedy,
//! rounding, repair, recovery, and the post-slot state update.

use serde::{Deserialize, Serialize};

use crate::crypto::{is_compliant, key_cost, AttackContext};
use crate::error::{Error, Result};
use crate::model::{Strategy, StrategyColumn, ValidatedModel};
use crate::objective::{allowed_strategies, grid_columns, SlotView};
use crate::planner::{solve_slot_fractional, ClassMenu, FractionalAllocation, MenuPoint, OfflinePlan};

use super::belief::{calibrate_attack, AttackBelief};
use super::prices::{update_duals, ShadowPrices, SlotUsage};
use super::recovery::{recover_feasibility, RelaxOption};
use super::refine::{a_floor, coordinate_r_search, proximal_a_step, LocalTerms};

/// Most candidate columns considered per class and slot.
pub const MAX_CANDIDATES: usize = 10;

/// Order in which equally valued classes are served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arbitration {
    /// Loss-weighted tie-break, fixed class order.
    #[default]
    Msv,
    /// Class order rotates by one every slot.
    RoundRobin,
}

/// Switches used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Use forecasts; when off the caller feeds last-value persistence.
    pub forecasting: bool,
    /// Allow classes whose static strategy is S1 to degrade to S2.
    pub degradation: bool,
    pub arbitration: Arbitration,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            forecasting: true,
            degradation: true,
            arbitration: Arbitration::Msv,
        }
    }
}

/// Exponentially weighted mean and second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwTracker {
    alpha: f64,
    mean: f64,
    second: f64,
}

impl EwTracker {
    pub fn new(halflife: f64) -> Self {
        Self {
            alpha: 1.0 - 0.5f64.powf(1.0 / halflife.max(1e-9)),
            mean: 0.0,
            second: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.mean += self.alpha * (x - self.mean);
        self.second += self.alpha * (x * x - self.second);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Root of the second moment.
    pub fn rms(&self) -> f64 {
        self.second.max(0.0).sqrt()
    }
}

/// Everything the controller sees before deciding slot `t`.
#[derive(Debug, Clone, Copy)]
pub struct SlotInput<'a> {
    pub t: usize,
    /// Contexts with the posterior-mean attempt rate.
    pub ctx: &'a [AttackContext],
    /// Contexts with the exploratory (upper-quantile) attempt rate.
    pub ctx_explore: &'a [AttackContext],
    /// Forecast messages per class.
    pub lambda: &'a [f64],
    /// Bits pooled across all nodes after expiry.
    pub pool_total: f64,
    /// Network yield forecast for `t, t+1, ...`, at least one entry.
    pub yield_forecast: &'a [f64],
    /// Replaces the pool price for this slot.
    pub price_override: Option<f64>,
}

/// Integral decision for one slot plus its fractional trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub t: usize,
    pub columns: Vec<StrategyColumn>,
    /// Class split by the greedy and the fraction on its stronger column.
    pub split: Option<(usize, f64)>,
    pub fractional_cost: f64,
    /// Predicted key bits per class.
    pub consumption: Vec<f64>,
    pub risk: Vec<f64>,
    pub delay: Vec<f64>,
    pub threshold: f64,
    pub reserve_price: f64,
    pub budget: f64,
    /// Bits of demand shed per class by feasibility recovery.
    pub relaxations: Vec<f64>,
}

impl SlotDecision {
    pub fn total_consumption(&self) -> f64 {
        self.consumption.iter().sum()
    }
}

/// Realized outcomes of the slot just decided.
#[derive(Debug, Clone, Copy)]
pub struct SlotFeedback<'a> {
    pub node_demand: &'a [f64],
    /// Generated plus routed in minus routed out.
    pub node_supply: &'a [f64],
    /// Pool levels at the end of the slot.
    pub node_pool: &'a [f64],
    pub node_gen: &'a [f64],
    pub node_gen_forecast: &'a [f64],
    pub domain_usage: &'a [f64],
    pub domain_quota: &'a [f64],
    pub attempts: &'a [bool],
    /// Realized mean delay per class.
    pub delays: &'a [f64],
}

#[derive(Debug, Clone)]
struct Candidate {
    col: StrategyColumn,
    exploit: MenuPoint,
    explore: MenuPoint,
}

#[derive(Debug, Clone)]
pub struct Controller<'m> {
    model: &'m ValidatedModel,
    cfg: ControllerConfig,
    /// Statically compliant grid per class, cheapest first.
    grids: Vec<Vec<StrategyColumn>>,
    /// Refined `(a, r)` per class and strategy.
    anchors: Vec<[(f64, u32); 3]>,
    prev: Vec<StrategyColumn>,
    prices: ShadowPrices,
    belief: AttackBelief,
    node_dual_trail: EwTracker,
    delay_err: Vec<EwTracker>,
    yield_err: Vec<EwTracker>,
    predicted_delay: Vec<f64>,
}

impl<'m> Controller<'m> {
    pub fn new(model: &'m ValidatedModel, cfg: ControllerConfig, plan: Option<&OfflinePlan>) -> Self {
        let c = model.crypto();
        let n = model.classes().len();
        let grids: Vec<Vec<StrategyColumn>> = model
            .classes()
            .iter()
            .map(|class| {
                let mut g = grid_columns(model, class);
                g.sort_by(|a, b| key_cost(class, a, c).total_cmp(&key_cost(class, b, c)));
                g
            })
            .collect();
        let prev: Vec<StrategyColumn> = match plan {
            Some(p) if p.warm_start.len() == n => p.warm_start.clone(),
            _ => grids.iter().map(|g| g[0]).collect(),
        };
        let anchors = model
            .classes()
            .iter()
            .zip(&prev)
            .map(|(class, col)| {
                let mid = class.a_grid[class.a_grid.len() / 2].max(a_floor(class, model));
                let r_top = class.r_grid.iter().copied().max().unwrap_or(1);
                let mut a = [(mid, 1), (mid, r_top), (0.0, r_top)];
                a[col.strategy.index()] = (col.auth_knob, col.refresh);
                a
            })
            .collect();
        let prices = match plan {
            Some(p) if p.prices.node.len() == model.nodes().len() => p.prices.clone(),
            _ => ShadowPrices::for_model(model),
        };
        let hl = model.weights().variance_halflife;
        Self {
            model,
            cfg,
            grids,
            anchors,
            prev,
            prices,
            belief: AttackBelief::from_model(model),
            node_dual_trail: EwTracker::new(hl),
            delay_err: vec![EwTracker::new(hl); n],
            yield_err: vec![EwTracker::new(hl); model.nodes().len()],
            predicted_delay: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn prices(&self) -> &ShadowPrices {
        &self.prices
    }

    pub fn belief(&self) -> &AttackBelief {
        &self.belief
    }

    pub fn previous(&self) -> &[StrategyColumn] {
        &self.prev
    }

    /// Posterior-mean and exploratory attempt rates per class.
    pub fn attempt_estimates(&self) -> (Vec<f64>, Vec<f64>) {
        (self.belief.means(), self.belief.uppers())
    }

    /// `terminal_key_value` plus the trailing mean node price.
    pub fn terminal_value(&self) -> f64 {
        self.model.weights().terminal_key_value + self.node_dual_trail.mean()
    }

    fn reserve_price(&self, inp: &SlotInput) -> f64 {
        inp.price_override.unwrap_or(self.prices.pool).max(self.terminal_value())
    }

    fn switch_cost(&self, from: &StrategyColumn, to: &StrategyColumn) -> f64 {
        let w = self.model.weights();
        let c = self.model.crypto();
        let x = if from.strategy != to.strategy { 1.0 } else { 0.0 };
        let da = (from.auth_knob - to.auth_knob).abs() / c.a_max.max(1e-12);
        let dr = (from.refresh as f64 - to.refresh as f64).abs() / c.r_max.max(1) as f64;
        w.smooth_weight * (w.smooth_x * x + w.smooth_a * da + w.smooth_r * dr)
    }

    /// Cheapest column compliant under `ctx`, else the least exposed one.
    fn base_column(&self, i: usize, ctx: &AttackContext) -> StrategyColumn {
        let class = &self.model.classes()[i];
        let c = self.model.crypto();
        let pinned = !self.cfg.degradation && class.static_strategy == Strategy::OtpWc;
        let grid = || self.grids[i].iter().filter(move |col| !pinned || col.strategy != Strategy::AesWc);
        grid()
            .find(|col| is_compliant(class, col, ctx, c))
            .copied()
            .unwrap_or_else(|| {
                *grid()
                    .min_by(|a, b| {
                        crate::crypto::residual_success(a, ctx, c).total_cmp(&crate::crypto::residual_success(b, ctx, c))
                    })
                    .expect("non-empty grid")
            })
    }

    /// Base, previous, and local variants of the anchors, compliant under
    /// `ctx`, base first, at most [`MAX_CANDIDATES`].
    pub fn candidates(&self, i: usize, ctx: &AttackContext) -> Vec<StrategyColumn> {
        let m = self.model;
        let class = &m.classes()[i];
        let c = m.crypto();
        let lo = a_floor(class, m);
        let a_step = |a: f64, up: bool| -> f64 {
            let next = if up {
                class.a_grid.iter().copied().filter(|&g| g > a + 1e-9).reduce(f64::min)
            } else {
                class.a_grid.iter().copied().filter(|&g| g < a - 1e-9).reduce(f64::max)
            };
            next.unwrap_or(a).clamp(lo, c.a_max)
        };
        let r_down = |r: u32| class.r_grid.iter().copied().filter(|&g| g < r).max().unwrap_or(r);
        let allowed: Vec<Strategy> = allowed_strategies(class)
            .filter(|s| self.cfg.degradation || !(class.static_strategy == Strategy::OtpWc && *s == Strategy::AesWc))
            .collect();
        let has = |s: Strategy| allowed.contains(&s);
        let [(a1, _), (a2, r2), (_, r3)] = self.anchors[i];

        let base = self.base_column(i, ctx);
        let mut raw = vec![base, self.prev[i]];
        let s1 = |a| StrategyColumn::new(Strategy::OtpWc, a, 1);
        let s2 = |a, r| StrategyColumn::new(Strategy::AesWc, a, r);
        let s3 = |r| StrategyColumn::new(Strategy::AesMac, 0.0, r);
        if has(Strategy::OtpWc) {
            raw.push(s1(a1));
        }
        if has(Strategy::AesWc) {
            raw.push(s2(a2, r2));
        }
        if has(Strategy::AesMac) {
            raw.push(s3(r3));
        }
        if has(Strategy::OtpWc) {
            raw.push(s1(a_step(a1, true)));
        }
        if has(Strategy::AesWc) {
            raw.push(s2(a_step(a2, true), r2));
        }
        if has(Strategy::OtpWc) {
            raw.push(s1(a_step(a1, false)));
        }
        if has(Strategy::AesWc) {
            raw.push(s2(a2, r_down(r2)));
        }
        if has(Strategy::AesMac) {
            raw.push(s3(r_down(r3)));
        }
        let mut out: Vec<StrategyColumn> = Vec::with_capacity(MAX_CANDIDATES);
        for col in raw {
            let col = col.canonical();
            if !has(col.strategy) && col.key() != base.key() {
                continue;
            }
            if col.key() != base.key() && !is_compliant(class, &col, ctx, c) {
                continue;
            }
            if out.iter().any(|o| o.key() == col.key()) {
                continue;
            }
            out.push(col);
            if out.len() == MAX_CANDIDATES {
                break;
            }
        }
        out
    }

    fn build(&self, inp: &SlotInput) -> (Vec<Vec<Candidate>>, SlotView, SlotView) {
        let m = self.model;
        let exploit = SlotView::new(m, inp.ctx.to_vec(), inp.lambda.to_vec(), &self.prev);
        let explore = SlotView {
            ctx: inp.ctx_explore.to_vec(),
            ..exploit.clone()
        };
        let cands = (0..m.classes().len())
            .map(|i| {
                let class = &m.classes()[i];
                let sigma = self.delay_err[i].rms();
                let cols = self.candidates(i, &inp.ctx[i]);
                let mut out = Vec::with_capacity(cols.len());
                for (k, col) in cols.iter().enumerate() {
                    let te = exploit.terms(m, i, col);
                    if k > 0 && te.delay.seconds + class.delay_margin_mult * sigma > class.sla_delay {
                        continue;
                    }
                    let tx = explore.terms(m, i, col);
                    let sw = self.switch_cost(&self.prev[i], col);
                    out.push(Candidate {
                        col: *col,
                        exploit: MenuPoint {
                            col: *col,
                            cost: te.cost,
                            risk: te.objective() + sw,
                        },
                        explore: MenuPoint {
                            col: *col,
                            cost: tx.cost,
                            risk: tx.objective() + sw,
                        },
                    });
                }
                out
            })
            .collect();
        (cands, exploit, explore)
    }

    fn menus(&self, t: usize, cands: &[Vec<Candidate>], explore: bool) -> Vec<ClassMenu> {
        let m = self.model;
        let n = cands.len();
        cands
            .iter()
            .enumerate()
            .map(|(i, cs)| {
                let (class, unit_loss) = match self.cfg.arbitration {
                    Arbitration::Msv => (i, m.classes()[i].unit_loss),
                    Arbitration::RoundRobin => ((i + n - t % n) % n, 0.0),
                };
                ClassMenu {
                    class,
                    unit_loss,
                    premium: self.prices.class_premium(m, i),
                    points: cs.iter().map(|c| if explore { c.explore } else { c.exploit }).collect(),
                }
            })
            .collect()
    }

    /// Candidate menus under the exploitation and exploration contexts, as
    /// the greedy sees them for `inp`.
    pub fn candidate_menus(&self, inp: &SlotInput) -> (Vec<ClassMenu>, Vec<ClassMenu>) {
        let (cands, _, _) = self.build(inp);
        (self.menus(inp.t, &cands, false), self.menus(inp.t, &cands, true))
    }

    /// Decides slot `inp.t` and advances the knob anchors.
    pub fn decide_slot(&mut self, inp: &SlotInput) -> Result<SlotDecision> {
        let m = self.model;
        let w = m.weights();
        let n = m.classes().len();
        let (cands, exploit_view, _) = self.build(inp);
        let exploit = self.menus(inp.t, &cands, false);
        let explore = self.menus(inp.t, &cands, true);
        let reserve_price = self.reserve_price(inp);

        let base_cols: Vec<StrategyColumn> = cands.iter().map(|c| c[0].col).collect();
        let base: f64 = cands
            .iter()
            .map(|c| c.iter().map(|x| x.exploit.cost).fold(f64::INFINITY, f64::min))
            .sum();
        let cap_total: f64 = m.nodes().iter().map(|u| u.pool_cap as f64).sum();
        let y_now = inp.yield_forecast.first().copied().unwrap_or(0.0);
        let h = m.sim().lookahead.max(1);
        let horizon_reserve: f64 = (1..h)
            .map(|k| base - inp.yield_forecast.get(k).copied().unwrap_or(y_now))
            .sum::<f64>()
            .max(0.0);
        let chance: f64 = m
            .nodes()
            .iter()
            .zip(&self.yield_err)
            .map(|(u, e)| u.key_margin_mult * e.rms())
            .sum();
        let physical = inp.pool_total + y_now;
        let mut budget = physical - w.reserve_margin * cap_total - horizon_reserve - chance;
        if base > budget {
            budget = physical;
        }

        let mut relaxations = vec![0.0; n];
        if base > budget {
            let opts: Vec<RelaxOption> = m
                .classes()
                .iter()
                .zip(&cands)
                .map(|(class, c)| RelaxOption {
                    weight: class.recovery_weight,
                    cap: class.relax_cap.min(c[0].exploit.cost),
                })
                .collect();
            relaxations = recover_feasibility(&[base - budget], &opts).map_err(|e| match e {
                Error::RecoveryFailed { deficit, capacity, .. } => Error::RecoveryFailed {
                    deficit,
                    capacity,
                    slot: Some(inp.t),
                },
                e => e,
            })?;
            return Ok(self.finish(inp, base_cols, None, base, &exploit_view, reserve_price, reserve_price, budget, relaxations));
        }

        let first = solve_slot_fractional(&exploit, budget, reserve_price)?;
        let alloc = if w.explore_fraction > 0.0 {
            let b2 = budget.min(first.cost() + w.explore_fraction * (budget - base));
            solve_slot_fractional(&explore, b2.max(base), reserve_price)?
        } else {
            first
        };
        let (cols, split) = round_and_repair(&alloc, budget, |i| m.is_compliance_bound(i));
        Ok(self.finish(inp, cols, split, alloc.cost(), &exploit_view, alloc.threshold, reserve_price, budget, relaxations))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        inp: &SlotInput,
        columns: Vec<StrategyColumn>,
        split: Option<(usize, f64)>,
        fractional_cost: f64,
        view: &SlotView,
        threshold: f64,
        reserve_price: f64,
        budget: f64,
        relaxations: Vec<f64>,
    ) -> SlotDecision {
        let m = self.model;
        let n = columns.len();
        let q = m.queue();
        let c = m.crypto();
        let util = crate::queueing::utilization(m.classes(), &columns, &view.net, q, c);
        let mut consumption = Vec::with_capacity(n);
        let mut risk = Vec::with_capacity(n);
        let mut delay = Vec::with_capacity(n);
        for (i, col) in columns.iter().enumerate() {
            let class = &m.classes()[i];
            let t = crate::objective::evaluate_column(m, class, col, &view.ctx[i], view.lambda[i], util, &view.net);
            consumption.push(t.cost);
            risk.push(t.risk);
            delay.push(t.delay.seconds);

            let prev = self.prev[i];
            let terms = LocalTerms {
                ctx: &view.ctx[i],
                price: reserve_price + self.prices.class_premium(m, i),
                lambda: view.lambda[i],
                util,
                net: &view.net,
            };
            let (mut a, mut r) = (col.auth_knob, col.refresh);
            if col.strategy.uses_auth_knob() {
                let prev_a = if prev.strategy == col.strategy { prev.auth_knob } else { a };
                a = proximal_a_step(m, class, col, &terms, prev_a).unwrap_or(a);
            }
            if col.strategy.uses_refresh() {
                let prev_r = if prev.strategy == col.strategy { prev.refresh } else { r };
                r = coordinate_r_search(m, class, col, &terms, prev_r).unwrap_or(r);
            }
            self.anchors[i][col.strategy.index()] = (a, r);
        }
        self.prev = columns.clone();
        self.predicted_delay = delay.clone();
        SlotDecision {
            t: inp.t,
            columns,
            split,
            fractional_cost,
            consumption,
            risk,
            delay,
            threshold,
            reserve_price,
            budget,
            relaxations,
        }
    }

    /// One dual step, belief update, and forecast-error tracking.
    pub fn observe(&mut self, fb: &SlotFeedback) {
        let m = self.model;
        let h = m.sim().lookahead.max(1) as f64;
        let margin = m.weights().reserve_margin;
        let node_available: Vec<f64> = m
            .nodes()
            .iter()
            .enumerate()
            .map(|(u, spec)| fb.node_supply[u] + (fb.node_pool[u] - margin * spec.pool_cap as f64).max(0.0) / h)
            .collect();
        let usage = SlotUsage {
            node_consumption: fb.node_demand.to_vec(),
            node_available,
            domain_usage: fb.domain_usage.to_vec(),
            domain_quota: fb.domain_quota.to_vec(),
        };
        self.prices = update_duals(&self.prices, &usage, m.weights().online_dual_step);
        self.node_dual_trail.push(self.prices.mean_node());

        let hits: Vec<f64> = fb.attempts.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let misses: Vec<f64> = hits.iter().map(|h| 1.0 - h).collect();
        self.belief = calibrate_attack(&self.belief, &hits, &misses).0;

        for (i, e) in self.delay_err.iter_mut().enumerate() {
            e.push(fb.delays[i] - self.predicted_delay[i]);
        }
        for (u, e) in self.yield_err.iter_mut().enumerate() {
            e.push(fb.node_gen[u] - fb.node_gen_forecast[u]);
        }
    }
}

/// Rounds the split class to its nearer column, then downgrades the
/// lowest-MSV classes (non-bound ones first) until the integral cost fits.
fn round_and_repair(
    alloc: &FractionalAllocation,
    budget: f64,
    bound: impl Fn(usize) -> bool,
) -> (Vec<StrategyColumn>, Option<(usize, f64)>) {
    let mut levels: Vec<usize> = Vec::with_capacity(alloc.classes.len());
    let mut split = None;
    for (i, ca) in alloc.classes.iter().enumerate() {
        let mut l = ca.level;
        if ca.fraction > 0.0 && l + 1 < ca.envelope.len() {
            split = Some((i, ca.fraction));
            if ca.fraction >= 0.5 {
                l += 1;
            }
        }
        levels.push(l);
    }
    let cost = |levels: &[usize]| -> f64 {
        alloc.classes.iter().zip(levels).map(|(ca, &l)| ca.envelope[l].cost).sum()
    };
    let mut total = cost(&levels);
    while total > budget + 1e-9 {
        let pick = |allow_bound: bool| {
            (0..levels.len())
                .filter(|&i| levels[i] > 0 && (allow_bound || !bound(i)))
                .map(|i| {
                    let env = &alloc.classes[i].envelope;
                    let (lo, hi) = (env[levels[i] - 1], env[levels[i]]);
                    ((lo.risk - hi.risk) / (hi.cost - lo.cost), i)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|x| x.1)
        };
        match pick(false).or_else(|| pick(true)) {
            Some(i) => levels[i] -= 1,
            None => break,
        }
        total = cost(&levels);
    }
    let cols = alloc
        .classes
        .iter()
        .zip(&levels)
        .map(|(ca, &l)| ca.envelope[l].col)
        .collect();
    (cols, split)
}
