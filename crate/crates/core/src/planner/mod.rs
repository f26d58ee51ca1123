//! Offline stage: scenarios, the per-slot fractional master, column
//! pricing, and the dual subgradient loop that produces a day-ahead plan.

mod knapsack;
mod pricing;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use knapsack::*;
pub use pricing::{price_class, price_columns, PricedColumn};

use crate::controller::{dual_step, ShadowPrices};
use crate::crypto::{is_compliant, AttackContext};
use crate::env::{EnvKnobs, EnvSeries};
use crate::error::{Error, Result};
use crate::keynet::{route_keys, RoutingOutcome, Topology};
use crate::model::{StrategyColumn, ValidatedModel};
use crate::objective::{cheapest_column, grid_columns, SlotView};
use crate::rng::{child_seed, stream_rng, Stream};

/// One forecast path with its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub weight: f64,
    /// `[slot][link]` expected yield, bits.
    pub yields: Vec<Vec<f64>>,
    /// `[slot][class]`.
    pub contexts: Vec<Vec<AttackContext>>,
    /// `[slot][class]` messages per slot.
    pub lambdas: Vec<Vec<f64>>,
    /// Half-open `[start, end)` yield-shock windows.
    pub shock_windows: Vec<(usize, usize)>,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.yields.len()
    }

    pub fn from_series(env: &EnvSeries, weight: f64) -> Self {
        Self {
            weight,
            yields: env.yield_mean.clone(),
            contexts: env.attack.clone(),
            lambdas: env.lambda.clone(),
            shock_windows: env.shocks.iter().map(|s| (s.start, s.end)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastParams {
    pub horizon: usize,
    /// Multiplies every noise level of the generators; 0 gives the mean path.
    pub variance_scale: f64,
    /// Probability that a scenario contains a yield shock.
    pub shock_prob: f64,
}

impl ForecastParams {
    pub fn from_model(model: &ValidatedModel) -> Self {
        let sim = model.sim();
        let days = sim.horizon_slots as f64 * sim.slot_seconds / 86_400.0;
        Self {
            horizon: sim.horizon_slots,
            variance_scale: 1.0,
            shock_prob: 1.0 - (-sim.weather.shocks_per_episode * days).exp(),
        }
    }
}

/// Equal-weight scenario fan. At least one scenario carries a shock when
/// `shock_prob > 0`.
pub fn build_scenarios(model: &ValidatedModel, fp: &ForecastParams, count: usize, seed: u64) -> Vec<Scenario> {
    assert!(count >= 1, "scenario count must be positive");
    let mut rng = stream_rng(seed, Stream::Scenario, 0);
    let mut shocked: Vec<bool> = (0..count).map(|_| rng.gen::<f64>() < fp.shock_prob).collect();
    if fp.shock_prob > 0.0 && !shocked.iter().any(|&s| s) {
        shocked[0] = true;
    }
    let noisy = fp.variance_scale > 0.0;
    shocked
        .iter()
        .enumerate()
        .map(|(k, &shock)| {
            let knobs = EnvKnobs {
                noise_scale: fp.variance_scale,
                shocks: Some(shock as usize),
                pulses: noisy,
                maintenance: noisy,
            };
            let env = EnvSeries::generate_with(model, fp.horizon, child_seed(seed, k as u64), &knobs);
            Scenario::from_series(&env, 1.0 / count as f64)
        })
        .collect()
}

/// Active columns per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSet {
    pub columns: Vec<Vec<StrategyColumn>>,
}

/// Most columns pricing may add per class.
pub const MAX_COLUMNS_PER_CLASS: usize = 32;

impl ColumnSet {
    /// Seeds each class with its cheapest column plus one column per allowed
    /// strategy at the weakest and strongest compliant knob.
    pub fn initial(model: &ValidatedModel) -> Self {
        let quiet = AttackContext::new(0.0, 0.0, 1.0, 0.0);
        let columns = model
            .classes()
            .iter()
            .map(|class| {
                let mut set = vec![cheapest_column(model, class, &quiet)];
                let grid = grid_columns(model, class);
                for s in crate::objective::allowed_strategies(class) {
                    let of_s: Vec<&StrategyColumn> = grid.iter().filter(|c| c.strategy == s).collect();
                    let top_r = of_s.iter().map(|c| c.refresh).max();
                    let at_top: Vec<&&StrategyColumn> = of_s.iter().filter(|c| Some(c.refresh) == top_r).collect();
                    if let Some(lo) = at_top.iter().min_by(|a, b| a.auth_knob.total_cmp(&b.auth_knob)) {
                        push_unique(&mut set, ***lo);
                    }
                    if let Some(hi) = at_top.iter().max_by(|a, b| a.auth_knob.total_cmp(&b.auth_knob)) {
                        push_unique(&mut set, ***hi);
                    }
                }
                set
            })
            .collect();
        Self { columns }
    }

    /// Adds a column unless present or the class is full.
    pub fn insert(&mut self, class: usize, col: StrategyColumn) -> bool {
        let set = &mut self.columns[class];
        if set.len() >= MAX_COLUMNS_PER_CLASS {
            return false;
        }
        push_unique(set, col)
    }

    /// Columns compliant under `ctx`; if none is, the one with the lowest
    /// residual success so that every class keeps a feasibility anchor.
    pub fn compliant(&self, model: &ValidatedModel, class: usize, ctx: &AttackContext) -> Vec<StrategyColumn> {
        let spec = &model.classes()[class];
        let c = model.crypto();
        let ok: Vec<StrategyColumn> = self.columns[class]
            .iter()
            .copied()
            .filter(|col| is_compliant(spec, col, ctx, c))
            .collect();
        if !ok.is_empty() {
            return ok;
        }
        let best = self.columns[class]
            .iter()
            .copied()
            .min_by(|a, b| {
                crate::crypto::residual_success(a, ctx, c).total_cmp(&crate::crypto::residual_success(b, ctx, c))
            })
            .expect("column sets are never empty");
        vec![best]
    }
}

fn push_unique(set: &mut Vec<StrategyColumn>, col: StrategyColumn) -> bool {
    let col = col.canonical();
    if set.iter().any(|c| c.key() == col.key()) {
        return false;
    }
    set.push(col);
    true
}

/// Day-ahead output consumed by the online controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflinePlan {
    pub config_hash: String,
    pub seed: u64,
    pub scenario_count: usize,
    pub iterations: usize,
    pub classes: Vec<String>,
    pub domains: Vec<String>,
    /// `[slot][domain]` allocation quotas, bits.
    pub domain_quotas: Vec<Vec<f64>>,
    pub warm_start: Vec<StrategyColumn>,
    pub prices: ShadowPrices,
    /// Pool price per slot.
    pub slot_prices: Vec<f64>,
    /// Per-class latency duals used in pricing.
    pub latency_duals: Vec<f64>,
    pub columns: ColumnSet,
}

impl OfflinePlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Quotas for slot `t`, wrapping around the planned day.
    pub fn quotas_at(&self, t: usize) -> Option<&[f64]> {
        if self.domain_quotas.is_empty() {
            None
        } else {
            Some(&self.domain_quotas[t % self.domain_quotas.len()])
        }
    }
}

/// Master outcome of one scenario-slot.
#[derive(Debug, Clone)]
struct MasterSlot {
    class_cost: Vec<f64>,
    dominant: Vec<StrategyColumn>,
    relaxed_demand: f64,
    supply: f64,
    pool: f64,
    violated: Vec<bool>,
}

struct PlanState<'a> {
    model: &'a ValidatedModel,
    columns: ColumnSet,
    slot_prices: Vec<f64>,
    prices: ShadowPrices,
    latency: Vec<f64>,
    refs: Vec<StrategyColumn>,
}

impl PlanState<'_> {
    fn view(&self, sc: &Scenario, t: usize) -> SlotView {
        SlotView::new(self.model, sc.contexts[t].clone(), sc.lambdas[t].clone(), &self.refs)
    }

    fn menus(&self, view: &SlotView) -> Vec<ClassMenu> {
        let m = self.model;
        (0..m.classes().len())
            .map(|i| {
                let cols = self.columns.compliant(m, i, &view.ctx[i]);
                ClassMenu {
                    class: i,
                    unit_loss: m.classes()[i].unit_loss,
                    premium: self.prices.class_premium(m, i),
                    points: cols
                        .iter()
                        .map(|col| {
                            let t = view.terms(m, i, col);
                            MenuPoint {
                                col: *col,
                                cost: t.cost,
                                risk: t.objective(),
                            }
                        })
                        .collect(),
                }
            })
            .collect()
    }

    fn run_master(&self, w: usize, sc: &Scenario) -> Result<Vec<MasterSlot>> {
        let m = self.model;
        let cap_total: f64 = m.nodes().iter().map(|n| n.pool_cap as f64).sum();
        let reserve = m.weights().reserve_margin * cap_total;
        let h = m.sim().lookahead.max(1) as f64;
        let relax_total: f64 = m.classes().iter().map(|c| c.relax_cap).sum();
        let mut k: f64 = m.nodes().iter().map(|n| n.initial_bits as f64).sum();
        let mut out = Vec::with_capacity(sc.horizon());
        for t in 0..sc.horizon() {
            let g: f64 = sc.yields[t].iter().sum();
            let view = self.view(sc, t);
            let menus = self.menus(&view);
            let price = self.slot_prices[t];
            let budget = g + (k - reserve).max(0.0) / h;
            let physical = g + k;
            let (alloc, relief) = match solve_slot_fractional(&menus, budget, price) {
                Ok(a) => (a, 0.0),
                Err(Error::InfeasibleBase { base_cost, .. }) => {
                    let relief = (base_cost - physical).max(0.0);
                    if relief > relax_total {
                        return Err(Error::NoBaseFeasible { scenario: w, slot: t });
                    }
                    (solve_slot_fractional(&menus, base_cost, f64::INFINITY)?, relief)
                }
                Err(e) => return Err(e),
            };
            let relaxed = solve_slot_fractional(&menus, f64::INFINITY, price)?;
            let class_cost: Vec<f64> = alloc.classes.iter().map(|c| c.cost()).collect();
            let total: f64 = class_cost.iter().sum::<f64>() - relief;
            let dominant: Vec<StrategyColumn> = alloc.classes.iter().map(|c| c.dominant().col).collect();
            let violated = dominant
                .iter()
                .enumerate()
                .map(|(i, col)| {
                    let d = view.terms(m, i, col).delay.seconds;
                    d > m.classes()[i].sla_delay
                })
                .collect();
            out.push(MasterSlot {
                class_cost,
                dominant,
                relaxed_demand: relaxed.cost(),
                supply: budget,
                pool: k,
                violated,
            });
            k = (k + g - total).clamp(0.0, cap_total);
        }
        Ok(out)
    }
}

/// Splits class consumption evenly over the class's nodes.
fn node_demand(model: &ValidatedModel, class_cost: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; model.nodes().len()];
    for (i, &c) in class_cost.iter().enumerate() {
        let nodes = model.class_nodes(i);
        for &u in nodes {
            d[u] += c / nodes.len() as f64;
        }
    }
    d
}

/// Half of each link's yield accrues at each endpoint.
pub fn node_generation(model: &ValidatedModel, link_yields: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.nodes().len()];
    for (&(u, v), &y) in model.link_ends().iter().zip(link_yields) {
        g[u] += y / 2.0;
        g[v] += y / 2.0;
    }
    g
}

/// Runs the master/routing/pricing loop for `iters` rounds.
pub fn offline_plan(model: &ValidatedModel, scenarios: &[Scenario], iters: usize) -> Result<OfflinePlan> {
    assert!(iters >= 1, "at least one iteration");
    assert!(!scenarios.is_empty(), "at least one scenario");
    let horizon = scenarios.iter().map(|s| s.horizon()).min().unwrap_or(0);
    let n_classes = model.classes().len();
    let n_nodes = model.nodes().len();
    let n_domains = model.domains().len();
    let quiet = AttackContext::new(0.0, 0.0, 1.0, 0.0);
    let mut st = PlanState {
        model,
        columns: ColumnSet::initial(model),
        slot_prices: vec![0.0; horizon],
        prices: ShadowPrices::for_model(model),
        latency: vec![0.0; n_classes],
        refs: model.classes().iter().map(|c| cheapest_column(model, c, &quiet)).collect(),
    };
    let topo = Topology::from_model(model);
    let transit: Vec<u64> = model.domains().iter().map(|d| d.transit_cap_per_slot as u64).collect();
    let caps: Vec<f64> = model.nodes().iter().map(|n| n.pool_cap as f64).collect();
    let cap_total: f64 = caps.iter().sum();
    let samples: Vec<usize> = (0..horizon).step_by((horizon / 24).max(1)).collect();
    let schedule = model.weights().dual_step_schedule;

    let mut last: Vec<Vec<MasterSlot>> = Vec::new();
    for n in 0..iters {
        let gamma = schedule.step(n);
        let runs: Vec<Vec<MasterSlot>> = scenarios
            .par_iter()
            .enumerate()
            .map(|(w, sc)| st.run_master(w, sc))
            .collect::<Result<_>>()?;

        // Pool prices from weighted excess of price-only demand over supply.
        for t in 0..horizon {
            let excess: f64 = scenarios
                .iter()
                .zip(&runs)
                .map(|(sc, r)| sc.weight * (r[t].relaxed_demand - r[t].supply))
                .sum();
            st.slot_prices[t] = dual_step(st.slot_prices[t], excess, gamma);
        }

        // Routing feasibility at sampled slots feeds node and domain prices.
        let mut node_excess = vec![0.0; n_nodes];
        let mut domain_excess = vec![0.0; n_domains];
        for (sc, r) in scenarios.iter().zip(&runs) {
            for &t in &samples {
                let demand = node_demand(model, &r[t].class_cost);
                let gen = node_generation(model, &sc.yields[t]);
                let net: Vec<i64> = (0..n_nodes)
                    .map(|u| (demand[u] - r[t].pool * caps[u] / cap_total - gen[u]).round() as i64)
                    .collect();
                let yields: Vec<u64> = sc.yields[t].iter().map(|y| y.max(0.0) as u64).collect();
                let outcome = route_keys(&topo, &yields, &net, &transit)?;
                let scale = sc.weight / samples.len() as f64;
                let short: BTreeMap<usize, u64> = match &outcome {
                    RoutingOutcome::Feasible(_) => BTreeMap::new(),
                    RoutingOutcome::Infeasible { certificate, .. } => certificate.shortfall.iter().copied().collect(),
                };
                for u in 0..n_nodes {
                    let s = short.get(&u).copied().unwrap_or(0) as f64;
                    let slack = (-net[u]).max(0) as f64;
                    node_excess[u] += scale * (s - slack);
                }
                for (d, used) in outcome.flows().domain_usage(&topo).iter().enumerate() {
                    domain_excess[d] += scale * (*used as f64 - transit[d] as f64);
                }
            }
        }
        for u in 0..n_nodes {
            st.prices.node[u] = dual_step(st.prices.node[u], node_excess[u], gamma);
        }
        for d in 0..n_domains {
            st.prices.domain[d] = dual_step(st.prices.domain[d], domain_excess[d], gamma);
        }

        // Latency duals: SLA weight times the violated share.
        for i in 0..n_classes {
            let frac: f64 = scenarios
                .iter()
                .zip(&runs)
                .map(|(sc, r)| sc.weight * r.iter().filter(|s| s.violated[i]).count() as f64 / horizon.max(1) as f64)
                .sum();
            st.latency[i] = model.classes()[i].sla_weight * frac;
        }

        // Pricing at sampled slots, skipped after the final master.
        if n + 1 < iters {
            for sc in scenarios {
                for &t in &samples {
                    let view = st.view(sc, t);
                    let class_prices: Vec<f64> = (0..n_classes)
                        .map(|i| st.slot_prices[t] + st.prices.class_premium(model, i))
                        .collect();
                    for p in price_columns(model, &view, &st.columns, &class_prices, &st.latency) {
                        st.columns.insert(p.class, p.col);
                    }
                }
            }
        }
        last = runs;
    }

    let margin = 1.0 + model.weights().reserve_margin;
    let domain_quotas = (0..horizon)
        .map(|t| {
            let mut q = vec![0.0; n_domains];
            for (sc, r) in scenarios.iter().zip(&last) {
                for (u, d) in node_demand(model, &r[t].class_cost).iter().enumerate() {
                    q[model.node_domain(u)] += sc.weight * d;
                }
            }
            q.iter().map(|x| x * margin).collect()
        })
        .collect();

    let warm_start = (0..n_classes)
        .map(|i| {
            let mut votes: BTreeMap<(usize, u64, u32), (f64, StrategyColumn)> = BTreeMap::new();
            for (sc, r) in scenarios.iter().zip(&last) {
                for s in r {
                    let col = s.dominant[i].canonical();
                    let key = (col.strategy.index(), col.auth_knob.to_bits(), col.refresh);
                    votes.entry(key).or_insert((0.0, col)).0 += sc.weight;
                }
            }
            votes
                .values()
                .fold(None::<(f64, StrategyColumn)>, |best, &(w, col)| match best {
                    Some((bw, _)) if bw >= w => best,
                    _ => Some((w, col)),
                })
                .map(|x| x.1)
                .unwrap_or(st.refs[i])
        })
        .collect();

    let pool = if horizon > 0 {
        st.slot_prices.iter().sum::<f64>() / horizon as f64
    } else {
        0.0
    };
    st.prices.pool = pool;
    Ok(OfflinePlan {
        config_hash: model.config_hash().to_string(),
        seed: model.seed(),
        scenario_count: scenarios.len(),
        iterations: iters,
        classes: model.classes().iter().map(|c| c.id.clone()).collect(),
        domains: model.domains().iter().map(|d| d.id.clone()).collect(),
        domain_quotas,
        warm_start,
        prices: st.prices,
        slot_prices: st.slot_prices,
        latency_duals: st.latency,
        columns: st.columns,
    })
}

/// Builds scenarios from the model's own settings and plans.
pub fn plan_for_model(model: &ValidatedModel, scenario_count: usize, seed: u64) -> Result<OfflinePlan> {
    let fp = ForecastParams::from_model(model);
    let scenarios = build_scenarios(model, &fp, scenario_count.max(1), seed);
    let mut plan = offline_plan(model, &scenarios, model.sim().plan_iters.max(1))?;
    plan.seed = seed;
    Ok(plan)
}
