//! Episode engine: wires environment, policy, key network, and queueing
//! slot by slot, plus comparator policies and Monte Carlo orchestration.

mod metrics;
mod monte_carlo;
mod policy;
mod trace;

use std::time::Instant;

pub use metrics::{
    latency_quantiles, t_interval, EpisodeSummary, MetricRow, MetricStat, MetricsSet, PolicyMetrics,
};
pub use monte_carlo::{episode_seeds, run_monte_carlo, MonteCarloResult};
pub use policy::{Ablation, Policy, Variant};
pub use trace::{EpisodeTrace, KeyLedger, SlotRecord, TraceHeader};

use crate::controller::{Arbitration, Controller, SlotFeedback, SlotInput};
use crate::crypto::{is_compliant, key_cost, residual_success, risk_from_rho, AttackContext};
use crate::env::EnvSeries;
use crate::error::Result;
use crate::keynet::{expire_in_place, route_keys, step_in_place, CarryRegister, KeyPool, PoolFlows, Topology};
use crate::model::{Strategy, StrategyColumn, ValidatedModel};
use crate::planner::OfflinePlan;
use crate::queueing::{end_to_end_delay, utilization, NetSlotState};

/// Dual sweeps the oracle runs over its realized episode.
pub const ORACLE_SWEEPS: usize = 50;

/// One episode's trace plus wall-clock decision times, kept apart so the
/// trace stays a pure function of its inputs.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trace: EpisodeTrace,
    pub summary: EpisodeSummary,
    /// Seconds spent in the policy's decision per slot.
    pub decision_seconds: Vec<f64>,
}

/// Link yield split between endpoints: `floor(g/2)` to `from`, the rest to `to`.
pub fn node_generation_bits(model: &ValidatedModel, link_yields: &[u64]) -> Vec<u64> {
    let mut g = vec![0u64; model.nodes().len()];
    for (&(u, v), &y) in model.link_ends().iter().zip(link_yields) {
        g[u] += y / 2;
        g[v] += y - y / 2;
    }
    g
}

fn node_generation_f64(model: &ValidatedModel, link_yields: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.nodes().len()];
    for (&(u, v), &y) in model.link_ends().iter().zip(link_yields) {
        g[u] += y / 2.0;
        g[v] += y / 2.0;
    }
    g
}

/// Classical fallback column: S3 at the longest refresh.
fn fallback_column(model: &ValidatedModel) -> StrategyColumn {
    StrategyColumn::new(Strategy::AesMac, 0.0, model.crypto().r_max)
}

/// What a policy decided for one slot.
struct Choice {
    columns: Vec<StrategyColumn>,
    relaxed_bits: Vec<f64>,
    /// Whether key is drawn from the QKD pools at all.
    uses_qkd: bool,
    threshold: f64,
}

struct Runner<'a> {
    model: &'a ValidatedModel,
    env: &'a EnvSeries,
    topo: Topology,
    variant: Variant,
    horizon: usize,
}

impl<'a> Runner<'a> {
    fn lagged_contexts(&self, t: usize) -> Vec<AttackContext> {
        let sim = self.model.sim();
        (0..self.model.classes().len())
            .map(|i| {
                let now = self.env.attack[t][i];
                if t == 0 {
                    AttackContext::new(now.attempt_prob, sim.attack.q_base, 1.0, now.context_amp)
                } else {
                    let prev = self.env.attack[t - 1][i];
                    AttackContext::new(now.attempt_prob, prev.query_budget, prev.duration_slots, now.context_amp)
                }
            })
            .collect()
    }

    fn static_columns(&self) -> Vec<StrategyColumn> {
        self.model
            .classes()
            .iter()
            .map(|c| {
                let a = c.a_grid[c.a_grid.len() / 2];
                let r = c.r_grid[c.r_grid.len() / 2];
                StrategyColumn::new(c.static_strategy, a, r).canonical()
            })
            .collect()
    }

    /// Classes in ascending priority number get the strongest column that
    /// still leaves room for every later class's cheapest column.
    fn greedy_columns(&self, t: usize, ctx: &[AttackContext], pool_total: f64, grids: &[Vec<StrategyColumn>]) -> Vec<StrategyColumn> {
        let m = self.model;
        let c = m.crypto();
        let lambda = &self.env.lambda[t];
        let h = m.sim().lookahead.max(1) as f64;
        let cap_total: f64 = m.nodes().iter().map(|u| u.pool_cap as f64).sum();
        let y: f64 = self.env.yield_forecast[t].iter().sum();
        let mut budget = y + (pool_total - m.weights().reserve_margin * cap_total).max(0.0) / h;
        let compliant = |i: usize| -> Vec<StrategyColumn> {
            let ok: Vec<StrategyColumn> = grids[i]
                .iter()
                .copied()
                .filter(|col| is_compliant(&m.classes()[i], col, &ctx[i], c))
                .collect();
            if ok.is_empty() {
                vec![grids[i][0]]
            } else {
                ok
            }
        };
        let cost = |i: usize, col: &StrategyColumn| lambda[i] * key_cost(&m.classes()[i], col, c);
        let n = m.classes().len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (m.classes()[i].priority, i));
        let sets: Vec<Vec<StrategyColumn>> = (0..n).map(compliant).collect();
        let base_cost: Vec<f64> = (0..n).map(|i| cost(i, &sets[i][0])).collect();
        let mut rest: f64 = base_cost.iter().sum();
        let mut out = vec![grids[0][0]; n];
        for &i in &order {
            rest -= base_cost[i];
            let room = budget - rest;
            let pick = sets[i]
                .iter()
                .filter(|col| cost(i, col) <= room)
                .min_by(|a, b| {
                    residual_success(a, &ctx[i], c)
                        .total_cmp(&residual_success(b, &ctx[i], c))
                        .then(cost(i, a).total_cmp(&cost(i, b)))
                })
                .copied()
                .unwrap_or(sets[i][0]);
            budget -= cost(i, &pick);
            out[i] = pick;
        }
        out
    }

    fn run(&self, plan: Option<&OfflinePlan>, price_override: Option<&[f64]>) -> Result<(EpisodeResult, Vec<f64>)> {
        let m = self.model;
        let env = self.env;
        let n_classes = m.classes().len();
        let n_nodes = m.nodes().len();
        let c = m.crypto();
        let q = m.queue();
        let sim = m.sim();
        let h = sim.lookahead.max(1);
        let oracle = self.variant.policy == Policy::Oracle;
        let ccfg = self.variant.controller_config();

        let mut pools: Vec<KeyPool> = m
            .nodes()
            .iter()
            .enumerate()
            .map(|(u, n)| KeyPool::with_initial(u, n.pool_cap, n.initial_bits, 0))
            .collect();
        let initial_bits: u64 = pools.iter().map(|p| p.total()).sum();
        let mut carry = vec![CarryRegister::default(); n_nodes];
        let mut controller = match self.variant.policy {
            Policy::Proposed | Policy::Oracle => Some(Controller::new(m, ccfg, plan)),
            _ => None,
        };
        let grids: Vec<Vec<StrategyColumn>> = m
            .classes()
            .iter()
            .map(|class| {
                let mut g = crate::objective::grid_columns(m, class);
                g.sort_by(|a, b| key_cost(class, a, c).total_cmp(&key_cost(class, b, c)));
                g
            })
            .collect();
        let static_cols = self.static_columns();
        let fallback = fallback_column(m);
        let transit: Vec<u64> = m.domains().iter().map(|d| d.transit_cap_per_slot.max(0.0) as u64).collect();
        let reserve = m.weights().reserve_margin * m.nodes().iter().map(|n| n.pool_cap as f64).sum::<f64>();
        let config_quota: Vec<f64> = m.domains().iter().map(|d| d.alloc_quota_per_slot).collect();

        let header = TraceHeader {
            // Stamped by the caller, which knows the episode seed.
            seed: 0,
            policy: self.variant.label(),
            config_hash: m.config_hash().to_string(),
            horizon: self.horizon,
            classes: m.classes().iter().map(|c| c.id.clone()).collect(),
            nodes: m.nodes().iter().map(|n| n.id.clone()).collect(),
            initial_bits,
        };
        let mut slots = Vec::with_capacity(self.horizon);
        let mut timing = Vec::with_capacity(self.horizon);
        let mut excess = Vec::with_capacity(self.horizon);

        for t in 0..self.horizon {
            // Expiry, then this slot's generation.
            let mut expired = 0u64;
            for (u, p) in pools.iter_mut().enumerate() {
                expired += expire_in_place(p, t as u64, m.nodes()[u].ttl_slots as u64);
            }
            let pool_now: Vec<u64> = pools.iter().map(|p| p.total()).collect();
            let pool_total: f64 = pool_now.iter().sum::<u64>() as f64;
            let gen = node_generation_bits(m, &env.yields[t]);
            let arrivals = &env.arrivals[t];
            let true_ctx = &env.attack[t];
            let lagged = self.lagged_contexts(t);

            let started = Instant::now();
            let choice = match self.variant.policy {
                Policy::Static => Choice {
                    columns: static_cols.clone(),
                    relaxed_bits: vec![0.0; n_classes],
                    uses_qkd: true,
                    threshold: 0.0,
                },
                Policy::NoQkd => Choice {
                    columns: vec![fallback; n_classes],
                    relaxed_bits: vec![0.0; n_classes],
                    uses_qkd: false,
                    threshold: 0.0,
                },
                Policy::Greedy => Choice {
                    columns: self.greedy_columns(t, &lagged, pool_total, &grids),
                    relaxed_bits: vec![0.0; n_classes],
                    uses_qkd: true,
                    threshold: 0.0,
                },
                Policy::Proposed | Policy::Oracle => {
                    let ctl = controller.as_mut().expect("controller policies own a controller");
                    let (ctx, explore, lambda, yf) = if oracle {
                        let yf: Vec<f64> = (t..(t + h).min(self.horizon))
                            .map(|s| env.yields[s].iter().sum::<u64>() as f64)
                            .collect();
                        let lam: Vec<f64> = arrivals.iter().map(|&a| a as f64).collect();
                        (true_ctx.clone(), true_ctx.clone(), lam, yf)
                    } else {
                        let (mean, upper) = ctl.attempt_estimates();
                        let ctx: Vec<AttackContext> = lagged
                            .iter()
                            .zip(&mean)
                            .map(|(x, &p)| AttackContext { attempt_prob: p, ..*x })
                            .collect();
                        let explore: Vec<AttackContext> = lagged
                            .iter()
                            .zip(&upper)
                            .map(|(x, &p)| AttackContext { attempt_prob: p, ..*x })
                            .collect();
                        let (lam, yf) = if ccfg.forecasting {
                            let yf = (t..(t + h).min(self.horizon))
                                .map(|s| env.yield_forecast[s].iter().sum::<f64>())
                                .collect();
                            (env.lambda[t].clone(), yf)
                        } else if t == 0 {
                            (env.lambda[0].clone(), vec![env.yield_forecast[0].iter().sum::<f64>()])
                        } else {
                            let lam = env.arrivals[t - 1].iter().map(|&a| a as f64).collect();
                            (lam, vec![env.yields[t - 1].iter().sum::<u64>() as f64])
                        };
                        (ctx, explore, lam, yf)
                    };
                    let input = SlotInput {
                        t,
                        ctx: &ctx,
                        ctx_explore: &explore,
                        lambda: &lambda,
                        pool_total,
                        yield_forecast: &yf,
                        price_override: price_override.map(|p| p[t]),
                    };
                    let d = ctl.decide_slot(&input)?;
                    Choice {
                        columns: d.columns,
                        relaxed_bits: d.relaxations,
                        uses_qkd: true,
                        threshold: d.threshold,
                    }
                }
            };
            timing.push(started.elapsed().as_secs_f64());

            // Key demand per class, then per node.
            let kappa: Vec<f64> = (0..n_classes)
                .map(|i| if choice.uses_qkd { key_cost(&m.classes()[i], &choice.columns[i], c) } else { 0.0 })
                .collect();
            let mut relaxed_msgs = vec![0.0; n_classes];
            let mut class_bits = vec![0.0; n_classes];
            for i in 0..n_classes {
                let msgs = arrivals[i] as f64;
                if kappa[i] > 0.0 {
                    relaxed_msgs[i] = (choice.relaxed_bits[i] / kappa[i]).min(msgs);
                }
                class_bits[i] = (msgs - relaxed_msgs[i]) * kappa[i];
            }
            let mut share = vec![Vec::<(usize, f64)>::new(); n_nodes];
            let mut node_expected = vec![0.0; n_nodes];
            for i in 0..n_classes {
                let nodes = m.class_nodes(i);
                for &u in nodes {
                    let b = class_bits[i] / nodes.len() as f64;
                    share[u].push((i, b));
                    node_expected[u] += b;
                }
            }
            let demand: Vec<u64> = (0..n_nodes).map(|u| carry[u].draw(node_expected[u])).collect();

            // Route surplus to deficits, then serve what each node holds.
            let net: Vec<i64> = (0..n_nodes)
                .map(|u| demand[u] as i64 - (pool_now[u] + gen[u]) as i64)
                .collect();
            let routing = route_keys(&self.topo, &env.yields[t], &net, &transit)?;
            let flows = routing.flows();
            let io = flows.node_io(&self.topo);
            let mut served = vec![0u64; n_nodes];
            let mut short = vec![0u64; n_nodes];
            let (mut generated, mut consumed, mut overflow, mut deficit) = (0u64, 0u64, 0u64, 0u64);
            let mut node_supply = vec![0.0; n_nodes];
            for u in 0..n_nodes {
                let (rin, rout) = io[u];
                let avail = pool_now[u] + gen[u] + rin - rout;
                served[u] = demand[u].min(avail);
                short[u] = demand[u] - served[u];
                let out = step_in_place(
                    &mut pools[u],
                    t as u64,
                    PoolFlows {
                        generated_in: gen[u],
                        routed_in: rin,
                        routed_out: rout,
                        consumed: served[u],
                        expired: 0,
                    },
                );
                generated += gen[u];
                consumed += served[u];
                overflow += out.overflow;
                deficit += short[u];
                node_supply[u] = gen[u] as f64 + rin as f64 - rout as f64;
            }
            // Unserved demand against the pool headroom a pacing budget
            // would release this slot.
            let held: f64 = pools.iter().map(|p| p.total() as f64).sum();
            excess.push(deficit as f64 - (held - reserve).max(0.0) / h as f64);

            // Shortfall lands on the lowest recovery weights first.
            let mut lost_bits = vec![0.0; n_classes];
            let mut served_bits = class_bits.clone();
            for u in 0..n_nodes {
                if short[u] == 0 {
                    continue;
                }
                let mut order = share[u].clone();
                match ccfg.arbitration {
                    Arbitration::Msv => order.sort_by(|a, b| {
                        m.classes()[a.0].recovery_weight.total_cmp(&m.classes()[b.0].recovery_weight).then(a.0.cmp(&b.0))
                    }),
                    Arbitration::RoundRobin => order.sort_by_key(|&(i, _)| (i + n_classes - t % n_classes) % n_classes),
                }
                let mut left = short[u] as f64;
                for (i, b) in order {
                    let take = b.min(left);
                    lost_bits[i] += take;
                    served_bits[i] -= take;
                    left -= take;
                    if left <= 0.0 {
                        break;
                    }
                }
            }

            // Per-class delivery, exposure, delay.
            let net_state = NetSlotState::from_slot(
                q.bandwidth_bits_per_slot,
                &arrivals.iter().map(|&a| a as f64).collect::<Vec<_>>(),
                sim.slot_seconds,
                q.net_propagation,
            );
            let util = utilization(m.classes(), &choice.columns, &net_state, q, c);
            let rho_fb_all: Vec<f64> = (0..n_classes).map(|i| residual_success(&fallback, &true_ctx[i], c)).collect();
            let mut rec_rho = vec![0.0; n_classes];
            let mut rec_risk = vec![0.0; n_classes];
            let mut rec_delay = vec![0.0; n_classes];
            let mut sla = vec![0.0; n_classes];
            let mut deferred = vec![0.0; n_classes];
            let mut fallback_msgs = vec![0.0; n_classes];
            let mut successes = vec![false; n_classes];
            let mut strat = [0.0f64; 3];
            let mut qosec_ok = true;
            for i in 0..n_classes {
                let class = &m.classes()[i];
                let col = &choice.columns[i];
                let n = arrivals[i] as f64;
                let lost = if kappa[i] > 0.0 {
                    (lost_bits[i] / kappa[i]).min(n - relaxed_msgs[i]) + relaxed_msgs[i]
                } else {
                    0.0
                };
                let rho_col = residual_success(col, &true_ctx[i], c);
                let rho_fb = rho_fb_all[i];
                let must_defer = class.forbid_s3 || class.qosec_cap.is_some_and(|cap| rho_fb > cap);
                let (n_def, n_fb) = if must_defer { (lost, 0.0) } else { (0.0, lost) };
                let n_main = n - lost;
                let rho_mix = if n > 0.0 {
                    ((n_main + n_def) * rho_col + n_fb * rho_fb) / n
                } else {
                    rho_col
                };
                let d = end_to_end_delay(class, col, util, &net_state, q, c);
                rec_rho[i] = rho_mix;
                rec_risk[i] = risk_from_rho(class, &true_ctx[i], rho_mix);
                rec_delay[i] = d.seconds;
                deferred[i] = n_def;
                fallback_msgs[i] = n_fb;
                sla[i] = n_def + if d.seconds > class.sla_delay { n - n_def } else { 0.0 };
                successes[i] = env.attempts[t][i] && env.success_draw[t][i] < rho_mix;
                if let Some(cap) = class.qosec_cap {
                    qosec_ok &= rho_mix <= cap;
                }
                strat[col.strategy.index()] += n_main + n_def;
                strat[Strategy::AesMac.index()] += n_fb;
            }
            let total_msgs: f64 = strat.iter().sum();
            if total_msgs > 0.0 {
                for s in &mut strat {
                    *s /= total_msgs;
                }
            }

            let cross: u64 = self
                .topo
                .links
                .iter()
                .zip(&flows.link_flows)
                .filter(|(&(u, v), _)| m.node_domain(u) != m.node_domain(v))
                .map(|(_, f)| f.unsigned_abs())
                .sum();
            let pools_after: Vec<u64> = pools.iter().map(|p| p.total()).collect();

            let (pool_price, node_price) = match &controller {
                Some(ctl) => (
                    price_override.map(|p| p[t]).unwrap_or(ctl.prices().pool),
                    ctl.prices().mean_node(),
                ),
                None => (0.0, 0.0),
            };
            if let Some(ctl) = controller.as_mut() {
                let mut domain_use = vec![0.0; m.domains().len()];
                for u in 0..n_nodes {
                    if !domain_use.is_empty() {
                        domain_use[m.node_domain(u)] += served[u] as f64;
                    }
                }
                let quota = plan.and_then(|p| p.quotas_at(t)).map(|q| q.to_vec()).unwrap_or_else(|| config_quota.clone());
                let yf_nodes = node_generation_f64(m, &env.yield_forecast[t]);
                let demand_f: Vec<f64> = demand.iter().map(|&d| d as f64).collect();
                let pools_f: Vec<f64> = pools_after.iter().map(|&p| p as f64).collect();
                let gen_f: Vec<f64> = gen.iter().map(|&g| g as f64).collect();
                ctl.observe(&SlotFeedback {
                    node_demand: &demand_f,
                    node_supply: &node_supply,
                    node_pool: &pools_f,
                    node_gen: &gen_f,
                    node_gen_forecast: &yf_nodes,
                    domain_usage: &domain_use,
                    domain_quota: &quota,
                    attempts: &env.attempts[t],
                    delays: &rec_delay,
                });
            }

            slots.push(SlotRecord {
                t,
                arrivals: arrivals.clone(),
                attempts: env.attempts[t].clone(),
                successes,
                columns: choice.columns,
                rho: rec_rho,
                risk: rec_risk,
                delay: rec_delay,
                sla_violations: sla,
                deferred,
                fallback: fallback_msgs,
                relaxed_bits: choice.relaxed_bits,
                key_bits: served_bits,
                pools: pools_after,
                generated,
                consumed,
                expired,
                overflow,
                deficit,
                routed: flows.total(),
                cross_domain: cross,
                pool_price,
                node_price,
                threshold: choice.threshold,
                strategy_shares: strat,
                qosec_ok,
            });
        }

        let trace = EpisodeTrace { header, slots };
        let summary = EpisodeSummary::from_trace(m, &trace);
        Ok((
            EpisodeResult {
                trace,
                summary,
                decision_seconds: timing,
            },
            excess,
        ))
    }
}

/// Runs one episode of `variant` over a pre-generated environment.
///
/// The oracle first runs [`ORACLE_SWEEPS`] dual sweeps over the realized
/// series and reports the final sweep.
pub fn run_episode_on(
    model: &ValidatedModel,
    variant: Variant,
    plan: Option<&OfflinePlan>,
    env: &EnvSeries,
    seed: u64,
) -> Result<EpisodeResult> {
    let owned;
    let model = match variant.ablation {
        Ablation::NoReserve => {
            owned = model.with_config(|c| c.weights.reserve_margin = 0.0)?;
            &owned
        }
        _ => model,
    };
    let runner = Runner {
        model,
        env,
        topo: Topology::from_model(model),
        variant,
        horizon: env.horizon,
    };
    let (mut result, _) = if variant.policy == Policy::Oracle {
        let schedule = model.weights().dual_step_schedule;
        let mut prices = vec![0.0; env.horizon];
        let mut last = None;
        for k in 0..ORACLE_SWEEPS {
            let (res, excess) = runner.run(plan, Some(&prices))?;
            let gamma = schedule.step(k);
            let next: Vec<f64> = prices
                .iter()
                .zip(&excess)
                .map(|(p, e)| crate::controller::dual_step(*p, *e, gamma))
                .collect();
            let fixed = next == prices;
            prices = next;
            last = Some((res, excess));
            if fixed {
                // Further sweeps would replay the same episode.
                break;
            }
        }
        if last.is_none() {
            last = Some(runner.run(plan, Some(&prices))?);
        }
        last.expect("at least one sweep")
    } else {
        runner.run(plan, None)?
    };
    result.trace.header.seed = seed;
    Ok(result)
}

/// Generates the environment for `seed` and runs one episode.
pub fn run_episode(
    model: &ValidatedModel,
    variant: Variant,
    plan: Option<&OfflinePlan>,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeResult> {
    let env = EnvSeries::generate(model, horizon, seed);
    run_episode_on(model, variant, plan, &env, seed)
}
