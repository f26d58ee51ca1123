//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs with `cargo test --test acceptance`.

#[path = "../../core/tests/support/exact_lp.rs"]
mod exact_lp;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use keyalloc_core::controller::{dual_step, update_duals, Controller, ControllerConfig, ShadowPrices, SlotInput, SlotUsage};
use keyalloc_core::crypto::mac_len_clamped;
use keyalloc_core::env::EnvSeries;
use keyalloc_core::model::{default_model, ScriptedShock, Strategy, StrategyColumn, ValidatedModel};
use keyalloc_core::planner::{plan_for_model, solve_slot_fractional, ClassMenu, MenuPoint, OfflinePlan};
use keyalloc_core::queueing::kingman_wait;
use keyalloc_core::sim::{episode_seeds, run_episode, run_monte_carlo, Policy, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn plan(model: &ValidatedModel) -> OfflinePlan {
    plan_for_model(model, model.sim().scenario_count, model.seed()).expect("default config plans")
}

fn knapsack_matches_exact_lp() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6e_6170);
    let mut worst: f64 = 0.0;
    let mut cert_fail = 0;
    let n = 500;
    for _ in 0..n {
        let classes = rng.gen_range(1..=6);
        let mut menus = Vec::with_capacity(classes);
        let mut raw = Vec::with_capacity(classes);
        for i in 0..classes {
            // A convex chain of up to five points plus one dominated point.
            let steps = rng.gen_range(0..=4);
            let mut cost = rng.gen_range(1.0..50.0);
            let mut risk = rng.gen_range(50.0..100.0);
            let mut slope: f64 = rng.gen_range(1.0..5.0);
            let mut pts = vec![(cost, risk)];
            for _ in 0..steps {
                let dc = rng.gen_range(1.0..40.0);
                cost += dc;
                risk -= (slope * dc).min(risk * 0.9);
                slope *= rng.gen_range(0.2..0.9);
                pts.push((cost, risk));
            }
            let (c0, r0) = pts[0];
            pts.push((c0 + rng.gen_range(1.0..60.0), r0 + rng.gen_range(0.0..10.0)));
            menus.push(ClassMenu {
                class: i,
                unit_loss: 1.0,
                premium: 0.0,
                points: pts
                    .iter()
                    .map(|&(cost, risk)| MenuPoint {
                        col: StrategyColumn::new(Strategy::AesMac, 0.0, 1),
                        cost,
                        risk,
                    })
                    .collect(),
            });
            raw.push(pts);
        }
        let base: f64 = raw.iter().map(|c| c.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)).sum();
        let top: f64 = raw.iter().map(|c| c.iter().map(|p| p.0).fold(0.0, f64::max)).sum();
        let budget = base + rng.gen::<f64>() * (top - base) * 1.1;
        let exact = exact_lp::lp_optimum(&raw, budget).expect("budget covers base");
        let alloc = solve_slot_fractional(&menus, budget, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((alloc.risk() - exact_lp::to_f64(&exact)).abs());
        if !alloc.certificate_holds() {
            cert_fail += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && cert_fail == 0 && secs < 10.0,
        format!("{n} instances, max |greedy - exact| = {worst:.2e}, certificate failures {cert_fail}, {secs:.2} s"),
    )
}

fn kingman_reduces_to_mm1() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let rho = 0.05 + 0.09 * i as f64;
            let mu = 0.5 * 2f64.powi(j);
            let got = kingman_wait(rho, 1.0, 1.0, mu).map_err(|e| e.to_string())?;
            let want = rho / (mu * (1.0 - rho));
            worst = worst.max((got - want).abs() / want.max(1.0));
        }
    }
    check(worst <= 1e-12, format!("100 grid points, max scaled error {worst:.2e}"))
}

fn keys_are_conserved(model: &ValidatedModel, plan: &OfflinePlan) -> Outcome {
    let seeds = episode_seeds(model, 3);
    let variants = Policy::ALL.map(Variant::plain);
    let h = model.sim().horizon_slots;
    let res = run_monte_carlo(model, &variants, Some(plan), &seeds, h, 1, true).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for (v, traces) in variants.iter().zip(&res.traces) {
        for t in traces {
            if !t.ledger().balances() {
                bad.push(format!("{} seed {}: {:?}", v.label(), t.header.seed, t.ledger()));
            }
        }
    }
    check(bad.is_empty(), format!("{} episodes checked {}", 3 * variants.len(), bad.join("; ")))
}

fn proposed_stays_compliant(model: &ValidatedModel, plan: &OfflinePlan) -> Outcome {
    let h = model.sim().horizon_slots;
    let bound: Vec<usize> = (0..model.classes().len()).filter(|&i| model.classes()[i].forbid_s3).collect();
    let (mut s3, mut short_tag, mut ok_slots, mut slots) = (0.0, 0usize, 0usize, 0usize);
    for seed in episode_seeds(model, 30) {
        let r = run_episode(model, Variant::plain(Policy::Proposed), Some(plan), h, seed).map_err(|e| e.to_string())?;
        for s in &r.trace.slots {
            slots += 1;
            ok_slots += usize::from(s.qosec_ok);
            for &i in &bound {
                if s.columns[i].strategy == Strategy::AesMac {
                    s3 += s.arrivals[i] as f64;
                }
                s3 += s.fallback[i];
                let class = &model.classes()[i];
                if s.columns[i].strategy.uses_auth_knob()
                    && mac_len_clamped(s.columns[i].auth_knob, model.crypto()) < class.min_tag_bits
                {
                    short_tag += 1;
                }
            }
        }
    }
    let rate = ok_slots as f64 / slots as f64;
    check(
        s3 == 0.0 && short_tag == 0 && rate >= 0.97,
        format!(
            "30 episodes: bound-class S3 messages {s3}, short tags {short_tag}, QoSec rate {rate:.4} ({} the 0.99 target)",
            if rate >= 0.99 { "meets" } else { "below" }
        ),
    )
}

/// Shared 30-seed, five-policy run: the ordering check and the runtime budget.
fn ordering_and_runtime(model: &ValidatedModel, plan: &OfflinePlan) -> (Outcome, Outcome) {
    let seeds = episode_seeds(model, 30);
    let variants = Policy::ALL.map(Variant::plain);
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let start = Instant::now();
    let res = match run_monte_carlo(model, &variants, Some(plan), &seeds, model.sim().horizon_slots, threads, false) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let secs = start.elapsed().as_secs_f64();
    let m = &res.metrics;
    let risk = |p: Policy| m.policy(p.label()).expect("policy ran").mean("cumulative_risk");
    let sla = |p: Policy, c: &str| m.policy(p.label()).expect("policy ran").mean(&format!("sla_rate.{c}"));
    let (o, p) = (risk(Policy::Oracle), risk(Policy::Proposed));
    let floor = risk(Policy::Static).min(risk(Policy::Greedy)).min(risk(Policy::NoQkd));
    let sla_ok = ["M1", "M4"].iter().all(|c| sla(Policy::Proposed, c) < sla(Policy::Static, c));
    let ordering = check(
        o <= p && p <= floor && sla_ok,
        format!(
            "risk oracle {o:.4e} <= proposed {p:.4e} <= min(static {:.4e}, greedy {:.4e}, no_qkd {:.4e}); \
             SLA M1 {:.4} vs static {:.4}, M4 {:.4} vs static {:.4}",
            risk(Policy::Static),
            risk(Policy::Greedy),
            risk(Policy::NoQkd),
            sla(Policy::Proposed, "M1"),
            sla(Policy::Static, "M1"),
            sla(Policy::Proposed, "M4"),
            sla(Policy::Static, "M4"),
        ),
    );
    let runtime = check(
        secs < 900.0,
        format!("30 seeds x {} slots x 5 policies in {secs:.1} s on {threads} thread(s)", model.sim().horizon_slots),
    );
    (ordering, runtime)
}

fn shock_raises_prices_and_strength(base: &ValidatedModel) -> Outcome {
    let (pre, start, end) = (480, 600, 720);
    let model = base
        .with_config(|c| {
            c.sim.weather.scripted_shocks.push(ScriptedShock {
                start_slot: start,
                end_slot: end,
                severity: 0.6,
                attack_magnitude: 0.3,
            })
        })
        .map_err(|e| e.to_string())?;
    let plan = plan(&model);
    let seeds = episode_seeds(&model, 10);
    let (mut p_pre, mut p_in, mut s_pre, mut s_in) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &seeds {
        let r = run_episode(&model, Variant::plain(Policy::Proposed), Some(&plan), end, seed).map_err(|e| e.to_string())?;
        let mean = |a: usize, b: usize, f: &dyn Fn(usize) -> f64| (a..b).map(f).sum::<f64>() / (b - a) as f64;
        let sl = &r.trace.slots;
        p_pre += mean(pre, start, &|t| sl[t].node_price);
        p_in += mean(start, end, &|t| sl[t].node_price);
        s_pre += mean(pre, start, &|t| sl[t].strategy_shares[0] + sl[t].strategy_shares[1]);
        s_in += mean(start, end, &|t| sl[t].strategy_shares[0] + sl[t].strategy_shares[1]);
    }
    let k = seeds.len() as f64;
    let (p_pre, p_in, s_pre, s_in) = (p_pre / k, p_in / k, s_pre / k, s_in / k);
    check(
        p_in > p_pre && s_in > s_pre,
        format!("node price {p_pre:.3e} -> {p_in:.3e}, S1+S2 share {s_pre:.4} -> {s_in:.4}"),
    )
}

fn dual_update_examples() -> Outcome {
    let prices = ShadowPrices {
        node: vec![0.2],
        domain: vec![],
        pool: 0.2,
    };
    let usage = |cons: f64, avail: f64| SlotUsage {
        node_consumption: vec![cons],
        node_available: vec![avail],
        ..Default::default()
    };
    let down = update_duals(&prices, &usage(10.0, 15.0), 0.1);
    let up = update_duals(&prices, &usage(25.0, 15.0), 0.01);
    check(
        down.node[0] == 0.0 && up.node[0] == 0.3 && dual_step(0.2, 10.0, 0.01) == 0.3,
        format!("0.2 -> {} under excess -5, 0.2 -> {} under excess +10", down.node[0], up.node[0]),
    )
}

fn keep_classes(base: &ValidatedModel, keep: &[usize]) -> ValidatedModel {
    base.with_config(|c| {
        let all = std::mem::take(&mut c.classes);
        c.classes = keep.iter().map(|&i| all[i].clone()).collect();
    })
    .expect("subset of a valid config is valid")
}

fn decide_matches_brute_force(base: &ValidatedModel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6272_7574);
    let mut mismatches = Vec::new();
    let mut count = 0;
    for (instances, width) in [(100, 1), (50, 3)] {
        for k in 0..instances {
            let mut keep: Vec<usize> = (0..base.classes().len()).collect();
            while keep.len() > width {
                keep.remove(rng.gen_range(0..keep.len()));
            }
            let model = keep_classes(base, &keep);
            let n = model.classes().len();
            let ctx: Vec<_> = (0..n)
                .map(|_| {
                    keyalloc_core::crypto::AttackContext::new(
                        rng.gen_range(0.0..0.5),
                        rng.gen_range(4096.0..1.0e6),
                        rng.gen_range(1.0..30.0),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            let lambda: Vec<f64> = model.classes().iter().map(|c| c.lambda_base * rng.gen_range(0.2..2.0)).collect();
            let yields = [1e12];
            let inp = SlotInput {
                t: k,
                ctx: &ctx,
                ctx_explore: &ctx,
                lambda: &lambda,
                pool_total: 1e12,
                yield_forecast: &yields,
                price_override: None,
            };
            let mut ctl = Controller::new(&model, ControllerConfig::default(), None);
            let (menus, _) = ctl.candidate_menus(&inp);
            let d = ctl.decide_slot(&inp).map_err(|e| e.to_string())?;
            let value = |i: usize, p: &MenuPoint| p.risk + (d.reserve_price + menus[i].premium) * p.cost;
            // Exhaustive walk over the product of candidate sets.
            let mut best = (f64::INFINITY, Vec::new());
            let mut idx = vec![0usize; n];
            loop {
                let v: f64 = (0..n).map(|i| value(i, &menus[i].points[idx[i]])).sum();
                if v < best.0 {
                    best = (v, idx.iter().enumerate().map(|(i, &j)| menus[i].points[j].col.key()).collect());
                }
                let mut pos = 0;
                while pos < n {
                    idx[pos] += 1;
                    if idx[pos] < menus[pos].points.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
            let chosen: Vec<_> = d.columns.iter().map(|c| c.key()).collect();
            let got: f64 = (0..n)
                .map(|i| {
                    let p = menus[i].points.iter().find(|p| p.col.key() == chosen[i]).expect("decision within candidates");
                    value(i, p)
                })
                .sum();
            let tie = (got - best.0).abs() <= 1e-12 * best.0.abs().max(1.0);
            if chosen != best.1 && !tie {
                mismatches.push(format!("width {width} instance {k}: {got} vs {}", best.0));
            }
            count += 1;
        }
    }
    check(mismatches.is_empty(), format!("{count} instances, mismatches: {}", mismatches.len()))
}

/// `copies` replicas of every default class with arrivals scaled down so
/// the offered load stays the same.
fn replicated(base: &ValidatedModel, copies: usize) -> ValidatedModel {
    base.with_config(|c| {
        let orig = std::mem::take(&mut c.classes);
        for k in 0..copies {
            for cl in &orig {
                let mut x = cl.clone();
                x.id = format!("{}_{k}", cl.id);
                x.lambda_base /= copies as f64;
                x.relax_cap /= copies as f64;
                c.classes.push(x);
            }
        }
    })
    .expect("replicated config is valid")
}

fn median_decision_seconds(model: &ValidatedModel, slots: usize) -> f64 {
    let env = EnvSeries::generate(model, slots, 11);
    let mut ctl = Controller::new(model, ControllerConfig::default(), None);
    let pool: f64 = model.nodes().iter().map(|n| n.initial_bits as f64).sum();
    let mut times = Vec::with_capacity(slots);
    for t in 0..slots {
        let yf: Vec<f64> = (t..(t + 5).min(slots)).map(|s| env.yield_forecast[s].iter().sum()).collect();
        let inp = SlotInput {
            t,
            ctx: &env.attack[t],
            ctx_explore: &env.attack[t],
            lambda: &env.lambda[t],
            pool_total: pool,
            yield_forecast: &yf,
            price_override: None,
        };
        let start = Instant::now();
        let d = ctl.decide_slot(&inp);
        times.push(start.elapsed().as_secs_f64());
        assert!(d.is_ok());
    }
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn decision_time_scales(base: &ValidatedModel) -> Outcome {
    let small = median_decision_seconds(base, 400);
    let large = median_decision_seconds(&replicated(base, 100), 100);
    let ratio = large / small;
    check(
        ratio < 150.0 && small < 1e-3,
        format!("median C=5 {:.1} us, C=500 {:.1} us, ratio {ratio:.1}", small * 1e6, large * 1e6),
    )
}

fn read_traces(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("traces"))
        .expect("trace dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("trace"))
        })
        .collect();
    out.sort();
    out
}

fn cli_traces_are_deterministic() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_keyalloc");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let plan = tmp.path().join("plan.json");
    let st = Command::new(bin).args(["plan", "--out"]).arg(&plan).output().map_err(|e| e.to_string())?;
    if !st.status.success() {
        return Err(format!("plan exited with {}", st.status));
    }
    let run = |name: &str, par: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let out = tmp.path().join(name);
        let st = Command::new(bin)
            .args(["simulate", "--policy", "proposed", "--seeds", "3", "--parallelism", par, "--plan"])
            .arg(&plan)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(format!("simulate exited with {}", st.status));
        }
        Ok(read_traces(&out))
    };
    let a = run("a", "1")?;
    let b = run("b", "1")?;
    let c = run("c", "8")?;
    let bytes: usize = a.iter().map(|(_, t)| t.len()).sum();
    check(
        a.len() == 3 && a == b && a == c,
        format!("{} traces, {bytes} bytes, identical across reruns and parallelism 1/8", a.len()),
    )
}

fn main() {
    let model = default_model();
    let plan = plan(&model);
    let mut results: Vec<(&str, Outcome)> = vec![
        ("knapsack equals exact LP", knapsack_matches_exact_lp()),
        ("kingman reduces to M/M/1", kingman_reduces_to_mm1()),
        ("key conservation", keys_are_conserved(&model, &plan)),
        ("compliance and QoSec", proposed_stays_compliant(&model, &plan)),
    ];
    let (ordering, runtime) = ordering_and_runtime(&model, &plan);
    results.push(("policy ordering", ordering));
    results.push(("shock price response", shock_raises_prices_and_strength(&model)));
    results.push(("dual update examples", dual_update_examples()));
    results.push(("decision vs brute force", decide_matches_brute_force(&model)));
    results.push(("decision time scaling", decision_time_scales(&model)));
    results.push(("trace determinism", cli_traces_are_deterministic()));
    results.push(("full suite runtime", runtime));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
