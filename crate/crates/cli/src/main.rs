//! `keyalloc`: validate configs, build offline plans, and run simulations.
//!
//! Exit codes: 0 ok, 1 other failure, 2 parse, 3 invariant, 4 dangling
//! reference, 5 no base-feasible assignment, 6 recovery failed, 7 io,
//! 64 usage.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use keyalloc_core::model::{default_config_json, validate_config, ValidatedModel};
use keyalloc_core::planner::{plan_for_model, OfflinePlan};
use keyalloc_core::sim::{episode_seeds, run_monte_carlo, Ablation, MetricsSet, MonteCarloResult, Policy, Variant};
use keyalloc_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "keyalloc", version, about = "Key-budgeted security allocation planner and simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config JSON; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for `plan`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Number of Monte Carlo episodes.
    #[arg(long, default_value_t = 30)]
    seeds: usize,
    /// Slots per episode; the config horizon when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Offline plan produced by `keyalloc plan`.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print its hash.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the offline plan.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Forecast scenarios; the config's count when omitted.
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Run one policy over seeded episodes and write traces and metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        policy: Policy,
    },
    /// Scale link yields over a grid and record risk against key use.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// Multipliers on every link's maximum yield.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75, 1.0, 1.5, 2.0])]
        budgets: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [Policy::Proposed, Policy::Static, Policy::Greedy])]
        policies: Vec<Policy>,
    },
    /// Paired comparison of policies plus the proposed controller's ablations.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = Policy::ALL)]
        policies: Vec<Policy>,
        /// Skip the ablation table.
        #[arg(long)]
        no_ablations: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<Error>().map(Error::exit_code).unwrap_or(1);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

fn load_model(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<ValidatedModel> {
    let raw = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => default_config_json().to_string(),
    };
    let model = validate_config(&raw)?;
    Ok(match seed {
        Some(s) => model.with_config(|c| c.seed = s)?,
        None => model,
    })
}

fn load_plan(path: Option<&Path>, model: &ValidatedModel, policies: &[Policy]) -> anyhow::Result<Option<OfflinePlan>> {
    let Some(path) = path else {
        if let Some(p) = policies.iter().find(|p| p.needs_plan()) {
            return Err(Error::Usage(format!("policy `{p}` needs --plan")).into());
        }
        return Ok(None);
    };
    let raw = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let plan = OfflinePlan::from_json(&raw)?;
    if plan.config_hash != model.config_hash() {
        return Err(Error::invariant("plan.config_hash", "plan was built for a different config").into());
    }
    Ok(Some(plan))
}

fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn horizon(model: &ValidatedModel, run: &RunArgs) -> usize {
    run.horizon.unwrap_or(model.sim().horizon_slots)
}

fn summary_json(metrics: &MetricsSet) -> anyhow::Result<String> {
    metrics.check().map_err(|rule| Error::invariant("metrics", rule))?;
    Ok(serde_json::to_string_pretty(metrics)?)
}

fn timing_json(result: &MonteCarloResult) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(&json!({ "decision_time": result.timing }))?)
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Validate { config } => {
            let model = load_model(config.as_deref(), None)?;
            println!("ok {}", model.config_hash());
        }
        Command::Plan { common, scenarios } => {
            let model = load_model(common.config.as_deref(), common.seed)?;
            let count = scenarios.unwrap_or(model.sim().scenario_count);
            let plan = plan_for_model(&model, count, model.seed())?;
            let path = common.out.clone().unwrap_or_else(|| PathBuf::from("plan.json"));
            write(&path, &plan.to_json())?;
            println!("plan {} ({} scenarios)", path.display(), plan.scenario_count);
        }
        Command::Simulate { common, run, policy } => {
            let model = load_model(common.config.as_deref(), common.seed)?;
            let plan = load_plan(run.plan.as_deref(), &model, &[policy])?;
            let seeds = episode_seeds(&model, run.seeds);
            let h = horizon(&model, &run);
            let res = run_monte_carlo(&model, &[Variant::plain(policy)], plan.as_ref(), &seeds, h, run.parallelism, true)?;
            let dir = out_dir(&common);
            for (k, trace) in res.traces[0].iter().enumerate() {
                write(&dir.join("traces").join(format!("{policy}-{k:03}-{}.ndjson", seeds[k])), &trace.to_ndjson())?;
            }
            write(&dir.join("summary.json"), &summary_json(&res.metrics)?)?;
            write(&dir.join("metrics.csv"), &res.metrics.to_csv())?;
            write(&dir.join("timing.json"), &timing_json(&res)?)?;
            let p = &res.metrics.policies[0];
            println!(
                "{policy}: {} episodes, cumulative risk {:.6e}{}",
                seeds.len(),
                p.mean("cumulative_risk"),
                if seeds.len() < 2 { " (degenerate CI)" } else { "" }
            );
        }
        Command::Sweep { common, run, budgets, policies } => {
            if budgets.len() < 2 {
                return Err(Error::Usage("a sweep needs at least two budget points".into()).into());
            }
            let base = load_model(common.config.as_deref(), common.seed)?;
            let h = horizon(&base, &run);
            let variants: Vec<Variant> = policies.iter().copied().map(Variant::plain).collect();
            let mut csv = String::from("config_hash,master_seed,policy,budget,risk_mean,risk_ci_low,risk_ci_high,key_bits_mean\n");
            for &b in &budgets {
                let model = base.with_config(|c| {
                    for l in &mut c.links {
                        l.yield_max *= b;
                    }
                })?;
                let plan = if policies.iter().any(|p| p.needs_plan()) {
                    Some(plan_for_model(&model, model.sim().scenario_count, model.seed())?)
                } else {
                    None
                };
                let seeds = episode_seeds(&model, run.seeds);
                let res = run_monte_carlo(&model, &variants, plan.as_ref(), &seeds, h, run.parallelism, false)?;
                for p in &res.metrics.policies {
                    let r = p.stat("cumulative_risk").expect("risk metric");
                    let _ = writeln!(
                        csv,
                        "{},{},{},{b},{},{},{},{}",
                        base.config_hash(),
                        base.seed(),
                        p.policy,
                        r.mean,
                        r.ci_low,
                        r.ci_high,
                        p.mean("key_bits_consumed")
                    );
                }
            }
            let dir = out_dir(&common);
            write(&dir.join("pareto.csv"), &csv)?;
            println!("pareto {} ({} budgets x {} policies)", dir.join("pareto.csv").display(), budgets.len(), policies.len());
        }
        Command::Compare { common, run, policies, no_ablations } => {
            let model = load_model(common.config.as_deref(), common.seed)?;
            let mut need: Vec<Policy> = policies.clone();
            if !no_ablations {
                need.push(Policy::Proposed);
            }
            let plan = load_plan(run.plan.as_deref(), &model, &need)?;
            let mut variants: Vec<Variant> = policies.iter().copied().map(Variant::plain).collect();
            if !no_ablations {
                if !policies.contains(&Policy::Proposed) {
                    variants.push(Variant::plain(Policy::Proposed));
                }
                variants.extend(Ablation::SWITCHES.map(Variant::ablated));
            }
            let seeds = episode_seeds(&model, run.seeds);
            let h = horizon(&model, &run);
            let res = run_monte_carlo(&model, &variants, plan.as_ref(), &seeds, h, run.parallelism, false)?;
            let dir = out_dir(&common);
            write(&dir.join("summary.json"), &summary_json(&res.metrics)?)?;
            write(&dir.join("metrics.csv"), &res.metrics.to_csv())?;
            write(&dir.join("timing.json"), &timing_json(&res)?)?;
            if !no_ablations {
                write(&dir.join("ablation.csv"), &ablation_csv(&res.metrics))?;
            }
            for p in &res.metrics.policies {
                println!("{:<28} risk {:.6e}", p.policy, p.mean("cumulative_risk"));
            }
        }
    }
    Ok(())
}

/// One row per ablation: headline metrics of the ablated controller minus
/// the full controller.
fn ablation_csv(m: &MetricsSet) -> String {
    const HEADLINE: [&str; 5] = ["cumulative_risk", "key_bits_consumed", "key_efficiency", "qosec_rate", "deferred_msgs"];
    let mut out = format!(
        "config_hash,master_seed,ablation,{}\n",
        HEADLINE.map(|k| format!("delta_{k}")).join(",")
    );
    let Some(full) = m.policy(Policy::Proposed.label()) else {
        return out;
    };
    for a in Ablation::SWITCHES {
        let Some(p) = m.policy(&Variant::ablated(a).label()) else {
            continue;
        };
        let deltas = HEADLINE.map(|k| (p.mean(k) - full.mean(k)).to_string());
        let _ = writeln!(out, "{},{},{},{}", m.config_hash, m.master_seed, a.label(), deltas.join(","));
    }
    out
}
