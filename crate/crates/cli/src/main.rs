mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use epicast::data::{
    generate_synthetic_with_truth, load_panels, temporal_split, write_panels, SyntheticScenario, TemporalSplit,
    WeeklyPanel,
};
use epicast::engine::{
    finetune, load_model, pretrain_multistate, save_model, train_pipeline, write_forecast_csv, ForecastModel,
    ForecastResult, LagMode, RolloutPlan,
};
use epicast::metrics::{bootstrap_compare, MetricKind, MetricReport};

use config::{parse_assignment, read_overrides, RunConfig};

/// Sentinel written over labels by `--poison-labels`.
const POISON: f64 = 1e9;

#[derive(Parser)]
#[command(name = "epicast", version, about = "Climate-driven weekly incidence forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config with flat dotted (or nested) keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override one config key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct Forecasting {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    state: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Monte Carlo dropout passes; 0 for a single dropout-free pass.
    #[arg(long)]
    mc_passes: Option<usize>,
    /// Overwrite incidence after the launch week with a sentinel before
    /// forecasting; the observed column still comes from the clean data.
    #[arg(long)]
    poison_labels: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lags {
    Actual,
    Synthetic,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-state panel with known truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        states: usize,
        #[arg(long, default_value_t = 312)]
        weeks: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Train a single-state model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        state: String,
        #[command(flatten)]
        common: Common,
    },
    /// One-week-ahead forecasts over a range of target weeks.
    Onestep {
        #[command(flatten)]
        input: Forecasting,
        #[arg(long, value_enum, default_value = "actual")]
        lags: Lags,
        /// First target week index (default: first test week).
        #[arg(long)]
        from: Option<usize>,
        /// One past the last target week index (default: panel end).
        #[arg(long)]
        to: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Multi-week forecast from a launch week using synthetic lags only.
    Rollout {
        #[command(flatten)]
        input: Forecasting,
        #[arg(long, default_value_t = 52)]
        horizon: usize,
        /// Launch week index (default: last training week).
        #[arg(long)]
        start: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one embedding network on several states.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated state ids (default: every state in the file).
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a pretrained checkpoint to a new state.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        state: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Train on the first N weeks only (default: the configured train fraction).
        #[arg(long)]
        train_weeks: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Roll out over each state's test segment and report metrics.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
        #[arg(long)]
        mc_passes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Paired bootstrap comparison of two per-state metric files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "mare")]
        metric: String,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<epicast::Error>()) {
        Some(inner) if inner.is_numeric() => 3,
        _ => 2,
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(task: &str, common: &Common, flags: &[(&str, Value)]) -> Result<RunConfig> {
    let mut overrides = BTreeMap::new();
    if let Some(path) = &common.config {
        overrides.extend(read_overrides(path)?);
    }
    for s in &common.set {
        let (k, v) = parse_assignment(s)?;
        overrides.insert(k, v);
    }
    if let Some(seed) = common.seed {
        for k in ["seed", "train.seed", "mc.seed"] {
            overrides.insert(k.to_string(), json!(seed));
        }
    }
    for (k, v) in flags {
        overrides.insert(k.to_string(), v.clone());
    }
    overrides.insert("task".into(), json!(task));
    overrides.insert("paths.out_dir".into(), json!(common.out_dir));
    let cfg = RunConfig::new(task).with_overrides(&overrides)?;
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    cfg.write(&common.out_dir.join("config.json"))?;
    Ok(cfg)
}

fn load_state(path: &Path, state: &str) -> Result<WeeklyPanel> {
    let panels = load_panels(path).with_context(|| format!("loading {}", path.display()))?;
    let known: Vec<String> = panels.iter().map(|p| p.state_id().to_string()).collect();
    panels
        .into_iter()
        .find(|p| p.state_id() == state)
        .ok_or_else(|| anyhow::anyhow!(epicast::Error::UnknownState(format!("{state} (file has {})", known.join(", ")))))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_forecast(path: &Path, results: &[ForecastResult]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_forecast_csv(std::io::BufWriter::new(file), results)?;
    Ok(())
}

fn split_of(model: &ForecastModel, panel: &WeeklyPanel) -> Result<TemporalSplit> {
    Ok(temporal_split(panel.len(), model.config.protocol.train_frac)?)
}

fn test_metrics(model: &ForecastModel, panel: &WeeklyPanel, mc: &epicast::engine::McOptions) -> Result<(ForecastResult, MetricReport)> {
    let test = split_of(model, panel)?.test;
    let plan = RolloutPlan { start: test.start - 1, horizon: test.len() };
    let r = model.rollout(panel, plan, mc)?;
    let (weeks, y, p) = r.paired();
    let report = MetricReport::compute(panel.state_id(), &weeks, &y, &p)?;
    Ok((r, report))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { states, weeks, noise, common } => {
            let cfg = resolve("synth", &common, &[])?;
            if states == 0 {
                bail!(epicast::Error::InvalidInput("need at least one state".into()));
            }
            let mut scenario = SyntheticScenario::family(states, noise, cfg.pipeline.seed);
            scenario.n_weeks = weeks;
            if states == 1 {
                scenario.states = SyntheticScenario::default().states;
            }
            let generated = generate_synthetic_with_truth(&scenario);
            let panels: Vec<WeeklyPanel> = generated.iter().map(|g| g.panel.clone()).collect();
            write_panels(common.out_dir.join("synthetic.csv"), &panels)?;
            let mut truth = fs::File::create(common.out_dir.join("truth.csv"))?;
            writeln!(truth, "state,year,week,truth")?;
            for g in &generated {
                for (i, v) in g.truth.iter().enumerate() {
                    let w = g.panel.week(i);
                    writeln!(truth, "{},{},{},{}", g.panel.state_id(), w.year, w.week, v)?;
                }
            }
            println!("wrote {} states x {} weeks to {}", states, weeks, common.out_dir.display());
        }
        Command::Train { data, state, common } => {
            let cfg = resolve("train", &common, &[("paths.data", json!(data))])?;
            let panel = load_state(&data, &state)?;
            let (model, report) = train_pipeline(&panel, &cfg.pipeline)?;
            let ckpt = common.out_dir.join("checkpoint");
            let manifest = save_model(&model, &ckpt)?;
            let (forecast, metrics) = test_metrics(&model, &panel, &epicast::engine::McOptions::deterministic())?;
            write_forecast(&common.out_dir.join("test_forecast.csv"), &[forecast])?;
            write_json(
                &common.out_dir.join("report.json"),
                &json!({ "param_hash": manifest.param_hash, "training": report, "test_metrics": metrics }),
            )?;
            println!("param_hash {}", manifest.param_hash);
            println!("test mse {:.6} r2 {} mare {:.6}", metrics.mse, fmt_opt(metrics.r2), metrics.mare);
        }
        Command::Onestep { input, lags, from, to, common } => {
            let mut flags = vec![("paths.data", json!(input.data)), ("paths.checkpoint", json!(input.checkpoint))];
            if let Some(t) = input.mc_passes {
                flags.push(("mc.passes", json!(t)));
            }
            let cfg = resolve("onestep", &common, &flags)?;
            let clean = load_state(&input.data, &input.state)?;
            let model = load_model(&input.checkpoint)?;
            let from = match from {
                Some(f) => f,
                None => split_of(&model, &clean)?.test.start,
            };
            let to = to.unwrap_or(clean.len());
            if from == 0 || to <= from {
                bail!(epicast::Error::InvalidInput(format!("empty target range {from}..{to}")));
            }
            let panel = if input.poison_labels { clean.with_poisoned_incidence(from, POISON) } else { clean.clone() };
            let mode = match lags {
                Lags::Actual => LagMode::Actual,
                Lags::Synthetic => LagMode::Synthetic,
            };
            let mut r = model.one_step(&panel, from..to, mode, &cfg.pipeline.mc)?;
            r.attach_observed(&clean)?;
            write_forecast(&common.out_dir.join("forecast.csv"), &[r])?;
        }
        Command::Rollout { input, horizon, start, common } => {
            let mut flags = vec![("paths.data", json!(input.data)), ("paths.checkpoint", json!(input.checkpoint))];
            if let Some(t) = input.mc_passes {
                flags.push(("mc.passes", json!(t)));
            }
            let cfg = resolve("rollout", &common, &flags)?;
            let clean = load_state(&input.data, &input.state)?;
            let model = load_model(&input.checkpoint)?;
            let start = match start {
                Some(s) => s,
                None => split_of(&model, &clean)?.train.end - 1,
            };
            let panel = if input.poison_labels { clean.with_poisoned_incidence(start + 1, POISON) } else { clean.clone() };
            let mut r = model.rollout(&panel, RolloutPlan { start, horizon }, &cfg.pipeline.mc)?;
            r.attach_observed(&clean)?;
            write_forecast(&common.out_dir.join("forecast.csv"), &[r])?;
        }
        Command::Pretrain { data, states, common } => {
            let cfg = resolve("pretrain", &common, &[("paths.data", json!(data))])?;
            let mut panels = load_panels(&data).with_context(|| format!("loading {}", data.display()))?;
            if !states.is_empty() {
                for s in &states {
                    if !panels.iter().any(|p| p.state_id() == s) {
                        bail!(epicast::Error::UnknownState(s.clone()));
                    }
                }
                panels.retain(|p| states.iter().any(|s| s == p.state_id()));
            }
            let (model, report) = pretrain_multistate(&panels, &cfg.pipeline)?;
            let manifest = save_model(&model, &common.out_dir.join("checkpoint"))?;
            write_json(&common.out_dir.join("report.json"), &json!({ "param_hash": manifest.param_hash, "pretraining": report }))?;
            println!("pretrained on {} states, param_hash {}", report.states.len(), manifest.param_hash);
        }
        Command::Finetune { data, state, checkpoint, train_weeks, common } => {
            let cfg = resolve("finetune", &common, &[("paths.data", json!(data)), ("paths.checkpoint", json!(checkpoint))])?;
            let panel = load_state(&data, &state)?;
            let mut base = load_model(&checkpoint)?;
            base.config.transfer = cfg.pipeline.transfer.clone();
            base.config.train = cfg.pipeline.train.clone();
            base.config.mc = cfg.pipeline.mc;
            let train = match train_weeks {
                Some(n) => 0..n,
                None => temporal_split(panel.len(), base.config.protocol.train_frac)?.train,
            };
            let (model, report) = finetune(&base, &panel, train)?;
            let manifest = save_model(&model, &common.out_dir.join("checkpoint"))?;
            let (_, metrics) = test_metrics(&model, &panel, &epicast::engine::McOptions::deterministic())?;
            write_json(
                &common.out_dir.join("report.json"),
                &json!({ "param_hash": manifest.param_hash, "finetuning": report, "test_metrics": metrics }),
            )?;
            println!("fine-tuned {state}, param_hash {}", manifest.param_hash);
        }
        Command::Evaluate { data, checkpoint, states, mc_passes, common } => {
            let mut flags = vec![("paths.data", json!(data)), ("paths.checkpoint", json!(checkpoint))];
            if let Some(t) = mc_passes {
                flags.push(("mc.passes", json!(t)));
            }
            let cfg = resolve("evaluate", &common, &flags)?;
            let model = load_model(&checkpoint)?;
            let panels = load_panels(&data).with_context(|| format!("loading {}", data.display()))?;
            let wanted = if states.is_empty() { model.states() } else { states };
            let mut reports = Vec::new();
            let mut forecasts = Vec::new();
            for s in &wanted {
                let panel = panels
                    .iter()
                    .find(|p| p.state_id() == s)
                    .ok_or_else(|| anyhow::anyhow!(epicast::Error::UnknownState(s.clone())))?;
                let (f, m) = test_metrics(&model, panel, &cfg.pipeline.mc)?;
                println!("{s}: mse {:.6} r2 {} mare {:.6}", m.mse, fmt_opt(m.r2), m.mare);
                forecasts.push(f);
                reports.push(m);
            }
            write_forecast(&common.out_dir.join("forecast.csv"), &forecasts)?;
            write_json(&common.out_dir.join("metrics.json"), &reports)?;
        }
        Command::Compare { a, b, metric, iterations, common } => {
            let cfg = resolve("compare", &common, &[])?;
            let kind: MetricKind = metric.parse()?;
            let ra = read_reports(&a)?;
            let rb = read_reports(&b)?;
            let keys_a: Vec<&String> = ra.keys().collect();
            let keys_b: Vec<&String> = rb.keys().collect();
            if keys_a != keys_b {
                bail!(epicast::Error::InvalidInput(format!("state sets differ: {keys_a:?} vs {keys_b:?}")));
            }
            let pick = |r: &MetricReport| -> Result<f64> {
                Ok(match kind {
                    MetricKind::Mse => r.mse,
                    MetricKind::Mare => r.mare,
                    MetricKind::R2 => r.r2.ok_or_else(|| {
                        anyhow::anyhow!(epicast::Error::InvalidInput(format!("state {} has no r2", r.state_id)))
                    })?,
                })
            };
            let xa = ra.values().map(pick).collect::<Result<Vec<f64>>>()?;
            let xb = rb.values().map(pick).collect::<Result<Vec<f64>>>()?;
            let summary = bootstrap_compare(&xa, &xb, kind, iterations, 0.95, cfg.pipeline.seed)?;
            write_json(&common.out_dir.join("bootstrap.json"), &summary)?;
            println!("{:<8} {:>12} {:>26} {:>10}", "metric", "mean delta", "95% CI", "P(A better)");
            println!(
                "{:<8} {:>12.6} {:>26} {:>10.4}",
                metric,
                summary.mean_delta,
                format!("[{:.6}, {:.6}]", summary.delta_ci.0, summary.delta_ci.1),
                summary.win_probability
            );
        }
    }
    Ok(())
}

fn read_reports(path: &Path) -> Result<BTreeMap<String, MetricReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let list: Vec<MetricReport> =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!(epicast::Error::from(e))).with_context(|| format!("parsing {}", path.display()))?;
    let mut out = BTreeMap::new();
    for r in list {
        if out.insert(r.state_id.clone(), r).is_some() {
            bail!(epicast::Error::InvalidInput(format!("duplicate state in {}", path.display())));
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}
