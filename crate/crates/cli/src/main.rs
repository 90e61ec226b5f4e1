use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use sbm_core::config::{config_keys, write_atomic, RunConfig};
use sbm_core::estimators::{
    bhp_statistic, boundary_profile, carleson_statistic, dynkin_residual, expected_exit_time, exit_functional,
    generator_table, green_function, harnack_statistic, martin_ratio, GeneratorSource, Payoff,
};
use sbm_core::experiments::{parse_test_function, run_experiment, setup, PayoffSpec, EXPERIMENTS};
use sbm_core::sampler::Simulator;
use sbm_core::targets::BallTarget;

#[derive(Parser, Debug)]
#[command(
    name = "sbm",
    version,
    about = "Simulate subordinate Brownian motions with a Gaussian part and estimate exit distributions, Green functions and boundary statistics",
    after_help = after_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment id (experiment.id).
    #[arg(long, global = true)]
    id: Option<String>,

    /// run.seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// run.paths (accepts 1e6)
    #[arg(long, global = true)]
    paths: Option<f64>,

    /// run.workers
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// domain.spec
    #[arg(long, global = true)]
    domain: Option<String>,

    /// domain.dim
    #[arg(long, global = true)]
    dim: Option<usize>,

    /// kernel.spec
    #[arg(long, global = true)]
    kernel: Option<String>,

    /// run.output_dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Simulate exit records from estimator.x and write them as CSV.
    Sample,
    /// E_x[payoff(X_τ)] for estimator.payoff.
    ExitDist,
    /// Mean exit time E_x[τ_D].
    Tau,
    /// Green function G_D(x, y).
    Green,
    /// Boundary Harnack statistics at estimator.q with radius estimator.r.
    Bhp,
    /// Harnack statistic over estimator.grid in a ball domain.
    Harnack,
    /// Carleson statistic at estimator.q with radius estimator.r.
    Carleson,
    /// Martin kernel ratios along the normal at estimator.q.
    Martin,
    /// One-dimensional exit profile on (0, estimator.b).
    Profile,
    /// Dynkin residual for estimator.test_function.
    Dynkin,
    /// Run a named experiment (experiment.id) and write its report.
    Experiment,
    /// Summarise the experiment reports in the output directory.
    Report,
}

fn after_help() -> String {
    let mut s = String::from("Configuration keys (set in the TOML file or override with --section.key=value):\n");
    for k in config_keys() {
        s.push_str("  ");
        s.push_str(&k);
        s.push('\n');
    }
    s.push_str(&format!("\nExperiments: {}\n", EXPERIMENTS.join(", ")));
    s.push_str("\nExit status: 0 success, 2 claim failure, 1 error.\n");
    s
}

/// Split `--section.key=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--") {
            Some(body) if body.split('=').next().is_some_and(|k| k.contains('.')) && body.contains('=') => {
                overrides.push(body.to_string());
            }
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load_config(cli: &Cli, mut overrides: Vec<String>) -> Result<RunConfig> {
    let mut shortcuts = Vec::new();
    if let Some(v) = &cli.id {
        shortcuts.push(format!("experiment.id={v:?}"));
    }
    if let Some(v) = cli.seed {
        shortcuts.push(format!("run.seed={v}"));
    }
    if let Some(v) = cli.paths {
        if !(v >= 1.0 && v.fract() == 0.0) {
            bail!("--paths must be a positive integer, got {v}");
        }
        shortcuts.push(format!("run.paths={}", v as u64));
    }
    if let Some(v) = cli.workers {
        shortcuts.push(format!("run.workers={v}"));
    }
    if let Some(v) = &cli.domain {
        shortcuts.push(format!("domain.spec={v:?}"));
    }
    if let Some(v) = cli.dim {
        shortcuts.push(format!("domain.dim={v}"));
    }
    if let Some(v) = &cli.kernel {
        shortcuts.push(format!("kernel.spec={v:?}"));
    }
    if let Some(v) = &cli.out {
        shortcuts.push(format!("run.output_dir={:?}", v.display().to_string()));
    }
    // explicit --section.key overrides win over shortcuts
    shortcuts.append(&mut overrides);
    Ok(RunConfig::load(cli.config.as_deref(), &shortcuts)?)
}

fn require_point(name: &str, v: &[f64], dim: usize) -> Result<Vec<f64>> {
    if v.len() != dim {
        bail!("estimator.{name} must have {dim} coordinates, got {}", v.len());
    }
    Ok(v.to_vec())
}

fn grid_rows(cfg: &RunConfig, dim: usize) -> Result<Vec<Vec<f64>>> {
    let g = &cfg.estimator.grid;
    if g.is_empty() || g.len() % dim != 0 {
        bail!("estimator.grid must be a nonempty flat list of {dim}-coordinate rows");
    }
    Ok(g.chunks(dim).map(|c| c.to_vec()).collect())
}

fn record(cfg: &RunConfig, command: &str, result: Value) -> Value {
    let mut v = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.run.seed,
    });
    if let (Value::Object(m), Value::Object(r)) = (&mut v, result) {
        m.extend(r);
    }
    v
}

fn estimator_json(r: &sbm_core::estimators::EstimatorResult) -> Value {
    json!({
        "value": r.value,
        "std_error": r.std_error,
        "n": r.n_paths,
        "truncated_fraction": r.truncated_fraction,
        "warnings": r.warnings,
        "provenance": r.provenance,
    })
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<PathBuf> {
    let p = dir.join(name);
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

/// Ball payoffs become Lévy-system targets tabulated over the distances
/// reachable from the domain's bounding box.
fn ball_target(sim: &Simulator, spec: &PayoffSpec) -> Result<Option<BallTarget>> {
    let PayoffSpec::Ball { center, radius } = spec else { return Ok(None) };
    let (lo, hi) = sim.domain().bounding_box();
    let mut near = 0.0f64;
    let mut far = 0.0f64;
    for i in 0..center.len() {
        let gap = (lo[i] - center[i]).max(center[i] - hi[i]).max(0.0);
        near += gap * gap;
        let span = (center[i] - lo[i]).abs().max((hi[i] - center[i]).abs());
        far += span * span;
    }
    let (near, far) = (near.sqrt(), far.sqrt());
    if near <= *radius {
        return Ok(None);
    }
    Ok(Some(BallTarget::new(sim.kernel(), center.clone(), *radius, near * 0.999, far * 1.001)?))
}

fn run(cmd: Command, cfg: &RunConfig) -> Result<bool> {
    let out = cfg.output_dir();
    let batch = cfg.batch();
    let n = cfg.run.paths;
    if cmd == Command::Experiment {
        let output = run_experiment(cfg)?;
        let report = &output.report;
        for (name, body) in &output.artifacts {
            write_atomic(&out.join(name), body.as_bytes())?;
        }
        let v = serde_json::to_value(report)?;
        let path = write_json(&out, &format!("{}.json", report.experiment), &v)?;
        for c in &report.claims {
            println!("{:<13} {} = {:.6} (band [{}, {}])", format!("{:?}", c.verdict).to_uppercase(), c.name, c.statistic, c.band[0], c.band[1]);
        }
        println!("report: {}", path.display());
        for c in report.failing() {
            eprintln!("claim not passed: {} ({:?})", c.name, c.verdict);
        }
        return Ok(report.passed());
    }
    if cmd == Command::Report {
        return summarize_reports(&out);
    }
    if cmd == Command::Profile {
        let f = cfg.bernstein()?;
        let grid = cfg.estimator.grid.clone();
        let rec = boundary_profile(&f, cfg.estimator.b, &grid, cfg.scheme, n, &batch)?;
        let v = record(cfg, "profile", serde_json::to_value(&rec)?);
        let p = write_json(&out, "profile.json", &v)?;
        println!("slope {:.4} ± {:.4}; {}", rec.slope, rec.slope_se, p.display());
        return Ok(true);
    }
    let (domain, kernel) = setup(cfg)?;
    let d = domain.dim();
    let sim = Simulator::new(&domain, &kernel, cfg.scheme)?;
    let est = &cfg.estimator;
    let (name, v) = match cmd {
        Command::Sample => {
            let x = require_point("x", &est.x, d)?;
            let recs = sim.simulate_exit_batch(&x, n, &batch)?;
            let mut csv = String::from("exit_time,");
            for i in 0..d {
                csv.push_str(&format!("exit_{i},"));
            }
            csv.push_str("exited_by_jump,truncated,jumps\n");
            for r in &recs {
                csv.push_str(&format!("{},", r.exit_time));
                for c in &r.exit_position {
                    csv.push_str(&format!("{c},"));
                }
                csv.push_str(&format!("{},{},{}\n", r.exited_by_jump, r.truncated, r.jumps));
            }
            write_atomic(&out.join("sample.csv"), csv.as_bytes())?;
            let truncated = recs.iter().filter(|r| r.truncated).count();
            ("sample", record(cfg, "sample", json!({"n": recs.len(), "truncated": truncated, "csv": "sample.csv"})))
        }
        Command::ExitDist => {
            let x = require_point("x", &est.x, d)?;
            let spec = PayoffSpec::parse(&est.payoff, d)?;
            let target = ball_target(&sim, &spec)?;
            let g = spec.indicator();
            let payoff = match &target {
                Some(t) => Payoff::LandsIn(t),
                None => Payoff::AtExit(&*g),
            };
            let r = exit_functional(&sim, &x, &[payoff], n, &batch)?.remove(0);
            ("exit-dist", record(cfg, "exit-dist", estimator_json(&r)))
        }
        Command::Tau => {
            let x = if est.x.is_empty() { vec![0.0; d] } else { require_point("x", &est.x, d)? };
            let r = expected_exit_time(&sim, &x, n, &batch)?;
            ("tau", record(cfg, "tau", estimator_json(&r)))
        }
        Command::Green => {
            let x = require_point("x", &est.x, d)?;
            let y = require_point("y", &est.y, d)?;
            let g = green_function(&sim, &x, &y, est.bandwidth, n, &batch)?;
            let mut v = estimator_json(&g.estimate);
            v["bandwidth"] = json!(g.bandwidth);
            v["half_bandwidth"] = estimator_json(&g.half_bandwidth);
            ("green", record(cfg, "green", v))
        }
        Command::Bhp => {
            let q = require_point("q", &est.q, d)?;
            let s1 = PayoffSpec::parse(&est.payoff, d)?;
            let f1 = s1.indicator();
            let s2 = est.payoff2.as_deref().map(|p| PayoffSpec::parse(p, d)).transpose()?;
            let f2 = s2.as_ref().map(|s| s.indicator());
            let mut list: Vec<&(dyn Fn(&[f64]) -> f64 + Sync)> = vec![&*f1];
            if let Some(f) = &f2 {
                list.push(&**f);
            }
            let rec = bhp_statistic(&sim, &q, est.r, &list, n, &batch)?;
            ("bhp", record(cfg, "bhp", serde_json::to_value(&rec)?))
        }
        Command::Harnack => {
            let grid = grid_rows(cfg, d)?;
            let spec = PayoffSpec::parse(&est.payoff, d)?;
            let target = ball_target(&sim, &spec)?;
            let g = spec.indicator();
            let payoff = match &target {
                Some(t) => Payoff::LandsIn(t),
                None => Payoff::AtExit(&*g),
            };
            let stat = harnack_statistic(&sim, payoff, &grid, n, &batch)?;
            ("harnack", record(cfg, "harnack", serde_json::to_value(&stat)?))
        }
        Command::Carleson => {
            let q = require_point("q", &est.q, d)?;
            let spec = PayoffSpec::parse(&est.payoff, d)?;
            let g = spec.indicator();
            let stat = carleson_statistic(&sim, &q, est.r, &*g, n, &batch)?;
            ("carleson", record(cfg, "carleson", serde_json::to_value(&stat)?))
        }
        Command::Martin => {
            let x = require_point("x", &est.x, d)?;
            let x0 = require_point("x0", &est.x0, d)?;
            let z = require_point("q", &est.q, d)?;
            let rec = martin_ratio(&sim, &x, &x0, &z, &est.ts, n, &batch)?;
            ("martin", record(cfg, "martin", serde_json::to_value(&rec)?))
        }
        Command::Dynkin => {
            let x = require_point("x", &est.x, d)?;
            let center = if est.x0.is_empty() { vec![0.0; d] } else { require_point("x0", &est.x0, d)? };
            let f = parse_test_function(&est.test_function, center)?;
            let (lo, hi) = domain.bounding_box();
            let reach = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
            let table = generator_table(sim.kernel(), &*f, 2.0 * reach)?;
            let r = dynkin_residual(&sim, &x, &*f, &GeneratorSource::Table(&table), n, &batch)?;
            ("dynkin", record(cfg, "dynkin", estimator_json(&r)))
        }
        Command::Experiment | Command::Report | Command::Profile => unreachable!("handled above"),
    };
    let p = write_json(&out, &format!("{name}.json"), &v)?;
    if let Some(val) = v.get("value") {
        println!("{name}: {} ± {}", val, v["std_error"]);
    }
    println!("result: {}", p.display());
    Ok(true)
}

fn summarize_reports(dir: &Path) -> Result<bool> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    let mut all_pass = true;
    let mut seen = 0;
    for p in entries {
        let text = std::fs::read_to_string(&p)?;
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if v.get("schema_version").is_none() {
            continue;
        }
        seen += 1;
        let id = v["experiment"].as_str().unwrap_or("?");
        let claims = v["claims"].as_array().cloned().unwrap_or_default();
        let passed = claims.iter().filter(|c| c["verdict"] == "pass").count();
        println!("{id}: {passed}/{} claims passed", claims.len());
        for c in claims.iter().filter(|c| c["verdict"] != "pass") {
            all_pass = false;
            println!("  {} {}: {}", c["verdict"].as_str().unwrap_or("?"), c["name"].as_str().unwrap_or("?"), c["statistic"]);
        }
    }
    if seen == 0 {
        return Err(anyhow!("no experiment reports in {}", dir.display()));
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let result = load_config(&cli, overrides).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
