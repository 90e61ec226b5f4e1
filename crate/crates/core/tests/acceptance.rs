//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset by passing substrings of the labels, e.g.
//! `cargo test -p sbm-core --test acceptance -- kernel dynkin`.

use std::f64::consts::PI;
use std::time::Instant;

use sbm_core::batch::BatchConfig;
use sbm_core::bernstein::BernsteinFunction;
use sbm_core::config::RunConfig;
use sbm_core::estimators::{
    dynkin_residual, expected_exit_time, generator_table, green_functions, log_log_slope, GeneratorSource,
};
use sbm_core::experiments::{run_experiment, ExperimentReport, Verdict, EXPERIMENTS};
use sbm_core::geometry::make_ball;
use sbm_core::jump_kernel::{ln_j_quadrature, JumpKernel, Route};
use sbm_core::sampler::{SchemeConfig, Simulator};
use sbm_core::test_functions::{CappedQuadratic, Constant, GaussianBump, TestFunction};

type Outcome = Result<(bool, String), String>;

struct Suite {
    filters: Vec<String>,
    failed: Vec<String>,
}

impl Suite {
    fn run(&mut self, id: &str, label: &str, f: impl FnOnce() -> Outcome) {
        let tag = format!("{id} {label}");
        if !self.filters.is_empty() && !self.filters.iter().any(|s| tag.contains(s.as_str())) {
            return;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().unwrap_or_default())));
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let mark = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id:<3} {mark}  {label}: {detail} [{secs:.1}s]");
        if !ok {
            self.failed.push(tag);
        }
    }
}

fn batch(seed: u64) -> BatchConfig {
    BatchConfig {
        seed,
        chunk_size: 4096,
        workers: 1,
    }
}

fn experiment(id: &str, overrides: &[&str]) -> Result<ExperimentReport, String> {
    let mut o: Vec<String> = vec![format!("experiment.id=\"{id}\"")];
    o.extend(overrides.iter().map(|s| s.to_string()));
    let cfg = RunConfig::from_toml_str("", &o).map_err(|e| e.to_string())?;
    Ok(run_experiment(&cfg).map_err(|e| e.to_string())?.report)
}

/// Claims whose names start with `prefix`, as `(name, statistic, verdict)`.
fn claims<'a>(r: &'a ExperimentReport, prefix: &str) -> Vec<(&'a str, f64, Verdict)> {
    r.claims
        .iter()
        .filter(|c| c.name.starts_with(prefix))
        .map(|c| (c.name.as_str(), c.statistic, c.verdict))
        .collect()
}

fn quadrature_oracle() -> Outcome {
    let f = BernsteinFunction::gamma();
    let mut worst: f64 = 0.0;
    for k in 0..=80 {
        let lambda = 10f64.powf(-2.0 + 4.0 * k as f64 / 80.0);
        let phi = f.phi_eval(lambda).map_err(|e| e.to_string())?;
        let exact = lambda + lambda.ln_1p();
        worst = worst.max(((phi - exact) / exact).abs());
        let psi = f.psi_quadrature(lambda).map_err(|e| e.to_string())?.value;
        worst = worst.max(((psi - lambda.ln_1p()) / lambda.ln_1p()).abs());
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e} over λ ∈ [1e-2, 1e2] (≤ 1e-8)")))
}

fn kernel_construction() -> Outcome {
    let mut worst: f64 = 0.0;
    let families = [
        (BernsteinFunction::stable(0.5, 1.0).unwrap(), 2usize),
        (BernsteinFunction::stable(1.0, 1.0).unwrap(), 3),
        (BernsteinFunction::gamma(), 2),
    ];
    for (f, d) in &families {
        for k in 0..100 {
            let r = 10f64.powf(-4.0 + 6.0 * k as f64 / 99.0);
            let gk = ln_j_quadrature(f, *d, r, Route::GaussKronrod).map_err(|e| e.to_string())?;
            let de = ln_j_quadrature(f, *d, r, Route::DoubleExponential).map_err(|e| e.to_string())?;
            worst = worst.max((gk - de).exp_m1().abs());
        }
    }
    let mut ok = worst <= 1e-6;
    let mut detail = format!("dual-route max relative gap {worst:.2e} at 100 radii x 3 kernels (≤ 1e-6)");
    for (d, alpha) in [(2usize, 0.5), (3, 1.0)] {
        let k = JumpKernel::build(&BernsteinFunction::stable(alpha, 1.0).unwrap(), d).map_err(|e| e.to_string())?;
        let pts: Vec<(f64, f64)> = (0..=12)
            .map(|i| {
                let r = 10f64.powf(-6.0 + 0.25 * i as f64);
                (r.ln(), k.ln_j(r))
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let target = -(d as f64 + alpha);
        ok &= (slope - target).abs() <= 0.02;
        detail += &format!("; slope(d={d},α={alpha}) = {slope:.4} (target {target} ± 0.02)");
    }
    Ok((ok, detail))
}

fn exit_time_oracle() -> Outcome {
    let d = 3;
    let ball = make_ball(vec![0.0; d], 1.0).map_err(|e| e.to_string())?;
    let kernel = JumpKernel::zero(d);
    let sim = Simulator::new(&ball, &kernel, SchemeConfig::default()).map_err(|e| e.to_string())?;
    let exact = 1.0 / 6.0;
    let res = expected_exit_time(&sim, &[0.0; 3], 1_000_000, &batch(31)).map_err(|e| e.to_string())?;
    let z = (res.value - exact) / res.std_error;
    // graded start would cover whole paths at these step sizes and hide the dt dependence
    let ungraded = SchemeConfig {
        graded_start: false,
        ..SchemeConfig::default()
    };
    let mut pts = Vec::new();
    for (i, dt) in [0.16, 0.08, 0.04, 0.02, 0.01].into_iter().enumerate() {
        let s = Simulator::new(&ball, &kernel, SchemeConfig { dt, ..ungraded }).map_err(|e| e.to_string())?;
        let r = expected_exit_time(&s, &[0.0; 3], 1_000_000, &batch(32 + i as u64)).map_err(|e| e.to_string())?;
        pts.push((dt, (r.value - exact).abs(), r.std_error));
    }
    let (order, order_se, used) = log_log_slope(&pts);
    let ok = z.abs() <= 3.0 && used >= 2 && order >= 0.8;
    Ok((
        ok,
        format!(
            "E[τ] = {:.5} ± {:.1e} vs 1/6 ({z:+.2} SE, ≤ 3); bias order {order:.2} ± {order_se:.2} from {used} significant dt values (≥ 0.8)",
            res.value, res.std_error
        ),
    ))
}

fn disc_green(x: &[f64], y: &[f64], c: f64) -> f64 {
    let nx = x[0] * x[0] + x[1] * x[1];
    let ny = y[0] * y[0] + y[1] * y[1];
    let dxy = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    c * ((1.0 - nx) * (1.0 - ny) / dxy).ln_1p()
}

fn green_oracle() -> Outcome {
    let pairs: [([f64; 2], [f64; 2]); 5] = [
        ([0.0, 0.0], [0.5, 0.0]),
        ([0.3, 0.0], [-0.3, 0.0]),
        ([0.0, 0.2], [0.5, 0.4]),
        ([-0.4, -0.2], [0.2, -0.5]),
        ([0.6, 0.0], [0.0, 0.6]),
    ];
    let disc = make_ball(vec![0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let kernel = JumpKernel::zero(2);
    let sim = Simulator::new(&disc, &kernel, SchemeConfig::default()).map_err(|e| e.to_string())?;
    let mut literal: f64 = 0.0;
    let mut generator: f64 = 0.0;
    let mut first = String::new();
    for (i, (x, y)) in pairs.iter().enumerate() {
        let g = green_functions(&sim, x, &[(y.to_vec(), None)], 1_000_000, &batch(40 + i as u64))
            .map_err(|e| e.to_string())?
            .remove(0)
            .estimate;
        let f = disc_green(x, y, 1.0 / (2.0 * PI));
        let h = disc_green(x, y, 1.0 / (4.0 * PI));
        literal = literal.max(((g.value - f) / f).abs());
        generator = generator.max(((g.value - h) / h).abs());
        if i == 0 {
            first = format!("G(0, |y|=0.5) = {:.4} ± {:.1e} vs {f:.4}", g.value, g.std_error);
        }
    }
    Ok((
        literal <= 0.10,
        format!(
            "{first}; max relative error vs (1/2π)log form {literal:.3} (≤ 0.10); \
             vs (1/4π)log form, the Green function of the generator Δ: {generator:.3}"
        ),
    ))
}

fn exit_time_comparability() -> Outcome {
    let r = experiment("exit_time_scaling", &["run.paths=1000000", "experiment.kernels=[\"stable:alpha=1,a=1\"]"])?;
    let c = claims(&r, "exit_time_ratio[stable:alpha=1");
    let (_, ratio, verdict) = *c.first().ok_or("missing exit_time_ratio claim")?;
    Ok((
        ratio <= 2.5 && verdict == Verdict::Pass,
        format!("φ(λ)=λ+√λ, max/min E[τ_B(0,r)]/r² = {ratio:.4} (≤ 2.5), verdict {verdict:?}"),
    ))
}

fn decay_rate() -> Outcome {
    let r = experiment("bhp", &[])?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s, v) in claims(&r, "decay_slope[stable") {
        ok &= (0.85..=1.15).contains(&s) && v == Verdict::Pass;
        parts.push(format!("{name} = {s:.3}"));
    }
    for c in r.claims.iter().filter(|c| c.name.starts_with("bhp_ratio[stable")) {
        let reported = c.notes.iter().any(|n| n.contains("excluded"));
        ok &= c.statistic.is_finite() && reported && c.verdict == Verdict::Pass;
        parts.push(format!("{} = {:.3} ({})", c.name, c.statistic, c.notes.join("; ")));
    }
    ok &= parts.len() == 8;
    Ok((ok, format!("slopes in [0.85, 1.15], ratios finite: {}", parts.join(", "))))
}

fn green_comparability() -> Outcome {
    let r = experiment("green", &[])?;
    let c = r
        .claims
        .iter()
        .find(|c| c.name == "green_comparability[stable:alpha=1,a=1]")
        .ok_or("missing green_comparability claim")?;
    let pairs_ok = c.notes.iter().any(|n| n.contains("of 20 pairs"));
    Ok((
        c.statistic <= 25.0 && c.verdict == Verdict::Pass && pairs_ok,
        format!("d=3 stable α=1, max/min G/g = {:.3} (≤ 25); {}", c.statistic, c.notes.join("; ")),
    ))
}

fn harnack_carleson() -> Outcome {
    let r = experiment("harnack", &[])?;
    let all: Vec<_> = claims(&r, "harnack[").into_iter().chain(claims(&r, "carleson[")).collect();
    let ok = all.len() == 5 && all.iter().all(|(_, s, v)| *s <= 10.0 && *v == Verdict::Pass);
    let parts: Vec<String> = all.iter().map(|(n, s, _)| format!("{n} = {s:.3}")).collect();
    Ok((ok, format!("all ≤ 10: {}", parts.join(", "))))
}

fn counterexample() -> Outcome {
    let r = experiment(
        "counterexample",
        &["run.paths=20000", "experiment.rare_paths=200000", "scheme.dt=1e-4"],
    )?;
    let decay = r.claim("carleson_ratio_decay").ok_or("missing carleson_ratio_decay claim")?;
    let unreach = claims(&r, "one_jump_unreachability");
    let structural = unreach.len() == 3 && unreach.iter().all(|(_, s, _)| *s == 0.0);
    let ok = decay.statistic <= 1.0 / 3.0 && decay.verdict == Verdict::Pass && structural;
    Ok((
        ok,
        format!(
            "ratio(n=6)/ratio(n=2) = {:.3} ± {:.3} (≤ 1/3); one-jump unreachability exactly 0 at n=2,4,6: {structural}; {}",
            decay.statistic,
            decay.std_error.unwrap_or(f64::NAN),
            decay.notes.join("; ")
        ),
    ))
}

fn dynkin() -> Outcome {
    let ball = make_ball(vec![0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let x = [0.3, 0.1];
    let constant = Constant::new(2, 1.0);
    let quadratic = CappedQuadratic::new(vec![0.0, 0.0], 1.0, 4.0);
    let bump = GaussianBump::new(vec![0.0, 0.0], 0.5, 1.0);
    let mut ok = true;
    let mut parts = Vec::new();
    for (ki, spec) in ["pure_bm", "stable:alpha=1,a=1"].into_iter().enumerate() {
        let f = BernsteinFunction::parse(spec).map_err(|e| e.to_string())?;
        let kernel = JumpKernel::build(&f, 2).map_err(|e| e.to_string())?;
        let sim = Simulator::new(&ball, &kernel, SchemeConfig::default()).map_err(|e| e.to_string())?;
        let fns: [(&str, &dyn TestFunction); 3] = [("constant", &constant), ("quadratic", &quadratic), ("bump", &bump)];
        for (fi, (name, tf)) in fns.into_iter().enumerate() {
            let seed = batch(50 + 10 * ki as u64 + fi as u64);
            let res = if kernel.is_zero() {
                let lap = |p: &[f64]| tf.laplacian(p);
                dynkin_residual(&sim, &x, tf, &GeneratorSource::Exact(&lap), 100_000, &seed)
            } else {
                let table = generator_table(&kernel, tf, 2.0).map_err(|e| e.to_string())?;
                dynkin_residual(&sim, &x, tf, &GeneratorSource::Table(&table), 100_000, &seed)
            }
            .map_err(|e| e.to_string())?;
            if name == "constant" {
                ok &= res.value == 0.0;
                parts.push(format!("{spec}/{name}: {:.1e}", res.value));
            } else {
                let z = res.value / res.std_error;
                ok &= z.abs() <= 3.0;
                parts.push(format!("{spec}/{name}: {:.2e} ({z:+.2} SE)", res.value));
            }
        }
    }
    Ok((ok, format!("constant exactly 0, others within 3 SE: {}", parts.join(", "))))
}

fn determinism() -> Outcome {
    let mut mismatched = Vec::new();
    for id in EXPERIMENTS {
        let mut outputs = Vec::new();
        for workers in [1, 4, 16] {
            let w = format!("run.workers={workers}");
            let r = experiment(
                id,
                &["run.paths=1500", "run.chunk_size=256", "experiment.rare_paths=3000", "kernel.nodes=1024", &w],
            )?;
            outputs.push(r.canonical_json());
        }
        if outputs.windows(2).any(|p| p[0] != p[1]) {
            mismatched.push(id);
        }
    }
    Ok((
        mismatched.is_empty(),
        format!(
            "{} experiments x workers {{1, 4, 16}}; mismatched: {:?}",
            EXPERIMENTS.len(),
            mismatched
        ),
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut s = Suite {
        filters,
        failed: Vec::new(),
    };
    s.run("1", "quadrature oracle (bernstein)", quadrature_oracle);
    s.run("2", "kernel construction (jump_kernel)", kernel_construction);
    s.run("3", "exact exit-time oracle", exit_time_oracle);
    s.run("4", "exact disc Green oracle", green_oracle);
    s.run("5", "exit-time comparability", exit_time_comparability);
    s.run("6", "boundary decay rate", decay_rate);
    s.run("7", "Green function comparability", green_comparability);
    s.run("8", "Harnack and Carleson statistics", harnack_carleson);
    s.run("9", "finite-range counterexample", counterexample);
    s.run("10", "Dynkin residual", dynkin);
    s.run("11", "determinism across worker counts", determinism);
    if s.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", s.failed.len(), s.failed.join(", "));
        std::process::exit(1);
    }
}
