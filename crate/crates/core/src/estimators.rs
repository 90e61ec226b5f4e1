//! Monte Carlo estimators built on exit records and occupation samples.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch::{map_chunks, BatchConfig, Moments};
use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};
use crate::geometry::{make_ball, Domain};
use crate::jump_kernel::{ball_volume, JumpKernel, RadialGeneratorTable};
use crate::sampler::{ExitRecord, Observer, SchemeConfig, Simulator};
use crate::targets::Target;
use crate::test_functions::TestFunction;

/// Truncated fraction above which a result is flagged.
pub const TRUNCATION_FLAG: f64 = 1e-3;
/// Truncated fraction above which a result is unreliable.
pub const TRUNCATION_WARN: f64 = 1e-2;
/// Significance level (in standard errors) for ratio denominators.
pub const SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub chunk_size: usize,
    pub scheme: SchemeConfig,
    pub kernel: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub truncated_fraction: f64,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

impl EstimatorResult {
    /// No reliability warnings attached.
    pub fn is_reliable(&self) -> bool {
        self.warnings.is_empty()
    }

    /// `value > k · std_error`.
    pub fn is_significant(&self, k: f64) -> bool {
        self.value > k * self.std_error
    }
}

/// Per-start aggregate of `k` path functionals.
#[derive(Debug, Clone, Default)]
struct Summary {
    moments: Vec<Moments>,
    truncated: u64,
    near_boundary: u64,
    n: u64,
}

impl Summary {
    fn new(k: usize) -> Self {
        Self {
            moments: vec![Moments::default(); k],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &Summary) {
        for (a, b) in self.moments.iter_mut().zip(&o.moments) {
            a.merge(b);
        }
        self.truncated += o.truncated;
        self.near_boundary += o.near_boundary;
        self.n += o.n;
    }

    fn results(&self, sim: &Simulator, batch: &BatchConfig) -> Vec<EstimatorResult> {
        let tf = if self.n == 0 { 0.0 } else { self.truncated as f64 / self.n as f64 };
        let mut warnings = Vec::new();
        if tf > TRUNCATION_WARN {
            warnings.push(format!("truncated fraction {tf:.4} exceeds {TRUNCATION_WARN}"));
        } else if tf > TRUNCATION_FLAG {
            warnings.push(format!("truncated fraction {tf:.4} exceeds {TRUNCATION_FLAG}"));
        }
        if self.near_boundary > 0 {
            warnings.push("start within 2√(2dt) of the boundary without graded start".into());
        }
        let provenance = Provenance {
            seed: batch.seed,
            chunk_size: batch.chunk_size,
            scheme: *sim.scheme(),
            kernel: sim.kernel().name().to_string(),
            domain: sim.domain().name().to_string(),
        };
        self.moments
            .iter()
            .map(|m| EstimatorResult {
                value: m.mean(),
                std_error: m.std_error(),
                n_paths: m.n,
                truncated_fraction: tf,
                provenance: provenance.clone(),
                warnings: warnings.clone(),
            })
            .collect()
    }
}

/// SplitMix64 finaliser, used to derive independent seeds per start point.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `n` paths from `start`; `per_path` simulates one path and writes `k`
/// functionals of it.
fn summarize<F>(n: usize, batch: &BatchConfig, k: usize, per_path: F) -> Result<Summary>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) -> Result<ExitRecord> + Sync,
{
    let parts = map_chunks(n, batch, |_, len, rng| {
        let mut s = Summary::new(k);
        let mut out = vec![0.0; k];
        for _ in 0..len {
            out.iter_mut().for_each(|v| *v = 0.0);
            let rec = per_path(rng, &mut out)?;
            s.n += 1;
            if rec.truncated {
                s.truncated += 1;
            }
            if rec.near_boundary_start {
                s.near_boundary += 1;
            }
            for (m, v) in s.moments.iter_mut().zip(&out) {
                m.push(*v);
            }
        }
        Ok(s)
    })?;
    let mut total = Summary::new(k);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

fn check_inside(sim: &Simulator, x: &[f64]) -> Result<()> {
    if !(sim.domain().signed_distance(x) > 0.0) {
        return Err(Error::Precondition(format!(
            "point {x:?} is not inside {}",
            sim.domain().name()
        )));
    }
    Ok(())
}

/// A quantity read off one path.
pub enum Payoff<'a> {
    /// `g(X_τ)`; truncated paths contribute 0.
    AtExit(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    /// Probability that the exit jump lands in the target, via the Lévy
    /// system (the target must lie outside the domain at distance ≥ ε).
    LandsIn(&'a dyn Target),
}

struct LevyAccumulator<'a> {
    targets: Vec<(usize, &'a dyn Target)>,
    sums: Vec<f64>,
}

impl Observer for LevyAccumulator<'_> {
    fn visit(&mut self, _x: &[f64], _w: f64) {}
    fn jump_site(&mut self, y: &[f64], w: f64) {
        for (k, (_, t)) in self.targets.iter().enumerate() {
            self.sums[k] += w * t.intensity(y);
        }
    }
}

/// `E_x[payoff]` for several payoffs on the same paths.
pub fn exit_functional(
    sim: &Simulator,
    x: &[f64],
    payoffs: &[Payoff],
    n: usize,
    batch: &BatchConfig,
) -> Result<Vec<EstimatorResult>> {
    check_inside(sim, x)?;
    let eps = sim.scheme().eps;
    for p in payoffs {
        if let Payoff::LandsIn(t) = p {
            if t.distance(x) < eps {
                return Err(Error::Precondition("Lévy-system target closer than ε to the start".into()));
            }
        }
    }
    let targets: Vec<(usize, &dyn Target)> = payoffs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Payoff::LandsIn(t) => Some((i, *t)),
            _ => None,
        })
        .collect();
    let s = summarize(n, batch, payoffs.len(), |rng, out| {
        let mut acc = LevyAccumulator {
            targets: targets.clone(),
            sums: vec![0.0; targets.len()],
        };
        let rec = sim.simulate_exit_observed(x, rng, &mut acc)?;
        for (i, p) in payoffs.iter().enumerate() {
            if let Payoff::AtExit(g) = p {
                out[i] = if rec.truncated { 0.0 } else { g(&rec.exit_position) };
            }
        }
        for (k, (i, _)) in targets.iter().enumerate() {
            out[*i] = acc.sums[k];
        }
        Ok(rec)
    })?;
    Ok(s.results(sim, batch))
}

/// `E_x[τ_D]`.
pub fn expected_exit_time(sim: &Simulator, x: &[f64], n: usize, batch: &BatchConfig) -> Result<EstimatorResult> {
    if !sim.domain().is_bounded() {
        return Err(Error::Precondition("expected exit time needs a bounded domain".into()));
    }
    check_inside(sim, x)?;
    let s = summarize(n, batch, 1, |rng, out| {
        let rec = sim.simulate_exit(x, rng)?;
        out[0] = rec.exit_time;
        Ok(rec)
    })?;
    Ok(s.results(sim, batch).remove(0))
}

/// Normalised Epanechnikov kernel `c_d h^{-d} (1 − |z|²/h²)_+`,
/// `c_d = (d+2)/(2 V_d)`.
pub fn epanechnikov(d: usize, h: f64, z2: f64) -> f64 {
    let u = z2 / (h * h);
    if u >= 1.0 {
        return 0.0;
    }
    (d as f64 + 2.0) / (2.0 * ball_volume(d)) / h.powi(d as i32) * (1.0 - u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenEstimate {
    pub estimate: EstimatorResult,
    pub bandwidth: f64,
    /// Same paths, bandwidth halved.
    pub half_bandwidth: EstimatorResult,
}

/// Occupation-density estimate of `G_D(x, y)`.
pub fn green_function(
    sim: &Simulator,
    x: &[f64],
    y: &[f64],
    bandwidth: Option<f64>,
    n: usize,
    batch: &BatchConfig,
) -> Result<GreenEstimate> {
    Ok(green_functions(sim, x, &[(y.to_vec(), bandwidth)], n, batch)?.remove(0))
}

/// Green function estimates at several poles `(y, bandwidth)` from the same
/// paths started at `x`.
pub fn green_functions(
    sim: &Simulator,
    x: &[f64],
    poles: &[(Vec<f64>, Option<f64>)],
    n: usize,
    batch: &BatchConfig,
) -> Result<Vec<GreenEstimate>> {
    if !sim.domain().is_bounded() {
        return Err(Error::Precondition("Green function estimates need a bounded domain".into()));
    }
    check_inside(sim, x)?;
    let mut hs = Vec::with_capacity(poles.len());
    for (y, bandwidth) in poles {
        check_inside(sim, y)?;
        let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let h = bandwidth.unwrap_or(dist / 6.0);
        if !(dist >= 3.0 * h) || dist == 0.0 {
            return Err(Error::Precondition(format!(
                "|x − y| = {dist} is below 3 bandwidths ({h})"
            )));
        }
        hs.push(h);
    }
    let d = sim.domain().dim();
    let s = summarize(n, batch, 2 * poles.len(), |rng, out| {
        let mut obs = |p: &[f64], w: f64| {
            for (k, ((y, _), h)) in poles.iter().zip(&hs).enumerate() {
                let z2: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                if z2 < h * h {
                    out[2 * k] += w * epanechnikov(d, *h, z2);
                    out[2 * k + 1] += w * epanechnikov(d, 0.5 * h, z2);
                }
            }
        };
        sim.simulate_exit_observed(x, rng, &mut obs)
    })?;
    let r = s.results(sim, batch);
    Ok(r.chunks(2)
        .zip(hs)
        .map(|(pair, h)| GreenEstimate {
            estimate: pair[0].clone(),
            bandwidth: h,
            half_bandwidth: pair[1].clone(),
        })
        .collect())
}

/// Closed-form comparison function `g_D(x, y)`.
pub fn g_reference(domain: &Domain, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = domain.dim();
    if d < 2 {
        return Err(Error::invalid("g_reference needs d ≥ 2"));
    }
    let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if dist2 == 0.0 {
        return Err(Error::invalid("g_reference needs x ≠ y"));
    }
    let (dx, dy) = (domain.signed_distance(x), domain.signed_distance(y));
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::Precondition("g_reference needs interior points".into()));
    }
    let q = dx * dy / dist2;
    Ok(if d == 2 {
        q.ln_1p()
    } else {
        dist2.sqrt().powi(2 - d as i32) * q.min(1.0)
    })
}

/// Green function of `Δ` in the unit disc, `(1/4π) log(1 + (1−|x|²)(1−|y|²)/|x−y|²)`.
pub fn disc_green_laplacian(x: &[f64], y: &[f64]) -> f64 {
    0.5 * disc_green_formula(x, y)
}

/// `(1/2π) log(1 + (1−|x|²)(1−|y|²)/|x−y|²)`, the Green function of
/// standard Brownian motion (generator ½Δ) in the unit disc.
pub fn disc_green_formula(x: &[f64], y: &[f64]) -> f64 {
    let nx: f64 = x.iter().map(|a| a * a).sum();
    let ny: f64 = y.iter().map(|a| a * a).sum();
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    ((1.0 - nx) * (1.0 - ny) / d2).ln_1p() / (2.0 * std::f64::consts::PI)
}

/// Sup of `a_i / b_j` over ordered pairs, with denominators gated at
/// [`SIGNIFICANCE`] standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatedRatio {
    pub sup: f64,
    pub included: usize,
    pub excluded: usize,
}

/// `values[i] = (v, se, scale)`: the ratio is taken between `v/scale`.
pub fn gated_sup_ratio(values: &[(f64, f64, f64)]) -> GatedRatio {
    let mut max_num = f64::NEG_INFINITY;
    let mut min_den = f64::INFINITY;
    let mut excluded = 0;
    for &(v, se, scale) in values {
        let q = v / scale;
        max_num = max_num.max(q);
        if v > SIGNIFICANCE * se && v > 0.0 {
            min_den = min_den.min(q);
        } else {
            excluded += 1;
        }
    }
    let included = values.len() - excluded;
    let sup = if included == 0 {
        f64::NAN
    } else if max_num <= 0.0 {
        0.0
    } else {
        max_num / min_den
    };
    GatedRatio { sup, included, excluded }
}

/// Weighted least-squares slope of `log v` against `log t`, using only
/// points significant at [`SIGNIFICANCE`]; returns `(slope, std_error,
/// points used)`.
pub fn log_log_slope(points: &[(f64, f64, f64)]) -> (f64, f64, usize) {
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(_, v, se)| *v > SIGNIFICANCE * *se && *v > 0.0)
        .map(|(t, v, se)| {
            let rel = if *se > 0.0 { se / v } else { 1e-12 };
            (t.ln(), v.ln(), 1.0 / (rel * rel))
        })
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN, pts.len());
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, (1.0 / sxx).sqrt(), pts.len())
}

fn grid_point_batch(batch: &BatchConfig, k: usize) -> BatchConfig {
    batch.with_seed(mix_seed(batch.seed, k as u64))
}

/// Inward unit normal of `domain` at a boundary point.
fn inward_normal(domain: &Domain, q: &[f64]) -> Vec<f64> {
    let g = domain.gradient(q);
    let n = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    g.iter().map(|a| a / n).collect()
}

/// A unit vector orthogonal to `n`.
fn tangent(n: &[f64]) -> Vec<f64> {
    let d = n.len();
    let k = (0..d).min_by(|a, b| n[*a].abs().total_cmp(&n[*b].abs())).unwrap();
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    let p: f64 = n[k];
    let mut t: Vec<f64> = e.iter().zip(n).map(|(a, b)| a - p * b).collect();
    let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    t.iter_mut().for_each(|a| *a /= nt);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridValue {
    pub point: Vec<f64>,
    pub delta: f64,
    pub values: Vec<EstimatorResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BhpRecord {
    /// Sup over grid pairs of `(f(x)/δ(x)) / (f(y)/δ(y))`, per payoff.
    pub sup_ratio: Vec<GatedRatio>,
    /// Log–log slope of `f` along the inward normal ray, per payoff.
    pub decay_slope: Vec<f64>,
    pub decay_slope_se: Vec<f64>,
    /// Sup over grid pairs of `(f/g)(x) / (f/g)(y)` for the first two payoffs.
    pub two_function_ratio: Option<GatedRatio>,
    pub ray: Vec<GridValue>,
    pub grid: Vec<GridValue>,
}

/// Boundary Harnack statistics at `q ∈ ∂D` for functions `f = E[payoff]`
/// harmonic in `D` (regular harmonic in `D ∩ B(q, r)` by the strong Markov
/// property). Payoffs must vanish on `D^c ∩ B(q, r)`.
pub fn bhp_statistic(
    sim: &Simulator,
    q: &[f64],
    r: f64,
    payoffs: &[&(dyn Fn(&[f64]) -> f64 + Sync)],
    n: usize,
    batch: &BatchConfig,
) -> Result<BhpRecord> {
    let dom = sim.domain();
    if dom.signed_distance(q).abs() > 1e-9 {
        return Err(Error::Precondition("q is not on the boundary".into()));
    }
    check_payoff_vanishes(dom, q, r, payoffs)?;
    let normal = inward_normal(dom, q);
    let tan = tangent(&normal);
    let eval = |points: &[Vec<f64>], offset: usize| -> Result<Vec<GridValue>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let list: Vec<Payoff> = payoffs.iter().map(|g| Payoff::AtExit(*g)).collect();
                let values = exit_functional(sim, p, &list, n, &grid_point_batch(batch, offset + i))?;
                Ok(GridValue {
                    point: p.clone(),
                    delta: dom.signed_distance(p),
                    values,
                })
            })
            .collect()
    };
    let ts: Vec<f64> = (0..5).map(|k| r / 64.0 * 2f64.powi(k)).collect();
    let ray_pts: Vec<Vec<f64>> = ts
        .iter()
        .map(|t| q.iter().zip(&normal).map(|(a, b)| a + t * b).collect())
        .collect();
    let ray = eval(&ray_pts, 0)?;
    let mut grid_pts = Vec::new();
    for t in [r / 32.0, r / 8.0, r / 4.0] {
        for s in [-r / 4.0, r / 4.0] {
            let p: Vec<f64> = (0..q.len()).map(|i| q[i] + t * normal[i] + s * tan[i]).collect();
            if dom.contains(&p) {
                grid_pts.push(p);
            }
        }
    }
    let mut grid = ray.clone();
    grid.extend(eval(&grid_pts, ray.len())?);
    let k = payoffs.len();
    let mut sup_ratio = Vec::new();
    let mut decay_slope = Vec::new();
    let mut decay_slope_se = Vec::new();
    for j in 0..k {
        let vals: Vec<(f64, f64, f64)> = grid
            .iter()
            .map(|g| (g.values[j].value, g.values[j].std_error, g.delta))
            .collect();
        sup_ratio.push(gated_sup_ratio(&vals));
        let pts: Vec<(f64, f64, f64)> = ts
            .iter()
            .zip(&ray)
            .map(|(t, g)| (*t, g.values[j].value, g.values[j].std_error))
            .collect();
        let (s, se, _) = log_log_slope(&pts);
        decay_slope.push(s);
        decay_slope_se.push(se);
    }
    let two_function_ratio = (k >= 2).then(|| {
        let vals: Vec<(f64, f64, f64)> = grid
            .iter()
            .filter(|g| g.values[1].is_significant(SIGNIFICANCE))
            .map(|g| (g.values[0].value, g.values[0].std_error, g.values[1].value))
            .collect();
        let mut r = gated_sup_ratio(&vals);
        r.excluded += grid.len() - vals.len();
        r
    });
    Ok(BhpRecord {
        sup_ratio,
        decay_slope,
        decay_slope_se,
        two_function_ratio,
        ray,
        grid,
    })
}

/// Probe `D^c ∩ B(q, r)` on a deterministic lattice and reject payoffs that
/// do not vanish there.
fn check_payoff_vanishes(dom: &Domain, q: &[f64], r: f64, payoffs: &[&(dyn Fn(&[f64]) -> f64 + Sync)]) -> Result<()> {
    let d = q.len();
    let m = if d <= 2 { 40 } else { 14 };
    let mut idx = vec![0usize; d];
    loop {
        let p: Vec<f64> = (0..d).map(|i| q[i] - r + 2.0 * r * (idx[i] as f64 + 0.5) / m as f64).collect();
        let inside_ball = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r * r;
        if inside_ball && !dom.contains(&p) && payoffs.iter().any(|g| g(&p) != 0.0) {
            return Err(Error::Precondition(format!(
                "payoff does not vanish on D^c ∩ B(q, r) (at {p:?})"
            )));
        }
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return Ok(());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioStatistic {
    pub statistic: GatedRatio,
    pub grid: Vec<GridValue>,
}

/// Max over grid pairs of `f(x)/f(y)` with `f = E_x[payoff]` from the ball
/// the simulator is bound to.
pub fn harnack_statistic(
    sim: &Simulator,
    payoff: Payoff,
    grid: &[Vec<f64>],
    n: usize,
    batch: &BatchConfig,
) -> Result<RatioStatistic> {
    let (c, r) = sim
        .domain()
        .ball()
        .ok_or_else(|| Error::Precondition("Harnack statistic needs a ball domain".into()))?;
    if r > 1.0 {
        return Err(Error::Precondition("Harnack statistic needs r ≤ 1".into()));
    }
    for p in grid {
        let dist = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist >= 0.5 * r {
            return Err(Error::Precondition("Harnack grid must lie in B(x0, r/2)".into()));
        }
    }
    let one = [payoff];
    let values = grid
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(GridValue {
                point: p.clone(),
                delta: sim.domain().signed_distance(p),
                values: exit_functional(sim, p, &one, n, &grid_point_batch(batch, i))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vals: Vec<(f64, f64, f64)> = values
        .iter()
        .map(|g| (g.values[0].value, g.values[0].std_error, 1.0))
        .collect();
    Ok(RatioStatistic {
        statistic: gated_sup_ratio(&vals),
        grid: values,
    })
}

/// `sup_{x ∈ grid} f(x)/f(x0)` with `x0 = q + (r/2)·n(q)`; 0 when `f ≡ 0`.
pub fn carleson_statistic(
    sim: &Simulator,
    q: &[f64],
    r: f64,
    payoff: &(dyn Fn(&[f64]) -> f64 + Sync),
    n: usize,
    batch: &BatchConfig,
) -> Result<RatioStatistic> {
    let dom = sim.domain();
    check_payoff_vanishes(dom, q, r, &[payoff])?;
    let normal = inward_normal(dom, q);
    let tan = tangent(&normal);
    let x0: Vec<f64> = q.iter().zip(&normal).map(|(a, b)| a + 0.5 * r * b).collect();
    let mut pts = vec![x0];
    for t in [r / 64.0, r / 16.0, r / 8.0, r / 4.0, 0.45 * r] {
        for s in [-0.3 * r, 0.0, 0.3 * r] {
            let p: Vec<f64> = (0..q.len()).map(|i| q[i] + t * normal[i] + s * tan[i]).collect();
            let dq = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dom.contains(&p) && dq < 0.5 * r {
                pts.push(p);
            }
        }
    }
    let values = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(GridValue {
                point: p.clone(),
                delta: dom.signed_distance(p),
                values: exit_functional(sim, p, &[Payoff::AtExit(payoff)], n, &grid_point_batch(batch, i))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let f0 = &values[0].values[0];
    let all_zero = values.iter().all(|g| g.values[0].value == 0.0);
    let statistic = if all_zero {
        GatedRatio {
            sup: 0.0,
            included: values.len(),
            excluded: 0,
        }
    } else if !f0.is_significant(SIGNIFICANCE) {
        GatedRatio {
            sup: f64::NAN,
            included: 0,
            excluded: values.len(),
        }
    } else {
        let sup = values.iter().map(|g| g.values[0].value).fold(f64::NEG_INFINITY, f64::max) / f0.value;
        GatedRatio {
            sup,
            included: values.len(),
            excluded: 0,
        }
    };
    Ok(RatioStatistic { statistic, grid: values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartinPoint {
    pub t: f64,
    pub y: Vec<f64>,
    pub ratio: f64,
    pub std_error: f64,
    pub numerator: GreenEstimate,
    pub denominator: GreenEstimate,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartinRecord {
    pub points: Vec<MartinPoint>,
    /// `max |M(y_k) − M(y_{k+1})|` over the last three points.
    pub last_fluctuation: f64,
    /// Pooled standard error of those differences.
    pub pooled_std_error: f64,
    pub stabilized: bool,
    pub inconclusive: bool,
}

/// `M_D(x, y_k) = G_D(x, y_k)/G_D(x0, y_k)` along `y_k = z + t_k n(z)`.
pub fn martin_ratio(
    sim: &Simulator,
    x: &[f64],
    x0: &[f64],
    z: &[f64],
    ts: &[f64],
    n: usize,
    batch: &BatchConfig,
) -> Result<MartinRecord> {
    let dom = sim.domain();
    if dom.signed_distance(z).abs() > 1e-9 {
        return Err(Error::Precondition("z is not on the boundary".into()));
    }
    if ts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("approach parameters must decrease".into()));
    }
    let normal = inward_normal(dom, z);
    let mut points = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let y: Vec<f64> = z.iter().zip(&normal).map(|(a, b)| a + t * b).collect();
        let dist = |p: &[f64]| p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let h = (0.5 * t).min(dist(x) / 6.0).min(dist(x0) / 6.0);
        let num = green_function(sim, x, &y, Some(h), n, &grid_point_batch(batch, 2 * k))?;
        let same = x == x0;
        let den = if same {
            num.clone()
        } else {
            green_function(sim, x0, &y, Some(h), n, &grid_point_batch(batch, 2 * k + 1))?
        };
        let (a, b) = (&num.estimate, &den.estimate);
        let ratio = a.value / b.value;
        let std_error = if same {
            0.0
        } else {
            ratio * ((a.std_error / a.value).powi(2) + (b.std_error / b.value).powi(2)).sqrt()
        };
        let significant = a.is_significant(SIGNIFICANCE) && b.is_significant(SIGNIFICANCE);
        points.push(MartinPoint {
            t,
            y,
            ratio,
            std_error,
            numerator: num,
            denominator: den,
            significant,
        });
    }
    let tail = &points[points.len().saturating_sub(3)..];
    let mut fluct: f64 = 0.0;
    let mut pooled: f64 = 0.0;
    for w in tail.windows(2) {
        fluct = fluct.max((w[0].ratio - w[1].ratio).abs());
        pooled = pooled.max((w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt());
    }
    let inconclusive = tail.iter().any(|p| !p.significant);
    Ok(MartinRecord {
        stabilized: !inconclusive && fluct <= SIGNIFICANCE * pooled,
        inconclusive,
        last_fluctuation: fluct,
        pooled_std_error: pooled,
        points,
    })
}

/// Source of `(Δ + 𝒜)f` along paths.
pub enum GeneratorSource<'a> {
    /// Closed form, e.g. `Δf` for pure Brownian motion.
    Exact(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    Table(&'a RadialGeneratorTable),
}

impl GeneratorSource<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            GeneratorSource::Exact(g) => g(x),
            GeneratorSource::Table(t) => t.eval(x),
        }
    }
}

/// Build the generator source for a radial test function under `kernel`.
pub fn generator_table(kernel: &JumpKernel, f: &dyn TestFunction, max_distance: f64) -> Result<RadialGeneratorTable> {
    RadialGeneratorTable::build(kernel, f, max_distance, 401)
}

/// `E_x[f(X_τ)] − f(x) − E_x ∫_0^τ (Δ+𝒜)f(X_t) dt`, path by path.
pub fn dynkin_residual(
    sim: &Simulator,
    x: &[f64],
    f: &dyn TestFunction,
    generator: &GeneratorSource,
    n: usize,
    batch: &BatchConfig,
) -> Result<EstimatorResult> {
    if !sim.domain().is_bounded() {
        return Err(Error::Precondition("Dynkin residual needs a bounded domain".into()));
    }
    check_inside(sim, x)?;
    let fx = f.value(x);
    let s = summarize(n, batch, 1, |rng, out| {
        let mut integral = 0.0;
        let mut obs = |p: &[f64], w: f64| integral += w * generator.eval(p);
        let rec = sim.simulate_exit_observed(x, rng, &mut obs)?;
        out[0] = f.value(&rec.exit_position) - fx - integral;
        Ok(rec)
    })?;
    Ok(s.results(sim, batch).remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRecord {
    pub b: f64,
    pub points: Vec<(f64, EstimatorResult)>,
    pub slope: f64,
    pub slope_se: f64,
}

/// `h(x) = P_x(Z exits (0, b) through [b, ∞))` for the one-dimensional
/// subordinate Brownian motion `Z`, and the log–log slope of `h` over
/// `x ∈ [b/64, b/8]`.
pub fn boundary_profile(
    f: &BernsteinFunction,
    b: f64,
    grid: &[f64],
    scheme: SchemeConfig,
    n: usize,
    batch: &BatchConfig,
) -> Result<ProfileRecord> {
    let kernel = JumpKernel::build(f, 1)?;
    let interval = make_ball(vec![0.5 * b], 0.5 * b)?;
    let sim = Simulator::new(&interval, &kernel, scheme)?;
    let upper = move |z: &[f64]| if z[0] >= b { 1.0 } else { 0.0 };
    let mut points = Vec::new();
    for (i, &x) in grid.iter().enumerate() {
        if !(x > 0.0 && x < b) {
            return Err(Error::Precondition(format!("profile point {x} outside (0, {b})")));
        }
        let v = exit_functional(&sim, &[x], &[Payoff::AtExit(&upper)], n, &grid_point_batch(batch, i))?;
        points.push((x, v.into_iter().next().unwrap()));
    }
    let fit: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(x, _)| *x >= b / 64.0 * (1.0 - 1e-12) && *x <= b / 8.0 * (1.0 + 1e-12))
        .map(|(x, r)| (*x, r.value, r.std_error))
        .collect();
    let (slope, slope_se, _) = log_log_slope(&fit);
    Ok(ProfileRecord {
        b,
        points,
        slope,
        slope_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_ball;
    use crate::targets::BallTarget;
    use crate::test_functions::{Constant, GaussianBump};

    fn scheme(dt: f64) -> SchemeConfig {
        SchemeConfig {
            dt,
            ..SchemeConfig::default()
        }
    }

    fn batch() -> BatchConfig {
        BatchConfig {
            seed: 11,
            chunk_size: 1000,
            workers: 1,
        }
    }

    fn stable2() -> JumpKernel {
        JumpKernel::build_with_nodes(&BernsteinFunction::stable(1.0, 1.0).unwrap(), 2, 1024).unwrap()
    }

    #[test]
    fn unit_payoff_is_exactly_one() {
        let ball = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let sim = Simulator::new(&ball, &stable2(), scheme(1e-2)).unwrap();
        let one = |_: &[f64]| 1.0;
        let r = exit_functional(&sim, &[0.2, 0.0], &[Payoff::AtExit(&one)], 2000, &batch()).unwrap();
        assert_eq!(r[0].value, 1.0);
        assert_eq!(r[0].std_error, 0.0);
    }

    #[test]
    fn complementary_payoffs_sum_to_one() {
        let ball = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let sim = Simulator::new(&ball, &stable2(), scheme(1e-2)).unwrap();
        let p = |z: &[f64]| if z[1] > 0.0 { 1.0 } else { 0.0 };
        let q = |z: &[f64]| 1.0 - if z[1] > 0.0 { 1.0 } else { 0.0 };
        let r = exit_functional(&sim, &[0.0, 0.0], &[Payoff::AtExit(&p), Payoff::AtExit(&q)], 3000, &batch()).unwrap();
        assert!((r[0].value + r[1].value - 1.0).abs() < 1e-12);
        assert!((r[0].value - 0.5).abs() < 3.0 * r[0].std_error);
    }

    #[test]
    fn std_error_scales_like_inverse_root_n() {
        let ball = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(2), scheme(1e-2)).unwrap();
        let a = expected_exit_time(&sim, &[0.0, 0.0], 2000, &batch()).unwrap();
        let b = expected_exit_time(&sim, &[0.0, 0.0], 32000, &batch()).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!((ratio - 4.0).abs() < 0.8, "{ratio}");
    }

    #[test]
    fn start_on_boundary_is_rejected() {
        let ball = make_ball(vec![0.0, 0.0, 0.0], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(3), scheme(1e-2)).unwrap();
        assert!(expected_exit_time(&sim, &[1.0, 0.0, 0.0], 10, &batch()).is_err());
        assert!(green_function(&sim, &[1.5, 0.0, 0.0], &[0.0, 0.0, 0.0], None, 10, &batch()).is_err());
        assert!(green_function(&sim, &[0.0, 0.0, 0.0], &[0.1, 0.0, 0.0], Some(0.05), 10, &batch()).is_err());
    }

    #[test]
    fn g_reference_values() {
        let b3 = make_ball(vec![0.0; 3], 1.0).unwrap();
        let g = g_reference(&b3, &[0.5, 0.0, 0.0], &[0.25, 0.0, 0.0]).unwrap();
        // δ(x)=0.5, δ(y)=0.75, |x−y|=0.25: min(1, 6) = 1, g = 4
        assert!((g - 4.0).abs() < 1e-12);
        let b2 = make_ball(vec![0.0; 2], 1.0).unwrap();
        let x = [0.5, 0.0];
        let y = [-0.5, 0.0];
        // δδ = 0.25, |x−y|² = 1
        assert!((g_reference(&b2, &x, &y).unwrap() - 1.25f64.ln()).abs() < 1e-15);
        assert_eq!(g_reference(&b2, &x, &y).unwrap(), g_reference(&b2, &y, &x).unwrap());
        assert!(g_reference(&b2, &x, &x).is_err());
        let near = g_reference(&b3, &[0.999, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        let nearer = g_reference(&b3, &[0.9995, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((near / nearer - 2.0).abs() < 1e-2);
    }

    #[test]
    fn gated_ratio_excludes_insignificant_denominators() {
        let r = gated_sup_ratio(&[(1.0, 0.1, 1.0), (0.5, 0.1, 1.0), (0.1, 0.1, 1.0)]);
        assert_eq!(r.excluded, 1);
        assert!((r.sup - 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let pts: Vec<(f64, f64, f64)> = [0.1, 0.2, 0.4].iter().map(|t| (*t, t * t, 1e-6)).collect();
        let (s, _, used) = log_log_slope(&pts);
        assert_eq!(used, 3);
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dynkin_residual_vanishes_for_constants() {
        let ball = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let k = stable2();
        let sim = Simulator::new(&ball, &k, scheme(1e-2)).unwrap();
        let c = Constant::new(2, 2.0);
        let table = generator_table(&k, &c, 2.0).unwrap();
        let r = dynkin_residual(&sim, &[0.1, 0.0], &c, &GeneratorSource::Table(&table), 500, &batch()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn dynkin_residual_small_for_gaussian_bump() {
        let ball = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let k = stable2();
        let sim = Simulator::new(&ball, &k, scheme(1e-3)).unwrap();
        let f = GaussianBump::new(vec![0.0, 0.0], 0.5, 1.0);
        let table = generator_table(&k, &f, 3.0).unwrap();
        let r = dynkin_residual(&sim, &[0.2, 0.0], &f, &GeneratorSource::Table(&table), 20000, &batch()).unwrap();
        assert!(r.value.abs() < 3.0 * r.std_error, "{} ± {}", r.value, r.std_error);
    }

    #[test]
    fn levy_system_estimate_matches_indicator() {
        let ball = make_ball(vec![0.0, 0.0], 0.5).unwrap();
        let k = stable2();
        let sim = Simulator::new(&ball, &k, scheme(1e-3)).unwrap();
        let target = BallTarget::new(sim.kernel(), vec![1.5, 0.0], 0.5, 0.95, 2.1).unwrap();
        let ind = |z: &[f64]| if target.contains(z) { 1.0 } else { 0.0 };
        let r = exit_functional(
            &sim,
            &[0.0, 0.0],
            &[Payoff::LandsIn(&target), Payoff::AtExit(&ind)],
            40000,
            &batch(),
        )
        .unwrap();
        let pooled = (r[0].std_error.powi(2) + r[1].std_error.powi(2)).sqrt();
        assert!((r[0].value - r[1].value).abs() < 3.0 * pooled, "{:?}", (r[0].value, r[1].value, pooled));
        assert!(r[0].std_error < r[1].std_error);
    }

    #[test]
    fn brownian_profile_is_linear() {
        let s = SchemeConfig {
            dt: 1e-4,
            ..SchemeConfig::default()
        };
        let p = boundary_profile(&BernsteinFunction::pure_bm(), 1.0, &[0.25, 0.5], s, 4000, &batch()).unwrap();
        for (x, r) in &p.points {
            assert!((r.value - x).abs() < 3.0 * r.std_error + 1e-3, "{x}: {}", r.value);
        }
    }
}
