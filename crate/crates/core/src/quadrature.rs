//! Adaptive one-dimensional quadrature.
//!
//! Two independent families are provided so that every integral the crate
//! depends on can be cross-checked: globally adaptive Gauss–Kronrod (G7/K15)
//! bisection, and double-exponential (tanh-sinh / exp-sinh) summation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and refinement budget for the adaptive routines.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

/// Result of a successful quadrature: value plus error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

impl std::ops::Add for Quad {
    type Output = Quad;
    fn add(self, rhs: Quad) -> Quad {
        Quad {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
        }
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut e = err.abs();
    if res_asc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / res_asc).powf(1.5);
        e = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * res_abs);
    }
    e
}

/// One G7/K15 panel on `[a, b]`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Quad {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let err = rescale_error((res_k - res_g) * half, res_abs * half.abs(), res_asc * half.abs());
    Quad {
        value: res_k * half,
        error: err,
    }
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    q: Quad,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.q.error == other.q.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.q.error.total_cmp(&other.q.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Quad> {
    if a == b {
        return Ok(Quad { value: 0.0, error: 0.0 });
    }
    let first = gk15(&f, a, b);
    if !first.value.is_finite() {
        return Err(Error::Quadrature {
            partial: first.value,
            error: first.error,
            at: format!("[{a}, {b}]"),
        });
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, q: first });
    let mut total = first;
    let mut count = 1;
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * total.value.abs());
        if total.error <= tol {
            return Ok(total);
        }
        if count >= opts.max_intervals {
            let worst = heap.peek().map(|p| (p.a, p.b)).unwrap_or((a, b));
            return Err(Error::Quadrature {
                partial: total.value,
                error: total.error,
                at: format!("[{}, {}]", worst.0, worst.1),
            });
        }
        let Some(worst) = heap.pop() else {
            return Ok(total);
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // interval no longer divisible in floating point
            return Err(Error::Quadrature {
                partial: total.value,
                error: total.error,
                at: format!("[{}, {}]", worst.a, worst.b),
            });
        }
        let left = gk15(&f, worst.a, mid);
        let right = gk15(&f, mid, worst.b);
        total.value += left.value + right.value - worst.q.value;
        total.error += left.error + right.error - worst.q.error;
        if !total.value.is_finite() {
            return Err(Error::Quadrature {
                partial: total.value,
                error: f64::INFINITY,
                at: format!("[{}, {}]", worst.a, worst.b),
            });
        }
        heap.push(Panel { a: worst.a, b: mid, q: left });
        heap.push(Panel { a: mid, b: worst.b, q: right });
        count += 1;
        // re-sum occasionally to avoid drift in the running error estimate
        if count % 64 == 0 {
            let (v, e) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), p| (v + p.q.value, e + p.q.error));
            total = Quad { value: v, error: e };
        }
    }
}

/// `∫_0^s f` with the substitution `t = s·u⁴`, which removes algebraic
/// endpoint singularities of the form `t^{-β}` with `β ≤ 3/4`.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, s: f64, opts: QuadOptions) -> Result<Quad> {
    integrate(
        |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let u3 = u * u * u;
            let t = s * u3 * u;
            if t <= 0.0 {
                return 0.0;
            }
            4.0 * s * u3 * f(t)
        },
        0.0,
        1.0,
        opts,
    )
}

/// `∫_s^∞ f` with `t = s·v^{-4}`; power-law tails `t^{-1-β}` become
/// `v^{4β-1}`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, s: f64, opts: QuadOptions) -> Result<Quad> {
    assert!(s > 0.0, "tail integral needs a positive lower limit");
    integrate(
        |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            let v2 = v * v;
            let v4 = v2 * v2;
            let t = s / v4;
            if !t.is_finite() {
                return 0.0;
            }
            let val = f(t);
            if val == 0.0 {
                return 0.0;
            }
            4.0 * s / (v4 * v) * val
        },
        0.0,
        1.0,
        opts,
    )
}

/// `∫_0^∞ f` split at the supplied interior break points.
///
/// The first segment uses [`integrate_from_zero`], the last one
/// [`integrate_to_infinity`], and interior segments plain Gauss–Kronrod.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: QuadOptions) -> Result<Quad> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && b.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
    if pts.is_empty() {
        pts.push(1.0);
    }
    // each piece gets a share of the absolute tolerance
    let pieces = pts.len() + 1;
    let piece_opts = QuadOptions {
        abs_tol: opts.abs_tol / pieces as f64,
        ..opts
    };
    let mut total = integrate_from_zero(&f, pts[0], piece_opts)?;
    for w in pts.windows(2) {
        total = total + integrate(&f, w[0], w[1], piece_opts)?;
    }
    total = total + integrate_to_infinity(&f, *pts.last().unwrap(), piece_opts)?;
    Ok(total)
}

/// Double-exponential quadrature on `(0, ∞)` via the exp-sinh map
/// `t = exp(π/2 · sinh u)`. Handles endpoint singularities at 0 and
/// algebraic or exponential decay at infinity.
pub fn exp_sinh<F: Fn(f64) -> f64>(f: F, scale: f64, rel_tol: f64) -> Result<Quad> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let node = |u: f64| -> f64 {
        let x = scale * (half_pi * u.sinh()).exp();
        if x == 0.0 || !x.is_finite() {
            return 0.0;
        }
        let w = half_pi * u.cosh() * x;
        let v = f(x);
        // far nodes can produce inf·0 in the integrand; they carry no mass
        if v == 0.0 || !v.is_finite() {
            0.0
        } else {
            w * v
        }
    };
    // u range covering x from ~1e-300·scale to ~1e300·scale
    let u_max = 6.5;
    let mut h = 0.5;
    let mut n = (u_max / h) as i64;
    let mut sum: f64 = (-n..=n).map(|k| node(k as f64 * h)).sum();
    let mut prev = sum * h;
    for _level in 0..10 {
        h *= 0.5;
        n = (u_max / h) as i64;
        // add odd nodes only
        let mut add = 0.0;
        let mut k = -n + if n % 2 == 0 { 1 } else { 0 };
        while k <= n {
            add += node(k as f64 * h);
            k += 2;
        }
        sum += add;
        let est = sum * h;
        let diff = (est - prev).abs();
        if !est.is_finite() {
            break;
        }
        if diff <= rel_tol * est.abs() || (est == 0.0 && prev == 0.0) {
            return Ok(Quad { value: est, error: diff });
        }
        prev = est;
    }
    Err(Error::Quadrature {
        partial: prev,
        error: f64::NAN,
        at: "exp-sinh (0, inf)".into(),
    })
}

/// Tanh-sinh quadrature on a finite interval.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<Quad> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let hw = 0.5 * (b - a);
    let node = |u: f64| -> f64 {
        let s = half_pi * u.sinh();
        let th = s.tanh();
        let ch = s.cosh();
        let w = half_pi * u.cosh() / (ch * ch);
        if w == 0.0 {
            return 0.0;
        }
        // distance to the nearer endpoint computed without cancellation
        let comp = 1.0 / (s.abs().exp() * ch);
        let x = if th >= 0.0 { b - hw * comp } else { a + hw * comp };
        if x <= a.min(b) || x >= a.max(b) {
            return 0.0;
        }
        w * f(x)
    };
    let u_max = 3.2;
    let mut h = 0.5;
    let mut n = (u_max / h) as i64;
    let mut sum: f64 = (-n..=n).map(|k| node(k as f64 * h)).sum();
    let mut prev = sum * h * hw;
    for _ in 0..10 {
        h *= 0.5;
        n = (u_max / h) as i64;
        let mut add = 0.0;
        let mut k = -n + if n % 2 == 0 { 1 } else { 0 };
        while k <= n {
            add += node(k as f64 * h);
            k += 2;
        }
        sum += add;
        let est = sum * h * hw;
        let diff = (est - prev).abs();
        if diff <= rel_tol * est.abs() || (est == 0.0 && prev == 0.0) {
            return Ok(Quad { value: est, error: diff });
        }
        prev = est;
    }
    Err(Error::Quadrature {
        partial: prev,
        error: f64::NAN,
        at: format!("tanh-sinh [{a}, {b}]"),
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton iteration on the
/// Legendre recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
