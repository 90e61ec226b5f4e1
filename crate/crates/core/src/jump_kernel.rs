//! Radial jump intensity `j(r)` of the subordinate Brownian motion, obtained
//! from the Lévy density of the subordinator through the heat-kernel
//! subordination integral
//!
//! ```text
//! j(r) = ∫_0^∞ (4πt)^{-d/2} e^{-r²/(4t)} μ(t) dt
//! ```
//!
//! The kernel is tabulated once on a log grid and then interpolated, so the
//! sampler can evaluate it and draw jump radii in O(1).

use std::io::Write;

use rand::Rng;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::bernstein::BernsteinFunction;
use crate::error::{Error, Result};
use crate::quadrature::{self, exp_sinh, integrate, integrate_half_line, QuadOptions};
use crate::test_functions::TestFunction;

pub const TABLE_NODES: usize = 4096;
pub const TABLE_R_MIN: f64 = 1e-6;
pub const TABLE_R_MAX: f64 = 1e3;

/// Relative agreement demanded between the two quadrature routines.
pub const DUAL_QUADRATURE_TOL: f64 = 1e-6;

/// Surface area of the unit sphere in `R^d`: `2π^{d/2}/Γ(d/2)`.
pub fn sphere_surface(d: usize) -> f64 {
    let h = 0.5 * d as f64;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(d: usize) -> f64 {
    sphere_surface(d) / d as f64
}

/// Which quadrature route to use for a single `j(r)` evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    GaussKronrod,
    DoubleExponential,
}

struct Integrand<'a> {
    f: &'a BernsteinFunction,
    dim: f64,
    r: f64,
}

impl Integrand<'_> {
    /// log of the integrand after the substitution `s = r²/(4t)`.
    fn ln_g(&self, s: f64) -> f64 {
        if !(s > 0.0) || !s.is_finite() {
            return f64::NEG_INFINITY;
        }
        let t = self.r * self.r / (4.0 * s);
        if !(t > 0.0) || !t.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ln_mu = self.f.ln_levy_density(t);
        if ln_mu == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let v = -0.5 * self.dim * (4.0 * std::f64::consts::PI * t).ln() - s + ln_mu + (0.25 * self.r * self.r).ln()
            - 2.0 * s.ln();
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Location and value of the maximum of `ln g` on a coarse log grid.
    fn peak(&self) -> (f64, f64) {
        let mut best = (1.0, f64::NEG_INFINITY);
        let mut ls = -90.0;
        while ls <= 12.0 {
            let s = f64::exp(ls);
            let v = self.ln_g(s);
            if v > best.1 {
                best = (s, v);
            }
            ls += 0.25;
        }
        best
    }
}

/// `ln j(r)` through one quadrature route. Returns `-∞` for `j(r) = 0`.
pub fn ln_j_quadrature(f: &BernsteinFunction, dim: usize, r: f64, route: Route) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("jump radius must be positive, got {r}")));
    }
    if f.is_pure_drift() {
        return Ok(f64::NEG_INFINITY);
    }
    let g = Integrand { f, dim: dim as f64, r };
    let (s_peak, shift) = g.peak();
    if shift == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let h = |s: f64| {
        let v = g.ln_g(s) - shift;
        if v == f64::NEG_INFINITY {
            0.0
        } else {
            v.exp()
        }
    };
    let value = match route {
        Route::GaussKronrod => {
            let e4 = 4f64.exp();
            let mut breaks = vec![s_peak / e4, s_peak, s_peak * e4];
            // the Gaussian factor e^{-s} keeps the mass below s ≈ 40 at large r
            breaks.extend([1.0, 4.0, 16.0, 64.0]);
            breaks.push(0.25 * r * r);
            if let Some(c) = truncation_of(f) {
                breaks.push(0.25 * r * r / c);
            }
            integrate_half_line(h, &breaks, QuadOptions::with_tol(0.0, 1e-12))?.value
        }
        Route::DoubleExponential => exp_sinh(h, s_peak, 1e-12)?.value,
    };
    Ok(shift + value.ln())
}

fn truncation_of(f: &BernsteinFunction) -> Option<f64> {
    match f.density() {
        crate::bernstein::LevyDensity::Truncated { cutoff, .. } => Some(*cutoff),
        _ => None,
    }
}

/// `j(r)` evaluated by both quadrature routes; the routes must agree to
/// [`DUAL_QUADRATURE_TOL`].
pub fn j_eval(f: &BernsteinFunction, dim: usize, r: f64) -> Result<f64> {
    Ok(ln_j_dual(f, dim, r)?.exp())
}

fn ln_j_dual(f: &BernsteinFunction, dim: usize, r: f64) -> Result<f64> {
    let gk = ln_j_quadrature(f, dim, r, Route::GaussKronrod)?;
    let de = ln_j_quadrature(f, dim, r, Route::DoubleExponential)?;
    if gk == f64::NEG_INFINITY && de == f64::NEG_INFINITY {
        return Ok(gk);
    }
    // relative difference of j equals |exp(Δ ln j) - 1|
    if !((gk - de).exp_m1().abs() <= DUAL_QUADRATURE_TOL) {
        return Err(Error::QuadratureMismatch {
            r,
            gk: gk.exp(),
            de: de.exp(),
        });
    }
    Ok(gk)
}

/// Jump-sampling data for a fixed small-jump cutoff `ε`.
#[derive(Debug, Clone)]
pub struct CutoffLaw {
    pub eps: f64,
    /// `Λ_ε = |S^{d-1}| ∫_ε^∞ r^{d-1} j(r) dr`
    pub tail_mass: f64,
    /// `m₂(ε) = |S^{d-1}| ∫_0^ε r^{d+1} j(r) dr`
    pub small_moment: f64,
    // cumulative (unnormalised) radial mass at ln r = cdf_x[k]
    cdf_x: Vec<f64>,
    cdf: Vec<f64>,
    far_mass: f64,
}

/// Empirical regularity constants of a kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelConditions {
    Satisfied { c1: f64, c2: f64, nu: f64 },
    /// A finite-range kernel: `j(r)/j(2r)` is infinite from `r` on.
    Violated { r: f64 },
}

/// Tabulated radial jump kernel.
#[derive(Debug, Clone)]
pub struct JumpKernel {
    dim: usize,
    name: String,
    zero: bool,
    x0: f64,
    dx: f64,
    ln_j: Vec<f64>,
    small_slope: f64,
    tail_p: f64,
    tail_kappa: f64,
    truncation: Option<f64>,
    cutoff: Option<CutoffLaw>,
}

impl JumpKernel {
    pub fn build(f: &BernsteinFunction, dim: usize) -> Result<Self> {
        Self::build_with_nodes(f, dim, TABLE_NODES)
    }

    pub fn build_with_nodes(f: &BernsteinFunction, dim: usize, nodes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if nodes < 8 {
            return Err(Error::invalid("kernel table needs at least 8 nodes"));
        }
        let x0 = TABLE_R_MIN.ln();
        let dx = (TABLE_R_MAX.ln() - x0) / (nodes - 1) as f64;
        let zero = f.is_pure_drift();
        let mut ln_j = vec![f64::NEG_INFINITY; nodes];
        if !zero {
            for (i, v) in ln_j.iter_mut().enumerate() {
                *v = ln_j_dual(f, dim, (x0 + dx * i as f64).exp())?;
            }
            if ln_j.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "jump kernel of {} vanishes inside the table range",
                    f.name()
                )));
            }
        }
        let mut k = Self {
            dim,
            name: f.name().to_string(),
            zero,
            x0,
            dx,
            ln_j,
            small_slope: 0.0,
            tail_p: 0.0,
            tail_kappa: 0.0,
            truncation: None,
            cutoff: None,
        };
        if !zero {
            k.fit_extrapolation();
        }
        Ok(k)
    }

    /// Kernel of Brownian motion alone (no jumps).
    pub fn zero(dim: usize) -> Self {
        Self::build_with_nodes(&BernsteinFunction::pure_bm(), dim, 8).expect("zero kernel")
    }

    fn fit_extrapolation(&mut self) {
        let n = self.ln_j.len();
        self.small_slope = (self.ln_j[1] - self.ln_j[0]) / self.dx;
        let r = |i: usize| (self.x0 + self.dx * i as f64).exp();
        let d1 = self.ln_j[n - 1] - self.ln_j[n - 2];
        let d2 = self.ln_j[n - 2] - self.ln_j[n - 3];
        let a1 = r(n - 1) - r(n - 2);
        let a2 = r(n - 2) - r(n - 3);
        // d = p·dx − κ·a for both pairs
        let det = -self.dx * a2 + self.dx * a1;
        let (mut p, mut kappa) = if det.abs() > 0.0 {
            ((d1 * -a2 + a1 * d2) / det, (self.dx * d2 - self.dx * d1) / det)
        } else {
            (d1 / self.dx, 0.0)
        };
        if kappa * r(n - 1) < 1e-6 {
            kappa = 0.0;
            p = d1 / self.dx;
        }
        self.tail_p = p;
        self.tail_kappa = kappa.max(0.0);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn truncation_radius(&self) -> Option<f64> {
        self.truncation
    }

    pub fn r_min(&self) -> f64 {
        self.x0.exp()
    }

    pub fn r_max(&self) -> f64 {
        self.x_last().exp()
    }

    fn x_last(&self) -> f64 {
        self.x0 + self.dx * (self.ln_j.len() - 1) as f64
    }

    /// Finite-range version: `j(r) = 0` for `r ≥ rho_max`.
    pub fn truncated(&self, rho_max: f64) -> Result<Self> {
        if !(rho_max > self.r_min()) {
            return Err(Error::invalid(format!("truncation radius {rho_max} below table range")));
        }
        let mut k = self.clone();
        k.truncation = Some(rho_max);
        k.name = format!("{}|r<{}", self.name, rho_max);
        k.cutoff = None;
        if let Some(c) = &self.cutoff {
            return k.with_cutoff(c.eps);
        }
        Ok(k)
    }

    /// `ln j(r)` from the table (4-point Lagrange in log–log space).
    pub fn ln_j(&self, r: f64) -> f64 {
        if self.zero || !(r > 0.0) {
            return f64::NEG_INFINITY;
        }
        if let Some(rho) = self.truncation {
            if r >= rho {
                return f64::NEG_INFINITY;
            }
        }
        self.ln_j_untruncated(r.ln())
    }

    fn ln_j_untruncated(&self, x: f64) -> f64 {
        let n = self.ln_j.len();
        if x < self.x0 {
            return self.ln_j[0] + self.small_slope * (x - self.x0);
        }
        let xl = self.x_last();
        if x > xl {
            let rn = xl.exp();
            return self.ln_j[n - 1] + self.tail_p * (x - xl) - self.tail_kappa * (x.exp() - rn);
        }
        let u = (x - self.x0) / self.dx;
        let i = (u.floor() as isize).clamp(1, n as isize - 3) as usize;
        let t = u - i as f64;
        let (y0, y1, y2, y3) = (self.ln_j[i - 1], self.ln_j[i], self.ln_j[i + 1], self.ln_j[i + 2]);
        // Lagrange basis on nodes -1, 0, 1, 2
        let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        y0 * l0 + y1 * l1 + y2 * l2 + y3 * l3
    }

    /// Interpolated `j(r)`.
    pub fn j(&self, r: f64) -> f64 {
        let l = self.ln_j(r);
        if l == f64::NEG_INFINITY {
            0.0
        } else {
            l.exp()
        }
    }

    /// Nodes of the table as `(r, j)` pairs.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ln_j
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let r = (self.x0 + self.dx * i as f64).exp();
                (r, if self.truncation.is_some_and(|t| r >= t) { 0.0 } else { l.exp() })
            })
    }

    /// Write the table as CSV with header `r,j`.
    pub fn export_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "r,j")?;
        for (r, j) in self.table() {
            writeln!(w, "{r:.12e},{j:.12e}")?;
        }
        Ok(())
    }

    fn integrand_x(&self, m: f64, x: f64) -> f64 {
        let l = self.ln_j_untruncated(x);
        ((m + 1.0) * x + l).exp()
    }

    /// `∫_a^b r^m j(r) dr` (no surface factor), honouring the truncation.
    pub fn radial_integral(&self, m: f64, a: f64, b: f64) -> f64 {
        if self.zero {
            return 0.0;
        }
        let b = match self.truncation {
            Some(rho) => b.min(rho),
            None => b,
        };
        if !(b > a) {
            return 0.0;
        }
        let xa = if a > 0.0 { a.ln() } else { f64::NEG_INFINITY };
        let xb = b.ln();
        let xl = self.x_last();
        let mut total = 0.0;
        // below the table: power law j ∝ r^{s}
        if xa < self.x0 {
            let s = self.small_slope;
            let e = m + 1.0 + s;
            let top = xb.min(self.x0);
            // ∫ exp(ln j0 + s(x - x0)) e^{(m+1)x} dx = exp(ln j0 - s x0 + e x)/e
            let f = |x: f64| (self.ln_j[0] - s * self.x0 + e * x).exp() / e;
            if e <= 0.0 {
                return f64::INFINITY;
            }
            total += f(top) - if xa == f64::NEG_INFINITY { 0.0 } else { f(xa) };
        }
        // table cells via Simpson
        let lo = xa.max(self.x0);
        let hi = xb.min(xl);
        if hi > lo {
            let i0 = ((lo - self.x0) / self.dx).floor() as usize;
            let i1 = (((hi - self.x0) / self.dx).ceil() as usize).min(self.ln_j.len() - 1);
            for i in i0..i1 {
                let ca = (self.x0 + self.dx * i as f64).max(lo);
                let cb = (self.x0 + self.dx * (i + 1) as f64).min(hi);
                if cb > ca {
                    total += simpson(|x| self.integrand_x(m, x), ca, cb);
                }
            }
        }
        // beyond the table: ln j = ln j_N + p (x - x_N) - κ (r - r_N)
        if xb > xl {
            let from = xa.max(xl).exp();
            total += self.far_integral(m, from, b);
        }
        total
    }

    fn far_integral(&self, m: f64, from: f64, to: f64) -> f64 {
        let rn = self.r_max();
        let ln_jn = *self.ln_j.last().unwrap();
        let q = m + self.tail_p;
        if self.tail_kappa == 0.0 {
            if to.is_infinite() && q >= -1.0 {
                return f64::INFINITY;
            }
            // ∫ j_N r_N^{-p} r^{q} dr
            let c = (ln_jn - self.tail_p * rn.ln()).exp();
            let prim = |r: f64| if r.is_infinite() { 0.0 } else { r.powf(q + 1.0) / (q + 1.0) };
            return c * (prim(to) - prim(from));
        }
        let f = |r: f64| (ln_jn + self.tail_p * (r / rn).ln() - self.tail_kappa * (r - rn) + m * r.ln()).exp();
        let opts = QuadOptions::with_tol(0.0, 1e-10);
        let q = if to.is_infinite() {
            quadrature::integrate_to_infinity(f, from, opts)
        } else {
            integrate(f, from, to, opts)
        };
        q.map(|q| q.value).unwrap_or(0.0)
    }

    /// `|S^{d-1}| ∫_a^b r^{d+1} j(r) dr`.
    pub fn second_moment(&self, a: f64, b: f64) -> f64 {
        sphere_surface(self.dim) * self.radial_integral((self.dim + 1) as f64, a, b)
    }

    /// `|S^{d-1}| ∫_a^b r^{d-1} j(r) dr`, the Lévy measure of the shell.
    pub fn shell_mass(&self, a: f64, b: f64) -> f64 {
        sphere_surface(self.dim) * self.radial_integral((self.dim - 1) as f64, a, b)
    }

    /// Attach the sampling law for jumps of size at least `eps`.
    pub fn with_cutoff(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::invalid(format!("jump cutoff must lie in (0, 1], got {eps}")));
        }
        let mut k = self.clone();
        if self.zero {
            k.cutoff = Some(CutoffLaw {
                eps,
                tail_mass: 0.0,
                small_moment: 0.0,
                cdf_x: vec![eps.ln()],
                cdf: vec![0.0],
                far_mass: 0.0,
            });
            return Ok(k);
        }
        let m = (self.dim - 1) as f64;
        let xe = eps.ln();
        let top = match self.truncation {
            Some(rho) => rho.ln().min(self.x_last()),
            None => self.x_last(),
        };
        let mut cdf_x = vec![xe];
        let mut cdf = vec![0.0];
        let first = ((xe - self.x0) / self.dx).floor() as isize + 1;
        let mut i = first.max(0) as usize;
        let mut x_prev = xe;
        let mut acc = 0.0;
        while i < self.ln_j.len() {
            let x = self.x0 + self.dx * i as f64;
            let x = x.min(top);
            if x > x_prev {
                acc += simpson(|s| self.integrand_x(m, s), x_prev, x);
                cdf_x.push(x);
                cdf.push(acc);
                x_prev = x;
            }
            if x >= top {
                break;
            }
            i += 1;
        }
        if xe < self.x0 {
            // the cutoff lies below the table: prepend the power-law piece
            let below = self.radial_integral(m, eps, self.x0.exp());
            for c in cdf.iter_mut().skip(1) {
                *c += below;
            }
            cdf[0] = 0.0;
        }
        let far_mass = if self.truncation.is_some_and(|rho| rho <= self.r_max()) {
            0.0
        } else {
            self.far_integral(m, self.r_max(), f64::INFINITY)
        };
        let tail_mass = sphere_surface(self.dim) * (acc + far_mass);
        if !tail_mass.is_finite() {
            return Err(Error::invalid("jump kernel tail mass is infinite"));
        }
        let small_moment = self.second_moment(0.0, eps);
        k.cutoff = Some(CutoffLaw {
            eps,
            tail_mass,
            small_moment,
            cdf_x,
            cdf,
            far_mass,
        });
        Ok(k)
    }

    pub fn cutoff(&self) -> Option<&CutoffLaw> {
        self.cutoff.as_ref()
    }

    /// `Λ_ε` for the attached cutoff.
    pub fn tail_mass(&self) -> f64 {
        self.cutoff.as_ref().map_or(0.0, |c| c.tail_mass)
    }

    /// `m₂(ε)` for the attached cutoff.
    pub fn small_moment(&self) -> f64 {
        self.cutoff.as_ref().map_or(0.0, |c| c.small_moment)
    }

    /// Normalised radial CDF `P(R ≤ r)` of a jump of size ≥ ε.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        let Some(c) = &self.cutoff else { return 0.0 };
        let total = c.cdf.last().copied().unwrap_or(0.0) + c.far_mass;
        if total <= 0.0 || r <= c.eps {
            return 0.0;
        }
        let x = r.ln();
        if x >= *c.cdf_x.last().unwrap() {
            let extra = if c.far_mass > 0.0 {
                self.far_integral((self.dim - 1) as f64, self.r_max(), r)
            } else {
                0.0
            };
            return ((c.cdf.last().unwrap() + extra) / total).min(1.0);
        }
        let k = c.cdf_x.partition_point(|v| *v <= x) - 1;
        let part = simpson(|s| self.integrand_x((self.dim - 1) as f64, s), c.cdf_x[k], x);
        (c.cdf[k] + part) / total
    }

    /// Draw a jump radius from the normalised law of jumps of size ≥ ε.
    pub fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.cutoff.as_ref().expect("sample_radius requires with_cutoff");
        let in_table = *c.cdf.last().unwrap();
        let total = in_table + c.far_mass;
        let v = rng.gen::<f64>() * total;
        if v >= in_table && c.far_mass > 0.0 {
            return self.sample_far(rng);
        }
        let k = (c.cdf.partition_point(|p| *p <= v)).clamp(1, c.cdf.len() - 1) - 1;
        let (xa, xb) = (c.cdf_x[k], c.cdf_x[k + 1]);
        let q = ((v - c.cdf[k]) / (c.cdf[k + 1] - c.cdf[k])).clamp(0.0, 1.0);
        // within a cell the density in x is ≈ exp(g_a + s (x - x_a))
        let m = (self.dim - 1) as f64;
        let ga = (m + 1.0) * xa + self.ln_j_untruncated(xa);
        let gb = (m + 1.0) * xb + self.ln_j_untruncated(xb);
        let w = xb - xa;
        let s = (gb - ga) / w;
        let x = if (s * w).abs() < 1e-9 {
            xa + q * w
        } else {
            xa + (q * (s * w).exp_m1()).ln_1p() / s
        };
        x.clamp(xa, xb).exp()
    }

    fn sample_far<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let rn = self.r_max();
        let q = (self.dim - 1) as f64 + self.tail_p;
        let kappa = self.tail_kappa;
        loop {
            if q < -1.0 {
                // Pareto proposal for r^{q}, thinned by e^{-κ(r - r_N)}
                let u: f64 = rng.gen();
                let r = rn * (1.0 - u).powf(1.0 / (q + 1.0));
                if kappa == 0.0 || rng.gen::<f64>() < (-kappa * (r - rn)).exp() {
                    return r;
                }
            } else {
                // exponential proposal with rate κ/2
                let rate = 0.5 * kappa;
                let r = rn - rng.gen::<f64>().ln() / rate;
                let ln_target = |r: f64| q * (r / rn).ln() - rate * (r - rn);
                let r_star = (q / rate).max(rn);
                let bound = ln_target(r_star);
                if rng.gen::<f64>().ln() < ln_target(r) - bound {
                    return r;
                }
            }
        }
    }

    /// Empirical constants of the kernel regularity conditions: `c1` in
    /// `j(r) ≤ c1 j(2r)` for `r < K`, `c2` in `j(r) ≤ c2 j(r+1)` for
    /// `r > 1`, and `ν = log₂ c1`.
    pub fn verify_kernel_conditions(&self, k: f64) -> Result<KernelConditions> {
        if self.zero {
            return Err(Error::invalid("the zero kernel has no regularity constants"));
        }
        if !(k > 0.0) {
            return Err(Error::invalid("K must be positive"));
        }
        if let Some(rho) = self.truncation {
            return Ok(KernelConditions::Violated { r: 0.5 * rho });
        }
        let mut c1: f64 = 0.0;
        let mut c2: f64 = 0.0;
        for (i, l) in self.ln_j.iter().enumerate() {
            let x = self.x0 + self.dx * i as f64;
            let r = x.exp();
            if r < k {
                c1 = c1.max((l - self.ln_j_untruncated((2.0 * r).ln())).exp());
            }
            if r > 1.0 && r < self.r_max() - 1.0 {
                c2 = c2.max((l - self.ln_j_untruncated((r + 1.0).ln())).exp());
            }
        }
        Ok(KernelConditions::Satisfied { c1, c2, nu: c1.log2() })
    }

    /// `(Δ + 𝒜) f (x)` where `𝒜` is the jump part of the generator.
    pub fn generator_apply(&self, f: &dyn TestFunction, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::invalid("point dimension does not match kernel"));
        }
        let lap = f.laplacian(x);
        if self.zero {
            return Ok(lap);
        }
        Ok(lap + self.jump_part(f, x)?)
    }

    /// The jump part `𝒜f(x)` alone.
    pub fn jump_part(&self, f: &dyn TestFunction, x: &[f64]) -> Result<f64> {
        if self.zero {
            return Ok(0.0);
        }
        let d = self.dim;
        let fx = f.value(x);
        let lap = f.laplacian(x);
        let scale = f.length_scale();
        let r0 = 1e-3 * scale.min(1.0);
        let mut total = lap / (2.0 * d as f64) * self.second_moment(0.0, r0);
        // beyond `reach` the sphere average equals the value at infinity
        let reach = f.reach_from(x).max(r0);
        let upper = match self.truncation {
            Some(rho) => rho.min(reach),
            None => reach,
        };
        let sphere = SphereRule::new(d, f.radial_center().is_some());
        let bracket = |r: f64| sphere.average(f, x, r) - fx;
        let mut lo = r0;
        let mut hi = (2.0 * r0).min(upper);
        let surface = sphere_surface(d);
        while lo < upper {
            // rounding in f(y) - f(x) puts a floor of ~ε|f(x)| on the bracket
            let floor = 64.0 * f64::EPSILON * fx.abs() * self.shell_mass(lo, hi);
            let q = integrate(
                |r: f64| surface * ((d - 1) as f64 * r.ln() + self.ln_j(r)).exp() * bracket(r),
                lo,
                hi,
                QuadOptions::with_tol(floor.max(1e-13), 1e-9),
            )
            .map_err(|_| Error::GeneratorShell { lo, hi })?;
            total += q.value;
            lo = hi;
            hi = (2.0 * hi).min(upper);
        }
        if upper < self.truncation.unwrap_or(f64::INFINITY) {
            let gap = f.value_at_infinity() - fx;
            if gap != 0.0 {
                total += self.shell_mass(upper, f64::INFINITY) * gap;
            }
        }
        Ok(total)
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Quadrature over the unit sphere, averaged (weights sum to one).
struct SphereRule {
    dim: usize,
    radial: bool,
    // non-radial: directions with weights
    dirs: Vec<(Vec<f64>, f64)>,
    // radial: Gauss–Legendre nodes for the polar angle
    gl: (Vec<f64>, Vec<f64>),
}

impl SphereRule {
    fn new(dim: usize, radial: bool) -> Self {
        let mut dirs = Vec::new();
        if !radial {
            match dim {
                1 => {
                    dirs.push((vec![1.0], 0.5));
                    dirs.push((vec![-1.0], 0.5));
                }
                2 => {
                    let n = 96;
                    for k in 0..n {
                        let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                        dirs.push((vec![a.cos(), a.sin()], 1.0 / n as f64));
                    }
                }
                _ => {
                    let (u, w) = quadrature::gauss_legendre(32);
                    let n = 64;
                    for (ui, wi) in u.iter().zip(&w) {
                        let s = (1.0 - ui * ui).sqrt();
                        for k in 0..n {
                            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                            let mut v = vec![0.0; dim];
                            v[0] = s * a.cos();
                            v[1] = s * a.sin();
                            v[2] = *ui;
                            dirs.push((v, wi * 0.5 / n as f64));
                        }
                    }
                }
            }
        }
        Self {
            dim,
            radial,
            dirs,
            gl: quadrature::gauss_legendre(48),
        }
    }

    fn average(&self, f: &dyn TestFunction, x: &[f64], r: f64) -> f64 {
        if self.radial {
            let c = f.radial_center().unwrap();
            let dist2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            let dd = dist2.sqrt();
            let at = |cos_g: f64| {
                let rho2 = (dist2 + r * r + 2.0 * dd * r * cos_g).max(0.0);
                f.radial_profile(rho2.sqrt())
            };
            return match self.dim {
                1 => 0.5 * (at(1.0) + at(-1.0)),
                3 => {
                    // uniform in cos γ; split where the profile may kink
                    let q = integrate(at, -1.0, 1.0, QuadOptions::with_tol(1e-14, 1e-11));
                    q.map(|q| 0.5 * q.value).unwrap_or_else(|_| {
                        0.5 * self.gl.0.iter().zip(&self.gl.1).map(|(u, w)| w * at(*u)).sum::<f64>()
                    })
                }
                d => {
                    let p = (d - 2) as i32;
                    let g = |a: f64| at(a.cos()) * a.sin().powi(p);
                    let norm = if d == 2 {
                        std::f64::consts::PI
                    } else {
                        std::f64::consts::PI.sqrt() * gamma(0.5 * (d - 1) as f64) / gamma(0.5 * d as f64)
                    };
                    integrate(g, 0.0, std::f64::consts::PI, QuadOptions::with_tol(1e-14, 1e-11))
                        .map(|q| q.value / norm)
                        .unwrap_or(f64::NAN)
                }
            };
        }
        let mut y = vec![0.0; x.len()];
        let mut z = vec![0.0; x.len()];
        let mut acc = 0.0;
        for (dir, w) in &self.dirs {
            for i in 0..x.len() {
                y[i] = x[i] + r * dir[i];
                z[i] = x[i] - r * dir[i];
            }
            acc += w * 0.5 * (f.value(&y) + f.value(&z));
        }
        acc
    }
}

/// Closed-form jump kernel of `φ(λ) = λ + a^α λ^{α/2}`:
/// `j(r) = a^α α 2^{α-1} Γ((d+α)/2) / (π^{d/2} Γ(1-α/2)) · r^{-d-α}`.
pub fn stable_kernel_closed_form(dim: usize, alpha: f64, a: f64, r: f64) -> f64 {
    let d = dim as f64;
    let ln_c = alpha * a.ln() + alpha.ln() + (alpha - 1.0) * 2f64.ln() + ln_gamma(0.5 * (d + alpha))
        - 0.5 * d * std::f64::consts::PI.ln()
        - ln_gamma(1.0 - 0.5 * alpha);
    (ln_c - (d + alpha) * r.ln()).exp()
}

/// Tabulated `(Δ+𝒜)f` for a radial test function, as a function of the
/// distance to its centre.
#[derive(Debug, Clone)]
pub struct RadialGeneratorTable {
    center: Vec<f64>,
    step: f64,
    values: Vec<f64>,
    far_value: f64,
}

impl RadialGeneratorTable {
    pub fn build(kernel: &JumpKernel, f: &dyn TestFunction, max_distance: f64, nodes: usize) -> Result<Self> {
        let center = f
            .radial_center()
            .ok_or_else(|| Error::invalid("generator table requires a radial test function"))?
            .to_vec();
        let d = kernel.dim();
        if center.len() != d {
            return Err(Error::invalid("test function dimension does not match kernel"));
        }
        let step = max_distance / (nodes - 1) as f64;
        let mut values = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let mut x = center.clone();
            x[0] += step * i as f64;
            values.push(kernel.generator_apply(f, &x)?);
        }
        let mut far = center.clone();
        far[0] += 2.0 * max_distance;
        let far_value = kernel.generator_apply(f, &far)?;
        Ok(Self {
            center,
            step,
            values,
            far_value,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dist = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let u = dist / self.step;
        let n = self.values.len();
        if u >= (n - 1) as f64 {
            return if u >= 2.0 * (n - 1) as f64 { self.far_value } else { self.values[n - 1] };
        }
        let i = u.floor() as usize;
        let t = u - i as f64;
        // cubic Hermite with centred slopes
        let v = |k: isize| self.values[k.clamp(0, n as isize - 1) as usize];
        let (p0, p1) = (v(i as isize), v(i as isize + 1));
        let m0 = 0.5 * (v(i as isize + 1) - v(i as isize - 1));
        let m1 = 0.5 * (v(i as isize + 2) - v(i as isize));
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_functions::{CompactBump, Constant, GaussianBump};

    #[test]
    fn zero_kernel_vanishes() {
        let f = BernsteinFunction::pure_bm();
        assert_eq!(j_eval(&f, 3, 0.5).unwrap(), 0.0);
        let k = JumpKernel::build(&f, 3).unwrap();
        assert_eq!(k.j(0.1), 0.0);
        assert_eq!(k.with_cutoff(0.1).unwrap().tail_mass(), 0.0);
    }

    #[test]
    fn stable_quadrature_matches_closed_form() {
        for (d, alpha) in [(1, 1.0), (1, 0.5), (2, 0.5), (2, 1.0), (3, 1.0), (3, 1.5)] {
            let f = BernsteinFunction::stable(alpha, 1.0).unwrap();
            for r in [1e-6, 1e-4, 0.3, 2.0, 50.0, 829.24, 833.45, 1e3] {
                let q = j_eval(&f, d, r).unwrap();
                let c = stable_kernel_closed_form(d, alpha, 1.0, r);
                assert!(((q - c) / c).abs() < 1e-9, "d={d} alpha={alpha} r={r}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn routes_agree_for_gamma() {
        let f = BernsteinFunction::gamma();
        let gk = ln_j_quadrature(&f, 2, 1.0, Route::GaussKronrod).unwrap();
        let de = ln_j_quadrature(&f, 2, 1.0, Route::DoubleExponential).unwrap();
        assert!((gk - de).exp_m1().abs() < 1e-8);
    }

    #[test]
    fn gamma_kernel_matches_bessel_representation_in_d1() {
        // d = 1: j(r) = ∫ (4πt)^{-1/2} e^{-r²/4t} t^{-1} e^{-t} dt = e^{-r}/r
        let f = BernsteinFunction::gamma();
        for r in [0.01, 0.5, 3.0, 40.0] {
            let j = j_eval(&f, 1, r).unwrap();
            let exact = (-r).exp() / r;
            assert!(((j - exact) / exact).abs() < 1e-9, "r={r}: {j} vs {exact}");
        }
    }

    #[test]
    fn far_tail_is_finite_in_log_space() {
        let f = BernsteinFunction::gamma();
        let k = JumpKernel::build_with_nodes(&f, 2, 512).unwrap();
        let l = k.ln_j(900.0);
        assert!(l.is_finite() && l < -800.0);
    }

    #[test]
    fn truncated_kernel_is_zero_beyond_range() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&f, 2, 1024).unwrap().truncated(1.0).unwrap();
        assert!(k.j(0.99) > 0.0);
        assert_eq!(k.j(1.0), 0.0);
        assert_eq!(k.j(3.0), 0.0);
        assert!(matches!(k.verify_kernel_conditions(1.0).unwrap(), KernelConditions::Violated { .. }));
        let k = k.with_cutoff(0.05).unwrap();
        let mut rng = rand::thread_rng();
        for _ in 0..10_000 {
            let r = k.sample_radius(&mut rng);
            assert!((0.05..1.0).contains(&r));
        }
    }

    #[test]
    fn cutoff_masses_match_stable_closed_form() {
        let (d, alpha) = (2, 1.0);
        let f = BernsteinFunction::stable(alpha, 1.0).unwrap();
        let k = JumpKernel::build(&f, d).unwrap().with_cutoff(0.01).unwrap();
        let c = stable_kernel_closed_form(d, alpha, 1.0, 1.0);
        let s = sphere_surface(d);
        // Λ_ε = s c ε^{-α}/α ; m₂(ε) = s c ε^{2-α}/(2-α)
        let lam = s * c * 0.01f64.powf(-alpha) / alpha;
        let m2 = s * c * 0.01f64.powf(2.0 - alpha) / (2.0 - alpha);
        assert!(((k.tail_mass() - lam) / lam).abs() < 1e-6, "{} vs {lam}", k.tail_mass());
        assert!(((k.small_moment() - m2) / m2).abs() < 1e-6, "{} vs {m2}", k.small_moment());
    }

    #[test]
    fn constant_function_is_annihilated() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&f, 2, 1024).unwrap();
        let c = Constant::new(2, 3.5);
        for x in [[0.0, 0.0], [0.3, -2.0]] {
            assert!(k.generator_apply(&c, &x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn radial_and_spherical_rules_agree() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&f, 2, 2048).unwrap();
        let g = GaussianBump::new(vec![0.2, 0.1], 0.5, 1.0);
        let x = [0.5, -0.3];
        let radial = k.generator_apply(&g, &x).unwrap();
        let generic = k.generator_apply(&g.as_non_radial(), &x).unwrap();
        assert!(((radial - generic) / radial).abs() < 1e-6, "{radial} vs {generic}");
    }

    #[test]
    fn generator_far_from_compact_support_is_plain_integral() {
        // x outside the support: 𝒜f(x) = ∫ f(x+y) j(|y|) dy, computed here by
        // Cartesian quadrature over the support disc
        let fam = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&fam, 2, 2048).unwrap();
        let bump = CompactBump::new(vec![0.0, 0.0], 0.5);
        let x = [2.0, 0.0];
        let gen = k.generator_apply(&bump, &x).unwrap();
        let opts = QuadOptions::with_tol(1e-14, 1e-10);
        let direct = integrate(
            |z1: f64| {
                let h = (0.25 - z1 * z1).max(0.0).sqrt();
                integrate(
                    |z2: f64| {
                        let z = [z1, z2];
                        let dist = ((z1 - x[0]).powi(2) + (z2 - x[1]).powi(2)).sqrt();
                        bump.value(&z) * stable_kernel_closed_form(2, 1.0, 1.0, dist)
                    },
                    -h,
                    h,
                    opts,
                )
                .unwrap()
                .value
            },
            -0.5,
            0.5,
            opts,
        )
        .unwrap()
        .value;
        assert!(direct > 0.0);
        assert!(((gen - direct) / direct).abs() < 1e-6, "{gen} vs {direct}");
    }
}
