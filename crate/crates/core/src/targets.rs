//! Jump intensities into fixed target sets, `J_A(y) = ∫_A j(|y − z|) dz`,
//! restricted to jumps of size at least ε. By the Lévy system identity the
//! probability that the exit jump lands in `A` equals the expected integral
//! of `J_A` along the path, which is the low-variance way to estimate
//! landing probabilities for small or remote targets.

use crate::error::{Error, Result};
use crate::jump_kernel::JumpKernel;
use crate::quadrature::{integrate, QuadOptions};

pub trait Target: Send + Sync {
    /// Jump intensity from `y` into the set (jumps of size ≥ ε only).
    fn intensity(&self, y: &[f64]) -> f64;
    fn contains(&self, z: &[f64]) -> bool;
    /// Distance from `y` to the set.
    fn distance(&self, y: &[f64]) -> f64;
}

/// Measure of the sphere of radius `s` centred at distance `dist` from the
/// centre of a ball of radius `rho`, lying inside that ball (d ≤ 3).
fn sphere_inside_ball(d: usize, s: f64, dist: f64, rho: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s + dist <= rho {
        return crate::jump_kernel::sphere_surface(d) * s.powi(d as i32 - 1);
    }
    if s >= dist + rho || s <= dist - rho {
        return 0.0;
    }
    let cos_t = ((s * s + dist * dist - rho * rho) / (2.0 * s * dist)).clamp(-1.0, 1.0);
    match d {
        1 => 1.0,
        2 => 2.0 * s * cos_t.acos(),
        _ => 2.0 * std::f64::consts::PI * s * s * (1.0 - cos_t),
    }
}

/// Ball target, with `J_A` tabulated against the distance to its centre.
#[derive(Debug, Clone)]
pub struct BallTarget {
    center: Vec<f64>,
    radius: f64,
    d_lo: f64,
    step: f64,
    ln_values: Vec<f64>,
}

impl BallTarget {
    /// Tabulate for centre distances in `[d_min, d_max]`.
    pub fn new(kernel: &JumpKernel, center: Vec<f64>, radius: f64, d_min: f64, d_max: f64) -> Result<Self> {
        let d = kernel.dim();
        if d > 3 || center.len() != d {
            return Err(Error::invalid("ball targets are supported for d ≤ 3"));
        }
        if !(d_min > radius && d_max > d_min) {
            return Err(Error::invalid("target tabulation range must lie outside the target ball"));
        }
        let eps = kernel.cutoff().map_or(0.0, |c| c.eps);
        let n = 257;
        let step = (d_max - d_min) / (n - 1) as f64;
        let mut ln_values = Vec::with_capacity(n);
        for i in 0..n {
            let dist = d_min + step * i as f64;
            let v = Self::exact(kernel, d, dist, radius, eps)?;
            ln_values.push(if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        }
        Ok(Self {
            center,
            radius,
            d_lo: d_min,
            step,
            ln_values,
        })
    }

    fn exact(kernel: &JumpKernel, d: usize, dist: f64, rho: f64, eps: f64) -> Result<f64> {
        let lo = (dist - rho).max(eps);
        let mut hi = dist + rho;
        if let Some(t) = kernel.truncation_radius() {
            hi = hi.min(t);
        }
        if hi <= lo {
            return Ok(0.0);
        }
        if d == 1 {
            return Ok(kernel.radial_integral(0.0, lo, hi));
        }
        let q = integrate(
            |s: f64| kernel.j(s) * sphere_inside_ball(d, s, dist, rho),
            lo,
            hi,
            QuadOptions::with_tol(0.0, 1e-10),
        )?;
        Ok(q.value)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Target for BallTarget {
    fn intensity(&self, y: &[f64]) -> f64 {
        let dist = y.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let u = (dist - self.d_lo) / self.step;
        let n = self.ln_values.len();
        if !(u >= 0.0 && u <= (n - 1) as f64) {
            panic!("ball target queried at distance {dist} outside its table");
        }
        let i = (u.floor() as usize).min(n - 2);
        let t = u - i as f64;
        let (a, b) = (self.ln_values[i], self.ln_values[i + 1]);
        if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
            // support edge of a finite-range kernel: interpolate linearly
            let (ea, eb) = (a.exp(), b.exp());
            return ea + t * (eb - ea);
        }
        // cubic in log space with centred slopes
        let v = |k: isize| self.ln_values[k.clamp(0, n as isize - 1) as usize];
        let ii = i as isize;
        let (m0, m1) = (0.5 * (v(ii + 1) - v(ii - 1)), 0.5 * (v(ii + 2) - v(ii)));
        if !(m0.is_finite() && m1.is_finite()) {
            return (a + t * (b - a)).exp();
        }
        let t2 = t * t;
        let t3 = t2 * t;
        ((2.0 * t3 - 3.0 * t2 + 1.0) * a + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * b + (t3 - t2) * m1)
            .exp()
    }

    fn contains(&self, z: &[f64]) -> bool {
        self.distance(z) <= 0.0
    }

    fn distance(&self, y: &[f64]) -> f64 {
        let dist = y.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        (dist - self.radius).max(0.0)
    }
}

/// Axis-aligned rectangle `[lo_1, hi_1] × [lo_2, hi_2]` in the plane.
#[derive(Debug, Clone)]
pub struct RectTarget {
    kernel: JumpKernel,
    lo: [f64; 2],
    hi: [f64; 2],
    eps: f64,
    reach: f64,
}

impl RectTarget {
    pub fn new(kernel: &JumpKernel, lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        if kernel.dim() != 2 {
            return Err(Error::invalid("rectangle targets are planar"));
        }
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::invalid("rectangle needs lo < hi"));
        }
        Ok(Self {
            kernel: kernel.clone(),
            lo,
            hi,
            eps: kernel.cutoff().map_or(0.0, |c| c.eps),
            reach: kernel.truncation_radius().unwrap_or(f64::INFINITY),
        })
    }

    fn exact(&self, y: &[f64]) -> f64 {
        let opts = QuadOptions::with_tol(1e-300, 1e-8);
        let (eps, reach) = (self.eps, self.reach);
        // outer integral over z1, inner over z2 restricted to ε ≤ |y − z| < reach
        let inner = |z1: f64| -> f64 {
            let a = (z1 - y[0]).abs();
            if a >= reach {
                return 0.0;
            }
            let span = if reach.is_finite() { (reach * reach - a * a).sqrt() } else { f64::INFINITY };
            let lo = self.lo[1].max(y[1] - span);
            let hi = self.hi[1].min(y[1] + span);
            if hi <= lo {
                return 0.0;
            }
            let f = |z2: f64| {
                let r = (a * a + (z2 - y[1]).powi(2)).sqrt();
                if r < eps {
                    0.0
                } else {
                    self.kernel.j(r)
                }
            };
            integrate(f, lo, hi, opts).map(|q| q.value).unwrap_or(0.0)
        };
        let lo = self.lo[0].max(y[0] - reach);
        let hi = self.hi[0].min(y[0] + reach);
        if hi <= lo {
            return 0.0;
        }
        integrate(inner, lo, hi, opts).map(|q| q.value).unwrap_or(0.0)
    }
}

impl Target for RectTarget {
    fn intensity(&self, y: &[f64]) -> f64 {
        if self.distance(y) >= self.reach {
            return 0.0;
        }
        self.exact(y)
    }

    fn contains(&self, z: &[f64]) -> bool {
        (0..2).all(|i| z[i] >= self.lo[i] && z[i] <= self.hi[i])
    }

    fn distance(&self, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            let e = (self.lo[i] - y[i]).max(y[i] - self.hi[i]).max(0.0);
            s += e * e;
        }
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::BernsteinFunction;
    use crate::jump_kernel::stable_kernel_closed_form;

    fn brute_force(d: usize, y: &[f64], c: &[f64], rho: f64) -> f64 {
        // midpoint rule over a fine Cartesian grid of the target ball
        let n = if d == 2 { 800 } else { 160 };
        let h = 2.0 * rho / n as f64;
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let z: Vec<f64> = (0..d).map(|k| c[k] - rho + h * (idx[k] as f64 + 0.5)).collect();
            if z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= rho * rho {
                let r = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                acc += stable_kernel_closed_form(d, 1.0, 1.0, r);
            }
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == d {
                    return acc * h.powi(d as i32);
                }
            }
        }
    }

    #[test]
    fn ball_intensity_matches_cartesian_quadrature() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        for d in [2, 3] {
            let k = JumpKernel::build_with_nodes(&f, d, 2048).unwrap().with_cutoff(0.05).unwrap();
            let mut c = vec![0.0; d];
            c[0] = 2.0;
            let t = BallTarget::new(&k, c.clone(), 0.5, 0.6, 3.0).unwrap();
            let y = vec![0.0; d];
            let exact = brute_force(d, &y, &c, 0.5);
            let v = t.intensity(&y);
            assert!(((v - exact) / exact).abs() < 2e-3, "d={d}: {v} vs {exact}");
        }
    }

    #[test]
    fn truncated_kernel_cannot_reach_far_targets() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&f, 2, 1024)
            .unwrap()
            .truncated(1.0)
            .unwrap()
            .with_cutoff(0.05)
            .unwrap();
        let r = RectTarget::new(&k, [-0.1, -3.0], [0.1, -0.99]).unwrap();
        assert_eq!(r.intensity(&[0.0, 0.02]), 0.0);
        assert!(r.intensity(&[0.0, -0.005]) > 0.0);
        let b = BallTarget::new(&k, vec![3.0, 0.0], 0.5, 1.6, 4.0).unwrap();
        assert_eq!(b.intensity(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn rectangle_intensity_matches_ball_of_same_area_far_away() {
        // far from a tiny square the kernel is nearly constant across it
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&f, 2, 2048).unwrap().with_cutoff(0.05).unwrap();
        let r = RectTarget::new(&k, [1.99, -0.01], [2.01, 0.01]).unwrap();
        let v = r.intensity(&[0.0, 0.0]);
        let approx = 4e-4 * stable_kernel_closed_form(2, 1.0, 1.0, 2.0);
        assert!(((v - approx) / approx).abs() < 1e-4);
    }
}
