//! Time-stepping simulation of the jump diffusion (generator `Δ + 𝒜`) up to
//! its first exit from a domain.
//!
//! One step: Gaussian move with per-coordinate variance `2·dt·(1 + c_ε)`,
//! inside test with optional Brownian-bridge crossing test, then at most one
//! jump of size ≥ ε with probability `1 − e^{−Λ_ε dt}`.
//!
//! Exit times follow the midpoint rule: a diffusive exit detected during
//! step `(t_k, t_{k+1}]` is dated `t_k + dt/2`, a jump exit `t_{k+1}`.
//! Occupation weights are assigned so that they sum to the recorded exit
//! time (trapezoid rule over the visited positions).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{map_chunks, BatchConfig};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::jump_kernel::JumpKernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub eps: f64,
    pub fold_small_jumps: bool,
    pub bridge_correction: bool,
    pub time_cap: f64,
    /// Start paths that begin within `2√(2dt)` of the boundary with step
    /// `δ²/32`, growing like `t/16` up to `dt`.
    pub graded_start: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps: 0.05,
            fold_small_jumps: true,
            bridge_correction: true,
            time_cap: 100.0,
            graded_start: true,
        }
    }
}

/// Deterministic step-size schedule.
#[derive(Debug, Clone, Copy)]
struct StepSizes {
    dt: f64,
    dt0: f64,
}

impl StepSizes {
    fn at(&self, t: f64) -> f64 {
        if self.dt0 >= self.dt {
            self.dt
        } else {
            (t / 16.0).clamp(self.dt0, self.dt)
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("scheme.dt must be positive, got {}", self.dt)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::Config(format!("scheme.eps must lie in (0, 1], got {}", self.eps)));
        }
        if !(self.time_cap >= 100.0 * self.dt) {
            return Err(Error::Config(format!(
                "scheme.time_cap = {} is below 100·dt = {}",
                self.time_cap,
                100.0 * self.dt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    pub exit_time: f64,
    pub exit_position: Vec<f64>,
    pub pre_exit_position: Vec<f64>,
    pub exited_by_jump: bool,
    pub truncated: bool,
    pub jumps: u32,
    /// The start was within `2√(2dt)` of the boundary.
    pub near_boundary_start: bool,
}

/// Receives occupation samples `(position, time weight)` along a path.
pub trait Observer {
    fn visit(&mut self, x: &[f64], weight: f64);

    /// Called once per completed step at the position from which the step's
    /// jump (if any) is launched. `weight` is the jump probability of the
    /// step divided by `Λ_ε`, so that `Σ weight · ∫_A j` is the probability
    /// that a jump lands in a set `A` at distance ≥ ε.
    fn jump_site(&mut self, _y: &[f64], _weight: f64) {}

    /// Called for every executed jump of size ≥ ε.
    fn jump(&mut self, _from: &[f64], _to: &[f64]) {}
}

impl Observer for () {
    fn visit(&mut self, _x: &[f64], _weight: f64) {}
}

/// Collects the occupation samples of one path.
#[derive(Debug, Default, Clone)]
pub struct OccupationLog(pub Vec<(Vec<f64>, f64)>);

impl Observer for OccupationLog {
    fn visit(&mut self, x: &[f64], weight: f64) {
        self.0.push((x.to_vec(), weight));
    }
}

impl<F: FnMut(&[f64], f64)> Observer for F {
    fn visit(&mut self, x: &[f64], weight: f64) {
        self(x, weight)
    }
}

/// Simulator bound to one domain, kernel and scheme.
#[derive(Debug, Clone)]
pub struct Simulator {
    domain: Domain,
    kernel: JumpKernel,
    scheme: SchemeConfig,
    sigma: f64,
    folded: f64,
    jump_prob: f64,
}

impl Simulator {
    pub fn new(domain: &Domain, kernel: &JumpKernel, scheme: SchemeConfig) -> Result<Self> {
        scheme.validate()?;
        if domain.dim() != kernel.dim() {
            return Err(Error::invalid(format!(
                "domain has dimension {} but the kernel {}",
                domain.dim(),
                kernel.dim()
            )));
        }
        let kernel = match kernel.cutoff() {
            Some(c) if c.eps == scheme.eps => kernel.clone(),
            _ => kernel.with_cutoff(scheme.eps)?,
        };
        let d = domain.dim() as f64;
        let folded = if scheme.fold_small_jumps {
            kernel.small_moment() / (2.0 * d)
        } else {
            0.0
        };
        let sigma = (2.0 * scheme.dt * (1.0 + folded)).sqrt();
        let jump_prob = -(-kernel.tail_mass() * scheme.dt).exp_m1();
        Ok(Self {
            domain: domain.clone(),
            kernel,
            scheme,
            sigma,
            folded,
            jump_prob,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    /// Same simulator with a different time step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let scheme = SchemeConfig { dt, ..self.scheme };
        Self::new(&self.domain, &self.kernel, scheme)
    }

    /// `c_ε = m₂(ε)/(2d)` when folding is on, else 0.
    pub fn folded_coefficient(&self) -> f64 {
        self.folded
    }

    /// Per-step jump probability `1 − e^{−Λ_ε dt}`.
    pub fn jump_probability(&self) -> f64 {
        self.jump_prob
    }

    pub fn simulate_exit<R: Rng + ?Sized>(&self, start: &[f64], rng: &mut R) -> Result<ExitRecord> {
        self.simulate_exit_observed(start, rng, &mut ())
    }

    pub fn simulate_exit_observed<R: Rng + ?Sized, O: Observer + ?Sized>(
        &self,
        start: &[f64],
        rng: &mut R,
        obs: &mut O,
    ) -> Result<ExitRecord> {
        let d = self.domain.dim();
        if start.len() != d {
            return Err(Error::invalid("start point has the wrong dimension"));
        }
        let sd_start = self.domain.signed_distance(start);
        if !(sd_start > 0.0) {
            return Err(Error::Precondition(format!(
                "start point {start:?} is not inside {} (signed distance {sd_start:e})",
                self.domain.name()
            )));
        }
        let dt = self.scheme.dt;
        let close = sd_start < 2.0 * (2.0 * dt).sqrt();
        let dt0 = if close && self.scheme.graded_start {
            (sd_start * sd_start / 32.0).min(dt)
        } else {
            dt
        };
        let steps = StepSizes { dt, dt0 };
        let lambda = self.kernel.tail_mass();
        let mut x = start.to_vec();
        let mut y = vec![0.0; d];
        let mut dir = vec![0.0; d];
        let mut sd_x = sd_start;
        let mut t = 0.0;
        let mut h = steps.at(0.0);
        let mut jumps = 0u32;
        let rec = |exit_time, exit_position, pre_exit_position, exited_by_jump, truncated, jumps| ExitRecord {
            exit_time,
            exit_position,
            pre_exit_position,
            exited_by_jump,
            truncated,
            jumps,
            near_boundary_start: close && !self.scheme.graded_start,
        };
        obs.visit(&x, 0.5 * h);
        loop {
            if t >= self.scheme.time_cap || !self.domain.in_bounding_box(&x) {
                return Ok(rec(t, x.clone(), x, false, true, jumps));
            }
            let (sigma, jump_prob) = if h == dt {
                (self.sigma, self.jump_prob)
            } else {
                ((2.0 * h * (1.0 + self.folded)).sqrt(), -(-lambda * h).exp_m1())
            };
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                y[i] = x[i] + sigma * z;
            }
            let sd_y = self.domain.signed_distance(&y);
            let mut crossed = sd_y <= 0.0;
            if !crossed && self.scheme.bridge_correction {
                let p = (-sd_x * sd_y / (h * (1.0 + self.folded))).exp();
                crossed = rng.gen::<f64>() < p;
            }
            if crossed {
                let exit_position = if sd_y <= 0.0 {
                    self.domain.project_to_boundary(&y)
                } else {
                    let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                    self.domain.project_to_boundary(&mid)
                };
                return Ok(rec(t + 0.5 * h, exit_position, x, false, false, jumps));
            }
            t += h;
            let h_prev = h;
            h = steps.at(t);
            obs.jump_site(&y, if lambda > 0.0 { jump_prob / lambda } else { h_prev });
            if jump_prob > 0.0 && rng.gen::<f64>() < jump_prob {
                jumps += 1;
                let r = self.kernel.sample_radius(rng);
                let mut norm2: f64 = 0.0;
                for v in dir.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    norm2 += *v * *v;
                }
                let s = r / norm2.sqrt();
                let z: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + s * b).collect();
                let sd_z = self.domain.signed_distance(&z);
                obs.jump(&y, &z);
                obs.visit(&y, 0.5 * h_prev);
                if sd_z <= 0.0 {
                    return Ok(rec(t, z, y, true, false, jumps));
                }
                obs.visit(&z, 0.5 * h);
                x = z;
                sd_x = sd_z;
            } else {
                obs.visit(&y, 0.5 * (h_prev + h));
                std::mem::swap(&mut x, &mut y);
                sd_x = sd_y;
            }
        }
    }

    /// Simulate `n_paths` exits from `start`, chunked per [`map_chunks`].
    pub fn simulate_exit_batch(&self, start: &[f64], n_paths: usize, batch: &BatchConfig) -> Result<Vec<ExitRecord>> {
        let chunks = map_chunks(n_paths, batch, |_, len, rng| {
            (0..len).map(|_| self.simulate_exit(start, rng)).collect::<Result<Vec<_>>>()
        })?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{chunk_rng, Moments};
    use crate::bernstein::BernsteinFunction;
    use crate::geometry::make_ball;

    fn scheme(dt: f64) -> SchemeConfig {
        SchemeConfig {
            dt,
            eps: 0.05,
            fold_small_jumps: true,
            bridge_correction: true,
            time_cap: 50.0,
            graded_start: false,
        }
    }

    #[test]
    fn brownian_exit_lands_on_sphere() {
        let ball = make_ball(vec![0.0; 3], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(3), scheme(1e-3)).unwrap();
        let mut rng = chunk_rng(1, 0);
        for _ in 0..200 {
            let rec = sim.simulate_exit(&[0.0; 3], &mut rng).unwrap();
            let r: f64 = rec.exit_position.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-9);
            assert!(!rec.exited_by_jump && !rec.truncated);
            assert!(ball.contains(&rec.pre_exit_position));
        }
    }

    #[test]
    fn stable_jumps_overshoot() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&BernsteinFunction::stable(1.0, 1.0).unwrap(), 2, 1024).unwrap();
        let sim = Simulator::new(&ball, &k, scheme(1e-3)).unwrap();
        let mut rng = chunk_rng(2, 0);
        let mut by_jump = 0;
        for _ in 0..500 {
            let rec = sim.simulate_exit(&[0.0, 0.0], &mut rng).unwrap();
            if rec.exited_by_jump {
                by_jump += 1;
                let r: f64 = rec.exit_position.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(r > 1.0);
                let step: f64 = rec
                    .exit_position
                    .iter()
                    .zip(&rec.pre_exit_position)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(step >= 0.05);
            }
        }
        assert!(by_jump > 0);
    }

    #[test]
    fn occupation_weights_sum_to_exit_time() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&BernsteinFunction::stable(1.0, 1.0).unwrap(), 2, 1024).unwrap();
        let sim = Simulator::new(&ball, &k, scheme(1e-3)).unwrap();
        let mut rng = chunk_rng(3, 0);
        for _ in 0..100 {
            let mut log = OccupationLog::default();
            let rec = sim.simulate_exit_observed(&[0.3, 0.0], &mut rng, &mut log).unwrap();
            let total: f64 = log.0.iter().map(|(_, w)| w).sum();
            assert!((total - rec.exit_time).abs() < 1e-9);
            assert!(log.0.iter().all(|(p, _)| ball.contains(p)));
        }
    }

    #[test]
    fn start_outside_is_rejected() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(2), scheme(1e-3)).unwrap();
        let mut rng = chunk_rng(1, 0);
        assert!(sim.simulate_exit(&[1.0, 0.0], &mut rng).is_err());
        assert!(sim.simulate_exit(&[0.999, 0.0], &mut rng).unwrap().near_boundary_start);
    }

    #[test]
    fn graded_start_keeps_weights_consistent() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&BernsteinFunction::stable(1.0, 1.0).unwrap(), 2, 1024).unwrap();
        let s = SchemeConfig {
            graded_start: true,
            ..scheme(1e-3)
        };
        let sim = Simulator::new(&ball, &k, s).unwrap();
        let mut rng = chunk_rng(4, 0);
        for _ in 0..100 {
            let mut log = OccupationLog::default();
            let rec = sim.simulate_exit_observed(&[0.999, 0.0], &mut rng, &mut log).unwrap();
            assert!(!rec.near_boundary_start);
            let total: f64 = log.0.iter().map(|(_, w)| w).sum();
            assert!((total - rec.exit_time).abs() < 1e-12);
            assert!(log.0[0].1 <= 0.5 * 1e-6 / 32.0 + 1e-18);
        }
    }

    #[test]
    fn time_cap_truncates() {
        let ball = make_ball(vec![0.0; 2], 10.0).unwrap();
        let s = SchemeConfig {
            time_cap: 0.1,
            ..scheme(1e-3)
        };
        let sim = Simulator::new(&ball, &JumpKernel::zero(2), s).unwrap();
        let rec = sim.simulate_exit(&[0.0, 0.0], &mut chunk_rng(1, 0)).unwrap();
        assert!(rec.truncated);
    }

    #[test]
    fn jump_rate_matches_tail_mass() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let k = JumpKernel::build_with_nodes(&BernsteinFunction::stable(1.0, 1.0).unwrap(), 2, 1024).unwrap();
        let sim = Simulator::new(&ball, &k, scheme(1e-3)).unwrap();
        let recs = sim
            .simulate_exit_batch(&[0.0, 0.0], 4000, &BatchConfig::default())
            .unwrap();
        // count per unit time; jump counts are Poisson given the time spent
        let jumps: f64 = recs.iter().map(|r| r.jumps as f64).sum();
        let steps: f64 = recs.iter().map(|r| (r.exit_time / 1e-3).round()).sum();
        let rate = jumps / (steps * 1e-3);
        let p = sim.jump_probability();
        let expected = p / 1e-3;
        let se = (steps * p * (1.0 - p)).sqrt() / (steps * 1e-3);
        assert!((rate - expected).abs() < 3.0 * se, "{rate} vs {expected} ± {se}");
        // and p ≈ Λ_ε dt
        assert!((expected - k.with_cutoff(0.05).unwrap().tail_mass()).abs() / expected < 0.05);
    }

    #[test]
    fn batch_is_worker_independent() {
        let ball = make_ball(vec![0.0; 2], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(2), scheme(1e-2)).unwrap();
        let mut cfg = BatchConfig {
            seed: 5,
            chunk_size: 64,
            workers: 1,
        };
        let a = sim.simulate_exit_batch(&[0.1, 0.1], 500, &cfg).unwrap();
        cfg.workers = 4;
        let b = sim.simulate_exit_batch(&[0.1, 0.1], 500, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(sim.simulate_exit_batch(&[0.1, 0.1], 0, &cfg).unwrap().is_empty());
    }

    #[test]
    fn two_seeds_agree_on_mean_exit_time() {
        let ball = make_ball(vec![0.0; 3], 1.0).unwrap();
        let sim = Simulator::new(&ball, &JumpKernel::zero(3), scheme(2e-3)).unwrap();
        let mean = |seed| {
            let mut m = Moments::default();
            for r in sim
                .simulate_exit_batch(&[0.0; 3], 4000, &BatchConfig::default().with_seed(seed))
                .unwrap()
            {
                m.push(r.exit_time);
            }
            m
        };
        let (a, b) = (mean(1), mean(2));
        let pooled = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        assert!((a.mean() - b.mean()).abs() < 4.0 * pooled);
    }
}
