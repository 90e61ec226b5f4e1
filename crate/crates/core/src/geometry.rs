//! Domains described by signed-distance oracles: positive inside (equal to
//! the distance to the boundary), negative outside.

use crate::error::{Error, Result};

/// `C^{1,1}` characteristics: uniform ball radius `r ≤ 1` and Lipschitz
/// constant `lambda ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Characteristics {
    pub r: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SlitBox {
    pub side: f64,
    pub thickness: f64,
    pub reach: f64,
    pub smoothing: f64,
}

#[derive(Debug, Clone)]
enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    HalfSpace { normal: Vec<f64>, offset: f64 },
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    Slit(SlitBox),
    Intersection(Box<Domain>, Box<Domain>),
}

#[derive(Debug, Clone)]
pub struct Domain {
    shape: Shape,
    dim: usize,
    name: String,
    characteristics: Option<Characteristics>,
    bbox: (Vec<f64>, Vec<f64>),
    bounded: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Signed distance of an axis box, positive *outside* (the usual SDF sign).
fn box_sdf_outside(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    box_sdf_outside_with(x, |i| (lo[i], hi[i]))
}

fn box_sdf_outside_with(x: &[f64], bounds: impl Fn(usize) -> (f64, f64)) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for i in 0..x.len() {
        let (lo, hi) = bounds(i);
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let q = (x[i] - c).abs() - h;
        if q > 0.0 {
            outside += q * q;
        }
        inside = inside.max(q.min(0.0));
    }
    outside.sqrt() + inside.min(0.0)
}

pub fn make_ball(center: Vec<f64>, radius: f64) -> Result<Domain> {
    if !(radius > 0.0) || center.is_empty() {
        return Err(Error::Geometry(format!("ball needs a positive radius, got {radius}")));
    }
    let dim = center.len();
    let lo = center.iter().map(|c| c - radius).collect();
    let hi = center.iter().map(|c| c + radius).collect();
    Ok(Domain {
        name: format!("ball(r={radius})"),
        characteristics: Some(Characteristics {
            r: radius.min(1.0),
            lambda: 1.0,
        }),
        shape: Shape::Ball { center, radius },
        dim,
        bbox: (lo, hi),
        bounded: true,
    })
}

/// `{x : ⟨x, normal⟩ > offset}`. Simulations are capped at `±cap` around
/// the origin.
pub fn make_halfspace(normal: Vec<f64>, offset: f64, cap: f64) -> Result<Domain> {
    if (norm(&normal) - 1.0).abs() > 1e-12 {
        return Err(Error::Geometry("half-space normal must have unit length".into()));
    }
    let dim = normal.len();
    Ok(Domain {
        name: "halfspace".into(),
        characteristics: Some(Characteristics { r: 1.0, lambda: 1.0 }),
        shape: Shape::HalfSpace { normal, offset },
        dim,
        bbox: (vec![-cap; dim], vec![cap; dim]),
        bounded: false,
    })
}

pub fn make_axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Domain> {
    if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
        return Err(Error::Geometry("axis box needs lo < hi in every coordinate".into()));
    }
    Ok(Domain {
        name: "box".into(),
        dim: lo.len(),
        characteristics: None,
        bbox: (lo.clone(), hi.clone()),
        shape: Shape::AxisBox { lo, hi },
        bounded: true,
    })
}

/// `(-side, side)^d` minus the slab `(-side, reach]^{d-1} × [-thickness, 0]`,
/// with convex corners rounded at radius `smoothing`.
pub fn make_slit_box(dim: usize, side: f64, thickness: f64, reach: f64, smoothing: f64) -> Result<Domain> {
    if dim < 2 {
        return Err(Error::Geometry("slit box needs d ≥ 2".into()));
    }
    if !(thickness > 0.0 && thickness < side && reach > 0.0 && reach < side && smoothing >= 0.0) {
        return Err(Error::Geometry(format!(
            "slit box parameters out of range: side={side} thickness={thickness} reach={reach} smoothing={smoothing}"
        )));
    }
    if smoothing > 0.5 * thickness {
        return Err(Error::Geometry(format!(
            "smoothing {smoothing} exceeds half the slab thickness {thickness}"
        )));
    }
    Ok(Domain {
        name: format!("slitbox(side={side},thickness={thickness},reach={reach},smooth={smoothing})"),
        dim,
        characteristics: (smoothing > 0.0).then(|| Characteristics {
            r: smoothing.min(1.0),
            lambda: 1.0,
        }),
        bbox: (vec![-side; dim], vec![side; dim]),
        shape: Shape::Slit(SlitBox {
            side,
            thickness,
            reach,
            smoothing,
        }),
        bounded: true,
    })
}

impl SlitBox {
    fn signed_distance(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let rho = self.smoothing;
        let s = self.side;
        let t = self.thickness;
        // box, rounded: ρ − SDF of the box shrunk by ρ
        let in_box = rho - box_sdf_outside_with(x, |_| (-s + rho, s - rho));
        // slab, extended past the left walls and rounded by shrink-then-offset
        let far = 4.0 * s;
        let slab = |i: usize| {
            if i == d - 1 {
                (-t + rho, -rho)
            } else {
                (-far, self.reach - rho)
            }
        };
        let out_slab = box_sdf_outside_with(x, slab) - rho;
        let mut v = in_box.min(out_slab);
        if rho > 0.0 {
            // fillets where the slab faces meet the left walls
            let y = x[d - 1];
            for i in 0..d - 1 {
                let a = x[i] + s;
                if a >= rho {
                    continue;
                }
                let lateral_ok = (0..d - 1).all(|j| j == i || x[j] <= self.reach - rho);
                if !lateral_ok {
                    continue;
                }
                let b = if y > -0.5 * t { y } else { -t - y };
                if b < rho {
                    let c = rho - ((rho - a).powi(2) + (rho - b).powi(2)).sqrt();
                    v = v.min(c);
                }
            }
        }
        v
    }
}

impl Domain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn characteristics(&self) -> Option<Characteristics> {
        self.characteristics
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bbox.0, &self.bbox.1)
    }

    pub fn is_bounded(&self) -> bool {
        self.bounded
    }

    pub fn slit_box(&self) -> Option<&SlitBox> {
        match &self.shape {
            Shape::Slit(s) => Some(s),
            _ => None,
        }
    }

    pub fn ball(&self) -> Option<(&[f64], f64)> {
        match &self.shape {
            Shape::Ball { center, radius } => Some((center, *radius)),
            _ => None,
        }
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                radius - r
            }
            Shape::HalfSpace { normal, offset } => x.iter().zip(normal).map(|(a, n)| a * n).sum::<f64>() - offset,
            Shape::AxisBox { lo, hi } => -box_sdf_outside(x, lo, hi),
            Shape::Slit(s) => s.signed_distance(x),
            Shape::Intersection(a, b) => a.signed_distance(x).min(b.signed_distance(x)),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > 0.0
    }

    /// Whether `x` lies in the simulation bounding box.
    pub fn in_bounding_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bbox.0).zip(&self.bbox.1).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    /// Gradient of the signed distance (the inward unit normal on ∂D).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, .. } => {
                let v: Vec<f64> = x.iter().zip(center).map(|(a, c)| c - a).collect();
                let n = norm(&v);
                if n == 0.0 {
                    let mut e = vec![0.0; self.dim];
                    e[0] = 1.0;
                    e
                } else {
                    v.iter().map(|a| a / n).collect()
                }
            }
            Shape::HalfSpace { normal, .. } => normal.clone(),
            _ => {
                let h = 1e-7;
                let mut g = vec![0.0; self.dim];
                let mut p = x.to_vec();
                for i in 0..self.dim {
                    p[i] = x[i] + h;
                    let fp = self.signed_distance(&p);
                    p[i] = x[i] - h;
                    let fm = self.signed_distance(&p);
                    p[i] = x[i];
                    g[i] = (fp - fm) / (2.0 * h);
                }
                g
            }
        }
    }

    /// `x − sd(x)·∇sd(x)`, iterated for non-closed-form shapes.
    pub fn project_to_boundary(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let v: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let n = norm(&v);
                if n == 0.0 {
                    let mut p = center.clone();
                    p[0] += radius;
                    return p;
                }
                center.iter().zip(&v).map(|(c, a)| c + a * radius / n).collect()
            }
            _ => {
                let mut p = x.to_vec();
                for _ in 0..4 {
                    let s = self.signed_distance(&p);
                    if s.abs() < 1e-13 {
                        break;
                    }
                    let g = self.gradient(&p);
                    for (pi, gi) in p.iter_mut().zip(&g) {
                        *pi -= s * gi;
                    }
                }
                p
            }
        }
    }

    pub fn intersect(self, other: Domain) -> Result<Domain> {
        if self.dim != other.dim {
            return Err(Error::Geometry("intersection of domains of different dimensions".into()));
        }
        let lo = self.bbox.0.iter().zip(&other.bbox.0).map(|(a, b)| a.max(*b)).collect();
        let hi = self.bbox.1.iter().zip(&other.bbox.1).map(|(a, b)| a.min(*b)).collect();
        Ok(Domain {
            name: format!("{}∩{}", self.name, other.name),
            dim: self.dim,
            characteristics: None,
            bounded: self.bounded || other.bounded,
            bbox: (lo, hi),
            shape: Shape::Intersection(Box::new(self), Box::new(other)),
        })
    }

    /// Parse `ball:r=1[,center=a;b;c]`, `halfspace[:offset=0,cap=20]`,
    /// `box:lo=a;b,hi=c;d`, `slab:half_width=2,height=1`,
    /// `slitbox:side=4,thickness=0.25,reach=1.5,smooth=0.05`.
    pub fn parse(spec: &str, dim: usize) -> Result<Domain> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("domain parameter `{part}` is not key=value")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |kv: &std::collections::BTreeMap<String, String>, k: &str, default: Option<f64>| -> Result<f64> {
            match kv.get(k) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("domain parameter {k}={v} is not a number"))),
                None => default.ok_or_else(|| Error::Config(format!("domain `{kind}` needs `{k}`"))),
            }
        };
        let vector = |v: &str| -> Result<Vec<f64>> {
            let xs = v
                .split(';')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad vector `{v}`")))?;
            if xs.len() != dim {
                return Err(Error::Config(format!("vector `{v}` has {} entries, expected {dim}", xs.len())));
            }
            Ok(xs)
        };
        let allowed: &[&str] = match kind {
            "ball" => &["r", "center"],
            "halfspace" => &["offset", "cap"],
            "box" => &["lo", "hi"],
            "slab" => &["half_width", "height"],
            "slitbox" => &["side", "thickness", "reach", "smooth"],
            _ => return Err(Error::Config(format!("unknown domain kind `{kind}`"))),
        };
        if let Some(k) = kv.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown parameter `{k}` for domain `{kind}`")));
        }
        match kind {
            "ball" => {
                let center = match kv.get("center") {
                    Some(c) => vector(c)?,
                    None => vec![0.0; dim],
                };
                make_ball(center, num(&kv, "r", Some(1.0))?)
            }
            "halfspace" => {
                let mut n = vec![0.0; dim];
                n[dim - 1] = 1.0;
                make_halfspace(n, num(&kv, "offset", Some(0.0))?, num(&kv, "cap", Some(20.0))?)
            }
            "box" => make_axis_box(
                vector(kv.get("lo").ok_or_else(|| Error::Config("box needs lo".into()))?)?,
                vector(kv.get("hi").ok_or_else(|| Error::Config("box needs hi".into()))?)?,
            ),
            "slab" => {
                let w = num(&kv, "half_width", Some(2.0))?;
                let h = num(&kv, "height", Some(1.0))?;
                let mut lo = vec![-w; dim];
                let mut hi = vec![w; dim];
                lo[dim - 1] = 0.0;
                hi[dim - 1] = h;
                make_axis_box(lo, hi)
            }
            _ => make_slit_box(
                dim,
                num(&kv, "side", Some(100.0))?,
                num(&kv, "thickness", Some(0.5))?,
                num(&kv, "reach", Some(49.0))?,
                num(&kv, "smooth", Some(0.0))?,
            ),
        }
    }
}

/// Box `D_Q(r1, r2)` around a boundary point `Q`, in the local frame whose
/// last axis is the inward normal at `Q`.
#[derive(Debug, Clone)]
pub struct GraphBox {
    parent: Domain,
    q: Vec<f64>,
    normal: Vec<f64>,
    tangents: Vec<Vec<f64>>,
    pub r1: f64,
    pub r2: f64,
}

pub fn make_graph_box(parent: &Domain, q: &[f64], r1: f64, r2: f64) -> Result<GraphBox> {
    let ch = parent
        .characteristics()
        .ok_or_else(|| Error::Geometry("graph box needs a C^{1,1} parent domain".into()))?;
    if !(r1 > 0.0 && r2 > 0.0 && r1 <= ch.r && r2 <= ch.r) {
        return Err(Error::Geometry(format!("graph box heights must lie in (0, R={}]", ch.r)));
    }
    let sd = parent.signed_distance(q);
    if sd.abs() > 1e-9 {
        return Err(Error::Geometry(format!("Q is not on the boundary (signed distance {sd:e})")));
    }
    let g = parent.gradient(q);
    let n = norm(&g);
    let normal: Vec<f64> = g.iter().map(|a| a / n).collect();
    // Gram–Schmidt against the normal
    let d = parent.dim();
    let mut tangents: Vec<Vec<f64>> = Vec::new();
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        let mut v = e.clone();
        for b in std::iter::once(&normal).chain(tangents.iter()) {
            let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 && tangents.len() < d - 1 {
            tangents.push(v.iter().map(|a| a / nv).collect());
        }
    }
    Ok(GraphBox {
        parent: parent.clone(),
        q: q.to_vec(),
        normal,
        tangents,
        r1,
        r2,
    })
}

impl GraphBox {
    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    /// `(ỹ, y_d)` in the local frame at Q.
    pub fn local_coordinates(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let v: Vec<f64> = y.iter().zip(&self.q).map(|(a, b)| a - b).collect();
        let lateral = self
            .tangents
            .iter()
            .map(|t| t.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let h = self.normal.iter().zip(&v).map(|(a, b)| a * b).sum();
        (lateral, h)
    }

    /// Height of the boundary above the tangent plane at lateral offset `ỹ`.
    pub fn phi(&self, lateral: &[f64]) -> f64 {
        let base: Vec<f64> = (0..self.q.len())
            .map(|i| self.q[i] + self.tangents.iter().zip(lateral).map(|(t, l)| t[i] * l).sum::<f64>())
            .collect();
        let at = |h: f64| {
            let p: Vec<f64> = base.iter().zip(&self.normal).map(|(b, n)| b + h * n).collect();
            self.parent.signed_distance(&p)
        };
        // bisection for the sign change of sd along the normal
        let span = 2.0 * self.r1.max(self.r2);
        let (mut lo, mut hi) = (-span, span);
        if at(lo) > 0.0 || at(hi) <= 0.0 {
            return f64::NAN;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if at(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `ρ_Q(y) = y_d − φ_Q(ỹ)`.
    pub fn rho(&self, y: &[f64]) -> f64 {
        let (lat, h) = self.local_coordinates(y);
        h - self.phi(&lat)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let (lat, h) = self.local_coordinates(y);
        if norm(&lat) >= self.r2 || !self.parent.contains(y) {
            return false;
        }
        let rho = h - self.phi(&lat);
        rho > 0.0 && rho < self.r1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_slit(dim: usize) -> Domain {
        make_slit_box(dim, 100.0, 0.5, 49.0, 0.0).unwrap()
    }

    #[test]
    fn ball_distances() {
        let b = make_ball(vec![0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(b.signed_distance(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(b.signed_distance(&[1.5, 0.0, 0.0]), -0.5);
        let s = 1.0 / 3f64.sqrt();
        assert!(b.signed_distance(&[s, s, s]).abs() < 1e-15);
        assert_eq!(b.characteristics().unwrap(), Characteristics { r: 1.0, lambda: 1.0 });
    }

    #[test]
    fn halfspace_distances() {
        let h = Domain::parse("halfspace", 3).unwrap();
        assert_eq!(h.signed_distance(&[0.0, 0.0, 2.0]), 2.0);
        assert_eq!(h.signed_distance(&[5.0, -1.0, 0.0]), 0.0);
        assert_eq!(h.signed_distance(&[0.0, 0.0, -1.0]), -1.0);
        assert!(!h.is_bounded());
    }

    #[test]
    fn slit_box_membership() {
        let d = default_slit(3);
        let a = [0.0, 0.0, 0.2];
        assert!((d.signed_distance(&a) - 0.2).abs() < 1e-12);
        assert!(!d.contains(&[0.0, 0.0, -0.25]));
        assert!(d.contains(&[99.0, 99.0, -0.25]));
        assert!(make_slit_box(2, 4.0, 0.25, 1.5, 0.2).is_err());
    }

    #[test]
    fn projection_lands_on_boundary() {
        let b = make_ball(vec![0.1, -0.2], 0.7).unwrap();
        let h = Domain::parse("halfspace:offset=0.3", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            assert!(b.signed_distance(&b.project_to_boundary(&x)).abs() < 1e-12);
            assert!(h.signed_distance(&h.project_to_boundary(&x)).abs() < 1e-12);
        }
    }

    fn all_domains() -> Vec<Domain> {
        vec![
            make_ball(vec![0.0, 0.0], 1.0).unwrap(),
            Domain::parse("halfspace", 2).unwrap(),
            make_slit_box(2, 4.0, 0.25, 1.5, 0.05).unwrap(),
            make_slit_box(3, 4.0, 0.25, 1.5, 0.05).unwrap(),
            Domain::parse("slab:half_width=2,height=1", 3).unwrap(),
            make_slit_box(2, 4.0, 0.25, 1.5, 0.05)
                .unwrap()
                .intersect(make_ball(vec![0.0, 0.0], 0.2).unwrap())
                .unwrap(),
        ]
    }

    #[test]
    fn gradient_norm_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in all_domains() {
            let (lo, hi) = d.bounding_box();
            let (lo, hi) = (lo.to_vec(), hi.to_vec());
            let mut found = 0;
            while found < 1000 {
                let x: Vec<f64> = (0..d.dim()).map(|i| rng.gen_range(lo[i].max(-5.0)..hi[i].min(5.0))).collect();
                if !d.contains(&x) {
                    continue;
                }
                found += 1;
                let h = 1e-6;
                let mut g2 = 0.0;
                for i in 0..d.dim() {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[i] += h;
                    m[i] -= h;
                    let gi = (d.signed_distance(&p) - d.signed_distance(&m)) / (2.0 * h);
                    g2 += gi * gi;
                }
                assert!(g2.sqrt() <= 1.0 + 1e-6, "{} at {x:?}: |∇| = {}", d.name(), g2.sqrt());
            }
        }
    }

    #[test]
    fn smoothed_slit_box_has_interior_and_exterior_balls() {
        let rho = 0.05;
        let d = make_slit_box(2, 4.0, 0.25, 1.5, rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 200 {
            // sample near the slab and the left corners where the boundary bends
            let x = [rng.gen_range(-4.2..4.2), rng.gen_range(-0.6..0.4)];
            let q = d.project_to_boundary(&x);
            if d.signed_distance(&q).abs() > 1e-10 {
                continue;
            }
            let n = d.gradient(&q);
            let inner: Vec<f64> = q.iter().zip(&n).map(|(a, b)| a + rho * b).collect();
            let outer: Vec<f64> = q.iter().zip(&n).map(|(a, b)| a - rho * b).collect();
            assert!(d.signed_distance(&inner) >= rho - 1e-7, "interior ball fails at {q:?}");
            assert!(d.signed_distance(&outer) <= -rho + 1e-7, "exterior ball fails at {q:?}");
            checked += 1;
        }
    }

    #[test]
    fn graph_box_membership() {
        let b = make_ball(vec![0.0, 0.0], 1.0).unwrap();
        let gb = make_graph_box(&b, &[0.0, -1.0], 0.1, 0.1).unwrap();
        assert!(gb.contains(&[0.0, -0.95]));
        assert!(!gb.contains(&[0.0, -0.85]));
        assert!(!gb.contains(&[0.11, -0.95]));
        assert!(make_graph_box(&b, &[0.0, -0.9], 0.1, 0.1).is_err());
    }

    #[test]
    fn parse_rejects_unknown_keys() {
        assert!(Domain::parse("ball:r=1,radius=2", 2).is_err());
        assert!(Domain::parse("cube", 2).is_err());
        assert_eq!(Domain::parse("ball:r=0.5,center=1;2", 2).unwrap().signed_distance(&[1.0, 2.0]), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn signed_distance_is_one_lipschitz(
            x in proptest::collection::vec(-5.0f64..5.0, 2),
            y in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            for d in all_domains() {
                let lhs = (d.signed_distance(&x) - d.signed_distance(&y)).abs();
                let rhs = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
                if d.dim() == 2 {
                    proptest::prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12, "{}", d.name());
                }
            }
        }
    }
}
