//! Smooth bounded test functions with closed-form Laplacians, used to probe
//! the generator and to run Dynkin checks.

/// A bounded `C²` function on `R^d`.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn laplacian(&self, x: &[f64]) -> f64;
    /// Typical length over which the function varies.
    fn length_scale(&self) -> f64;
    /// Radius beyond which every sphere around `x` lies where the function
    /// equals [`TestFunction::value_at_infinity`].
    fn reach_from(&self, x: &[f64]) -> f64;
    fn value_at_infinity(&self) -> f64;
    /// Centre, for functions of `|x - c|` only.
    fn radial_center(&self) -> Option<&[f64]> {
        None
    }
    /// Value as a function of the distance to the centre.
    fn radial_profile(&self, _rho: f64) -> f64 {
        f64::NAN
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `f ≡ c`.
#[derive(Debug, Clone)]
pub struct Constant {
    center: Vec<f64>,
    c: f64,
}

impl Constant {
    pub fn new(dim: usize, c: f64) -> Self {
        Self {
            center: vec![0.0; dim],
            c,
        }
    }
}

impl TestFunction for Constant {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.c
    }
    fn laplacian(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn length_scale(&self) -> f64 {
        1.0
    }
    fn reach_from(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn value_at_infinity(&self) -> f64 {
        self.c
    }
    fn radial_center(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
    fn radial_profile(&self, _rho: f64) -> f64 {
        self.c
    }
}

/// `h · exp(-|x - c|²/w²)`.
#[derive(Debug, Clone)]
pub struct GaussianBump {
    center: Vec<f64>,
    width: f64,
    height: f64,
}

impl GaussianBump {
    pub fn new(center: Vec<f64>, width: f64, height: f64) -> Self {
        assert!(width > 0.0, "bump width must be positive");
        Self { center, width, height }
    }

    /// Same function, hidden behind the generic (non-radial) interface.
    pub fn as_non_radial(&self) -> NonRadial<Self> {
        NonRadial(self.clone())
    }
}

impl TestFunction for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.radial_profile(dist2(x, &self.center).sqrt())
    }
    fn laplacian(&self, x: &[f64]) -> f64 {
        let s = dist2(x, &self.center);
        let w2 = self.width * self.width;
        let d = self.dim() as f64;
        self.height * (-s / w2).exp() * (4.0 * s / (w2 * w2) - 2.0 * d / w2)
    }
    fn length_scale(&self) -> f64 {
        self.width
    }
    fn reach_from(&self, x: &[f64]) -> f64 {
        dist2(x, &self.center).sqrt() + 6.5 * self.width
    }
    fn value_at_infinity(&self) -> f64 {
        0.0
    }
    fn radial_center(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
    fn radial_profile(&self, rho: f64) -> f64 {
        self.height * (-(rho * rho) / (self.width * self.width)).exp()
    }
}

/// `(1 - |x - c|²/R²)³` inside the ball of radius `R`, zero outside.
#[derive(Debug, Clone)]
pub struct CompactBump {
    center: Vec<f64>,
    radius: f64,
}

impl CompactBump {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        Self { center, radius }
    }
}

impl TestFunction for CompactBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.radial_profile(dist2(x, &self.center).sqrt())
    }
    fn laplacian(&self, x: &[f64]) -> f64 {
        let s = dist2(x, &self.center);
        let r2 = self.radius * self.radius;
        if s >= r2 {
            return 0.0;
        }
        let q = 1.0 - s / r2;
        let g1 = -3.0 / r2 * q * q;
        let g2 = 6.0 / (r2 * r2) * q;
        4.0 * s * g2 + 2.0 * self.dim() as f64 * g1
    }
    fn length_scale(&self) -> f64 {
        self.radius
    }
    fn reach_from(&self, x: &[f64]) -> f64 {
        dist2(x, &self.center).sqrt() + self.radius
    }
    fn value_at_infinity(&self) -> f64 {
        0.0
    }
    fn radial_center(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
    fn radial_profile(&self, rho: f64) -> f64 {
        let q = 1.0 - rho * rho / (self.radius * self.radius);
        if q <= 0.0 {
            0.0
        } else {
            q * q * q
        }
    }
}

/// `φ(|x - c|²)` with `φ(s) = s` for `s ≤ s_a`, constant for `s ≥ s_b`, and
/// `φ'` falling from 1 to 0 along a smoothstep in between.
///
/// The plain quadratic `|x|²` is not in the domain of a jump generator whose
/// kernel has no second moment, so the cap is required.
#[derive(Debug, Clone)]
pub struct CappedQuadratic {
    center: Vec<f64>,
    s_a: f64,
    s_b: f64,
}

impl CappedQuadratic {
    pub fn new(center: Vec<f64>, s_a: f64, s_b: f64) -> Self {
        assert!(0.0 < s_a && s_a < s_b, "need 0 < s_a < s_b");
        Self { center, s_a, s_b }
    }

    fn phi(&self, s: f64) -> f64 {
        if s <= self.s_a {
            return s;
        }
        let w = self.s_b - self.s_a;
        let t = ((s - self.s_a) / w).min(1.0);
        self.s_a + w * (t - t * t * t + 0.5 * t * t * t * t)
    }

    fn phi_derivs(&self, s: f64) -> (f64, f64) {
        if s <= self.s_a {
            return (1.0, 0.0);
        }
        if s >= self.s_b {
            return (0.0, 0.0);
        }
        let w = self.s_b - self.s_a;
        let t = (s - self.s_a) / w;
        (1.0 - t * t * (3.0 - 2.0 * t), -(6.0 * t - 6.0 * t * t) / w)
    }
}

impl TestFunction for CappedQuadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.phi(dist2(x, &self.center))
    }
    fn laplacian(&self, x: &[f64]) -> f64 {
        let s = dist2(x, &self.center);
        let (p1, p2) = self.phi_derivs(s);
        4.0 * s * p2 + 2.0 * self.dim() as f64 * p1
    }
    fn length_scale(&self) -> f64 {
        self.s_a.sqrt()
    }
    fn reach_from(&self, x: &[f64]) -> f64 {
        dist2(x, &self.center).sqrt() + self.s_b.sqrt()
    }
    fn value_at_infinity(&self) -> f64 {
        self.phi(self.s_b)
    }
    fn radial_center(&self) -> Option<&[f64]> {
        Some(&self.center)
    }
    fn radial_profile(&self, rho: f64) -> f64 {
        self.phi(rho * rho)
    }
}

/// Wrapper that hides the radial structure of a function.
#[derive(Debug, Clone)]
pub struct NonRadial<T>(pub T);

impl<T: TestFunction> TestFunction for NonRadial<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn laplacian(&self, x: &[f64]) -> f64 {
        self.0.laplacian(x)
    }
    fn length_scale(&self) -> f64 {
        self.0.length_scale()
    }
    fn reach_from(&self, x: &[f64]) -> f64 {
        self.0.reach_from(x)
    }
    fn value_at_infinity(&self) -> f64 {
        self.0.value_at_infinity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_laplacian(f: &dyn TestFunction, x: &[f64]) -> f64 {
        let h = 1e-4;
        let mut acc = 0.0;
        let f0 = f.value(x);
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            acc += (f.value(&p) - 2.0 * f0 + f.value(&m)) / (h * h);
        }
        acc
    }

    #[test]
    fn laplacians_match_finite_differences() {
        let fs: Vec<Box<dyn TestFunction>> = vec![
            Box::new(GaussianBump::new(vec![0.1, 0.2, 0.0], 0.7, 2.0)),
            Box::new(CompactBump::new(vec![0.0, 0.0, 0.0], 1.3)),
            Box::new(CappedQuadratic::new(vec![0.0, 0.0, 0.0], 0.5, 2.0)),
        ];
        for f in &fs {
            for x in [[0.3, -0.2, 0.4], [0.9, 0.1, -0.3], [0.05, 0.0, 0.0]] {
                let a = f.laplacian(&x);
                let n = numeric_laplacian(f.as_ref(), &x);
                assert!((a - n).abs() < 1e-5 * (1.0 + a.abs()), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn capped_quadratic_is_quadratic_near_centre_and_flat_far_away() {
        let q = CappedQuadratic::new(vec![0.0, 0.0], 1.0, 4.0);
        assert_eq!(q.value(&[0.5, 0.5]), 0.5);
        assert_eq!(q.laplacian(&[0.5, 0.5]), 4.0);
        assert_eq!(q.value(&[3.0, 0.0]), q.value_at_infinity());
        assert_eq!(q.value_at_infinity(), 2.5);
    }
}
