//! Complete Bernstein functions `φ(λ) = bλ + ψ(λ)` with a completely
//! monotone Lévy density and zero killing.

use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_half_line, Quad, QuadOptions};

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The Lévy density `μ` of a Bernstein function.
#[derive(Clone)]
pub enum LevyDensity {
    /// `μ ≡ 0`; the subordinator is pure drift.
    Zero,
    /// `μ(t) = a^α (α/2)/Γ(1-α/2) · t^{-1-α/2}`, so that `ψ(λ) = a^α λ^{α/2}`.
    Stable { alpha: f64, a: f64 },
    /// `μ(t) = t^{-1} e^{-t}`, `ψ(λ) = log(1 + λ)`.
    Gamma,
    Sum(Vec<LevyDensity>),
    /// `μ(t)·1{t < cutoff}`. Not completely monotone; used to exercise the
    /// growth-condition check.
    Truncated { inner: Box<LevyDensity>, cutoff: f64 },
    Custom {
        name: String,
        density: DensityFn,
        closed_form_psi: Option<DensityFn>,
    },
}

impl fmt::Debug for LevyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevyDensity::Zero => write!(f, "Zero"),
            LevyDensity::Stable { alpha, a } => write!(f, "Stable(alpha={alpha}, a={a})"),
            LevyDensity::Gamma => write!(f, "Gamma"),
            LevyDensity::Sum(v) => f.debug_list().entries(v).finish(),
            LevyDensity::Truncated { inner, cutoff } => write!(f, "Truncated({inner:?}, {cutoff})"),
            LevyDensity::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl LevyDensity {
    fn stable_prefactor(alpha: f64, a: f64) -> f64 {
        let beta = 0.5 * alpha;
        a.powf(alpha) * beta / gamma(1.0 - beta)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            LevyDensity::Zero => 0.0,
            LevyDensity::Stable { alpha, a } => Self::stable_prefactor(*alpha, *a) * t.powf(-1.0 - 0.5 * alpha),
            LevyDensity::Gamma => (-t).exp() / t,
            LevyDensity::Sum(parts) => parts.iter().map(|p| p.eval(t)).sum(),
            LevyDensity::Truncated { inner, cutoff } => {
                if t < *cutoff {
                    inner.eval(t)
                } else {
                    0.0
                }
            }
            LevyDensity::Custom { density, .. } => density(t),
        }
    }

    /// `ln μ(t)`, accurate where `μ(t)` itself would underflow.
    pub fn ln_eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match self {
            LevyDensity::Zero => f64::NEG_INFINITY,
            LevyDensity::Stable { alpha, a } => {
                let beta = 0.5 * alpha;
                alpha * a.ln() + beta.ln() - ln_gamma(1.0 - beta) - (1.0 + beta) * t.ln()
            }
            LevyDensity::Gamma => -t.ln() - t,
            LevyDensity::Sum(parts) => log_sum_exp(parts.iter().map(|p| p.ln_eval(t))),
            LevyDensity::Truncated { inner, cutoff } => {
                if t < *cutoff {
                    inner.ln_eval(t)
                } else {
                    f64::NEG_INFINITY
                }
            }
            LevyDensity::Custom { density, .. } => density(t).ln(),
        }
    }

    pub fn closed_form_psi(&self, lambda: f64) -> Option<f64> {
        match self {
            LevyDensity::Zero => Some(0.0),
            LevyDensity::Stable { alpha, a } => Some(a.powf(*alpha) * lambda.powf(0.5 * alpha)),
            LevyDensity::Gamma => Some(lambda.ln_1p()),
            LevyDensity::Sum(parts) => parts.iter().map(|p| p.closed_form_psi(lambda)).sum(),
            LevyDensity::Truncated { .. } => None,
            LevyDensity::Custom { closed_form_psi, .. } => closed_form_psi.as_ref().map(|f| f(lambda)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevyDensity::Zero => true,
            LevyDensity::Sum(parts) => parts.iter().all(|p| p.is_zero()),
            LevyDensity::Truncated { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }

    fn spec(&self) -> String {
        match self {
            LevyDensity::Zero => "pure_bm".into(),
            LevyDensity::Stable { alpha, a } => format!("stable:alpha={alpha},a={a}"),
            LevyDensity::Gamma => "gamma".into(),
            LevyDensity::Sum(parts) => {
                let inner: Vec<String> = parts.iter().map(|p| p.spec()).collect();
                format!("sum:[{}]", inner.join(";"))
            }
            LevyDensity::Truncated { inner, cutoff } => format!("truncated:cutoff={cutoff}:{}", inner.spec()),
            LevyDensity::Custom { name, .. } => name.clone(),
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A Bernstein function `φ(λ) = drift·λ + ∫(1 - e^{-λt}) μ(t) dt`.
#[derive(Clone, Debug)]
pub struct BernsteinFunction {
    drift: f64,
    density: LevyDensity,
    name: String,
}

impl BernsteinFunction {
    pub fn new(drift: f64, density: LevyDensity) -> Result<Self> {
        if !(drift >= 0.0 && drift.is_finite()) {
            return Err(Error::invalid(format!("drift must be a finite nonnegative number, got {drift}")));
        }
        validate_density(&density)?;
        let name = density.spec();
        Ok(Self { drift, density, name })
    }

    /// `φ(λ) = λ + a^α λ^{α/2}`.
    pub fn stable(alpha: f64, a: f64) -> Result<Self> {
        Self::new(1.0, LevyDensity::Stable { alpha, a })
    }

    /// `φ(λ) = λ + log(1 + λ)`.
    pub fn gamma() -> Self {
        Self::new(1.0, LevyDensity::Gamma).expect("gamma family is valid")
    }

    /// `φ(λ) = λ`: Brownian motion baseline.
    pub fn pure_bm() -> Self {
        Self::new(1.0, LevyDensity::Zero).expect("zero density is valid")
    }

    pub fn custom(
        name: impl Into<String>,
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        closed_form_psi: Option<DensityFn>,
    ) -> Result<Self> {
        Self::new(
            1.0,
            LevyDensity::Custom {
                name: name.into(),
                density: Arc::new(density),
                closed_form_psi,
            },
        )
    }

    /// Same function with the Lévy density cut off at `t ≥ cutoff`.
    pub fn truncated(&self, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) {
            return Err(Error::invalid("truncation cutoff must be positive"));
        }
        Self::new(
            self.drift,
            LevyDensity::Truncated {
                inner: Box::new(self.density.clone()),
                cutoff,
            },
        )
    }

    pub fn with_drift(mut self, drift: f64) -> Result<Self> {
        if !(drift >= 0.0 && drift.is_finite()) {
            return Err(Error::invalid("drift must be nonnegative"));
        }
        self.drift = drift;
        Ok(self)
    }

    /// Parse a family spec such as `stable:alpha=0.5,a=1`, `gamma`,
    /// `pure_bm` or `sum:[stable:alpha=1,a=1;gamma]`.
    pub fn parse(spec: &str) -> Result<Self> {
        Self::new(1.0, parse_density(spec.trim())?)
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn density(&self) -> &LevyDensity {
        &self.density
    }

    pub fn levy_density(&self, t: f64) -> f64 {
        self.density.eval(t)
    }

    pub fn ln_levy_density(&self, t: f64) -> f64 {
        self.density.ln_eval(t)
    }

    pub fn is_pure_drift(&self) -> bool {
        self.density.is_zero()
    }

    /// `ψ(λ) = ∫(1 - e^{-λt}) μ(t) dt` by adaptive quadrature split at
    /// `t = 1/λ` and `t = 1`.
    pub fn psi_quadrature(&self, lambda: f64) -> Result<Quad> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if self.density.is_zero() {
            return Ok(Quad { value: 0.0, error: 0.0 });
        }
        let d = &self.density;
        // log space: near t = 0 the density can overflow before 1 - e^{-λt} vanishes
        let integrand = |t: f64| (d.ln_eval(t) + (-(-lambda * t).exp_m1()).ln()).exp();
        integrate_half_line(integrand, &[1.0 / lambda, 1.0], QuadOptions::default())
    }

    pub fn closed_form_psi(&self, lambda: f64) -> Option<f64> {
        self.density.closed_form_psi(lambda)
    }

    /// `φ(λ)` evaluated through quadrature of the Lévy density.
    pub fn phi_eval(&self, lambda: f64) -> Result<f64> {
        Ok(self.drift * lambda + self.psi_quadrature(lambda)?.value)
    }

    /// `φ(λ)` from the closed form when one is known.
    pub fn phi_closed_form(&self, lambda: f64) -> Option<f64> {
        self.closed_form_psi(lambda).map(|p| self.drift * lambda + p)
    }

    /// Empirical constant in `μ(r) ≤ c μ(2r)` for `r` on a log grid over
    /// `[K·1e-6, K]`.
    pub fn check_growth_condition(&self, k: f64, grid_size: usize) -> Result<f64> {
        if !(k > 0.0) || grid_size < 2 {
            return Err(Error::invalid("growth check needs K > 0 and at least two grid points"));
        }
        let lo = (k * 1e-6).ln();
        let hi = k.ln();
        let mut sup: f64 = 0.0;
        for i in 0..grid_size {
            let r = (lo + (hi - lo) * i as f64 / (grid_size - 1) as f64).exp();
            let num = self.density.ln_eval(r);
            let den = self.density.ln_eval(2.0 * r);
            if num == f64::NEG_INFINITY {
                continue;
            }
            if den == f64::NEG_INFINITY {
                return Err(Error::GrowthViolation { r });
            }
            sup = sup.max((num - den).exp());
        }
        Ok(sup)
    }

    /// `∫(1 ∧ t) μ(t) dt`, rejecting densities for which it diverges.
    pub fn levy_tail_mass(&self) -> Result<f64> {
        if self.density.is_zero() {
            return Ok(0.0);
        }
        let d = &self.density;
        let near = |t: f64| t * d.eval(t);
        let far = |t: f64| d.eval(t);
        if blocks_diverge(&near, |k| (10f64.powi(-4 * (k + 1)), 10f64.powi(-4 * k)))? {
            return Err(Error::Divergent { endpoint: "0" });
        }
        if blocks_diverge(&far, |k| (10f64.powi(4 * k), 10f64.powi(4 * (k + 1))))? {
            return Err(Error::Divergent { endpoint: "infinity" });
        }
        let q = integrate_half_line(|t: f64| t.min(1.0) * d.eval(t), &[1.0], QuadOptions::with_tol(1e-12, 1e-9))?;
        Ok(q.value)
    }

    /// Complete-monotonicity proxy on a grid: `μ ≥ 0`, nonincreasing, and
    /// convex (first divided differences nondecreasing).
    pub fn satisfies_monotone_proxy(&self, grid: &[f64]) -> bool {
        let vals: Vec<f64> = grid.iter().map(|&t| self.levy_density(t)).collect();
        if vals.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return false;
        }
        let tol = |a: f64, b: f64| 1e-12 * (a.abs() + b.abs());
        for w in vals.windows(2) {
            if w[1] > w[0] + tol(w[0], w[1]) {
                return false;
            }
        }
        let slopes: Vec<f64> = grid
            .windows(2)
            .zip(vals.windows(2))
            .map(|(t, v)| (v[1] - v[0]) / (t[1] - t[0]))
            .collect();
        slopes.windows(2).all(|s| s[1] >= s[0] - tol(s[0], s[1]))
    }
}

/// Divergence test over geometric blocks: the block integrals of a
/// convergent integrand must eventually shrink.
fn blocks_diverge<F: Fn(f64) -> f64>(f: &F, block: impl Fn(i32) -> (f64, f64)) -> Result<bool> {
    let opts = QuadOptions::with_tol(0.0, 1e-8);
    let mut prev: Option<f64> = None;
    let mut growing = 0;
    for k in 1..6 {
        let (a, b) = block(k);
        // integrate in log space: ∫ f(t) dt = ∫ f(e^s) e^s ds
        let q = crate::quadrature::integrate(|s: f64| {
            let t = s.exp();
            f(t) * t
        }, a.ln(), b.ln(), opts)?;
        if let Some(p) = prev {
            if q.value > 0.0 && q.value >= p * (1.0 - 1e-6) {
                growing += 1;
            }
        }
        prev = Some(q.value);
    }
    Ok(growing >= 3)
}

fn validate_density(d: &LevyDensity) -> Result<()> {
    match d {
        LevyDensity::Stable { alpha, a } => {
            if !(*alpha > 0.0 && *alpha < 2.0) {
                return Err(Error::invalid(format!("stable index alpha must lie in (0, 2), got {alpha}")));
            }
            if !(*a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("stable weight a must be positive, got {a}")));
            }
        }
        LevyDensity::Sum(parts) => {
            for p in parts {
                validate_density(p)?;
            }
        }
        LevyDensity::Truncated { inner, cutoff } => {
            if !(*cutoff > 0.0) {
                return Err(Error::invalid("truncation cutoff must be positive"));
            }
            validate_density(inner)?;
        }
        _ => {}
    }
    Ok(())
}

fn parse_params(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in '{p}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("not a number: '{v}'")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn parse_density(spec: &str) -> Result<LevyDensity> {
    let (head, rest) = match spec.split_once(':') {
        Some((h, r)) => (h.trim(), r.trim()),
        None => (spec, ""),
    };
    match head {
        "pure_bm" | "bm" => Ok(LevyDensity::Zero),
        "gamma" => Ok(LevyDensity::Gamma),
        "stable" => {
            let mut alpha = None;
            let mut a = 1.0;
            for (k, v) in parse_params(rest)? {
                match k.as_str() {
                    "alpha" => alpha = Some(v),
                    "a" => a = v,
                    other => return Err(Error::Config(format!("unknown stable parameter '{other}'"))),
                }
            }
            let alpha = alpha.ok_or_else(|| Error::Config("stable family needs alpha".into()))?;
            Ok(LevyDensity::Stable { alpha, a })
        }
        "sum" => {
            let inner = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| Error::Config(format!("sum spec must be 'sum:[a;b;...]', got '{spec}'")))?;
            let parts = split_top_level(inner)
                .into_iter()
                .map(parse_density)
                .collect::<Result<Vec<_>>>()?;
            if parts.is_empty() {
                return Err(Error::Config("empty sum".into()));
            }
            Ok(LevyDensity::Sum(parts))
        }
        other => Err(Error::Config(format!("unknown Bernstein family '{other}'"))),
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ';' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() {
        out.push(last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_phi_at_four_is_six() {
        let f = BernsteinFunction::stable(1.0, 1.0).unwrap();
        assert!((f.phi_eval(4.0).unwrap() - 6.0).abs() < 1e-9);
        assert_eq!(f.phi_closed_form(4.0), Some(6.0));
    }

    #[test]
    fn pure_bm_phi_is_identity() {
        let f = BernsteinFunction::pure_bm();
        assert_eq!(f.phi_eval(7.0).unwrap(), 7.0);
    }

    #[test]
    fn gamma_phi_at_one() {
        let f = BernsteinFunction::gamma();
        let v = f.phi_eval(1.0).unwrap();
        let exact = 1.0 + 2f64.ln();
        assert!(((v - exact) / exact).abs() < 1e-8, "{v}");
    }

    #[test]
    fn phi_rejects_nonpositive_lambda() {
        assert!(BernsteinFunction::gamma().phi_eval(0.0).is_err());
        assert!(BernsteinFunction::gamma().phi_eval(-1.0).is_err());
    }

    #[test]
    fn growth_constant_of_stable_is_power_of_two() {
        // μ(t) ∝ t^{-1-α/2}  ⇒  μ(r)/μ(2r) = 2^{1+α/2}
        for alpha in [0.5, 1.0, 1.5] {
            let f = BernsteinFunction::stable(alpha, 1.0).unwrap();
            let expected = 2f64.powf(1.0 + 0.5 * alpha);
            let c1 = f.check_growth_condition(1.0, 50).unwrap();
            let c2 = f.check_growth_condition(37.0, 50).unwrap();
            assert!((c1 - expected).abs() < 1e-12);
            assert!((c1 - c2).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_constant_of_gamma_is_two_e() {
        let c = BernsteinFunction::gamma().check_growth_condition(1.0, 200).unwrap();
        assert!((c - 2.0 * std::f64::consts::E).abs() < 1e-12, "{c}");
    }

    #[test]
    fn truncated_density_violates_growth() {
        let f = BernsteinFunction::gamma().truncated(0.5).unwrap();
        match f.check_growth_condition(1.0, 400) {
            Err(Error::GrowthViolation { r }) => assert!(r >= 0.25 && r < 0.5, "{r}"),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn stable_tail_mass_matches_antiderivative() {
        // ∫_0^1 t·C t^{-1-β} + ∫_1^∞ C t^{-1-β} = C (1/(1-β) + 1/β)
        let alpha: f64 = 0.5;
        let beta = alpha / 2.0;
        let c = beta / gamma(1.0 - beta);
        let exact = c * (1.0 / (1.0 - beta) + 1.0 / beta);
        let m = BernsteinFunction::stable(alpha, 1.0).unwrap().levy_tail_mass().unwrap();
        assert!(((m - exact) / exact).abs() < 1e-8, "{m} vs {exact}");
    }

    #[test]
    fn zero_density_has_zero_tail_mass() {
        assert_eq!(BernsteinFunction::pure_bm().levy_tail_mass().unwrap(), 0.0);
    }

    #[test]
    fn inverse_square_density_is_rejected_at_zero() {
        let f = BernsteinFunction::custom("t^-2", |t| t.powi(-2), None).unwrap();
        assert!(matches!(f.levy_tail_mass(), Err(Error::Divergent { endpoint: "0" })));
    }

    #[test]
    fn slowly_decaying_density_is_rejected_at_infinity() {
        let f = BernsteinFunction::custom("1/t", |t| 1.0 / t, None).unwrap();
        assert!(matches!(f.levy_tail_mass(), Err(Error::Divergent { endpoint: "infinity" })));
    }

    #[test]
    fn parse_specs() {
        let f = BernsteinFunction::parse("stable:alpha=0.5,a=2").unwrap();
        assert!(matches!(f.density(), LevyDensity::Stable { alpha, a } if *alpha == 0.5 && *a == 2.0));
        assert!(BernsteinFunction::parse("gamma").is_ok());
        assert!(BernsteinFunction::parse("pure_bm").unwrap().is_pure_drift());
        let s = BernsteinFunction::parse("sum:[stable:alpha=1,a=1;gamma]").unwrap();
        let lam: f64 = 3.0;
        let expected = lam + lam.sqrt() + (1.0 + lam).ln();
        assert!((s.phi_closed_form(lam).unwrap() - expected).abs() < 1e-12);
        assert!(BernsteinFunction::parse("stable:alpha=2.5").is_err());
        assert!(BernsteinFunction::parse("cauchy").is_err());
        assert!(BernsteinFunction::parse("stable:alpha=1,b=1").is_err());
    }

    #[test]
    fn builtins_pass_monotone_proxy() {
        let grid: Vec<f64> = (0..200).map(|i| 10f64.powf(-4.0 + 6.0 * i as f64 / 199.0)).collect();
        for f in [BernsteinFunction::gamma(), BernsteinFunction::stable(0.7, 1.3).unwrap()] {
            assert!(f.satisfies_monotone_proxy(&grid));
        }
        let bumpy = BernsteinFunction::custom("bump", |t: f64| (-((t - 1.0) * (t - 1.0))).exp(), None).unwrap();
        assert!(!bumpy.satisfies_monotone_proxy(&grid));
    }

    proptest::proptest! {
        #[test]
        fn stable_psi_quadrature_matches_closed_form(alpha in 0.1f64..1.9, lambda in 1e-2f64..1e2) {
            let f = BernsteinFunction::stable(alpha, 1.0).unwrap();
            let q = f.psi_quadrature(lambda).unwrap().value;
            let c = f.closed_form_psi(lambda).unwrap();
            proptest::prop_assert!(((q - c) / c).abs() < 1e-7, "alpha={} lambda={}: {} vs {}", alpha, lambda, q, c);
        }

        #[test]
        fn phi_is_increasing_and_subadditive(a in 1e-2f64..50.0, b in 1e-2f64..50.0) {
            let f = BernsteinFunction::gamma();
            let (pa, pb, pab) = (f.phi_eval(a).unwrap(), f.phi_eval(b).unwrap(), f.phi_eval(a + b).unwrap());
            proptest::prop_assert!(pab > pa.max(pb));
            proptest::prop_assert!(pab <= (pa + pb) * (1.0 + 1e-12));
        }
    }
}
