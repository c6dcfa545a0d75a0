//! Closed-form stationary densities of the grazing-limit Fokker–Planck
//! equations, with quadrature-backed moments and CDFs and exact samplers.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::output::{fmt_f64, CsvMeta};
use crate::params::{CollisionParams, ModelKind, Regime};
use crate::quadrature::{integrate_half_line, integrate_real_line, Integral};

const QUAD_ABS_TOL: f64 = 1e-13;
const QUAD_REL_TOL: f64 = 1e-13;
const FAMILY_TOL: f64 = 1e-12;

/// One of the five closed-form stationary laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EquilibriumSpec {
    /// `c_λ (1 + λ² v²)^{-(3/2 + 1/(2λ²))}` on ℝ.
    GeneralizedStudent { lambda: f64 },
    /// Standard normal density on ℝ.
    Maxwellian,
    /// `(2/π)(1 + v²)^{-2}` on ℝ.
    GranularQuartic,
    /// `(μ-1)^μ/Γ(μ) · exp(-(μ-1)/v) v^{-1-μ}` on ℝ₊.
    InverseGammaPareto { mu: f64 },
    /// `exp(-1/(2v)) v^{-5/2} / sqrt(2π)` on ℝ₊.
    WealthExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    RealLine,
    HalfLine,
}

impl EquilibriumSpec {
    pub fn support(&self) -> Support {
        match self {
            EquilibriumSpec::GeneralizedStudent { .. }
            | EquilibriumSpec::Maxwellian
            | EquilibriumSpec::GranularQuartic => Support::RealLine,
            EquilibriumSpec::InverseGammaPareto { .. } | EquilibriumSpec::WealthExact => Support::HalfLine,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.support() {
            Support::RealLine => ModelKind::VelocityLine,
            Support::HalfLine => ModelKind::WealthHalfLine,
        }
    }

    /// Validates the parameters and precomputes the log normalization.
    pub fn build(&self) -> Result<Equilibrium> {
        let ln_norm = match *self {
            EquilibriumSpec::GeneralizedStudent { lambda } => {
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(Error::Domain(format!("generalized Student needs lambda > 0, got {lambda}")));
                }
                ln_normalization_constant(lambda)
            }
            EquilibriumSpec::Maxwellian => -0.5 * (2.0 * PI).ln(),
            EquilibriumSpec::GranularQuartic => (2.0 / PI).ln(),
            EquilibriumSpec::InverseGammaPareto { mu } => {
                if !(mu.is_finite() && mu > 1.0) {
                    return Err(Error::Domain(format!("inverse-gamma Pareto law needs mu > 1, got {mu}")));
                }
                mu * (mu - 1.0).ln() - ln_gamma(mu)
            }
            EquilibriumSpec::WealthExact => -0.5 * (2.0 * PI).ln(),
        };
        Ok(Equilibrium { spec: *self, ln_norm })
    }

    /// Pointwise density; zero outside the support.
    pub fn density(&self, v: f64) -> Result<f64> {
        Ok(self.build()?.density(v))
    }

    /// Stationary law of the grazing limit associated with `params`, if one
    /// of the five families applies.
    ///
    /// Velocity: conservative energy, `p = 1`, or `p < 1 < p² + q²` give the
    /// Maxwellian; `p + q = 1` gives the quartic law; otherwise
    /// `λ = (p - 1)/q` selects the generalized Student law with `|λ|`.
    /// Wealth: `λ = (p - 1)²/q` selects `μ = 1 + 2/λ`.
    pub fn limit_family(params: &CollisionParams) -> Option<EquilibriumSpec> {
        let (p, q) = (params.p(), params.q());
        match params.kind() {
            ModelKind::VelocityLine => {
                if params.regime() == Regime::Conservative || (p < 1.0 && params.regime() == Regime::Productive) {
                    return Some(EquilibriumSpec::Maxwellian);
                }
                if (p + q - 1.0).abs() < FAMILY_TOL {
                    return Some(EquilibriumSpec::GranularQuartic);
                }
                let lambda = params.lambda()?;
                if lambda.abs() < FAMILY_TOL {
                    Some(EquilibriumSpec::Maxwellian)
                } else {
                    Some(EquilibriumSpec::GeneralizedStudent { lambda: lambda.abs() })
                }
            }
            ModelKind::WealthHalfLine => {
                let lambda = params.lambda()?;
                if lambda > 0.0 {
                    Some(EquilibriumSpec::InverseGammaPareto { mu: 1.0 + 2.0 / lambda })
                } else {
                    None
                }
            }
        }
    }

    /// Family implied by a velocity grazing parameter (`λ = 0` is the
    /// Maxwellian).
    pub fn velocity_family_for_lambda(lambda: f64) -> EquilibriumSpec {
        if lambda.abs() < FAMILY_TOL {
            EquilibriumSpec::Maxwellian
        } else {
            EquilibriumSpec::GeneralizedStudent { lambda: lambda.abs() }
        }
    }
}

impl fmt::Display for EquilibriumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquilibriumSpec::GeneralizedStudent { lambda } => write!(f, "student:{lambda}"),
            EquilibriumSpec::Maxwellian => f.write_str("maxwellian"),
            EquilibriumSpec::GranularQuartic => f.write_str("granular-quartic"),
            EquilibriumSpec::InverseGammaPareto { mu } => write!(f, "inverse-gamma:{mu}"),
            EquilibriumSpec::WealthExact => f.write_str("wealth-exact"),
        }
    }
}

impl FromStr for EquilibriumSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Config(format!("family `{name}` needs a parameter, e.g. `{name}:0.5`")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad parameter in `{s}`: {e}")))
        };
        match name.to_ascii_lowercase().as_str() {
            "maxwellian" | "gaussian" => Ok(EquilibriumSpec::Maxwellian),
            "granular-quartic" | "quartic" => Ok(EquilibriumSpec::GranularQuartic),
            "wealth-exact" => Ok(EquilibriumSpec::WealthExact),
            "student" | "generalized-student" => Ok(EquilibriumSpec::GeneralizedStudent { lambda: number(arg)? }),
            "inverse-gamma" | "pareto" => Ok(EquilibriumSpec::InverseGammaPareto { mu: number(arg)? }),
            other => Err(Error::Config(format!("unknown equilibrium family `{other}`"))),
        }
    }
}

/// `ln(Γ(a + 1/2)/Γ(a))`, switching to the asymptotic series for large `a`
/// where the difference of two large log-gammas cancels badly.
pub fn ln_gamma_half_ratio(a: f64) -> f64 {
    if a < 30.0 {
        ln_gamma(a + 0.5) - ln_gamma(a)
    } else {
        let r = 1.0 / a;
        let r2 = r * r;
        0.5 * a.ln() - r / 8.0 + r * r2 / 192.0 - r * r2 * r2 / 640.0 + 17.0 * r * r2 * r2 * r2 / 14336.0
    }
}

fn ln_normalization_constant(lambda: f64) -> f64 {
    // Γ((3λ²+1)/(2λ²)) / Γ((1+2λ²)/(2λ²)) = Γ(a + 1/2)/Γ(a), a = 1 + 1/(2λ²)
    let a = 1.0 + 0.5 / (lambda * lambda);
    lambda.ln() - 0.5 * PI.ln() + ln_gamma_half_ratio(a)
}

/// Prefactor `c_λ` of the generalized Student law, evaluated in log space.
pub fn normalization_constant(lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("c_lambda needs lambda > 0, got {lambda}")));
    }
    Ok(ln_normalization_constant(lambda).exp())
}

/// A validated equilibrium ready for evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    spec: EquilibriumSpec,
    ln_norm: f64,
}

impl Equilibrium {
    pub fn spec(&self) -> EquilibriumSpec {
        self.spec
    }

    pub fn support(&self) -> Support {
        self.spec.support()
    }

    pub fn ln_density(&self, v: f64) -> f64 {
        match self.spec {
            EquilibriumSpec::GeneralizedStudent { lambda } => {
                let l2 = lambda * lambda;
                self.ln_norm - (1.5 + 0.5 / l2) * (l2 * v * v).ln_1p()
            }
            EquilibriumSpec::Maxwellian => self.ln_norm - 0.5 * v * v,
            EquilibriumSpec::GranularQuartic => self.ln_norm - 2.0 * (v * v).ln_1p(),
            EquilibriumSpec::InverseGammaPareto { mu } => {
                if v <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.ln_norm - (mu - 1.0) / v - (1.0 + mu) * v.ln()
                }
            }
            EquilibriumSpec::WealthExact => {
                if v <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.ln_norm - 0.5 / v - 2.5 * v.ln()
                }
            }
        }
    }

    pub fn density(&self, v: f64) -> f64 {
        self.ln_density(v).exp()
    }

    /// Moments of order at or above this value diverge.
    pub fn finite_moment_threshold(&self) -> f64 {
        match self.spec {
            EquilibriumSpec::GeneralizedStudent { lambda } => 2.0 + 1.0 / (lambda * lambda),
            EquilibriumSpec::Maxwellian => f64::INFINITY,
            EquilibriumSpec::GranularQuartic => 3.0,
            EquilibriumSpec::InverseGammaPareto { mu } => mu,
            EquilibriumSpec::WealthExact => 1.5,
        }
    }

    /// `∫ g(v) density(v) dv` over `[a, b]` intersected with the support.
    pub fn integrate_weighted<G: Fn(f64) -> f64>(&self, g: G, a: f64, b: f64) -> Integral {
        let f = |v: f64| {
            let d = self.density(v);
            if d == 0.0 {
                0.0
            } else {
                g(v) * d
            }
        };
        match self.support() {
            Support::RealLine => integrate_real_line(f, a, b, QUAD_ABS_TOL, QUAD_REL_TOL),
            Support::HalfLine => {
                if b <= 0.0 {
                    Integral { value: 0.0, error: 0.0, intervals: 0 }
                } else {
                    integrate_half_line(f, a.max(0.0), b, QUAD_ABS_TOL, QUAD_REL_TOL)
                }
            }
        }
    }

    /// Probability mass of `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.integrate_weighted(|_| 1.0, a, b).value
    }

    /// Total mass over the support (one, up to quadrature error).
    pub fn total_mass(&self) -> f64 {
        self.mass_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mass_between(f64::NEG_INFINITY, x).clamp(0.0, 1.0)
    }

    /// CDF at each point of an ascending slice, accumulated piecewise.
    pub fn cdf_sorted(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        let mut prev = f64::NEG_INFINITY;
        for &x in sorted {
            debug_assert!(x >= prev);
            acc += self.mass_between(prev, x);
            out.push(acc.clamp(0.0, 1.0));
            prev = x;
        }
        out
    }

    /// `∫ |v|^order density`, or `+∞` when `order` reaches the family's
    /// finite-moment threshold.
    pub fn moment(&self, order: f64) -> f64 {
        if order >= self.finite_moment_threshold() {
            return f64::INFINITY;
        }
        if order == 0.0 {
            return self.total_mass();
        }
        self.integrate_weighted(|v| v.abs().powf(order), f64::NEG_INFINITY, f64::INFINITY).value
    }

    /// `n` independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match self.spec {
            EquilibriumSpec::Maxwellian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            EquilibriumSpec::GeneralizedStudent { lambda } => sample_student(lambda, rng, n),
            EquilibriumSpec::GranularQuartic => sample_student(1.0, rng, n),
            EquilibriumSpec::InverseGammaPareto { mu } => sample_inverse_gamma(mu, rng, n),
            EquilibriumSpec::WealthExact => sample_inverse_gamma(1.5, rng, n),
        }
    }

    /// `v,density` rows over `grid`.
    pub fn write_density_csv<W: Write>(&self, grid: &[f64], out: &mut W, meta: &CsvMeta) -> Result<()> {
        meta.write_header(out)?;
        writeln!(out, "v,density")?;
        for &v in grid {
            writeln!(out, "{},{}", fmt_f64(v), fmt_f64(self.density(v)))?;
        }
        Ok(())
    }
}

/// Student-t with `ν = 2 + 1/λ²` degrees of freedom rescaled by
/// `1/(λ sqrt(ν))`, which has exactly the generalized Student density.
fn sample_student<R: Rng + ?Sized>(lambda: f64, rng: &mut R, n: usize) -> Vec<f64> {
    let nu = 2.0 + 1.0 / (lambda * lambda);
    let t = StudentT::new(nu).expect("nu > 2 is a valid Student-t parameter");
    let scale = 1.0 / (lambda * nu.sqrt());
    (0..n).map(|_| scale * t.sample(rng)).collect()
}

/// `(μ - 1)/G` with `G ~ Gamma(μ, 1)`.
fn sample_inverse_gamma<R: Rng + ?Sized>(mu: f64, rng: &mut R, n: usize) -> Vec<f64> {
    let g = Gamma::new(mu, 1.0).expect("mu > 1 is a valid Gamma shape");
    (0..n).map(|_| (mu - 1.0) / g.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_gamma_reference_values() {
        // reference values from 40-digit arithmetic
        let cases = [
            (1.5, -0.120_782_237_635_245_22),
            (2.5, 0.284_682_870_472_919_16),
            (10.0, 12.801_827_480_081_469_6),
            (100.5, 361.435_540_467_777_62),
            (12345.678, 103_959.919_905_546_06),
            (1e6, 12_815_504.569_147_612),
        ];
        assert!(ln_gamma(1.0).abs() < 1e-15);
        for (x, expected) in cases {
            let got = ln_gamma(x);
            assert!(((got - expected) / expected).abs() < 1e-12, "lnΓ({x}) = {got}");
        }
    }

    #[test]
    fn half_ratio_branches_agree() {
        for a in [30.0, 31.5, 45.0, 80.0] {
            let direct = ln_gamma(a + 0.5) - ln_gamma(a);
            assert!((direct - ln_gamma_half_ratio(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_constant_examples() {
        assert!((normalization_constant(1.0).unwrap() - 2.0 / PI).abs() < 1e-14);
        let small = normalization_constant(1e-3).unwrap();
        assert!((small - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-3);
        assert!((small - 0.398_942_579_608_055_7).abs() < 1e-13);
        assert!((normalization_constant(2.0).unwrap() - 1.074_259_178_787_350_7).abs() < 1e-13);
        assert!(normalization_constant(0.0).is_err());
    }

    #[test]
    fn density_examples() {
        let q = EquilibriumSpec::GranularQuartic.density(0.0).unwrap();
        assert!((q - 2.0 / PI).abs() < 1e-15);
        let m = EquilibriumSpec::Maxwellian.density(0.0).unwrap();
        assert!((m - 0.398_942_280_401_432_7).abs() < 1e-15);
        let w = EquilibriumSpec::WealthExact.density(1.0).unwrap();
        assert!((w - 0.241_970_724_519_143_37).abs() < 1e-15);
        assert_eq!(EquilibriumSpec::WealthExact.density(-1.0).unwrap(), 0.0);
        assert_eq!(EquilibriumSpec::InverseGammaPareto { mu: 2.0 }.density(0.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(EquilibriumSpec::GeneralizedStudent { lambda: 0.0 }.build().is_err());
        assert!(EquilibriumSpec::GeneralizedStudent { lambda: -1.0 }.density(0.0).is_err());
        assert!(EquilibriumSpec::InverseGammaPareto { mu: 1.0 }.build().is_err());
    }

    #[test]
    fn moment_examples() {
        let s1 = EquilibriumSpec::GeneralizedStudent { lambda: 1.0 }.build().unwrap();
        assert!((s1.moment(2.0) - 1.0).abs() < 1e-8);
        assert_eq!(s1.moment(3.0), f64::INFINITY);
        let ig = EquilibriumSpec::InverseGammaPareto { mu: 2.0 }.build().unwrap();
        assert!((ig.moment(1.0) - 1.0).abs() < 1e-8);
        assert!((ig.moment(0.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadrature_of_density_against_closed_form_cdf() {
        // quartic law: F(x) = 1/2 + (atan x + x/(1+x²))/π
        let e = EquilibriumSpec::GranularQuartic.build().unwrap();
        for x in [-3.0, -0.5, 0.0, 1.0, 7.0] {
            let exact = 0.5 + (f64::atan(x) + x / (1.0 + x * x)) / PI;
            assert!((e.cdf(x) - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn samplers_hit_known_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let m = EquilibriumSpec::Maxwellian.build().unwrap().sample(&mut rng, n);
        let mean = m.iter().sum::<f64>() / n as f64;
        let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);

        let ig = EquilibriumSpec::InverseGammaPareto { mu: 2.0 }.build().unwrap().sample(&mut rng, n);
        assert!(ig.iter().all(|&x| x > 0.0));
        let mean = ig.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn quartic_sampler_tail_fractions() {
        let e = EquilibriumSpec::GranularQuartic.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let xs = e.sample(&mut rng, n);
        for big_v in [1.0, 2.0, 4.0] {
            let expected = 2.0 * e.mass_between(big_v, f64::INFINITY);
            let observed = xs.iter().filter(|x| x.abs() > big_v).count() as f64 / n as f64;
            let se = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((observed - expected).abs() < 3.0 * se, "V={big_v}: {observed} vs {expected}");
        }
    }

    #[test]
    fn limit_family_mapping() {
        let v = |p, q| CollisionParams::velocity(p, q).unwrap();
        assert_eq!(EquilibriumSpec::limit_family(&v(1.0, 0.4)), Some(EquilibriumSpec::Maxwellian));
        assert_eq!(EquilibriumSpec::limit_family(&v(0.6, 0.8)), Some(EquilibriumSpec::Maxwellian));
        assert_eq!(EquilibriumSpec::limit_family(&v(0.6, 0.4)), Some(EquilibriumSpec::GranularQuartic));
        match EquilibriumSpec::limit_family(&v(1.2, 0.4)) {
            Some(EquilibriumSpec::GeneralizedStudent { lambda }) => assert!((lambda - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let w = CollisionParams::wealth_from_lambda(2.0, 0.01, true).unwrap();
        match EquilibriumSpec::limit_family(&w) {
            Some(EquilibriumSpec::InverseGammaPareto { mu }) => assert!((mu - 2.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn family_names_round_trip() {
        for spec in [
            EquilibriumSpec::Maxwellian,
            EquilibriumSpec::GranularQuartic,
            EquilibriumSpec::WealthExact,
            EquilibriumSpec::GeneralizedStudent { lambda: 0.5 },
            EquilibriumSpec::InverseGammaPareto { mu: 1.5 },
        ] {
            assert_eq!(spec.to_string().parse::<EquilibriumSpec>().unwrap(), spec);
        }
        assert!("student".parse::<EquilibriumSpec>().is_err());
        assert!("cauchy".parse::<EquilibriumSpec>().is_err());
    }
}
