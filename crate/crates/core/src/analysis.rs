//! Closed-form analysis: moment laws, the tail functions `S(δ)` (velocity) and
//! `R(δ)` (wealth), their positive roots, and the `(p, q)` negativity scan.
//!
//! Both tail functions vanish at `δ = 0` and are convex in `δ`, so a negative
//! slope at the origin is equivalent to the function being negative on some
//! interval `(0, δ̄)`. The right end of that interval, when finite, is the
//! algebraic tail exponent `δ*` of the scaled stationary profile.

use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::{fmt_f64, CsvMeta};
use crate::params::{CollisionParams, ModelKind};

/// Default ceiling of the root search.
pub const DEFAULT_DELTA_MAX: f64 = 64.0;
/// Default absolute tolerance of the root search.
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

/// `x^a` extended by continuity to `x = 0` for `a > 0`.
fn pow0(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(a)
    }
}

/// `x^a ln x`, with `0 · ln 0 = 0`.
fn pow_log0(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(a) * x.ln()
    }
}

/// `x^a (ln x)^2`, zero at `x = 0`.
fn pow_log2_0(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        let l = x.ln();
        x.powf(a) * l * l
    }
}

/// Mean of the unscaled solution, `m0 · exp((p + q - 1) t)`.
pub fn mean_law(params: &CollisionParams, m0: f64, t: f64) -> f64 {
    m0 * ((params.p() + params.q() - 1.0) * t).exp()
}

/// Energy of the unscaled velocity solution started at unit energy,
/// `exp((p² + q² - 1) t)`.
pub fn energy_law(params: &CollisionParams, t: f64) -> f64 {
    let (p, q) = (params.p(), params.q());
    ((p * p + q * q - 1.0) * t).exp()
}

/// `x^b (x^δ - 1)`, evaluated without cancellation for small `δ`.
fn pow_expm1(x: f64, b: f64, delta: f64) -> f64 {
    if x == 0.0 {
        if delta == 0.0 { 0.0 } else { -pow0(x, b) }
    } else {
        x.powf(b) * (delta * x.ln()).exp_m1()
    }
}

/// `S(δ) = p^{2+δ} + q^{2+δ} - 1 - (2+δ)/2 (p² + q² - 1)`, computed as
/// `p²(p^δ - 1) + q²(q^δ - 1) - δ/2 (p² + q² - 1)` so that it stays accurate
/// near `δ = 0`.
pub fn s_value(p: f64, q: f64, delta: f64) -> f64 {
    pow_expm1(p, 2.0, delta) + pow_expm1(q, 2.0, delta) - 0.5 * delta * (p * p + q * q - 1.0)
}

/// `R(δ) = p^{1+δ} + q^{1+δ} - 1 - (1+δ)(p + q - 1)`, computed as
/// `p(p^δ - 1) + q(q^δ - 1) - δ (p + q - 1)`.
pub fn r_value(p: f64, q: f64, delta: f64) -> f64 {
    pow_expm1(p, 1.0, delta) + pow_expm1(q, 1.0, delta) - delta * (p + q - 1.0)
}

/// dS/dδ at δ.
pub fn s_derivative(p: f64, q: f64, delta: f64) -> f64 {
    let a = 2.0 + delta;
    pow_log0(p, a) + pow_log0(q, a) - 0.5 * (p * p + q * q - 1.0)
}

/// dR/dδ at δ.
pub fn r_derivative(p: f64, q: f64, delta: f64) -> f64 {
    let a = 1.0 + delta;
    pow_log0(p, a) + pow_log0(q, a) - (p + q - 1.0)
}

/// d²S/dδ² = p^{2+δ} ln²p + q^{2+δ} ln²q. Nonnegative, which makes S convex.
pub fn s_second_derivative(p: f64, q: f64, delta: f64) -> f64 {
    let a = 2.0 + delta;
    pow_log2_0(p, a) + pow_log2_0(q, a)
}

pub fn r_second_derivative(p: f64, q: f64, delta: f64) -> f64 {
    let a = 1.0 + delta;
    pow_log2_0(p, a) + pow_log2_0(q, a)
}

/// The velocity tail function `S(δ)`.
pub fn s_function(params: &CollisionParams, delta: f64) -> f64 {
    s_value(params.p(), params.q(), delta)
}

/// The wealth tail function `R(δ)`.
pub fn r_function(params: &CollisionParams, delta: f64) -> f64 {
    r_value(params.p(), params.q(), delta)
}

/// `S` or `R` depending on the model kind.
pub fn tail_function(params: &CollisionParams, delta: f64) -> f64 {
    match params.kind() {
        ModelKind::VelocityLine => s_function(params, delta),
        ModelKind::WealthHalfLine => r_function(params, delta),
    }
}

fn tail_slope_raw(kind: ModelKind, p: f64, q: f64) -> f64 {
    match kind {
        ModelKind::VelocityLine => s_derivative(p, q, 0.0),
        ModelKind::WealthHalfLine => r_derivative(p, q, 0.0),
    }
}

/// Derivative of the tail function at `δ = 0`:
/// `p² ln p + q² ln q - (p² + q² - 1)/2` for velocities and
/// `p ln p + q ln q - (p + q - 1)` for wealths.
pub fn tail_slope_at_zero(params: &CollisionParams) -> f64 {
    tail_slope_raw(params.kind(), params.p(), params.q())
}

/// Outcome of the tail-exponent search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub kind: ModelKind,
    pub p: f64,
    pub q: f64,
    pub s_prime_at_zero: f64,
    pub delta_star: Option<f64>,
    pub has_algebraic_tail: bool,
    /// Exponent of the unscaled energy (velocity) or mean (wealth).
    pub moment_growth_rate: f64,
    /// Tail exponent of the stationary density, `3 + δ*` (velocity) or
    /// `2 + δ*` (wealth), when a root exists.
    pub density_exponent: Option<f64>,
}

/// Positive root of the tail function, bracketed by doubling from `tol` and
/// refined by bisection until both `|S(δ*)| < tol` and the bracket is
/// narrower than `tol`.
pub fn find_delta_star(params: &CollisionParams, delta_max: f64, tol: f64) -> Result<TailReport> {
    if !(tol > 0.0) || !(delta_max > 0.0) {
        return Err(Error::InvalidParams(format!(
            "root search needs tol > 0 and delta_max > 0, got tol={tol}, delta_max={delta_max}"
        )));
    }
    let slope = tail_slope_at_zero(params);
    let f = |d: f64| tail_function(params, d);
    let mut report = TailReport {
        kind: params.kind(),
        p: params.p(),
        q: params.q(),
        s_prime_at_zero: slope,
        delta_star: None,
        has_algebraic_tail: false,
        moment_growth_rate: params.growth_exponent(),
        density_exponent: None,
    };
    if slope >= 0.0 {
        return Ok(report);
    }

    let mut lo = 0.0;
    let mut hi = tol.min(delta_max);
    loop {
        if f(hi) > 0.0 {
            break;
        }
        if hi >= delta_max {
            return Ok(report);
        }
        lo = hi;
        hi = (2.0 * hi).min(delta_max);
    }

    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if value.abs() < tol && hi - lo < tol {
            report.delta_star = Some(mid);
            report.has_algebraic_tail = true;
            report.density_exponent = Some(match params.kind() {
                ModelKind::VelocityLine => 3.0 + mid,
                ModelKind::WealthHalfLine => 2.0 + mid,
            });
            return Ok(report);
        }
        if mid <= lo || mid >= hi {
            break;
        }
        if value > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::NonConvergence { iterations: MAX_BISECTIONS, lo, hi })
}

/// Predicted exponential decay rate of `d_s` between two scaled solutions:
/// `-S(s - 2)` for velocities, `-R(s - 1)` for wealths.
pub fn contraction_rate(params: &CollisionParams, s: f64) -> Result<f64> {
    match params.kind() {
        ModelKind::VelocityLine if s > 2.0 => Ok(-s_function(params, s - 2.0)),
        ModelKind::WealthHalfLine if s > 1.0 => Ok(-r_function(params, s - 1.0)),
        kind => Err(Error::InvalidParams(format!(
            "contraction order s={s} out of range for the {kind} model"
        ))),
    }
}

/// Growth exponent `p^s + q^s - 1` of `d_s` between two unscaled solutions.
pub fn unscaled_contraction_exponent(params: &CollisionParams, s: f64) -> f64 {
    pow0(params.p(), s) + pow0(params.q(), s) - 1.0
}

/// Evenly spaced points including both ends.
pub fn linspace(range: &RangeInclusive<f64>, n: usize) -> Vec<f64> {
    let (lo, hi) = (*range.start(), *range.end());
    if n == 1 {
        return vec![lo];
    }
    let span = hi - lo;
    (0..n).map(|k| lo + span * (k as f64) / ((n - 1) as f64)).collect()
}

/// Boolean grid marking where the tail function dips below zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScan {
    pub kind: ModelKind,
    pub p_axis: Vec<f64>,
    pub q_axis: Vec<f64>,
    /// Row-major: `inside[i * q_axis.len() + j]` is the point `(p_axis[i], q_axis[j])`.
    pub inside: Vec<bool>,
}

impl RegionScan {
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.inside[i * self.q_axis.len() + j]
    }

    /// Value at the grid point nearest to `(p, q)`.
    pub fn nearest(&self, p: f64, q: f64) -> bool {
        let idx = |axis: &[f64], x: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(k, _)| k)
                .unwrap_or(0)
        };
        self.at(idx(&self.p_axis, p), idx(&self.q_axis, q))
    }

    pub fn count_inside(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, meta: &CsvMeta) -> Result<()> {
        meta.write_header(out)?;
        writeln!(out, "p,q,value")?;
        for (i, p) in self.p_axis.iter().enumerate() {
            for (j, q) in self.q_axis.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(*p), fmt_f64(*q), u8::from(self.at(i, j)))?;
            }
        }
        Ok(())
    }
}

/// Marks every grid point where the slope at zero is negative, which by
/// convexity and `S(0) = 0` is where `min_δ S < 0`.
pub fn negativity_region_scan(
    kind: ModelKind,
    p_range: RangeInclusive<f64>,
    q_range: RangeInclusive<f64>,
    grid_n: usize,
) -> Result<RegionScan> {
    if grid_n < 2 {
        return Err(Error::InvalidParams(format!("grid_n must be >= 2, got {grid_n}")));
    }
    if !(*p_range.start() >= 0.0 && *q_range.start() >= 0.0) {
        return Err(Error::InvalidParams("scan ranges must be nonnegative".into()));
    }
    let p_axis = linspace(&p_range, grid_n);
    let q_axis = linspace(&q_range, grid_n);
    let inside = p_axis
        .par_iter()
        .flat_map_iter(|&p| q_axis.iter().map(move |&q| tail_slope_raw(kind, p, q) < 0.0))
        .collect();
    Ok(RegionScan { kind, p_axis, q_axis, inside })
}

/// Writes `delta,value` rows of the tail function on `deltas`.
pub fn write_tail_curve<W: Write>(
    params: &CollisionParams,
    deltas: &[f64],
    out: &mut W,
    meta: &CsvMeta,
) -> Result<()> {
    meta.write_header(out)?;
    writeln!(out, "delta,value")?;
    for &d in deltas {
        writeln!(out, "{},{}", fmt_f64(d), fmt_f64(tail_function(params, d)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vel(p: f64, q: f64) -> CollisionParams {
        CollisionParams::velocity(p, q).unwrap()
    }

    fn wea(p: f64, q: f64) -> CollisionParams {
        CollisionParams::wealth(p, q).unwrap()
    }

    #[test]
    fn mean_law_examples() {
        assert_eq!(mean_law(&vel(0.6, 0.4), 1.0, 5.0), 1.0);
        assert!((mean_law(&vel(1.05, 0.1), 1.0, 1.0) - 1.161_834_242_728_283).abs() < 1e-12);
        assert_eq!(mean_law(&vel(0.6, 0.4), 0.0, 3.0), 0.0);
    }

    #[test]
    fn energy_law_examples() {
        assert!((energy_law(&vel(0.6, 0.8), 7.0) - 1.0).abs() < 1e-14);
        assert!((energy_law(&vel(1.2, 0.4), 1.0) - 1.822_118_800_390_509).abs() < 1e-12);
        assert!((energy_law(&vel(0.6, 0.4), 1.0) - 0.618_783_391_806_140_9).abs() < 1e-12);
    }

    #[test]
    fn s_function_examples() {
        assert_eq!(s_function(&vel(0.6, 0.4), 0.0), 0.0);
        assert!(s_function(&vel(0.6, 0.4), 1.0).abs() < 1e-15);
        assert!((s_function(&vel(1.0, 0.4), 1.0) + 0.176).abs() < 1e-14);
    }

    #[test]
    fn r_function_examples() {
        assert_eq!(r_function(&wea(0.9, 0.1), 0.0), 0.0);
        assert!((r_function(&wea(0.9, 0.1), 1.0) + 0.18).abs() < 1e-14);
        assert_eq!(r_function(&wea(1.0, 0.0), 2.0), 0.0);
    }

    #[test]
    fn slope_examples() {
        assert!((tail_slope_at_zero(&vel(1.0, 0.4)) + 0.226_606_517_099_864_8).abs() < 1e-12);
        assert_eq!(tail_slope_at_zero(&vel(1.0, 0.0)), 0.0);
        assert!((tail_slope_at_zero(&vel(1.8, 0.4)) - 0.557_822_277_183_000_8).abs() < 1e-12);
        assert!((tail_slope_at_zero(&vel(0.6, 0.4)) + 0.090_503_741_655_621_46).abs() < 1e-12);
    }

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for &(p, q) in &[(0.6, 0.4), (1.2, 0.4), (0.9, 0.1), (1.05, 0.3), (0.3, 1.7)] {
            for &d in &[0.5, 1.0, 2.5] {
                let fd = central_difference(|x| s_value(p, q, x), d, 1e-5);
                assert!((fd - s_derivative(p, q, d)).abs() < 1e-8, "S' at ({p},{q},{d})");
                let fd = central_difference(|x| r_value(p, q, x), d, 1e-5);
                assert!((fd - r_derivative(p, q, d)).abs() < 1e-8, "R' at ({p},{q},{d})");
                let fd2 = central_difference(|x| s_derivative(p, q, x), d, 1e-5);
                assert!((fd2 - s_second_derivative(p, q, d)).abs() < 1e-7);
                let fd2 = central_difference(|x| r_derivative(p, q, x), d, 1e-5);
                assert!((fd2 - r_second_derivative(p, q, d)).abs() < 1e-7);
            }
            // one-sided at the origin, second order
            let h = 1e-6;
            let fd = (-3.0 * s_value(p, q, 0.0) + 4.0 * s_value(p, q, h) - s_value(p, q, 2.0 * h))
                / (2.0 * h);
            assert!((fd - tail_slope_at_zero(&vel(p, q))).abs() < 1e-6);
            let fd = (-3.0 * r_value(p, q, 0.0) + 4.0 * r_value(p, q, h) - r_value(p, q, 2.0 * h))
                / (2.0 * h);
            assert!((fd - tail_slope_at_zero(&wea(p, q))).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_star_examples() {
        let granular = find_delta_star(&vel(0.6, 0.4), DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL).unwrap();
        assert!(granular.has_algebraic_tail);
        assert!((granular.delta_star.unwrap() - 1.0).abs() < 1e-9);
        assert!((granular.density_exponent.unwrap() - 4.0).abs() < 1e-9);

        let conservative = find_delta_star(&vel(0.6, 0.8), DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL).unwrap();
        assert!(!conservative.has_algebraic_tail);
        assert!(conservative.delta_star.is_none());

        let fp = find_delta_star(&vel(1.2, 0.4), DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL).unwrap();
        let d = fp.delta_star.unwrap();
        assert!(d < 4.0);
        assert!((d - 3.009_948_469_300_123).abs() < 1e-9);
    }

    #[test]
    fn flat_start_does_not_stop_on_rounding() {
        // Small q makes S flat near zero, where the naive power form rounds
        // to the wrong sign.
        let q = 0.012_109_126_956_527_768;
        let r = find_delta_star(&vel(1.0 - q, q), 64.0, 1e-13).unwrap();
        assert!((r.delta_star.unwrap() - 1.0).abs() < 1e-9);
        for q in [1e-3, 5e-3, 0.02] {
            let r = find_delta_star(&vel(1.0 - q, q), 64.0, 1e-13).unwrap();
            assert!((r.delta_star.unwrap() - 1.0).abs() < 1e-9, "{q}");
        }
        assert!(s_value(0.999, 0.001, 1e-12) < 0.0);
    }

    #[test]
    fn nonnegative_slope_reports_no_tail() {
        let r = find_delta_star(&vel(1.8, 0.4), 64.0, 1e-10).unwrap();
        assert!(!r.has_algebraic_tail);
        assert!(r.s_prime_at_zero > 0.0);
        let identity = find_delta_star(&vel(1.0, 0.0), 64.0, 1e-10).unwrap();
        assert!(!identity.has_algebraic_tail);
    }

    #[test]
    fn root_search_rejects_bad_tolerance() {
        assert!(find_delta_star(&vel(0.6, 0.4), 64.0, 0.0).is_err());
        assert!(find_delta_star(&vel(0.6, 0.4), -1.0, 1e-10).is_err());
    }

    #[test]
    fn tight_tolerance_reports_non_convergence() {
        // a bracket narrower than 1e-300 around δ* ≈ 3 is not representable
        let err = find_delta_star(&vel(1.2, 0.4), 64.0, 1e-300).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn wealth_root() {
        // p + q < 1 with p = 1 - λ sqrt(q): R has a positive root
        let params = CollisionParams::wealth_exact_m4(0.1).unwrap();
        let r = find_delta_star(&params, 64.0, 1e-10).unwrap();
        let d = r.delta_star.unwrap();
        assert!(r_function(&params, d).abs() < 1e-10);
        assert!(r_function(&params, d - 1e-6) < 0.0);
        assert!(r_function(&params, d + 1e-6) > 0.0);
        // mean-conserving exchange has no tail
        let r = find_delta_star(&wea(0.9, 0.1), 64.0, 1e-10).unwrap();
        assert!(!r.has_algebraic_tail);
    }

    #[test]
    fn contraction_rate_examples() {
        let r = contraction_rate(&vel(0.6, 0.4), 2.5).unwrap();
        assert!((r - 0.019_952_313_947_677_85).abs() < 1e-12);
        let r = contraction_rate(&vel(0.6, 0.8), 3.0).unwrap();
        assert!((r - 0.272).abs() < 1e-12);
        let r = contraction_rate(&vel(0.6, 0.4), 3.0).unwrap();
        assert!(r.abs() < 1e-15);
        assert!(contraction_rate(&vel(0.6, 0.4), 1.5).is_err());
        let w = contraction_rate(&wea(0.9, 0.1), 2.0).unwrap();
        assert!((w - 0.18).abs() < 1e-14);
        assert!((unscaled_contraction_exponent(&vel(0.6, 0.8), 3.0) + 0.272).abs() < 1e-12);
    }

    /// Independent oracle: dense δ-grid minimum of the tail function.
    fn grid_min_negative(kind: ModelKind, p: f64, q: f64) -> bool {
        let f = |d: f64| match kind {
            ModelKind::VelocityLine => s_value(p, q, d),
            ModelKind::WealthHalfLine => r_value(p, q, d),
        };
        let mut d = 1e-7;
        while d < 64.0 {
            if f(d) < 0.0 {
                return true;
            }
            d *= 1.02;
        }
        false
    }

    #[test]
    fn region_scan_examples_and_oracle() {
        let scan = negativity_region_scan(ModelKind::VelocityLine, 0.0..=2.0, 0.0..=2.0, 41).unwrap();
        assert!(scan.nearest(0.6, 0.4));
        assert!(!scan.nearest(1.8, 0.4));
        assert!(!scan.nearest(1.0, 0.0));
        for (i, &p) in scan.p_axis.iter().enumerate() {
            for (j, &q) in scan.q_axis.iter().enumerate() {
                assert_eq!(scan.at(i, j), grid_min_negative(ModelKind::VelocityLine, p, q), "({p},{q})");
            }
        }
        let wscan = negativity_region_scan(ModelKind::WealthHalfLine, 0.0..=2.0, 0.0..=2.0, 41).unwrap();
        for (i, &p) in wscan.p_axis.iter().enumerate() {
            for (j, &q) in wscan.q_axis.iter().enumerate() {
                assert_eq!(wscan.at(i, j), grid_min_negative(ModelKind::WealthHalfLine, p, q));
            }
        }
        assert!(negativity_region_scan(ModelKind::VelocityLine, 0.0..=2.0, 0.0..=2.0, 1).is_err());
    }

    #[test]
    fn linspace_hits_grid_values_exactly() {
        let axis = linspace(&(0.0..=2.0), 201);
        assert_eq!(axis[0], 0.0);
        assert_eq!(axis[60], 0.6);
        assert_eq!(axis[40], 0.4);
        assert_eq!(axis[200], 2.0);
    }

    #[test]
    fn curve_csv_shape() {
        let mut buf = Vec::new();
        let meta = CsvMeta::new("test", "abc");
        write_tail_curve(&vel(0.6, 0.4), &[0.0, 0.5, 1.0], &mut buf, &meta).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "delta,value");
        assert_eq!(lines.len(), 5);
    }
}
