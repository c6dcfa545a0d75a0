//! Distances between laws and rate extraction.
//!
//! The Fourier distance `d_s(f, g) = sup |f̂(ξ) - ĝ(ξ)| / |ξ|^s` is estimated
//! from empirical characteristic functions on a finite grid of frequencies.
//! The grid maximum is a lower bound for the supremum. Since the states are
//! real, `f̂(-ξ)` is the conjugate of `f̂(ξ)`, so evaluating on positive
//! frequencies already covers the symmetrized grid `±ξ`.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{contraction_rate, unscaled_contraction_exponent};
use crate::equilibria::{EquilibriumSpec, Support};
use crate::error::{Error, Result};
use crate::output::{fmt_f64, CsvMeta};
use crate::params::CollisionParams;
use crate::simulator::{collision_events, draw_pair, Ensemble, Histogram, InitialCondition};

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact two-point fit.
    pub stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Fit(format!("need at least 2 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(Error::Fit("non-finite regression".into()));
    }
    Ok(LineFit { slope, intercept, stderr })
}

/// Log-linear fit of a trace over the index range `window = [start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `ln value` against time; negative for decay.
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub window: (usize, usize),
}

/// Time series of a positive diagnostic, with an optional exponential fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-point standard errors (zero when not estimated).
    pub stderr: Vec<f64>,
    pub fit: Option<RateFit>,
}

impl DecayTrace {
    pub fn new(name: impl Into<String>) -> Self {
        DecayTrace { name: name.into(), times: Vec::new(), values: Vec::new(), stderr: Vec::new(), fit: None }
    }

    pub fn push(&mut self, time: f64, value: f64, stderr: f64) {
        self.times.push(time);
        self.values.push(value);
        self.stderr.push(stderr);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fits `ln value` against time over `[start, end)` and stores the fit.
    pub fn fit_window(&mut self, start: usize, end: usize) -> Result<RateFit> {
        if end > self.len() || start >= end {
            return Err(Error::Fit(format!("window {start}..{end} is outside a trace of {} points", self.len())));
        }
        let t = &self.times[start..end];
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Fit("times are not strictly increasing".into()));
        }
        let v = &self.values[start..end];
        if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Fit(format!("value {bad} in the fit window is not positive")));
        }
        let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let line = linear_fit(t, &logs)?;
        let fit = RateFit { slope: line.slope, intercept: line.intercept, stderr: line.stderr, window: (start, end) };
        self.fit = Some(fit);
        Ok(fit)
    }

    /// Fitted log-slope, if a fit has been made.
    pub fn fitted_rate(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// Decay rate `-slope`, if a fit has been made.
    pub fn decay_rate(&self) -> Option<f64> {
        self.fit.map(|f| -f.slope)
    }

    /// `time,value,stderr` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W, meta: &CsvMeta) -> Result<()> {
        meta.write_header(out)?;
        writeln!(out, "time,value,stderr")?;
        for k in 0..self.len() {
            writeln!(out, "{},{},{}", fmt_f64(self.times[k]), fmt_f64(self.values[k]), fmt_f64(self.stderr[k]))?;
        }
        Ok(())
    }

    /// `time,ds_value` rows for contraction traces.
    pub fn write_ds_csv<W: Write>(&self, out: &mut W, meta: &CsvMeta) -> Result<()> {
        meta.write_header(out)?;
        writeln!(out, "time,ds_value")?;
        for k in 0..self.len() {
            writeln!(out, "{},{}", fmt_f64(self.times[k]), fmt_f64(self.values[k]))?;
        }
        Ok(())
    }
}

/// `(1/N) Σ exp(-i ξ x)` for each `ξ` in the grid.
pub fn empirical_cf(states: &[f64], xi_grid: &[f64]) -> Vec<Complex64> {
    let n = states.len() as f64;
    xi_grid
        .par_iter()
        .map(|&xi| {
            let (mut re, mut im) = (0.0, 0.0);
            for &x in states {
                let (s, c) = (xi * x).sin_cos();
                re += c;
                im -= s;
            }
            Complex64::new(re / n, im / n)
        })
        .collect()
}

/// `n` log-spaced frequencies on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// 64 log-spaced frequencies on `[0.1, 10]`.
pub fn default_xi_grid() -> Vec<f64> {
    log_grid(0.1, 10.0, 64)
}

fn check_grid(xi_grid: &[f64]) -> Result<()> {
    if xi_grid.is_empty() {
        return Err(Error::Grid("frequency grid is empty".into()));
    }
    if let Some(bad) = xi_grid.iter().find(|x| **x == 0.0 || !x.is_finite()) {
        return Err(Error::Grid(format!("frequency grid contains {bad}")));
    }
    Ok(())
}

/// Grid estimate of `d_s` between two empirical laws.
pub fn fourier_distance(states_a: &[f64], states_b: &[f64], s: f64, xi_grid: &[f64]) -> Result<f64> {
    check_grid(xi_grid)?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("s must be positive, got {s}")));
    }
    if states_a.is_empty() || states_b.is_empty() {
        return Err(Error::InvalidParams("empty state vector".into()));
    }
    let ca = empirical_cf(states_a, xi_grid);
    let cb = empirical_cf(states_b, xi_grid);
    Ok(xi_grid
        .iter()
        .zip(ca.iter().zip(&cb))
        .map(|(xi, (a, b))| (a - b).norm() / xi.abs().powf(s))
        .fold(0.0, f64::max))
}

/// Exact bin masses of `spec` on the histogram's bins.
fn exact_masses(hist: &Histogram, spec: &EquilibriumSpec) -> Result<Vec<f64>> {
    let law = spec.build()?;
    let mirror = hist.folded && law.support() == Support::RealLine;
    Ok(hist
        .edges
        .windows(2)
        .map(|w| {
            let m = law.mass_between(w[0], w[1]);
            if mirror {
                m + law.mass_between(-w[1], -w[0])
            } else {
                m
            }
        })
        .collect())
}

/// L1 distance between the bin masses of a histogram and of a stationary
/// law, with the mass outside the bins treated as one extra cell. The value
/// lies in `[0, 2]` and vanishes for a histogram built from the law itself.
pub fn l1_distance(hist: &Histogram, spec: &EquilibriumSpec) -> Result<f64> {
    let exact = exact_masses(hist, spec)?;
    let outside = (1.0 - exact.iter().sum::<f64>()).max(0.0);
    let binned: f64 = hist.masses.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum();
    Ok(binned + (hist.out_of_range_mass - outside).abs())
}

/// Kolmogorov–Smirnov statistic of a sample against a stationary law.
pub fn ks_statistic(samples: &[f64], spec: &EquilibriumSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParams("empty sample".into()));
    }
    let law = spec.build()?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cdf = law.cdf_sorted(&sorted);
    let n = sorted.len() as f64;
    Ok(cdf
        .iter()
        .enumerate()
        .map(|(i, &f)| ((i as f64 + 1.0) / n - f).max(f - i as f64 / n))
        .fold(0.0, f64::max))
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Power-law fit on a log-binned histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Log-log slope of the mass density.
    pub exponent: f64,
    pub stderr: f64,
    pub bins_used: usize,
}

/// Least-squares slope of `ln(mass density)` against `ln(bin center)` over the
/// nonempty bins whose geometric centers lie in `fit_range`.
pub fn tail_exponent_fit(hist: &Histogram, fit_range: (f64, f64)) -> Result<TailFit> {
    let (lo, hi) = fit_range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Fit(format!("invalid tail range [{lo}, {hi}]")));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for k in 0..hist.bins() {
        let (l, r) = (hist.edges[k], hist.edges[k + 1]);
        if l <= 0.0 || hist.masses[k] <= 0.0 {
            continue;
        }
        let center = (l * r).sqrt();
        if center >= lo && center <= hi {
            x.push(center.ln());
            y.push(hist.mass_density(k).ln());
        }
    }
    if x.len() < 5 {
        return Err(Error::InsufficientTailData { found: x.len() });
    }
    let line = linear_fit(&x, &y)?;
    Ok(TailFit { exponent: line.slope, stderr: line.stderr, bins_used: x.len() })
}

/// Whether the ensembles are renormalized after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractionMode {
    Scaled,
    Unscaled,
}

/// Setup of a two-ensemble contraction experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionConfig {
    pub particles: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Steps between snapshots.
    pub snapshot_every: usize,
    pub seed: u64,
    pub init_a: InitialCondition,
    pub init_b: InitialCondition,
    /// Start both ensembles from the very same states.
    pub same_init: bool,
    pub mode: ContractionMode,
    /// Frequencies; the default grid when absent.
    pub xi_grid: Option<Vec<f64>>,
    /// Explicit fit window; otherwise chosen from the noise floor.
    pub window: Option<(usize, usize)>,
    /// Leading fraction of the trace skipped as transient.
    pub skip_fraction: f64,
    /// The fit stops before the first value below `floor_factor` × floor.
    pub floor_factor: f64,
    pub min_points: usize,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            particles: 100_000,
            dt: 0.1,
            horizon: 20.0,
            snapshot_every: 5,
            seed: 42,
            init_a: InitialCondition::Uniform,
            init_b: InitialCondition::Exponential,
            same_init: false,
            mode: ContractionMode::Scaled,
            xi_grid: None,
            window: None,
            skip_fraction: 0.1,
            floor_factor: 2.0,
            min_points: 10,
        }
    }
}

impl ContractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config(format!("particles must be >= 2, got {}", self.particles)));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::Config(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.snapshot_every == 0 || self.min_points < 2 {
            return Err(Error::Config("snapshot_every must be positive and min_points at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.skip_fraction) || !(self.floor_factor >= 1.0) {
            return Err(Error::Config("skip_fraction must lie in [0, 1) and floor_factor be >= 1".into()));
        }
        if let Some(grid) = &self.xi_grid {
            check_grid(grid)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.xi_grid.clone().unwrap_or_else(default_xi_grid)
    }
}

/// Distance trace of a contraction experiment before fitting.
#[derive(Debug, Clone)]
pub struct ContractionTrace {
    pub trace: DecayTrace,
    /// Median split-half noise floor over the snapshots.
    pub noise_floor: f64,
    pub predicted_rate: f64,
}

/// Rate predicted for `d_s` in the given mode: `-S(s-2)` or `-R(s-1)` when
/// scaled, `1 - p^s - q^s` when unscaled.
pub fn predicted_rate(params: &CollisionParams, s: f64, mode: ContractionMode) -> Result<f64> {
    match mode {
        ContractionMode::Scaled => contraction_rate(params, s),
        ContractionMode::Unscaled => Ok(-unscaled_contraction_exponent(params, s)),
    }
}

fn initial_states(
    init: InitialCondition,
    params: &CollisionParams,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut ens = Ensemble::new(params.kind(), init.sample(params.kind(), rng, n)?, 0)?;
    ens.renormalize()?;
    Ok(ens.states().to_vec())
}

/// Sampling noise of `d_s` at the current ensemble size, estimated from the
/// two interleaved halves of one ensemble. Two independent halves of size
/// `N/2` fluctuate `√2` times more than two ensembles of size `N`.
pub fn split_half_floor(ens: &Ensemble, renormalize: bool, s: f64, xi_grid: &[f64]) -> Result<f64> {
    let half = |offset: usize| -> Result<Vec<f64>> {
        let states: Vec<f64> = ens.states().iter().skip(offset).step_by(2).copied().collect();
        let mut h = Ensemble::new(ens.kind(), states, 0)?;
        if renormalize {
            h.renormalize()?;
        }
        Ok(h.states().to_vec())
    };
    Ok(fourier_distance(&half(0)?, &half(1)?, s, xi_grid)? / std::f64::consts::SQRT_2)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Evolves two ensembles under one shared collision schedule and records the
/// distance between them at every snapshot. The per-point `stderr` of the
/// returned trace is the split-half noise floor of ensemble `a`.
pub fn contraction_trace(params: &CollisionParams, s: f64, config: &ContractionConfig) -> Result<ContractionTrace> {
    config.validate()?;
    let predicted = predicted_rate(params, s, config.mode)?;
    let grid = config.grid();
    let n = config.particles;
    let kind = params.kind();
    let scaled = config.mode == ContractionMode::Scaled;

    let mut rng_a = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng_b = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut schedule = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));

    let states_a = initial_states(config.init_a, params, n, &mut rng_a)?;
    let states_b = if config.same_init {
        states_a.clone()
    } else {
        initial_states(config.init_b, params, n, &mut rng_b)?
    };
    let mut a = Ensemble::new(kind, states_a, config.seed)?;
    let mut b = Ensemble::new(kind, states_b, config.seed)?;
    let mut trace = DecayTrace::new(format!("d_{s}"));
    let mut record = |a: &Ensemble, b: &Ensemble, t: f64| -> Result<()> {
        let d = fourier_distance(a.states(), b.states(), s, &grid)?;
        if !d.is_finite() {
            return Err(Error::Overflow { time: t, value: d });
        }
        trace.push(t, d, split_half_floor(a, scaled, s, &grid)?);
        Ok(())
    };
    record(&a, &b, 0.0)?;

    let steps = (config.horizon / config.dt).round().max(1.0) as usize;
    let events = collision_events(n, config.dt);
    let mut pairs = Vec::with_capacity(events);
    for step in 1..=steps {
        pairs.clear();
        pairs.extend((0..events).map(|_| draw_pair(&mut schedule, n)));
        a.apply_pairs(params, &pairs, config.dt);
        b.apply_pairs(params, &pairs, config.dt);
        if scaled {
            a.renormalize()?;
            b.renormalize()?;
        }
        if step % config.snapshot_every == 0 {
            record(&a, &b, step as f64 * config.dt)?;
        }
    }
    let noise_floor = median(&trace.stderr);
    Ok(ContractionTrace { trace, noise_floor, predicted_rate: predicted })
}

/// Default fit window: skip the leading transient, stop before the trace
/// first drops below `floor_factor` times its noise floor at that snapshot.
pub fn noise_limited_window(trace: &DecayTrace, config: &ContractionConfig) -> Result<(usize, usize)> {
    let len = trace.len();
    let start = (config.skip_fraction * len as f64).ceil() as usize;
    let end = (start..len)
        .find(|&k| !(trace.values[k] >= config.floor_factor * trace.stderr[k]))
        .unwrap_or(len);
    if end < start + config.min_points {
        return Err(Error::Fit(format!(
            "only {} snapshots stay above {} times the noise floor; increase particles for this s",
            end.saturating_sub(start),
            config.floor_factor
        )));
    }
    Ok((start, end))
}

/// Summary of a fitted contraction experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    /// Fitted decay rate `-slope`.
    pub rate: f64,
    pub stderr: f64,
    pub window: (usize, usize),
    pub predicted_rate: f64,
    /// `rate / predicted_rate`, absent when the prediction is zero.
    pub ratio: Option<f64>,
    pub noise_floor: f64,
    pub s: f64,
    pub mode: ContractionMode,
    /// Relative band used when comparing `rate` with `predicted_rate`.
    pub tolerance: f64,
}

/// Outcome of [`contraction_experiment`].
#[derive(Debug, Clone)]
pub struct ContractionOutcome {
    pub trace: DecayTrace,
    pub summary: ContractionSummary,
}

/// Relative tolerance on fitted contraction rates.
pub const RATE_TOLERANCE: f64 = 0.3;

/// Fits a recorded contraction trace.
pub fn fit_contraction(mut raw: ContractionTrace, s: f64, config: &ContractionConfig) -> Result<ContractionOutcome> {
    let (start, end) = match config.window {
        Some(w) => w,
        None => noise_limited_window(&raw.trace, config)?,
    };
    let fit = raw.trace.fit_window(start, end)?;
    let rate = -fit.slope;
    let predicted = raw.predicted_rate;
    let summary = ContractionSummary {
        rate,
        stderr: fit.stderr,
        window: fit.window,
        predicted_rate: predicted,
        ratio: (predicted != 0.0).then(|| rate / predicted),
        noise_floor: raw.noise_floor,
        s,
        mode: config.mode,
        tolerance: RATE_TOLERANCE,
    };
    Ok(ContractionOutcome { trace: raw.trace, summary })
}

/// Runs the two-ensemble experiment and fits its decay rate.
pub fn contraction_experiment(params: &CollisionParams, s: f64, config: &ContractionConfig) -> Result<ContractionOutcome> {
    let raw = contraction_trace(params, s, config)?;
    fit_contraction(raw, s, config)
}

/// Seed of replica `index` in a sweep.
pub fn replica_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Mean and standard error of a set of estimates.
pub fn pooled_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
