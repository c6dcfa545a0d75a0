//! Particle Monte Carlo for the binary-collision models.
//!
//! Maxwell-type models collide at a state-independent unit rate, so each time
//! step of length `dt` performs `round(N dt / 2)` collisions between uniformly
//! drawn pairs. In the scaled runs every step is followed by renormalization
//! to unit energy (velocity) or unit mean (wealth), and histograms are
//! averaged over the snapshots taken after burn-in.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::equilibria::{Equilibrium, EquilibriumSpec};
use crate::error::{Error, Result};
use crate::metrics::DecayTrace;
use crate::output::{fmt_f64, CsvMeta};
use crate::params::{CollisionParams, ModelKind};

const DEGENERACY_FLOOR: f64 = 1e-300;
const OVERFLOW_CEILING: f64 = 1e300;

/// Post-collision pair `(p v + q w, q v + p w)`.
#[inline]
pub fn collide(v: f64, w: f64, params: &CollisionParams) -> (f64, f64) {
    let (p, q) = (params.p(), params.q());
    (p * v + q * w, q * v + p * w)
}

/// Number of collisions performed in a step of length `dt`.
pub fn collision_events(n: usize, dt: f64) -> usize {
    (n as f64 * dt / 2.0).round() as usize
}

/// Uniform unordered pair of distinct indices below `n`.
#[inline]
pub fn draw_pair<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Initial law of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum InitialCondition {
    /// Uniform on `[-√3, √3]` (velocity) or `[0, 2]` (wealth).
    Uniform,
    /// Standard normal; velocity only.
    Gaussian,
    /// Skewed: `E - 1` (velocity) or `E` (wealth) with `E ~ Exp(1)`.
    Exponential,
    /// Exact draws from a stationary law.
    Stationary(EquilibriumSpec),
}

impl InitialCondition {
    /// Inverse CDF at `u ∈ (0, 1)`, when the law has a closed form one.
    pub fn quantile(&self, kind: ModelKind, u: f64) -> Result<Option<f64>> {
        Ok(match (self, kind) {
            (InitialCondition::Uniform, ModelKind::VelocityLine) => Some(3f64.sqrt() * (2.0 * u - 1.0)),
            (InitialCondition::Uniform, ModelKind::WealthHalfLine) => Some(2.0 * u),
            (InitialCondition::Gaussian, ModelKind::VelocityLine) => {
                Some(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(u))
            }
            (InitialCondition::Gaussian, ModelKind::WealthHalfLine) => {
                return Err(Error::Config("the gaussian initial condition is not supported on the half line".into()))
            }
            (InitialCondition::Exponential, ModelKind::VelocityLine) => Some(-(-u).ln_1p() - 1.0),
            (InitialCondition::Exponential, ModelKind::WealthHalfLine) => Some(-(-u).ln_1p()),
            (InitialCondition::Stationary(spec), kind) => {
                if spec.kind() != kind {
                    return Err(Error::Config(format!("stationary law {spec} does not live on the {kind} state space")));
                }
                None
            }
        })
    }

    /// `n` independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, kind: ModelKind, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Stationary(spec) => {
                self.quantile(kind, 0.5)?;
                Ok(spec.build()?.sample(rng, n))
            }
            _ => {
                let us: Vec<f64> = (0..n).map(|_| rng.sample(Open01)).collect();
                self.from_uniforms(kind, &us, rng)
            }
        }
    }

    /// Quantile transform of shared uniforms, so that two laws driven by the
    /// same `us` are comonotone. Laws without a closed-form quantile fall
    /// back to independent draws from `rng`.
    pub fn from_uniforms<R: Rng + ?Sized>(&self, kind: ModelKind, us: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if self.quantile(kind, 0.5)?.is_none() {
            return self.sample(kind, rng, us.len());
        }
        us.iter()
            .map(|&u| Ok(self.quantile(kind, u)?.expect("closed-form quantile")))
            .collect()
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Uniform => f.write_str("uniform"),
            InitialCondition::Gaussian => f.write_str("gaussian"),
            InitialCondition::Exponential => f.write_str("exponential"),
            InitialCondition::Stationary(spec) => write!(f, "stationary:{spec}"),
        }
    }
}

impl FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(InitialCondition::Uniform),
            "gaussian" | "normal" => Ok(InitialCondition::Gaussian),
            "exponential" | "skewed" => Ok(InitialCondition::Exponential),
            other => match other.strip_prefix("stationary:") {
                Some(family) => Ok(InitialCondition::Stationary(family.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown initial condition `{s}` (uniform, gaussian, exponential, stationary:<family>)"
                ))),
            },
        }
    }
}

impl From<InitialCondition> for String {
    fn from(ic: InitialCondition) -> String {
        ic.to_string()
    }
}

impl TryFrom<String> for InitialCondition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `N` scalar states evolving under the collision rule.
#[derive(Debug, Clone)]
pub struct Ensemble {
    states: Vec<f64>,
    kind: ModelKind,
    time: f64,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Ensemble {
    pub fn new(kind: ModelKind, states: Vec<f64>, seed: u64) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidParams(format!("an ensemble needs at least 2 particles, got {}", states.len())));
        }
        if kind == ModelKind::WealthHalfLine && states.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidParams("wealth states must be nonnegative".into()));
        }
        Ok(Ensemble { states, kind, time: 0.0, rng: ChaCha8Rng::seed_from_u64(seed), seed })
    }

    /// Draws `n` initial states from `init`, using the ensemble's own stream.
    pub fn from_initial(kind: ModelKind, init: InitialCondition, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = init.sample(kind, &mut rng, n)?;
        let mut ens = Ensemble::new(kind, states, seed)?;
        ens.rng = rng;
        Ok(ens)
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> f64 {
        self.states.iter().sum::<f64>() / self.len() as f64
    }

    pub fn second_moment(&self) -> f64 {
        self.states.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }

    /// Advances by `dt` with `round(N dt / 2)` collisions between uniformly
    /// drawn pairs. Returns the number of collisions.
    pub fn step(&mut self, params: &CollisionParams, dt: f64) -> usize {
        let n = self.len();
        let events = collision_events(n, dt);
        for _ in 0..events {
            let (i, j) = draw_pair(&mut self.rng, n);
            self.collide_pair(params, i, j);
        }
        self.time += dt;
        events
    }

    /// Applies a prescribed collision schedule and advances time by `dt`.
    pub fn apply_pairs(&mut self, params: &CollisionParams, pairs: &[(usize, usize)], dt: f64) {
        for &(i, j) in pairs {
            self.collide_pair(params, i, j);
        }
        self.time += dt;
    }

    #[inline]
    fn collide_pair(&mut self, params: &CollisionParams, i: usize, j: usize) {
        let (a, b) = collide(self.states[i], self.states[j], params);
        self.states[i] = a;
        self.states[j] = b;
    }

    /// Maps the states back to unit energy and zero mean (velocity) or unit
    /// mean (wealth). Returns the normalizing statistic: the population
    /// standard deviation or the mean.
    pub fn renormalize(&mut self) -> Result<f64> {
        let n = self.len() as f64;
        match self.kind {
            ModelKind::VelocityLine => {
                let mean = self.states.iter().sum::<f64>() / n;
                let var = self.states.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if !(sd.is_finite() && sd >= DEGENERACY_FLOOR) {
                    return Err(Error::DegenerateEnsemble { statistic: sd });
                }
                self.states.iter_mut().for_each(|x| *x = (*x - mean) / sd);
                Ok(sd)
            }
            ModelKind::WealthHalfLine => {
                let mean = self.states.iter().sum::<f64>() / n;
                if !(mean.is_finite() && mean >= DEGENERACY_FLOOR) {
                    return Err(Error::DegenerateEnsemble { statistic: mean });
                }
                self.states.iter_mut().for_each(|x| *x /= mean);
                Ok(mean)
            }
        }
    }
}

/// Bin layout of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BinSpec {
    Linear { lo: f64, hi: f64, bins: usize },
    /// Logarithmic bins; `folded` bins `|v|` instead of `v`.
    Log { lo: f64, hi: f64, bins: usize, folded: bool },
}

impl BinSpec {
    pub fn default_linear(kind: ModelKind) -> Self {
        match kind {
            ModelKind::VelocityLine => BinSpec::Linear { lo: -8.0, hi: 8.0, bins: 200 },
            ModelKind::WealthHalfLine => BinSpec::Linear { lo: 0.0, hi: 10.0, bins: 200 },
        }
    }

    /// 10 bins per decade over `[10⁻², 10³]`; velocities are folded.
    pub fn default_log(kind: ModelKind) -> Self {
        BinSpec::Log { lo: 1e-2, hi: 1e3, bins: 50, folded: kind == ModelKind::VelocityLine }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BinSpec::Linear { lo, hi, bins } => bins > 0 && lo.is_finite() && hi.is_finite() && lo < hi,
            BinSpec::Log { lo, hi, bins, .. } => bins > 0 && lo > 0.0 && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bin specification {self:?}")))
        }
    }

    pub fn folded(&self) -> bool {
        matches!(self, BinSpec::Log { folded: true, .. })
    }

    pub fn edges(&self) -> Vec<f64> {
        match *self {
            BinSpec::Linear { lo, hi, bins } => {
                (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
            }
            BinSpec::Log { lo, hi, bins, .. } => {
                let (a, b) = (lo.ln(), hi.ln());
                let mut e: Vec<f64> = (0..=bins).map(|k| (a + (b - a) * k as f64 / bins as f64).exp()).collect();
                e[0] = lo;
                e[bins] = hi;
                e
            }
        }
    }
}

/// Finds the bin `k` with `edges[k] <= x < edges[k+1]` (last bin closed).
fn locate(spec: &BinSpec, edges: &[f64], x: f64) -> Option<usize> {
    let x = if spec.folded() { x.abs() } else { x };
    let bins = edges.len() - 1;
    let guess = match *spec {
        BinSpec::Linear { lo, hi, .. } => {
            if !(x >= lo && x <= hi) {
                return None;
            }
            ((x - lo) / (hi - lo) * bins as f64) as usize
        }
        BinSpec::Log { lo, hi, .. } => {
            if !(x >= lo && x <= hi) {
                return None;
            }
            ((x / lo).ln() / (hi / lo).ln() * bins as f64) as usize
        }
    };
    let mut k = guess.min(bins - 1);
    while k > 0 && x < edges[k] {
        k -= 1;
    }
    while k + 1 < bins && x >= edges[k + 1] {
        k += 1;
    }
    Some(k)
}

/// Snapshot-averaged binned density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub accumulations: u64,
    pub out_of_range_mass: f64,
    /// Bins hold `|v|` rather than `v`.
    pub folded: bool,
}

impl Histogram {
    /// Bin masses of `law` computed by quadrature.
    pub fn from_equilibrium(law: &Equilibrium, spec: &BinSpec) -> Self {
        let edges = spec.edges();
        let folded = spec.folded();
        let masses: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let m = law.mass_between(w[0], w[1]);
                if folded {
                    m + law.mass_between(-w[1], -w[0])
                } else {
                    m
                }
            })
            .collect();
        let inside: f64 = masses.iter().sum();
        Histogram { edges, masses, accumulations: 1, out_of_range_mass: (1.0 - inside).max(0.0), folded }
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.edges[k + 1] - self.edges[k]
    }

    /// Mass divided by bin width.
    pub fn mass_density(&self, k: usize) -> f64 {
        self.masses[k] / self.width(k)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.out_of_range_mass
    }

    /// Accumulation-weighted average of two histograms on the same bins.
    pub fn merge(&self, other: &Histogram) -> Result<Histogram> {
        if self.edges != other.edges || self.folded != other.folded {
            return Err(Error::InvalidParams("cannot merge histograms with different bins".into()));
        }
        let (wa, wb) = (self.accumulations as f64, other.accumulations as f64);
        let total = wa + wb;
        let mix = |a: f64, b: f64| (a * wa + b * wb) / total;
        Ok(Histogram {
            edges: self.edges.clone(),
            masses: self.masses.iter().zip(&other.masses).map(|(&a, &b)| mix(a, b)).collect(),
            accumulations: self.accumulations + other.accumulations,
            out_of_range_mass: mix(self.out_of_range_mass, other.out_of_range_mass),
            folded: self.folded,
        })
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, meta: &CsvMeta) -> Result<()> {
        meta.write_header(out)?;
        writeln!(out, "bin_left,bin_right,mass_density")?;
        for k in 0..self.bins() {
            writeln!(out, "{},{},{}", fmt_f64(self.edges[k]), fmt_f64(self.edges[k + 1]), fmt_f64(self.mass_density(k)))?;
        }
        Ok(())
    }
}

/// Running counts behind a [`Histogram`].
#[derive(Debug, Clone)]
pub struct HistogramAccumulator {
    spec: BinSpec,
    edges: Vec<f64>,
    counts: Vec<u64>,
    outside: u64,
    particles: u64,
    snapshots: u64,
}

impl HistogramAccumulator {
    pub fn new(spec: BinSpec) -> Result<Self> {
        spec.validate()?;
        let edges = spec.edges();
        let bins = edges.len() - 1;
        Ok(HistogramAccumulator { spec, edges, counts: vec![0; bins], outside: 0, particles: 0, snapshots: 0 })
    }

    pub fn add_snapshot(&mut self, states: &[f64]) {
        for &x in states {
            match locate(&self.spec, &self.edges, x) {
                Some(k) => self.counts[k] += 1,
                None => self.outside += 1,
            }
        }
        self.particles += states.len() as u64;
        self.snapshots += 1;
    }

    pub fn snapshots(&self) -> u64 {
        self.snapshots
    }

    pub fn finalize(&self) -> Result<Histogram> {
        if self.snapshots == 0 {
            return Err(Error::InvalidParams("histogram has no snapshots".into()));
        }
        let total = self.particles as f64;
        Ok(Histogram {
            edges: self.edges.clone(),
            masses: self.counts.iter().map(|&c| c as f64 / total).collect(),
            accumulations: self.snapshots,
            out_of_range_mass: self.outside as f64 / total,
            folded: self.spec.folded(),
        })
    }
}

/// Histogram of a single set of states.
pub fn snapshot_histogram(states: &[f64], spec: BinSpec) -> Result<Histogram> {
    let mut acc = HistogramAccumulator::new(spec)?;
    acc.add_snapshot(states);
    acc.finalize()
}

/// Configuration of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub particles: usize,
    pub dt: f64,
    pub burn_in: usize,
    pub averaging: usize,
    pub seed: u64,
    pub init: InitialCondition,
    /// Linear histogram; defaults per model kind when absent.
    pub bins: Option<BinSpec>,
    /// Logarithmic tail histogram; defaults per model kind when absent.
    pub tail_bins: Option<BinSpec>,
    /// Steps between trace samples.
    pub trace_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            particles: 5000,
            dt: 0.1,
            burn_in: 2000,
            averaging: 4000,
            seed: 42,
            init: InitialCondition::Uniform,
            bins: None,
            tail_bins: None,
            trace_every: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config(format!("particles must be >= 2, got {}", self.particles)));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::Config(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if self.averaging == 0 {
            return Err(Error::Config("averaging steps must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be positive".into()));
        }
        if let Some(b) = &self.bins {
            b.validate()?;
        }
        if let Some(b) = &self.tail_bins {
            b.validate()?;
        }
        Ok(())
    }

    pub fn linear_bins(&self, kind: ModelKind) -> BinSpec {
        self.bins.unwrap_or_else(|| BinSpec::default_linear(kind))
    }

    pub fn log_bins(&self, kind: ModelKind) -> BinSpec {
        self.tail_bins.unwrap_or_else(|| BinSpec::default_log(kind))
    }
}

/// Output of [`run_to_stationarity`].
#[derive(Debug, Clone)]
pub struct StationaryRun {
    pub histogram: Histogram,
    pub tail_histogram: Histogram,
    /// `step_growth` (pre-renormalization energy or mean per step) and
    /// `tail_fraction` (mass beyond the tail threshold).
    pub traces: Vec<DecayTrace>,
    pub final_states: Vec<f64>,
    pub collisions: u64,
}

impl StationaryRun {
    pub fn trace(&self, name: &str) -> Option<&DecayTrace> {
        self.traces.iter().find(|t| t.name == name)
    }
}

fn tail_threshold(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::VelocityLine => 3.0,
        ModelKind::WealthHalfLine => 5.0,
    }
}

/// Scaled run: burn-in, then snapshot averaging of the renormalized states.
pub fn run_to_stationarity(params: &CollisionParams, config: &RunConfig) -> Result<StationaryRun> {
    config.validate()?;
    let kind = params.kind();
    let mut ens = Ensemble::from_initial(kind, config.init, config.particles, config.seed)?;
    ens.renormalize()?;
    let mut hist = HistogramAccumulator::new(config.linear_bins(kind))?;
    let mut tail = HistogramAccumulator::new(config.log_bins(kind))?;
    let mut growth = DecayTrace::new("step_growth");
    let mut tail_fraction = DecayTrace::new("tail_fraction");
    let threshold = tail_threshold(kind);
    let n = config.particles as f64;
    let mut collisions = 0u64;

    for step in 0..config.burn_in + config.averaging {
        collisions += ens.step(params, config.dt) as u64;
        let stat = ens.renormalize()?;
        if step >= config.burn_in {
            hist.add_snapshot(ens.states());
            tail.add_snapshot(ens.states());
        }
        if (step + 1) % config.trace_every == 0 {
            let t = (step + 1) as f64 * config.dt;
            let g = match kind {
                ModelKind::VelocityLine => stat * stat,
                ModelKind::WealthHalfLine => stat,
            };
            growth.push(t, g, 0.0);
            let frac = ens.states().iter().filter(|x| x.abs() > threshold).count() as f64 / n;
            tail_fraction.push(t, frac, (frac * (1.0 - frac) / n).sqrt());
        }
    }

    Ok(StationaryRun {
        histogram: hist.finalize()?,
        tail_histogram: tail.finalize()?,
        traces: vec![growth, tail_fraction],
        final_states: ens.states().to_vec(),
        collisions,
    })
}

/// Unscaled run from a normalized initial state over `[0, horizon]`.
///
/// Returns the `mean` and `second_moment` traces with per-point standard
/// errors. The second moment (velocity) or the mean (wealth) carries a
/// log-linear fit over the whole horizon.
pub fn run_unscaled(params: &CollisionParams, config: &RunConfig, horizon: f64) -> Result<Vec<DecayTrace>> {
    config.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let kind = params.kind();
    let mut ens = Ensemble::from_initial(kind, config.init, config.particles, config.seed)?;
    ens.renormalize()?;
    let steps = (horizon / config.dt).round().max(1.0) as usize;
    let mut mean = DecayTrace::new("mean");
    let mut second = DecayTrace::new("second_moment");

    let record = |ens: &Ensemble, t: f64, mean: &mut DecayTrace, second: &mut DecayTrace| -> Result<()> {
        let n = ens.len() as f64;
        let m1 = ens.mean();
        let m2 = ens.second_moment();
        if !(m2.is_finite() && m2 <= OVERFLOW_CEILING) {
            return Err(Error::Overflow { time: t, value: m2 });
        }
        let var1 = (m2 - m1 * m1).max(0.0);
        let m4 = ens.states().iter().map(|x| x.powi(4)).sum::<f64>() / n;
        let var2 = (m4 - m2 * m2).max(0.0);
        mean.push(t, m1, (var1 / n).sqrt());
        second.push(t, m2, (var2 / n).sqrt());
        Ok(())
    };

    record(&ens, 0.0, &mut mean, &mut second)?;
    for step in 1..=steps {
        ens.step(params, config.dt);
        record(&ens, step as f64 * config.dt, &mut mean, &mut second)?;
    }
    match kind {
        ModelKind::VelocityLine => {
            let len = second.len();
            second.fit_window(0, len)?;
        }
        ModelKind::WealthHalfLine => {
            let len = mean.len();
            mean.fit_window(0, len)?;
        }
    }
    Ok(vec![mean, second])
}
