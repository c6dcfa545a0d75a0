//! The `kinlab` command line: argument parsing, configuration merging and the
//! four subcommands.
//!
//! Values from a JSON file given with `--config` are overridden by flags.
//! Every subcommand writes its CSV/JSON outputs and a `manifest.json` into the
//! output directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    contraction_rate, find_delta_star, linspace, negativity_region_scan, write_tail_curve, TailReport,
    DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL,
};
use crate::equilibria::EquilibriumSpec;
use crate::error::{Error, Result};
use crate::metrics::{
    contraction_trace, fit_contraction, l1_distance, pooled_mean, replica_seed, tail_exponent_fit, ContractionConfig,
    ContractionMode, ContractionSummary, TailFit,
};
use crate::output::{config_hash, CsvMeta, OutputDir};
use crate::params::{CollisionParams, ModelKind, Regime};
use crate::simulator::{run_to_stationarity, run_unscaled, BinSpec, Histogram, InitialCondition, RunConfig};
use crate::VERSION;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_OUT: &str = "kinlab-out";

#[derive(Debug, Parser)]
#[command(name = "kinlab", version, about = "Monte Carlo and analytic laboratory for 1-D Maxwell-type kinetic models")]
pub struct Cli {
    /// Base seed; replica k runs with seed + k.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for replica sweeps and frequency grids.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tail function, its root and the negativity region.
    Analyze(AnalyzeArgs),
    /// Particle simulation to stationarity, or unscaled moment runs.
    Simulate(SimulateArgs),
    /// Fourier-distance contraction between two initial laws.
    Contract(ContractArgs),
    /// Convergence toward the grazing limit along a decreasing q list.
    Limit(LimitArgs),
}

/// Collision parameters, given as `(p, q)` or as `(λ, q)`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// `velocity` (real line) or `wealth` (half line).
    #[arg(long)]
    pub kind: Option<ModelKind>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    /// Grazing parameter; p is derived from λ and q.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Wealth λ-mode with p = 1 + √(λq).
    #[arg(long, conflicts_with = "shrinking")]
    pub growing: bool,
    /// Wealth λ-mode with p = 1 - √(λq).
    #[arg(long)]
    pub shrinking: bool,
    /// Wealth model with p = 1 - q - 2√q + 2q, whose stationary law is exact.
    #[arg(long)]
    pub exact_m4: bool,
}

/// Simulation sizes shared by `simulate` and `limit`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub averaging: Option<usize>,
    /// uniform, gaussian, exponential or stationary:<family>.
    #[arg(long)]
    pub init: Option<InitialCondition>,
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Independent replicas merged into one histogram.
    #[arg(long)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Scan the negativity region over [0, 2]².
    #[arg(long)]
    pub region: bool,
    /// Points per axis of the region scan.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Order of the Fourier metric for the reported contraction rate.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Run the unscaled dynamics and record moment traces.
    #[arg(long)]
    pub unscaled: bool,
    /// Time horizon of unscaled runs.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Comparison law; inferred from (p, q) when absent.
    #[arg(long)]
    pub family: Option<EquilibriumSpec>,
    /// Tail fit interval `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub tail_range: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ContractArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub init_a: Option<InitialCondition>,
    #[arg(long)]
    pub init_b: Option<InitialCondition>,
    /// Start both ensembles from identical states.
    #[arg(long)]
    pub same_init: bool,
    /// Compare the unscaled dynamics instead of the renormalized ones.
    #[arg(long)]
    pub unscaled: bool,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Steps between distance snapshots.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LimitArgs {
    #[arg(long)]
    pub kind: Option<ModelKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Strictly decreasing list of q values.
    #[arg(long = "q", value_delimiter = ',')]
    pub q_list: Vec<f64>,
    #[arg(long, conflicts_with = "shrinking")]
    pub growing: bool,
    #[arg(long)]
    pub shrinking: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Optional settings read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub kind: Option<ModelKind>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub growing: Option<bool>,
    pub exact_m4: Option<bool>,
    pub q_list: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub dt: Option<f64>,
    pub burn_in: Option<usize>,
    pub averaging: Option<usize>,
    pub init: Option<InitialCondition>,
    pub bins: Option<BinSpec>,
    pub tail_bins: Option<BinSpec>,
    pub trace_every: Option<usize>,
    pub replicas: Option<usize>,
    pub unscaled: Option<bool>,
    pub horizon: Option<f64>,
    pub family: Option<EquilibriumSpec>,
    pub tail_range: Option<(f64, f64)>,
    pub s: Option<f64>,
    pub init_a: Option<InitialCondition>,
    pub init_b: Option<InitialCondition>,
    pub same_init: Option<bool>,
    pub snapshot_every: Option<usize>,
    pub xi_grid: Option<Vec<f64>>,
    pub region: Option<bool>,
    pub grid: Option<usize>,
    pub delta_max: Option<f64>,
    pub tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses JSON; errors carry the line and column.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Model description after merging flags over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSpec {
    pub kind: Option<ModelKind>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub growing: Option<bool>,
    pub exact_m4: bool,
}

impl ModelSpec {
    pub fn merge(args: &ModelArgs, file: &FileConfig) -> Self {
        let growing = if args.growing {
            Some(true)
        } else if args.shrinking {
            Some(false)
        } else {
            file.growing
        };
        ModelSpec {
            kind: args.kind.or(file.kind),
            p: args.p.or(file.p),
            q: args.q.or(file.q),
            lambda: args.lambda.or(file.lambda),
            growing,
            exact_m4: args.exact_m4 || file.exact_m4.unwrap_or(false),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_none() && self.q.is_none() && self.lambda.is_none() && !self.exact_m4
    }

    pub fn resolved_kind(&self) -> ModelKind {
        self.kind.unwrap_or(if self.exact_m4 { ModelKind::WealthHalfLine } else { ModelKind::VelocityLine })
    }

    /// Collision parameters, rejecting every ambiguous combination.
    pub fn resolve(&self) -> Result<CollisionParams> {
        let kind = self.resolved_kind();
        let q = self.q.ok_or_else(|| Error::Config("--q is required".into()))?;
        if self.exact_m4 {
            if kind != ModelKind::WealthHalfLine {
                return Err(Error::Config("--exact-m4 applies to the wealth model only".into()));
            }
            if self.p.is_some() || self.lambda.is_some() || self.growing.is_some() {
                return Err(Error::Config("--exact-m4 fixes p; do not combine it with --p, --lambda or a sign flag".into()));
            }
            return CollisionParams::wealth_exact_m4(q).map_err(to_config);
        }
        match (self.p, self.lambda) {
            (Some(_), Some(_)) => Err(Error::Config("give either --p or --lambda, not both".into())),
            (Some(p), None) => {
                if self.growing.is_some() {
                    return Err(Error::Config("--growing/--shrinking only apply together with --lambda".into()));
                }
                CollisionParams::new(p, q, kind).map_err(to_config)
            }
            (None, Some(lambda)) => match kind {
                ModelKind::VelocityLine => {
                    if self.growing.is_some() {
                        return Err(Error::Config("--growing/--shrinking apply to the wealth model only".into()));
                    }
                    CollisionParams::velocity_from_lambda(lambda, q).map_err(to_config)
                }
                ModelKind::WealthHalfLine => {
                    let growing = self.growing.ok_or_else(|| {
                        Error::Config("wealth λ-mode needs the sign of p - 1: pass --growing or --shrinking".into())
                    })?;
                    CollisionParams::wealth_from_lambda(lambda, q, growing).map_err(to_config)
                }
            },
            (None, None) => Err(Error::Config("specify --p and --q, or --lambda and --q".into())),
        }
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::InvalidParams(msg) | Error::Domain(msg) => Error::Config(msg),
        other => other,
    }
}

fn merge_run_config(args: &RunArgs, file: &FileConfig, seed: u64) -> Result<RunConfig> {
    let d = RunConfig::default();
    let config = RunConfig {
        particles: args.particles.or(file.particles).unwrap_or(d.particles),
        dt: args.dt.or(file.dt).unwrap_or(d.dt),
        burn_in: args.burn_in.or(file.burn_in).unwrap_or(d.burn_in),
        averaging: args.averaging.or(file.averaging).unwrap_or(d.averaging),
        seed,
        init: args.init.or(file.init).unwrap_or(d.init),
        bins: file.bins,
        tail_bins: file.tail_bins,
        trace_every: args.trace_every.or(file.trace_every).unwrap_or(d.trace_every),
    };
    config.validate()?;
    Ok(config)
}

fn replicas(args: &RunArgs, file: &FileConfig) -> Result<usize> {
    let n = args.replicas.or(file.replicas).unwrap_or(1);
    if n == 0 {
        return Err(Error::Config("replicas must be positive".into()));
    }
    Ok(n)
}

/// What a finished command produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Short human-readable result lines.
    pub lines: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a C,
    duration_seconds: f64,
    files: Vec<String>,
}

struct Session {
    out: OutputDir,
    seed: u64,
    started: Instant,
    lines: Vec<String>,
}

impl Session {
    fn finish<C: Serialize>(mut self, command: &str, config: &C) -> Result<RunReport> {
        let files = self
            .out
            .written()
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let manifest = Manifest {
            command,
            version: VERSION,
            seed: self.seed,
            config_hash: config_hash(config)?,
            config,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            files,
        };
        self.out.write_json("manifest.json", &manifest)?;
        Ok(RunReport { out_dir: self.out.path().to_path_buf(), files: self.out.written().to_vec(), lines: self.lines })
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<RunReport> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let out = OutputDir::create(cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))?;
    let session = Session { out, seed, started: Instant::now(), lines: Vec::new() };
    let body = || match &cli.command {
        Command::Analyze(args) => cmd_analyze(args, &file, session),
        Command::Simulate(args) => cmd_simulate(args, &file, session),
        Command::Contract(args) => cmd_contract(args, &file, session),
        Command::Limit(args) => cmd_limit(args, &file, session),
    };
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

#[derive(Debug, Serialize)]
struct AnalyzeConfig {
    params: Option<CollisionParams>,
    region: Option<usize>,
    kind: ModelKind,
    s: Option<f64>,
    delta_max: f64,
    tol: f64,
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    #[serde(flatten)]
    tail: TailReport,
    regime: Regime,
    lambda: Option<f64>,
    limit_family: Option<String>,
    s: Option<f64>,
    contraction_rate: Option<f64>,
}

fn cmd_analyze(args: &AnalyzeArgs, file: &FileConfig, mut session: Session) -> Result<RunReport> {
    let model = ModelSpec::merge(&args.model, file);
    let region = args.region || file.region.unwrap_or(false);
    let delta_max = args.delta_max.or(file.delta_max).unwrap_or(DEFAULT_DELTA_MAX);
    let tol = args.tol.or(file.tol).unwrap_or(DEFAULT_ROOT_TOL);
    let s = args.s.or(file.s);
    if model.is_empty() && !region {
        return Err(Error::Config("analyze needs collision parameters or --region".into()));
    }
    let params = if model.is_empty() { None } else { Some(model.resolve()?) };
    let kind = params.map(|p| p.kind()).unwrap_or_else(|| model.resolved_kind());
    let grid = args.grid.or(file.grid).unwrap_or(201);
    if region && grid < 2 {
        return Err(Error::Config("--grid must be at least 2".into()));
    }
    let config = AnalyzeConfig { params, region: region.then_some(grid), kind, s, delta_max, tol };
    let hash = config_hash(&config)?;

    if let Some(params) = params {
        let tail = find_delta_star(&params, delta_max, tol)?;
        let upper = tail.delta_star.map_or(8.0, |d| (2.0 * d).clamp(4.0, delta_max));
        let deltas = linspace(&(0.0..=upper), 401);
        let curve = match kind {
            ModelKind::VelocityLine => "s_curve.csv",
            ModelKind::WealthHalfLine => "r_curve.csv",
        };
        let meta = CsvMeta::new(format!("tail-function {params}"), hash.clone());
        session.out.write_with(curve, |w| write_tail_curve(&params, &deltas, w, &meta))?;
        let report = AnalyzeReport {
            regime: params.regime(),
            lambda: params.lambda(),
            limit_family: EquilibriumSpec::limit_family(&params).map(|f| f.to_string()),
            s,
            contraction_rate: s.map(|s| contraction_rate(&params, s)).transpose()?,
            tail,
        };
        session.lines.push(match report.tail.delta_star {
            Some(d) => format!("{params}: delta_star = {d:.12}, density exponent {:.12}", report.tail.density_exponent.unwrap_or(f64::NAN)),
            None => format!("{params}: no algebraic tail (slope at zero {:.6e})", report.tail.s_prime_at_zero),
        });
        session.out.write_json("tail_report.json", &report)?;
    }

    if region {
        let scan = negativity_region_scan(kind, 0.0..=2.0, 0.0..=2.0, grid)?;
        let meta = CsvMeta::new(format!("region-scan {kind} {grid}x{grid}"), hash.clone());
        session.out.write_with("region_scan.csv", |w| scan.write_csv(w, &meta))?;
        session.out.write_json(
            "region_summary.json",
            &serde_json::json!({
                "kind": kind,
                "grid": grid,
                "inside": scan.count_inside(),
                "total": grid * grid,
            }),
        )?;
        session.lines.push(format!("region scan: {} of {} grid points inside", scan.count_inside(), grid * grid));
    }
    session.finish("analyze", &config)
}

#[derive(Debug, Serialize)]
struct SimulateConfig {
    params: CollisionParams,
    run: RunConfig,
    replicas: usize,
    unscaled: bool,
    horizon: Option<f64>,
    family: Option<EquilibriumSpec>,
    tail_range: (f64, f64),
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    params: CollisionParams,
    family: Option<String>,
    l1_distance: Option<f64>,
    tail_fit: Option<TailFit>,
    tail_fit_range: (f64, f64),
    tail_fit_error: Option<String>,
    tail: TailReport,
    snapshots: u64,
    collisions: u64,
}

#[derive(Debug, Serialize)]
struct UnscaledSummary {
    params: CollisionParams,
    trace: String,
    predicted_slope: f64,
    replica_slopes: Vec<f64>,
    pooled_slope: f64,
    pooled_stderr: f64,
}

fn default_tail_range(kind: ModelKind) -> (f64, f64) {
    match kind {
        ModelKind::VelocityLine => (3.0, 20.0),
        ModelKind::WealthHalfLine => (3.0, 30.0),
    }
}

/// Comparison law for a run: explicit choice, the exact wealth law, or the
/// family implied by `(p, q)`.
pub fn comparison_family(params: &CollisionParams, explicit: Option<EquilibriumSpec>, exact_m4: bool) -> Option<EquilibriumSpec> {
    explicit.or_else(|| {
        if exact_m4 {
            Some(EquilibriumSpec::WealthExact)
        } else {
            EquilibriumSpec::limit_family(params)
        }
    })
}

/// Runs `replicas` independent scaled simulations in parallel and merges
/// their histograms.
pub fn run_replicas(params: &CollisionParams, config: &RunConfig, replicas: usize) -> Result<(Histogram, Histogram, u64, Vec<crate::metrics::DecayTrace>)> {
    let runs: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|k| run_to_stationarity(params, &RunConfig { seed: replica_seed(config.seed, k), ..config.clone() }))
        .collect::<Result<_>>()?;
    let mut iter = runs.into_iter();
    let first = iter.next().expect("at least one replica");
    let (mut hist, mut tail, mut collisions) = (first.histogram, first.tail_histogram, first.collisions);
    for run in iter {
        hist = hist.merge(&run.histogram)?;
        tail = tail.merge(&run.tail_histogram)?;
        collisions += run.collisions;
    }
    Ok((hist, tail, collisions, first.traces))
}

fn cmd_simulate(args: &SimulateArgs, file: &FileConfig, mut session: Session) -> Result<RunReport> {
    let model = ModelSpec::merge(&args.model, file);
    let params = model.resolve()?;
    let run = merge_run_config(&args.run, file, session.seed)?;
    let replicas = replicas(&args.run, file)?;
    let unscaled = args.unscaled || file.unscaled.unwrap_or(false);
    let horizon = args.horizon.or(file.horizon);
    let family = comparison_family(&params, args.family.or(file.family), model.exact_m4);
    if let Some(f) = &family {
        if f.kind() != params.kind() {
            return Err(Error::Config(format!("family {f} does not live on the {} state space", params.kind())));
        }
    }
    let tail_range = match (&args.tail_range, file.tail_range) {
        (Some(v), _) => (v[0], v[1]),
        (None, Some(r)) => r,
        (None, None) => default_tail_range(params.kind()),
    };
    let config = SimulateConfig { params, run: run.clone(), replicas, unscaled, horizon, family, tail_range };
    let hash = config_hash(&config)?;

    if unscaled {
        let horizon = horizon.ok_or_else(|| Error::Config("--unscaled needs --horizon".into()))?;
        let traces: Vec<Vec<_>> = (0..replicas)
            .into_par_iter()
            .map(|k| run_unscaled(&params, &RunConfig { seed: replica_seed(run.seed, k), ..run.clone() }, horizon))
            .collect::<Result<_>>()?;
        for (k, set) in traces.iter().enumerate() {
            for trace in set {
                let name = if replicas == 1 { format!("trace_{}.csv", trace.name) } else { format!("trace_{}_r{k}.csv", trace.name) };
                let meta = CsvMeta::new(format!("unscaled {params} replica {k} {}", trace.name), hash.clone());
                session.out.write_with(&name, |w| trace.write_csv(w, &meta))?;
            }
        }
        let (fitted, predicted) = match params.kind() {
            ModelKind::VelocityLine => ("second_moment", params.p().powi(2) + params.q().powi(2) - 1.0),
            ModelKind::WealthHalfLine => ("mean", params.p() + params.q() - 1.0),
        };
        let slopes: Vec<f64> = traces
            .iter()
            .filter_map(|set| set.iter().find(|t| t.name == fitted).and_then(|t| t.fitted_rate()))
            .collect();
        let (pooled, se) = pooled_mean(&slopes);
        session.lines.push(format!("{fitted} log-slope {pooled:.6} ± {se:.2e} (predicted {predicted:.6})"));
        session.out.write_json(
            "unscaled_summary.json",
            &UnscaledSummary {
                params,
                trace: fitted.into(),
                predicted_slope: predicted,
                replica_slopes: slopes,
                pooled_slope: pooled,
                pooled_stderr: se,
            },
        )?;
        return session.finish("simulate", &config);
    }

    let (hist, tail_hist, collisions, traces) = run_replicas(&params, &run, replicas)?;
    let meta = |label: &str| CsvMeta::new(format!("{label} {params}"), hash.clone());
    session.out.write_with("histogram.csv", |w| hist.write_csv(w, &meta("histogram")))?;
    session.out.write_with("tail_histogram.csv", |w| tail_hist.write_csv(w, &meta("tail-histogram")))?;
    for trace in &traces {
        session.out.write_with(&format!("trace_{}.csv", trace.name), |w| trace.write_csv(w, &meta(&trace.name)))?;
    }
    let l1 = match &family {
        Some(f) => {
            let law = f.build()?;
            let centers: Vec<f64> = hist.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            session.out.write_with("overlay_density.csv", |w| law.write_density_csv(&centers, w, &meta(&format!("density {f}"))))?;
            Some(l1_distance(&hist, f)?)
        }
        None => None,
    };
    let (tail_fit, tail_fit_error) = match tail_exponent_fit(&tail_hist, tail_range) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tail = find_delta_star(&params, DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL)?;
    if let (Some(f), Some(d)) = (&family, l1) {
        session.lines.push(format!("l1 distance to {f}: {d:.6}"));
    }
    if let Some(fit) = &tail_fit {
        session.lines.push(format!("tail log-log slope {:.4} ± {:.4}", fit.exponent, fit.stderr));
    }
    session.out.write_json(
        "simulate_summary.json",
        &SimulateSummary {
            params,
            family: family.map(|f| f.to_string()),
            l1_distance: l1,
            tail_fit,
            tail_fit_range: tail_range,
            tail_fit_error,
            tail,
            snapshots: hist.accumulations,
            collisions,
        },
    )?;
    session.finish("simulate", &config)
}

#[derive(Debug, Serialize)]
struct ContractConfig {
    params: CollisionParams,
    s: f64,
    contraction: ContractionConfig,
}

#[derive(Debug, Serialize)]
struct NoiseFloorReport {
    status: &'static str,
    message: String,
    noise_floor: f64,
    predicted_rate: f64,
    s: f64,
    max_value: f64,
}

fn cmd_contract(args: &ContractArgs, file: &FileConfig, mut session: Session) -> Result<RunReport> {
    let params = ModelSpec::merge(&args.model, file).resolve()?;
    let d = ContractionConfig::default();
    let unscaled = args.unscaled || file.unscaled.unwrap_or(false);
    let contraction = ContractionConfig {
        particles: args.particles.or(file.particles).unwrap_or(d.particles),
        dt: args.dt.or(file.dt).unwrap_or(d.dt),
        horizon: args.horizon.or(file.horizon).unwrap_or(d.horizon),
        snapshot_every: args.snapshot_every.or(file.snapshot_every).unwrap_or(d.snapshot_every),
        seed: session.seed,
        init_a: args.init_a.or(file.init_a).unwrap_or(d.init_a),
        init_b: args.init_b.or(file.init_b).unwrap_or(d.init_b),
        same_init: args.same_init || file.same_init.unwrap_or(false),
        mode: if unscaled { ContractionMode::Unscaled } else { ContractionMode::Scaled },
        xi_grid: file.xi_grid.clone(),
        ..d
    };
    contraction.validate()?;
    if params.kind() == ModelKind::WealthHalfLine
        && (contraction.init_a == InitialCondition::Gaussian || contraction.init_b == InitialCondition::Gaussian)
    {
        return Err(Error::Config("the gaussian initial condition is not supported on the half line".into()));
    }
    let s = args.s.or(file.s).unwrap_or(3.0);
    let config = ContractConfig { params, s, contraction: contraction.clone() };
    let hash = config_hash(&config)?;

    let raw = contraction_trace(&params, s, &contraction)?;
    let meta = CsvMeta::new(format!("d_s s={s} {params}"), hash);
    session.out.write_with("contraction_trace.csv", |w| raw.trace.write_ds_csv(w, &meta))?;
    let noise_floor = raw.noise_floor;
    let predicted = raw.predicted_rate;
    let max_value = raw.trace.values.iter().cloned().fold(0.0, f64::max);
    match fit_contraction(raw, s, &contraction) {
        Ok(outcome) => {
            let ContractionSummary { rate, predicted_rate, ratio, .. } = outcome.summary;
            session.lines.push(match ratio {
                Some(r) => format!("fitted rate {rate:.4} vs predicted {predicted_rate:.4} (ratio {r:.3})"),
                None => format!("fitted rate {rate:.4} vs predicted {predicted_rate:.4}"),
            });
            session.out.write_json("contraction_fit.json", &outcome.summary)?;
        }
        Err(Error::Fit(message)) => {
            session.out.write_json(
                "contraction_fit.json",
                &NoiseFloorReport { status: "noise-floor", message: message.clone(), noise_floor, predicted_rate: predicted, s, max_value },
            )?;
            if !contraction.same_init {
                return Err(Error::Fit(message));
            }
            session.lines.push(format!("identical initial states: distance {max_value:.3e} stays at the noise floor {noise_floor:.3e}"));
        }
        Err(other) => return Err(other),
    }
    session.finish("contract", &config)
}

#[derive(Debug, Serialize)]
struct LimitConfig {
    kind: ModelKind,
    lambda: f64,
    q_list: Vec<f64>,
    growing: Option<bool>,
    run: RunConfig,
    replicas: usize,
}

#[derive(Debug, Clone, Serialize)]
struct LimitRow {
    q: f64,
    p: f64,
    l1: f64,
    delta_star: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LimitSummary {
    family: String,
    delta_star_limit: f64,
    rows: Vec<LimitRow>,
    failures: Vec<(f64, String)>,
    l1_decreasing: bool,
}

/// Value approached by `δ*(q)` as `q → 0` with `λ` fixed.
pub fn delta_star_limit(kind: ModelKind, lambda: f64) -> f64 {
    match kind {
        ModelKind::VelocityLine => 1.0 / (lambda * lambda),
        ModelKind::WealthHalfLine => 2.0 / lambda,
    }
}

fn cmd_limit(args: &LimitArgs, file: &FileConfig, mut session: Session) -> Result<RunReport> {
    let kind = args.kind.or(file.kind).unwrap_or(ModelKind::VelocityLine);
    let lambda = args.lambda.or(file.lambda).ok_or_else(|| Error::Config("limit needs --lambda".into()))?;
    let q_list = if args.q_list.is_empty() { file.q_list.clone().unwrap_or_default() } else { args.q_list.clone() };
    if q_list.is_empty() {
        return Err(Error::Config("limit needs a q list, e.g. --q 0.4,0.2,0.1".into()));
    }
    if q_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("the q list must be strictly decreasing".into()));
    }
    let growing = if args.growing {
        Some(true)
    } else if args.shrinking {
        Some(false)
    } else {
        file.growing
    };
    let family = match kind {
        ModelKind::VelocityLine => EquilibriumSpec::velocity_family_for_lambda(lambda),
        ModelKind::WealthHalfLine => {
            if !(lambda > 0.0) {
                return Err(Error::Config("the wealth limit needs λ > 0".into()));
            }
            EquilibriumSpec::InverseGammaPareto { mu: 1.0 + 2.0 / lambda }
        }
    };
    let specs: Vec<ModelSpec> = q_list
        .iter()
        .map(|&q| ModelSpec { kind: Some(kind), p: None, q: Some(q), lambda: Some(lambda), growing, exact_m4: false })
        .collect();
    let all_params: Vec<CollisionParams> = specs.iter().map(ModelSpec::resolve).collect::<Result<_>>()?;
    let run = merge_run_config(&args.run, file, session.seed)?;
    let replicas = replicas(&args.run, file)?;
    let config = LimitConfig { kind, lambda, q_list: q_list.clone(), growing, run: run.clone(), replicas };
    let hash = config_hash(&config)?;

    let outcomes: Vec<(f64, Result<LimitRow>)> = all_params
        .par_iter()
        .map(|params| {
            let row = run_replicas(params, &run, replicas).and_then(|(hist, ..)| {
                Ok(LimitRow {
                    q: params.q(),
                    p: params.p(),
                    l1: l1_distance(&hist, &family)?,
                    delta_star: find_delta_star(params, DEFAULT_DELTA_MAX, DEFAULT_ROOT_TOL)?.delta_star,
                })
            });
            (params.q(), row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (q, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((q, e.to_string())),
        }
    }
    let limit = delta_star_limit(kind, lambda);
    let meta = CsvMeta::new(format!("limit {kind} lambda={lambda} family={family}"), hash);
    session.out.write_with("limit_convergence.csv", |w| {
        meta.write_header(w)?;
        writeln!(w, "q,l1")?;
        for r in &rows {
            writeln!(w, "{},{}", crate::output::fmt_f64(r.q), crate::output::fmt_f64(r.l1))?;
        }
        Ok(())
    })?;
    session.out.write_with("delta_star.csv", |w| {
        meta.write_header(w)?;
        writeln!(w, "q,p,delta_star,limit")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{}",
                crate::output::fmt_f64(r.q),
                crate::output::fmt_f64(r.p),
                r.delta_star.map_or_else(|| "nan".to_string(), crate::output::fmt_f64),
                crate::output::fmt_f64(limit)
            )?;
        }
        Ok(())
    })?;
    let l1_decreasing = rows.windows(2).all(|w| w[1].l1 < w[0].l1);
    let all_failed = rows.is_empty();
    for r in &rows {
        session.lines.push(format!(
            "q = {}: p = {:.6}, l1 = {:.5}, delta_star = {}",
            r.q,
            r.p,
            r.l1,
            r.delta_star.map_or_else(|| "none".to_string(), |d| format!("{d:.6}"))
        ));
    }
    for (q, e) in &failures {
        session.lines.push(format!("q = {q}: failed: {e}"));
    }
    session.out.write_json(
        "limit_summary.json",
        &LimitSummary { family: family.to_string(), delta_star_limit: limit, rows, failures: failures.clone(), l1_decreasing },
    )?;
    let report = session.finish("limit", &config)?;
    match failures.into_iter().next() {
        Some((q, e)) if all_failed => Err(Error::Config(format!("every q failed; first failure at q = {q}: {e}"))),
        _ => Ok(report),
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: Option<f64>, q: Option<f64>, lambda: Option<f64>) -> ModelSpec {
        ModelSpec { p, q, lambda, ..Default::default() }
    }

    #[test]
    fn p_and_lambda_conflict() {
        assert!(matches!(spec(Some(1.2), Some(0.4), Some(0.5)).resolve(), Err(Error::Config(_))));
        assert!(matches!(spec(None, Some(0.4), None).resolve(), Err(Error::Config(_))));
        assert!(matches!(spec(Some(1.2), None, None).resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn lambda_derivations() {
        let p = spec(None, Some(0.4), Some(0.5)).resolve().unwrap();
        assert!((p.p() - 1.2).abs() < 1e-15);
        let mut w = spec(None, Some(0.25), Some(1.0));
        w.kind = Some(ModelKind::WealthHalfLine);
        assert!(matches!(w.resolve(), Err(Error::Config(_))));
        w.growing = Some(true);
        assert!((w.resolve().unwrap().p() - 1.5).abs() < 1e-15);
        w.growing = Some(false);
        assert!((w.resolve().unwrap().p() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_m4_rules() {
        let mut m = spec(None, Some(0.1), None);
        m.exact_m4 = true;
        let p = m.resolve().unwrap();
        assert_eq!(p.kind(), ModelKind::WealthHalfLine);
        assert!((p.p() - (1.0 - 0.1 - 2.0 * 0.1f64.sqrt() + 0.2)).abs() < 1e-15);
        m.kind = Some(ModelKind::VelocityLine);
        assert!(m.resolve().is_err());
        m.kind = None;
        m.p = Some(0.5);
        assert!(m.resolve().is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig::parse(r#"{"kind": "velocity", "p": 0.6, "q": 0.4}"#).unwrap();
        let args = ModelArgs { q: Some(0.3), ..Default::default() };
        let merged = ModelSpec::merge(&args, &file);
        assert_eq!((merged.p, merged.q), (Some(0.6), Some(0.3)));
    }

    #[test]
    fn file_errors_carry_positions() {
        let err = FileConfig::parse("{\n  \"p\": 0.6,\n  \"colour\": 1\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(FileConfig::parse("{\"p\": }").is_err());
    }

    #[test]
    fn parses_documented_command_lines() {
        let cli = Cli::try_parse_from(["kinlab", "analyze", "--kind", "velocity", "--p", "0.6", "--q", "0.4"]).unwrap();
        assert!(matches!(cli.command, Command::Analyze(_)));
        let cli = Cli::try_parse_from(["kinlab", "--seed", "7", "limit", "--lambda", "0.5", "--q", "0.4,0.1"]).unwrap();
        match cli.command {
            Command::Limit(args) => assert_eq!(args.q_list, vec![0.4, 0.1]),
            _ => unreachable!(),
        }
        assert_eq!(cli.seed, Some(7));
        let cli = Cli::try_parse_from(["kinlab", "simulate", "--kind", "wealth", "--q", "0.1", "--exact-m4"]).unwrap();
        assert!(matches!(cli.command, Command::Simulate(_)));
        assert!(Cli::try_parse_from(["kinlab", "simulate", "--growing", "--shrinking"]).is_err());
        assert!(Cli::try_parse_from(["kinlab", "contract", "--p", "0.6", "--q", "0.8", "--s", "3", "--init-a", "hot"]).is_err());
    }
}
