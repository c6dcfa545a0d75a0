//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use kinlab::analysis::{find_delta_star, negativity_region_scan, r_value, s_value};
use kinlab::cli::{run, Cli};
use kinlab::equilibria::EquilibriumSpec;
use kinlab::metrics::{
    contraction_experiment, ks_critical_1pct, ks_statistic, pooled_mean, replica_seed, ContractionConfig,
};
use kinlab::simulator::{run_unscaled, RunConfig};
use kinlab::{CollisionParams, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, pass: bool, detail: String) -> Check {
    Check { id, pass, detail }
}

struct Simulated {
    summary: Value,
    seconds: f64,
}

fn simulate(dir: &Path, tag: &str, args: &[&str]) -> Result<Simulated, String> {
    let out = dir.join(tag);
    let out = out.to_str().unwrap();
    let mut argv = vec!["kinlab", "--threads", "1", "--out", out, "simulate"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    let start = Instant::now();
    run(cli).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(Path::new(out).join("simulate_summary.json")).map_err(|e| e.to_string())?;
    let summary = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(Simulated { summary, seconds })
}

fn l1(sim: &Simulated) -> f64 {
    sim.summary["l1_distance"].as_f64().unwrap_or(f64::NAN)
}

fn failed(id: &'static str, e: String) -> Check {
    check(id, false, format!("error: {e}"))
}

fn ac1_ac5(dir: &Path) -> Vec<Check> {
    let sim = match simulate(dir, "ac1", &["--kind", "velocity", "--p", "0.6", "--q", "0.4"]) {
        Ok(s) => s,
        Err(e) => return vec![failed("AC1", e.clone()), failed("AC5", e)],
    };
    let d = l1(&sim);
    let ac1 = check(
        "AC1",
        d <= 0.05 && sim.seconds < 60.0 && sim.summary["family"] == "granular-quartic",
        format!("l1 to granular-quartic {d:.4} (<= 0.05), {:.1} s (< 60 s)", sim.seconds),
    );
    let report = find_delta_star(&CollisionParams::velocity(0.6, 0.4).unwrap(), 64.0, 1e-12).unwrap();
    let root = report.delta_star.unwrap_or(f64::NAN);
    let slope = sim.summary["tail_fit"]["exponent"].as_f64().unwrap_or(f64::NAN);
    let ac5 = check(
        "AC5",
        (root - 1.0).abs() <= 1e-8 && (slope + 4.0).abs() <= 0.4,
        format!("delta* {root:.12} (1 +- 1e-8), tail slope {slope:.3} (-4 +- 0.4)"),
    );
    vec![ac1, ac5]
}

fn ac2(dir: &Path) -> Check {
    let near = simulate(dir, "ac2a", &["--p", "1", "--q", "0.4"]);
    let far = simulate(dir, "ac2b", &["--p", "1", "--q", "0.8", "--family", "maxwellian"]);
    match (near, far) {
        (Ok(a), Ok(b)) => {
            let (da, db) = (l1(&a), l1(&b));
            check(
                "AC2",
                da <= 0.05 && db >= 3.0 * da && a.summary["family"] == "maxwellian",
                format!("l1 to maxwellian {da:.4} at q=0.4 (<= 0.05), {db:.4} at q=0.8 ({:.1}x, >= 3x)", db / da),
            )
        }
        (Err(e), _) | (_, Err(e)) => failed("AC2", e),
    }
}

fn ac3(dir: &Path) -> Check {
    let mut dists = Vec::new();
    let mut slowest: f64 = 0.0;
    for q in ["0.4", "0.2", "0.1"] {
        let tag = format!("ac3-{q}");
        match simulate(dir, &tag, &["--lambda", "0.5", "--q", q, "--family", "student:0.5"]) {
            Ok(sim) => {
                dists.push(l1(&sim));
                slowest = slowest.max(sim.seconds);
            }
            Err(e) => return failed("AC3", e),
        }
    }
    let monotone = dists.windows(2).all(|w| w[1] < w[0]);
    check(
        "AC3",
        monotone && slowest < 90.0,
        format!(
            "l1 to student:0.5 at q=0.4,0.2,0.1: {:.4}, {:.4}, {:.4} (decreasing), slowest leg {slowest:.1} s (< 90 s)",
            dists[0], dists[1], dists[2]
        ),
    )
}

fn ac4(dir: &Path) -> Check {
    match simulate(dir, "ac4", &["--kind", "wealth", "--q", "0.1", "--exact-m4"]) {
        Ok(sim) => {
            let d = l1(&sim);
            check(
                "AC4",
                d <= 0.05 && sim.summary["family"] == "wealth-exact",
                format!("l1 to wealth-exact {d:.4} (<= 0.05)"),
            )
        }
        Err(e) => failed("AC4", e),
    }
}

fn ac6() -> Check {
    let roots: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|&q| {
            let params = CollisionParams::velocity_from_lambda(0.5, q).unwrap();
            find_delta_star(&params, 64.0, 1e-12).ok().and_then(|r| r.delta_star).unwrap_or(f64::NAN)
        })
        .collect();
    let ok = roots.iter().all(|&d| d < 4.0) && roots.windows(2).all(|w| w[1] > w[0]);
    check("AC6", ok, format!("delta* at q=0.4,0.2,0.1,0.05: {roots:.4?} (increasing, < 4)"))
}

fn pooled_slope(params: &CollisionParams) -> Result<(f64, f64), String> {
    let mut slopes = Vec::new();
    for k in 0..20 {
        let config = RunConfig { particles: 5000, seed: replica_seed(42, k), ..RunConfig::default() };
        let traces = run_unscaled(params, &config, 2.0).map_err(|e| e.to_string())?;
        let energy = traces.iter().find(|t| t.name == "second_moment").ok_or("missing trace")?;
        slopes.push(energy.fitted_rate().ok_or("missing fit")?);
    }
    Ok(pooled_mean(&slopes))
}

fn ac7() -> Check {
    let growing = pooled_slope(&CollisionParams::velocity(1.2, 0.4).unwrap());
    let conservative = pooled_slope(&CollisionParams::velocity(0.6, 0.8).unwrap());
    match (growing, conservative) {
        (Ok((g, gse)), Ok((c, cse))) => check(
            "AC7",
            (g - 0.6).abs() <= 3.0 * gse && c.abs() <= 3.0 * cse,
            format!("slope {g:.5} +- {gse:.5} at (1.2, 0.4) vs 0.6; {c:.5} +- {cse:.5} at (0.6, 0.8) vs 0 (3 SE)"),
        ),
        (Err(e), _) | (_, Err(e)) => failed("AC7", e),
    }
}

fn ac8() -> Check {
    let config = ContractionConfig::default();
    let dissipative = contraction_experiment(&CollisionParams::velocity(0.6, 0.8).unwrap(), 3.0, &config);
    let marginal = contraction_experiment(&CollisionParams::velocity(0.6, 0.4).unwrap(), 3.0, &config);
    match (dissipative, marginal) {
        (Ok(a), Ok(b)) => {
            let ratio = a.summary.ratio.unwrap_or(f64::NAN);
            let band = a.summary.tolerance * a.summary.predicted_rate;
            let flat = b.summary.rate.abs() <= band;
            check(
                "AC8",
                (ratio - 1.0).abs() <= a.summary.tolerance && flat,
                format!(
                    "rate {:.4} vs {:.4} at (0.6, 0.8) (ratio {ratio:.3}, within 30%); rate {:.4} at (0.6, 0.4) (|rate| <= {band:.4})",
                    a.summary.rate, a.summary.predicted_rate, b.summary.rate
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => failed("AC8", e.to_string()),
    }
}

fn ac9() -> Check {
    let families = [
        EquilibriumSpec::Maxwellian,
        EquilibriumSpec::GranularQuartic,
        EquilibriumSpec::GeneralizedStudent { lambda: 0.25 },
        EquilibriumSpec::GeneralizedStudent { lambda: 0.5 },
        EquilibriumSpec::GeneralizedStudent { lambda: 1.0 },
        EquilibriumSpec::InverseGammaPareto { mu: 1.5 },
        EquilibriumSpec::InverseGammaPareto { mu: 2.0 },
        EquilibriumSpec::InverseGammaPareto { mu: 3.0 },
        EquilibriumSpec::WealthExact,
    ];
    let mut failures = Vec::new();
    let mut worst_mass: f64 = 0.0;
    let mut worst_moment: f64 = 0.0;
    let mut worst_ks: f64 = 0.0;
    let n = 100_000;
    for (k, spec) in families.iter().enumerate() {
        let law = spec.build().unwrap();
        let mass_err = (law.total_mass() - 1.0).abs();
        worst_mass = worst_mass.max(mass_err);
        if mass_err > 1e-8 {
            failures.push(format!("{spec} mass"));
        }
        let moment_err = match spec {
            EquilibriumSpec::GeneralizedStudent { .. } => Some(((law.moment(2.0) - 1.0).abs(), 1e-6)),
            EquilibriumSpec::InverseGammaPareto { .. } | EquilibriumSpec::WealthExact => {
                Some(((law.moment(1.0) - 1.0).abs(), 1e-8))
            }
            _ => None,
        };
        if let Some((err, tol)) = moment_err {
            worst_moment = worst_moment.max(err);
            if err > tol {
                failures.push(format!("{spec} moment"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let samples = law.sample(&mut rng, n);
        let ks = ks_statistic(&samples, spec).unwrap();
        worst_ks = worst_ks.max(ks / ks_critical_1pct(n));
        if ks > ks_critical_1pct(n) {
            failures.push(format!("{spec} ks"));
        }
    }
    let sup = |a: EquilibriumSpec, b: EquilibriumSpec, lo: f64, hi: f64| {
        (0..=20_000)
            .map(|k| lo + (hi - lo) * k as f64 / 20_000.0)
            .map(|v| (a.density(v).unwrap() - b.density(v).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    let c1 = sup(EquilibriumSpec::GeneralizedStudent { lambda: 1.0 }, EquilibriumSpec::GranularQuartic, -10.0, 10.0);
    let c2 = sup(EquilibriumSpec::InverseGammaPareto { mu: 1.5 }, EquilibriumSpec::WealthExact, 0.0, 10.0);
    if c1 >= 1e-12 || c2 >= 1e-12 {
        failures.push("family coincidence".into());
    }
    check(
        "AC9",
        failures.is_empty(),
        format!(
            "max mass error {worst_mass:.1e}, max moment error {worst_moment:.1e}, coincidences {c1:.1e} / {c2:.1e}, \
             max KS/critical {worst_ks:.2}{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

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

fn ac10() -> Check {
    let start = Instant::now();
    let scan = negativity_region_scan(ModelKind::VelocityLine, 0.0..=2.0, 0.0..=2.0, 201).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let mut mismatches = 0;
    for (i, &p) in scan.p_axis.iter().enumerate() {
        for (j, &q) in scan.q_axis.iter().enumerate() {
            if scan.at(i, j) != grid_min_negative(ModelKind::VelocityLine, p, q) {
                mismatches += 1;
            }
        }
    }
    let (inside, outside) = (scan.nearest(0.6, 0.4), !scan.nearest(1.8, 0.4));
    check(
        "AC10",
        mismatches == 0 && inside && outside && seconds < 10.0,
        format!(
            "{mismatches} oracle mismatches over 201x201, (0.6, 0.4) inside: {inside}, (1.8, 0.4) outside: {outside}, {seconds:.3} s"
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut checks = ac1_ac5(dir.path());
    checks.push(ac2(dir.path()));
    checks.push(ac3(dir.path()));
    checks.push(ac4(dir.path()));
    checks.push(ac6());
    checks.push(ac7());
    checks.push(ac8());
    checks.push(ac9());
    checks.push(ac10());
    checks.sort_by_key(|c| c.id[2..].parse::<u32>().unwrap());
    for c in &checks {
        println!("{} {}: {}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
