//! The `quadflow` command line.
//!
//! Each computing subcommand resolves its flags (defaults and the
//! `QUADFLOW_BM` environment variable included) into a parameter struct,
//! runs, writes its outputs atomically into `--out`, and records the
//! parameters, the verbatim system definition and the output digests in
//! `manifest.json`. `quadflow replay` reruns a manifest and checks that
//! every output comes out byte-identical.
//!
//! All numbers in CSV and JSON outputs are decimal strings that parse back
//! to the same value at the working precision.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::integrator::{
    compare_configurations, integrate_on_grid, integrate_summary, tightened_tolerance,
    verify_backward, verify_forward, ArcStats, ArcSummary, ConfigCheck, IntegrationConfig,
    Stepper, Way,
};
use crate::lyapunov::{lyapunov_spectrum_with, BenettinConfig};
use crate::manifest::{AtomicFile, RunManifest, SystemRecord, MANIFEST_FILE};
use crate::precision::{PrecisionContext, Real};
use crate::qsystem::{bundled, QuadSystem, DEFAULT_DELTA};
use crate::recurrence::{
    refine_scan, return_statistics, scan_trajectory, RecurrenceScanConfig, RefineOptions,
    ReturnStats,
};
use crate::series::DEFAULT_MAX_DEGREE;

/// Environment variable supplying the default mantissa width.
pub const PRECISION_ENV: &str = "QUADFLOW_BM";

/// Exit status when a replay does not reproduce its outputs.
pub const EXIT_REPLAY_MISMATCH: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "quadflow",
    version,
    about = "Multiprecision power-series integration of quadratic ODE systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate over [0, way*T]; writes trajectory.csv and stats.json
    Integrate {
        #[command(flatten)]
        params: IntegrateParams,
        #[command(flatten)]
        out: OutDir,
    },
    /// Accuracy, round-trip and step-configuration checks; writes verify.json
    Verify {
        #[command(flatten)]
        params: VerifyParams,
        #[command(flatten)]
        out: OutDir,
    },
    /// Scan for Poincaré recurrences; writes recurrences.csv and recurrence_stats.json
    Recur {
        #[command(flatten)]
        params: RecurParams,
        #[command(flatten)]
        out: OutDir,
    },
    /// Lyapunov spectrum; writes spectrum.json and lyapunov_trace.csv
    Lyapunov {
        #[command(flatten)]
        params: LyapunovParams,
        #[command(flatten)]
        out: OutDir,
    },
    /// Rerun a manifest and check the outputs are byte-identical
    Replay {
        /// manifest.json of the original run
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OutDir {
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Flags shared by every computing subcommand.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SystemArgs {
    /// System definition JSON, or a bundled name (dong2019.json, riccati.json)
    #[arg(long)]
    pub system: String,
    /// Initial state, comma-separated decimals
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Mantissa width b_m in bits
    #[arg(long, env = PRECISION_ENV, default_value_t = PrecisionContext::DEFAULT_BITS)]
    pub bm: u32,
    /// Series truncation tolerance
    #[arg(long = "eps-pw", default_value = "1e-20")]
    pub eps_pw: String,
    /// Step-size offset: |dt| = 1 / (h2 + delta)
    #[arg(long, default_value = DEFAULT_DELTA)]
    pub delta: String,
    /// Largest local polynomial degree before giving up
    #[arg(long = "max-degree", default_value_t = DEFAULT_MAX_DEGREE)]
    pub max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct IntegrateParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    /// Horizon T >= 0
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: String,
    /// +1 forward, -1 backward in time
    #[arg(long, default_value_t = 1, allow_negative_numbers = true,
          value_parser = clap::value_parser!(i32).range(-1..=1))]
    pub way: i32,
    /// Resample on a uniform grid of this spacing instead of step endpoints
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct VerifyParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: String,
    /// Accuracy threshold on the 1-norm gap to the tighter-tolerance run
    #[arg(long = "eps-a", default_value = "1e-12")]
    pub eps_a: String,
    /// Round-trip threshold on the 1-norm return distance
    #[arg(long = "eps-R", default_value = "1e-10")]
    #[serde(rename = "eps-R")]
    pub eps_r: String,
    /// Relative tolerance of the step-configuration comparison
    #[arg(long = "rel-tol", default_value = "0.05")]
    pub rel_tol: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RecurParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    /// Integrate this long first and scan from where the trajectory lands
    #[arg(long = "reach-T", default_value = "0")]
    #[serde(rename = "reach-T")]
    pub reach_t: String,
    /// Scan horizon T_P
    #[arg(long = "TP")]
    #[serde(rename = "TP")]
    pub t_p: String,
    /// Grid spacing dt_P
    #[arg(long = "dtP")]
    #[serde(rename = "dtP")]
    pub dt_p: String,
    /// Rapprochement threshold on the Euclidean distance to the start
    #[arg(long, default_value = "1")]
    pub threshold: String,
    /// Rescan at finer spacings until the closest approach settles
    #[arg(long)]
    pub refine: bool,
    #[arg(long = "refine-factor", default_value_t = 10)]
    pub refine_factor: u32,
    #[arg(long = "refine-levels", default_value_t = 4)]
    pub refine_levels: usize,
    /// Smallest spacing refinement may reach
    #[arg(long = "refine-min-dt")]
    pub refine_min_dt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LyapunovParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    /// Integrate this long first and start from where the trajectory lands
    #[arg(long = "reach-T", default_value = "0")]
    #[serde(rename = "reach-T")]
    pub reach_t: String,
    /// Total horizon T
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: String,
    /// Number of macro-steps M (tau_M = T / M)
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub macro_steps: usize,
    /// Seed of the initial perturbation directions
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Propagate the n perturbations of a macro-step on separate threads
    #[arg(long)]
    pub parallel: bool,
}

/// What a command produced: the manifest to save, a human summary, and an
/// error to report after the outputs are on disk (e.g. a ball escape).
struct Completed {
    manifest: RunManifest,
    summary: String,
    deferred: Option<Error>,
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Integrate { params, out } => finish(&out.out, |dir| {
            let (sys, rec) = system_from_source(&params.system)?;
            exec_integrate(&params, &sys, rec, dir)
        }),
        Command::Verify { params, out } => finish(&out.out, |dir| {
            let (sys, rec) = system_from_source(&params.system)?;
            exec_verify(&params, &sys, rec, dir)
        }),
        Command::Recur { params, out } => finish(&out.out, |dir| {
            let (sys, rec) = system_from_source(&params.system)?;
            exec_recur(&params, &sys, rec, dir)
        }),
        Command::Lyapunov { params, out } => finish(&out.out, |dir| {
            let (sys, rec) = system_from_source(&params.system)?;
            exec_lyapunov(&params, &sys, rec, dir)
        }),
        Command::Replay { manifest, out } => replay(&manifest, &out.out),
    }
}

fn finish<F>(dir: &Path, body: F) -> Result<i32>
where
    F: FnOnce(&Path) -> Result<Completed>,
{
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let done = body(dir)?;
    done.manifest.save(dir)?;
    print!("{}", done.summary);
    match done.deferred {
        Some(e) => {
            eprintln!("error: {e}");
            Ok(e.exit_code())
        }
        None => Ok(0),
    }
}

/// Reruns the manifest at `path` into `dir` and compares output digests.
pub fn replay(path: &Path, dir: &Path) -> Result<i32> {
    let original = RunManifest::load(path)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if same_dir(path.parent().unwrap_or(Path::new(".")), dir) {
        return Err(Error::invalid(
            "replay output directory must differ from the manifest's directory",
        ));
    }
    let rec = original.system.clone();
    let params = original.params.clone();
    let done = match original.command.as_str() {
        "integrate" => {
            let p: IntegrateParams = serde_json::from_value(params)?;
            exec_integrate(&p, &system_from_record(&rec, &p.system)?, rec, dir)?
        }
        "verify" => {
            let p: VerifyParams = serde_json::from_value(params)?;
            exec_verify(&p, &system_from_record(&rec, &p.system)?, rec, dir)?
        }
        "recur" => {
            let p: RecurParams = serde_json::from_value(params)?;
            exec_recur(&p, &system_from_record(&rec, &p.system)?, rec, dir)?
        }
        "lyapunov" => {
            let p: LyapunovParams = serde_json::from_value(params)?;
            exec_lyapunov(&p, &system_from_record(&rec, &p.system)?, rec, dir)?
        }
        other => return Err(Error::invalid(format!("unknown command {other:?} in manifest"))),
    };
    done.manifest.save(dir)?;
    let bad = original.mismatches(&done.manifest.outputs);
    if bad.is_empty() {
        println!(
            "replay of {}: {} outputs byte-identical",
            path.display(),
            done.manifest.outputs.len()
        );
        Ok(done.deferred.map(|e| e.exit_code()).unwrap_or(0))
    } else {
        for b in &bad {
            eprintln!("mismatch: {b}");
        }
        Ok(EXIT_REPLAY_MISMATCH)
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn system_from_source(args: &SystemArgs) -> Result<(QuadSystem, SystemRecord)> {
    let path = Path::new(&args.system);
    let text = if path.is_file() {
        fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else if let Some(text) = bundled::lookup(&args.system) {
        text.to_string()
    } else {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no such file and no bundled system of that name",
            ),
        ));
    };
    let rec = SystemRecord::new(&args.system, text);
    let sys = system_from_record(&rec, args)?;
    Ok((sys, rec))
}

fn system_from_record(rec: &SystemRecord, args: &SystemArgs) -> Result<QuadSystem> {
    rec.check()?;
    let ctx = PrecisionContext::new(args.bm)?;
    QuadSystem::from_json_str(&rec.definition, &rec.source, ctx)
}

fn parse_flag(ctx: PrecisionContext, flag: &str, text: &str) -> Result<Real> {
    ctx.parse(text).map_err(|e| Error::invalid(format!("--{flag}: {e}")))
}

fn base_config(args: &SystemArgs, sys: &QuadSystem, horizon: &str) -> Result<(Vec<Real>, IntegrationConfig)> {
    let ctx = sys.context();
    let x0 = ctx
        .parse_vector(&args.x0)
        .map_err(|e| Error::invalid(format!("--x0: {e}")))?;
    if x0.len() != sys.dim() {
        return Err(Error::invalid(format!(
            "--x0 has {} components, the system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    let cfg = IntegrationConfig::new(
        ctx,
        parse_flag(ctx, "T", horizon)?,
        parse_flag(ctx, "eps-pw", &args.eps_pw)?,
    )
    .with_delta(parse_flag(ctx, "delta", &args.delta)?)
    .with_max_degree(args.max_degree);
    cfg.validate()?;
    Ok((x0, cfg))
}

/// Integrates forward over `reach` (if positive) and returns the endpoint.
fn reach_attractor(sys: &QuadSystem, x0: Vec<Real>, cfg: &IntegrationConfig, reach: &Real) -> Result<Vec<Real>> {
    if reach.is_sign_negative() {
        return Err(Error::invalid("--reach-T must be non-negative"));
    }
    if reach.is_zero() {
        return Ok(x0);
    }
    let run = cfg.clone().with_horizon(reach.clone()).with_way(Way::Forward);
    Ok(integrate_summary(sys, &x0, &run)?.into_result()?.final_state)
}

fn dec(v: &Real) -> String {
    v.to_decimal()
}

fn decs(v: &[Real]) -> Vec<String> {
    v.iter().map(dec).collect()
}

fn csv_row(first: &str, values: &[Real]) -> String {
    let mut line = first.to_string();
    for v in values {
        line.push(',');
        line.push_str(&v.to_decimal());
    }
    line
}

fn state_header(lead: &str, prefix: &str, n: usize) -> String {
    let mut line = lead.to_string();
    for p in 1..=n {
        line.push_str(&format!(",{prefix}{p}"));
    }
    line
}

fn params_value<P: Serialize>(p: &P) -> Result<Value> {
    Ok(serde_json::to_value(p)?)
}

fn stats_json(s: &ArcStats) -> Value {
    json!({
        "N": s.steps,
        "n_max": s.n_max,
        "l_max": s.l_max,
        "t_l_max": dec(&s.t_at_nmax),
        "dt_max": dec(&s.dt_max),
        "d_max": s.d_max,
        "t_d_max": dec(&s.t_at_dtmax),
        "l_max_last": s.l_max_last,
        "t_l_max_last": dec(&s.t_at_nmax_last),
        "d_max_last": s.d_max_last,
        "t_d_max_last": dec(&s.t_at_dtmax_last),
    })
}

fn arc_json(a: &ArcSummary) -> Value {
    json!({
        "way": a.way.sign(),
        "horizon": dec(&a.horizon),
        "initial_state": decs(&a.initial_state),
        "final_time": dec(&a.final_time),
        "final_state": decs(&a.final_state),
        "stats": stats_json(&a.stats),
        "escape": a.escape.as_ref().map(|e| json!({
            "step": e.step,
            "time": dec(&e.time),
            "distance": dec(&e.distance),
            "advice": e.advice,
        })),
    })
}

fn error_json(e: &Error) -> Value {
    json!({ "passed": false, "error": e.to_string(), "exit_code": e.exit_code() })
}

fn check_json(c: &ConfigCheck) -> Value {
    json!({
        "name": c.name,
        "forward": c.forward,
        "backward": c.backward,
        "target": c.target,
        "relative_error": format!("{:e}", c.relative_error),
        "passed": c.passed,
    })
}

fn exec_integrate(p: &IntegrateParams, sys: &QuadSystem, rec: SystemRecord, dir: &Path) -> Result<Completed> {
    let (x0, cfg) = base_config(&p.system, sys, &p.horizon)?;
    let cfg = cfg.with_way(Way::from_sign(p.way)?);
    let ctx = sys.context();
    let mut manifest = RunManifest::new("integrate", params_value(p)?, rec);

    let mut traj = AtomicFile::create(dir.join("trajectory.csv"))?;
    traj.write_line(&state_header("t", "x", sys.dim()))?;
    let summary = match &p.grid {
        Some(g) => {
            let spacing = parse_flag(ctx, "grid", g)?;
            manifest.derived.insert(
                "grid_points".into(),
                (crate::integrator::grid_count(&cfg.horizon, &spacing)? + 1).to_string(),
            );
            integrate_on_grid(sys, &x0, &cfg, &spacing, |_, t, x| traj.write_line(&csv_row(&dec(t), x)))?
        }
        None => {
            let mut stepper = Stepper::new(sys, &x0, &cfg)?;
            traj.write_line(&csv_row("0", &x0.iter().map(|v| ctx.adopt(v)).collect::<Vec<_>>()))?;
            while stepper.advance()? {
                traj.write_line(&csv_row(&dec(&stepper.t_end()), &stepper.state()))?;
            }
            stepper.summary(&x0)
        }
    };
    manifest.outputs.push(traj.commit()?);

    let mut stats = arc_json(&summary);
    stats["manifest"] = json!(MANIFEST_FILE);
    manifest
        .outputs
        .push(crate::manifest::write_json(&dir.join("stats.json"), &stats)?);

    let mut text = format!(
        "t = {}\n",
        summary.final_time.to_decimal_digits(20)
    );
    for (p, v) in summary.final_state.iter().enumerate() {
        text.push_str(&format!("x{} = {}\n", p + 1, v.to_decimal_digits(20)));
    }
    text.push_str(&format!(
        "N = {}, n_max = {} (step {}), max |dt| = {} (step {})\n",
        summary.stats.steps,
        summary.stats.n_max,
        summary.stats.l_max,
        summary.stats.dt_max.to_decimal_digits(8),
        summary.stats.d_max
    ));
    Ok(Completed {
        manifest,
        summary: text,
        deferred: summary.escape.as_ref().map(|e| e.to_error()),
    })
}

fn exec_verify(p: &VerifyParams, sys: &QuadSystem, rec: SystemRecord, dir: &Path) -> Result<Completed> {
    let (x0, cfg) = base_config(&p.system, sys, &p.horizon)?;
    let ctx = sys.context();
    let eps_a = parse_flag(ctx, "eps-a", &p.eps_a)?;
    let eps_r = parse_flag(ctx, "eps-R", &p.eps_r)?;
    let rel_tol: f64 = p
        .rel_tol
        .trim()
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| Error::invalid(format!("--rel-tol: {:?} is not a non-negative number", p.rel_tol)))?;
    let mut manifest = RunManifest::new("verify", params_value(p)?, rec);
    let mut deferred: Option<Error> = None;
    let mut lines = String::new();

    let accuracy = match verify_forward(sys, &x0, &cfg, &eps_a) {
        Ok(c) => {
            lines.push_str(&format!(
                "accuracy: {} (delta_a = {}, eps_a = {})\n",
                verdict(c.passed),
                c.delta_a.to_decimal_digits(6),
                c.eps_a.to_decimal_digits(6)
            ));
            manifest.derived.insert("eps-pw-fine".into(), dec(&c.eps_pw_fine));
            json!({
                "passed": c.passed,
                "delta_a": dec(&c.delta_a),
                "eps_a": dec(&c.eps_a),
                "eps_pw": dec(&c.eps_pw),
                "eps_pw_fine": dec(&c.eps_pw_fine),
                "samples": c.samples,
            })
        }
        Err(e) => {
            lines.push_str(&format!("accuracy: error: {e}\n"));
            let v = error_json(&e);
            deferred.get_or_insert(e);
            v
        }
    };
    if let Ok(fine) = tightened_tolerance(&cfg) {
        manifest.derived.insert("eps-pw-fine".into(), dec(&fine));
    }

    let (round_trip, configuration) = match verify_backward(sys, &x0, &cfg, &eps_r) {
        Ok(b) => {
            lines.push_str(&format!(
                "round trip: {} (return distance = {}, eps_R = {})\n",
                verdict(b.passed),
                b.return_distance.to_decimal_digits(6),
                b.eps_r.to_decimal_digits(6)
            ));
            let report = compare_configurations(&b.forward.stats, &b.backward.stats, &cfg.horizon, rel_tol);
            for c in &report.checks {
                lines.push_str(&format!(
                    "configuration {}: {} (forward {}, backward {}, target {})\n",
                    c.name,
                    verdict(c.passed),
                    c.forward,
                    c.backward,
                    c.target
                ));
            }
            let rt = json!({
                "passed": b.passed,
                "return_distance": dec(&b.return_distance),
                "eps_R": dec(&b.eps_r),
                "forward": arc_json(&b.forward),
                "backward": arc_json(&b.backward),
            });
            let conf = json!({
                "passed": report.passed,
                "rel_tol": format!("{}", report.rel_tol),
                "checks": report.checks.iter().map(check_json).collect::<Vec<_>>(),
                "informational": check_json(&report.informational),
            });
            (rt, conf)
        }
        Err(e) => {
            lines.push_str(&format!("round trip: error: {e}\n"));
            let v = error_json(&e);
            deferred.get_or_insert(e);
            (v, json!({ "passed": false, "skipped": "no round trip to compare" }))
        }
    };
    let passed = [&accuracy, &round_trip, &configuration]
        .iter()
        .all(|v| v["passed"] == json!(true));
    lines.push_str(&format!("overall: {}\n", verdict(passed)));
    let report = json!({
        "manifest": MANIFEST_FILE,
        "horizon": dec(&cfg.horizon),
        "accuracy": accuracy,
        "round_trip": round_trip,
        "configuration": configuration,
        "passed": passed,
    });
    manifest
        .outputs
        .push(crate::manifest::write_json(&dir.join("verify.json"), &report)?);
    Ok(Completed {
        manifest,
        summary: lines,
        deferred,
    })
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "FAIL"
    }
}

fn exec_recur(p: &RecurParams, sys: &QuadSystem, rec: SystemRecord, dir: &Path) -> Result<Completed> {
    let (x0, cfg) = base_config(&p.system, sys, "0")?;
    let ctx = sys.context();
    let reach = parse_flag(ctx, "reach-T", &p.reach_t)?;
    let scan = RecurrenceScanConfig::new(parse_flag(ctx, "dtP", &p.dt_p)?, parse_flag(ctx, "TP", &p.t_p)?)
        .with_threshold(parse_flag(ctx, "threshold", &p.threshold)?);
    let n_p = scan.grid_len()?;
    let mut manifest = RunManifest::new("recur", params_value(p)?, rec);
    manifest.derived.insert("N_P".into(), n_p.to_string());

    let start = reach_attractor(sys, x0, &cfg, &reach)?;
    let stats: ReturnStats = if p.refine {
        let opts = RefineOptions {
            factor: p.refine_factor,
            max_levels: p.refine_levels,
            min_dt: p
                .refine_min_dt
                .as_deref()
                .map(|t| parse_flag(ctx, "refine-min-dt", t))
                .transpose()?,
            ..RefineOptions::default()
        };
        refine_scan(sys, &start, &cfg, &scan, &opts)?
    } else {
        return_statistics(scan_trajectory(sys, &start, &cfg, &scan)?)
    };

    let mut csv = AtomicFile::create(dir.join("recurrences.csv"))?;
    csv.write_line("k,t,d")?;
    for e in &stats.events {
        csv.write_line(&format!("{},{},{}", e.k_star, dec(&e.t_star), dec(&e.d_star)))?;
    }
    manifest.outputs.push(csv.commit()?);

    let opt = |v: &Option<Real>| v.as_ref().map(dec);
    let report = json!({
        "manifest": MANIFEST_FILE,
        "start_state": decs(&start),
        "dt_P": dec(&scan.dt_p),
        "T_P": dec(&scan.t_p),
        "threshold": dec(&scan.threshold),
        "events": stats.events.len(),
        "intervals": decs(&stats.intervals),
        "mean_interval": opt(&stats.mean_interval),
        "stddev_interval": opt(&stats.stddev_interval),
        "coefficient_of_variation": stats.coefficient_of_variation().map(|c| format!("{c:e}")),
        "period_estimate": opt(&stats.period_estimate),
        "min_d_star": stats.min_d_star().map(dec),
        "refinement": stats.refinement.iter().map(|l| json!({
            "dt_P": dec(&l.dt_p),
            "events": l.events,
            "min_d_star": l.min_d_star.as_ref().map(dec),
        })).collect::<Vec<_>>(),
        "floor_reached": stats.floor_reached,
        "note": stats.note,
    });
    manifest.outputs.push(crate::manifest::write_json(
        &dir.join("recurrence_stats.json"),
        &report,
    )?);

    let mut text = format!("{} recurrences", stats.events.len());
    match &stats.period_estimate {
        Some(t) => text.push_str(&format!(", period estimate {}\n", t.to_decimal_digits(8))),
        None => text.push('\n'),
    }
    if let Some(note) = &stats.note {
        text.push_str(&format!("note: {note}\n"));
    }
    Ok(Completed {
        manifest,
        summary: text,
        deferred: None,
    })
}

fn exec_lyapunov(p: &LyapunovParams, sys: &QuadSystem, rec: SystemRecord, dir: &Path) -> Result<Completed> {
    let (x0, cfg) = base_config(&p.system, sys, "0")?;
    let ctx = sys.context();
    let reach = parse_flag(ctx, "reach-T", &p.reach_t)?;
    let mut bcfg = BenettinConfig::new(cfg.clone(), parse_flag(ctx, "T", &p.horizon)?, p.macro_steps, p.seed);
    bcfg.parallel = p.parallel;
    bcfg.validate()?;
    let mut manifest = RunManifest::new("lyapunov", params_value(p)?, rec);
    manifest.derived.insert("tau_M".into(), dec(&bcfg.tau_m()));

    let start = reach_attractor(sys, x0, &cfg, &reach)?;
    let mut trace = AtomicFile::create(dir.join("lyapunov_trace.csv"))?;
    trace.write_line(&state_header("k,t", "LE", sys.dim()))?;
    let mut write_err: Option<Error> = None;
    let spectrum = lyapunov_spectrum_with(sys, &start, &bcfg, |row| {
        if write_err.is_none() {
            let line = csv_row(&format!("{},{}", row.k, dec(&row.t)), &row.running);
            if let Err(e) = trace.write_line(&line) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    manifest.outputs.push(trace.commit()?);

    let sorted = spectrum.sorted();
    let report = json!({
        "manifest": MANIFEST_FILE,
        "exponents": decs(&spectrum.exponents),
        "sorted": decs(&sorted),
        "sum": dec(&spectrum.sum()),
        "T": dec(&bcfg.horizon),
        "M": spectrum.macro_steps,
        "tau_M": dec(&spectrum.tau_m),
        "seed": spectrum.seed,
        "start_state": decs(&start),
        "final_state": decs(&spectrum.final_state),
        "y_block_spread": dec(&spectrum.y_block_spread),
        "max_orthonormality_error": dec(&spectrum.max_orthonormality_error),
    });
    manifest
        .outputs
        .push(crate::manifest::write_json(&dir.join("spectrum.json"), &report)?);

    let mut text = String::new();
    for (p, v) in spectrum.exponents.iter().enumerate() {
        text.push_str(&format!("LE{} = {}\n", p + 1, v.to_decimal_digits(10)));
    }
    text.push_str(&format!("sum = {}\n", spectrum.sum().to_decimal_digits(10)));
    Ok(Completed {
        manifest,
        summary: text,
        deferred: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("quadflow").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_round_trip_through_params_json() {
        let cli = parse(&[
            "integrate", "--system", "dong2019.json", "--x0", "10,-27.2011,10,10", "--T", "15",
            "--bm", "160", "--eps-pw", "1e-22", "--way", "-1",
        ]);
        let Command::Integrate { params, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(params.way, -1);
        assert_eq!(params.system.bm, 160);
        let v = params_value(&params).unwrap();
        assert_eq!(v["T"], "15");
        assert_eq!(v["eps-pw"], "1e-22");
        assert_eq!(v["delta"], DEFAULT_DELTA);
        let back: IntegrateParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn lyapunov_and_recur_params_round_trip() {
        let cli = parse(&[
            "lyapunov", "--system", "dong2019.json", "--x0", "1,2,3,4", "--T", "100", "--M", "20000",
            "--seed", "7",
        ]);
        let Command::Lyapunov { params, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        let v = params_value(&params).unwrap();
        assert_eq!(v["M"], 20000);
        assert_eq!(v["reach-T"], "0");
        assert_eq!(serde_json::from_value::<LyapunovParams>(v).unwrap(), params);

        let cli = parse(&[
            "recur", "--system", "x.json", "--x0", "1", "--TP", "10", "--dtP", "1e-4", "--refine",
        ]);
        let Command::Recur { params, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        let v = params_value(&params).unwrap();
        assert_eq!(v["dtP"], "1e-4");
        assert_eq!(v["refine"], true);
        assert_eq!(serde_json::from_value::<RecurParams>(v).unwrap(), params);
    }

    #[test]
    fn way_outside_plus_minus_one_is_rejected() {
        let r = Cli::try_parse_from([
            "quadflow", "integrate", "--system", "s", "--x0", "1", "--T", "1", "--way", "2",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn csv_helpers() {
        assert_eq!(state_header("k,t", "LE", 3), "k,t,LE1,LE2,LE3");
        let ctx = PrecisionContext::default();
        let half = ctx.parse("0.5").unwrap();
        assert_eq!(csv_row("0", &[half.clone(), ctx.zero()]), format!("0,{},0", half.to_decimal()));
    }

    #[test]
    fn decimal_strings_round_trip() {
        let ctx = PrecisionContext::default();
        let third = &ctx.one() / &ctx.from_i64(3);
        for v in [third.clone(), -&third, ctx.pow10(-30), ctx.from_i64(12345)] {
            assert_eq!(ctx.parse(&dec(&v)).unwrap(), v);
        }
    }
}
