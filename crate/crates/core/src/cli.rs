//! The `hmflow` command line: `run`, `constants`, `verify` and `sphere-ode`.
//!
//! Exit status: 0 success, 1 failed verification checks, 2 step or solver
//! failure, 3 configuration, usage or I/O error.
//!
//! # Run configuration file
//!
//! `run --config FILE` reads flat `key = value` lines; `#` starts a comment.
//! Keys: `n`, `m`, `beta`, `init` (`sphere:R`, `ellipsoid:a,b` or
//! `file:PATH`), `cells`, `t_end`, `cfl`, `volume_preserving`,
//! `volume_projection`, `cadence`, `snapshot_every`, `dt`, `stop_q_defect`,
//! `seed`. Command-line flags override file values. The resolved configuration
//! is written back as `config.txt` in the output directory with 17 significant
//! digits, so it can be fed to `--config` again.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::constants::{compute_c_p, SamplingConfig};
use crate::error::{Error, Result};
use crate::flow::{self, InitialProfile, RunConfig, RunOutcome};
use crate::symfun::FlowParams;
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_STEP_FAILURE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

pub const SEED_ENV: &str = "HMFLOW_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "hmflow", version, about = "Volume-preserving H_m^beta flow of hypersurfaces of revolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the flow and write diagnostics.csv, snapshots and a summary.
    Run(RunArgs),
    /// Compute the pinching constants for (n, m, beta).
    Constants(ConstantsArgs),
    /// Run a property suite: symfun, constants, geometry or flow-short.
    Verify(VerifyArgs),
    /// Integrate R' = -R^{-m beta} and compare with the closed form.
    SphereOde(SphereOdeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// sphere:R, ellipsoid:a,b or file:PATH
    #[arg(long)]
    pub init: Option<String>,
    /// Number of angular cells N (even).
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Drop the averaged term (h = 0).
    #[arg(long)]
    pub h_zero: bool,
    /// Rescale to the initial volume after every step.
    #[arg(long)]
    pub volume_projection: bool,
    /// Time between diagnostics records.
    #[arg(long)]
    pub cadence: Option<f64>,
    /// Write a snapshot every this many records (0 = final only).
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Fixed time step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Stop once q_defect drops below this value.
    #[arg(long)]
    pub stop_q_defect: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist unless --force.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub suite: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SphereOdeArgs {
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub dt: f64,
    /// Emit a row every this many steps.
    #[arg(long, default_value_t = 1000)]
    pub every: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seed from the environment, falling back to [`DEFAULT_SEED`].
pub fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Parse `sphere:R`, `ellipsoid:a,b` or `file:PATH`.
pub fn parse_init(spec: &str) -> Result<InitialProfile> {
    let bad = || {
        Error::Config(format!(
            "bad initial profile `{spec}` (expected sphere:R, ellipsoid:a,b or file:PATH)"
        ))
    };
    let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    match kind.trim() {
        "sphere" => Ok(InitialProfile::Sphere(num(rest)?)),
        "ellipsoid" => {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            Ok(InitialProfile::Ellipsoid(num(a)?, num(b)?))
        }
        "file" => Ok(InitialProfile::File(PathBuf::from(rest.trim()))),
        _ => Err(bad()),
    }
}

pub fn format_init(init: &InitialProfile) -> String {
    match init {
        InitialProfile::Sphere(r) => format!("sphere:{r:.16e}"),
        InitialProfile::Ellipsoid(a, b) => format!("ellipsoid:{a:.16e},{b:.16e}"),
        InitialProfile::File(p) => format!("file:{}", p.display()),
    }
}

/// Parse the flat `key = value` format into a map, rejecting unknown keys.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    const KEYS: [&str; 14] = [
        "n",
        "m",
        "beta",
        "init",
        "cells",
        "t_end",
        "cfl",
        "volume_preserving",
        "volume_projection",
        "cadence",
        "snapshot_every",
        "dt",
        "stop_q_defect",
        "seed",
    ];
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{raw}`"),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("unknown key `{k}`"),
            });
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        })
        .transpose()
}

/// Merge file values and flags into a validated [`RunConfig`].
pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => parse_config_text(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let missing = |k: &str| Error::Config(format!("missing required setting `{k}` (flag --{})", k.replace('_', "-")));
    let n = args.n.or(get(&file, "n")?).unwrap_or(2);
    let m = args.m.or(get(&file, "m")?).unwrap_or(1);
    let beta = args.beta.or(get(&file, "beta")?).unwrap_or(2.0);
    let params = FlowParams::new(n, m, beta).map_err(|e| Error::Config(e.to_string()))?;
    if !params.is_superlinear() {
        return Err(Error::Config(format!(
            "beta must exceed 1/m, got beta = {beta} with m = {m}"
        )));
    }
    let init = match args.init.clone().or_else(|| file.get("init").cloned()) {
        Some(s) => parse_init(&s)?,
        None => InitialProfile::Sphere(1.0),
    };
    let t_end = args.t_end.or(get(&file, "t_end")?).ok_or_else(|| missing("t_end"))?;
    let mut cfg = RunConfig::new(params, init, t_end);
    if let Some(v) = args.cells.or(get(&file, "cells")?) {
        cfg.cells = v;
    }
    if let Some(v) = args.cfl.or(get(&file, "cfl")?) {
        cfg.cfl = v;
    }
    let file_vp: Option<bool> = get(&file, "volume_preserving")?;
    cfg.volume_preserving = !args.h_zero && file_vp.unwrap_or(true);
    cfg.volume_projection = args.volume_projection || get(&file, "volume_projection")?.unwrap_or(false);
    if let Some(v) = args.cadence.or(get(&file, "cadence")?) {
        cfg.cadence = v;
    } else {
        cfg.cadence = (t_end / 100.0).min(0.1);
    }
    if let Some(v) = args.snapshot_every.or(get(&file, "snapshot_every")?) {
        cfg.snapshot_every = v;
    }
    cfg.dt = args.dt.or(get(&file, "dt")?);
    cfg.stop_q_defect = args.stop_q_defect.or(get(&file, "stop_q_defect")?);
    cfg.seed = match args.seed.or(get(&file, "seed")?) {
        Some(s) => s,
        None => env_seed()?,
    };
    cfg.output_dir = Some(args.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a run configuration in the config-file format.
pub fn run_config_text(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    line("n", cfg.params.n.to_string());
    line("m", cfg.params.m.to_string());
    line("beta", format!("{:.16e}", cfg.params.beta));
    line("init", format_init(&cfg.init));
    line("cells", cfg.cells.to_string());
    line("t_end", format!("{:.16e}", cfg.t_end));
    line("cfl", format!("{:.16e}", cfg.cfl));
    line("volume_preserving", cfg.volume_preserving.to_string());
    line("volume_projection", cfg.volume_projection.to_string());
    line("cadence", format!("{:.16e}", cfg.cadence));
    line("snapshot_every", cfg.snapshot_every.to_string());
    if let Some(dt) = cfg.dt {
        line("dt", format!("{dt:.16e}"));
    }
    if let Some(q) = cfg.stop_q_defect {
        line("stop_q_defect", format!("{q:.16e}"));
    }
    line("seed", cfg.seed.to_string());
    s
}

/// Key-value summary of a finished run.
pub fn run_summary(cfg: &RunConfig, out: &RunOutcome) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("status", if out.failure.is_some() { "step_failure".into() } else { "ok".into() });
    if let Some(e) = &out.failure {
        kv("failure", e.to_string());
        if let Some(node) = e.node() {
            kv("failure_node", node.to_string());
        }
    }
    kv("steps", out.steps.to_string());
    kv("t_final", format!("{:.16e}", out.final_state.t()));
    kv("records", out.records.len().to_string());
    kv("stopped_early", out.stopped_early.to_string());
    kv("max_volume_drift", format!("{:.16e}", out.max_volume_drift()));
    kv("axis_drift", format!("{:.16e}", out.axis_drift));
    if let Some(p) = &out.pinching {
        kv("C_p", format!("{:.16e}", p.c_p));
        kv("eps_star", format!("{:.16e}", p.eps_star));
        kv("delta", format!("{:.16e}", p.delta_schulze));
    }
    if let Some(ok) = out.initial_pinched {
        kv("initial_pinched", ok.to_string());
    }
    let q = flow::monitor_q_min(&out.records, cfg.params.n, out.final_state.profile().cells());
    kv("q_min_calibration", format!("{:.16e}", q.calibration));
    kv("q_min_violations", q.violations.len().to_string());
    let b = flow::monitor_bounds(&out.records, out.pinching.as_ref());
    kv("sup_Hm", format!("{:.16e}", b.sup_hm));
    kv("inf_h", format!("{:.16e}", b.inf_h));
    kv("inf_rho", format!("{:.16e}", b.inf_rho));
    kv("sup_D", format!("{:.16e}", b.sup_outer));
    kv("sup_D_over_rho", format!("{:.16e}", b.sup_ratio));
    kv("H_min_integral", format!("{:.16e}", b.mean_min_integral));
    kv("log_H_min_slope", format!("{:.16e}", b.log_mean_min_slope));
    match flow::fit_convergence_rate(&out.records, out.pinching.as_ref()) {
        Some(fit) => {
            kv("convergence_rate", format!("{:.16e}", fit.rate));
            kv("convergence_r_squared", format!("{:.16e}", fit.r_squared));
            kv("fit_window", format!("{:.6e},{:.6e}", fit.t_start, fit.t_stop));
            if let Some(bf) = fit.decay_floor {
                kv("decay_floor", format!("{bf:.16e}"));
            }
        }
        None => kv("convergence_rate", "not_applicable".into()),
    }
    s
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        return Err(Error::Config(format!(
            "output directory {} exists (pass --force to reuse it)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::StarShapeLost { .. } | Error::ConeExit { .. } | Error::NonFinite { .. } => {
            EXIT_STEP_FAILURE
        }
        _ => EXIT_CONFIG,
    }
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = (|| -> Result<i32> {
        let cfg = resolve_run_config(args)?;
        prepare_out_dir(&args.out, args.force)?;
        fs::write(args.out.join("config.txt"), run_config_text(&cfg))?;
        let outcome = flow::run(&cfg)?;
        let summary = run_summary(&cfg, &outcome);
        fs::write(args.out.join("summary.txt"), &summary)?;
        stdout.write_all(summary.as_bytes())?;
        Ok(if outcome.failure.is_some() { EXIT_STEP_FAILURE } else { EXIT_OK })
    })();
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {e}");
        status_of(&e)
    })
}

pub fn cmd_constants(args: &ConstantsArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = (|| -> Result<i32> {
        let p = FlowParams::new(args.n, args.m, args.beta).map_err(|e| Error::Config(e.to_string()))?;
        if !p.is_superlinear() {
            return Err(Error::Config(format!(
                "beta must exceed 1/m, got beta = {} with m = {}",
                args.beta, args.m
            )));
        }
        let seed = match args.seed {
            Some(s) => s,
            None => env_seed()?,
        };
        let report = compute_c_p(&p, &SamplingConfig::with_seed(seed))
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let text = report.to_string();
        if let Some(path) = &args.out {
            fs::write(path, &text)?;
        }
        stdout.write_all(text.as_bytes())?;
        Ok(EXIT_OK)
    })();
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {e}");
        status_of(&e)
    })
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = (|| -> Result<i32> {
        let suite: Suite = args.suite.parse()?;
        let seed = match args.seed {
            Some(s) => s,
            None => env_seed()?,
        };
        let report = run_suite(suite, seed).map_err(|e| match e {
            Error::Config(_) | Error::Io(_) => e,
            other => Error::Numerical(other.to_string()),
        })?;
        stdout.write_all(report.to_string().as_bytes())?;
        Ok(if report.passed() { EXIT_OK } else { EXIT_CHECKS_FAILED })
    })();
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {e}");
        status_of(&e)
    })
}

pub fn cmd_sphere_ode(args: &SphereOdeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = (|| -> Result<i32> {
        let p = FlowParams::new(args.n, args.m, args.beta).map_err(|e| Error::Config(e.to_string()))?;
        let rows = flow::sphere_ode(&p, args.r0, args.t_end, args.dt, args.every)?;
        let mut csv = String::from("t,R_numeric,R_exact\n");
        for r in &rows {
            csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", r.t, r.numeric, r.exact));
        }
        let gap = rows.iter().map(|r| r.relative_gap()).fold(0.0, f64::max);
        let gap_line = format!("max_relative_gap = {gap:.16e}\n");
        match &args.out {
            Some(path) => {
                fs::write(path, &csv)?;
                stdout.write_all(gap_line.as_bytes())?;
            }
            None => {
                stdout.write_all(csv.as_bytes())?;
                stderr.write_all(gap_line.as_bytes())?;
            }
        }
        Ok(EXIT_OK)
    })();
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {e}");
        status_of(&e)
    })
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(a, stdout, stderr),
        Command::Constants(a) => cmd_constants(a, stdout, stderr),
        Command::Verify(a) => cmd_verify(a, stdout, stderr),
        Command::SphereOde(a) => cmd_sphere_ode(a, stdout, stderr),
    }
}

/// Parse arguments and dispatch; usage errors map to status 3.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, stdout, stderr),
        Err(e) if e.use_stderr() => {
            let _ = write!(stderr, "{}", e.render());
            EXIT_CONFIG
        }
        Err(e) => {
            let _ = write!(stdout, "{}", e.render());
            EXIT_OK
        }
    }
}
