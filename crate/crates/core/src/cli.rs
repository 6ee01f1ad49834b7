//! Command-line front end. Each command returns the process exit code:
//! 0 on success, 1 for configuration or usage errors, 2 when a run diverged
//! or a verification check failed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::casestudies::{CaseStudy, LiftReading};
use crate::config::{build_system, PolicyName, PolicySpec, RunConfig, SystemSpec};
use crate::error::{Error, Result};
use crate::linbound::{Ball, MaximizeOptions, NormMaximizationResult, StateRegion, SublevelSet, TauStar};
use crate::polyhom::homogenize;
use crate::simloop::{self, boundary_ics, SimTrace};
use crate::triggers::{PolicyKind, TriggerPolicy};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "selftrig", version, about = "Self-triggered sampling for nonlinear control loops")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one closed loop from a JSON config.
    Run(RunArgs),
    /// Mean executions of periodic and self-triggered sampling over boundary initial conditions.
    Sweep(RunArgs),
    /// Jacobian maxima and the trigger time bound of a system.
    TauStar(TauStarArgs),
    /// Property checks for a system.
    Verify(SystemArgs),
    /// Print the homogenized closed loop.
    Homogenize(SystemArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Echo the fully resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Builtin id (jet-engine, rigid-body) or a JSON system definition.
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TauStarArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// `omega`, `ball:R` or `level:L`.
    #[arg(long, default_value = "omega")]
    pub region: String,
}

/// Parse `args` (program name first) and run; usage errors print and give 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        // Fails only when a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::TauStar(a) => cmd_tau_star(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Homogenize(a) => cmd_homogenize(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

/// A builtin id, or a path to a JSON system spec.
pub fn parse_system_arg(arg: &str) -> Result<SystemSpec> {
    let p = Path::new(arg);
    if p.is_file() {
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{arg}: {e}")))
    } else {
        Ok(SystemSpec::Builtin(arg.to_string()))
    }
}

fn check_sigma(sigma: Option<f64>) -> Result<()> {
    match sigma {
        Some(s) if !(s > 0.0 && s < 1.0) => Err(Error::Config(format!("sigma must lie in (0, 1), got {s}"))),
        _ => Ok(()),
    }
}

/// Turn a policy spec into a concrete policy for `cs`.
pub fn resolve_policy(cs: &CaseStudy, spec: &PolicySpec, opts: &MaximizeOptions) -> Result<TriggerPolicy> {
    let bound = |cs: &CaseStudy| match spec.tau_bound {
        Some(b) => Ok(b),
        None => cs.default_tau_bound(opts),
    };
    let policy = match spec.kind {
        PolicyName::SelfTrigger => cs.self_trigger_policy(bound(cs)?)?,
        PolicyName::Periodic => match spec.period {
            Some(t) => TriggerPolicy::periodic(t)?,
            None => TriggerPolicy::periodic(cs.default_period(bound(cs)?, opts)?)?,
        },
        PolicyName::EventOracle => {
            TriggerPolicy::new(PolicyKind::EventOracle { c: cs.c(), horizon: spec.tau_max })?
        }
    };
    policy.with_caps(spec.tau_min, spec.tau_max)
}

fn output_sink(path: &Option<String>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(fs::File::create(p).map_err(|e| Error::Config(format!("{p}: {e}")))?)),
        None => Ok(Box::new(std::io::stdout())),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Config(e.to_string())
}

/// CSV with header `t,x1..xn,u1..um,V,exec`.
pub fn write_trace(out: &mut dyn Write, trace: &SimTrace, n: usize, m: usize) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("V".into());
    header.push("exec".into());
    writeln!(out, "{}", header.join(","))?;
    for r in &trace.rows {
        let mut cells = vec![format!("{}", r.t)];
        cells.extend(r.x.iter().map(|v| format!("{v}")));
        cells.extend(r.u.iter().map(|v| format!("{v}")));
        cells.push(format!("{}", r.v));
        cells.push(if r.exec { "1".into() } else { "0".into() });
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = read_config(&args.config)?;
    if args.print_config {
        println!("{}", cfg.canonical_json());
        return Ok(EXIT_OK);
    }
    let cs = build_system(&cfg.system, cfg.sigma)?;
    let opts = MaximizeOptions::default();
    let policy = resolve_policy(&cs, &cfg.policy, &opts)?;
    let x0 = cfg.sim.x0.clone().unwrap_or_else(|| cs.default_x0());
    if x0.len() != cs.dim() {
        return Err(Error::Config(format!("x0 has {} entries, system has {}", x0.len(), cs.dim())));
    }
    let trace = simloop::run(&cs.model, &policy, &cfg.sim_config(x0))?;
    if let Some(p) = &cfg.output.trace {
        let mut f = output_sink(&Some(p.clone()))?;
        write_trace(f.as_mut(), &trace, cs.dim(), cs.model.n_inputs).map_err(io_err)?;
    }
    let m = simloop::metrics(&trace);
    let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
    let mut out = output_sink(&cfg.output.metrics)?;
    writeln!(out, "{json}").map_err(io_err)?;
    if let Some(why) = &trace.diverged {
        eprintln!("run diverged: {why}");
        return Ok(EXIT_FAILED);
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(args: &RunArgs) -> Result<i32> {
    let cfg = read_config(&args.config)?;
    if args.print_config {
        println!("{}", cfg.canonical_json());
        return Ok(EXIT_OK);
    }
    let sw = cfg.sweep.clone().unwrap_or_default();
    let sigmas = if sw.sigmas.is_empty() { vec![cfg.sigma] } else { sw.sigmas.iter().map(|s| Some(*s)).collect() };
    let opts = MaximizeOptions::default();
    let mut out = output_sink(&cfg.output.summary)?;
    writeln!(out, "sigma,periodic,self-trigger").map_err(io_err)?;
    let mut failed = false;
    for sigma in sigmas {
        let cs = build_system(&cfg.system, sigma)?;
        let bound = match cfg.policy.tau_bound {
            Some(b) => b,
            None => cs.default_tau_bound(&opts)?,
        };
        let spec = |kind| PolicySpec { kind, tau_bound: Some(bound), ..cfg.policy.clone() };
        let periodic = resolve_policy(&cs, &spec(PolicyName::Periodic), &opts)?;
        let selftrig = resolve_policy(&cs, &spec(PolicyName::SelfTrigger), &opts)?;
        let ics = boundary_ics(cs.dim(), sw.radius.unwrap_or(cs.operation_radius), sw.n_ic);
        let base = cfg.sim_config(ics[0].clone());
        let rows = simloop::sweep(&cs.model, &[periodic, selftrig], &ics, &base)?;
        failed |= rows.iter().any(|r| r.diverged > 0);
        writeln!(out, "{},{},{}", cs.sigma(), rows[0].mean_executions, rows[1].mean_executions).map_err(io_err)?;
    }
    Ok(if failed { EXIT_FAILED } else { EXIT_OK })
}

/// Region override for `tau-star`.
pub fn parse_region(cs: &CaseStudy, spec: &str) -> Result<Box<dyn StateRegion>> {
    let bad = || Error::Config(format!("region must be omega, ball:R or level:L, got {spec:?}"));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    match spec.split_once(':') {
        None if spec == "omega" => Ok(Box::new(cs.omega()?)),
        Some(("ball", r)) => Ok(Box::new(Ball::new(cs.dim(), num(r)?)?)),
        Some(("level", l)) => Ok(Box::new(SublevelSet::new(cs.certificate.v.clone(), num(l)?)?)),
        _ => Err(bad()),
    }
}

fn print_bound(label: &str, res: &NormMaximizationResult, tau: &TauStar) {
    println!("{label} = {:.6e} ({:?}, certified: {})", tau.value, tau.method, res.certified);
    println!("  region: {}", res.region);
    println!("  H_max = {:.6e} at x = {:?}, e = {:?}", res.h_max, res.x_a, res.e_a);
    println!("  G_max = {:.6e} at x = {:?}, e = {:?}", res.g_max, res.x_b, res.e_b);
}

fn cmd_tau_star(args: &TauStarArgs) -> Result<i32> {
    check_sigma(args.system.sigma)?;
    let cs = build_system(&parse_system_arg(&args.system.system)?, args.system.sigma)?;
    let opts = MaximizeOptions::default();
    let region = parse_region(&cs, &args.region)?;
    println!("system {} (n = {}, sigma = {}, c = {:.6})", cs.id, cs.dim(), cs.sigma(), cs.c());
    let (res, tau) = cs.tau_star_over(region.as_ref(), &opts)?;
    print_bound("tau*", &res, &tau);
    if cs.homogenized.is_some() {
        for reading in [LiftReading::LiteralScaled, LiftReading::LiteralUnscaled, LiftReading::SphereCap] {
            let (res, tau) = cs.tau_tilde_star(reading, &opts)?;
            print_bound(&format!("tau~* [{reading:?}]"), &res, &tau);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: &SystemArgs) -> Result<i32> {
    check_sigma(args.sigma)?;
    let cs = build_system(&parse_system_arg(&args.system)?, args.sigma)?;
    let checks = verify::suite(&cs, &MaximizeOptions::default())?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_FAILED })
}

fn cmd_homogenize(args: &SystemArgs) -> Result<i32> {
    check_sigma(args.sigma)?;
    let cs = build_system(&parse_system_arg(&args.system)?, args.sigma)?;
    let hs = match &cs.homogenized {
        Some(hs) => hs.clone(),
        None => homogenize(cs.closed_loop.as_ref())?,
    };
    println!("l = {}", hs.l());
    println!("{}", hs.describe());
    Ok(EXIT_OK)
}
