mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use tsfb_core::export::{gains_csv, sweep_csv, trajectory_csv, write_atomic};
use tsfb_core::plant::{
    check_rate, decay_fit, discretize_on_scale, final_value, settling_time, simulate, sweep,
    Reference, SweepConfig,
};
use tsfb_core::stabilizer::{certify, gain_schedule, GainSchedule};
use tsfb_core::verify::{self, Suite, VerifyOptions};

use config::{RunConfig, RunFlags};

/// State-feedback stabilization of sampled systems on time scales.
#[derive(Debug, Parser)]
#[command(name = "tsfb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the gain schedule and its stability certificate
    Gain(RunFlags),
    /// Simulate the closed-loop step response
    Simulate(RunFlags),
    /// Settling time and peak gain over a (k, alpha) grid
    Sweep(SweepArgs),
    /// Run the self-check suites
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    alpha_start: Option<f64>,
    #[arg(long)]
    alpha_stop: Option<f64>,
    #[arg(long)]
    alpha_step: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write verify.json here
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Scale every generalized exponential of the calculus suite by 1 + eps
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_exp: f64,
}

fn output_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    Ok(cfg.output_dir.join(name))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    ts: tsfb_core::timescale::TimeScale,
    sys: tsfb_core::stabilizer::ControlSystem,
    n: usize,
    opts: tsfb_core::stabilizer::GramianOptions,
}

fn prepare(flags: &RunFlags) -> Result<Prepared> {
    let cfg = RunConfig::from_flags(flags)?;
    let ts = cfg.time_scale()?;
    let plant = cfg.plant()?;
    let sys = discretize_on_scale(&plant, &ts)?;
    let opts = cfg.gramian_options(&ts)?;
    Ok(Prepared {
        n: plant.n(),
        cfg,
        ts,
        sys,
        opts,
    })
}

fn schedule(p: &Prepared) -> Result<GainSchedule> {
    let spec = p.cfg.window_spec(&p.ts)?;
    let (t0, tf) = p.cfg.range(&p.ts);
    let s = gain_schedule(&p.sys, &p.ts, t0, tf, p.cfg.alpha, &spec, &p.opts)?;
    if s.is_empty() {
        bail!("no node of [{t0}, {tf}] has its controllability window inside the scale");
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(s)
}

fn cmd_gain(flags: &RunFlags) -> Result<u8> {
    let p = prepare(flags)?;
    let s = schedule(&p)?;
    let cert = certify(&p.sys, &s, &p.ts, &p.opts)?;
    write(&output_path(&p.cfg, "gains.csv")?, &gains_csv(&s))?;
    write(&output_path(&p.cfg, "certificate.json")?, &cert.to_json())?;
    println!(
        "{} gains, max |K| = {:.6e}, certificate {} (nu = {:.6e}, floor = {:.6e})",
        s.len(),
        s.max_gain_norm(),
        if cert.pass { "passed" } else { "failed" },
        cert.nu,
        cert.nu_floor
    );
    if let Some(d) = &cert.diagnostic {
        eprintln!("certificate: {d}");
    }
    Ok(if cert.pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct Metrics {
    t0: f64,
    t_end: f64,
    samples: usize,
    /// Seconds from `t0` until the first state stays in the band.
    settling_time: Option<f64>,
    gamma: Option<f64>,
    final_value: f64,
    final_state: Vec<f64>,
    max_gain_norm: f64,
}

fn cmd_simulate(flags: &RunFlags) -> Result<u8> {
    let p = prepare(flags)?;
    check_rate(&p.ts, p.cfg.alpha)?;
    let s = schedule(&p)?;
    let t0 = p.cfg.t0.unwrap_or(p.ts.min());
    let tf = p
        .cfg
        .tf
        .unwrap_or(s.coverage_end().expect("nonempty schedule"));
    let x0 = DVector::from_vec(p.cfg.x0(p.n)?);
    let reference = Reference::Step {
        amplitude: p.cfg.reference.amplitude,
        at: t0,
    };
    let sim = simulate(&p.sys, &p.ts, t0, tf, &x0, &s, &reference, p.opts.h)?;
    let settle = settling_time(&sim, 0, p.cfg.band)?;
    let gamma = if x0.norm() > 0.0 {
        Some(decay_fit(&sim, p.cfg.alpha, &p.ts)?.gamma)
    } else {
        None
    };
    let metrics = Metrics {
        t0,
        t_end: sim.last().t,
        samples: sim.samples.len(),
        settling_time: settle.map(|t| t - t0),
        gamma,
        final_value: final_value(&sim.channel(0)),
        final_state: sim.last().x.iter().copied().collect(),
        max_gain_norm: s.max_gain_norm(),
    };
    write(
        &output_path(&p.cfg, "trajectory.csv")?,
        &trajectory_csv(&sim),
    )?;
    write(
        &output_path(&p.cfg, "metrics.json")?,
        &serde_json::to_string_pretty(&metrics)?,
    )?;
    match metrics.settling_time {
        Some(t) => println!(
            "settled after {t:.6} s, final value {:.6e}",
            metrics.final_value
        ),
        None => println!("did not settle, final value {:.6e}", metrics.final_value),
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let mut cfg = RunConfig::from_flags(&args.run)?;
    if args.k_min.is_some() || args.k_max.is_some() {
        let (lo, hi) = cfg.k_range.unwrap_or((2, 25));
        cfg.k_range = Some((args.k_min.unwrap_or(lo), args.k_max.unwrap_or(hi)));
    }
    if args.alpha_start.is_some() || args.alpha_stop.is_some() || args.alpha_step.is_some() {
        let (a, b, c) = cfg.alpha_range.unwrap_or((0.01, 0.79, 0.02));
        cfg.alpha_range = Some((
            args.alpha_start.unwrap_or(a),
            args.alpha_stop.unwrap_or(b),
            args.alpha_step.unwrap_or(c),
        ));
    }
    let ts = cfg.time_scale()?;
    let plant = cfg.plant()?;
    let ks = cfg.k_values();
    let alphas = cfg.alpha_values()?;
    let sweep_cfg = SweepConfig {
        band: cfg.band,
        channel: 0,
        x0: DVector::from_vec(cfg.x0(plant.n())?),
        reference: Reference::Step {
            amplitude: cfg.reference.amplitude,
            at: ts.min(),
        },
        delta1: cfg.window.delta1,
        delta2: cfg.window.delta2,
        gramian: cfg.gramian_options(&ts)?,
    };
    let table = sweep(&plant, &ts, &ks, &alphas, &sweep_cfg)?;
    write(&output_path(&cfg, "sweep.csv")?, &sweep_csv(&table))?;
    let ok = table.rows.iter().filter(|r| r.status.succeeded()).count();
    println!("{} cells, {ok} succeeded", table.rows.len());
    Ok(if table.any_succeeded() { 0 } else { 1 })
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let report = verify::run(
        args.suite,
        &VerifyOptions {
            seed: args.seed,
            exp_perturbation: args.perturb_exp,
        },
    );
    let json = report.to_json();
    if let Some(dir) = &args.output_dir {
        std::fs::create_dir_all(dir)?;
        write(&dir.join("verify.json"), &json)?;
    }
    println!("{json}");
    Ok(if report.passed { 0 } else { 1 })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TSFB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("TSFB_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Gain(f) => cmd_gain(f),
        Command::Simulate(f) => cmd_simulate(f),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
