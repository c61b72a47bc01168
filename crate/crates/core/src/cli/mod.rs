//! Command-line front end.
//!
//! Exit status: 0 on success with every audit passing, 1 on an audit
//! failure or numerical breakdown, 2 on usage or configuration errors and on
//! requests to certify an uncertified run.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::certify::{audit_trajectory, default_window, fit_rate, iss_tail_ratio};
use crate::error::{Error, Result};
use crate::heatmem::{emit_figures_data, run_n_sweep, write_state_snapshots};
use crate::solver::{simulate, Scheme, Trajectory};
use crate::timescale::{lemma1_check, log_grid};

pub use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(
    name = "hyperstab",
    version,
    about = "Simulate and certify evolution equations under hyperexponentially growing feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Check the integral inequality on a log-spaced grid
    LemmaCheck,
    /// Integrate the closed loop and export the trajectory
    Simulate,
    /// Run the heat equation with memory and emit figure data
    HeatMemory,
    /// Sweep the gain exponent n and check the ordering of the decay curves
    SweepN,
    /// Fit log‖X‖ against a quadratic in t
    RateFit,
    /// Audit a run against the decay/ISS bound
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LemmaCheck => "lemma-check",
            Command::Simulate => "simulate",
            Command::HeatMemory => "heat-memory",
            Command::SweepN => "sweep-n",
            Command::RateFit => "rate-fit",
            Command::Certify => "certify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Be,
    Cn,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON config or manifest
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override a config field, e.g. --set disturbance.amplitude=0.1
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for random disturbances
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "dt-max", global = true)]
    pub dt_max: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub scheme: Option<SchemeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
        }
    }
}

/// Maps an error to the exit status contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Domain { .. }
        | Error::Precondition { .. }
        | Error::Dimension { .. }
        | Error::Uncertified { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolves the configuration from file, overrides and flags.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.disturbance.seed = seed;
    }
    if let Some(dt) = args.dt_max {
        cfg.dt_max = Some(dt);
    }
    if let Some(s) = args.scheme {
        cfg.scheme = match s {
            SchemeArg::Be => Scheme::BackwardEuler,
            SchemeArg::Cn => Scheme::CrankNicolson,
        };
    }
    Ok(cfg)
}

pub fn dispatch(cli: &Cli) -> Result<Status> {
    let cfg = resolve_config(&cli.run)?;
    let out = &cli.run.out;
    fs::create_dir_all(out)?;
    let mut outputs = Outputs::new(out);
    let (status, certified) = match cli.command {
        Command::LemmaCheck => (lemma_check(&cfg, &mut outputs)?, None),
        Command::Simulate => simulate_cmd(&cfg, &mut outputs)?,
        Command::HeatMemory => heat_memory(&cfg, &mut outputs)?,
        Command::SweepN => (sweep_n(&cfg, &mut outputs)?, None),
        Command::RateFit => rate_fit(&cfg, &mut outputs)?,
        Command::Certify => (certify_cmd(&cfg, &mut outputs)?, Some(true)),
    };
    write_manifest(cli, &cfg, &outputs, status, certified)?;
    Ok(status)
}

/// Files written by one command, hashed for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn record(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    fn trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        let path = self.path("trajectory.csv");
        traj.export_csv(path)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(
    cli: &Cli,
    cfg: &ExperimentConfig,
    outputs: &Outputs,
    status: Status,
    certified: Option<bool>,
) -> Result<()> {
    let resolved = serde_json::to_string(&cfg.to_value())?;
    let mut inputs = BTreeMap::new();
    inputs.insert("resolved_config".to_string(), sha256_hex(resolved.as_bytes()));
    if let Some(path) = &cli.run.config {
        inputs.insert("config_file".to_string(), sha256_hex(&fs::read(path)?));
    }
    let mut files = BTreeMap::new();
    for f in &outputs.files {
        let name = f
            .strip_prefix(&outputs.dir)
            .unwrap_or(f)
            .to_string_lossy()
            .into_owned();
        files.insert(name, sha256_hex(&fs::read(f)?));
    }
    let manifest = json!({
        "command": cli.command.name(),
        "config": cfg.to_value(),
        "inputs": inputs,
        "outputs": files,
        "status": status,
        "certified": certified,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(outputs.dir.join("manifest.json"), text)?;
    Ok(())
}

fn lemma_check(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<Status> {
    let l = &cfg.lemma;
    let grid = log_grid(l.tau_min, l.tau_max, l.tau_count);
    let reports = l
        .pairs
        .iter()
        .map(|[a, alpha]| lemma1_check(*a, *alpha, &grid))
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_path(outputs.path("lemma_margins.csv"))?;
    w.write_record(["a", "alpha", "constant", "tau", "lhs", "rhs", "margin", "relative_margin", "pass"])?;
    for r in &reports {
        for row in &r.rows {
            w.write_record([
                r.a.to_string(),
                r.alpha.to_string(),
                r.constant.to_string(),
                row.tau.to_string(),
                row.lhs.to_string(),
                row.rhs.to_string(),
                row.margin.to_string(),
                row.relative_margin.to_string(),
                row.pass.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let pass = reports.iter().all(|r| r.all_pass());
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "a": r.a,
                "alpha": r.alpha,
                "constant": r.constant,
                "violations": r.violations,
                "worst_relative_margin": r.worst_relative_margin(),
            })
        })
        .collect();
    outputs.json("summary.json", &json!({ "pairs": summary, "pass": pass }))?;
    Ok(Status::from_pass(pass))
}

fn run_simulation(cfg: &ExperimentConfig, allow_uncertified: bool) -> Result<(crate::solver::EvolutionProblem, Trajectory)> {
    let problem = cfg.problem()?;
    let traj = simulate(&problem, &cfg.sim_options(allow_uncertified))?;
    Ok((problem, traj))
}

fn snapshots(cfg: &ExperimentConfig, traj: &Trajectory, outputs: &mut Outputs) -> Result<()> {
    if cfg.snapshot_stride > 0 && cfg.problem == config::ProblemKind::HeatMemory {
        let exp = cfg.experiment()?;
        for p in write_state_snapshots(&exp, traj, &outputs.dir.clone(), cfg.snapshot_stride)? {
            outputs.record(p);
        }
    }
    Ok(())
}

fn simulate_cmd(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<(Status, Option<bool>)> {
    let (problem, traj) = run_simulation(cfg, true)?;
    outputs.trajectory(&traj)?;
    snapshots(cfg, &traj, outputs)?;
    let gain = problem.gain_condition();
    outputs.json(
        "summary.json",
        &json!({
            "gain_condition": gain,
            "certified": traj.meta.certified,
            "meta": traj.meta,
            "final_norm": traj.norms().last(),
        }),
    )?;
    Ok((Status::Pass, Some(traj.meta.certified)))
}

fn rate_fit(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<(Status, Option<bool>)> {
    let (_, traj) = run_simulation(cfg, true)?;
    let window = cfg.fit_window.unwrap_or_else(|| default_window(&traj));
    let fit = fit_rate(&traj, window)?;
    outputs.trajectory(&traj)?;
    outputs.json("rate_fit.json", &fit)?;
    Ok((Status::Pass, Some(traj.meta.certified)))
}

fn refuse_uncertified(problem: &crate::solver::EvolutionProblem) -> Result<()> {
    let gain = problem.gain_condition();
    if gain.satisfied {
        return Ok(());
    }
    Err(Error::Uncertified {
        op: "cli::certify",
        msg: format!(
            "gain condition K*beta > 1/2 fails (K = {}, beta = {})",
            problem.gain, gain.beta
        ),
    })
}

fn certify_cmd(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<Status> {
    refuse_uncertified(&cfg.problem()?)?;
    let (problem, traj) = run_simulation(cfg, false)?;
    let cert = audit_trajectory(&traj, &problem)?;
    outputs.trajectory(&traj)?;
    outputs.json("certificate.json", &cert)?;

    let mut pass = cert.passed();
    let mut tail = Value::Null;
    if cert.d_sup_norm > 0.0 {
        let ratio = iss_tail_ratio(&traj, &problem, 0.5 * problem.horizon, problem.horizon)?;
        let limit = 2.0 * cert.constant_c;
        pass &= ratio < limit;
        tail = json!({ "max_ratio": ratio, "limit": limit, "pass": ratio < limit });
    }
    outputs.json(
        "summary.json",
        &json!({
            "verdict": cert.verdict,
            "eta": cert.eta,
            "constant_c": cert.constant_c,
            "constant_route": cert.constant_route,
            "worst_margin": cert.worst_margin,
            "iss_tail": tail,
            "pass": pass,
        }),
    )?;
    Ok(Status::from_pass(pass))
}

fn heat_memory(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<(Status, Option<bool>)> {
    const OP: &str = "cli::heat_memory";
    if cfg.problem != config::ProblemKind::HeatMemory {
        return Err(Error::config(OP, "heat-memory requires problem = heat_memory"));
    }
    if cfg.schedule.kind != config::ScheduleName::Affine {
        return Err(Error::config(OP, "heat-memory uses the affine schedule psi(t) = 1 + t"));
    }
    let exp = cfg.experiment()?;
    let (problem, traj) = run_simulation(cfg, true)?;

    outputs.trajectory(&traj)?;
    let figs = emit_figures_data(&exp, &traj, &outputs.dir.clone())?;
    for p in [figs.state, figs.control, figs.objective, figs.script] {
        outputs.record(p);
    }
    snapshots(cfg, &traj, outputs)?;

    let certified = traj.meta.certified;
    let mut pass = true;
    let certificate = if certified {
        let cert = audit_trajectory(&traj, &problem)?;
        pass &= cert.passed();
        outputs.json("certificate.json", &cert)?;
        json!({
            "verdict": cert.verdict,
            "kind": cert.kind,
            "eta": cert.eta,
            "constant_c": cert.constant_c,
            "constant_route": cert.constant_route,
            "worst_margin": cert.worst_margin,
        })
    } else {
        Value::Null
    };
    if certified && problem.disturbance.is_zero() {
        pass &= traj.meta.contraction_violations == 0;
    }
    let window = cfg.fit_window.unwrap_or_else(|| default_window(&traj));
    let fit = match fit_rate(&traj, window) {
        Ok(f) => serde_json::to_value(f)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    outputs.json(
        "summary.json",
        &json!({
            "certified": certified,
            "gain_condition": problem.gain_condition(),
            "certificate": certificate,
            "rate_fit": fit,
            "contraction_violations": traj.meta.contraction_violations,
            "steps": traj.meta.steps,
            "pass": pass,
        }),
    )?;
    Ok((Status::from_pass(pass), Some(certified)))
}

fn sweep_n(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<Status> {
    let exp = cfg.experiment()?;
    let interval = cfg.sample_interval.unwrap_or(0.01);
    let report = run_n_sweep(
        &exp,
        &cfg.sweep.n_values,
        &cfg.sim_options(true),
        interval,
        cfg.sweep.compare_from,
    )?;
    report.write_csv(outputs.path("sweep.csv"))?;
    outputs.json(
        "summary.json",
        &json!({
            "n_values": report.n_values,
            "compare_from": report.compare_from,
            "violations": report.violations,
            "ordered": report.ordered(),
        }),
    )?;
    Ok(Status::from_pass(report.ordered()))
}
