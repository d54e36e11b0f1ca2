//! Command-line front end: JSON configuration in, CSV tables and JSON
//! summaries out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analysis::{
    attracted_mass, attraction_range, compare_strategies, positive_mass, run_sweep, sweep_fit, AnalysisError,
    AttractionOptions, StrategyArm,
};
use crate::input::{InputError, InputSchedule, ScheduleSpec, TruncatedGaussianInput};
use crate::measure::{Cluster, ClusterSet, MeasureError, OpinionPartition};
use crate::oracle::{agent_run, sample_agents, OracleError};
use crate::simulate::{run, SimError, SimulationConfig, Termination, Trajectory};

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "OPINIONDRIFT_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_STEPS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "opiniondrift", version, about = "Bounded-confidence opinion dynamics on measures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the dynamics and write the trajectory.
    Simulate(CommonArgs),
    /// Find the initial opinions that end at the input mean.
    AttractionRange(CommonArgs),
    /// Attraction ranges over a (sigma, r) grid plus a linear fit.
    Sweep(CommonArgs),
    /// Score the direct and distracting schedules against each other.
    Compare(CommonArgs),
    /// Cross-check the measure engine against the finite-agent model.
    OracleCheck(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overridden by OPINIONDRIFT_OUT).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("config has no `{0}` section")]
    MissingSection(&'static str),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn field(field: &'static str, reason: impl ToString) -> CliError {
    CliError::Field { field, reason: reason.to_string() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub eps_cluster: Option<f64>,
    pub eps_consensus: Option<f64>,
    pub eps_merge: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractionSpec {
    pub mean: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub weight: f64,
    /// Defaults to ten times the cluster tolerance.
    pub tol: Option<f64>,
    #[serde(default)]
    pub refine_rounds: usize,
    #[serde(default = "default_refine_factor")]
    pub refine_factor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every sigma with every r.
    #[default]
    Product,
    /// `sigma[i]` with `r[i]`.
    Zip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub weight: f64,
    pub sigma: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default)]
    pub pairing: Pairing,
    pub tol: Option<f64>,
    #[serde(default)]
    pub refine_rounds: usize,
    #[serde(default = "default_refine_factor")]
    pub refine_factor: usize,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<(f64, f64)>, CliError> {
        match self.pairing {
            Pairing::Product => Ok(self.sigma.iter().flat_map(|&s| self.r.iter().map(move |&r| (s, r))).collect()),
            Pairing::Zip if self.sigma.len() == self.r.len() => {
                Ok(self.sigma.iter().copied().zip(self.r.iter().copied()).collect())
            }
            Pairing::Zip => Err(field("sweep.r", "zip pairing needs as many r values as sigma values")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub direct: ScheduleSpec,
    pub distracting: ScheduleSpec,
    /// Half-width of the window around the final input mean counted as
    /// attracted; defaults to a tenth of the final input's sigma.
    pub attract_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_position_tol")]
    pub position_tol: f64,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "default_agent_steps")]
    pub max_steps: usize,
}

/// Everything a subcommand needs, read from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub initial: UniformSpec,
    pub n_cells: usize,
    pub r: f64,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Split cells stretched wider than this into atoms; `r / 2` if absent.
    pub atomize_width: Option<f64>,
    #[serde(default = "yes")]
    pub atomize: bool,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    #[serde(default)]
    pub check_invariants: bool,
    #[serde(default)]
    pub bilipschitz_samples: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Prefix for every output file name.
    #[serde(default)]
    pub output_prefix: String,
    pub attraction: Option<AttractionSpec>,
    pub sweep: Option<SweepSpec>,
    pub compare: Option<CompareSpec>,
    pub oracle: Option<OracleSpec>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_max_steps() -> usize {
    2000
}
fn default_refine_factor() -> usize {
    16
}
fn default_agents() -> usize {
    20000
}
fn default_position_tol() -> f64 {
    0.01
}
fn default_mass_tol() -> f64 {
    0.02
}
fn default_agent_steps() -> usize {
    100_000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.into(), source })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_measure(&self) -> Result<OpinionPartition, CliError> {
        OpinionPartition::from_uniform(self.initial.lo, self.initial.hi, self.initial.mass, self.n_cells).map_err(
            |e| match e {
                MeasureError::NonPositiveMass(_) => field("initial.mass", e),
                MeasureError::NoCells => field("n_cells", e),
                _ => field("initial", e),
            },
        )
    }

    /// Simulation settings for confidence radius `r`.
    pub fn simulation(&self, r: f64, mu0: &OpinionPartition) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(r, mu0);
        cfg.max_steps = self.max_steps;
        if let Some(e) = self.tolerances.eps_cluster {
            cfg.eps_cluster = e;
        }
        if let Some(e) = self.tolerances.eps_consensus {
            cfg.eps_consensus = e;
        }
        if let Some(e) = self.tolerances.eps_merge {
            cfg.eps_merge = e;
        }
        cfg.atomize_width = if self.atomize { Some(self.atomize_width.unwrap_or(r / 2.0)) } else { None };
        cfg.record_every = self.record_every;
        cfg.check_invariants = self.check_invariants;
        cfg.bilipschitz_samples = self.bilipschitz_samples;
        cfg.rng_seed = self.rng_seed;
        cfg
    }

    pub fn schedule(&self) -> Result<InputSchedule, CliError> {
        match &self.schedule {
            None => Ok(InputSchedule::None),
            Some(spec) => spec.build().map_err(|e| field("schedule", e)),
        }
    }

    /// Check every precondition up front so that nothing runs (and nothing
    /// is written) for a bad configuration.
    pub fn validate(&self) -> Result<(), CliError> {
        let mu0 = self.initial_measure()?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(field("r", format!("must be positive and finite, got {}", self.r)));
        }
        if let Some(w) = self.atomize_width {
            if !(w > 0.0) {
                return Err(field("atomize_width", format!("must be positive, got {w}")));
            }
        }
        for (name, v) in [
            ("tolerances.eps_cluster", self.tolerances.eps_cluster),
            ("tolerances.eps_consensus", self.tolerances.eps_consensus),
            ("tolerances.eps_merge", self.tolerances.eps_merge),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(field(name, format!("must be positive, got {v}")));
                }
            }
        }
        self.simulation(self.r, &mu0).validate().map_err(|e| field("simulation", e))?;
        self.schedule()?;
        if let Some(a) = &self.attraction {
            TruncatedGaussianInput::new(a.mean, a.sigma, a.weight).map_err(|e| field("attraction", e))?;
            check_tol("attraction.tol", a.tol)?;
            check_refine("attraction.refine_factor", a.refine_factor)?;
        }
        if let Some(s) = &self.sweep {
            let grid = s.grid()?;
            if grid.is_empty() {
                return Err(field("sweep", "grid is empty"));
            }
            for (sigma, r) in grid {
                TruncatedGaussianInput::new(s.mean, sigma, s.weight).map_err(|e| field("sweep.sigma", e))?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(field("sweep.r", format!("must be positive, got {r}")));
                }
            }
            check_tol("sweep.tol", s.tol)?;
            check_refine("sweep.refine_factor", s.refine_factor)?;
        }
        if let Some(c) = &self.compare {
            c.direct.build().map_err(|e| field("compare.direct", e))?;
            c.distracting.build().map_err(|e| field("compare.distracting", e))?;
            check_tol("compare.attract_radius", c.attract_radius)?;
        }
        if let Some(o) = &self.oracle {
            if o.agents == 0 {
                return Err(field("oracle.agents", "need at least one agent"));
            }
            check_tol("oracle.position_tol", Some(o.position_tol))?;
            check_tol("oracle.mass_tol", Some(o.mass_tol))?;
        }
        Ok(())
    }
}

fn check_tol(name: &'static str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(field(name, format!("must be positive, got {v}"))),
        _ => Ok(()),
    }
}

fn check_refine(name: &'static str, v: usize) -> Result<(), CliError> {
    if v < 2 {
        return Err(field(name, format!("must be at least 2, got {v}")));
    }
    Ok(())
}

/// Files produced by a command, written together once all computation has
/// succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: String, contents: String) {
        self.files.push((name, contents));
    }

    fn json(&mut self, name: String, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable summary");
        text.push('\n');
        self.add(name, text);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|source| CliError::Write { path, source })?;
        }
        Ok(())
    }
}

/// Result of one command: files to write, lines for stdout, exit code.
#[derive(Debug, Default)]
pub struct Report {
    pub outputs: Outputs,
    pub stdout: Vec<String>,
    pub exit_code: i32,
}

fn termination_code(t: Termination) -> i32 {
    match t {
        Termination::Converged | Termination::Horizon => EXIT_OK,
        Termination::MaxSteps => EXIT_MAX_STEPS,
    }
}

fn clusters_json(set: &ClusterSet) -> serde_json::Value {
    json!({
        "count": set.len(),
        "converged": set.converged,
        "min_gap": set.min_gap(),
        "clusters": set.clusters,
    })
}

fn trajectory_summary(engine: &str, traj: &Trajectory, cfg: &SimulationConfig, sched: &InputSchedule) -> serde_json::Value {
    let last = traj.last();
    let final_input = traj.diagnostics.last().and_then(|d| d.input_mean);
    let attracted = final_input.and_then(|m| {
        sched.schedule_at(traj.steps.saturating_sub(1), last.support()).ok().flatten().map(|u| {
            json!({ "mean": m, "radius": 0.1 * u.sigma(), "mass": attracted_mass(last, m, 0.1 * u.sigma()) })
        })
    });
    json!({
        "engine": engine,
        "termination": traj.termination,
        "steps": traj.steps,
        "converged": traj.converged(),
        "consensus": traj.is_consensus(cfg.eps_consensus),
        "total_mass": last.total_mass(),
        "positive_mass": positive_mass(last),
        "support": last.support(),
        "final_weak_star": traj.final_weak_star(),
        "attracted": attracted,
        "clusters": clusters_json(&traj.clusters),
        "diagnostics": traj.diagnostics,
    })
}

fn name(cfg: &RunConfig, base: &str) -> String {
    format!("{}{base}", cfg.output_prefix)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report, CliError> {
    let mu0 = cfg.initial_measure()?;
    let sim = cfg.simulation(cfg.r, &mu0);
    let sched = cfg.schedule()?;
    let traj = run(&mu0, &sim, &sched)?;
    let mut rep = Report { exit_code: termination_code(traj.termination), ..Default::default() };
    rep.outputs.add(name(cfg, "trajectory.csv"), traj.to_csv());
    rep.outputs.json(name(cfg, "summary.json"), &trajectory_summary("eulerian", &traj, &sim, &sched));
    rep.stdout.push(format!(
        "{:?} after {} steps: {} cluster(s)",
        traj.termination,
        traj.steps,
        traj.clusters.len()
    ));
    Ok(rep)
}

pub fn cmd_attraction_range(cfg: &RunConfig) -> Result<Report, CliError> {
    let spec = cfg.attraction.as_ref().ok_or(CliError::MissingSection("attraction"))?;
    let mu0 = cfg.initial_measure()?;
    let sim = cfg.simulation(cfg.r, &mu0);
    let u = TruncatedGaussianInput::new(spec.mean, spec.sigma, spec.weight).map_err(|e| field("attraction", e))?;
    let mut opts = AttractionOptions::for_config(&sim);
    opts.tol = spec.tol.unwrap_or(opts.tol);
    opts.refine_rounds = spec.refine_rounds;
    opts.refine_factor = spec.refine_factor;
    let mut rep = Report::default();
    match attraction_range(&mu0, &u, &sim, &opts) {
        Ok(res) => {
            rep.stdout.push(format!("R(u) = [{}, {}], length {}, mass {}", res.lo, res.hi, res.length, res.attracted_mass));
            rep.outputs.json(name(cfg, "attraction_range.json"), &res);
        }
        Err(AnalysisError::NotConverged(steps)) => {
            rep.stdout.push(format!("not converged after {steps} steps"));
            rep.exit_code = EXIT_MAX_STEPS;
        }
        Err(e) => return Err(e.into()),
    }
    Ok(rep)
}

pub fn sweep_csv(points: &[crate::analysis::SweepPoint]) -> String {
    let mut out = String::from("sigma,r,range_length,attracted_mass,converged\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.sigma, p.r, p.range_length, p.attracted_mass, p.converged);
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig, jobs: usize) -> Result<Report, CliError> {
    let spec = cfg.sweep.as_ref().ok_or(CliError::MissingSection("sweep"))?;
    let mu0 = cfg.initial_measure()?;
    let grid = spec.grid()?;
    let configure = |r: f64| {
        let sim = cfg.simulation(r, &mu0);
        let mut opts = AttractionOptions::for_config(&sim);
        opts.tol = spec.tol.unwrap_or(opts.tol);
        opts.refine_rounds = spec.refine_rounds;
        opts.refine_factor = spec.refine_factor;
        (sim, opts)
    };
    let points = run_sweep(&mu0, spec.mean, spec.weight, &grid, &configure, jobs)?;
    let fit = sweep_fit(&points, mu0.support_width())?;
    let mut rep = Report::default();
    rep.outputs.add(name(cfg, "sweep.csv"), sweep_csv(&points));
    rep.outputs.json(
        name(cfg, "fit.json"),
        &json!({
            "a": fit.a,
            "b": fit.b,
            "c": fit.c,
            "r_squared": fit.r_squared,
            "n_points": fit.n_points,
            "filtered_out": fit.filtered_out,
            "sigma_domain": fit.sigma_domain,
            "r_domain": fit.r_domain,
        }),
    );
    let coef = |c: Option<f64>| c.map_or_else(|| "-".to_string(), |v| v.to_string());
    rep.stdout.push(format!(
        "a = {}, b = {}, c = {}, R^2 = {} ({} points, {} filtered)",
        coef(fit.a),
        coef(fit.b),
        fit.c,
        fit.r_squared,
        fit.n_points,
        fit.filtered_out
    ));
    Ok(rep)
}

fn arm_json(arm: &StrategyArm) -> serde_json::Value {
    json!({
        "objective": arm.objective,
        "attracted": arm.attracted,
        "final_input_mean": arm.final_input_mean,
        "termination": arm.trajectory.termination,
        "steps": arm.trajectory.steps,
    })
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<Report, CliError> {
    let spec = cfg.compare.as_ref().ok_or(CliError::MissingSection("compare"))?;
    let mu0 = cfg.initial_measure()?;
    let sim = cfg.simulation(cfg.r, &mu0);
    let direct = spec.direct.build().map_err(|e| field("compare.direct", e))?;
    let distracting = spec.distracting.build().map_err(|e| field("compare.distracting", e))?;
    let radius = match spec.attract_radius {
        Some(r) => r,
        None => {
            let h = direct.horizon().unwrap_or(0);
            let u = direct
                .schedule_at(h, mu0.support())
                .map_err(|e: InputError| field("compare.direct", e))?
                .ok_or_else(|| field("compare.direct", "schedule has no input"))?;
            0.1 * u.sigma()
        }
    };
    let report = compare_strategies(&mu0, &sim, &direct, &distracting, radius)?;
    let winner = report.winner();
    let mut rep = Report::default();
    rep.outputs.add(name(cfg, "direct_trajectory.csv"), report.direct.trajectory.to_csv());
    rep.outputs.add(name(cfg, "distracting_trajectory.csv"), report.distracting.trajectory.to_csv());
    rep.outputs.json(
        name(cfg, "compare.json"),
        &json!({
            "attract_radius": radius,
            "direct": arm_json(&report.direct),
            "distracting": arm_json(&report.distracting),
            "winner": winner,
        }),
    );
    rep.stdout.push(format!(
        "direct: objective {} attracted {}; distracting: objective {} attracted {}; winner {}",
        report.direct.objective,
        report.direct.attracted,
        report.distracting.objective,
        report.distracting.attracted,
        winner.unwrap_or("tie")
    ));
    Ok(rep)
}

/// Worst position and mass mismatch between matched cluster lists, or
/// `None` when the counts differ.
pub fn cluster_discrepancy(a: &[Cluster], b: &[Cluster]) -> Option<(f64, f64)> {
    if a.len() != b.len() {
        return None;
    }
    Some(a.iter().zip(b).fold((0.0f64, 0.0f64), |(dp, dm), (x, y)| {
        (dp.max((x.position - y.position).abs()), dm.max((x.mass - y.mass).abs()))
    }))
}

pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<Report, CliError> {
    let spec = cfg.oracle.clone().unwrap_or(OracleSpec {
        agents: default_agents(),
        position_tol: default_position_tol(),
        mass_tol: default_mass_tol(),
        max_steps: default_agent_steps(),
    });
    let mu0 = cfg.initial_measure()?;
    let sim = cfg.simulation(cfg.r, &mu0);
    let sched = cfg.schedule()?;
    let traj = run(&mu0, &sim, &sched)?;
    let pop = sample_agents(&mu0, spec.agents)?;
    let agents = agent_run(&pop, &sched, cfg.r, spec.max_steps)?;
    let final_atoms = agents.population.to_partition();
    let mut csv = String::from("step,cell_left,cell_right,mass\n");
    for (l, r, m) in final_atoms.cells().filter(|c| c.2 > 0.0) {
        let _ = writeln!(csv, "{},{},{},{}", agents.steps, l, r, m);
    }
    let discrepancy = cluster_discrepancy(&traj.clusters.clusters, &agents.clusters.clusters);
    let pass = traj.converged()
        && discrepancy.is_some_and(|(dp, dm)| dp <= spec.position_tol && dm <= spec.mass_tol);
    let mut rep = Report { exit_code: if pass { EXIT_OK } else { EXIT_ERROR }, ..Default::default() };
    rep.outputs.add(name(cfg, "oracle_final.csv"), csv);
    rep.outputs.json(
        name(cfg, "oracle_summary.json"),
        &json!({
            "engine": "lagrangian",
            "agents": spec.agents,
            "steps": agents.steps,
            "order_violations": agents.order_violations,
            "clusters": clusters_json(&agents.clusters),
            "eulerian": {
                "termination": traj.termination,
                "steps": traj.steps,
                "clusters": clusters_json(&traj.clusters),
            },
            "max_position_discrepancy": discrepancy.map(|d| d.0),
            "max_mass_discrepancy": discrepancy.map(|d| d.1),
            "position_tol": spec.position_tol,
            "mass_tol": spec.mass_tol,
            "pass": pass,
        }),
    );
    rep.stdout.push(match discrepancy {
        Some((dp, dm)) => format!(
            "max cluster position discrepancy {dp:.3e} (tol {}), mass discrepancy {dm:.3e} (tol {}): {}",
            spec.position_tol,
            spec.mass_tol,
            if pass { "PASS" } else { "FAIL" }
        ),
        None => format!(
            "cluster counts differ: eulerian {} vs lagrangian {}: FAIL",
            traj.clusters.len(),
            agents.clusters.len()
        ),
    });
    Ok(rep)
}

/// Output directory: `OPINIONDRIFT_OUT`, then `--out`, then `./out`.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.map_or_else(|| PathBuf::from("out"), Path::to_path_buf),
    }
}

pub fn execute(command: &Command) -> Result<(Report, PathBuf), CliError> {
    let (args, is_sweep) = match command {
        Command::Sweep(a) => (a, true),
        Command::Simulate(a) | Command::AttractionRange(a) | Command::Compare(a) | Command::OracleCheck(a) => {
            (a, false)
        }
    };
    if args.jobs == 0 {
        return Err(field("--jobs", "must be at least 1"));
    }
    let cfg = RunConfig::load(&args.config)?;
    if args.verbose {
        eprintln!("loaded {}", args.config.display());
    }
    let report = match command {
        Command::Simulate(_) => cmd_simulate(&cfg)?,
        Command::AttractionRange(_) => cmd_attraction_range(&cfg)?,
        Command::Sweep(_) => cmd_sweep(&cfg, args.jobs)?,
        Command::Compare(_) => cmd_compare(&cfg)?,
        Command::OracleCheck(_) => cmd_oracle_check(&cfg)?,
    };
    let dir = output_dir(args.out.as_deref());
    report.outputs.write(&dir)?;
    if args.verbose {
        for n in report.outputs.names() {
            eprintln!("wrote {}", dir.join(n).display());
        }
        if is_sweep {
            eprintln!("sweep used {} worker(s)", args.jobs);
        }
    }
    Ok((report, dir))
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok((report, _)) => {
            for line in &report.stdout {
                println!("{line}");
            }
            report.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
