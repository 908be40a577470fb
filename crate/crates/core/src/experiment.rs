//! Experiment configs and the `run` / `compare` / `rates` drivers behind the
//! command line tool.
//!
//! Every schedule is measured against its own limit point: non-convex
//! problems send different schedules to different critical points, so a
//! single shared reference would leave some runs never reaching tolerance.
//! `compare` additionally reports how far each limit is from a shared FB
//! reference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localrate::{self, RateReport};
use crate::numerics::DenseVector;
use crate::params::{self, FeasibilityReport, OnlineRule, StepBounds, SumInterval};
use crate::plot::{self, Series};
use crate::problems::{CompositeProblem, InstanceSpec};
use crate::solver::{
    self, InertialSchedule, Monitors, ReferenceSolution, RunTrace, SolveOptions, SolverError,
};

pub const TRACE_HEADER: &str = "k,phi,delta,resid,activity,dist_to_xstar,identified";
pub const COMPARISON_HEADER: &str =
    "schedule,rule,s,gamma_fraction,sum_a,iters_to_tol,identification,reference_iterations,limit_gap,final_phi";
pub const RATES_HEADER: &str = "schedule,s,gamma,a,identification,tangent_dim,rho_m,rho_obs,fit_start,fit_end,relative_gap,tau,rho_star_s1,rho_star_s2,ri_ok,q_psd_ok,advisory,opt1_a,opt1_rho,opt2_a,opt2_rho";

/// Grid of the inertia optimization in `rates`.
pub fn inertia_grid() -> Vec<f64> {
    (-19..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schedule {schedule} diverged at iteration {k}")]
    Divergence { schedule: String, k: usize },
    #[error("{0} monitor violation(s)")]
    Monitor(usize),
    #[error("insufficient data for a rate fit: {0}")]
    InsufficientData(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Divergence { .. } => 3,
            ExperimentError::Monitor(_) => 4,
            ExperimentError::InsufficientData(_) => 5,
            ExperimentError::Io { .. } | ExperimentError::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn internal(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Internal(e.to_string())
}

fn solver_err(name: &str, e: SolverError) -> ExperimentError {
    match e {
        SolverError::Divergence { k, .. } => ExperimentError::Divergence {
            schedule: name.to_string(),
            k,
        },
        other => internal(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rule {
    #[default]
    #[serde(rename = "theorem22")]
    Theorem22,
    #[serde(rename = "bound24")]
    Bound24,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::Theorem22 => "theorem22",
            Rule::Bound24 => "bound24",
        }
    }
}

fn default_fraction() -> f64 {
    0.9
}

/// One named schedule. Coefficients are either given (`a`, optional `b`
/// defaulting to `a`) or derived from `s` at `fraction` of the rule's
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Step as a fraction of `1/L`.
    pub gamma: f64,
    #[serde(default)]
    pub rule: Rule,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_tol")]
    pub tol: f64,
    #[serde(default = "SolverConfig::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "SolverConfig::default_monitors")]
    pub monitors: bool,
    /// Distance to the limit that counts as "reached".
    #[serde(default = "SolverConfig::default_distance_tol")]
    pub distance_tol: f64,
}

impl SolverConfig {
    fn default_tol() -> f64 {
        1e-10
    }
    fn default_max_iter() -> usize {
        10_000
    }
    fn default_monitors() -> bool {
        true
    }
    fn default_distance_tol() -> f64 {
        1e-9
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: Self::default_tol(),
            max_iter: Self::default_max_iter(),
            monitors: Self::default_monitors(),
            distance_tol: Self::default_distance_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "OutputConfig::default_directory")]
    pub directory: PathBuf,
    #[serde(default = "OutputConfig::default_plot")]
    pub plot: bool,
}

impl OutputConfig {
    fn default_directory() -> PathBuf {
        PathBuf::from("mifb-out")
    }
    fn default_plot() -> bool {
        true
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: Self::default_directory(),
            plot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: InstanceSpec,
    pub schedules: Vec<ScheduleConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that do not need the problem.
    pub fn check(&self) -> Result<()> {
        if self.schedules.is_empty() {
            return Err(ExperimentError::Config("no schedules".into()));
        }
        let mut names: Vec<String> = Vec::new();
        for s in &self.schedules {
            let file = file_stem(&s.name);
            if names.contains(&file) {
                return Err(ExperimentError::Config(format!(
                    "schedule names must be distinct as file names, {} repeats",
                    s.name
                )));
            }
            names.push(file);
            if !(s.gamma > 0.0 && s.gamma < 1.0) {
                return Err(ExperimentError::Config(format!(
                    "{}: gamma fraction must lie in ]0, 1[, got {}",
                    s.name, s.gamma
                )));
            }
            if !(s.fraction >= 0.0 && s.fraction < 1.0) {
                return Err(ExperimentError::Config(format!(
                    "{}: fraction must lie in [0, 1[, got {}",
                    s.name, s.fraction
                )));
            }
        }
        let sv = &self.solver;
        if !(sv.tol > 0.0) || sv.max_iter == 0 || !(sv.distance_tol > 0.0) {
            return Err(ExperimentError::Config(
                "solver tol and distance_tol must be positive and max_iter at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// A schedule with its coefficients fixed and checked against its rule.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSchedule {
    pub name: String,
    pub rule: Rule,
    pub gamma_fraction: f64,
    pub gamma: f64,
    pub fraction: f64,
    pub schedule: InertialSchedule,
    pub feasibility: FeasibilityReport,
    pub empirical_interval: Option<SumInterval>,
}

impl ResolvedSchedule {
    pub fn memory(&self) -> usize {
        self.schedule.memory()
    }

    pub fn sum_a(&self) -> f64 {
        self.schedule.a.iter().sum()
    }
}

pub fn resolve_schedule(cfg: &ScheduleConfig, lipschitz: f64) -> Result<ResolvedSchedule> {
    let name = &cfg.name;
    let cerr = |m: String| ExperimentError::Config(format!("{name}: {m}"));
    let gamma = cfg.gamma / lipschitz;
    let step = StepBounds::constant(gamma);
    let (a, b) = match &cfg.a {
        Some(a) => {
            if let Some(s) = cfg.s {
                if s != a.len() {
                    return Err(cerr(format!("s = {s} but a has {} entries", a.len())));
                }
            }
            let b = cfg.b.clone().unwrap_or_else(|| a.clone());
            (a.clone(), b)
        }
        None => {
            if cfg.b.is_some() {
                return Err(cerr("b given without a".into()));
            }
            let s = cfg.s.ok_or_else(|| cerr("give either a or s".into()))?;
            let a = match cfg.rule {
                Rule::Theorem22 => params::default_feasible_coefficients(s, step, lipschitz, cfg.fraction),
                Rule::Bound24 => params::default_empirical_coefficients(s, gamma, lipschitz, cfg.fraction),
            }
            .map_err(|e| cerr(e.to_string()))?;
            (a.clone(), a)
        }
    };
    let mut schedule = InertialSchedule::new(name.clone(), a.clone(), b.clone(), solver::StepSize::Constant(gamma))
        .map_err(|e| cerr(e.to_string()))?;
    let online = match (cfg.rule, cfg.online) {
        (_, Some(rule)) => Some(rule),
        (Rule::Bound24, None) => Some(OnlineRule::default()),
        (Rule::Theorem22, None) => None,
    };
    if let Some(rule) = online {
        schedule = schedule.with_online(rule);
    }
    schedule.validate(lipschitz).map_err(|e| cerr(e.to_string()))?;
    let feasibility = params::check_feasibility(step, &a, &b, lipschitz).map_err(|e| cerr(e.to_string()))?;
    let mut empirical_interval = None;
    match cfg.rule {
        Rule::Theorem22 => {
            if !feasibility.feasible {
                return Err(cerr(format!(
                    "coefficients fail the theorem22 check: delta = {:.6e} <= 0 at (mu, nu) = ({:.6e}, {:.6e})",
                    feasibility.delta, feasibility.mu, feasibility.nu
                )));
            }
        }
        Rule::Bound24 => {
            let interval = params::empirical_bound(gamma, lipschitz).map_err(|e| cerr(e.to_string()))?;
            let sum: f64 = a.iter().sum();
            if !interval.contains(sum) {
                return Err(cerr(format!(
                    "sum of a = {sum} outside the bound24 interval ]{}, {}[",
                    interval.lower, interval.upper
                )));
            }
            empirical_interval = Some(interval);
        }
    }
    Ok(ResolvedSchedule {
        name: name.clone(),
        rule: cfg.rule,
        gamma_fraction: cfg.gamma,
        gamma,
        fraction: cfg.fraction,
        schedule,
        feasibility,
        empirical_interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Compare,
    Rates,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Compare => "compare",
            Command::Rates => "rates",
        }
    }
}

/// Problem, resolved schedules and solver settings of one invocation.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: CompositeProblem,
    pub schedules: Vec<ResolvedSchedule>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.check()?;
        let problem = config
            .problem
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let l = problem.lipschitz();
        let schedules = config
            .schedules
            .iter()
            .map(|s| resolve_schedule(s, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            problem,
            schedules,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.problem.seed()
    }

    fn monitors(&self) -> Monitors {
        if self.config.solver.monitors {
            Monitors::ALL
        } else {
            Monitors::NONE
        }
    }

    fn trace_options(&self, command: Command, x_star: &DenseVector) -> SolveOptions {
        let sv = &self.config.solver;
        let reference = solver::reference_options();
        let base = SolveOptions {
            monitors: self.monitors(),
            reference: Some(x_star.clone()),
            ..SolveOptions::default()
        };
        match command {
            Command::Run => SolveOptions {
                max_iter: sv.max_iter,
                tol_delta: sv.tol,
                ..base
            },
            // driven to the rounding floor so distances reach the tolerance
            // (compare) or the fit floor (rates)
            Command::Compare => SolveOptions {
                max_iter: reference.max_iter.max(sv.max_iter),
                tol_delta: reference.tol_delta,
                tol_relative: reference.tol_relative,
                stop_distance: Some(sv.distance_tol),
                ..base
            },
            Command::Rates => SolveOptions {
                max_iter: reference.max_iter.max(sv.max_iter),
                tol_delta: reference.tol_delta,
                tol_relative: reference.tol_relative,
                ..base
            },
        }
    }

    /// Reference limit and measured trace of every schedule, in config order.
    pub fn solve_all(&self, command: Command) -> Result<Vec<ScheduleRun>> {
        let x0 = DenseVector::zeros(self.problem.dimension());
        let results: Vec<Result<ScheduleRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .schedules
                .iter()
                .map(|rs| {
                    let x0 = &x0;
                    scope.spawn(move || self.solve_one(command, rs, x0))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(internal("solver thread panicked"))))
                .collect()
        });
        results.into_iter().collect()
    }

    fn solve_one(&self, command: Command, rs: &ResolvedSchedule, x0: &DenseVector) -> Result<ScheduleRun> {
        let reference = solver::reference_solution(&self.problem, &rs.schedule, x0)
            .map_err(|e| solver_err(&rs.name, e))?;
        let opts = self.trace_options(command, &reference.point);
        let trace = solver::mifb_solve(&self.problem, &rs.schedule, x0, &opts)
            .map_err(|e| solver_err(&rs.name, e))?;
        let identification = localrate::detect_identification(&trace, &reference.activity);
        Ok(ScheduleRun {
            resolved: rs.clone(),
            reference,
            trace,
            identification,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub resolved: ResolvedSchedule,
    pub reference: ReferenceSolution,
    pub trace: RunTrace,
    pub identification: Option<usize>,
}

impl ScheduleRun {
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.trace.first_within(tol)
    }

    fn distance_series(&self) -> Vec<(f64, f64)> {
        let recs = &self.trace.records;
        let stride = recs.len().div_ceil(2000).max(1);
        recs.iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || *i + 1 == recs.len())
            .filter_map(|(_, r)| r.dist_to_xstar.map(|d| (r.k as f64, d)))
            .collect()
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(";")
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(internal)
}

/// Trace CSV: `#` lines with the seed, schedule and feasibility report,
/// then the fixed header and one row per iteration.
pub fn trace_csv(run: &ScheduleRun, seed: u64) -> Result<String> {
    let rs = &run.resolved;
    let mut out = String::new();
    let _ = writeln!(out, "# schedule: {}", rs.name);
    let _ = writeln!(out, "# seed: {seed}");
    let _ = writeln!(out, "# rule: {}", rs.rule.as_str());
    let _ = writeln!(out, "# schedule_json: {}", to_json(&rs.schedule)?);
    let _ = writeln!(out, "# feasibility: {}", to_json(&rs.feasibility)?);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &run.trace.records {
        let identified = run.identification.is_some_and(|k| r.k >= k);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_f(r.phi),
            fmt_f(r.delta),
            fmt_opt(r.resid),
            r.activity,
            fmt_opt(r.dist_to_xstar),
            u8::from(identified)
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct FeasibilityEntry<'a> {
    seed: u64,
    lipschitz: f64,
    #[serde(flatten)]
    schedule: &'a ResolvedSchedule,
}

fn feasibility_json(exp: &Experiment) -> Result<String> {
    let entries: Vec<FeasibilityEntry> = exp
        .schedules
        .iter()
        .map(|s| FeasibilityEntry {
            seed: exp.seed(),
            lipschitz: exp.problem.lipschitz(),
            schedule: s,
        })
        .collect();
    serde_json::to_string_pretty(&entries).map_err(internal)
}

/// Row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub schedule: String,
    pub rule: Rule,
    pub s: usize,
    pub gamma_fraction: f64,
    pub sum_a: f64,
    pub iters_to_tol: Option<usize>,
    pub identification: Option<usize>,
    pub reference_iterations: usize,
    /// Distance between this schedule's limit and the shared FB limit.
    pub limit_gap: f64,
    pub final_phi: f64,
}

pub fn comparison_rows(exp: &Experiment, runs: &[ScheduleRun], shared: &DenseVector) -> Vec<ComparisonRow> {
    runs.iter()
        .map(|r| ComparisonRow {
            schedule: r.resolved.name.clone(),
            rule: r.resolved.rule,
            s: r.resolved.memory(),
            gamma_fraction: r.resolved.gamma_fraction,
            sum_a: r.resolved.sum_a(),
            iters_to_tol: r.iterations_to(exp.config.solver.distance_tol),
            identification: r.identification,
            reference_iterations: r.reference.iterations,
            limit_gap: (&r.reference.point - shared).norm(),
            final_phi: r.trace.records.last().map_or(f64::NAN, |x| x.phi),
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.schedule,
            r.rule.as_str(),
            r.s,
            fmt_f(r.gamma_fraction),
            fmt_f(r.sum_a),
            r.iters_to_tol.map(|v| v.to_string()).unwrap_or_default(),
            r.identification.map(|v| v.to_string()).unwrap_or_default(),
            r.reference_iterations,
            fmt_f(r.limit_gap),
            fmt_f(r.final_phi)
        );
    }
    out
}

/// Rate report of one schedule plus the grid optima on its reduced model.
#[derive(Debug, Clone, Serialize)]
pub struct RatesRow {
    pub report: RateReport,
    pub opt1: (Vec<f64>, f64),
    pub opt2: (Vec<f64>, f64),
}

pub fn rates_rows(exp: &Experiment, runs: &[ScheduleRun]) -> Result<Vec<RatesRow>> {
    let grid = inertia_grid();
    runs.iter()
        .map(|r| {
            let report = localrate::analyze_run(&exp.problem, &r.trace, &r.reference.point).map_err(internal)?;
            let reduced = report.reduced.as_ref().expect("analysis keeps the reduced matrices");
            let opt1 = localrate::optimize_inertia(reduced, 1, &grid).map_err(internal)?;
            let opt2 = localrate::optimize_inertia(reduced, 2, &grid).map_err(internal)?;
            Ok(RatesRow { report, opt1, opt2 })
        })
        .collect()
}

pub fn rates_csv(rows: &[RatesRow]) -> String {
    let mut out = String::from(RATES_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let b = |v: bool| u8::from(v).to_string();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.schedule,
            r.a.len(),
            fmt_f(r.gamma),
            fmt_vec(&r.a),
            r.identification_iter.map(|v| v.to_string()).unwrap_or_default(),
            r.tangent_dimension,
            fmt_f(r.rho_m),
            fmt_opt(r.observed.map(|o| o.rate)),
            r.observed.map(|o| o.window.0.to_string()).unwrap_or_default(),
            r.observed.map(|o| o.window.1.to_string()).unwrap_or_default(),
            fmt_opt(r.relative_gap()),
            fmt_f(r.tau),
            fmt_opt(r.rho_star_s1),
            fmt_opt(r.rho_star_s2),
            b(r.ri_ok),
            b(r.q_psd_ok),
            b(r.advisory),
            fmt_vec(&row.opt1.0),
            fmt_f(row.opt1.1),
            fmt_vec(&row.opt2.0),
            fmt_f(row.opt2.1)
        );
    }
    out
}

/// What an invocation produced. `status` is the error that decides the
/// exit code once all files are written (monitor failures, missing rate
/// fits).
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub status: Option<ExperimentError>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.status.as_ref().map_or(0, |e| e.exit_code())
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| ExperimentError::Io {
            path: path.clone(),
            source: e,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn plot(&mut self, name: &str, title: &str, series: &[Series]) -> Result<()> {
        let path = self.dir.join(name);
        match plot::render_plot(title, "iteration k", series, &path) {
            Ok(()) => {
                self.files.push(path);
                Ok(())
            }
            Err(plot::PlotError::Empty(m)) => Err(ExperimentError::Config(format!("plot {name}: {m}"))),
            Err(plot::PlotError::Io(e)) => Err(ExperimentError::Io { path, source: e }),
        }
    }
}

fn monitor_status(runs: &[ScheduleRun]) -> Option<ExperimentError> {
    let n: usize = runs.iter().map(|r| r.trace.violations.len()).sum();
    (n > 0).then_some(ExperimentError::Monitor(n))
}

fn distance_plot(runs: &[ScheduleRun]) -> Vec<Series> {
    runs.iter()
        .map(|r| {
            let mut s = Series::solid(r.resolved.name.clone(), r.distance_series());
            s.markers = r.identification.iter().map(|k| *k as f64).collect();
            s
        })
        .collect()
}

/// Runs one command and writes its files to `out_dir`.
pub fn execute(
    command: Command,
    exp: &Experiment,
    out_dir: &Path,
    plot: bool,
    config_path: Option<&Path>,
) -> Result<Outcome> {
    if command == Command::Compare && exp.schedules.len() < 2 {
        return Err(ExperimentError::Config("compare needs at least two schedules".into()));
    }
    let runs = exp.solve_all(command)?;
    let mut w = Writer::new(out_dir)?;
    let seed = exp.seed();
    let mut summary = String::new();
    let mut status = monitor_status(&runs);

    w.write("feasibility.json", &feasibility_json(exp)?)?;
    for r in &runs {
        w.write(&format!("{}_trace.csv", file_stem(&r.resolved.name)), &trace_csv(r, seed)?)?;
    }

    match command {
        Command::Run => {
            let mut csv = String::from("schedule,iterations,termination,final_phi,activity,identification,violations\n");
            for r in &runs {
                let last = r.trace.records.last();
                let _ = writeln!(
                    csv,
                    "{},{},{:?},{},{},{},{}",
                    r.resolved.name,
                    r.trace.iterations(),
                    r.trace.termination,
                    fmt_opt(last.map(|x| x.phi)),
                    r.trace.final_activity.summary(),
                    r.identification.map(|v| v.to_string()).unwrap_or_default(),
                    r.trace.violations.len()
                );
                let _ = writeln!(
                    summary,
                    "{:<12} iterations {:>6}  K {:>6}  phi {:.6e}  {}",
                    r.resolved.name,
                    r.trace.iterations(),
                    r.identification.map(|v| v.to_string()).unwrap_or("-".into()),
                    last.map_or(f64::NAN, |x| x.phi),
                    r.trace.final_activity.summary()
                );
            }
            w.write("summary.csv", &csv)?;
            if plot {
                w.plot("run.svg", "distance to the limit", &distance_plot(&runs))?;
            }
        }
        Command::Compare => {
            let first_gamma = exp.schedules[0].gamma;
            let x0 = DenseVector::zeros(exp.problem.dimension());
            let shared = solver::reference_solution(&exp.problem, &InertialSchedule::forward_backward(first_gamma), &x0)
                .map_err(|e| solver_err("FB reference", e))?;
            let rows = comparison_rows(exp, &runs, &shared.point);
            for r in &rows {
                let _ = writeln!(
                    summary,
                    "{:<12} {:<9} s={} sum a={:.4}  iters to tol {:>6}  K {:>6}",
                    r.schedule,
                    r.rule.as_str(),
                    r.s,
                    r.sum_a,
                    r.iters_to_tol.map(|v| v.to_string()).unwrap_or("-".into()),
                    r.identification.map(|v| v.to_string()).unwrap_or("-".into())
                );
            }
            w.write("comparison.csv", &comparison_csv(&rows))?;
            if plot {
                w.plot("compare.svg", "distance to the limit", &distance_plot(&runs))?;
            }
        }
        Command::Rates => {
            let rows = rates_rows(exp, &runs)?;
            w.write("rates.csv", &rates_csv(&rows))?;
            w.write(
                "rates.json",
                &serde_json::to_string_pretty(&rows.iter().map(|r| &r.report).collect::<Vec<_>>()).map_err(internal)?,
            )?;
            let missing: Vec<&str> = rows
                .iter()
                .filter(|r| r.report.observed.is_none())
                .map(|r| r.report.schedule.as_str())
                .collect();
            for row in &rows {
                let r = &row.report;
                let _ = writeln!(
                    summary,
                    "{:<12} K {:>6}  rho(M) {:.6}  observed {}  tau {:.4e}",
                    r.schedule,
                    r.identification_iter.map(|v| v.to_string()).unwrap_or("-".into()),
                    r.rho_m,
                    r.observed.map(|o| format!("{:.6}", o.rate)).unwrap_or("-".into()),
                    r.tau
                );
            }
            if plot {
                let mut series = Vec::new();
                for (run, row) in runs.iter().zip(&rows) {
                    let mut s = Series::solid(format!("{} (P)", run.resolved.name), run.distance_series());
                    s.markers = run.identification.iter().map(|k| *k as f64).collect();
                    let color = plot_color(series.len() / 2);
                    s.color = Some(color.clone());
                    series.push(s);
                    if let (Some(k), Some(o)) = (run.identification, row.report.observed) {
                        let d0 = run.trace.records.get(k).and_then(|r| r.dist_to_xstar).unwrap_or(0.0);
                        let rho = row.report.rho_m;
                        let pts = (k..=o.window.1)
                            .step_by((o.window.1 - k).div_ceil(400).max(1))
                            .map(|j| (j as f64, d0 * rho.powi((j - k) as i32)))
                            .collect();
                        let mut t = Series::dashed(format!("{} (T)", run.resolved.name), pts);
                        t.color = Some(color);
                        series.push(t);
                    }
                }
                w.plot("rates.svg", "observed and predicted local rates", &series)?;
            }
            if status.is_none() && !missing.is_empty() {
                status = Some(ExperimentError::InsufficientData(missing.join(", ")));
            }
        }
    }

    let meta = serde_json::json!({
        "command": command.as_str(),
        "config": config_path.map(|p| p.display().to_string()),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "files": w.files.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    w.write("metadata.json", &serde_json::to_string_pretty(&meta).map_err(internal)?)?;

    Ok(Outcome {
        files: w.files,
        summary,
        status,
    })
}

fn plot_color(i: usize) -> String {
    const C: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    C[i % C.len()].to_string()
}
