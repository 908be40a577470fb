//! The multi-step inertial forward-backward iteration
//!
//! ```text
//! y_a = x_k + sum_i a_i (x_{k-i} - x_{k-i-1})
//! y_b = x_k + sum_i b_i (x_{k-i} - x_{k-i-1})
//! x_{k+1} = prox_{gamma_k R}(y_a - gamma_k grad F(y_b))
//! ```
//!
//! with a history buffer that starts as `s + 1` copies of `x0`, plus the two
//! runtime monitors: the subgradient residual bound and the descent
//! inequality with constants `(mu, nu)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{DenseVector, NumericsError};
use crate::params::{self, FeasibilityReport, OnlineRule, ParamsError, StepBounds};
use crate::penalties::{Activity, PenaltyError};
use crate::problems::CompositeProblem;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("shape mismatch: problem has dimension {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("iterate became non-finite at k = {k}")]
    Divergence { k: usize, trace: Box<RunTrace> },
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Absolute slack allowed in the descent inequality.
pub const DESCENT_TOL: f64 = 1e-10;

/// Relative rounding allowance of the residual bound, applied to the
/// magnitudes that enter `g`.
pub const RESIDUAL_ROUNDING: f64 = 1e-12;

/// Coefficients outside `]-1, 2]` are rejected.
pub const COEFF_MIN: f64 = -1.0;
pub const COEFF_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Constant(f64),
    /// `gamma_k = steps[k mod len]`.
    Cyclic(Vec<f64>),
}

impl StepSize {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSize::Constant(g) => *g,
            StepSize::Cyclic(v) => v[k % v.len()],
        }
    }

    pub fn bounds(&self) -> StepBounds {
        match self {
            StepSize::Constant(g) => StepBounds::constant(*g),
            StepSize::Cyclic(v) => StepBounds {
                lower: v.iter().copied().fold(f64::INFINITY, f64::min),
                upper: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            },
        }
    }
}

/// Memory depth, coefficient sequences and step sizes of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InertialSchedule {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub step: StepSize,
    /// When set, the coefficients are scaled down each iteration so that
    /// their sum stays below the online cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineRule>,
}

impl InertialSchedule {
    pub fn new(name: impl Into<String>, a: Vec<f64>, b: Vec<f64>, step: StepSize) -> Result<Self> {
        let schedule = Self {
            name: name.into(),
            a,
            b,
            step,
            online: None,
        };
        schedule.check_shape()?;
        Ok(schedule)
    }

    /// Plain forward-backward: `s = 1`, `a = b = 0`.
    pub fn forward_backward(gamma: f64) -> Self {
        Self {
            name: "FB".into(),
            a: vec![0.0],
            b: vec![0.0],
            step: StepSize::Constant(gamma),
            online: None,
        }
    }

    /// `b = a` with a constant step.
    pub fn symmetric(name: impl Into<String>, a: Vec<f64>, gamma: f64) -> Result<Self> {
        Self::new(name, a.clone(), a, StepSize::Constant(gamma))
    }

    pub fn with_online(mut self, rule: OnlineRule) -> Self {
        self.online = Some(rule);
        self
    }

    pub fn memory(&self) -> usize {
        self.a.len()
    }

    pub fn step_bounds(&self) -> StepBounds {
        self.step.bounds()
    }

    pub fn is_forward_backward(&self) -> bool {
        self.a.iter().chain(&self.b).all(|v| *v == 0.0)
    }

    fn check_shape(&self) -> Result<()> {
        if self.a.is_empty() || self.a.len() != self.b.len() {
            return Err(SolverError::InvalidSchedule(format!(
                "{}: coefficient vectors must be non-empty and of equal length ({} vs {})",
                self.name,
                self.a.len(),
                self.b.len()
            )));
        }
        if let Some(v) = self
            .a
            .iter()
            .chain(&self.b)
            .find(|v| !(**v > COEFF_MIN && **v <= COEFF_MAX))
        {
            return Err(SolverError::InvalidSchedule(format!(
                "{}: coefficient {v} outside ]-1, 2]",
                self.name
            )));
        }
        let steps: &[f64] = match &self.step {
            StepSize::Constant(g) => std::slice::from_ref(g),
            StepSize::Cyclic(v) => v,
        };
        if let Some(g) = steps.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(SolverError::InvalidSchedule(format!(
                "{}: step size {g} must be positive and finite",
                self.name
            )));
        }
        if let StepSize::Cyclic(v) = &self.step {
            if v.is_empty() {
                return Err(SolverError::InvalidSchedule(format!(
                    "{}: empty step cycle",
                    self.name
                )));
            }
        }
        if let Some(rule) = &self.online {
            rule.validate()?;
        }
        Ok(())
    }

    /// Shape checks plus `0 < gamma_lower <= gamma_upper < 1/L`.
    pub fn validate(&self, lipschitz: f64) -> Result<()> {
        self.check_shape()?;
        self.step_bounds().validate(lipschitz)?;
        Ok(())
    }

    /// Feasibility of the base coefficients at the stationary constants.
    pub fn feasibility(&self, lipschitz: f64) -> Result<FeasibilityReport> {
        Ok(params::check_feasibility(
            self.step_bounds(),
            &self.a,
            &self.b,
            lipschitz,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monitors {
    pub descent: bool,
    pub residual: bool,
}

impl Monitors {
    pub const NONE: Monitors = Monitors {
        descent: false,
        residual: false,
    };
    pub const ALL: Monitors = Monitors {
        descent: true,
        residual: true,
    };
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Stop once `Delta_{k+1} <= tol_delta`.
    pub tol_delta: f64,
    /// Additional stopping floor `tol_relative * |x_{k+1}|`, for runs driven
    /// to rounding level. Zero disables it.
    pub tol_relative: f64,
    pub monitors: Monitors,
    /// Constants of the descent monitor; the stationary pair when `None`.
    pub mu_nu: Option<(f64, f64)>,
    /// Point to which `dist_to_xstar` is measured.
    pub reference: Option<DenseVector>,
    /// Stop once the distance to `reference` drops to this value.
    pub stop_distance: Option<f64>,
    pub keep_iterates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol_delta: 1e-10,
            tol_relative: 0.0,
            monitors: Monitors::NONE,
            mu_nu: None,
            reference: None,
            stop_distance: None,
            keep_iterates: false,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(SolverError::InvalidOptions("max_iter must be at least 1".into()));
        }
        if !(self.tol_delta > 0.0) {
            return Err(SolverError::InvalidOptions(format!(
                "tol_delta must be positive, got {}",
                self.tol_delta
            )));
        }
        if let Some((mu, nu)) = self.mu_nu {
            if !(mu > 0.0 && nu > 0.0) {
                return Err(SolverError::InvalidOptions(format!(
                    "monitor constants must be positive, got ({mu}, {nu})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub phi: f64,
    /// `|x_k - x_{k-1}|`, zero at `k = 0`.
    pub delta: f64,
    /// `|g_k|`, when the residual monitor is on (`k >= 1`).
    pub resid: Option<f64>,
    /// Compact activity signature of `x_k`.
    pub activity: String,
    pub support_size: usize,
    pub dist_to_xstar: Option<f64>,
    /// `|g| - bound`; non-positive when the residual bound holds.
    pub residual_slack: Option<f64>,
    /// `lhs - rhs` of the descent inequality; non-positive when it holds.
    pub descent_slack: Option<f64>,
    /// Factor the online cap applied to the coefficients (1 when inactive).
    pub coefficient_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIter,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    Descent,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorViolation {
    pub k: usize,
    pub kind: MonitorKind,
    pub slack: f64,
}

/// Constants the descent monitor was evaluated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConstants {
    pub mu: f64,
    pub nu: f64,
    pub beta_lower: f64,
    pub alpha_bar: Vec<f64>,
}

impl DescentConstants {
    pub fn new(schedule: &InertialSchedule, mu: f64, nu: f64, lipschitz: f64) -> Self {
        let step = schedule.step_bounds();
        Self {
            mu,
            nu,
            beta_lower: params::beta_lower(step, mu, nu, lipschitz),
            alpha_bar: params::alpha_bar(&schedule.a, &schedule.b, step, mu, nu, lipschitz),
        }
    }

    pub fn stationary(schedule: &InertialSchedule, lipschitz: f64) -> Self {
        let (mu, nu) = params::stationary_mu_nu(&schedule.a, &schedule.b, lipschitz);
        Self::new(schedule, mu, nu, lipschitz)
    }

    /// `phi_next + beta Delta_next^2 - (phi + sum alpha_i Delta_{k-i}^2)`.
    pub fn slack(&self, phi: f64, phi_next: f64, delta_next: f64, window: &[f64]) -> f64 {
        let memory: f64 = self
            .alpha_bar
            .iter()
            .zip(window)
            .map(|(a, d)| a * d * d)
            .sum();
        (phi_next + self.beta_lower * delta_next * delta_next) - (phi + memory)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub schedule: InertialSchedule,
    pub seed: Option<u64>,
    pub records: Vec<IterationRecord>,
    #[serde(skip)]
    pub final_point: DenseVector,
    pub final_activity: Activity,
    pub termination: Termination,
    pub descent_constants: Option<DescentConstants>,
    pub violations: Vec<MonitorViolation>,
    #[serde(skip)]
    pub iterates: Option<Vec<DenseVector>>,
}

impl RunTrace {
    /// Number of iterations performed (the last record's `k`).
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    /// First `k` with `dist_to_xstar <= tol`.
    pub fn first_within(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.dist_to_xstar.is_some_and(|d| d <= tol))
            .map(|r| r.k)
    }

    /// Sum of the step lengths, a finite-length proxy.
    pub fn path_length(&self) -> f64 {
        self.records.iter().map(|r| r.delta).sum()
    }
}

/// Subgradient of `Phi` at `x_next` produced by one step:
/// `g = (y_a - x_next) / gamma - grad F(y_b) + grad F(x_next)`.
pub fn subgradient_residual(
    problem: &CompositeProblem,
    gamma: f64,
    y_a: &DenseVector,
    y_b: &DenseVector,
    x_next: &DenseVector,
) -> DenseVector {
    let f = problem.smooth();
    (y_a - x_next) / gamma - f.gradient(y_b) + f.gradient(x_next)
}

/// Right-hand side of the residual bound,
/// `(1/gamma_lower + L) Delta_{k+1} + sum_i (|a_i| / gamma_lower + L |b_i|) Delta_{k-i}`.
pub fn residual_bound(
    gamma_lower: f64,
    lipschitz: f64,
    a: &[f64],
    b: &[f64],
    delta_next: f64,
    window: &[f64],
) -> f64 {
    let memory: f64 = a
        .iter()
        .zip(b)
        .zip(window)
        .map(|((ai, bi), d)| (ai.abs() / gamma_lower + lipschitz * bi.abs()) * d)
        .sum();
    (1.0 / gamma_lower + lipschitz) * delta_next + memory
}

fn combine(x: &DenseVector, coeffs: &[f64], diffs: &[DenseVector]) -> DenseVector {
    let mut y = x.clone();
    for (c, d) in coeffs.iter().zip(diffs) {
        if *c != 0.0 {
            y.axpy(*c, d, 1.0);
        }
    }
    y
}

fn all_finite(v: &DenseVector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs the inertial iteration from `x0`.
pub fn mifb_solve(
    problem: &CompositeProblem,
    schedule: &InertialSchedule,
    x0: &DenseVector,
    opts: &SolveOptions,
) -> Result<RunTrace> {
    let n = problem.dimension();
    if x0.len() != n {
        return Err(SolverError::Shape {
            expected: n,
            found: x0.len(),
        });
    }
    if let Some(r) = &opts.reference {
        if r.len() != n {
            return Err(SolverError::Shape {
                expected: n,
                found: r.len(),
            });
        }
    }
    if !all_finite(x0) {
        return Err(SolverError::Numerics(NumericsError::NonFinite));
    }
    opts.validate()?;
    let lipschitz = problem.lipschitz();
    schedule.validate(lipschitz)?;
    // capped schedules rely on the online rule rather than the static check
    if let (None, Ok(report)) = (&schedule.online, schedule.feasibility(lipschitz)) {
        if !report.feasible {
            log::warn!(
                "schedule {} does not pass the feasibility check (delta = {:.3e})",
                schedule.name,
                report.delta
            );
        }
    }

    let s = schedule.memory();
    let gamma_lower = schedule.step_bounds().lower;
    let constants = opts.monitors.descent.then(|| match opts.mu_nu {
        Some((mu, nu)) => DescentConstants::new(schedule, mu, nu, lipschitz),
        None => DescentConstants::stationary(schedule, lipschitz),
    });
    let penalty = problem.penalty();
    let smooth = problem.smooth();

    // history[i] = x_{k-i}, deltas[i] = Delta_{k-i}
    let mut history: VecDeque<DenseVector> = std::iter::repeat_n(x0.clone(), s + 1).collect();
    let mut deltas: VecDeque<f64> = std::iter::repeat_n(0.0, s).collect();
    let activity0 = penalty.activity(x0)?;
    let mut phi = smooth.value(x0) + penalty.value(x0)?;
    let dist = |x: &DenseVector| opts.reference.as_ref().map(|r| (x - r).norm());

    let mut trace = RunTrace {
        schedule: schedule.clone(),
        seed: problem.metadata().instance.as_ref().map(|i| i.seed()),
        records: vec![IterationRecord {
            k: 0,
            phi,
            delta: 0.0,
            resid: None,
            activity: activity0.summary(),
            support_size: activity0.size(),
            dist_to_xstar: dist(x0),
            residual_slack: None,
            descent_slack: None,
            coefficient_scale: 1.0,
        }],
        final_point: x0.clone(),
        final_activity: activity0,
        termination: Termination::MaxIter,
        descent_constants: constants.clone(),
        violations: Vec::new(),
        iterates: opts.keep_iterates.then(|| vec![x0.clone()]),
    };

    for k in 0..opts.max_iter {
        let window: Vec<f64> = deltas.iter().copied().collect();
        let scale = match &schedule.online {
            Some(rule) => rule.scale(k.max(1), &window, &schedule.a),
            None => 1.0,
        };
        let (a, b): (Vec<f64>, Vec<f64>) = if scale == 1.0 {
            (schedule.a.clone(), schedule.b.clone())
        } else {
            (
                schedule.a.iter().map(|v| v * scale).collect(),
                schedule.b.iter().map(|v| v * scale).collect(),
            )
        };
        let diffs: Vec<DenseVector> = (0..s).map(|i| &history[i] - &history[i + 1]).collect();
        let x = &history[0];
        let y_a = combine(x, &a, &diffs);
        let y_b = if a == b { y_a.clone() } else { combine(x, &b, &diffs) };
        let gamma = schedule.step.at(k);
        let grad_b = smooth.gradient(&y_b);
        let z = &y_a - &grad_b * gamma;
        if !all_finite(&z) {
            trace.final_point = x.clone();
            return Err(SolverError::Divergence {
                k: k + 1,
                trace: Box::new(trace),
            });
        }
        let out = penalty.prox(&z, gamma)?;
        let x_next = out.point;
        if !all_finite(&x_next) {
            trace.final_point = x.clone();
            return Err(SolverError::Divergence {
                k: k + 1,
                trace: Box::new(trace),
            });
        }
        let delta_next = (&x_next - x).norm();
        let phi_next = smooth.value(&x_next) + out.value;

        let (resid, residual_slack) = if opts.monitors.residual {
            let grad_next = smooth.gradient(&x_next);
            let g = (&y_a - &x_next) / gamma - &grad_b + &grad_next;
            let bound = residual_bound(gamma_lower, lipschitz, &a, &b, delta_next, &window);
            let rounding = RESIDUAL_ROUNDING
                * ((y_a.norm() + x_next.norm()) / gamma + grad_b.norm() + grad_next.norm());
            let norm = g.norm();
            let slack = norm - bound;
            if slack > rounding {
                trace.violations.push(MonitorViolation {
                    k: k + 1,
                    kind: MonitorKind::Residual,
                    slack,
                });
            }
            (Some(norm), Some(slack))
        } else {
            (None, None)
        };
        let descent_slack = constants.as_ref().map(|c| {
            let slack = c.slack(phi, phi_next, delta_next, &window);
            if slack > DESCENT_TOL {
                trace.violations.push(MonitorViolation {
                    k: k + 1,
                    kind: MonitorKind::Descent,
                    slack,
                });
            }
            slack
        });

        let d_next = dist(&x_next);
        trace.records.push(IterationRecord {
            k: k + 1,
            phi: phi_next,
            delta: delta_next,
            resid,
            activity: out.activity.summary(),
            support_size: out.activity.size(),
            dist_to_xstar: d_next,
            residual_slack,
            descent_slack,
            coefficient_scale: scale,
        });
        if let Some(it) = trace.iterates.as_mut() {
            it.push(x_next.clone());
        }
        trace.final_activity = out.activity;
        phi = phi_next;
        let stop_floor = opts.tol_delta.max(opts.tol_relative * x_next.norm());
        history.pop_back();
        history.push_front(x_next);
        deltas.pop_back();
        deltas.push_front(delta_next);

        if delta_next <= stop_floor {
            trace.termination = Termination::Tolerance;
            break;
        }
        if let (Some(stop), Some(d)) = (opts.stop_distance, d_next) {
            if d <= stop {
                trace.termination = Termination::Distance;
                break;
            }
        }
    }
    trace.final_point = history.pop_front().expect("history is never empty");
    Ok(trace)
}

/// Recomputes the descent-inequality slacks of a finished run from its
/// records. Entry `j` belongs to the step from `k = j` to `k = j + 1`.
pub fn descent_check(
    trace: &RunTrace,
    mu: f64,
    nu: f64,
    lipschitz: f64,
) -> Result<Vec<f64>> {
    if !(mu > 0.0 && nu > 0.0) {
        return Err(SolverError::InvalidOptions(format!(
            "monitor constants must be positive, got ({mu}, {nu})"
        )));
    }
    let c = DescentConstants::new(&trace.schedule, mu, nu, lipschitz);
    let s = trace.schedule.memory();
    let mut window: VecDeque<f64> = std::iter::repeat_n(0.0, s).collect();
    let mut out = Vec::with_capacity(trace.records.len().saturating_sub(1));
    for pair in trace.records.windows(2) {
        let w: Vec<f64> = window.iter().copied().collect();
        out.push(c.slack(pair[0].phi, pair[1].phi, pair[1].delta, &w));
        window.pop_back();
        window.push_front(pair[1].delta);
    }
    Ok(out)
}

/// First `k` whose descent slack exceeds [`DESCENT_TOL`].
pub fn first_descent_violation(slacks: &[f64]) -> Option<usize> {
    slacks.iter().position(|s| *s > DESCENT_TOL).map(|j| j + 1)
}

/// High-accuracy limit point of a schedule with its criticality
/// certificate `|g|` at the last step.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub point: DenseVector,
    pub activity: Activity,
    pub residual_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Reference-run options: `tol_delta = 1e-14`, `max_iter = 1e5`, with a
/// rounding floor of `1e-15 |x|` on the step length.
pub fn reference_options() -> SolveOptions {
    SolveOptions {
        max_iter: 100_000,
        tol_delta: 1e-14,
        tol_relative: 1e-15,
        monitors: Monitors {
            descent: false,
            residual: true,
        },
        ..SolveOptions::default()
    }
}

pub fn reference_solution(
    problem: &CompositeProblem,
    schedule: &InertialSchedule,
    x0: &DenseVector,
) -> Result<ReferenceSolution> {
    let trace = mifb_solve(problem, schedule, x0, &reference_options())?;
    Ok(ReferenceSolution {
        residual_norm: trace.records.last().and_then(|r| r.resid).unwrap_or(0.0),
        iterations: trace.iterations(),
        termination: trace.termination,
        activity: trace.final_activity,
        point: trace.final_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;
    use crate::penalties::{L0Penalty, Penalty, ZeroPenalty};
    use crate::problems::{make_sparse_regression, LeastSquares};

    fn quadratic(center: &[f64], penalty: Box<dyn Penalty>) -> CompositeProblem {
        let n = center.len();
        let ls = LeastSquares::new(DenseMatrix::identity(n, n), DenseVector::from_column_slice(center)).unwrap();
        CompositeProblem::new(Box::new(ls), penalty, "quadratic").unwrap()
    }

    fn keep(opts: SolveOptions) -> SolveOptions {
        SolveOptions {
            keep_iterates: true,
            ..opts
        }
    }

    #[test]
    fn halving_recursion() {
        let p = quadratic(&[0.0], Box::new(ZeroPenalty::new(1)));
        let s = InertialSchedule::forward_backward(0.5);
        let t = mifb_solve(&p, &s, &DenseVector::from_element(1, 1.0), &keep(SolveOptions { max_iter: 10, ..Default::default() })).unwrap();
        let it = t.iterates.unwrap();
        for (k, x) in it.iter().enumerate() {
            assert_eq!(x[0], 0.5f64.powi(k as i32));
        }
        assert_eq!(t.termination, Termination::MaxIter);
        assert_eq!(t.records.len(), 11);
    }

    #[test]
    fn scalar_l0_fixed_point() {
        let p = quadratic(&[2.0], Box::new(L0Penalty::new(0.1, 1).unwrap()));
        let s = InertialSchedule::forward_backward(0.5);
        let x0 = DenseVector::from_element(1, 2.0);
        let t = mifb_solve(&p, &s, &x0, &SolveOptions::default()).unwrap();
        assert_eq!(t.final_point[0], 2.0);
        assert_eq!(t.termination, Termination::Tolerance);
        let r = reference_solution(&p, &s, &x0).unwrap();
        assert_eq!(r.point[0], 2.0);
        assert_eq!(r.residual_norm, 0.0);
    }

    #[test]
    fn zero_penalty_reference_is_minimizer() {
        let p = quadratic(&[1.5, -0.5, 3.0], Box::new(ZeroPenalty::new(3)));
        let s = InertialSchedule::symmetric("1-iFB", vec![0.2], 0.6).unwrap();
        let r = reference_solution(&p, &s, &DenseVector::zeros(3)).unwrap();
        assert!((r.point - DenseVector::from_column_slice(&[1.5, -0.5, 3.0])).norm() <= 1e-12);
    }

    #[test]
    fn two_step_history_matches_hand_expansion() {
        // F = 0.5 (x - 1)^2, no penalty, gamma = 0.5, a = (0.3, 0.2), b = (0.1, -0.4)
        let p = quadratic(&[1.0], Box::new(ZeroPenalty::new(1)));
        let s = InertialSchedule::new("hand", vec![0.3, 0.2], vec![0.1, -0.4], StepSize::Constant(0.5)).unwrap();
        let t = mifb_solve(&p, &s, &DenseVector::from_element(1, 4.0), &keep(SolveOptions { max_iter: 3, ..Default::default() })).unwrap();
        let it: Vec<f64> = t.iterates.unwrap().iter().map(|v| v[0]).collect();
        let mut xs = vec![4.0, 4.0, 4.0]; // x_{-2}, x_{-1}, x_0
        for _ in 0..3 {
            let n = xs.len();
            let (xk, xk1, xk2) = (xs[n - 1], xs[n - 2], xs[n - 3]);
            let ya = xk + 0.3 * (xk - xk1) + 0.2 * (xk1 - xk2);
            let yb = xk + 0.1 * (xk - xk1) + -0.4 * (xk1 - xk2);
            xs.push(ya - 0.5 * (yb - 1.0));
        }
        assert_eq!(it, xs[2..].to_vec());
    }

    #[test]
    fn fb_matches_direct_loop() {
        let p = make_sparse_regression(1, 20, 40, 4, 0.01, 0.5).unwrap();
        let gamma = 0.3 / p.lipschitz();
        let t = mifb_solve(
            &p,
            &InertialSchedule::forward_backward(gamma),
            &DenseVector::zeros(40),
            &keep(SolveOptions { max_iter: 200, tol_delta: 1e-300, ..Default::default() }),
        )
        .unwrap();
        let mut x = DenseVector::zeros(40);
        for (k, xk) in t.iterates.unwrap().iter().enumerate().skip(1) {
            let z = &x - p.smooth().gradient(&x) * gamma;
            x = p.penalty().prox(&z, gamma).unwrap().point;
            assert_eq!(&x, xk, "k = {k}");
        }
    }

    #[test]
    fn monitors_hold_on_regression() {
        let p = make_sparse_regression(2, 48, 128, 8, 0.01, 1.0).unwrap();
        let gamma = 0.3 / p.lipschitz();
        for a in [0.0, 0.1, 0.2] {
            let s = InertialSchedule::symmetric("s", vec![a], gamma).unwrap();
            let opts = SolveOptions { monitors: Monitors::ALL, ..Default::default() };
            let t = mifb_solve(&p, &s, &DenseVector::zeros(128), &opts).unwrap();
            assert!(t.violations.is_empty(), "{:?}", &t.violations[..t.violations.len().min(3)]);
            let c = t.descent_constants.as_ref().unwrap();
            let recomputed = descent_check(&t, c.mu, c.nu, p.lipschitz()).unwrap();
            let inline: Vec<f64> = t.records[1..].iter().map(|r| r.descent_slack.unwrap()).collect();
            assert_eq!(recomputed, inline);
            assert_eq!(first_descent_violation(&recomputed), None);
        }
    }

    #[test]
    fn stationary_sequence_has_zero_slack() {
        let p = quadratic(&[2.0], Box::new(L0Penalty::new(0.1, 1).unwrap()));
        let s = InertialSchedule::symmetric("1-iFB", vec![0.1], 0.5).unwrap();
        let opts = SolveOptions { max_iter: 5, monitors: Monitors::ALL, tol_delta: 1e-300, ..Default::default() };
        let t = mifb_solve(&p, &s, &DenseVector::from_element(1, 2.0), &opts).unwrap();
        for r in &t.records[1..] {
            assert_eq!(r.descent_slack, Some(0.0));
            assert_eq!(r.resid, Some(0.0));
        }
    }

    #[test]
    fn fb_residual_bound_specializes() {
        let p = make_sparse_regression(3, 20, 30, 3, 0.01, 0.5).unwrap();
        let gamma = 0.5 / p.lipschitz();
        let opts = SolveOptions { max_iter: 50, monitors: Monitors::ALL, ..Default::default() };
        let t = mifb_solve(&p, &InertialSchedule::forward_backward(gamma), &DenseVector::zeros(30), &opts).unwrap();
        for r in &t.records[1..] {
            assert!(r.resid.unwrap() <= (1.0 / gamma + p.lipschitz()) * r.delta * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        // a = 1.99, b = 0, gamma = 0.1: characteristic roots of
        // l^2 - 2.89 l + 1.99 include l ~ 1.76
        let p = quadratic(&[0.0], Box::new(ZeroPenalty::new(1)));
        let s = InertialSchedule::new("wild", vec![1.99], vec![0.0], StepSize::Constant(0.1)).unwrap();
        let opts = SolveOptions { max_iter: 100_000, tol_delta: 1e-300, ..Default::default() };
        match mifb_solve(&p, &s, &DenseVector::from_element(1, 1.0), &opts) {
            Err(SolverError::Divergence { k, trace }) => {
                assert!(k > 1);
                assert!(trace.records.iter().all(|r| r.phi.is_finite() || r.phi.is_infinite()));
                assert!(trace.final_point[0].is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn shape_and_schedule_errors() {
        let p = quadratic(&[0.0, 0.0], Box::new(ZeroPenalty::new(2)));
        let s = InertialSchedule::forward_backward(0.5);
        assert!(matches!(
            mifb_solve(&p, &s, &DenseVector::zeros(3), &SolveOptions::default()),
            Err(SolverError::Shape { expected: 2, found: 3 })
        ));
        assert!(InertialSchedule::symmetric("x", vec![-1.0], 0.5).is_err());
        assert!(InertialSchedule::symmetric("x", vec![2.5], 0.5).is_err());
        assert!(InertialSchedule::symmetric("x", vec![2.0], 0.5).is_ok());
        let too_long = InertialSchedule::forward_backward(1.0);
        assert!(mifb_solve(&p, &too_long, &DenseVector::zeros(2), &SolveOptions::default()).is_err());
    }

    #[test]
    fn online_cap_scales_coefficients() {
        let p = make_sparse_regression(4, 30, 60, 4, 0.01, 1.0).unwrap();
        let gamma = 0.8 / p.lipschitz();
        let s = InertialSchedule::symmetric("bnd", vec![0.3], gamma).unwrap().with_online(OnlineRule { c: 1e-3, q: 0.1 });
        let opts = SolveOptions { max_iter: 300, monitors: Monitors::ALL, ..Default::default() };
        let t = mifb_solve(&p, &s, &DenseVector::zeros(60), &opts).unwrap();
        assert!(t.records.iter().any(|r| r.coefficient_scale < 1.0));
        assert!(t.records.iter().all(|r| r.coefficient_scale <= 1.0));
        assert!(t.violations.iter().all(|v| v.kind != MonitorKind::Residual));
    }

    #[test]
    fn cyclic_steps() {
        let steps = StepSize::Cyclic(vec![0.2, 0.4]);
        assert_eq!(steps.at(3), 0.4);
        assert_eq!(steps.bounds(), StepBounds { lower: 0.2, upper: 0.4 });
    }

    #[test]
    fn finite_length() {
        let p = make_sparse_regression(5, 48, 128, 8, 0.01, 1.0).unwrap();
        let gamma = 0.3 / p.lipschitz();
        let s = InertialSchedule::symmetric("1-iFB", vec![0.2], gamma).unwrap();
        let t = mifb_solve(&p, &s, &DenseVector::zeros(128), &SolveOptions::default()).unwrap();
        assert_eq!(t.termination, Termination::Tolerance);
        let total = t.path_length();
        assert!(total.is_finite());
        let n = t.records.len();
        let tail: f64 = t.records[n - n / 10..].iter().map(|r| r.delta).sum();
        assert!(tail <= 1e-6 * total);
    }
}
