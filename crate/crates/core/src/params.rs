//! Parameter feasibility: the descent quantities `beta`, `alpha_i`, `delta`,
//! their geometric restatements, the empirical bound on the inertia sum and
//! the online cap that keeps the inertial displacements summable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ParamsError>;

/// Floor applied to the stationary constants when a coefficient vector
/// vanishes (the supremum of `delta` is then approached as the constant
/// goes to zero).
pub const MU_NU_FLOOR: f64 = 1e-9;

/// Smallest and largest step sizes a schedule uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub lower: f64,
    pub upper: f64,
}

impl StepBounds {
    pub fn constant(gamma: f64) -> Self {
        Self {
            lower: gamma,
            upper: gamma,
        }
    }

    pub fn validate(&self, lipschitz: f64) -> Result<()> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(ParamsError::InvalidParameter(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        if !(self.lower > 0.0 && self.lower <= self.upper && self.upper * lipschitz < 1.0) {
            return Err(ParamsError::InvalidParameter(format!(
                "step bounds [{}, {}] must satisfy 0 < lower <= upper < 1/L = {}",
                self.lower,
                self.upper,
                1.0 / lipschitz
            )));
        }
        Ok(())
    }
}

/// Shape of the admissible coefficient region the report was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// `s = 1`: `(a_0, b_0)` must lie in an ellipsoid.
    Ellipsoid,
    /// `b = a`: the coefficients must lie in a ball.
    Ball,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub mu: f64,
    pub nu: f64,
    pub lipschitz: f64,
    pub step: StepBounds,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub beta_lower: f64,
    pub alpha_bar: Vec<f64>,
    pub delta: f64,
    pub feasible: bool,
    pub geometry: Geometry,
}

impl FeasibilityReport {
    pub fn memory(&self) -> usize {
        self.a.len()
    }
}

fn check_coefficients(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(ParamsError::InvalidParameter(format!(
            "coefficient vectors must be non-empty and of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ParamsError::InvalidParameter("non-finite coefficient".into()));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ParamsError::InvalidParameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// `beta = (1 - gamma L - mu - nu gamma) / (2 gamma)`, evaluated at the
/// largest step (the smallest value over the schedule).
pub fn beta_lower(step: StepBounds, mu: f64, nu: f64, lipschitz: f64) -> f64 {
    let g = step.upper;
    (1.0 - g * lipschitz - mu - nu * g) / (2.0 * g)
}

/// `alpha_i = s a_i^2 / (2 gamma_lower mu) + s b_i^2 L^2 / (2 nu)`.
pub fn alpha_bar(a: &[f64], b: &[f64], step: StepBounds, mu: f64, nu: f64, lipschitz: f64) -> Vec<f64> {
    let s = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(ai, bi)| {
            s * ai * ai / (2.0 * step.lower * mu) + s * bi * bi * lipschitz * lipschitz / (2.0 * nu)
        })
        .collect()
}

/// Feasibility report for constants `(mu, nu)`; feasible iff
/// `delta = beta - sum alpha_i > 0`.
pub fn delta(
    step: StepBounds,
    a: &[f64],
    b: &[f64],
    mu: f64,
    nu: f64,
    lipschitz: f64,
) -> Result<FeasibilityReport> {
    check_coefficients(a, b)?;
    check_positive("mu", mu)?;
    check_positive("nu", nu)?;
    step.validate(lipschitz)?;
    let beta = beta_lower(step, mu, nu, lipschitz);
    let alphas = alpha_bar(a, b, step, mu, nu, lipschitz);
    let delta = beta - alphas.iter().sum::<f64>();
    let geometry = if a.len() == 1 {
        Geometry::Ellipsoid
    } else if a == b {
        Geometry::Ball
    } else {
        Geometry::General
    };
    Ok(FeasibilityReport {
        mu,
        nu,
        lipschitz,
        step,
        a: a.to_vec(),
        b: b.to_vec(),
        beta_lower: beta,
        alpha_bar: alphas,
        delta,
        feasible: delta > 0.0,
        geometry,
    })
}

/// Maximizer of `delta` over `(mu, nu)`:
/// `mu = sqrt(s sum a_i^2)`, `nu = L sqrt(s sum b_i^2)`, floored at
/// [`MU_NU_FLOOR`].
///
/// Setting the partial derivatives of `delta` to zero gives
/// `s sum a_i^2 / (2 gamma mu^2) = 1 / (2 gamma)` and
/// `s L^2 sum b_i^2 / (2 nu^2) = 1 / 2`; `delta` is concave in both, so this
/// is the maximum (for constant steps).
pub fn stationary_mu_nu(a: &[f64], b: &[f64], lipschitz: f64) -> (f64, f64) {
    let s = a.len() as f64;
    let sa: f64 = a.iter().map(|v| v * v).sum();
    let sb: f64 = b.iter().map(|v| v * v).sum();
    let mu = (s * sa).sqrt().max(MU_NU_FLOOR);
    let nu = (lipschitz * (s * sb).sqrt()).max(MU_NU_FLOOR);
    (mu, nu)
}

/// Report at the stationary constants: the schedule check used throughout.
pub fn check_feasibility(step: StepBounds, a: &[f64], b: &[f64], lipschitz: f64) -> Result<FeasibilityReport> {
    let (mu, nu) = stationary_mu_nu(a, b, lipschitz);
    delta(step, a, b, mu, nu, lipschitz)
}

/// `s = 1`: `a0^2 / (2 gamma mu) + b0^2 / (2 nu / L^2) < beta`.
pub fn ellipsoid_check(a0: f64, b0: f64, step: StepBounds, mu: f64, nu: f64, lipschitz: f64) -> bool {
    let beta = beta_lower(step, mu, nu, lipschitz);
    a0 * a0 / (2.0 * step.lower * mu) + b0 * b0 / (2.0 * nu / (lipschitz * lipschitz)) < beta
}

/// Symmetric coefficients `b = a`:
/// `s (1 / (2 gamma mu) + L^2 / (2 nu)) sum a_i^2 < beta`.
pub fn ball_check(a: &[f64], step: StepBounds, mu: f64, nu: f64, lipschitz: f64) -> bool {
    let s = a.len() as f64;
    let beta = beta_lower(step, mu, nu, lipschitz);
    let radius_sq: f64 = a.iter().map(|v| v * v).sum();
    s * (1.0 / (2.0 * step.lower * mu) + lipschitz * lipschitz / (2.0 * nu)) * radius_sq < beta
}

/// Open interval `]0, upper[` for the inertia sum `sum a_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumInterval {
    pub lower: f64,
    pub upper: f64,
}

impl SumInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower < v && v < self.upper
    }
}

/// `]0, min(1, (1/L - gamma) / |2 gamma - 1/L|)[`. At `gamma = 1/(2L)` the
/// ratio is unbounded and the interval is `]0, 1[`.
pub fn empirical_bound(gamma: f64, lipschitz: f64) -> Result<SumInterval> {
    check_positive("L", lipschitz)?;
    if !(gamma > 0.0 && gamma * lipschitz < 1.0) {
        return Err(ParamsError::InvalidParameter(format!(
            "gamma must lie in ]0, 1/L[ = ]0, {}[, got {gamma}",
            1.0 / lipschitz
        )));
    }
    // in units of 1/L the ratio is (1 - r) / |2 r - 1|
    let r = gamma * lipschitz;
    let den = (2.0 * r - 1.0).abs();
    let upper = if den == 0.0 {
        1.0
    } else {
        ((1.0 - r) / den).min(1.0)
    };
    Ok(SumInterval { lower: 0.0, upper })
}

/// Online cap on the inertia sum, `c_k = c / (k^(1+q) sum_i Delta_{k-i})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineRule {
    #[serde(default = "OnlineRule::default_c")]
    pub c: f64,
    #[serde(default = "OnlineRule::default_q")]
    pub q: f64,
}

impl Default for OnlineRule {
    fn default() -> Self {
        Self { c: 10.0, q: 0.1 }
    }
}

impl OnlineRule {
    fn default_c() -> f64 {
        10.0
    }

    fn default_q() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("c", self.c)?;
        check_positive("q", self.q)
    }

    /// `c_k`, infinite when the window of displacements is all zero.
    pub fn cap(&self, k: usize, window: &[f64]) -> f64 {
        let denom = (k.max(1) as f64).powf(1.0 + self.q) * window.iter().sum::<f64>();
        if denom == 0.0 {
            f64::INFINITY
        } else {
            self.c / denom
        }
    }

    /// Factor `min(1, c_k / sum a)` applied to every coefficient, so that
    /// the capped sum is `min(sum a, c_k)`.
    pub fn scale(&self, k: usize, window: &[f64], base: &[f64]) -> f64 {
        let sum: f64 = base.iter().sum();
        let ck = self.cap(k, window);
        if sum > ck {
            ck / sum
        } else {
            1.0
        }
    }
}

/// Capped coefficients `a_{i,k} = a_i min(1, c_k / sum a)`.
pub fn online_cap(k: usize, window: &[f64], rule: &OnlineRule, base: &[f64]) -> Vec<f64> {
    let f = rule.scale(k, window, base);
    base.iter().map(|a| a * f).collect()
}

/// Largest `t` such that `(t d_a, t d_b)` passes the feasibility check at
/// the stationary constants, by bisection (`delta` decreases along the ray).
pub fn feasible_scale_limit(step: StepBounds, da: &[f64], db: &[f64], lipschitz: f64) -> Result<f64> {
    check_coefficients(da, db)?;
    step.validate(lipschitz)?;
    if da.iter().chain(db).all(|v| *v == 0.0) {
        return Ok(f64::INFINITY);
    }
    let feasible = |t: f64| -> bool {
        let a: Vec<f64> = da.iter().map(|v| v * t).collect();
        let b: Vec<f64> = db.iter().map(|v| v * t).collect();
        check_feasibility(step, &a, &b, lipschitz)
            .map(|r| r.feasible)
            .unwrap_or(false)
    };
    if !feasible(0.0) {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while feasible(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(lo)
}

/// Equal symmetric coefficients at `fraction` of the feasibility boundary.
pub fn default_feasible_coefficients(s: usize, step: StepBounds, lipschitz: f64, fraction: f64) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(ParamsError::InvalidParameter("memory depth must be at least 1".into()));
    }
    let ones = vec![1.0; s];
    let t = feasible_scale_limit(step, &ones, &ones, lipschitz)?;
    Ok(vec![fraction * t; s])
}

/// Equal coefficients whose sum is `fraction` of the empirical bound.
pub fn default_empirical_coefficients(s: usize, gamma: f64, lipschitz: f64, fraction: f64) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(ParamsError::InvalidParameter("memory depth must be at least 1".into()));
    }
    let bound = empirical_bound(gamma, lipschitz)?;
    Ok(vec![fraction * bound.upper / s as f64; s])
}
