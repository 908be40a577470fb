//! Identification detection and local linear rate analysis.
//!
//! Everything is expressed in tangent coordinates: with `B` an orthonormal
//! basis of the tangent space at `x*`, the reduced matrices are
//! `H = gamma B^T Hess F(x*) B`, `G = I - H`, `Q = gamma B^T Hess_M R(x*) B`
//! and `P = (I + Q)^-1`. The linearized error `d_k = (e_k, ..., e_{k-s})`
//! then follows `d_{k+1} = M d_k` with `M` the block companion matrix built
//! from the inertial coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, DenseMatrix, DenseVector, NumericsError};
use crate::penalties::{Activity, PenaltyError};
use crate::problems::CompositeProblem;
use crate::solver::{RunTrace, StepSize};

#[derive(Debug, Error)]
pub enum RateError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("I + Q is numerically singular")]
    Singular,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("Q is not symmetric (asymmetry {0:.3e})")]
    Symmetry(f64),
    #[error("only {found} usable points for the rate fit, need {needed}")]
    InsufficientData { found: usize, needed: usize },
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, RateError>;

/// Consecutive matching signatures required at the end of a trace.
pub const MIN_IDENTIFIED_RUN: usize = 5;
/// Iterations skipped after identification before the rate fit.
pub const FIT_OFFSET: usize = 5;
/// Distances at or below this are treated as converged and left out of the fit.
pub const FIT_FLOOR: f64 = 1e-12;
pub const MIN_FIT_POINTS: usize = 10;
/// `tau` above this counts as restricted injectivity.
pub const RI_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Margins closer than this to a kink make the prediction advisory.
pub const KINK_TOL: f64 = 1e-6;
/// Companion size above which the spectrum is taken per eigenvalue of `G`
/// when `P = I`.
const DENSE_LIMIT: usize = 240;

/// Smallest `K` such that `signatures[k] == target` for every `k >= K`,
/// provided that final run has at least [`MIN_IDENTIFIED_RUN`] entries.
pub fn identification_index<S: AsRef<str>>(signatures: &[S], target: &str) -> Option<usize> {
    let run = signatures
        .iter()
        .rev()
        .take_while(|s| s.as_ref() == target)
        .count();
    if run >= MIN_IDENTIFIED_RUN {
        Some(signatures.len() - run)
    } else {
        None
    }
}

/// Iteration from which the trace stays on the active manifold of `x*`.
pub fn detect_identification(trace: &RunTrace, target: &Activity) -> Option<usize> {
    let sigs: Vec<&str> = trace.records.iter().map(|r| r.activity.as_str()).collect();
    identification_index(&sigs, &target.summary()).map(|i| trace.records[i].k)
}

/// Tangent basis at `x*` together with the restricted curvature of both
/// parts of the objective. Independent of the step and the inertia, so one
/// model serves a whole parameter sweep.
#[derive(Debug, Clone)]
pub struct TangentModel {
    pub activity: Activity,
    pub basis: DenseMatrix,
    /// `B^T Hess F(x*) B`, symmetrized.
    pub hessian: DenseMatrix,
    /// `B^T Hess_M R(x*) B`, symmetrized.
    pub riemannian: DenseMatrix,
    pub kink_distance: Option<f64>,
}

fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

fn restrict<F>(basis: &DenseMatrix, mut apply: F) -> Result<DenseMatrix>
where
    F: FnMut(&DenseVector) -> Option<DenseVector>,
{
    let (n, t) = basis.shape();
    let mut image = DenseMatrix::zeros(n, t);
    for j in 0..t {
        let col = basis.column(j).into_owned();
        let v = apply(&col).ok_or_else(|| {
            RateError::Capability("the smooth loss has no Hessian action".into())
        })?;
        image.set_column(j, &v);
    }
    Ok(symmetrize(&(basis.transpose() * image)))
}

pub fn tangent_model(problem: &CompositeProblem, x_star: &DenseVector) -> Result<TangentModel> {
    if x_star.len() != problem.dimension() {
        return Err(RateError::InvalidParameter(format!(
            "x* has length {}, problem dimension is {}",
            x_star.len(),
            problem.dimension()
        )));
    }
    let info = problem.penalty().manifold(x_star)?;
    let smooth = problem.smooth();
    let basis = info.tangent_basis;
    let hessian = restrict(&basis, |v| smooth.hessian_action(x_star, v))?;
    let riemannian = restrict(&basis, |v| {
        Some(problem.penalty().riemannian_hessian_action(x_star, v))
    })?;
    Ok(TangentModel {
        activity: info.activity,
        basis,
        hessian,
        riemannian,
        kink_distance: smooth.kink_distance(x_star),
    })
}

impl TangentModel {
    pub fn dimension(&self) -> usize {
        self.basis.ncols()
    }

    /// Smallest eigenvalue of the restricted Hessian and whether it clears
    /// [`RI_TOL`].
    pub fn tau_and_ri(&self) -> Result<(f64, bool)> {
        let tau = numerics::symmetric_eigenvalues(&self.hessian)?
            .first()
            .copied()
            .unwrap_or(f64::INFINITY);
        Ok((tau, tau > RI_TOL))
    }

    pub fn reduce(&self, gamma: f64, a: &[f64], b: &[f64]) -> Result<ReducedMatrices> {
        if a.is_empty() || a.len() != b.len() {
            return Err(RateError::InvalidParameter(format!(
                "coefficient vectors must be non-empty and of equal length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(RateError::InvalidParameter(format!("step must be positive, got {gamma}")));
        }
        let t = self.dimension();
        let h = &self.hessian * gamma;
        let g = DenseMatrix::identity(t, t) - &h;
        let q = &self.riemannian * gamma;
        let identity = q.iter().all(|v| *v == 0.0);
        let p = if identity {
            DenseMatrix::identity(t, t)
        } else {
            let lu = (DenseMatrix::identity(t, t) + &q).lu();
            let p = lu.try_inverse().ok_or(RateError::Singular)?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(RateError::Singular);
            }
            p
        };
        Ok(ReducedMatrices {
            gamma,
            a: a.to_vec(),
            b: b.to_vec(),
            h,
            g,
            q,
            p,
            p_is_identity: identity,
        })
    }
}

/// Reduced matrices at one `(gamma, a, b)`.
#[derive(Debug, Clone)]
pub struct ReducedMatrices {
    pub gamma: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub h: DenseMatrix,
    pub g: DenseMatrix,
    pub q: DenseMatrix,
    pub p: DenseMatrix,
    /// `Q` is exactly zero, so `P = I` and every block of `M` is a
    /// polynomial in `G`.
    pub p_is_identity: bool,
}

/// Scalar weights `(c_i, d_i)` of the blocks `M_i = c_i P + d_i P G`.
fn block_weights(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let s = a.len();
    let mut w = Vec::with_capacity(s + 1);
    w.push((a[0] - b[0], 1.0 + b[0]));
    for i in 1..s {
        let da = a[i - 1] - a[i];
        let db = b[i - 1] - b[i];
        w.push((-(da - db), -db));
    }
    w.push((-(a[s - 1] - b[s - 1]), -b[s - 1]));
    w
}

/// `[[M_0, M_1, ..., M_s], [I, 0, ..., 0], ..., [0, ..., I, 0]]`.
pub fn companion_matrix(blocks: &[DenseMatrix]) -> Result<DenseMatrix> {
    let Some(first) = blocks.first() else {
        return Err(RateError::InvalidParameter("no blocks".into()));
    };
    let t = first.nrows();
    if blocks.iter().any(|m| m.shape() != (t, t)) {
        return Err(RateError::InvalidParameter("blocks must share one square shape".into()));
    }
    let k = blocks.len();
    let mut m = DenseMatrix::zeros(k * t, k * t);
    for (i, blk) in blocks.iter().enumerate() {
        m.view_mut((0, i * t), (t, t)).copy_from(blk);
    }
    for i in 1..k {
        m.view_mut((i * t, (i - 1) * t), (t, t))
            .fill_with_identity();
    }
    Ok(m)
}

/// Roots of `lambda^{s+1} - sum_i m_i lambda^{s-i}`.
fn scalar_companion_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let k = coeffs.len();
    if k == 1 {
        return Ok(vec![Complex64::new(coeffs[0], 0.0)]);
    }
    let mut c = DenseMatrix::zeros(k, k);
    for (j, v) in coeffs.iter().enumerate() {
        c[(0, j)] = *v;
    }
    for i in 1..k {
        c[(i, i - 1)] = 1.0;
    }
    Ok(numerics::eigenvalues(&c)?)
}

/// Spectral radius of the companion matrix with blocks `c_i I + d_i G`,
/// given the eigenvalues of `G`.
fn radius_from_spectrum(g_eigs: &[f64], weights: &[(f64, f64)]) -> Result<f64> {
    let mut rho: f64 = 0.0;
    let mut coeffs = vec![0.0; weights.len()];
    for g in g_eigs {
        for (c, (ci, di)) in coeffs.iter_mut().zip(weights) {
            *c = ci + di * g;
        }
        for z in scalar_companion_roots(&coeffs)? {
            rho = rho.max(z.norm());
        }
    }
    Ok(rho)
}

impl ReducedMatrices {
    pub fn memory(&self) -> usize {
        self.a.len()
    }

    pub fn blocks(&self) -> Vec<DenseMatrix> {
        let pg = &self.p * &self.g;
        block_weights(&self.a, &self.b)
            .into_iter()
            .map(|(c, d)| &self.p * c + &pg * d)
            .collect()
    }

    pub fn companion(&self) -> Result<DenseMatrix> {
        companion_matrix(&self.blocks())
    }

    /// `rho(M)` from the dense companion spectrum.
    pub fn spectral_radius_dense(&self) -> Result<f64> {
        spectral_radius(&self.companion()?)
    }

    /// `rho(M)`; when `P = I` and the companion is large the spectrum is
    /// assembled from scalar companions, one per eigenvalue of `G`.
    pub fn spectral_radius(&self) -> Result<f64> {
        let size = (self.memory() + 1) * self.g.nrows();
        if self.p_is_identity && size > DENSE_LIMIT {
            self.spectral_radius_fast()
        } else {
            self.spectral_radius_dense()
        }
    }

    pub fn spectral_radius_fast(&self) -> Result<f64> {
        if !self.p_is_identity {
            return Err(RateError::InvalidParameter(
                "per-eigenvalue spectrum needs Q = 0".into(),
            ));
        }
        let eigs = numerics::symmetric_eigenvalues(&self.g)?;
        radius_from_spectrum(&eigs, &block_weights(&self.a, &self.b))
    }
}

pub fn build_reduced_matrices(
    problem: &CompositeProblem,
    x_star: &DenseVector,
    gamma: f64,
    a: &[f64],
    b: &[f64],
) -> Result<ReducedMatrices> {
    tangent_model(problem, x_star)?.reduce(gamma, a, b)
}

pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    Ok(numerics::spectral_radius(m)?)
}

pub fn tau_and_ri(problem: &CompositeProblem, x_star: &DenseVector) -> Result<(f64, bool)> {
    tangent_model(problem, x_star)?.tau_and_ri()
}

/// `(1 - sqrt(1 - tau gamma), 1 - cbrt(1 - tau gamma))`.
pub fn optimal_rate_formulas(tau: f64, gamma: f64) -> Result<(f64, f64)> {
    let r = tau * gamma;
    if !(r > 0.0 && r < 1.0) {
        return Err(RateError::Domain(format!("tau * gamma must lie in ]0, 1[, got {r}")));
    }
    let g = 1.0 - r;
    Ok((1.0 - g.sqrt(), 1.0 - g.cbrt()))
}

/// Heavy-ball optimum for one curvature `g = 1 - gamma sigma` in `]0, 1[`:
/// the coefficient at which `lambda^2 - (1 + a) g lambda + a g` has a double
/// root, and that root.
pub fn heavy_ball_optimum(g: f64) -> Result<(f64, f64)> {
    if !(g > 0.0 && g < 1.0) {
        return Err(RateError::Domain(format!("g must lie in ]0, 1[, got {g}")));
    }
    let root = 1.0 - (1.0 - g).sqrt();
    Ok((root * root / g, root))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedRate {
    pub rate: f64,
    /// Inclusive iteration window of the fit.
    pub window: (usize, usize),
    pub points: usize,
}

/// Least-squares slope of `log dist_k` against `k` over
/// `[K + FIT_OFFSET, last k with dist_k > FIT_FLOOR]`. `dists[k]` is the
/// distance at iteration `k`.
pub fn fit_rate(dists: &[f64], identification: usize) -> Result<ObservedRate> {
    let start = identification + FIT_OFFSET;
    let end = dists.iter().rposition(|d| *d > FIT_FLOOR);
    let (xs, ys): (Vec<f64>, Vec<f64>) = match end {
        Some(end) if end >= start => (start..=end)
            .filter(|&k| dists[k] > 0.0)
            .map(|k| (k as f64, dists[k].ln()))
            .unzip(),
        _ => (Vec::new(), Vec::new()),
    };
    if xs.len() < MIN_FIT_POINTS {
        return Err(RateError::InsufficientData {
            found: xs.len(),
            needed: MIN_FIT_POINTS,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(ObservedRate {
        rate: (sxy / sxx).exp(),
        window: (start, end.unwrap_or(start)),
        points: xs.len(),
    })
}

/// Distances of a trace to `x*`: from the kept iterates when present,
/// otherwise from the recorded `dist_to_xstar`.
pub fn trace_distances(trace: &RunTrace, x_star: &DenseVector) -> Result<Vec<f64>> {
    if let Some(it) = &trace.iterates {
        return Ok(it.iter().map(|x| (x - x_star).norm()).collect());
    }
    trace
        .records
        .iter()
        .map(|r| r.dist_to_xstar)
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| {
            RateError::InvalidParameter(
                "trace has neither iterates nor distances to a reference".into(),
            )
        })
}

pub fn fit_observed_rate(
    trace: &RunTrace,
    x_star: &DenseVector,
    identification: usize,
) -> Result<ObservedRate> {
    fit_rate(&trace_distances(trace, x_star)?, identification)
}

pub fn check_q_psd(q: &DenseMatrix) -> Result<bool> {
    if !q.is_square() {
        return Err(RateError::InvalidParameter("Q must be square".into()));
    }
    let asym = (q - q.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(RateError::Symmetry(asym));
    }
    let eigs = numerics::symmetric_eigenvalues(&symmetrize(q))?;
    Ok(eigs.first().is_none_or(|l| *l >= -PSD_TOL))
}

/// Grid search of `rho(M)` over symmetric coefficients `b = a` in
/// `grid^s`. Ties go to the smaller `|a|`.
pub fn optimize_inertia(reduced: &ReducedMatrices, s: usize, grid: &[f64]) -> Result<(Vec<f64>, f64)> {
    if grid.is_empty() {
        return Err(RateError::InvalidParameter("empty grid".into()));
    }
    if s == 0 {
        return Err(RateError::InvalidParameter("memory depth must be at least 1".into()));
    }
    if let Some(v) = grid.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(RateError::InvalidParameter(format!("grid value {v} outside ]-1, 1[")));
    }
    let g_eigs = if reduced.p_is_identity {
        Some(numerics::symmetric_eigenvalues(&reduced.g)?)
    } else {
        None
    };
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut idx = vec![0usize; s];
    loop {
        let a: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let rho = match &g_eigs {
            Some(e) => radius_from_spectrum(e, &block_weights(&a, &a))?,
            None => ReducedMatrices {
                a: a.clone(),
                b: a.clone(),
                ..reduced.clone()
            }
            .spectral_radius_dense()?,
        };
        let norm = a.iter().map(|v| v * v).sum::<f64>();
        let better = match &best {
            None => true,
            Some((_, r, nrm)) => rho < r - 1e-12 || (rho <= r + 1e-12 && norm < *nrm),
        };
        if better {
            best = Some((a, rho, norm));
        }
        // odometer over the grid
        let mut pos = 0;
        while pos < s {
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == s {
            break;
        }
    }
    let (a, rho, _) = best.expect("grid is non-empty");
    Ok((a, rho))
}

/// Largest `|d_{k+1} - M d_k| / |d_k|` over `k >= K` with
/// `|d_k| <= radius`, where `d_k` stacks the tangent coordinates of
/// `x_k - x*, ..., x_{k-s} - x*`. `None` when no step qualifies.
pub fn linearization_error(
    iterates: &[DenseVector],
    x_star: &DenseVector,
    model: &TangentModel,
    reduced: &ReducedMatrices,
    identification: usize,
    radius: f64,
) -> Result<Option<f64>> {
    let s = reduced.memory();
    let m = reduced.companion()?;
    let coords: Vec<DenseVector> = iterates
        .iter()
        .map(|x| model.basis.transpose() * (x - x_star))
        .collect();
    let stack = |k: usize| -> DenseVector {
        let t = model.dimension();
        let mut d = DenseVector::zeros((s + 1) * t);
        for i in 0..=s {
            let j = k.saturating_sub(i);
            d.rows_mut(i * t, t).copy_from(&coords[j]);
        }
        d
    };
    let mut worst: Option<f64> = None;
    for k in identification.max(s)..iterates.len().saturating_sub(1) {
        let d = stack(k);
        let norm = d.norm();
        if norm == 0.0 || norm > radius || norm <= FIT_FLOOR {
            continue;
        }
        let err = (stack(k + 1) - &m * &d).norm() / norm;
        worst = Some(worst.map_or(err, |w: f64| w.max(err)));
    }
    Ok(worst)
}

/// Constant step of a schedule; the rate analysis assumes one.
pub fn constant_step(step: &StepSize) -> Result<f64> {
    match step {
        StepSize::Constant(g) => Ok(*g),
        StepSize::Cyclic(v) if !v.is_empty() && v.iter().all(|g| g == &v[0]) => Ok(v[0]),
        StepSize::Cyclic(_) => Err(RateError::InvalidParameter(
            "rate analysis needs a constant step".into(),
        )),
    }
}

/// Summary of the local analysis of one run. The matrices are kept for
/// inspection but left out of the JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub schedule: String,
    pub identification_iter: Option<usize>,
    pub tangent_dimension: usize,
    pub gamma: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rho_m: f64,
    pub tau: f64,
    pub ri_ok: bool,
    pub q_psd_ok: bool,
    pub rho_star_s1: Option<f64>,
    pub rho_star_s2: Option<f64>,
    pub observed: Option<ObservedRate>,
    pub kink_distance: Option<f64>,
    /// The loss is not C2 near `x*`, so the prediction is only indicative.
    pub advisory: bool,
    #[serde(skip)]
    pub reduced: Option<ReducedMatrices>,
}

impl RateReport {
    /// `|rho_obs - rho(M)| / rho(M)`.
    pub fn relative_gap(&self) -> Option<f64> {
        self.observed
            .map(|o| (o.rate - self.rho_m).abs() / self.rho_m)
    }
}

/// Full analysis of a finished run against its limit `x*`. The trace needs
/// distances to `x*` (or kept iterates) for the observed rate; when they are
/// missing the report simply has no observed rate.
pub fn analyze_run(
    problem: &CompositeProblem,
    trace: &RunTrace,
    x_star: &DenseVector,
) -> Result<RateReport> {
    let model = tangent_model(problem, x_star)?;
    let schedule = &trace.schedule;
    let gamma = constant_step(&schedule.step)?;
    let reduced = model.reduce(gamma, &schedule.a, &schedule.b)?;
    let rho_m = reduced.spectral_radius()?;
    let (tau, ri_ok) = model.tau_and_ri()?;
    let q_psd_ok = check_q_psd(&reduced.q)?;
    let (rho_star_s1, rho_star_s2) = match optimal_rate_formulas(tau, gamma) {
        Ok((r1, r2)) => (Some(r1), Some(r2)),
        Err(_) => (None, None),
    };
    let identification_iter = detect_identification(trace, &model.activity);
    let observed = match identification_iter {
        Some(k) => match fit_observed_rate(trace, x_star, k) {
            Ok(o) => Some(o),
            Err(RateError::InsufficientData { .. }) | Err(RateError::InvalidParameter(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let advisory = model.kink_distance.is_some_and(|d| d < KINK_TOL);
    Ok(RateReport {
        schedule: schedule.name.clone(),
        identification_iter,
        tangent_dimension: model.dimension(),
        gamma,
        a: schedule.a.clone(),
        b: schedule.b.clone(),
        rho_m,
        tau,
        ri_ok,
        q_psd_ok,
        rho_star_s1,
        rho_star_s2,
        observed,
        kink_distance: model.kink_distance,
        advisory,
        reduced: Some(reduced),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use crate::penalties::{L0Penalty, ZeroPenalty};
    use crate::problems::{make_sparse_regression, LeastSquares};
    use crate::solver::{mifb_solve, reference_solution, InertialSchedule, SolveOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar_model(sigma: f64) -> TangentModel {
        TangentModel {
            activity: Activity::Free(1),
            basis: DenseMatrix::identity(1, 1),
            hessian: DenseMatrix::from_element(1, 1, sigma),
            riemannian: DenseMatrix::zeros(1, 1),
            kink_distance: None,
        }
    }

    fn diag_model(sigmas: &[f64]) -> TangentModel {
        let t = sigmas.len();
        TangentModel {
            activity: Activity::Free(t),
            basis: DenseMatrix::identity(t, t),
            hessian: DenseMatrix::from_diagonal(&DenseVector::from_column_slice(sigmas)),
            riemannian: DenseMatrix::zeros(t, t),
            kink_distance: None,
        }
    }

    #[test]
    fn identification_examples() {
        let sigs = ["a", "b", "S", "b", "S", "S", "S", "S", "S", "S"];
        assert_eq!(identification_index(&sigs, "S"), Some(4));
        assert_eq!(identification_index(&sigs, "x"), None);
        // a final run shorter than five does not count
        assert_eq!(identification_index(&["S", "S", "b", "S", "S", "S", "S"], "S"), None);
        assert_eq!(identification_index(&["S"; 5], "S"), Some(0));
    }

    #[test]
    fn fb_companion_spectrum_is_g_and_zero() {
        let model = diag_model(&[0.5, 2.0, 3.0]);
        let r = model.reduce(0.2, &[0.0], &[0.0]).unwrap();
        let m = r.companion().unwrap();
        let mut mods: Vec<f64> = numerics::eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
        mods.sort_by(f64::total_cmp);
        let expected = [0.0, 0.0, 0.0, 0.4, 0.6, 0.9];
        for (x, e) in mods.iter().zip(expected) {
            assert!((x - e).abs() < 1e-12, "{mods:?}");
        }
        assert_relative_eq!(r.spectral_radius().unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn scalar_heavy_ball_matches_quadratic_roots() {
        let (sigma, gamma, a) = (2.0, 0.3, 0.4);
        let g: f64 = 1.0 - gamma * sigma;
        let r = scalar_model(sigma).reduce(gamma, &[a], &[a]).unwrap();
        let m = r.companion().unwrap();
        assert_relative_eq!(m[(0, 0)], (1.0 + a) * g, epsilon = 1e-15);
        assert_relative_eq!(m[(0, 1)], -a * g, epsilon = 1e-15);
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(1, 1)], 0.0);
        let disc = ((1.0 + a) * g).powi(2) - 4.0 * a * g;
        let rho = if disc >= 0.0 {
            ((1.0 + a) * g + disc.sqrt()) / 2.0
        } else {
            (a * g).sqrt()
        };
        assert_relative_eq!(r.spectral_radius_dense().unwrap(), rho, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_examples() {
        let c = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        let rot = DenseMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.5, epsilon = 1e-14);
        let fb = scalar_model(1.0).reduce(0.1, &[0.0], &[0.0]).unwrap();
        assert_relative_eq!(fb.spectral_radius().unwrap(), 0.9, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_blocks_depend_only_on_pg() {
        let mut rng = RngState::new(4);
        let q = rng.gaussian_matrix(4, 4).unwrap();
        let model = TangentModel {
            riemannian: &q * q.transpose() * 0.1,
            ..diag_model(&[0.3, 1.0, 2.0, 4.0])
        };
        let a = [0.3, -0.1, 0.2];
        let r = model.reduce(0.2, &a, &a).unwrap();
        let pg = &r.p * &r.g;
        let direct = [
            &pg * (1.0 + a[0]),
            &pg * -(a[0] - a[1]),
            &pg * -(a[1] - a[2]),
            &pg * -a[2],
        ];
        for (blk, d) in r.blocks().iter().zip(&direct) {
            assert!((blk - d).amax() < 1e-15);
        }
        let m = r.companion().unwrap();
        let t = 4;
        for i in 1..4 {
            for j in 0..4 {
                let v = m.view((i * t, j * t), (t, t));
                if j + 1 == i {
                    assert_eq!(v, DenseMatrix::identity(t, t));
                } else {
                    assert!(v.iter().all(|x| *x == 0.0));
                }
            }
        }
    }

    #[test]
    fn p_inverts_i_plus_q() {
        let mut rng = RngState::new(9);
        let q = rng.gaussian_matrix(5, 5).unwrap();
        let model = TangentModel {
            riemannian: &q * q.transpose(),
            ..diag_model(&[1.0; 5])
        };
        let r = model.reduce(0.3, &[0.1], &[0.2]).unwrap();
        assert!((&r.q - r.q.transpose()).amax() < 1e-10);
        let prod = &r.p * (DenseMatrix::identity(5, 5) + &r.q);
        assert!((prod - DenseMatrix::identity(5, 5)).amax() < 1e-10);
        assert!(check_q_psd(&r.q).unwrap());
    }

    #[test]
    fn singular_i_plus_q_is_an_error() {
        let model = TangentModel {
            riemannian: DenseMatrix::from_diagonal_element(2, 2, -1.0),
            ..diag_model(&[1.0, 1.0])
        };
        assert!(matches!(model.reduce(1.0, &[0.0], &[0.0]), Err(RateError::Singular)));
    }

    #[test]
    fn fast_path_agrees_with_dense() {
        let mut rng = RngState::new(2);
        for trial in 0..20 {
            let t = 6;
            let x = rng.gaussian_matrix(8, t).unwrap();
            let model = TangentModel {
                hessian: x.transpose() * &x,
                ..diag_model(&[0.0; 6])
            };
            let l = numerics::symmetric_eigenvalues(&model.hessian).unwrap()[t - 1];
            let s = 1 + trial % 3;
            let a: Vec<f64> = (0..s).map(|_| 0.6 * rng.next_uniform() - 0.2).collect();
            let b: Vec<f64> = (0..s).map(|_| 0.6 * rng.next_uniform() - 0.2).collect();
            let r = model.reduce(0.7 / l, &a, &b).unwrap();
            let dense = r.spectral_radius_dense().unwrap();
            let fast = r.spectral_radius_fast().unwrap();
            assert!((dense - fast).abs() < 1e-9, "{dense} vs {fast}");
        }
    }

    #[test]
    fn rate_formula_examples() {
        let (r1, _) = optimal_rate_formulas(0.19, 1.0).unwrap();
        assert!((r1 - 0.1).abs() < 1e-12);
        let (_, r2) = optimal_rate_formulas(0.271, 1.0).unwrap();
        assert!((r2 - 0.1).abs() < 1e-12);
        let (r1, r2) = optimal_rate_formulas(1e-8, 1.0).unwrap();
        assert!((r2 / r1 - 2.0 / 3.0).abs() < 1e-6);
        assert!(matches!(optimal_rate_formulas(2.0, 0.5), Err(RateError::Domain(_))));
        assert!(matches!(optimal_rate_formulas(0.0, 0.5), Err(RateError::Domain(_))));
    }

    proptest! {
        #[test]
        fn s2_formula_is_smaller(r in 1e-6f64..0.999) {
            let (r1, r2) = optimal_rate_formulas(r, 1.0).unwrap();
            prop_assert!(r2 < r1);
        }

        #[test]
        fn radius_is_continuous_in_a(a0 in -0.8f64..0.8, sigma in 0.1f64..3.0) {
            let model = diag_model(&[sigma, 3.0]);
            let gamma = 0.3 / 3.0;
            let r = model.reduce(gamma, &[a0], &[a0]).unwrap().spectral_radius().unwrap();
            let r2 = model.reduce(gamma, &[a0 + 1e-6], &[a0 + 1e-6]).unwrap().spectral_radius().unwrap();
            prop_assert!((r - r2).abs() < 1e-3);
        }
    }

    #[test]
    fn exact_geometric_sequence_fit() {
        let d: Vec<f64> = (0..400).map(|k| 0.9f64.powi(k)).collect();
        let o = fit_rate(&d, 3).unwrap();
        assert!((o.rate - 0.9).abs() < 1e-12);
        assert_eq!(o.window.0, 8);
        assert!(d[o.window.1] > FIT_FLOOR && d[o.window.1 + 1] <= FIT_FLOOR);
        assert!(matches!(fit_rate(&d[..12], 0), Err(RateError::InsufficientData { .. })));
    }

    #[test]
    fn fb_scalar_quadratic_rate() {
        let (sigma, gamma) = (2.0f64, 0.2);
        let a = DenseMatrix::from_element(1, 1, sigma.sqrt());
        let y = DenseVector::from_element(1, 1.0);
        let ls = LeastSquares::new(a, y).unwrap();
        let p = CompositeProblem::new(Box::new(ls), Box::new(ZeroPenalty::new(1)), "q").unwrap();
        let x_star = DenseVector::from_element(1, 1.0 / sigma.sqrt());
        let opts = SolveOptions {
            max_iter: 200,
            keep_iterates: true,
            tol_delta: 1e-300,
            ..Default::default()
        };
        let tr = mifb_solve(&p, &InertialSchedule::forward_backward(gamma), &DenseVector::zeros(1), &opts).unwrap();
        let o = fit_observed_rate(&tr, &x_star, 0).unwrap();
        assert!((o.rate - (1.0 - gamma * sigma).abs()).abs() < 1e-6, "{}", o.rate);
    }

    #[test]
    fn q_psd_examples() {
        assert!(check_q_psd(&DenseMatrix::zeros(3, 3)).unwrap());
        assert!(check_q_psd(&DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![1.0, 0.0]))).unwrap());
        assert!(!check_q_psd(&DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![-0.1, 1.0]))).unwrap());
        let asym = DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(check_q_psd(&asym), Err(RateError::Symmetry(_))));
    }

    #[test]
    fn tau_examples() {
        // F = 0.5 |x - c|^2 restricted to any support has tau = 1
        let ls = LeastSquares::new(DenseMatrix::identity(6, 6), DenseVector::from_element(6, 1.0)).unwrap();
        let p = CompositeProblem::new(Box::new(ls), Box::new(L0Penalty::new(0.1, 6).unwrap()), "id").unwrap();
        let x = DenseVector::from_vec(vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0]);
        let (tau, ok) = tau_and_ri(&p, &x).unwrap();
        assert!((tau - 1.0).abs() < 1e-14 && ok);

        // 3 rows, support of 4: the restricted Gram matrix has a kernel
        let mut rng = RngState::new(1);
        let a = rng.gaussian_matrix(3, 6).unwrap();
        let ls = LeastSquares::new(a, DenseVector::zeros(3)).unwrap();
        let p = CompositeProblem::new(Box::new(ls), Box::new(L0Penalty::new(0.1, 6).unwrap()), "wide").unwrap();
        let x = DenseVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(!tau_and_ri(&p, &x).unwrap().1);
    }

    #[test]
    fn regression_tau_is_restricted_gram_minimum() {
        let p = make_sparse_regression(3, 48, 128, 8, 0.01, 1.0).unwrap();
        let g = 0.3 / p.lipschitz();
        let r = reference_solution(&p, &InertialSchedule::forward_backward(g), &DenseVector::zeros(128)).unwrap();
        let supp: Vec<usize> = (0..128).filter(|&i| r.point[i] != 0.0).collect();
        let a = p.to_archive().unwrap();
        let full = match a.data {
            crate::problems::ArchiveData::Regression { a, .. } => a.to_matrix().unwrap(),
            _ => unreachable!(),
        };
        let sub = DenseMatrix::from_fn(48, supp.len(), |i, j| full[(i, supp[j])]);
        let gram = sub.transpose() * &sub;
        let expected = numerics::symmetric_eigenvalues(&gram).unwrap()[0];
        let (tau, ok) = tau_and_ri(&p, &r.point).unwrap();
        assert!(ok);
        assert!((tau - expected).abs() < 1e-10 * expected.max(1.0));
        let red = build_reduced_matrices(&p, &r.point, g, &[0.0], &[0.0]).unwrap();
        assert!(red.p_is_identity);
        assert!(red.q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimize_grid_zero_is_fb() {
        let model = diag_model(&[0.5, 1.0, 2.0]);
        let r = model.reduce(0.3, &[0.0], &[0.0]).unwrap();
        let (a, rho) = optimize_inertia(&r, 1, &[0.0]).unwrap();
        assert_eq!(a, vec![0.0]);
        let g_rho = numerics::spectral_radius(&r.g).unwrap();
        assert!((rho - g_rho).abs() < 1e-14);
        assert!(optimize_inertia(&r, 1, &[]).is_err());
    }

    #[test]
    fn optimize_scalar_finds_heavy_ball_location() {
        let sigma = 1.0;
        let gamma = 0.05;
        let r = scalar_model(sigma).reduce(gamma, &[0.0], &[0.0]).unwrap();
        let grid: Vec<f64> = (-999..=999).map(|i| i as f64 / 1000.0).collect();
        let (a, rho) = optimize_inertia(&r, 1, &grid).unwrap();
        let (a_hb, rho_hb) = heavy_ball_optimum(1.0 - gamma * sigma).unwrap();
        assert!((a[0] - a_hb).abs() <= 1e-3, "{} vs {a_hb}", a[0]);
        assert!(rho >= rho_hb - 1e-12);
    }

    #[test]
    fn linearization_is_exact_for_a_quadratic() {
        let mut rng = RngState::new(5);
        let a = rng.gaussian_matrix(12, 6).unwrap();
        let y = gaussian(&mut rng, 12);
        let ls = LeastSquares::new(a, y).unwrap();
        let p = CompositeProblem::new(Box::new(ls), Box::new(ZeroPenalty::new(6)), "q").unwrap();
        let g = 0.5 / p.lipschitz();
        let sch = InertialSchedule::symmetric("2", vec![0.2, 0.1], g).unwrap();
        let x_star = reference_solution(&p, &sch, &DenseVector::zeros(6)).unwrap().point;
        let opts = SolveOptions {
            max_iter: 60,
            keep_iterates: true,
            tol_delta: 1e-300,
            ..Default::default()
        };
        let tr = mifb_solve(&p, &sch, &DenseVector::from_element(6, 1.0), &opts).unwrap();
        let model = tangent_model(&p, &x_star).unwrap();
        let red = model.reduce(g, &sch.a, &sch.b).unwrap();
        let err = linearization_error(tr.iterates.as_ref().unwrap(), &x_star, &model, &red, 0, 10.0)
            .unwrap()
            .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn gaussian(rng: &mut RngState, n: usize) -> DenseVector {
        numerics::gaussian_vector(rng, n).unwrap()
    }
}
