//! Dense linear algebra and reproducible random generation.
//!
//! Matrices and vectors are plain `nalgebra` dense types. Symmetric
//! eigendecomposition and the real Schur form come from `nalgebra`, the SVD
//! is a one-sided Jacobi sweep implemented here;
//! this module pins down the conventions the rest of the crate relies on
//! (ordering, orthonormality, error reporting).
//!
//! The random stream is PCG32 (`pcg_setseq_64_xsh_rr_32`) seeded with
//! `state = seed` and the fixed stream constant [`PCG_STREAM`]. Uniform
//! doubles take the top 53 bits of two consecutive 32-bit outputs (low word
//! first) and normals use the polar-free Box–Muller transform, caching the
//! sine branch for the next call. Any implementation following these three
//! rules reproduces the same stream bit for bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand_core::Rng;
use rand_pcg::Pcg32;
use thiserror::Error;

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Stream selector used for every generator built by [`RngState::new`].
pub const PCG_STREAM: u64 = 0xa02b_dbf7_bb3c_0a7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("no convergence after {iterations} iterations (best estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },
    #[error("matrix is singular or numerically rank deficient")]
    Singular,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Seeded PCG32 generator with a Box–Muller normal sampler on top.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Pcg32,
    spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Pcg32::new(seed, PCG_STREAM),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    pub fn next_uniform(&mut self) -> f64 {
        let lo = u64::from(self.inner.next_u32());
        let hi = u64::from(self.inner.next_u32());
        let bits = ((hi << 32) | lo) >> 11;
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.next_uniform() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Random sign, `+1.0` or `-1.0` with equal probability.
    pub fn next_sign(&mut self) -> f64 {
        if self.next_uniform() < 0.5 {
            -1.0
        } else {
            1.0
        }
    }

    /// `k` distinct indices from `0..n` via a partial Fisher–Yates shuffle.
    /// The returned indices are in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::InvalidDimension(format!("{rows}x{cols}")));
        }
        // Filled in column-major order.
        Ok(DenseMatrix::from_iterator(
            rows,
            cols,
            (0..rows * cols).map(|_| self.next_gaussian()),
        ))
    }
}

/// `n` standard normal samples drawn from `state`.
pub fn gaussian_vector(state: &mut RngState, n: usize) -> Result<DenseVector> {
    if n == 0 {
        return Err(NumericsError::InvalidDimension("n = 0".into()));
    }
    Ok(DenseVector::from_iterator(n, (0..n).map(|_| state.next_gaussian())))
}

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    /// Non-increasing, non-negative.
    pub sigma: DenseVector,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// `nalgebra`'s bidiagonal SVD was observed to return wrong factors on some
/// exactly rank-deficient inputs, which are routine here (every rank-prox
/// output is one), so the factorization is done directly. Jacobi is also
/// accurate in the relative sense for small singular values.
pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    ensure_finite(a.as_slice())?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(NumericsError::InvalidDimension(format!(
            "{}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    jacobi_svd(a)
}

const JACOBI_MAX_SWEEPS: usize = 60;

// Requires rows >= cols.
fn jacobi_svd(a: &DenseMatrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n, n);
    // Columns below this norm are numerically zero: rotating them only
    // shuffles rounding noise, and their left vectors come from a complement.
    let floor = (n as f64) * f64::EPSILON * a.norm();
    let floor_sq = floor * floor;
    let tol = (m as f64) * f64::EPSILON;
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let wp = &w.as_slice()[p * m..(p + 1) * m];
                    let wq = &w.as_slice()[q * m..(q + 1) * m];
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in wp.iter().zip(wq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0
                    || alpha <= floor_sq
                    || beta <= floor_sq
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(w.as_mut_slice(), m, p, q, c, s);
                rotate_columns(v.as_mut_slice(), n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            iterations: JACOBI_MAX_SWEEPS,
            estimate: f64::NAN,
        });
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let mut sigma = DenseVector::zeros(n);
    let mut v_sorted = DenseMatrix::zeros(n, n);
    let mut u_cols = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        v_sorted.set_column(dst, &v.column(src));
        if norms[src] > floor && norms[src] > f64::MIN_POSITIVE {
            u_cols.push(w.column(src) / norms[src]);
        }
    }
    let mut u = DenseMatrix::zeros(m, n);
    for (j, col) in u_cols.iter().enumerate() {
        u.set_column(j, col);
    }
    if u_cols.len() < n {
        let known = u.columns(0, u_cols.len()).into_owned();
        let comp = orthonormal_complement(&known);
        for j in u_cols.len()..n {
            u.set_column(j, &comp.column(j - u_cols.len()));
        }
    }
    Ok(Svd { u, sigma, v: v_sorted })
}

fn rotate_columns(data: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * rows);
    let cp = &mut head[p * rows..(p + 1) * rows];
    let cq = &mut tail[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Singular values only, non-increasing.
pub fn singular_values(a: &DenseMatrix) -> Result<DenseVector> {
    Ok(svd(a)?.sigma)
}

/// Full spectrum of a general real square matrix.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(NumericsError::Shape {
            expected: "square matrix".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    ensure_finite(m.as_slice())?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100 * m.nrows().max(10))
        .ok_or(NumericsError::NoConvergence {
            iterations: 100 * m.nrows().max(10),
            estimate: f64::NAN,
        })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a symmetric matrix in ascending order. Only the lower
/// triangle is read.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(symmetric_eigen(m)?.0)
}

/// Ascending eigenvalues with matching orthonormal eigenvectors (as columns).
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if !m.is_square() {
        return Err(NumericsError::Shape {
            expected: "square matrix".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    ensure_finite(m.as_slice())?;
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DenseMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(
        NumericsError::NoConvergence {
            iterations: 0,
            estimate: f64::NAN,
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Power iteration for the largest eigenvalue of a symmetric positive
/// semi-definite operator given only through its action.
///
/// Stops once the Rayleigh residual `||Av - theta v||` drops below
/// `tol * theta`, which places an eigenvalue within `tol` (relative) of the
/// estimate.
pub fn largest_eigenvalue_sym<F>(apply: F, n: usize, tol: f64) -> Result<f64>
where
    F: Fn(&DenseVector) -> DenseVector,
{
    const MAX_ITER: usize = 200_000;
    if n == 0 {
        return Err(NumericsError::InvalidDimension("n = 0".into()));
    }
    if !(tol > 0.0) {
        return Err(NumericsError::InvalidDimension(format!("tol = {tol}")));
    }
    let mut rng = RngState::new(0x5eed_1a2b);
    let mut v = gaussian_vector(&mut rng, n)?;
    v.iter_mut().for_each(|x| *x = x.abs() + 0.5);
    v /= v.norm();
    let mut theta = 0.0;
    for _ in 0..MAX_ITER {
        let w = apply(&v);
        if w.len() != n {
            return Err(NumericsError::Shape {
                expected: format!("operator output of length {n}"),
                found: format!("{}", w.len()),
            });
        }
        let w_norm = w.norm();
        if !w_norm.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        if w_norm == 0.0 {
            return Ok(0.0);
        }
        theta = v.dot(&w);
        let residual = (&w - &v * theta).norm();
        if residual <= tol * theta.abs() {
            return Ok(theta);
        }
        v = w / w_norm;
    }
    Err(NumericsError::NoConvergence {
        iterations: MAX_ITER,
        estimate: theta,
    })
}

/// Extends the orthonormal columns of `q` (n x r) to an orthonormal basis of
/// R^n, returning the n x (n - r) complement.
pub fn orthonormal_complement(q: &DenseMatrix) -> DenseMatrix {
    let n = q.nrows();
    let r = q.ncols();
    let mut basis: Vec<DenseVector> = (0..r).map(|j| q.column(j).into_owned()).collect();
    let mut extra = Vec::with_capacity(n - r);
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        let mut e = DenseVector::zeros(n);
        e[i] = 1.0;
        // Two passes of Gram–Schmidt for stability.
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&e);
                e.axpy(-c, b, 1.0);
            }
        }
        let norm = e.norm();
        if norm > 1e-8 {
            e /= norm;
            basis.push(e.clone());
            extra.push(e);
        }
    }
    if extra.is_empty() {
        return DenseMatrix::zeros(n, 0);
    }
    DenseMatrix::from_columns(&extra)
}

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DenseMatrix) -> f64 {
        m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian_vector(&mut RngState::new(42), 4).unwrap();
        let b = gaussian_vector(&mut RngState::new(42), 4).unwrap();
        assert_eq!(a, b);
        let c = gaussian_vector(&mut RngState::new(1), 3).unwrap();
        let d = gaussian_vector(&mut RngState::new(2), 3).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let v = gaussian_vector(&mut RngState::new(42), n).unwrap();
        let mean = v.sum() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn zero_length_is_rejected() {
        assert!(matches!(
            gaussian_vector(&mut RngState::new(0), 0),
            Err(NumericsError::InvalidDimension(_))
        ));
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut rng = RngState::new(9);
        let mut s = rng.sample_without_replacement(128, 8);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&i| i < 128));
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let s = svd(&DenseMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.sigma.as_slice(), &[1.0, 1.0, 1.0]);

        let d = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![3.0, 2.0, 1.0]));
        let s = svd(&d).unwrap();
        for (got, want) in s.sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        for j in 0..3 {
            assert!((s.u[(j, j)].abs() - 1.0).abs() < 1e-12);
            assert!((s.v[(j, j)].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let mut rng = RngState::new(7);
        let a = rng.gaussian_matrix(10, 8).unwrap();
        let s = svd(&a).unwrap();
        let err = max_abs(&(s.reconstruct() - &a));
        assert!(err <= 1e-10 * a.norm().max(1.0), "reconstruction {err}");
        let utu = s.u.transpose() * &s.u - DenseMatrix::identity(8, 8);
        let vtv = s.v.transpose() * &s.v - DenseMatrix::identity(8, 8);
        assert!(max_abs(&utu) <= 1e-12);
        assert!(max_abs(&vtv) <= 1e-12);
        assert!(s.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn svd_handles_exact_rank_deficiency() {
        let mut rng = RngState::new(11);
        for it in 0..300 {
            let r = it % 9;
            let (m, n) = if it % 2 == 0 { (10, 8) } else { (6, 9) };
            let a = if r == 0 {
                DenseMatrix::zeros(m, n)
            } else {
                rng.gaussian_matrix(m, r).unwrap() * rng.gaussian_matrix(n, r).unwrap().transpose()
            };
            let d = svd(&a).unwrap();
            let k = m.min(n);
            assert!((d.reconstruct() - &a).norm() <= 1e-10 * a.norm().max(1.0));
            assert!((d.u.transpose() * &d.u - DenseMatrix::identity(k, k)).amax() <= 1e-12);
            assert!((d.v.transpose() * &d.v - DenseMatrix::identity(k, k)).amax() <= 1e-12);
            assert!(d.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = DenseMatrix::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert_eq!(svd(&a).unwrap_err(), NumericsError::NonFinite);
    }

    fn sorted_by_re_im(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        let d = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![5.0, -1.0, 0.5]));
        let ev = sorted_by_re_im(eigenvalues(&d).unwrap());
        for (z, want) in ev.iter().zip([-1.0, 0.5, 5.0]) {
            assert!((z.re - want).abs() < 1e-12 && z.im.abs() < 1e-12);
        }

        let t = std::f64::consts::PI / 3.0;
        let rot = DenseMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let ev = sorted_by_re_im(eigenvalues(&rot).unwrap());
        assert!((ev[0] - Complex64::new(0.5, -t.sin())).norm() < 1e-12);
        assert!((ev[1] - Complex64::new(0.5, t.sin())).norm() < 1e-12);

        // lambda^2 - 1.1 lambda + 0.1 = (lambda - 1)(lambda - 0.1)
        let comp = DenseMatrix::from_row_slice(2, 2, &[1.1, -0.1, 1.0, 0.0]);
        let ev = sorted_by_re_im(eigenvalues(&comp).unwrap());
        let disc: f64 = 1.1f64 * 1.1 - 0.4;
        let roots = [(1.1 - disc.sqrt()) / 2.0, (1.1 + disc.sqrt()) / 2.0];
        for (z, want) in ev.iter().zip(roots) {
            assert!((z.re - want).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_require_square() {
        assert!(matches!(
            eigenvalues(&DenseMatrix::zeros(2, 3)),
            Err(NumericsError::Shape { .. })
        ));
    }

    #[test]
    fn eigenvalues_are_similarity_invariant() {
        let mut rng = RngState::new(11);
        for _ in 0..10 {
            let m = rng.gaussian_matrix(6, 6).unwrap();
            let p = rng.gaussian_matrix(6, 6).unwrap() + DenseMatrix::identity(6, 6) * 3.0;
            let p_inv = p.clone().try_inverse().unwrap();
            let similar = &p_inv * &m * &p;
            let mut a = eigenvalues(&m).unwrap();
            let b = eigenvalues(&similar).unwrap();
            // Greedy matching of the two multisets.
            for z in b {
                let (idx, dist) = a
                    .iter()
                    .enumerate()
                    .map(|(i, w)| (i, (w - z).norm()))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .unwrap();
                assert!(dist < 1e-7, "unmatched eigenvalue {z}, distance {dist}");
                a.swap_remove(idx);
            }
        }
    }

    #[test]
    fn power_iteration_on_simple_operators() {
        let tol = 1e-10;
        let l = largest_eigenvalue_sym(
            |v| DenseVector::from_vec(vec![4.0 * v[0], v[1]]),
            2,
            tol,
        )
        .unwrap();
        assert!((l - 4.0).abs() <= 4.0 * tol);
        let zero = largest_eigenvalue_sym(|v| DenseVector::zeros(v.len()), 5, tol).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn power_iteration_matches_dense_spectrum() {
        let mut rng = RngState::new(3);
        let a = rng.gaussian_matrix(48, 128).unwrap();
        let gram = a.transpose() * &a;
        let tol = 1e-8;
        let est = largest_eigenvalue_sym(|v| a.transpose() * (&a * v), 128, tol).unwrap();
        let dense = *symmetric_eigenvalues(&gram).unwrap().last().unwrap();
        assert!((est - dense).abs() <= tol * dense, "{est} vs {dense}");
    }

    #[test]
    fn complement_completes_basis() {
        let mut rng = RngState::new(5);
        let a = rng.gaussian_matrix(7, 3).unwrap();
        let q = a.qr().q();
        let c = orthonormal_complement(&q);
        assert_eq!(c.ncols(), 4);
        let full = DenseMatrix::from_columns(
            &q.column_iter().chain(c.column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>(),
        );
        let err = full.transpose() * &full - DenseMatrix::identity(7, 7);
        assert!(max_abs(&err) < 1e-12);
    }
}
