//! Non-smooth penalties: values, proximal maps and active-manifold data.
//!
//! Built-ins are the `l0` pseudo-norm, the matrix rank (both scaled by a
//! weight), the zero penalty used for unpenalized coordinates, and the
//! separable product of these over disjoint coordinate slices.
//!
//! Hard thresholding is set-valued at `|z| = sqrt(2 theta)`; every proximal
//! map here resolves the tie to the lower-cardinality point (drop the entry,
//! drop the singular value).

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, DenseMatrix, DenseVector, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenaltyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("slices do not partition the coordinates: {0}")]
    Partition(String),
    #[error("dimension mismatch: penalty acts on {expected} coordinates, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, PenaltyError>;

/// Relative threshold used to count the rank of externally supplied matrices.
pub const NUMERIC_RANK_RTOL: f64 = 1e-10;

/// Discrete activity descriptor of a point: which manifold it lives on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    /// Sorted nonzero indices, relative to the block.
    Support(Vec<usize>),
    Rank(usize),
    /// Unpenalized block of the given length.
    Free(usize),
    Product(Vec<Activity>),
}

impl Activity {
    /// Cardinality-like size: support size, rank, or the sum over parts.
    pub fn size(&self) -> usize {
        match self {
            Activity::Support(s) => s.len(),
            Activity::Rank(r) => *r,
            Activity::Free(n) => *n,
            Activity::Product(parts) => parts.iter().map(Activity::size).sum(),
        }
    }

    /// Compact, platform-independent text form used in CSV output.
    /// Supports are written as their size plus an FNV-1a digest of the
    /// indices.
    pub fn summary(&self) -> String {
        match self {
            Activity::Support(s) => {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for &i in s {
                    for byte in (i as u64).to_le_bytes() {
                        h ^= u64::from(byte);
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
                format!("s{}#{:016x}", s.len(), h)
            }
            Activity::Rank(r) => format!("r{r}"),
            Activity::Free(n) => format!("f{n}"),
            Activity::Product(parts) => parts
                .iter()
                .map(Activity::summary)
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

/// Result of a proximal step: the point, its activity and the penalty value
/// there (known exactly from the thresholding, no refactorization needed).
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub point: DenseVector,
    pub activity: Activity,
    pub value: f64,
}

/// Orthogonal projector onto a tangent space, applied matrix-free.
#[derive(Debug, Clone)]
pub enum TangentProjector {
    /// Keeps the flagged coordinates, zeroes the rest.
    Coordinates(Vec<bool>),
    /// Fixed-rank tangent space at `U_r diag(s) V_r^T`, acting on
    /// column-major `rows x cols` blocks:
    /// `P(Z) = U U^T Z + Z V V^T - U U^T Z V V^T`.
    FixedRank {
        rows: usize,
        cols: usize,
        u: DenseMatrix,
        v: DenseMatrix,
    },
    Identity(usize),
    Blocks(Vec<(Range<usize>, TangentProjector)>),
}

impl TangentProjector {
    pub fn dimension(&self) -> usize {
        match self {
            TangentProjector::Coordinates(mask) => mask.len(),
            TangentProjector::FixedRank { rows, cols, .. } => rows * cols,
            TangentProjector::Identity(n) => *n,
            TangentProjector::Blocks(blocks) => blocks.iter().map(|(r, _)| r.len()).sum(),
        }
    }

    pub fn apply(&self, v: &DenseVector) -> DenseVector {
        let mut out = DenseVector::zeros(v.len());
        self.apply_slice(v.as_slice(), out.as_mut_slice());
        out
    }

    fn apply_slice(&self, src: &[f64], dst: &mut [f64]) {
        match self {
            TangentProjector::Coordinates(mask) => {
                for ((d, s), keep) in dst.iter_mut().zip(src).zip(mask) {
                    *d = if *keep { *s } else { 0.0 };
                }
            }
            TangentProjector::FixedRank { rows, cols, u, v } => {
                let z = DenseMatrix::from_column_slice(*rows, *cols, src);
                let uz = u.transpose() * &z; // r x cols
                let left = u * &uz; // U U^T Z
                let zv = &z * v; // rows x r
                let right = &zv * v.transpose(); // Z V V^T
                let both = u * (&uz * v) * v.transpose();
                let p = left + right - both;
                dst.copy_from_slice(p.as_slice());
            }
            TangentProjector::Identity(_) => dst.copy_from_slice(src),
            TangentProjector::Blocks(blocks) => {
                for (range, proj) in blocks {
                    proj.apply_slice(&src[range.clone()], &mut dst[range.clone()]);
                }
            }
        }
    }
}

/// Active manifold description at a point.
#[derive(Debug, Clone)]
pub struct ManifoldInfo {
    pub activity: Activity,
    /// Orthonormal columns spanning the tangent space (ambient x t).
    pub tangent_basis: DenseMatrix,
    pub projector: TangentProjector,
}

impl ManifoldInfo {
    pub fn tangent_dimension(&self) -> usize {
        self.tangent_basis.ncols()
    }

    pub fn project(&self, v: &DenseVector) -> DenseVector {
        self.projector.apply(v)
    }
}

/// A proper lsc penalty with an exactly computable proximal map.
pub trait Penalty: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;

    fn value(&self, x: &DenseVector) -> Result<f64>;

    /// A minimizer of `0.5 |x - z|^2 + step * R(x)`.
    fn prox(&self, z: &DenseVector, step: f64) -> Result<ProxOutput>;

    fn activity(&self, x: &DenseVector) -> Result<Activity>;

    fn manifold(&self, x: &DenseVector) -> Result<ManifoldInfo>;

    /// Riemannian Hessian of the penalty along its active manifold at `x`,
    /// applied to a tangent vector. Zero for every built-in: the penalties
    /// are locally constant on their manifolds.
    fn riemannian_hessian_action(&self, _x: &DenseVector, h: &DenseVector) -> DenseVector {
        DenseVector::zeros(h.len())
    }

    fn describe(&self) -> String;
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PenaltyError::Dimension { expected, found })
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(PenaltyError::InvalidParameter(format!(
            "prox parameter must be positive and finite, got {theta}"
        )))
    }
}

/// Hard thresholding: keeps `z_i` when `|z_i| > sqrt(2 theta)`.
pub fn prox_l0(z: &DenseVector, theta: f64) -> Result<DenseVector> {
    check_theta(theta)?;
    let threshold = (2.0 * theta).sqrt();
    Ok(z.map(|v| if v.abs() > threshold { v } else { 0.0 }))
}

/// Matrix prox of `theta * rank`, with the exact rank of the output.
#[derive(Debug, Clone)]
pub struct RankProx {
    pub matrix: DenseMatrix,
    pub rank: usize,
}

/// Hard thresholding of the singular values at `sqrt(2 theta)`.
///
/// Only the kept triplets matter, and those have `sigma^2 > 2 theta`, so the
/// decision and the projection come from the eigendecomposition of the
/// smaller Gram matrix: the result is `Z V_r V_r^T` (or `U_r U_r^T Z`),
/// which equals `U_r diag(sigma_r) V_r^T` and has rank `r` by construction.
pub fn prox_rank(z: &DenseMatrix, theta: f64) -> Result<RankProx> {
    check_theta(theta)?;
    numerics::ensure_finite(z.as_slice())?;
    let wide = z.nrows() < z.ncols();
    let gram = if wide {
        z * z.transpose()
    } else {
        z.transpose() * z
    };
    let (values, vectors) = numerics::symmetric_eigen(&gram)?;
    let keep: Vec<usize> = (0..values.len())
        .rev()
        .filter(|&i| values[i] > 2.0 * theta)
        .collect();
    let rank = keep.len();
    if rank == 0 {
        return Ok(RankProx {
            matrix: DenseMatrix::zeros(z.nrows(), z.ncols()),
            rank,
        });
    }
    let basis = vectors.select_columns(keep.iter());
    let matrix = if wide {
        &basis * (basis.transpose() * z)
    } else {
        (z * &basis) * basis.transpose()
    };
    Ok(RankProx { matrix, rank })
}

/// Number of nonzero entries (exact zero test).
pub fn l0_value(x: &DenseVector) -> usize {
    x.iter().filter(|v| **v != 0.0).count()
}

/// Numeric rank: singular values above `1e-10 * sigma_max`.
pub fn rank_value(x: &DenseMatrix) -> Result<usize> {
    let sigma = numerics::singular_values(x)?;
    let max = sigma.iter().fold(0.0f64, |a, b| a.max(*b));
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|&&s| s > NUMERIC_RANK_RTOL * max).count())
}

pub fn manifold_info_l0(x: &DenseVector) -> ManifoldInfo {
    let n = x.len();
    let support: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
    let mut basis = DenseMatrix::zeros(n, support.len());
    for (col, &i) in support.iter().enumerate() {
        basis[(i, col)] = 1.0;
    }
    let mask = (0..n).map(|i| x[i] != 0.0).collect();
    ManifoldInfo {
        activity: Activity::Support(support),
        tangent_basis: basis,
        projector: TangentProjector::Coordinates(mask),
    }
}

/// Tangent space of the fixed-rank manifold through `x`.
///
/// With full orthonormal bases `u_1..u_n1`, `v_1..v_n2` from an SVD of `x`
/// and numeric rank `r`, the matrices `u_i v_j^T` with `i <= r` or `j <= r`
/// form an orthonormal basis of the tangent space, `r (n1 + n2 - r)` in all.
pub fn manifold_info_rank(x: &DenseMatrix) -> Result<ManifoldInfo> {
    let (rows, cols) = x.shape();
    let dec = numerics::svd(x)?;
    let max = dec.sigma.iter().fold(0.0f64, |a, b| a.max(*b));
    let rank = if max == 0.0 {
        0
    } else {
        dec.sigma
            .iter()
            .filter(|&&s| s > NUMERIC_RANK_RTOL * max)
            .count()
    };
    Ok(fixed_rank_manifold(&dec.u, &dec.v, rank, rows, cols))
}

/// Builds the fixed-rank tangent data from leading singular vectors.
/// `u` and `v` must have at least `rank` orthonormal columns.
pub fn fixed_rank_manifold(
    u: &DenseMatrix,
    v: &DenseMatrix,
    rank: usize,
    rows: usize,
    cols: usize,
) -> ManifoldInfo {
    let u_r = u.columns(0, rank).into_owned();
    let v_r = v.columns(0, rank).into_owned();
    let u_full = full_basis(&u_r);
    let v_full = full_basis(&v_r);
    let dim = rank * (rows + cols - rank);
    let mut basis = DenseMatrix::zeros(rows * cols, dim);
    let mut col = 0;
    for j in 0..cols {
        for i in 0..rows {
            if i < rank || j < rank {
                let ui = u_full.column(i);
                let vj = v_full.column(j);
                let mut dst = basis.column_mut(col);
                for q in 0..cols {
                    let vq = vj[q];
                    if vq == 0.0 {
                        continue;
                    }
                    for p in 0..rows {
                        dst[p + q * rows] = ui[p] * vq;
                    }
                }
                col += 1;
            }
        }
    }
    debug_assert_eq!(col, dim);
    ManifoldInfo {
        activity: Activity::Rank(rank),
        tangent_basis: basis,
        projector: TangentProjector::FixedRank {
            rows,
            cols,
            u: u_r,
            v: v_r,
        },
    }
}

fn full_basis(q: &DenseMatrix) -> DenseMatrix {
    let comp = numerics::orthonormal_complement(q);
    let cols: Vec<_> = q
        .column_iter()
        .chain(comp.column_iter())
        .map(|c| c.into_owned())
        .collect();
    DenseMatrix::from_columns(&cols)
}

/// `weight * ||x||_0`.
#[derive(Debug, Clone)]
pub struct L0Penalty {
    weight: f64,
    dim: usize,
}

impl L0Penalty {
    pub fn new(weight: f64, dim: usize) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(PenaltyError::InvalidParameter(format!(
                "l0 weight must be positive, got {weight}"
            )));
        }
        Ok(Self { weight, dim })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

impl Penalty for L0Penalty {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DenseVector) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.weight * l0_value(x) as f64)
    }

    fn prox(&self, z: &DenseVector, step: f64) -> Result<ProxOutput> {
        check_dim(self.dim, z.len())?;
        let point = prox_l0(z, step * self.weight)?;
        let support: Vec<usize> = (0..point.len()).filter(|&i| point[i] != 0.0).collect();
        let value = self.weight * support.len() as f64;
        Ok(ProxOutput {
            point,
            activity: Activity::Support(support),
            value,
        })
    }

    fn activity(&self, x: &DenseVector) -> Result<Activity> {
        check_dim(self.dim, x.len())?;
        Ok(Activity::Support(
            (0..x.len()).filter(|&i| x[i] != 0.0).collect(),
        ))
    }

    fn manifold(&self, x: &DenseVector) -> Result<ManifoldInfo> {
        check_dim(self.dim, x.len())?;
        Ok(manifold_info_l0(x))
    }

    fn describe(&self) -> String {
        format!("{} * l0 on R^{}", self.weight, self.dim)
    }
}

/// `weight * rank(X)` for `X` stored column-major as `rows * cols` entries.
#[derive(Debug, Clone)]
pub struct RankPenalty {
    weight: f64,
    rows: usize,
    cols: usize,
}

impl RankPenalty {
    pub fn new(weight: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(PenaltyError::InvalidParameter(format!(
                "rank weight must be positive, got {weight}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(PenaltyError::InvalidParameter(format!(
                "empty matrix shape {rows}x{cols}"
            )));
        }
        Ok(Self { weight, rows, cols })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn as_matrix(&self, x: &DenseVector) -> Result<DenseMatrix> {
        check_dim(self.rows * self.cols, x.len())?;
        Ok(DenseMatrix::from_column_slice(
            self.rows,
            self.cols,
            x.as_slice(),
        ))
    }
}

impl Penalty for RankPenalty {
    fn dimension(&self) -> usize {
        self.rows * self.cols
    }

    fn value(&self, x: &DenseVector) -> Result<f64> {
        Ok(self.weight * rank_value(&self.as_matrix(x)?)? as f64)
    }

    fn prox(&self, z: &DenseVector, step: f64) -> Result<ProxOutput> {
        let out = prox_rank(&self.as_matrix(z)?, step * self.weight)?;
        Ok(ProxOutput {
            point: DenseVector::from_column_slice(out.matrix.as_slice()),
            activity: Activity::Rank(out.rank),
            value: self.weight * out.rank as f64,
        })
    }

    fn activity(&self, x: &DenseVector) -> Result<Activity> {
        Ok(Activity::Rank(rank_value(&self.as_matrix(x)?)?))
    }

    fn manifold(&self, x: &DenseVector) -> Result<ManifoldInfo> {
        manifold_info_rank(&self.as_matrix(x)?)
    }

    fn describe(&self) -> String {
        format!("{} * rank on R^{}x{}", self.weight, self.rows, self.cols)
    }
}

/// The zero penalty; its prox is the identity and its manifold is the
/// whole space.
#[derive(Debug, Clone)]
pub struct ZeroPenalty {
    dim: usize,
}

impl ZeroPenalty {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Penalty for ZeroPenalty {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DenseVector) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(0.0)
    }

    fn prox(&self, z: &DenseVector, step: f64) -> Result<ProxOutput> {
        check_dim(self.dim, z.len())?;
        check_theta(step)?;
        Ok(ProxOutput {
            point: z.clone(),
            activity: Activity::Free(self.dim),
            value: 0.0,
        })
    }

    fn activity(&self, x: &DenseVector) -> Result<Activity> {
        check_dim(self.dim, x.len())?;
        Ok(Activity::Free(self.dim))
    }

    fn manifold(&self, x: &DenseVector) -> Result<ManifoldInfo> {
        check_dim(self.dim, x.len())?;
        Ok(ManifoldInfo {
            activity: Activity::Free(self.dim),
            tangent_basis: DenseMatrix::identity(self.dim, self.dim),
            projector: TangentProjector::Identity(self.dim),
        })
    }

    fn describe(&self) -> String {
        format!("free on R^{}", self.dim)
    }
}

/// Separable sum of penalties over disjoint coordinate slices.
#[derive(Debug)]
pub struct ProductPenalty {
    dim: usize,
    parts: Vec<(Range<usize>, Box<dyn Penalty>)>,
}

/// Assembles a separable penalty. `free_slices` are left unpenalized.
/// Together with the parts' slices they must partition `0..n`.
pub fn product_penalty(
    parts: Vec<(Box<dyn Penalty>, Range<usize>)>,
    free_slices: Vec<Range<usize>>,
) -> Result<ProductPenalty> {
    let mut all: Vec<(Range<usize>, Box<dyn Penalty>)> = parts
        .into_iter()
        .map(|(p, r)| (r, p))
        .chain(
            free_slices
                .into_iter()
                .map(|r| (r.clone(), Box::new(ZeroPenalty::new(r.len())) as Box<dyn Penalty>)),
        )
        .collect();
    all.sort_by_key(|(r, _)| r.start);
    let mut next = 0;
    for (range, penalty) in &all {
        if range.is_empty() {
            return Err(PenaltyError::Partition(format!("empty slice {range:?}")));
        }
        if range.start != next {
            return Err(PenaltyError::Partition(format!(
                "slice {range:?} does not start at {next} (gap or overlap)"
            )));
        }
        if penalty.dimension() != range.len() {
            return Err(PenaltyError::Partition(format!(
                "slice {range:?} has length {} but its penalty acts on {} coordinates",
                range.len(),
                penalty.dimension()
            )));
        }
        next = range.end;
    }
    if all.is_empty() {
        return Err(PenaltyError::Partition("no slices".into()));
    }
    Ok(ProductPenalty { dim: next, parts: all })
}

impl ProductPenalty {
    pub fn parts(&self) -> impl Iterator<Item = (&Range<usize>, &dyn Penalty)> {
        self.parts.iter().map(|(r, p)| (r, p.as_ref()))
    }

    fn block(x: &DenseVector, r: &Range<usize>) -> DenseVector {
        DenseVector::from_column_slice(&x.as_slice()[r.clone()])
    }
}

impl Penalty for ProductPenalty {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DenseVector) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut total = 0.0;
        for (r, p) in &self.parts {
            total += p.value(&Self::block(x, r))?;
        }
        Ok(total)
    }

    fn prox(&self, z: &DenseVector, step: f64) -> Result<ProxOutput> {
        check_dim(self.dim, z.len())?;
        let mut point = DenseVector::zeros(self.dim);
        let mut activities = Vec::with_capacity(self.parts.len());
        let mut value = 0.0;
        for (r, p) in &self.parts {
            let out = p.prox(&Self::block(z, r), step)?;
            point.as_mut_slice()[r.clone()].copy_from_slice(out.point.as_slice());
            activities.push(out.activity);
            value += out.value;
        }
        Ok(ProxOutput {
            point,
            activity: Activity::Product(activities),
            value,
        })
    }

    fn activity(&self, x: &DenseVector) -> Result<Activity> {
        check_dim(self.dim, x.len())?;
        let parts = self
            .parts
            .iter()
            .map(|(r, p)| p.activity(&Self::block(x, r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Activity::Product(parts))
    }

    fn manifold(&self, x: &DenseVector) -> Result<ManifoldInfo> {
        check_dim(self.dim, x.len())?;
        let infos = self
            .parts
            .iter()
            .map(|(r, p)| p.manifold(&Self::block(x, r)).map(|m| (r.clone(), m)))
            .collect::<Result<Vec<_>>>()?;
        let t: usize = infos.iter().map(|(_, m)| m.tangent_dimension()).sum();
        let mut basis = DenseMatrix::zeros(self.dim, t);
        let mut col = 0;
        for (r, m) in &infos {
            let tb = &m.tangent_basis;
            basis
                .view_mut((r.start, col), (r.len(), tb.ncols()))
                .copy_from(tb);
            col += tb.ncols();
        }
        let activity = Activity::Product(infos.iter().map(|(_, m)| m.activity.clone()).collect());
        let projector =
            TangentProjector::Blocks(infos.into_iter().map(|(r, m)| (r, m.projector)).collect());
        Ok(ManifoldInfo {
            activity,
            tangent_basis: basis,
            projector,
        })
    }

    fn riemannian_hessian_action(&self, x: &DenseVector, h: &DenseVector) -> DenseVector {
        let mut out = DenseVector::zeros(h.len());
        for (r, p) in &self.parts {
            let part = p.riemannian_hessian_action(&Self::block(x, r), &Self::block(h, r));
            out.as_mut_slice()[r.clone()].copy_from_slice(part.as_slice());
        }
        out
    }

    fn describe(&self) -> String {
        self.parts
            .iter()
            .map(|(r, p)| format!("[{}..{}) {}", r.start, r.end, p.describe()))
            .collect::<Vec<_>>()
            .join(" (+) ")
    }
}
