//! Composite problems `Phi = F + R` and the three synthetic instances:
//! sparse regression, principal component pursuit and sparse SVM.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, DenseMatrix, DenseVector, NumericsError, RngState};
use crate::penalties::{product_penalty, L0Penalty, Penalty, PenaltyError, RankPenalty};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sparsity {k} exceeds dimension {n}")]
    InvalidSparsity { k: usize, n: usize },
    #[error("smooth part acts on {smooth} coordinates, penalty on {penalty}")]
    Dimension { smooth: usize, penalty: usize },
    #[error("archive error: {0}")]
    Archive(String),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// Relative tolerance of the power iteration behind Lipschitz constants.
pub const LIPSCHITZ_TOL: f64 = 1e-8;

/// Smooth part `F` with a Lipschitz gradient.
pub trait SmoothLoss: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;
    fn value(&self, x: &DenseVector) -> f64;
    fn gradient(&self, x: &DenseVector) -> DenseVector;
    /// `Hess F(x) d`; for piecewise-C2 losses this is the a.e. Hessian.
    fn hessian_action(&self, x: &DenseVector, d: &DenseVector) -> Option<DenseVector>;
    fn lipschitz(&self) -> f64;
    /// Distance of `x` to the set where `F` fails to be C2, if that set is
    /// non-empty.
    fn kink_distance(&self, _x: &DenseVector) -> Option<f64> {
        None
    }
}

/// `F(x) = 0.5 |y - A x|^2`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DenseMatrix,
    y: DenseVector,
    lipschitz: f64,
}

impl LeastSquares {
    /// Builds the loss directly from data; `L = lambda_max(A^T A)`.
    pub fn new(a: DenseMatrix, y: DenseVector) -> Result<Self> {
        if a.nrows() != y.len() || a.ncols() == 0 {
            return Err(ProblemError::InvalidParameter(format!(
                "A is {}x{} but y has {} entries",
                a.nrows(),
                a.ncols(),
                y.len()
            )));
        }
        numerics::ensure_finite(a.as_slice())?;
        numerics::ensure_finite(y.as_slice())?;
        let lipschitz = gram_lambda_max(&a)?;
        Ok(Self { a, y, lipschitz })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn observations(&self) -> &DenseVector {
        &self.y
    }
}

fn gram_lambda_max(a: &DenseMatrix) -> Result<f64> {
    let n = a.ncols();
    Ok(numerics::largest_eigenvalue_sym(
        |v| a.tr_mul(&(a * v)),
        n,
        LIPSCHITZ_TOL,
    )?)
}

impl SmoothLoss for LeastSquares {
    fn dimension(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        0.5 * (&self.a * x - &self.y).norm_squared()
    }

    fn gradient(&self, x: &DenseVector) -> DenseVector {
        self.a.tr_mul(&(&self.a * x - &self.y))
    }

    fn hessian_action(&self, _x: &DenseVector, d: &DenseVector) -> Option<DenseVector> {
        Some(self.a.tr_mul(&(&self.a * d)))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// PCP data fit `0.5 |y - x_s - x_l|_F^2` on the stacked variable
/// `(vec x_s, vec x_l)`.
#[derive(Debug, Clone)]
pub struct PcpLoss {
    y: DenseMatrix,
}

impl PcpLoss {
    pub fn new(y: DenseMatrix) -> Result<Self> {
        numerics::ensure_finite(y.as_slice())?;
        Ok(Self { y })
    }

    pub fn observations(&self) -> &DenseMatrix {
        &self.y
    }

    fn residual(&self, x: &DenseVector) -> DenseVector {
        let n = self.y.len();
        let mut r = x.rows(0, n) + x.rows(n, n);
        r -= DenseVector::from_column_slice(self.y.as_slice());
        r
    }
}

impl SmoothLoss for PcpLoss {
    fn dimension(&self) -> usize {
        2 * self.y.len()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        0.5 * self.residual(x).norm_squared()
    }

    fn gradient(&self, x: &DenseVector) -> DenseVector {
        let r = self.residual(x);
        let n = r.len();
        let mut g = DenseVector::zeros(2 * n);
        g.rows_mut(0, n).copy_from(&r);
        g.rows_mut(n, n).copy_from(&r);
        g
    }

    fn hessian_action(&self, _x: &DenseVector, d: &DenseVector) -> Option<DenseVector> {
        let n = self.y.len();
        let s = d.rows(0, n) + d.rows(n, n);
        let mut out = DenseVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&s);
        out.rows_mut(n, n).copy_from(&s);
        Some(out)
    }

    /// Spectrum of `[[I, I], [I, I]]` is `{0, 2}`.
    fn lipschitz(&self) -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredHinge,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_hinge" => Ok(LossKind::SquaredHinge),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(ProblemError::InvalidParameter(format!(
                "unknown loss kind {other:?} (expected squared_hinge or logistic)"
            ))),
        }
    }
}

/// Averaged classification loss over `(b, x)`, with `b` at index 0.
/// Internally the design has a leading column of ones so that the
/// prediction is `Z~ w` with `w = (b, x)`.
#[derive(Debug, Clone)]
pub struct SvmLoss {
    design: DenseMatrix,
    labels: DenseVector,
    kind: LossKind,
    lipschitz: f64,
}

impl SvmLoss {
    /// `features` is `m x n`, labels are +-1.
    pub fn new(features: &DenseMatrix, labels: DenseVector, kind: LossKind) -> Result<Self> {
        let (m, n) = features.shape();
        if m == 0 || n == 0 || labels.len() != m {
            return Err(ProblemError::InvalidParameter(format!(
                "features {m}x{n} with {} labels",
                labels.len()
            )));
        }
        if labels.iter().any(|l| *l != 1.0 && *l != -1.0) {
            return Err(ProblemError::InvalidParameter("labels must be +1 or -1".into()));
        }
        numerics::ensure_finite(features.as_slice())?;
        let mut design = DenseMatrix::from_element(m, n + 1, 1.0);
        design.columns_mut(1, n).copy_from(features);
        let scale = match kind {
            LossKind::SquaredHinge => 2.0 / m as f64,
            LossKind::Logistic => 0.25 / m as f64,
        };
        let lipschitz = scale * gram_lambda_max(&design)?;
        Ok(Self {
            design,
            labels,
            kind,
            lipschitz,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn labels(&self) -> &DenseVector {
        &self.labels
    }

    /// Features without the intercept column.
    pub fn features(&self) -> DenseMatrix {
        self.design.columns(1, self.design.ncols() - 1).into_owned()
    }

    /// `y_i (<x, z_i> + b)` for every sample.
    pub fn margins(&self, w: &DenseVector) -> DenseVector {
        (&self.design * w).component_mul(&self.labels)
    }

    fn samples(&self) -> f64 {
        self.labels.len() as f64
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl SmoothLoss for SvmLoss {
    fn dimension(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, w: &DenseVector) -> f64 {
        let margins = self.margins(w);
        let total: f64 = match self.kind {
            LossKind::SquaredHinge => margins.iter().map(|t| (1.0 - t).max(0.0).powi(2)).sum(),
            LossKind::Logistic => margins.iter().map(|t| log1p_exp(-t)).sum(),
        };
        total / self.samples()
    }

    fn gradient(&self, w: &DenseVector) -> DenseVector {
        let margins = self.margins(w);
        // derivative of G with respect to the prediction, per sample
        let dpred = DenseVector::from_fn(margins.len(), |i, _| {
            let y = self.labels[i];
            match self.kind {
                LossKind::SquaredHinge => -2.0 * y * (1.0 - margins[i]).max(0.0),
                LossKind::Logistic => -y * sigmoid(-margins[i]),
            }
        });
        self.design.tr_mul(&dpred) / self.samples()
    }

    fn hessian_action(&self, w: &DenseVector, d: &DenseVector) -> Option<DenseVector> {
        let margins = self.margins(w);
        let weights = DenseVector::from_fn(margins.len(), |i, _| match self.kind {
            LossKind::SquaredHinge => {
                if margins[i] < 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
            LossKind::Logistic => {
                let s = sigmoid(margins[i]);
                s * (1.0 - s)
            }
        });
        let zd = &self.design * d;
        Some(self.design.tr_mul(&zd.component_mul(&weights)) / self.samples())
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn kink_distance(&self, w: &DenseVector) -> Option<f64> {
        match self.kind {
            LossKind::SquaredHinge => Some(
                self.margins(w)
                    .iter()
                    .map(|t| (1.0 - t).abs())
                    .fold(f64::INFINITY, f64::min),
            ),
            LossKind::Logistic => None,
        }
    }
}

/// Parameters of a synthetic instance. Doubles as the `problem` block of
/// experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    SparseRegression {
        seed: u64,
        #[serde(default = "defaults::regression_m")]
        m: usize,
        #[serde(default = "defaults::regression_n")]
        n: usize,
        #[serde(default = "defaults::regression_k")]
        k: usize,
        #[serde(default = "defaults::noise_std")]
        noise_std: f64,
        #[serde(default = "defaults::regression_mu")]
        mu: f64,
    },
    Pcp {
        seed: u64,
        #[serde(default = "defaults::pcp_side")]
        n1: usize,
        #[serde(default = "defaults::pcp_side")]
        n2: usize,
        #[serde(default = "defaults::pcp_sparsity")]
        sparsity: usize,
        #[serde(default = "defaults::pcp_rank")]
        rank: usize,
        #[serde(default = "defaults::noise_std")]
        noise_std: f64,
        #[serde(default = "defaults::pcp_mu1")]
        mu1: f64,
        #[serde(default = "defaults::pcp_mu2")]
        mu2: f64,
    },
    SparseSvm {
        seed: u64,
        #[serde(default = "defaults::svm_m")]
        m: usize,
        #[serde(default = "defaults::svm_n")]
        n: usize,
        #[serde(default = "defaults::svm_loss")]
        loss: LossKind,
        #[serde(default = "defaults::svm_mu")]
        mu: f64,
    },
}

/// Instance defaults. The weights are not taken from any reference setup;
/// they were tuned so that the solver's support and rank at convergence are
/// close to the ground truth on the default sizes.
pub mod defaults {
    use super::LossKind;

    pub fn regression_m() -> usize {
        48
    }
    pub fn regression_n() -> usize {
        128
    }
    pub fn regression_k() -> usize {
        8
    }
    pub fn regression_mu() -> f64 {
        1.0
    }
    pub fn noise_std() -> f64 {
        0.01
    }
    pub fn pcp_side() -> usize {
        50
    }
    pub fn pcp_sparsity() -> usize {
        250
    }
    pub fn pcp_rank() -> usize {
        5
    }
    pub fn pcp_mu1() -> f64 {
        0.7
    }
    pub fn pcp_mu2() -> f64 {
        20.0
    }
    pub fn svm_m() -> usize {
        64
    }
    pub fn svm_n() -> usize {
        96
    }
    pub fn svm_loss() -> LossKind {
        LossKind::SquaredHinge
    }
    pub fn svm_mu() -> f64 {
        0.0005
    }
}

impl InstanceSpec {
    pub fn seed(&self) -> u64 {
        match self {
            InstanceSpec::SparseRegression { seed, .. }
            | InstanceSpec::Pcp { seed, .. }
            | InstanceSpec::SparseSvm { seed, .. } => *seed,
        }
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            InstanceSpec::SparseRegression { seed, .. }
            | InstanceSpec::Pcp { seed, .. }
            | InstanceSpec::SparseSvm { seed, .. } => *seed = new_seed,
        }
        out
    }

    pub fn name(&self) -> &'static str {
        match self {
            InstanceSpec::SparseRegression { .. } => "sparse_regression",
            InstanceSpec::Pcp { .. } => "pcp",
            InstanceSpec::SparseSvm { .. } => "sparse_svm",
        }
    }

    pub fn build(&self) -> Result<CompositeProblem> {
        match *self {
            InstanceSpec::SparseRegression {
                seed,
                m,
                n,
                k,
                noise_std,
                mu,
            } => make_sparse_regression(seed, m, n, k, noise_std, mu),
            InstanceSpec::Pcp {
                seed,
                n1,
                n2,
                sparsity,
                rank,
                noise_std,
                mu1,
                mu2,
            } => make_pcp(seed, n1, n2, sparsity, rank, noise_std, mu1, mu2),
            InstanceSpec::SparseSvm {
                seed,
                m,
                n,
                loss,
                mu,
            } => make_sparse_svm(seed, m, n, loss, mu),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemMetadata {
    /// Generator parameters, absent for hand-assembled problems.
    pub instance: Option<InstanceSpec>,
    pub description: String,
    pub lipschitz: f64,
}

/// `Phi = F + R` on a common ambient dimension.
#[derive(Debug)]
pub struct CompositeProblem {
    smooth: Box<dyn SmoothLoss>,
    penalty: Box<dyn Penalty>,
    metadata: ProblemMetadata,
    ground_truth: Option<DenseVector>,
    data: Option<ArchiveData>,
}

impl CompositeProblem {
    pub fn new(
        smooth: Box<dyn SmoothLoss>,
        penalty: Box<dyn Penalty>,
        description: impl Into<String>,
    ) -> Result<Self> {
        if smooth.dimension() != penalty.dimension() {
            return Err(ProblemError::Dimension {
                smooth: smooth.dimension(),
                penalty: penalty.dimension(),
            });
        }
        let lipschitz = smooth.lipschitz();
        Ok(Self {
            smooth,
            penalty,
            metadata: ProblemMetadata {
                instance: None,
                description: description.into(),
                lipschitz,
            },
            ground_truth: None,
            data: None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.smooth.dimension()
    }

    pub fn smooth(&self) -> &dyn SmoothLoss {
        self.smooth.as_ref()
    }

    pub fn penalty(&self) -> &dyn Penalty {
        self.penalty.as_ref()
    }

    pub fn metadata(&self) -> &ProblemMetadata {
        &self.metadata
    }

    pub fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz()
    }

    /// The planted signal, for generated instances.
    pub fn ground_truth(&self) -> Option<&DenseVector> {
        self.ground_truth.as_ref()
    }

    pub fn objective(&self, x: &DenseVector) -> Result<f64> {
        Ok(self.smooth.value(x) + self.penalty.value(x)?)
    }

    /// Serializable snapshot (metadata plus raw arrays) of a generated
    /// instance.
    pub fn to_archive(&self) -> Result<ProblemArchive> {
        let data = self.data.clone().ok_or_else(|| {
            ProblemError::Archive("only generated instances can be archived".into())
        })?;
        Ok(ProblemArchive {
            metadata: self.metadata.clone(),
            ground_truth: self.ground_truth.as_ref().map(|g| g.as_slice().to_vec()),
            data,
        })
    }

    pub fn from_archive(archive: &ProblemArchive) -> Result<Self> {
        let spec = archive
            .metadata
            .instance
            .clone()
            .ok_or_else(|| ProblemError::Archive("archive lacks instance parameters".into()))?;
        let mut problem = match (&spec, &archive.data) {
            (InstanceSpec::SparseRegression { mu, .. }, ArchiveData::Regression { a, y }) => {
                regression_problem(a.to_matrix()?, DenseVector::from_vec(y.clone()), *mu)?
            }
            (InstanceSpec::Pcp { mu1, mu2, .. }, ArchiveData::Pcp { y }) => {
                pcp_problem(y.to_matrix()?, *mu1, *mu2)?
            }
            (InstanceSpec::SparseSvm { loss, mu, .. }, ArchiveData::Svm { features, labels }) => {
                svm_problem(
                    &features.to_matrix()?,
                    DenseVector::from_vec(labels.clone()),
                    *loss,
                    *mu,
                )?
            }
            _ => {
                return Err(ProblemError::Archive(
                    "instance kind does not match archived data".into(),
                ))
            }
        };
        problem.metadata.instance = Some(spec);
        problem.metadata.description = archive.metadata.description.clone();
        problem.ground_truth = archive
            .ground_truth
            .as_ref()
            .map(|g| DenseVector::from_vec(g.clone()));
        Ok(problem)
    }
}

/// Column-major matrix payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        if self.rows * self.cols != self.data.len() {
            return Err(ProblemError::Archive(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DenseMatrix::from_column_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchiveData {
    Regression { a: MatrixData, y: Vec<f64> },
    Pcp { y: MatrixData },
    Svm { features: MatrixData, labels: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemArchive {
    pub metadata: ProblemMetadata,
    pub ground_truth: Option<Vec<f64>>,
    pub data: ArchiveData,
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::InvalidParameter(format!(
            "{name} must be positive, got {w}"
        )))
    }
}

fn check_noise(noise_std: f64) -> Result<()> {
    if noise_std >= 0.0 && noise_std.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::InvalidParameter(format!(
            "noise_std must be non-negative, got {noise_std}"
        )))
    }
}

/// Nonzero amplitude `sign * (1 + |N(0,1)|)`, bounded away from zero.
fn planted_amplitude(rng: &mut RngState) -> f64 {
    let sign = rng.next_sign();
    sign * (1.0 + rng.next_gaussian().abs())
}

fn regression_problem(a: DenseMatrix, y: DenseVector, mu: f64) -> Result<CompositeProblem> {
    let n = a.ncols();
    let data = ArchiveData::Regression {
        a: MatrixData::from_matrix(&a),
        y: y.as_slice().to_vec(),
    };
    let smooth = LeastSquares::new(a, y)?;
    let mut p = CompositeProblem::new(
        Box::new(smooth),
        Box::new(L0Penalty::new(mu, n)?),
        "",
    )?;
    p.data = Some(data);
    Ok(p)
}

/// `min mu |x|_0 + 0.5 |y - A x|^2` with Gaussian `A` and a planted
/// `k`-sparse signal.
///
/// Draw order: `A` (column-major), support, then per support index a sign
/// and a magnitude, then the noise.
pub fn make_sparse_regression(
    seed: u64,
    m: usize,
    n: usize,
    k: usize,
    noise_std: f64,
    mu: f64,
) -> Result<CompositeProblem> {
    if m == 0 || n == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "dimensions must be positive, got m={m} n={n}"
        )));
    }
    if k > n {
        return Err(ProblemError::InvalidSparsity { k, n });
    }
    check_weight("mu", mu)?;
    check_noise(noise_std)?;
    let mut rng = RngState::new(seed);
    let a = rng.gaussian_matrix(m, n)?;
    let support = rng.sample_without_replacement(n, k);
    let mut x_ob = DenseVector::zeros(n);
    for &i in &support {
        x_ob[i] = planted_amplitude(&mut rng);
    }
    let noise = numerics::gaussian_vector(&mut rng, m)? * noise_std;
    let y = &a * &x_ob + noise;
    let mut p = regression_problem(a, y, mu)?;
    let spec = InstanceSpec::SparseRegression {
        seed,
        m,
        n,
        k,
        noise_std,
        mu,
    };
    p.metadata.description = format!(
        "sparse regression m={m} n={n} k={k} noise_std={noise_std} mu={mu} seed={seed}"
    );
    p.metadata.instance = Some(spec);
    p.ground_truth = Some(x_ob);
    Ok(p)
}

fn pcp_problem(y: DenseMatrix, mu1: f64, mu2: f64) -> Result<CompositeProblem> {
    let (n1, n2) = y.shape();
    let len = n1 * n2;
    let data = ArchiveData::Pcp {
        y: MatrixData::from_matrix(&y),
    };
    let penalty = product_penalty(
        vec![
            (Box::new(L0Penalty::new(mu1, len)?) as Box<dyn Penalty>, 0..len),
            (Box::new(RankPenalty::new(mu2, n1, n2)?) as Box<dyn Penalty>, len..2 * len),
        ],
        vec![],
    )?;
    let mut p = CompositeProblem::new(Box::new(PcpLoss::new(y)?), Box::new(penalty), "")?;
    p.data = Some(data);
    Ok(p)
}

/// `min mu1 |x_s|_0 + mu2 rank(x_l) + 0.5 |y - x_s - x_l|_F^2`.
///
/// The variable stacks `vec(x_s)` and `vec(x_l)` (column-major). Draw order:
/// support of `x_s`, its amplitudes, the factors `P` and `Q` of
/// `x_l = P Q^T`, then the noise.
#[allow(clippy::too_many_arguments)]
pub fn make_pcp(
    seed: u64,
    n1: usize,
    n2: usize,
    sparsity: usize,
    rank: usize,
    noise_std: f64,
    mu1: f64,
    mu2: f64,
) -> Result<CompositeProblem> {
    if n1 == 0 || n2 == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "dimensions must be positive, got {n1}x{n2}"
        )));
    }
    if rank > n1.min(n2) {
        return Err(ProblemError::InvalidParameter(format!(
            "rank {rank} exceeds min({n1}, {n2})"
        )));
    }
    if sparsity > n1 * n2 {
        return Err(ProblemError::InvalidSparsity {
            k: sparsity,
            n: n1 * n2,
        });
    }
    check_weight("mu1", mu1)?;
    check_weight("mu2", mu2)?;
    check_noise(noise_std)?;
    let mut rng = RngState::new(seed);
    let len = n1 * n2;
    let mut xs = DenseVector::zeros(len);
    for i in rng.sample_without_replacement(len, sparsity) {
        xs[i] = planted_amplitude(&mut rng);
    }
    let xl = if rank == 0 {
        DenseMatrix::zeros(n1, n2)
    } else {
        let p = rng.gaussian_matrix(n1, rank)?;
        let q = rng.gaussian_matrix(n2, rank)?;
        p * q.transpose()
    };
    let noise = rng.gaussian_matrix(n1, n2)? * noise_std;
    let y = DenseMatrix::from_column_slice(n1, n2, xs.as_slice()) + &xl + noise;
    let mut problem = pcp_problem(y, mu1, mu2)?;
    let mut truth = DenseVector::zeros(2 * len);
    truth.rows_mut(0, len).copy_from(&xs);
    truth
        .rows_mut(len, len)
        .copy_from(&DenseVector::from_column_slice(xl.as_slice()));
    problem.metadata.description = format!(
        "pcp {n1}x{n2} sparsity={sparsity} rank={rank} noise_std={noise_std} mu1={mu1} mu2={mu2} seed={seed}"
    );
    problem.metadata.instance = Some(InstanceSpec::Pcp {
        seed,
        n1,
        n2,
        sparsity,
        rank,
        noise_std,
        mu1,
        mu2,
    });
    problem.ground_truth = Some(truth);
    Ok(problem)
}

fn svm_problem(
    features: &DenseMatrix,
    labels: DenseVector,
    loss: LossKind,
    mu: f64,
) -> Result<CompositeProblem> {
    let n = features.ncols();
    let data = ArchiveData::Svm {
        features: MatrixData::from_matrix(features),
        labels: labels.as_slice().to_vec(),
    };
    let smooth = SvmLoss::new(features, labels, loss)?;
    let penalty = product_penalty(
        vec![(Box::new(L0Penalty::new(mu, n)?) as Box<dyn Penalty>, 1..n + 1)],
        vec![0..1],
    )?;
    let mut p = CompositeProblem::new(Box::new(smooth), Box::new(penalty), "")?;
    p.data = Some(data);
    Ok(p)
}

/// `min mu |x|_0 + (1/m) sum G(<x, z_i> + b, y_i)` over `(b, x)`.
///
/// Features are Gaussian; labels come from a hidden Gaussian linear model
/// `sign(<w, z_i> + b)` with `sign(0) = +1`. Draw order: features
/// (column-major), `w`, `b`.
pub fn make_sparse_svm(
    seed: u64,
    m: usize,
    n: usize,
    loss: LossKind,
    mu: f64,
) -> Result<CompositeProblem> {
    if m == 0 || n == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "dimensions must be positive, got m={m} n={n}"
        )));
    }
    check_weight("mu", mu)?;
    let mut rng = RngState::new(seed);
    let features = rng.gaussian_matrix(m, n)?;
    let w = numerics::gaussian_vector(&mut rng, n)?;
    let b = rng.next_gaussian();
    let scores = &features * &w;
    let labels = scores.map(|s| if s + b >= 0.0 { 1.0 } else { -1.0 });
    let mut p = svm_problem(&features, labels, loss, mu)?;
    let mut truth = DenseVector::zeros(n + 1);
    truth[0] = b;
    truth.rows_mut(1, n).copy_from(&w);
    let loss_name = match loss {
        LossKind::SquaredHinge => "squared_hinge",
        LossKind::Logistic => "logistic",
    };
    p.metadata.description = format!("sparse svm m={m} n={n} loss={loss_name} mu={mu} seed={seed}");
    p.metadata.instance = Some(InstanceSpec::SparseSvm {
        seed,
        m,
        n,
        loss,
        mu,
    });
    p.ground_truth = Some(truth);
    Ok(p)
}

/// Lipschitz constant of the gradient of the smooth part.
pub fn lipschitz_constant(problem: &CompositeProblem) -> f64 {
    problem.lipschitz()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalties::ZeroPenalty;

    fn random_vector(rng: &mut RngState, n: usize) -> DenseVector {
        DenseVector::from_fn(n, |_, _| rng.next_gaussian())
    }

    #[test]
    fn identity_hook_recovers_signal() {
        let x_ob = DenseVector::from_column_slice(&[1.0, 0.0, -2.0]);
        let ls = LeastSquares::new(DenseMatrix::identity(3, 3), x_ob.clone()).unwrap();
        assert_eq!(ls.lipschitz(), 1.0);
        assert_eq!(ls.value(&x_ob), 0.0);
        assert_eq!(ls.gradient(&x_ob), DenseVector::zeros(3));
    }

    #[test]
    fn scaled_identity_lipschitz() {
        let ls = LeastSquares::new(DenseMatrix::identity(4, 4) * 2.0, DenseVector::zeros(4)).unwrap();
        assert!((ls.lipschitz() - 4.0).abs() <= 4.0 * 1e-12);
    }

    #[test]
    fn regression_lipschitz_matches_dense_spectrum() {
        let p = make_sparse_regression(5, 48, 128, 8, 0.01, 1.0).unwrap();
        // A is the first draw of the stream
        let a = RngState::new(5).gaussian_matrix(48, 128).unwrap();
        let ls = LeastSquares::new(a, DenseVector::zeros(48)).unwrap();
        let gram = ls.matrix().tr_mul(ls.matrix());
        let dense = *numerics::symmetric_eigenvalues(&gram).unwrap().last().unwrap();
        assert!((p.lipschitz() - dense).abs() <= 1e-6 * dense);
    }

    #[test]
    fn regression_generation() {
        let p = make_sparse_regression(3, 48, 128, 8, 0.01, 1.0).unwrap();
        let truth = p.ground_truth().unwrap();
        assert_eq!(truth.iter().filter(|v| **v != 0.0).count(), 8);
        assert!(truth.iter().all(|v| *v == 0.0 || v.abs() >= 1.0));
        assert_eq!(p.dimension(), 128);
        assert!(matches!(
            make_sparse_regression(3, 4, 5, 6, 0.0, 1.0),
            Err(ProblemError::InvalidSparsity { k: 6, n: 5 })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_pcp(9, 12, 10, 20, 2, 0.01, 0.7, 20.0).unwrap().to_archive().unwrap();
        let b = make_pcp(9, 12, 10, 20, 2, 0.01, 0.7, 20.0).unwrap().to_archive().unwrap();
        assert_eq!(a, b);
        let c = make_sparse_svm(9, 20, 30, LossKind::Logistic, 0.1).unwrap().to_archive().unwrap();
        let d = make_sparse_svm(9, 20, 30, LossKind::Logistic, 0.1).unwrap().to_archive().unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn pcp_structure() {
        let p = make_pcp(1, 50, 50, 250, 5, 0.01, 0.7, 20.0).unwrap();
        assert_eq!(p.lipschitz(), 2.0);
        assert_eq!(p.dimension(), 5000);
        let truth = p.ground_truth().unwrap();
        assert_eq!(truth.rows(0, 2500).iter().filter(|v| **v != 0.0).count(), 250);
        let xl = DenseMatrix::from_column_slice(50, 50, &truth.as_slice()[2500..]);
        assert_eq!(crate::penalties::rank_value(&xl).unwrap(), 5);
        assert!(make_pcp(1, 4, 3, 5, 4, 0.0, 1.0, 1.0).is_err());
        assert!(make_pcp(1, 4, 3, 13, 1, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn pcp_hessian_block_form() {
        let p = make_pcp(2, 6, 5, 4, 2, 0.01, 0.7, 20.0).unwrap();
        let mut rng = RngState::new(8);
        let x = random_vector(&mut rng, 60);
        let d = random_vector(&mut rng, 60);
        let hd = p.smooth().hessian_action(&x, &d).unwrap();
        for i in 0..30 {
            assert_eq!(hd[i], d[i] + d[i + 30]);
            assert_eq!(hd[i + 30], d[i] + d[i + 30]);
        }
    }

    #[test]
    fn svm_at_origin() {
        let p = make_sparse_svm(4, 64, 96, LossKind::SquaredHinge, 0.1).unwrap();
        assert_eq!(p.smooth().value(&DenseVector::zeros(97)), 1.0);
        let q = make_sparse_svm(4, 64, 96, LossKind::Logistic, 0.1).unwrap();
        assert!((q.smooth().value(&DenseVector::zeros(97)) - 2f64.ln()).abs() < 1e-15);
        assert!("hinge".parse::<LossKind>().is_err());
    }

    #[test]
    fn svm_penalty_leaves_intercept_free() {
        let p = make_sparse_svm(4, 10, 3, LossKind::SquaredHinge, 1.0).unwrap();
        let z = DenseVector::from_column_slice(&[0.01, 3.0, 0.1, -2.0]);
        let out = p.penalty().prox(&z, 0.5).unwrap();
        assert_eq!(out.point, DenseVector::from_column_slice(&[0.01, 3.0, 0.0, -2.0]));
    }

    fn all_instances() -> Vec<CompositeProblem> {
        vec![
            make_sparse_regression(11, 20, 30, 4, 0.01, 1.0).unwrap(),
            make_pcp(11, 8, 7, 6, 2, 0.01, 0.7, 20.0).unwrap(),
            make_sparse_svm(11, 25, 15, LossKind::SquaredHinge, 0.1).unwrap(),
            make_sparse_svm(11, 25, 15, LossKind::Logistic, 0.1).unwrap(),
        ]
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = RngState::new(12);
        for p in all_instances() {
            let f = p.smooth();
            for _ in 0..20 {
                let x = random_vector(&mut rng, p.dimension());
                let g = f.gradient(&x);
                let h = 1e-6;
                let fd = DenseVector::from_fn(p.dimension(), |i, _| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (f.value(&xp) - f.value(&xm)) / (2.0 * h)
                });
                assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1.0), "{}", p.metadata().description);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = RngState::new(13);
        for p in all_instances() {
            let f = p.smooth();
            for _ in 0..20 {
                let x = random_vector(&mut rng, p.dimension());
                let d = random_vector(&mut rng, p.dimension());
                if let Some(k) = f.kink_distance(&x) {
                    if k < 1e-3 {
                        continue;
                    }
                }
                let h = 1e-7;
                let fd = (f.gradient(&(&x + &d * h)) - f.gradient(&(&x - &d * h))) / (2.0 * h);
                let hd = f.hessian_action(&x, &d).unwrap();
                assert!((&hd - &fd).norm() <= 1e-5 * hd.norm().max(1.0), "{}", p.metadata().description);
            }
        }
    }

    #[test]
    fn gradients_are_lipschitz() {
        let mut rng = RngState::new(14);
        for p in all_instances() {
            let f = p.smooth();
            for _ in 0..100 {
                let u = random_vector(&mut rng, p.dimension());
                let v = random_vector(&mut rng, p.dimension());
                let lhs = (f.gradient(&u) - f.gradient(&v)).norm();
                assert!(lhs <= (1.0 + 1e-9) * f.lipschitz() * (&u - &v).norm());
            }
        }
    }

    #[test]
    fn objective_is_non_negative() {
        let mut rng = RngState::new(15);
        for p in all_instances() {
            for _ in 0..20 {
                let x = random_vector(&mut rng, p.dimension());
                assert!(p.objective(&x).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn archive_round_trip() {
        for p in all_instances() {
            let json = serde_json::to_string(&p.to_archive().unwrap()).unwrap();
            let back: ProblemArchive = serde_json::from_str(&json).unwrap();
            let q = CompositeProblem::from_archive(&back).unwrap();
            assert_eq!(q.metadata(), p.metadata());
            assert_eq!(q.ground_truth(), p.ground_truth());
            let x = DenseVector::from_element(p.dimension(), 0.3);
            assert_eq!(q.objective(&x).unwrap(), p.objective(&x).unwrap());
        }
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        let ls = LeastSquares::new(DenseMatrix::identity(2, 2), DenseVector::zeros(2)).unwrap();
        let err = CompositeProblem::new(Box::new(ls), Box::new(ZeroPenalty::new(3)), "bad");
        assert!(matches!(err, Err(ProblemError::Dimension { smooth: 2, penalty: 3 })));
    }

    #[test]
    fn instance_spec_defaults_from_json() {
        let spec: InstanceSpec = serde_json::from_str(r#"{"kind": "sparse_regression", "seed": 4}"#).unwrap();
        assert_eq!(
            spec,
            InstanceSpec::SparseRegression {
                seed: 4,
                m: 48,
                n: 128,
                k: 8,
                noise_std: 0.01,
                mu: 1.0
            }
        );
        assert!(serde_json::from_str::<InstanceSpec>(r#"{"kind": "svm", "seed": 4}"#).is_err());
    }
}
