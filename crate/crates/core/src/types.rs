//! Core data types for the multivariate regression model Y = XA + E with an
//! m x n response Y, m x p design X, and a coefficient matrix A that is both
//! row-sparse (few nonzero rows, the selected predictors J(A)) and low-rank.
//!
//! `RegressionData` owns the observed pair (X, Y) plus lazily computed
//! decompositions shared by every solver: the thin SVD of X, its numerical
//! rank q, the projector P onto col(X), and the Gram/cross-product matrices.
//! All types are immutable after construction and safe to share across
//! threads.

use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use nalgebra::DMatrix;
use serde::Serialize;
use std::sync::OnceLock;

/// Which estimator produced a `CoefficientEstimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MethodTag {
    #[serde(rename = "JRRS1")]
    Jrrs1,
    #[serde(rename = "RCGL")]
    Rcgl,
    #[serde(rename = "GLASSO")]
    Glasso,
    #[serde(rename = "RSC")]
    Rsc,
    Method1,
    Method2,
    Method3,
    #[serde(rename = "OLS_restricted")]
    OlsRestricted,
    /// Simulation ground truth (not an estimator output).
    Truth,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodTag::Jrrs1 => "JRRS1",
            MethodTag::Rcgl => "RCGL",
            MethodTag::Glasso => "GLASSO",
            MethodTag::Rsc => "RSC",
            MethodTag::Method1 => "Method1",
            MethodTag::Method2 => "Method2",
            MethodTag::Method3 => "Method3",
            MethodTag::OlsRestricted => "OLS_restricted",
            MethodTag::Truth => "Truth",
        };
        f.write_str(s)
    }
}

/// Count of singular values of `m` above `rank_tol * d_1(m)`; 0 for the zero
/// matrix. The relative threshold makes the rank decision scale-free.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> Result<usize> {
    if !linalg::all_finite(m) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0);
    }
    Ok(ThinSvd::new(m)?.rank(rank_tol))
}

/// Zero-based indices of rows with Euclidean norm strictly above
/// `support_tol`. User-facing reports convert to 1-based.
pub fn row_support(m: &DMatrix<f64>, support_tol: f64) -> Result<Vec<usize>> {
    if !linalg::all_finite(m) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(linalg::row_norms(m)
        .iter()
        .enumerate()
        .filter(|(_, &nrm)| nrm > support_tol)
        .map(|(i, _)| i)
        .collect())
}

/// Observed data plus cached decompositions of the design.
#[derive(Debug, Clone)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    rank_tol: f64,
    x_svd: OnceLock<ThinSvd>,
    x_opnorm: OnceLock<f64>,
    gram: OnceLock<DMatrix<f64>>,
    xty: OnceLock<DMatrix<f64>>,
    projector: OnceLock<DMatrix<f64>>,
    py: OnceLock<DMatrix<f64>>,
    py_sv: OnceLock<Vec<f64>>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "need m,p,n >= 1; got X {}x{}, Y {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::InvalidInput(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if !linalg::all_finite(&x) || !linalg::all_finite(&y) {
            return Err(Error::InvalidInput("non-finite entries in X or Y".into()));
        }
        if !(rank_tol > 0.0 && rank_tol.is_finite()) {
            return Err(Error::InvalidInput("rank_tol must be positive".into()));
        }
        Ok(RegressionData {
            x,
            y,
            rank_tol,
            x_svd: OnceLock::new(),
            x_opnorm: OnceLock::new(),
            gram: OnceLock::new(),
            xty: OnceLock::new(),
            projector: OnceLock::new(),
            py: OnceLock::new(),
            py_sv: OnceLock::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn n(&self) -> usize {
        self.y.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Thin SVD of X (computed once on first use).
    pub fn x_svd(&self) -> &ThinSvd {
        self.x_svd
            .get_or_init(|| ThinSvd::new(&self.x).expect("SVD of finite X"))
    }

    /// Numerical rank q of X.
    pub fn q(&self) -> usize {
        self.x_svd().rank(self.rank_tol)
    }

    /// Operator norm d_1(X).
    pub fn x_opnorm(&self) -> f64 {
        *self
            .x_opnorm
            .get_or_init(|| self.x_svd().d.first().copied().unwrap_or(0.0))
    }

    /// Gram matrix X'X.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| self.x.transpose() * &self.x)
    }

    /// Cross-product X'Y.
    pub fn xty(&self) -> &DMatrix<f64> {
        self.xty.get_or_init(|| self.x.transpose() * &self.y)
    }

    /// The m x m orthogonal projector P onto col(X). Formed explicitly only
    /// on demand; prefer [`RegressionData::py`] which avoids the m x m
    /// product.
    pub fn projector(&self) -> &DMatrix<f64> {
        self.projector.get_or_init(|| {
            let q = self.q();
            if q == 0 {
                return DMatrix::zeros(self.m(), self.m());
            }
            let uq = self.x_svd().u.columns(0, q);
            &uq * uq.transpose()
        })
    }

    /// PY, the projection of Y onto col(X), via the thin factor U_q.
    pub fn py(&self) -> &DMatrix<f64> {
        self.py.get_or_init(|| {
            let q = self.q();
            if q == 0 {
                return DMatrix::zeros(self.m(), self.n());
            }
            let uq = self.x_svd().u.columns(0, q);
            &uq * (uq.transpose() * &self.y)
        })
    }

    /// Singular values of PY, descending.
    pub fn py_singular_values(&self) -> &[f64] {
        self.py_sv.get_or_init(|| {
            if self.py().iter().all(|&v| v == 0.0) {
                return vec![0.0; self.m().min(self.n())];
            }
            ThinSvd::new(self.py()).expect("SVD of finite PY").d.clone()
        })
    }

    /// Minimum-norm least-squares solve pinv(X) * rhs with the data's
    /// rank_tol cutoff.
    pub fn pinv_mul(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.x_svd().pinv_mul(rhs, self.rank_tol)
    }

    /// Data restricted to the given zero-based design columns (same Y).
    pub fn restrict_columns(&self, cols: &[usize]) -> Result<RegressionData> {
        if cols.is_empty() {
            return Err(Error::InvalidInput("empty column restriction".into()));
        }
        for &c in cols {
            if c >= self.p() {
                return Err(Error::InvalidInput(format!(
                    "column {} out of range (p = {})",
                    c,
                    self.p()
                )));
            }
        }
        let xj = self.x.select_columns(cols.iter());
        RegressionData::new(xj, self.y.clone(), self.rank_tol)
    }
}

/// A fitted (or true) coefficient matrix together with its derived row
/// support and numerical rank, and the tolerances those were computed under.
#[derive(Debug, Clone)]
pub struct CoefficientEstimate {
    b: DMatrix<f64>,
    rank: usize,
    support: Vec<usize>,
    method_tag: MethodTag,
    support_tol: f64,
    rank_tol: f64,
}

impl CoefficientEstimate {
    pub fn from_matrix(
        b: DMatrix<f64>,
        method_tag: MethodTag,
        support_tol: f64,
        rank_tol: f64,
    ) -> Result<Self> {
        let rank = numerical_rank(&b, rank_tol)?;
        let support = row_support(&b, support_tol)?;
        Ok(CoefficientEstimate {
            b,
            rank,
            support,
            method_tag,
            support_tol,
            rank_tol,
        })
    }

    pub fn zero(p: usize, n: usize, method_tag: MethodTag, support_tol: f64, rank_tol: f64) -> Self {
        CoefficientEstimate {
            b: DMatrix::zeros(p, n),
            rank: 0,
            support: Vec::new(),
            method_tag,
            support_tol,
            rank_tol,
        }
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    /// Zero-based support indices, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }
    pub fn support_size(&self) -> usize {
        self.support.len()
    }
    /// One-based support for user-facing reports.
    pub fn support_one_based(&self) -> Vec<usize> {
        self.support.iter().map(|i| i + 1).collect()
    }
    pub fn method_tag(&self) -> MethodTag {
        self.method_tag
    }
    pub fn support_tol(&self) -> f64 {
        self.support_tol
    }
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Same estimate relabeled with a different producing method.
    pub fn with_tag(mut self, tag: MethodTag) -> Self {
        self.method_tag = tag;
        self
    }
}

/// Penalty constant c and noise variance sigma^2 entering the joint
/// rank-and-row-selection penalty. Construction is explicit about c: the
/// theoretical analysis uses c = 12, the simulations use c = 3; there is no
/// silent default between them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PenaltySpec {
    pub c: f64,
    pub sigma2: f64,
}

impl PenaltySpec {
    pub fn new(c: f64, sigma2: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty constant c must be positive, got {c}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(PenaltySpec { c, sigma2 })
    }

    /// c = 12: the constant under which the oracle risk bound is proved.
    pub fn theory_mode(sigma2: f64) -> Result<Self> {
        PenaltySpec::new(12.0, sigma2)
    }

    /// c = 3: the constant used in the simulation studies.
    pub fn practice_mode(sigma2: f64) -> Result<Self> {
        PenaltySpec::new(3.0, sigma2)
    }
}

/// Inner S-update flavor: exact convex solve, or a capped number of
/// proximal-thresholding steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerVariant {
    ExactGlasso,
    Thresholding,
}

/// Step constant K for the thresholding operator; must exceed ||X||_2^2 / 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KStep {
    /// ||X||_2^2 plus a small safety margin.
    Auto,
    Fixed(f64),
}

/// Initialization of the orthonormal factor V.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VInit {
    /// First k right singular vectors of Y (default).
    ResponseSvd,
    /// First k coordinate columns of the n x n identity.
    CoordinateColumns,
}

/// Solver configuration shared across fits.
#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    /// None: 30 log-spaced values from lambda_max down to 1e-3 * lambda_max.
    pub lambda_grid: Option<Vec<f64>>,
    /// None: 1..=min(q, n).
    pub k_grid: Option<Vec<usize>>,
    /// Outer stopping: |F_{ j+1} - F_j| < eps_outer * (1 + F_0).
    pub eps_outer: f64,
    pub max_outer_iter: usize,
    pub inner_variant: InnerVariant,
    /// Thresholding steps per outer iteration for the inexact variant.
    pub m_iter: usize,
    pub k_step: KStep,
    pub support_tol: f64,
    pub rank_tol: f64,
    /// Constant C in the closed-form lambda rule.
    pub c_tune: f64,
    /// Multiplier in the rank-selection threshold; sqrt(2) matches
    /// sigma*(sqrt(2n) + sqrt(2q)).
    pub rsc_multiplier: f64,
    /// Replace q by q*log(m) in the rank-selection threshold (small-(n+q)
    /// correction).
    pub rsc_small_sample_correction: bool,
    pub v_init: VInit,
    /// Seed for fold shuffling in cross-validation.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_grid: None,
            k_grid: None,
            eps_outer: 1e-6,
            max_outer_iter: 500,
            inner_variant: InnerVariant::ExactGlasso,
            m_iter: 10,
            k_step: KStep::Auto,
            support_tol: 1e-8,
            rank_tol: 1e-8,
            c_tune: 1.0,
            rsc_multiplier: std::f64::consts::SQRT_2,
            rsc_small_sample_correction: false,
            v_init: VInit::ResponseSvd,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, data: &RegressionData) -> Result<()> {
        if !(self.eps_outer > 0.0 && self.eps_outer.is_finite()) {
            return Err(Error::InvalidConfig("eps_outer must be positive".into()));
        }
        if self.max_outer_iter == 0 {
            return Err(Error::InvalidConfig("max_outer_iter must be >= 1".into()));
        }
        if self.m_iter == 0 {
            return Err(Error::InvalidConfig("M_iter must be >= 1".into()));
        }
        if !(self.support_tol > 0.0 && self.rank_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.c_tune > 0.0) {
            return Err(Error::InvalidConfig("C_tune must be positive".into()));
        }
        if !(self.rsc_multiplier > 0.0) {
            return Err(Error::InvalidConfig("rsc_multiplier must be positive".into()));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::InvalidConfig("lambda grid entries must be finite and >= 0".into()));
            }
        }
        let kmax = data.m().min(data.p()).min(data.n());
        if let Some(grid) = &self.k_grid {
            for &k in grid {
                if k < 1 || k > kmax {
                    return Err(Error::InvalidConfig(format!(
                        "k = {k} outside 1..={kmax} for {}x{} data with n = {}",
                        data.m(),
                        data.p(),
                        data.n()
                    )));
                }
            }
        }
        if let KStep::Fixed(k) = self.k_step {
            let bound = data.x_opnorm().powi(2) / 2.0;
            if !(k > bound) {
                return Err(Error::InvalidConfig(format!(
                    "K_step = {k} must exceed ||X||_2^2 / 2 = {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of a fit: the estimate, per-iteration objective values, and the
/// winning hyperparameters where applicable.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub estimate: CoefficientEstimate,
    /// F value per outer iteration, starting at the initial point.
    pub objective_trace: Vec<f64>,
    /// Equals objective_trace.len() - 1.
    pub iterations: usize,
    pub converged: bool,
    pub lambda_used: Option<f64>,
    pub k_used: Option<usize>,
    /// Joint rank-and-row selection criterion value, when selection happened.
    pub selection_score: Option<f64>,
    pub warning: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn numerical_rank_identity() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), 1e-8).unwrap(), 3);
    }

    #[test]
    fn numerical_rank_zero() {
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 2), 1e-8).unwrap(), 0);
    }

    #[test]
    fn numerical_rank_tiny_singular_value() {
        let m = mat(2, 2, &[5.0, 0.0, 0.0, 1e-12]);
        assert_eq!(numerical_rank(&m, 1e-8).unwrap(), 1);
    }

    #[test]
    fn numerical_rank_rejects_non_finite() {
        let m = mat(1, 2, &[f64::NAN, 1.0]);
        assert!(matches!(numerical_rank(&m, 1e-8), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn numerical_rank_orthogonal_invariance() {
        use crate::linalg::polar_factor;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let m = DMatrix::from_fn(5, 4, |_, _| rng.gen::<f64>() - 0.5);
            let r0 = numerical_rank(&m, 1e-8).unwrap();
            // Random orthogonal factors via polar decomposition.
            let ql = polar_factor(&DMatrix::from_fn(5, 5, |_, _| rng.gen::<f64>() - 0.5)).unwrap();
            let qr = polar_factor(&DMatrix::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.5)).unwrap();
            assert_eq!(numerical_rank(&(&ql * &m), 1e-8).unwrap(), r0);
            assert_eq!(numerical_rank(&(&m * &qr), 1e-8).unwrap(), r0);
            // Row/column permutation invariance.
            let perm = m.select_rows([4usize, 2, 0, 1, 3].iter());
            assert_eq!(numerical_rank(&perm, 1e-8).unwrap(), r0);
        }
    }

    #[test]
    fn row_support_examples() {
        assert!(row_support(&DMatrix::zeros(3, 2), 1e-8).unwrap().is_empty());
        let m = mat(3, 2, &[1., 0., 0., 0., 0., 2.]);
        assert_eq!(row_support(&m, 1e-8).unwrap(), vec![0, 2]);
        let m = mat(2, 2, &[1e-9, 0., 3., 4.]);
        assert_eq!(row_support(&m, 1e-8).unwrap(), vec![1]);
    }

    #[test]
    fn regression_data_validation_and_caches() {
        let x = mat(3, 2, &[1., 0., 0., 1., 0., 0.]);
        let y = mat(3, 1, &[1., 2., 3.]);
        let d = RegressionData::new(x.clone(), y.clone(), 1e-8).unwrap();
        assert_eq!((d.m(), d.p(), d.n()), (3, 2, 1));
        assert_eq!(d.q(), 2);
        // Projector symmetric, idempotent, PX = X.
        let p = d.projector().clone();
        assert!((&p - p.transpose()).norm() < 1e-10 * p.norm().max(1.0));
        assert!((&p * &p - &p).norm() <= 1e-10 * p.norm().max(1.0));
        assert!((&p * &x - &x).norm() < 1e-10);
        // PY from the thin factor agrees with the explicit projector.
        assert!((d.py() - &p * &y).norm() < 1e-12);

        assert!(RegressionData::new(mat(2, 1, &[1., 2.]), mat(3, 1, &[1., 2., 3.]), 1e-8).is_err());
        assert!(RegressionData::new(mat(1, 1, &[f64::INFINITY]), mat(1, 1, &[0.]), 1e-8).is_err());
    }

    #[test]
    fn estimate_rederivation_consistency() {
        let b = mat(3, 2, &[1., 2., 0., 0., 3., 4.]);
        let e = CoefficientEstimate::from_matrix(b.clone(), MethodTag::Rcgl, 1e-8, 1e-8).unwrap();
        assert_eq!(e.support(), &[0, 2]);
        assert_eq!(e.rank(), numerical_rank(&b, 1e-8).unwrap());
        assert_eq!(e.support_one_based(), vec![1, 3]);
        assert!(e.rank() <= e.support_size().min(2));
        // Zero estimate invariants: rank 0 iff B = 0.
        let z = CoefficientEstimate::zero(3, 2, MethodTag::Rcgl, 1e-8, 1e-8);
        assert_eq!(z.rank(), 0);
        assert!(z.support().is_empty());
    }

    #[test]
    fn penalty_spec_modes() {
        assert_eq!(PenaltySpec::theory_mode(1.0).unwrap().c, 12.0);
        assert_eq!(PenaltySpec::practice_mode(2.0).unwrap().c, 3.0);
        assert!(PenaltySpec::new(0.0, 1.0).is_err());
        assert!(PenaltySpec::new(3.0, 0.0).is_err());
    }

    #[test]
    fn fit_config_validation() {
        let x = mat(4, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 1., 1.]);
        let y = mat(4, 2, &[1., 0., 0., 1., 0., 0., 1., 1.]);
        let d = RegressionData::new(x, y, 1e-8).unwrap();
        let mut c = FitConfig::default();
        assert!(c.validate(&d).is_ok());
        c.k_grid = Some(vec![3]); // > min(m,p,n) = 2
        assert!(matches!(c.validate(&d), Err(Error::InvalidConfig(_))));
        c.k_grid = Some(vec![2]);
        assert!(c.validate(&d).is_ok());
        c.k_step = KStep::Fixed(0.1); // below ||X||^2/2
        assert!(c.validate(&d).is_err());
    }

    #[test]
    fn restrict_columns_subsets_design() {
        let x = mat(3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 10.]);
        let y = mat(3, 1, &[1., 1., 1.]);
        let d = RegressionData::new(x, y, 1e-8).unwrap();
        let r = d.restrict_columns(&[0, 2]).unwrap();
        assert_eq!(r.p(), 2);
        assert_eq!(r.x()[(1, 1)], 6.0);
        assert!(d.restrict_columns(&[]).is_err());
        assert!(d.restrict_columns(&[3]).is_err());
    }
}
