//! Rank selection by thresholding singular values of the projected response
//! PY against a noise-calibrated level, plus the reduced-rank regression
//! closed form used both as the rank-k refit primitive and as an oracle.

use crate::error::{Error, Result};
use crate::linalg::ThinSvd;
use crate::types::{CoefficientEstimate, FitConfig, MethodTag, RegressionData};
use nalgebra::DMatrix;

/// Outcome of the singular-value-count rank selector.
#[derive(Debug, Clone)]
pub struct RankSelection {
    /// Number of singular values of PY strictly above `threshold`.
    pub r_hat: usize,
    pub threshold: f64,
    /// All singular values of PY, descending (including zeros).
    pub singular_values: Vec<f64>,
    pub sigma_used: f64,
    pub multiplier: f64,
}

/// Estimate the rank as #{ i : d_i(PY) > multiplier * sigma * (sqrt(n) +
/// sqrt(q)) }. The default multiplier sqrt(2) matches the threshold
/// sigma * (sqrt(2n) + sqrt(2q)). With the small-sample correction enabled,
/// q is replaced by q * log(m) inside the square root.
pub fn rsc_rank(data: &RegressionData, sigma: f64, config: &FitConfig) -> Result<RankSelection> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    if !(config.rsc_multiplier > 0.0 && config.rsc_multiplier.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rsc_multiplier must be positive, got {}",
            config.rsc_multiplier
        )));
    }
    let n = data.n() as f64;
    let q = data.q() as f64;
    let q_eff = if config.rsc_small_sample_correction {
        q * (data.m() as f64).ln()
    } else {
        q
    };
    let threshold = config.rsc_multiplier * sigma * (n.sqrt() + q_eff.sqrt());
    let singular_values = data.py_singular_values().to_vec();
    let r_hat = singular_values.iter().filter(|&&d| d > threshold).count();
    Ok(RankSelection {
        r_hat,
        threshold,
        singular_values,
        sigma_used: sigma,
        multiplier: config.rsc_multiplier,
    })
}

/// Rank-k reduced-rank regression, optionally restricted to a subset of
/// design columns (zero-based): B = pinv(X_J) Y V_k V_k' with V_k the top-k
/// right singular vectors of P_J Y, embedded as zero rows off J. The fitted
/// values X B equal the best rank-k Frobenius approximation of P_J Y.
/// k above min(rank(X_J), n) is clamped to that bound.
pub fn rrr_fit(
    data: &RegressionData,
    k: usize,
    restrict_to: Option<&[usize]>,
) -> Result<CoefficientEstimate> {
    if k == 0 {
        return Err(Error::InvalidConfig("rank k must be >= 1".into()));
    }
    let support_tol = FitConfig::default().support_tol;
    let rank_tol = data.rank_tol();
    match restrict_to {
        None => {
            let b = rrr_core(data, k)?;
            CoefficientEstimate::from_matrix(b, MethodTag::OlsRestricted, support_tol, rank_tol)
        }
        Some(cols) => {
            let restricted = data.restrict_columns(cols)?;
            let b_sub = rrr_core(&restricted, k)?;
            let mut b = DMatrix::zeros(data.p(), data.n());
            for (sub_row, &col) in cols.iter().enumerate() {
                b.row_mut(col).copy_from(&b_sub.row(sub_row));
            }
            CoefficientEstimate::from_matrix(b, MethodTag::OlsRestricted, support_tol, rank_tol)
        }
    }
}

/// Rank-k RRR coefficient matrix on `data` as given (no embedding).
pub(crate) fn rrr_core(data: &RegressionData, k: usize) -> Result<DMatrix<f64>> {
    let k_eff = k.min(data.q()).min(data.n());
    if k_eff == 0 {
        // Zero-rank design: the only attainable fit is 0.
        return Ok(DMatrix::zeros(data.p(), data.n()));
    }
    let svd = ThinSvd::new(data.py())?;
    let vk = svd.vt.rows(0, k_eff).transpose();
    Ok(data.pinv_mul(data.y()) * &vk * vk.transpose())
}

/// Residual noise variance ||Y - PY||_F^2 / ((m - q) n). Requires strictly
/// more rows than the rank of X; a zero return (response entirely in the
/// span of X) is left to the caller to reject where a positive sigma is
/// needed.
pub fn estimate_sigma2(data: &RegressionData) -> Result<f64> {
    let m = data.m();
    let q = data.q();
    if m <= q {
        return Err(Error::SigmaNotEstimable(format!(
            "need m > rank(X) to estimate the noise level; got m = {m}, rank = {q}"
        )));
    }
    let resid = data.y() - data.py();
    Ok(resid.norm_squared() / ((m - q) as f64 * data.n() as f64))
}
