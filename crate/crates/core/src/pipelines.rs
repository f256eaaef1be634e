//! Composed estimators that chain the building blocks: rank-select then fit,
//! fit a path then pick by penalty, or select rows then re-estimate the rank.
//! Also the shared tuning machinery (closed-form lambda, validation scoring,
//! k-fold cross-validation) and a positive-definiteness diagnostic.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::glasso;
use crate::jrrs;
use crate::rank_selection;
use crate::rcgl;
use crate::types::{
    CoefficientEstimate, FitConfig, FitReport, MethodTag, PenaltySpec, RegressionData,
};

/// How a penalty level is chosen when a pipeline needs one.
#[derive(Debug, Clone)]
pub enum TuningRule {
    /// Closed-form level C * sigma * sqrt(l1(Sigma) * k * m * log(e p)),
    /// with Sigma = X'X/m and l1 its largest eigenvalue.
    Formula { c_tune: f64 },
    /// Minimize mean squared prediction error on a held-out set.
    ValidationSet { data: RegressionData },
    /// K-fold cross-validation on the training rows (fold shuffle seeded
    /// from FitConfig::seed).
    KFold { folds: usize },
}

/// Closed-form penalty level for a rank-k fit. Scales as sqrt(k), linearly
/// in sigma and C.
pub fn lambda_formula(data: &RegressionData, k: usize, sigma: f64, c: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma must be positive and finite, got {sigma}")));
    }
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidInput(format!("C must be positive and finite, got {c}")));
    }
    let m = data.m() as f64;
    let p = data.p() as f64;
    let d1 = data.x_svd().d.first().copied().unwrap_or(0.0);
    let lambda1 = d1 * d1 / m;
    Ok(c * sigma * (lambda1 * k as f64 * m * (std::f64::consts::E * p).ln()).sqrt())
}

/// 30 log-spaced levels descending from the smallest level that zeroes every
/// row, spanning three decades. Degenerates to a single zero when X'Y = 0.
pub fn default_lambda_grid(data: &RegressionData) -> Vec<f64> {
    let lmax = glasso::lambda_max(data.x(), data.y());
    if !lmax.is_finite() || lmax <= 0.0 {
        return vec![0.0];
    }
    let count = 30usize;
    (0..count)
        .map(|i| lmax * 10f64.powf(-3.0 * i as f64 / (count - 1) as f64))
        .collect()
}

fn effective_lambda_grid(data: &RegressionData, config: &FitConfig) -> Vec<f64> {
    match &config.lambda_grid {
        Some(grid) if !grid.is_empty() => grid.clone(),
        _ => default_lambda_grid(data),
    }
}

fn effective_k_grid(data: &RegressionData, config: &FitConfig) -> Vec<usize> {
    match &config.k_grid {
        Some(grid) if !grid.is_empty() => grid.clone(),
        _ => (1..=data.q().min(data.n()).max(1)).collect(),
    }
}

/// Mean squared prediction error of B on held-out data, per entry of Y.
fn holdout_mse(holdout: &RegressionData, b: &DMatrix<f64>) -> f64 {
    let resid = holdout.y() - holdout.x() * b;
    resid.norm_squared() / (holdout.m() as f64 * holdout.n() as f64)
}

fn check_validation(train: &RegressionData, holdout: &RegressionData) -> Result<()> {
    if holdout.p() != train.p() || holdout.n() != train.n() {
        return Err(Error::InvalidInput(format!(
            "validation data is {}x{} -> {} responses but training is p={}, n={}",
            holdout.m(),
            holdout.p(),
            holdout.n(),
            train.p(),
            train.n()
        )));
    }
    Ok(())
}

fn merge_warnings(a: Option<String>, b: Option<String>) -> Option<String> {
    match (a, b) {
        (None, None) => None,
        (Some(x), None) | (None, Some(x)) => Some(x),
        (Some(x), Some(y)) => Some(format!("{x}; {y}")),
    }
}

fn zero_report(
    data: &RegressionData,
    tag: MethodTag,
    config: &FitConfig,
    warning: &str,
) -> FitReport {
    FitReport {
        estimate: CoefficientEstimate::zero(
            data.p(),
            data.n(),
            tag,
            config.support_tol,
            config.rank_tol,
        ),
        objective_trace: Vec::new(),
        iterations: 0,
        converged: true,
        lambda_used: None,
        k_used: Some(0),
        selection_score: None,
        warning: Some(warning.to_string()),
    }
}

/// Winning cell of a validation-scored path sweep.
struct ValidationWinner {
    report: FitReport,
    corrected: CoefficientEstimate,
    raw_support: Vec<usize>,
    score: f64,
    k: usize,
    lambda: f64,
    failures: usize,
}

/// Score every successful path cell by held-out error of its bias-corrected
/// refit; ties prefer smaller k, then larger lambda. Failed cells are counted
/// but skipped.
fn pick_by_validation(
    cells: Vec<rcgl::PathCell>,
    holdout: &RegressionData,
    data: &RegressionData,
) -> Result<ValidationWinner> {
    let mut best: Option<ValidationWinner> = None;
    let mut failures = 0usize;
    for cell in cells {
        let report = match cell.outcome {
            Ok(report) => report,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let corrected = bias_correct(&report.estimate, data)?;
        let mut score = holdout_mse(holdout, corrected.b());
        if !score.is_finite() {
            score = f64::INFINITY;
        }
        let replace = match &best {
            None => true,
            Some(cur) => match score.partial_cmp(&cur.score) {
                Some(Ordering::Less) => true,
                Some(Ordering::Greater) | None => false,
                Some(Ordering::Equal) => {
                    cell.k < cur.k || (cell.k == cur.k && cell.lambda > cur.lambda)
                }
            },
        };
        if replace {
            let raw_support = report.estimate.support().to_vec();
            best = Some(ValidationWinner {
                report,
                corrected,
                raw_support,
                score,
                k: cell.k,
                lambda: cell.lambda,
                failures: 0,
            });
        }
    }
    let mut winner = best.ok_or_else(|| {
        Error::NumericalFailure("every path cell failed during tuning".into())
    })?;
    winner.failures = failures;
    Ok(winner)
}

fn failure_warning(failures: usize) -> Option<String> {
    (failures > 0).then(|| format!("{failures} path cell(s) failed during tuning"))
}

/// Rank selection first, then the rank-constrained group-lasso fit at the
/// selected rank with the penalty level picked by `tuning`. Validation and
/// CV tuning score bias-corrected refits and return the corrected winner;
/// formula tuning returns the raw penalized fit. A selected rank of zero
/// yields the zero estimate.
pub fn fit_method1(
    data: &RegressionData,
    config: &FitConfig,
    tuning: &TuningRule,
    sigma: f64,
) -> Result<FitReport> {
    config.validate(data)?;
    let selection = rank_selection::rsc_rank(data, sigma, config)?;
    let r_hat = selection.r_hat;
    if r_hat == 0 {
        return Ok(zero_report(
            data,
            MethodTag::Method1,
            config,
            "rank selection chose 0; returning the zero estimate",
        ));
    }
    match tuning {
        TuningRule::Formula { c_tune } => {
            let lambda = lambda_formula(data, r_hat, sigma, *c_tune)?;
            let mut report = rcgl::fit_rcgl(data, r_hat, lambda, config)?;
            report.estimate = report.estimate.with_tag(MethodTag::Method1);
            Ok(report)
        }
        TuningRule::ValidationSet { data: holdout } => {
            check_validation(data, holdout)?;
            let grid = effective_lambda_grid(data, config);
            let cells = rcgl::rcgl_path(data, &[r_hat], &grid, config)?;
            let winner = pick_by_validation(cells, holdout, data)?;
            Ok(FitReport {
                estimate: winner.corrected.with_tag(MethodTag::Method1),
                objective_trace: winner.report.objective_trace,
                iterations: winner.report.iterations,
                converged: winner.report.converged,
                lambda_used: Some(winner.lambda),
                k_used: Some(winner.k),
                selection_score: Some(winner.score),
                warning: merge_warnings(
                    winner.report.warning,
                    failure_warning(winner.failures),
                ),
            })
        }
        TuningRule::KFold { folds } => {
            let grid = effective_lambda_grid(data, config);
            let points: Vec<GridPoint> =
                grid.iter().map(|&lambda| GridPoint { k: r_hat, lambda }).collect();
            let fitter = |train: &RegressionData, gp: GridPoint| {
                let report = rcgl::fit_rcgl(train, gp.k, gp.lambda, config)?;
                bias_correct(&report.estimate, train)
            };
            let cv = cross_validate(data, fitter, &points, *folds, config.seed)?;
            let report = rcgl::fit_rcgl(data, r_hat, cv.best.lambda, config)?;
            let corrected = bias_correct(&report.estimate, data)?;
            Ok(FitReport {
                estimate: corrected.with_tag(MethodTag::Method1),
                objective_trace: report.objective_trace,
                iterations: report.iterations,
                converged: report.converged,
                lambda_used: Some(cv.best.lambda),
                k_used: Some(r_hat),
                selection_score: Some(cv.errors[cv.best_index]),
                warning: report.warning,
            })
        }
    }
}

/// Sweep the (k, lambda) path, bias-correct every successful cell, and pick
/// the candidate minimizing rss plus the joint rank-and-support penalty. No
/// held-out data is consumed.
pub fn fit_method2(
    data: &RegressionData,
    config: &FitConfig,
    spec: &PenaltySpec,
) -> Result<FitReport> {
    config.validate(data)?;
    let k_grid = effective_k_grid(data, config);
    let lambda_grid = effective_lambda_grid(data, config);
    let cells = rcgl::rcgl_path(data, &k_grid, &lambda_grid, config)?;
    let mut kept: Vec<(usize, f64, FitReport, CoefficientEstimate)> = Vec::new();
    let mut failures = 0usize;
    for cell in cells {
        match cell.outcome {
            Ok(report) => {
                let corrected = bias_correct(&report.estimate, data)?;
                kept.push((cell.k, cell.lambda, report, corrected));
            }
            Err(_) => failures += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::NumericalFailure("every path cell failed".into()));
    }
    let candidates: Vec<CoefficientEstimate> =
        kept.iter().map(|(_, _, _, corrected)| corrected.clone()).collect();
    let selection = jrrs::select_from_candidates(&candidates, data, spec)?;
    let (k, lambda, report, corrected) = kept.swap_remove(selection.winner_index);
    let score = selection.scores[selection.winner_index].total;
    Ok(FitReport {
        estimate: corrected.with_tag(MethodTag::Method2),
        objective_trace: report.objective_trace,
        iterations: report.iterations,
        converged: report.converged,
        lambda_used: Some(lambda),
        k_used: Some(k),
        selection_score: Some(score),
        warning: merge_warnings(report.warning, failure_warning(failures)),
    })
}

/// Tuned group-lasso stage at the largest feasible rank bound (where the
/// rank constraint no longer binds): the raw winning fit, its support, and
/// the bias-corrected winner when the tuning mode scores corrected refits.
struct TunedGlasso {
    report: FitReport,
    raw_support: Vec<usize>,
    corrected: Option<CoefficientEstimate>,
}

fn tuned_glasso_stage(
    data: &RegressionData,
    config: &FitConfig,
    tuning: &TuningRule,
    sigma: f64,
) -> Result<TunedGlasso> {
    let k_full = data.q().min(data.n()).max(1);
    match tuning {
        TuningRule::Formula { c_tune } => {
            let lambda = lambda_formula(data, k_full, sigma, *c_tune)?;
            let report = rcgl::fit_rcgl(data, k_full, lambda, config)?;
            let raw_support = report.estimate.support().to_vec();
            Ok(TunedGlasso { report, raw_support, corrected: None })
        }
        TuningRule::ValidationSet { data: holdout } => {
            check_validation(data, holdout)?;
            let grid = effective_lambda_grid(data, config);
            let cells = rcgl::rcgl_path(data, &[k_full], &grid, config)?;
            let winner = pick_by_validation(cells, holdout, data)?;
            let mut report = winner.report;
            report.lambda_used = Some(winner.lambda);
            report.selection_score = Some(winner.score);
            report.warning =
                merge_warnings(report.warning, failure_warning(winner.failures));
            Ok(TunedGlasso {
                report,
                raw_support: winner.raw_support,
                corrected: Some(winner.corrected),
            })
        }
        TuningRule::KFold { folds } => {
            let grid = effective_lambda_grid(data, config);
            let points: Vec<GridPoint> =
                grid.iter().map(|&lambda| GridPoint { k: k_full, lambda }).collect();
            let fitter = |train: &RegressionData, gp: GridPoint| {
                let report = rcgl::fit_rcgl(train, gp.k, gp.lambda, config)?;
                bias_correct(&report.estimate, train)
            };
            let cv = cross_validate(data, fitter, &points, *folds, config.seed)?;
            let mut report = rcgl::fit_rcgl(data, k_full, cv.best.lambda, config)?;
            report.selection_score = Some(cv.errors[cv.best_index]);
            let raw_support = report.estimate.support().to_vec();
            let corrected = bias_correct(&report.estimate, data)?;
            Ok(TunedGlasso { report, raw_support, corrected: Some(corrected) })
        }
    }
}

/// Group lasso with the rank constraint slack, penalty level picked by
/// `tuning`. Validation and CV tuning score bias-corrected refits and
/// return the corrected winner; formula tuning returns the raw fit.
pub fn fit_glasso_tuned(
    data: &RegressionData,
    config: &FitConfig,
    tuning: &TuningRule,
    sigma: f64,
) -> Result<FitReport> {
    config.validate(data)?;
    let stage = tuned_glasso_stage(data, config, tuning, sigma)?;
    let mut report = stage.report;
    if let Some(corrected) = stage.corrected {
        report.estimate = corrected;
    }
    report.estimate = report.estimate.with_tag(MethodTag::Glasso);
    Ok(report)
}

/// Rank selection followed by the reduced-rank refit at the selected rank on
/// all predictors. A selected rank of zero yields the zero estimate.
pub fn fit_rsc(data: &RegressionData, config: &FitConfig, sigma: f64) -> Result<FitReport> {
    config.validate(data)?;
    let selection = rank_selection::rsc_rank(data, sigma, config)?;
    if selection.r_hat == 0 {
        return Ok(zero_report(
            data,
            MethodTag::Rsc,
            config,
            "rank selection chose 0; returning the zero estimate",
        ));
    }
    let estimate = rank_selection::rrr_fit(data, selection.r_hat, None)?;
    Ok(FitReport {
        estimate: estimate.with_tag(MethodTag::Rsc),
        objective_trace: Vec::new(),
        iterations: 0,
        converged: true,
        lambda_used: None,
        k_used: Some(selection.r_hat),
        selection_score: None,
        warning: None,
    })
}

/// Row selection by the unconstrained-rank group lasso, then rank selection
/// restricted to the chosen rows, then the restricted reduced-rank refit.
/// The support is always read off the raw first-stage winner. An empty
/// first-stage support yields the zero estimate with a warning.
pub fn fit_method3(
    data: &RegressionData,
    config: &FitConfig,
    tuning: &TuningRule,
    sigma: f64,
) -> Result<FitReport> {
    config.validate(data)?;
    let stage = tuned_glasso_stage(data, config, tuning, sigma)?;
    let j_hat = stage.raw_support;
    let stage = stage.report;
    if j_hat.is_empty() {
        return Ok(zero_report(
            data,
            MethodTag::Method3,
            config,
            "first-stage support is empty; returning the zero estimate",
        ));
    }
    let restricted = data.restrict_columns(&j_hat)?;
    let selection = rank_selection::rsc_rank(&restricted, sigma, config)?;
    if selection.r_hat == 0 {
        let mut report = zero_report(
            data,
            MethodTag::Method3,
            config,
            "restricted rank selection chose 0; returning the zero estimate",
        );
        report.lambda_used = stage.lambda_used;
        return Ok(report);
    }
    let estimate = rank_selection::rrr_fit(data, selection.r_hat, Some(&j_hat))?;
    Ok(FitReport {
        estimate: estimate.with_tag(MethodTag::Method3),
        objective_trace: stage.objective_trace,
        iterations: stage.iterations,
        converged: stage.converged,
        lambda_used: stage.lambda_used,
        k_used: Some(selection.r_hat),
        selection_score: stage.selection_score,
        warning: stage.warning,
    })
}

/// Least squares restricted to the support and rank the input estimate
/// selected. Rank zero or an empty support maps to the zero estimate.
pub fn bias_correct(
    estimate: &CoefficientEstimate,
    data: &RegressionData,
) -> Result<CoefficientEstimate> {
    if estimate.b().nrows() != data.p() || estimate.b().ncols() != data.n() {
        return Err(Error::InvalidInput(format!(
            "estimate is {}x{} but data expects {}x{}",
            estimate.b().nrows(),
            estimate.b().ncols(),
            data.p(),
            data.n()
        )));
    }
    let r = estimate.rank();
    if r == 0 || estimate.support().is_empty() {
        return Ok(CoefficientEstimate::zero(
            data.p(),
            data.n(),
            MethodTag::OlsRestricted,
            estimate.support_tol(),
            estimate.rank_tol(),
        ));
    }
    rank_selection::rrr_fit(data, r, Some(estimate.support()))
}

/// One tuning-grid cell: rank bound and penalty level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub k: usize,
    pub lambda: f64,
}

/// Cross-validation outcome: winning grid point and the per-point mean
/// held-out errors, aligned with the input grid.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub best: GridPoint,
    pub best_index: usize,
    pub errors: Vec<f64>,
}

/// K-fold cross-validation over a parameter grid. Rows are shuffled once
/// with the given seed and split into contiguous near-equal folds; the CV
/// error of a grid point is the mean over folds of the held-out per-entry
/// squared error. A fit failure makes that point's error infinite. Ties
/// prefer smaller k, then larger lambda. folds = m is leave-one-out.
pub fn cross_validate<F>(
    data: &RegressionData,
    fitter: F,
    grid: &[GridPoint],
    folds: usize,
    seed: u64,
) -> Result<CvReport>
where
    F: Fn(&RegressionData, GridPoint) -> Result<CoefficientEstimate>,
{
    let m = data.m();
    if folds < 2 || folds > m {
        return Err(Error::InvalidConfig(format!(
            "folds must lie in [2, {m}], got {folds}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("tuning grid is empty".into()));
    }
    let mut rows: Vec<usize> = (0..m).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take_rows = |keep: &[usize], mat: &DMatrix<f64>| {
        DMatrix::from_fn(keep.len(), mat.ncols(), |i, j| mat[(keep[i], j)])
    };

    let base = m / folds;
    let extra = m % folds;
    let mut errors = vec![0.0f64; grid.len()];
    let mut start = 0usize;
    for fold in 0..folds {
        let len = base + usize::from(fold < extra);
        let mut test_rows = rows[start..start + len].to_vec();
        start += len;
        test_rows.sort_unstable();
        let mut in_test = vec![false; m];
        for &row in &test_rows {
            in_test[row] = true;
        }
        let train_rows: Vec<usize> = (0..m).filter(|&row| !in_test[row]).collect();
        let train = RegressionData::new(
            take_rows(&train_rows, data.x()),
            take_rows(&train_rows, data.y()),
            data.rank_tol(),
        )?;
        let x_test = take_rows(&test_rows, data.x());
        let y_test = take_rows(&test_rows, data.y());
        for (slot, &point) in errors.iter_mut().zip(grid.iter()) {
            let err = match fitter(&train, point) {
                Ok(est) => {
                    let resid = &y_test - &x_test * est.b();
                    let value = resid.norm_squared() / (len as f64 * data.n() as f64);
                    if value.is_finite() {
                        value
                    } else {
                        f64::INFINITY
                    }
                }
                Err(_) => f64::INFINITY,
            };
            *slot += err;
        }
    }
    for err in errors.iter_mut() {
        *err /= folds as f64;
    }
    let mut best_index = 0usize;
    for i in 1..grid.len() {
        let better = match errors[i].partial_cmp(&errors[best_index]) {
            Some(Ordering::Less) => true,
            Some(Ordering::Greater) | None => false,
            Some(Ordering::Equal) => {
                grid[i].k < grid[best_index].k
                    || (grid[i].k == grid[best_index].k
                        && grid[i].lambda > grid[best_index].lambda)
            }
        };
        if better {
            best_index = i;
        }
    }
    if !errors[best_index].is_finite() {
        return Err(Error::NumericalFailure(
            "every grid point failed cross-validation".into(),
        ));
    }
    Ok(CvReport { best: grid[best_index], best_index, errors })
}

/// True iff X'X/m minus delta on the given diagonal positions (a set; an
/// index listed twice counts once) is positive definite. Indices zero-based.
pub fn check_assumption_a_sufficient(
    data: &RegressionData,
    j: &[usize],
    delta: f64,
) -> Result<bool> {
    if j.is_empty() {
        return Err(Error::InvalidInput("index set is empty".into()));
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "delta must be positive and finite, got {delta}"
        )));
    }
    let p = data.p();
    let mut mask = vec![false; p];
    for &idx in j {
        if idx >= p {
            return Err(Error::InvalidInput(format!(
                "index {idx} out of range for p = {p}"
            )));
        }
        mask[idx] = true;
    }
    let mut shifted = data.gram() / (data.m() as f64);
    for (i, &on) in mask.iter().enumerate() {
        if on {
            shifted[(i, i)] -= delta;
        }
    }
    let eigen = shifted.symmetric_eigen();
    let min_eig = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(min_eig > 0.0)
}

/// Noise standard deviation: the caller's value when supplied, otherwise the
/// square root of the full-model residual variance estimate.
pub fn resolve_sigma(data: &RegressionData, sigma: Option<f64>) -> Result<f64> {
    match sigma {
        Some(s) if s.is_finite() && s > 0.0 => Ok(s),
        Some(s) => Err(Error::InvalidInput(format!(
            "sigma must be positive and finite, got {s}"
        ))),
        None => {
            let s2 = rank_selection::estimate_sigma2(data)?;
            if s2 <= 0.0 {
                return Err(Error::SigmaNotEstimable(
                    "residual variance estimate is zero".into(),
                ));
            }
            Ok(s2.sqrt())
        }
    }
}
