//! Synthetic studies: autoregressive Gaussian designs carrying a planted
//! row-sparse low-rank coefficient block, replicate execution for the five
//! estimators, and the aggregate metric tables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ThinSvd;
use crate::pipelines::{self, TuningRule};
use crate::types::{
    CoefficientEstimate, FitConfig, MethodTag, PenaltySpec, RegressionData,
};

/// One synthetic setup: design rows are mean-zero Gaussian with covariance
/// Sigma_jk = rho^|j-k|, the coefficient matrix carries a rank-r Gaussian
/// factor block of magnitude b on j_size rows (the first rows unless
/// permuted), and noise entries are N(0, sigma2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub j_size: usize,
    pub r: usize,
    pub rho: f64,
    pub b: f64,
    pub sigma2: f64,
    pub reps: usize,
    pub seed: u64,
    /// Held-out rows used for penalty tuning.
    pub validation_rows: usize,
    /// Independent rows used only for the error metric.
    pub test_rows: usize,
    /// Scatter the signal rows uniformly instead of using the first j_size.
    pub permute_support: bool,
}

impl SimulationScenario {
    /// More predictors than samples: m=30, |J|=15, p=100, n=10, r=2, rho=0.1.
    pub fn p_gt_m(b: f64) -> Self {
        SimulationScenario {
            m: 30,
            p: 100,
            n: 10,
            j_size: 15,
            r: 2,
            rho: 0.1,
            b,
            sigma2: 1.0,
            reps: 50,
            seed: 0,
            validation_rows: 10_000,
            test_rows: 10_000,
            permute_support: false,
        }
    }

    /// More samples than predictors: m=100, |J|=15, p=25, n=25, r=5, rho=0.1.
    pub fn m_gt_p(b: f64) -> Self {
        SimulationScenario {
            m: 100,
            p: 25,
            n: 25,
            j_size: 15,
            r: 5,
            rho: 0.1,
            b,
            sigma2: 1.0,
            reps: 50,
            seed: 0,
            validation_rows: 10_000,
            test_rows: 10_000,
            permute_support: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.p == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("m, p, n must all be >= 1".into()));
        }
        if self.j_size > self.p {
            return Err(Error::InvalidConfig(format!(
                "j_size = {} exceeds p = {}",
                self.j_size, self.p
            )));
        }
        if self.r > self.j_size.min(self.n) {
            return Err(Error::InvalidConfig(format!(
                "r = {} exceeds min(j_size, n) = {}",
                self.r,
                self.j_size.min(self.n)
            )));
        }
        if !self.rho.is_finite() || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !self.b.is_finite() || self.b < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "b must be finite and >= 0, got {}",
                self.b
            )));
        }
        if !self.sigma2.is_finite() || self.sigma2 <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigma2 must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.validation_rows == 0 || self.test_rows == 0 {
            return Err(Error::InvalidConfig(
                "validation_rows and test_rows must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Independent random streams per replicate. Every draw is a pure function
/// of (scenario seed, replicate, stream), so adding or skipping one stream
/// never shifts another.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Design = 0,
    Coefficients = 1,
    Noise = 2,
    #[allow(dead_code)]
    Folds = 3,
    Validation = 4,
    Test = 5,
    Permutation = 6,
}

fn stream_rng(seed: u64, replicate: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 * 16 + stream as u64);
    rng
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Lower Cholesky factor of the AR covariance Sigma_jk = rho^|j-k|.
fn ar_cholesky(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NumericalFailure("design covariance is not positive definite".into()))
}

/// Rows i.i.d. MVN(0, L L').
fn draw_design(rows: usize, chol_l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    randn(rows, chol_l.nrows(), rng) * chol_l.transpose()
}

/// The planted coefficient matrix and the rows carrying it (sorted).
fn truth_matrix(scenario: &SimulationScenario, replicate: usize) -> (DMatrix<f64>, Vec<usize>) {
    let (p, n, j, r) = (scenario.p, scenario.n, scenario.j_size, scenario.r);
    let rows: Vec<usize> = if scenario.permute_support {
        let mut rng = stream_rng(scenario.seed, replicate, Stream::Permutation);
        let mut picked = rand::seq::index::sample(&mut rng, p, j).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..j).collect()
    };
    let mut a = DMatrix::zeros(p, n);
    if j == 0 || r == 0 || scenario.b == 0.0 {
        return (a, rows);
    }
    let mut rng = stream_rng(scenario.seed, replicate, Stream::Coefficients);
    let b0 = randn(j, r, &mut rng);
    let b1 = randn(r, n, &mut rng);
    let block = scenario.b * b0 * b1;
    for (i, &row) in rows.iter().enumerate() {
        a.row_mut(row).copy_from(&block.row(i));
    }
    (a, rows)
}

/// Draw a design-plus-noise data set from a single stream: X first, then E,
/// with Y = X A + sqrt(sigma2) E.
fn draw_dataset(
    scenario: &SimulationScenario,
    rows: usize,
    chol_l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<RegressionData> {
    let x = draw_design(rows, chol_l, rng);
    let noise = randn(rows, scenario.n, rng);
    let y = &x * a + scenario.sigma2.sqrt() * noise;
    RegressionData::new(x, y, FitConfig::default().rank_tol)
}

fn draw_train(
    scenario: &SimulationScenario,
    replicate: usize,
    chol_l: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<RegressionData> {
    // Train keeps split design/noise streams so the same X can be reused
    // against a different noise draw in diagnostics.
    let x = draw_design(
        scenario.m,
        chol_l,
        &mut stream_rng(scenario.seed, replicate, Stream::Design),
    );
    let noise = randn(
        scenario.m,
        scenario.n,
        &mut stream_rng(scenario.seed, replicate, Stream::Noise),
    );
    let y = &x * a + scenario.sigma2.sqrt() * noise;
    RegressionData::new(x, y, FitConfig::default().rank_tol)
}

/// One replicate's data: train, the true coefficient estimate, a validation
/// set for tuning, and a test set for the error metric. Each piece is a pure
/// function of (seed, replicate, its stream).
pub fn generate_instance(
    scenario: &SimulationScenario,
    replicate: usize,
) -> Result<(RegressionData, CoefficientEstimate, RegressionData, RegressionData)> {
    scenario.validate()?;
    let chol_l = ar_cholesky(scenario.p, scenario.rho)?;
    let (a, _rows) = truth_matrix(scenario, replicate);
    let train = draw_train(scenario, replicate, &chol_l, &a)?;
    let defaults = FitConfig::default();
    let truth = CoefficientEstimate::from_matrix(
        a.clone(),
        MethodTag::Truth,
        defaults.support_tol,
        defaults.rank_tol,
    )?;
    let validation = draw_dataset(
        scenario,
        scenario.validation_rows,
        &chol_l,
        &a,
        &mut stream_rng(scenario.seed, replicate, Stream::Validation),
    )?;
    let test = draw_dataset(
        scenario,
        scenario.test_rows,
        &chol_l,
        &a,
        &mut stream_rng(scenario.seed, replicate, Stream::Test),
    )?;
    Ok((train, truth, validation, test))
}

/// Signal-strength diagnostics: whether the r-th singular value of XA
/// clears the detection threshold, and whether the signal magnitude stays
/// under the technical cap.
#[derive(Debug, Clone, Serialize)]
pub struct SignalDiagnostics {
    pub c1_satisfied: bool,
    pub c2_satisfied: bool,
    /// d_r(XA) - 2 sqrt(2) sigma (sqrt(n) + sqrt(q)).
    pub c1_margin: f64,
    /// (sqrt(2)-1)^2 (n+q)/4 - log ||XA||_F.
    pub c2_margin: f64,
    pub d_r: f64,
    pub xa_frobenius: f64,
}

pub fn check_signal_conditions(
    truth: &CoefficientEstimate,
    data: &RegressionData,
    sigma: f64,
) -> Result<SignalDiagnostics> {
    if truth.b().nrows() != data.p() || truth.b().ncols() != data.n() {
        return Err(Error::InvalidInput(format!(
            "truth is {}x{} but data expects {}x{}",
            truth.b().nrows(),
            truth.b().ncols(),
            data.p(),
            data.n()
        )));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let xa = data.x() * truth.b();
    let r = truth.rank();
    let d_r = if r == 0 {
        0.0
    } else {
        ThinSvd::new(&xa)?.d.get(r - 1).copied().unwrap_or(0.0)
    };
    let n = data.n() as f64;
    let q = data.q() as f64;
    let threshold = 2.0 * 2f64.sqrt() * sigma * (n.sqrt() + q.sqrt());
    let c1_margin = d_r - threshold;
    let xa_frobenius = xa.norm();
    let cap = (2f64.sqrt() - 1.0).powi(2) * (n + q) / 4.0;
    let c2_margin = cap - xa_frobenius.ln();
    Ok(SignalDiagnostics {
        c1_satisfied: r > 0 && c1_margin > 0.0,
        c2_satisfied: c2_margin >= 0.0,
        c1_margin,
        c2_margin,
        d_r,
        xa_frobenius,
    })
}

/// Estimators compared in a study run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyMethod {
    #[serde(rename = "GLASSO")]
    Glasso,
    #[serde(rename = "RSC")]
    Rsc,
    Method1,
    Method2,
    Method3,
}

impl std::fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            StudyMethod::Glasso => "GLASSO",
            StudyMethod::Rsc => "RSC",
            StudyMethod::Method1 => "Method1",
            StudyMethod::Method2 => "Method2",
            StudyMethod::Method3 => "Method3",
        };
        f.write_str(name)
    }
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 5] = [
        StudyMethod::Glasso,
        StudyMethod::Rsc,
        StudyMethod::Method1,
        StudyMethod::Method2,
        StudyMethod::Method3,
    ];
}

/// How study methods pick their penalty level (Method 2 always uses the
/// selection penalty instead).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StudyTuning {
    /// Score candidates on the generated validation set.
    Validation,
    /// Closed-form level with this constant.
    Formula { c_tune: f64 },
    /// K-fold cross-validation on the training rows.
    KFold { folds: usize },
}

/// Per-replicate outcome of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub mse: f64,
    pub support_size: usize,
    pub rank: usize,
    /// Signal rows the estimate missed.
    pub missed: usize,
    /// Null rows the estimate selected.
    pub false_alarms: usize,
}

/// One method's study outcome: per-replicate records, failures (replicate
/// index plus error text), and the aggregate row. Aggregates over zero
/// successful replicates are NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: StudyMethod,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<(usize, String)>,
    pub trimmed_mse: f64,
    pub median_support: f64,
    pub median_rank: f64,
    pub miss_rate_pct: f64,
    pub false_alarm_pct: f64,
}

/// Whole-study outcome: scenario echo plus one report per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub scenario: SimulationScenario,
    pub methods: Vec<RunReport>,
}

/// Sorted-array median; empty input gives NaN.
fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Mean after dropping floor(len * trim/2) values from each sorted tail.
pub fn trimmed_mean(values: &[f64], trim_fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&trim_fraction) || !trim_fraction.is_finite() {
        return Err(Error::InvalidInput(format!(
            "trim fraction must lie in [0, 1), got {trim_fraction}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot trim an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let drop = (sorted.len() as f64 * trim_fraction / 2.0).floor() as usize;
    let kept = &sorted[drop..sorted.len() - drop];
    if kept.is_empty() {
        return Err(Error::InvalidInput("trimming removed every value".into()));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Error metric of a fitted estimate against the truth on the test design:
/// the per-test-row squared prediction error of the coefficient difference,
/// rescaled by training rows over responses:
/// ||X_test (A - B)||_F^2 * m_train / (m_test * n).
fn replicate_metrics(
    replicate: usize,
    estimate: &CoefficientEstimate,
    truth: &CoefficientEstimate,
    truth_rows: &[usize],
    test: &RegressionData,
    train_rows: usize,
) -> ReplicateRecord {
    let delta = truth.b() - estimate.b();
    let projected = test.x() * delta;
    let mse = projected.norm_squared() * train_rows as f64
        / (test.m() as f64 * test.n() as f64);
    let p = truth.b().nrows();
    let mut is_signal = vec![false; p];
    for &row in truth_rows {
        is_signal[row] = true;
    }
    let mut selected = vec![false; p];
    for &row in estimate.support() {
        selected[row] = true;
    }
    let missed = (0..p).filter(|&i| is_signal[i] && !selected[i]).count();
    let false_alarms = (0..p).filter(|&i| !is_signal[i] && selected[i]).count();
    ReplicateRecord {
        replicate,
        mse,
        support_size: estimate.support_size(),
        rank: estimate.rank(),
        missed,
        false_alarms,
    }
}

fn aggregate(
    method: StudyMethod,
    mut outcomes: Vec<(usize, std::result::Result<ReplicateRecord, String>)>,
    j_size: usize,
    p: usize,
) -> RunReport {
    outcomes.sort_by_key(|(rep, _)| *rep);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(text) => failures.push((rep, text)),
        }
    }
    let mses: Vec<f64> = records.iter().map(|r| r.mse).collect();
    let trimmed_mse = trimmed_mean(&mses, 0.4).unwrap_or(f64::NAN);
    let mut supports: Vec<f64> = records.iter().map(|r| r.support_size as f64).collect();
    let mut ranks: Vec<f64> = records.iter().map(|r| r.rank as f64).collect();
    let null_rows = p - j_size;
    let rate = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let miss_rate_pct = mean(records.iter().map(|r| rate(r.missed, j_size)).collect());
    let false_alarm_pct =
        mean(records.iter().map(|r| rate(r.false_alarms, null_rows)).collect());
    RunReport {
        method,
        records,
        failures,
        trimmed_mse,
        median_support: median(&mut supports),
        median_rank: median(&mut ranks),
        miss_rate_pct,
        false_alarm_pct,
    }
}

fn fit_study_method(
    method: StudyMethod,
    train: &RegressionData,
    config: &FitConfig,
    rule: Option<&TuningRule>,
    sigma: f64,
    sigma2: f64,
) -> Result<CoefficientEstimate> {
    let need_rule = || {
        rule.ok_or_else(|| {
            Error::InvalidConfig("tuning rule unavailable for this method".into())
        })
    };
    let report = match method {
        StudyMethod::Glasso => pipelines::fit_glasso_tuned(train, config, need_rule()?, sigma)?,
        StudyMethod::Rsc => pipelines::fit_rsc(train, config, sigma)?,
        StudyMethod::Method1 => pipelines::fit_method1(train, config, need_rule()?, sigma)?,
        StudyMethod::Method2 => {
            let spec = PenaltySpec::practice_mode(sigma2)?;
            pipelines::fit_method2(train, config, &spec)?
        }
        StudyMethod::Method3 => pipelines::fit_method3(train, config, need_rule()?, sigma)?,
    };
    Ok(report.estimate)
}

fn method_needs_rule(method: StudyMethod) -> bool {
    matches!(
        method,
        StudyMethod::Glasso | StudyMethod::Method1 | StudyMethod::Method3
    )
}

/// Run every method on every replicate and aggregate. Replicates execute in
/// parallel; output is identical for any thread count. The validation set is
/// only generated when a validation-tuned method asks for it, and each
/// random stream is independent, so the records of one method never depend
/// on which other methods run alongside it.
pub fn run_study(
    scenario: &SimulationScenario,
    methods: &[StudyMethod],
    config: &FitConfig,
    tuning: StudyTuning,
) -> Result<StudyReport> {
    scenario.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let sigma = scenario.sigma2.sqrt();
    let needs_validation = matches!(tuning, StudyTuning::Validation)
        && methods.iter().copied().any(method_needs_rule);
    let chol_l = ar_cholesky(scenario.p, scenario.rho)?;

    type RepOutcome = Vec<std::result::Result<ReplicateRecord, String>>;
    let per_replicate: Vec<Result<RepOutcome>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome> {
            let (a, truth_rows) = truth_matrix(scenario, rep);
            let train = draw_train(scenario, rep, &chol_l, &a)?;
            let defaults = FitConfig::default();
            let truth = CoefficientEstimate::from_matrix(
                a.clone(),
                MethodTag::Truth,
                defaults.support_tol,
                defaults.rank_tol,
            )?;
            let test = draw_dataset(
                scenario,
                scenario.test_rows,
                &chol_l,
                &a,
                &mut stream_rng(scenario.seed, rep, Stream::Test),
            )?;
            let rule: Option<TuningRule> = match tuning {
                StudyTuning::Validation => {
                    if needs_validation {
                        let validation = draw_dataset(
                            scenario,
                            scenario.validation_rows,
                            &chol_l,
                            &a,
                            &mut stream_rng(scenario.seed, rep, Stream::Validation),
                        )?;
                        Some(TuningRule::ValidationSet { data: validation })
                    } else {
                        None
                    }
                }
                StudyTuning::Formula { c_tune } => Some(TuningRule::Formula { c_tune }),
                StudyTuning::KFold { folds } => Some(TuningRule::KFold { folds }),
            };
            let outcomes = methods
                .iter()
                .map(|&method| {
                    fit_study_method(method, &train, config, rule.as_ref(), sigma, scenario.sigma2)
                        .map(|estimate| {
                            replicate_metrics(
                                rep,
                                &estimate,
                                &truth,
                                &truth_rows,
                                &test,
                                scenario.m,
                            )
                        })
                        .map_err(|e| e.to_string())
                })
                .collect();
            Ok(outcomes)
        })
        .collect();

    let mut by_method: Vec<Vec<(usize, std::result::Result<ReplicateRecord, String>)>> =
        vec![Vec::new(); methods.len()];
    for (rep, outcome) in per_replicate.into_iter().enumerate() {
        let outcomes = outcome?;
        for (mi, record) in outcomes.into_iter().enumerate() {
            by_method[mi].push((rep, record));
        }
    }
    let reports = methods
        .iter()
        .zip(by_method)
        .map(|(&method, outcomes)| aggregate(method, outcomes, scenario.j_size, scenario.p))
        .collect();
    Ok(StudyReport { scenario: scenario.clone(), methods: reports })
}
