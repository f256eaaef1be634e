//! Command-line front end for the row-sparse reduced-rank estimators: fit
//! models on CSV matrices, estimate coefficient ranks, evaluate the joint
//! selection penalty, and run the Monte-Carlo comparison studies.
//!
//! Exit codes: 0 success, 2 user error (flags, files, data), 3 numerical
//! failure.

mod io;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use io::{CliError, Standardization};
use nalgebra::DMatrix;
use report::{
    FitArtifact, Format, PenaltyArtifact, RankArtifact, RankSection, ScoreRow, SimulateArtifact,
    SCHEMA_VERSION,
};
use rowrank::linalg::ThinSvd;
use rowrank::pipelines::{self, TuningRule};
use rowrank::simulation::{SimulationScenario, StudyMethod, StudyTuning};
use rowrank::{jrrs, rank_selection, rcgl};
use rowrank::{FitConfig, FitReport, MethodTag, PenaltySpec, RegressionData};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exhaustive joint selection enumerates all 2^p supports; refuse beyond this.
const JRRS_P_CAP: usize = 16;

#[derive(Parser)]
#[command(name = "rowrank", version, about = "Row-sparse reduced-rank multivariate regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a coefficient matrix on training CSVs.
    Fit(FitArgs),
    /// Monte-Carlo comparison of the estimators on a preset scenario.
    Simulate(SimulateArgs),
    /// Estimate the coefficient rank from the data.
    Rank(RankArgs),
    /// Evaluate the joint rank-and-support penalty for given sizes.
    PenaltyScore(PenaltyScoreArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Exhaustive joint rank-and-row selection (small p only).
    Jrrs1,
    /// Rank-constrained group lasso at fixed --k and --lambda.
    Rcgl,
    /// Group lasso (rank constraint slack); lambda fixed or tuned.
    Glasso,
    /// Rank selection, then the reduced-rank refit at that rank.
    Rsc,
    /// Rank selection, then tuned rank-constrained group lasso.
    Method1,
    /// Grid sweep scored by the selection penalty after refitting.
    Method2,
    /// Tuned group lasso for the support, then rank-selected refit on it.
    Method3,
}

impl Method {
    fn flag_name(self) -> &'static str {
        match self {
            Method::Jrrs1 => "jrrs1",
            Method::Rcgl => "rcgl",
            Method::Glasso => "glasso",
            Method::Rsc => "rsc",
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::Method3 => "method3",
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Design matrix CSV (rows = observations).
    #[arg(long, value_name = "FILE")]
    x: PathBuf,
    /// Response matrix CSV (same row count as --x).
    #[arg(long, value_name = "FILE")]
    y: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Rank bound (required by rcgl; restricts the method2 search grid).
    #[arg(long)]
    k: Option<usize>,
    /// Fixed penalty level (rcgl requires it; glasso skips tuning with it).
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated penalty grid override for the grid-search methods.
    #[arg(long, value_name = "L1,L2,...")]
    lambda_grid: Option<String>,
    /// Penalty constant for jrrs1/method2 (default 3); tuning constant in
    /// the penalty-level formula for the other tuned methods (default 1).
    #[arg(long)]
    c: Option<f64>,
    /// Noise variance; estimated from full-model residuals when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Tune the penalty level by k-fold cross-validation.
    #[arg(long)]
    folds: Option<usize>,
    /// Held-out design CSV for validation tuning (with --validation-y).
    #[arg(long, value_name = "FILE", requires = "validation_y")]
    validation_x: Option<PathBuf>,
    /// Held-out response CSV for validation tuning (with --validation-x).
    #[arg(long, value_name = "FILE", requires = "validation_x")]
    validation_y: Option<PathBuf>,
    /// Report file (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Keep X and Y on their raw scales.
    #[arg(long)]
    no_standardize: bool,
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for cross-validation fold shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// More predictors than observations (m=30, p=100, n=10, r=2).
    #[value(name = "p-gt-m")]
    PGtM,
    /// More observations than predictors (m=100, p=25, n=25, r=5).
    #[value(name = "m-gt-p")]
    MGtP,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    /// Signal strength multiplier (default 0.5 for p-gt-m, 0.4 for m-gt-p).
    #[arg(long)]
    b: Option<f64>,
    /// Replicates (default 50).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "all" or a comma list of glasso,rsc,method1,method2,method3.
    #[arg(long, default_value = "all")]
    methods: String,
    /// Tune by k-fold cross-validation instead of the held-out set.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, value_name = "FILE")]
    x: PathBuf,
    #[arg(long, value_name = "FILE")]
    y: PathBuf,
    /// Noise variance; estimated from full-model residuals when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Keep X and Y on their raw scales.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args)]
struct PenaltyScoreArgs {
    /// Rank of the candidate.
    #[arg(long)]
    r: usize,
    /// Support size of the candidate.
    #[arg(long)]
    j: usize,
    /// Number of response columns.
    #[arg(long)]
    n: usize,
    /// Number of predictors.
    #[arg(long)]
    p: usize,
    /// Penalty constant (default: the practice value 3).
    #[arg(long, default_value_t = 3.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Rank(args) => cmd_rank(args),
        Command::PenaltyScore(args) => cmd_penalty_score(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::User("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::User(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn validate_sigma2(sigma2: Option<f64>) -> Result<Option<f64>, CliError> {
    match sigma2 {
        Some(v) if v.is_finite() && v > 0.0 => Ok(Some(v)),
        Some(v) => Err(CliError::User(format!(
            "--sigma2 must be positive and finite, got {v}"
        ))),
        None => Ok(None),
    }
}

fn parse_lambda_grid(raw: &str) -> Result<Vec<f64>, CliError> {
    let mut grid = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: f64 = part
            .parse()
            .map_err(|_| CliError::User(format!("--lambda-grid: '{part}' is not a number")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::User(format!(
                "--lambda-grid: penalty levels must be finite and >= 0, got {v}"
            )));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(CliError::User("--lambda-grid: no values given".into()));
    }
    Ok(grid)
}

struct Loaded {
    data: RegressionData,
    standardization: Standardization,
    x_names: Option<Vec<String>>,
}

fn load_training(
    x_path: &PathBuf,
    y_path: &PathBuf,
    standardize: bool,
) -> Result<Loaded, CliError> {
    let x_loaded = io::read_matrix(x_path)?;
    let y_loaded = io::read_matrix(y_path)?;
    let mut x = x_loaded.data;
    let mut y = y_loaded.data;
    if x.nrows() != y.nrows() {
        return Err(CliError::User(format!(
            "{} has {} data rows but {} has {}",
            x_path.display(),
            x.nrows(),
            y_path.display(),
            y.nrows()
        )));
    }
    let standardization = if standardize {
        io::standardize(&mut x, &mut y)?
    } else {
        Standardization::identity(x.ncols(), y.ncols())
    };
    let config = FitConfig::default();
    let data = RegressionData::new(x, y, config.rank_tol)?;
    Ok(Loaded {
        data,
        standardization,
        x_names: x_loaded.names,
    })
}

/// Holdout tuning data must live on the training scale, so the training
/// standardization is applied to it verbatim.
fn load_validation(
    args: &FitArgs,
    loaded: &Loaded,
) -> Result<Option<RegressionData>, CliError> {
    let (xp, yp) = match (&args.validation_x, &args.validation_y) {
        (Some(xp), Some(yp)) => (xp, yp),
        _ => return Ok(None),
    };
    let mut xv = io::read_matrix(xp)?.data;
    let mut yv = io::read_matrix(yp)?.data;
    if xv.nrows() != yv.nrows() {
        return Err(CliError::User(format!(
            "{} has {} data rows but {} has {}",
            xp.display(),
            xv.nrows(),
            yp.display(),
            yv.nrows()
        )));
    }
    if xv.ncols() != loaded.data.p() || yv.ncols() != loaded.data.n() {
        return Err(CliError::User(format!(
            "validation shapes {}x{} / {}x{} do not match training p = {}, n = {}",
            xv.nrows(),
            xv.ncols(),
            yv.nrows(),
            yv.ncols(),
            loaded.data.p(),
            loaded.data.n()
        )));
    }
    loaded.standardization.apply(&mut xv, &mut yv);
    Ok(Some(RegressionData::new(xv, yv, loaded.data.rank_tol())?))
}

/// Reject flags the chosen method would silently ignore.
fn validate_fit_flags(args: &FitArgs) -> Result<(), CliError> {
    let m = args.method;
    if args.lambda.is_some() && !matches!(m, Method::Rcgl | Method::Glasso) {
        return Err(CliError::User(
            "only rcgl and glasso accept a fixed --lambda".into(),
        ));
    }
    if args.k.is_some() && !matches!(m, Method::Rcgl | Method::Method2) {
        return Err(CliError::User(
            "--k applies to rcgl (required) and method2 (restricts the rank grid)".into(),
        ));
    }
    let grid_search = matches!(m, Method::Method1 | Method::Method2 | Method::Method3)
        || (m == Method::Glasso && args.lambda.is_none());
    if args.lambda_grid.is_some() && !grid_search {
        return Err(CliError::User(format!(
            "--lambda-grid does not apply to {}; it configures the grid-search methods",
            m.flag_name()
        )));
    }
    let tuned = matches!(m, Method::Method1 | Method::Method3)
        || (m == Method::Glasso && args.lambda.is_none());
    if !tuned && (args.folds.is_some() || args.validation_x.is_some()) {
        return Err(CliError::User(format!(
            "--folds and --validation-x/--validation-y only apply to the tuned methods \
             (glasso without --lambda, method1, method3), not {}",
            m.flag_name()
        )));
    }
    if args.folds.is_some() && args.validation_x.is_some() {
        return Err(CliError::User(
            "--folds and --validation-x/--validation-y are mutually exclusive".into(),
        ));
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    validate_fit_flags(&args)?;
    init_threads(args.threads)?;
    let sigma2_flag = validate_sigma2(args.sigma2)?;
    let loaded = load_training(&args.x, &args.y, !args.no_standardize)?;
    let data = &loaded.data;

    let mut config = FitConfig::default();
    config.seed = args.seed;
    if let Some(raw) = &args.lambda_grid {
        config.lambda_grid = Some(parse_lambda_grid(raw)?);
    }
    if args.method == Method::Method2 {
        if let Some(k) = args.k {
            config.k_grid = Some(vec![k]);
        }
    }

    let rule = match (load_validation(&args, &loaded)?, args.folds) {
        (Some(holdout), _) => TuningRule::ValidationSet { data: holdout },
        (None, Some(folds)) => TuningRule::KFold { folds },
        (None, None) => TuningRule::Formula {
            c_tune: args.c.unwrap_or(1.0),
        },
    };

    // sigma (noise standard deviation) for the threshold- and formula-based
    // stages; the grid methods tuned by holdout or CV never consult it.
    let need_sigma = matches!(
        args.method,
        Method::Rsc | Method::Method1 | Method::Method3
    ) || (args.method == Method::Glasso
        && args.lambda.is_none()
        && matches!(rule, TuningRule::Formula { .. }));
    let sigma = if need_sigma {
        Some(pipelines::resolve_sigma(data, sigma2_flag.map(f64::sqrt))?)
    } else {
        None
    };

    let mut rank_section = None;
    let mut scores = None;
    let mut sigma2_used = sigma.map(|s| s * s);
    let fit: FitReport = match args.method {
        Method::Rcgl => {
            let k = args
                .k
                .ok_or_else(|| CliError::User("--method rcgl requires --k".into()))?;
            let lambda = args
                .lambda
                .ok_or_else(|| CliError::User("--method rcgl requires --lambda".into()))?;
            rcgl::fit_rcgl(data, k, lambda, &config)?
        }
        Method::Glasso => {
            if let Some(lambda) = args.lambda {
                let k_full = data.q().min(data.n()).max(1);
                let mut report = rcgl::fit_rcgl(data, k_full, lambda, &config)?;
                report.estimate = report.estimate.with_tag(MethodTag::Glasso);
                report
            } else {
                pipelines::fit_glasso_tuned(data, &config, &rule, sigma.unwrap_or(1.0))?
            }
        }
        Method::Rsc => {
            let sigma = sigma.expect("resolved for rsc");
            let selection = rank_selection::rsc_rank(data, sigma, &config)?;
            rank_section = Some(RankSection {
                r_hat: selection.r_hat,
                threshold: selection.threshold,
                multiplier: selection.multiplier,
                sigma2: selection.sigma_used * selection.sigma_used,
                sigma2_estimated: sigma2_flag.is_none(),
                singular_values: selection.singular_values.clone(),
            });
            scores = Some(score_table(data, selection.r_hat)?);
            pipelines::fit_rsc(data, &config, sigma)?
        }
        Method::Jrrs1 => {
            let sigma2 = match sigma2_flag {
                Some(v) => v,
                None => rank_selection::estimate_sigma2(data)?,
            };
            sigma2_used = Some(sigma2);
            let spec = PenaltySpec::new(args.c.unwrap_or(3.0), sigma2)?;
            jrrs::fit_jrrs_exhaustive(data, &spec, JRRS_P_CAP)?
        }
        Method::Method1 => {
            pipelines::fit_method1(data, &config, &rule, sigma.expect("resolved"))?
        }
        Method::Method2 => {
            let sigma2 = match sigma2_flag {
                Some(v) => v,
                None => rank_selection::estimate_sigma2(data)?,
            };
            sigma2_used = Some(sigma2);
            let spec = PenaltySpec::new(args.c.unwrap_or(3.0), sigma2)?;
            pipelines::fit_method2(data, &config, &spec)?
        }
        Method::Method3 => {
            pipelines::fit_method3(data, &config, &rule, sigma.expect("resolved"))?
        }
    };

    let b = fit.estimate.b();
    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        method: args.method.flag_name().to_string(),
        m: data.m(),
        p: data.p(),
        n: data.n(),
        standardized: loaded.standardization.enabled,
        x_mean: loaded.standardization.x_mean.clone(),
        x_scale: loaded.standardization.x_scale.clone(),
        y_mean: loaded.standardization.y_mean.clone(),
        x_names: loaded.x_names.clone(),
        rank: fit.estimate.rank(),
        support: fit.estimate.support_one_based(),
        support_size: fit.estimate.support_size(),
        k: fit.k_used,
        lambda: fit.lambda_used,
        sigma2: sigma2_used,
        selection_score: fit.selection_score,
        rss: report::rss_of(data.x(), data.y(), b),
        converged: fit.converged,
        objective_trace: fit.objective_trace.clone(),
        warning: fit.warning.clone(),
        b_hat: matrix_rows(b),
        rank_selection: rank_section,
        scores,
    };
    match args.format {
        Format::Json => report::write_json(&artifact, args.out.as_ref()),
        Format::Csv => artifact.to_long_rows().write(args.out.as_ref()),
    }
}

/// Table-4-style construction table: row i holds the i-th eigenvalue of
/// Y'X(X'X)^- X'Y = (d_i(PY))^2 and the weight vector building score i from
/// the predictors; the scores X w_i are mutually orthogonal.
fn score_table(data: &RegressionData, r_hat: usize) -> Result<Vec<ScoreRow>, CliError> {
    if r_hat == 0 {
        return Ok(Vec::new());
    }
    let svd = ThinSvd::new(data.py())?;
    let v = svd.vt.rows(0, r_hat).transpose();
    let weights = data.pinv_mul(&(data.y() * &v));
    Ok((0..r_hat)
        .map(|i| ScoreRow {
            score: i + 1,
            eigenvalue: svd.d[i] * svd.d[i],
            weights: weights.column(i).iter().copied().collect(),
        })
        .collect())
}

fn matrix_rows(b: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..b.nrows())
        .map(|i| b.row(i).iter().copied().collect())
        .collect()
}

fn parse_methods(raw: &str) -> Result<Vec<StudyMethod>, CliError> {
    let trimmed = raw.trim();
    if trimmed.eq_ignore_ascii_case("all") {
        return Ok(StudyMethod::ALL.to_vec());
    }
    let mut methods = Vec::new();
    for part in trimmed.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let method = match part.to_ascii_lowercase().as_str() {
            "glasso" => StudyMethod::Glasso,
            "rsc" => StudyMethod::Rsc,
            "method1" => StudyMethod::Method1,
            "method2" => StudyMethod::Method2,
            "method3" => StudyMethod::Method3,
            _ => {
                return Err(CliError::User(format!(
                    "--methods: unknown method '{part}' \
                     (expected all or a comma list of glasso,rsc,method1,method2,method3)"
                )))
            }
        };
        if methods.contains(&method) {
            return Err(CliError::User(format!("--methods: '{part}' listed twice")));
        }
        methods.push(method);
    }
    if methods.is_empty() {
        return Err(CliError::User("--methods: no methods given".into()));
    }
    Ok(methods)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    init_threads(args.threads)?;
    let (preset_name, mut scenario) = match args.preset {
        Preset::PGtM => ("p-gt-m", SimulationScenario::p_gt_m(args.b.unwrap_or(0.5))),
        Preset::MGtP => ("m-gt-p", SimulationScenario::m_gt_p(args.b.unwrap_or(0.4))),
    };
    if let Some(reps) = args.reps {
        scenario.reps = reps;
    }
    scenario.seed = args.seed;
    let methods = parse_methods(&args.methods)?;
    let tuning = match args.folds {
        Some(folds) => StudyTuning::KFold { folds },
        None => StudyTuning::Validation,
    };
    let tuning_name = match &tuning {
        StudyTuning::Validation => "validation".to_string(),
        StudyTuning::KFold { folds } => format!("{folds}-fold"),
        StudyTuning::Formula { c_tune } => format!("formula(c={c_tune})"),
    };
    let mut config = FitConfig::default();
    config.seed = args.seed;
    let study = rowrank::simulation::run_study(&scenario, &methods, &config, tuning)?;
    let artifact = SimulateArtifact {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        preset: preset_name.to_string(),
        methods,
        tuning: tuning_name,
        study,
    };
    match args.format {
        Format::Json => report::write_json(&artifact, args.out.as_ref()),
        Format::Csv => report::write_simulate_csv(&artifact, args.out.as_ref()),
    }
}

fn cmd_rank(args: RankArgs) -> Result<(), CliError> {
    let sigma2_flag = validate_sigma2(args.sigma2)?;
    let loaded = load_training(&args.x, &args.y, !args.no_standardize)?;
    let data = &loaded.data;
    let config = FitConfig::default();
    let sigma = pipelines::resolve_sigma(data, sigma2_flag.map(f64::sqrt))?;
    let selection = rank_selection::rsc_rank(data, sigma, &config)?;
    let artifact = RankArtifact {
        schema_version: SCHEMA_VERSION,
        command: "rank",
        m: data.m(),
        p: data.p(),
        n: data.n(),
        q: data.q(),
        standardized: loaded.standardization.enabled,
        selection: RankSection {
            r_hat: selection.r_hat,
            threshold: selection.threshold,
            multiplier: selection.multiplier,
            sigma2: selection.sigma_used * selection.sigma_used,
            sigma2_estimated: sigma2_flag.is_none(),
            singular_values: selection.singular_values,
        },
    };
    match args.format {
        Format::Json => report::write_json(&artifact, args.out.as_ref()),
        Format::Csv => artifact.to_long_rows().write(args.out.as_ref()),
    }
}

fn cmd_penalty_score(args: PenaltyScoreArgs) -> Result<(), CliError> {
    let spec = PenaltySpec::new(args.c, args.sigma2)?;
    let score = jrrs::jrrs_penalty(args.r, args.j, args.n, args.p, &spec)?;
    let artifact = PenaltyArtifact {
        schema_version: SCHEMA_VERSION,
        command: "penalty-score",
        r: args.r,
        j: args.j,
        n: args.n,
        p: args.p,
        c: args.c,
        sigma2: args.sigma2,
        score,
    };
    match args.format {
        Format::Json => report::write_json(&artifact, args.out.as_ref()),
        Format::Csv => artifact.to_long_rows().write(args.out.as_ref()),
    }
}
