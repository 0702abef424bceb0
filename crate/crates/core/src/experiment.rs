//! Experiment orchestration: a JSON config describing a problem and an
//! evaluation grid (method × ν × β × α), its execution, and the resulting
//! report in JSON, CSV and Markdown.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::{sample_doe, Moments, Standardizer, SyntheticProblem, RNG_ID};
use crate::conformal::{build_intervals, IntervalSet, Method};
use crate::data_io::{load_csv, split_indices, CsvOptions};
use crate::error::{Error, Result};
use crate::gp::{check_alpha, credibility_from_moments, fit, FittedGp, MleSettings, Nugget};
use crate::kernels::{Nu, NuggetMode};
use crate::loo::{loo_from_fitted, LooEnsemble, LooMode};
use crate::metrics::{
    average_width, beta_soft_threshold, bootstrap_spearman, empirical_coverage, mse, predictivity_q2, select_best,
    spearman_width_error, EvalRecord, Selection,
};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProblemSource {
    /// Synthetic design; its `seed` field is replaced by one derived from the
    /// experiment seed.
    Synthetic(SyntheticProblem),
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        options: CsvOptions,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// Known distribution moments for synthetic problems, train-set moments
    /// for tabular data.
    #[default]
    Auto,
    Empirical,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "records.csv",
            ReportFormat::Md => "report.md",
        }
    }
}

fn default_train_fraction() -> f64 {
    0.75
}
fn default_nu_grid() -> Vec<Nu> {
    vec![Nu::HALF, Nu::THREE_HALVES, Nu::FIVE_HALVES]
}
fn default_beta_grid() -> Vec<f64> {
    vec![0.5, 1.0, 1.5]
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.1, 0.05, 0.01]
}
fn default_methods() -> Vec<Method> {
    Method::DEFAULT.to_vec()
}
fn default_delta() -> f64 {
    1e-6
}
fn default_n_boot() -> usize {
    999
}
fn default_upsilon() -> f64 {
    0.1
}
fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md]
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub problem: ProblemSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nugget: f64,
    #[serde(default)]
    pub nugget_mode: NuggetMode,
    #[serde(default)]
    pub input_scaling: InputScaling,
    #[serde(default = "default_nu_grid")]
    pub nu_grid: Vec<Nu>,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub loo_mode: LooMode,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_upsilon")]
    pub upsilon: f64,
    #[serde(default)]
    pub mle: MleSettings,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    /// Keep the bootstrap sample lists in the JSON report.
    #[serde(default = "default_true")]
    pub keep_bootstrap_samples: bool,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(problem: ProblemSource) -> Self {
        ExperimentConfig {
            name: String::new(),
            problem,
            train_fraction: default_train_fraction(),
            seed: 0,
            nugget: 0.0,
            nugget_mode: NuggetMode::default(),
            input_scaling: InputScaling::default(),
            nu_grid: default_nu_grid(),
            beta_grid: default_beta_grid(),
            alpha_grid: default_alpha_grid(),
            methods: default_methods(),
            delta: default_delta(),
            loo_mode: LooMode::default(),
            n_boot: default_n_boot(),
            upsilon: default_upsilon(),
            mle: MleSettings::default(),
            formats: default_formats(),
            keep_bootstrap_samples: true,
        }
    }

    /// Parses and validates a JSON config. Syntax and type errors carry the
    /// line and column of the offending token.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        // relative data paths are taken from the config file's directory
        if let (ProblemSource::Csv { path: data, .. }, Some(dir)) = (&mut cfg.problem, path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nu_grid.is_empty() || self.beta_grid.is_empty() || self.alpha_grid.is_empty() || self.methods.is_empty()
        {
            return bad("nu_grid, beta_grid, alpha_grid and methods must be non-empty".into());
        }
        for &a in &self.alpha_grid {
            check_alpha(a).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return bad(format!("beta values must be positive, got {b}"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return bad(format!("nugget must be non-negative, got {}", self.nugget));
        }
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return bad(format!("upsilon must lie in (0, 1), got {}", self.upsilon));
        }
        if self.n_boot == 0 {
            return bad("n_boot must be at least 1".into());
        }
        if self.formats.is_empty() {
            return bad("at least one output format is required".into());
        }
        self.mle.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let ProblemSource::Synthetic(p) = &self.problem {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over (seed, tag...): per-branch seeds that do not
/// depend on scheduling.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_DOE: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_MLE: u64 = 3;
const TAG_BOOT: u64 = 4;

/// Train/test data after scaling.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub scaling: Option<Standardizer>,
    pub rows_dropped: usize,
    pub source_digest: Option<String>,
}

fn take_rows(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)]),
        DVector::from_fn(idx.len(), |r, _| y[idx[r]]),
    )
}

/// Loads or synthesizes the data, splits it and scales the inputs.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let split_seed = derive_seed(cfg.seed, &[TAG_SPLIT]);
    let (name, x, y, known, rows_dropped, digest) = match &cfg.problem {
        ProblemSource::Synthetic(p) => {
            let mut p = p.clone();
            p.seed = derive_seed(cfg.seed, &[TAG_DOE]);
            let (x, y, _) = sample_doe(&p)?;
            let name = format!("{:?}", p.function);
            (name, x, y, Some(p.input_moments()), 0, None)
        }
        ProblemSource::Csv { path, target, options } => {
            let ds = load_csv(path, target, options)?;
            (ds.name, ds.x, ds.y, None, ds.rows_dropped, Some(ds.source_digest))
        }
    };
    let split = split_indices(y.len(), cfg.train_fraction, split_seed)?;
    let (x_train, y_train) = take_rows(&x, &y, &split.train);
    let (x_test, y_test) = take_rows(&x, &y, &split.test);
    let moments = match (cfg.input_scaling, known) {
        (InputScaling::None, _) => None,
        (InputScaling::Auto, Some(m)) => Some(Moments::Known(m)),
        _ => Some(Moments::Empirical),
    };
    let (x_train, x_test, scaling) = match moments {
        None => (x_train, x_test, None),
        Some(m) => {
            let t = Standardizer::fit(&x_train, &m)?;
            (t.apply(&x_train)?, t.apply(&x_test)?, Some(t))
        }
    };
    Ok(PreparedData { name, x_train, y_train, x_test, y_test, scaling, rows_dropped, source_digest: digest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum BranchStatus {
    Ok,
    Failed { error: String },
}

/// Outcome of one kernel branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub nu: Nu,
    #[serde(flatten)]
    pub status: BranchStatus,
    pub sigma2: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub jitter: Option<f64>,
    pub neg_log_likelihood: Option<f64>,
    pub q2: Option<f64>,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub soft_threshold: f64,
    pub n_passing: usize,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub library: String,
    pub version: String,
    pub rng: String,
    pub loo_mode: LooMode,
    pub nugget_mode: NuggetMode,
    pub nugget: f64,
    pub delta: f64,
    pub upsilon: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub dataset: String,
    pub n_train: usize,
    pub n_test: usize,
    pub rows_dropped: usize,
    pub source_digest: Option<String>,
    pub input_scaling: Option<Standardizer>,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub config: ExperimentConfig,
    pub branches: Vec<BranchSummary>,
    pub alphas: Vec<AlphaSummary>,
    /// Ordered by method, then ν, then β, then α.
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn all_branches_failed(&self) -> bool {
        self.branches.iter().all(|b| b.status != BranchStatus::Ok)
    }

    pub fn record(&self, method: Method, nu: Nu, beta: Option<f64>, alpha: f64) -> Option<&EvalRecord> {
        self.records.iter().find(|r| {
            r.method == method
                && r.nu == nu
                && (r.alpha - alpha).abs() < 1e-12
                && match (r.beta_power, beta) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    _ => false,
                }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn now_unix() -> Option<u64> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok().map(|d| d.as_secs())
    }
    #[cfg(target_arch = "wasm32")]
    {
        None
    }
}

struct BranchOutput {
    summary: BranchSummary,
    records: Vec<EvalRecord>,
}

/// Metrics of one interval set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_intervals(
    intervals: &IntervalSet,
    y_test: &[f64],
    abs_errors: &[f64],
    q2: f64,
    mse_value: f64,
    n_train: usize,
    upsilon: f64,
    n_boot: usize,
    boot_seed: u64,
    keep_samples: bool,
) -> Result<EvalRecord> {
    let coverage = empirical_coverage(intervals, y_test)?;
    let (avg_width, width_infinite_count) = average_width(intervals);
    let spearman = spearman_width_error(intervals, abs_errors).ok();
    let boot = bootstrap_spearman(intervals, abs_errors, n_boot, boot_seed).ok();
    let soft_threshold = beta_soft_threshold(n_train, intervals.alpha, upsilon)?;
    Ok(EvalRecord {
        method: intervals.method,
        nu: intervals.kernel_nu,
        beta_power: intervals.beta_power,
        alpha: intervals.alpha,
        coverage,
        avg_width,
        width_infinite_count,
        spearman,
        spearman_median: boot.as_ref().map(|b| b.median),
        spearman_ci: boot.as_ref().map(|b| b.ci),
        bootstrap_degenerate: boot.as_ref().map_or(n_boot, |b| b.degenerate),
        bootstrap_samples: match (&boot, keep_samples) {
            (Some(b), true) => b.samples.clone(),
            _ => Vec::new(),
        },
        q2,
        mse: mse_value,
        soft_threshold,
        passes_soft_threshold: coverage >= soft_threshold,
    })
}

fn run_branch(cfg: &ExperimentConfig, data: &PreparedData, nu_index: usize, nu: Nu) -> Result<BranchOutput> {
    let mut settings = cfg.mle.clone();
    settings.seed = derive_seed(cfg.seed, &[TAG_MLE, nu.order() as u64]);
    let nugget = Nugget { value: cfg.nugget, mode: cfg.nugget_mode };
    let gp: FittedGp = fit(&data.x_train, &data.y_train, nu, nugget, &settings)?;
    let (mean, std) = gp.predict(&data.x_test)?;
    let y_test = data.y_test.as_slice();
    let q2 = predictivity_q2(y_test, mean.as_slice())?;
    let mse_value = mse(y_test, mean.as_slice())?;
    let abs_errors: Vec<f64> = y_test.iter().zip(mean.iter()).map(|(y, m)| (y - m).abs()).collect();
    let n_train = gp.n_train();

    let needs_loo = cfg.methods.iter().any(|m| *m != Method::Credibility);
    let base: Option<LooEnsemble> = if needs_loo {
        Some(loo_from_fitted(&gp, &data.x_test, cfg.beta_grid[0], cfg.delta, cfg.loo_mode, &settings)?)
    } else {
        None
    };

    // One task per (method, β) cell; each evaluates every α.
    let mut cells: Vec<(usize, Method, Option<(usize, f64)>)> = Vec::new();
    for (mi, &m) in cfg.methods.iter().enumerate() {
        if m.is_gp_weighted() {
            for (bi, &b) in cfg.beta_grid.iter().enumerate() {
                cells.push((mi, m, Some((bi, b))));
            }
        } else {
            cells.push((mi, m, None));
        }
    }
    let weighted: Vec<Option<LooEnsemble>> = match &base {
        Some(b) => cfg.beta_grid.iter().map(|&beta| b.with_weighting(beta, cfg.delta).map(Some)).collect::<Result<_>>()?,
        None => vec![None; cfg.beta_grid.len()],
    };
    let per_cell: Vec<Result<Vec<EvalRecord>>> = par::map_range(cells.len(), |c| {
        let (mi, method, beta) = cells[c];
        let mut out = Vec::with_capacity(cfg.alpha_grid.len());
        for (ai, &alpha) in cfg.alpha_grid.iter().enumerate() {
            let intervals = if method == Method::Credibility {
                credibility_from_moments(mean.as_slice(), std.as_slice(), alpha, nu)
            } else {
                let loo = match beta {
                    Some((bi, _)) => weighted[bi].as_ref(),
                    None => base.as_ref(),
                }
                .expect("LOO ensemble built when a LOO method is requested");
                build_intervals(method, mean.as_slice(), loo, alpha).expect("LOO-based method")
            };
            let boot_seed = derive_seed(
                cfg.seed,
                &[TAG_BOOT, nu_index as u64, mi as u64, beta.map_or(u64::MAX, |(bi, _)| bi as u64), ai as u64],
            );
            out.push(evaluate_intervals(
                &intervals,
                y_test,
                &abs_errors,
                q2,
                mse_value,
                n_train,
                cfg.upsilon,
                cfg.n_boot,
                boot_seed,
                cfg.keep_bootstrap_samples,
            )?);
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_cell {
        records.extend(r?);
    }
    Ok(BranchOutput {
        summary: BranchSummary {
            nu,
            status: BranchStatus::Ok,
            sigma2: Some(gp.spec.sigma2),
            theta: Some(gp.spec.theta.clone()),
            jitter: Some(gp.factor.jitter),
            neg_log_likelihood: Some(gp.neg_log_likelihood()),
            q2: Some(q2),
            mse: Some(mse_value),
        },
        records,
    })
}

/// Runs the full grid. A failing ν branch is recorded and skipped; data
/// preparation and config errors abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    info!(
        "{}: {} training and {} test points, {} inputs",
        data.name,
        data.y_train.len(),
        data.y_test.len(),
        data.x_train.ncols()
    );
    let outputs: Vec<Result<BranchOutput>> =
        par::map_range(cfg.nu_grid.len(), |k| run_branch(cfg, &data, k, cfg.nu_grid[k]));

    let mut branches = Vec::with_capacity(outputs.len());
    let mut by_nu: Vec<Vec<EvalRecord>> = Vec::with_capacity(outputs.len());
    for (nu, out) in cfg.nu_grid.iter().zip(outputs) {
        match out {
            Ok(o) => {
                branches.push(o.summary);
                by_nu.push(o.records);
            }
            Err(e) => {
                warn!("branch nu={nu} failed: {e}");
                branches.push(BranchSummary {
                    nu: *nu,
                    status: BranchStatus::Failed { error: e.to_string() },
                    sigma2: None,
                    theta: None,
                    jitter: None,
                    neg_log_likelihood: None,
                    q2: None,
                    mse: None,
                });
                by_nu.push(Vec::new());
            }
        }
    }

    // Reorder to method, ν, β, α.
    let mut records = Vec::new();
    for &m in &cfg.methods {
        for recs in &by_nu {
            records.extend(recs.iter().filter(|r| r.method == m).cloned());
        }
    }

    let n_train = data.y_train.len();
    let alphas = cfg
        .alpha_grid
        .iter()
        .map(|&alpha| {
            Ok(AlphaSummary {
                alpha,
                soft_threshold: beta_soft_threshold(n_train, alpha, cfg.upsilon)?,
                n_passing: records
                    .iter()
                    .filter(|r| (r.alpha - alpha).abs() < 1e-12 && r.passes_soft_threshold)
                    .count(),
                selection: select_best(&records, alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        metadata: ReportMetadata {
            library: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng: RNG_ID.to_string(),
            loo_mode: cfg.loo_mode,
            nugget_mode: cfg.nugget_mode,
            nugget: cfg.nugget,
            delta: cfg.delta,
            upsilon: cfg.upsilon,
            n_boot: cfg.n_boot,
            seed: cfg.seed,
            dataset: data.name.clone(),
            n_train,
            n_test: data.y_test.len(),
            rows_dropped: data.rows_dropped,
            source_digest: data.source_digest.clone(),
            input_scaling: data.scaling.clone(),
            timestamp: now_unix(),
        },
        config: cfg.clone(),
        branches,
        alphas,
        records,
    })
}

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 17] = [
    "method",
    "nu",
    "beta",
    "alpha",
    "coverage",
    "soft_threshold",
    "passes_soft_threshold",
    "avg_width",
    "width_infinite_count",
    "spearman",
    "spearman_median",
    "spearman_ci_low",
    "spearman_ci_high",
    "bootstrap_degenerate",
    "q2",
    "mse",
    "winner",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Which selections a record won, e.g. "width;spearman".
fn winners(report: &EvalReport, idx: usize) -> (bool, bool) {
    let r = &report.records[idx];
    report
        .alphas
        .iter()
        .filter(|a| (a.alpha - r.alpha).abs() < 1e-12)
        .fold((false, false), |(w, s), a| {
            (w || a.selection.min_width == Some(idx), s || a.selection.max_spearman == Some(idx))
        })
}

pub fn render_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for (i, r) in report.records.iter().enumerate() {
        let (bw, bs) = winners(report, i);
        let winner = match (bw, bs) {
            (true, true) => "width;spearman",
            (true, false) => "width",
            (false, true) => "spearman",
            (false, false) => "",
        };
        w.write_record([
            r.method.tag().to_string(),
            r.nu.value().to_string(),
            opt(r.beta_power),
            r.alpha.to_string(),
            r.coverage.to_string(),
            r.soft_threshold.to_string(),
            r.passes_soft_threshold.to_string(),
            opt(r.avg_width),
            r.width_infinite_count.to_string(),
            opt(r.spearman),
            opt(r.spearman_median),
            opt(r.spearman_ci.map(|c| c.0)),
            opt(r.spearman_ci.map(|c| c.1)),
            r.bootstrap_degenerate.to_string(),
            r.q2.to_string(),
            r.mse.to_string(),
            winner.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// (1 - α) as a percentage without trailing zeros: 0.1 → "90", 0.025 → "97.5".
pub fn confidence_label(alpha: f64) -> String {
    let s = format!("{:.4}", (1.0 - alpha) * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn fmt_num(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn render_markdown(report: &EvalReport) -> String {
    let md = &report.metadata;
    let mut s = String::new();
    let title = if report.config.name.is_empty() { md.dataset.as_str() } else { report.config.name.as_str() };
    let _ = writeln!(s, "# {title}\n");
    let _ = writeln!(
        s,
        "n_train = {}, n_test = {}, nugget = {} ({}), LOO = {}, δ = {}, υ = {}, bootstrap = {}, seed = {}, RNG = {}, {} {}\n",
        md.n_train,
        md.n_test,
        md.nugget,
        match md.nugget_mode {
            NuggetMode::SdOnDiagonal => "sd on diagonal",
            NuggetMode::VarianceOnDiagonal => "variance on diagonal",
        },
        md.loo_mode,
        md.delta,
        md.upsilon,
        md.n_boot,
        md.seed,
        md.rng,
        md.library,
        md.version
    );

    let _ = writeln!(s, "## Kernels\n");
    let _ = writeln!(s, "| Kernel | status | σ² | θ | Q² | MSE |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for b in &report.branches {
        let status = match &b.status {
            BranchStatus::Ok => "ok".to_string(),
            BranchStatus::Failed { error } => format!("failed: {}", error.replace('|', "/")),
        };
        let theta = b
            .theta
            .as_ref()
            .map(|t| t.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "| Matérn-{} | {} | {} | {} | {} | {} |",
            b.nu,
            status,
            b.sigma2.map(fmt_num).unwrap_or_default(),
            theta,
            b.q2.map(fmt_num).unwrap_or_default(),
            b.mse.map(fmt_num).unwrap_or_default()
        );
    }

    let _ = writeln!(s, "\n## Intervals\n");
    let _ = write!(s, "| Method | Kernel | β |");
    for a in &report.alphas {
        let c = confidence_label(a.alpha);
        let _ = write!(s, " cov {c}% | width {c}% | ρ {c}% |");
    }
    s.push('\n');
    let _ = write!(s, "|---|---|---|");
    for _ in &report.alphas {
        s.push_str("---|---|---|");
    }
    s.push('\n');

    // One row per (method, ν, β), with α across the columns.
    let mut seen: Vec<(Method, Nu, Option<u64>)> = Vec::new();
    for r in &report.records {
        let key = (r.method, r.nu, r.beta_power.map(f64::to_bits));
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let beta = r.beta_power.map(|b| b.to_string()).unwrap_or_default();
        let _ = write!(s, "| {} | Matérn-{} | {} |", r.method.label(), r.nu, beta);
        for a in &report.alphas {
            let found = report.records.iter().enumerate().find(|(_, x)| {
                x.method == r.method
                    && x.nu == r.nu
                    && x.beta_power.map(f64::to_bits) == key.2
                    && (x.alpha - a.alpha).abs() < 1e-12
            });
            match found {
                None => s.push_str(" | | |"),
                Some((idx, x)) => {
                    let mark = if x.passes_soft_threshold { "" } else { " ✗" };
                    let width = match x.avg_width {
                        Some(w) if x.width_infinite_count == 0 => fmt_num(w),
                        Some(w) => format!("{} ({} inf)", fmt_num(w), x.width_infinite_count),
                        None => "inf".to_string(),
                    };
                    let rho = match x.spearman_median {
                        Some(v) => fmt_num(v),
                        None => "n.c".to_string(),
                    };
                    let width = if a.selection.min_width == Some(idx) { format!("**{width}**") } else { width };
                    let rho = if a.selection.max_spearman == Some(idx) { format!("**{rho}**") } else { rho };
                    let _ = write!(s, " {}{} | {} | {} |", fmt_num(x.coverage), mark, width, rho);
                }
            }
        }
        s.push('\n');
    }

    let _ = writeln!(s, "\nSoft thresholds:");
    for a in &report.alphas {
        let _ = writeln!(
            s,
            "- {}%: {} ({} passing)",
            confidence_label(a.alpha),
            fmt_num(a.soft_threshold),
            a.n_passing
        );
    }
    let _ = writeln!(
        s,
        "\nCoverage marked ✗ is below the soft threshold. Bold marks the narrowest and the best-correlated passing intervals; ρ is the bootstrap median Spearman correlation between width and absolute error, n.c when not computable."
    );
    for a in report.alphas.iter().filter(|a| a.n_passing == 0) {
        let _ = writeln!(s, "\nNote: no method passes the soft threshold at {}%.", confidence_label(a.alpha));
    }
    s
}

/// Writes the requested formats into `out_dir` and returns the paths.
pub fn emit_report(report: &EvalReport, formats: &[ReportFormat], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for &f in formats {
        if written.iter().any(|p: &PathBuf| p.file_name() == Some(f.file_name().as_ref())) {
            continue;
        }
        let body = match f {
            ReportFormat::Json => report.to_json()?,
            ReportFormat::Csv => render_csv(report)?,
            ReportFormat::Md => render_markdown(report),
        };
        let path = out_dir.join(f.file_name());
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
