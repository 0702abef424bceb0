//! WebAssembly bindings for the browser demo: Matérn profiles, soft
//! thresholds, and a 1-D GP fit with conformal bands.

use conformal_gp::bench::{sample_doe, InputDistribution, Noise, Standardizer, SyntheticProblem, TestFunction};
use conformal_gp::conformal::{build_intervals, IntervalSet, Method};
use conformal_gp::gp::{fit, MleSettings};
use conformal_gp::kernels::{matern_profile, Nu};
use conformal_gp::loo::{loo_from_fitted, LooMode};
use conformal_gp::metrics::{average_width, beta_soft_threshold, empirical_coverage, spearman_width_error};
use conformal_gp::stats::standard_normal_quantile;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Unit-variance Matérn correlation of order ν = p + 1/2 at `points` distances
/// evenly spaced on [0, r_max], for length scale `theta`.
#[wasm_bindgen]
pub fn matern_curve(order: u32, theta: f64, r_max: f64, points: usize) -> Vec<f64> {
    let nu = Nu::from_order(order.min(8));
    let steps = points.max(2) - 1;
    (0..=steps)
        .map(|k| matern_profile(nu, r_max * k as f64 / steps as f64 / theta))
        .collect()
}

/// Beta soft coverage threshold; NaN for invalid arguments.
#[wasm_bindgen]
pub fn soft_threshold(n: usize, alpha: f64, upsilon: f64) -> f64 {
    beta_soft_threshold(n, alpha, upsilon).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub n_train: usize,
    /// Noise standard deviation, or its slope in x when heteroskedastic.
    pub noise: f64,
    pub heteroskedastic: bool,
    pub frequency: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub nugget: f64,
    pub grid_points: usize,
    pub n_check: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            n_train: 40,
            noise: 0.3,
            heteroskedastic: true,
            frequency: 6.0,
            seed: 1,
            alpha: 0.1,
            beta: 1.0,
            nu: 1.5,
            nugget: 0.03,
            grid_points: 200,
            n_check: 1000,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Band {
    pub method: String,
    pub label: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Coverage of fresh draws from the same process.
    pub coverage: f64,
    pub avg_width: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DemoOutput {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub grid_x: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub sigma2: f64,
    pub theta: f64,
    pub n_check: usize,
    pub bands: Vec<Band>,
}

fn problem(p: &DemoParams, n: usize, seed: u64) -> SyntheticProblem {
    SyntheticProblem {
        function: TestFunction::Sine { frequency: p.frequency },
        inputs: vec![InputDistribution::Uniform { a: 0.0, b: 1.0 }],
        noise: if p.heteroskedastic { Noise::ProportionalToFirstInput(p.noise) } else { Noise::Constant(p.noise) },
        n_samples: n,
        seed,
    }
}

fn slice(s: &IntervalSet, from: usize, to: usize, method: Method) -> IntervalSet {
    IntervalSet::new(s.lower[from..to].to_vec(), s.upper[from..to].to_vec(), method, s.alpha, s.kernel_nu, s.beta_power)
}

/// Fits a GP to a noisy 1-D sine and returns the credibility, J+ and J+GP
/// bands on a grid, plus their coverage on fresh draws.
pub fn run_demo(p: &DemoParams) -> Result<DemoOutput, String> {
    let nu = Nu::try_from(p.nu).map_err(|e| e.to_string())?;
    if p.n_train < 3 || p.n_train > 400 {
        return Err("n_train must lie in [3, 400]".into());
    }
    let scaler = Standardizer { mean: vec![0.5], sd: vec![(1.0f64 / 12.0).sqrt()] };
    let (x, y, _) = sample_doe(&problem(p, p.n_train, p.seed)).map_err(|e| e.to_string())?;
    let (xc, yc, _) = sample_doe(&problem(p, p.n_check.max(3), p.seed ^ 0x5EED)).map_err(|e| e.to_string())?;
    let m = p.grid_points.clamp(10, 1000);
    let grid: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();

    // grid rows first, then the check points
    let queries = DMatrix::from_fn(m + xc.nrows(), 1, |i, _| if i < m { grid[i] } else { xc[(i - m, 0)] });
    let xs = scaler.apply(&x).map_err(|e| e.to_string())?;
    let qs = scaler.apply(&queries).map_err(|e| e.to_string())?;

    let settings = MleSettings { n_restarts: 4, seed: p.seed, ..MleSettings::default() };
    let gp = fit(&xs, &y, nu, p.nugget, &settings).map_err(|e| e.to_string())?;
    let (mean, std) = gp.predict(&qs).map_err(|e| e.to_string())?;
    let loo = loo_from_fitted(&gp, &qs, p.beta, 1e-6, LooMode::ClosedForm, &settings).map_err(|e| e.to_string())?;

    let total = qs.nrows();
    let check_y = yc.as_slice();
    let check_err: Vec<f64> = (m..total).map(|i| (check_y[i - m] - mean[i]).abs()).collect();
    let u = standard_normal_quantile(1.0 - p.alpha / 2.0);
    let credibility = IntervalSet::new(
        (0..total).map(|i| mean[i] - u * std[i]).collect(),
        (0..total).map(|i| mean[i] + u * std[i]).collect(),
        Method::Credibility,
        p.alpha,
        nu,
        None,
    );
    let mut bands = Vec::new();
    for method in [Method::Credibility, Method::JackknifePlus, Method::JplusGp] {
        let all = if method == Method::Credibility {
            credibility.clone()
        } else {
            build_intervals(method, mean.as_slice(), &loo, p.alpha).expect("LOO method")
        };
        let on_grid = slice(&all, 0, m, method);
        let on_check = slice(&all, m, total, method);
        bands.push(Band {
            method: method.tag().into(),
            label: method.label().into(),
            lower: on_grid.lower,
            upper: on_grid.upper,
            coverage: empirical_coverage(&on_check, check_y).map_err(|e| e.to_string())?,
            avg_width: average_width(&on_check).0,
            spearman: spearman_width_error(&on_check, &check_err).ok(),
        });
    }
    Ok(DemoOutput {
        train_x: x.column(0).iter().copied().collect(),
        train_y: y.iter().copied().collect(),
        truth: grid.iter().map(|g| (p.frequency * g).sin()).collect(),
        grid_x: grid,
        mean: mean.rows(0, m).iter().copied().collect(),
        sigma2: gp.spec.sigma2,
        theta: gp.spec.theta[0] * scaler.sd[0],
        n_check: check_y.len(),
        bands,
    })
}

/// JSON in, JSON out; errors come back as `{"error": "..."}`.
#[wasm_bindgen]
pub fn conformal_demo(params_json: &str) -> String {
    let result = serde_json::from_str::<DemoParams>(params_json)
        .map_err(|e| e.to_string())
        .and_then(|p| run_demo(&p));
    match result.and_then(|out| serde_json::to_string(&out).map_err(|e| e.to_string())) {
        Ok(s) => s,
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}
