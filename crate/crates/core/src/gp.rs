//! Zero-mean (ordinary kriging) Gaussian-process posterior and maximum
//! likelihood fitting of the Matérn hyperparameters.
//!
//! The nugget is never optimized; it is supplied by the caller and held fixed.
//! The objective is `yᵀ K_ε⁻¹ y + log det K_ε`, with no additive constants.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{IntervalSet, Method};
use crate::error::{Error, Result};
use crate::kernels::{cross_matrix, gram_matrix, KernelSpec, Nu, NuggetMode};
use crate::optim::{latin_hypercube, nelder_mead, NelderMeadOptions};
use crate::par;
use crate::stats::standard_normal_quantile;

/// Jitter ladder used when a factorization fails, as multiples of σ².
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a covariance matrix plus the jitter that was needed.
#[derive(Debug, Clone)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factorizes `k`, escalating a diagonal jitter from 1e-10·σ² by factors of
/// ten up to 1e-4·σ² when the plain factorization fails.
pub fn factorize(k: &DMatrix<f64>, sigma2: f64) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok(Factor { chol, jitter: 0.0 });
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * sigma2;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok(Factor { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization { jitter: JITTER_MAX * sigma2 })
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `yᵀ K_ε⁻¹ y + log det K_ε`; `+∞` when the Gram matrix cannot be factored.
pub fn neg_log_likelihood(spec: &KernelSpec, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let Ok(k) = gram_matrix(spec, x, true) else {
        return f64::INFINITY;
    };
    match factorize(&k, spec.sigma2) {
        Ok(f) => {
            let w = f.chol.solve(y);
            let v = y.dot(&w) + log_det(&f.chol);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Nugget σ_ε together with the convention for placing it on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Nugget {
    pub value: f64,
    #[serde(default)]
    pub mode: NuggetMode,
}

impl From<f64> for Nugget {
    fn from(value: f64) -> Self {
        Nugget { value, mode: NuggetMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleSettings {
    /// Bounds applied to every length scale, in standardized input units.
    pub theta_bounds: (f64, f64),
    /// Absolute σ² bounds; `None` means `[1e-6, 1e3]·var(y)`.
    pub sigma2_bounds: Option<(f64, f64)>,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// One length scale per input dimension instead of a shared one.
    pub anisotropic: bool,
    /// Concentrate σ² out in closed form; only valid when the nugget is zero.
    pub profile_sigma2: bool,
    /// When set, the only start point: (σ², θ).
    #[serde(skip)]
    pub initial: Option<(f64, Vec<f64>)>,
}

impl Default for MleSettings {
    fn default() -> Self {
        MleSettings {
            theta_bounds: (1e-2, 1e2),
            sigma2_bounds: None,
            n_restarts: 10,
            max_iters: 2000,
            seed: 0,
            anisotropic: false,
            profile_sigma2: false,
            initial: None,
        }
    }
}

impl MleSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi;
        if !ok(self.theta_bounds) {
            return Err(Error::InvalidParameter(format!("bad theta bounds {:?}", self.theta_bounds)));
        }
        if let Some(b) = self.sigma2_bounds {
            if !ok(b) {
                return Err(Error::InvalidParameter(format!("bad sigma2 bounds {b:?}")));
            }
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidParameter("n_restarts must be at least 1".into()));
        }
        Ok(())
    }

    fn sigma2_range(&self, y: &DVector<f64>) -> (f64, f64) {
        self.sigma2_bounds.unwrap_or_else(|| {
            let var = population_variance(y.as_slice());
            let scale = if var > 0.0 { var } else { 1.0 };
            (1e-6 * scale, 1e3 * scale)
        })
    }
}

pub(crate) fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// A GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct FittedGp {
    pub spec: KernelSpec,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub factor: Factor,
    /// K_ε⁻¹ y.
    pub weights: DVector<f64>,
}

impl FittedGp {
    /// Conditions a GP with fixed hyperparameters on (x, y).
    pub fn condition(spec: KernelSpec, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        spec.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if x.nrows() == 0 {
            return Err(Error::InsufficientData("no training points".into()));
        }
        let k = gram_matrix(&spec, &x, true)?;
        let factor = factorize(&k, spec.sigma2)?;
        let weights = factor.chol.solve(&y);
        Ok(FittedGp { spec, x_train: x, y_train: y, factor, weights })
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    fn check_queries(&self, q: &DMatrix<f64>) -> Result<()> {
        if q.ncols() != self.x_train.ncols() {
            return Err(Error::DimensionMismatch { expected: self.x_train.ncols(), got: q.ncols() });
        }
        Ok(())
    }

    pub fn posterior_mean(&self, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_queries(queries)?;
        let kx = cross_matrix(&self.spec, &self.x_train, queries)?;
        Ok(kx.tr_mul(&self.weights))
    }

    pub fn posterior_std(&self, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.predict(queries)?.1)
    }

    /// Posterior mean and standard deviation at each query row.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_queries(queries)?;
        let kx = cross_matrix(&self.spec, &self.x_train, queries)?;
        let mean = kx.tr_mul(&self.weights);
        let mut v = kx;
        // columns become L⁻¹ k(x)
        self.factor.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let std = DVector::from_iterator(
            v.ncols(),
            v.column_iter().map(|c| (self.spec.sigma2 - c.norm_squared()).max(0.0).sqrt()),
        );
        Ok((mean, std))
    }

    pub fn neg_log_likelihood(&self) -> f64 {
        self.y_train.dot(&self.weights) + log_det(&self.factor.chol)
    }

    /// Bayesian credibility interval `mean ± u_{1-α/2}·std`.
    pub fn credibility_interval(&self, queries: &DMatrix<f64>, alpha: f64) -> Result<IntervalSet> {
        check_alpha(alpha)?;
        let (mean, std) = self.predict(queries)?;
        Ok(credibility_from_moments(mean.as_slice(), std.as_slice(), alpha, self.spec.nu))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) fn credibility_from_moments(mean: &[f64], std: &[f64], alpha: f64, nu: Nu) -> IntervalSet {
    let u = standard_normal_quantile(1.0 - alpha / 2.0);
    let lower = mean.iter().zip(std).map(|(m, s)| m - u * s).collect();
    let upper = mean.iter().zip(std).map(|(m, s)| m + u * s).collect();
    IntervalSet::new(lower, upper, Method::Credibility, alpha, nu, None)
}

fn warn_if_unstandardized(x: &DMatrix<f64>) {
    if x.nrows() < 2 {
        return;
    }
    for (k, col) in x.column_iter().enumerate() {
        let sd = population_variance(col.as_slice()).sqrt();
        if (sd - 1.0).abs() > 0.25 {
            warn!("input column {k} has standard deviation {sd:.3}; inputs are expected to be standardized");
        }
    }
}

struct Candidate {
    value: f64,
    sigma2: f64,
    theta: Vec<f64>,
}

/// Fits σ² and θ by multi-start Nelder–Mead on the log-parameters, keeping
/// ν and the nugget fixed.
pub fn fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    nu: Nu,
    nugget: impl Into<Nugget>,
    settings: &MleSettings,
) -> Result<FittedGp> {
    let nugget = nugget.into();
    settings.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("fit needs at least 2 points, got {n}")));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(nugget.value >= 0.0 && nugget.value.is_finite()) {
        return Err(Error::InvalidParameter(format!("nugget must be non-negative, got {}", nugget.value)));
    }
    let profile = settings.profile_sigma2 && nugget.value == 0.0;
    if settings.profile_sigma2 && !profile {
        warn!("sigma2 profiling requested with a non-zero nugget; optimizing sigma2 directly");
    }
    warn_if_unstandardized(x);

    let d = x.ncols();
    let n_theta = if settings.anisotropic { d } else { 1 };
    let (s_lo, s_hi) = settings.sigma2_range(y);
    let (t_lo, t_hi) = settings.theta_bounds;
    let mut lower = Vec::with_capacity(n_theta + 1);
    let mut upper = Vec::with_capacity(n_theta + 1);
    if !profile {
        lower.push(s_lo.ln());
        upper.push(s_hi.ln());
    }
    lower.extend(std::iter::repeat_n(t_lo.ln(), n_theta));
    upper.extend(std::iter::repeat_n(t_hi.ln(), n_theta));

    let make_spec = |sigma2: f64, theta: Vec<f64>| KernelSpec {
        nu,
        sigma2,
        theta,
        nugget: nugget.value,
        nugget_mode: nugget.mode,
    };

    // Maps log-parameters to (σ², θ); with profiling σ² is its closed-form
    // maximizer yᵀR⁻¹y/n for the unit-variance correlation matrix R.
    let unpack = |p: &[f64]| -> (f64, Vec<f64>) {
        if profile {
            let theta: Vec<f64> = p.iter().map(|v| v.exp()).collect();
            let unit = make_spec(1.0, theta.clone());
            let sigma2 = gram_matrix(&unit, x, true)
                .ok()
                .and_then(|r| factorize(&r, 1.0).ok())
                .map(|f| (y.dot(&f.chol.solve(y)) / n as f64).clamp(s_lo, s_hi))
                .unwrap_or(f64::NAN);
            (sigma2, theta)
        } else {
            (p[0].exp(), p[1..].iter().map(|v| v.exp()).collect())
        }
    };
    let objective = |p: &[f64]| -> f64 {
        let (sigma2, theta) = unpack(p);
        if !sigma2.is_finite() {
            return f64::INFINITY;
        }
        neg_log_likelihood(&make_spec(sigma2, theta), x, y)
    };

    let starts: Vec<Vec<f64>> = match &settings.initial {
        Some((sigma2, theta)) => {
            let mut p = Vec::new();
            if !profile {
                p.push(sigma2.ln());
            }
            if theta.len() == n_theta {
                p.extend(theta.iter().map(|t| t.ln()));
            } else {
                p.extend(std::iter::repeat_n(theta[0].ln(), n_theta));
            }
            vec![p]
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            latin_hypercube(&mut rng, settings.n_restarts, &lower, &upper)
        }
    };

    let opts = NelderMeadOptions { max_iters: settings.max_iters, ..Default::default() };
    let results: Vec<Candidate> = par::map_range(starts.len(), |s| {
        let m = nelder_mead(objective, &starts[s], &lower, &upper, &opts);
        let (sigma2, theta) = unpack(&m.x);
        Candidate { value: m.value, sigma2, theta }
    });

    let best = results
        .into_iter()
        .filter(|c| c.value.is_finite())
        .reduce(|a, b| {
            let tie = (b.value - a.value).abs() <= 1e-12;
            if b.value < a.value - 1e-12 || (tie && b.theta.partial_cmp(&a.theta) == Some(std::cmp::Ordering::Less)) {
                b
            } else {
                a
            }
        })
        .ok_or(Error::OptimizationFailed)?;

    FittedGp::condition(make_spec(best.sigma2, best.theta), x.clone(), y.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::cross_vector;

    fn spec(nu: Nu, sigma2: f64, theta: f64, nugget: f64) -> KernelSpec {
        KernelSpec::isotropic(nu, sigma2, theta, nugget).unwrap()
    }

    #[test]
    fn nll_scalar_cases() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let v = neg_log_likelihood(&spec(Nu::HALF, 1.0, 1.0, 0.0), &x, &DVector::from_vec(vec![0.0]));
        assert!(v.abs() < 1e-15);
        let v = neg_log_likelihood(&spec(Nu::HALF, 4.0, 1.0, 0.0), &x, &DVector::from_vec(vec![2.0]));
        assert!((v - (1.0 + 4f64.ln())).abs() < 1e-12);
        assert!((v - 2.386294).abs() < 1e-6);

        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1e4]);
        let v = neg_log_likelihood(&spec(Nu::HALF, 1.0, 1.0, 0.0), &x, &DVector::from_vec(vec![1.0, 1.0]));
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nll_infinite_when_unfactorizable() {
        // duplicated points and a huge negative... use NaN sigma via a degenerate spec
        let mut s = spec(Nu::HALF, 1.0, 1.0, 0.0);
        s.sigma2 = f64::NAN;
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(neg_log_likelihood(&s, &x, &DVector::from_vec(vec![1.0, 2.0])), f64::INFINITY);
    }

    #[test]
    fn duplicate_points_use_jitter() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 0.5]);
        let gp = FittedGp::condition(spec(Nu::THREE_HALVES, 1.0, 0.5, 0.0), x, y).unwrap();
        assert!(gp.factor.jitter > 0.0);
        assert!(gp.factor.jitter <= 1e-4);
    }

    #[test]
    fn single_point_posterior() {
        let s = spec(Nu::THREE_HALVES, 2.0, 0.7, 0.0);
        let x0 = 0.3;
        let y0 = 1.4;
        let gp = FittedGp::condition(s.clone(), DMatrix::from_row_slice(1, 1, &[x0]), DVector::from_vec(vec![y0])).unwrap();
        let q = DMatrix::from_row_slice(3, 1, &[0.3, 0.9, -0.4]);
        let (mean, std) = gp.predict(&q).unwrap();
        for j in 0..3 {
            let k = cross_vector(&s, &DMatrix::from_row_slice(1, 1, &[x0]), &[q[(j, 0)]]).unwrap()[0];
            assert!((mean[j] - y0 * k / 2.0).abs() < 1e-14);
            assert!((std[j] - (2.0 - k * k / 2.0).max(0.0).sqrt()).abs() < 1e-7);
        }
        assert!(std[0] < 1e-7);
        assert!((mean[0] - y0).abs() < 1e-14);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let s = spec(Nu::FIVE_HALVES, 3.0, 0.5, 0.0);
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let gp = FittedGp::condition(s, x, DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        let (m, sd) = gp.predict(&DMatrix::from_row_slice(1, 1, &[1e5])).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((sd[0] - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn credibility_intervals() {
        let m = [0.0, 2.0];
        let s = [1.0, 0.0];
        let iv = credibility_from_moments(&m, &s, 0.05, Nu::HALF);
        assert!((iv.lower[0] + 1.959964).abs() < 1e-6 && (iv.upper[0] - 1.959964).abs() < 1e-6);
        assert_eq!((iv.lower[1], iv.upper[1]), (2.0, 2.0));
        let iv = credibility_from_moments(&[5.0], &[2.0], 0.5, Nu::HALF);
        assert!((iv.lower[0] - (5.0 - 0.674490 * 2.0)).abs() < 1e-5);
        assert!((iv.upper[0] - (5.0 + 0.674490 * 2.0)).abs() < 1e-5);
        let gp = FittedGp::condition(
            spec(Nu::HALF, 1.0, 1.0, 0.0),
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert!(gp.credibility_interval(&DMatrix::from_row_slice(1, 1, &[0.0]), 0.0).is_err());
        assert!(gp.credibility_interval(&DMatrix::from_row_slice(1, 1, &[0.0]), 1.0).is_err());
    }

    #[test]
    fn fit_zero_data_hits_sigma2_lower_bound() {
        let x = DMatrix::from_row_slice(5, 1, &[-1.4, -0.7, 0.0, 0.7, 1.4]);
        let y = DVector::zeros(5);
        let settings = MleSettings { n_restarts: 3, ..Default::default() };
        let gp = fit(&x, &y, Nu::THREE_HALVES, 0.0, &settings).unwrap();
        assert!((gp.spec.sigma2 - 1e-6).abs() < 1e-12, "{}", gp.spec.sigma2);
        let m = gp.posterior_mean(&DMatrix::from_row_slice(2, 1, &[0.3, 3.0])).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fit_rejects_bad_input() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![1.0]);
        assert!(matches!(fit(&x, &y, Nu::HALF, 0.0, &MleSettings::default()), Err(Error::InsufficientData(_))));
        let bad = MleSettings { n_restarts: 0, ..Default::default() };
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        assert!(fit(&x, &y, Nu::HALF, 0.0, &bad).is_err());
    }
}
