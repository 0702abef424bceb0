//! Analytic benchmark functions, input samplers and standardization.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of the RNG used for every seeded draw in this crate.
pub const RNG_ID: &str = "ChaCha8Rng/rand_chacha-0.3";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDistribution {
    Uniform { a: f64, b: f64 },
    Normal { mean: f64, sd: f64 },
    /// Triangular on [a, c] with mode b.
    Triangular { a: f64, b: f64, c: f64 },
    MultivariateNormal { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl InputDistribution {
    pub fn dim(&self) -> usize {
        match self {
            InputDistribution::MultivariateNormal { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            InputDistribution::Uniform { a, b } if !(a < b) => bad(format!("uniform needs a < b, got [{a}, {b}]")),
            InputDistribution::Normal { sd, .. } if !(*sd > 0.0) => bad(format!("normal needs sd > 0, got {sd}")),
            InputDistribution::Triangular { a, b, c } if !(a <= b && b <= c && a < c) => {
                bad(format!("triangular needs a <= b <= c with a < c, got ({a}, {b}, {c})"))
            }
            InputDistribution::MultivariateNormal { mean, cov } => {
                if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
                    return bad("covariance shape does not match the mean".into());
                }
                self.cholesky().map(|_| ())
            }
            _ => Ok(()),
        }
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let InputDistribution::MultivariateNormal { mean, cov } = self else {
            unreachable!("only multivariate normals have a covariance factor")
        };
        let d = mean.len();
        let c = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        if (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        c.cholesky()
            .map(|ch| ch.l())
            .ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))
    }

    /// Per-dimension (mean, standard deviation).
    pub fn moments(&self) -> Vec<(f64, f64)> {
        match self {
            InputDistribution::Uniform { a, b } => vec![((a + b) / 2.0, (b - a) / 12f64.sqrt())],
            InputDistribution::Normal { mean, sd } => vec![(*mean, *sd)],
            InputDistribution::Triangular { a, b, c } => {
                let var = (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0;
                vec![((a + b + c) / 3.0, var.sqrt())]
            }
            InputDistribution::MultivariateNormal { mean, cov } => {
                mean.iter().enumerate().map(|(k, m)| (*m, cov[k][k].sqrt())).collect()
            }
        }
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, chol: Option<&DMatrix<f64>>, out: &mut Vec<f64>) {
        match self {
            InputDistribution::Uniform { a, b } => out.push(a + (b - a) * rng.gen::<f64>()),
            InputDistribution::Normal { mean, sd } => out.push(mean + sd * rng.sample::<f64, _>(StandardNormal)),
            InputDistribution::Triangular { a, b, c } => out.push(triangular_inverse_cdf(*a, *b, *c, rng.gen())),
            InputDistribution::MultivariateNormal { mean, .. } => {
                let l = chol.expect("factor computed before sampling");
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let v = l * z;
                out.extend(mean.iter().zip(v.iter()).map(|(m, x)| m + x));
            }
        }
    }
}

/// Inverse CDF of the triangular law on [a, c] with mode b.
pub fn triangular_inverse_cdf(a: f64, b: f64, c: f64, u: f64) -> f64 {
    let split = (b - a) / (c - a);
    if u < split {
        a + (u * (c - a) * (b - a)).sqrt()
    } else {
        c - ((1.0 - u) * (c - a) * (c - b)).sqrt()
    }
}

pub fn triangular_cdf(a: f64, b: f64, c: f64, x: f64) -> f64 {
    if x <= a {
        0.0
    } else if x <= b {
        (x - a).powi(2) / ((c - a) * (b - a))
    } else if x < c {
        1.0 - (c - x).powi(2) / ((c - a) * (c - b))
    } else {
        1.0
    }
}

/// (1/2)(1 + 1/d)^d Π xᵢ^{1/d} on the unit cube.
pub fn morokoff_caflisch(x: &[f64]) -> Result<f64> {
    let d = x.len();
    if d == 0 {
        return Err(Error::InvalidParameter("Morokoff & Caflisch needs d >= 1".into()));
    }
    let inv = 1.0 / d as f64;
    let prod: f64 = x.iter().map(|v| v.clamp(0.0, 1.0).powf(inv)).product();
    Ok(0.5 * (1.0 + inv).powi(d as i32) * prod)
}

/// Domains of the ten wing-weight inputs; the sweep angle (index 3) is in degrees.
pub const WING_WEIGHT_DOMAIN: [(f64, f64); 10] = [
    (150.0, 200.0),
    (220.0, 300.0),
    (6.0, 10.0),
    (-10.0, 10.0),
    (16.0, 45.0),
    (0.5, 1.0),
    (0.08, 0.18),
    (2.5, 6.0),
    (1700.0, 2500.0),
    (0.025, 0.08),
];

pub fn wing_weight(x: &[f64]) -> Result<f64> {
    if x.len() != 10 {
        return Err(Error::DimensionMismatch { expected: 10, got: x.len() });
    }
    if x.iter().zip(WING_WEIGHT_DOMAIN.iter()).any(|(v, (lo, hi))| v < lo || v > hi) {
        warn!("wing-weight input outside its nominal domain");
    }
    let cos_sweep = x[3].to_radians().cos();
    let v = 0.036
        * x[0].powf(0.758)
        * x[1].powf(0.0035)
        * (x[2] / (cos_sweep * cos_sweep)).powf(0.6)
        * x[4].powf(0.006)
        * x[5].powf(0.04)
        * (100.0 * x[6] / cos_sweep).powf(-0.3)
        * (x[7] * x[8]).powf(0.49)
        + x[0] * x[9];
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    MorokoffCaflisch { dim: usize },
    WingWeight,
    /// sin(frequency · x) in one dimension.
    Sine { frequency: f64 },
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::MorokoffCaflisch { dim } => *dim,
            TestFunction::WingWeight => 10,
            TestFunction::Sine { .. } => 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            TestFunction::MorokoffCaflisch { .. } => morokoff_caflisch(x),
            TestFunction::WingWeight => wing_weight(x),
            TestFunction::Sine { frequency } => Ok((frequency * x[0]).sin()),
        }
    }

    /// Uniform inputs on the function's natural domain.
    pub fn default_inputs(&self) -> Vec<InputDistribution> {
        match self {
            TestFunction::MorokoffCaflisch { dim } => vec![InputDistribution::Uniform { a: 0.0, b: 1.0 }; *dim],
            TestFunction::WingWeight => WING_WEIGHT_DOMAIN
                .iter()
                .map(|(a, b)| InputDistribution::Uniform { a: *a, b: *b })
                .collect(),
            TestFunction::Sine { .. } => vec![InputDistribution::Uniform { a: 0.0, b: 1.0 }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Additive N(0, sd²).
    Constant(f64),
    /// Additive N(0, (sd·x₁)²), heteroskedastic in the first raw input.
    ProportionalToFirstInput(f64),
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Constant(0.0)
    }
}

impl Noise {
    fn sd_at(&self, x: &[f64]) -> f64 {
        match self {
            Noise::Constant(sd) => *sd,
            Noise::ProportionalToFirstInput(k) => k * x[0].abs(),
        }
    }

    fn scale(&self) -> f64 {
        match self {
            Noise::Constant(v) | Noise::ProportionalToFirstInput(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub function: TestFunction,
    /// Empty means the function's default inputs.
    #[serde(default)]
    pub inputs: Vec<InputDistribution>,
    #[serde(default)]
    pub noise: Noise,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticProblem {
    pub fn input_distributions(&self) -> Vec<InputDistribution> {
        if self.inputs.is_empty() {
            self.function.default_inputs()
        } else {
            self.inputs.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = self.input_distributions();
        for d in &inputs {
            d.validate()?;
        }
        let dim: usize = inputs.iter().map(|d| d.dim()).sum();
        if dim != self.function.dim() || dim == 0 {
            return Err(Error::DimensionMismatch { expected: self.function.dim(), got: dim });
        }
        if !(self.noise.scale() >= 0.0) {
            return Err(Error::InvalidParameter("noise standard deviation must be non-negative".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be positive".into()));
        }
        Ok(())
    }

    /// Per-dimension input moments, used for standardization.
    pub fn input_moments(&self) -> Vec<(f64, f64)> {
        self.input_distributions().iter().flat_map(|d| d.moments()).collect()
    }
}

/// Draws the design, evaluates the function and adds noise. Inputs are drawn
/// row by row first, then the noise, all from one seeded stream.
/// Returns (X, y, noiseless g(X)).
pub fn sample_doe(problem: &SyntheticProblem) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    problem.validate()?;
    let inputs = problem.input_distributions();
    let factors: Vec<Option<DMatrix<f64>>> = inputs
        .iter()
        .map(|d| match d {
            InputDistribution::MultivariateNormal { .. } => d.cholesky().map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    let d = problem.function.dim();
    let n = problem.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut x = DMatrix::zeros(n, d);
    let mut clamped = 0usize;
    let mut row = Vec::with_capacity(d);
    for i in 0..n {
        row.clear();
        for (dist, f) in inputs.iter().zip(&factors) {
            dist.sample_into(&mut rng, f.as_ref(), &mut row);
        }
        if matches!(problem.function, TestFunction::MorokoffCaflisch { .. }) {
            for v in row.iter_mut() {
                if !(0.0..=1.0).contains(v) {
                    clamped += 1;
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
        for (k, v) in row.iter().enumerate() {
            x[(i, k)] = *v;
        }
    }
    if clamped > 0 {
        warn!("{clamped} sampled coordinates fell outside the unit cube and were clamped");
    }
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        g[i] = problem.function.eval(&xi)?;
    }
    let mut y = g.clone();
    for i in 0..n {
        let sd = problem.noise.sd_at(&x.row(i).iter().copied().collect::<Vec<_>>());
        if sd > 0.0 {
            y[i] += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((x, y, g))
}

/// Per-column affine map x ↦ (x - mean) / sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Moments {
    Known(Vec<(f64, f64)>),
    /// Column means and population (1/n) standard deviations.
    Empirical,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, moments: &Moments) -> Result<Self> {
        let (mean, sd): (Vec<f64>, Vec<f64>) = match moments {
            Moments::Known(m) => {
                if m.len() != x.ncols() {
                    return Err(Error::DimensionMismatch { expected: x.ncols(), got: m.len() });
                }
                m.iter().copied().unzip()
            }
            Moments::Empirical => x
                .column_iter()
                .map(|c| {
                    let n = c.len() as f64;
                    let mu = c.sum() / n;
                    let var = c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                    (mu, var.sqrt())
                })
                .unzip(),
        };
        if let Some(k) = sd.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Data(format!("column {k} has zero variance")));
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.ncols() });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| (x[(i, k)] - self.mean[k]) / self.sd[k]))
    }
}

/// Standardizes `x` and returns the transform so it can be replayed on test inputs.
pub fn standardize(x: &DMatrix<f64>, moments: &Moments) -> Result<(DMatrix<f64>, Standardizer)> {
    let t = Standardizer::fit(x, moments)?;
    Ok((t.apply(x)?, t))
}

/// Input laws of the seven steam-generator clogging-code features.
pub fn clogging_code_inputs() -> Vec<InputDistribution> {
    use InputDistribution::*;
    vec![
        Normal { mean: 101.6, sd: 4.0 },
        Normal { mean: 0.0233, sd: 0.0005 },
        Triangular { a: 0.2, b: 0.3, c: 0.5 },
        Triangular { a: 0.01, b: 0.05, c: 0.3 },
        Triangular { a: 0.5e-6, b: 5.0e-6, c: 10.0e-6 },
        Triangular { a: 1.0e-9, b: 4.5e-9, c: 8.0e-9 },
        Triangular { a: 0.1e-4, b: 7.8e-4, c: 12.0e-4 },
    ]
}
