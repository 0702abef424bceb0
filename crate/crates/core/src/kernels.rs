//! Matérn covariance functions and Gram-matrix assembly.
//!
//! The regularity parameter is restricted to half-integers ν = p + 1/2, for
//! which the Matérn kernel reduces to a polynomial of degree p times an
//! exponential:
//!
//! ```text
//! k(r) = σ² · exp(-√(2ν) r) · p!/(2p)! · Σ_{i=0..p} (p+i)! / (i! (p-i)!) · (2√(2ν) r)^(p-i)
//! ```
//!
//! so no Bessel function is ever evaluated. Distances are scaled per input
//! dimension, `r = ‖(x - x') / θ‖`; a single-entry θ is isotropic and applies
//! to every dimension.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-integer Matérn regularity ν = p + 1/2, stored as p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Nu(u32);

impl Nu {
    pub const HALF: Nu = Nu(0);
    pub const THREE_HALVES: Nu = Nu(1);
    pub const FIVE_HALVES: Nu = Nu(2);

    /// ν = p + 1/2.
    pub fn from_order(p: u32) -> Self {
        Nu(p)
    }

    pub fn order(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 + 0.5
    }
}

impl TryFrom<f64> for Nu {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        let p = v - 0.5;
        if v.is_finite() && p >= 0.0 && p.fract() == 0.0 && p < 64.0 {
            Ok(Nu(p as u32))
        } else {
            Err(Error::InvalidParameter(format!(
                "nu must be a positive half-integer (2k+1)/2, got {v}"
            )))
        }
    }
}

impl From<Nu> for f64 {
    fn from(nu: Nu) -> f64 {
        nu.value()
    }
}

impl fmt::Display for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2", 2 * self.0 + 1)
    }
}

/// How the nugget σ_ε enters the diagonal of the Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuggetMode {
    /// K + σ_ε·I, the literal form of the regularized covariance.
    #[default]
    SdOnDiagonal,
    /// K + σ_ε²·I, the reading where σ_ε is a noise standard deviation.
    VarianceOnDiagonal,
}

impl NuggetMode {
    pub fn diagonal_term(self, nugget: f64) -> f64 {
        match self {
            NuggetMode::SdOnDiagonal => nugget,
            NuggetMode::VarianceOnDiagonal => nugget * nugget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub nu: Nu,
    pub sigma2: f64,
    /// Length scales; one entry means isotropic.
    pub theta: Vec<f64>,
    pub nugget: f64,
    #[serde(default)]
    pub nugget_mode: NuggetMode,
}

impl KernelSpec {
    pub fn new(nu: Nu, sigma2: f64, theta: Vec<f64>, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            nu,
            sigma2,
            theta,
            nugget,
            nugget_mode: NuggetMode::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn isotropic(nu: Nu, sigma2: f64, theta: f64, nugget: f64) -> Result<Self> {
        Self::new(nu, sigma2, vec![theta], nugget)
    }

    pub fn with_nugget_mode(mut self, mode: NuggetMode) -> Self {
        self.nugget_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.theta.is_empty() || self.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "every length scale must be positive, got {:?}",
                self.theta
            )));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be non-negative, got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    /// The value added to the Gram diagonal for the nugget.
    pub fn diagonal_nugget(&self) -> f64 {
        self.nugget_mode.diagonal_term(self.nugget)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.theta.len() == 1 || self.theta.len() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: d,
            })
        }
    }

    #[inline]
    fn scale(&self, k: usize) -> f64 {
        if self.theta.len() == 1 {
            self.theta[0]
        } else {
            self.theta[k]
        }
    }

    fn scaled_distance<'a>(
        &self,
        a: impl Iterator<Item = &'a f64>,
        b: impl Iterator<Item = &'a f64>,
    ) -> f64 {
        a.zip(b)
            .enumerate()
            .map(|(k, (u, v))| {
                let z = (u - v) / self.scale(k);
                z * z
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Covariance as a function of the scaled distance r ≥ 0.
    pub fn correlation_at(&self, r: f64) -> f64 {
        self.sigma2 * matern_profile(self.nu, r)
    }
}

/// Unit-variance Matérn correlation at scaled distance r.
pub fn matern_profile(nu: Nu, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let s = (2.0 * nu.value()).sqrt() * r;
    match nu.order() {
        0 => (-s).exp(),
        1 => (1.0 + s) * (-s).exp(),
        2 => (1.0 + s + s * s / 3.0) * (-s).exp(),
        p => {
            // p!/(2p)! Σ (p+i)!/(i!(p-i)!) (2s)^(p-i), evaluated by Horner in 2s.
            let p = p as usize;
            let mut coeffs = vec![0.0; p + 1];
            // coefficient of (2s)^(p-i), normalized by p!/(2p)!
            for (i, c) in coeffs.iter_mut().enumerate() {
                *c = ln_factorial(p + i) - ln_factorial(i) - ln_factorial(p - i)
                    + ln_factorial(p)
                    - ln_factorial(2 * p);
            }
            let t = 2.0 * s;
            // highest power first: i = 0 carries (2s)^p
            let mut acc = 0.0;
            for c in coeffs.iter() {
                acc = acc * t + c.exp();
            }
            acc * (-s).exp()
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("point coordinates"))
    }
}

/// k(x, x') for two points.
pub fn matern_eval(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> Result<f64> {
    if x.len() != xp.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: xp.len(),
        });
    }
    spec.check_dim(x.len())?;
    check_finite(x)?;
    check_finite(xp)?;
    let r = spec.scaled_distance(x.iter(), xp.iter());
    Ok(spec.correlation_at(r))
}

fn check_points(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<()> {
    spec.check_dim(points.ncols())?;
    if points.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("point coordinates"))
    }
}

/// Gram matrix over the rows of `points`, optionally with the nugget on the diagonal.
pub fn gram_matrix(spec: &KernelSpec, points: &DMatrix<f64>, with_nugget: bool) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InsufficientData("gram matrix needs at least one point".into()));
    }
    check_points(spec, points)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.sigma2;
        for j in 0..i {
            let r = spec.scaled_distance(rows[i].iter(), rows[j].iter());
            let v = spec.correlation_at(r);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if with_nugget {
        let eps = spec.diagonal_nugget();
        for i in 0..n {
            k[(i, i)] += eps;
        }
    }
    Ok(k)
}

/// Vector of k(x, X_i) over the rows of `points`; never includes the nugget.
pub fn cross_vector(spec: &KernelSpec, points: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
    if points.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            got: x.len(),
        });
    }
    check_points(spec, points)?;
    check_finite(x)?;
    Ok(DVector::from_iterator(
        points.nrows(),
        (0..points.nrows()).map(|i| spec.correlation_at(spec.scaled_distance(points.row(i).iter(), x.iter()))),
    ))
}

/// Cross-covariance matrix with entry (i, j) = k(X_i, Z_j).
pub fn cross_matrix(spec: &KernelSpec, points: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if points.ncols() != queries.ncols() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            got: queries.ncols(),
        });
    }
    check_points(spec, points)?;
    check_points(spec, queries)?;
    let n = points.nrows();
    let m = queries.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
    let mut out = DMatrix::zeros(n, m);
    for j in 0..m {
        let q: Vec<f64> = queries.row(j).iter().copied().collect();
        for (i, row) in rows.iter().enumerate() {
            out[(i, j)] = spec.correlation_at(spec.scaled_distance(row.iter(), q.iter()));
        }
    }
    Ok(out)
}
