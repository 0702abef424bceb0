//! Empirical quantiles and cross-conformal interval constructors.
//!
//! `q_plus` is the ⌈(1-α)(n+1)⌉-th smallest value and `q_minus` the
//! ⌊α(n+1)⌋-th smallest; out-of-range indices give +∞ and -∞ respectively.
//! All constructors work from a [`LooEnsemble`], the leave-one-out means,
//! standard deviations and residuals of a GP.
//!
//! | method        | lower edge                                   | upper edge                                   |
//! |---------------|----------------------------------------------|----------------------------------------------|
//! | Jackknife     | ĝ(x) - q⁺{Rᵢ}                                | ĝ(x) + q⁺{Rᵢ}                                |
//! | Jackknife+    | q⁻{ĝ₋ᵢ(x) - Rᵢ}                              | q⁺{ĝ₋ᵢ(x) + Rᵢ}                              |
//! | J-minmax      | minᵢ ĝ₋ᵢ(x) - q⁺{Rᵢ}                         | maxᵢ ĝ₋ᵢ(x) + q⁺{Rᵢ}                         |
//! | J+GP          | q⁻{ĝ₋ᵢ(x) - Sᵢ·wᵢ(x)}                        | q⁺{ĝ₋ᵢ(x) + Sᵢ·wᵢ(x)}                        |
//! | J-minmax-GP   | minᵢ ĝ₋ᵢ(x) - q⁺{Sᵢ·wᵢ(x)}                   | maxᵢ ĝ₋ᵢ(x) + q⁺{Sᵢ·wᵢ(x)}                   |
//!
//! with Rᵢ the LOO residual, Sᵢ = Rᵢ / max(δ, γ₋ᵢ(Xᵢ)^β) the Gaussian score and
//! wᵢ(x) = max(δ, γ₋ᵢ(x)^β).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Nu;
use crate::loo::LooEnsemble;

/// Guards the index arithmetic against values like (1 - 0.7)·10 = 3.0000000000000004.
const INDEX_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Credibility,
    Jackknife,
    JackknifePlus,
    JackknifeMinmax,
    JplusGp,
    JminmaxGp,
    /// J-minmax-GP with the unweighted residual on the upper edge.
    JminmaxGpLiteral,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Credibility,
        Method::Jackknife,
        Method::JackknifePlus,
        Method::JackknifeMinmax,
        Method::JplusGp,
        Method::JminmaxGp,
        Method::JminmaxGpLiteral,
    ];

    /// Default benchmark grid.
    pub const DEFAULT: [Method; 5] = [
        Method::Credibility,
        Method::JackknifePlus,
        Method::JackknifeMinmax,
        Method::JplusGp,
        Method::JminmaxGp,
    ];

    /// Whether the method depends on the β power of the posterior std.
    pub fn is_gp_weighted(self) -> bool {
        matches!(self, Method::JplusGp | Method::JminmaxGp | Method::JminmaxGpLiteral)
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Credibility => "GP credibility intervals",
            Method::Jackknife => "Jackknife",
            Method::JackknifePlus => "J+",
            Method::JackknifeMinmax => "J-minmax",
            Method::JplusGp => "J+GP",
            Method::JminmaxGp => "J-minmax-GP",
            Method::JminmaxGpLiteral => "J-minmax-GP (literal)",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::Credibility => "credibility",
            Method::Jackknife => "jackknife",
            Method::JackknifePlus => "jackknife_plus",
            Method::JackknifeMinmax => "jackknife_minmax",
            Method::JplusGp => "jplus_gp",
            Method::JminmaxGp => "jminmax_gp",
            Method::JminmaxGpLiteral => "jminmax_gp_literal",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Per-test-point prediction intervals from one (method, ν, β, α) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub method: Method,
    pub alpha: f64,
    pub kernel_nu: Nu,
    pub beta_power: Option<f64>,
    pub contains_infinite: bool,
}

impl IntervalSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, method: Method, alpha: f64, kernel_nu: Nu, beta_power: Option<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        let contains_infinite = lower.iter().chain(&upper).any(|v| v.is_infinite());
        IntervalSet { lower, upper, method, alpha, kernel_nu, beta_power, contains_infinite }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, j: usize, y: f64) -> bool {
        self.lower[j] <= y && y <= self.upper[j]
    }
}

/// 1-based rank of q⁺: ⌈(1-α)(n+1)⌉.
pub fn q_plus_rank(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * (n as f64 + 1.0) - INDEX_SLACK).ceil().max(0.0) as usize
}

/// 1-based rank of q⁻: ⌊α(n+1)⌋.
pub fn q_minus_rank(n: usize, alpha: f64) -> usize {
    (alpha * (n as f64 + 1.0) + INDEX_SLACK).floor().max(0.0) as usize
}

fn kth_smallest(buf: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *v
}

fn q_plus_in_place(buf: &mut [f64], alpha: f64) -> f64 {
    let k = q_plus_rank(buf.len(), alpha);
    if k > buf.len() {
        f64::INFINITY
    } else if k == 0 {
        f64::NEG_INFINITY
    } else {
        kth_smallest(buf, k)
    }
}

fn q_minus_in_place(buf: &mut [f64], alpha: f64) -> f64 {
    let k = q_minus_rank(buf.len(), alpha);
    if k == 0 {
        f64::NEG_INFINITY
    } else if k > buf.len() {
        f64::INFINITY
    } else {
        kth_smallest(buf, k)
    }
}

/// The ⌈(1-α)(n+1)⌉-th smallest value, or +∞ when that exceeds n.
pub fn q_plus(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty list".into()));
    }
    Ok(q_plus_in_place(&mut values.to_vec(), alpha))
}

/// The ⌊α(n+1)⌋-th smallest value, or -∞ when that index is 0.
pub fn q_minus(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty list".into()));
    }
    Ok(q_minus_in_place(&mut values.to_vec(), alpha))
}

/// Standard Jackknife: full-model prediction ± q⁺ of the LOO residuals.
/// Carries no finite-sample coverage guarantee.
pub fn jackknife(full_mean_at_test: &[f64], loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let q = q_plus_in_place(&mut loo.loo_residual.clone(), alpha);
    let lower = full_mean_at_test.iter().map(|m| m - q).collect();
    let upper = full_mean_at_test.iter().map(|m| m + q).collect();
    IntervalSet::new(lower, upper, Method::Jackknife, alpha, loo.nu, None)
}

/// Generic Jackknife+ over per-fold offsets `offset(i, j)` at test point j.
fn plus_type(loo: &LooEnsemble, alpha: f64, offset: impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let n = loo.n_train();
    let m = loo.n_test();
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut lo_buf = vec![0.0; n];
    let mut hi_buf = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            let mu = loo.loo_mean_at_test[(i, j)];
            let o = offset(i, j);
            lo_buf[i] = mu - o;
            hi_buf[i] = mu + o;
        }
        lower.push(q_minus_in_place(&mut lo_buf, alpha));
        upper.push(q_plus_in_place(&mut hi_buf, alpha));
    }
    (lower, upper)
}

/// Generic min-max over per-fold offsets; `lower_offset`/`upper_offset` give
/// the candidate offsets for each edge.
fn minmax_type(
    loo: &LooEnsemble,
    alpha: f64,
    lower_offset: impl Fn(usize, usize) -> f64,
    upper_offset: impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = loo.n_train();
    let m = loo.n_test();
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut buf = vec![0.0; n];
    for j in 0..m {
        let col = loo.loo_mean_at_test.column(j);
        let lo_mu = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_mu = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = lower_offset(i, j);
        }
        lower.push(lo_mu - q_plus_in_place(&mut buf, alpha));
        for (i, b) in buf.iter_mut().enumerate() {
            *b = upper_offset(i, j);
        }
        upper.push(hi_mu + q_plus_in_place(&mut buf, alpha));
    }
    (lower, upper)
}

pub fn jackknife_plus(loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let (lower, upper) = plus_type(loo, alpha, |i, _| loo.loo_residual[i]);
    IntervalSet::new(lower, upper, Method::JackknifePlus, alpha, loo.nu, None)
}

pub fn jackknife_minmax(loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let r = |i: usize, _: usize| loo.loo_residual[i];
    let (lower, upper) = minmax_type(loo, alpha, r, r);
    IntervalSet::new(lower, upper, Method::JackknifeMinmax, alpha, loo.nu, None)
}

pub fn jplus_gp(loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let (lower, upper) = plus_type(loo, alpha, |i, j| loo.loo_score_gamma[i] * loo.test_weight(i, j));
    IntervalSet::new(lower, upper, Method::JplusGp, alpha, loo.nu, Some(loo.beta_power))
}

pub fn jminmax_gp(loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let s = |i: usize, j: usize| loo.loo_score_gamma[i] * loo.test_weight(i, j);
    let (lower, upper) = minmax_type(loo, alpha, s, s);
    IntervalSet::new(lower, upper, Method::JminmaxGp, alpha, loo.nu, Some(loo.beta_power))
}

/// J-minmax-GP exactly as sometimes displayed: weighted scores on the lower
/// edge, raw residuals times the test weight on the upper edge.
pub fn jminmax_gp_literal(loo: &LooEnsemble, alpha: f64) -> IntervalSet {
    let (lower, upper) = minmax_type(
        loo,
        alpha,
        |i, j| loo.loo_score_gamma[i] * loo.test_weight(i, j),
        |i, j| loo.loo_residual[i] * loo.test_weight(i, j),
    );
    IntervalSet::new(lower, upper, Method::JminmaxGpLiteral, alpha, loo.nu, Some(loo.beta_power))
}

/// Dispatches every LOO-based method. Credibility intervals come from the
/// full GP and are not handled here.
pub fn build_intervals(method: Method, full_mean_at_test: &[f64], loo: &LooEnsemble, alpha: f64) -> Option<IntervalSet> {
    match method {
        Method::Credibility => None,
        Method::Jackknife => Some(jackknife(full_mean_at_test, loo, alpha)),
        Method::JackknifePlus => Some(jackknife_plus(loo, alpha)),
        Method::JackknifeMinmax => Some(jackknife_minmax(loo, alpha)),
        Method::JplusGp => Some(jplus_gp(loo, alpha)),
        Method::JminmaxGp => Some(jminmax_gp(loo, alpha)),
        Method::JminmaxGpLiteral => Some(jminmax_gp_literal(loo, alpha)),
    }
}
