//! Leave-one-out posteriors of a GP, the substrate of every cross-conformal
//! estimator.
//!
//! In closed-form mode nothing is refit. With A = K_ε⁻¹, w = A y and
//! c(x) = A k(x), the posterior with point i removed satisfies
//!
//! ```text
//! ĝ₋ᵢ(x)  = ĝ(x)  - cᵢ(x) wᵢ / Aᵢᵢ
//! γ₋ᵢ²(x) = γ²(x) + cᵢ(x)² / Aᵢᵢ
//! ```
//!
//! which at x = Xᵢ gives the usual residual yᵢ - ĝ₋ᵢ(Xᵢ) = wᵢ / Aᵢᵢ and
//! γ₋ᵢ²(Xᵢ) = 1/Aᵢᵢ - ε (ε being everything added to the Gram diagonal).
//! One factorization and one solve against the test cross-covariances cover
//! all n folds.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit, FittedGp, MleSettings, Nugget};
use crate::kernels::{cross_matrix, Nu};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooMode {
    /// Re-optimize hyperparameters in every fold.
    RetrainFull,
    /// Refit every fold with the full-data hyperparameters.
    RetrainFixedHyper,
    /// Inverse-Gram identities on the full factorization; same result as
    /// `RetrainFixedHyper` up to round-off.
    #[default]
    ClosedForm,
}

impl fmt::Display for LooMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LooMode::RetrainFull => "retrain_full",
            LooMode::RetrainFixedHyper => "retrain_fixed_hyper",
            LooMode::ClosedForm => "closed_form",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LooEnsemble {
    pub nu: Nu,
    /// |yᵢ - ĝ₋ᵢ(Xᵢ)|.
    pub loo_residual: Vec<f64>,
    /// γ₋ᵢ(Xᵢ).
    pub loo_std_at_train: Vec<f64>,
    /// |yᵢ - ĝ₋ᵢ(Xᵢ)| / max(δ, γ₋ᵢ(Xᵢ)^β).
    pub loo_score_gamma: Vec<f64>,
    /// n × m, entry (i, j) = ĝ₋ᵢ(X*ⱼ).
    pub loo_mean_at_test: DMatrix<f64>,
    /// n × m, entry (i, j) = γ₋ᵢ(X*ⱼ).
    pub loo_std_at_test: DMatrix<f64>,
    pub beta_power: f64,
    pub delta: f64,
    pub mode: LooMode,
}

pub(crate) fn weight(std: f64, beta: f64, delta: f64) -> f64 {
    delta.max(std.powf(beta))
}

impl LooEnsemble {
    /// Assembles an ensemble from precomputed LOO quantities and derives the
    /// Gaussian scores for (β, δ).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        nu: Nu,
        loo_residual: Vec<f64>,
        loo_std_at_train: Vec<f64>,
        loo_mean_at_test: DMatrix<f64>,
        loo_std_at_test: DMatrix<f64>,
        beta_power: f64,
        delta: f64,
        mode: LooMode,
    ) -> Self {
        let loo_score_gamma = loo_residual
            .iter()
            .zip(&loo_std_at_train)
            .map(|(r, s)| r / weight(*s, beta_power, delta))
            .collect();
        LooEnsemble {
            nu,
            loo_residual,
            loo_std_at_train,
            loo_score_gamma,
            loo_mean_at_test,
            loo_std_at_test,
            beta_power,
            delta,
            mode,
        }
    }

    /// Same folds, different (β, δ).
    pub fn with_weighting(&self, beta_power: f64, delta: f64) -> Result<Self> {
        check_weighting(beta_power, delta)?;
        Ok(Self::from_parts(
            self.nu,
            self.loo_residual.clone(),
            self.loo_std_at_train.clone(),
            self.loo_mean_at_test.clone(),
            self.loo_std_at_test.clone(),
            beta_power,
            delta,
            self.mode,
        ))
    }

    pub fn n_train(&self) -> usize {
        self.loo_residual.len()
    }

    pub fn n_test(&self) -> usize {
        self.loo_mean_at_test.ncols()
    }

    /// max(δ, γ₋ᵢ(X*ⱼ)^β).
    pub fn test_weight(&self, i: usize, j: usize) -> f64 {
        weight(self.loo_std_at_test[(i, j)], self.beta_power, self.delta)
    }

    /// (n × m means, n × m stds).
    pub fn loo_prediction_grid(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.loo_mean_at_test, &self.loo_std_at_test)
    }
}

fn check_weighting(beta: f64, delta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

struct Fold {
    residual: f64,
    std_at_train: f64,
    mean_at_test: Vec<f64>,
    std_at_test: Vec<f64>,
}

fn row(x: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    x.rows(i, 1).into_owned()
}

fn without(x: &DMatrix<f64>, y: &DVector<f64>, i: usize) -> (DMatrix<f64>, DVector<f64>) {
    (x.clone().remove_row(i), y.clone().remove_row(i))
}

fn refit_fold(
    gp: &FittedGp,
    i: usize,
    test: &DMatrix<f64>,
    retrain: Option<&MleSettings>,
) -> Result<Fold> {
    let (xi, yi) = without(&gp.x_train, &gp.y_train, i);
    let fold_gp = match retrain {
        Some(settings) => {
            let settings = MleSettings { seed: settings.seed.wrapping_add(1 + i as u64), ..settings.clone() };
            let nugget = Nugget { value: gp.spec.nugget, mode: gp.spec.nugget_mode };
            fit(&xi, &yi, gp.spec.nu, nugget, &settings)?
        }
        None => FittedGp::condition(gp.spec.clone(), xi, yi)?,
    };
    let (m_train, s_train) = fold_gp.predict(&row(&gp.x_train, i))?;
    let (m_test, s_test) = fold_gp.predict(test)?;
    Ok(Fold {
        residual: (gp.y_train[i] - m_train[0]).abs(),
        std_at_train: s_train[0],
        mean_at_test: m_test.as_slice().to_vec(),
        std_at_test: s_test.as_slice().to_vec(),
    })
}

fn closed_form_folds(gp: &FittedGp, test: &DMatrix<f64>) -> Result<Vec<Fold>> {
    let n = gp.n_train();
    let a = gp.factor.chol.inverse();
    let eps = gp.spec.diagonal_nugget() + gp.factor.jitter;
    let kx = cross_matrix(&gp.spec, &gp.x_train, test)?;
    let c = gp.factor.chol.solve(&kx);
    let mean: Vec<f64> = kx.tr_mul(&gp.weights).iter().copied().collect();
    let var: Vec<f64> = (0..test.nrows())
        .map(|j| gp.spec.sigma2 - kx.column(j).dot(&c.column(j)))
        .collect();
    let mut folds = Vec::with_capacity(n);
    for i in 0..n {
        let aii = a[(i, i)];
        if !(aii > 0.0 && aii.is_finite()) {
            return Err(Error::Factorization { jitter: gp.factor.jitter });
        }
        let wi = gp.weights[i];
        let mean_at_test = (0..test.nrows()).map(|j| mean[j] - c[(i, j)] * wi / aii).collect();
        let std_at_test = (0..test.nrows())
            .map(|j| (var[j] + c[(i, j)] * c[(i, j)] / aii).max(0.0).sqrt())
            .collect();
        folds.push(Fold {
            residual: (wi / aii).abs(),
            std_at_train: (1.0 / aii - eps).max(0.0).sqrt(),
            mean_at_test,
            std_at_test,
        });
    }
    Ok(folds)
}

/// LOO ensemble of an already fitted GP, evaluated at the rows of `test`.
pub fn loo_from_fitted(
    gp: &FittedGp,
    test: &DMatrix<f64>,
    beta: f64,
    delta: f64,
    mode: LooMode,
    settings: &MleSettings,
) -> Result<LooEnsemble> {
    check_weighting(beta, delta)?;
    let n = gp.n_train();
    if n < 2 {
        return Err(Error::InsufficientData(format!("LOO needs at least 2 points, got {n}")));
    }
    if test.ncols() != gp.x_train.ncols() {
        return Err(Error::DimensionMismatch { expected: gp.x_train.ncols(), got: test.ncols() });
    }
    let folds = match mode {
        LooMode::ClosedForm => closed_form_folds(gp, test)?,
        LooMode::RetrainFixedHyper => par::map_range(n, |i| refit_fold(gp, i, test, None))
            .into_iter()
            .collect::<Result<_>>()?,
        LooMode::RetrainFull => par::map_range(n, |i| refit_fold(gp, i, test, Some(settings)))
            .into_iter()
            .collect::<Result<_>>()?,
    };
    let m = test.nrows();
    let mean = DMatrix::from_fn(n, m, |i, j| folds[i].mean_at_test[j]);
    let std = DMatrix::from_fn(n, m, |i, j| folds[i].std_at_test[j]);
    Ok(LooEnsemble::from_parts(
        gp.spec.nu,
        folds.iter().map(|f| f.residual).collect(),
        folds.iter().map(|f| f.std_at_train).collect(),
        mean,
        std,
        beta,
        delta,
        mode,
    ))
}

/// Fits the full GP by maximum likelihood, then builds its LOO ensemble.
#[allow(clippy::too_many_arguments)]
pub fn build_loo_ensemble(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    nu: Nu,
    nugget: impl Into<Nugget>,
    settings: &MleSettings,
    test: &DMatrix<f64>,
    beta: f64,
    delta: f64,
    mode: LooMode,
) -> Result<(FittedGp, LooEnsemble)> {
    let gp = fit(x, y, nu, nugget, settings)?;
    let loo = loo_from_fitted(&gp, test, beta, delta, mode, settings)?;
    Ok((gp, loo))
}
