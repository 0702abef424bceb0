//! Evaluation protocol: coverage, width, width–error Spearman correlation with
//! bootstrap, predictivity, and the Beta soft coverage threshold used for
//! model selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{IntervalSet, Method};
use crate::error::{Error, Result};
use crate::gp::check_alpha;
use crate::kernels::Nu;
use crate::par;
use crate::stats::{average_ranks, beta_quantile, pearson, percentile_sorted};

/// One row of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: Method,
    pub nu: Nu,
    pub beta_power: Option<f64>,
    pub alpha: f64,
    pub coverage: f64,
    /// Mean width over the finite-width test points; `None` if there are none.
    pub avg_width: Option<f64>,
    pub width_infinite_count: usize,
    /// Spearman correlation on the full test set.
    pub spearman: Option<f64>,
    pub spearman_median: Option<f64>,
    pub spearman_ci: Option<(f64, f64)>,
    pub bootstrap_degenerate: usize,
    #[serde(default)]
    pub bootstrap_samples: Vec<f64>,
    pub q2: f64,
    pub mse: f64,
    pub soft_threshold: f64,
    pub passes_soft_threshold: bool,
}

impl EvalRecord {
    pub fn confidence(&self) -> f64 {
        1.0 - self.alpha
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, got: b })
    }
}

/// Fraction of test targets inside their closed interval.
pub fn empirical_coverage(intervals: &IntervalSet, y_test: &[f64]) -> Result<f64> {
    check_len(intervals.len(), y_test.len())?;
    if y_test.is_empty() {
        return Err(Error::InsufficientData("coverage needs at least one test point".into()));
    }
    let hits = y_test.iter().enumerate().filter(|(j, y)| intervals.contains(*j, **y)).count();
    Ok(hits as f64 / y_test.len() as f64)
}

/// Mean of the finite widths and the number of infinite ones.
pub fn average_width(intervals: &IntervalSet) -> (Option<f64>, usize) {
    let widths = intervals.widths();
    let finite: Vec<f64> = widths.iter().copied().filter(|w| w.is_finite()).collect();
    let infinite = widths.len() - finite.len();
    if finite.is_empty() {
        (None, infinite)
    } else {
        (Some(finite.iter().sum::<f64>() / finite.len() as f64), infinite)
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 3 {
        return Err(Error::NotComputable(format!("need at least 3 pairs, got {}", a.len())));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::NotComputable("zero rank variance".into()))
}

/// Width/error pairs with infinite widths dropped.
fn finite_pairs(intervals: &IntervalSet, abs_errors: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(intervals.len(), abs_errors.len())?;
    Ok(intervals
        .widths()
        .into_iter()
        .zip(abs_errors)
        .filter(|(w, _)| w.is_finite())
        .map(|(w, e)| (w, *e))
        .unzip())
}

/// Spearman correlation between interval widths and absolute errors, over
/// finite-width points.
pub fn spearman_width_error(intervals: &IntervalSet, abs_errors: &[f64]) -> Result<f64> {
    let (w, e) = finite_pairs(intervals, abs_errors)?;
    spearman(&w, &e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpearman {
    pub median: f64,
    /// 2.5 and 97.5 percentiles.
    pub ci: (f64, f64),
    pub samples: Vec<f64>,
    /// Resamples skipped for zero rank variance.
    pub degenerate: usize,
}

/// Bootstrap distribution of the Spearman correlation over test points.
/// Resample `b` draws its indices from ChaCha8 seeded with `seed` on stream `b`.
pub fn bootstrap_spearman(intervals: &IntervalSet, abs_errors: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapSpearman> {
    if n_boot == 0 {
        return Err(Error::InvalidParameter("n_boot must be at least 1".into()));
    }
    let (w, e) = finite_pairs(intervals, abs_errors)?;
    let m = w.len();
    if m < 3 {
        return Err(Error::NotComputable(format!("need at least 3 finite pairs, got {m}")));
    }
    let draws: Vec<Option<f64>> = par::map_range(n_boot, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut ws = Vec::with_capacity(m);
        let mut es = Vec::with_capacity(m);
        for _ in 0..m {
            let k = rng.gen_range(0..m);
            ws.push(w[k]);
            es.push(e[k]);
        }
        pearson(&average_ranks(&ws), &average_ranks(&es))
    });
    let samples: Vec<f64> = draws.iter().flatten().copied().collect();
    let degenerate = n_boot - samples.len();
    if samples.is_empty() {
        return Err(Error::NotComputable("every bootstrap resample was degenerate".into()));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapSpearman {
        median: percentile_sorted(&sorted, 0.5),
        ci: (percentile_sorted(&sorted, 0.025), percentile_sorted(&sorted, 0.975)),
        samples,
        degenerate,
    })
}

/// 1 - Σ(y - ŷ)² / Σ(y - ȳ)², with ȳ the test-set mean.
pub fn predictivity_q2(y_test: &[f64], predictions: &[f64]) -> Result<f64> {
    check_len(y_test.len(), predictions.len())?;
    if y_test.len() < 2 {
        return Err(Error::InsufficientData("Q2 needs at least 2 test points".into()));
    }
    let mean = y_test.iter().sum::<f64>() / y_test.len() as f64;
    let ss_tot: f64 = y_test.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::NotComputable("test targets have zero variance".into()));
    }
    let ss_res: f64 = y_test.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(y_test: &[f64], predictions: &[f64]) -> Result<f64> {
    check_len(y_test.len(), predictions.len())?;
    if y_test.is_empty() {
        return Err(Error::InsufficientData("MSE of an empty test set".into()));
    }
    Ok(y_test.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / y_test.len() as f64)
}

/// υ-quantile of Beta(n+1-l, l) with l = ⌊(n+1)α⌋: the coverage an interval
/// must reach on the test set to count as valid. For l = 0 the law is a point
/// mass at 1 and the threshold falls back to 1 - α.
pub fn beta_soft_threshold(n_train: usize, alpha: f64, upsilon: f64) -> Result<f64> {
    if n_train == 0 {
        return Err(Error::InvalidParameter("n_train must be at least 1".into()));
    }
    check_alpha(alpha)?;
    if !(upsilon > 0.0 && upsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("upsilon must lie in (0, 1), got {upsilon}")));
    }
    let l = crate::conformal::q_minus_rank(n_train, alpha);
    if l == 0 {
        return Ok(1.0 - alpha);
    }
    beta_quantile((n_train + 1 - l) as f64, l as f64, upsilon)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the record list of the narrowest passing record.
    pub min_width: Option<usize>,
    /// Index of the passing record with the highest bootstrap median Spearman.
    pub max_spearman: Option<usize>,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.min_width.is_none() && self.max_spearman.is_none()
    }
}

/// Among records at `alpha` that pass the soft threshold, the narrowest one
/// and the best-correlated one. Records with infinite widths cannot win on
/// width.
pub fn select_best(records: &[EvalRecord], alpha: f64) -> Selection {
    let passing = || {
        records
            .iter()
            .enumerate()
            .filter(move |(_, r)| (r.alpha - alpha).abs() < 1e-12 && r.passes_soft_threshold)
    };
    let min_width = passing()
        .filter(|(_, r)| r.width_infinite_count == 0)
        .filter_map(|(i, r)| r.avg_width.map(|w| (i, w)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let max_spearman = passing()
        .filter_map(|(i, r)| r.spearman_median.map(|s| (i, s)))
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i);
    Selection { min_width, max_spearman }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn intervals(lower: Vec<f64>, upper: Vec<f64>) -> IntervalSet {
        IntervalSet::new(lower, upper, Method::JackknifePlus, 0.1, Nu::HALF, None)
    }

    fn widths_as_intervals(w: &[f64]) -> IntervalSet {
        intervals(vec![0.0; w.len()], w.to_vec())
    }

    #[test]
    fn coverage_examples() {
        let inf = intervals(vec![f64::NEG_INFINITY; 3], vec![f64::INFINITY; 3]);
        assert_eq!(empirical_coverage(&inf, &[0.0, 1e9, -3.0]).unwrap(), 1.0);
        let iv = intervals(vec![0.5; 3], vec![1.5; 3]);
        assert!((empirical_coverage(&iv, &[0.0, 1.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let y = [0.3, -2.0, 7.0];
        let deg = intervals(y.to_vec(), y.to_vec());
        assert_eq!(empirical_coverage(&deg, &y).unwrap(), 1.0);
        assert!(empirical_coverage(&deg, &[1.0]).is_err());
    }

    #[test]
    fn average_width_excludes_infinite() {
        let iv = intervals(vec![0.0, f64::NEG_INFINITY, 1.0], vec![2.0, 1.0, 5.0]);
        assert_eq!(average_width(&iv), (Some(3.0), 1));
    }

    #[test]
    fn spearman_examples() {
        let e = [0.1, 0.5, 0.7, 2.0];
        assert!((spearman_width_error(&widths_as_intervals(&[1.0, 2.0, 3.0, 4.0]), &e).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_width_error(&widths_as_intervals(&[4.0, 3.0, 2.0, 1.0]), &e).unwrap() + 1.0).abs() < 1e-15);
        let r = spearman_width_error(&widths_as_intervals(&[1.0, 2.0, 2.0, 4.0]), &[1.0, 3.0, 3.0, 5.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_not_computable() {
        assert!(matches!(
            spearman_width_error(&widths_as_intervals(&[1.0, 1.0, 1.0]), &[1.0, 2.0, 3.0]),
            Err(Error::NotComputable(_))
        ));
        let iv = intervals(vec![0.0, 0.0, f64::NEG_INFINITY], vec![1.0, 2.0, 0.0]);
        assert!(matches!(spearman_width_error(&iv, &[1.0, 2.0, 3.0]), Err(Error::NotComputable(_))));
    }

    #[test]
    fn bootstrap_monotone_is_one() {
        let w: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let e: Vec<f64> = (0..20).map(|i| (i as f64).powi(3)).collect();
        let b = bootstrap_spearman(&widths_as_intervals(&w), &e, 200, 7).unwrap();
        assert!(b.samples.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!((b.ci.0 - 1.0).abs() < 1e-12 && (b.ci.1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let w: Vec<f64> = (0..30).map(|i| ((i * 7919) % 31) as f64).collect();
        let e: Vec<f64> = (0..30).map(|i| ((i * 104729) % 37) as f64).collect();
        let iv = widths_as_intervals(&w);
        let a = bootstrap_spearman(&iv, &e, 1, 11).unwrap();
        let b = bootstrap_spearman(&iv, &e, 1, 11).unwrap();
        assert_eq!(a.samples.len(), 1);
        assert_eq!(a.samples[0].to_bits(), b.samples[0].to_bits());
        let c = bootstrap_spearman(&iv, &e, 50, 11).unwrap();
        // stream b of the longer run equals stream b of any other run
        assert_eq!(c.samples[0].to_bits(), a.samples[0].to_bits());
    }

    #[test]
    fn bootstrap_median_near_point_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
            let e: Vec<f64> = w.iter().map(|x| x + 0.5 * rng.gen::<f64>()).collect();
            let iv = widths_as_intervals(&w);
            let point = spearman_width_error(&iv, &e).unwrap();
            let b = bootstrap_spearman(&iv, &e, 999, rng.gen()).unwrap();
            assert!((b.median - point).abs() <= 0.15, "{} vs {}", b.median, point);
        }
    }

    #[test]
    fn q2_and_mse() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(predictivity_q2(&y, &y).unwrap(), 1.0);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        let mean = 7.0 / 3.0;
        assert!(predictivity_q2(&y, &[mean; 3]).unwrap().abs() < 1e-15);
        assert_eq!(predictivity_q2(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(predictivity_q2(&[1.0, 1.0], &[1.0, 0.0]), Err(Error::NotComputable(_))));
        assert!(predictivity_q2(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn soft_threshold_degenerate_and_errors() {
        // (n+1)α < 1 → l = 0
        assert_eq!(beta_soft_threshold(5, 0.1, 0.1).unwrap(), 0.9);
        assert!(beta_soft_threshold(0, 0.1, 0.1).is_err());
        assert!(beta_soft_threshold(10, 1.0, 0.1).is_err());
        assert!(beta_soft_threshold(10, 0.1, 0.0).is_err());
    }

    #[test]
    fn soft_threshold_spot_values() {
        let t = beta_soft_threshold(167, 0.1, 0.1).unwrap();
        assert!((t - 0.875).abs() <= 0.001, "{t}");
        let t = beta_soft_threshold(450, 0.1, 0.1).unwrap();
        assert!((t - 0.882).abs() <= 0.001, "{t}");
        let t = beta_soft_threshold(450, 0.01, 0.1).unwrap();
        assert!((t - 0.985).abs() <= 0.001, "{t}");
    }

    fn record(alpha: f64, width: f64, spear: f64, pass: bool) -> EvalRecord {
        EvalRecord {
            method: Method::JplusGp,
            nu: Nu::HALF,
            beta_power: Some(1.0),
            alpha,
            coverage: 0.9,
            avg_width: Some(width),
            width_infinite_count: 0,
            spearman: Some(spear),
            spearman_median: Some(spear),
            spearman_ci: Some((spear, spear)),
            bootstrap_degenerate: 0,
            bootstrap_samples: vec![],
            q2: 0.9,
            mse: 0.1,
            soft_threshold: 0.88,
            passes_soft_threshold: pass,
        }
    }

    #[test]
    fn selection_cases() {
        let one = [record(0.1, 3.0, 0.7, true)];
        assert_eq!(select_best(&one, 0.1), Selection { min_width: Some(0), max_spearman: Some(0) });

        let none = [record(0.1, 3.0, 0.7, false), record(0.05, 1.0, 0.9, true)];
        assert!(select_best(&none, 0.1).is_empty());

        let two = [record(0.1, 3.0, 0.7, true), record(0.1, 2.5, 0.4, true)];
        assert_eq!(select_best(&two, 0.1), Selection { min_width: Some(1), max_spearman: Some(0) });

        let mut inf = record(0.1, 0.5, 0.1, true);
        inf.width_infinite_count = 3;
        let with_inf = [record(0.1, 3.0, 0.7, true), inf];
        assert_eq!(select_best(&with_inf, 0.1).min_width, Some(0));
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_transform(
            pairs in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0), 3..40)
        ) {
            let (w, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(r) = spearman(&w, &e) {
                let w2: Vec<f64> = w.iter().map(|x| x.ln() * 3.0 + 1.0).collect();
                let e2: Vec<f64> = e.iter().map(|x| x.powi(3)).collect();
                let r2 = spearman(&w2, &e2).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }
    }
}
