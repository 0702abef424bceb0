//! Acceptance criteria 1–11. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line. Positional arguments select criteria
//! by number, e.g. `cargo test --test acceptance -- 2 3`.

mod common;

use std::time::Instant;

use conformal_gp::bench::{sample_doe, InputDistribution, Noise, Standardizer, SyntheticProblem, TestFunction};
use conformal_gp::conformal::{
    jackknife, jackknife_minmax, jackknife_plus, jminmax_gp, jminmax_gp_literal, jplus_gp, q_minus, q_plus, IntervalSet,
};
use conformal_gp::experiment::{run_experiment, ExperimentConfig, ProblemSource};
use conformal_gp::gp::{fit, FittedGp, MleSettings, Nugget};
use conformal_gp::kernels::{gram_matrix, matern_profile, KernelSpec, Nu, NuggetMode};
use conformal_gp::loo::{loo_from_fitted, LooEnsemble, LooMode};
use conformal_gp::conformal::Method;
use conformal_gp::metrics::beta_soft_threshold;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{ln_matern_bessel, naive_minus, naive_plus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome, f64); 11] = [
        (1, "Beta soft thresholds match the reference table", c1_soft_thresholds, 1.0),
        (2, "J+GP marginal coverage", c2_jplus_gp_coverage, 300.0),
        (3, "J-minmax-GP marginal coverage", c3_jminmax_gp_coverage, 300.0),
        (4, "zero-nugget fits interpolate", c4_interpolation, f64::INFINITY),
        (5, "half-integer closed forms match Bessel form", c5_kernel_oracle, f64::INFINITY),
        (6, "closed-form LOO equals refits", c6_loo_equivalence, f64::INFINITY),
        (7, "quantile and Jackknife+ oracles", c7_quantile_oracle, f64::INFINITY),
        (8, "Morokoff predictivity", c8_morokoff_q2, 600.0),
        (9, "J+GP more adaptive than J+ under heteroskedastic noise", c9_adaptivity, f64::INFINITY),
        (10, "misspecified nugget lowers J-minmax-GP correlation", c10_misspecification, f64::INFINITY),
        (11, "nesting and monotonicity invariants", c11_invariants, f64::INFINITY),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut o = run();
        let secs = start.elapsed().as_secs_f64();
        if secs > budget {
            o.pass = false;
            o.detail.push_str(&format!("; exceeded the {budget:.0} s budget"));
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name} ({}) [{secs:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_soft_thresholds() -> Outcome {
    let table = [
        ("CPU", 167, [0.875, 0.931, 0.986]),
        ("Morokoff", 450, [0.882, 0.938, 0.985]),
        ("TPD", 800, [0.886, 0.940, 0.985]),
    ];
    let mut worst: f64 = 0.0;
    for (_, n, values) in table {
        for (alpha, want) in [0.1, 0.05, 0.01].into_iter().zip(values) {
            let got = beta_soft_threshold(n, alpha, 0.1).unwrap();
            worst = worst.max((got - want).abs());
        }
    }
    outcome(worst <= 0.001, format!("max deviation {worst:.2e} over 9 cells"))
}

/// Coverage of J+GP and J-minmax-GP at one fresh test point over 500 training
/// sets of n = 30 from sin(3x) + N(0, 0.1²).
fn coverage_replications() -> &'static (f64, f64) {
    use std::sync::OnceLock;
    static CACHE: OnceLock<(f64, f64)> = OnceLock::new();
    CACHE.get_or_init(|| {
        let reps = 500;
        let alpha = 0.2;
        let scaler = Standardizer { mean: vec![0.5], sd: vec![(1.0f64 / 12.0).sqrt()] };
        let mut hits_plus = 0;
        let mut hits_minmax = 0;
        for rep in 0..reps {
            let problem = SyntheticProblem {
                function: TestFunction::Sine { frequency: 3.0 },
                inputs: vec![InputDistribution::Uniform { a: 0.0, b: 1.0 }],
                noise: Noise::Constant(0.1),
                n_samples: 31,
                seed: 10_000 + rep,
            };
            let (x, y, _) = sample_doe(&problem).unwrap();
            let x = scaler.apply(&x).unwrap();
            let xt = x.rows(0, 30).into_owned();
            let yt = y.rows(0, 30).into_owned();
            let xs = x.rows(30, 1).into_owned();
            let ys = y[30];
            let settings = MleSettings { seed: rep, ..MleSettings::default() };
            let nugget = Nugget { value: 0.1, mode: NuggetMode::VarianceOnDiagonal };
            let gp = fit(&xt, &yt, Nu::THREE_HALVES, nugget, &settings).unwrap();
            let loo = loo_from_fitted(&gp, &xs, 1.0, 1e-6, LooMode::ClosedForm, &settings).unwrap();
            if jplus_gp(&loo, alpha).contains(0, ys) {
                hits_plus += 1;
            }
            if jminmax_gp(&loo, alpha).contains(0, ys) {
                hits_minmax += 1;
            }
        }
        (hits_plus as f64 / reps as f64, hits_minmax as f64 / reps as f64)
    })
}

fn c2_jplus_gp_coverage() -> Outcome {
    let (cov, _) = *coverage_replications();
    outcome(
        // the 1 − 2α = 0.60 guarantee is implied by the 0.78 expectation
        cov >= 0.78,
        format!("coverage {cov:.3} over 500 replications at α = 0.2; bound 0.60, expected ≥ 0.78"),
    )
}

fn c3_jminmax_gp_coverage() -> Outcome {
    let (_, cov) = *coverage_replications();
    outcome(cov >= 0.77, format!("coverage {cov:.3} over 500 replications at α = 0.2; required ≥ 0.77"))
}

fn population_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn c4_interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 30;
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut violations = 0;
    for t in 0..trials {
        let n = [5, 10, 20, 40, 70, 100][t % 6];
        let d = 1 + t % 3;
        let nu = Nu::from_order((t / 3 % 3) as u32);
        let lim = 3f64.sqrt();
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-lim..lim));
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.5)).collect();
        let y = DVector::from_fn(n, |i, _| {
            let s: f64 = (0..d).map(|k| w[k] * x[(i, k)]).sum();
            s.sin() + 0.3 * (2.0 * x[(i, 0)]).cos() + rng.gen_range(-0.05..0.05)
        });
        let settings = MleSettings { n_restarts: 4, seed: t as u64, ..MleSettings::default() };
        let gp = fit(&x, &y, nu, 0.0, &settings).unwrap();
        let (mean, std) = gp.predict(&x).unwrap();
        let sd_y = population_sd(y.as_slice());
        let sigma = gp.spec.sigma2.sqrt();
        let em = (0..n).map(|i| (mean[i] - y[i]).abs()).fold(0.0, f64::max) / sd_y;
        let es = std.iter().copied().fold(0.0, f64::max) / sigma;
        worst_mean = worst_mean.max(em);
        worst_std = worst_std.max(es);
        if em > 1e-6 || es > 1e-6 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations}/{trials} fits violate; worst |mean - y|/sd(y) = {worst_mean:.2e}, worst std/σ = {worst_std:.2e}"
        ),
    )
}

fn c5_kernel_oracle() -> Outcome {
    let per_nu = 2500;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for p in 0..4u32 {
        let nu = Nu::from_order(p);
        for k in 0..per_nu {
            let r = 10f64.powf(-6.0 + k as f64 * (50f64.log10() + 6.0) / (per_nu - 1) as f64);
            let closed = matern_profile(nu, r);
            let oracle = ln_matern_bessel(nu.value(), r).exp();
            worst = worst.max(((closed - oracle) / oracle).abs());
            points += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{points} (ν, r) points, max relative error {worst:.2e}"))
}

fn loo_max_diff(a: &LooEnsemble, b: &LooEnsemble) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.n_train() {
        d = d.max((a.loo_residual[i] - b.loo_residual[i]).abs());
        d = d.max((a.loo_std_at_train[i] - b.loo_std_at_train[i]).abs());
    }
    d = d.max((&a.loo_mean_at_test - &b.loo_mean_at_test).amax());
    d.max((&a.loo_std_at_test - &b.loo_std_at_test).amax())
}

/// Largest condition number accepted for the LOO comparison. Beyond it the two
/// algorithms differ by round-off of order cond·ε_mach, which says nothing
/// about the identities themselves.
const MAX_CONDITION: f64 = 1e7;

fn c6_loo_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let problems = 50;
    let mut accepted = 0;
    let mut rejected = 0;
    let mut t = 0;
    while accepted < problems {
        t += 1;
        let n = rng.gen_range(3..=40);
        let d = rng.gen_range(1..=3);
        let nugget = if t % 2 == 0 { 0.0 } else { rng.gen_range(1e-3..0.2) };
        let spec = KernelSpec::isotropic(
            Nu::from_order(t % 3),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.2..1.0),
            nugget,
        )
        .unwrap();
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        let test = DMatrix::from_fn(10, d, |_, _| rng.gen_range(-2.0..2.0));
        let eig = gram_matrix(&spec, &x, true).unwrap().symmetric_eigenvalues();
        if eig.max() / eig.min() > MAX_CONDITION || eig.min() <= 0.0 {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let gp = FittedGp::condition(spec, x, y).unwrap();
        let s = MleSettings::default();
        let closed = loo_from_fitted(&gp, &test, 1.0, 1e-6, LooMode::ClosedForm, &s).unwrap();
        let refit = loo_from_fitted(&gp, &test, 1.0, 1e-6, LooMode::RetrainFixedHyper, &s).unwrap();
        worst = worst.max(loo_max_diff(&closed, &refit));
    }
    outcome(
        worst <= 1e-8,
        format!(
            "{problems} problems with cond(K) ≤ {MAX_CONDITION:.0e} ({rejected} worse-conditioned draws skipped), max deviation {worst:.2e}"
        ),
    )
}

fn random_ensemble(rng: &mut ChaCha8Rng, n: usize, m: usize, beta: f64, delta: f64) -> LooEnsemble {
    LooEnsemble::from_parts(
        Nu::THREE_HALVES,
        (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
        (0..n).map(|_| rng.gen_range(0.0..1.5)).collect(),
        DMatrix::from_fn(n, m, |_, _| rng.gen_range(-3.0..3.0)),
        DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.5)),
        beta,
        delta,
        LooMode::ClosedForm,
    )
}

fn c7_quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut checks = 0;
    for n in 1..=50 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        for j in 1..100 {
            let a = j as f64 / 100.0;
            checks += 2;
            if q_plus(&v, a).unwrap() != naive_plus(&v, j) {
                mismatches += 1;
            }
            if q_minus(&v, a).unwrap() != naive_minus(&v, j) {
                mismatches += 1;
            }
        }
    }
    for trial in 0..2000 {
        let n = 1 + trial % 6;
        let beta = [0.5, 1.0, 1.5][trial % 3];
        let delta = [1e-6, 0.1][trial % 2];
        let loo = random_ensemble(&mut rng, n, 3, beta, delta);
        let j = rng.gen_range(1..100);
        let alpha = j as f64 / 100.0;
        let jp = jackknife_plus(&loo, alpha);
        let jg = jplus_gp(&loo, alpha);
        for t in 0..3 {
            let mu: Vec<f64> = (0..n).map(|i| loo.loo_mean_at_test[(i, t)]).collect();
            let off_plain = loo.loo_residual.clone();
            let off_gp: Vec<f64> = (0..n)
                .map(|i| {
                    let score = loo.loo_residual[i] / delta.max(loo.loo_std_at_train[i].powf(beta));
                    score * delta.max(loo.loo_std_at_test[(i, t)].powf(beta))
                })
                .collect();
            for (iv, off) in [(&jp, &off_plain), (&jg, &off_gp)] {
                let lo: Vec<f64> = mu.iter().zip(off).map(|(m, o)| m - o).collect();
                let hi: Vec<f64> = mu.iter().zip(off).map(|(m, o)| m + o).collect();
                checks += 2;
                if iv.lower[t] != naive_minus(&lo, j) {
                    mismatches += 1;
                }
                if iv.upper[t] != naive_plus(&hi, j) {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in {checks} comparisons"))
}

fn morokoff_config(seed: u64, nugget: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ProblemSource::Synthetic(SyntheticProblem {
        function: TestFunction::MorokoffCaflisch { dim: 10 },
        inputs: Vec::new(),
        noise: Noise::Constant(1e-2),
        n_samples: 600,
        seed: 0,
    }));
    cfg.name = "Noisy Morokoff & Caflisch".into();
    cfg.seed = seed;
    cfg.nugget = nugget;
    cfg.train_fraction = 0.75;
    cfg
}

fn c8_morokoff_q2() -> Outcome {
    let mut cfg = morokoff_config(0, 1e-4);
    cfg.nu_grid = vec![Nu::THREE_HALVES, Nu::FIVE_HALVES];
    let report = run_experiment(&cfg).unwrap();
    let q2: Vec<f64> = report.branches.iter().map(|b| b.q2.unwrap_or(f64::NAN)).collect();
    let layout = report.records.len() == (3 + 2 * 3) * 2 * 3;
    outcome(
        q2.iter().all(|q| *q >= 0.88) && layout,
        format!("Q² = {:.4} (ν=3/2), {:.4} (ν=5/2); required ≥ 0.88; {} records", q2[0], q2[1], report.records.len()),
    )
}

fn c9_adaptivity() -> Outcome {
    let seeds = 30;
    let mut wins = 0;
    let mut diffs = Vec::new();
    for seed in 0..seeds {
        let mut cfg = ExperimentConfig::new(ProblemSource::Synthetic(SyntheticProblem {
            function: TestFunction::Sine { frequency: 3.0 },
            inputs: Vec::new(),
            noise: Noise::ProportionalToFirstInput(0.2),
            n_samples: 300,
            seed: 0,
        }));
        cfg.seed = seed;
        cfg.train_fraction = 1.0 / 3.0;
        // average noise variance E[(0.2x)²] on [0, 1]
        cfg.nugget = 0.04 / 3.0;
        cfg.nu_grid = vec![Nu::THREE_HALVES];
        cfg.beta_grid = vec![1.0];
        cfg.alpha_grid = vec![0.1];
        cfg.methods = vec![Method::JackknifePlus, Method::JplusGp];
        cfg.keep_bootstrap_samples = false;
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.metadata.n_train, 100);
        let jp = report.record(Method::JackknifePlus, Nu::THREE_HALVES, None, 0.1).unwrap();
        let jg = report.record(Method::JplusGp, Nu::THREE_HALVES, Some(1.0), 0.1).unwrap();
        let (a, b) = (jg.spearman_median.unwrap_or(f64::NEG_INFINITY), jp.spearman_median.unwrap_or(f64::NEG_INFINITY));
        if a > b {
            wins += 1;
        }
        diffs.push(a - b);
    }
    diffs.sort_by(f64::total_cmp);
    outcome(
        wins * 10 >= seeds * 8,
        format!("J+GP ahead in {wins}/{seeds} seeds (required ≥ 80%); median gap {:.3}", diffs[diffs.len() / 2]),
    )
}

fn c10_misspecification() -> Outcome {
    let seeds = 20;
    let mut wins = 0;
    let mut worst_q2_gap: f64 = 0.0;
    let mut ratios = Vec::new();
    let mut q2_gaps = Vec::new();
    for seed in 0..seeds {
        let mut rho = [0.0; 2];
        let mut q2 = [0.0; 2];
        for (k, nugget) in [1e-4, 1e-1].into_iter().enumerate() {
            let mut cfg = morokoff_config(seed, nugget);
            cfg.nu_grid = vec![Nu::FIVE_HALVES];
            cfg.beta_grid = vec![1.0];
            cfg.alpha_grid = vec![0.1];
            cfg.methods = vec![Method::JminmaxGp];
            cfg.mle.n_restarts = 3;
            cfg.keep_bootstrap_samples = false;
            let report = run_experiment(&cfg).unwrap();
            let r = report.record(Method::JminmaxGp, Nu::FIVE_HALVES, Some(1.0), 0.1).unwrap();
            rho[k] = r.spearman_median.unwrap_or(f64::NEG_INFINITY);
            q2[k] = r.q2;
        }
        if rho[0] > rho[1] {
            wins += 1;
        }
        worst_q2_gap = worst_q2_gap.max((q2[0] - q2[1]).abs());
        q2_gaps.push((q2[0] - q2[1]).abs());
        ratios.push(rho[0] / rho[1]);
    }
    ratios.sort_by(f64::total_cmp);
    q2_gaps.sort_by(f64::total_cmp);
    outcome(
        wins * 10 >= seeds * 8 && worst_q2_gap < 0.03,
        format!(
            "well-specified ahead in {wins}/{seeds} seeds (required ≥ 80%); max |ΔQ²| = {worst_q2_gap:.4} (required < 0.03), median {:.4}; median correlation ratio {:.2}",
            q2_gaps[q2_gaps.len() / 2],
            ratios[ratios.len() / 2]
        ),
    )
}

fn contains(outer: &IntervalSet, inner: &IntervalSet, j: usize) -> bool {
    outer.lower[j] <= inner.lower[j] && inner.upper[j] <= outer.upper[j]
}

fn c11_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let instances = 10_000;
    let mut violations = 0;
    let alphas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5];
    for t in 0..instances {
        let n = rng.gen_range(1..=40);
        let m = 3;
        let beta = [0.5, 1.0, 1.5, 2.0][t % 4];
        let delta = [1e-6, 0.05, 0.5][t % 3];
        let loo = random_ensemble(&mut rng, n, m, beta, delta);
        let full: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let build = |a: f64| {
            [
                jackknife(&full, &loo, a),
                jackknife_plus(&loo, a),
                jackknife_minmax(&loo, a),
                jplus_gp(&loo, a),
                jminmax_gp(&loo, a),
                jminmax_gp_literal(&loo, a),
            ]
        };
        let sets: Vec<_> = alphas.iter().map(|&a| build(a)).collect();
        for (k, s) in sets.iter().enumerate() {
            for j in 0..m {
                for iv in s.iter() {
                    if !(iv.lower[j] <= iv.upper[j]) {
                        violations += 1;
                    }
                }
                if !contains(&s[2], &s[1], j) || !contains(&s[4], &s[3], j) {
                    violations += 1;
                }
                if k + 1 < sets.len() {
                    for (wide, narrow) in s.iter().zip(sets[k + 1].iter()) {
                        if !contains(wide, narrow, j) {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over {instances} ensembles × {} α levels", alphas.len()))
}
