//! Box-constrained Nelder–Mead and Latin-hypercube start generation.
//!
//! Trial points are projected onto the box, so the simplex never leaves the
//! feasible region. After the simplex collapses, the search is restarted from
//! the best vertex with a fresh simplex until a restart stops improving.

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Convergence when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter (inf-norm) falls below this.
    pub x_tol: f64,
    /// Initial step as a fraction of each box side.
    pub initial_step: f64,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iters: 2000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.05,
            max_restarts: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Non-finite objective values are treated as +∞.
fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> f64 {
    *count += 1;
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn single_pass<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    start: &[f64],
    start_value: f64,
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
    count: &mut usize,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), start_value));
    for k in 0..dim {
        let mut v = start.to_vec();
        let step = opts.initial_step * (upper[k] - lower[k]);
        v[k] = if v[k] + step <= upper[k] { v[k] + step } else { v[k] - step };
        project(&mut v, lower, upper);
        let fv = eval(f, &v, count);
        simplex.push((v, fv));
    }

    for _ in 0..opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if worst.is_finite() { (worst - best).abs() } else { f64::INFINITY };
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(1.0);
        let fr = eval(f, &reflected, count);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(f, &expanded, count);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[dim].1 {
            let c = along(0.5);
            let fc = eval(f, &c, count);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = eval(f, &c, count);
            (c, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        // shrink towards the best vertex
        let best_x = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (x, b) in v.iter_mut().zip(&best_x) {
                *x = b + 0.5 * (*x - b);
            }
            *fv = eval(f, v, count);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}

/// Minimizes `f` over the box `[lower, upper]` starting from `start`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    assert_eq!(start.len(), lower.len());
    assert_eq!(start.len(), upper.len());
    let mut count = 0;
    let mut x = start.to_vec();
    project(&mut x, lower, upper);
    let mut value = eval(&mut f, &x, &mut count);
    if x.is_empty() {
        return Minimum { x, value, evaluations: count };
    }
    for _ in 0..=opts.max_restarts {
        let (nx, nv) = single_pass(&mut f, &x, value, lower, upper, opts, &mut count);
        let improved = nv < value - opts.f_tol * (1.0 + value.abs());
        if nv <= value {
            x = nx;
            value = nv;
        }
        if !improved {
            break;
        }
    }
    Minimum { x, value, evaluations: count }
}

/// `n` Latin-hypercube points in the box, one stratum per point and dimension.
pub fn latin_hypercube<R: Rng + ?Sized>(rng: &mut R, n: usize, lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..dim {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u = (s as f64 + rng.gen::<f64>()) / n as f64;
            p[k] = lower[k] + u * (upper[k] - lower[k]);
        }
    }
    points
}
