//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

/// ln of the Matérn correlation through K_ν(z) = ∫₀^∞ e^{-z cosh t} cosh(νt) dt,
/// integrated by the trapezoidal rule with the e^{-z} factor pulled out.
pub fn ln_matern_bessel(nu: f64, r: f64) -> f64 {
    let z = (2.0 * nu).sqrt() * r;
    let h = 0.01;
    // the integrand is below e^{-740} of its peak past this point
    let t_max = (1.0 + 745.0 / z).acosh() + 1.0;
    let steps = (t_max / h).ceil() as usize;
    let f = |t: f64| (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    for k in 1..=steps {
        sum += f(k as f64 * h);
    }
    let ln_k = -z + (sum * h).ln();
    (1.0 - nu) * 2f64.ln() - ln_gamma(nu) + nu * z.ln() + ln_k
}

/// ⌈(1-α)(n+1)⌉-th smallest with α = j/100, by sorting and integer arithmetic.
pub fn naive_plus(v: &[f64], j: usize) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((100 - j) * (v.len() + 1)).div_ceil(100);
    if k > v.len() {
        f64::INFINITY
    } else {
        s[k - 1]
    }
}

/// ⌊α(n+1)⌋-th smallest with α = j/100.
pub fn naive_minus(v: &[f64], j: usize) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = j * (v.len() + 1) / 100;
    if k == 0 {
        f64::NEG_INFINITY
    } else {
        s[k - 1]
    }
}
