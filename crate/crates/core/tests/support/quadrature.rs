#![allow(dead_code)]

use stmmreg_core::stmm::{gamma_pdf, gaussian_log_pdf};
use stmmreg_core::Point3;

/// `∫ N(x; μ, σ²/u) Gamma(u; v/2, v/2) du` by composite Simpson in `s = ln u`.
pub fn scale_mixture(x: &Point3, mu: &Point3, sigma2: f64, dof: f64) -> f64 {
    let (lo, hi) = (-60.0, 8.0);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let f = |s: f64| {
        let u = s.exp();
        let g = gaussian_log_pdf(x, mu, sigma2 / u).unwrap().exp();
        g * gamma_pdf(u, dof / 2.0, dof / 2.0).unwrap() * u
    };
    let mut sum = f(lo) + f(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + k as f64 * h);
    }
    sum * h / 3.0
}
