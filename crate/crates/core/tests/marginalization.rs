//! The t density as a Gaussian scale mixture, checked by quadrature, and its
//! normalization, checked by Monte Carlo.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmmreg_core::stmm::{t_log_pdf, MixtureParams};
use stmmreg_core::Point3;
use support::quadrature::scale_mixture;

#[test]
fn gaussian_gamma_integral_reproduces_t_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for dof in [2.0, 3.0, 5.0, 10.0] {
        for _ in 0..20 {
            let mu = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let x = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let sigma2 = rng.gen_range(0.1..3.0);
            let quad = scale_mixture(&x, &mu, sigma2, dof);
            let closed = t_log_pdf(&x, &mu, &MixtureParams::new(sigma2, dof).unwrap()).exp();
            let rel = (quad - closed).abs() / closed;
            assert!(rel < 1e-6, "v={dof} rel={rel:e}");
        }
    }
}

#[test]
fn t_density_integrates_to_one() {
    // Importance sampling with a product of standard Cauchy proposals.
    let params = MixtureParams::new(1.0, 3.0).unwrap();
    let mu = Point3::origin();
    let mut rng = ChaCha8Rng::seed_from_u64(1_000_000);
    let n = 1_000_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let mut q = 1.0;
        let mut c = [0.0; 3];
        for v in &mut c {
            let w: f64 = rng.gen_range(0.0..1.0);
            *v = (std::f64::consts::PI * (w - 0.5)).tan();
            q *= 1.0 / (std::f64::consts::PI * (1.0 + *v * *v));
        }
        let x = Point3::new(c[0], c[1], c[2]);
        sum += t_log_pdf(&x, &mu, &params).exp() / q;
    }
    let integral = sum / n as f64;
    assert!((integral - 1.0).abs() < 0.01, "integral = {integral}");
}
