//! Densities and posterior expectations of the per-point Student's-t mixture.
//!
//! Every component shares one isotropic covariance `σ² I₃`, one degree of
//! freedom `v` and the membership weight `1/(M-1)`. Densities are combined in
//! log space.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Dimension of the data space.
pub const DIM: usize = 3;
const D: f64 = DIM as f64;

/// Natural log of the gamma function for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log Σ exp(values)`, exact for an all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// Shared covariance and tail parameter of the mixture components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    sigma2: f64,
    dof: f64,
}

impl MixtureParams {
    pub fn new(sigma2: f64, dof: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(
                "sigma2 must be positive and finite",
            ));
        }
        if !(dof > 0.0) {
            return Err(Error::InvalidParameter(
                "degrees of freedom must be positive",
            ));
        }
        Ok(Self { sigma2, dof })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn dim(&self) -> usize {
        DIM
    }
}

/// Log-density of the isotropic t-distribution as a function of the squared
/// Mahalanobis distance, with the normalizing constant precomputed.
#[derive(Debug, Clone, Copy)]
pub struct TLogDensity {
    log_norm: f64,
    half_v_plus_d: f64,
    dof: f64,
}

impl TLogDensity {
    pub fn new(params: &MixtureParams) -> Self {
        let v = params.dof;
        let log_norm = ln_gamma((v + D) / 2.0)
            - ln_gamma(v / 2.0)
            - D / 2.0 * libm::log(PI * v)
            - D / 2.0 * libm::log(params.sigma2);
        Self {
            log_norm,
            half_v_plus_d: (v + D) / 2.0,
            dof: v,
        }
    }

    #[inline]
    pub fn eval(&self, delta2: f64) -> f64 {
        self.log_norm - self.half_v_plus_d * libm::log1p(delta2 / self.dof)
    }
}

/// Log-density of `N(μ, σ² I₃)` as a function of the squared Mahalanobis distance.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLogDensity {
    log_norm: f64,
}

impl GaussianLogDensity {
    pub fn new(sigma2: f64) -> Self {
        Self {
            log_norm: -D / 2.0 * libm::log(2.0 * PI * sigma2),
        }
    }

    #[inline]
    pub fn eval(&self, delta2: f64) -> f64 {
        self.log_norm - 0.5 * delta2
    }
}

pub fn gaussian_log_pdf(x: &Point3, mu: &Point3, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter("sigma2 must be positive"));
    }
    let delta2 = (x - mu).norm_squared() / sigma2;
    Ok(GaussianLogDensity::new(sigma2).eval(delta2))
}

pub fn t_log_pdf(x: &Point3, mu: &Point3, params: &MixtureParams) -> f64 {
    let delta2 = (x - mu).norm_squared() / params.sigma2;
    TLogDensity::new(params).eval(delta2)
}

/// Gamma density with shape `alpha` and rate `beta`; zero for `u <= 0`.
pub fn gamma_pdf(u: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidParameter(
            "gamma shape and rate must be positive",
        ));
    }
    if u <= 0.0 {
        return Ok(0.0);
    }
    let log = alpha * libm::log(beta) + (alpha - 1.0) * libm::log(u) - beta * u - ln_gamma(alpha);
    Ok(libm::exp(log))
}

/// Equal-weight mixture density `(1/(M-1)) Σ_j f_T(x; c_j, σ², v)`.
pub fn mixture_density(x: &Point3, centroids: &[Point3], params: &MixtureParams) -> Result<f64> {
    if centroids.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let kernel = TLogDensity::new(params);
    let logs: Vec<f64> = centroids
        .iter()
        .map(|c| kernel.eval((x - c).norm_squared() / params.sigma2))
        .collect();
    Ok(libm::exp(
        log_sum_exp(&logs) - libm::log(centroids.len() as f64),
    ))
}

/// Component responsibilities `P_j = f_T(x; c_j) / Σ_h f_T(x; c_h)`.
pub fn posterior_z(x: &Point3, centroids: &[Point3], params: &MixtureParams) -> Result<Vec<f64>> {
    if centroids.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let kernel = TLogDensity::new(params);
    let mut logs: Vec<f64> = centroids
        .iter()
        .map(|c| kernel.eval((x - c).norm_squared() / params.sigma2))
        .collect();
    normalize_log_weights(&mut logs);
    Ok(logs)
}

/// Turns log-weights into probabilities in place.
pub fn normalize_log_weights(logs: &mut [f64]) {
    let total = log_sum_exp(logs);
    for v in logs.iter_mut() {
        *v = libm::exp(*v - total);
    }
}

/// `U = (v + d) / (v + Δ²)`.
pub fn expected_u(delta2: f64, params: &MixtureParams) -> Result<f64> {
    if !(delta2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "squared Mahalanobis distance must be >= 0",
        ));
    }
    Ok((params.dof + D) / (params.dof + delta2))
}

#[inline]
pub fn robust_posterior(posterior: f64, scale: f64) -> f64 {
    posterior * scale
}

/// One `(point, other view)` entry of the E-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTriple {
    /// Index of the centroid (nearest neighbour) in the other view.
    pub correspondence: usize,
    pub posterior: f64,
    pub scale_expectation: f64,
    pub robust_weight: f64,
}
