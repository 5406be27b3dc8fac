//! Hybrid quantum noise: a truncated-Poisson photon component plus
//! classical additive Gaussian noise, and the channel Y = T*X + Z built
//! on top of it.

use nalgebra::{DMatrix, DVector};
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GmmModel};
use crate::rng::{derive_seed, rng_from};

/// Parameters of the hybrid noise Z = Z1 + Z2 where Z1 is a Poisson photon
/// count truncated at `r_max` and Z2 is Gaussian.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HqnParams {
    /// Mean photon count per pulse.
    pub lambda: f64,
    /// Poisson truncation order; the mixture has `r_max + 1` components.
    pub r_max: usize,
    /// Classical noise mean.
    pub mu_cl: f64,
    /// Classical noise standard deviation.
    pub sigma_cl: f64,
}

impl HqnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.sigma_cl > 0.0 && self.sigma_cl.is_finite()) {
            return Err(Error::Domain(format!(
                "sigma_cl must be > 0, got {}",
                self.sigma_cl
            )));
        }
        if !self.mu_cl.is_finite() {
            return Err(Error::Domain("mu_cl must be finite".into()));
        }
        Ok(())
    }

    /// Total truncated Poisson mass sum_{i=0}^{R} e^-l l^i / i!.
    pub fn truncated_mass(&self) -> f64 {
        (0..=self.r_max)
            .map(|i| poisson_weight(self.lambda, i).unwrap_or(0.0))
            .sum()
    }

    /// Mean of the Poisson component conditioned on value <= r_max.
    pub fn truncated_poisson_mean(&self) -> f64 {
        let mass = self.truncated_mass();
        (0..=self.r_max)
            .map(|i| i as f64 * poisson_weight(self.lambda, i).unwrap_or(0.0))
            .sum::<f64>()
            / mass
    }
}

/// Channel Y = T*X + Z with Gaussian-modulated input X ~ N(mu_x, sigma_x^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Amplitude transmission coefficient; power transmissivity is T^2.
    pub t_coeff: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_coeff) {
            return Err(Error::Domain(format!(
                "t_coeff must be in [0,1], got {}",
                self.t_coeff
            )));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return Err(Error::Domain(format!(
                "sigma_x must be > 0, got {}",
                self.sigma_x
            )));
        }
        Ok(())
    }
}

/// Poisson weight e^-lambda lambda^i / i!, computed in log space.
pub fn poisson_weight(lambda: f64, i: usize) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(if i == 0 { 1.0 } else { 0.0 });
    }
    let ln_w = -lambda + i as f64 * lambda.ln() - ln_gamma(i as f64 + 1.0);
    Ok(ln_w.exp())
}

/// Univariate hybrid-noise mixture: component i has weight e^-l l^i/i!,
/// mean mu_cl + i, variance sigma_cl^2. Weights are left unnormalized
/// (they sum to the truncated Poisson mass).
pub fn hqn_gmm_1d(params: &HqnParams) -> Result<GmmModel> {
    hqn_gmm_nd(params, 1)
}

/// Multivariate embedding: component i has mean (mu_cl + i) * ones(D) and
/// isotropic covariance sigma_cl^2 * I, reducing to the 1-D mixture on
/// each coordinate.
pub fn hqn_gmm_nd(params: &HqnParams, dim: usize) -> Result<GmmModel> {
    params.validate()?;
    if dim == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let var = params.sigma_cl * params.sigma_cl;
    let components = (0..=params.r_max)
        .map(|i| {
            Ok(GaussianComponent {
                weight: poisson_weight(params.lambda, i)?,
                mean: DVector::from_element(dim, params.mu_cl + i as f64),
                covariance: DMatrix::identity(dim, dim) * var,
            })
        })
        .collect::<Result<_>>()?;
    GmmModel::new(components, false)
}

/// Draw `n` scalar noise samples: truncated Poisson (rejection) plus
/// Gaussian classical noise. Deterministic for a fixed seed.
pub fn sample_hqn(params: &HqnParams, n: usize, seed: u64) -> Result<DVector<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    let normal = rand_distr::Normal::new(params.mu_cl, params.sigma_cl)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let poisson = if params.lambda > 0.0 {
        Some(rand_distr::Poisson::new(params.lambda).map_err(|e| Error::Domain(e.to_string()))?)
    } else {
        None
    };
    let mut out = DVector::zeros(n);
    for k in 0..n {
        let photons = match &poisson {
            Some(p) => loop {
                let draw: f64 = p.sample(&mut rng);
                if draw <= params.r_max as f64 {
                    break draw;
                }
            },
            None => 0.0,
        };
        out[k] = photons + normal.sample(&mut rng);
    }
    Ok(out)
}

/// Push input samples through the channel: y_k = T*x_k + z_k.
pub fn simulate_channel(
    config: &ChannelConfig,
    params: &HqnParams,
    x: &DVector<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::Domain("input sample vector is empty".into()));
    }
    let z = sample_hqn(params, x.len(), derive_seed(seed, 0x686e /* hqn */))?;
    Ok(x * config.t_coeff + z)
}

/// Analytic mixture of the received signal Y = T*X + Z for Gaussian
/// modulation: component r has the Poisson weight, mean T*mu_x + mu_cl + r,
/// variance T^2 sigma_x^2 + sigma_cl^2.
pub fn received_pdf(config: &ChannelConfig, params: &HqnParams) -> Result<GmmModel> {
    config.validate()?;
    params.validate()?;
    let var = config.t_coeff * config.t_coeff * config.sigma_x * config.sigma_x
        + params.sigma_cl * params.sigma_cl;
    let components = (0..=params.r_max)
        .map(|r| {
            Ok(GaussianComponent {
                weight: poisson_weight(params.lambda, r)?,
                mean: DVector::from_element(
                    1,
                    config.t_coeff * config.mu_x + params.mu_cl + r as f64,
                ),
                covariance: DMatrix::from_element(1, 1, var),
            })
        })
        .collect::<Result<_>>()?;
    GmmModel::new(components, false)
}
