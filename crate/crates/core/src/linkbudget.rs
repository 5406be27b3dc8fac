//! Conversion of physical satellite link parameters into an effective
//! channel configuration and effective noise parameters.
//!
//! Free-space loss uses a Gaussian-beam diffraction model; detector
//! efficiency multiplies power transmissivity, and electronic/excess noise
//! add to the classical noise variance (standard CV-QKD conventions).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::noise::{ChannelConfig, HqnParams};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Link distance in meters (altitude; no slant-path geometry).
    pub altitude: f64,
    /// Beam waist w0 in meters.
    pub beam_waist: f64,
    /// Optical wavelength in meters.
    pub wavelength: f64,
    /// Receiver aperture radius in meters.
    pub rx_aperture: f64,
    /// Transmitter aperture radius in meters (provenance only).
    pub tx_aperture: f64,
    /// Detection efficiency in (0, 1].
    pub eta_det: f64,
    /// Electronic noise variance (shot-noise units).
    pub nu_ele: f64,
    /// Excess noise (shot-noise units).
    pub epsilon_excess: f64,
    /// Reconciliation efficiency in (0, 1].
    pub beta_rec: f64,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("altitude", self.altitude),
            ("beam_waist", self.beam_waist),
            ("wavelength", self.wavelength),
            ("rx_aperture", self.rx_aperture),
            ("tx_aperture", self.tx_aperture),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("eta_det", self.eta_det), ("beta_rec", self.beta_rec)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must be in (0,1], got {v}")));
            }
        }
        for (name, v) in [("nu_ele", self.nu_ele), ("epsilon_excess", self.epsilon_excess)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Free-space power transmissivity from Gaussian-beam diffraction:
/// the receiver aperture captures 1 - exp(-2 a_r^2 / w(L)^2) of the beam.
pub fn far_field_transmissivity(link: &LinkBudget) -> Result<f64> {
    link.validate()?;
    let z_r = PI * link.beam_waist * link.beam_waist / link.wavelength;
    let spread = link.altitude / z_r;
    let w_l = link.beam_waist * (1.0 + spread * spread).sqrt();
    let ratio = link.rx_aperture / w_l;
    Ok(-(-2.0 * ratio * ratio).exp_m1())
}

/// Every intermediate value derived from the link budget, recorded in the
/// run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDerivation {
    pub rayleigh_range_m: f64,
    pub beam_radius_at_rx_m: f64,
    pub tau_fs: f64,
    pub t_coeff: f64,
    pub sigma_cl_in: f64,
    pub sigma_cl_eff: f64,
    pub nu_ele: f64,
    pub epsilon_excess: f64,
    pub beta_rec: f64,
}

/// Fold detection efficiency and free-space loss into the transmission
/// coefficient, and electronic/excess noise into the classical noise
/// variance: T = sqrt(eta_det * tau_fs), sigma_eff^2 = sigma_cl^2 + nu + eps.
pub fn effective_channel(
    link: &LinkBudget,
    base: &HqnParams,
    mu_x: f64,
    sigma_x: f64,
) -> Result<(ChannelConfig, HqnParams, LinkDerivation)> {
    base.validate()?;
    let tau_fs = far_field_transmissivity(link)?;
    let t_coeff = (link.eta_det * tau_fs).sqrt();
    let sigma_eff =
        (base.sigma_cl * base.sigma_cl + link.nu_ele + link.epsilon_excess).sqrt();
    let z_r = PI * link.beam_waist * link.beam_waist / link.wavelength;
    let spread = link.altitude / z_r;
    let derivation = LinkDerivation {
        rayleigh_range_m: z_r,
        beam_radius_at_rx_m: link.beam_waist * (1.0 + spread * spread).sqrt(),
        tau_fs,
        t_coeff,
        sigma_cl_in: base.sigma_cl,
        sigma_cl_eff: sigma_eff,
        nu_ele: link.nu_ele,
        epsilon_excess: link.epsilon_excess,
        beta_rec: link.beta_rec,
    };
    let config = ChannelConfig {
        t_coeff,
        mu_x,
        sigma_x,
    };
    let params = HqnParams {
        sigma_cl: sigma_eff,
        ..*base
    };
    config.validate()?;
    Ok((config, params, derivation))
}
