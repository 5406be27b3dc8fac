//! Run configuration (JSON file with exhaustive key validation) and run
//! manifests. Precedence is flag > file > built-in default; every run
//! writes a manifest, on success and on failure alike.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autoencoder::Activation;
use crate::capacity::{Method, SweepScenario};
use crate::dagmm::{DagmmArch, DagmmHyper};
use crate::error::{Error, Result};
use crate::gmm::EmOptions;
use crate::linkbudget::{effective_channel, LinkBudget, LinkDerivation};
use crate::noise::{ChannelConfig, HqnParams};

fn d_lambda() -> f64 {
    3.0
}
fn d_r_max() -> usize {
    6
}
fn d_sigma_cl() -> f64 {
    1.0
}
fn d_t_coeff() -> f64 {
    0.7785
}
fn d_sigma_x() -> f64 {
    2.0
}
fn d_beta_rec() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub lambda: f64,
    pub r_max: usize,
    pub mu_cl: f64,
    pub sigma_cl: f64,
    /// Direct channel parameters; mutually exclusive with `link`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSection>,
    /// Physical link budget resolved into an effective channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkSection>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            lambda: d_lambda(),
            r_max: d_r_max(),
            mu_cl: 0.0,
            sigma_cl: d_sigma_cl(),
            channel: None,
            link: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub t_coeff: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
    pub beta_rec: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            t_coeff: d_t_coeff(),
            mu_x: 0.0,
            sigma_x: d_sigma_x(),
            beta_rec: d_beta_rec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub altitude: f64,
    pub beam_waist: f64,
    pub wavelength: f64,
    pub rx_aperture: f64,
    pub tx_aperture: f64,
    pub eta_det: f64,
    pub nu_ele: f64,
    pub epsilon_excess: f64,
    pub beta_rec: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            altitude: 2.0e7,
            beam_waist: 0.05,
            wavelength: 8.0e-7,
            rx_aperture: 0.15,
            tx_aperture: 0.15,
            eta_det: 0.606,
            nu_ele: 0.041,
            epsilon_excess: 0.005,
            beta_rec: d_beta_rec(),
            mu_x: 0.0,
            sigma_x: d_sigma_x(),
        }
    }
}

impl LinkSection {
    pub fn budget(&self) -> LinkBudget {
        LinkBudget {
            altitude: self.altitude,
            beam_waist: self.beam_waist,
            wavelength: self.wavelength,
            rx_aperture: self.rx_aperture,
            tx_aperture: self.tx_aperture,
            eta_det: self.eta_det,
            nu_ele: self.nu_ele,
            epsilon_excess: self.epsilon_excess,
            beta_rec: self.beta_rec,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    /// Cluster count for the 3-D benchmark generator.
    pub k: usize,
    pub n: usize,
    pub warp: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            k: 3,
            n: 2000,
            warp: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmSection {
    fn default() -> Self {
        EmSection {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

impl EmSection {
    pub fn options(&self, seed: u64) -> EmOptions {
        EmOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
            floor: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DagmmSection {
    pub encoder_sizes: Vec<usize>,
    pub activation: Activation,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_step: f64,
    pub lambda_tilde: f64,
    pub rho_tilde: f64,
    pub outer_iters: usize,
    pub net_steps_per_outer: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for DagmmSection {
    fn default() -> Self {
        let arch = DagmmArch::default();
        let hyper = DagmmHyper::default();
        DagmmSection {
            encoder_sizes: arch.encoder_sizes,
            activation: arch.activation,
            pretrain_epochs: arch.pretrain_epochs,
            pretrain_batch: arch.pretrain_batch,
            pretrain_step: arch.pretrain_step,
            lambda_tilde: hyper.lambda_tilde,
            rho_tilde: hyper.rho_tilde,
            outer_iters: hyper.outer_iters,
            net_steps_per_outer: hyper.net_steps_per_outer,
            step: hyper.step,
            tol: hyper.tol,
        }
    }
}

impl DagmmSection {
    pub fn arch(&self) -> DagmmArch {
        DagmmArch {
            encoder_sizes: self.encoder_sizes.clone(),
            activation: self.activation,
            pretrain_epochs: self.pretrain_epochs,
            pretrain_batch: self.pretrain_batch,
            pretrain_step: self.pretrain_step,
        }
    }

    pub fn hyper(&self, r_count: usize, seed: u64) -> DagmmHyper {
        DagmmHyper {
            lambda_tilde: self.lambda_tilde,
            rho_tilde: self.rho_tilde,
            r_count,
            outer_iters: self.outer_iters,
            net_steps_per_outer: self.net_steps_per_outer,
            step: self.step,
            tol: self.tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Mixture size.
    pub r: usize,
    pub em: EmSection,
    pub dagmm: DagmmSection,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            r: 3,
            em: EmSection::default(),
            dagmm: DagmmSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// SNR grid in dB, strictly increasing.
    pub grid_db: Vec<f64>,
    pub methods: Vec<String>,
    /// Monte Carlo samples per entropy estimate.
    pub mc_samples: usize,
    /// Noise samples per grid point for the fitted methods.
    pub fit_samples: usize,
    /// Mixture size for the fitted methods.
    pub r: usize,
    /// Encoder layout for the 1-D sweep fits.
    pub encoder_sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            methods: vec!["baseline".into(), "gmm".into(), "dagmm".into()],
            mc_samples: 200_000,
            fit_samples: 4000,
            r: 7,
            encoder_sizes: vec![1, 4, 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub gen: GenSection,
    pub fit: FitSection,
    pub sweep: SweepSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Parse and validate a config document, reporting the offending key path
/// for unknown or ill-typed keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().to_string();
        // For unknown keys serde reports the parent struct; append the
        // offending field so the full path is named.
        let loc = match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
            Some(field) if path != "." => format!("{path}.{field}"),
            Some(field) => field.to_string(),
            None => path,
        };
        Error::Config(format!("{loc}: {msg}"))
    })?;
    if cfg.scenario.channel.is_some() && cfg.scenario.link.is_some() {
        return Err(Error::Config(
            "scenario: specify either `channel` or `link`, not both".into(),
        ));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Fully resolved physical scenario, derived once per run.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub hqn: HqnParams,
    pub channel: ChannelConfig,
    pub beta_rec: f64,
    pub derivation: Option<LinkDerivation>,
}

impl RunConfig {
    pub fn resolve_scenario(&self) -> Result<ResolvedScenario> {
        let base = HqnParams {
            lambda: self.scenario.lambda,
            r_max: self.scenario.r_max,
            mu_cl: self.scenario.mu_cl,
            sigma_cl: self.scenario.sigma_cl,
        };
        base.validate()?;
        if let Some(link) = &self.scenario.link {
            let (channel, hqn, derivation) =
                effective_channel(&link.budget(), &base, link.mu_x, link.sigma_x)?;
            Ok(ResolvedScenario {
                hqn,
                channel,
                beta_rec: link.beta_rec,
                derivation: Some(derivation),
            })
        } else {
            let ch = self.scenario.channel.clone().unwrap_or_default();
            let channel = ChannelConfig {
                t_coeff: ch.t_coeff,
                mu_x: ch.mu_x,
                sigma_x: ch.sigma_x,
            };
            channel.validate()?;
            Ok(ResolvedScenario {
                hqn: base,
                channel,
                beta_rec: ch.beta_rec,
                derivation: None,
            })
        }
    }

    /// Config with optional sections materialized, as recorded in the
    /// manifest.
    pub fn materialized(&self) -> RunConfig {
        let mut cfg = self.clone();
        if cfg.scenario.link.is_none() && cfg.scenario.channel.is_none() {
            cfg.scenario.channel = Some(ChannelSection::default());
        }
        cfg
    }

    pub fn sweep_methods(&self) -> Result<Vec<Method>> {
        self.sweep
            .methods
            .iter()
            .map(|m| match m.as_str() {
                "baseline" => Ok(Method::Baseline),
                "gmm" => Ok(Method::Gmm),
                "dagmm" => Ok(Method::Dagmm),
                other => Err(Error::Config(format!(
                    "sweep.methods: unknown method '{other}'"
                ))),
            })
            .collect()
    }

    pub fn sweep_scenario(&self, seed: u64) -> Result<SweepScenario> {
        let resolved = self.resolve_scenario()?;
        let mut arch = self.fit.dagmm.arch();
        arch.encoder_sizes = self.sweep.encoder_sizes.clone();
        Ok(SweepScenario {
            hqn: resolved.hqn,
            t_coeff: resolved.channel.t_coeff,
            mu_x: resolved.channel.mu_x,
            beta_rec: resolved.beta_rec,
            fit_samples: self.sweep.fit_samples,
            r_fit: self.sweep.r,
            em: self.fit.em.options(seed),
            dagmm_arch: arch,
            dagmm_hyper: self.fit.dagmm.hyper(self.sweep.r, seed),
        })
    }
}

/// Record of a completed (or failed) run: resolved inputs, derived
/// quantities, timings, and output digests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Where each overridable value came from: flag, file, or default.
    pub precedence: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived: Option<LinkDerivation>,
    pub timings_s: BTreeMap<String, f64>,
    /// Relative output path -> sha256 digest.
    pub outputs: BTreeMap<String, String>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Non-fatal issues (e.g. per-point sweep failures).
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &RunConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: config.materialized(),
            precedence: BTreeMap::new(),
            derived: None,
            timings_s: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: "incomplete".into(),
            error: None,
            notes: Vec::new(),
            timestamp: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
