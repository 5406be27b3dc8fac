//! Monte-Carlo differential entropy and achievable-rate estimation for the
//! additive-noise channel under three noise models: the analytic hybrid
//! mixture, an EM-fitted mixture, and a DAGMM-fitted mixture.

use nalgebra::{DMatrix, DVector};
use rand_distr::Distribution;
use serde::Serialize;

use crate::dagmm::{fit_dagmm, latent_responsibilities, DagmmArch, DagmmHyper, DagmmState};
use crate::error::{Error, Result};
use crate::gmm::{
    self, fit_em, log_pdf, mixture_moments, EmOptions, GaussianComponent, GmmModel,
};
use crate::noise::{hqn_gmm_1d, sample_hqn, ChannelConfig, HqnParams};
use crate::rng::{derive_seed, derive_seed2, rng_from};

const LN_2: f64 = std::f64::consts::LN_2;
/// Clamp for log densities that underflow to zero.
const LOG_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

fn mean_stderr(values: &[f64]) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McEstimate {
        value: mean,
        stderr: (var / n).sqrt(),
    }
}

/// Differential entropy in nats: h = -E[ln f(Z)], Z drawn from the model.
pub fn entropy_mc(model: &GmmModel, n: usize, seed: u64) -> Result<McEstimate> {
    if n < 1000 {
        return Err(Error::Domain("entropy_mc needs n >= 1000".into()));
    }
    let normalized = model.renormalize();
    let samples = gmm::sample(&normalized, n, seed)?;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        terms.push(-log_pdf(&normalized, &samples.row(i).transpose())?);
    }
    Ok(mean_stderr(&terms))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CrossEntropy {
    pub value: f64,
    pub stderr: f64,
    /// Samples whose fitted density underflowed and was clamped.
    pub clamped: usize,
}

/// Cross entropy -E[ln f_hat(Z)] over held-out samples; by Gibbs'
/// inequality its expectation is at least the generator entropy, so lower
/// means a tighter noise-entropy bound.
pub fn cross_entropy_mc(true_samples: &DMatrix<f64>, fitted: &GmmModel) -> Result<CrossEntropy> {
    if true_samples.nrows() == 0 {
        return Err(Error::Domain("empty sample set".into()));
    }
    let mut clamped = 0;
    let mut terms = Vec::with_capacity(true_samples.nrows());
    for i in 0..true_samples.nrows() {
        let mut l = log_pdf(fitted, &true_samples.row(i).transpose())?;
        if l < LOG_FLOOR || !l.is_finite() {
            l = LOG_FLOOR;
            clamped += 1;
        }
        terms.push(-l);
    }
    let e = mean_stderr(&terms);
    Ok(CrossEntropy {
        value: e.value,
        stderr: e.stderr,
        clamped,
    })
}

/// 1-D mixture of Y = T*X + Z for X ~ N(mu_x, sigma_x^2) and Z distributed
/// as `noise`: shift means by T*mu_x, add T^2 sigma_x^2 to variances.
fn received_mixture(config: &ChannelConfig, noise: &GmmModel) -> Result<GmmModel> {
    if noise.dim != 1 {
        return Err(Error::Domain("capacity estimation needs a 1-D noise model".into()));
    }
    let shift = config.t_coeff * config.mu_x;
    let add_var = config.t_coeff * config.t_coeff * config.sigma_x * config.sigma_x;
    let components = noise
        .components
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight,
            mean: DVector::from_element(1, c.mean[0] + shift),
            covariance: DMatrix::from_element(1, 1, c.covariance[(0, 0)] + add_var),
        })
        .collect();
    GmmModel::new(components, noise.normalized)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CapacityEstimate {
    pub bits: f64,
    pub stderr: f64,
}

/// Mutual-information capacity of Y = T*X + Z under the supplied noise
/// model, C = (h(Y) - h(Z)) / ln 2 bits per channel use. Y samples are
/// drawn by pushing Gaussian inputs through the channel with noise drawn
/// from the model.
pub fn capacity_estimate(
    config: &ChannelConfig,
    noise: &GmmModel,
    n: usize,
    seed: u64,
) -> Result<CapacityEstimate> {
    config.validate()?;
    let noise = noise.renormalize();
    let y_model = received_mixture(config, &noise)?;
    let z = gmm::sample(&noise, n, derive_seed(seed, 1))?;
    let mut rng = rng_from(derive_seed(seed, 2));
    let mut y_terms = Vec::with_capacity(n);
    for i in 0..n {
        let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
        let x = config.mu_x + config.sigma_x * g;
        let y = DVector::from_element(1, config.t_coeff * x + z[(i, 0)]);
        y_terms.push(-log_pdf(&y_model, &y)?);
    }
    let h_y = mean_stderr(&y_terms);
    let h_z = entropy_mc(&noise, n, derive_seed(seed, 3))?;
    Ok(CapacityEstimate {
        bits: (h_y.value - h_z.value) / LN_2,
        stderr: (h_y.stderr.powi(2) + h_z.stderr.powi(2)).sqrt() / LN_2,
    })
}

/// Translate a fitted DAGMM over 1-D noise back into an input-space
/// mixture usable for capacity estimation: component r keeps the latent
/// weight, takes its decoded mean, and the responsibility-weighted
/// covariance of input-space residuals of the samples assigned to it.
pub fn dagmm_noise_model(state: &DagmmState, noise_samples: &DMatrix<f64>) -> Result<GmmModel> {
    let n = noise_samples.nrows();
    if state.latent_codes.nrows() != n {
        return Err(Error::Domain(
            "state was not fitted on the supplied samples".into(),
        ));
    }
    let d = noise_samples.ncols();
    let resp = latent_responsibilities(state)?;
    let r_count = resp.gamma.ncols();
    // argmax with ties to the lowest component index
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_v = resp.gamma[(i, 0)];
            for r in 1..r_count {
                if resp.gamma[(i, r)] > best_v {
                    best = r;
                    best_v = resp.gamma[(i, r)];
                }
            }
            best
        })
        .collect();
    let floor = gmm::default_floor(noise_samples);
    let weights = state.latent_gmm.renormalized_weights();
    let mut components = Vec::new();
    let mut dropped = 0;
    for r in 0..r_count {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == r).collect();
        if members.is_empty() {
            dropped += 1;
            continue;
        }
        let mean = crate::autoencoder::decode(
            &state.ae.decoder,
            &state.latent_gmm.components[r].mean,
        )?;
        let mut cov = DMatrix::zeros(d, d);
        let mut mass = 0.0;
        for &i in &members {
            let g = resp.gamma[(i, r)];
            let diff = noise_samples.row(i).transpose() - &mean;
            cov += g * &diff * diff.transpose();
            mass += g;
        }
        cov /= mass;
        for k in 0..d {
            cov[(k, k)] += floor;
        }
        components.push(GaussianComponent {
            weight: weights[r],
            mean,
            covariance: cov,
        });
    }
    if components.is_empty() {
        return Err(Error::Numerical("every DAGMM component was empty".into()));
    }
    let _ = dropped;
    let model = GmmModel::new(components, false)?;
    Ok(model.renormalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Gmm,
    Dagmm,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Gmm => "gmm",
            Method::Dagmm => "dagmm",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            Method::Baseline => 0,
            Method::Gmm => 1,
            Method::Dagmm => 2,
        }
    }
}

/// Everything a sweep needs: the physical scenario plus fitting settings.
#[derive(Debug, Clone)]
pub struct SweepScenario {
    pub hqn: HqnParams,
    pub t_coeff: f64,
    pub mu_x: f64,
    /// Reconciliation efficiency multiplying every rate.
    pub beta_rec: f64,
    /// Noise samples drawn per grid point for the fitting methods.
    pub fit_samples: usize,
    /// Mixture size for the fitted models.
    pub r_fit: usize,
    pub em: EmOptions,
    pub dagmm_arch: DagmmArch,
    pub dagmm_hyper: DagmmHyper,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveCell {
    pub rate_bits: Option<f64>,
    pub stderr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityCurve {
    pub snr_db: Vec<f64>,
    pub methods: Vec<Method>,
    /// cells[m][k] is method m at grid point k.
    pub cells: Vec<Vec<CurveCell>>,
    pub mc_samples: usize,
    pub seed: u64,
}

fn fit_point_model(
    scenario: &SweepScenario,
    method: Method,
    point_seed: u64,
) -> Result<GmmModel> {
    match method {
        Method::Baseline => hqn_gmm_1d(&scenario.hqn),
        Method::Gmm => {
            let z = sample_hqn(&scenario.hqn, scenario.fit_samples, derive_seed(point_seed, 10))?;
            let data = DMatrix::from_fn(z.len(), 1, |i, _| z[i]);
            let (model, _) = fit_em(
                &data,
                scenario.r_fit,
                &EmOptions {
                    seed: derive_seed(point_seed, 11),
                    ..scenario.em
                },
            )?;
            Ok(model)
        }
        Method::Dagmm => {
            let z = sample_hqn(&scenario.hqn, scenario.fit_samples, derive_seed(point_seed, 10))?;
            let data = DMatrix::from_fn(z.len(), 1, |i, _| z[i]);
            let hyper = DagmmHyper {
                r_count: scenario.r_fit,
                seed: derive_seed(point_seed, 12),
                ..scenario.dagmm_hyper
            };
            let (state, report) = fit_dagmm(&data, &scenario.dagmm_arch, &hyper)?;
            if let Some(reason) = report.aborted {
                return Err(Error::Numerical(format!("dagmm fit aborted: {reason}")));
            }
            dagmm_noise_model(&state, &data)
        }
    }
}

/// One grid cell: fit the method's noise model and estimate the rate at
/// the given SNR. `k` is the grid index; the cell seed depends only on
/// (seed, k, method), so evaluation order is irrelevant.
pub fn sweep_cell(
    scenario: &SweepScenario,
    snr_db: f64,
    k: usize,
    method: Method,
    n: usize,
    seed: u64,
) -> Result<CurveCell> {
    let analytic = hqn_gmm_1d(&scenario.hqn)?;
    let (_, var_z) = mixture_moments(&analytic)?;
    let var_z = var_z[(0, 0)];
    let point_seed = derive_seed2(seed, k as u64, method.stream());
    let snr = 10f64.powf(snr_db / 10.0);
    let sigma_x = (snr * var_z).sqrt() / scenario.t_coeff;
    let config = ChannelConfig {
        t_coeff: scenario.t_coeff,
        mu_x: scenario.mu_x,
        sigma_x,
    };
    let cell = fit_point_model(scenario, method, point_seed)
        .and_then(|model| capacity_estimate(&config, &model, n, derive_seed(point_seed, 99)));
    Ok(match cell {
        Ok(est) => CurveCell {
            rate_bits: Some(scenario.beta_rec * est.bits),
            stderr: Some(scenario.beta_rec * est.stderr),
            error: None,
        },
        Err(e) => CurveCell {
            rate_bits: None,
            stderr: None,
            error: Some(e.to_string()),
        },
    })
}

/// Capacity-versus-SNR sweep. SNR is defined as T^2 sigma_x^2 / Var(Z)
/// (dB); each grid point scales sigma_x to hit the target. Fit failures
/// mark the cell absent and the sweep continues.
pub fn snr_sweep(
    scenario: &SweepScenario,
    grid_db: &[f64],
    methods: &[Method],
    n: usize,
    seed: u64,
) -> Result<CapacityCurve> {
    if grid_db.is_empty() {
        return Err(Error::Domain("empty SNR grid".into()));
    }
    if grid_db.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("SNR grid must be strictly increasing".into()));
    }
    let mut cells = Vec::new();
    for method in methods {
        let mut row = Vec::new();
        for (k, &snr_db) in grid_db.iter().enumerate() {
            row.push(sweep_cell(scenario, snr_db, k, *method, n, seed)?);
        }
        cells.push(row);
    }
    Ok(CapacityCurve {
        snr_db: grid_db.to_vec(),
        methods: methods.to_vec(),
        cells,
        mc_samples: n,
        seed,
    })
}
