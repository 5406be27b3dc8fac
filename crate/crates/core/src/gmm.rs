//! Gaussian mixture models: the shared mixture type, log-space density
//! evaluation, moments, sampling, and classical EM fitting.
//!
//! Mixture weights may sum to less than one (truncated-Poisson noise
//! models). Density evaluation uses the raw weights; probabilistic
//! operations (sampling, responsibilities, likelihood) renormalize.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub dim: usize,
    pub components: Vec<GaussianComponent>,
    /// True when weights were renormalized to sum to one.
    pub normalized: bool,
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>, normalized: bool) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        let dim = components[0].mean.len();
        for (r, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.covariance.nrows() != dim || c.covariance.ncols() != dim {
                return Err(Error::Domain(format!(
                    "component {r} has inconsistent dimension"
                )));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::Domain(format!("component {r} has invalid weight")));
            }
            let scale = c.covariance.amax().max(1.0);
            for i in 0..dim {
                for j in 0..i {
                    if (c.covariance[(i, j)] - c.covariance[(j, i)]).abs() > 1e-12 * scale {
                        return Err(Error::Domain(format!(
                            "component {r} covariance not symmetric"
                        )));
                    }
                }
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if total <= 0.0 {
            return Err(Error::Domain("total mixture weight must be positive".into()));
        }
        Ok(GmmModel {
            dim,
            components,
            normalized,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Weights rescaled to sum to one.
    pub fn renormalized_weights(&self) -> Vec<f64> {
        let total = self.total_weight();
        self.components.iter().map(|c| c.weight / total).collect()
    }

    /// Return a copy with weights renormalized to a probability vector.
    pub fn renormalize(&self) -> GmmModel {
        let total = self.total_weight();
        let mut components = self.components.clone();
        for c in &mut components {
            c.weight /= total;
        }
        GmmModel {
            dim: self.dim,
            components,
            normalized: true,
        }
    }
}

/// Per-component Cholesky factors, cached for batch density evaluation.
struct ComponentDensity {
    ln_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    ln_norm: f64,
}

impl ComponentDensity {
    fn ln_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self.chol.l_dirty().solve_lower_triangular(&diff).unwrap();
        self.ln_norm - 0.5 * y.norm_squared()
    }
}

fn prepare(model: &GmmModel) -> Result<Vec<ComponentDensity>> {
    let total = model.total_weight();
    let d = model.dim as f64;
    model
        .components
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let chol = Cholesky::new(c.covariance.clone()).ok_or_else(|| {
                Error::Numerical(format!("component {r} covariance is not positive definite"))
            })?;
            let ln_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
            Ok(ComponentDensity {
                ln_weight: (c.weight / total).ln(),
                mean: c.mean.clone(),
                chol,
                ln_norm: -0.5 * (d * LN_2PI + ln_det),
            })
        })
        .collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Log density of the mixture at `x`, with weights renormalized internally.
pub fn log_pdf(model: &GmmModel, x: &DVector<f64>) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::Domain(format!(
            "point has dimension {}, model has {}",
            x.len(),
            model.dim
        )));
    }
    let comps = prepare(model)?;
    let terms: Vec<f64> = comps
        .iter()
        .map(|c| c.ln_weight + c.ln_density(x))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Density of the mixture using the *raw* (possibly sub-unit) weights.
pub fn pdf_raw(model: &GmmModel, x: &DVector<f64>) -> Result<f64> {
    let total = model.total_weight();
    Ok(total * log_pdf(model, x)?.exp())
}

/// Mean vector and covariance matrix of the mixture (weights renormalized).
pub fn mixture_moments(model: &GmmModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let total = model.total_weight();
    if total <= 0.0 {
        return Err(Error::Domain("zero total mixture weight".into()));
    }
    let d = model.dim;
    let mut mean = DVector::zeros(d);
    for c in &model.components {
        mean += (c.weight / total) * &c.mean;
    }
    let mut cov = DMatrix::zeros(d, d);
    for c in &model.components {
        cov += (c.weight / total) * (&c.covariance + &c.mean * c.mean.transpose());
    }
    cov -= &mean * mean.transpose();
    Ok((mean, cov))
}

/// Draw `n` samples from the mixture (weights renormalized); rows are samples.
pub fn sample(model: &GmmModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let weights = model.renormalized_weights();
    let chols: Vec<_> = model
        .components
        .iter()
        .enumerate()
        .map(|(r, c)| {
            Cholesky::new(c.covariance.clone()).ok_or_else(|| {
                Error::Numerical(format!("component {r} covariance is not positive definite"))
            })
        })
        .collect::<Result<_>>()?;
    let mut rng = rng_from(seed);
    let mut out = DMatrix::zeros(n, model.dim);
    for i in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (r, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = r;
                break;
            }
        }
        let z = DVector::from_fn(model.dim, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let x = &model.components[pick].mean + chols[pick].l_dirty() * z;
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Posterior component probabilities, one row per sample.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub gamma: DMatrix<f64>,
    /// Samples where every component had zero density; assigned uniform rows.
    pub degenerate_rows: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmTrace {
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// (iteration, component) pairs where an empty component was reseeded.
    pub reseeds: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Absolute covariance floor; derived from the data when `None`.
    pub floor: Option<f64>,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 300,
            tol: 1e-6,
            seed: 0,
            floor: None,
        }
    }
}

fn e_step_inner(comps: &[ComponentDensity], data: &DMatrix<f64>) -> (Responsibilities, f64) {
    let n = data.nrows();
    let r_count = comps.len();
    let mut gamma = DMatrix::zeros(n, r_count);
    let mut degenerate = Vec::new();
    let mut loglik = 0.0;
    let mut terms = vec![0.0; r_count];
    for i in 0..n {
        let x = data.row(i).transpose();
        for (r, c) in comps.iter().enumerate() {
            terms[r] = c.ln_weight + c.ln_density(&x);
        }
        let lse = log_sum_exp(&terms);
        if lse.is_finite() {
            loglik += lse;
            for r in 0..r_count {
                gamma[(i, r)] = (terms[r] - lse).exp();
            }
        } else {
            degenerate.push(i);
            for r in 0..r_count {
                gamma[(i, r)] = 1.0 / r_count as f64;
            }
        }
    }
    (
        Responsibilities {
            gamma,
            degenerate_rows: degenerate,
        },
        loglik,
    )
}

/// E-step: posterior responsibilities of each component for each sample.
pub fn e_step(model: &GmmModel, data: &DMatrix<f64>) -> Result<Responsibilities> {
    check_data(model.dim, data)?;
    let comps = prepare(model)?;
    Ok(e_step_inner(&comps, data).0)
}

/// Total log-likelihood of `data` under the renormalized mixture.
pub fn log_likelihood(model: &GmmModel, data: &DMatrix<f64>) -> Result<f64> {
    check_data(model.dim, data)?;
    let comps = prepare(model)?;
    Ok(e_step_inner(&comps, data).1)
}

fn check_data(dim: usize, data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 {
        return Err(Error::Domain("empty data".into()));
    }
    if data.ncols() != dim {
        return Err(Error::Domain(format!(
            "data has {} columns, model dimension is {dim}",
            data.ncols()
        )));
    }
    Ok(())
}

/// Global (biased) covariance of the data rows.
pub fn data_covariance(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.nrows() as f64;
    let d = data.ncols();
    let mut mean = DVector::zeros(d);
    for i in 0..data.nrows() {
        mean += data.row(i).transpose();
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..data.nrows() {
        let diff = data.row(i).transpose() - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    (mean, cov)
}

/// Default covariance floor: 1e-6 * trace(data covariance) / D.
pub fn default_floor(data: &DMatrix<f64>) -> f64 {
    let (_, cov) = data_covariance(data);
    (1e-6 * cov.trace() / data.ncols() as f64).max(1e-12)
}

/// M-step: weighted means/covariances/weights from responsibilities.
///
/// Components whose responsibility mass underflows are reseeded to a random
/// data point; their indices are returned alongside the model.
pub fn m_step(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(GmmModel, Vec<usize>)> {
    let n = data.nrows();
    let d = data.ncols();
    let r_count = resp.gamma.ncols();
    if resp.gamma.nrows() != n {
        return Err(Error::Domain("responsibility/data row mismatch".into()));
    }
    let (_, global_cov) = data_covariance(data);
    let mut reseeded = Vec::new();
    let mut components = Vec::with_capacity(r_count);
    let threshold = 10.0 * f64::EPSILON * n as f64;
    for r in 0..r_count {
        let n_r: f64 = (0..n).map(|i| resp.gamma[(i, r)]).sum();
        if n_r < threshold {
            let idx = rng.gen_range(0..n);
            let mut cov = global_cov.clone();
            for k in 0..d {
                cov[(k, k)] += floor;
            }
            components.push(GaussianComponent {
                weight: 1.0 / n as f64,
                mean: data.row(idx).transpose(),
                covariance: cov,
            });
            reseeded.push(r);
            continue;
        }
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            mean += resp.gamma[(i, r)] * data.row(i).transpose();
        }
        mean /= n_r;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = data.row(i).transpose() - &mean;
            cov += resp.gamma[(i, r)] * &diff * diff.transpose();
        }
        cov /= n_r;
        for k in 0..d {
            cov[(k, k)] += floor;
        }
        components.push(GaussianComponent {
            weight: n_r / n as f64,
            mean,
            covariance: cov,
        });
    }
    if !reseeded.is_empty() {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
    }
    Ok((GmmModel::new(components, true)?, reseeded))
}

/// Distance-weighted greedy seeding (k-means++ style) with shared data
/// covariance and uniform weights.
pub fn init_gmm(data: &DMatrix<f64>, r_count: usize, seed: u64) -> Result<GmmModel> {
    let n = data.nrows();
    if r_count == 0 {
        return Err(Error::Domain("component count must be positive".into()));
    }
    if n < r_count {
        return Err(Error::Domain(format!(
            "need at least {r_count} samples, got {n}"
        )));
    }
    let d = data.ncols();
    let (_, mut cov) = data_covariance(data);
    let floor = default_floor(data);
    for k in 0..d {
        cov[(k, k)] += floor;
    }
    let mut rng = rng_from(seed);
    let scale = cov.trace().sqrt().max(1e-9);

    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(r_count);
    centers.push(data.row(rng.gen_range(0..n)).transpose());
    let mut dist2 = vec![0.0f64; n];
    while centers.len() < r_count {
        let mut total = 0.0;
        for i in 0..n {
            let x = data.row(i).transpose();
            let m = centers
                .iter()
                .map(|c| (&x - c).norm_squared())
                .fold(f64::INFINITY, f64::min);
            dist2[i] = m;
            total += m;
        }
        if total <= 0.0 {
            // Fewer distinct points than components: random index plus jitter.
            let idx = rng.gen_range(0..n);
            let jitter = DVector::from_fn(d, |_, _| {
                let g: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                g * 1e-6 * scale
            });
            centers.push(data.row(idx).transpose() + jitter);
            continue;
        }
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for i in 0..n {
            acc += dist2[i];
            if u < acc {
                pick = i;
                break;
            }
        }
        centers.push(data.row(pick).transpose());
    }

    let components = centers
        .into_iter()
        .map(|mean| GaussianComponent {
            weight: 1.0 / r_count as f64,
            mean,
            covariance: cov.clone(),
        })
        .collect();
    GmmModel::new(components, true)
}

/// Fit a GMM by EM until the log-likelihood gain drops below `tol`.
pub fn fit_em(
    data: &DMatrix<f64>,
    r_count: usize,
    opts: &EmOptions,
) -> Result<(GmmModel, EmTrace)> {
    if data.nrows() == 0 {
        return Err(Error::Domain("empty data".into()));
    }
    if data.nrows() <= r_count {
        return Err(Error::Domain(format!(
            "need more than {r_count} samples, got {}",
            data.nrows()
        )));
    }
    let floor = opts.floor.unwrap_or_else(|| default_floor(data));
    let mut model = init_gmm(data, r_count, opts.seed)?;
    let mut rng = rng_from(derive_seed(opts.seed, 0x6d73 /* m-step reseeds */));
    let mut trace = EmTrace {
        loglik: Vec::new(),
        iterations: 0,
        converged: false,
        reseeds: Vec::new(),
    };
    let mut prev = f64::NEG_INFINITY;
    for iter in 0..opts.max_iters {
        let comps = prepare(&model)?;
        let (resp, loglik) = e_step_inner(&comps, data);
        trace.loglik.push(loglik);
        trace.iterations = iter + 1;
        if (loglik - prev).abs() < opts.tol {
            trace.converged = true;
            break;
        }
        prev = loglik;
        let (next, reseeded) = m_step(data, &resp, floor, &mut rng)?;
        for r in reseeded {
            trace.reseeds.push((iter, r));
        }
        model = next;
    }
    Ok((model, trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct GmmJson {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    floor: f64,
    trace: TraceJson,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceJson {
    loglik: Vec<f64>,
}

/// Serialize a fitted model (plus floor and likelihood trace) to JSON.
pub fn gmm_to_json(model: &GmmModel, floor: f64, trace: &EmTrace) -> serde_json::Value {
    let doc = GmmJson {
        dim: model.dim,
        weights: model.components.iter().map(|c| c.weight).collect(),
        means: model
            .components
            .iter()
            .map(|c| c.mean.iter().cloned().collect())
            .collect(),
        covariances: model
            .components
            .iter()
            .map(|c| {
                (0..model.dim)
                    .map(|i| (0..model.dim).map(|j| c.covariance[(i, j)]).collect())
                    .collect()
            })
            .collect(),
        floor,
        trace: TraceJson {
            loglik: trace.loglik.clone(),
        },
    };
    serde_json::to_value(doc).expect("gmm serialization cannot fail")
}

/// Load a model previously written by [`gmm_to_json`].
pub fn gmm_from_json(value: &serde_json::Value) -> Result<(GmmModel, f64, Vec<f64>)> {
    let doc: GmmJson = serde_json::from_value(value.clone())?;
    let components = doc
        .weights
        .iter()
        .zip(doc.means.iter())
        .zip(doc.covariances.iter())
        .map(|((w, m), cov)| GaussianComponent {
            weight: *w,
            mean: DVector::from_vec(m.clone()),
            covariance: DMatrix::from_fn(doc.dim, doc.dim, |i, j| cov[i][j]),
        })
        .collect();
    let model = GmmModel::new(components, true)?;
    Ok((model, doc.floor, doc.trace.loglik))
}
