//! Joint deep-autoencoder + latent GMM training by augmented-Lagrangian
//! alternating minimization.
//!
//! Per-sample latent codes are explicit decision variables coupled to the
//! encoder output through a scaled-dual penalty. One outer iteration runs
//! responsibilities -> closed-form latent solve -> GMM update -> network
//! gradient steps -> dual ascent.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::autoencoder::{
    backprop, decode, encode, train_autoencoder, Activation, AeParams, AeTrainOptions, MlpGrads,
};
use crate::error::{Error, Result};
use crate::gmm::{e_step, fit_em, log_pdf, m_step, EmOptions, GmmModel, Responsibilities};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DagmmHyper {
    /// Weight of the latent log-likelihood term.
    pub lambda_tilde: f64,
    /// Penalty weight on the latent-code/encoder coupling.
    pub rho_tilde: f64,
    /// Latent mixture size.
    pub r_count: usize,
    pub outer_iters: usize,
    pub net_steps_per_outer: usize,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for DagmmHyper {
    fn default() -> Self {
        DagmmHyper {
            lambda_tilde: 0.1,
            rho_tilde: 1.0,
            r_count: 7,
            outer_iters: 50,
            net_steps_per_outer: 20,
            step: 0.05,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl DagmmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tilde > 0.0) {
            return Err(Error::Domain("lambda_tilde must be > 0".into()));
        }
        if !(self.rho_tilde > 0.0) {
            return Err(Error::Domain("rho_tilde must be > 0".into()));
        }
        if self.r_count == 0 {
            return Err(Error::Domain("r_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Network layout and pretraining schedule.
#[derive(Debug, Clone)]
pub struct DagmmArch {
    /// Encoder layer sizes, input to latent; the decoder mirrors them.
    pub encoder_sizes: Vec<usize>,
    pub activation: Activation,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_step: f64,
}

impl Default for DagmmArch {
    fn default() -> Self {
        DagmmArch {
            encoder_sizes: vec![3, 8, 2],
            activation: Activation::Tanh,
            pretrain_epochs: 40,
            pretrain_batch: 64,
            pretrain_step: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DagmmState {
    pub ae: AeParams,
    /// Per-sample latent decision variables, one row per sample.
    pub latent_codes: DMatrix<f64>,
    /// Scaled dual variables, same shape as the latent codes.
    pub duals: DMatrix<f64>,
    pub latent_gmm: GmmModel,
    pub hyper: DagmmHyper,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub iter: usize,
    pub aug_lagrangian: f64,
    pub recon: f64,
    pub nll: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
    /// Hard assignments after the first outer iteration.
    pub epoch1_labels: Vec<usize>,
    /// Hard assignments at the end of training.
    pub labels: Vec<usize>,
    pub converged: bool,
    /// Set when an outer iteration failed numerically; the rows up to the
    /// failure are retained.
    pub aborted: Option<String>,
}

fn encode_all(ae: &AeParams, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(data.nrows(), ae.latent_dim());
    for i in 0..data.nrows() {
        let z = encode(&ae.encoder, &data.row(i).transpose())?;
        out.row_mut(i).copy_from(&z.transpose());
    }
    Ok(out)
}

fn decode_all(ae: &AeParams, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(codes.nrows(), ae.decoder.output_dim());
    for i in 0..codes.nrows() {
        let y = decode(&ae.decoder, &codes.row(i).transpose())?;
        out.row_mut(i).copy_from(&y.transpose());
    }
    Ok(out)
}

/// Mean per-sample objective: reconstruction of the latent code minus the
/// weighted latent log-likelihood.
pub fn objective(state: &DagmmState, data: &DMatrix<f64>) -> Result<f64> {
    let n = data.nrows();
    if state.latent_codes.nrows() != n {
        return Err(Error::Domain("latent code / data row mismatch".into()));
    }
    let recon = decode_all(&state.ae, &state.latent_codes)?;
    let mut acc = 0.0;
    for i in 0..n {
        let err = (data.row(i) - recon.row(i)).norm_squared();
        let ll = log_pdf(&state.latent_gmm, &state.latent_codes.row(i).transpose())?;
        let term = err - state.hyper.lambda_tilde * ll;
        if !term.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective at sample {i}"
            )));
        }
        acc += term;
    }
    Ok(acc / n as f64)
}

/// Sum-form augmented Lagrangian: objective terms plus the scaled-dual
/// penalty rho * ||x_hat - f_enc(x) + u||^2 per sample.
pub fn augmented_lagrangian(state: &DagmmState, data: &DMatrix<f64>) -> Result<f64> {
    let n = data.nrows();
    if state.latent_codes.nrows() != n {
        return Err(Error::Domain("latent code / data row mismatch".into()));
    }
    let recon = decode_all(&state.ae, &state.latent_codes)?;
    let enc = encode_all(&state.ae, data)?;
    let mut acc = 0.0;
    for i in 0..n {
        let err = (data.row(i) - recon.row(i)).norm_squared();
        let ll = log_pdf(&state.latent_gmm, &state.latent_codes.row(i).transpose())?;
        let v = (state.latent_codes.row(i) - enc.row(i) + state.duals.row(i)).norm_squared();
        let term = err - state.hyper.lambda_tilde * ll + state.hyper.rho_tilde * v;
        if !term.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite augmented Lagrangian at sample {i}"
            )));
        }
        acc += term;
    }
    Ok(acc)
}

/// Posterior responsibilities of the latent mixture for the latent codes.
pub fn latent_responsibilities(state: &DagmmState) -> Result<Responsibilities> {
    e_step(&state.latent_gmm, &state.latent_codes)
}

/// Closed-form latent update with responsibilities held fixed:
/// x_hat = (lambda sum_r g_r S_r^-1 + rho I)^-1
///         (lambda sum_r g_r S_r^-1 mu_r + rho (f_enc(x) - u)).
pub fn update_latent_codes(
    state: &DagmmState,
    data: &DMatrix<f64>,
    resp: &Responsibilities,
) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    let d = state.ae.latent_dim();
    let lambda = state.hyper.lambda_tilde;
    let rho = state.hyper.rho_tilde;
    let inverses: Vec<DMatrix<f64>> = state
        .latent_gmm
        .components
        .iter()
        .enumerate()
        .map(|(r, c)| {
            c.covariance.clone().try_inverse().ok_or_else(|| {
                Error::Numerical(format!("latent component {r} covariance is singular"))
            })
        })
        .collect::<Result<_>>()?;
    let enc = encode_all(&state.ae, data)?;
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut lhs = DMatrix::identity(d, d) * rho;
        let mut rhs = (enc.row(i) - state.duals.row(i)).transpose() * rho;
        for (r, inv) in inverses.iter().enumerate() {
            let g = resp.gamma[(i, r)];
            lhs += inv * (lambda * g);
            rhs += inv * &state.latent_gmm.components[r].mean * (lambda * g);
        }
        let chol = Cholesky::new(lhs)
            .ok_or_else(|| Error::Numerical("latent solve system not SPD".into()))?;
        let x = chol.solve(&rhs);
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Analytic gradient of the latent block objective (responsibilities fixed)
/// at latent code row `i`:
/// lambda sum_r g_r S_r^-1 (x_hat - mu_r) + rho (x_hat - f_enc(x) + u).
/// Zero exactly at the closed-form update.
pub fn latent_block_gradient(
    state: &DagmmState,
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    codes: &DMatrix<f64>,
    i: usize,
) -> Result<DVector<f64>> {
    let lambda = state.hyper.lambda_tilde;
    let rho = state.hyper.rho_tilde;
    let x_hat = codes.row(i).transpose();
    let enc = encode(&state.ae.encoder, &data.row(i).transpose())?;
    let mut grad = (&x_hat - enc + state.duals.row(i).transpose()) * rho;
    for (r, c) in state.latent_gmm.components.iter().enumerate() {
        let inv = c.covariance.clone().try_inverse().ok_or_else(|| {
            Error::Numerical(format!("latent component {r} covariance is singular"))
        })?;
        grad += inv * (&x_hat - &c.mean) * (lambda * resp.gamma[(i, r)]);
    }
    Ok(grad)
}

/// Latent mixture update: exactly the GMM M-step applied to the codes.
pub fn update_gmm_params(
    state: &DagmmState,
    resp: &Responsibilities,
    floor: f64,
) -> Result<GmmModel> {
    let mut rng = rng_from(derive_seed(state.hyper.seed, 0x6d32));
    let (model, _) = m_step(&state.latent_codes, resp, floor, &mut rng)?;
    Ok(model)
}

/// Scaled-dual ascent with unit relaxation: u += x_hat - f_enc(x).
pub fn update_duals(state: &DagmmState, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let enc = encode_all(&state.ae, data)?;
    Ok(&state.duals + &state.latent_codes - enc)
}

/// Network loss minimized between outer iterations:
/// (1/N) sum ||x - f_dec(x_hat)||^2 + (rho/N) sum ||x_hat - f_enc(x) + u||^2.
pub fn network_loss(state: &DagmmState, data: &DMatrix<f64>) -> Result<f64> {
    let n = data.nrows() as f64;
    let recon = decode_all(&state.ae, &state.latent_codes)?;
    let enc = encode_all(&state.ae, data)?;
    let mut acc = 0.0;
    for i in 0..data.nrows() {
        acc += (data.row(i) - recon.row(i)).norm_squared();
        acc += state.hyper.rho_tilde
            * (state.latent_codes.row(i) - enc.row(i) + state.duals.row(i)).norm_squared();
    }
    Ok(acc / n)
}

/// Analytic gradients of [`network_loss`] with respect to both sub-networks.
pub fn network_loss_grads(state: &DagmmState, data: &DMatrix<f64>) -> Result<(MlpGrads, MlpGrads)> {
    let n = data.nrows();
    let scale = 1.0 / n as f64;
    let rho = state.hyper.rho_tilde;
    let mut enc_grads = MlpGrads::zeros(&state.ae.encoder);
    let mut dec_grads = MlpGrads::zeros(&state.ae.decoder);
    for i in 0..n {
        let x = data.row(i).transpose();
        let code = state.latent_codes.row(i).transpose();
        // Decoder: d/dy ||x - dec(code)||^2 = 2 (dec(code) - x)
        let y = decode(&state.ae.decoder, &code)?;
        let dy = (&y - &x) * 2.0;
        let (dg, _) = backprop(&state.ae.decoder, &code, &dy)?;
        dec_grads.add_scaled(&dg, scale);
        // Encoder: d/de rho ||code - enc(x) + u||^2 = -2 rho (code - enc(x) + u)
        let e = encode(&state.ae.encoder, &x)?;
        let v = &code - &e + state.duals.row(i).transpose();
        let de = v * (-2.0 * rho);
        let (eg, _) = backprop(&state.ae.encoder, &x, &de)?;
        enc_grads.add_scaled(&eg, scale);
    }
    Ok((enc_grads, dec_grads))
}

/// `net_steps_per_outer` full-batch gradient steps on the network loss.
/// Returns an error on a non-finite loss.
pub fn update_network(state: &DagmmState, data: &DMatrix<f64>) -> Result<AeParams> {
    let mut working = state.clone();
    for _ in 0..state.hyper.net_steps_per_outer {
        let (enc_g, dec_g) = network_loss_grads(&working, data)?;
        for (w, g) in working.ae.encoder.weights.iter_mut().zip(enc_g.dw.iter()) {
            *w -= g * state.hyper.step;
        }
        for (b, g) in working.ae.encoder.biases.iter_mut().zip(enc_g.db.iter()) {
            *b -= g * state.hyper.step;
        }
        for (w, g) in working.ae.decoder.weights.iter_mut().zip(dec_g.dw.iter()) {
            *w -= g * state.hyper.step;
        }
        for (b, g) in working.ae.decoder.biases.iter_mut().zip(dec_g.db.iter()) {
            *b -= g * state.hyper.step;
        }
        let loss = network_loss(&working, data)?;
        if !loss.is_finite() {
            return Err(Error::Numerical("network update diverged".into()));
        }
    }
    Ok(working.ae)
}

/// Hard labels: argmax responsibility, ties broken by lowest index.
pub fn assign_clusters(state: &DagmmState) -> Result<Vec<usize>> {
    let resp = latent_responsibilities(state)?;
    Ok(argmax_labels(&resp))
}

fn argmax_labels(resp: &Responsibilities) -> Vec<usize> {
    (0..resp.gamma.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_v = resp.gamma[(i, 0)];
            for r in 1..resp.gamma.ncols() {
                if resp.gamma[(i, r)] > best_v {
                    best = r;
                    best_v = resp.gamma[(i, r)];
                }
            }
            best
        })
        .collect()
}

fn constraint_violation(state: &DagmmState, data: &DMatrix<f64>) -> Result<f64> {
    let enc = encode_all(&state.ae, data)?;
    Ok((&state.latent_codes - enc).norm())
}

fn report_row(state: &DagmmState, data: &DMatrix<f64>, iter: usize) -> Result<ReportRow> {
    let n = data.nrows() as f64;
    let recon_m = decode_all(&state.ae, &state.latent_codes)?;
    let mut recon = 0.0;
    let mut nll = 0.0;
    for i in 0..data.nrows() {
        recon += (data.row(i) - recon_m.row(i)).norm_squared();
        nll -= log_pdf(&state.latent_gmm, &state.latent_codes.row(i).transpose())?;
    }
    Ok(ReportRow {
        iter,
        aug_lagrangian: augmented_lagrangian(state, data)?,
        recon: recon / n,
        nll: nll / n,
        violation: constraint_violation(state, data)?,
    })
}

/// Full training schedule: pretrain the autoencoder, initialize codes and
/// the latent mixture, then alternate the five block updates.
pub fn fit_dagmm(
    data: &DMatrix<f64>,
    arch: &DagmmArch,
    hyper: &DagmmHyper,
) -> Result<(DagmmState, TrainReport)> {
    hyper.validate()?;
    let n = data.nrows();
    if n <= hyper.r_count {
        return Err(Error::Domain(format!(
            "need more than {} samples, got {n}",
            hyper.r_count
        )));
    }
    if arch.encoder_sizes.first() != Some(&data.ncols()) {
        return Err(Error::Domain(format!(
            "encoder input size {} does not match data dimension {}",
            arch.encoder_sizes.first().copied().unwrap_or(0),
            data.ncols()
        )));
    }

    // (1) Pretrain.
    let ae0 = AeParams::new_random(
        &arch.encoder_sizes,
        arch.activation,
        derive_seed(hyper.seed, 0xae),
    )?;
    let (ae, pre) = train_autoencoder(
        &ae0,
        data,
        &AeTrainOptions {
            epochs: arch.pretrain_epochs,
            batch: arch.pretrain_batch,
            step: arch.pretrain_step,
            seed: derive_seed(hyper.seed, 0xae + 1),
        },
    )?;
    if pre.diverged {
        return Err(Error::Numerical("autoencoder pretraining diverged".into()));
    }

    // (2) Initialize codes, duals, latent mixture.
    let latent_codes = encode_all(&ae, data)?;
    let duals = DMatrix::zeros(n, ae.latent_dim());
    let (latent_gmm, _) = fit_em(
        &latent_codes,
        hyper.r_count,
        &EmOptions {
            seed: derive_seed(hyper.seed, 0x656d),
            ..Default::default()
        },
    )?;
    let floor = crate::gmm::default_floor(&latent_codes);
    let mut state = DagmmState {
        ae,
        latent_codes,
        duals,
        latent_gmm,
        hyper: *hyper,
    };

    let mut report = TrainReport {
        rows: vec![report_row(&state, data, 0)?],
        epoch1_labels: Vec::new(),
        labels: Vec::new(),
        converged: false,
        aborted: None,
    };

    // (3) Outer alternation.
    let mut prev_al = report.rows[0].aug_lagrangian;
    for outer in 0..hyper.outer_iters {
        let step = (|| -> Result<ReportRow> {
            let resp = latent_responsibilities(&state)?;
            state.latent_codes = update_latent_codes(&state, data, &resp)?;
            let resp = latent_responsibilities(&state)?;
            state.latent_gmm = update_gmm_params(&state, &resp, floor)?;
            state.ae = update_network(&state, data)?;
            state.duals = update_duals(&state, data)?;
            report_row(&state, data, outer + 1)
        })();
        match step {
            Ok(row) => {
                let al = row.aug_lagrangian;
                let violation = row.violation;
                report.rows.push(row);
                if outer == 0 {
                    report.epoch1_labels = assign_clusters(&state)?;
                }
                if violation < hyper.tol && (al - prev_al).abs() < hyper.tol {
                    report.converged = true;
                    break;
                }
                prev_al = al;
            }
            Err(e) => {
                // Keep the rows gathered so far; the caller decides whether
                // an aborted fit is fatal.
                report.aborted = Some(e.to_string());
                break;
            }
        }
    }

    report.labels = if report.aborted.is_some() {
        assign_clusters(&state).unwrap_or_default()
    } else {
        assign_clusters(&state)?
    };
    Ok((state, report))
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map(|m| m + 1).unwrap_or(0);
    let kb = b.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[x][y] += 1;
    }
    let choose2 = |k: usize| (k * k.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
