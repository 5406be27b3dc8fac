//! Deep encoder/decoder with exact reverse-mode gradients, trained by
//! plain mini-batch gradient descent on mean squared error.
//!
//! Hidden layers use tanh (or identity); output layers are linear.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// A layered weight/bias stack. Hidden layers are activated; the final
/// layer is always linear.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub activation: Activation,
}

impl MlpParams {
    /// Symmetric-uniform initialization scaled by fan-in + fan-out.
    pub fn new_random(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Domain("need at least input and output layers".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Domain("layer sizes must be positive".into()));
        }
        let mut rng = rng_from(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass; hidden layers activated, output layer linear.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_trace(x)?.pop().unwrap())
    }

    /// Forward pass keeping every layer's activation (index 0 is the input).
    fn forward_trace(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layer_count() + 1);
        acts.push(x.clone());
        for l in 0..self.layer_count() {
            let pre = &self.weights[l] * acts.last().unwrap() + &self.biases[l];
            let out = if l + 1 == self.layer_count() {
                pre
            } else {
                pre.map(|v| self.activation.apply(v))
            };
            acts.push(out);
        }
        Ok(acts)
    }
}

/// Gradients with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros(net: &MlpParams) -> Self {
        MlpGrads {
            dw: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            db: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.dw.iter_mut().zip(other.dw.iter()) {
            *a += b * scale;
        }
        for (a, b) in self.db.iter_mut().zip(other.db.iter()) {
            *a += b * scale;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.dw.iter().map(|m| m.amax()).fold(0.0, f64::max);
        let b = self.db.iter().map(|v| v.amax()).fold(0.0, f64::max);
        w.max(b)
    }
}

/// Backpropagate `output_grad` (dL/d output) through the network for one
/// sample, returning parameter gradients and the gradient at the input.
pub fn backprop(
    net: &MlpParams,
    x: &DVector<f64>,
    output_grad: &DVector<f64>,
) -> Result<(MlpGrads, DVector<f64>)> {
    let acts = net.forward_trace(x)?;
    let mut grads = MlpGrads::zeros(net);
    // Output layer is linear, so delta starts as the raw output gradient.
    let mut delta = output_grad.clone();
    for l in (0..net.layer_count()).rev() {
        grads.dw[l] = &delta * acts[l].transpose();
        grads.db[l] = delta.clone();
        if l > 0 {
            let mut upstream = net.weights[l].transpose() * &delta;
            for (u, a) in upstream.iter_mut().zip(acts[l].iter()) {
                *u *= net.activation.derivative_from_output(*a);
            }
            delta = upstream;
        } else {
            delta = net.weights[0].transpose() * &delta;
        }
    }
    Ok((grads, delta))
}

fn apply_step(net: &mut MlpParams, grads: &MlpGrads, step: f64) {
    for (w, g) in net.weights.iter_mut().zip(grads.dw.iter()) {
        *w -= g * step;
    }
    for (b, g) in net.biases.iter_mut().zip(grads.db.iter()) {
        *b -= g * step;
    }
}

/// Encoder/decoder pair; encoder output dimension equals decoder input
/// dimension (the latent dimension).
#[derive(Debug, Clone)]
pub struct AeParams {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

impl AeParams {
    pub fn new(encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Domain(format!(
                "latent dimension mismatch: encoder outputs {}, decoder expects {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        Ok(AeParams { encoder, decoder })
    }

    /// Mirror-symmetric random autoencoder from encoder layer sizes.
    pub fn new_random(encoder_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let decoder_sizes: Vec<usize> = encoder_sizes.iter().rev().cloned().collect();
        let encoder = MlpParams::new_random(encoder_sizes, activation, seed)?;
        let decoder = MlpParams::new_random(&decoder_sizes, activation, seed.wrapping_add(1))?;
        AeParams::new(encoder, decoder)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn reconstruct(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        decode(&self.decoder, &encode(&self.encoder, x)?)
    }
}

pub fn encode(enc: &MlpParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    enc.forward(x)
}

pub fn decode(dec: &MlpParams, latent: &DVector<f64>) -> Result<DVector<f64>> {
    dec.forward(latent)
}

/// Mean squared error averaged over samples and coordinates.
pub fn mse_loss(x_batch: &DMatrix<f64>, y_batch: &DMatrix<f64>) -> Result<f64> {
    if x_batch.nrows() == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    if x_batch.shape() != y_batch.shape() {
        return Err(Error::Domain("batch shape mismatch".into()));
    }
    let n = (x_batch.nrows() * x_batch.ncols()) as f64;
    Ok((x_batch - y_batch).map(|v| v * v).sum() / n)
}

#[derive(Debug, Clone)]
pub struct AeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

/// Exact gradients of [`mse_loss`] between the batch and its
/// reconstruction with respect to every weight and bias.
pub fn grad_autoencoder(ae: &AeParams, x_batch: &DMatrix<f64>) -> Result<AeGrads> {
    if x_batch.nrows() == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let n = x_batch.nrows();
    let d = x_batch.ncols();
    let scale = 1.0 / (n * d) as f64;
    let mut enc_grads = MlpGrads::zeros(&ae.encoder);
    let mut dec_grads = MlpGrads::zeros(&ae.decoder);
    for i in 0..n {
        let x = x_batch.row(i).transpose();
        let latent = encode(&ae.encoder, &x)?;
        let y = decode(&ae.decoder, &latent)?;
        let dy = (&y - &x) * 2.0;
        let (dg, dlatent) = backprop(&ae.decoder, &latent, &dy)?;
        let (eg, _) = backprop(&ae.encoder, &x, &dlatent)?;
        dec_grads.add_scaled(&dg, scale);
        enc_grads.add_scaled(&eg, scale);
    }
    Ok(AeGrads {
        encoder: enc_grads,
        decoder: dec_grads,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AeTrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AeTrainReport {
    /// Full-data loss before training and after each epoch.
    pub losses: Vec<f64>,
    pub diverged: bool,
}

fn full_loss(ae: &AeParams, data: &DMatrix<f64>) -> Result<f64> {
    let mut recon = DMatrix::zeros(data.nrows(), data.ncols());
    for i in 0..data.nrows() {
        let y = ae.reconstruct(&data.row(i).transpose())?;
        recon.row_mut(i).copy_from(&y.transpose());
    }
    mse_loss(data, &recon)
}

/// Mini-batch gradient descent with deterministic seeded shuffling.
/// On a non-finite loss the last finite state is returned with the
/// `diverged` flag set.
pub fn train_autoencoder(
    ae: &AeParams,
    data: &DMatrix<f64>,
    opts: &AeTrainOptions,
) -> Result<(AeParams, AeTrainReport)> {
    if data.nrows() == 0 {
        return Err(Error::Domain("empty training data".into()));
    }
    let n = data.nrows();
    let batch = opts.batch.max(1).min(n);
    let mut rng = rng_from(opts.seed);
    let mut current = ae.clone();
    let mut losses = vec![full_loss(&current, data)?];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.epochs {
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let snapshot = current.clone();
        for chunk in order.chunks(batch) {
            let mut mb = DMatrix::zeros(chunk.len(), data.ncols());
            for (k, &idx) in chunk.iter().enumerate() {
                mb.row_mut(k).copy_from(&data.row(idx));
            }
            let grads = grad_autoencoder(&current, &mb)?;
            apply_step(&mut current.encoder, &grads.encoder, opts.step);
            apply_step(&mut current.decoder, &grads.decoder, opts.step);
        }
        let loss = full_loss(&current, data)?;
        if !loss.is_finite() {
            return Ok((
                snapshot,
                AeTrainReport {
                    losses,
                    diverged: true,
                },
            ));
        }
        losses.push(loss);
    }
    Ok((
        current,
        AeTrainReport {
            losses,
            diverged: false,
        },
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpJson {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

fn mlp_to_json(net: &MlpParams) -> MlpJson {
    MlpJson {
        layer_sizes: net.layer_sizes.clone(),
        weights: net
            .weights
            .iter()
            .map(|w| {
                (0..w.nrows())
                    .map(|i| (0..w.ncols()).map(|j| w[(i, j)]).collect())
                    .collect()
            })
            .collect(),
        biases: net.biases.iter().map(|b| b.iter().cloned().collect()).collect(),
        activation: net.activation,
    }
}

fn mlp_from_json(doc: MlpJson) -> Result<MlpParams> {
    let weights = doc
        .weights
        .iter()
        .map(|w| {
            let rows = w.len();
            let cols = w.first().map(|r| r.len()).unwrap_or(0);
            DMatrix::from_fn(rows, cols, |i, j| w[i][j])
        })
        .collect();
    let biases = doc.biases.iter().map(|b| DVector::from_vec(b.clone())).collect();
    Ok(MlpParams {
        layer_sizes: doc.layer_sizes,
        weights,
        biases,
        activation: doc.activation,
    })
}

pub fn ae_to_json(ae: &AeParams) -> serde_json::Value {
    serde_json::json!({
        "encoder": serde_json::to_value(mlp_to_json(&ae.encoder)).unwrap(),
        "decoder": serde_json::to_value(mlp_to_json(&ae.decoder)).unwrap(),
    })
}

pub fn ae_from_json(value: &serde_json::Value) -> Result<AeParams> {
    let enc: MlpJson = serde_json::from_value(
        value
            .get("encoder")
            .ok_or_else(|| Error::Config("missing encoder".into()))?
            .clone(),
    )?;
    let dec: MlpJson = serde_json::from_value(
        value
            .get("decoder")
            .ok_or_else(|| Error::Config("missing decoder".into()))?
            .clone(),
    )?;
    AeParams::new(mlp_from_json(enc)?, mlp_from_json(dec)?)
}

/// Central finite differences of `loss` with respect to every parameter of
/// `net`, compared against analytic gradients. Returns the maximum relative
/// error. Test and self-check use only.
pub fn finite_difference_max_rel_error<F>(
    net: &MlpParams,
    analytic: &MlpGrads,
    eps: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&MlpParams) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let denom_floor = 1e-8;
    for l in 0..net.weights.len() {
        for i in 0..net.weights[l].nrows() {
            for j in 0..net.weights[l].ncols() {
                let orig = probe.weights[l][(i, j)];
                probe.weights[l][(i, j)] = orig + eps;
                let up = loss(&probe);
                probe.weights[l][(i, j)] = orig - eps;
                let down = loss(&probe);
                probe.weights[l][(i, j)] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.dw[l][(i, j)];
                let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(denom_floor);
                worst = worst.max(rel);
            }
        }
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + eps;
            let up = loss(&probe);
            probe.biases[l][i] = orig - eps;
            let down = loss(&probe);
            probe.biases[l][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.db[l][i];
            let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(denom_floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Gradient check on an autoencoder of the given encoder layout, returning
/// the maximum relative error across encoder and decoder parameters.
pub fn gradcheck_architecture(encoder_sizes: &[usize], seed: u64) -> Result<f64> {
    gradcheck_impl(encoder_sizes, seed, false)
}

/// Same check with deliberately sign-flipped analytic gradients; must fail.
/// Exists so the self-check can prove it would catch a broken gradient.
pub fn gradcheck_architecture_mutated(encoder_sizes: &[usize], seed: u64) -> Result<f64> {
    gradcheck_impl(encoder_sizes, seed, true)
}

fn gradcheck_impl(encoder_sizes: &[usize], seed: u64, flip: bool) -> Result<f64> {
    let ae = AeParams::new_random(encoder_sizes, Activation::Tanh, seed)?;
    let mut rng = rng_from(seed.wrapping_add(17));
    let data = DMatrix::from_fn(4, encoder_sizes[0], |_, _| 2.0 * rng.gen::<f64>() - 1.0);
    let mut grads = grad_autoencoder(&ae, &data)?;
    if flip {
        for g in [&mut grads.encoder, &mut grads.decoder] {
            for w in &mut g.dw {
                *w = -w.clone();
            }
            for b in &mut g.db {
                *b = -b.clone();
            }
        }
    }
    let eps = 1e-5;
    let enc_err = {
        let dec = ae.decoder.clone();
        finite_difference_max_rel_error(&ae.encoder, &grads.encoder, eps, |enc| {
            let probe = AeParams {
                encoder: enc.clone(),
                decoder: dec.clone(),
            };
            batch_recon_loss(&probe, &data)
        })
    };
    let dec_err = {
        let enc = ae.encoder.clone();
        finite_difference_max_rel_error(&ae.decoder, &grads.decoder, eps, |dec| {
            let probe = AeParams {
                encoder: enc.clone(),
                decoder: dec.clone(),
            };
            batch_recon_loss(&probe, &data)
        })
    };
    Ok(enc_err.max(dec_err))
}

fn batch_recon_loss(ae: &AeParams, data: &DMatrix<f64>) -> f64 {
    let mut recon = DMatrix::zeros(data.nrows(), data.ncols());
    for i in 0..data.nrows() {
        let y = ae.reconstruct(&data.row(i).transpose()).unwrap();
        recon.row_mut(i).copy_from(&y.transpose());
    }
    mse_loss(data, &recon).unwrap()
}

/// Architectures exercised by the gradient self-check.
pub const GRADCHECK_ARCHITECTURES: [&[usize]; 3] =
    [&[3, 8, 2], &[1, 4, 1], &[3, 16, 8, 2]];
