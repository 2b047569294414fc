//! Minimal feed-forward network engine: dense layers with Leaky-ReLU hidden
//! activations, identity output, MSE loss on z-score-normalized targets,
//! analytic backpropagation, and mini-batch Adam with early stopping.
//!
//! All randomness (init, validation split, shuffling) is driven by explicit
//! seeds, so training is fully reproducible. Loss and gradient sums are
//! accumulated in f64 throughout.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"FSOMLP1";

/// Network architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths, input through output; at least two entries.
    pub layer_sizes: Vec<usize>,
    /// Negative-side slope of the Leaky-ReLU hidden activation.
    pub leaky_slope: f64,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Self {
        Self {
            layer_sizes,
            leaky_slope: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("MlpSpec needs at least input and output layers".into()));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("all layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-feature affine normalization (z-score).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    /// Column-wise mean/std fit; degenerate columns get unit std.
    pub fn fit(data: &Array2<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mean = data.sum_axis(Axis(0)) / n;
        let mut var = Array1::zeros(data.ncols());
        for row in data.rows() {
            for (k, v) in row.iter().enumerate() {
                let d = v - mean[k];
                var[k] += d * d;
            }
        }
        let std = var.mapv(|v: f64| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self { mean, std }
    }

    pub fn apply(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn invert(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        out
    }
}

/// A trained (or freshly initialized) feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    /// weights[l] has shape (layer_sizes[l+1], layer_sizes[l]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input_norm: Normalization,
    pub target_norm: Normalization,
}

/// Gradients matching the model's parameter layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
}

/// Optimization settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config("learning_rate and adam_eps must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config("validation_fraction must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Per-epoch training trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// He-style fan-in-scaled Gaussian init, zero biases, identity norms.
pub fn mlp_init(spec: &MlpSpec) -> Result<MlpModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let wmat = Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(&mut rng));
        weights.push(wmat);
        biases.push(Array1::zeros(fan_out));
    }
    let d_in = spec.layer_sizes[0];
    let d_out = *spec.layer_sizes.last().unwrap();
    Ok(MlpModel {
        spec: spec.clone(),
        weights,
        biases,
        input_norm: Normalization::identity(d_in),
        target_norm: Normalization::identity(d_out),
    })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    /// Forward pass in normalized space: rows of `x` are already
    /// input-normalized samples.
    fn forward_normalized(&self, x: &Array2<f64>) -> Array2<f64> {
        let n_layers = self.weights.len();
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            for mut row in z.rows_mut() {
                row += b;
            }
            if l + 1 < n_layers {
                z.mapv_inplace(|v| if v > 0.0 { v } else { self.spec.leaky_slope * v });
            }
            a = z;
        }
        a
    }

    /// Full inference on a batch of raw feature rows: input normalization,
    /// network, target denormalization.
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "expected {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let xn = self.input_norm.apply(x);
        let out = self.forward_normalized(&xn);
        Ok(self.target_norm.invert(&out))
    }

    /// Single-sample inference.
    pub fn predict(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let batch = x
            .clone()
            .into_shape_with_order((1, x.len()))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict_batch(&batch)?.row(0).to_owned())
    }
}

/// Single-sample forward pass.
pub fn forward(model: &MlpModel, x: &Array1<f64>) -> Result<Array1<f64>> {
    model.predict(x)
}

/// MSE over normalized targets plus exact analytic gradients.
///
/// Inputs are raw feature/target rows; both are passed through the model's
/// normalizations before the loss is formed.
pub fn loss_and_gradients(
    model: &MlpModel,
    batch_x: &Array2<f64>,
    batch_y: &Array2<f64>,
) -> Result<(f64, Gradients)> {
    if batch_x.ncols() != model.input_dim() || batch_y.ncols() != model.output_dim() {
        return Err(Error::Shape(format!(
            "batch dims ({}, {}) do not match model ({}, {})",
            batch_x.ncols(),
            batch_y.ncols(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    if batch_x.nrows() != batch_y.nrows() {
        return Err(Error::Shape("batch_x and batch_y row counts differ".into()));
    }
    let xn = model.input_norm.apply(batch_x);
    let yn = model.target_norm.apply(batch_y);
    Ok(loss_and_gradients_normalized(model, &xn, &yn))
}

/// Backprop core on pre-normalized batches.
fn loss_and_gradients_normalized(
    model: &MlpModel,
    xn: &Array2<f64>,
    yn: &Array2<f64>,
) -> (f64, Gradients) {
    let n_layers = model.weights.len();
    let batch = xn.nrows();

    // Forward, keeping pre-activations for the backward pass.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
    activations.push(xn.clone());
    let mut pre_acts: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = activations[l].dot(&w.t());
        for mut row in z.rows_mut() {
            row += b;
        }
        pre_acts.push(z.clone());
        if l + 1 < n_layers {
            z.mapv_inplace(|v| if v > 0.0 { v } else { model.spec.leaky_slope * v });
        }
        activations.push(z);
    }

    let pred = activations.last().unwrap();
    let denom = (batch * model.output_dim()) as f64;
    let diff = pred - yn;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / denom;

    // delta at the output: dL/dz_out for identity activation.
    let mut delta = diff * (2.0 / denom);
    let mut d_weights: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
    let mut d_biases: Vec<Array1<f64>> = vec![Array1::zeros(0); n_layers];
    for l in (0..n_layers).rev() {
        d_weights[l] = delta.t().dot(&activations[l]);
        d_biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&model.weights[l]);
            // Leaky-ReLU derivative at the previous pre-activation.
            for (b, z) in back.iter_mut().zip(pre_acts[l - 1].iter()) {
                if *z <= 0.0 {
                    *b *= model.spec.leaky_slope;
                }
            }
            delta = back;
        }
    }

    (
        loss,
        Gradients {
            d_weights,
            d_biases,
        },
    )
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        Self {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = cfg.learning_rate;
        for l in 0..model.weights.len() {
            azip_update(
                model.weights[l].as_slice_mut().unwrap(),
                grads.d_weights[l].as_slice().unwrap(),
                self.m_w[l].as_slice_mut().unwrap(),
                self.v_w[l].as_slice_mut().unwrap(),
                b1,
                b2,
                bc1,
                bc2,
                lr,
                cfg.adam_eps,
            );
            azip_update(
                model.biases[l].as_slice_mut().unwrap(),
                grads.d_biases[l].as_slice().unwrap(),
                self.m_b[l].as_slice_mut().unwrap(),
                self.v_b[l].as_slice_mut().unwrap(),
                b1,
                b2,
                bc1,
                bc2,
                lr,
                cfg.adam_eps,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Fits normalization on the training split, runs seeded mini-batch Adam
/// with early stopping on a validation split, and returns the
/// best-validation model with the per-epoch loss trace.
pub fn train(
    model: MlpModel,
    x: &Array2<f64>,
    y: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Shape("x and y row counts differ".into()));
    }
    if x.ncols() != model.input_dim() || y.ncols() != model.output_dim() {
        return Err(Error::Shape(format!(
            "dataset dims ({}, {}) do not match model ({}, {})",
            x.ncols(),
            y.ncols(),
            model.input_dim(),
            model.output_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let split = n.saturating_sub(n_val).max(1);
    let (train_idx, val_idx) = indices.split_at(split.min(n));
    let train_idx = train_idx.to_vec();
    // Degenerate one-sample dataset: validate on the training sample.
    let val_idx = if val_idx.is_empty() {
        train_idx.clone()
    } else {
        val_idx.to_vec()
    };

    let gather = |src: &Array2<f64>, idx: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&src.row(i));
        }
        out
    };

    let x_train = gather(x, &train_idx);
    let y_train = gather(y, &train_idx);
    let x_val = gather(x, &val_idx);
    let y_val = gather(y, &val_idx);

    let mut model = model;
    model.input_norm = Normalization::fit(&x_train);
    model.target_norm = Normalization::fit(&y_train);

    // Normalize once; batches are gathered from these.
    let xn = model.input_norm.apply(&x_train);
    let yn = model.target_norm.apply(&y_train);
    let xvn = model.input_norm.apply(&x_val);
    let yvn = model.target_norm.apply(&y_val);

    let mut adam = AdamState::new(&model);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut trace = Vec::new();
    let n_train = xn.nrows();
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = gather(&xn, chunk);
            let by = gather(&yn, chunk);
            let (loss, grads) = loss_and_gradients_normalized(&model, &bx, &by);
            adam.step(&mut model, &grads, cfg);
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches.max(1) as f64;
        let val_pred = model.forward_normalized(&xvn);
        let vdiff = &val_pred - &yvn;
        let val_loss =
            vdiff.iter().map(|d| d * d).sum::<f64>() / (xvn.nrows() * model.output_dim()) as f64;
        trace.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs > cfg.patience {
                break;
            }
        }
    }
    Ok((best, trace))
}

/// Writes the model as a self-describing little-endian binary container.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(model.weights.len() as u32)?;
    buf.write_f64::<LittleEndian>(model.spec.leaky_slope)?;
    buf.write_u64::<LittleEndian>(model.spec.seed)?;
    for (w, b) in model.weights.iter().zip(&model.biases) {
        buf.write_u32::<LittleEndian>(w.nrows() as u32)?;
        buf.write_u32::<LittleEndian>(w.ncols() as u32)?;
        for v in w.iter() {
            buf.write_f64::<LittleEndian>(*v)?;
        }
        for v in b.iter() {
            buf.write_f64::<LittleEndian>(*v)?;
        }
    }
    for norm in [&model.input_norm, &model.target_norm] {
        buf.write_u32::<LittleEndian>(norm.mean.len() as u32)?;
        for v in norm.mean.iter().chain(norm.std.iter()) {
            buf.write_f64::<LittleEndian>(*v)?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a model container written by [`save_model`]; round-trips bit-exact.
pub fn load_model(path: &Path) -> Result<MlpModel> {
    let data = std::fs::read(path)?;
    let mut cur = std::io::Cursor::new(&data);
    let mut magic = [0u8; 7];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!(
            "bad model magic in {}",
            path.display()
        )));
    }
    let n_layers = cur.read_u32::<LittleEndian>()? as usize;
    let leaky_slope = cur.read_f64::<LittleEndian>()?;
    let seed = cur.read_u64::<LittleEndian>()?;
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    let mut layer_sizes = Vec::with_capacity(n_layers + 1);
    for l in 0..n_layers {
        let rows = cur.read_u32::<LittleEndian>()? as usize;
        let cols = cur.read_u32::<LittleEndian>()? as usize;
        if l == 0 {
            layer_sizes.push(cols);
        }
        layer_sizes.push(rows);
        let mut w = Array2::zeros((rows, cols));
        for v in w.iter_mut() {
            *v = cur.read_f64::<LittleEndian>()?;
        }
        let mut b = Array1::zeros(rows);
        for v in b.iter_mut() {
            *v = cur.read_f64::<LittleEndian>()?;
        }
        weights.push(w);
        biases.push(b);
    }
    let mut norms = Vec::with_capacity(2);
    for _ in 0..2 {
        let dim = cur.read_u32::<LittleEndian>()? as usize;
        let mut mean = Array1::zeros(dim);
        for v in mean.iter_mut() {
            *v = cur.read_f64::<LittleEndian>()?;
        }
        let mut std = Array1::zeros(dim);
        for v in std.iter_mut() {
            *v = cur.read_f64::<LittleEndian>()?;
        }
        norms.push(Normalization { mean, std });
    }
    let target_norm = norms.pop().unwrap();
    let input_norm = norms.pop().unwrap();
    Ok(MlpModel {
        spec: MlpSpec {
            layer_sizes,
            leaky_slope,
            seed,
        },
        weights,
        biases,
        input_norm,
        target_norm,
    })
}
