//! Minimal differentiable substrate: dense layers with recorded tapes,
//! an Adam optimizer, a seeded mini-batch training loop, and a scalar
//! reverse-mode tape (`scalar`) for the spline transforms.
//!
//! Everything is 64-bit and deterministic given (inputs, seed).

pub mod dense;
pub mod scalar;

use std::collections::BTreeMap;

use base64::Engine;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dense::{Activation, DenseNet, NetTape};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub betas: (f64, f64),
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            grad_clip: Some(5.0),
            betas: (0.9, 0.999),
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl ParamEntry {
    fn new(value: Array2<f64>) -> Self {
        let shape = value.raw_dim();
        ParamEntry {
            value,
            grad: Array2::zeros(shape.clone()),
            m: Array2::zeros(shape.clone()),
            v: Array2::zeros(shape),
        }
    }
}

/// Named parameter arrays with gradient and Adam moment buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.entries.insert(name.to_string(), ParamEntry::new(value));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.entries[name].value
    }

    pub fn grad(&self, name: &str) -> &Array2<f64> {
        &self.entries[name].grad
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Array2<f64>) {
        let entry = self.entries.get_mut(name).expect("parameter exists");
        entry.grad += grad;
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.fill(0.0);
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Sum of squared gradient entries.
    pub fn grad_sq_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|e| e.grad.iter().map(|g| g * g).sum::<f64>())
            .sum()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for entry in self.entries.values_mut() {
            entry.grad.mapv_inplace(|g| g * factor);
        }
    }

    /// One Adam update with bias correction. Gradient clipping, when
    /// configured, rescales by the global norm across all entries. The caller
    /// zeroes gradients.
    pub fn adam_step(&mut self, config: &TrainConfig) {
        if let Some(clip) = config.grad_clip {
            let norm = self.grad_sq_norm().sqrt();
            if norm > clip {
                self.scale_grads(clip / norm);
            }
        }
        self.step += 1;
        self.version += 1;
        let t = self.step as f64;
        let (b1, b2) = config.betas;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        for entry in self.entries.values_mut() {
            azip_adam(entry, b1, b2, bias1, bias2, config.learning_rate, config.epsilon);
        }
    }

    /// Bit-exact JSON checkpoint: shapes plus base64 of little-endian f64s.
    pub fn to_json(&self) -> serde_json::Value {
        let mut params = serde_json::Map::new();
        for (name, entry) in &self.entries {
            let bytes: Vec<u8> = entry
                .value
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            params.insert(
                name.clone(),
                serde_json::json!({
                    "shape": [entry.value.nrows(), entry.value.ncols()],
                    "data": base64::engine::general_purpose::STANDARD.encode(&bytes),
                }),
            );
        }
        serde_json::json!({ "step": self.step, "params": params })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let mut store = ParamStore::new();
        store.step = value.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        let params = value
            .get("params")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::Data("checkpoint missing params object".into()))?;
        for (name, spec) in params {
            let shape = spec
                .get("shape")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Data("checkpoint param missing shape".into()))?;
            let rows = shape[0].as_u64().unwrap_or(0) as usize;
            let cols = shape[1].as_u64().unwrap_or(0) as usize;
            let encoded = spec
                .get("data")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Data("checkpoint param missing data".into()))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(encoded)
                .map_err(|e| Error::Data(format!("bad base64 in checkpoint: {e}")))?;
            if bytes.len() != rows * cols * 8 {
                return Err(Error::Data(format!(
                    "checkpoint param {name} has {} bytes, expected {}",
                    bytes.len(),
                    rows * cols * 8
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let array = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::Shape(format!("checkpoint param {name}: {e}")))?;
            store.insert(name, array);
        }
        Ok(store)
    }
}

fn azip_adam(
    entry: &mut ParamEntry,
    b1: f64,
    b2: f64,
    bias1: f64,
    bias2: f64,
    lr: f64,
    eps: f64,
) {
    let g = &entry.grad;
    entry.m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
    entry.v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
    let m = &entry.m;
    let v = &entry.v;
    ndarray::Zip::from(&mut entry.value)
        .and(m)
        .and(v)
        .for_each(|p, &m, &v| {
            let m_hat = m / bias1;
            let v_hat = v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}

/// Seeded mini-batch loop. Shuffles rows each epoch, feeds each batch to the
/// step function (which computes the loss, backpropagates, and updates
/// parameters), and returns per-epoch mean losses. Aborts on non-finite loss.
pub fn train_loop<F>(data: &Array2<f64>, config: &TrainConfig, mut step_fn: F) -> Result<Vec<f64>>
where
    F: FnMut(&Array2<f64>, usize, usize) -> Result<f64>,
{
    config.validate()?;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyData("train_loop on empty data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch = gather_rows(data, chunk);
            let loss = step_fn(&batch, epoch, batch_idx)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.push(epoch_loss / seen as f64);
    }
    Ok(history)
}

pub fn gather_rows(data: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), data.ncols()));
    for (k, &i) in indices.iter().enumerate() {
        out.row_mut(k).assign(&data.row(i));
    }
    out
}
