//! Variational autoencoder over an encoded feature matrix, with a weighted
//! three-term loss that prices coordinate reconstruction above the other
//! features, and Gaussian-latent sampling.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, EncodedMatrix, Layout};
use crate::diffnet::{Activation, DenseNet, ParamStore, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_geo: f64,
    pub alpha_r: f64,
    pub alpha_kl: f64,
}

impl LossWeights {
    pub fn new(alpha_geo: f64, alpha_r: f64, alpha_kl: f64) -> Result<LossWeights> {
        if !(alpha_geo > alpha_r && alpha_r > alpha_kl && alpha_kl > 0.0) {
            return Err(Error::Config(
                "loss weights must satisfy alpha_geo > alpha_r > alpha_kl > 0".into(),
            ));
        }
        Ok(LossWeights {
            alpha_geo,
            alpha_r,
            alpha_kl,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_geo: 10.0,
            alpha_r: 1.0,
            alpha_kl: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeArch {
    /// Latent dimension; `None` picks max(2, ceil(M/4)).
    pub k: Option<usize>,
    pub hidden: Vec<usize>,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            k: None,
            hidden: vec![128, 128],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossBreakdown {
    pub l_geo: f64,
    pub l_r: f64,
    pub l_kl: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct VaeModel {
    pub k: usize,
    pub m: usize,
    pub weights: LossWeights,
    /// Encoded-matrix columns holding the coordinates (or their flow latents).
    pub geo_cols: [usize; 2],
    pub layout: Layout,
    encoder: DenseNet,
    decoder: DenseNet,
    store: ParamStore,
}

fn geo_columns(layout: &Layout) -> Result<[usize; 2]> {
    let mut lon = None;
    let mut lat = None;
    for g in &layout.groups {
        match layout.schema[g.source].kind {
            ColumnKind::Longitude => lon = Some(g.start),
            ColumnKind::Latitude => lat = Some(g.start),
            _ => {}
        }
    }
    match (lon, lat) {
        (Some(a), Some(b)) => Ok([a, b]),
        _ => Err(Error::Schema("layout lacks coordinate columns".into())),
    }
}

impl VaeModel {
    pub fn new(
        layout: Layout,
        arch: &VaeArch,
        weights: LossWeights,
        seed: u64,
    ) -> Result<VaeModel> {
        let m = layout.width;
        let k = arch.k.unwrap_or_else(|| 2.max(m.div_ceil(4)));
        if k >= m {
            return Err(Error::Config(format!(
                "latent dimension {k} must be smaller than feature width {m}"
            )));
        }
        let geo_cols = geo_columns(&layout)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc_widths = vec![m];
        enc_widths.extend(&arch.hidden);
        enc_widths.push(2 * k);
        let encoder = DenseNet::init(
            "enc",
            &enc_widths,
            Activation::Relu,
            Activation::Identity,
            true,
            &mut store,
            &mut rng,
        )?;
        let mut dec_widths = vec![k];
        dec_widths.extend(&arch.hidden);
        dec_widths.push(m);
        let decoder = DenseNet::init(
            "dec",
            &dec_widths,
            Activation::Relu,
            Activation::Identity,
            true,
            &mut store,
            &mut rng,
        )?;
        Ok(VaeModel {
            k,
            m,
            weights,
            geo_cols,
            layout,
            encoder,
            decoder,
            store,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "k": self.k,
            "m": self.m,
            "weights": self.weights,
            "geo_cols": self.geo_cols,
            "layout": self.layout,
            "encoder": self.encoder,
            "decoder": self.decoder,
            "store": self.store.to_json(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<VaeModel> {
        Ok(VaeModel {
            k: serde_json::from_value(value["k"].clone())?,
            m: serde_json::from_value(value["m"].clone())?,
            weights: serde_json::from_value(value["weights"].clone())?,
            geo_cols: serde_json::from_value(value["geo_cols"].clone())?,
            layout: serde_json::from_value(value["layout"].clone())?,
            encoder: serde_json::from_value(value["encoder"].clone())?,
            decoder: serde_json::from_value(value["decoder"].clone())?,
            store: ParamStore::from_json(&value["store"])?,
        })
    }
}

/// Forward pass plus gradient accumulation into the model's parameter store.
/// The reparameterization noise is drawn from a ChaCha stream seeded here, so
/// the loss (and its finite-difference derivative) is a deterministic
/// function of (parameters, batch, seed).
pub fn vae_loss(model: &mut VaeModel, batch: &Array2<f64>, seed: u64) -> Result<VaeLossBreakdown> {
    let b = batch.nrows();
    let m = model.m;
    let k = model.k;
    if batch.ncols() != m || b == 0 {
        return Err(Error::Shape(format!(
            "batch shape {:?} does not match layout width {m}",
            batch.dim()
        )));
    }
    let (enc_out, enc_tape) = model.encoder.forward(&model.store, batch)?;
    let mu = enc_out.slice(s![.., 0..k]).to_owned();
    let logvar = enc_out.slice(s![.., k..2 * k]).to_owned();
    let sigma = logvar.mapv(|v| (0.5 * v).exp());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Array2::from_shape_fn((b, k), |_| rng.sample::<f64, _>(StandardNormal));
    let z = &mu + &(&sigma * &eps);
    let (recon, dec_tape) = model.decoder.forward(&model.store, &z)?;

    let is_geo = |j: usize| j == model.geo_cols[0] || j == model.geo_cols[1];
    let inv_b = 1.0 / b as f64;
    let mut l_geo = 0.0;
    let mut l_r = 0.0;
    for i in 0..b {
        for j in 0..m {
            let d = recon[[i, j]] - batch[[i, j]];
            if is_geo(j) {
                l_geo += d * d;
            } else {
                l_r += d * d;
            }
        }
    }
    l_geo *= inv_b;
    l_r *= inv_b;
    let mut l_kl = 0.0;
    for i in 0..b {
        for d in 0..k {
            l_kl += 0.5 * (mu[[i, d]].powi(2) + sigma[[i, d]].powi(2) - logvar[[i, d]] - 1.0);
        }
    }
    l_kl *= inv_b;
    let w = model.weights;
    let total = w.alpha_geo * l_geo + w.alpha_r * l_r + w.alpha_kl * l_kl;
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }

    // backward
    let mut grad_recon = Array2::zeros((b, m));
    for i in 0..b {
        for j in 0..m {
            let weight = if is_geo(j) { w.alpha_geo } else { w.alpha_r };
            grad_recon[[i, j]] = 2.0 * weight * (recon[[i, j]] - batch[[i, j]]) * inv_b;
        }
    }
    let grad_z = model
        .decoder
        .backward(&mut model.store, &dec_tape, &grad_recon)?;
    let kl_scale = w.alpha_kl * inv_b;
    let mut grad_enc = Array2::zeros((b, 2 * k));
    for i in 0..b {
        for d in 0..k {
            grad_enc[[i, d]] = grad_z[[i, d]] + kl_scale * mu[[i, d]];
            grad_enc[[i, k + d]] = grad_z[[i, d]] * eps[[i, d]] * 0.5 * sigma[[i, d]]
                + kl_scale * 0.5 * (sigma[[i, d]].powi(2) - 1.0);
        }
    }
    model.encoder.backward(&mut model.store, &enc_tape, &grad_enc)?;

    Ok(VaeLossBreakdown {
        l_geo,
        l_r,
        l_kl,
        total,
    })
}

/// Fit a VAE on an encoded matrix by Adam on the weighted loss.
pub fn train_vae(
    data: &EncodedMatrix,
    config: &TrainConfig,
    arch: &VaeArch,
    weights: LossWeights,
) -> Result<(VaeModel, Vec<f64>)> {
    let n = data.values.nrows();
    if n < 100 {
        return Err(Error::TooFewSamples { need: 100, got: n });
    }
    let mut model = VaeModel::new(data.layout.clone(), arch, weights, config.seed)?;
    let history = crate::diffnet::train_loop(&data.values, config, |batch, epoch, idx| {
        model.store.zero_grads();
        let noise_seed = config
            .seed
            .wrapping_add((epoch as u64).wrapping_mul(1_000_003))
            .wrapping_add(idx as u64);
        let breakdown = vae_loss(&mut model, batch, noise_seed)?;
        model.store.adam_step(config);
        Ok(breakdown.total)
    })?;
    Ok((model, history))
}

/// Decode `n` seeded standard-normal latent vectors; output is in the
/// encoded feature space of the training layout.
pub fn vae_sample(model: &VaeModel, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Ok(Array2::zeros((0, model.m)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Array2::from_shape_fn((n, model.k), |_| rng.sample::<f64, _>(StandardNormal));
    let (out, _) = model.decoder.forward(&model.store, &z)?;
    Ok(out)
}

/// Evaluate the loss on held data without touching gradients.
pub fn vae_eval(model: &VaeModel, data: &Array2<f64>, seed: u64) -> Result<VaeLossBreakdown> {
    // run on a throwaway clone so accumulated gradients are discarded
    let mut scratch = VaeModel {
        k: model.k,
        m: model.m,
        weights: model.weights,
        geo_cols: model.geo_cols,
        layout: model.layout.clone(),
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        store: model.store.clone(),
    };
    vae_loss(&mut scratch, data, seed)
}
