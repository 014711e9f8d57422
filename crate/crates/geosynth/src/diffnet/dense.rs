//! Batched dense MLP with a recorded forward tape for reverse-mode gradients.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softplus,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(pre),
        }
    }
}

fn softplus(x: f64) -> f64 {
    // numerically stable: log(1 + e^x) = max(x, 0) + log(1 + e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense network: affine + activation per layer. Parameters live in a
/// `ParamStore` under `<prefix>.w<i>` / `<prefix>.b<i>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Intermediates recorded during a forward pass.
#[derive(Debug)]
pub struct NetTape {
    input: Array2<f64>,
    preacts: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    version: u64,
}

impl DenseNet {
    /// Register freshly initialized parameters in the store. Weights draw
    /// uniform in +-sqrt(6/(fan_in+fan_out)); biases start at zero. With
    /// `zero_final`, the last layer starts at exactly zero so the net's
    /// initial output is the zero vector.
    pub fn init(
        prefix: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        zero_final: bool,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<DenseNet> {
        if widths.len() < 2 {
            return Err(Error::Config("dense net needs at least two widths".into()));
        }
        let n_layers = widths.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let last = l == n_layers - 1;
            let w = if zero_final && last {
                Array2::zeros((fan_in, fan_out))
            } else {
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound))
            };
            store.insert(&format!("{prefix}.w{l}"), w);
            store.insert(&format!("{prefix}.b{l}"), Array2::zeros((1, fan_out)));
        }
        Ok(DenseNet {
            prefix: prefix.to_string(),
            widths: widths.to_vec(),
            hidden,
            output,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Batched forward pass with recorded intermediates.
    pub fn forward(&self, store: &ParamStore, input: &Array2<f64>) -> Result<(Array2<f64>, NetTape)> {
        if input.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "net {} expects {} inputs, got {}",
                self.prefix,
                self.input_width(),
                input.ncols()
            )));
        }
        let mut preacts = Vec::with_capacity(self.n_layers());
        let mut acts = Vec::with_capacity(self.n_layers());
        let mut current = input.clone();
        for l in 0..self.n_layers() {
            let w = store.get(&format!("{}.w{l}", self.prefix));
            let b = store.get(&format!("{}.b{l}", self.prefix));
            let mut pre = current.dot(w);
            pre += &b.row(0);
            let activation = if l == self.n_layers() - 1 {
                self.output
            } else {
                self.hidden
            };
            let act = pre.mapv(|x| activation.apply(x));
            preacts.push(pre);
            acts.push(act.clone());
            current = act;
        }
        let tape = NetTape {
            input: input.clone(),
            preacts,
            acts,
            version: store.version(),
        };
        Ok((current, tape))
    }

    /// Reverse-mode pass. Accumulates parameter gradients into the store and
    /// returns the gradient with respect to the input batch. Repeated calls
    /// accumulate (sum).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        tape: &NetTape,
        grad_output: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if store.version() != tape.version {
            return Err(Error::StaleTape);
        }
        let mut delta = grad_output.clone();
        for l in (0..self.n_layers()).rev() {
            let activation = if l == self.n_layers() - 1 {
                self.output
            } else {
                self.hidden
            };
            let pre = &tape.preacts[l];
            delta.zip_mut_with(pre, |d, &p| *d *= activation.derivative(p));

            let upstream: &Array2<f64> = if l == 0 { &tape.input } else { &tape.acts[l - 1] };
            let grad_w = upstream.t().dot(&delta);
            let grad_b = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
            store.accumulate_grad(&format!("{}.w{l}", self.prefix), &grad_w);
            store.accumulate_grad(&format!("{}.b{l}", self.prefix), &grad_b);

            let w = store.get(&format!("{}.w{l}", self.prefix));
            delta = delta.dot(&w.t());
        }
        Ok(delta)
    }
}
