//! Gaussian copula over mixed marginals: empirical inverse-CDF numerics and
//! frequency-interval categoricals, coupled through a latent normal with a
//! PSD-repaired correlation matrix.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;

/// One source column handed to the copula.
#[derive(Debug, Clone)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// `values` are level indices into `levels`.
    Categorical { levels: Vec<String>, values: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Marginal {
    /// Sorted empirical values; inverse CDF by linear interpolation.
    Numeric { sorted: Vec<f64> },
    /// Levels own contiguous sub-intervals of [0,1] sized by frequency;
    /// `cum[k]` is the upper bound of level k's interval.
    Categorical { levels: Vec<String>, cum: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CopulaState {
    pub marginals: Vec<Marginal>,
    /// Latent correlation after nearest-PSD repair.
    pub correlation: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
}

/// Average ranks (ties averaged), mapped to (0,1) via r/(n+1).
fn uniform_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks.iter().map(|r| r / (n as f64 + 1.0)).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

pub fn fit_copula(columns: &[ColumnData]) -> Result<CopulaState> {
    if columns.is_empty() {
        return Err(Error::EmptyData("copula needs at least one column".into()));
    }
    let n = match &columns[0] {
        ColumnData::Numeric(v) => v.len(),
        ColumnData::Categorical { values, .. } => values.len(),
    };
    if n == 0 {
        return Err(Error::EmptyData("copula fit on zero rows".into()));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut marginals = Vec::with_capacity(columns.len());
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    for col in columns {
        match col {
            ColumnData::Numeric(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite numeric value in copula fit".into()));
                }
                let mut sorted = values.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let z: Vec<f64> = uniform_scores(values)
                    .iter()
                    .map(|&u| normal.inverse_cdf(u))
                    .collect();
                marginals.push(Marginal::Numeric { sorted });
                scores.push(z);
            }
            ColumnData::Categorical { levels, values } => {
                let mut counts = vec![0usize; levels.len()];
                for &v in values {
                    if v >= levels.len() {
                        return Err(Error::Data("categorical index out of range".into()));
                    }
                    counts[v] += 1;
                }
                let mut cum = Vec::with_capacity(levels.len());
                let mut acc = 0.0;
                for &c in &counts {
                    acc += c as f64 / n as f64;
                    cum.push(acc);
                }
                // pin the last bound so lookup never falls off the end
                *cum.last_mut().unwrap() = 1.0;
                // latent score: midpoint of the level's interval
                let z: Vec<f64> = values
                    .iter()
                    .map(|&v| {
                        let lo = if v == 0 { 0.0 } else { cum[v - 1] };
                        let mid = 0.5 * (lo + cum[v]);
                        normal.inverse_cdf(mid.clamp(1e-12, 1.0 - 1e-12))
                    })
                    .collect();
                marginals.push(Marginal::Categorical {
                    levels: levels.clone(),
                    cum,
                });
                scores.push(z);
            }
        }
    }
    let d = columns.len();
    let mut corr = Array2::eye(d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson(&scores[i], &scores[j]);
            corr[[i, j]] = r;
            corr[[j, i]] = r;
        }
    }
    let repaired = linalg::nearest_psd(&corr, 1e-10)?;
    let chol = linalg::cholesky(&repaired)?;
    let to_vecs = |m: &Array2<f64>| -> Vec<Vec<f64>> {
        (0..d).map(|i| m.row(i).to_vec()).collect()
    };
    Ok(CopulaState {
        marginals,
        correlation: to_vecs(&repaired),
        chol: to_vecs(&chol),
    })
}

fn inverse_ecdf(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let p = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = p - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Draw n rows. One f64 column per marginal: numerics carry values,
/// categoricals carry level indices.
pub fn copula_sample(state: &CopulaState, n: usize, seed: u64) -> Array2<f64> {
    let d = state.marginals.len();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    let mut eps = Array1::zeros(d);
    for i in 0..n {
        for e in eps.iter_mut() {
            *e = rng.sample::<f64, _>(StandardNormal);
        }
        for j in 0..d {
            // lower-triangular mix: z_j = sum_k L[j][k] * eps_k
            let z: f64 = state.chol[j]
                .iter()
                .take(j + 1)
                .zip(eps.iter())
                .map(|(l, e)| l * e)
                .sum();
            let u = normal.cdf(z);
            out[[i, j]] = match &state.marginals[j] {
                Marginal::Numeric { sorted } => inverse_ecdf(sorted, u),
                Marginal::Categorical { cum, .. } => {
                    cum.iter().position(|&c| u <= c).unwrap_or(cum.len() - 1) as f64
                }
            };
        }
    }
    out
}
