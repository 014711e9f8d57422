//! Moran's I with binary threshold weights, the pairwise-distance
//! percentile that sets the threshold, and the two PCA-weighted spatial
//! fidelity distances (global autocorrelation and per-grid-cell means).

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::GeoTable;
use crate::error::{Error, Result};
use crate::metrics::pca::PcaBasis;

#[derive(Debug, Clone, Copy)]
pub struct MoranConfig {
    /// Neighbor threshold: w_ij = 1 iff distance(i,j) < m.
    pub m: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Cell size in degrees; boundaries at integer multiples.
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cell_size: 0.01 }
    }
}

/// Classical Moran statistic with binary distance weights.
pub fn moran_index(values: &[f64], coords: &Array2<f64>, m: f64) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::TooFewSamples { need: 3, got: n });
    }
    if coords.nrows() != n {
        return Err(Error::Shape("values/coords length mismatch".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if denom <= 0.0 {
        return Err(Error::Data("moran_index: values are all equal".into()));
    }
    let m2 = m * m;
    let mut w_sum = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        let (xi, yi) = (coords[[i, 0]], coords[[i, 1]]);
        let di = values[i] - mean;
        for j in (i + 1)..n {
            let dx = xi - coords[[j, 0]];
            let dy = yi - coords[[j, 1]];
            if dx * dx + dy * dy < m2 {
                // symmetric pair counted twice
                w_sum += 2.0;
                cross += 2.0 * di * (values[j] - mean);
            }
        }
    }
    if w_sum == 0.0 {
        return Err(Error::NoNeighbors(m));
    }
    Ok((n as f64 / w_sum) * cross / denom)
}

/// q-quantile of pairwise Euclidean distances; exact while the pair count
/// fits under `cap`, else over `cap` seeded random pairs.
pub fn pairwise_percentile(coords: &Array2<f64>, q: f64, cap: usize, seed: u64) -> Result<f64> {
    let n = coords.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let n_pairs = n * (n - 1) / 2;
    let mut dists: Vec<f64>;
    if n_pairs <= cap {
        dists = Vec::with_capacity(n_pairs);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[[i, 0]] - coords[[j, 0]];
                let dy = coords[[i, 1]] - coords[[j, 1]];
                dists.push((dx * dx + dy * dy).sqrt());
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dists = Vec::with_capacity(cap);
        while dists.len() < cap {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j {
                continue;
            }
            let dx = coords[[i, 0]] - coords[[j, 0]];
            let dy = coords[[i, 1]] - coords[[j, 1]];
            dists.push((dx * dx + dy * dy).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p = q.clamp(0.0, 1.0) * (dists.len() - 1) as f64;
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(dists.len() - 1);
    Ok(dists[lo] + (p - lo as f64) * (dists[hi] - dists[lo]))
}

/// |I - I~| where I = sum_j w_j I_j over PCA components, Moran thresholds
/// taken from the real data (cfg.m) for both tables.
pub fn spatial_autocorr_distance(
    real: &GeoTable,
    synth: &GeoTable,
    basis: &PcaBasis,
    cfg: &MoranConfig,
) -> Result<f64> {
    let weights = basis.normalized_weights();
    let proj_r = basis.project(real)?;
    let proj_s = basis.project(synth)?;
    let coords_r = real.coords();
    let coords_s = synth.coords();
    let mut agg_r = 0.0;
    let mut agg_s = 0.0;
    for j in 0..basis.l() {
        let col_r: Vec<f64> = proj_r.column(j).to_vec();
        let col_s: Vec<f64> = proj_s.column(j).to_vec();
        agg_r += weights[j] * moran_index(&col_r, &coords_r, cfg.m)?;
        agg_s += weights[j] * moran_index(&col_s, &coords_s, cfg.m)?;
    }
    Ok((agg_r - agg_s).abs())
}

fn cell_of(lon: f64, lat: f64, size: f64) -> (i64, i64) {
    ((lon / size).floor() as i64, (lat / size).floor() as i64)
}

/// Per-cell projection means; key order is fixed for bit-stable reductions.
fn cell_means(
    proj: &Array2<f64>,
    coords: &Array2<f64>,
    size: f64,
) -> BTreeMap<(i64, i64), Vec<f64>> {
    let l = proj.ncols();
    let mut acc: BTreeMap<(i64, i64), (usize, Vec<f64>)> = BTreeMap::new();
    for i in 0..proj.nrows() {
        let key = cell_of(coords[[i, 0]], coords[[i, 1]], size);
        let entry = acc.entry(key).or_insert_with(|| (0, vec![0.0; l]));
        entry.0 += 1;
        for j in 0..l {
            entry.1[j] += proj[[i, j]];
        }
    }
    acc.into_iter()
        .map(|(k, (count, sums))| {
            (k, sums.into_iter().map(|s| s / count as f64).collect())
        })
        .collect()
}

/// Mean over cells occupied in both tables of the weighted squared gap
/// between per-cell projection means.
pub fn local_feature_distance(
    real: &GeoTable,
    synth: &GeoTable,
    basis: &PcaBasis,
    grid: &GridSpec,
) -> Result<f64> {
    let weights = basis.normalized_weights();
    let means_r = cell_means(&basis.project(real)?, &real.coords(), grid.cell_size);
    let means_s = cell_means(&basis.project(synth)?, &synth.coords(), grid.cell_size);
    let mut total = 0.0;
    let mut shared = 0usize;
    for (key, mr) in &means_r {
        if let Some(ms) = means_s.get(key) {
            shared += 1;
            for j in 0..basis.l() {
                total += weights[j] * (mr[j] - ms[j]).powi(2);
            }
        }
    }
    if shared == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(total / shared as f64)
}
