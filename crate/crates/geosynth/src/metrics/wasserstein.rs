//! 1-D Wasserstein distance via quantile functions, and its sliced
//! extension over random projections of 2-D point sets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Quantile of a sorted sample at u in [0,1], by linear interpolation of
/// order statistics at positions u*(n-1).
fn quantile_sorted(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let p = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (p - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (integral of |Fa^-1 - Fb^-1|^p du)^(1/p), evaluated on a common grid of
/// max(|a|,|b|) midpoint quantiles.
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyData("wasserstein_1d on empty sample".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let k = sa.len().max(sb.len());
    let mut acc = 0.0;
    for i in 0..k {
        let u = (i as f64 + 0.5) / k as f64;
        let d = (quantile_sorted(&sa, u) - quantile_sorted(&sb, u)).abs();
        acc += d.powf(p);
    }
    Ok((acc / k as f64).powf(1.0 / p))
}

/// Mean Wasserstein distance over seeded uniform projection angles.
/// Coordinates are used raw (degrees).
pub fn sliced_wasserstein(
    a: &Array2<f64>,
    b: &Array2<f64>,
    n_proj: usize,
    p: f64,
    seed: u64,
) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyData("sliced_wasserstein on empty set".into()));
    }
    if a.ncols() != 2 || b.ncols() != 2 {
        return Err(Error::Shape("sliced_wasserstein expects Nx2 inputs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut pa = vec![0.0; a.nrows()];
    let mut pb = vec![0.0; b.nrows()];
    for _ in 0..n_proj {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        for (i, v) in pa.iter_mut().enumerate() {
            *v = c * a[[i, 0]] + s * a[[i, 1]];
        }
        for (i, v) in pb.iter_mut().enumerate() {
            *v = c * b[[i, 0]] + s * b[[i, 1]];
        }
        total += wasserstein_1d(&pa, &pb, p)?;
    }
    Ok(total / n_proj as f64)
}
