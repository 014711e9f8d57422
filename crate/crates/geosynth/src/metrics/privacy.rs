//! Membership-inference privacy score. A generator is refit on 95% of the
//! real rows; an attacker sees only the synthetic output and the distance of
//! each candidate row to its nearest synthetic row, and tries to tell the
//! 95% (members) from the held-out 5%. The score is the attacker's test AUC
//! minus 0.5, so 0 means chance and 0.5 means perfect recall of membership.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::geometry::RegionGeometry;
use crate::dataset::{fit_layout, EncodeMode, GeoTable};
use crate::error::{Error, Result};
use crate::generators::{self, FitOptions, GeneratorKind};

/// Area under the ROC curve by the rank statistic; ties get average ranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("auc_roc: scores/labels length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(
            "auc_roc needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block [i, j]
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Logistic regression of a binary label on one feature plus intercept,
/// fitted by Newton's method. Returns (intercept, slope). On separable data
/// the iteration is cut off at 100 steps and the last iterate is returned.
pub fn logistic_fit(x: &[f64], y: &[bool]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape("logistic_fit: bad input lengths".into()));
    }
    let mut a = 0.0;
    let mut b = 0.0;
    for _ in 0..100 {
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        let mut h00 = 0.0;
        let mut h01 = 0.0;
        let mut h11 = 0.0;
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(a + b * xi);
            let r = if yi { 1.0 } else { 0.0 } - p;
            g0 += r;
            g1 += r * xi;
            let w = p * (1.0 - p);
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !det.is_finite() || det.abs() < 1e-300 {
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        a += da;
        b += db;
        if da.abs().max(db.abs()) < 1e-10 {
            break;
        }
    }
    Ok((a, b))
}

fn min_distances(queries: &Array2<f64>, reference: &Array2<f64>) -> Vec<f64> {
    let d = queries.ncols();
    (0..queries.nrows())
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..reference.nrows() {
                let mut acc = 0.0;
                for c in 0..d {
                    let diff = queries[[i, c]] - reference[[j, c]];
                    acc += diff * diff;
                }
                if acc < best {
                    best = acc;
                }
            }
            best.sqrt()
        })
        .collect()
}

fn subset(table: &GeoTable, idx: &[usize]) -> GeoTable {
    let rows = idx.iter().map(|&i| table.rows()[i].clone()).collect();
    GeoTable::new_unchecked(table.schema().to_vec(), rows)
}

/// Membership score against an arbitrary synthesizer: `synthesize` gets the
/// member subset and must return the synthetic table built from it alone.
pub fn privacy_score_with<F>(data: &GeoTable, seed: u64, synthesize: F) -> Result<f64>
where
    F: FnOnce(&GeoTable) -> Result<GeoTable>,
{
    let n = data.n_rows();
    let n_members = (0.95 * n as f64).round() as usize;
    let n_held = n - n_members;
    if n_held < 10 {
        return Err(Error::TooFewSamples { need: 10, got: n_held });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let members = &order[..n_members];
    let held = &order[n_members..];

    // distance-mode scalers fit on the full table so both sides of the
    // split and the synthetic rows share one geometry
    let layout = fit_layout(data, EncodeMode::Distance)?;
    let member_table = subset(data, members);
    let synth = synthesize(&member_table)?;
    if synth.n_rows() == 0 {
        return Err(Error::EmptyData("synthesizer returned no rows".into()));
    }
    let enc_synth = layout.apply(&synth)?;

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (idx_set, label) in [(members, true), (held, false)] {
        let enc = layout.apply(&subset(data, idx_set))?;
        features.extend(min_distances(&enc, &enc_synth));
        labels.extend(std::iter::repeat(label).take(idx_set.len()));
    }

    // 80/20 train/test split stratified on the membership label
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [true, false] {
        let mut group: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == label).collect();
        group.shuffle(&mut rng);
        let cut = (0.8 * group.len() as f64).round() as usize;
        train_idx.extend_from_slice(&group[..cut]);
        test_idx.extend_from_slice(&group[cut..]);
    }

    let x_train: Vec<f64> = train_idx.iter().map(|&i| features[i]).collect();
    let y_train: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
    let (a, b) = logistic_fit(&x_train, &y_train)?;

    let scores: Vec<f64> = test_idx.iter().map(|&i| sigmoid(a + b * features[i])).collect();
    let y_test: Vec<bool> = test_idx.iter().map(|&i| labels[i]).collect();
    Ok(auc_roc(&scores, &y_test)? - 0.5)
}

/// Membership score for one of the built-in generator kinds. The generator
/// is refit on the member subset with `seed + 1` and sampled with `seed + 2`.
pub fn privacy_score(
    data: &GeoTable,
    kind: GeneratorKind,
    geom: &RegionGeometry,
    opts: &FitOptions,
    n_synth: usize,
    seed: u64,
) -> Result<f64> {
    privacy_score_with(data, seed, |members| {
        let gen = generators::fit(kind, members, geom, opts, seed.wrapping_add(1))?;
        gen.sample(n_synth, seed.wrapping_add(2))
    })
}
