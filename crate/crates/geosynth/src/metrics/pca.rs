//! PCA basis over the encoded non-spatial features, fit on real data only.
//! Synthetic tables are projected onto the same basis with the same scalers.

use ndarray::{Array1, Array2};

use crate::dataset::{fit_layout, ColumnKind, EncodeMode, GeoTable, Layout};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// Layout over the non-spatial sub-table, with real-data scalers.
    pub layout: Layout,
    /// Post-encoding standardization (mean, std) per matrix column.
    pub means: Array1<f64>,
    pub stds: Array1<f64>,
    /// Component column vectors, d x l.
    pub components: Array2<f64>,
    /// Eigenvalues of the retained components, non-increasing.
    pub eigenvalues: Array1<f64>,
}

/// Indices of the non-spatial schema columns.
fn feature_columns(table: &GeoTable) -> Vec<usize> {
    table
        .schema()
        .iter()
        .enumerate()
        .filter(|(_, s)| !matches!(s.kind, ColumnKind::Latitude | ColumnKind::Longitude))
        .map(|(c, _)| c)
        .collect()
}

/// Drop the coordinate columns. The result is not a valid standalone
/// GeoTable (no coordinates), so it stays crate-internal.
pub(crate) fn non_spatial(table: &GeoTable) -> GeoTable {
    let cols = feature_columns(table);
    let schema = cols.iter().map(|&c| table.schema()[c].clone()).collect();
    let rows = table
        .rows()
        .iter()
        .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
        .collect();
    GeoTable::new_unchecked(schema, rows)
}

impl PcaBasis {
    pub fn l(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues normalized to sum to one.
    pub fn normalized_weights(&self) -> Array1<f64> {
        let total: f64 = self.eigenvalues.sum();
        self.eigenvalues.mapv(|v| v / total)
    }

    /// Encode, standardize with the real-data scalers, and project.
    pub fn project(&self, table: &GeoTable) -> Result<Array2<f64>> {
        let sub = non_spatial(table);
        let mut x = self.layout.apply(&sub)?;
        for j in 0..x.ncols() {
            let (m, s) = (self.means[j], self.stds[j]);
            x.column_mut(j).mapv_inplace(|v| (v - m) / s);
        }
        Ok(x.dot(&self.components))
    }
}

/// Fit the basis: drop coordinates, encode, standardize every matrix column,
/// eigendecompose the covariance, keep the smallest l explaining >= 95%.
pub fn pca_fit(real: &GeoTable) -> Result<PcaBasis> {
    let n = real.n_rows();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let sub = non_spatial(real);
    if sub.schema().is_empty() {
        return Err(Error::Schema("no non-spatial columns for PCA".into()));
    }
    let layout = fit_layout(&sub, EncodeMode::Model)?;
    let x = layout.apply(&sub)?;
    let d = x.ncols();
    let mut means = Array1::zeros(d);
    let mut stds = Array1::zeros(d);
    for j in 0..d {
        let col = x.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut z = x;
    for j in 0..d {
        let (m, s) = (means[j], stds[j]);
        z.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }
    let cov = z.t().dot(&z) / n as f64;
    let total: f64 = (0..d).map(|j| cov[[j, j]]).sum();
    if total <= 0.0 {
        return Err(Error::Data("all feature columns have zero variance".into()));
    }
    let (eigvals, eigvecs) = linalg::symmetric_eigen(&cov)?;
    let mut cum = 0.0;
    let mut l = d;
    for (j, &v) in eigvals.iter().enumerate() {
        cum += v.max(0.0);
        if cum >= 0.95 * total {
            l = j + 1;
            break;
        }
    }
    let components = eigvecs.slice(ndarray::s![.., 0..l]).to_owned();
    let eigenvalues = eigvals.slice(ndarray::s![0..l]).to_owned();
    if eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numeric("retained eigenvalue not positive".into()));
    }
    Ok(PcaBasis {
        layout,
        means,
        stds,
        components,
        eigenvalues,
    })
}
