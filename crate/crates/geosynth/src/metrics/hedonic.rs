//! Hedonic regression: ordinary least squares of log price on encoded
//! features plus subregion fixed effects, and the utility distance that
//! compares the fit of a real-trained and a synthetic-trained model on the
//! real prices.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};

use crate::dataset::geometry::{assign_subregion, RegionGeometry};
use crate::dataset::{fit_layout, EncodeMode, GeoTable, Layout};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

const RIDGE: f64 = 1e-8;

/// A fitted hedonic model. The layout carries the scalers of the table the
/// model was trained on; subregion levels are sorted with the first level
/// absorbed into the intercept.
#[derive(Debug, Clone)]
pub struct HedonicModel {
    layout: Layout,
    price_source: usize,
    subregion_levels: Vec<String>,
    /// intercept, encoded non-price columns, then subregion dummies.
    coefficients: Vec<f64>,
    pub train_r_squared: f64,
}

fn log_prices(table: &GeoTable, price_source: usize) -> Result<Vec<f64>> {
    table
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let v = row[price_source]
                .as_f64()
                .ok_or_else(|| Error::Data("price column is not numeric".into()))?;
            if v <= 0.0 {
                return Err(Error::Data(format!("non-positive price in row {i}")));
            }
            Ok(v.ln())
        })
        .collect()
}

/// Design matrix rows: 1, encoded non-price features, subregion dummies.
/// A subregion label missing from `levels` spreads over the mean fixed
/// effect (reference level included at zero).
fn design(
    table: &GeoTable,
    layout: &Layout,
    price_source: usize,
    levels: &[String],
    geom: &RegionGeometry,
) -> Result<Array2<f64>> {
    let encoded = layout.apply(table)?;
    let price_cols = layout.columns_of(price_source);
    let feature_cols: Vec<usize> = (0..layout.width).filter(|c| !price_cols.contains(c)).collect();
    let labels = assign_subregion(&table.coords(), geom);
    let n = table.n_rows();
    let p = 1 + feature_cols.len() + levels.len().saturating_sub(1);
    let mut x = Array2::zeros((n, p));
    // dummy for an unseen label: each non-reference level gets 1/L so the
    // fixed effect averages over all L levels including the reference
    let mean_weight = 1.0 / levels.len().max(1) as f64;
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for (k, &c) in feature_cols.iter().enumerate() {
            x[[i, 1 + k]] = encoded[[i, c]];
        }
        let base = 1 + feature_cols.len();
        match levels.iter().position(|l| l == &labels[i]) {
            Some(0) => {}
            Some(j) => x[[i, base + j - 1]] = 1.0,
            None => {
                for j in 1..levels.len() {
                    x[[i, base + j - 1]] = mean_weight;
                }
            }
        }
    }
    Ok(x)
}

fn r_squared(actual: &[f64], predicted: &Array1<f64>) -> Result<f64> {
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Data("log prices are all equal".into()));
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted.iter())
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fit by ridge-stabilised least squares (ridge 1e-8, so effectively OLS
/// except on exactly collinear directions).
pub fn hedonic_fit(
    table: &GeoTable,
    geom: &RegionGeometry,
    price_column: &str,
) -> Result<HedonicModel> {
    let price_source = table
        .column_index(price_column)
        .ok_or_else(|| Error::Schema(format!("no column named {price_column}")))?;
    let y_vec = log_prices(table, price_source)?;
    if table.n_rows() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: table.n_rows() });
    }
    let layout = fit_layout(table, EncodeMode::Model)?;
    let labels = assign_subregion(&table.coords(), geom);
    let levels: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let x = design(table, &layout, price_source, &levels, geom)?;
    let y = Array1::from_vec(y_vec.clone());
    let p = x.ncols();
    let mut ata = x.t().dot(&x);
    for j in 0..p {
        ata[[j, j]] += RIDGE;
    }
    let atb = x.t().dot(&y);
    let beta = solve_spd(&ata, &atb)?;
    let predicted = x.dot(&beta);
    let train_r_squared = r_squared(&y_vec, &predicted)?;
    Ok(HedonicModel {
        layout,
        price_source,
        subregion_levels: levels,
        coefficients: beta.to_vec(),
        train_r_squared,
    })
}

impl HedonicModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn subregion_levels(&self) -> &[String] {
        &self.subregion_levels
    }

    /// Index into `coefficients` of a source column's first encoded slot.
    pub fn coefficient_of(&self, source: usize) -> usize {
        let price_cols = self.layout.columns_of(self.price_source);
        let col = self.layout.columns_of(source).start;
        let before = (0..col).filter(|c| !price_cols.contains(c)).count();
        1 + before
    }

    /// Predicted log price per row.
    pub fn predict(&self, table: &GeoTable, geom: &RegionGeometry) -> Result<Vec<f64>> {
        let x = design(table, &self.layout, self.price_source, &self.subregion_levels, geom)?;
        let beta = Array1::from_vec(self.coefficients.clone());
        Ok(x.dot(&beta).to_vec())
    }

    /// R^2 against the table's own log prices.
    pub fn r_squared_on(&self, table: &GeoTable, geom: &RegionGeometry) -> Result<f64> {
        let actual = log_prices(table, self.price_source)?;
        let predicted = Array1::from_vec(self.predict(table, geom)?);
        r_squared(&actual, &predicted)
    }
}

/// |R^2 of the real-trained model - R^2 of the synthetic-trained model|,
/// both evaluated on the real table.
pub fn utility_distance(
    real: &GeoTable,
    synth: &GeoTable,
    geom: &RegionGeometry,
    price_column: &str,
) -> Result<f64> {
    let m_real = hedonic_fit(real, geom, price_column)?;
    let m_synth = hedonic_fit(synth, geom, price_column)?;
    let r2_real = m_real.r_squared_on(real, geom)?;
    let r2_synth = m_synth.r_squared_on(real, geom)?;
    Ok((r2_real - r2_synth).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Cell;
    use crate::toy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Toy-city rows with the noise term removed, so the hedonic design
    /// contains the exact data-generating model.
    fn noiseless_city(n: usize, seed: u64) -> GeoTable {
        let base = toy::city(n, seed).unwrap();
        let geom = toy::city_geometry();
        let labels = assign_subregion(&base.coords(), &geom);
        let effects = |label: &str| match label {
            "q_sw" => 0.0,
            "q_se" => 0.15,
            "q_nw" => -0.10,
            _ => 0.05,
        };
        let rows = base
            .rows()
            .iter()
            .zip(&labels)
            .map(|(row, label)| {
                let metro = matches!(row[2], Cell::Boolean(true));
                let surface = row[3].as_f64().unwrap();
                let log_price = toy::PRICE_INTERCEPT
                    + toy::PRICE_SURFACE * surface
                    + toy::PRICE_METRO * if metro { 1.0 } else { 0.0 }
                    + effects(label);
                let mut row = row.clone();
                row[4] = Cell::Number(log_price.exp());
                row
            })
            .collect();
        GeoTable::new(base.schema().to_vec(), rows).unwrap()
    }

    #[test]
    fn noiseless_fit_recovers_the_model() {
        let table = noiseless_city(400, 11);
        let geom = toy::city_geometry();
        let model = hedonic_fit(&table, &geom, "price").unwrap();
        assert!(model.train_r_squared > 1.0 - 1e-10);
        let predicted = model.predict(&table, &geom).unwrap();
        let actual = log_prices(&table, 4).unwrap();
        for (p, a) in predicted.iter().zip(&actual) {
            assert!((p - a).abs() < 1e-6, "{p} vs {a}");
        }
        // the surface coefficient is identifiable: encoded scale is raw * std
        let surface_std = {
            let vals: Vec<f64> = table.rows().iter().map(|r| r[3].as_f64().unwrap()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
        };
        let got = model.coefficients()[model.coefficient_of(3)];
        let want = toy::PRICE_SURFACE * surface_std;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn single_subregion_absorbs_into_intercept() {
        let table = noiseless_city(200, 12);
        // region geometry with no subregions: every row gets the same label
        let geom = RegionGeometry {
            region: toy::city_geometry().region,
            subregions: Default::default(),
        };
        let model = hedonic_fit(&table, &geom, "price").unwrap();
        assert_eq!(model.subregion_levels().len(), 1);
        // quadrant effects are now unexplained spatial structure soaked up
        // (partially) by the coordinate features; fit is no longer perfect
        assert!(model.train_r_squared < 1.0 - 1e-6);
        assert!(model.train_r_squared > 0.5);
    }

    #[test]
    fn permuted_rows_preserve_utility_exactly() {
        let real = toy::city(500, 13).unwrap();
        let geom = toy::city_geometry();
        let mut rows = real.rows().to_vec();
        rows.reverse();
        let synth = GeoTable::new(real.schema().to_vec(), rows).unwrap();
        // same joint distribution: the least-squares fit is row-order
        // invariant, so both models explain the real prices equally well
        let d = utility_distance(&real, &synth, &geom, "price").unwrap();
        assert!(d < 1e-9, "d = {d}");
    }

    #[test]
    fn noise_prices_lose_utility() {
        let real = toy::city(500, 14).unwrap();
        let geom = toy::city_geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rows = real
            .rows()
            .iter()
            .map(|r| {
                let mut row = r.clone();
                let noise: f64 = rng.sample(StandardNormal);
                row[4] = Cell::Number((1.0 + 0.5 * noise).exp());
                row
            })
            .collect();
        let synth = GeoTable::new(real.schema().to_vec(), rows).unwrap();
        let d = utility_distance(&real, &synth, &geom, "price").unwrap();
        let m_real = hedonic_fit(&real, &geom, "price").unwrap();
        let r2_real = m_real.r_squared_on(&real, &geom).unwrap();
        assert!(r2_real > 0.8, "r2_real = {r2_real}");
        assert!(d > 0.5, "d = {d}");
    }

    #[test]
    fn unseen_subregion_uses_mean_fixed_effect() {
        let table = noiseless_city(300, 15);
        let geom = toy::city_geometry();
        let model = hedonic_fit(&table, &geom, "price").unwrap();
        // geometry without subregions: every row maps to the fallback label
        let bare = RegionGeometry {
            region: toy::city_geometry().region,
            subregions: Default::default(),
        };
        let with_levels = model.predict(&table, &geom).unwrap();
        let without = model.predict(&table, &bare).unwrap();
        // predictions differ only through the fixed effect, by at most the
        // spread of the quadrant effects
        for (a, b) in with_levels.iter().zip(&without) {
            assert!((a - b).abs() < 0.3 + 1e-9);
        }
        assert!(with_levels.iter().zip(&without).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn non_positive_price_is_a_data_error() {
        let real = toy::city(10, 16).unwrap();
        let mut rows = real.rows().to_vec();
        rows[3][4] = Cell::Number(0.0);
        let table = GeoTable::new(real.schema().to_vec(), rows).unwrap();
        let err = hedonic_fit(&table, &toy::city_geometry(), "price").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
