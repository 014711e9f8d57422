//! Evaluation metrics: geographic and feature fidelity, downstream utility,
//! membership privacy, and novelty, bundled into one report.

pub mod hedonic;
pub mod moran;
pub mod pca;
pub mod privacy;
pub mod wasserstein;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::geometry::RegionGeometry;
use crate::dataset::GeoTable;
use crate::error::Result;
use crate::generators::{self, FitOptions, GeneratorKind};

pub use hedonic::{hedonic_fit, utility_distance, HedonicModel};
pub use moran::{local_feature_distance, moran_index, pairwise_percentile, spatial_autocorr_distance, GridSpec, MoranConfig};
pub use pca::{pca_fit, PcaBasis};
pub use privacy::{auc_roc, logistic_fit, privacy_score, privacy_score_with};
pub use wasserstein::{sliced_wasserstein, wasserstein_1d};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Projections for the sliced Wasserstein distance on coordinates.
    pub n_projections: usize,
    /// Wasserstein order.
    pub p: f64,
    /// Grid cell size (degrees) for the local feature distance.
    pub grid_cell_size: f64,
    /// Pairwise-distance quantile that sets the Moran neighbor threshold.
    pub neighbor_quantile: f64,
    /// Above this many pairs the quantile switches to a seeded subsample.
    pub pair_cap: usize,
    /// Column regressed in the hedonic utility metric; None skips it.
    pub price_column: Option<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_projections: 1000,
            p: 2.0,
            grid_cell_size: 0.01,
            neighbor_quantile: 0.01,
            pair_cap: 2_000_000,
            price_column: Some("price".to_string()),
        }
    }
}

/// How to compute the privacy score inside `evaluate`: the named generator
/// is refit on the member split and sampled `n_synth` times.
#[derive(Debug, Clone)]
pub struct PrivacySpec {
    pub kind: GeneratorKind,
    pub opts: FitOptions,
    pub n_synth: usize,
}

/// One evaluation run. Metrics that failed are None, with the failure
/// message under the metric's name in `errors`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_real: usize,
    pub n_synth: usize,
    pub seed: u64,
    pub generator: Option<String>,
    pub d_geo: Option<f64>,
    pub d_spatial: Option<f64>,
    pub d_local: Option<f64>,
    pub d_utility: Option<f64>,
    pub rho_privacy: Option<f64>,
    pub novelty: Option<f64>,
    pub errors: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str =
        "generator,seed,n_real,n_synth,d_geo,d_spatial,d_local,d_utility,rho_privacy,novelty";

    pub fn csv_row(&self) -> String {
        let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.generator.as_deref().unwrap_or(""),
            self.seed,
            self.n_real,
            self.n_synth,
            fmt(&self.d_geo),
            fmt(&self.d_spatial),
            fmt(&self.d_local),
            fmt(&self.d_utility),
            fmt(&self.rho_privacy),
            fmt(&self.novelty),
        )
    }
}

fn record<T>(field: &mut Option<T>, errors: &mut BTreeMap<String, String>, name: &str, result: Result<T>) {
    match result {
        Ok(v) => *field = Some(v),
        Err(e) => {
            errors.insert(name.to_string(), e.to_string());
        }
    }
}

/// Score a synthetic table against the real one. Each metric is attempted
/// independently; a failure only empties its own field.
pub fn evaluate(
    real: &GeoTable,
    synth: &GeoTable,
    geom: Option<&RegionGeometry>,
    privacy: Option<&PrivacySpec>,
    cfg: &MetricsConfig,
    seed: u64,
) -> EvaluationReport {
    let mut report = EvaluationReport {
        n_real: real.n_rows(),
        n_synth: synth.n_rows(),
        seed,
        generator: privacy.map(|p| p.kind.to_string()),
        d_geo: None,
        d_spatial: None,
        d_local: None,
        d_utility: None,
        rho_privacy: None,
        novelty: None,
        errors: BTreeMap::new(),
    };
    let errors = &mut report.errors;

    let coords_real = real.coords();
    let coords_synth = synth.coords();
    record(
        &mut report.d_geo,
        errors,
        "d_geo",
        wasserstein::sliced_wasserstein(&coords_real, &coords_synth, cfg.n_projections, cfg.p, seed),
    );

    match pca::pca_fit(real) {
        Ok(basis) => {
            let moran_cfg = pairwise_percentile(&coords_real, cfg.neighbor_quantile, cfg.pair_cap, seed)
                .map(|m| MoranConfig { m });
            match moran_cfg {
                Ok(mc) => record(
                    &mut report.d_spatial,
                    errors,
                    "d_spatial",
                    spatial_autocorr_distance(real, synth, &basis, &mc),
                ),
                Err(e) => {
                    errors.insert("d_spatial".into(), e.to_string());
                }
            }
            record(
                &mut report.d_local,
                errors,
                "d_local",
                local_feature_distance(real, synth, &basis, &GridSpec { cell_size: cfg.grid_cell_size }),
            );
        }
        Err(e) => {
            errors.insert("d_spatial".into(), e.to_string());
            errors.insert("d_local".into(), e.to_string());
        }
    }

    if let Some(price) = &cfg.price_column {
        match geom {
            Some(g) => record(
                &mut report.d_utility,
                errors,
                "d_utility",
                utility_distance(real, synth, g, price),
            ),
            None => {
                errors.insert("d_utility".into(), "no region geometry provided".into());
            }
        }
    }

    if let Some(spec) = privacy {
        match geom {
            Some(g) => record(
                &mut report.rho_privacy,
                errors,
                "rho_privacy",
                privacy::privacy_score(real, spec.kind, g, &spec.opts, spec.n_synth, seed),
            ),
            None => {
                errors.insert("rho_privacy".into(), "no region geometry provided".into());
            }
        }
    }

    record(
        &mut report.novelty,
        errors,
        "novelty",
        generators::novelty_rate(real, synth),
    );

    report
}
