//! Deterministic built-in benchmark city: clustered coordinates inside a
//! rectangular region with quadrant subregions, a location-correlated
//! boolean, and two numeric features (surface and a positive price built
//! from a known log-linear model).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::geometry::{MultiPolygon, Polygon, RegionGeometry};
use crate::dataset::{Cell, ColumnSpec, GeoTable};
use crate::error::Result;

pub const LON_MIN: f64 = 7.3;
pub const LON_MAX: f64 = 8.0;
pub const LAT_MIN: f64 = 44.7;
pub const LAT_MAX: f64 = 45.4;

/// (lon center, lat center, mixture weight, std in degrees)
pub type Cluster = (f64, f64, f64, f64);

pub const CITY_CLUSTERS: [Cluster; 5] = [
    (7.45, 44.90, 0.30, 0.035),
    (7.78, 44.93, 0.22, 0.030),
    (7.50, 45.25, 0.18, 0.040),
    (7.85, 45.20, 0.18, 0.030),
    (7.65, 45.05, 0.12, 0.050),
];

pub const TWO_CLUSTERS: [Cluster; 2] = [
    (7.45, 44.90, 0.6, 0.030),
    (7.85, 45.25, 0.4, 0.030),
];

fn rect(lon0: f64, lat0: f64, lon1: f64, lat1: f64) -> MultiPolygon {
    MultiPolygon::single(Polygon::rectangle(lon0, lat0, lon1, lat1))
}

/// Rectangular region with four quadrant subregions.
pub fn city_geometry() -> RegionGeometry {
    let mid_lon = 0.5 * (LON_MIN + LON_MAX);
    let mid_lat = 0.5 * (LAT_MIN + LAT_MAX);
    let mut subregions = std::collections::BTreeMap::new();
    subregions.insert(
        "q_sw".to_string(),
        rect(LON_MIN, LAT_MIN, mid_lon, mid_lat),
    );
    subregions.insert(
        "q_se".to_string(),
        rect(mid_lon, LAT_MIN, LON_MAX, mid_lat),
    );
    subregions.insert(
        "q_nw".to_string(),
        rect(LON_MIN, mid_lat, mid_lon, LAT_MAX),
    );
    subregions.insert(
        "q_ne".to_string(),
        rect(mid_lon, mid_lat, LON_MAX, LAT_MAX),
    );
    RegionGeometry {
        region: rect(LON_MIN, LAT_MIN, LON_MAX, LAT_MAX),
        subregions,
    }
}

pub fn city_schema() -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::longitude("lon"),
        ColumnSpec::latitude("lat"),
        ColumnSpec::boolean("metro"),
        ColumnSpec::numeric("surface"),
        ColumnSpec::numeric("price"),
    ]
}

/// Log-price model used by the built-in city; the coefficients are fixed so
/// utility tests can recover them.
pub const PRICE_INTERCEPT: f64 = 4.0;
pub const PRICE_SURFACE: f64 = 0.004;
pub const PRICE_METRO: f64 = 0.3;
pub const PRICE_NOISE: f64 = 0.08;

fn quadrant_effect(lon: f64, lat: f64) -> f64 {
    let mid_lon = 0.5 * (LON_MIN + LON_MAX);
    let mid_lat = 0.5 * (LAT_MIN + LAT_MAX);
    match (lon >= mid_lon, lat >= mid_lat) {
        (false, false) => 0.0,
        (true, false) => 0.15,
        (false, true) => -0.10,
        (true, true) => 0.05,
    }
}

/// Sample coordinates from a cluster mixture, rejecting points outside the
/// rectangle. Returns (lon, lat, cluster index).
fn draw_point(clusters: &[Cluster], rng: &mut ChaCha8Rng) -> (f64, f64, usize) {
    loop {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = clusters.len() - 1;
        for (i, c) in clusters.iter().enumerate() {
            acc += c.2;
            if u < acc {
                idx = i;
                break;
            }
        }
        let c = clusters[idx];
        let lon = c.0 + c.3 * rng.sample::<f64, _>(StandardNormal);
        let lat = c.1 + c.3 * rng.sample::<f64, _>(StandardNormal);
        if lon > LON_MIN && lon < LON_MAX && lat > LAT_MIN && lat < LAT_MAX {
            return (lon, lat, idx);
        }
    }
}

/// Build an n-row table over the given cluster mixture.
pub fn clustered_city(n: usize, clusters: &[Cluster], seed: u64) -> Result<GeoTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let (lon, lat, idx) = draw_point(clusters, &mut rng);
        // boolean tied to the cluster so it correlates with location
        let p_metro = if idx % 2 == 0 { 0.8 } else { 0.2 };
        let metro = rng.gen::<f64>() < p_metro;
        let surface = 30.0 + 70.0 * (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let log_price = PRICE_INTERCEPT
            + PRICE_SURFACE * surface
            + PRICE_METRO * if metro { 1.0 } else { 0.0 }
            + quadrant_effect(lon, lat)
            + PRICE_NOISE * rng.sample::<f64, _>(StandardNormal);
        rows.push(vec![
            Cell::Number(lon),
            Cell::Number(lat),
            Cell::Boolean(metro),
            Cell::Number(surface),
            Cell::Number(log_price.exp()),
        ]);
    }
    GeoTable::new(city_schema(), rows)
}

/// The default benchmark city: 5 clusters, n rows.
pub fn city(n: usize, seed: u64) -> Result<GeoTable> {
    clustered_city(n, &CITY_CLUSTERS, seed)
}
