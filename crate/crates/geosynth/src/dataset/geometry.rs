//! Polygon geometry in lon/lat degrees: even-odd point-in-polygon tests,
//! GeoJSON loading, and seeded uniform rejection sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// A polygon as closed rings (first vertex equals last). Ring 0 is the outer
/// boundary; further rings are holes. Containment uses the even-odd rule, so
/// ring roles never need to be distinguished.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polygon {
    pub rings: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiPolygon {
    pub polygons: Vec<Polygon>,
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        for ring in &rings {
            if ring.len() < 4 {
                return Err(Error::Data("polygon ring has fewer than 4 vertices".into()));
            }
            if ring.first() != ring.last() {
                return Err(Error::Data("polygon ring is not closed".into()));
            }
        }
        Ok(Polygon { rings })
    }

    /// Axis-aligned rectangle helper, mostly for tests and the toy city.
    pub fn rectangle(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Polygon {
            rings: vec![vec![
                [min_lon, min_lat],
                [max_lon, min_lat],
                [max_lon, max_lat],
                [min_lon, max_lat],
                [min_lon, min_lat],
            ]],
        }
    }
}

impl MultiPolygon {
    pub fn single(polygon: Polygon) -> Self {
        MultiPolygon {
            polygons: vec![polygon],
        }
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let mut min_lon = f64::INFINITY;
        let mut min_lat = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        for poly in &self.polygons {
            for ring in &poly.rings {
                for p in ring {
                    min_lon = min_lon.min(p[0]);
                    max_lon = max_lon.max(p[0]);
                    min_lat = min_lat.min(p[1]);
                    max_lat = max_lat.max(p[1]);
                }
            }
        }
        (min_lon, min_lat, max_lon, max_lat)
    }

    /// Sum of absolute shoelace areas of outer rings minus holes, via
    /// even-odd accounting. Good enough for degeneracy checks.
    pub fn area(&self) -> f64 {
        let mut total = 0.0;
        for poly in &self.polygons {
            for (k, ring) in poly.rings.iter().enumerate() {
                let a = shoelace(ring).abs();
                if k == 0 {
                    total += a;
                } else {
                    total -= a;
                }
            }
        }
        total.max(0.0)
    }
}

fn shoelace(ring: &[[f64; 2]]) -> f64 {
    let mut sum = 0.0;
    for w in ring.windows(2) {
        sum += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    0.5 * sum
}

const ON_EDGE_EPS: f64 = 1e-12;

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    if cross.abs() > ON_EDGE_EPS * scale {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    dot >= -ON_EDGE_EPS && dot <= len2 + ON_EDGE_EPS
}

/// Even-odd ray-casting containment; boundary points count as inside.
pub fn point_in_region(lon: f64, lat: f64, geom: &MultiPolygon) -> bool {
    let p = [lon, lat];
    let mut inside = false;
    for poly in &geom.polygons {
        for ring in &poly.rings {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if on_segment(p, a, b) {
                    return true;
                }
                if (a[1] > lat) != (b[1] > lat) {
                    let x_int = a[0] + (lat - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    if x_int > lon {
                        inside = !inside;
                    }
                }
            }
        }
    }
    inside
}

/// Region polygon plus named subregion polygons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionGeometry {
    pub region: MultiPolygon,
    pub subregions: BTreeMap<String, MultiPolygon>,
}

impl RegionGeometry {
    /// Check that every subregion's vertices lie inside the region, with a
    /// 1e-6 degree tolerance near the boundary.
    pub fn validate(&self) -> Result<()> {
        for (id, sub) in &self.subregions {
            for poly in &sub.polygons {
                for ring in &poly.rings {
                    for p in ring {
                        if !point_near_region(p[0], p[1], &self.region, 1e-6) {
                            return Err(Error::Data(format!(
                                "subregion {id} vertex ({}, {}) lies outside the region",
                                p[0], p[1]
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn point_near_region(lon: f64, lat: f64, geom: &MultiPolygon, tol: f64) -> bool {
    if point_in_region(lon, lat, geom) {
        return true;
    }
    // nudge in the four axis directions
    for (dx, dy) in [(tol, 0.0), (-tol, 0.0), (0.0, tol), (0.0, -tol)] {
        if point_in_region(lon + dx, lat + dy, geom) {
            return true;
        }
    }
    false
}

/// Map each row's point to the first subregion (in id order) containing it,
/// or the sentinel "_none".
pub const NO_SUBREGION: &str = "_none";

pub fn assign_subregion(coords: &ndarray::Array2<f64>, geom: &RegionGeometry) -> Vec<String> {
    let mut out = Vec::with_capacity(coords.nrows());
    for i in 0..coords.nrows() {
        let (lon, lat) = (coords[[i, 0]], coords[[i, 1]]);
        let id = geom
            .subregions
            .iter()
            .find(|(_, poly)| point_in_region(lon, lat, poly))
            .map(|(id, _)| id.clone())
            .unwrap_or_else(|| NO_SUBREGION.to_string());
        out.push(id);
    }
    out
}

/// Seeded uniform rejection sampling over the bounding box.
pub fn uniform_points_in_polygon(
    geom: &MultiPolygon,
    n: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_points_with_rng(geom, n, &mut rng)
}

/// Same, drawing from a caller-owned stream (used by generators that share
/// one seeded stream across many calls).
pub fn uniform_points_with_rng(
    geom: &MultiPolygon,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>> {
    let (min_lon, min_lat, max_lon, max_lat) = geom.bounding_box();
    if !(max_lon > min_lon) || !(max_lat > min_lat) {
        return Err(Error::DegeneratePolygon(
            "bounding box has zero extent".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    let mut proposals: u64 = 0;
    while out.len() < n {
        let lon = rng.gen_range(min_lon..max_lon);
        let lat = rng.gen_range(min_lat..max_lat);
        proposals += 1;
        if point_in_region(lon, lat, geom) {
            out.push([lon, lat]);
        }
        if proposals >= 10_000_000 && (out.len() as f64 / proposals as f64) < 1e-4 {
            return Err(Error::DegeneratePolygon(format!(
                "acceptance rate below 1e-4 after {proposals} proposals"
            )));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// GeoJSON
// ---------------------------------------------------------------------------

/// Load a GeoJSON FeatureCollection. Features with a "subregion_id" property
/// become subregions; the remaining features merge into the region polygon.
pub fn load_geojson(path: &Path) -> Result<RegionGeometry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_geojson(&text)
}

pub fn parse_geojson(text: &str) -> Result<RegionGeometry> {
    let root: Value = serde_json::from_str(text)?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Data("expected a GeoJSON FeatureCollection".into()))?;

    let mut region_parts: Vec<Polygon> = Vec::new();
    let mut subregions: BTreeMap<String, MultiPolygon> = BTreeMap::new();
    for feature in features {
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Data("feature without geometry".into()))?;
        let parts = parse_geometry(geometry)?;
        let sub_id = feature
            .get("properties")
            .and_then(|p| p.get("subregion_id"))
            .and_then(Value::as_str);
        match sub_id {
            Some(id) => {
                subregions
                    .entry(id.to_string())
                    .or_insert_with(|| MultiPolygon { polygons: vec![] })
                    .polygons
                    .extend(parts);
            }
            None => region_parts.extend(parts),
        }
    }
    if region_parts.is_empty() {
        return Err(Error::Data(
            "GeoJSON has no region feature (a feature without subregion_id)".into(),
        ));
    }
    let geometry = RegionGeometry {
        region: MultiPolygon {
            polygons: region_parts,
        },
        subregions,
    };
    geometry.validate()?;
    Ok(geometry)
}

fn parse_geometry(geometry: &Value) -> Result<Vec<Polygon>> {
    let kind = geometry
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Data("geometry without type".into()))?;
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| Error::Data("geometry without coordinates".into()))?;
    match kind {
        "Polygon" => Ok(vec![parse_polygon(coords)?]),
        "MultiPolygon" => {
            let parts = coords
                .as_array()
                .ok_or_else(|| Error::Data("MultiPolygon coordinates not an array".into()))?;
            parts.iter().map(parse_polygon).collect()
        }
        other => Err(Error::Data(format!(
            "unsupported geometry type {other}; expected Polygon or MultiPolygon"
        ))),
    }
}

fn parse_polygon(coords: &Value) -> Result<Polygon> {
    let rings_raw = coords
        .as_array()
        .ok_or_else(|| Error::Data("Polygon coordinates not an array".into()))?;
    let mut rings = Vec::with_capacity(rings_raw.len());
    for ring_raw in rings_raw {
        let points_raw = ring_raw
            .as_array()
            .ok_or_else(|| Error::Data("polygon ring not an array".into()))?;
        let mut ring = Vec::with_capacity(points_raw.len());
        for point in points_raw {
            let pair = point
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| Error::Data("ring vertex not a [lon, lat] pair".into()))?;
            let lon = pair[0]
                .as_f64()
                .ok_or_else(|| Error::Data("non-numeric longitude".into()))?;
            let lat = pair[1]
                .as_f64()
                .ok_or_else(|| Error::Data("non-numeric latitude".into()))?;
            ring.push([lon, lat]);
        }
        rings.push(ring);
    }
    Polygon::new(rings)
}

/// Serialize a RegionGeometry back into GeoJSON (used by the toy fixtures).
pub fn to_geojson(geom: &RegionGeometry) -> Value {
    let mut features = Vec::new();
    features.push(serde_json::json!({
        "type": "Feature",
        "properties": {},
        "geometry": multipolygon_json(&geom.region),
    }));
    for (id, poly) in &geom.subregions {
        features.push(serde_json::json!({
            "type": "Feature",
            "properties": { "subregion_id": id },
            "geometry": multipolygon_json(poly),
        }));
    }
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

fn multipolygon_json(geom: &MultiPolygon) -> Value {
    let parts: Vec<Value> = geom
        .polygons
        .iter()
        .map(|poly| {
            let rings: Vec<Value> = poly
                .rings
                .iter()
                .map(|ring| {
                    Value::Array(
                        ring.iter()
                            .map(|p| serde_json::json!([p[0], p[1]]))
                            .collect(),
                    )
                })
                .collect();
            Value::Array(rings)
        })
        .collect();
    serde_json::json!({ "type": "MultiPolygon", "coordinates": parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_square() -> MultiPolygon {
        MultiPolygon::single(Polygon::rectangle(0.0, 0.0, 1.0, 1.0))
    }

    fn square_with_hole() -> MultiPolygon {
        MultiPolygon::single(Polygon {
            rings: vec![
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]],
                vec![
                    [0.25, 0.25],
                    [0.75, 0.25],
                    [0.75, 0.75],
                    [0.25, 0.75],
                    [0.25, 0.25],
                ],
            ],
        })
    }

    #[test]
    fn center_of_unit_square_is_inside() {
        assert!(point_in_region(0.5, 0.5, &unit_square()));
        assert!(!point_in_region(1.5, 0.5, &unit_square()));
    }

    #[test]
    fn point_in_hole_is_outside() {
        let geom = square_with_hole();
        assert!(!point_in_region(0.5, 0.5, &geom));
        assert!(point_in_region(0.1, 0.1, &geom));
    }

    #[test]
    fn boundary_point_is_inside() {
        assert!(point_in_region(0.0, 0.5, &unit_square()));
        assert!(point_in_region(0.5, 1.0, &unit_square()));
        assert!(point_in_region(0.0, 0.0, &unit_square()));
    }

    #[test]
    fn uniform_points_land_inside_with_uniform_mean() {
        let geom = unit_square();
        let pts = uniform_points_in_polygon(&geom, 1000, 42).unwrap();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().all(|p| point_in_region(p[0], p[1], &geom)));
        let mean_lon: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / 1000.0;
        let mean_lat: f64 = pts.iter().map(|p| p[1]).sum::<f64>() / 1000.0;
        assert!((mean_lon - 0.5).abs() < 0.05);
        assert!((mean_lat - 0.5).abs() < 0.05);
    }

    #[test]
    fn l_shape_excludes_quadrant() {
        let l_shape = MultiPolygon::single(
            Polygon::new(vec![vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 0.5],
                [0.5, 0.5],
                [0.5, 1.0],
                [0.0, 1.0],
                [0.0, 0.0],
            ]])
            .unwrap(),
        );
        let pts = uniform_points_in_polygon(&l_shape, 500, 1).unwrap();
        assert!(pts.iter().all(|p| !(p[0] > 0.5 && p[1] > 0.5)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let geom = unit_square();
        let a = uniform_points_in_polygon(&geom, 100, 9).unwrap();
        let b = uniform_points_in_polygon(&geom, 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn halves_balance_within_four_sigma() {
        let geom = unit_square();
        let n = 10_000;
        let pts = uniform_points_in_polygon(&geom, n, 3).unwrap();
        let left = pts.iter().filter(|p| p[0] < 0.5).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((left - n as f64 / 2.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn assign_subregion_rules() {
        let mut subregions = BTreeMap::new();
        subregions.insert(
            "A".to_string(),
            MultiPolygon::single(Polygon::rectangle(0.0, 0.0, 0.6, 1.0)),
        );
        subregions.insert(
            "B".to_string(),
            MultiPolygon::single(Polygon::rectangle(0.4, 0.0, 1.0, 1.0)),
        );
        let geom = RegionGeometry {
            region: unit_square(),
            subregions,
        };
        let coords = array![[0.2, 0.5], [0.9, 0.5], [0.5, 0.5], [2.0, 2.0]];
        let ids = assign_subregion(&coords, &geom);
        assert_eq!(ids, vec!["A", "B", "A", NO_SUBREGION]);
    }

    #[test]
    fn geojson_roundtrip() {
        let text = r#"{
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {},
                 "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
                {"type": "Feature", "properties": {"subregion_id": "west"},
                 "geometry": {"type": "Polygon", "coordinates": [[[0,0],[0.5,0],[0.5,1],[0,1],[0,0]]]}}
            ]
        }"#;
        let geom = parse_geojson(text).unwrap();
        assert_eq!(geom.subregions.len(), 1);
        assert!(point_in_region(0.25, 0.5, &geom.subregions["west"]));
        let json = to_geojson(&geom);
        let again = parse_geojson(&json.to_string()).unwrap();
        assert_eq!(again.subregions.len(), 1);
    }

    #[test]
    fn unclosed_ring_rejected() {
        let text = r#"{
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {},
                 "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,1]]]}}
            ]
        }"#;
        assert!(parse_geojson(text).is_err());
    }
}
