//! Uniform generator contract: fit on a table, sample exactly n synthetic
//! rows inside the region. Implements the flow+VAE pipeline and five
//! baselines behind one enum.

pub mod copula;

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::geometry::{
    assign_subregion, load_geojson, point_in_region, to_geojson, uniform_points_with_rng,
    RegionGeometry, NO_SUBREGION,
};
use crate::dataset::{
    encode, fit_layout, load_table, write_csv, Cell, ColumnEncoding, ColumnKind, ColumnSpec,
    EncodeMode, EncodedMatrix, GeoTable, Layout,
};
use crate::diffnet::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowArch, FlowModel};
use crate::vae::{train_vae, vae_sample, LossWeights, VaeArch, VaeModel};
pub use copula::{copula_sample, fit_copula, ColumnData, CopulaState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    NfVae,
    VaeOnly,
    Copula,
    NfCopula,
    GlobalShuffle,
    LocalShuffle,
}

pub const ALL_KINDS: [GeneratorKind; 6] = [
    GeneratorKind::NfVae,
    GeneratorKind::VaeOnly,
    GeneratorKind::Copula,
    GeneratorKind::NfCopula,
    GeneratorKind::GlobalShuffle,
    GeneratorKind::LocalShuffle,
];

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::NfVae => "nf_vae",
            GeneratorKind::VaeOnly => "vae_only",
            GeneratorKind::Copula => "copula",
            GeneratorKind::NfCopula => "nf_copula",
            GeneratorKind::GlobalShuffle => "global_shuffle",
            GeneratorKind::LocalShuffle => "local_shuffle",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown generator kind: {s}")))
    }
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub flow_config: TrainConfig,
    pub vae_config: TrainConfig,
    pub flow_arch: FlowArch,
    pub vae_arch: VaeArch,
    pub weights: LossWeights,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            flow_config: TrainConfig::default(),
            vae_config: TrainConfig::default(),
            flow_arch: FlowArch::default(),
            vae_arch: VaeArch::default(),
            weights: LossWeights::default(),
        }
    }
}

impl FitOptions {
    /// Reduced epochs for smoke tests.
    pub fn quick() -> Self {
        let mut o = FitOptions::default();
        o.flow_config.epochs = 3;
        o.vae_config.epochs = 5;
        o
    }
}

#[derive(Debug)]
enum GenState {
    NfVae { flow: FlowModel, vae: VaeModel },
    VaeOnly { vae: VaeModel },
    Copula { state: CopulaState },
    NfCopula { flow: FlowModel, state: CopulaState },
    GlobalShuffle { table: GeoTable },
    LocalShuffle { table: GeoTable, assignments: Vec<String> },
}

#[derive(Debug)]
pub struct FittedGenerator {
    pub kind: GeneratorKind,
    pub schema: Vec<ColumnSpec>,
    pub geom: RegionGeometry,
    pub fit_seed: u64,
    state: GenState,
}

/// Model-mode layout with the two coordinate columns switched to min-max
/// [0,1] scaling (the flow-free ablation's coordinate transform).
pub fn minmax_coord_layout(table: &GeoTable) -> Result<Layout> {
    let mut layout = fit_layout(table, EncodeMode::Model)?;
    for g in &mut layout.groups {
        let kind = layout.schema[g.source].kind;
        if matches!(kind, ColumnKind::Latitude | ColumnKind::Longitude) {
            let values: Vec<f64> = table
                .rows()
                .iter()
                .map(|r| r[g.source].as_f64().unwrap())
                .collect();
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            g.encoding = ColumnEncoding::MinMax { min, max };
        }
    }
    Ok(layout)
}

fn table_columns(table: &GeoTable) -> Vec<ColumnData> {
    table
        .schema()
        .iter()
        .enumerate()
        .map(|(c, spec)| match spec.kind {
            ColumnKind::Boolean => ColumnData::Categorical {
                levels: vec!["true".to_string(), "false".to_string()],
                values: table
                    .rows()
                    .iter()
                    .map(|r| usize::from(r[c] != Cell::Boolean(true)))
                    .collect(),
            },
            ColumnKind::Categorical => {
                let levels = spec.categories.clone();
                let values = table
                    .rows()
                    .iter()
                    .map(|r| match &r[c] {
                        Cell::Category(s) => levels.iter().position(|l| l == s).unwrap(),
                        _ => unreachable!("categorical cell"),
                    })
                    .collect();
                ColumnData::Categorical { levels, values }
            }
            _ => ColumnData::Numeric(
                table.rows().iter().map(|r| r[c].as_f64().unwrap()).collect(),
            ),
        })
        .collect()
}

/// Turn a copula sample matrix (one column per schema column) into cells.
fn copula_rows(schema: &[ColumnSpec], mat: &Array2<f64>) -> Vec<Vec<Cell>> {
    (0..mat.nrows())
        .map(|i| {
            schema
                .iter()
                .enumerate()
                .map(|(c, spec)| {
                    let v = mat[[i, c]];
                    match spec.kind {
                        ColumnKind::Boolean => Cell::Boolean(v == 0.0),
                        ColumnKind::Categorical => {
                            Cell::Category(spec.categories[v as usize].clone())
                        }
                        ColumnKind::Integer => {
                            let mut r = v.round();
                            if let Some((lo, hi)) = spec.effective_bounds() {
                                r = r.clamp(lo.ceil(), hi.floor());
                            }
                            Cell::Integer(r as i64)
                        }
                        _ => Cell::Number(v),
                    }
                })
                .collect()
        })
        .collect()
}

/// Replace a table's coordinates with flow latents to form D^NF.
fn flow_latent_table(flow: &FlowModel, data: &GeoTable) -> Result<GeoTable> {
    let (latents, _) = flow.coords_to_latent(&data.coords())?;
    Ok(data.with_coords(&latents))
}

pub fn fit(
    kind: GeneratorKind,
    data: &GeoTable,
    geom: &RegionGeometry,
    opts: &FitOptions,
    seed: u64,
) -> Result<FittedGenerator> {
    if data.n_rows() == 0 {
        return Err(Error::EmptyData("fit on empty table".into()));
    }
    let flow_config = TrainConfig { seed, ..opts.flow_config.clone() };
    let vae_config = TrainConfig { seed: seed.wrapping_add(1), ..opts.vae_config.clone() };
    let state = match kind {
        GeneratorKind::NfVae => {
            let (flow, _) = train_flow(&data.coords(), &flow_config, opts.flow_arch.clone())?;
            let dnf = flow_latent_table(&flow, data)?;
            let enc = encode(&dnf, EncodeMode::Model)?;
            let (vae, _) = train_vae(&enc, &vae_config, &opts.vae_arch, opts.weights)?;
            GenState::NfVae { flow, vae }
        }
        GeneratorKind::VaeOnly => {
            let layout = minmax_coord_layout(data)?;
            let values = layout.apply(data)?;
            let enc = EncodedMatrix { values, layout };
            let (vae, _) = train_vae(&enc, &vae_config, &opts.vae_arch, opts.weights)?;
            GenState::VaeOnly { vae }
        }
        GeneratorKind::Copula => GenState::Copula {
            state: fit_copula(&table_columns(data))?,
        },
        GeneratorKind::NfCopula => {
            let (flow, _) = train_flow(&data.coords(), &flow_config, opts.flow_arch.clone())?;
            let dnf = flow_latent_table(&flow, data)?;
            let state = fit_copula(&table_columns(&dnf))?;
            GenState::NfCopula { flow, state }
        }
        GeneratorKind::GlobalShuffle => GenState::GlobalShuffle { table: data.clone() },
        GeneratorKind::LocalShuffle => {
            if geom.subregions.is_empty() {
                return Err(Error::Config(
                    "local_shuffle requires a geometry with subregions".into(),
                ));
            }
            let assignments = assign_subregion(&data.coords(), geom);
            GenState::LocalShuffle { table: data.clone(), assignments }
        }
    };
    Ok(FittedGenerator {
        kind,
        schema: data.schema().to_vec(),
        geom: geom.clone(),
        fit_seed: seed,
        state,
    })
}

impl FittedGenerator {
    /// Rows from one generation pass; coordinates may still fall outside the
    /// region (the caller clips).
    fn candidates(&self, m: usize, seed: u64) -> Result<Vec<Vec<Cell>>> {
        match &self.state {
            GenState::NfVae { flow, vae } => {
                let raw = vae_sample(vae, m, seed)?;
                let table = vae.layout.decode(&raw)?;
                let coords = flow.latent_to_coords(&table.coords())?;
                Ok(table.with_coords(&coords).rows().to_vec())
            }
            GenState::VaeOnly { vae } => {
                let raw = vae_sample(vae, m, seed)?;
                Ok(vae.layout.decode(&raw)?.rows().to_vec())
            }
            GenState::Copula { state } => {
                let mat = copula_sample(state, m, seed);
                Ok(copula_rows(&self.schema, &mat))
            }
            GenState::NfCopula { flow, state } => {
                let mat = copula_sample(state, m, seed);
                let mut rows = copula_rows(&self.schema, &mat);
                let lon = self.schema.iter().position(|s| s.kind == ColumnKind::Longitude).unwrap();
                let lat = self.schema.iter().position(|s| s.kind == ColumnKind::Latitude).unwrap();
                let latents = Array2::from_shape_fn((m, 2), |(i, j)| {
                    mat[[i, if j == 0 { lon } else { lat }]]
                });
                let coords = flow.latent_to_coords(&latents)?;
                for (i, row) in rows.iter_mut().enumerate() {
                    row[lon] = Cell::Number(coords[[i, 0]]);
                    row[lat] = Cell::Number(coords[[i, 1]]);
                }
                Ok(rows)
            }
            GenState::GlobalShuffle { table } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lon = table.longitude_index();
                let lat = table.latitude_index();
                let points = uniform_points_with_rng(&self.geom.region, m, &mut rng)?;
                let rows = (0..m)
                    .map(|i| {
                        let src = rng.gen_range(0..table.n_rows());
                        let mut row = table.rows()[src].clone();
                        row[lon] = Cell::Number(points[i][0]);
                        row[lat] = Cell::Number(points[i][1]);
                        row
                    })
                    .collect();
                Ok(rows)
            }
            GenState::LocalShuffle { table, assignments } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lon = table.longitude_index();
                let lat = table.latitude_index();
                let mut rows = Vec::with_capacity(m);
                for _ in 0..m {
                    let src = rng.gen_range(0..table.n_rows());
                    let polygon = match assignments[src].as_str() {
                        NO_SUBREGION => &self.geom.region,
                        id => &self.geom.subregions[id],
                    };
                    let p = uniform_points_with_rng(polygon, 1, &mut rng)?[0];
                    let mut row = table.rows()[src].clone();
                    row[lon] = Cell::Number(p[0]);
                    row[lat] = Cell::Number(p[1]);
                    rows.push(row);
                }
                Ok(rows)
            }
        }
    }

    /// Draw exactly n rows inside the region, regenerating rejected
    /// candidates. Deterministic given the seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<GeoTable> {
        let lon = self
            .schema
            .iter()
            .position(|s| s.kind == ColumnKind::Longitude)
            .unwrap();
        let lat = self
            .schema
            .iter()
            .position(|s| s.kind == ColumnKind::Latitude)
            .unwrap();
        let mut rows: Vec<Vec<Cell>> = Vec::with_capacity(n);
        let mut total: u64 = 0;
        let mut iter: u64 = 0;
        while rows.len() < n {
            let needed = n - rows.len();
            let m = (2 * needed).max(64);
            let batch_seed = seed.wrapping_add(iter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let candidates = self.candidates(m, batch_seed)?;
            total += m as u64;
            for row in candidates {
                let x = row[lon].as_f64().unwrap();
                let y = row[lat].as_f64().unwrap();
                if x.is_finite() && y.is_finite() && point_in_region(x, y, &self.geom.region) {
                    rows.push(row);
                    if rows.len() == n {
                        break;
                    }
                }
            }
            iter += 1;
            if total >= 100 * n as u64 && total >= 6_400 {
                let rate = rows.len() as f64 / total as f64;
                if rate < 1e-3 {
                    return Err(Error::RegionMismatch(rate));
                }
            }
        }
        GeoTable::new(self.schema.clone(), rows)
    }

    /// Serialize to a bundle directory: metadata, geometry, and whatever
    /// state the kind needs. `load` reproduces `sample` bit-exactly.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error, p: &Path| Error::Io {
            path: p.display().to_string(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        let meta = serde_json::json!({
            "kind": self.kind,
            "fit_seed": self.fit_seed,
            "schema": self.schema,
        });
        let meta_path = dir.join("metadata.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
            .map_err(|e| io(e, &meta_path))?;
        let geo_path = dir.join("geometry.geojson");
        fs::write(
            &geo_path,
            serde_json::to_string_pretty(&to_geojson(&self.geom)).unwrap(),
        )
        .map_err(|e| io(e, &geo_path))?;
        let write_json = |name: &str, value: serde_json::Value| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, serde_json::to_string(&value).unwrap()).map_err(|e| io(e, &p))
        };
        match &self.state {
            GenState::NfVae { flow, vae } => {
                write_json("flow.json", flow.to_json())?;
                write_json("vae.json", vae.to_json())?;
            }
            GenState::VaeOnly { vae } => write_json("vae.json", vae.to_json())?,
            GenState::Copula { state } => {
                write_json("copula.json", serde_json::to_value(state)?)?
            }
            GenState::NfCopula { flow, state } => {
                write_json("flow.json", flow.to_json())?;
                write_json("copula.json", serde_json::to_value(state)?)?;
            }
            GenState::GlobalShuffle { table } | GenState::LocalShuffle { table, .. } => {
                write_csv(table, &dir.join("source.csv"))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<FittedGenerator> {
        let io = |e: std::io::Error, p: &Path| Error::Io {
            path: p.display().to_string(),
            source: e,
        };
        let meta_path = dir.join("metadata.json");
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| io(e, &meta_path))?)?;
        let kind: GeneratorKind = serde_json::from_value(meta["kind"].clone())?;
        let fit_seed: u64 = serde_json::from_value(meta["fit_seed"].clone())?;
        let schema: Vec<ColumnSpec> = serde_json::from_value(meta["schema"].clone())?;
        let geom = load_geojson(&dir.join("geometry.geojson"))?;
        let read_json = |name: &str| -> Result<serde_json::Value> {
            let p = dir.join(name);
            Ok(serde_json::from_str(
                &fs::read_to_string(&p).map_err(|e| io(e, &p))?,
            )?)
        };
        let state = match kind {
            GeneratorKind::NfVae => GenState::NfVae {
                flow: FlowModel::from_json(&read_json("flow.json")?)?,
                vae: VaeModel::from_json(&read_json("vae.json")?)?,
            },
            GeneratorKind::VaeOnly => GenState::VaeOnly {
                vae: VaeModel::from_json(&read_json("vae.json")?)?,
            },
            GeneratorKind::Copula => GenState::Copula {
                state: serde_json::from_value(read_json("copula.json")?)?,
            },
            GeneratorKind::NfCopula => GenState::NfCopula {
                flow: FlowModel::from_json(&read_json("flow.json")?)?,
                state: serde_json::from_value(read_json("copula.json")?)?,
            },
            GeneratorKind::GlobalShuffle => GenState::GlobalShuffle {
                table: load_table(&dir.join("source.csv"), &schema)?.table,
            },
            GeneratorKind::LocalShuffle => {
                let table = load_table(&dir.join("source.csv"), &schema)?.table;
                let assignments = assign_subregion(&table.coords(), &geom);
                GenState::LocalShuffle { table, assignments }
            }
        };
        Ok(FittedGenerator {
            kind,
            schema,
            geom,
            fit_seed,
            state,
        })
    }
}

/// Resample rows with replacement, redrawing each row's coordinates
/// uniformly inside its source subregion.
pub fn local_shuffle_sample(
    source: &GeoTable,
    geom: &RegionGeometry,
    n: usize,
    seed: u64,
) -> Result<GeoTable> {
    let gen = fit(
        GeneratorKind::LocalShuffle,
        source,
        geom,
        &FitOptions::default(),
        seed,
    )?;
    gen.sample(n, seed)
}

/// Fraction of synthetic rows whose non-spatial features match no real row
/// (categoricals exact, numerics within 1e-9 relative).
pub fn novelty_rate(real: &GeoTable, synth: &GeoTable) -> Result<f64> {
    if real.schema() != synth.schema() {
        return Err(Error::Schema("novelty_rate: schema mismatch".into()));
    }
    if synth.n_rows() == 0 {
        return Ok(0.0);
    }
    let feature_cols: Vec<usize> = real
        .schema()
        .iter()
        .enumerate()
        .filter(|(_, s)| !matches!(s.kind, ColumnKind::Latitude | ColumnKind::Longitude))
        .map(|(c, _)| c)
        .collect();
    let cell_match = |a: &Cell, b: &Cell| -> bool {
        match (a, b) {
            (Cell::Number(x), Cell::Number(y)) => {
                (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
            }
            _ => a == b,
        }
    };
    let novel = synth
        .rows()
        .iter()
        .filter(|srow| {
            !real.rows().iter().any(|rrow| {
                feature_cols
                    .iter()
                    .all(|&c| cell_match(&srow[c], &rrow[c]))
            })
        })
        .count();
    Ok(novel as f64 / synth.n_rows() as f64)
}
