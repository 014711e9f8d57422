//! Command-line entry point: fit generators, sample synthetic populations,
//! evaluate them, run baseline benchmarks, and plot scatter maps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use geosynth::dataset::geometry::{load_geojson, RegionGeometry};
use geosynth::dataset::{load_schema, load_table, write_csv, Cell, ColumnKind, GeoTable};
use geosynth::generators::{self, FitOptions, FittedGenerator, GeneratorKind, ALL_KINDS};
use geosynth::metrics::{evaluate, EvaluationReport, MetricsConfig, PrivacySpec};
use geosynth::seed;
use geosynth::{toy, Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Full run configuration. Everything has a default except the input paths;
/// with no paths the bundled toy city is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub generator: GeneratorKind,
    pub fit: FitOptions,
    /// Synthetic sample size; None means the real table's size.
    pub n_synth: Option<usize>,
    /// Rows of the built-in city when no dataset path is given.
    pub toy_rows: usize,
    pub metrics: MetricsConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            schema: None,
            geometry: None,
            generator: GeneratorKind::NfVae,
            fit: FitOptions::default(),
            n_synth: None,
            toy_rows: 2000,
            metrics: MetricsConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

impl RunConfig {
    fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "geosynth", about = "Geolocated synthetic population toolkit")]
struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every sub-task derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (all artifacts land here).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the benchmark grid.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a generator and write its bundle directory.
    Fit {
        /// Generator kind (nf_vae, vae_only, copula, nf_copula,
        /// global_shuffle, local_shuffle).
        #[arg(long)]
        kind: Option<GeneratorKind>,
    },
    /// Sample a synthetic population from a saved bundle.
    Generate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score a synthetic table (CSV) or bundle against the real data.
    Evaluate {
        /// Synthetic CSV; privacy is skipped (it needs to refit the
        /// generator).
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Generator bundle; sampled and privacy-scored.
        #[arg(long, conflicts_with = "synth")]
        bundle: Option<PathBuf>,
    },
    /// Evaluate a grid of (kind, seed) cells and tabulate the results.
    Benchmark {
        /// Comma-separated kinds; defaults to all six.
        #[arg(long)]
        kinds: Option<String>,
        /// Comma-separated seeds; defaults to 0,1,2.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Side-by-side scatter map of real vs synthetic points.
    Plot {
        #[arg(long)]
        synth: PathBuf,
        /// Column that colors the points.
        #[arg(long)]
        feature: String,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    match cli.command {
        Command::Fit { kind } => cmd_fit(&cfg, kind.unwrap_or(cfg.generator)),
        Command::Generate { bundle, n } => cmd_generate(&cfg, &bundle, n),
        Command::Evaluate { synth, bundle } => cmd_evaluate(&cfg, synth.as_deref(), bundle.as_deref()),
        Command::Benchmark { kinds, seeds } => cmd_benchmark(&cfg, kinds.as_deref(), seeds.as_deref()),
        Command::Plot { synth, feature } => cmd_plot(&cfg, &synth, &feature),
    }
}

/// Real table plus region geometry, from the configured paths or the
/// built-in city.
fn load_inputs(cfg: &RunConfig) -> Result<(GeoTable, RegionGeometry)> {
    match (&cfg.dataset, &cfg.schema, &cfg.geometry) {
        (Some(data), Some(schema_path), Some(geom_path)) => {
            let schema = load_schema(schema_path)?;
            let report = load_table(data, &schema)?;
            if report.rejected > 0 {
                eprintln!("warning: {} rows rejected while loading {}", report.rejected, data.display());
            }
            let geom = load_geojson(geom_path)?;
            geom.validate()?;
            Ok((report.table, geom))
        }
        (None, None, None) => Ok((toy::city(cfg.toy_rows, cfg.seed)?, toy::city_geometry())),
        _ => Err(Error::Config(
            "dataset, schema, and geometry paths must be given together".into(),
        )),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_fit(cfg: &RunConfig, kind: GeneratorKind) -> Result<()> {
    let (data, geom) = load_inputs(cfg)?;
    let gen = generators::fit(kind, &data, &geom, &cfg.fit, seed::fit_seed(cfg.seed))?;
    let dir = cfg.out.join(format!("bundle_{kind}"));
    gen.save(&dir)?;
    let log = serde_json::json!({
        "kind": kind,
        "seed": cfg.seed,
        "n_rows": data.n_rows(),
        "bundle": format!("bundle_{kind}"),
    });
    write_text(&cfg.out.join(format!("fit_{kind}.json")), &serde_json::to_string_pretty(&log).unwrap())?;
    println!("fitted {kind} on {} rows -> {}", data.n_rows(), dir.display());
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, bundle: &Path, n: Option<usize>) -> Result<()> {
    let gen = FittedGenerator::load(bundle)?;
    let n = n.or(cfg.n_synth).unwrap_or(1000);
    let synth = gen.sample(n, seed::sample_seed(cfg.seed))?;
    let path = cfg.out.join("synthetic.csv");
    write_csv(&synth, &path)?;
    println!("sampled {n} rows from {} -> {}", gen.kind, path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, synth_path: Option<&Path>, bundle: Option<&Path>) -> Result<()> {
    let (real, geom) = load_inputs(cfg)?;
    let n_synth = cfg.n_synth.unwrap_or(real.n_rows());
    let (synth, privacy, label) = match (synth_path, bundle) {
        (Some(path), None) => {
            let report = load_table(path, real.schema())?;
            (report.table, None, None)
        }
        (None, Some(dir)) => {
            let gen = FittedGenerator::load(dir)?;
            let synth = gen.sample(n_synth, seed::sample_seed(cfg.seed))?;
            let spec = PrivacySpec { kind: gen.kind, opts: cfg.fit.clone(), n_synth };
            (synth, Some(spec), Some(gen.kind))
        }
        _ => return Err(Error::Config("evaluate needs exactly one of --synth or --bundle".into())),
    };
    let mut report = evaluate(&real, &synth, Some(&geom), privacy.as_ref(), &cfg.metrics, seed::metrics_seed(cfg.seed));
    report.generator = label.map(|k| k.to_string());
    write_report(cfg, &report)
}

fn write_report(cfg: &RunConfig, report: &EvaluationReport) -> Result<()> {
    let json_path = cfg.out.join("report.json");
    write_text(&json_path, &serde_json::to_string_pretty(report)?)?;
    let csv_path = cfg.out.join("report.csv");
    write_text(&csv_path, &format!("{}\n{}\n", EvaluationReport::CSV_HEADER, report.csv_row()))?;
    println!("report -> {}", json_path.display());
    let all_failed = [report.d_geo, report.d_spatial, report.d_local, report.d_utility, report.rho_privacy, report.novelty]
        .iter()
        .all(|v| v.is_none());
    if all_failed && !report.errors.is_empty() {
        return Err(Error::Evaluation(format!("all metrics failed: {:?}", report.errors)));
    }
    Ok(())
}

fn parse_kinds(text: Option<&str>) -> Result<Vec<GeneratorKind>> {
    match text {
        None => Ok(ALL_KINDS.to_vec()),
        Some(t) => t.split(',').map(|s| s.trim().parse()).collect(),
    }
}

fn parse_seeds(text: Option<&str>) -> Result<Vec<u64>> {
    match text {
        None => Ok(vec![0, 1, 2]),
        Some(t) => t
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("bad seed {s}: {e}")))
            })
            .collect(),
    }
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn cmd_benchmark(cfg: &RunConfig, kinds: Option<&str>, seeds: Option<&str>) -> Result<()> {
    let kinds = parse_kinds(kinds)?;
    let seeds = parse_seeds(seeds)?;
    if kinds.is_empty() || seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one kind and one seed".into()));
    }
    let (real, geom) = load_inputs(cfg)?;
    let n_synth = cfg.n_synth.unwrap_or(real.n_rows());
    let reports_dir = cfg.out.join("reports");
    std::fs::create_dir_all(&reports_dir).map_err(|e| Error::io(reports_dir.display().to_string(), e))?;

    // completed cells are skipped by output presence, so an interrupted run
    // resumes where it stopped
    let mut cells: Vec<(GeneratorKind, u64, PathBuf)> = Vec::new();
    for &kind in &kinds {
        for &s in &seeds {
            let path = reports_dir.join(format!("{kind}_{s}.json"));
            if !path.exists() {
                cells.push((kind, s, path));
            }
        }
    }

    let queue = Mutex::new(cells);
    let run_cell = |kind: GeneratorKind, s: u64| -> EvaluationReport {
        let fitted = generators::fit(kind, &real, &geom, &cfg.fit, seed::fit_seed(s))
            .and_then(|g| g.sample(n_synth, seed::sample_seed(s)));
        match fitted {
            Ok(synth) => {
                let spec = PrivacySpec { kind, opts: cfg.fit.clone(), n_synth };
                let mut r = evaluate(&real, &synth, Some(&geom), Some(&spec), &cfg.metrics, seed::metrics_seed(s));
                r.seed = s;
                r.generator = Some(kind.to_string());
                r
            }
            Err(e) => EvaluationReport {
                n_real: real.n_rows(),
                n_synth: 0,
                seed: s,
                generator: Some(kind.to_string()),
                d_geo: None,
                d_spatial: None,
                d_local: None,
                d_utility: None,
                rho_privacy: None,
                novelty: None,
                errors: BTreeMap::from([("fit".to_string(), e.to_string())]),
            },
        }
    };
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.max(1) {
            scope.spawn(|| loop {
                let cell = queue.lock().unwrap().pop();
                let Some((kind, s, path)) = cell else { break };
                let report = run_cell(kind, s);
                let text = serde_json::to_string_pretty(&report).unwrap();
                if let Err(e) = write_text(&path, &text) {
                    eprintln!("error: {e}");
                }
            });
        }
    });

    // tabulate every cell (including ones finished in earlier runs)
    let mut rows = Vec::new();
    let mut by_kind: BTreeMap<String, Vec<EvaluationReport>> = BTreeMap::new();
    for &kind in &kinds {
        for &s in &seeds {
            let path = reports_dir.join(format!("{kind}_{s}.json"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let report: EvaluationReport = serde_json::from_str(&text)?;
            rows.push(report.csv_row());
            by_kind.entry(kind.to_string()).or_default().push(report);
        }
    }
    let mut table = String::from(EvaluationReport::CSV_HEADER);
    table.push('\n');
    for row in &rows {
        table.push_str(row);
        table.push('\n');
    }
    for (kind, reports) in &by_kind {
        let med = |get: fn(&EvaluationReport) -> Option<f64>| -> String {
            let mut vals: Vec<f64> = reports.iter().filter_map(get).collect();
            median(&mut vals).map(|m| m.to_string()).unwrap_or_default()
        };
        table.push_str(&format!(
            "{kind},median,{},{},{},{},{},{},{},{}\n",
            reports[0].n_real,
            reports.iter().map(|r| r.n_synth).max().unwrap_or(0),
            med(|r| r.d_geo),
            med(|r| r.d_spatial),
            med(|r| r.d_local),
            med(|r| r.d_utility),
            med(|r| r.rho_privacy),
            med(|r| r.novelty),
        ));
    }
    let out_csv = cfg.out.join("benchmark.csv");
    write_text(&out_csv, &table)?;
    println!("benchmark table -> {}", out_csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Plotting
// ---------------------------------------------------------------------------

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn lerp_color(t: f64) -> String {
    // blue -> red ramp
    let a = (0x21, 0x66, 0xac);
    let b = (0xb2, 0x18, 0x2b);
    let mix = |x: i32, y: i32| -> i32 { (x as f64 + t.clamp(0.0, 1.0) * (y - x) as f64).round() as i32 };
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

enum Coloring {
    Numeric { min: f64, max: f64 },
    Levels(Vec<String>),
}

fn feature_coloring(real: &GeoTable, synth: &GeoTable, col: usize) -> Coloring {
    match real.schema()[col].kind {
        ColumnKind::Boolean => Coloring::Levels(vec!["true".into(), "false".into()]),
        ColumnKind::Categorical => Coloring::Levels(real.schema()[col].categories.clone()),
        _ => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for t in [real, synth] {
                for row in t.rows() {
                    let v = row[col].as_f64().unwrap();
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            Coloring::Numeric { min, max }
        }
    }
}

fn point_color(cell: &Cell, coloring: &Coloring) -> String {
    match (cell, coloring) {
        (Cell::Boolean(b), Coloring::Levels(_)) => {
            PALETTE[if *b { 0 } else { 1 }].to_string()
        }
        (Cell::Category(s), Coloring::Levels(levels)) => {
            let idx = levels.iter().position(|l| l == s).unwrap_or(0);
            PALETTE[idx % PALETTE.len()].to_string()
        }
        (_, Coloring::Numeric { min, max }) => {
            let v = cell.as_f64().unwrap();
            let t = if max > min { (v - *min) / (max - min) } else { 0.5 };
            lerp_color(t)
        }
        _ => PALETTE[0].to_string(),
    }
}

struct Panel {
    x0: f64,
    y0: f64,
    size: f64,
}

fn project(panel: &Panel, bounds: (f64, f64, f64, f64), lon: f64, lat: f64) -> (f64, f64) {
    let (min_lon, min_lat, max_lon, max_lat) = bounds;
    let sx = panel.size / (max_lon - min_lon);
    let sy = panel.size / (max_lat - min_lat);
    let x = panel.x0 + (lon - min_lon) * sx;
    // SVG y grows downward
    let y = panel.y0 + panel.size - (lat - min_lat) * sy;
    (x, y)
}

fn region_path(geom: &RegionGeometry, panel: &Panel, bounds: (f64, f64, f64, f64)) -> String {
    let mut d = String::new();
    for poly in &geom.region.polygons {
        for ring in &poly.rings {
            for (i, v) in ring.iter().enumerate() {
                let (x, y) = project(panel, bounds, v[0], v[1]);
                d.push_str(if i == 0 { "M" } else { "L" });
                d.push_str(&format!("{x:.2} {y:.2} "));
            }
            d.push('Z');
        }
    }
    d
}

fn scatter(
    svg: &mut String,
    table: &GeoTable,
    col: usize,
    coloring: &Coloring,
    panel: &Panel,
    bounds: (f64, f64, f64, f64),
    seed: u64,
) {
    let n = table.n_rows();
    let picked: Vec<usize> = if n > 1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, 1000).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let coords: Array2<f64> = table.coords();
    for i in picked {
        let (x, y) = project(panel, bounds, coords[[i, 0]], coords[[i, 1]]);
        let color = point_color(&table.rows()[i][col], coloring);
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n"
        ));
    }
}

fn render_svg(
    real: &GeoTable,
    synth: &GeoTable,
    geom: &RegionGeometry,
    feature: &str,
    seed: u64,
) -> Result<String> {
    let col = real
        .column_index(feature)
        .ok_or_else(|| Error::Config(format!("no column named {feature}")))?;
    let coloring = feature_coloring(real, synth, col);
    let (min_lon, min_lat, max_lon, max_lat) = geom.region.bounding_box();
    let pad_lon = 0.03 * (max_lon - min_lon);
    let pad_lat = 0.03 * (max_lat - min_lat);
    let bounds = (min_lon - pad_lon, min_lat - pad_lat, max_lon + pad_lon, max_lat + pad_lat);
    let panels = [
        Panel { x0: 40.0, y0: 40.0, size: 480.0 },
        Panel { x0: 580.0, y0: 40.0, size: 480.0 },
    ];
    let mut svg = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"1100\" height=\"600\" viewBox=\"0 0 1100 600\">\n\
         <rect width=\"1100\" height=\"600\" fill=\"white\"/>\n",
    );
    for (panel, (table, title)) in panels.iter().zip([(real, "real"), (synth, "synthetic")]) {
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\">{title} (n={})</text>\n",
            panel.x0,
            table.n_rows()
        ));
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n",
            region_path(geom, panel, bounds)
        ));
        scatter(&mut svg, table, col, &coloring, panel, bounds, seed);
    }
    // legend
    match &coloring {
        Coloring::Levels(levels) => {
            for (i, level) in levels.iter().enumerate() {
                let y = 550.0;
                let x = 40.0 + 120.0 * i as f64;
                svg.push_str(&format!(
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"{}\"/>\n\
                     <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\">{feature}={level}</text>\n",
                    PALETTE[i % PALETTE.len()],
                    x + 10.0,
                    y + 4.0
                ));
            }
        }
        Coloring::Numeric { min, max } => {
            for i in 0..=20 {
                let t = i as f64 / 20.0;
                svg.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"545\" width=\"10\" height=\"12\" fill=\"{}\"/>\n",
                    40.0 + 10.0 * i as f64,
                    lerp_color(t)
                ));
            }
            svg.push_str(&format!(
                "<text x=\"40\" y=\"578\" font-family=\"sans-serif\" font-size=\"13\">{feature}: {min:.3} to {max:.3}</text>\n"
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn cmd_plot(cfg: &RunConfig, synth_path: &Path, feature: &str) -> Result<()> {
    let (real, geom) = load_inputs(cfg)?;
    let synth = load_table(synth_path, real.schema())?.table;
    let svg = render_svg(&real, &synth, &geom, feature, seed::metrics_seed(cfg.seed))?;
    let path = cfg.out.join("plot.svg");
    write_text(&path, &svg)?;
    println!("plot -> {}", path.display());
    Ok(())
}
