//! On-disk formats: reference-grid path CSV, scene JSON, run-config TOML and
//! the small two-column tables emitted by the evaluation tools.
//!
//! Path CSV, schema version 1:
//!
//! ```text
//! # rtinterp-paths
//! # schema_version=1
//! # tx=<x>,<y>,<z>
//! # grid_spacing=<meters>|none
//! rx_x,rx_y,rx_z,path_index,gain_re,gain_im,delay_s,aoa_az,aoa_zen,aod_az,aod_zen,facet_ids,n_interactions
//! ```
//!
//! Every data row carries one path followed by `3 · n_interactions` reflection
//! point coordinates (`x1,y1,z1,x2,…`). `facet_ids` is `[i;j;…]` when known
//! (`[]` for a line-of-sight path) and empty when the producer had no facet
//! metadata. A receiver with no paths is written as a single row whose fields
//! after `rx_z` are all empty. Floats use 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Facet, GeometryError, Material, PathRecord, PathSet, Scene, Vec3, SPEED_OF_LIGHT};
use crate::interpolation::{GainCorrection, Method};

pub const SCHEMA_VERSION: u32 = 1;

const GRID_MAGIC: &str = "# rtinterp-paths";

pub const GRID_HEADER: [&str; 13] = [
    "rx_x",
    "rx_y",
    "rx_z",
    "path_index",
    "gain_re",
    "gain_im",
    "delay_s",
    "aoa_az",
    "aoa_zen",
    "aod_az",
    "aod_zen",
    "facet_ids",
    "n_interactions",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DataError {
    fn parse(line: u64, message: impl Into<String>) -> Self {
        DataError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Path data traced at a set of reference receivers for one transmitter.
///
/// References are kept sorted by coordinate so equality does not depend on
/// insertion or row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    tx: Vec3,
    references: Vec<PathSet>,
    grid_spacing_hint: Option<f64>,
}

fn cmp_point(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

impl ReferenceGrid {
    pub fn new(tx: Vec3, mut references: Vec<PathSet>, grid_spacing_hint: Option<f64>) -> Result<Self, DataError> {
        if let Some(bad) = references.iter().find(|r| r.tx != tx) {
            return Err(DataError::InvalidGrid(format!(
                "path set at {:?} has transmitter {:?}, grid transmitter is {:?}",
                bad.rx.as_slice(),
                bad.tx.as_slice(),
                tx.as_slice()
            )));
        }
        references.sort_by(|a, b| cmp_point(&a.rx, &b.rx));
        if let Some(w) = references.windows(2).find(|w| w[0].rx == w[1].rx) {
            return Err(DataError::InvalidGrid(format!(
                "duplicate reference point {:?}",
                w[0].rx.as_slice()
            )));
        }
        Ok(Self {
            tx,
            references,
            grid_spacing_hint,
        })
    }

    pub fn tx(&self) -> Vec3 {
        self.tx
    }

    pub fn references(&self) -> &[PathSet] {
        &self.references
    }

    pub fn grid_spacing_hint(&self) -> Option<f64> {
        self.grid_spacing_hint
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to String");
}

fn write_path_row(out: &mut String, rx: &Vec3, index: Option<usize>, path: Option<&PathRecord>) {
    for c in rx.iter() {
        fmt_f64(out, *c);
        out.push(',');
    }
    match (index, path) {
        (Some(i), Some(p)) => {
            write!(out, "{i}").unwrap();
            for v in [p.gain.re, p.gain.im, p.delay, p.aoa_az, p.aoa_zen, p.aod_az, p.aod_zen] {
                out.push(',');
                fmt_f64(out, v);
            }
            out.push(',');
            if let Some(ids) = &p.facet_ids {
                out.push('[');
                for (k, id) in ids.iter().enumerate() {
                    if k > 0 {
                        out.push(';');
                    }
                    write!(out, "{id}").unwrap();
                }
                out.push(']');
            }
            write!(out, ",{}", p.reflection_points.len()).unwrap();
            for pt in &p.reflection_points {
                for c in pt.iter() {
                    out.push(',');
                    fmt_f64(out, *c);
                }
            }
        }
        _ => out.push_str(",,,,,,,,,"),
    }
    out.push('\n');
}

/// Serializes path sets sharing one transmitter in the v1 schema. Sets are
/// written in the order given.
pub fn write_path_sets<W: Write>(
    mut dest: W,
    tx: &Vec3,
    sets: &[PathSet],
    grid_spacing_hint: Option<f64>,
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(GRID_MAGIC);
    out.push('\n');
    writeln!(out, "# schema_version={SCHEMA_VERSION}").unwrap();
    out.push_str("# tx=");
    for (i, c) in tx.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        fmt_f64(&mut out, *c);
    }
    out.push('\n');
    out.push_str("# grid_spacing=");
    match grid_spacing_hint {
        Some(s) => fmt_f64(&mut out, s),
        None => out.push_str("none"),
    }
    out.push('\n');
    out.push_str(&GRID_HEADER.join(","));
    out.push('\n');
    for set in sets {
        if set.paths.is_empty() {
            write_path_row(&mut out, &set.rx, None, None);
        }
        for (i, p) in set.paths.iter().enumerate() {
            write_path_row(&mut out, &set.rx, Some(i), Some(p));
        }
    }
    dest.write_all(out.as_bytes())?;
    dest.flush()?;
    Ok(())
}

pub fn write_grid<W: Write>(grid: &ReferenceGrid, dest: W) -> Result<(), DataError> {
    write_path_sets(dest, &grid.tx, &grid.references, grid.grid_spacing_hint)
}

pub fn write_grid_file(grid: &ReferenceGrid, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = fs::File::create(path)?;
    write_grid(grid, io::BufWriter::new(file))
}

/// Raw contents of a path CSV before grid validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    pub tx: Vec3,
    pub grid_spacing_hint: Option<f64>,
    /// Path sets in order of first appearance; paths sorted by `path_index`.
    pub sets: Vec<PathSet>,
}

fn parse_f64(field: &str, line: u64, name: &str) -> Result<f64, DataError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| DataError::parse(line, format!("column {name}: cannot parse {field:?} as a number")))
}

fn parse_triplet(text: &str, line: u64, name: &str) -> Result<Vec3, DataError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(DataError::parse(line, format!("{name} needs 3 comma-separated values")));
    }
    Ok(Vec3::new(
        parse_f64(parts[0], line, name)?,
        parse_f64(parts[1], line, name)?,
        parse_f64(parts[2], line, name)?,
    ))
}

fn parse_facet_ids(field: &str, line: u64) -> Result<Option<Vec<usize>>, DataError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let inner = field
        .strip_prefix('[')
        .and_then(|f| f.strip_suffix(']'))
        .ok_or_else(|| DataError::parse(line, format!("facet_ids must look like [i;j], got {field:?}")))?;
    if inner.is_empty() {
        return Ok(Some(Vec::new()));
    }
    inner
        .split(';')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| DataError::parse(line, format!("bad facet id {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Parses a v1 path CSV without imposing grid invariants.
pub fn read_path_table<R: Read>(mut source: R) -> Result<PathTable, DataError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut tx = None;
    let mut version = None;
    let mut spacing = None;
    let mut meta_lines = 0u64;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        meta_lines += 1;
        let rest = rest.trim();
        if let Some((key, value)) = rest.split_once('=') {
            let lineno = meta_lines;
            match key.trim() {
                "schema_version" => {
                    version = Some(
                        value
                            .trim()
                            .parse::<u32>()
                            .map_err(|_| DataError::parse(lineno, format!("bad schema_version {value:?}")))?,
                    )
                }
                "tx" => tx = Some(parse_triplet(value, lineno, "tx")?),
                "grid_spacing" => {
                    spacing = match value.trim() {
                        "none" => None,
                        v => Some(parse_f64(v, lineno, "grid_spacing")?),
                    }
                }
                _ => {}
            }
        }
    }
    let version = version.ok_or_else(|| DataError::parse(1, "missing '# schema_version=' line"))?;
    if version != SCHEMA_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let tx = tx.ok_or_else(|| DataError::parse(meta_lines.max(1), "missing '# tx=' line"))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::parse(meta_lines + 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != GRID_HEADER {
        return Err(DataError::parse(
            meta_lines + 1,
            format!("unexpected header; expected {}", GRID_HEADER.join(",")),
        ));
    }

    let mut sets: Vec<(PathSet, Vec<usize>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() < GRID_HEADER.len() {
            return Err(DataError::parse(
                line,
                format!("expected at least {} fields, found {}", GRID_HEADER.len(), record.len()),
            ));
        }
        let rx = Vec3::new(
            parse_f64(&record[0], line, "rx_x")?,
            parse_f64(&record[1], line, "rx_y")?,
            parse_f64(&record[2], line, "rx_z")?,
        );
        let slot = match sets.iter().position(|(s, _)| s.rx == rx) {
            Some(i) => i,
            None => {
                sets.push((
                    PathSet {
                        tx,
                        rx,
                        paths: Vec::new(),
                    },
                    Vec::new(),
                ));
                sets.len() - 1
            }
        };
        if record[3].trim().is_empty() {
            if record.iter().skip(3).any(|f| !f.trim().is_empty()) {
                return Err(DataError::parse(
                    line,
                    "empty path_index requires all path fields empty",
                ));
            }
            continue;
        }
        let index = record[3]
            .trim()
            .parse::<usize>()
            .map_err(|_| DataError::parse(line, format!("bad path_index {:?}", &record[3])))?;
        let mut nums = [0.0; 7];
        for (k, name) in GRID_HEADER[4..11].iter().enumerate() {
            nums[k] = parse_f64(&record[4 + k], line, name)?;
        }
        let facet_ids = parse_facet_ids(&record[11], line)?;
        let n = record[12]
            .trim()
            .parse::<usize>()
            .map_err(|_| DataError::parse(line, format!("bad n_interactions {:?}", &record[12])))?;
        if record.len() != GRID_HEADER.len() + 3 * n {
            return Err(DataError::parse(
                line,
                format!(
                    "n_interactions={n} needs {} point fields, found {}",
                    3 * n,
                    record.len() - GRID_HEADER.len()
                ),
            ));
        }
        if let Some(ids) = &facet_ids {
            if ids.len() != n {
                return Err(DataError::parse(line, "facet_ids length differs from n_interactions"));
            }
        }
        let mut points = Vec::with_capacity(n);
        for k in 0..n {
            let base = GRID_HEADER.len() + 3 * k;
            points.push(Vec3::new(
                parse_f64(&record[base], line, "point")?,
                parse_f64(&record[base + 1], line, "point")?,
                parse_f64(&record[base + 2], line, "point")?,
            ));
        }
        let (set, indices) = &mut sets[slot];
        if indices.contains(&index) {
            return Err(DataError::parse(
                line,
                format!("duplicate path_index {index} for this receiver"),
            ));
        }
        indices.push(index);
        set.paths.push(PathRecord {
            gain: Complex64::new(nums[0], nums[1]),
            delay: nums[2],
            aoa_az: nums[3],
            aoa_zen: nums[4],
            aod_az: nums[5],
            aod_zen: nums[6],
            reflection_points: points,
            facet_ids,
        });
    }

    let sets = sets
        .into_iter()
        .map(|(mut set, indices)| {
            let mut order: Vec<usize> = (0..indices.len()).collect();
            order.sort_by_key(|&i| indices[i]);
            set.paths = order.into_iter().map(|i| set.paths[i].clone()).collect();
            set
        })
        .collect();
    Ok(PathTable {
        tx,
        grid_spacing_hint: spacing,
        sets,
    })
}

pub fn read_grid<R: Read>(source: R) -> Result<ReferenceGrid, DataError> {
    let table = read_path_table(source)?;
    ReferenceGrid::new(table.tx, table.sets, table.grid_spacing_hint)
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<ReferenceGrid, DataError> {
    read_grid(fs::File::open(path)?)
}

/// Axis-aligned rectangle in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }
}

fn axis_ticks(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let span = hi - lo;
    let steps = (span / spacing + 1e-9).floor() as usize;
    let mut ticks: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * spacing).collect();
    // always include the far edge
    if hi - ticks[ticks.len() - 1] > 1e-9 * spacing.max(1.0) {
        ticks.push(hi);
    }
    ticks
}

/// Regular lattice of receiver points covering `bounds` edge to edge at a
/// fixed height. Points are ordered x-major.
pub fn generate_reference_layout(bounds: &Bounds, spacing: f64, height: f64) -> Result<Vec<Vec3>, DataError> {
    if !(spacing > 0.0) {
        return Err(DataError::Config(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    if bounds.max[0] < bounds.min[0] || bounds.max[1] < bounds.min[1] {
        return Err(DataError::Config("bounds max must not be below min".into()));
    }
    let xs = axis_ticks(bounds.min[0], bounds.max[0], spacing);
    let ys = axis_ticks(bounds.min[1], bounds.max[1], spacing);
    Ok(xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| Vec3::new(x, y, height)))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct FacetEntry {
    vertices: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reflection: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    permittivity: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema_version: u32,
    speed_of_light: f64,
    max_reflection_order: usize,
    facets: Vec<FacetEntry>,
}

pub fn scene_to_json(scene: &Scene) -> String {
    let file = SceneFile {
        schema_version: SCHEMA_VERSION,
        speed_of_light: scene.speed_of_light,
        max_reflection_order: scene.max_reflection_order,
        facets: scene
            .facets
            .iter()
            .map(|f| {
                let (reflection, permittivity) = match f.material() {
                    Material::Constant(g) => (Some([g.re, g.im]), None),
                    Material::Dielectric(e) => (None, Some([e.re, e.im])),
                };
                FacetEntry {
                    vertices: f.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
                    reflection,
                    permittivity,
                }
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("scene serializes");
    s.push('\n');
    s
}

pub fn scene_from_json(text: &str) -> Result<Scene, DataError> {
    #[derive(Deserialize)]
    struct Probe {
        schema_version: u32,
    }
    let probe: Probe = serde_json::from_str(text).map_err(|e| DataError::Scene(e.to_string()))?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(DataError::Version {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let file: SceneFile = serde_json::from_str(text).map_err(|e| DataError::Scene(e.to_string()))?;
    if !(file.speed_of_light > 0.0) {
        return Err(DataError::Scene("speed_of_light must be positive".into()));
    }
    let facets = file
        .facets
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let verts = f.vertices.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect();
            let material = match (f.reflection, f.permittivity) {
                (Some(g), None) => Material::Constant(Complex64::new(g[0], g[1])),
                (None, Some(e)) => Material::Dielectric(Complex64::new(e[0], e[1])),
                _ => {
                    return Err(DataError::Scene(format!(
                        "facet {i}: give exactly one of `reflection` or `permittivity`"
                    )))
                }
            };
            Facet::with_material(verts, material).map_err(|e| DataError::Scene(format!("facet {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene {
        facets,
        speed_of_light: file.speed_of_light,
        max_reflection_order: file.max_reflection_order,
    })
}

pub fn read_scene_file(path: impl AsRef<Path>) -> Result<Scene, DataError> {
    scene_from_json(&fs::read_to_string(path)?)
}

pub fn write_scene_file(scene: &Scene, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, scene_to_json(scene))?;
    Ok(())
}

/// Run parameters shared by interpolation and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Hz.
    pub carrier_frequency: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Neighbourhood radius in meters; defaults to 1.5 × grid spacing.
    pub d_th: Option<f64>,
    pub sigma: f64,
    pub p_th: f64,
    pub cluster_epsilon: f64,
    pub array_rows: usize,
    pub array_cols: usize,
    pub array_spacing: f64,
    pub gain_correction: GainCorrection,
    pub method: Method,
    pub max_order: usize,
    /// Tilt of the three transmit sectors, degrees.
    pub sector_elevation_deg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            carrier_frequency: 28e9,
            tx_power_dbm: 23.0,
            noise_figure_db: 3.0,
            bandwidth: 400e6,
            d_th: None,
            sigma: 2.0,
            p_th: 0.4,
            cluster_epsilon: 1e-2,
            array_rows: 8,
            array_cols: 8,
            array_spacing: 0.14,
            gain_correction: GainCorrection::FresnelCorrected,
            method: Method::Kernel,
            max_order: 2,
            sector_elevation_deg: -10.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("carrier_frequency", self.carrier_frequency),
            ("bandwidth", self.bandwidth),
            ("sigma", self.sigma),
            ("cluster_epsilon", self.cluster_epsilon),
            ("array_spacing", self.array_spacing),
        ];
        if self.schema_version != SCHEMA_VERSION {
            return Err(DataError::Version {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DataError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(d) = self.d_th {
            if !(d > 0.0) {
                return Err(DataError::Config(format!("d_th must be positive, got {d}")));
            }
        }
        if !(self.p_th > 0.0 && self.p_th < 1.0) {
            return Err(DataError::Config(format!("p_th must lie in (0, 1), got {}", self.p_th)));
        }
        if self.array_rows == 0 || self.array_cols == 0 {
            return Err(DataError::Config("array needs at least one row and column".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Channel matrix as CSV: one row per receive element, `re,im` pairs per
/// transmit element.
pub fn write_matrix_csv<W: Write>(mut dest: W, matrix: &DMatrix<Complex64>) -> Result<(), DataError> {
    let mut out = String::new();
    let header: Vec<String> = (0..matrix.ncols())
        .flat_map(|n| [format!("h{n}_re"), format!("h{n}_im")])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for m in 0..matrix.nrows() {
        for n in 0..matrix.ncols() {
            if n > 0 {
                out.push(',');
            }
            fmt_f64(&mut out, matrix[(m, n)].re);
            out.push(',');
            fmt_f64(&mut out, matrix[(m, n)].im);
        }
        out.push('\n');
    }
    dest.write_all(out.as_bytes())?;
    Ok(())
}

/// Generic two-column numeric table.
pub fn write_two_column_csv<W: Write>(
    mut dest: W,
    header: (&str, &str),
    rows: impl IntoIterator<Item = (f64, f64)>,
) -> Result<(), DataError> {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (a, b) in rows {
        fmt_f64(&mut out, a);
        out.push(',');
        fmt_f64(&mut out, b);
        out.push('\n');
    }
    dest.write_all(out.as_bytes())?;
    Ok(())
}
