//! Reproducible run definitions: a scene, a transmitter, a reference lattice
//! and a seeded set of target points.
//!
//! Four synthetic scenes ship built in. `free_space` has no facets at all;
//! `most_los`, `partial_los` and `total_nlos` are an open square, a street
//! canyon with a half-shadowed far end, and a plaza hidden behind a tall
//! block. Their frames are local: the reference area starts at the origin
//! and receivers sit 1.5 m above the ground plane `z = 0`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Facet, Material, Scene, Vec3};
use crate::pathdata::{generate_reference_layout, read_scene_file, Bounds, DataError, RunConfig, SCHEMA_VERSION};

pub const BUILTIN_NAMES: [&str; 4] = ["free_space", "most_los", "partial_los", "total_nlos"];

/// Relative permittivities near 28 GHz, from ITU-style fits.
pub mod materials {
    use super::*;

    pub const CONCRETE: Material = Material::Dielectric(Complex64::new(5.24, -0.40));
    pub const GLASS: Material = Material::Dielectric(Complex64::new(6.31, -0.20));
    pub const BRICK: Material = Material::Dielectric(Complex64::new(3.91, -0.03));
    pub const METAL: Material = Material::Constant(Complex64::new(-1.0, 0.0));
}

use materials::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub scene: Scene,
    pub tx: Vec3,
    /// Seeds the initial azimuth of the transmit sectors.
    pub sector_seed: u64,
    pub reference_bounds: Bounds,
    pub grid_spacing: f64,
    pub height: f64,
    pub target_count: usize,
    pub target_seed: u64,
    pub target_bounds: Bounds,
    /// Footprints (obstacles) that hold neither references nor targets.
    pub keep_out: Vec<Bounds>,
    pub config: RunConfig,
}

impl ScenarioSpec {
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "free_space" => Some(free_space()),
            "most_los" => Some(most_los()),
            "partial_los" => Some(partial_los()),
            "total_nlos" => Some(total_nlos()),
            _ => None,
        }
    }

    /// A built-in name or the path of a scenario TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self, DataError> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None if Path::new(name_or_path).exists() => Self::read_file(name_or_path),
            None => Err(DataError::Config(format!(
                "unknown scenario {name_or_path:?}: not a built-in ({}) and no such file",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    pub fn with_grid_spacing(mut self, spacing: f64) -> Self {
        self.grid_spacing = spacing;
        self
    }

    pub fn with_targets(mut self, count: usize, seed: u64) -> Self {
        self.target_count = count;
        self.target_seed = seed;
        self
    }

    fn kept(&self, p: &Vec3) -> bool {
        !self.keep_out.iter().any(|b| b.contains(p))
    }

    /// Lattice points outside every keep-out footprint, x-major.
    pub fn reference_points(&self) -> Result<Vec<Vec3>, DataError> {
        let pts = generate_reference_layout(&self.reference_bounds, self.grid_spacing, self.height)?;
        Ok(pts.into_iter().filter(|p| self.kept(p)).collect())
    }

    /// Uniform targets by rejection sampling outside the keep-out footprints.
    pub fn targets(&self) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.target_seed);
        let b = &self.target_bounds;
        let mut out = Vec::with_capacity(self.target_count);
        while out.len() < self.target_count {
            let p = Vec3::new(
                rng.gen_range(b.min[0]..=b.max[0]),
                rng.gen_range(b.min[1]..=b.max[1]),
                self.height,
            );
            if self.kept(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Initial sector azimuth drawn from the sector seed.
    pub fn sector_azimuth(&self) -> f64 {
        ChaCha8Rng::seed_from_u64(self.sector_seed).gen_range(0.0..2.0 * PI)
    }

    /// Warns (as strings) about targets outside the reference area.
    pub fn warnings(&self) -> Vec<String> {
        let (t, r) = (&self.target_bounds, &self.reference_bounds);
        if t.min[0] < r.min[0] || t.min[1] < r.min[1] || t.max[0] > r.max[0] || t.max[1] > r.max[1] {
            vec![format!(
                "scenario {}: target bounds extend beyond the reference area",
                self.name
            )]
        } else {
            Vec::new()
        }
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a scenario file; a relative `scene` path resolves against
    /// `base_dir`, and `builtin:NAME` borrows a built-in scene.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: Option<u32>,
        }
        let probe: Probe = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        let found = probe.schema_version.unwrap_or(0);
        if found != SCHEMA_VERSION {
            return Err(DataError::Version {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let file: ScenarioFile = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        file.config.validate()?;
        let scene = match file.scene.strip_prefix("builtin:") {
            Some(name) => {
                Self::builtin(name)
                    .ok_or_else(|| DataError::Config(format!("unknown built-in scene {name:?}")))?
                    .scene
            }
            None => {
                let p = PathBuf::from(&file.scene);
                read_scene_file(if p.is_absolute() { p } else { base_dir.join(p) })?
            }
        };
        let spec = Self {
            name: file.name,
            scene,
            tx: Vec3::from(file.tx),
            sector_seed: file.sector_seed,
            reference_bounds: Bounds::new(file.reference.min, file.reference.max),
            grid_spacing: file.reference.spacing,
            height: file.reference.height,
            target_count: file.targets.count,
            target_seed: file.targets.seed,
            target_bounds: Bounds::new(file.targets.min, file.targets.max),
            keep_out: file.keep_out.iter().map(|b| Bounds::new(b[0], b[1])).collect(),
            config: file.config,
        };
        if !(spec.grid_spacing > 0.0) {
            return Err(DataError::Config("reference spacing must be positive".into()));
        }
        Ok(spec)
    }

    /// Serializes with the scene referenced by `scene_ref` (a path or
    /// `builtin:NAME`).
    pub fn to_toml(&self, scene_ref: &str) -> String {
        let file = ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            scene: scene_ref.to_string(),
            tx: self.tx.into(),
            sector_seed: self.sector_seed,
            reference: LatticeEntry {
                min: self.reference_bounds.min,
                max: self.reference_bounds.max,
                spacing: self.grid_spacing,
                height: self.height,
            },
            targets: TargetEntry {
                count: self.target_count,
                seed: self.target_seed,
                min: self.target_bounds.min,
                max: self.target_bounds.max,
            },
            keep_out: self.keep_out.iter().map(|b| [b.min, b.max]).collect(),
            config: self.config.clone(),
        };
        toml::to_string(&file).expect("scenario serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    scene: String,
    tx: [f64; 3],
    #[serde(default)]
    sector_seed: u64,
    #[serde(default)]
    keep_out: Vec<[[f64; 2]; 2]>,
    reference: LatticeEntry,
    targets: TargetEntry,
    #[serde(default)]
    config: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeEntry {
    min: [f64; 2],
    max: [f64; 2],
    spacing: f64,
    height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    count: usize,
    seed: u64,
    min: [f64; 2],
    max: [f64; 2],
}

/// Horizontal rectangle at height `z`, normal up.
pub fn ground(min: [f64; 2], max: [f64; 2], z: f64, material: Material) -> Facet {
    Facet::with_material(
        vec![
            Vec3::new(min[0], min[1], z),
            Vec3::new(max[0], min[1], z),
            Vec3::new(max[0], max[1], z),
            Vec3::new(min[0], max[1], z),
        ],
        material,
    )
    .expect("valid ground rectangle")
}

/// Vertical wall from `a` to `b` (ground-plane points), split into panels no
/// wider than `panel`; materials cycle along the wall.
pub fn wall(a: [f64; 2], b: [f64; 2], height: f64, panel: f64, materials: &[Material]) -> Vec<Facet> {
    let a = Vec3::new(a[0], a[1], 0.0);
    let b = Vec3::new(b[0], b[1], 0.0);
    let n = ((b - a).norm() / panel).ceil().max(1.0) as usize;
    let up = Vec3::new(0.0, 0.0, height);
    (0..n)
        .map(|i| {
            let p = a + (b - a) * (i as f64 / n as f64);
            let q = a + (b - a) * ((i + 1) as f64 / n as f64);
            Facet::with_material(vec![p, q, q + up, p + up], materials[i % materials.len()]).expect("valid wall panel")
        })
        .collect()
}

/// Facade relief: like [`wall`], but each panel is pushed in or out by up to
/// `depth` and yawed about its vertical centre line by up to `tilt_deg`,
/// drawn from `seed`. Neighbouring panels then image the transmitter to
/// different points, as window bays and pilasters do.
#[allow(clippy::too_many_arguments)]
pub fn relief_wall(
    a: [f64; 2],
    b: [f64; 2],
    height: f64,
    panel: f64,
    materials: &[Material],
    tilt_deg: f64,
    depth: f64,
    seed: u64,
) -> Vec<Facet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Vec3::new(a[0], a[1], 0.0);
    let b = Vec3::new(b[0], b[1], 0.0);
    let along = (b - a).normalize();
    let out = Vec3::new(along.y, -along.x, 0.0);
    let n = ((b - a).norm() / panel).ceil().max(1.0) as usize;
    let half = (b - a).norm() / n as f64 / 2.0;
    let up = Vec3::new(0.0, 0.0, height);
    (0..n)
        .map(|i| {
            let centre = a + (b - a) * ((i as f64 + 0.5) / n as f64) + out * rng.gen_range(-depth..=depth);
            let yaw = rng.gen_range(-tilt_deg..=tilt_deg).to_radians();
            let dir = along * yaw.cos() + out * yaw.sin();
            let (p, q) = (centre - dir * half, centre + dir * half);
            Facet::with_material(vec![p, q, q + up, p + up], materials[i % materials.len()])
                .expect("valid relief panel")
        })
        .collect()
}

/// Four walls of an axis-aligned block.
pub fn block(min: [f64; 2], max: [f64; 2], height: f64, panel: f64, materials: &[Material]) -> Vec<Facet> {
    let corners = [min, [max[0], min[1]], max, [min[0], max[1]]];
    (0..4)
        .flat_map(|i| wall(corners[i], corners[(i + 1) % 4], height, panel, materials))
        .collect()
}

fn base(name: &str, scene: Scene, tx: Vec3, area: Bounds, keep_out: Vec<Bounds>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        scene,
        tx,
        sector_seed: 7,
        reference_bounds: area,
        grid_spacing: 4.0,
        height: 1.5,
        target_count: 200,
        target_seed: 11,
        target_bounds: area,
        keep_out,
        config: RunConfig::default(),
    }
}

fn pad(min: [f64; 2], max: [f64; 2], margin: f64) -> Bounds {
    Bounds::new([min[0] - margin, min[1] - margin], [max[0] + margin, max[1] + margin])
}

/// No facets: every link is a single line-of-sight path.
pub fn free_space() -> ScenarioSpec {
    let area = Bounds::new([0.0, 0.0], [48.0, 48.0]);
    base("free_space", Scene::empty(), Vec3::new(-10.0, 24.0, 20.0), area, vec![])
}

/// Market square: relief facades of metal, glass and concrete on all four
/// sides, two dozen seeded stalls, transmitter on the west roof edge.
pub fn most_los() -> ScenarioSpec {
    let mut facets = vec![ground([-30.0, -30.0], [80.0, 80.0], 0.0, CONCRETE)];
    facets.extend(relief_wall(
        [-4.0, -6.0],
        [-4.0, 54.0],
        18.0,
        3.0,
        &[METAL, GLASS, METAL, CONCRETE],
        5.0,
        0.3,
        1,
    ));
    facets.extend(relief_wall(
        [53.0, 54.0],
        [53.0, -6.0],
        21.0,
        3.0,
        &[METAL, GLASS],
        5.0,
        0.3,
        2,
    ));
    facets.extend(relief_wall(
        [-4.0, 55.0],
        [53.0, 55.0],
        24.0,
        3.0,
        &[GLASS, METAL, METAL],
        5.0,
        0.3,
        3,
    ));
    facets.extend(relief_wall(
        [-4.0, -7.0],
        [53.0, -7.0],
        15.0,
        3.0,
        &[METAL, BRICK],
        5.0,
        0.3,
        4,
    ));
    let area = Bounds::new([0.0, 0.0], [48.0, 48.0]);
    let keep_out = stalls(&mut facets, &area, 24, 5.0, 5);
    base(
        "most_los",
        Scene::new(facets),
        Vec3::new(-4.6, 23.3, 22.0),
        area,
        keep_out,
    )
}

/// Scatters `count` box stalls (1.5–4 m footprint, 3 m to `max_height`
/// tall) inside `area`; returns their padded footprints.
fn stalls(facets: &mut Vec<Facet>, area: &Bounds, count: usize, max_height: f64, seed: u64) -> Vec<Bounds> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep_out = Vec::with_capacity(count);
    for _ in 0..count {
        let sx = rng.gen_range(1.5..4.0);
        let sy = rng.gen_range(1.5..4.0);
        let x = rng.gen_range(area.min[0] + 2.0..area.max[0] - 2.0 - sx);
        let y = rng.gen_range(area.min[1] + 2.0..area.max[1] - 2.0 - sy);
        let h = rng.gen_range(3.0..max_height);
        facets.extend(block([x, y], [x + sx, y + sy], h, 4.0, &[METAL, GLASS]));
        keep_out.push(pad([x, y], [x + sx, y + sy], 0.05));
    }
    keep_out
}

/// Street canyon whose far half sits behind a protruding block.
pub fn partial_los() -> ScenarioSpec {
    let mut facets = vec![ground([-30.0, -20.0], [70.0, 40.0], 0.0, CONCRETE)];
    facets.extend(wall([-20.0, -2.0], [60.0, -2.0], 20.0, 8.0, &[CONCRETE, GLASS]));
    facets.extend(wall([60.0, 18.0], [-20.0, 18.0], 22.0, 8.0, &[GLASS, BRICK, CONCRETE]));
    let protrusion = ([22.0, -2.0], [29.0, 9.5]);
    facets.extend(block(protrusion.0, protrusion.1, 20.0, 6.0, &[CONCRETE, GLASS]));
    let kiosk = ([38.3, 12.2], [40.6, 14.1]);
    facets.extend(block(kiosk.0, kiosk.1, 3.0, 4.0, &[METAL]));
    let area = Bounds::new([0.0, 0.0], [48.0, 16.0]);
    base(
        "partial_los",
        Scene::new(facets),
        Vec3::new(-12.0, 3.1, 9.0),
        area,
        vec![pad(protrusion.0, protrusion.1, 0.05), pad(kiosk.0, kiosk.1, 0.05)],
    )
    .with_targets(200, 13)
}

/// Courtyard shielded from a distant transmitter by a block; only paths
/// folded back by the tall facade north of it reach the yard.
pub fn total_nlos() -> ScenarioSpec {
    let mut facets = vec![ground([-40.0, -60.0], [90.0, 90.0], 0.0, CONCRETE)];
    facets.extend(block([-6.0, -12.0], [54.0, -1.0], 21.0, 6.0, &[CONCRETE, GLASS]));
    facets.extend(wall([-6.0, -1.0], [-6.0, 70.0], 24.0, 8.0, &[GLASS, CONCRETE]));
    facets.extend(wall([54.0, 70.0], [54.0, -1.0], 24.0, 8.0, &[GLASS, BRICK]));
    facets.extend(relief_wall(
        [54.0, 70.0],
        [-6.0, 70.0],
        40.0,
        4.0,
        &[METAL, GLASS, METAL],
        3.0,
        0.3,
        9,
    ));
    let area = Bounds::new([0.0, 0.0], [48.0, 48.0]);
    base(
        "total_nlos",
        Scene::new(facets),
        Vec3::new(24.0, -30.0, 30.0),
        area,
        vec![],
    )
    .with_targets(200, 17)
}
