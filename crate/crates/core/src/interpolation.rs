//! Channel reconstruction at arbitrary receiver points from a reference grid.
//!
//! Each reference path is replaced by a line-of-sight path from its mirror
//! image of the transmitter. Paths from nearby references that share an image
//! point are grouped into clusters; a cluster survives when enough of the
//! neighbourhood's kernel mass supports it, and its gain at the target is a
//! kernel-weighted regression over the members. Delay and angles then follow
//! from the image point and the target position alone.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geometry::{direction_angles, route_length, PathRecord, PathSet, Vec3};
use crate::pathdata::{ReferenceGrid, RunConfig};
use crate::reflection::{compose_reflections, recover_planes_from_route, ImageTransform, Plane, ReflectionError};

/// Neighbourhood radius as a multiple of the grid spacing when unset.
pub const DEFAULT_D_TH_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// RBF-weighted regression.
    #[default]
    Kernel,
    /// Uniform weights over the neighbourhood.
    Average,
    /// All weight on the closest reference.
    Nearest,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kernel" => Ok(Method::Kernel),
            "average" => Ok(Method::Average),
            "nearest" => Ok(Method::Nearest),
            other => Err(format!("unknown method {other:?} (kernel|average|nearest)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Kernel => "kernel",
            Method::Average => "average",
            Method::Nearest => "nearest",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainCorrection {
    Raw,
    /// Strip spreading loss and carrier phase along the image distance before
    /// averaging, then re-apply them at the target.
    #[default]
    FresnelCorrected,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpolationError {
    #[error("reference grid is empty")]
    EmptyGrid,
    #[error("no reference point within {d_th} m of target {target:?}")]
    NoNeighbors { target: [f64; 3], d_th: f64 },
    #[error("reference {reference} path {path}: {source}")]
    Route {
        reference: usize,
        path: usize,
        source: ReflectionError,
    },
    #[error("target coincides with an image point")]
    DegenerateGeometry,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Gaussian radial basis function `exp(−d² / 2σ²)`.
pub fn rbf_kernel(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationParams {
    pub d_th: f64,
    pub sigma: f64,
    pub p_th: f64,
    pub cluster_epsilon: f64,
    pub method: Method,
    pub correction: GainCorrection,
    pub wavelength: f64,
    pub speed_of_light: f64,
}

impl InterpolationParams {
    /// Builds parameters from a run config; `grid_spacing` supplies the
    /// default neighbourhood radius when the config leaves it unset.
    pub fn from_config(cfg: &RunConfig, grid_spacing: Option<f64>) -> Result<Self, InterpolationError> {
        let d_th = match (cfg.d_th, grid_spacing) {
            (Some(d), _) => d,
            (None, Some(s)) => DEFAULT_D_TH_FACTOR * s,
            (None, None) => {
                return Err(InterpolationError::Parameter(
                    "d_th unset and grid spacing unknown".into(),
                ))
            }
        };
        let params = Self {
            d_th,
            sigma: cfg.sigma,
            p_th: cfg.p_th,
            cluster_epsilon: cfg.cluster_epsilon,
            method: cfg.method,
            correction: cfg.gain_correction,
            wavelength: cfg.wavelength(),
            speed_of_light: crate::geometry::SPEED_OF_LIGHT,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), InterpolationError> {
        let bad = |m: &str| Err(InterpolationError::Parameter(m.into()));
        if !(self.d_th > 0.0) {
            return bad("d_th must be positive");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.p_th > 0.0 && self.p_th < 1.0) {
            return bad("p_th must lie in (0, 1)");
        }
        if !(self.cluster_epsilon > 0.0) {
            return bad("cluster_epsilon must be positive");
        }
        if !(self.wavelength > 0.0 && self.speed_of_light > 0.0) {
            return bad("wavelength and speed of light must be positive");
        }
        Ok(())
    }
}

/// A reference path together with its mirror-image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagedPath {
    pub path: PathRecord,
    pub planes: Vec<Plane>,
    pub transform: ImageTransform,
    pub image: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedReference {
    pub position: Vec3,
    pub paths: Vec<ImagedPath>,
}

/// Prepares every reference path of a grid: bounce planes are recovered from
/// the route so that ingested data without facet metadata works too.
pub fn prepare_references(grid: &ReferenceGrid) -> Result<Vec<PreparedReference>, InterpolationError> {
    let tx = grid.tx();
    grid.references()
        .iter()
        .enumerate()
        .map(|(q, set)| {
            let paths = set
                .paths
                .iter()
                .enumerate()
                .map(|(l, p)| {
                    let planes = recover_planes_from_route(&p.reflection_points, &tx, &set.rx).map_err(|source| {
                        InterpolationError::Route {
                            reference: q,
                            path: l,
                            source,
                        }
                    })?;
                    let transform = compose_reflections(&planes);
                    Ok(ImagedPath {
                        image: transform.apply(&tx),
                        path: p.clone(),
                        planes,
                        transform,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(PreparedReference {
                position: set.rx,
                paths,
            })
        })
        .collect()
}

/// A reference inside the neighbourhood of a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub reference: usize,
    pub distance: f64,
    /// Regression weight under the active method.
    pub weight: f64,
}

/// Indices of references strictly closer than `d_th` to `target`.
pub fn select_neighbors(grid: &ReferenceGrid, target: &Vec3, d_th: f64) -> Result<Vec<usize>, InterpolationError> {
    let positions: Vec<Vec3> = grid.references().iter().map(|r| r.rx).collect();
    neighbor_indices(&positions, target, d_th)
}

fn neighbor_indices(positions: &[Vec3], target: &Vec3, d_th: f64) -> Result<Vec<usize>, InterpolationError> {
    let found: Vec<usize> = positions
        .iter()
        .enumerate()
        .filter(|(_, p)| (target - *p).norm() < d_th)
        .map(|(i, _)| i)
        .collect();
    if found.is_empty() {
        return Err(InterpolationError::NoNeighbors {
            target: [target.x, target.y, target.z],
            d_th,
        });
    }
    Ok(found)
}

/// Regression weights for the neighbourhood under `method`.
///
/// Kernel weights are scaled by the closest neighbour's weight so they cannot
/// all underflow; ratios, and so every normalized quantity, are unaffected.
pub fn neighbor_weights(distances: &[f64], sigma: f64, method: Method) -> Vec<f64> {
    match method {
        Method::Kernel => {
            let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
            distances
                .iter()
                .map(|d| (-(d * d - d_min * d_min) / (2.0 * sigma * sigma)).exp())
                .collect()
        }
        Method::Average => vec![1.0; distances.len()],
        Method::Nearest => {
            let mut best = 0;
            for (i, d) in distances.iter().enumerate() {
                if *d < distances[best] {
                    best = i;
                }
            }
            (0..distances.len())
                .map(|i| if i == best { 1.0 } else { 0.0 })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMember {
    /// Position of the member's reference in the neighbourhood list.
    pub neighbor: usize,
    pub reference: usize,
    pub path: usize,
    pub gain: Complex64,
    pub image: Vec3,
    pub reference_position: Vec3,
    pub distance: f64,
    pub weight: f64,
}

/// Paths from several references that share one mirror image source.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCluster {
    pub image_point: Vec3,
    pub transform: ImageTransform,
    /// Bounce planes of the representative (highest-weight) member.
    pub planes: Vec<Plane>,
    pub facet_ids: Option<Vec<usize>>,
    /// Other bounce orderings found among the grouped paths. Orderings that
    /// share an image point (a right-angle corner, say) differ in which one
    /// is realisable at a given receiver.
    pub alternatives: Vec<(Vec<Plane>, Option<Vec<usize>>)>,
    pub members: Vec<ClusterMember>,
    pub probability: f64,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels follow first appearance
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage grouping of neighbourhood image points with link distance
/// `epsilon`. A reference contributes at most one member per cluster (the
/// strongest path). Clusters come out in order of first appearance and carry
/// `probability = 0` until scored.
pub fn cluster_paths(references: &[PreparedReference], neighbors: &[Neighbor], epsilon: f64) -> Vec<PathCluster> {
    let mut items: Vec<ClusterMember> = Vec::new();
    let mut sources: Vec<&ImagedPath> = Vec::new();
    for (k, nb) in neighbors.iter().enumerate() {
        let reference = &references[nb.reference];
        for (l, ip) in reference.paths.iter().enumerate() {
            items.push(ClusterMember {
                neighbor: k,
                reference: nb.reference,
                path: l,
                gain: ip.path.gain,
                image: ip.image,
                reference_position: reference.position,
                distance: nb.distance,
                weight: nb.weight,
            });
            sources.push(ip);
        }
    }

    let mut sets = DisjointSet::new(items.len());
    let eps2 = epsilon * epsilon;
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            if (items[i].image - items[j].image).norm_squared() <= eps2 {
                sets.union(i, j);
            }
        }
    }

    let mut roots: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..items.len() {
        let r = sets.find(i);
        match roots.iter().position(|&x| x == r) {
            Some(g) => groups[g].push(i),
            None => {
                roots.push(r);
                groups.push(vec![i]);
            }
        }
    }

    groups
        .into_iter()
        .map(|group| {
            // one member per reference: keep the largest |gain|, first on ties
            let mut chosen: Vec<usize> = Vec::new();
            for &i in &group {
                match chosen.iter().position(|&c| items[c].neighbor == items[i].neighbor) {
                    Some(slot) => {
                        if items[i].gain.norm() > items[chosen[slot]].gain.norm() {
                            chosen[slot] = i;
                        }
                    }
                    None => chosen.push(i),
                }
            }
            let mut rep = chosen[0];
            for &c in &chosen {
                if items[c].weight > items[rep].weight {
                    rep = c;
                }
            }
            let centroid = chosen.iter().fold(Vec3::zeros(), |acc, &c| acc + items[c].image) / chosen.len() as f64;
            let source = sources[rep];
            let mut by_weight = group.clone();
            by_weight.sort_by(|&a, &b| items[b].weight.total_cmp(&items[a].weight));
            let mut alternatives: Vec<(Vec<Plane>, Option<Vec<usize>>)> = Vec::new();
            for i in by_weight {
                let planes = &sources[i].planes;
                let seen = std::iter::once(&source.planes)
                    .chain(alternatives.iter().map(|(p, _)| p))
                    .any(|q| same_planes(q, planes));
                if !seen {
                    alternatives.push((planes.clone(), sources[i].path.facet_ids.clone()));
                }
            }
            PathCluster {
                image_point: centroid,
                transform: source.transform,
                planes: source.planes.clone(),
                facet_ids: source.path.facet_ids.clone(),
                alternatives,
                members: chosen.iter().map(|&c| items[c].clone()).collect(),
                probability: 0.0,
            }
        })
        .collect()
}

fn same_planes(a: &[Plane], b: &[Plane]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.coincides(y, 1e-9))
}

/// Share of the neighbourhood's weight carried by the cluster's members.
pub fn cluster_probability(cluster: &PathCluster, neighbors: &[Neighbor]) -> f64 {
    let total: f64 = neighbors.iter().map(|n| n.weight).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let supported: f64 = cluster.members.iter().map(|m| m.weight).sum();
    (supported / total).clamp(0.0, 1.0)
}

/// Keeps clusters with `probability ≥ p_th`.
pub fn filter_clusters(clusters: Vec<PathCluster>, p_th: f64) -> Vec<PathCluster> {
    clusters.into_iter().filter(|c| c.probability >= p_th).collect()
}

/// Weighted complex regression of the members' gains at `target`.
pub fn interpolate_gain(
    cluster: &PathCluster,
    target: &Vec3,
    wavelength: f64,
    correction: GainCorrection,
) -> Complex64 {
    let mut weights: Vec<f64> = cluster.members.iter().map(|m| m.weight).collect();
    let mut norm: f64 = weights.iter().sum();
    if norm <= 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
        norm = weights.len() as f64;
    }
    let k = 2.0 * PI / wavelength;
    match correction {
        GainCorrection::Raw => {
            cluster
                .members
                .iter()
                .zip(&weights)
                .map(|(m, w)| m.gain * *w)
                .sum::<Complex64>()
                / norm
        }
        GainCorrection::FresnelCorrected => {
            let mean: Complex64 = cluster
                .members
                .iter()
                .zip(&weights)
                .map(|(m, w)| {
                    let d = (m.reference_position - m.image).norm();
                    m.gain * d * Complex64::from_polar(1.0, k * d) * *w
                })
                .sum::<Complex64>()
                / norm;
            let d_t = (target - cluster.image_point).norm();
            mean / d_t * Complex64::from_polar(1.0, -k * d_t)
        }
    }
}

/// Rebuilds a full path record at `target` from the cluster geometry.
pub fn reconstruct_params(
    cluster: &PathCluster,
    target: &Vec3,
    tx: &Vec3,
    gain: Complex64,
    speed_of_light: f64,
) -> Result<PathRecord, InterpolationError> {
    let to_target = target - cluster.image_point;
    let d = to_target.norm();
    if d < 1e-9 {
        return Err(InterpolationError::DegenerateGeometry);
    }
    let (aoa_az, aoa_zen) = direction_angles(&(-to_target));
    let departure = cluster.transform.pull_back_direction(&(to_target / d));
    let (aod_az, aod_zen) = direction_angles(&departure);
    // first ordering whose bounce points unfold to its own image distance
    let consistent = |planes: &[Plane], points: &[Vec3]| {
        let exact = (target - compose_reflections(planes).apply(tx)).norm();
        (route_length(points, tx, target) - exact).abs() <= 1e-9 * exact
    };
    let mut reflection_points = bounce_points(&cluster.planes, tx, target)?;
    let mut facet_ids = cluster.facet_ids.clone();
    if !consistent(&cluster.planes, &reflection_points) {
        for (planes, ids) in &cluster.alternatives {
            let Ok(points) = bounce_points(planes, tx, target) else {
                continue;
            };
            if consistent(planes, &points) {
                reflection_points = points;
                facet_ids = ids.clone();
                break;
            }
        }
    }
    Ok(PathRecord {
        gain,
        delay: d / speed_of_light,
        aoa_az,
        aoa_zen,
        aod_az,
        aod_zen,
        reflection_points,
        facet_ids,
    })
}

/// Reflection points of the specular route `tx → … → rx` across infinite
/// planes, found by walking back along the image chain.
pub fn bounce_points(planes: &[Plane], tx: &Vec3, rx: &Vec3) -> Result<Vec<Vec3>, InterpolationError> {
    let mut images = Vec::with_capacity(planes.len());
    let mut current = *tx;
    for p in planes {
        current = p.reflect_point(&current);
        images.push(current);
    }
    let mut points = vec![Vec3::zeros(); planes.len()];
    let mut target = *rx;
    for i in (0..planes.len()).rev() {
        let d_img = planes[i].signed_distance(&images[i]);
        let d_tgt = planes[i].signed_distance(&target);
        let denom = d_img - d_tgt;
        if denom.abs() < 1e-12 {
            return Err(InterpolationError::DegenerateGeometry);
        }
        let t = d_img / denom;
        let p = images[i] + (target - images[i]) * t;
        points[i] = p;
        target = p;
    }
    Ok(points)
}

/// One reconstructed path plus the cluster data it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedPath {
    pub record: PathRecord,
    pub transform: ImageTransform,
    pub image_point: Vec3,
    pub probability: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationResult {
    pub target: Vec3,
    pub paths: Vec<InterpolatedPath>,
    pub clusters_considered: usize,
    pub clusters_kept: usize,
    /// Probability of every cluster before filtering.
    pub probabilities: Vec<f64>,
    pub neighbors: Vec<Neighbor>,
}

impl InterpolationResult {
    pub fn to_path_set(&self, tx: Vec3) -> PathSet {
        PathSet {
            tx,
            rx: self.target,
            paths: self.paths.iter().map(|p| p.record.clone()).collect(),
        }
    }
}

/// Reference grid prepared for repeated queries.
#[derive(Debug, Clone)]
pub struct Interpolator {
    tx: Vec3,
    references: Vec<PreparedReference>,
    positions: Vec<Vec3>,
    params: InterpolationParams,
}

impl Interpolator {
    pub fn new(grid: &ReferenceGrid, params: InterpolationParams) -> Result<Self, InterpolationError> {
        params.validate()?;
        if grid.is_empty() {
            return Err(InterpolationError::EmptyGrid);
        }
        let references = prepare_references(grid)?;
        let positions = references.iter().map(|r| r.position).collect();
        Ok(Self {
            tx: grid.tx(),
            references,
            positions,
            params,
        })
    }

    pub fn params(&self) -> &InterpolationParams {
        &self.params
    }

    pub fn with_params(&self, params: InterpolationParams) -> Result<Self, InterpolationError> {
        params.validate()?;
        Ok(Self { params, ..self.clone() })
    }

    pub fn tx(&self) -> Vec3 {
        self.tx
    }

    pub fn references(&self) -> &[PreparedReference] {
        &self.references
    }

    pub fn neighbors(&self, target: &Vec3) -> Result<Vec<Neighbor>, InterpolationError> {
        let idx = neighbor_indices(&self.positions, target, self.params.d_th)?;
        let distances: Vec<f64> = idx.iter().map(|&i| (target - self.positions[i]).norm()).collect();
        let weights = neighbor_weights(&distances, self.params.sigma, self.params.method);
        Ok(idx
            .into_iter()
            .zip(distances)
            .zip(weights)
            .map(|((reference, distance), weight)| Neighbor {
                reference,
                distance,
                weight,
            })
            .collect())
    }

    /// Index of the reference closest to `target` (lowest index on ties).
    pub fn nearest_reference(&self, target: &Vec3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            let d = (target - p).norm();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Scored clusters for `target`, before filtering.
    pub fn clusters(&self, target: &Vec3) -> Result<(Vec<Neighbor>, Vec<PathCluster>), InterpolationError> {
        let neighbors = self.neighbors(target)?;
        let mut clusters = cluster_paths(&self.references, &neighbors, self.params.cluster_epsilon);
        for c in &mut clusters {
            c.probability = cluster_probability(c, &neighbors);
        }
        Ok((neighbors, clusters))
    }

    pub fn interpolate(&self, target: &Vec3) -> Result<InterpolationResult, InterpolationError> {
        let (neighbors, clusters) = self.clusters(target)?;
        let considered = clusters.len();
        let probabilities: Vec<f64> = clusters.iter().map(|c| c.probability).collect();
        let kept = filter_clusters(clusters, self.params.p_th);
        let paths = kept
            .iter()
            .map(|c| {
                let gain = interpolate_gain(c, target, self.params.wavelength, self.params.correction);
                let record = reconstruct_params(c, target, &self.tx, gain, self.params.speed_of_light)?;
                Ok(InterpolatedPath {
                    record,
                    transform: c.transform,
                    image_point: c.image_point,
                    probability: c.probability,
                    members: c.members.len(),
                })
            })
            .collect::<Result<Vec<_>, InterpolationError>>()?;
        Ok(InterpolationResult {
            target: *target,
            clusters_kept: paths.len(),
            clusters_considered: considered,
            paths,
            probabilities,
            neighbors,
        })
    }

    pub fn interpolate_batch(
        &self,
        targets: &[Vec3],
        exec: Execution,
    ) -> Vec<Result<InterpolationResult, InterpolationError>> {
        exec.map(targets, |t| self.interpolate(t))
    }
}

/// One-shot interpolation of a single target.
pub fn interpolate(
    grid: &ReferenceGrid,
    target: &Vec3,
    config: &RunConfig,
) -> Result<InterpolationResult, InterpolationError> {
    let params = InterpolationParams::from_config(config, grid.grid_spacing_hint())?;
    Interpolator::new(grid, params)?.interpolate(target)
}
