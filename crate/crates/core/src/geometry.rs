//! Planar scenes and an image-method tracer for specular multipath.
//!
//! The tracer enumerates every ordered facet sequence up to the requested
//! reflection order, mirrors the transmitter across each facet plane in turn,
//! and walks the straight image line back from the receiver to recover the
//! reflection points. A candidate survives only if every reflection point is
//! strictly inside its facet and every leg of the route is unobstructed.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector3;
use num_complex::Complex64;
use thiserror::Error;

use crate::reflection::{ImageTransform, Plane};

pub type Vec3 = Vector3<f64>;

/// Vacuum speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default ceiling on reflection order accepted by a [`Scene`].
pub const DEFAULT_MAX_ORDER: usize = 3;

/// Tolerance (meters) for coplanarity, edge contact and plane embedding.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("facet needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("facet vertices are not coplanar (deviation {0:.3e} m)")]
    NotCoplanar(f64),
    #[error("facet polygon is degenerate (zero area)")]
    Degenerate,
    #[error("facet polygon self-intersects")]
    SelfIntersecting,
    #[error("reflection coefficient magnitude {0} exceeds 1")]
    ReflectionTooLarge(f64),
    #[error("requested reflection order {requested} exceeds configured cap {cap}")]
    OrderTooHigh { requested: usize, cap: usize },
    #[error("point {0:?} lies on the plane of facet {1}")]
    PointOnFacetPlane([f64; 3], usize),
    #[error("carrier frequency must be positive, got {0}")]
    BadFrequency(f64),
    #[error("permittivity {0} is not a passive medium (need Re > 0, Im ≤ 0)")]
    BadPermittivity(Complex64),
}

/// How a facet reflects an incident ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Material {
    /// Fixed coefficient at every incidence angle.
    Constant(Complex64),
    /// Homogeneous half-space with complex relative permittivity `ε' − jε''`;
    /// reflects with the perpendicular-polarization Fresnel coefficient.
    Dielectric(Complex64),
}

impl Material {
    /// Reflection coefficient for an incidence angle with cosine `cos_i`
    /// (measured from the facet normal).
    pub fn reflection(&self, cos_i: f64) -> Complex64 {
        match *self {
            Material::Constant(g) => g,
            Material::Dielectric(eps) => {
                let c = cos_i.abs().min(1.0);
                let root = (eps - (1.0 - c * c)).sqrt();
                (c - root) / (c + root)
            }
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            Material::Constant(g) if g.norm() > 1.0 + 1e-12 => Err(GeometryError::ReflectionTooLarge(g.norm())),
            Material::Dielectric(eps) if !(eps.re > 0.0 && eps.im <= 0.0) => Err(GeometryError::BadPermittivity(eps)),
            _ => Ok(()),
        }
    }
}

/// A planar, simple polygon with a reflecting material.
///
/// The unit normal follows the right-hand rule over the vertex winding.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    vertices: Vec<Vec3>,
    normal: Vec3,
    offset: f64,
    material: Material,
    // projection axes used for point-in-polygon tests
    axes: (usize, usize),
    flat: Vec<(f64, f64)>,
}

impl Facet {
    /// Facet with a constant reflection coefficient.
    pub fn new(vertices: Vec<Vec3>, reflection: Complex64) -> Result<Self, GeometryError> {
        Self::with_material(vertices, Material::Constant(reflection))
    }

    pub fn with_material(vertices: Vec<Vec3>, material: Material) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        material.validate()?;
        // Newell's method
        let mut normal = Vec3::zeros();
        for (i, a) in vertices.iter().enumerate() {
            let b = &vertices[(i + 1) % vertices.len()];
            normal.x += (a.y - b.y) * (a.z + b.z);
            normal.y += (a.z - b.z) * (a.x + b.x);
            normal.z += (a.x - b.x) * (a.y + b.y);
        }
        let len = normal.norm();
        if len < 1e-12 {
            return Err(GeometryError::Degenerate);
        }
        let normal = normal / len;
        let offset = normal.dot(&vertices[0]);
        let deviation = vertices
            .iter()
            .map(|v| (normal.dot(v) - offset).abs())
            .fold(0.0, f64::max);
        if deviation > GEOMETRY_TOL {
            return Err(GeometryError::NotCoplanar(deviation));
        }

        let axes = projection_axes(&normal);
        let flat: Vec<(f64, f64)> = vertices.iter().map(|v| (v[axes.0], v[axes.1])).collect();
        if polygon_self_intersects(&flat) {
            return Err(GeometryError::SelfIntersecting);
        }

        Ok(Self {
            vertices,
            normal,
            offset,
            material,
            axes,
            flat,
        })
    }

    /// Axis-aligned rectangle helper: `corner` plus two edge vectors.
    pub fn parallelogram(
        corner: Vec3,
        edge_a: Vec3,
        edge_b: Vec3,
        reflection: Complex64,
    ) -> Result<Self, GeometryError> {
        Self::new(
            vec![corner, corner + edge_a, corner + edge_a + edge_b, corner + edge_b],
            reflection,
        )
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn material(&self) -> Material {
        self.material
    }

    /// Reflection coefficient for a ray arriving along `incoming`.
    pub fn reflection_along(&self, incoming: &Vec3) -> Complex64 {
        let n = incoming.norm();
        let cos_i = if n > 0.0 { self.normal.dot(incoming) / n } else { 1.0 };
        self.material.reflection(cos_i)
    }

    pub fn plane(&self) -> Plane {
        Plane::new_unchecked(self.normal, self.offset)
    }

    /// Signed distance of `p` from the facet plane.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Strict interior test for a point assumed to be on the facet plane.
    /// Points within [`GEOMETRY_TOL`] of an edge are rejected.
    pub fn contains_interior(&self, p: &Vec3) -> bool {
        if self.near_edge(p) {
            return false;
        }
        crossing_test(&self.flat, (p[self.axes.0], p[self.axes.1]))
    }

    /// Closed test: interior or on the boundary.
    pub fn contains_closed(&self, p: &Vec3) -> bool {
        self.near_edge(p) || crossing_test(&self.flat, (p[self.axes.0], p[self.axes.1]))
    }

    fn near_edge(&self, p: &Vec3) -> bool {
        let n = self.vertices.len();
        (0..n).any(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            point_segment_distance(p, &a, &b) <= GEOMETRY_TOL
        })
    }

    /// Whether the open segment `a → b` touches this facet (edges included).
    fn blocks(&self, a: &Vec3, b: &Vec3) -> bool {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        let len = (b - a).norm();
        let eps = GEOMETRY_TOL;
        if da.abs() <= eps && db.abs() <= eps {
            // segment lies in the facet plane
            let mid = (a + b) * 0.5;
            return self.contains_closed(&mid);
        }
        if (da > eps && db > eps) || (da < -eps && db < -eps) {
            return false;
        }
        let t = da / (da - db);
        // open segment: exclude contact at the endpoints themselves
        let end_tol = eps / len.max(eps);
        if t <= end_tol || t >= 1.0 - end_tol {
            return false;
        }
        let p = a + (b - a) * t;
        self.contains_closed(&p)
    }
}

fn projection_axes(normal: &Vec3) -> (usize, usize) {
    let drop = normal.iamax();
    match drop {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    }
}

fn crossing_test(poly: &[(f64, f64)], q: (f64, f64)) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > q.1) != (yj > q.1) {
            let x_cross = xj + (q.1 - yj) * (xi - xj) / (yi - yj);
            if q.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

fn orientation(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0)) && d1 != 0.0 && d2 != 0.0
}

fn polygon_self_intersects(poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in (i + 1)..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// An immutable collection of reflecting facets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub facets: Vec<Facet>,
    pub speed_of_light: f64,
    pub max_reflection_order: usize,
}

impl Default for Scene {
    fn default() -> Self {
        Self::empty()
    }
}

impl Scene {
    pub fn new(facets: Vec<Facet>) -> Self {
        Self {
            facets,
            speed_of_light: SPEED_OF_LIGHT,
            max_reflection_order: DEFAULT_MAX_ORDER,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn with_max_order(mut self, cap: usize) -> Self {
        self.max_reflection_order = cap;
        self
    }

    /// Applies a rigid motion `x ↦ R x + t` to every facet.
    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Vec3) -> Self {
        let facets = self
            .facets
            .iter()
            .map(|f| {
                let verts = f.vertices.iter().map(|v| rotation * v + translation).collect();
                Facet::with_material(verts, f.material).expect("rigid motion preserves facet validity")
            })
            .collect();
        Self {
            facets,
            speed_of_light: self.speed_of_light,
            max_reflection_order: self.max_reflection_order,
        }
    }

    fn segment_clear(&self, a: &Vec3, b: &Vec3, skip: &[usize]) -> bool {
        self.facets
            .iter()
            .enumerate()
            .all(|(i, f)| skip.contains(&i) || !f.blocks(a, b))
    }

    fn check_off_planes(&self, p: &Vec3) -> Result<(), GeometryError> {
        for (i, f) in self.facets.iter().enumerate() {
            if f.signed_distance(p).abs() <= GEOMETRY_TOL && f.contains_closed(p) {
                return Err(GeometryError::PointOnFacetPlane([p.x, p.y, p.z], i));
            }
        }
        Ok(())
    }
}

/// True iff the open segment between `a` and `b` meets no facet.
/// Contact with a facet edge counts as blocked.
pub fn los_visible(scene: &Scene, a: &Vec3, b: &Vec3) -> bool {
    scene.segment_clear(a, b, &[])
}

/// One specular propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub gain: Complex64,
    /// Propagation delay in seconds.
    pub delay: f64,
    pub aoa_az: f64,
    pub aoa_zen: f64,
    pub aod_az: f64,
    pub aod_zen: f64,
    pub reflection_points: Vec<Vec3>,
    /// Facet indices per bounce, when the producer knows them.
    pub facet_ids: Option<Vec<usize>>,
}

impl PathRecord {
    pub fn order(&self) -> usize {
        self.reflection_points.len()
    }

    pub fn power(&self) -> f64 {
        self.gain.norm_sqr()
    }
}

/// All paths between one transmitter and one receiver position.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub tx: Vec3,
    pub rx: Vec3,
    pub paths: Vec<PathRecord>,
}

impl PathSet {
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(PathRecord::power).sum()
    }

    pub fn has_los(&self) -> bool {
        self.paths.iter().any(|p| p.reflection_points.is_empty())
    }
}

/// Azimuth in (−π, π] and zenith in [0, π] of a direction.
pub fn direction_angles(dir: &Vec3) -> (f64, f64) {
    let u = dir.normalize();
    (u.y.atan2(u.x), u.z.clamp(-1.0, 1.0).acos())
}

/// Free-space amplitude, accumulated reflection and carrier phase over an
/// unfolded length `distance`.
pub fn path_gain(distance: f64, wavelength: f64, reflection: Complex64) -> Complex64 {
    let amplitude = wavelength / (4.0 * PI * distance);
    reflection * amplitude * Complex64::from_polar(1.0, -2.0 * PI * distance / wavelength)
}

/// Sum of segment lengths along `tx → p₁ → … → p_k → rx`.
pub fn unfolded_length(path: &PathRecord, tx: &Vec3, rx: &Vec3) -> f64 {
    route_length(&path.reflection_points, tx, rx)
}

pub fn route_length(points: &[Vec3], tx: &Vec3, rx: &Vec3) -> f64 {
    let mut prev = *tx;
    let mut total = 0.0;
    for p in points.iter().chain(std::iter::once(rx)) {
        total += (p - prev).norm();
        prev = *p;
    }
    total
}

/// Image-method tracer bound to one scene and carrier.
///
/// Counts every `trace` call so callers can report link budgets of work.
#[derive(Debug)]
pub struct Tracer<'a> {
    scene: &'a Scene,
    wavelength: f64,
    max_order: usize,
    calls: AtomicU64,
}

impl<'a> Tracer<'a> {
    pub fn new(scene: &'a Scene, frequency: f64, max_order: usize) -> Result<Self, GeometryError> {
        if max_order > scene.max_reflection_order {
            return Err(GeometryError::OrderTooHigh {
                requested: max_order,
                cap: scene.max_reflection_order,
            });
        }
        if !(frequency > 0.0) {
            return Err(GeometryError::BadFrequency(frequency));
        }
        Ok(Self {
            scene,
            wavelength: scene.speed_of_light / frequency,
            max_order,
            calls: AtomicU64::new(0),
        })
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Traces all valid specular paths from `tx` to `rx`, ordered by
    /// reflection order then facet sequence.
    pub fn trace(&self, tx: &Vec3, rx: &Vec3) -> Result<PathSet, GeometryError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.scene.check_off_planes(tx)?;
        self.scene.check_off_planes(rx)?;

        let mut paths = Vec::new();
        if los_visible(self.scene, tx, rx) {
            paths.push(self.make_record(tx, rx, &[], &[]));
        }

        let mut sequence: Vec<usize> = Vec::with_capacity(self.max_order);
        let mut images: Vec<Vec3> = Vec::with_capacity(self.max_order);
        for order in 1..=self.max_order {
            self.enumerate(order, tx, rx, &mut sequence, &mut images, &mut paths);
        }
        Ok(PathSet {
            tx: *tx,
            rx: *rx,
            paths,
        })
    }

    fn enumerate(
        &self,
        order: usize,
        tx: &Vec3,
        rx: &Vec3,
        sequence: &mut Vec<usize>,
        images: &mut Vec<Vec3>,
        out: &mut Vec<PathRecord>,
    ) {
        if sequence.len() == order {
            if let Some(points) = self.validate(tx, rx, sequence, images) {
                out.push(self.make_record(tx, rx, sequence, &points));
            }
            return;
        }
        for (idx, facet) in self.scene.facets.iter().enumerate() {
            if sequence.last() == Some(&idx) {
                continue;
            }
            let source = images.last().copied().unwrap_or(*tx);
            let image = facet.plane().reflect_point(&source);
            sequence.push(idx);
            images.push(image);
            self.enumerate(order, tx, rx, sequence, images, out);
            sequence.pop();
            images.pop();
        }
    }

    /// Back-tracks from the receiver through the image chain; returns the
    /// reflection points in tx → rx order when the route is valid.
    fn validate(&self, tx: &Vec3, rx: &Vec3, sequence: &[usize], images: &[Vec3]) -> Option<Vec<Vec3>> {
        let facets = &self.scene.facets;
        let k = sequence.len();
        let mut points = vec![Vec3::zeros(); k];
        let mut target = *rx;
        for i in (0..k).rev() {
            let facet = &facets[sequence[i]];
            let image = images[i];
            let d_img = facet.signed_distance(&image);
            let d_tgt = facet.signed_distance(&target);
            if d_img.abs() <= GEOMETRY_TOL || d_tgt.abs() <= GEOMETRY_TOL || (d_img > 0.0) == (d_tgt > 0.0) {
                return None;
            }
            let t = d_img / (d_img - d_tgt);
            let p = image + (target - image) * t;
            if !facet.contains_interior(&p) {
                return None;
            }
            points[i] = p;
            target = p;
        }

        let mut prev = *tx;
        let mut prev_facet: Option<usize> = None;
        for i in 0..=k {
            let (next, next_facet) = if i < k {
                (points[i], Some(sequence[i]))
            } else {
                (*rx, None)
            };
            let skip: Vec<usize> = prev_facet.into_iter().chain(next_facet).collect();
            if (next - prev).norm() <= GEOMETRY_TOL || !self.scene.segment_clear(&prev, &next, &skip) {
                return None;
            }
            prev = next;
            prev_facet = next_facet;
        }
        Some(points)
    }

    fn make_record(&self, tx: &Vec3, rx: &Vec3, sequence: &[usize], points: &[Vec3]) -> PathRecord {
        let distance = route_length(points, tx, rx);
        let mut reflection = Complex64::new(1.0, 0.0);
        let mut prev = *tx;
        for (&i, p) in sequence.iter().zip(points) {
            reflection *= self.scene.facets[i].reflection_along(&(p - prev));
            prev = *p;
        }
        let first = points.first().unwrap_or(rx);
        let last = points.last().unwrap_or(tx);
        let (aod_az, aod_zen) = direction_angles(&(first - tx));
        let (aoa_az, aoa_zen) = direction_angles(&(last - rx));
        PathRecord {
            gain: path_gain(distance, self.wavelength, reflection),
            delay: distance / self.scene.speed_of_light,
            aoa_az,
            aoa_zen,
            aod_az,
            aod_zen,
            reflection_points: points.to_vec(),
            facet_ids: Some(sequence.to_vec()),
        }
    }

    /// Image transform of a traced path composed from its facet planes.
    pub fn facet_transform(&self, facet_ids: &[usize]) -> ImageTransform {
        let planes: Vec<Plane> = facet_ids.iter().map(|&i| self.scene.facets[i].plane()).collect();
        crate::reflection::compose_reflections(&planes)
    }
}

/// Convenience wrapper over [`Tracer`] for one-off traces.
pub fn trace_paths(
    scene: &Scene,
    tx: &Vec3,
    rx: &Vec3,
    max_order: usize,
    frequency: f64,
) -> Result<PathSet, GeometryError> {
    Tracer::new(scene, frequency, max_order)?.trace(tx, rx)
}
