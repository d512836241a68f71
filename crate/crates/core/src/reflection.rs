//! Mirror-image transforms for specular reflection chains.
//!
//! A chain of planar reflections acts on points as an affine map
//! `x ↦ U x + g` with `U` orthogonal and `det U = (−1)^k`. The image of the
//! transmitter under that map turns a `k`-bounce path into a straight line,
//! so per-element path lengths reduce to a Euclidean distance.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{route_length, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectionError {
    #[error("plane normal must be unit length (norm {0})")]
    NonUnitNormal(f64),
    #[error("route point {0} does not deflect the ray")]
    DegenerateRoute(usize),
    #[error("route point {0} coincides with its neighbour")]
    RepeatedPoint(usize),
    #[error("recovered image distance {image} disagrees with route length {route}")]
    InconsistentRoute { image: f64, route: f64 },
}

/// The plane `{x : n·x = offset}` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, ReflectionError> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(ReflectionError::NonUnitNormal(norm));
        }
        Ok(Self { normal, offset })
    }

    pub(crate) fn new_unchecked(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn through_point(normal: Vec3, point: &Vec3) -> Result<Self, ReflectionError> {
        Self::new(normal, normal.dot(point))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn reflect_point(&self, p: &Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Same plane regardless of normal orientation.
    pub fn coincides(&self, other: &Plane, tol: f64) -> bool {
        let same = (self.normal - other.normal).norm() <= tol && (self.offset - other.offset).abs() <= tol;
        let flipped = (self.normal + other.normal).norm() <= tol && (self.offset + other.offset).abs() <= tol;
        same || flipped
    }
}

/// Affine map `x ↦ rotation · x + shift` produced by `order` reflections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageTransform {
    pub rotation: Matrix3<f64>,
    pub shift: Vec3,
    pub order: usize,
}

impl Default for ImageTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl ImageTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            shift: Vec3::zeros(),
            order: 0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.shift
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &ImageTransform) -> ImageTransform {
        ImageTransform {
            rotation: other.rotation * self.rotation,
            shift: other.rotation * self.shift + other.shift,
            order: self.order + other.order,
        }
    }

    /// Maps a direction in image space back to the physical departure frame.
    pub fn pull_back_direction(&self, dir: &Vec3) -> Vec3 {
        self.rotation.transpose() * dir
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn determinant(&self) -> f64 {
        self.rotation.determinant()
    }

    pub fn max_abs_diff(&self, other: &ImageTransform) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.shift - other.shift).abs().max())
    }
}

/// Householder mirror across `{x : n·x = offset}`.
pub fn reflect_across_plane(normal: &Vec3, offset: f64) -> Result<ImageTransform, ReflectionError> {
    let plane = Plane::new(*normal, offset)?;
    Ok(plane_transform(&plane))
}

fn plane_transform(plane: &Plane) -> ImageTransform {
    let n = plane.normal;
    ImageTransform {
        rotation: Matrix3::identity() - n * n.transpose() * 2.0,
        shift: n * (2.0 * plane.offset),
        order: 1,
    }
}

/// Composes reflections applied in list order (first plane first).
pub fn compose_reflections(planes: &[Plane]) -> ImageTransform {
    planes
        .iter()
        .fold(ImageTransform::identity(), |acc, p| acc.then(&plane_transform(p)))
}

/// Image-source distance between a transmit and a receive element.
pub fn rm_distance(transform: &ImageTransform, tx_elem: &Vec3, rx_elem: &Vec3) -> f64 {
    (rx_elem - transform.apply(tx_elem)).norm()
}

/// Reconstructs each bounce plane of a specular route as the bisector of its
/// incident and outgoing directions. Normals face the incoming ray.
pub fn recover_planes_from_route(points: &[Vec3], tx: &Vec3, rx: &Vec3) -> Result<Vec<Plane>, ReflectionError> {
    let mut planes = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let prev = if i == 0 { tx } else { &points[i - 1] };
        let next = points.get(i + 1).unwrap_or(rx);
        let incoming = p - prev;
        let outgoing = next - p;
        if incoming.norm() < 1e-12 || outgoing.norm() < 1e-12 {
            return Err(ReflectionError::RepeatedPoint(i));
        }
        let bisector = outgoing.normalize() - incoming.normalize();
        let len = bisector.norm();
        if len < 1e-9 {
            return Err(ReflectionError::DegenerateRoute(i));
        }
        let normal = bisector / len;
        planes.push(Plane::new_unchecked(normal, normal.dot(p)));
    }
    Ok(planes)
}

/// Recovers the composed image transform of a route known only by its
/// reflection points.
pub fn recover_transform_from_route(points: &[Vec3], tx: &Vec3, rx: &Vec3) -> Result<ImageTransform, ReflectionError> {
    let planes = recover_planes_from_route(points, tx, rx)?;
    let transform = compose_reflections(&planes);
    let image = rm_distance(&transform, tx, rx);
    let route = route_length(points, tx, rx);
    if (image - route).abs() > 1e-6 * route {
        return Err(ReflectionError::InconsistentRoute { image, route });
    }
    Ok(transform)
}
