//! Array geometry and MIMO channel synthesis.
//!
//! Channel entries follow the narrowband sum
//! `H_mn(f) = Σ_ℓ g_ℓ · exp(j2π(τ_ℓ f_c − f d_ℓ(m, n) / c))`, where the
//! per-element path length `d_ℓ` comes from one of three sources: a
//! first-order plane-wave expansion around the array centres, the exact
//! mirror-image distance, or a fresh trace per element pair.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geometry::{GeometryError, PathRecord, Tracer, Vec3};
use crate::reflection::{rm_distance, ImageTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MimoError {
    #[error("path {0} has no image transform; the reflection model needs one")]
    MissingTransform(usize),
    #[error("array needs rows, cols ≥ 1 and spacing > 0")]
    BadArray,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceModel {
    /// Plane-wave linearization around the reference positions.
    Pwa,
    /// Mirror-image distance with spherical spreading across the aperture.
    Rm,
}

impl std::str::FromStr for DistanceModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pwa" => Ok(DistanceModel::Pwa),
            "rm" => Ok(DistanceModel::Rm),
            other => Err(format!("unknown distance model {other:?} (pwa|rm)")),
        }
    }
}

/// Uniform planar array. Broadside points along (azimuth, elevation); rows
/// run along the array's vertical axis and columns along its horizontal one.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub element_positions: Vec<Vec3>,
    pub center: Vec3,
    pub azimuth: f64,
    pub elevation: f64,
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn len(&self) -> usize {
        self.element_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_positions.is_empty()
    }

    /// Largest element separation along the lattice axes, `(n − 1)·spacing`.
    pub fn aperture(&self) -> (f64, f64) {
        (
            (self.cols.saturating_sub(1)) as f64 * self.spacing,
            (self.rows.saturating_sub(1)) as f64 * self.spacing,
        )
    }

    pub fn broadside(&self) -> Vec3 {
        orientation_frame(self.azimuth, self.elevation).column(0).into()
    }
}

fn orientation_frame(azimuth: f64, elevation: f64) -> Matrix3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    let broadside = Vec3::new(ce * ca, ce * sa, se);
    let horizontal = Vec3::new(-sa, ca, 0.0);
    let vertical = Vec3::new(-se * ca, -se * sa, ce);
    Matrix3::from_columns(&[broadside, horizontal, vertical])
}

pub fn build_upa(
    rows: usize,
    cols: usize,
    spacing: f64,
    center: Vec3,
    azimuth: f64,
    elevation: f64,
) -> Result<ArrayGeometry, MimoError> {
    if rows == 0 || cols == 0 || !(spacing > 0.0) {
        return Err(MimoError::BadArray);
    }
    let frame = orientation_frame(azimuth, elevation);
    let mid_r = (rows - 1) as f64 / 2.0;
    let mid_c = (cols - 1) as f64 / 2.0;
    let mut element_positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let local = Vec3::new(0.0, (c as f64 - mid_c) * spacing, (mid_r - r as f64) * spacing);
            element_positions.push(center + frame * local);
        }
    }
    Ok(ArrayGeometry {
        element_positions,
        center,
        azimuth,
        elevation,
        rows,
        cols,
        spacing,
    })
}

/// Azimuth and elevation of the direction `from → to`.
pub fn facing(from: &Vec3, to: &Vec3) -> (f64, f64) {
    let d = (to - from).normalize();
    (d.y.atan2(d.x), d.z.clamp(-1.0, 1.0).asin())
}

/// Three co-located sectors 120° apart in azimuth.
pub fn sector_arrays(
    center: Vec3,
    initial_azimuth: f64,
    elevation: f64,
    rows: usize,
    cols: usize,
    spacing: f64,
) -> Result<[ArrayGeometry; 3], MimoError> {
    let make = |k: usize| {
        build_upa(
            rows,
            cols,
            spacing,
            center,
            initial_azimuth + k as f64 * 2.0 * PI / 3.0,
            elevation,
        )
    };
    Ok([make(0)?, make(1)?, make(2)?])
}

/// Unit vector for (azimuth, zenith) in the usual spherical convention.
pub fn unit_from_angles(azimuth: f64, zenith: f64) -> Vec3 {
    Vec3::new(zenith.sin() * azimuth.cos(), zenith.sin() * azimuth.sin(), zenith.cos())
}

/// Gradients of path length with respect to receive and transmit element
/// displacement: the negated arrival and departure unit vectors.
pub fn pwa_direction_vectors(path: &PathRecord) -> (Vec3, Vec3) {
    (
        -unit_from_angles(path.aoa_az, path.aoa_zen),
        -unit_from_angles(path.aod_az, path.aod_zen),
    )
}

/// First-order path length for an element pair displaced from the reference
/// positions.
pub fn pwa_distance(
    path: &PathRecord,
    speed_of_light: f64,
    tx_elem: &Vec3,
    rx_elem: &Vec3,
    tx_ref: &Vec3,
    rx_ref: &Vec3,
) -> f64 {
    let (u_rx, u_tx) = pwa_direction_vectors(path);
    speed_of_light * path.delay + u_rx.dot(&(rx_elem - rx_ref)) + u_tx.dot(&(tx_elem - tx_ref))
}

/// A path ready for channel synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPath {
    pub record: PathRecord,
    pub transform: Option<ImageTransform>,
}

impl ChannelPath {
    pub fn new(record: PathRecord, transform: Option<ImageTransform>) -> Self {
        Self { record, transform }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// `N_rx × N_tx`.
    pub entries: DMatrix<Complex64>,
    pub frequency: f64,
}

impl ChannelMatrix {
    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ChannelMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Frequencies and propagation constant shared by every entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Carrier {
    pub frequency: f64,
    pub carrier_frequency: f64,
    pub speed_of_light: f64,
}

impl Carrier {
    pub fn narrowband(carrier_frequency: f64) -> Self {
        Self {
            frequency: carrier_frequency,
            carrier_frequency,
            speed_of_light: crate::geometry::SPEED_OF_LIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct References {
    pub tx: Vec3,
    pub rx: Vec3,
}

fn entry_term(record: &PathRecord, distance: f64, amplitude_scale: f64, carrier: &Carrier) -> Complex64 {
    // τ f_c − f d/c, split so the large common phase cancels before rounding
    let excess = record.delay - distance / carrier.speed_of_light;
    let phase = 2.0
        * PI
        * (carrier.carrier_frequency * excess
            + (carrier.carrier_frequency - carrier.frequency) * distance / carrier.speed_of_light);
    record.gain * amplitude_scale * Complex64::from_polar(1.0, phase)
}

/// Channel matrix from path parameters at the reference positions.
///
/// Under [`DistanceModel::Rm`] each entry also rescales the amplitude by
/// `c·τ / d`, so the free-space spreading follows the true element distance.
pub fn channel_matrix(
    paths: &[ChannelPath],
    references: References,
    tx_array: &ArrayGeometry,
    rx_array: &ArrayGeometry,
    carrier: Carrier,
    model: DistanceModel,
    exec: Execution,
) -> Result<ChannelMatrix, MimoError> {
    if model == DistanceModel::Rm {
        if let Some(i) = paths.iter().position(|p| p.transform.is_none()) {
            return Err(MimoError::MissingTransform(i));
        }
    }
    let n_rx = rx_array.len();
    let n_tx = tx_array.len();
    let c = carrier.speed_of_light;
    let values = exec.map_range(n_rx * n_tx, |idx| {
        let (m, n) = (idx / n_tx, idx % n_tx);
        let rx_e = &rx_array.element_positions[m];
        let tx_e = &tx_array.element_positions[n];
        paths.iter().fold(Complex64::new(0.0, 0.0), |acc, p| {
            let term = match model {
                DistanceModel::Pwa => {
                    let d = pwa_distance(&p.record, c, tx_e, rx_e, &references.tx, &references.rx);
                    entry_term(&p.record, d, 1.0, &carrier)
                }
                DistanceModel::Rm => {
                    let t = p.transform.as_ref().expect("checked above");
                    let d = rm_distance(t, tx_e, rx_e);
                    entry_term(&p.record, d, c * p.record.delay / d, &carrier)
                }
            };
            acc + term
        })
    });
    Ok(ChannelMatrix {
        entries: DMatrix::from_row_slice(n_rx, n_tx, &values),
        frequency: carrier.frequency,
    })
}

/// Channel matrix in which every entry carries the plain path sum, with no
/// variation across either aperture.
pub fn constant_channel_matrix(paths: &[PathRecord], n_rx: usize, n_tx: usize, frequency: f64) -> ChannelMatrix {
    let h: Complex64 = paths.iter().map(|p| p.gain).sum();
    ChannelMatrix {
        entries: DMatrix::from_element(n_rx, n_tx, h),
        frequency,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveChannel {
    pub matrix: ChannelMatrix,
    pub trace_calls: u64,
}

/// Ground-truth matrix from one trace per element pair.
pub fn channel_matrix_exhaustive(
    tracer: &Tracer<'_>,
    tx_array: &ArrayGeometry,
    rx_array: &ArrayGeometry,
    carrier: Carrier,
    exec: Execution,
) -> Result<ExhaustiveChannel, MimoError> {
    let n_rx = rx_array.len();
    let n_tx = tx_array.len();
    let before = tracer.calls();
    let values = exec.map_range(n_rx * n_tx, |idx| {
        let (m, n) = (idx / n_tx, idx % n_tx);
        let set = tracer.trace(&tx_array.element_positions[n], &rx_array.element_positions[m])?;
        Ok(set.paths.iter().fold(Complex64::new(0.0, 0.0), |acc, p| {
            acc + entry_term(p, p.delay * carrier.speed_of_light, 1.0, &carrier)
        }))
    });
    let values = values.into_iter().collect::<Result<Vec<_>, GeometryError>>()?;
    Ok(ExhaustiveChannel {
        matrix: ChannelMatrix {
            entries: DMatrix::from_row_slice(n_rx, n_tx, &values),
            frequency: carrier.frequency,
        },
        trace_calls: tracer.calls() - before,
    })
}

/// Picks the sector with the largest Frobenius norm (lowest index on ties).
pub fn select_best_sector<F, E>(sectors: &[ArrayGeometry], mut build: F) -> Result<(usize, ChannelMatrix), E>
where
    F: FnMut(&ArrayGeometry) -> Result<ChannelMatrix, E>,
{
    let mut best: Option<(usize, ChannelMatrix, f64)> = None;
    for (i, s) in sectors.iter().enumerate() {
        let h = build(s)?;
        let norm = h.frobenius_norm();
        if best.as_ref().is_none_or(|(_, _, b)| norm > *b) {
            best = Some((i, h, norm));
        }
    }
    let (i, h, _) = best.expect("at least one sector");
    Ok((i, h))
}
