//! Image-source ray tracing on planar scenes, mirror-image channel
//! interpolation from a coarse reference grid, and MIMO channel evaluation.
//!
//! The typical flow is: trace a [`pathdata::ReferenceGrid`] with
//! [`geometry::Tracer`], query arbitrary receiver points through an
//! [`interpolation::Interpolator`], then synthesize array channels with
//! [`mimo::channel_matrix`] and score them with the [`evaluation`] metrics.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod interpolation;
pub mod mimo;
pub mod pathdata;
pub mod reflection;
pub mod scenarios;

pub use exec::Execution;
pub use geometry::{PathRecord, PathSet, Scene, Vec3};
pub use interpolation::{InterpolationParams, Interpolator};
pub use pathdata::{ReferenceGrid, RunConfig};
