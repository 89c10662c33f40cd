//! Biopsy point-of-entry (POE) feasibility engine.
//!
//! Given a binary airway mask and a binary lesion mask, every voxel of the
//! airway centerline is treated as a candidate POE. From each POE an
//! uncertainty cone is aimed at the lesion; POEs whose cone crosses another
//! airway, or whose cone swallows the lesion whole, are rejected. Valid POEs
//! are scored by the cone/lesion intersection volume divided by the
//! POE-to-lesion distance.
//!
//! Module map:
//!
//! - [`grid`]: voxel lattice, MetaImage IO, distance transform, morphology.
//! - [`skeleton`]: topology-preserving thinning to a centerline point set.
//! - [`scene`]: lesion metrics and poses, cone construction and voxelization.
//! - [`feasibility`]: rejection predicates and the per-POE heatmap.
//! - [`phantom`]: synthetic airway trees and lesions.
//! - [`experiment`]: lesion placement, rotation sweeps and statistics.

pub mod error;
pub mod experiment;
pub mod feasibility;
pub mod grid;
pub mod phantom;
pub mod scene;
pub mod skeleton;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Geometry, VoxelGrid};

/// World-space vector in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Default guidance-error half-angle in degrees.
pub const DEFAULT_ERROR_DEG: f64 = 5.0;

/// Default multiple of the local lumen radius exempted around the POE when
/// checking for airway crossings.
pub const DEFAULT_EXEMPT_FACTOR: f64 = 1.5;
