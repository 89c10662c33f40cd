//! Voxel lattice container and the volumetric primitives built on it.
//!
//! Data is stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + nx * (j + ny * k)`. World coordinates are in millimetres and refer to
//! voxel centers, so voxel `(0, 0, 0)` sits exactly at `origin`.

mod edt;
pub mod metaimage;
mod morphology;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use edt::{distance_to_background, distance_transform, DistanceMap};
pub use morphology::{
    additive_overlay, and_not, connected_components, count_value, dilate, ComponentLabels,
};

/// Dimensions, spacing and origin of a voxel lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
}

/// Result of mapping a world point onto the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelLookup {
    pub index: [i64; 3],
    pub inside: bool,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let geometry = Geometry {
            dims,
            spacing,
            origin,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Unit spacing, zero origin.
    pub fn cubic(dims: [usize; 3]) -> Self {
        Geometry {
            dims,
            spacing: [1.0; 3],
            origin: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!(
                "dims {:?} must all be >= 1",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGeometry(format!(
                "spacing {:?} must be finite and > 0",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "origin {:?} must be finite",
                self.origin
            )));
        }
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidGeometry("voxel count overflows usize".into()))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn contains_index(&self, index: [i64; 3]) -> bool {
        (0..3).all(|a| index[a] >= 0 && (index[a] as u64) < self.dims[a] as u64)
    }

    /// World position of a voxel center. Accepts out-of-grid indices.
    #[inline]
    pub fn voxel_center(&self, index: [i64; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + index[0] as f64 * self.spacing[0],
            self.origin[1] + index[1] as f64 * self.spacing[1],
            self.origin[2] + index[2] as f64 * self.spacing[2],
        )
    }

    #[inline]
    pub fn voxel_center_u(&self, index: [usize; 3]) -> Vec3 {
        self.voxel_center([index[0] as i64, index[1] as i64, index[2] as i64])
    }

    /// Nearest voxel to a world point; out-of-grid points are flagged, not rejected.
    pub fn world_to_index(&self, p: &Vec3) -> VoxelLookup {
        let mut index = [0i64; 3];
        for a in 0..3 {
            index[a] = ((p[a] - self.origin[a]) / self.spacing[a]).round() as i64;
        }
        VoxelLookup {
            index,
            inside: self.contains_index(index),
        }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Length of the voxel diagonal, the largest center-to-center offset
    /// between 26-neighbors.
    pub fn voxel_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn ensure_same(&self, other: &Geometry, context: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{context}: {self:?} vs {other:?}"
            )))
        }
    }
}

/// An 8-bit scalar volume: binary masks and small-count overlays.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    geometry: Geometry,
    data: Vec<u8>,
}

impl VoxelGrid {
    pub fn zeros(geometry: Geometry) -> Self {
        VoxelGrid {
            data: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn from_data(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data holds {} voxels, dims {:?} require {}",
                data.len(),
                geometry.dims,
                geometry.len()
            )));
        }
        Ok(VoxelGrid { geometry, data })
    }

    /// Builds a mask by evaluating `inside` at every voxel center.
    pub fn from_fn(geometry: Geometry, inside: impl Fn(Vec3) -> bool + Sync) -> Self {
        use rayon::prelude::*;
        let [nx, ny, _] = geometry.dims;
        let mut data = vec![0u8; geometry.len()];
        data.par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = geometry.voxel_center([i as i64, j as i64, k as i64]);
                        slab[i + nx * j] = inside(p) as u8;
                    }
                }
            });
        VoxelGrid { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, index: [usize; 3]) -> u8 {
        self.data[self.geometry.linear(index)]
    }

    /// Value at a possibly out-of-grid index; `None` outside.
    #[inline]
    pub fn get_checked(&self, index: [i64; 3]) -> Option<u8> {
        if self.geometry.contains_index(index) {
            Some(self.get([index[0] as usize, index[1] as usize, index[2] as usize]))
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, index: [usize; 3], value: u8) {
        let idx = self.geometry.linear(index);
        self.data[idx] = value;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Errors with the first offending voxel when the grid is not a {0, 1} mask.
    pub fn ensure_binary(&self) -> Result<()> {
        match self.data.iter().position(|&v| v > 1) {
            None => Ok(()),
            Some(index) => Err(Error::NotBinary {
                index,
                value: self.data[index],
            }),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn max_value(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Linear indices of nonzero voxels in storage order.
    pub fn foreground_indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn touches_boundary(&self) -> bool {
        let [nx, ny, nz] = self.geometry.dims;
        self.foreground_indices().into_iter().any(|idx| {
            let [i, j, k] = self.geometry.unravel(idx);
            i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz
        })
    }

    /// Copy with `pad` background voxels added on every side; the origin is
    /// shifted so world positions of existing voxels are unchanged.
    pub fn padded(&self, pad: usize) -> VoxelGrid {
        let g = &self.geometry;
        let dims = [g.dims[0] + 2 * pad, g.dims[1] + 2 * pad, g.dims[2] + 2 * pad];
        let origin = [
            g.origin[0] - pad as f64 * g.spacing[0],
            g.origin[1] - pad as f64 * g.spacing[1],
            g.origin[2] - pad as f64 * g.spacing[2],
        ];
        let geometry = Geometry {
            dims,
            spacing: g.spacing,
            origin,
        };
        let mut out = VoxelGrid::zeros(geometry);
        for k in 0..g.dims[2] {
            for j in 0..g.dims[1] {
                let src = g.linear([0, j, k]);
                let dst = geometry.linear([pad, j + pad, k + pad]);
                out.data[dst..dst + g.dims[0]].copy_from_slice(&self.data[src..src + g.dims[0]]);
            }
        }
        out
    }
}
