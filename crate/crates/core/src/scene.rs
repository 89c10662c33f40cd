//! The intervention scene: lesion geometry and pose, and the uncertainty cone
//! cast from a point of entry toward the lesion.

use nalgebra::{Rotation3, Unit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{and_not, dilate, Geometry, VoxelGrid};
use crate::Vec3;

/// Which point of the lesion the cone is aimed at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// Midpoint of the world-aligned bounding box.
    #[default]
    BboxMidpoint,
    /// Mean of the foreground voxel centers.
    Centroid,
}

impl CenterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CenterMode::BboxMidpoint => "bbox_midpoint",
            CenterMode::Centroid => "centroid",
        }
    }
}

/// A binary lesion and its derived geometry.
#[derive(Clone, Debug)]
pub struct LesionModel {
    mask: VoxelGrid,
    voxels: Vec<usize>,
    pub center: Vec3,
    pub centroid: Vec3,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub center_mode: CenterMode,
}

impl LesionModel {
    pub fn mask(&self) -> &VoxelGrid {
        &self.mask
    }

    pub fn geometry(&self) -> &Geometry {
        self.mask.geometry()
    }

    /// Linear indices of the lesion voxels in storage order.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn bbox_midpoint(&self) -> Vec3 {
        (self.bbox_min + self.bbox_max) * 0.5
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.bbox_min, self.bbox_max);
        std::array::from_fn(|n| {
            Vec3::new(
                if n & 1 == 0 { lo.x } else { hi.x },
                if n & 2 == 0 { lo.y } else { hi.y },
                if n & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }

    /// Largest distance from `p` to a bounding-box corner.
    pub fn farthest_corner_distance(&self, p: &Vec3) -> f64 {
        self.corners()
            .iter()
            .map(|c| (c - p).norm())
            .fold(0.0, f64::max)
    }
}

/// Bounding box, center and centroid of a lesion mask (center = bbox midpoint).
pub fn lesion_metrics(mask: &VoxelGrid) -> Result<LesionModel> {
    lesion_metrics_with(mask.clone(), CenterMode::default())
}

/// Bounding box is taken over voxel extents (center +/- half a spacing), so a
/// single voxel has a box one voxel wide.
pub fn lesion_metrics_with(mask: VoxelGrid, center_mode: CenterMode) -> Result<LesionModel> {
    mask.ensure_binary()?;
    let voxels = mask.foreground_indices();
    if voxels.is_empty() {
        return Err(Error::EmptyMask("lesion mask"));
    }
    let g = *mask.geometry();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut sum = Vec3::zeros();
    for &idx in &voxels {
        let ijk = g.unravel(idx);
        for a in 0..3 {
            lo[a] = lo[a].min(ijk[a]);
            hi[a] = hi[a].max(ijk[a]);
        }
        sum += g.voxel_center_u(ijk);
    }
    let half = Vec3::from(g.spacing) * 0.5;
    let bbox_min = g.voxel_center_u(lo) - half;
    let bbox_max = g.voxel_center_u(hi) + half;
    let centroid = sum / voxels.len() as f64;
    let center = match center_mode {
        CenterMode::BboxMidpoint => (bbox_min + bbox_max) * 0.5,
        CenterMode::Centroid => centroid,
    };
    Ok(LesionModel {
        mask,
        voxels,
        center,
        centroid,
        bbox_min,
        bbox_max,
        center_mode,
    })
}

/// Analytic uncertainty cone: apex at the POE, opening toward the lesion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeSpec {
    pub apex: Vec3,
    /// Unit vector from the apex toward the lesion center.
    pub axis: Vec3,
    pub height: f64,
    /// Half-angle at the apex, degrees.
    pub error_deg: f64,
    pub base_radius: f64,
    /// Midpoint of the central axis.
    pub center: Vec3,
    #[serde(skip)]
    tan_error: f64,
}

pub(crate) fn validate_error_deg(error_deg: f64) -> Result<()> {
    if error_deg.is_finite() && error_deg > 0.0 && error_deg < 90.0 {
        Ok(())
    } else {
        Err(Error::param(
            "error_deg",
            format!("{error_deg} is outside the open interval (0, 90)"),
        ))
    }
}

impl ConeSpec {
    /// Cone with the given apex, direction (normalized here) and height.
    pub fn new(apex: Vec3, direction: Vec3, height: f64, error_deg: f64) -> Result<Self> {
        validate_error_deg(error_deg)?;
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::CoincidentPoints);
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::param("height", format!("{height} must be > 0")));
        }
        let axis = direction / norm;
        let tan_error = error_deg.to_radians().tan();
        Ok(ConeSpec {
            apex,
            axis,
            height,
            error_deg,
            base_radius: height * tan_error,
            center: apex + axis * (height / 2.0),
            tan_error,
        })
    }

    pub fn tan_error(&self) -> f64 {
        self.tan_error
    }

    /// Inclusive inside-test for a world point.
    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        let q = p - self.apex;
        let t = q.dot(&self.axis);
        if !(t >= 0.0 && t <= self.height) {
            return false;
        }
        (q - self.axis * t).norm() <= t * self.tan_error
    }

    /// False only if no point within `radius` of `p` can be inside the cone.
    #[inline]
    pub fn may_touch_ball(&self, p: &Vec3, radius: f64) -> bool {
        const SLACK: f64 = 1e-9;
        let q = p - self.apex;
        let t = q.dot(&self.axis);
        let r = radius + SLACK;
        if t < -r || t > self.height + r {
            return false;
        }
        let radial = (q.norm_squared() - t * t).max(0.0).sqrt();
        radial - r <= (t + r).max(0.0) * self.tan_error
    }

    /// Index-space bounding box of the cone on `geometry`, clipped to the grid.
    /// `None` when the cone misses the grid entirely.
    pub fn index_bounds(&self, geometry: &Geometry) -> Option<([usize; 3], [usize; 3])> {
        let base = self.apex + self.axis * self.height;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let extent = self.base_radius * (1.0 - self.axis[a] * self.axis[a]).max(0.0).sqrt();
            let wmin = self.apex[a].min(base[a] - extent);
            let wmax = self.apex[a].max(base[a] + extent);
            let imin = ((wmin - geometry.origin[a]) / geometry.spacing[a]).floor() as i64 - 1;
            let imax = ((wmax - geometry.origin[a]) / geometry.spacing[a]).ceil() as i64 + 1;
            let n = geometry.dims[a] as i64;
            if imax < 0 || imin >= n {
                return None;
            }
            lo[a] = imin.max(0) as usize;
            hi[a] = imax.min(n - 1) as usize;
        }
        Some((lo, hi))
    }
}

/// Builds the cone from a POE: axis toward the lesion center, height to the
/// farthest bounding-box corner, base radius `h * tan(error)`.
pub fn cone_from_poe(poe: &Vec3, lesion: &LesionModel, error_deg: f64) -> Result<ConeSpec> {
    validate_error_deg(error_deg)?;
    let to_center = lesion.center - poe;
    if to_center.norm() == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    ConeSpec::new(*poe, to_center, lesion.farthest_corner_distance(poe), error_deg)
}

/// Analytic voxelization: a voxel is set iff its center passes the inside-test.
pub fn voxelize_cone(cone: &ConeSpec, geometry: &Geometry) -> VoxelGrid {
    let mut out = VoxelGrid::zeros(*geometry);
    let Some((lo, hi)) = cone.index_bounds(geometry) else {
        return out;
    };
    let [nx, ny, _] = geometry.dims;
    out.data_mut()
        .par_chunks_mut(nx * ny)
        .enumerate()
        .filter(|(k, _)| (lo[2]..=hi[2]).contains(k))
        .for_each(|(k, slab)| {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let p = geometry.voxel_center([i as i64, j as i64, k as i64]);
                    if cone.contains(&p) {
                        slab[i + nx * j] = 1;
                    }
                }
            }
        });
    out
}

/// One-voxel shell just outside the cone: `dilate(cone, 1) AND NOT cone`.
pub fn cone_boundary(cone_mask: &VoxelGrid) -> Result<VoxelGrid> {
    and_not(&dilate(cone_mask, 1)?, cone_mask)
}

/// Rigid lesion pose: rotation about the lesion's own center, then translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionPose {
    pub axis: Vec3,
    pub angle_deg: f64,
    #[serde(default = "Vec3::zeros")]
    pub translation: Vec3,
}

impl Default for LesionPose {
    fn default() -> Self {
        LesionPose {
            axis: Vec3::z(),
            angle_deg: 0.0,
            translation: Vec3::zeros(),
        }
    }
}

impl LesionPose {
    pub fn new(axis: Vec3, angle_deg: f64, translation: Vec3) -> Result<Self> {
        let pose = LesionPose {
            axis,
            angle_deg,
            translation,
        };
        pose.validated()
    }

    /// Normalizes the axis; rejects zero or non-finite components.
    pub fn validated(mut self) -> Result<Self> {
        let norm = self.axis.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::param("lesion_pose.axis", "must be a non-zero finite vector"));
        }
        if !self.angle_deg.is_finite() {
            return Err(Error::param("lesion_pose.angle_deg", "must be finite"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("lesion_pose.translation", "must be finite"));
        }
        self.axis /= norm;
        Ok(self)
    }

    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.translation == Vec3::zeros()
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Unit::new_normalize(self.axis), self.angle_deg.to_radians())
    }
}

/// Rotates the lesion about its bounding-box midpoint and translates it,
/// resampling onto `target` by inverse nearest-neighbor mapping.
pub fn transform_lesion(lesion_mask: &VoxelGrid, pose: &LesionPose, target: &Geometry) -> Result<VoxelGrid> {
    let model = lesion_metrics(lesion_mask)?;
    transform_lesion_about(&model, model.center, pose, target)
}

/// As [`transform_lesion`], rotating about an explicit `center`.
pub fn transform_lesion_about(
    lesion: &LesionModel,
    center: Vec3,
    pose: &LesionPose,
    target: &Geometry,
) -> Result<VoxelGrid> {
    let pose = pose.clone().validated()?;
    let src = lesion.mask();
    let sg = *src.geometry();
    let rot = pose.rotation();
    let inv = rot.inverse();
    let shift = center + pose.translation;

    // Forward-map the source box to bound the work on the target grid.
    let corners = lesion.corners();
    let mut wmin = Vec3::repeat(f64::INFINITY);
    let mut wmax = Vec3::repeat(f64::NEG_INFINITY);
    for c in corners {
        let m = rot * (c - center) + shift;
        wmin = wmin.inf(&m);
        wmax = wmax.sup(&m);
    }
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let imin = ((wmin[a] - target.origin[a]) / target.spacing[a]).floor() as i64 - 1;
        let imax = ((wmax[a] - target.origin[a]) / target.spacing[a]).ceil() as i64 + 1;
        let n = target.dims[a] as i64;
        if imax < 0 || imin >= n {
            return Err(Error::LesionOutsideGrid);
        }
        lo[a] = imin.max(0) as usize;
        hi[a] = imax.min(n - 1) as usize;
    }

    let mut out = VoxelGrid::zeros(*target);
    let [nx, ny, _] = target.dims;
    out.data_mut()
        .par_chunks_mut(nx * ny)
        .enumerate()
        .filter(|(k, _)| (lo[2]..=hi[2]).contains(k))
        .for_each(|(k, slab)| {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let p = target.voxel_center([i as i64, j as i64, k as i64]);
                    let q = inv * (p - shift) + center;
                    let hit = sg.world_to_index(&q);
                    if hit.inside && src.get_checked(hit.index) == Some(1) {
                        slab[i + nx * j] = 1;
                    }
                }
            }
        });
    if out.count_nonzero() == 0 {
        return Err(Error::LesionOutsideGrid);
    }
    Ok(out)
}
