//! POE rejection predicates and the distance-penalized heatmap.
//!
//! Two evaluation paths produce identical samples:
//!
//! - [`heatmap_at_volumetric`] follows the volumetric definition literally:
//!   voxelize the cone over the whole grid, build additive overlays with the
//!   airway, the lesion and the dilated cone shell, and count values.
//! - [`FeasibilityEngine`] visits only airway bricks near the cone and the
//!   lesion's own voxels, applying the same inside-test to the same voxel
//!   centers. This is what [`compute_heatmap`] uses.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{additive_overlay, count_value, Geometry, VoxelGrid};
use crate::scene::{cone_boundary, cone_from_poe, validate_error_deg, voxelize_cone, ConeSpec, LesionModel};
use crate::skeleton::{SkeletonPoint, SkeletonPointSet};
use crate::{Vec3, DEFAULT_ERROR_DEG, DEFAULT_EXEMPT_FACTOR};

/// Unit of the heatmap value column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Units {
    /// Intersection volume in mm^3 per mm of POE-to-lesion distance.
    #[default]
    #[serde(rename = "mm3_per_mm")]
    Mm3PerMm,
    /// Intersection voxel count per mm of distance.
    #[serde(rename = "voxels_per_mm")]
    VoxelsPerMm,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Mm3PerMm => "mm3_per_mm",
            Units::VoxelsPerMm => "voxels_per_mm",
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm3" | "mm3_per_mm" => Ok(Units::Mm3PerMm),
            "voxels" | "voxels_per_mm" => Ok(Units::VoxelsPerMm),
            other => Err(Error::param(
                "units",
                format!("`{other}` is not one of mm3_per_mm, voxels_per_mm"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    None,
    AirwayCrossing,
    LesionInsideCone,
    NoIntersection,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::None => "none",
            RejectReason::AirwayCrossing => "airway_crossing",
            RejectReason::LesionInsideCone => "lesion_inside_cone",
            RejectReason::NoIntersection => "no_intersection",
        }
    }
}

/// Heatmap parameters shared by every POE of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapParams {
    pub error_deg: f64,
    #[serde(default)]
    pub units: Units,
    /// Airway voxels within `exempt_factor * local_radius` of the POE do not
    /// count as crossings: the instrument has to leave its own bronchus.
    #[serde(default = "default_exempt_factor")]
    pub exempt_factor: f64,
}

fn default_exempt_factor() -> f64 {
    DEFAULT_EXEMPT_FACTOR
}

impl Default for HeatmapParams {
    fn default() -> Self {
        HeatmapParams {
            error_deg: DEFAULT_ERROR_DEG,
            units: Units::default(),
            exempt_factor: DEFAULT_EXEMPT_FACTOR,
        }
    }
}

impl HeatmapParams {
    pub fn validate(&self) -> Result<()> {
        validate_error_deg(self.error_deg)?;
        if !(self.exempt_factor >= 0.0 && self.exempt_factor.is_finite()) {
            return Err(Error::param("exempt_factor", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One heatmap row. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSample {
    pub poe_id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub valid: bool,
    pub reject_reason: RejectReason,
    pub intersection_voxels: usize,
    pub intersection_mm3: f64,
    pub distance_mm: f64,
    pub value: f64,
}

/// Identifies the inputs a heatmap was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFingerprint {
    pub airway_sha256: String,
    pub lesion_sha256: String,
    pub error_deg: f64,
    pub units: Units,
    pub exempt_factor: f64,
    pub center_mode: crate::scene::CenterMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub samples: Vec<HeatmapSample>,
    pub fingerprint: SceneFingerprint,
}

impl HeatmapResult {
    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.valid).count()
    }

    /// Values of the valid samples in POE order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.samples.iter().filter(|s| s.valid).map(|s| s.value).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_samples_csv(&self.samples, writer)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

pub fn write_samples_csv<W: Write>(samples: &[HeatmapSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// SHA-256 over geometry and payload.
pub fn grid_sha256(grid: &VoxelGrid) -> String {
    let g = grid.geometry();
    let mut h = Sha256::new();
    for d in g.dims {
        h.update((d as u64).to_le_bytes());
    }
    for v in g.spacing.iter().chain(&g.origin) {
        h.update(v.to_le_bytes());
    }
    h.update(grid.data());
    hex::encode(h.finalize())
}

/// True iff the cone overlaps the airway anywhere outside the exit
/// neighborhood (world distance to `poe` greater than `exempt_radius`).
pub fn check_airway_crossing(
    cone_mask: &VoxelGrid,
    airway_mask: &VoxelGrid,
    poe: &Vec3,
    exempt_radius: f64,
) -> Result<bool> {
    if !(exempt_radius >= 0.0) {
        return Err(Error::param("exempt_radius", "must be >= 0"));
    }
    let overlay = additive_overlay(&[cone_mask, airway_mask])?;
    let g = overlay.geometry();
    Ok(overlay
        .data()
        .par_iter()
        .enumerate()
        .any(|(idx, &v)| v == 2 && (g.voxel_center_u(g.unravel(idx)) - poe).norm() > exempt_radius))
}

/// True iff the lesion meets the cone but never reaches the one-voxel shell
/// around it, i.e. the lesion sits wholly inside the cone. A lesion disjoint
/// from the cone yields false (it is a no-intersection case instead).
pub fn check_lesion_inside_cone(cone_mask: &VoxelGrid, lesion_mask: &VoxelGrid) -> Result<bool> {
    let shell = cone_boundary(cone_mask)?;
    let on_shell = additive_overlay(&[&shell, lesion_mask])?.max_value();
    let inside = count_value(&additive_overlay(&[cone_mask, lesion_mask])?, 2);
    Ok(on_shell < 2 && inside > 0)
}

fn finish_sample(
    point: &SkeletonPoint,
    lesion: &LesionModel,
    params: &HeatmapParams,
    crossing: bool,
    touches_shell: bool,
    intersection_voxels: usize,
) -> HeatmapSample {
    let poe = point.world_vec();
    let distance_mm = (lesion.center - poe).norm();
    let reject_reason = if crossing {
        RejectReason::AirwayCrossing
    } else if intersection_voxels > 0 && !touches_shell {
        RejectReason::LesionInsideCone
    } else if intersection_voxels == 0 {
        RejectReason::NoIntersection
    } else {
        RejectReason::None
    };
    let valid = reject_reason == RejectReason::None;
    let intersection_mm3 = intersection_voxels as f64 * lesion.geometry().voxel_volume();
    let value = if valid {
        match params.units {
            Units::Mm3PerMm => intersection_mm3 / distance_mm,
            Units::VoxelsPerMm => intersection_voxels as f64 / distance_mm,
        }
    } else {
        0.0
    };
    HeatmapSample {
        poe_id: point.id,
        x: point.world[0],
        y: point.world[1],
        z: point.world[2],
        valid,
        reject_reason,
        intersection_voxels,
        intersection_mm3,
        distance_mm,
        value,
    }
}

/// Heatmap sample computed with full-grid masks and overlays.
pub fn heatmap_at_volumetric(
    point: &SkeletonPoint,
    lesion: &LesionModel,
    airway_mask: &VoxelGrid,
    params: &HeatmapParams,
) -> Result<HeatmapSample> {
    params.validate()?;
    let g = airway_mask.geometry();
    g.ensure_same(lesion.geometry(), "airway vs lesion")?;
    let poe = point.world_vec();
    let cone = cone_from_poe(&poe, lesion, params.error_deg)?;
    let cone_mask = voxelize_cone(&cone, g);
    let crossing = check_airway_crossing(&cone_mask, airway_mask, &poe, params.exempt_factor * point.local_radius)?;
    let shell = cone_boundary(&cone_mask)?;
    let touches_shell = additive_overlay(&[&shell, lesion.mask()])?.max_value() >= 2;
    let count = count_value(&additive_overlay(&[&cone_mask, lesion.mask()])?, 2);
    Ok(finish_sample(point, lesion, params, crossing, touches_shell, count))
}

/// Heatmap sample for a single POE (builds a throwaway [`FeasibilityEngine`]).
pub fn heatmap_at(
    point: &SkeletonPoint,
    lesion: &LesionModel,
    airway_mask: &VoxelGrid,
    params: &HeatmapParams,
) -> Result<HeatmapSample> {
    let index = AirwayIndex::new(airway_mask)?;
    FeasibilityEngine::new(&index, lesion, *params)?.sample(point)
}

/// One sample per skeleton point, in skeleton order. POEs are evaluated in
/// parallel; the output does not depend on scheduling.
pub fn compute_heatmap(
    skeleton: &SkeletonPointSet,
    lesion: &LesionModel,
    airway_mask: &VoxelGrid,
    params: &HeatmapParams,
) -> Result<HeatmapResult> {
    skeleton
        .source_geometry
        .ensure_same(airway_mask.geometry(), "skeleton vs airway")?;
    let index = AirwayIndex::new(airway_mask)?;
    let engine = FeasibilityEngine::new(&index, lesion, *params)?;
    let samples = engine.sample_all(&skeleton.points)?;
    Ok(HeatmapResult {
        samples,
        fingerprint: SceneFingerprint {
            airway_sha256: grid_sha256(airway_mask),
            lesion_sha256: grid_sha256(lesion.mask()),
            error_deg: params.error_deg,
            units: params.units,
            exempt_factor: params.exempt_factor,
            center_mode: lesion.center_mode,
        },
    })
}

const BRICK_SHIFT: usize = 3;

struct Brick {
    center: Vec3,
    radius: f64,
    voxels: Vec<usize>,
}

/// Airway voxels grouped into 8^3 bricks with bounding spheres, so cone
/// queries can skip bricks the cone cannot reach.
pub struct AirwayIndex {
    geometry: Geometry,
    bricks: Vec<Brick>,
}

impl AirwayIndex {
    pub fn new(airway_mask: &VoxelGrid) -> Result<Self> {
        airway_mask.ensure_binary()?;
        let g = *airway_mask.geometry();
        let mut groups: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
        for idx in airway_mask.foreground_indices() {
            let [i, j, k] = g.unravel(idx);
            groups
                .entry([k >> BRICK_SHIFT, j >> BRICK_SHIFT, i >> BRICK_SHIFT])
                .or_default()
                .push(idx);
        }
        let bricks = groups
            .into_values()
            .map(|voxels| {
                let mut lo = Vec3::repeat(f64::INFINITY);
                let mut hi = Vec3::repeat(f64::NEG_INFINITY);
                for &idx in &voxels {
                    let p = g.voxel_center_u(g.unravel(idx));
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
                let center = (lo + hi) * 0.5;
                let radius = voxels
                    .iter()
                    .map(|&idx| (g.voxel_center_u(g.unravel(idx)) - center).norm())
                    .fold(0.0, f64::max);
                Brick { center, radius, voxels }
            })
            .collect();
        Ok(AirwayIndex { geometry: g, bricks })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Same predicate as [`check_airway_crossing`] on the voxelized cone.
    pub fn crosses(&self, cone: &ConeSpec, poe: &Vec3, exempt_radius: f64) -> bool {
        let g = &self.geometry;
        self.bricks.iter().any(|brick| {
            if !cone.may_touch_ball(&brick.center, brick.radius) {
                return false;
            }
            if (brick.center - poe).norm() + brick.radius + 1e-9 < exempt_radius {
                return false;
            }
            brick.voxels.iter().any(|&idx| {
                let p = g.voxel_center_u(g.unravel(idx));
                cone.contains(&p) && (p - poe).norm() > exempt_radius
            })
        })
    }
}

/// Evaluates POEs against one lesion and one airway index.
pub struct FeasibilityEngine<'a> {
    airway: &'a AirwayIndex,
    lesion: &'a LesionModel,
    params: HeatmapParams,
}

impl<'a> FeasibilityEngine<'a> {
    pub fn new(airway: &'a AirwayIndex, lesion: &'a LesionModel, params: HeatmapParams) -> Result<Self> {
        params.validate()?;
        airway.geometry.ensure_same(lesion.geometry(), "airway vs lesion")?;
        Ok(FeasibilityEngine { airway, lesion, params })
    }

    pub fn params(&self) -> &HeatmapParams {
        &self.params
    }

    pub fn cone(&self, point: &SkeletonPoint) -> Result<ConeSpec> {
        cone_from_poe(&point.world_vec(), self.lesion, self.params.error_deg)
    }

    pub fn sample(&self, point: &SkeletonPoint) -> Result<HeatmapSample> {
        let poe = point.world_vec();
        let cone = cone_from_poe(&poe, self.lesion, self.params.error_deg)?;
        let crossing = self
            .airway
            .crosses(&cone, &poe, self.params.exempt_factor * point.local_radius);
        let (count, touches_shell) = self.lesion_contact(&cone);
        Ok(finish_sample(point, self.lesion, &self.params, crossing, touches_shell, count))
    }

    pub fn sample_all(&self, points: &[SkeletonPoint]) -> Result<Vec<HeatmapSample>> {
        points.par_iter().map(|p| self.sample(p)).collect()
    }

    /// Lesion voxels inside the cone, and whether any lesion voxel lies on
    /// the dilated shell around it.
    fn lesion_contact(&self, cone: &ConeSpec) -> (usize, bool) {
        let g = self.lesion.geometry();
        let reach = g.voxel_diagonal();
        let mut count = 0;
        let mut touches = false;
        for &idx in self.lesion.voxels() {
            let ijk = g.unravel(idx);
            let p = g.voxel_center_u(ijk);
            if cone.contains(&p) {
                count += 1;
            } else if !touches && cone.may_touch_ball(&p, reach) {
                touches = neighbor_in_cone(g, cone, ijk);
            }
        }
        (count, touches)
    }
}

fn neighbor_in_cone(g: &Geometry, cone: &ConeSpec, ijk: [usize; 3]) -> bool {
    let c = [ijk[0] as i64, ijk[1] as i64, ijk[2] as i64];
    for dk in -1..=1 {
        for dj in -1..=1 {
            for di in -1..=1 {
                if di == 0 && dj == 0 && dk == 0 {
                    continue;
                }
                let n = [c[0] + di, c[1] + dj, c[2] + dk];
                if g.contains_index(n) && cone.contains(&g.voxel_center(n)) {
                    return true;
                }
            }
        }
    }
    false
}
