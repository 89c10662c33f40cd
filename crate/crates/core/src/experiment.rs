//! Lesion placement by airway-distance percentiles, rotation sweeps and the
//! per-scene statistics built on them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{AirwayIndex, FeasibilityEngine, HeatmapParams, RejectReason, Units};
use crate::grid::metaimage::load_mask;
use crate::grid::{distance_transform, VoxelGrid};
use crate::phantom::{bundled, generate_airway, generate_lesion, PhantomSpec};
use crate::scene::{lesion_metrics_with, transform_lesion_about, CenterMode, LesionPose};
use crate::skeleton::{extract_centerline, SkeletonPointSet};
use crate::stats::{mean_std, summarize, ValueSummary};
use crate::Vec3;

/// Where a volume comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VolumeRef {
    /// MetaImage header; relative paths resolve against the plan's directory.
    Path(PathBuf),
    Phantom(PhantomSpec),
    /// One of [`crate::phantom::BUNDLED_NAMES`].
    Bundled(String),
}

impl VolumeRef {
    fn spec(&self) -> Result<Option<PhantomSpec>> {
        match self {
            VolumeRef::Path(_) => Ok(None),
            VolumeRef::Phantom(spec) => Ok(Some(spec.clone())),
            VolumeRef::Bundled(name) => bundled(name)
                .map(Some)
                .ok_or_else(|| Error::param("bundled", format!("unknown bundled phantom `{name}`"))),
        }
    }

    pub fn load_airway(&self, base: &Path) -> Result<VoxelGrid> {
        match (self, self.spec()?) {
            (VolumeRef::Path(p), _) => load_mask(base.join(p)),
            (_, Some(spec)) => generate_airway(&spec),
            _ => unreachable!(),
        }
    }

    pub fn load_lesion(&self, base: &Path) -> Result<VoxelGrid> {
        match (self, self.spec()?) {
            (VolumeRef::Path(p), _) => load_mask(base.join(p)),
            (_, Some(spec)) => generate_lesion(&spec),
            _ => unreachable!(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionEntry {
    pub name: String,
    pub volume: VolumeRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub airway: VolumeRef,
    pub lesions: Vec<LesionEntry>,
    /// Restricts placement candidates; without it an inset box is used.
    #[serde(default)]
    pub lung_mask: Option<VolumeRef>,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    #[serde(default = "default_angle_step")]
    pub angle_step_deg: f64,
    #[serde(default = "default_error_deg")]
    pub error_deg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub units: Units,
    #[serde(default = "default_exempt_factor")]
    pub exempt_factor: f64,
    #[serde(default)]
    pub center_mode: CenterMode,
    /// Inset from the grid faces when no lung mask is given, in voxels.
    #[serde(default = "default_margin")]
    pub margin_vox: usize,
    /// Relative half-width of the accepted distance band around a percentile.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_percentiles() -> Vec<f64> {
    vec![25.0, 60.0, 90.0]
}
fn default_angle_step() -> f64 {
    45.0
}
fn default_error_deg() -> f64 {
    crate::DEFAULT_ERROR_DEG
}
fn default_exempt_factor() -> f64 {
    crate::DEFAULT_EXEMPT_FACTOR
}
fn default_margin() -> usize {
    10
}
fn default_tolerance() -> f64 {
    0.02
}

impl ExperimentPlan {
    /// The bundled tree with the sphere and spiculated lesions.
    pub fn bundled_default() -> Self {
        ExperimentPlan {
            airway: VolumeRef::Bundled("tree-192".into()),
            lesions: vec![
                LesionEntry {
                    name: "regular".into(),
                    volume: VolumeRef::Bundled("sphere".into()),
                },
                LesionEntry {
                    name: "irregular".into(),
                    volume: VolumeRef::Bundled("spiculated".into()),
                },
            ],
            lung_mask: None,
            percentiles: default_percentiles(),
            angle_step_deg: default_angle_step(),
            error_deg: 4.0,
            seed: 2024,
            units: Units::Mm3PerMm,
            exempt_factor: default_exempt_factor(),
            center_mode: CenterMode::BboxMidpoint,
            margin_vox: 24,
            tolerance: default_tolerance(),
        }
    }

    pub fn heatmap_params(&self) -> HeatmapParams {
        HeatmapParams {
            error_deg: self.error_deg,
            units: self.units,
            exempt_factor: self.exempt_factor,
        }
    }

    /// Checks every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.lesions.is_empty() {
            return Err(Error::config("lesions", "at least one lesion is required"));
        }
        for (n, l) in self.lesions.iter().enumerate() {
            if l.name.is_empty() || self.lesions[..n].iter().any(|o| o.name == l.name) {
                return Err(Error::config(format!("lesions[{n}].name"), "names must be non-empty and unique"));
            }
        }
        if self.percentiles.is_empty() {
            return Err(Error::config("percentiles", "must not be empty"));
        }
        for (n, p) in self.percentiles.iter().enumerate() {
            if !(*p > 0.0 && *p < 100.0) {
                return Err(Error::config(format!("percentiles[{n}]"), "must lie strictly between 0 and 100"));
            }
            if n > 0 && *p <= self.percentiles[n - 1] {
                return Err(Error::config(format!("percentiles[{n}]"), "must be strictly increasing"));
            }
        }
        validate_step(self.angle_step_deg).map_err(|_| {
            Error::config("angle_step_deg", "must be positive and divide 360")
        })?;
        self.heatmap_params()
            .validate()
            .map_err(|e| Error::config("error_deg/exempt_factor", e.to_string()))?;
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::config("tolerance", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn validate_step(step: f64) -> Result<usize> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param("angle_step_deg", "must be positive"));
    }
    let n = (360.0 / step).round();
    if n < 1.0 || (n * step - 360.0).abs() > 1e-9 {
        return Err(Error::param("angle_step_deg", format!("{step} does not divide 360")));
    }
    Ok(n as usize)
}

/// One lesion rotation: axis `(cos t cos p, sin t cos p, sin p)`, angle alpha.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSample {
    pub index: usize,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub alpha_deg: f64,
    pub pose: LesionPose,
}

/// theta in [0, 180), phi in [0, 90), alpha in [0, 360), all stepped by
/// `step_deg`; theta outermost. 45 degrees gives 4 x 2 x 8 = 64 poses.
pub fn rotation_set(step_deg: f64) -> Result<Vec<RotationSample>> {
    validate_step(step_deg)?;
    let range = |limit: f64| {
        (0..)
            .map(move |n| n as f64 * step_deg)
            .take_while(move |a| *a < limit - 1e-9)
    };
    let mut out = Vec::new();
    for theta in range(180.0) {
        for phi in range(90.0) {
            let (t, p) = (theta.to_radians(), phi.to_radians());
            let axis = Vec3::new(t.cos() * p.cos(), t.sin() * p.cos(), p.sin());
            for alpha in range(360.0) {
                out.push(RotationSample {
                    index: out.len(),
                    theta_deg: theta,
                    phi_deg: phi,
                    alpha_deg: alpha,
                    pose: LesionPose {
                        axis,
                        angle_deg: alpha,
                        translation: Vec3::zeros(),
                    },
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub percentile: f64,
    /// Distance value at the percentile.
    pub target_mm: f64,
    /// Distance of the chosen voxel to the airway.
    pub distance_mm: f64,
    pub index: [usize; 3],
    pub world: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct PlacementOptions {
    pub margin_vox: usize,
    pub tolerance: f64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            margin_vox: default_margin(),
            tolerance: default_tolerance(),
        }
    }
}

/// For each percentile of the airway distance over the candidate domain
/// (lung mask, or the grid inset by the margin; airway voxels excluded), a
/// seeded random voxel whose distance is within the tolerance band.
pub fn placement_points(
    airway_mask: &VoxelGrid,
    lung_mask: Option<&VoxelGrid>,
    percentiles: &[f64],
    seed: u64,
    options: PlacementOptions,
) -> Result<Vec<Placement>> {
    let dist = distance_transform(airway_mask)?;
    let g = *airway_mask.geometry();
    if let Some(lung) = lung_mask {
        lung.ensure_binary()?;
        g.ensure_same(lung.geometry(), "lung mask vs airway")?;
    }
    let m = options.margin_vox;
    let candidates: Vec<usize> = (0..g.len())
        .filter(|&idx| {
            if airway_mask.data()[idx] != 0 {
                return false;
            }
            match lung_mask {
                Some(lung) => lung.data()[idx] != 0,
                None => {
                    let ijk = g.unravel(idx);
                    (0..3).all(|a| ijk[a] >= m && ijk[a] + m < g.dims[a])
                }
            }
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyMask("placement domain"));
    }
    let mut sorted: Vec<f64> = candidates.iter().map(|&i| dist.data()[i]).collect();
    sorted.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    percentiles
        .iter()
        .map(|&percentile| {
            if !(percentile > 0.0 && percentile < 100.0) {
                return Err(Error::param("percentile", "must lie strictly between 0 and 100"));
            }
            let target_mm = crate::stats::quantile_sorted(&sorted, percentile / 100.0);
            let band: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&i| (dist.data()[i] - target_mm).abs() <= options.tolerance * target_mm)
                .collect();
            if band.is_empty() {
                return Err(Error::EmptyToleranceBand { percentile, target_mm });
            }
            let idx = band[rng.random_range(0..band.len())];
            let index = g.unravel(idx);
            let w = g.voxel_center_u(index);
            Ok(Placement {
                percentile,
                target_mm,
                distance_mm: dist.data()[idx],
                index,
                world: [w.x, w.y, w.z],
            })
        })
        .collect()
}

/// Statistics of one (shape, distance, rotation) scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub shape: String,
    pub distance: String,
    pub percentile: f64,
    pub rotation: RotationSample,
    pub poe_count: usize,
    pub valid_count: usize,
    pub airway_crossing: usize,
    pub lesion_inside_cone: usize,
    pub no_intersection: usize,
    pub lesion_voxels: usize,
    /// `None` when no POE is valid.
    pub stats: Option<ValueSummary>,
}

/// Mean and spread across rotations of one (shape, distance) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub shape: String,
    pub distance: String,
    pub percentile: f64,
    pub placement_distance_mm: f64,
    pub scenes: usize,
    pub scenes_without_valid: usize,
    pub median_mean: Option<f64>,
    pub median_std: Option<f64>,
    pub iqr_mean: Option<f64>,
    pub iqr_std: Option<f64>,
    pub valid_count_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub plan: ExperimentPlan,
    pub poe_count: usize,
    pub placements: Vec<Placement>,
    pub scenes: Vec<SceneRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Inputs resolved from a plan.
pub struct SweepInputs {
    pub airway: VoxelGrid,
    pub skeleton: SkeletonPointSet,
    pub lesions: Vec<(String, VoxelGrid)>,
    pub lung: Option<VoxelGrid>,
}

impl SweepInputs {
    /// Loads every volume; an airway touching the grid faces is padded by one
    /// voxel (world coordinates unchanged) so it can be thinned.
    pub fn load(plan: &ExperimentPlan, base: &Path) -> Result<Self> {
        plan.validate()?;
        let mut airway = plan.airway.load_airway(base)?;
        let mut lung = plan.lung_mask.as_ref().map(|r| r.load_lesion(base)).transpose()?;
        if airway.touches_boundary() {
            airway = airway.padded(1);
            lung = lung.map(|l| l.padded(1));
        }
        let skeleton = extract_centerline(&airway)?;
        let lesions = plan
            .lesions
            .iter()
            .map(|l| Ok((l.name.clone(), l.volume.load_lesion(base)?)))
            .collect::<Result<_>>()?;
        Ok(SweepInputs {
            airway,
            skeleton,
            lesions,
            lung,
        })
    }
}

pub fn run_sweep(plan: &ExperimentPlan, base: &Path) -> Result<SweepResult> {
    let inputs = SweepInputs::load(plan, base)?;
    run_sweep_on(plan, &inputs, |_, _| {})
}

/// Scenes run in (shape, distance, rotation) order; `progress(done, total)`
/// is called after each one.
pub fn run_sweep_on(
    plan: &ExperimentPlan,
    inputs: &SweepInputs,
    mut progress: impl FnMut(usize, usize),
) -> Result<SweepResult> {
    plan.validate()?;
    let g = *inputs.airway.geometry();
    let placements = placement_points(
        &inputs.airway,
        inputs.lung.as_ref(),
        &plan.percentiles,
        plan.seed,
        PlacementOptions {
            margin_vox: plan.margin_vox,
            tolerance: plan.tolerance,
        },
    )?;
    let rotations = rotation_set(plan.angle_step_deg)?;
    let index = AirwayIndex::new(&inputs.airway)?;
    let params = plan.heatmap_params();
    let total = inputs.lesions.len() * placements.len() * rotations.len();

    let mut scenes = Vec::with_capacity(total);
    for (shape, mask) in &inputs.lesions {
        let source = lesion_metrics_with(mask.clone(), CenterMode::BboxMidpoint)?;
        for (d, place) in placements.iter().enumerate() {
            for rot in &rotations {
                let pose = LesionPose {
                    translation: Vec3::from(place.world) - source.center,
                    ..rot.pose.clone()
                };
                let moved = transform_lesion_about(&source, source.center, &pose, &g)?;
                let lesion = lesion_metrics_with(moved, plan.center_mode)?;
                let engine = FeasibilityEngine::new(&index, &lesion, params)?;
                let samples = engine.sample_all(&inputs.skeleton.points)?;
                let count = |r: RejectReason| samples.iter().filter(|s| s.reject_reason == r).count();
                let values: Vec<f64> = samples.iter().filter(|s| s.valid).map(|s| s.value).collect();
                scenes.push(SceneRecord {
                    shape: shape.clone(),
                    distance: format!("D{}", d + 1),
                    percentile: place.percentile,
                    rotation: rot.clone(),
                    poe_count: samples.len(),
                    valid_count: values.len(),
                    airway_crossing: count(RejectReason::AirwayCrossing),
                    lesion_inside_cone: count(RejectReason::LesionInsideCone),
                    no_intersection: count(RejectReason::NoIntersection),
                    lesion_voxels: lesion.voxel_count(),
                    stats: summarize(&values),
                });
                progress(scenes.len(), total);
            }
        }
    }
    let summary = summarize_scenes(&scenes, &placements);
    Ok(SweepResult {
        plan: plan.clone(),
        poe_count: inputs.skeleton.len(),
        placements,
        scenes,
        summary,
    })
}

fn summarize_scenes(scenes: &[SceneRecord], placements: &[Placement]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut start = 0;
    while start < scenes.len() {
        let head = &scenes[start];
        let end = start
            + scenes[start..]
                .iter()
                .take_while(|s| s.shape == head.shape && s.distance == head.distance)
                .count();
        let group = &scenes[start..end];
        let medians: Vec<f64> = group.iter().filter_map(|s| s.stats.as_ref().map(|v| v.median)).collect();
        let iqrs: Vec<f64> = group.iter().filter_map(|s| s.stats.as_ref().map(|v| v.iqr)).collect();
        let placement = placements
            .iter()
            .find(|p| p.percentile == head.percentile)
            .map_or(f64::NAN, |p| p.distance_mm);
        let (median_mean, median_std) = split(mean_std(&medians));
        let (iqr_mean, iqr_std) = split(mean_std(&iqrs));
        rows.push(SummaryRow {
            shape: head.shape.clone(),
            distance: head.distance.clone(),
            percentile: head.percentile,
            placement_distance_mm: placement,
            scenes: group.len(),
            scenes_without_valid: group.len() - medians.len(),
            median_mean,
            median_std,
            iqr_mean,
            iqr_std,
            valid_count_mean: group.iter().map(|s| s.valid_count as f64).sum::<f64>() / group.len() as f64,
        });
        start = end;
    }
    rows
}

fn split(v: Option<(f64, f64)>) -> (Option<f64>, Option<f64>) {
    match v {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    }
}

#[derive(Serialize)]
struct ResultRow<'a> {
    shape: &'a str,
    distance: &'a str,
    percentile: f64,
    rotation_index: usize,
    theta_deg: f64,
    phi_deg: f64,
    alpha_deg: f64,
    poe_count: usize,
    valid_count: usize,
    airway_crossing: usize,
    lesion_inside_cone: usize,
    no_intersection: usize,
    lesion_voxels: usize,
    median: Option<f64>,
    q1: Option<f64>,
    q3: Option<f64>,
    iqr: Option<f64>,
    top20_count: usize,
}

#[derive(Serialize)]
struct TopRow<'a> {
    shape: &'a str,
    distance: &'a str,
    rotation_index: usize,
    value: f64,
}

impl SweepResult {
    pub fn summary_for(&self, shape: &str) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.shape == shape).collect()
    }

    pub fn results_csv(&self) -> Result<String> {
        to_csv(self.scenes.iter().map(|s| ResultRow {
            shape: &s.shape,
            distance: &s.distance,
            percentile: s.percentile,
            rotation_index: s.rotation.index,
            theta_deg: s.rotation.theta_deg,
            phi_deg: s.rotation.phi_deg,
            alpha_deg: s.rotation.alpha_deg,
            poe_count: s.poe_count,
            valid_count: s.valid_count,
            airway_crossing: s.airway_crossing,
            lesion_inside_cone: s.lesion_inside_cone,
            no_intersection: s.no_intersection,
            lesion_voxels: s.lesion_voxels,
            median: s.stats.as_ref().map(|v| v.median),
            q1: s.stats.as_ref().map(|v| v.q1),
            q3: s.stats.as_ref().map(|v| v.q3),
            iqr: s.stats.as_ref().map(|v| v.iqr),
            top20_count: s.stats.as_ref().map_or(0, |v| v.top20.len()),
        }))
    }

    pub fn summary_csv(&self) -> Result<String> {
        to_csv(self.summary.iter())
    }

    pub fn top20_csv(&self) -> Result<String> {
        to_csv(self.scenes.iter().flat_map(|s| {
            s.stats.iter().flat_map(move |v| {
                v.top20.iter().map(move |&value| TopRow {
                    shape: &s.shape,
                    distance: &s.distance,
                    rotation_index: s.rotation.index,
                    value,
                })
            })
        }))
    }

    /// Writes results.csv, summary.csv, top20.csv and sweep.json into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("results.csv", self.results_csv()?),
            ("summary.csv", self.summary_csv()?),
            ("top20.csv", self.top20_csv()?),
            ("sweep.json", serde_json::to_string_pretty(self)?),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn to_csv<T: Serialize>(rows: impl Iterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Geometry;
    use crate::phantom::Segment;

    #[test]
    fn rotation_set_has_64_unit_axes() {
        let rs = rotation_set(45.0).unwrap();
        assert_eq!(rs.len(), 64);
        for r in &rs {
            assert!((r.pose.axis.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(rs[0].pose.axis, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(rs.iter().map(|r| r.index).collect::<Vec<_>>(), (0..64).collect::<Vec<_>>());
        assert!(rotation_set(50.0).is_err());
        assert!(rotation_set(0.0).is_err());
        assert_eq!(rotation_set(90.0).unwrap().len(), 2 * 4);
    }

    fn tube() -> VoxelGrid {
        generate_airway(&PhantomSpec {
            geometry: Geometry::cubic([48, 48, 48]),
            segments: vec![Segment {
                start: [24.0, 24.0, 6.0],
                end: [24.0, 24.0, 42.0],
                radius: 2.0,
                parent: None,
            }],
            lesion: None,
            lesion_center: None,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn placements_are_ordered_and_seeded() {
        let airway = tube();
        let opts = PlacementOptions::default();
        let a = placement_points(&airway, None, &[25.0, 60.0, 90.0], 9, opts).unwrap();
        assert!(a[0].distance_mm < a[2].distance_mm);
        for p in &a {
            assert!((p.distance_mm - p.target_mm).abs() <= 0.02 * p.target_mm);
            assert!(p.index.iter().all(|&i| (10..38).contains(&i)));
        }
        assert_eq!(a, placement_points(&airway, None, &[25.0, 60.0, 90.0], 9, opts).unwrap());
    }

    #[test]
    fn low_percentile_sits_next_to_the_wall() {
        let airway = tube();
        let p = placement_points(&airway, None, &[0.001], 1, PlacementOptions::default()).unwrap();
        assert!(p[0].distance_mm <= 1.0 + 1e-9);
    }

    #[test]
    fn empty_band_is_reported() {
        // Distances in the domain are 1, 2, ... with nothing near 1.5 +/- 2%.
        let g = Geometry::cubic([1, 1, 5]);
        let mut airway = VoxelGrid::zeros(g);
        airway.set([0, 0, 0], 1);
        let opts = PlacementOptions {
            margin_vox: 0,
            tolerance: 0.02,
        };
        let err = placement_points(&airway, None, &[50.0], 1, opts).unwrap_err();
        assert!(matches!(err, Error::EmptyToleranceBand { percentile, .. } if percentile == 50.0));
    }

    #[test]
    fn plan_validation_names_fields() {
        let mut plan = ExperimentPlan::bundled_default();
        plan.validate().unwrap();
        plan.percentiles = vec![60.0, 25.0];
        assert!(matches!(plan.validate(), Err(Error::Config { path, .. }) if path == "percentiles[1]"));
        let mut plan = ExperimentPlan::bundled_default();
        plan.angle_step_deg = 70.0;
        assert!(matches!(plan.validate(), Err(Error::Config { path, .. }) if path == "angle_step_deg"));
    }

    #[test]
    fn plan_json_defaults() {
        let plan: ExperimentPlan = serde_json::from_str(
            r#"{"airway": {"bundled": "tree-192"},
                "lesions": [{"name": "a", "volume": {"path": "lesion.mhd"}}]}"#,
        )
        .unwrap();
        assert_eq!(plan.percentiles, vec![25.0, 60.0, 90.0]);
        assert_eq!(plan.angle_step_deg, 45.0);
        assert_eq!(plan.error_deg, 5.0);
        assert_eq!(plan.margin_vox, 10);
    }

    #[test]
    fn small_sweep_shape() {
        let airway = tube();
        let skeleton = extract_centerline(&airway).unwrap();
        let lesion = VoxelGrid::from_fn(Geometry::new([9, 9, 9], [1.0; 3], [-4.0; 3]).unwrap(), |p| p.norm() <= 3.0);
        let plan = ExperimentPlan {
            airway: VolumeRef::Bundled("unused".into()),
            lesions: vec![LesionEntry {
                name: "ball".into(),
                volume: VolumeRef::Bundled("unused".into()),
            }],
            lung_mask: None,
            percentiles: vec![25.0, 75.0],
            angle_step_deg: 90.0,
            error_deg: 10.0,
            seed: 3,
            units: Units::VoxelsPerMm,
            exempt_factor: 1.5,
            center_mode: CenterMode::BboxMidpoint,
            margin_vox: 8,
            tolerance: 0.02,
        };
        let inputs = SweepInputs {
            airway,
            skeleton,
            lesions: vec![("ball".into(), lesion)],
            lung: None,
        };
        let mut ticks = 0;
        let r = run_sweep_on(&plan, &inputs, |_, _| ticks += 1).unwrap();
        assert_eq!(r.scenes.len(), 2 * 8);
        assert_eq!(ticks, 16);
        assert_eq!(r.summary.len(), 2);
        for s in &r.scenes {
            assert_eq!(
                s.valid_count + s.airway_crossing + s.lesion_inside_cone + s.no_intersection,
                s.poe_count
            );
        }
        let csv = r.results_csv().unwrap();
        assert_eq!(csv.lines().count(), 17);
        assert_eq!(r, run_sweep_on(&plan, &inputs, |_, _| {}).unwrap());
    }
}
