//! Synthetic airway trees and lesions.
//!
//! Airways are unions of capsules (cylinders with hemispherical caps). Lesions
//! are a ball, or an ellipsoid with capsule spikes in seeded random
//! directions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Geometry, VoxelGrid};
use crate::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    /// Index of the parent segment; `start` must lie inside the parent capsule.
    #[serde(default)]
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum LesionRecipe {
    Sphere {
        radius: f64,
    },
    Spiculated {
        semi_axes: [f64; 3],
        spike_count: usize,
        spike_length: f64,
        spike_radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub geometry: Geometry,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub lesion: Option<LesionRecipe>,
    /// Lesion center in world mm; defaults to the middle of the grid.
    #[serde(default)]
    pub lesion_center: Option<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
}

impl Capsule {
    fn distance(&self, p: &Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.a + ab * t)).norm()
    }

    fn contains(&self, p: &Vec3) -> bool {
        self.distance(p) <= self.radius
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        let r = Vec3::repeat(self.radius);
        (self.a.inf(&self.b) - r, self.a.sup(&self.b) + r)
    }
}

fn world_extent(g: &Geometry) -> (Vec3, Vec3) {
    let lo = Vec3::from(g.origin);
    let hi = g.voxel_center_u([g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1]);
    (lo, hi)
}

fn fits(g: &Geometry, lo: &Vec3, hi: &Vec3) -> bool {
    let (glo, ghi) = world_extent(g);
    (0..3).all(|a| lo[a] >= glo[a] - 1e-9 && hi[a] <= ghi[a] + 1e-9)
}

fn capsule_union(g: Geometry, capsules: &[Capsule]) -> VoxelGrid {
    let boxes: Vec<(Vec3, Vec3)> = capsules.iter().map(Capsule::bounds).collect();
    VoxelGrid::from_fn(g, |p| {
        capsules.iter().zip(&boxes).any(|(c, (lo, hi))| {
            (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]) && c.contains(&p)
        })
    })
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        for (n, s) in self.segments.iter().enumerate() {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return Err(Error::param(format!("segments[{n}].radius"), "must be > 0"));
            }
            if s.start.iter().chain(&s.end).any(|v| !v.is_finite()) {
                return Err(Error::param(format!("segments[{n}]"), "coordinates must be finite"));
            }
            if let Some(parent) = s.parent {
                if parent >= n {
                    return Err(Error::param(
                        format!("segments[{n}].parent"),
                        "must refer to an earlier segment",
                    ));
                }
                let p = self.capsule(parent);
                if p.distance(&Vec3::from(s.start)) > p.radius + 1e-9 {
                    return Err(Error::param(
                        format!("segments[{n}].start"),
                        "does not lie on its parent segment",
                    ));
                }
            }
        }
        match &self.lesion {
            Some(LesionRecipe::Sphere { radius }) if !(*radius > 0.0 && radius.is_finite()) => {
                Err(Error::param("lesion.radius", "must be > 0"))
            }
            Some(LesionRecipe::Spiculated {
                semi_axes,
                spike_length,
                spike_radius,
                ..
            }) => {
                if semi_axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::param("lesion.semi_axes", "must all be > 0"));
                }
                if !(*spike_length >= 0.0 && spike_length.is_finite()) {
                    return Err(Error::param("lesion.spike_length", "must be >= 0"));
                }
                if !(*spike_radius > 0.0 && spike_radius.is_finite()) {
                    return Err(Error::param("lesion.spike_radius", "must be > 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn capsule(&self, n: usize) -> Capsule {
        let s = &self.segments[n];
        Capsule {
            a: Vec3::from(s.start),
            b: Vec3::from(s.end),
            radius: s.radius,
        }
    }

    pub fn lesion_center(&self) -> Vec3 {
        match self.lesion_center {
            Some(c) => Vec3::from(c),
            None => {
                let (lo, hi) = world_extent(&self.geometry);
                (lo + hi) * 0.5
            }
        }
    }
}

/// Union of one capsule per segment.
pub fn generate_airway(spec: &PhantomSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    if spec.segments.is_empty() {
        return Err(Error::param("segments", "an airway phantom needs at least one segment"));
    }
    let capsules: Vec<Capsule> = (0..spec.segments.len()).map(|n| spec.capsule(n)).collect();
    for (n, c) in capsules.iter().enumerate() {
        let (lo, hi) = c.bounds();
        if !fits(&spec.geometry, &lo, &hi) {
            return Err(Error::OutsideGrid {
                what: format!("segment {n}"),
            });
        }
    }
    Ok(capsule_union(spec.geometry, &capsules))
}

pub fn generate_lesion(spec: &PhantomSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    let recipe = spec
        .lesion
        .as_ref()
        .ok_or_else(|| Error::param("lesion", "no lesion recipe in phantom spec"))?;
    let g = spec.geometry;
    let c = spec.lesion_center();
    let outside = || Error::OutsideGrid { what: "lesion".into() };
    match recipe {
        LesionRecipe::Sphere { radius } => {
            let r = Vec3::repeat(*radius);
            if !fits(&g, &(c - r), &(c + r)) {
                return Err(outside());
            }
            Ok(VoxelGrid::from_fn(g, |p| (p - c).norm() <= *radius))
        }
        LesionRecipe::Spiculated {
            semi_axes,
            spike_count,
            spike_length,
            spike_radius,
        } => {
            let axes = Vec3::from(*semi_axes);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let spikes: Vec<Capsule> = (0..*spike_count)
                .map(|_| {
                    let z: f64 = rng.random_range(-1.0..=1.0);
                    let phi: f64 = rng.random_range(0.0..2.0 * PI);
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    let u = Vec3::new(s * phi.cos(), s * phi.sin(), z);
                    // Distance from the center to the ellipsoid surface along u.
                    let surface = 1.0 / u.component_div(&axes).norm();
                    Capsule {
                        a: c + u * (0.5 * surface),
                        b: c + u * (surface + spike_length),
                        radius: *spike_radius,
                    }
                })
                .collect();
            let mut lo = c - axes;
            let mut hi = c + axes;
            for s in &spikes {
                let (a, b) = s.bounds();
                lo = lo.inf(&a);
                hi = hi.sup(&b);
            }
            if !fits(&g, &lo, &hi) {
                return Err(outside());
            }
            let boxes: Vec<(Vec3, Vec3)> = spikes.iter().map(Capsule::bounds).collect();
            Ok(VoxelGrid::from_fn(g, |p| {
                (p - c).component_div(&axes).norm_squared() <= 1.0
                    || spikes.iter().zip(&boxes).any(|(s, (lo, hi))| {
                        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]) && s.contains(&p)
                    })
            }))
        }
    }
}

/// Names accepted by [`bundled`].
pub const BUNDLED_NAMES: [&str; 4] = ["tree-192", "tree-256", "sphere", "spiculated"];

/// Built-in phantom specs: two airway trees and the two study lesions.
pub fn bundled(name: &str) -> Option<PhantomSpec> {
    match name {
        "tree-192" => Some(bundled_tree(192)),
        "tree-256" => Some(bundled_tree(256)),
        "sphere" => Some(lesion_spec(LesionRecipe::Sphere { radius: 6.0 }, 49, 0)),
        "spiculated" => Some(lesion_spec(
            LesionRecipe::Spiculated {
                semi_axes: [13.0, 5.0, 4.0],
                spike_count: 8,
                spike_length: 8.0,
                spike_radius: 1.2,
            },
            61,
            11,
        )),
        _ => None,
    }
}

fn lesion_spec(recipe: LesionRecipe, n: usize, seed: u64) -> PhantomSpec {
    let half = (n - 1) as f64 / 2.0;
    PhantomSpec {
        geometry: Geometry {
            dims: [n; 3],
            spacing: [1.0; 3],
            origin: [-half; 3],
        },
        segments: Vec::new(),
        lesion: Some(recipe),
        lesion_center: Some([0.0; 3]),
        seed,
    }
}

/// Shape of a symmetric dichotomous tree: a trachea entering from the top of
/// a cubic grid, then bifurcations whose branching planes alternate by 90
/// degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    /// Voxels per side.
    pub size: usize,
    pub spacing_mm: f64,
    pub generations: usize,
    pub root_length_mm: f64,
    pub root_radius_mm: f64,
    pub length_ratio: f64,
    pub radius_ratio: f64,
    /// Angle between each child and its parent's direction.
    pub branch_angle_deg: f64,
}

impl TreeParams {
    /// The bundled tree scaled to `size` voxels of 1 mm per side.
    pub fn bundled(size: usize) -> Self {
        let scale = size as f64 / 192.0;
        TreeParams {
            size,
            spacing_mm: 1.0,
            generations: 5,
            root_length_mm: 50.0 * scale,
            root_radius_mm: 7.0 * scale,
            length_ratio: 0.78,
            radius_ratio: 0.74,
            branch_angle_deg: 32.0,
        }
    }
}

pub fn tree_phantom(params: &TreeParams) -> PhantomSpec {
    let h = params.spacing_mm;
    let extent = (params.size - 1) as f64 * h;
    let mid = extent / 2.0;
    let mut segments = Vec::new();
    let top = Vec3::new(mid, mid, extent - params.root_length_mm * 0.24);
    tree_segments(
        &mut segments,
        None,
        top,
        -Vec3::z(),
        Vec3::x(),
        params,
        params.root_length_mm,
        params.root_radius_mm,
        params.generations,
    );
    PhantomSpec {
        geometry: Geometry {
            dims: [params.size; 3],
            spacing: [h; 3],
            origin: [0.0; 3],
        },
        segments,
        lesion: None,
        lesion_center: None,
        seed: 0,
    }
}

/// The bundled tree on an `n`^3 grid of 1 mm voxels.
pub fn bundled_tree(n: usize) -> PhantomSpec {
    tree_phantom(&TreeParams::bundled(n))
}

#[allow(clippy::too_many_arguments)]
fn tree_segments(
    out: &mut Vec<Segment>,
    parent: Option<usize>,
    start: Vec3,
    dir: Vec3,
    normal: Vec3,
    params: &TreeParams,
    length: f64,
    radius: f64,
    generations: usize,
) {
    let end = start + dir * length;
    out.push(Segment {
        start: start.into(),
        end: end.into(),
        radius,
        parent,
    });
    let me = out.len() - 1;
    if generations == 0 {
        return;
    }
    let angle = params.branch_angle_deg.to_radians();
    for sign in [-1.0, 1.0] {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(normal), sign * angle);
        let child = rot * dir;
        let child_normal = child.cross(&normal).normalize();
        tree_segments(
            out,
            Some(me),
            end,
            child,
            child_normal,
            params,
            length * params.length_ratio,
            radius * params.radius_ratio,
            generations - 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::connected_components;

    fn single(radius: f64, start: [f64; 3], end: [f64; 3]) -> PhantomSpec {
        PhantomSpec {
            geometry: Geometry::cubic([40, 40, 60]),
            segments: vec![Segment {
                start,
                end,
                radius,
                parent: None,
            }],
            lesion: None,
            lesion_center: None,
            seed: 0,
        }
    }

    #[test]
    fn capsule_volume() {
        let r = 3.0;
        let len = 30.0;
        let m = generate_airway(&single(r, [20.0, 20.0, 15.0], [20.0, 20.0, 45.0])).unwrap();
        let analytic = PI * r * r * len + 4.0 / 3.0 * PI * r.powi(3);
        let n = m.count_nonzero() as f64;
        assert!((n - analytic).abs() / analytic < 0.05, "{n} vs {analytic}");
    }

    #[test]
    fn y_tree_is_connected_and_deterministic() {
        let mut spec = single(2.5, [20.0, 20.0, 50.0], [20.0, 20.0, 30.0]);
        spec.segments.push(Segment {
            start: [20.0, 20.0, 30.0],
            end: [10.0, 20.0, 12.0],
            radius: 2.0,
            parent: Some(0),
        });
        spec.segments.push(Segment {
            start: [20.0, 20.0, 30.0],
            end: [30.0, 20.0, 12.0],
            radius: 2.0,
            parent: Some(0),
        });
        let a = generate_airway(&spec).unwrap();
        assert_eq!(connected_components(&a).count, 1);
        assert_eq!(a, generate_airway(&spec).unwrap());
    }

    #[test]
    fn rejects_bad_segments() {
        let outside = single(3.0, [20.0, 20.0, 2.0], [20.0, 20.0, 40.0]);
        assert!(matches!(generate_airway(&outside), Err(Error::OutsideGrid { .. })));
        let mut orphan = single(2.0, [20.0, 20.0, 10.0], [20.0, 20.0, 30.0]);
        orphan.segments.push(Segment {
            start: [5.0, 5.0, 20.0],
            end: [5.0, 5.0, 30.0],
            radius: 1.0,
            parent: Some(0),
        });
        assert!(generate_airway(&orphan).is_err());
        assert!(generate_airway(&single(0.0, [20.0, 20.0, 10.0], [20.0, 20.0, 30.0])).is_err());
    }

    #[test]
    fn sphere_volume() {
        let spec = lesion_spec(LesionRecipe::Sphere { radius: 10.0 }, 31, 0);
        let n = generate_lesion(&spec).unwrap().count_nonzero() as f64;
        let analytic = 4.0 / 3.0 * PI * 1000.0;
        assert!((n - analytic).abs() / analytic < 0.02, "{n}");
    }

    #[test]
    fn spiculated_without_spikes_is_an_ellipsoid() {
        let axes = [9.0, 5.0, 4.0];
        let spec = lesion_spec(
            LesionRecipe::Spiculated {
                semi_axes: axes,
                spike_count: 0,
                spike_length: 5.0,
                spike_radius: 1.0,
            },
            49,
            3,
        );
        let m = generate_lesion(&spec).unwrap();
        let ellipsoid = VoxelGrid::from_fn(spec.geometry, |p| {
            (p.x / axes[0]).powi(2) + (p.y / axes[1]).powi(2) + (p.z / axes[2]).powi(2) <= 1.0
        });
        assert_eq!(m, ellipsoid);
    }

    #[test]
    fn bundled_lesions_are_connected_and_seeded() {
        for name in ["sphere", "spiculated"] {
            let spec = bundled(name).unwrap();
            let m = generate_lesion(&spec).unwrap();
            assert_eq!(connected_components(&m).count, 1, "{name}");
            assert_eq!(m, generate_lesion(&spec).unwrap());
        }
        let mut other = bundled("spiculated").unwrap();
        other.seed += 1;
        assert_ne!(
            generate_lesion(&other).unwrap(),
            generate_lesion(&bundled("spiculated").unwrap()).unwrap()
        );
    }

    #[test]
    fn bundled_tree_fits_and_is_connected() {
        let spec = bundled("tree-192").unwrap();
        let m = generate_airway(&spec).unwrap();
        assert_eq!(connected_components(&m).count, 1);
        assert!(!m.touches_boundary());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = bundled("spiculated").unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PhantomSpec>(&text).unwrap(), spec);
        assert!(serde_json::from_str::<PhantomSpec>(r#"{"geometry":{"dims":[4,4,4],"spacing":[1,1,1]},"bogus":1}"#).is_err());
    }
}
