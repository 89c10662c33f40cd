//! Airway centerline extraction by 3-D topology-preserving thinning.
//!
//! Directional sequential thinning after Lee, Kashyap and Chu: border voxels
//! are peeled one direction at a time (x-, x+, y+, y-, z+, z-), keeping curve
//! endpoints, until a full round of six directions removes nothing. A voxel
//! is deletable when it is *simple* for (26, 6) connectivity, checked with
//! the Bertrand-Malandain topological numbers: exactly one 26-connected
//! foreground component in its 26-neighborhood and exactly one 6-connected
//! background component (within the 18-neighborhood) 6-adjacent to it.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance_to_background, Geometry, VoxelGrid};

/// A candidate point of entry on the airway centerline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPoint {
    pub id: usize,
    pub index: [usize; 3],
    pub world: [f64; 3],
    /// Distance from the point to the airway wall, mm.
    #[serde(rename = "radius")]
    pub local_radius: f64,
}

impl SkeletonPoint {
    pub fn world_vec(&self) -> crate::Vec3 {
        crate::Vec3::from(self.world)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPointSet {
    pub points: Vec<SkeletonPoint>,
    pub source_geometry: Geometry,
}

impl SkeletonPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The skeleton as a binary mask on its source geometry.
    pub fn to_mask(&self) -> VoxelGrid {
        let mut mask = VoxelGrid::zeros(self.source_geometry);
        for p in &self.points {
            mask.set(p.index, 1);
        }
        mask
    }

    /// Number of 26-neighbors of each point that are themselves skeleton points.
    pub fn neighbor_counts(&self) -> Vec<usize> {
        let mask = self.to_mask();
        self.points
            .iter()
            .map(|p| {
                let c = [p.index[0] as i64, p.index[1] as i64, p.index[2] as i64];
                NEIGHBOR_OFFSETS
                    .iter()
                    .filter(|d| mask.get_checked([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) == Some(1))
                    .count()
            })
            .collect()
    }

    /// Ids of points with three or more skeleton neighbors.
    pub fn branch_points(&self) -> Vec<usize> {
        self.neighbor_counts()
            .into_iter()
            .zip(&self.points)
            .filter(|(n, _)| *n >= 3)
            .map(|(_, p)| p.id)
            .collect()
    }

    /// Ids of points with exactly one skeleton neighbor.
    pub fn end_points(&self) -> Vec<usize> {
        self.neighbor_counts()
            .into_iter()
            .zip(&self.points)
            .filter(|(n, _)| *n == 1)
            .map(|(_, p)| p.id)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.points)?)
    }
}

/// Thins the airway mask to a one-voxel-wide centerline. Ids follow storage
/// order (z, then y, then x), and `local_radius` is left at zero; see
/// [`attach_local_radius`] and [`extract_centerline`].
pub fn skeletonize(airway_mask: &VoxelGrid) -> Result<SkeletonPointSet> {
    airway_mask.ensure_binary()?;
    if airway_mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask("airway mask"));
    }
    if airway_mask.touches_boundary() {
        return Err(Error::TouchesBoundary);
    }
    let g = *airway_mask.geometry();
    let mut image = airway_mask.data().to_vec();
    thin(&g, &mut image);

    let points = image
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .enumerate()
        .map(|(id, (idx, _))| {
            let index = g.unravel(idx);
            let w = g.voxel_center_u(index);
            SkeletonPoint {
                id,
                index,
                world: [w.x, w.y, w.z],
                local_radius: 0.0,
            }
        })
        .collect();
    Ok(SkeletonPointSet {
        points,
        source_geometry: g,
    })
}

/// Sets each point's radius to its distance from the nearest background voxel.
pub fn attach_local_radius(
    mut skel: SkeletonPointSet,
    airway_mask: &VoxelGrid,
) -> Result<SkeletonPointSet> {
    skel.source_geometry
        .ensure_same(airway_mask.geometry(), "skeleton vs airway mask")?;
    let wall = distance_to_background(airway_mask)?;
    for p in &mut skel.points {
        if airway_mask.get(p.index) == 0 {
            return Err(Error::GeometryMismatch(format!(
                "skeleton point {} at {:?} is not airway foreground",
                p.id, p.index
            )));
        }
        p.local_radius = wall.get(p.index);
    }
    Ok(skel)
}

/// [`skeletonize`] followed by [`attach_local_radius`].
pub fn extract_centerline(airway_mask: &VoxelGrid) -> Result<SkeletonPointSet> {
    attach_local_radius(skeletonize(airway_mask)?, airway_mask)
}

const NEIGHBOR_OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut p = 0;
    while p < 27 {
        if p != 13 {
            out[n] = [(p % 3) as i64 - 1, ((p / 3) % 3) as i64 - 1, (p / 9) as i64 - 1];
            n += 1;
        }
        p += 1;
    }
    out
};

// Border directions in sweep order: x-, x+, y+, y-, z+, z-.
const BORDERS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

fn thin(g: &Geometry, image: &mut [u8]) {
    let [nx, ny, _] = g.dims;
    let stride = [1isize, nx as isize, (nx * ny) as isize];
    let cube: [isize; 27] = std::array::from_fn(|p| {
        let d = [(p % 3) as isize - 1, ((p / 3) % 3) as isize - 1, (p / 9) as isize - 1];
        d[0] * stride[0] + d[1] * stride[1] + d[2] * stride[2]
    });
    let border: [isize; 6] = std::array::from_fn(|b| {
        let d = BORDERS[b];
        d[0] as isize * stride[0] + d[1] as isize * stride[1] + d[2] as isize * stride[2]
    });

    // The input never touches the grid boundary, so every 3x3x3 neighborhood
    // of a foreground voxel lies inside the grid.
    let neighborhood = |image: &[u8], idx: usize| -> u32 {
        let mut bits = 0u32;
        for (p, off) in cube.iter().enumerate() {
            if p != 13 && image[(idx as isize + off) as usize] != 0 {
                bits |= 1 << p;
            }
        }
        bits
    };

    let mut live: Vec<usize> = image
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    let mut unchanged = 0;
    while unchanged < BORDERS.len() {
        unchanged = 0;
        for off in border {
            let snapshot: &[u8] = image;
            let candidates: Vec<usize> = live
                .par_iter()
                .copied()
                .filter(|&idx| {
                    if snapshot[(idx as isize + off) as usize] != 0 {
                        return false;
                    }
                    let n = neighborhood(snapshot, idx);
                    n.count_ones() != 1 && is_simple(n)
                })
                .collect();

            // Sequential re-check keeps deletions within one pass consistent.
            let mut changed = false;
            for idx in candidates {
                let n = neighborhood(image, idx);
                if n.count_ones() != 1 && is_simple(n) {
                    image[idx] = 0;
                    changed = true;
                }
            }
            if changed {
                live.retain(|&idx| image[idx] != 0);
            } else {
                unchanged += 1;
            }
        }
    }
}

struct Tables {
    adj26: [u32; 27],
    adj6: [u32; 27],
    n18: u32,
    n6: u32,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let coord = |p: usize| [(p % 3) as i32 - 1, ((p / 3) % 3) as i32 - 1, (p / 9) as i32 - 1];
        let mut t = Tables {
            adj26: [0; 27],
            adj6: [0; 27],
            n18: 0,
            n6: 0,
        };
        for p in 0..27 {
            if p == 13 {
                continue;
            }
            let c = coord(p);
            let manhattan: i32 = c.iter().map(|v| v.abs()).sum();
            if manhattan <= 2 {
                t.n18 |= 1 << p;
            }
            if manhattan == 1 {
                t.n6 |= 1 << p;
            }
            for q in 0..27 {
                if q == 13 || q == p {
                    continue;
                }
                let d = coord(q);
                let diff: Vec<i32> = (0..3).map(|a| (c[a] - d[a]).abs()).collect();
                if diff.iter().all(|&x| x <= 1) {
                    t.adj26[p] |= 1 << q;
                }
                if diff.iter().sum::<i32>() == 1 {
                    t.adj6[p] |= 1 << q;
                }
            }
        }
        t
    })
}

fn count_components(mut set: u32, adjacency: &[u32; 27], seeds: u32) -> u32 {
    let mut components = 0;
    let mut remaining_seeds = seeds & set;
    while remaining_seeds != 0 {
        let start = remaining_seeds.trailing_zeros() as usize;
        let mut frontier = 1u32 << start;
        set &= !frontier;
        let mut reached = frontier;
        while frontier != 0 {
            let p = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = adjacency[p] & set;
            set &= !next;
            frontier |= next;
            reached |= next;
        }
        remaining_seeds &= !reached;
        components += 1;
    }
    components
}

/// Simple-point test for (26, 6) topology on a 26-neighborhood bitmask
/// (bit `p` for cube position `p = dx+1 + 3(dy+1) + 9(dz+1)`, center excluded).
pub(crate) fn is_simple(neighbors: u32) -> bool {
    let t = tables();
    let all26: u32 = ((1u32 << 27) - 1) & !(1 << 13);
    let foreground = neighbors & all26;
    if count_components(foreground, &t.adj26, foreground) != 1 {
        return false;
    }
    let background = !neighbors & t.n18;
    count_components(background, &t.adj6, t.n6) == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::connected_components;

    fn bit(d: [i32; 3]) -> u32 {
        1 << ((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1))
    }

    #[test]
    fn simple_point_basics() {
        // Isolated voxel: removing it deletes a component.
        assert!(!is_simple(0));
        // Fully surrounded voxel: removing it creates a cavity.
        assert!(!is_simple(((1u32 << 27) - 1) & !(1 << 13)));
        // Endpoint of a line is simple.
        assert!(is_simple(bit([1, 0, 0])));
        // Middle of a line is not: it would split the line.
        assert!(!is_simple(bit([1, 0, 0]) | bit([-1, 0, 0])));
        // A corner of a solid block is simple.
        let mut block = 0;
        for dz in 0..=1 {
            for dy in 0..=1 {
                for dx in 0..=1 {
                    if [dx, dy, dz] != [0, 0, 0] {
                        block |= bit([dx, dy, dz]);
                    }
                }
            }
        }
        assert!(is_simple(block));
    }

    #[test]
    fn tunnel_creating_voxel_is_not_simple() {
        // A ring of 8 in-plane neighbors around the center: removing the
        // center of a filled disc would open a hole through it.
        let mut ring = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy) != (0, 0) {
                    ring |= bit([dx, dy, 0]);
                }
            }
        }
        assert!(!is_simple(ring));
    }

    fn cylinder(radius: f64, length: usize) -> VoxelGrid {
        let dims = [2 * radius as usize + 7, 2 * radius as usize + 7, length + 4];
        let g = Geometry::cubic(dims);
        let c = (dims[0] / 2) as f64;
        VoxelGrid::from_fn(g, |p| {
            let dx = p.x - c;
            let dy = p.y - c;
            dx * dx + dy * dy <= radius * radius && p.z >= 2.0 && p.z < 2.0 + length as f64
        })
    }

    #[test]
    fn single_voxel_is_its_own_skeleton() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([3, 3, 3]));
        m.set([1, 1, 1], 1);
        let s = extract_centerline(&m).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.points[0].index, [1, 1, 1]);
        assert_eq!(s.points[0].local_radius, 1.0);
    }

    #[test]
    fn cylinder_thins_to_its_axis() {
        let radius = 4.0;
        let length = 40;
        let m = cylinder(radius, length);
        let s = extract_centerline(&m).unwrap();
        let c = (m.dims()[0] / 2) as usize;
        // The cross-section collapses to a line after about r/2 sweeps, and
        // each flat cap loses one layer per sweep meanwhile: about L - r.
        let expected = length as f64 - radius;
        assert!(
            (s.len() as f64 - expected).abs() <= 2.0,
            "{} points, expected about {expected}",
            s.len()
        );
        for p in &s.points {
            assert!(p.index[0].abs_diff(c) <= 1 && p.index[1].abs_diff(c) <= 1, "{p:?}");
        }
        let mid = s
            .points
            .iter()
            .find(|p| p.index[2] == 2 + length / 2)
            .expect("axis point at mid-height");
        assert!((mid.local_radius - radius).abs() <= 0.5, "{}", mid.local_radius);
    }

    #[test]
    fn fatter_cylinder_has_larger_radius() {
        let thin = extract_centerline(&cylinder(4.0, 40)).unwrap();
        let fat = extract_centerline(&cylinder(8.0, 40)).unwrap();
        let mid = |s: &SkeletonPointSet| {
            let zs: Vec<usize> = s.points.iter().map(|p| p.index[2]).collect();
            let target = (zs[0] + zs[zs.len() - 1]) / 2;
            s.points.iter().find(|p| p.index[2] == target).unwrap().local_radius
        };
        assert!(mid(&fat) > mid(&thin) + 3.0);
    }

    #[test]
    fn skeleton_is_thin_connected_and_inside() {
        let m = cylinder(5.0, 30);
        let s = skeletonize(&m).unwrap();
        let mask = s.to_mask();
        assert_eq!(connected_components(&mask).count, connected_components(&m).count);
        let counts = s.neighbor_counts();
        for (p, n) in s.points.iter().zip(counts) {
            assert_eq!(m.get(p.index), 1);
            if n == 1 {
                continue;
            }
            let idx = [p.index[0] as i64, p.index[1] as i64, p.index[2] as i64];
            let mut bits = 0u32;
            for (q, d) in (0..27).filter(|&q| q != 13).zip(NEIGHBOR_OFFSETS.iter()) {
                if mask.get_checked([idx[0] + d[0], idx[1] + d[1], idx[2] + d[2]]) == Some(1) {
                    bits |= 1 << q;
                }
            }
            assert!(!is_simple(bits), "simple non-endpoint voxel left at {:?}", p.index);
        }
    }

    #[test]
    fn deterministic_output() {
        let m = cylinder(6.0, 25);
        assert_eq!(skeletonize(&m).unwrap(), skeletonize(&m).unwrap());
    }

    #[test]
    fn rejects_empty_and_boundary_masks() {
        let empty = VoxelGrid::zeros(Geometry::cubic([4, 4, 4]));
        assert!(matches!(skeletonize(&empty), Err(Error::EmptyMask(_))));
        let mut edge = VoxelGrid::zeros(Geometry::cubic([4, 4, 4]));
        edge.set([0, 1, 1], 1);
        assert!(matches!(skeletonize(&edge), Err(Error::TouchesBoundary)));
    }

    #[test]
    fn hollow_shell_keeps_its_cavity() {
        // Topology preservation: a closed spherical shell cannot thin to a curve.
        let g = Geometry::cubic([17, 17, 17]);
        let m = VoxelGrid::from_fn(g, |p| {
            let r = (p - crate::Vec3::new(8.0, 8.0, 8.0)).norm();
            (4.5..=6.5).contains(&r)
        });
        let s = skeletonize(&m).unwrap();
        let mask = s.to_mask();
        // Background, 6-connected, still splits into outside and cavity.
        let mut seen = vec![false; g.len()];
        let mut components = 0;
        for seed in 0..g.len() {
            if mask.data()[seed] != 0 || seen[seed] {
                continue;
            }
            components += 1;
            seen[seed] = true;
            let mut stack = vec![seed];
            while let Some(idx) = stack.pop() {
                let c = g.unravel(idx);
                for d in BORDERS {
                    let n = [c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]];
                    if let Some(0) = mask.get_checked(n) {
                        let ni = g.linear([n[0] as usize, n[1] as usize, n[2] as usize]);
                        if !seen[ni] {
                            seen[ni] = true;
                            stack.push(ni);
                        }
                    }
                }
            }
        }
        assert_eq!(components, 2, "cavity was opened");
        assert_eq!(connected_components(&mask).count, 1);
    }
}
