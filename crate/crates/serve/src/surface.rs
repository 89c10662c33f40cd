//! Display meshes from binary masks (naive surface nets).
//!
//! Every lattice edge between a foreground voxel and a background voxel (or
//! the outside of the grid) crosses the 0.5 iso-level at its midpoint. Each
//! dual cell with crossing edges gets one vertex at the mean of its crossing
//! midpoints, and each crossing edge emits the quad of the four cells around
//! it, wound so normals point out of the foreground.

use std::collections::HashMap;

use poeplan_core::{Geometry, VoxelGrid};
use serde::Serialize;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TriangleMesh {
    /// x, y, z per vertex, world mm.
    pub vertices: Vec<f64>,
    /// Three vertex indices per triangle.
    pub triangles: Vec<u32>,
}

impl TriangleMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len() / 3
    }

    fn vertex(&self, n: u32) -> [f64; 3] {
        let i = 3 * n as usize;
        [self.vertices[i], self.vertices[i + 1], self.vertices[i + 2]]
    }

    fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        let tri = &self.triangles[3 * t..3 * t + 3];
        [self.vertex(tri[0]), self.vertex(tri[1]), self.vertex(tri[2])]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangle_count())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let u = sub(b, a);
                let v = sub(c, a);
                norm(cross(u, v)) / 2.0
            })
            .sum()
    }

    /// Signed enclosed volume; positive for outward-facing closed meshes.
    pub fn volume(&self) -> f64 {
        (0..self.triangle_count())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

struct Contour<'a> {
    mask: &'a VoxelGrid,
    g: Geometry,
    cells: HashMap<[i64; 3], u32>,
    mesh: TriangleMesh,
}

impl Contour<'_> {
    fn inside(&self, v: [i64; 3]) -> bool {
        self.mask.get_checked(v).is_some_and(|x| x != 0)
    }

    /// Vertex of the dual cell whose lowest corner is voxel `c`.
    fn cell_vertex(&mut self, c: [i64; 3]) -> u32 {
        if let Some(&n) = self.cells.get(&c) {
            return n;
        }
        let mut sum = [0.0; 3];
        let mut hits = 0.0;
        for axis in 0..3 {
            let (b, d) = ((axis + 1) % 3, (axis + 2) % 3);
            for (ob, od) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let mut lo = c;
                lo[b] += ob;
                lo[d] += od;
                let mut hi = lo;
                hi[axis] += 1;
                if self.inside(lo) != self.inside(hi) {
                    let p = self.g.voxel_center(lo);
                    let q = self.g.voxel_center(hi);
                    for k in 0..3 {
                        sum[k] += 0.5 * (p[k] + q[k]);
                    }
                    hits += 1.0;
                }
            }
        }
        let n = self.mesh.vertex_count() as u32;
        self.mesh.vertices.extend(sum.map(|s| s / hits));
        self.cells.insert(c, n);
        n
    }
}

/// Closed surface around the foreground of a binary mask, vertices in world
/// mm. An empty mask yields an empty mesh.
pub fn extract_surface(mask: &VoxelGrid) -> TriangleMesh {
    let g = *mask.geometry();
    let mut ctx = Contour {
        mask,
        g,
        cells: HashMap::new(),
        mesh: TriangleMesh::default(),
    };
    for idx in mask.foreground_indices() {
        let [i, j, k] = g.unravel(idx);
        let v = [i as i64, j as i64, k as i64];
        for axis in 0..3 {
            let (b, d) = ((axis + 1) % 3, (axis + 2) % 3);
            for step in [1i64, -1] {
                let mut w = v;
                w[axis] += step;
                if ctx.inside(w) {
                    continue;
                }
                // Edge from `lo` to `lo + e_axis`; the loop below circles it
                // counter-clockwise seen from +axis.
                let lo = if step == 1 { v } else { w };
                let ring = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(ob, od)| {
                    let mut c = lo;
                    c[b] -= ob;
                    c[d] -= od;
                    ctx.cell_vertex(c)
                });
                let q = if step == 1 {
                    ring
                } else {
                    [ring[0], ring[3], ring[2], ring[1]]
                };
                ctx.mesh.triangles.extend([q[0], q[1], q[2], q[0], q[2], q[3]]);
            }
        }
    }
    ctx.mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn directed_edges_pair_up(mesh: &TriangleMesh) -> bool {
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in mesh.triangles.chunks(3) {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    #[test]
    fn empty_mask_gives_empty_mesh() {
        let m = VoxelGrid::zeros(Geometry::cubic([4, 4, 4]));
        assert_eq!(extract_surface(&m), TriangleMesh::default());
    }

    #[test]
    fn single_voxel_is_a_closed_twelve_triangle_box() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([3, 3, 3]));
        m.set([1, 1, 1], 1);
        let mesh = extract_surface(&m);
        assert_eq!(mesh.triangle_count(), 12);
        assert_eq!(mesh.vertex_count(), 8);
        assert!(directed_edges_pair_up(&mesh));
        // Each cell vertex averages three face midpoints: a cube of side 1/3.
        assert!((mesh.volume() - 1.0 / 27.0).abs() < 1e-12, "{}", mesh.volume());
    }

    #[test]
    fn voxel_on_the_grid_edge_is_still_closed() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([2, 2, 2]));
        m.set([0, 0, 0], 1);
        let mesh = extract_surface(&m);
        assert_eq!(mesh.triangle_count(), 12);
        assert!(directed_edges_pair_up(&mesh));
        assert!(mesh.volume() > 0.0);
    }

    #[test]
    fn sphere_area_is_close_to_analytic() {
        let r = 12.0;
        let g = Geometry::new([33, 33, 33], [1.0; 3], [-16.0; 3]).unwrap();
        let m = VoxelGrid::from_fn(g, |p| p.norm() <= r);
        let mesh = extract_surface(&m);
        let analytic = 4.0 * std::f64::consts::PI * r * r;
        assert!(directed_edges_pair_up(&mesh));
        assert!((mesh.area() - analytic).abs() / analytic < 0.10, "{} vs {analytic}", mesh.area());
        let vol = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((mesh.volume() - vol).abs() / vol < 0.10, "{}", mesh.volume());
    }

    #[test]
    fn vertices_follow_spacing_and_origin() {
        let g = Geometry::new([3, 3, 3], [2.0, 1.0, 0.5], [10.0, 0.0, -1.0]).unwrap();
        let mut m = VoxelGrid::zeros(g);
        m.set([1, 1, 1], 1);
        let mesh = extract_surface(&m);
        let c = g.voxel_center_u([1, 1, 1]);
        for v in mesh.vertices.chunks(3) {
            for (a, s) in [2.0, 1.0, 0.5].iter().enumerate() {
                assert!(((v[a] - c[a]).abs() - s / 6.0).abs() < 1e-12);
            }
        }
    }
}
