//! Exact Euclidean distance transform with anisotropic spacing.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher): one 1-D pass per axis over squared distances, with
//! sample positions expressed in millimetres so that non-cubic voxels are
//! handled exactly.

use rayon::prelude::*;

use super::{Geometry, VoxelGrid};
use crate::error::{Error, Result};

/// Per-voxel Euclidean distance (mm) to the nearest source voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    geometry: Geometry,
    data: Vec<f64>,
}

impl DistanceMap {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, index: [usize; 3]) -> f64 {
        self.data[self.geometry.linear(index)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Distance from every voxel to the nearest foreground voxel of `mask`.
pub fn distance_transform(mask: &VoxelGrid) -> Result<DistanceMap> {
    mask.ensure_binary()?;
    if mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask("distance transform source"));
    }
    Ok(squared_to_distance(
        mask.geometry(),
        squared_edt(mask.geometry(), |v| v != 0, mask.data()),
    ))
}

/// Distance from every voxel to the nearest background voxel of `mask`
/// (zero on background). Inside a lumen this is the distance to the wall.
pub fn distance_to_background(mask: &VoxelGrid) -> Result<DistanceMap> {
    mask.ensure_binary()?;
    if mask.count_nonzero() == mask.data().len() {
        return Err(Error::FullMask("distance-to-wall source"));
    }
    Ok(squared_to_distance(
        mask.geometry(),
        squared_edt(mask.geometry(), |v| v == 0, mask.data()),
    ))
}

fn squared_to_distance(geometry: &Geometry, mut data: Vec<f64>) -> DistanceMap {
    data.par_iter_mut().for_each(|d| *d = d.sqrt());
    DistanceMap {
        geometry: *geometry,
        data,
    }
}

fn squared_edt(geometry: &Geometry, is_source: impl Fn(u8) -> bool + Sync, data: &[u8]) -> Vec<f64> {
    let [nx, ny, nz] = geometry.dims;
    let [sx, sy, sz] = geometry.spacing;
    let mut dist: Vec<f64> = data
        .par_iter()
        .map(|&v| if is_source(v) { 0.0 } else { f64::INFINITY })
        .collect();

    // x: contiguous rows.
    dist.par_chunks_mut(nx).for_each_init(
        || Scratch::new(nx),
        |scratch, row| {
            scratch.input[..nx].copy_from_slice(row);
            envelope_1d(scratch, nx, sx);
            row.copy_from_slice(&scratch.output[..nx]);
        },
    );

    // y: lines inside each z slab.
    dist.par_chunks_mut(nx * ny).for_each_init(
        || Scratch::new(ny),
        |scratch, slab| {
            for i in 0..nx {
                for j in 0..ny {
                    scratch.input[j] = slab[i + nx * j];
                }
                envelope_1d(scratch, ny, sy);
                for j in 0..ny {
                    slab[i + nx * j] = scratch.output[j];
                }
            }
        },
    );

    // z: lines span slabs, so gather per (i, j) column and scatter afterwards.
    if nz > 1 {
        let plane = nx * ny;
        let source = &dist;
        let columns: Vec<Vec<f64>> = (0..ny)
            .into_par_iter()
            .map_init(
                || Scratch::new(nz),
                |scratch, j| {
                    let mut out = Vec::with_capacity(nx * nz);
                    for i in 0..nx {
                        for k in 0..nz {
                            scratch.input[k] = source[i + nx * j + plane * k];
                        }
                        envelope_1d(scratch, nz, sz);
                        out.extend_from_slice(&scratch.output[..nz]);
                    }
                    out
                },
            )
            .collect();
        for (j, column) in columns.into_iter().enumerate() {
            for i in 0..nx {
                for k in 0..nz {
                    dist[i + nx * j + plane * k] = column[i * nz + k];
                }
            }
        }
    }
    dist
}

struct Scratch {
    input: Vec<f64>,
    output: Vec<f64>,
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            input: vec![0.0; n],
            output: vec![0.0; n],
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

/// Lower envelope of the parabolas `(x - q*step)^2 + f(q)` over finite `f(q)`.
fn envelope_1d(s: &mut Scratch, n: usize, step: f64) {
    let f = &s.input;
    let mut k: usize = 0;
    let mut any = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !any {
            s.sites[0] = q;
            s.bounds[0] = f64::NEG_INFINITY;
            s.bounds[1] = f64::INFINITY;
            any = true;
            continue;
        }
        let pq = q as f64 * step;
        // bounds[0] is -inf, so the pop loop always stops at k == 0.
        loop {
            let v = s.sites[k];
            let pv = v as f64 * step;
            let cross = ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
            if cross <= s.bounds[k] {
                k -= 1;
                continue;
            }
            k += 1;
            s.sites[k] = q;
            s.bounds[k] = cross;
            s.bounds[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !any {
        s.output[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..n {
        let x = q as f64 * step;
        while s.bounds[k + 1] < x {
            k += 1;
        }
        let v = s.sites[k];
        let d = x - v as f64 * step;
        s.output[q] = d * d + f[v];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mask: &VoxelGrid) -> Vec<f64> {
        let g = mask.geometry();
        let fg: Vec<_> = mask
            .foreground_indices()
            .into_iter()
            .map(|i| g.voxel_center_u(g.unravel(i)))
            .collect();
        (0..g.len())
            .map(|i| {
                let p = g.voxel_center_u(g.unravel(i));
                fg.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_voxel_corner_distance() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([5, 5, 5]));
        m.set([2, 2, 2], 1);
        let d = distance_transform(&m).unwrap();
        assert!((d.get([0, 0, 0]) - 12f64.sqrt()).abs() < 1e-12);
        assert_eq!(d.get([2, 2, 2]), 0.0);
        assert!((d.get([4, 2, 2]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spacing in [[1.0, 1.0, 1.0], [0.5, 0.8, 1.7]] {
            let g = Geometry::new([12, 12, 12], spacing, [1.0, -2.0, 0.5]).unwrap();
            let data = (0..g.len()).map(|_| rng.random_bool(0.02) as u8).collect();
            let mask = VoxelGrid::from_data(g, data).unwrap();
            let fast = distance_transform(&mask).unwrap();
            let slow = brute_force(&mask);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn foreground_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Geometry::new([9, 7, 5], [0.3, 1.0, 2.0], [0.0; 3]).unwrap();
        let data: Vec<u8> = (0..g.len()).map(|_| rng.random_bool(0.2) as u8).collect();
        let mask = VoxelGrid::from_data(g, data.clone()).unwrap();
        let d = distance_transform(&mask).unwrap();
        for (v, dist) in data.iter().zip(d.data()) {
            if *v == 1 {
                assert_eq!(*dist, 0.0);
            } else {
                assert!(*dist > 0.0);
            }
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = VoxelGrid::zeros(Geometry::cubic([3, 3, 3]));
        assert!(matches!(distance_transform(&m), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn wall_distance_inside_a_block() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([7, 7, 7]));
        for k in 1..6 {
            for j in 1..6 {
                for i in 1..6 {
                    m.set([i, j, k], 1);
                }
            }
        }
        let d = distance_to_background(&m).unwrap();
        assert_eq!(d.get([3, 3, 3]), 3.0);
        assert_eq!(d.get([1, 3, 3]), 1.0);
        assert_eq!(d.get([0, 0, 0]), 0.0);
    }

    #[test]
    fn one_voxel_thick_grids() {
        let mut m = VoxelGrid::zeros(Geometry::new([6, 1, 1], [2.0, 1.0, 1.0], [0.0; 3]).unwrap());
        m.set([1, 0, 0], 1);
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.data(), &[2.0, 0.0, 2.0, 4.0, 6.0, 8.0]);
    }
}
