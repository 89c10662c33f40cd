//! Binary morphology, additive overlays and connected components.

use rayon::prelude::*;

use super::{Geometry, VoxelGrid};
use crate::error::{Error, Result};

/// Dilation with the 3x3x3 (26-connected) structuring element applied
/// `radius_vox` times, clipped at the grid edge.
///
/// Repeated 3x3x3 dilation equals a single (2r+1)^3 box, which is separable,
/// so this runs as three 1-D running-window passes.
pub fn dilate(mask: &VoxelGrid, radius_vox: usize) -> Result<VoxelGrid> {
    mask.ensure_binary()?;
    if radius_vox == 0 {
        return Ok(mask.clone());
    }
    let g = *mask.geometry();
    let [nx, ny, nz] = g.dims;
    let r = radius_vox;
    let mut a = mask.data().to_vec();
    let mut b = vec![0u8; a.len()];

    // x
    b.par_chunks_mut(nx)
        .zip(a.par_chunks(nx))
        .for_each(|(dst, src)| box_max_line(src, 1, dst, 1, nx, r));
    // y
    a.par_chunks_mut(nx * ny)
        .zip(b.par_chunks(nx * ny))
        .for_each(|(dst, src)| {
            for i in 0..nx {
                box_max_line(&src[i..], nx, &mut dst[i..], nx, ny, r);
            }
        });
    // z
    let plane = nx * ny;
    let src = &a;
    b.par_chunks_mut(nx)
        .enumerate()
        .for_each(|(row, dst)| {
            let j = row % ny;
            let k = row / ny;
            let lo = k.saturating_sub(r);
            let hi = (k + r).min(nz - 1);
            for (i, out) in dst.iter_mut().enumerate() {
                *out = (lo..=hi).any(|kk| src[i + nx * j + plane * kk] != 0) as u8;
            }
        });
    VoxelGrid::from_data(g, b)
}

fn box_max_line(src: &[u8], src_stride: usize, dst: &mut [u8], dst_stride: usize, n: usize, r: usize) {
    // Running count of set samples in the window [q - r, q + r].
    let mut count = 0usize;
    for q in 0..r.min(n) {
        count += (src[q * src_stride] != 0) as usize;
    }
    for q in 0..n {
        let enter = q + r;
        if enter < n {
            count += (src[enter * src_stride] != 0) as usize;
        }
        if q > r {
            count -= (src[(q - r - 1) * src_stride] != 0) as usize;
        }
        dst[q * dst_stride] = (count > 0) as u8;
    }
}

/// `a AND NOT b` on binary masks of identical geometry.
pub fn and_not(a: &VoxelGrid, b: &VoxelGrid) -> Result<VoxelGrid> {
    a.geometry().ensure_same(b.geometry(), "and_not")?;
    let data = a
        .data()
        .par_iter()
        .zip(b.data().par_iter())
        .map(|(&x, &y)| (x != 0 && y == 0) as u8)
        .collect();
    VoxelGrid::from_data(*a.geometry(), data)
}

/// Voxelwise sum of binary masks: value k marks voxels in exactly k masks.
pub fn additive_overlay(masks: &[&VoxelGrid]) -> Result<VoxelGrid> {
    let first = masks
        .first()
        .ok_or_else(|| Error::param("masks", "at least one mask is required"))?;
    if masks.len() > u8::MAX as usize {
        return Err(Error::param("masks", "more than 255 masks overflow 8-bit counts"));
    }
    let geometry = *first.geometry();
    for (n, m) in masks.iter().enumerate() {
        geometry.ensure_same(m.geometry(), &format!("overlay mask {n}"))?;
        m.ensure_binary()?;
    }
    let mut sum = vec![0u8; geometry.len()];
    for m in masks {
        sum.par_iter_mut()
            .zip(m.data().par_iter())
            .for_each(|(s, &v)| *s += v);
    }
    VoxelGrid::from_data(geometry, sum)
}

/// Number of voxels holding exactly `value`.
pub fn count_value(grid: &VoxelGrid, value: u8) -> usize {
    grid.data().par_iter().filter(|&&v| v == value).count()
}

/// 26-connected component labelling of the nonzero voxels.
#[derive(Clone, Debug)]
pub struct ComponentLabels {
    pub count: usize,
    /// 0 for background, 1..=count for components in order of first voxel.
    pub labels: Vec<u32>,
}

pub fn connected_components(mask: &VoxelGrid) -> ComponentLabels {
    let g: Geometry = *mask.geometry();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for seed in 0..data.len() {
        if data[seed] == 0 || labels[seed] != 0 {
            continue;
        }
        count += 1;
        labels[seed] = count;
        stack.push(seed);
        while let Some(idx) = stack.pop() {
            let [i, j, k] = g.unravel(idx);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let n = [i as i64 + di, j as i64 + dj, k as i64 + dk];
                        if !g.contains_index(n) {
                            continue;
                        }
                        let nidx = g.linear([n[0] as usize, n[1] as usize, n[2] as usize]);
                        if data[nidx] != 0 && labels[nidx] == 0 {
                            labels[nidx] = count;
                            stack.push(nidx);
                        }
                    }
                }
            }
        }
    }
    ComponentLabels {
        count: count as usize,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_mask(dims: [usize; 3], bits: &[bool]) -> VoxelGrid {
        let g = Geometry::cubic(dims);
        VoxelGrid::from_data(g, bits.iter().take(g.len()).map(|&b| b as u8).collect()).unwrap()
    }

    fn naive_dilate(mask: &VoxelGrid) -> VoxelGrid {
        let g = *mask.geometry();
        let mut out = VoxelGrid::zeros(g);
        for idx in 0..g.len() {
            let [i, j, k] = g.unravel(idx);
            let mut hit = false;
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        if mask.get_checked([i as i64 + di, j as i64 + dj, k as i64 + dk]) == Some(1) {
                            hit = true;
                        }
                    }
                }
            }
            out.data_mut()[idx] = hit as u8;
        }
        out
    }

    #[test]
    fn radius_zero_is_identity() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([5, 6, 7]));
        m.set([1, 2, 3], 1);
        m.set([4, 5, 6], 1);
        assert_eq!(dilate(&m, 0).unwrap(), m);
    }

    #[test]
    fn single_voxel_grows_to_a_block() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([7, 7, 7]));
        m.set([3, 3, 3], 1);
        assert_eq!(dilate(&m, 1).unwrap().count_nonzero(), 27);
        assert_eq!(dilate(&m, 2).unwrap().count_nonzero(), 125);

        let mut corner = VoxelGrid::zeros(Geometry::cubic([7, 7, 7]));
        corner.set([0, 0, 0], 1);
        assert_eq!(dilate(&corner, 1).unwrap().count_nonzero(), 8);
    }

    #[test]
    fn repeated_unit_dilation_equals_radius() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([9, 8, 10]));
        m.set([1, 1, 1], 1);
        m.set([6, 2, 8], 1);
        let twice = dilate(&dilate(&m, 1).unwrap(), 1).unwrap();
        assert_eq!(dilate(&m, 2).unwrap(), twice);
    }

    #[test]
    fn overlay_counts() {
        let g = Geometry::cubic([4, 4, 4]);
        let mut a = VoxelGrid::zeros(g);
        let mut b = VoxelGrid::zeros(g);
        a.set([0, 0, 0], 1);
        b.set([3, 3, 3], 1);
        assert_eq!(additive_overlay(&[&a, &b]).unwrap().max_value(), 1);

        for i in 0..4 {
            for j in 0..2 {
                a.set([i, j, 2], 1);
            }
        }
        let n = a.count_nonzero();
        let self_overlap = additive_overlay(&[&a, &a]).unwrap();
        assert_eq!(self_overlap.max_value(), 2);
        assert_eq!(count_value(&self_overlap, 2), n);
        assert_eq!(count_value(&self_overlap, 0), g.len() - n);
        assert_eq!(count_value(&VoxelGrid::zeros(g), 2), 0);
    }

    #[test]
    fn overlay_rejects_mismatched_geometry() {
        let a = VoxelGrid::zeros(Geometry::cubic([4, 4, 4]));
        let b = VoxelGrid::zeros(Geometry::cubic([4, 4, 5]));
        assert!(matches!(additive_overlay(&[&a, &b]), Err(Error::GeometryMismatch(_))));
        let c = VoxelGrid::zeros(Geometry::new([4, 4, 4], [2.0, 1.0, 1.0], [0.0; 3]).unwrap());
        assert!(matches!(additive_overlay(&[&a, &c]), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn components_use_26_connectivity() {
        let mut m = VoxelGrid::zeros(Geometry::cubic([5, 5, 5]));
        m.set([0, 0, 0], 1);
        m.set([1, 1, 1], 1);
        m.set([3, 3, 3], 1);
        let cc = connected_components(&m);
        assert_eq!(cc.count, 2);
        assert_eq!(cc.labels[m.geometry().linear([1, 1, 1])], 1);
        assert_eq!(cc.labels[m.geometry().linear([3, 3, 3])], 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn overlay_value_two_is_intersection(
            a in proptest::collection::vec(any::<bool>(), 6 * 5 * 4),
            b in proptest::collection::vec(any::<bool>(), 6 * 5 * 4),
        ) {
            let ma = random_mask([6, 5, 4], &a);
            let mb = random_mask([6, 5, 4], &b);
            let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            let ov = additive_overlay(&[&ma, &mb]).unwrap();
            prop_assert_eq!(count_value(&ov, 2), both);
            let hist: usize = (0..=2u8).map(|v| count_value(&ov, v)).sum();
            prop_assert_eq!(hist, ov.data().len());
        }

        #[test]
        fn dilation_is_extensive_monotone_and_matches_naive(
            a in proptest::collection::vec(proptest::bool::weighted(0.1), 7 * 6 * 5),
            extra in proptest::collection::vec(proptest::bool::weighted(0.1), 7 * 6 * 5),
        ) {
            let ma = random_mask([7, 6, 5], &a);
            let union: Vec<bool> = a.iter().zip(&extra).map(|(x, y)| *x || *y).collect();
            let mb = random_mask([7, 6, 5], &union);
            let da = dilate(&ma, 1).unwrap();
            let db = dilate(&mb, 1).unwrap();
            prop_assert_eq!(&da, &naive_dilate(&ma));
            for idx in 0..da.data().len() {
                prop_assert!(ma.data()[idx] <= da.data()[idx]);
                prop_assert!(da.data()[idx] <= db.data()[idx]);
            }
        }
    }
}
