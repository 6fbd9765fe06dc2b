//! Binary 3D morphology with the 26-connected (Chebyshev) structuring element.
//!
//! `radius` iterations of the 3x3x3 element equal a single pass with a cube of
//! side `2 * radius + 1`, which is separable into three 1D passes. Voxels
//! outside the grid count as false for both operations.

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    meta: GridMeta,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(meta: GridMeta, data: Vec<bool>) -> Result<Self> {
        if meta.channels != 1 || data.len() != meta.voxels() {
            return Err(Error::InvalidVolume(format!(
                "mask needs 1 channel and {} values",
                meta.voxels()
            )));
        }
        Ok(BinaryMask { meta, data })
    }

    pub fn empty(meta: &GridMeta) -> Self {
        let meta = meta.with_channels(1);
        let data = vec![false; meta.voxels()];
        BinaryMask { meta, data }
    }

    pub fn full(meta: &GridMeta) -> Self {
        let meta = meta.with_channels(1);
        let data = vec![true; meta.voxels()];
        BinaryMask { meta, data }
    }

    /// Voxels carrying `label`.
    pub fn from_label(labels: &LabelVolume, label: u8) -> Self {
        BinaryMask {
            meta: labels.meta().clone(),
            data: labels.data().iter().map(|&l| l == label).collect(),
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.meta.voxel_index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.meta.voxel_index(x, y, z);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            meta: self.meta.clone(),
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn xor(&self, other: &Self) -> Self {
        BinaryMask {
            meta: self.meta.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a ^ b).collect(),
        }
    }
}

#[derive(Clone, Copy)]
enum Op {
    Dilate,
    Erode,
}

/// One separable pass of radius `r` along `axis`.
fn pass(src: &[bool], dims: [usize; 3], axis: usize, r: usize, op: Op) -> Vec<bool> {
    let [nx, ny, _] = dims;
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let len = dims[axis];
    let mut out = vec![false; src.len()];
    let mut line = vec![false; len];
    // prefix counts of set voxels along the line
    let mut prefix = vec![0usize; len + 1];
    for start in 0..src.len() {
        // visit each line once, from its first voxel
        if (start / stride) % len != 0 {
            continue;
        }
        for i in 0..len {
            line[i] = src[start + i * stride];
            prefix[i + 1] = prefix[i] + line[i] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let set = prefix[hi + 1] - prefix[lo];
            out[start + i * stride] = match op {
                Op::Dilate => set > 0,
                // window must lie inside the grid and be fully set
                Op::Erode => i >= r && i + r < len && set == 2 * r + 1,
            };
        }
    }
    out
}

fn morph(mask: &BinaryMask, radius: usize, op: Op) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let dims = mask.meta.dims;
    let mut data = pass(&mask.data, dims, 0, radius, op);
    data = pass(&data, dims, 1, radius, op);
    data = pass(&data, dims, 2, radius, op);
    BinaryMask {
        meta: mask.meta.clone(),
        data,
    }
}

pub fn binary_dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, radius, Op::Dilate)
}

pub fn binary_erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, radius, Op::Erode)
}

/// Shell around the mask surface: `dilate(mask, r) XOR erode(mask, r)`.
pub fn boundary_band(mask: &BinaryMask, radius: usize) -> BinaryMask {
    binary_dilate(mask, radius).xor(&binary_erode(mask, radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> GridMeta {
        GridMeta::cube(n, 1).unwrap()
    }

    fn block(n: usize, lo: usize, hi: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(&grid(n));
        for z in lo..=hi {
            for y in lo..=hi {
                for x in lo..=hi {
                    m.set(x, y, z, true);
                }
            }
        }
        m
    }

    /// Direct 26-neighbourhood step, used as an oracle for the separable passes.
    fn naive_step(mask: &BinaryMask, dilate: bool) -> BinaryMask {
        let [nx, ny, nz] = mask.meta().dims;
        let mut out = mask.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut any = false;
                    let mut all = true;
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                let inside = px >= 0
                                    && py >= 0
                                    && pz >= 0
                                    && px < nx as i64
                                    && py < ny as i64
                                    && pz < nz as i64;
                                let v = inside && mask.get(px as usize, py as usize, pz as usize);
                                any |= v;
                                all &= v;
                            }
                        }
                    }
                    out.set(x, y, z, if dilate { any } else { all });
                }
            }
        }
        out
    }

    fn naive(mask: &BinaryMask, radius: usize, dilate: bool) -> BinaryMask {
        (0..radius).fold(mask.clone(), |m, _| naive_step(&m, dilate))
    }

    #[test]
    fn dilating_one_voxel_gives_a_cube() {
        let m = block(9, 4, 4);
        let d = binary_dilate(&m, 1);
        assert_eq!(d.count(), 27);
        assert_eq!(d, block(9, 3, 5));
        assert_eq!(binary_dilate(&m, 0), m);
        let full = BinaryMask::full(&grid(6));
        assert_eq!(binary_dilate(&full, 5), full);
    }

    #[test]
    fn eroding_blocks_and_specks() {
        let e = binary_erode(&block(9, 3, 5), 1);
        assert_eq!(e.count(), 1);
        assert!(e.get(4, 4, 4));
        assert_eq!(binary_erode(&block(9, 4, 4), 1).count(), 0);
        let empty = BinaryMask::empty(&grid(7));
        assert_eq!(binary_erode(&empty, 3), empty);
    }

    #[test]
    fn band_sizes() {
        let empty = BinaryMask::empty(&grid(8));
        for r in 1..4 {
            assert_eq!(boundary_band(&empty, r).count(), 0);
        }
        // 5^3 cube in an 11^3 grid: 7^3 dilated minus 3^3 eroded core
        let b = boundary_band(&block(11, 3, 7), 1);
        assert_eq!(b.count(), 343 - 27);
    }

    #[test]
    fn band_of_full_grid_hugs_the_faces() {
        let full = BinaryMask::full(&grid(8));
        let band = boundary_band(&full, 1);
        // erosion keeps only the 6^3 interior, dilation keeps everything
        assert_eq!(band.count(), 512 - 216);
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let on_face = [x, y, z].iter().any(|&c| c == 0 || c == 7);
                    assert_eq!(band.get(x, y, z), on_face);
                }
            }
        }
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        prop::collection::vec(prop::bool::weighted(0.3), 512)
            .prop_map(|d| BinaryMask::new(grid(8), d).unwrap())
    }

    /// Embeds an 8^3 mask into a false-padded grid.
    fn pad(mask: &BinaryMask, p: usize) -> BinaryMask {
        let n = 8 + 2 * p;
        let mut out = BinaryMask::empty(&grid(n));
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    out.set(x + p, y + p, z + p, mask.get(x, y, z));
                }
            }
        }
        out
    }

    fn crop(mask: &BinaryMask, p: usize) -> BinaryMask {
        let mut out = BinaryMask::empty(&grid(8));
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    out.set(x, y, z, mask.get(x + p, y + p, z + p));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn separable_matches_iterated_neighbourhood(m in mask_strategy(), r in 0usize..4) {
            prop_assert_eq!(binary_dilate(&m, r), naive(&m, r, true));
            prop_assert_eq!(binary_erode(&m, r), naive(&m, r, false));
        }

        #[test]
        fn erosion_is_dual_of_dilation(m in mask_strategy(), r in 1usize..4) {
            // pad with a false border wide enough that the complement's
            // dilation sees the outside as set
            let padded = pad(&m, r);
            let dual = binary_dilate(&padded.complement(), r).complement();
            prop_assert_eq!(binary_erode(&m, r), crop(&dual, r));
        }

        #[test]
        fn band_grows_with_radius(m in mask_strategy(), r in 1usize..3) {
            let small = boundary_band(&m, r);
            let big = boundary_band(&m, r + 1);
            prop_assert!(small.data().iter().zip(big.data()).all(|(a, b)| !a || *b));
        }
    }
}
