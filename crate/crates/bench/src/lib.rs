//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uq_core::{BinaryMask, GridMeta, LabeledScore, ProbVolume, ScoreVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` random softmax-like predictions on a `side`³ grid.
pub fn ensemble(n: usize, side: usize, channels: usize, seed: u64) -> Vec<ProbVolume> {
    let meta = GridMeta::cube(side, channels).unwrap();
    let voxels = meta.voxels();
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let mut data = vec![0.0f32; meta.len()];
            for v in 0..voxels {
                let w: Vec<f32> = (0..channels).map(|_| rng.random::<f32>() + 1e-3).collect();
                let total: f32 = w.iter().sum();
                for (c, x) in w.iter().enumerate() {
                    data[c * voxels + v] = x / total;
                }
            }
            ProbVolume::new(meta.clone(), data).unwrap()
        })
        .collect()
}

/// A solid ball of radius `side / 3` in the middle of the grid.
pub fn ball(side: usize) -> BinaryMask {
    let meta = GridMeta::cube(side, 1).unwrap();
    let c = (side as f64 - 1.0) / 2.0;
    let r2 = (side as f64 / 3.0).powi(2);
    let data = (0..meta.voxels())
        .map(|v| {
            let [x, y, z] = meta.voxel_coords(v);
            let d2 = [x, y, z].iter().map(|&u| (u as f64 - c).powi(2)).sum::<f64>();
            d2 <= r2
        })
        .collect();
    BinaryMask::new(meta, data).unwrap()
}

pub fn score_vectors(n: usize, dim: usize, seed: u64) -> Vec<ScoreVector> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| ScoreVector::new(format!("c{i}"), (0..dim).map(|_| rng.random_range(0.0..10.0)).collect()))
        .collect()
}

/// Labeled scores on a coarse grid so that ties are common.
pub fn labeled(n: usize, seed: u64) -> Vec<LabeledScore> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let ood = i % 3 == 0;
            let shift = if ood { 2 } else { 0 };
            let score = (rng.random_range(0..20) + shift) as f64 / 4.0;
            LabeledScore::new(format!("c{i}"), score, ood)
        })
        .collect()
}
