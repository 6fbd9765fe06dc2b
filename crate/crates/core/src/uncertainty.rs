//! Voxelwise ensemble variance and its foreground maximum projection.

use crate::error::{Error, Result};
use crate::volume::{ensure_compatible, GridMeta, MeanAccumulator, ProbVolume};

/// Per-voxel, per-class unbiased sample variance across an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    meta: GridMeta,
    data: Vec<f32>,
    n_samples: usize,
}

impl UncertaintyMap {
    pub fn new(meta: GridMeta, data: Vec<f32>, n_samples: usize) -> Result<Self> {
        if data.len() != meta.len() {
            return Err(Error::InvalidVolume(format!(
                "payload has {} values, grid needs {}",
                data.len(),
                meta.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidVolume(format!("variance {v} is not a finite non-negative value")));
        }
        Ok(UncertaintyMap {
            meta,
            data,
            n_samples,
        })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.meta.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Largest sample variance a `[0, 1]` variable can reach with this many samples.
    pub fn variance_ceiling(&self) -> f64 {
        let n = self.n_samples as f64;
        0.25 * n / (n - 1.0)
    }
}

/// A single-channel real-valued volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    meta: GridMeta,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(meta: GridMeta, data: Vec<f32>) -> Result<Self> {
        if meta.channels != 1 || data.len() != meta.voxels() {
            return Err(Error::InvalidVolume(format!(
                "scalar volume needs 1 channel and {} values",
                meta.voxels()
            )));
        }
        Ok(ScalarVolume { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Single-pass (Welford) accumulator over ensemble members. Also tracks the
/// plain mean so consensus labels come from the same pass over the data.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    meta: GridMeta,
    mean: Vec<f64>,
    m2: Vec<f64>,
    sum: MeanAccumulator,
    count: usize,
}

impl EnsembleStats {
    pub fn new(meta: GridMeta) -> Self {
        let n = meta.len();
        EnsembleStats {
            sum: MeanAccumulator::new(meta.clone()),
            meta,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            count: 0,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, pred: &ProbVolume) -> Result<()> {
        ensure_compatible(&self.meta, pred.meta())?;
        self.count += 1;
        let k = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(pred.data()) {
            let x = x as f64;
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
        self.sum.push(pred.data());
        Ok(())
    }

    pub fn variance(&self) -> Result<UncertaintyMap> {
        match self.count {
            0 => return Err(Error::EmptyEnsemble),
            1 => return Err(Error::SingleSample),
            _ => {}
        }
        let denom = (self.count - 1) as f64;
        let data = self.m2.iter().map(|&m2| (m2.max(0.0) / denom) as f32).collect();
        UncertaintyMap::new(self.meta.clone(), data, self.count)
    }

    pub fn mean(&self) -> Result<ProbVolume> {
        self.sum.clone().finish()
    }
}

/// Unbiased (n - 1) sample variance of every voxel and channel across `preds`.
pub fn variance_map(preds: &[ProbVolume]) -> Result<UncertaintyMap> {
    let first = preds.first().ok_or(Error::EmptyEnsemble)?;
    if preds.len() == 1 {
        return Err(Error::SingleSample);
    }
    let mut stats = EnsembleStats::new(first.meta().clone());
    for p in preds {
        stats.push(p)?;
    }
    stats.variance()
}

/// Per-voxel maximum over the organ channels; background is ignored.
pub fn max_projection(umap: &UncertaintyMap) -> Result<ScalarVolume> {
    max_projection_masked(umap, |_, _| true)
}

/// Like [`max_projection`], but only counts `(channel, voxel)` entries for
/// which `keep` returns true.
pub(crate) fn max_projection_masked(
    umap: &UncertaintyMap,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<ScalarVolume> {
    let meta = umap.meta();
    if meta.channels < 2 {
        return Err(Error::NoForegroundChannels);
    }
    let mut out = vec![0.0f32; meta.voxels()];
    for c in 1..meta.channels {
        for (v, (o, &u)) in out.iter_mut().zip(umap.channel(c)).enumerate() {
            if u > *o && keep(c, v) {
                *o = u;
            }
        }
    }
    ScalarVolume::new(meta.with_channels(1), out)
}
