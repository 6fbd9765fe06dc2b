//! Volumetric grids, channel conventions and consensus fusion.
//!
//! All volumes store their payload channel-slowest, then z, then y, with x
//! varying fastest. Channel 0 is background; organ channels are `1..=M` in
//! [`OrganSet`] order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-voxel tolerance on the channel sum of a probability volume.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

const SPACING_REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    pub channels: usize,
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], channels: usize) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidVolume("channels must be >= 1".into()));
        }
        Ok(GridMeta {
            dims,
            spacing,
            channels,
        })
    }

    /// Isotropic 1 mm grid.
    pub fn cube(side: usize, channels: usize) -> Result<Self> {
        Self::new([side; 3], [1.0; 3], channels)
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.voxels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same grid, different channel count.
    pub fn with_channels(&self, channels: usize) -> GridMeta {
        GridMeta {
            channels,
            ..self.clone()
        }
    }

    /// Linear voxel index of `(x, y, z)`.
    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn voxel_coords(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [v % nx, (v / nx) % ny, v / (nx * ny)]
    }
}

/// Compares two grids. `Ok` iff dims, spacing (relative 1e-6) and channels agree;
/// otherwise a description of the first difference.
pub fn check_compatible(a: &GridMeta, b: &GridMeta) -> std::result::Result<(), String> {
    for axis in 0..3 {
        if a.dims[axis] != b.dims[axis] {
            return Err(format!(
                "dims differ on axis {}: {} vs {}",
                axis + 1,
                a.dims[axis],
                b.dims[axis]
            ));
        }
    }
    for axis in 0..3 {
        let (sa, sb) = (a.spacing[axis], b.spacing[axis]);
        if (sa - sb).abs() > SPACING_REL_TOLERANCE * sa.abs().max(sb.abs()) {
            return Err(format!("spacing differs on axis {}: {sa} vs {sb}", axis + 1));
        }
    }
    if a.channels != b.channels {
        return Err(format!("channels differ: {} vs {}", a.channels, b.channels));
    }
    Ok(())
}

pub(crate) fn ensure_compatible(a: &GridMeta, b: &GridMeta) -> Result<()> {
    check_compatible(a, b).map_err(Error::MetaMismatch)
}

/// Grid-only comparison, ignoring channel counts.
pub(crate) fn ensure_same_grid(a: &GridMeta, b: &GridMeta) -> Result<()> {
    ensure_compatible(a, &b.with_channels(a.channels))
}

/// One ensemble member's per-voxel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    meta: GridMeta,
    data: Vec<f32>,
}

impl ProbVolume {
    /// Validates range and per-voxel normalization.
    pub fn new(meta: GridMeta, data: Vec<f32>) -> Result<Self> {
        if data.len() != meta.len() {
            return Err(Error::InvalidVolume(format!(
                "payload has {} values, grid needs {}",
                data.len(),
                meta.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(format!(
                "probability {} at index {pos} outside [0, 1]",
                data[pos]
            )));
        }
        let voxels = meta.voxels();
        for v in 0..voxels {
            let sum: f64 = (0..meta.channels).map(|c| data[c * voxels + v] as f64).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                let [x, y, z] = meta.voxel_coords(v);
                return Err(Error::InvalidVolume(format!(
                    "channel sum {sum} at voxel ({x}, {y}, {z}) is not 1"
                )));
            }
        }
        Ok(ProbVolume { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.meta.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Integer label per voxel (single channel).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    meta: GridMeta,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(meta: GridMeta, data: Vec<u8>) -> Result<Self> {
        if meta.channels != 1 {
            return Err(Error::InvalidVolume(format!(
                "label volume must have 1 channel, got {}",
                meta.channels
            )));
        }
        if data.len() != meta.voxels() {
            return Err(Error::InvalidVolume(format!(
                "payload has {} labels, grid needs {}",
                data.len(),
                meta.voxels()
            )));
        }
        Ok(LabelVolume { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Ordered foreground organ names. Channel 0 is always `"background"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct OrganSet {
    names: Vec<String>,
}

impl OrganSet {
    pub const BACKGROUND: &'static str = "background";

    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidOrganSet("need at least one organ".into()));
        }
        if names.len() > u8::MAX as usize - 1 {
            return Err(Error::InvalidOrganSet(format!(
                "{} organs do not fit 8-bit labels",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::InvalidOrganSet(format!("organ {} has an empty name", i + 1)));
            }
            if n == Self::BACKGROUND {
                return Err(Error::InvalidOrganSet("\"background\" is reserved".into()));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidOrganSet(format!("duplicate organ name {n:?}")));
            }
        }
        Ok(OrganSet { names })
    }

    /// Six pelvic organs at risk in the usual channel order.
    pub fn pelvic() -> Self {
        OrganSet::new([
            "Bladder",
            "Prostate",
            "Rectum",
            "FemoralHeadLeft",
            "FemoralHeadRight",
            "SeminalVesicles",
        ])
        .expect("static organ list is valid")
    }

    /// Generic names `organ1..organM`.
    pub fn numbered(m: usize) -> Result<Self> {
        OrganSet::new((1..=m).map(|i| format!("organ{i}")))
    }

    /// Number of foreground organs M.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.names.len() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Name of a channel, with 0 mapping to background.
    pub fn channel_name(&self, channel: usize) -> Option<&str> {
        match channel {
            0 => Some(Self::BACKGROUND),
            c => self.names.get(c - 1).map(String::as_str),
        }
    }
}

impl TryFrom<Vec<String>> for OrganSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        OrganSet::new(names)
    }
}

impl From<OrganSet> for Vec<String> {
    fn from(o: OrganSet) -> Self {
        o.names
    }
}

/// Running per-entry sum for the ensemble mean.
#[derive(Debug, Clone)]
pub(crate) struct MeanAccumulator {
    meta: GridMeta,
    sum: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub(crate) fn new(meta: GridMeta) -> Self {
        let sum = vec![0.0; meta.len()];
        MeanAccumulator { meta, sum, count: 0 }
    }

    pub(crate) fn push(&mut self, values: &[f32]) {
        debug_assert_eq!(values.len(), self.sum.len());
        for (s, &v) in self.sum.iter_mut().zip(values) {
            *s += v as f64;
        }
        self.count += 1;
    }

    pub(crate) fn finish(self) -> Result<ProbVolume> {
        if self.count == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let n = self.count as f64;
        let data = self.sum.into_iter().map(|s| (s / n) as f32).collect();
        ProbVolume::new(self.meta, data)
    }
}

/// Voxelwise arithmetic mean of an ensemble.
pub fn mean_prediction(preds: &[ProbVolume]) -> Result<ProbVolume> {
    let first = preds.first().ok_or(Error::EmptyEnsemble)?;
    let mut acc = MeanAccumulator::new(first.meta.clone());
    for p in preds {
        ensure_compatible(&first.meta, &p.meta)?;
        acc.push(&p.data);
    }
    acc.finish()
}

/// Per-voxel index of the largest channel; ties go to the lowest channel.
pub fn argmax_labels(prob: &ProbVolume) -> LabelVolume {
    let meta = &prob.meta;
    let voxels = meta.voxels();
    let mut labels = vec![0u8; voxels];
    let mut best = prob.channel(0).to_vec();
    for c in 1..meta.channels {
        for ((b, l), &v) in best.iter_mut().zip(labels.iter_mut()).zip(prob.channel(c)) {
            if v > *b {
                *b = v;
                *l = c as u8;
            }
        }
    }
    LabelVolume {
        meta: meta.with_channels(1),
        data: labels,
    }
}
