//! Boundary-band suppression and per-organ uncertainty sums.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsio;
use crate::morphology::{boundary_band, BinaryMask};
use crate::uncertainty::{max_projection_masked, EnsembleStats, ScalarVolume, UncertaintyMap};
use crate::volume::{argmax_labels, ensure_same_grid, LabelVolume, OrganSet, ProbVolume};

pub const DEFAULT_BOUNDARY_RADIUS: usize = 2;

/// One case's summed uncertainty per foreground organ, in [`OrganSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub case_id: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(case_id: impl Into<String>, scores: Vec<f64>) -> Self {
        ScoreVector {
            case_id: case_id.into(),
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Boundary bands of every organ of a consensus segmentation; entry `m - 1`
/// belongs to organ channel `m`.
pub fn organ_bands(consensus: &LabelVolume, organs: &OrganSet, radius: usize) -> Result<Vec<BinaryMask>> {
    let max = consensus.max_label();
    if max as usize > organs.len() {
        return Err(Error::OrganIndexOutOfRange {
            label: max,
            organs: organs.len(),
        });
    }
    Ok((1..=organs.len())
        .into_par_iter()
        .map(|m| boundary_band(&BinaryMask::from_label(consensus, m as u8), radius))
        .collect())
}

fn check_inputs(umap: &UncertaintyMap, consensus: &LabelVolume, organs: &OrganSet) -> Result<()> {
    ensure_same_grid(umap.meta(), consensus.meta())?;
    if umap.meta().channels != organs.channels() {
        return Err(Error::MetaMismatch(format!(
            "uncertainty map has {} channels, organ set needs {}",
            umap.meta().channels,
            organs.channels()
        )));
    }
    Ok(())
}

/// Sums each organ channel outside that organ's boundary band. The sum runs
/// over the whole grid, not only the organ; background is never scored.
pub fn suppress_and_score(
    umap: &UncertaintyMap,
    consensus: &LabelVolume,
    organs: &OrganSet,
    radius: usize,
    case_id: &str,
) -> Result<ScoreVector> {
    if radius == 0 {
        return Err(Error::InvalidRadius);
    }
    check_inputs(umap, consensus, organs)?;
    let bands = organ_bands(consensus, organs, radius)?;
    let scores = bands
        .par_iter()
        .enumerate()
        .map(|(i, band)| {
            umap.channel(i + 1)
                .iter()
                .zip(band.data())
                .filter(|(_, &in_band)| !in_band)
                .map(|(&u, _)| u as f64)
                .sum::<f64>()
        })
        .collect();
    Ok(ScoreVector::new(case_id, scores))
}

/// Plain per-organ channel sums with no suppression.
pub fn channel_sums(umap: &UncertaintyMap) -> Vec<f64> {
    (1..umap.meta().channels)
        .map(|c| umap.channel(c).iter().map(|&u| u as f64).sum())
        .collect()
}

/// Foreground maximum with each organ channel zeroed inside its own band.
pub fn suppressed_max_projection(
    umap: &UncertaintyMap,
    consensus: &LabelVolume,
    organs: &OrganSet,
    radius: usize,
) -> Result<ScalarVolume> {
    if radius == 0 {
        return Err(Error::InvalidRadius);
    }
    check_inputs(umap, consensus, organs)?;
    let bands = organ_bands(consensus, organs, radius)?;
    max_projection_masked(umap, |c, v| !bands[c - 1].data()[v])
}

/// Everything derived from one case's ensemble.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub heatmap: UncertaintyMap,
    pub consensus: LabelVolume,
    pub scores: ScoreVector,
}

/// Streams an ensemble once: variance heatmap, argmax-of-mean consensus, and
/// band-suppressed organ scores.
pub fn score_predictions<I>(preds: I, organs: &OrganSet, radius: usize, case_id: &str) -> Result<CaseOutcome>
where
    I: IntoIterator<Item = Result<ProbVolume>>,
{
    let mut preds = preds.into_iter();
    let first = preds.next().ok_or(Error::EmptyEnsemble)??;
    let mut stats = EnsembleStats::new(first.meta().clone());
    stats.push(&first)?;
    drop(first);
    for p in preds {
        stats.push(&p?)?;
    }
    let heatmap = stats.variance()?;
    let consensus = argmax_labels(&stats.mean()?);
    let scores = suppress_and_score(&heatmap, &consensus, organs, radius, case_id)?;
    Ok(CaseOutcome {
        heatmap,
        consensus,
        scores,
    })
}

/// Writes `case_id,<organ names...>` followed by one row per case.
/// Floats use the shortest representation that round-trips.
pub fn write_scores_csv(path: &Path, organs: &OrganSet, rows: &[ScoreVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("case_id").chain(organs.names().iter().map(String::as_str));
    w.write_record(header).map_err(|e| Error::format(path, e))?;
    for row in rows {
        if row.len() != organs.len() {
            return Err(Error::DimensionMismatch {
                expected: organs.len(),
                got: row.len(),
            });
        }
        let fields = std::iter::once(row.case_id.clone()).chain(row.scores.iter().map(|s| s.to_string()));
        w.write_record(fields).map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    fsio::write_atomic(path, &bytes)
}

pub fn read_scores_csv(path: &Path) -> Result<(OrganSet, Vec<ScoreVector>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| Error::format(path, e))?.clone();
    if headers.get(0) != Some("case_id") {
        return Err(Error::format(path, "first column must be case_id"));
    }
    let organs = OrganSet::new(headers.iter().skip(1)).map_err(|e| Error::format(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let case_id = rec.get(0).unwrap_or_default().to_string();
        let scores = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("case {case_id}: {e}")))?;
        if scores.len() != organs.len() {
            return Err(Error::format(path, format!("case {case_id}: wrong column count")));
        }
        rows.push(ScoreVector { case_id, scores });
    }
    Ok((organs, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::BinaryMask;
    use crate::volume::GridMeta;

    fn organs(m: usize) -> OrganSet {
        OrganSet::numbered(m).unwrap()
    }

    /// Consensus with one organ: a 4^3 block at the centre of a 12^3 grid.
    fn cube_consensus() -> LabelVolume {
        let meta = GridMeta::cube(12, 1).unwrap();
        let mut labels = vec![0u8; meta.voxels()];
        for z in 4..8 {
            for y in 4..8 {
                for x in 4..8 {
                    labels[meta.voxel_index(x, y, z)] = 1;
                }
            }
        }
        LabelVolume::new(meta, labels).unwrap()
    }

    fn uniform_map(meta: &GridMeta, channels: usize, per_channel: &[f32]) -> UncertaintyMap {
        let n = meta.voxels();
        let data = (0..channels).flat_map(|c| std::iter::repeat_n(per_channel[c], n)).collect();
        UncertaintyMap::new(meta.with_channels(channels), data, 32).unwrap()
    }

    #[test]
    fn uniform_channel_scores_outside_band() {
        let cons = cube_consensus();
        let u = 0.01f32;
        let umap = uniform_map(cons.meta(), 2, &[0.5, u]);
        let band = boundary_band(&BinaryMask::from_label(&cons, 1), 2);
        let b = band.count();
        let s = suppress_and_score(&umap, &cons, &organs(1), 2, "c").unwrap();
        let want = u as f64 * (cons.meta().voxels() - b) as f64;
        assert!((s.scores[0] - want).abs() < 1e-9 * want);
    }

    #[test]
    fn band_only_uncertainty_is_fully_suppressed() {
        let cons = cube_consensus();
        let band = boundary_band(&BinaryMask::from_label(&cons, 1), 2);
        let n = cons.meta().voxels();
        let mut data = vec![0.0f32; 2 * n];
        for (v, &b) in band.data().iter().enumerate() {
            if b {
                data[n + v] = 0.2;
                data[v] = 0.1;
            }
        }
        let umap = UncertaintyMap::new(cons.meta().with_channels(2), data, 32).unwrap();
        let s = suppress_and_score(&umap, &cons, &organs(1), 2, "c").unwrap();
        assert_eq!(s.scores, vec![0.0]);
        let overlay = suppressed_max_projection(&umap, &cons, &organs(1), 2).unwrap();
        assert!(overlay.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_map_scores_zero() {
        let cons = cube_consensus();
        let umap = uniform_map(cons.meta(), 4, &[0.0; 4]);
        let s = suppress_and_score(&umap, &cons, &organs(3), 1, "z").unwrap();
        assert_eq!(s.scores, vec![0.0; 3]);
    }

    #[test]
    fn scoring_errors() {
        let cons = cube_consensus();
        let umap = uniform_map(cons.meta(), 2, &[0.0, 0.1]);
        assert!(matches!(
            suppress_and_score(&umap, &cons, &organs(1), 0, "c"),
            Err(Error::InvalidRadius)
        ));
        assert!(matches!(
            suppress_and_score(&umap, &cons, &organs(2), 1, "c"),
            Err(Error::MetaMismatch(_))
        ));
        let bad = LabelVolume::new(cons.meta().clone(), vec![3; cons.meta().voxels()]).unwrap();
        assert!(matches!(
            suppress_and_score(&umap, &bad, &organs(1), 1, "c"),
            Err(Error::OrganIndexOutOfRange { label: 3, .. })
        ));
        let other = LabelVolume::new(GridMeta::cube(10, 1).unwrap(), vec![0; 1000]).unwrap();
        assert!(matches!(
            suppress_and_score(&umap, &other, &organs(1), 1, "c"),
            Err(Error::MetaMismatch(_))
        ));
    }

    #[test]
    fn no_organ_voxels_means_plain_sums() {
        let meta = GridMeta::cube(6, 1).unwrap();
        let cons = LabelVolume::new(meta.clone(), vec![0; 216]).unwrap();
        let data: Vec<f32> = (0..3 * 216).map(|i| (i % 7) as f32 * 0.01).collect();
        let umap = UncertaintyMap::new(meta.with_channels(3), data, 8).unwrap();
        let s = suppress_and_score(&umap, &cons, &organs(2), 2, "c").unwrap();
        assert_eq!(s.scores, channel_sums(&umap));
    }

    #[test]
    fn larger_radius_never_raises_scores() {
        let cons = cube_consensus();
        let n = cons.meta().voxels();
        let data: Vec<f32> = (0..2 * n).map(|i| ((i * 37) % 11) as f32 * 1e-3).collect();
        let umap = UncertaintyMap::new(cons.meta().with_channels(2), data, 32).unwrap();
        let mut last = f64::INFINITY;
        for r in 1..6 {
            let s = suppress_and_score(&umap, &cons, &organs(1), r, "c").unwrap().scores[0];
            assert!(s <= last);
            last = s;
        }
    }

    #[test]
    fn csv_round_trip_keeps_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let o = OrganSet::pelvic();
        let rows = vec![
            ScoreVector::new("a", vec![0.1, 1.0 / 3.0, 2e-17, 12345.678, 0.0, 7.0]),
            ScoreVector::new("b", vec![1.0; 6]),
        ];
        write_scores_csv(&path, &o, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("case_id,Bladder,Prostate,Rectum,FemoralHeadLeft,FemoralHeadRight,SeminalVesicles\n"));
        let (o2, back) = read_scores_csv(&path).unwrap();
        assert_eq!(o2, o);
        assert_eq!(back, rows);
    }
}
