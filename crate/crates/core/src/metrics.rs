//! ROC analysis for OOD scores. Label 1 (OOD) is the positive class and
//! larger scores mean "more OOD".

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub case_id: String,
    pub score: f64,
    /// true = OOD (label 1), false = ID (label 0)
    pub ood: bool,
}

impl LabeledScore {
    pub fn new(case_id: impl Into<String>, score: f64, ood: bool) -> Self {
        LabeledScore {
            case_id: case_id.into(),
            score,
            ood,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Cases scoring at or above this value are called OOD at this point.
    pub threshold: f64,
}

fn class_counts(samples: &[LabeledScore]) -> Result<(usize, usize)> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::NonFiniteScore(s.case_id.clone()));
    }
    let pos = samples.iter().filter(|s| s.ood).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::OneClassOnly);
    }
    Ok((pos, neg))
}

/// ROC points from a descending threshold sweep, starting at (0, 0) for a
/// threshold of +inf and ending at (1, 1). Equal scores move together in a
/// single (possibly diagonal) step.
pub fn roc_curve(samples: &[LabeledScore]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(samples)?;
    let mut sorted: Vec<&LabeledScore> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].ood {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a curve returned by [`roc_curve`].
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mann-Whitney AUC: the share of (OOD, ID) pairs where the OOD case scores
/// higher, with ties counting one half.
pub fn auc(samples: &[LabeledScore]) -> Result<f64> {
    let (pos, neg) = class_counts(samples)?;
    let mut wins = 0.0;
    for p in samples.iter().filter(|s| s.ood) {
        for n in samples.iter().filter(|s| !s.ood) {
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// `(sensitivity, specificity)` with OOD called for `score > threshold`,
/// matching the strict rule of the detector.
pub fn sens_spec_at(samples: &[LabeledScore], threshold: f64) -> Result<(f64, f64)> {
    let (pos, neg) = class_counts(samples)?;
    Ok((sensitivity_at(samples, threshold, pos), specificity_at(samples, threshold, neg)))
}

fn sensitivity_at(samples: &[LabeledScore], threshold: f64, pos: usize) -> f64 {
    let hit = samples.iter().filter(|s| s.ood && s.score > threshold).count();
    hit as f64 / pos as f64
}

fn specificity_at(samples: &[LabeledScore], threshold: f64, neg: usize) -> f64 {
    let pass = samples.iter().filter(|s| !s.ood && s.score <= threshold).count();
    pass as f64 / neg as f64
}

/// Share of samples (of whichever classes are present) on the correct side
/// of the threshold, per class; `None` for an absent class.
pub fn rates_at(samples: &[LabeledScore], threshold: f64) -> (Option<f64>, Option<f64>) {
    let pos = samples.iter().filter(|s| s.ood).count();
    let neg = samples.len() - pos;
    let sens = (pos > 0).then(|| sensitivity_at(samples, threshold, pos));
    let spec = (neg > 0).then(|| specificity_at(samples, threshold, neg));
    (sens, spec)
}

/// Labels CSV: `case_id,label` with label 0 (ID) or 1 (OOD).
pub fn read_labels_csv(path: &Path) -> Result<HashMap<String, bool>> {
    #[derive(Deserialize)]
    struct Row {
        case_id: String,
        label: u8,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut out = HashMap::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::format(path, e))?;
        let ood = match row.label {
            0 => false,
            1 => true,
            other => return Err(Error::format(path, format!("label {other} is not 0 or 1"))),
        };
        out.insert(row.case_id, ood);
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, labels: &[(String, bool)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "label"]).map_err(|e| Error::format(path, e))?;
    for (id, ood) in labels {
        w.write_record([id.as_str(), if *ood { "1" } else { "0" }])
            .map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    fsio::write_atomic(path, &bytes)
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"]).map_err(|e| Error::format(path, e))?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    fsio::write_atomic(path, &bytes)
}
