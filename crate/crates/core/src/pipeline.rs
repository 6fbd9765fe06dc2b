//! End-to-end run over a cohort directory: holdout training scores, model
//! fit, χ² threshold, full-ensemble test scores, verdicts and evaluation.
//!
//! Training cases are scored with their holdout learners only, test cases
//! with every prediction in their manifest. The threshold depends only on
//! the level and the organ count.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::PartitionPlan;
use crate::error::{Error, Result};
use crate::fsio;
use crate::manifest::{CaseManifest, CohortCase, CohortManifest, Role};
use crate::metrics::{auc, rates_at, read_labels_csv, roc_curve, write_roc_csv, LabeledScore};
use crate::ood::{check_holdout_coverage, detect, fit_gaussian, write_verdicts_csv, OodVerdict};
use crate::scoring::{score_predictions, suppressed_max_projection, write_scores_csv, CaseOutcome, DEFAULT_BOUNDARY_RADIUS};
use crate::special::chi2_quantile;
use crate::uncertainty::max_projection;
use crate::uqv::{read_label_volume, read_prob_volume, read_uncertainty_map, write_label_volume, write_scalar_volume, write_uncertainty_map};
use crate::volume::OrganSet;

pub const HEATMAP_FILE: &str = "heatmap.uqv";
pub const CONSENSUS_FILE: &str = "consensus.uqv";
pub const RAW_OVERLAY_FILE: &str = "raw_max.uqv";
pub const SUPPRESSED_OVERLAY_FILE: &str = "suppressed_max.uqv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub radius: usize,
    pub level: f64,
    /// Only the unbiased sample variance ("sample") is supported.
    pub estimator: String,
    /// Worker threads for per-case stages; 0 uses the rayon default.
    pub jobs: usize,
    /// Output directory; defaults to `<cohort>/run`.
    pub out_dir: Option<PathBuf>,
    /// Keep per-case heatmaps and consensus labels of test cases.
    pub keep_heatmaps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            radius: DEFAULT_BOUNDARY_RADIUS,
            level: crate::ood::DEFAULT_LEVEL,
            estimator: "sample".into(),
            jobs: 0,
            out_dir: None,
            keep_heatmaps: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::InvalidRadius);
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::LevelOutOfRange(self.level));
        }
        if self.estimator != "sample" {
            return Err(Error::ConfigInvalid(format!(
                "unsupported variance estimator {:?}",
                self.estimator
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: PathBuf,
    pub organs: Vec<String>,
    pub level: f64,
    pub threshold: f64,
    pub ridge_applied: f64,
    pub n_train: usize,
    pub n_control: usize,
    pub n_ood: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    /// Sensitivity over all OOD cases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sensitivity_by_subset: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<f64>,
}

/// Scores a case from its manifest. With `learners` given, only predictions
/// of those learners are used.
pub fn score_manifest(
    manifest_path: &Path,
    organs: &OrganSet,
    radius: usize,
    learners: Option<&[usize]>,
) -> Result<CaseOutcome> {
    let manifest = CaseManifest::read(manifest_path)?;
    let paths: Vec<PathBuf> = match learners {
        None => manifest.resolved(manifest_path),
        Some(ls) => {
            let by = manifest.by_learner(manifest_path)?;
            ls.iter().flat_map(|l| by.get(l).cloned().unwrap_or_default()).collect()
        }
    };
    score_predictions(paths.iter().map(|p| read_prob_volume(p)), organs, radius, &manifest.case_id)
}

/// Holdout-only scores of one training case.
pub fn score_training_case(
    plan: &PartitionPlan,
    case: usize,
    manifest_path: &Path,
    organs: &OrganSet,
    radius: usize,
) -> Result<CaseOutcome> {
    let manifest = CaseManifest::read(manifest_path)?;
    let by = manifest.by_learner(manifest_path)?;
    let available = by.iter().map(|(&l, v)| (l, v.len())).collect();
    let holdout = check_holdout_coverage(plan, case, &manifest.case_id, &available)?;
    let paths = holdout.iter().flat_map(|l| by[l].iter());
    score_predictions(paths.map(|p| read_prob_volume(p)), organs, radius, &manifest.case_id)
}

/// Runs `f` on a rayon pool of `jobs` threads, or the global pool for 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn case_out_dir(out: &Path, case_id: &str) -> PathBuf {
    out.join("cases").join(case_id)
}

/// Runs the whole train-fit-detect-evaluate loop on a cohort directory.
pub fn run_pipeline(cohort_dir: &Path, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let cohort_path = cohort_dir.join(CohortManifest::FILE_NAME);
    let cohort = CohortManifest::read(&cohort_path)?;
    let plan_path = fsio::resolve_relative(&cohort_path, &cohort.plan);
    let plan = PartitionPlan::read(&plan_path)?;
    let organs = &cohort.organs;
    let out = cfg.out_dir.clone().unwrap_or_else(|| cohort_dir.join("run"));

    let train: Vec<&CohortCase> = cohort.with_role(Role::Train).collect();
    if train.len() != plan.n_cases {
        return Err(Error::DimensionMismatch {
            expected: plan.n_cases,
            got: train.len(),
        });
    }
    let test: Vec<&CohortCase> = cohort.cases.iter().filter(|c| c.role != Role::Train).collect();

    let train_scores = with_jobs(cfg.jobs, || {
        train
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let manifest = fsio::resolve_relative(&cohort_path, &c.manifest);
                score_training_case(&plan, i, &manifest, organs, cfg.radius).map(|o| o.scores)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    info!("scored {} training cases on holdout learners", train_scores.len());
    write_scores_csv(&out.join("train_scores.csv"), organs, &train_scores)?;

    let model = fit_gaussian(organs, &train_scores)?;
    let model_path = out.join("model.json");
    model.write(&model_path)?;
    let threshold = chi2_quantile(cfg.level, organs.len())?;
    info!("threshold {threshold} at level {} for {} organs", cfg.level, organs.len());

    let test_scores = with_jobs(cfg.jobs, || {
        test.par_iter()
            .map(|c| {
                let manifest = fsio::resolve_relative(&cohort_path, &c.manifest);
                let outcome = score_manifest(&manifest, organs, cfg.radius, None)?;
                if cfg.keep_heatmaps {
                    let dir = case_out_dir(&out, &c.case_id);
                    write_uncertainty_map(&dir.join(HEATMAP_FILE), &outcome.heatmap)?;
                    write_label_volume(&dir.join(CONSENSUS_FILE), &outcome.consensus)?;
                }
                Ok(outcome.scores)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    write_scores_csv(&out.join("test_scores.csv"), organs, &test_scores)?;

    let verdicts = test_scores
        .iter()
        .map(|s| detect(&model, s, cfg.level))
        .collect::<Result<Vec<OodVerdict>>>()?;
    write_verdicts_csv(&out.join("verdicts.csv"), &verdicts)?;

    let labels: HashMap<String, bool> = match &cohort.labels {
        Some(rel) => read_labels_csv(&fsio::resolve_relative(&cohort_path, rel))?,
        None => test.iter().map(|c| (c.case_id.clone(), c.role == Role::Ood)).collect(),
    };
    let labeled: Vec<(LabeledScore, &CohortCase)> = verdicts
        .iter()
        .zip(&test)
        .filter_map(|(v, c)| {
            labels
                .get(&v.case_id)
                .map(|&ood| (LabeledScore::new(v.case_id.clone(), v.d_squared, ood), *c))
        })
        .collect();
    let samples: Vec<LabeledScore> = labeled.iter().map(|(s, _)| s.clone()).collect();
    let (sensitivity, specificity) = rates_at(&samples, threshold);

    let mut sensitivity_by_subset = BTreeMap::new();
    let mut subsets: BTreeMap<String, Vec<LabeledScore>> = BTreeMap::new();
    for (s, c) in labeled.iter().filter(|(s, _)| s.ood) {
        let name = c.subset.clone().unwrap_or_else(|| "ood".into());
        subsets.entry(name).or_default().push(s.clone());
    }
    for (name, group) in subsets {
        if let (Some(sens), _) = rates_at(&group, threshold) {
            sensitivity_by_subset.insert(name, sens);
        }
    }

    let auc_value = if sensitivity.is_some() && specificity.is_some() {
        write_roc_csv(&out.join("roc.csv"), &roc_curve(&samples)?)?;
        Some(auc(&samples)?)
    } else {
        None
    };

    let summary = RunSummary {
        model: model_path,
        organs: organs.names().to_vec(),
        level: cfg.level,
        threshold,
        ridge_applied: model.ridge_applied(),
        n_train: train.len(),
        n_control: test.iter().filter(|c| c.role == Role::Control).count(),
        n_ood: test.iter().filter(|c| c.role == Role::Ood).count(),
        auc: auc_value,
        sensitivity,
        sensitivity_by_subset,
        specificity,
    };
    fsio::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes the raw and band-suppressed foreground maxima of a case heatmap
/// into `out_dir` and returns their paths.
pub fn export_overlays(case_dir: &Path, out_dir: &Path, radius: usize) -> Result<(PathBuf, PathBuf)> {
    let consensus = read_label_volume(&case_dir.join(CONSENSUS_FILE))?;
    // the sample count only matters for the variance ceiling
    let umap = read_uncertainty_map(&case_dir.join(HEATMAP_FILE), 2)?;
    let organs = OrganSet::numbered(umap.meta().channels.saturating_sub(1))?;
    let raw = max_projection(&umap)?;
    let suppressed = suppressed_max_projection(&umap, &consensus, &organs, radius)?;
    let raw_path = out_dir.join(RAW_OVERLAY_FILE);
    let suppressed_path = out_dir.join(SUPPRESSED_OVERLAY_FILE);
    write_scalar_volume(&raw_path, &raw)?;
    write_scalar_volume(&suppressed_path, &suppressed)?;
    Ok((raw_path, suppressed_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_cohort, OodMode, PhantomConfig};
    use crate::uncertainty::UncertaintyMap;
    use crate::uqv::read_scalar_volume;
    use crate::volume::{GridMeta, LabelVolume};

    fn tiny(mode: OodMode) -> PhantomConfig {
        PhantomConfig {
            dims: [16; 3],
            n_organs: 2,
            n_learners: 4,
            passes: 2,
            replication: 2,
            ood_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn config_checks() {
        assert!(RunConfig::default().validate().is_ok());
        let bad_level = RunConfig { level: 1.0, ..Default::default() };
        assert!(matches!(bad_level.validate(), Err(Error::LevelOutOfRange(_))));
        let bad_radius = RunConfig { radius: 0, ..Default::default() };
        assert!(matches!(bad_radius.validate(), Err(Error::InvalidRadius)));
        let bad_est = RunConfig { estimator: "population".into(), ..Default::default() };
        assert!(bad_est.validate().is_err());
    }

    #[test]
    fn missing_plan() {
        let dir = tempfile::tempdir().unwrap();
        generate_cohort(&tiny(OodMode::None), 12, 2, 0, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("plan.json")).unwrap();
        assert!(matches!(run_pipeline(dir.path(), &RunConfig::default()), Err(Error::MissingPlan(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(run_pipeline(empty.path(), &RunConfig::default()), Err(Error::MissingManifest(_))));
    }

    #[test]
    fn threshold_ignores_test_cases() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_cohort(&tiny(OodMode::FocalArtifact), 12, 3, 3, a.path()).unwrap();
        generate_cohort(&tiny(OodMode::FocalArtifact), 12, 3, 0, b.path()).unwrap();
        let sa = run_pipeline(a.path(), &RunConfig::default()).unwrap();
        let sb = run_pipeline(b.path(), &RunConfig::default()).unwrap();
        assert_eq!(sa.threshold, sb.threshold);
        assert_eq!(sa.threshold, chi2_quantile(0.9, 2).unwrap());
        assert!(sa.auc.is_some_and(|a| (0.0..=1.0).contains(&a)));
        assert!(sa.sensitivity_by_subset.contains_key("focal-artifact"));
        assert!(sb.auc.is_none() && sb.sensitivity.is_none());
        assert!(sb.specificity.is_some());
        // same model either way
        let ma = std::fs::read(a.path().join("run/model.json")).unwrap();
        let mb = std::fs::read(b.path().join("run/model.json")).unwrap();
        assert_eq!(ma, mb);
        assert!(a.path().join("run/roc.csv").exists());
        assert!(!b.path().join("run/roc.csv").exists());
    }

    fn write_case(dir: &Path, heat: Vec<f32>, labels: Vec<u8>) {
        let meta = GridMeta::cube(8, 2).unwrap();
        let umap = UncertaintyMap::new(meta.clone(), heat, 4).unwrap();
        write_uncertainty_map(&dir.join(HEATMAP_FILE), &umap).unwrap();
        write_label_volume(&dir.join(CONSENSUS_FILE), &LabelVolume::new(meta.with_channels(1), labels).unwrap()).unwrap();
    }

    #[test]
    fn overlays() {
        let dir = tempfile::tempdir().unwrap();
        let meta = GridMeta::cube(8, 1).unwrap();
        let mut labels = vec![0u8; 512];
        for z in 2..6 {
            for y in 2..6 {
                for x in 2..6 {
                    labels[meta.voxel_index(x, y, z)] = 1;
                }
            }
        }
        write_case(dir.path(), vec![0.0; 1024], labels.clone());
        let (raw, sup) = export_overlays(dir.path(), dir.path(), 2).unwrap();
        assert!(read_scalar_volume(&raw).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(read_scalar_volume(&sup).unwrap().data().iter().all(|&v| v == 0.0));

        // organ 1 uncertain only on its own boundary voxel
        let mut heat = vec![0.0f32; 1024];
        heat[512 + meta.voxel_index(2, 2, 2)] = 0.25;
        write_case(dir.path(), heat, labels);
        let (raw, sup) = export_overlays(dir.path(), dir.path(), 2).unwrap();
        let first = std::fs::read(&raw).unwrap();
        assert!(read_scalar_volume(&raw).unwrap().data().contains(&0.25));
        assert!(read_scalar_volume(&sup).unwrap().data().iter().all(|&v| v == 0.0));
        export_overlays(dir.path(), dir.path(), 2).unwrap();
        assert_eq!(std::fs::read(&raw).unwrap(), first);
    }
}
