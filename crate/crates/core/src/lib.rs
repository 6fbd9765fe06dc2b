//! Epistemic-uncertainty scoring and out-of-distribution gating for
//! ensembles of volumetric segmentation predictions.
//!
//! The pipeline runs from per-voxel ensemble variance, through
//! boundary-suppressed per-organ scores, to a Gaussian reference model of
//! in-distribution scores whose squared Mahalanobis distance is thresholded
//! at a χ² quantile.
//!
//! ```
//! use uq_core::{chi2_quantile, fit_gaussian, mahalanobis_sq, OrganSet, ScoreVector};
//!
//! let organs = OrganSet::numbered(2).unwrap();
//! let train: Vec<_> = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]
//!     .iter()
//!     .map(|s| ScoreVector::new("case", s.to_vec()))
//!     .collect();
//! let model = fit_gaussian(&organs, &train).unwrap();
//! assert_eq!(mahalanobis_sq(&model, &[3.0, 1.0]).unwrap(), 4.0);
//! assert!((chi2_quantile(0.9, 6).unwrap() - 10.6446).abs() < 1e-3);
//! ```

pub mod design;
pub mod error;
pub mod fsio;
pub mod linalg;
pub mod manifest;
pub mod metrics;
pub mod morphology;
pub mod ood;
pub mod phantom;
pub mod pipeline;
pub mod scoring;
pub mod special;
pub mod uncertainty;
pub mod uqv;
pub mod volume;

pub use design::{holdout_learners, plan_partition, verify_plan, PartitionPlan, PlanReport};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{auc, roc_curve, sens_spec_at, trapezoid_area, LabeledScore, RocPoint};
pub use morphology::{binary_dilate, binary_erode, boundary_band, BinaryMask};
pub use ood::{
    conservative_training_scores, detect, fit_gaussian, mahalanobis_sq, GaussianModel,
    LearnerPredictions, OodVerdict,
};
pub use phantom::{generate_case, generate_cohort, OodMode, PhantomCase, PhantomConfig};
pub use pipeline::{export_overlays, run_pipeline, RunConfig, RunSummary};
pub use scoring::{score_predictions, suppress_and_score, CaseOutcome, ScoreVector};
pub use special::chi2_quantile;
pub use uncertainty::{max_projection, variance_map, EnsembleStats, ScalarVolume, UncertaintyMap};
pub use volume::{
    argmax_labels, check_compatible, mean_prediction, GridMeta, LabelVolume, OrganSet, ProbVolume,
};
