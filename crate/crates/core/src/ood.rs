//! In-distribution reference model over organ score vectors and the
//! Mahalanobis / χ² out-of-distribution test.
//!
//! Training cases are scored with only the learners that never saw them
//! (see [`conservative_training_scores`]). A multivariate Gaussian with the
//! per-organ means and a shared `M x M` covariance (maximum-likelihood, `1/N`)
//! is fitted to those vectors. Under that model the squared Mahalanobis
//! distance of a new vector is χ²-distributed with `M` degrees of freedom, so
//! the decision threshold comes from the χ² quantile alone and needs no OOD
//! or held-out ID data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{holdout_learners, PartitionPlan};
use crate::error::{Error, Result};
use crate::fsio;
use crate::linalg::Cholesky;
use crate::scoring::{score_predictions, ScoreVector};
use crate::special::chi2_quantile;
use crate::volume::{OrganSet, ProbVolume};

pub const DEFAULT_LEVEL: f64 = 0.9;

/// Ridge multipliers tried in order when the covariance will not factor.
const RIDGE_STEPS: [f64; 7] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

const SYMMETRY_TOL: f64 = 1e-9;

const NORMALIZATION: &str = "1/N";

#[derive(Debug, Clone)]
pub struct GaussianModel {
    organs: OrganSet,
    mu: Vec<f64>,
    /// Row-major, ridge already added.
    sigma: Vec<f64>,
    n_train: usize,
    ridge_applied: f64,
    chol: Cholesky,
}

impl PartialEq for GaussianModel {
    fn eq(&self, other: &Self) -> bool {
        self.organs == other.organs
            && self.mu == other.mu
            && self.sigma == other.sigma
            && self.n_train == other.n_train
            && self.ridge_applied == other.ridge_applied
    }
}

impl GaussianModel {
    /// Builds a model from stored parameters, checking shape, symmetry and
    /// positive-definiteness.
    pub fn from_parts(
        organs: OrganSet,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        n_train: usize,
        ridge_applied: f64,
    ) -> Result<Self> {
        let m = organs.len();
        if mu.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: mu.len(),
            });
        }
        if sigma.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                got: sigma.len(),
            });
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore("model parameters".into()));
        }
        for i in 0..m {
            for j in 0..i {
                let (a, b) = (sigma[i * m + j], sigma[j * m + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::ConfigInvalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = Cholesky::factor(&sigma, m).ok_or(Error::SingularCovariance {
            ridge: ridge_applied,
        })?;
        Ok(GaussianModel {
            organs,
            mu,
            sigma,
            n_train,
            ridge_applied,
            chol,
        })
    }

    pub fn organs(&self) -> &OrganSet {
        &self.organs
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn ridge_applied(&self) -> f64 {
        self.ridge_applied
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: ModelFile = fsio::read_json(path)?;
        if file.normalization != NORMALIZATION {
            return Err(Error::format(
                path,
                format!("unsupported covariance normalization {:?}", file.normalization),
            ));
        }
        GaussianModel::from_parts(file.organs, file.mu, file.sigma, file.n_train, file.ridge_applied)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            organs: self.organs.clone(),
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            n_train: self.n_train,
            ridge_applied: self.ridge_applied,
            normalization: NORMALIZATION.into(),
        };
        fsio::write_json(path, &file)
    }
}

/// On-disk form of [`GaussianModel`].
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    organs: OrganSet,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    n_train: usize,
    ridge_applied: f64,
    normalization: String,
}

/// Fits per-organ means and the pooled `1/N` covariance of `train`.
///
/// If the covariance does not factor, `λ · mean(diag)` is added to the
/// diagonal for λ = 1e-8, 1e-7, …, 1e-2 (scale 1 when the diagonal is all
/// zero) until it does.
pub fn fit_gaussian(organs: &OrganSet, train: &[ScoreVector]) -> Result<GaussianModel> {
    let m = organs.len();
    if train.len() < 2 {
        return Err(Error::TooFewSamples {
            got: train.len(),
            need: 2,
        });
    }
    for z in train {
        if z.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: z.len(),
            });
        }
        if z.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore(z.case_id.clone()));
        }
    }
    if train.len() < 5 * m {
        log::warn!(
            "fitting a {m}-dimensional covariance on only {} cases; expect a noisy estimate",
            train.len()
        );
    }

    let n = train.len() as f64;
    let mut mu = vec![0.0; m];
    for z in train {
        for (acc, s) in mu.iter_mut().zip(&z.scores) {
            *acc += s;
        }
    }
    mu.iter_mut().for_each(|v| *v /= n);

    let mut sigma = vec![0.0; m * m];
    for z in train {
        let d: Vec<f64> = z.scores.iter().zip(&mu).map(|(s, u)| s - u).collect();
        for i in 0..m {
            for j in 0..=i {
                sigma[i * m + j] += d[i] * d[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = sigma[i * m + j] / n;
            sigma[i * m + j] = v;
            sigma[j * m + i] = v;
        }
    }

    if Cholesky::factor(&sigma, m).is_some() {
        return GaussianModel::from_parts(organs.clone(), mu, sigma, train.len(), 0.0);
    }
    let mean_diag = (0..m).map(|i| sigma[i * m + i]).sum::<f64>() / m as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut ridge = 0.0;
    for lambda in RIDGE_STEPS {
        ridge = lambda * scale;
        let mut boosted = sigma.clone();
        for i in 0..m {
            boosted[i * m + i] += ridge;
        }
        if Cholesky::factor(&boosted, m).is_some() {
            log::warn!("covariance needed a ridge of {ridge:e} to factor");
            return GaussianModel::from_parts(organs.clone(), mu, boosted, train.len(), ridge);
        }
    }
    Err(Error::SingularCovariance { ridge })
}

/// Squared Mahalanobis distance `(z - mu)^T Sigma^{-1} (z - mu)`, via the
/// Cholesky factor.
pub fn mahalanobis_sq(model: &GaussianModel, z: &[f64]) -> Result<f64> {
    if z.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: z.len(),
        });
    }
    let d: Vec<f64> = z.iter().zip(&model.mu).map(|(a, b)| a - b).collect();
    Ok(model.chol.quad_form(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodVerdict {
    pub case_id: String,
    pub d_squared: f64,
    pub threshold: f64,
    pub level: f64,
    pub is_ood: bool,
}

/// Flags `z` as out-of-distribution when its squared distance strictly
/// exceeds the χ²(M) quantile at `level`.
pub fn detect(model: &GaussianModel, z: &ScoreVector, level: f64) -> Result<OodVerdict> {
    let threshold = chi2_quantile(level, model.dim())?;
    let d_squared = mahalanobis_sq(model, &z.scores)?;
    Ok(verdict(&z.case_id, d_squared, threshold, level))
}

pub(crate) fn verdict(case_id: &str, d_squared: f64, threshold: f64, level: f64) -> OodVerdict {
    OodVerdict {
        case_id: case_id.to_string(),
        d_squared,
        threshold,
        level,
        is_ood: d_squared > threshold,
    }
}

/// Predictions of one training case, grouped by learner index.
#[derive(Debug, Clone, Default)]
pub struct LearnerPredictions {
    pub case_id: String,
    pub by_learner: BTreeMap<usize, Vec<ProbVolume>>,
}

/// Selects the holdout learners of `case` from `available` (learner -> pass
/// count) and checks that all of them are present with equal pass counts.
pub fn check_holdout_coverage(
    plan: &PartitionPlan,
    case: usize,
    case_id: &str,
    available: &BTreeMap<usize, usize>,
) -> Result<Vec<usize>> {
    let holdout = holdout_learners(plan, case)?;
    let mut passes = None;
    for &l in &holdout {
        let count = available.get(&l).copied().unwrap_or(0);
        if count == 0 {
            return Err(Error::MissingHoldoutPredictions {
                case_id: case_id.to_string(),
                learner: l,
            });
        }
        if *passes.get_or_insert(count) != count {
            return Err(Error::ConfigInvalid(format!(
                "case {case_id}: holdout learners have unequal pass counts"
            )));
        }
    }
    Ok(holdout)
}

/// Scores every training case using only the learners that did not train
/// on it. `cases[i]` must correspond to plan case `i`.
pub fn conservative_training_scores(
    plan: &PartitionPlan,
    cases: &[LearnerPredictions],
    organs: &OrganSet,
    radius: usize,
) -> Result<Vec<ScoreVector>> {
    if cases.len() != plan.n_cases {
        return Err(Error::DimensionMismatch {
            expected: plan.n_cases,
            got: cases.len(),
        });
    }
    cases
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let available = case.by_learner.iter().map(|(&l, v)| (l, v.len())).collect();
            let holdout = check_holdout_coverage(plan, i, &case.case_id, &available)?;
            let preds = holdout
                .iter()
                .flat_map(|l| case.by_learner[l].iter().cloned().map(Ok));
            Ok(score_predictions(preds, organs, radius, &case.case_id)?.scores)
        })
        .collect()
}

/// Verdict CSV: `case_id,d_squared,threshold,is_ood`.
pub fn write_verdicts_csv(path: &Path, verdicts: &[OodVerdict]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "d_squared", "threshold", "is_ood"])
        .map_err(|e| Error::format(path, e))?;
    for v in verdicts {
        w.write_record([
            v.case_id.clone(),
            v.d_squared.to_string(),
            v.threshold.to_string(),
            v.is_ood.to_string(),
        ])
        .map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    fsio::write_atomic(path, &bytes)
}

/// Reads a verdict CSV. The level is not stored there and comes back as NaN.
pub fn read_verdicts_csv(path: &Path) -> Result<Vec<OodVerdict>> {
    #[derive(Deserialize)]
    struct Row {
        case_id: String,
        d_squared: f64,
        threshold: f64,
        is_ood: bool,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| Error::format(path, e))?;
            Ok(OodVerdict {
                case_id: row.case_id,
                d_squared: row.d_squared,
                threshold: row.threshold,
                level: f64::NAN,
                is_ood: row.is_ood,
            })
        })
        .collect()
}
