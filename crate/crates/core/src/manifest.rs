//! JSON indices tying prediction volumes to cases and cases to cohorts.
//! Relative paths resolve against the directory holding the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::volume::OrganSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<usize>,
    #[serde(default, rename = "pass", skip_serializing_if = "Option::is_none")]
    pub pass_index: Option<usize>,
}

/// One case and its ordered ensemble predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub predictions: Vec<PredictionEntry>,
}

impl CaseManifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingManifest(path.to_path_buf()));
        }
        let m: CaseManifest = fsio::read_json(path)?;
        if m.predictions.is_empty() {
            return Err(Error::format(path, "manifest lists no predictions"));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::write_json(path, self)
    }

    /// Prediction paths resolved against `manifest_path`, in listed order.
    pub fn resolved(&self, manifest_path: &Path) -> Vec<PathBuf> {
        self.predictions
            .iter()
            .map(|p| fsio::resolve_relative(manifest_path, &p.path))
            .collect()
    }

    /// Resolved prediction paths grouped by learner, in listed order within
    /// each learner. Untagged entries are an error.
    pub fn by_learner(&self, manifest_path: &Path) -> Result<BTreeMap<usize, Vec<PathBuf>>> {
        let mut out: BTreeMap<usize, Vec<PathBuf>> = BTreeMap::new();
        for p in &self.predictions {
            let learner = p.learner.ok_or_else(|| {
                Error::format(manifest_path, format!("{} has no learner tag", p.path.display()))
            })?;
            out.entry(learner)
                .or_default()
                .push(fsio::resolve_relative(manifest_path, &p.path));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Control,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCase {
    pub case_id: String,
    pub role: Role,
    /// Finer grouping for reporting, e.g. the kind of OOD scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub organs: OrganSet,
    /// Partition plan of the training cases, whose order in `cases` matches
    /// plan case indices.
    pub plan: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub cases: Vec<CohortCase>,
    /// Free-form generator metadata.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub generator: serde_json::Value,
}

impl CohortManifest {
    pub const FILE_NAME: &'static str = "cohort.json";

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingManifest(path.to_path_buf()));
        }
        fsio::read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::write_json(path, self)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &CohortCase> {
        self.cases.iter().filter(move |c| c.role == role)
    }
}
