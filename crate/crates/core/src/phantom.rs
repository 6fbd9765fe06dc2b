//! Synthetic ellipsoid phantoms with stochastic ensemble predictions.
//!
//! Each case places `M` non-overlapping ellipsoid organs. Class logits are a
//! clamped linear function of the signed distance to each organ surface
//! (background logit fixed at zero). Every prediction adds smooth Gaussian
//! noise in logit space, split evenly in variance between a per-learner field
//! and a per-pass field, and is then pushed through a softmax.
//!
//! OOD modes perturb only what the learners disagree on:
//! - `FocalArtifact`: inside a ball centred on one organ's surface, each
//!   learner shifts that organ's logit against background by its own amount,
//!   scaled by `ood_strength`. The amounts are evenly spread with unit
//!   variance and dealt to learners in random order.
//! - `Deformation`: each learner sees the anatomy through its own smooth
//!   random displacement field of amplitude `ood_strength` voxels.
//!
//! Everything is derived from `(config, case_seed)` through independent
//! ChaCha streams, so a case with and without perturbation shares geometry
//! and noise exactly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::plan_partition;
use crate::error::{Error, Result};
use crate::manifest::{CaseManifest, CohortCase, CohortManifest, PredictionEntry, Role};
use crate::metrics::write_labels_csv;
use crate::uqv::{write_label_volume, write_prob_volume};
use crate::volume::{GridMeta, LabelVolume, OrganSet, ProbVolume};

/// Logit change per voxel of signed distance to an organ surface.
const LOGIT_SLOPE: f32 = 1.0;
/// Organ logits saturate at +/- this value.
const LOGIT_MARGIN: f32 = 8.0;
/// Node spacing (voxels) of the smooth logit noise.
const NOISE_SPACING: usize = 3;
/// Node spacing (voxels) of the deformation fields.
const WARP_SPACING: usize = 16;
/// Organ size: one uniform scale per organ, as a fraction of the half cell.
const SCALE_RANGE: (f64, f64) = (0.3, 0.65);
/// Per-axis aspect factor range applied on top of the scale.
const ASPECT_RANGE: (f64, f64) = (0.85, 1.15);
/// Organ centres wander this many voxels from their cell centres.
const CENTER_JITTER: f64 = 1.5;
/// The focal ball reaches this far beyond the organ's mean semi-axis.
const FOCAL_MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    None,
    FocalArtifact,
    Deformation,
}

impl std::str::FromStr for OodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "id" => Ok(OodMode::None),
            "focal-artifact" => Ok(OodMode::FocalArtifact),
            "deformation" => Ok(OodMode::Deformation),
            other => Err(Error::ConfigInvalid(format!("unknown OOD mode {other:?}"))),
        }
    }
}

impl OodMode {
    pub fn name(self) -> &'static str {
        match self {
            OodMode::None => "id",
            OodMode::FocalArtifact => "focal-artifact",
            OodMode::Deformation => "deformation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub n_organs: usize,
    pub n_learners: usize,
    pub passes: usize,
    /// Number of learners that train on each case in the generated plan.
    pub replication: usize,
    /// Standard deviation of the logit noise of one prediction.
    pub noise: f64,
    pub ood_mode: OodMode,
    pub ood_strength: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64; 3],
            n_organs: 6,
            n_learners: 8,
            passes: 4,
            replication: 4,
            noise: 0.5,
            ood_mode: OodMode::FocalArtifact,
            ood_strength: 3.0,
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.dims.iter().any(|&d| d < 16) {
            return bad(format!("dims must be >= 16, got {:?}", self.dims));
        }
        if self.n_organs == 0 || self.n_organs > 254 {
            return bad(format!("n_organs must be in 1..=254, got {}", self.n_organs));
        }
        if self.n_learners < 2 || self.passes == 0 {
            return bad("need >= 2 learners and >= 1 pass".into());
        }
        if self.replication == 0 || self.replication >= self.n_learners {
            return bad(format!(
                "replication must be in 1..{}, got {}",
                self.n_learners, self.replication
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(self.ood_strength >= 0.0 && self.ood_strength.is_finite()) {
            return bad(format!("ood_strength must be >= 0, got {}", self.ood_strength));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridMeta {
        GridMeta {
            dims: self.dims,
            spacing: [1.0; 3],
            channels: self.n_organs + 1,
        }
    }

    pub fn organs(&self) -> OrganSet {
        if self.n_organs == 6 {
            OrganSet::pelvic()
        } else {
            OrganSet::numbered(self.n_organs).expect("validated organ count")
        }
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag)))
}

const TAG_GEOMETRY: u64 = 1;
const TAG_OOD: u64 = 2;
const TAG_LEARNER: u64 = 1 << 32;
const TAG_PASS: u64 = 2 << 32;

#[derive(Debug, Clone)]
struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    /// Distance to the surface along the ray from the centre; positive inside.
    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = ((d[0] / self.semi[0]).powi(2) + (d[1] / self.semi[1]).powi(2) + (d[2] / self.semi[2]).powi(2)).sqrt();
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r < 1e-12 {
            return self.semi.iter().copied().fold(f64::INFINITY, f64::min);
        }
        len / r - len
    }

    fn surface_point(&self, dir: [f64; 3]) -> [f64; 3] {
        let r = ((dir[0] / self.semi[0]).powi(2) + (dir[1] / self.semi[1]).powi(2) + (dir[2] / self.semi[2]).powi(2)).sqrt();
        [
            self.center[0] + dir[0] / r,
            self.center[1] + dir[1] / r,
            self.center[2] + dir[2] / r,
        ]
    }

    fn mean_semi_axis(&self) -> f64 {
        self.semi.iter().sum::<f64>() / 3.0
    }
}

fn place_organs(config: &PhantomConfig, rng: &mut ChaCha8Rng) -> Vec<Ellipsoid> {
    let m = config.n_organs;
    let k = (1..).find(|k| k * k * k >= m).unwrap();
    (0..m)
        .map(|i| {
            let cell = [i % k, (i / k) % k, i / (k * k)];
            let scale = rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
            let mut center = [0.0; 3];
            let mut semi = [0.0; 3];
            for a in 0..3 {
                let size = config.dims[a] as f64 / k as f64;
                let half = size / 2.0;
                center[a] = size * cell[a] as f64 + half - 0.5 + rng.random_range(-CENTER_JITTER..=CENTER_JITTER);
                semi[a] = half * scale * rng.random_range(ASPECT_RANGE.0..ASPECT_RANGE.1);
            }
            Ellipsoid { center, semi }
        })
        .collect()
}

/// Gaussian values on a coarse node lattice, trilinearly upsampled.
struct Lattice {
    nodes: [usize; 3],
    spacing: usize,
    values: Vec<f32>,
}

impl Lattice {
    fn zeros(dims: [usize; 3], spacing: usize) -> Self {
        let nodes = dims.map(|d| (d - 1) / spacing + 2);
        Lattice {
            nodes,
            spacing,
            values: vec![0.0; nodes.iter().product()],
        }
    }

    fn add_gaussian(&mut self, rng: &mut ChaCha8Rng, sd: f32) {
        for v in &mut self.values {
            *v += sd * rng.sample::<f32, _>(StandardNormal);
        }
    }

    /// Adds the interpolated field to `out` (x fastest).
    fn upsample_into(&self, dims: [usize; 3], out: &mut [f32]) {
        let [nx, ny, nz] = dims;
        let [lx, ly, lz] = self.nodes;
        let s = self.spacing;
        let weights = |n: usize| -> Vec<(usize, f32)> {
            (0..n).map(|i| (i / s, (i % s) as f32 / s as f32)).collect()
        };
        let (wx, wy, wz) = (weights(nx), weights(ny), weights(nz));
        // along x
        let mut a = vec![0.0f32; lz * ly * nx];
        for zy in 0..lz * ly {
            let row = &self.values[zy * lx..(zy + 1) * lx];
            for (x, &(j, t)) in wx.iter().enumerate() {
                a[zy * nx + x] = row[j] * (1.0 - t) + row[j + 1] * t;
            }
        }
        // along y
        let mut b = vec![0.0f32; lz * ny * nx];
        for z in 0..lz {
            for (y, &(j, t)) in wy.iter().enumerate() {
                let r0 = &a[(z * ly + j) * nx..(z * ly + j + 1) * nx];
                let r1 = &a[(z * ly + j + 1) * nx..(z * ly + j + 2) * nx];
                let dst = &mut b[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                for x in 0..nx {
                    dst[x] = r0[x] * (1.0 - t) + r1[x] * t;
                }
            }
        }
        // along z
        let plane = ny * nx;
        for (z, &(j, t)) in wz.iter().enumerate() {
            let p0 = &b[j * plane..(j + 1) * plane];
            let p1 = &b[(j + 1) * plane..(j + 2) * plane];
            let dst = &mut out[z * plane..(z + 1) * plane];
            for i in 0..plane {
                dst[i] += p0[i] * (1.0 - t) + p1[i] * t;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct FocalArtifact {
    organ: usize,
    center: [f64; 3],
    radius: f64,
    /// Per-learner logit shift at the ball centre.
    shifts: Vec<f32>,
}

/// Lazily produces the predictions of one phantom case.
pub struct CaseGenerator {
    config: PhantomConfig,
    case_seed: u64,
    meta: GridMeta,
    organs: Vec<Ellipsoid>,
    /// Undisturbed logits, channel-major.
    base: Vec<f32>,
    focal: Option<FocalArtifact>,
}

/// Flat core out to half the radius, then a cosine taper to zero.
fn focal_weight(rel: f64) -> f32 {
    if rel <= 0.5 {
        1.0
    } else {
        (0.5 + 0.5 * (std::f64::consts::PI * (rel - 0.5) / 0.5).cos()) as f32
    }
}

fn clamp_logit(sd: f64) -> f32 {
    (LOGIT_SLOPE * sd as f32).clamp(-LOGIT_MARGIN, LOGIT_MARGIN)
}

fn organ_logits(organs: &[Ellipsoid], meta: &GridMeta, warp: Option<&[Vec<f32>; 3]>) -> Vec<f32> {
    let voxels = meta.voxels();
    let mut out = vec![0.0f32; meta.len()];
    for v in 0..voxels {
        let [x, y, z] = meta.voxel_coords(v);
        let mut p = [x as f64, y as f64, z as f64];
        if let Some(w) = warp {
            for a in 0..3 {
                p[a] += w[a][v] as f64;
            }
        }
        for (m, e) in organs.iter().enumerate() {
            out[(m + 1) * voxels + v] = clamp_logit(e.signed_distance(p));
        }
    }
    out
}

fn softmax_into(logits: &[f32], voxels: usize, channels: usize, out: &mut [f32]) {
    for v in 0..voxels {
        let max = (0..channels).map(|c| logits[c * voxels + v]).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for c in 0..channels {
            let e = (logits[c * voxels + v] - max).exp();
            out[c * voxels + v] = e;
            sum += e;
        }
        for c in 0..channels {
            out[c * voxels + v] /= sum;
        }
    }
}

impl CaseGenerator {
    pub fn new(config: &PhantomConfig, case_seed: u64) -> Result<Self> {
        config.validate()?;
        let meta = config.grid();
        let organs = place_organs(config, &mut stream(case_seed, TAG_GEOMETRY));
        let base = organ_logits(&organs, &meta, None);
        let focal = match config.ood_mode {
            OodMode::FocalArtifact => {
                let mut rng = stream(case_seed, TAG_OOD);
                let organ = rng.random_range(0..organs.len());
                let e = &organs[organ];
                let dir: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let center = e.surface_point(dir);
                // evenly spread unit-variance shifts in random learner order, so
                // the injected disagreement does not hinge on a lucky draw
                let l = config.n_learners;
                let mut shifts: Vec<f32> = (0..l)
                    .map(|i| {
                        let u = (2.0 * (i as f64 + 0.5) / l as f64 - 1.0) * 3f64.sqrt();
                        (config.ood_strength * u) as f32
                    })
                    .collect();
                shifts.shuffle(&mut rng);
                Some(FocalArtifact {
                    organ,
                    center,
                    radius: e.mean_semi_axis() + FOCAL_MARGIN,
                    shifts,
                })
            }
            _ => None,
        };
        Ok(CaseGenerator {
            config: config.clone(),
            case_seed,
            meta,
            organs,
            base,
            focal,
        })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    /// Index (0-based, organ channel minus one) of the organ hit by a focal
    /// artifact, if any.
    pub fn affected_organ(&self) -> Option<usize> {
        self.focal.as_ref().map(|f| f.organ)
    }

    /// Ground truth from the undisturbed geometry.
    pub fn truth(&self) -> LabelVolume {
        let voxels = self.meta.voxels();
        let labels = (0..voxels)
            .map(|v| {
                let mut best = (0u8, 0.0f32);
                for m in 0..self.organs.len() {
                    let l = self.base[(m + 1) * voxels + v];
                    if l > best.1 {
                        best = (m as u8 + 1, l);
                    }
                }
                best.0
            })
            .collect();
        LabelVolume::new(self.meta.with_channels(1), labels).expect("grid sized labels")
    }

    fn learner_logits(&self, learner: usize) -> Vec<f32> {
        let voxels = self.meta.voxels();
        let mut logits = match self.config.ood_mode {
            OodMode::Deformation if self.config.ood_strength > 0.0 => {
                let mut rng = stream(self.case_seed, TAG_OOD ^ (TAG_LEARNER * (learner as u64 + 1)));
                let warp: [Vec<f32>; 3] = std::array::from_fn(|_| {
                    let mut lat = Lattice::zeros(self.meta.dims, WARP_SPACING);
                    lat.add_gaussian(&mut rng, self.config.ood_strength as f32);
                    let mut field = vec![0.0f32; voxels];
                    lat.upsample_into(self.meta.dims, &mut field);
                    field
                });
                organ_logits(&self.organs, &self.meta, Some(&warp))
            }
            _ => self.base.clone(),
        };
        if let Some(f) = &self.focal {
            let shift = f.shifts[learner];
            let r2 = f.radius * f.radius;
            for v in 0..voxels {
                let [x, y, z] = self.meta.voxel_coords(v);
                let d2 = (x as f64 - f.center[0]).powi(2) + (y as f64 - f.center[1]).powi(2) + (z as f64 - f.center[2]).powi(2);
                if d2 < r2 {
                    let w = focal_weight(d2.sqrt() / f.radius);
                    logits[(f.organ + 1) * voxels + v] += shift * w;
                    logits[v] -= shift * w;
                }
            }
        }
        logits
    }

    fn noise_sd(&self) -> f32 {
        (self.config.noise / std::f64::consts::SQRT_2) as f32
    }

    fn learner_lattices(&self, learner: usize) -> Vec<Lattice> {
        let mut rng = stream(self.case_seed, TAG_LEARNER * (learner as u64 + 1));
        (0..self.meta.channels)
            .map(|_| {
                let mut lat = Lattice::zeros(self.meta.dims, NOISE_SPACING);
                lat.add_gaussian(&mut rng, self.noise_sd());
                lat
            })
            .collect()
    }

    /// All passes of one learner, in pass order.
    pub fn learner_predictions(&self, learner: usize) -> Vec<ProbVolume> {
        let base = self.learner_logits(learner);
        let shared = self.learner_lattices(learner);
        (0..self.config.passes)
            .map(|pass| self.prediction_from(&base, &shared, learner, pass))
            .collect()
    }

    fn prediction_from(&self, base: &[f32], shared: &[Lattice], learner: usize, pass: usize) -> ProbVolume {
        let voxels = self.meta.voxels();
        let channels = self.meta.channels;
        let mut rng = stream(
            self.case_seed,
            TAG_PASS * (learner as u64 + 1) + pass as u64 + 1,
        );
        let mut logits = base.to_vec();
        if self.config.noise > 0.0 {
            for (c, lat) in shared.iter().enumerate() {
                let mut own = Lattice::zeros(self.meta.dims, NOISE_SPACING);
                own.add_gaussian(&mut rng, self.noise_sd());
                for (o, s) in own.values.iter_mut().zip(&lat.values) {
                    *o += s;
                }
                own.upsample_into(self.meta.dims, &mut logits[c * voxels..(c + 1) * voxels]);
            }
        }
        let mut probs = vec![0.0f32; logits.len()];
        softmax_into(&logits, voxels, channels, &mut probs);
        ProbVolume::new(self.meta.clone(), probs).expect("softmax output is normalized")
    }
}

/// One fully materialized phantom case.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub truth: LabelVolume,
    /// Learner-major: index `learner * passes + pass`.
    pub predictions: Vec<ProbVolume>,
    pub affected_organ: Option<usize>,
}

/// Generates ground truth and all `L x passes` predictions of a case.
pub fn generate_case(config: &PhantomConfig, case_seed: u64) -> Result<PhantomCase> {
    let gen = CaseGenerator::new(config, case_seed)?;
    let predictions = (0..config.n_learners)
        .flat_map(|l| gen.learner_predictions(l))
        .collect();
    Ok(PhantomCase {
        truth: gen.truth(),
        predictions,
        affected_organ: gen.affected_organ(),
    })
}

/// Seed of the `index`-th case with the given role.
pub fn case_seed(seed: u64, role: Role, index: usize) -> u64 {
    let r = match role {
        Role::Train => 1u64,
        Role::Control => 2,
        Role::Ood => 3,
    };
    mix(mix(seed) ^ (r << 48) ^ index as u64)
}

fn write_case(dir: &Path, case_id: &str, gen: &CaseGenerator, config: &PhantomConfig) -> Result<()> {
    let mut entries = Vec::new();
    for l in 0..config.n_learners {
        for (p, pred) in gen.learner_predictions(l).iter().enumerate() {
            let name = format!("pred_l{l}_p{p}.uqv");
            write_prob_volume(&dir.join(&name), pred)?;
            entries.push(PredictionEntry {
                path: name.into(),
                learner: Some(l),
                pass_index: Some(p),
            });
        }
    }
    write_label_volume(&dir.join("truth.uqv"), &gen.truth())?;
    CaseManifest {
        case_id: case_id.to_string(),
        predictions: entries,
    }
    .write(&dir.join("manifest.json"))
}

/// Writes a cohort of training, control and OOD cases under `out_dir`, with
/// a partition plan for the training cases, a labels file for the test
/// cases and a `cohort.json` index. Training and control cases are always
/// generated without perturbation.
pub fn generate_cohort(
    config: &PhantomConfig,
    n_train: usize,
    n_control: usize,
    n_ood: usize,
    out_dir: &Path,
) -> Result<CohortManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let id_config = PhantomConfig {
        ood_mode: OodMode::None,
        ..config.clone()
    };

    let mut jobs: Vec<(String, Role, usize)> = Vec::new();
    jobs.extend((0..n_train).map(|i| (format!("train_{i:03}"), Role::Train, i)));
    jobs.extend((0..n_control).map(|i| (format!("control_{i:03}"), Role::Control, i)));
    jobs.extend((0..n_ood).map(|i| (format!("ood_{i:03}"), Role::Ood, i)));

    let cases = jobs
        .par_iter()
        .map(|(case_id, role, index)| {
            let cfg = if *role == Role::Ood { config } else { &id_config };
            let gen = CaseGenerator::new(cfg, case_seed(config.seed, *role, *index))?;
            let rel = PathBuf::from("cases").join(case_id);
            write_case(&out_dir.join(&rel), case_id, &gen, cfg)?;
            Ok(CohortCase {
                case_id: case_id.clone(),
                role: *role,
                subset: (*role == Role::Ood).then(|| config.ood_mode.name().to_string()),
                manifest: rel.join("manifest.json"),
                truth: Some(rel.join("truth.uqv")),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let plan = plan_partition(n_train, config.n_learners, config.replication, config.seed)?;
    plan.write(&out_dir.join("plan.json"))?;
    let labels: Vec<(String, bool)> = cases
        .iter()
        .filter(|c| c.role != Role::Train)
        .map(|c| (c.case_id.clone(), c.role == Role::Ood))
        .collect();
    write_labels_csv(&out_dir.join("labels.csv"), &labels)?;

    let manifest = CohortManifest {
        organs: config.organs(),
        plan: "plan.json".into(),
        labels: Some("labels.csv".into()),
        cases,
        generator: serde_json::json!({
            "config": config,
            "logit_slope": LOGIT_SLOPE,
            "logit_margin": LOGIT_MARGIN,
            "noise_spacing": NOISE_SPACING,
            "warp_spacing": WARP_SPACING,
        }),
    };
    manifest.write(&out_dir.join(CohortManifest::FILE_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::score_predictions;
    use crate::uncertainty::variance_map;

    fn small(mode: OodMode, strength: f64) -> PhantomConfig {
        PhantomConfig {
            dims: [24; 3],
            n_organs: 3,
            n_learners: 4,
            passes: 2,
            replication: 2,
            ood_mode: mode,
            ood_strength: strength,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(PhantomConfig::default().validate().is_ok());
        let bad = [
            PhantomConfig { dims: [15, 64, 64], ..Default::default() },
            PhantomConfig { n_organs: 0, ..Default::default() },
            PhantomConfig { ood_strength: -1.0, ..Default::default() },
            PhantomConfig { noise: f64::NAN, ..Default::default() },
            PhantomConfig { replication: 8, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(generate_case(&c, 0), Err(Error::ConfigInvalid(_))));
        }
    }

    #[test]
    fn noiseless_case_has_zero_scores() {
        let cfg = PhantomConfig { noise: 0.0, ..small(OodMode::None, 0.0) };
        let case = generate_case(&cfg, 5).unwrap();
        assert!(case.predictions.windows(2).all(|w| w[0] == w[1]));
        let umap = variance_map(&case.predictions).unwrap();
        assert!(umap.data().iter().all(|&v| v == 0.0));
        let out = score_predictions(case.predictions.into_iter().map(Ok), &cfg.organs(), 2, "c").unwrap();
        assert!(out.scores.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small(OodMode::Deformation, 2.0);
        let a = generate_case(&cfg, 9).unwrap();
        let b = generate_case(&cfg, 9).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.predictions, b.predictions);
        let c = generate_case(&cfg, 10).unwrap();
        assert_ne!(a.predictions, c.predictions);
    }

    #[test]
    fn truth_has_every_organ() {
        let cfg = small(OodMode::None, 0.0);
        let case = generate_case(&cfg, 1).unwrap();
        for m in 1..=3u8 {
            assert!(case.truth.data().contains(&m), "organ {m} missing");
        }
        assert!(case.predictions.len() == 8);
    }

    /// One organ filling a 32^3 grid, large enough for the artifact to
    /// reach past the suppressed band.
    fn single(mode: OodMode, strength: f64) -> PhantomConfig {
        PhantomConfig { dims: [32; 3], n_organs: 1, ..small(mode, strength) }
    }

    fn organ_score(cfg: &PhantomConfig, seed: u64, organ: usize) -> f64 {
        let case = generate_case(cfg, seed).unwrap();
        let out = score_predictions(case.predictions.into_iter().map(Ok), &cfg.organs(), 2, "c").unwrap();
        out.scores.scores[organ]
    }

    #[test]
    fn focal_artifact_raises_the_affected_organ() {
        let ood = single(OodMode::FocalArtifact, 3.0);
        let id = single(OodMode::None, 3.0);
        for seed in 0..5 {
            let organ = CaseGenerator::new(&ood, seed).unwrap().affected_organ().unwrap();
            assert!(organ_score(&ood, seed, organ) > organ_score(&id, seed, organ));
        }
    }

    #[test]
    fn mean_artifact_score_grows_with_strength() {
        let mean_at = |strength: f64| {
            let cfg = single(OodMode::FocalArtifact, strength);
            (0..10u64)
                .map(|s| {
                    let organ = CaseGenerator::new(&cfg, s).unwrap().affected_organ().unwrap();
                    organ_score(&cfg, s, organ)
                })
                .sum::<f64>()
                / 10.0
        };
        let (a, b, c) = (mean_at(0.0), mean_at(1.5), mean_at(3.0));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn cohort_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { dims: [16; 3], passes: 1, ..small(OodMode::FocalArtifact, 3.0) };
        let m = generate_cohort(&cfg, 4, 3, 2, dir.path()).unwrap();
        assert_eq!(m.cases.len(), 9);
        assert!(dir.path().join("plan.json").exists());
        let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels.lines().count(), 1 + 5);
        assert_eq!(labels.lines().filter(|l| l.ends_with(",1")).count(), 2);
        let case_dir = dir.path().join("cases/train_000");
        assert!(case_dir.join("pred_l3_p0.uqv").exists());
        assert!(case_dir.join("truth.uqv").exists());

        let dir2 = tempfile::tempdir().unwrap();
        generate_cohort(&cfg, 4, 3, 0, dir2.path()).unwrap();
        let labels = std::fs::read_to_string(dir2.path().join("labels.csv")).unwrap();
        assert!(labels.lines().skip(1).all(|l| l.ends_with(",0")));
        // same seed, same bytes
        for f in ["cases/control_001/pred_l2_p0.uqv", "plan.json"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
        }
    }
}
