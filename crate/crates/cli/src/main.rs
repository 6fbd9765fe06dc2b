//! `uq`: ensemble uncertainty scoring and OOD gating from the command line.
//!
//! Exit codes: 0 success, 2 validation error, 3 I/O error, 4 statistical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use uq_core::fsio;
use uq_core::manifest::CaseManifest;
use uq_core::metrics::{rates_at, read_labels_csv, write_roc_csv};
use uq_core::ood::{read_verdicts_csv, write_verdicts_csv, DEFAULT_LEVEL};
use uq_core::pipeline::with_jobs;
use uq_core::scoring::{read_scores_csv, write_scores_csv, DEFAULT_BOUNDARY_RADIUS};
use uq_core::uqv::{read_prob_volume, read_uncertainty_map, write_label_volume, write_uncertainty_map};
use uq_core::{
    argmax_labels, auc, detect, export_overlays, fit_gaussian, generate_cohort, plan_partition, roc_curve,
    run_pipeline, suppress_and_score, verify_plan, EnsembleStats, Error, GaussianModel, LabeledScore, OodMode,
    OrganSet, PhantomConfig, Result, RunConfig, ScoreVector,
};

#[derive(Parser)]
#[command(name = "uq", version, about = "Ensemble-variance uncertainty scores and Mahalanobis OOD gating")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign training cases to learners.
    Plan(PlanArgs),
    /// Generate a synthetic phantom cohort.
    Simulate(SimulateArgs),
    /// Per-voxel ensemble variance of one case.
    Heatmap(HeatmapArgs),
    /// Boundary-suppressed organ scores of one case.
    Scores(ScoresArgs),
    /// Fit the Gaussian reference model to training scores.
    Fit(FitArgs),
    /// Mahalanobis verdicts for test scores.
    Detect(DetectArgs),
    /// ROC, AUC and rates of verdicts against labels.
    Eval(EvalArgs),
    /// Full train, fit, detect and evaluate loop on a cohort directory.
    Run(RunArgs),
    /// Raw and suppressed maximum projections of a scored case.
    ExportOverlays(OverlayArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    cases: usize,
    #[arg(long, default_value_t = 8)]
    learners: usize,
    #[arg(long, default_value_t = 4)]
    replication: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Id,
    FocalArtifact,
    Deformation,
}

impl From<Mode> for OodMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Id => OodMode::None,
            Mode::FocalArtifact => OodMode::FocalArtifact,
            Mode::Deformation => OodMode::Deformation,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario of the OOD cases; training and control cases are always ID.
    #[arg(long, value_enum, default_value = "focal-artifact")]
    mode: Mode,
    #[arg(long, default_value_t = 40)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    control: usize,
    #[arg(long, default_value_t = 15)]
    ood: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Edge length of the cubic grid.
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 6)]
    organs: usize,
    #[arg(long, default_value_t = 8)]
    learners: usize,
    #[arg(long, default_value_t = 4)]
    passes: usize,
    #[arg(long, default_value_t = 4)]
    replication: usize,
    /// Logit noise standard deviation of one prediction.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 3.0)]
    strength: f64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the argmax-of-mean consensus labels here.
    #[arg(long)]
    consensus: Option<PathBuf>,
}

#[derive(Args)]
struct ScoresArgs {
    #[arg(long)]
    heatmap: PathBuf,
    /// Case manifest; its mean prediction gives the consensus labels.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_RADIUS)]
    boundary_radius: usize,
    /// JSON array of foreground organ names, in channel order.
    #[arg(long)]
    organs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Add the row to an existing scores file with the same organs.
    #[arg(long)]
    append: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Output directory, default `<cohort>/run`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_RADIUS)]
    boundary_radius: usize,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Skip writing per-case heatmaps of test cases.
    #[arg(long)]
    no_heatmaps: bool,
}

#[derive(Args)]
struct OverlayArgs {
    /// Case directory holding heatmap.uqv and consensus.uqv.
    #[arg(long)]
    case_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_RADIUS)]
    boundary_radius: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Scores(a) => scores(a),
        Command::Fit(a) => fit(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::ExportOverlays(a) => {
            let (raw, suppressed) = export_overlays(&a.case_dir, &a.out, a.boundary_radius)?;
            println!("{}\n{}", raw.display(), suppressed.display());
            Ok(())
        }
    }
}

fn plan(a: PlanArgs) -> Result<()> {
    let plan = plan_partition(a.cases, a.learners, a.replication, a.seed)?;
    let report = verify_plan(&plan);
    plan.write(&a.out)?;
    println!("{report}");
    if !report.passed() {
        warn!("plan exceeds the caps; no plan within them exists or was found");
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = PhantomConfig {
        dims: [a.dims; 3],
        n_organs: a.organs,
        n_learners: a.learners,
        passes: a.passes,
        replication: a.replication,
        noise: a.noise,
        ood_mode: a.mode.into(),
        ood_strength: a.strength,
        seed: a.seed,
    };
    let manifest = with_jobs(a.jobs, || generate_cohort(&cfg, a.train, a.control, a.ood, &a.out))??;
    println!("wrote {} cases to {}", manifest.cases.len(), a.out.display());
    Ok(())
}

fn ensemble(manifest_path: &Path) -> Result<(CaseManifest, EnsembleStats)> {
    let manifest = CaseManifest::read(manifest_path)?;
    let mut stats: Option<EnsembleStats> = None;
    for path in manifest.resolved(manifest_path) {
        let pred = read_prob_volume(&path)?;
        stats
            .get_or_insert_with(|| EnsembleStats::new(pred.meta().clone()))
            .push(&pred)?;
    }
    Ok((manifest, stats.ok_or(Error::EmptyEnsemble)?))
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let (_, stats) = ensemble(&a.manifest)?;
    write_uncertainty_map(&a.out, &stats.variance()?)?;
    if let Some(path) = a.consensus {
        write_label_volume(&path, &argmax_labels(&stats.mean()?))?;
    }
    Ok(())
}

fn scores(a: ScoresArgs) -> Result<()> {
    let (manifest, stats) = ensemble(&a.manifest)?;
    let umap = read_uncertainty_map(&a.heatmap, stats.count())?;
    let organs = match &a.organs {
        Some(path) => fsio::read_json::<OrganSet>(path)?,
        None => OrganSet::numbered(umap.meta().channels.saturating_sub(1))?,
    };
    let consensus = argmax_labels(&stats.mean()?);
    let row = suppress_and_score(&umap, &consensus, &organs, a.boundary_radius, &manifest.case_id)?;
    let mut rows = Vec::new();
    if a.append && a.out.exists() {
        let (existing, old) = read_scores_csv(&a.out)?;
        if existing != organs {
            return Err(Error::ConfigInvalid(format!(
                "{} has organs {:?}, not {:?}",
                a.out.display(),
                existing.names(),
                organs.names()
            )));
        }
        rows = old;
    }
    rows.push(row);
    write_scores_csv(&a.out, &organs, &rows)
}

fn fit(a: FitArgs) -> Result<()> {
    let (organs, rows) = read_scores_csv(&a.scores)?;
    let model = fit_gaussian(&organs, &rows)?;
    model.write(&a.out)?;
    println!(
        "fitted {} organs on {} cases (ridge {:e})",
        organs.len(),
        model.n_train(),
        model.ridge_applied()
    );
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let model = GaussianModel::read(&a.model)?;
    let (organs, rows) = read_scores_csv(&a.scores)?;
    if &organs != model.organs() {
        return Err(Error::ConfigInvalid(format!(
            "scores organs {:?} differ from model organs {:?}",
            organs.names(),
            model.organs().names()
        )));
    }
    let verdicts = rows
        .iter()
        .map(|r: &ScoreVector| detect(&model, r, a.level))
        .collect::<Result<Vec<_>>>()?;
    write_verdicts_csv(&a.out, &verdicts)?;
    let flagged = verdicts.iter().filter(|v| v.is_ood).count();
    println!("{flagged} of {} cases flagged OOD", verdicts.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let verdicts = read_verdicts_csv(&a.verdicts)?;
    let labels = read_labels_csv(&a.labels)?;
    let mut samples = Vec::new();
    for v in &verdicts {
        match labels.get(&v.case_id) {
            Some(&ood) => samples.push(LabeledScore::new(v.case_id.clone(), v.d_squared, ood)),
            None => warn!("no label for case {}", v.case_id),
        }
    }
    let threshold = verdicts.first().map_or(f64::NAN, |v| v.threshold);
    let (sens, spec) = rates_at(&samples, threshold);
    if sens.is_some() && spec.is_some() {
        write_roc_csv(&a.out, &roc_curve(&samples)?)?;
        println!("auc {}", auc(&samples)?);
    } else {
        warn!("only one class present; no ROC written");
    }
    if let Some(s) = sens {
        println!("sensitivity {s}");
    }
    if let Some(s) = spec {
        println!("specificity {s}");
    }
    println!("threshold {threshold}");
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = RunConfig {
        radius: a.boundary_radius,
        level: a.level,
        jobs: a.jobs,
        out_dir: a.out,
        keep_heatmaps: !a.no_heatmaps,
        ..Default::default()
    };
    let summary = run_pipeline(&a.cohort, &cfg)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    println!("{json}");
    Ok(())
}
