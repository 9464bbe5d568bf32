use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spkver::config::{ExperimentConfig, FusionConfig};
use spkver::pipeline::{run_fusion, Pipeline};

/// Speaker-verification back-end runner: seeded synthetic data, embedding
/// conditioning, LDA/SVDA projections, PLDA scoring, clustering,
/// calibration, fusion and detection metrics.
#[derive(Parser)]
#[command(name = "spkver", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory holding the pipeline artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override; mixed into every stage seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or normalize) the corpus and trial lists.
    GenData(StageArgs),
    /// Apply speaker filtering to the labeled training set.
    Filter(StageArgs),
    /// Apply the pre-projection conditioning chain.
    Preprocess(StageArgs),
    /// Cluster the unlabeled in-domain sets into estimated speakers.
    Cluster(StageArgs),
    /// Fit the configured projection and materialize projected vectors.
    FitProjection(StageArgs),
    /// Fit PLDA on the configured data selection.
    FitPlda(StageArgs),
    /// Score the target trials (plus calibration trial lists).
    Score(StageArgs),
    /// Fit and apply the configured calibration strategies.
    Calibrate(StageArgs),
    /// Compute the metric report from scored trials.
    Evaluate(StageArgs),
    /// Run every stage in order.
    Run(StageArgs),
    /// Fuse already-run member experiments (config is a fusion config).
    Fuse(StageArgs),
}

enum StageKind {
    GenData,
    Filter,
    Preprocess,
    Cluster,
    FitProjection,
    FitPlda,
    Score,
    Calibrate,
    Evaluate,
    Run,
}

fn run() -> spkver::Result<()> {
    let cli = Cli::parse();
    let (args, kind) = match cli.command {
        Command::Fuse(args) => {
            let cfg = FusionConfig::load(&args.config)?;
            let report = run_fusion(&cfg, &args.out, args.seed)?;
            print!("{}", report.render_text());
            return Ok(());
        }
        Command::GenData(a) => (a, StageKind::GenData),
        Command::Filter(a) => (a, StageKind::Filter),
        Command::Preprocess(a) => (a, StageKind::Preprocess),
        Command::Cluster(a) => (a, StageKind::Cluster),
        Command::FitProjection(a) => (a, StageKind::FitProjection),
        Command::FitPlda(a) => (a, StageKind::FitPlda),
        Command::Score(a) => (a, StageKind::Score),
        Command::Calibrate(a) => (a, StageKind::Calibrate),
        Command::Evaluate(a) => (a, StageKind::Evaluate),
        Command::Run(a) => (a, StageKind::Run),
    };
    let cfg = ExperimentConfig::load(&args.config)?;
    let pipeline = Pipeline::new(cfg, &args.out, args.seed)?;
    match kind {
        StageKind::GenData => pipeline.gen_data(),
        StageKind::Filter => pipeline.filter(),
        StageKind::Preprocess => pipeline.preprocess(),
        StageKind::Cluster => pipeline.cluster(),
        StageKind::FitProjection => pipeline.fit_projection(),
        StageKind::FitPlda => pipeline.fit_plda(),
        StageKind::Score => pipeline.score(),
        StageKind::Calibrate => pipeline.calibrate(),
        StageKind::Evaluate => pipeline.evaluate().map(|r| print!("{}", r.render_text())),
        StageKind::Run => {
            pipeline.run()?;
            let text = std::fs::read_to_string(pipeline.out.join("report.txt"))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
