use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use avmine::harness::{generate_synthetic, run_pipeline, RepoMode, RunConfig, RunOptions, Stage, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "dlm", version, about = "Defect life-cycle mining and affected-version labeling")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for `synth`.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Refuse projects failing the selection thresholds.
    #[arg(long, global = true)]
    enforce_selection: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse issues, link commits and derive life cycles.
    Ingest,
    /// Availability and consistency report.
    Rq1,
    /// Label affected versions with every configured method.
    LabelAv,
    /// Build the release-level defectiveness matrices.
    LabelClasses,
    /// Compute feature datasets.
    Features,
    /// Exhaustive CFS feature selection.
    SelectFeatures,
    /// Accuracy metrics, Kruskal-Wallis, Dunn and rank tables.
    Evaluate,
    /// Standard deviation of IV, OV, FV and P.
    Stability,
    /// Full pipeline.
    Run,
    /// Generate a synthetic project with known labels.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "SYN")]
    project: String,
    #[arg(long, default_value_t = 6)]
    versions: usize,
    #[arg(long, default_value_t = 20)]
    defects: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Generate every defect with this proportion.
    #[arg(long)]
    constant_p: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    unavailable: f64,
    #[arg(long, default_value_t = 0.0)]
    inconsistent: f64,
    /// Noise commits (default: twice the version count).
    #[arg(long)]
    noise: Option<usize>,
    /// Write a git repository instead of a JSON commit log.
    #[arg(long)]
    git: bool,
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Ingest => Stage::Ingest,
        Command::Rq1 => Stage::Rq1,
        Command::LabelAv => Stage::LabelAv,
        Command::LabelClasses => Stage::LabelClasses,
        Command::Features => Stage::Features,
        Command::SelectFeatures => Stage::SelectFeatures,
        Command::Evaluate => Stage::Evaluate,
        Command::Stability | Command::Run => Stage::Stability,
        Command::Synth(_) => return None,
    })
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let mut spec = SyntheticSpec::new(&args.project, args.versions, args.defects, args.classes, cli.seed);
    spec.constant_p = args.constant_p;
    spec.unavailable_fraction = args.unavailable;
    spec.inconsistent_fraction = args.inconsistent;
    if let Some(n) = args.noise {
        spec.noise_commits = n;
    }
    let project = generate_synthetic(&spec)?;
    let mode = if args.git { RepoMode::Git } else { RepoMode::Log };
    let conf = project
        .write(&out, mode)
        .with_context(|| format!("writing synthetic project to {}", out.display()))?;
    println!("{}", conf.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DLM_LOG", "warn")).init();
    let cli = Cli::parse();
    let Some(until) = stage_of(&cli.command) else {
        let Command::Synth(args) = &cli.command else { unreachable!() };
        return synth(&cli, args);
    };
    let Some(path) = &cli.config else {
        bail!("--config is required for `{until}`");
    };
    let config = RunConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    if cli.jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let opts = RunOptions {
        out: out.clone(),
        jobs: cli.jobs,
        enforce_selection: cli.enforce_selection,
        until,
    };
    let manifest = run_pipeline(&config, &opts).with_context(|| format!("pipeline failed; see {}", out.join("manifest.json").display()))?;
    for n in &manifest.notices {
        eprintln!("notice: {n}");
    }
    println!("{} files written to {}", manifest.files.len(), out.display());
    Ok(())
}
