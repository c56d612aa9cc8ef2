//! `connectome-kit`: generate synthetic cohorts, run pipeline grids, and
//! summarize their scores.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use connectome_core::par::{self, Execution};
use connectome_core::pipeline::{
    cohort_hash, expand_grid, load_fold_atlases, run_biomarkers, run_pipelines, write_biomarkers,
    write_run, StudyConfig, SCORES_FILE,
};
use connectome_core::synthdata::{generate_cohort, read_cohort, write_cohort};
use connectome_core::{tables, Error};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "connectome-kit",
    version,
    about = "Connectome-based prediction pipelines on synthetic multi-site cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Study configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pipeline grid (JSON object of option name to list of values).
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Overrides the cohort and pipeline seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root; directories named in the configuration are relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort.
    Generate,
    /// Run every pipeline of the grid over its cross-validation folds.
    Run,
    /// Effect sizes, pairwise comparisons and top-decile summaries of a run.
    Report,
    /// Consensus-atlas biomarkers with permutation p-values.
    Biomarkers,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Unimplemented(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        if jobs == 1 {
            par::set_execution(Execution::Sequential);
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    match cli.command {
        Command::Generate => generate(cli, &cfg),
        Command::Run => run(cli, &cfg),
        Command::Report => report::report(&cli.out.join(&cfg.run_dir)),
        Command::Biomarkers => biomarkers(cli, &cfg),
    }
}

fn load_config(cli: &Cli) -> Result<StudyConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            StudyConfig::parse(&text)?
        }
        None => StudyConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.cohort_seed = seed;
        cfg.pipeline.master_seed = seed;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct CohortManifest<'a> {
    version: &'a str,
    cohort_hash: String,
    seed: u64,
    n_subjects: usize,
    n_sites: usize,
}

fn generate(cli: &Cli, cfg: &StudyConfig) -> Result<(), CliError> {
    let dir = cli.out.join(&cfg.cohort_dir);
    let cohort = generate_cohort(&cfg.cohort, cfg.cohort_seed)?;
    write_cohort(&cohort, &dir)?;
    let manifest = CohortManifest {
        version: env!("CARGO_PKG_VERSION"),
        cohort_hash: cohort_hash(&dir)?,
        seed: cfg.cohort_seed,
        n_subjects: cohort.n_subjects(),
        n_sites: cfg.cohort.n_sites,
    };
    tables::write_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} subjects from {} sites to {}",
        manifest.n_subjects,
        manifest.n_sites,
        dir.display()
    );
    Ok(())
}

fn read_existing_cohort(dir: &Path) -> Result<connectome_core::synthdata::Cohort, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Runtime(format!(
            "no cohort at {}; run `generate` first",
            dir.display()
        )));
    }
    Ok(read_cohort(dir)?)
}

fn run(cli: &Cli, cfg: &StudyConfig) -> Result<(), CliError> {
    let cohort_dir = cli.out.join(&cfg.cohort_dir);
    let cohort = read_existing_cohort(&cohort_dir)?;
    let configs = match &cli.grid {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            expand_grid(&cfg.pipeline, &text).map_err(|e| match e {
                Error::Config { path, message } => {
                    CliError::Config(format!("invalid grid at `{path}`: {message}"))
                }
                other => other.into(),
            })?
        }
        None => vec![cfg.pipeline.clone()],
    };
    let run_dir = cli.out.join(&cfg.run_dir);
    tables::create_dir(&run_dir)?;
    let hash = cohort_hash(&cohort_dir)?;
    let out = run_pipelines(&cohort, &hash, &configs, &cfg.evaluation, &run_dir)?;
    write_run(&run_dir, &out)?;
    println!(
        "{} pipelines, {} fold scores written to {}",
        configs.len(),
        out.scores.len(),
        run_dir.join(SCORES_FILE).display()
    );
    Ok(())
}

fn biomarkers(cli: &Cli, cfg: &StudyConfig) -> Result<(), CliError> {
    let cohort = read_existing_cohort(&cli.out.join(&cfg.cohort_dir))?;
    let run_dir = cli.out.join(&cfg.run_dir);
    let atlases = load_fold_atlases(&run_dir, &cfg.pipeline, &cohort)?;
    let (report, atlas) = run_biomarkers(
        &cohort,
        &cfg.pipeline,
        &cfg.evaluation,
        &atlases,
        cfg.biomarkers.dice_threshold,
        cfg.biomarkers.n_permutations,
    )?;
    let dir = run_dir.join("biomarkers");
    write_biomarkers(&dir, &report, &atlas)?;
    if report.consensus_empty {
        return Err(CliError::Runtime(format!(
            "consensus atlas is empty at DICE {}; no biomarkers extracted",
            cfg.biomarkers.dice_threshold
        )));
    }
    let significant = report.edges.iter().filter(|e| e.p_value <= 0.05).count();
    println!(
        "{} consensus regions, {} of {} connections with p <= 0.05 (minimum p {:.4})",
        report.consensus_regions,
        significant,
        report.edges.len(),
        report.min_p_value
    );
    if let Some(r) = report.planted_recall {
        println!("planted edges in the top tenth: {:.0}%", 100.0 * r);
    }
    println!("wrote {}", dir.display());
    Ok(())
}
