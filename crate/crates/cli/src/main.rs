use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sgrpo_core::harness::{self, ExperimentConfig};
use sgrpo_core::taskgen::{generate_tasks, task_file_json, write_task_file, TaskSpec};
use sgrpo_core::{ScorerKind, TokenSeq, Verifier};

#[derive(Parser)]
#[command(name = "sgrpo", version, about = "Group-relative policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant and seed in an experiment config.
    Run { config: PathBuf },
    /// Tabulate one or more experiment directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Emit CSV instead of a text table.
        #[arg(long)]
        csv: bool,
    },
    /// Validate a config and check that its scorer answers.
    Verify { config: PathBuf },
    /// Generate a task file from a TOML task spec.
    Tasks {
        spec: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn run(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let (manifest, _) = harness::run(&cfg)?;
    for r in &manifest.runs {
        println!("{:<24} {:?} steps={}", r.run_id, r.status, r.steps_completed);
    }
    println!("wrote {}", cfg.output_dir.display());
    let failed = manifest.runs.iter().filter(|r| r.status == harness::RunStatus::Failed).count();
    if failed > 0 {
        bail!("{failed} run(s) failed; see manifest.json");
    }
    Ok(())
}

fn verify(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let verifier = Verifier::new(cfg.scorer.clone())?;
    let probe = TokenSeq::new((0..cfg.task.seq_len as u32).map(|t| t % cfg.task.vocab_size as u32).collect());
    let score = verifier
        .score(&probe, &probe)
        .with_context(|| format!("scorer {} did not answer", verifier.scorer_id()))?;
    if cfg.scorer.kind != ScorerKind::Remote && score != 1.0 {
        bail!("scorer {} gave {score} for identical sequences", verifier.scorer_id());
    }
    println!("config ok; scorer {} answered {score}", verifier.scorer_id());
    Ok(())
}

fn tasks(spec: &Path, out: Option<&PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = TaskSpec::from_toml_str(&text).context("parsing task spec")?;
    let prompts = generate_tasks(&spec)?;
    match out {
        Some(path) => {
            write_task_file(path, &spec, &prompts)?;
            println!("wrote {} prompts to {}", prompts.len(), path.display());
        }
        None => print!("{}", task_file_json(&spec, &prompts)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Compare { dirs, csv } => harness::compare(dirs).map_err(Into::into).map(|report| {
            if *csv {
                print!("{}", report.to_csv());
            } else {
                print!("{}", report.to_text());
            }
        }),
        Command::Verify { config } => verify(config),
        Command::Tasks { spec, out } => tasks(spec, out.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
