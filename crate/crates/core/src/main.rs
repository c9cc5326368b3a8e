use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use mtnet::cli::{self, ExperimentConfig, ExperimentReport};

#[derive(Parser)]
#[command(name = "mtnet", version, about = "Multi-task recurrent depression prediction experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort: schema, raw panel, labels, archetypes.
    Generate(Common),
    /// Encode the configured data and write it with its split.
    Preprocess(Common),
    /// Train one model per seed and report metrics.
    Train(Common),
    /// Score saved checkpoints.
    Evaluate(Common),
    /// Train the five ablation variants.
    Ablate(Common),
    /// LSTM vs MTNet over training-set fractions.
    SampleEfficiency(Common),
    /// Run the command named by `experiment.mode`.
    Run(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use this single seed for training (and for the synthetic cohort).
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn summarize(report: &ExperimentReport) {
    for cell in &report.cells {
        let (m, s) = (&cell.report.mean, &cell.report.std);
        println!(
            "{:<14} fraction {:<6} auc_roc {:.4}±{:.4} auc_pr {:.4}±{:.4} f {:.4}±{:.4}",
            cell.method,
            cli::format_sig6(cell.fraction),
            m.auc_roc,
            s.auc_roc,
            m.auc_pr,
            s.auc_pr,
            m.f_score,
            s.f_score
        );
    }
}

fn run(args: Args) -> anyhow::Result<()> {
    let (Command::Generate(c)
    | Command::Preprocess(c)
    | Command::Train(c)
    | Command::Evaluate(c)
    | Command::Ablate(c)
    | Command::SampleEfficiency(c)
    | Command::Run(c)) = &args.command;
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        cfg.override_seed(seed);
    }
    let report = match &args.command {
        Command::Generate(_) => {
            cli::run_generate(&cfg, &c.out)?;
            None
        }
        Command::Preprocess(_) => {
            cli::run_preprocess(&cfg, &c.out, c.quiet)?;
            None
        }
        Command::Train(_) => Some(cli::run_train(&cfg, &c.out, c.quiet)?),
        Command::Evaluate(_) => Some(cli::run_evaluate(&cfg, &c.out, c.quiet)?),
        Command::Ablate(_) => Some(cli::run_ablate(&cfg, &c.out, c.quiet)?),
        Command::SampleEfficiency(_) => Some(cli::run_sample_efficiency(&cfg, &c.out, c.quiet)?),
        Command::Run(_) => Some(cli::run_mode(&cfg, &c.out, c.quiet)?),
    };
    if let Some(r) = report {
        if !c.quiet {
            summarize(&r);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
