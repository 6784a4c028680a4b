use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmac_lab::{ExperimentConfig, Lab, LabError, Stage};

#[derive(Parser)]
#[command(name = "dmac", about = "Train, attack, retrain and evaluate multi-agent communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs/default")]
    out_dir: PathBuf,
    /// `section.key=value`, repeatable.
    #[arg(long = "stage-override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Team policy and gates from scratch.
    TrainTeam,
    /// Masking adversary against the frozen team.
    TrainAdversary,
    /// Gate policy retrained against a refreshed adversary.
    Retrain,
    /// Learned message attacker for each available victim.
    TrainAttack,
    /// Win rates and communication frequency under every condition.
    Evaluate,
    /// report.md and report.json from the evaluation.
    Report,
    /// Every stage in order.
    All,
    /// Print the effective config.
    ShowConfig,
}

fn run(cli: &Cli) -> Result<(), LabError> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            return Ok(());
        }
        Command::All => None,
        Command::TrainTeam => Some(Stage::TrainTeam),
        Command::TrainAdversary => Some(Stage::TrainAdversary),
        Command::Retrain => Some(Stage::Retrain),
        Command::TrainAttack => Some(Stage::TrainAttack),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Report => Some(Stage::Report),
    };
    let lab = Lab::new(cfg, &cli.out_dir)?;
    let entries = match stage {
        Some(s) => vec![lab.run(s)?],
        None => lab.run_all()?,
    };
    for e in entries {
        println!("{}:", e.stage);
        for a in e.artifacts {
            println!("  {} {}", a.sha256, a.path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
