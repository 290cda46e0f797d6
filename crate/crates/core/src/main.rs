use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drive_core::agent::PerceptionKind;
use drive_core::config::{RunConfig, DESK_PRESET};
use drive_core::pipeline::{self, AgentChoice, Workspace};
use drive_core::simworld::ScenarioKind;
use drive_core::Error;

const OUT_ENV: &str = "DRIVE_OUT";

#[derive(Parser, Debug)]
#[command(name = "drive", version, about = "Detection-based driving agents in a 2D simulator")]
struct Cli {
    /// Run configuration (TOML); the built-in desk preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to $DRIVE_OUT, then the configured `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of aggregation rounds.
    #[arg(long, global = true)]
    rounds: Option<u32>,
    /// Comma-separated scenario kinds replacing the suite used by the command.
    #[arg(long, global = true, value_delimiter = ',')]
    suite: Option<Vec<String>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Perception {
    Detection,
    Classification,
}

impl From<Perception> for PerceptionKind {
    fn from(p: Perception) -> Self {
        match p {
            Perception::Detection => PerceptionKind::Detection,
            Perception::Classification => PerceptionKind::Classification,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AgentArg {
    Expert,
    Detection,
    Classification,
}

impl From<AgentArg> for AgentChoice {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Expert => AgentChoice::Expert,
            AgentArg::Detection => AgentChoice::Detection,
            AgentArg::Classification => AgentChoice::Classification,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic frames and pretrain the detector and the classifier baseline.
    PretrainDetector,
    /// Collect the offline and held-out expert datasets.
    Collect,
    /// Train a policy offline on the expert dataset.
    Train {
        #[arg(long, value_enum, default_value = "detection")]
        perception: Perception,
    },
    /// Continue training with dataset-aggregation rounds.
    Dagger {
        #[arg(long, value_enum, default_value = "detection")]
        perception: Perception,
    },
    /// Score an agent on the benchmark suite.
    Bench {
        #[arg(long, value_enum, default_value = "detection")]
        agent: AgentArg,
    },
    /// Run both students on identical seeds and write the paired table.
    Ablate,
    /// Re-render the trajectory plots of a finished benchmark.
    Plot {
        #[arg(long, value_enum, default_value = "detection")]
        agent: AgentArg,
    },
}

fn workspace(cli: &Cli) -> Result<Workspace, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse(DESK_PRESET)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(rounds) = cli.rounds {
        cfg.dagger.rounds = rounds;
    }
    if let Some(kinds) = &cli.suite {
        let kinds = kinds.iter().map(|k| k.trim().parse()).collect::<Result<Vec<ScenarioKind>, _>>()?;
        let suite = match cli.command {
            Command::Bench { .. } | Command::Plot { .. } => &mut cfg.suite.bench,
            Command::Ablate => &mut cfg.suite.ablation,
            _ => &mut cfg.suite.collect,
        };
        suite.kinds = kinds;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.out.clone());
    cfg.out = out.clone();
    Ok(Workspace::new(cfg, out))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let ws = workspace(cli)?;
    let mut log = |line: &str| eprintln!("{line}");
    match cli.command {
        Command::PretrainDetector => pipeline::pretrain(&ws, &mut log).map(drop),
        Command::Collect => pipeline::collect(&ws, &mut log).map(drop),
        Command::Train { perception } => pipeline::train(&ws, perception.into(), &mut log).map(drop),
        Command::Dagger { perception } => pipeline::dagger(&ws, perception.into(), ws.config.dagger.rounds, &mut log).map(drop),
        Command::Bench { agent } => {
            pipeline::bench(&ws, agent.into(), None, &mut log)?;
            println!("{}", ws.bench_dir(agent.into()).display());
            Ok(())
        }
        Command::Ablate => {
            pipeline::ablate(&ws, None, &mut log)?;
            println!("{}", ws.ablation_dir().join("paired.csv").display());
            Ok(())
        }
        Command::Plot { agent } => pipeline::plot(&ws, agent.into(), &mut log).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
