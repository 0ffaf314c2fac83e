mod commands;
mod error;
mod judge_server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spatialrl_core::advantage::ModulationMode;
use spatialrl_core::config::EngineConfig;
use spatialrl_core::judge::JudgeMode;
use spatialrl_core::reward::ScheduleKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "spatialrl",
    version,
    about = "Layout rewards, refinement trajectories and physics-aware advantages"
)]
struct Cli {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file (or the defaults).
#[derive(Debug, Args)]
struct EngineArgs {
    /// JSON engine config; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    group: Option<usize>,
    #[arg(long, global = true)]
    turns: Option<usize>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "w-phys", global = true)]
    w_phys: Option<f64>,
    #[arg(long, global = true, value_enum)]
    modulation: Option<Modulation>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long = "kl-beta", global = true)]
    kl_beta: Option<f64>,
    #[arg(long = "judge-mode", global = true, value_enum)]
    judge_mode: Option<JudgeModeArg>,
    #[arg(long = "judge-endpoint", global = true)]
    judge_endpoint: Option<String>,
    #[arg(long = "judge-timeout", global = true)]
    judge_timeout: Option<f64>,
    #[arg(long = "judge-retries", global = true)]
    judge_retries: Option<u32>,
    #[arg(long = "stage-schedule", global = true, value_enum)]
    stage_schedule: Option<Schedule>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JudgeModeArg {
    Stub,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schedule {
    Staged,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Modulation {
    Subtractive,
    Multiplicative,
}

impl EngineArgs {
    fn resolve(&self) -> Result<EngineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => EngineConfig::from_file(path)?,
            None => EngineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.group => cfg.group);
        set!(self.turns => cfg.turns);
        set!(self.gamma => cfg.gamma);
        set!(self.seed => cfg.seed);
        set!(self.w_phys => cfg.advantage.w_phys);
        set!(self.epsilon => cfg.epsilon);
        set!(self.kl_beta => cfg.kl_beta);
        set!(self.judge_timeout => cfg.judge.timeout_s);
        set!(self.judge_retries => cfg.judge.retries);
        if let Some(m) = self.modulation {
            cfg.advantage.mode = match m {
                Modulation::Subtractive => ModulationMode::Subtractive,
                Modulation::Multiplicative => ModulationMode::Multiplicative,
            };
        }
        if let Some(m) = self.judge_mode {
            cfg.judge.mode = match m {
                JudgeModeArg::Stub => JudgeMode::Stub,
                JudgeModeArg::Remote => JudgeMode::Remote,
            };
        }
        if let Some(e) = &self.judge_endpoint {
            cfg.judge.endpoint = Some(e.clone());
        }
        if let Some(s) = self.stage_schedule {
            cfg.schedule.kind = match s {
                Schedule::Staged => ScheduleKind::Staged,
                Schedule::Full => ScheduleKind::Full,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one roll-out against a task and print the reward breakdown.
    Score {
        #[arg(long)]
        task: PathBuf,
        /// Raw roll-out text file.
        #[arg(long)]
        rollout: PathBuf,
    },
    /// Combine already-aggregated component values into a total reward.
    Compose {
        /// Normalized render score in [0, 1].
        #[arg(long)]
        render: f64,
        #[arg(long)]
        format: f64,
        #[arg(long)]
        collision: f64,
        #[arg(long)]
        constraint: f64,
    },
    /// Sample a trajectory group with the toy policy and write it as JSONL.
    Rollout {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Toy policy checkpoint; uniform logits when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Compute token advantages and surrogate terms for a trajectory dump.
    Advantage {
        #[arg(long)]
        dump: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy grid policy and write its metric log.
    TrainToy {
        #[arg(long)]
        task: Vec<PathBuf>,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        lr: Option<f64>,
        /// Metric log (JSONL); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Serve the deterministic stub judge over HTTP.
    JudgeStub {
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.engine.resolve()?;
    match cli.command {
        Command::Score { task, rollout } => commands::score(&cfg, &task, &rollout),
        Command::Compose {
            render,
            format,
            collision,
            constraint,
        } => commands::compose(&cfg, render, format, collision, constraint),
        Command::Rollout { task, out, params } => commands::rollout(&cfg, &task, &out, params.as_deref()),
        Command::Advantage { dump, out } => commands::advantage(&cfg, &dump, out.as_deref()),
        Command::TrainToy {
            task,
            steps,
            lr,
            out,
            checkpoint,
        } => commands::train_toy(&cfg, &task, steps, lr, out.as_deref(), checkpoint.as_deref()),
        Command::JudgeStub { port, host } => judge_server::run(&host, port, cfg.judge.color_scheme),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
