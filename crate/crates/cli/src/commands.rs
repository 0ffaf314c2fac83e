use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use spatialrl_core::config::EngineConfig;
use spatialrl_core::layout::SceneTask;
use spatialrl_core::ops;
use spatialrl_core::toy::GridPolicyParams;
use spatialrl_core::trajectory::{read_dump, write_dump};

use crate::error::CliError;

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Engine(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn write_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Engine(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| CliError::Engine(e.to_string()))
}

pub fn score(cfg: &EngineConfig, task: &Path, rollout: &Path) -> Result<(), CliError> {
    let task = SceneTask::from_file(task)?;
    let text = std::fs::read_to_string(rollout).map_err(|e| CliError::io(rollout, e))?;
    print_json(&ops::score(cfg, &task, &text)?)
}

pub fn compose(cfg: &EngineConfig, render: f64, format: f64, collision: f64, constraint: f64) -> Result<(), CliError> {
    print_json(&ops::compose(cfg, render, format, collision, constraint)?)
}

pub fn rollout(cfg: &EngineConfig, task: &Path, out: &Path, params: Option<&Path>) -> Result<(), CliError> {
    let task = SceneTask::from_file(task)?;
    let params = params
        .map(|p| GridPolicyParams::load(p).map_err(|e| CliError::io(p, e)))
        .transpose()?;
    let group = ops::sample_group(cfg, &task, params)?;
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    write_dump(BufWriter::new(file), &[group]).map_err(|e| CliError::Engine(e.to_string()))
}

pub fn advantage(cfg: &EngineConfig, dump: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let file = File::open(dump).map_err(|e| CliError::io(dump, e))?;
    let groups = read_dump(BufReader::new(file))?;
    let reports = ops::advantages(cfg, &groups).map_err(|e| match e {
        ops::OpError::Input(msg) => CliError::Input(format!("{}: {msg}", dump.display())),
        e => e.into(),
    })?;
    let mut out = output(out)?;
    for report in &reports {
        write_line(&mut out, report)?;
    }
    out.flush().map_err(|e| CliError::Engine(e.to_string()))
}

pub fn train_toy(
    cfg: &EngineConfig,
    tasks: &[PathBuf],
    steps: usize,
    lr: Option<f64>,
    out: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let tasks = tasks.iter().map(SceneTask::from_file).collect::<Result<Vec<_>, _>>()?;
    let outcome = ops::train_toy(cfg, &tasks, steps, lr)?;

    let mut log = output(out)?;
    write_line(&mut log, &outcome.baseline)?;
    for record in &outcome.log {
        write_line(&mut log, record)?;
    }
    log.flush().map_err(|e| CliError::Engine(e.to_string()))?;
    if let Some(path) = checkpoint {
        outcome.params.save(path).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(tail) = outcome.tail_mean(50) {
        eprintln!(
            "baseline collision {:.3} constraint {:.3}; last {} steps collision {:.3} constraint {:.3}",
            outcome.baseline.collision_ratio,
            outcome.baseline.constraint_ratio,
            outcome.log.len().min(50),
            tail.collision_ratio,
            tail.constraint_ratio
        );
    }
    Ok(())
}
