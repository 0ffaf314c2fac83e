//! Engine operations shared by the command-line and Python front ends.
//!
//! Each function takes an [`EngineConfig`] plus already-loaded inputs and
//! returns the serializable value a front end prints or hands back, so both
//! front ends produce the same bytes for the same inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{check_token_data, group_advantages, surrogate_objective, AdvantageReport};
use crate::config::EngineConfig;
use crate::error::{AdvantageError, ConfigError, JudgeError, LayoutError, TrainError, TrajectoryError};
use crate::layout::SceneTask;
use crate::reward::{compose_components, RewardBreakdown};
use crate::toy::{train, GridPolicy, GridPolicyParams, TrainConfig, TrainOutcome, DEFAULT_BINS};
use crate::trajectory::{run_group, DumpError, TrajectoryGroup};

#[derive(Debug, Error)]
pub enum OpError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("judge: {0}")]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("dump: {0}")]
    Dump(#[from] DumpError),
}

impl OpError {
    /// True when the failure stems from the caller's inputs rather than the engine.
    pub fn is_input(&self) -> bool {
        match self {
            OpError::Input(_) | OpError::Config(_) | OpError::Dump(_) => true,
            OpError::Layout(e) => !matches!(e, LayoutError::EmptyScene),
            OpError::Judge(e) => matches!(e, JudgeError::MissingEndpoint),
            OpError::Trajectory(e) => {
                matches!(e, TrajectoryError::GroupSize(_) | TrajectoryError::InvalidArgument(_))
            }
            OpError::Advantage(e) => matches!(
                e,
                AdvantageError::MissingLogprob { .. } | AdvantageError::TokenData { .. } | AdvantageError::Shape(_)
            ),
            OpError::Train(e) => matches!(e, TrainError::InvalidArgument(_)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
    /// False when a remote judge contributed to the render term.
    pub deterministic: bool,
}

/// Scores one roll-out with every reward term enabled.
pub fn score(cfg: &EngineConfig, task: &SceneTask, raw_text: &str) -> Result<ScoreOutput, OpError> {
    let mut scorer = cfg.scorer()?;
    scorer.always_render = true;
    let scored = scorer.score_text(task, raw_text, &cfg.weights)?;
    Ok(ScoreOutput {
        breakdown: scored.breakdown,
        deterministic: scorer.judge.is_deterministic(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeOutput {
    pub render: f64,
    pub format: f64,
    pub collision_ratio: f64,
    pub constraint_ratio: f64,
    pub total: f64,
}

/// Combines already-aggregated component values into a total reward.
pub fn compose(
    cfg: &EngineConfig,
    render: f64,
    format: f64,
    collision_ratio: f64,
    constraint_ratio: f64,
) -> Result<ComposeOutput, OpError> {
    for (name, v) in [
        ("render", render),
        ("format", format),
        ("collision", collision_ratio),
        ("constraint", constraint_ratio),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(OpError::Input(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let total = compose_components(
        render,
        format,
        collision_ratio,
        constraint_ratio,
        &cfg.weights,
        &cfg.physics,
    );
    Ok(ComposeOutput {
        render,
        format,
        collision_ratio,
        constraint_ratio,
        total,
    })
}

/// Samples one trajectory group from the toy policy. Uniform logits are used
/// when no checkpoint is given.
pub fn sample_group(
    cfg: &EngineConfig,
    task: &SceneTask,
    params: Option<GridPolicyParams>,
) -> Result<TrajectoryGroup, OpError> {
    let params = params.unwrap_or_else(|| GridPolicyParams::for_task(task, cfg.turns, DEFAULT_BINS));
    if params.objects != task.objects.len() || params.turns < cfg.turns {
        return Err(OpError::Input(format!(
            "checkpoint covers {} objects and {} turns; task needs {} objects and {} turns",
            params.objects,
            params.turns,
            task.objects.len(),
            cfg.turns
        )));
    }
    let policy = GridPolicy::new(params);
    let scorer = cfg.scorer()?;
    Ok(run_group(&policy, task, &scorer, cfg.shape(), &cfg.weights, cfg.seed)?)
}

/// Advantage reports for every group of a dump, in input order.
pub fn advantages(cfg: &EngineConfig, groups: &[TrajectoryGroup]) -> Result<Vec<AdvantageReport>, OpError> {
    if groups.is_empty() {
        return Err(OpError::Input("no trajectory groups".into()));
    }
    groups
        .iter()
        .map(|group| {
            check_token_data(group)?;
            let (masks, set) = group_advantages(group, &cfg.advantage)?;
            let surrogate = surrogate_objective(group, &set, cfg.epsilon, cfg.kl_beta)?;
            Ok(AdvantageReport::build(group, &masks, &set, &surrogate))
        })
        .collect()
}

/// Trains the toy policy with the engine settings. `learning_rate` falls back
/// to the trainer default.
pub fn train_toy(
    cfg: &EngineConfig,
    tasks: &[SceneTask],
    steps: usize,
    learning_rate: Option<f64>,
) -> Result<TrainOutcome, OpError> {
    if tasks.is_empty() {
        return Err(OpError::Input("training needs at least one task".into()));
    }
    let defaults = TrainConfig::default();
    let learning_rate = learning_rate.unwrap_or(defaults.learning_rate);
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(OpError::Input(format!(
            "learning rate must be a non-negative number, got {learning_rate}"
        )));
    }
    let config = TrainConfig {
        steps,
        group: cfg.group,
        turns: cfg.turns,
        gamma: cfg.gamma,
        learning_rate,
        seed: cfg.seed,
        epsilon: cfg.epsilon,
        beta_kl: cfg.kl_beta,
        advantage: cfg.advantage,
        weights: cfg.weights,
        schedule: cfg.schedule,
        ..defaults
    };
    let scorer = cfg.scorer()?;
    Ok(train(tasks, &scorer, &config)?)
}
