use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logprob_grad, GridPolicy, GridPolicyParams, DEFAULT_BINS};
use crate::advantage::{group_advantages, AdvantageConfig};
use crate::error::TrainError;
use crate::layout::SceneTask;
use crate::reward::{RewardWeights, ScheduleConfig, Scorer, Stage, StagedWeights};
use crate::trajectory::{derive_seed, run_group, RolloutShape, TrajectoryGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub group: usize,
    pub turns: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub bins: usize,
    pub epsilon: f64,
    pub beta_kl: f64,
    pub advantage: AdvantageConfig,
    pub weights: RewardWeights,
    pub schedule: ScheduleConfig,
    /// Groups sampled at initialization for the step-0 baseline record.
    pub baseline_groups: usize,
    pub feedback_masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            group: 4,
            turns: 3,
            gamma: 0.9,
            learning_rate: 100.0,
            seed: 1,
            bins: DEFAULT_BINS,
            epsilon: 0.2,
            beta_kl: 0.01,
            advantage: AdvantageConfig::default(),
            weights: RewardWeights::default(),
            schedule: ScheduleConfig::default(),
            baseline_groups: 32,
            feedback_masking: true,
        }
    }
}

/// One line of the metric log. Step 0 is the pre-training baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub mean_total: f64,
    pub collision_ratio: f64,
    pub constraint_ratio: f64,
    pub format_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GridPolicyParams,
    pub reference: GridPolicyParams,
    pub baseline: MetricRecord,
    pub log: Vec<MetricRecord>,
}

impl TrainOutcome {
    /// Mean of the last `n` training records (fewer if the run was shorter).
    pub fn tail_mean(&self, n: usize) -> Option<MetricRecord> {
        let tail = &self.log[self.log.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| average(tail, tail.last().map_or(0, |r| r.step)))
    }
}

fn average(records: &[MetricRecord], step: usize) -> MetricRecord {
    let n = records.len() as f64;
    let mean = |f: fn(&MetricRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    MetricRecord {
        step,
        mean_total: mean(|r| r.mean_total),
        collision_ratio: mean(|r| r.collision_ratio),
        constraint_ratio: mean(|r| r.constraint_ratio),
        format_acc: mean(|r| r.format_acc),
        stage: None,
    }
}

fn group_metrics(groups: &[TrajectoryGroup], step: usize, stage: Option<Stage>) -> MetricRecord {
    let turns: Vec<_> = groups
        .iter()
        .flat_map(|g| g.trajectories.iter().flat_map(|t| t.turns.iter()))
        .collect();
    let n = turns.len().max(1) as f64;
    MetricRecord {
        step,
        mean_total: turns.iter().map(|t| t.reward.total).sum::<f64>() / n,
        collision_ratio: turns.iter().map(|t| t.reward.physics.collision_ratio).sum::<f64>() / n,
        constraint_ratio: turns.iter().map(|t| t.reward.physics.constraint_ratio).sum::<f64>() / n,
        format_acc: turns.iter().filter(|t| t.reward.format == 1.0).count() as f64 / n,
        stage,
    }
}

/// Samples `groups` groups from `policy` without updating it.
pub fn evaluate(
    policy: &GridPolicy,
    tasks: &[SceneTask],
    scorer: &Scorer,
    config: &TrainConfig,
    groups: usize,
    seed: u64,
) -> Result<MetricRecord, TrainError> {
    let shape = RolloutShape {
        group: config.group,
        turns: config.turns,
        gamma: config.gamma,
    };
    let sampled = (0..groups)
        .map(|k| {
            let task = &tasks[k % tasks.len()];
            run_group(
                policy,
                task,
                scorer,
                shape,
                &config.weights,
                derive_seed(seed, k as u64),
            )
            .map_err(|source| TrainError::Rollout { step: 0, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(group_metrics(&sampled, 0, None))
}

/// Runs the rollout, reward, advantage, update loop on the toy policy.
pub fn train(tasks: &[SceneTask], scorer: &Scorer, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let first = tasks
        .first()
        .ok_or_else(|| TrainError::InvalidArgument("task set is empty".into()))?;
    if tasks.iter().any(|t| t.objects.len() != first.objects.len()) {
        return Err(TrainError::InvalidArgument(
            "all tasks must have the same object count".into(),
        ));
    }
    if config.bins < 2 {
        return Err(TrainError::InvalidArgument("bins must be at least 2".into()));
    }
    let mut policy = GridPolicy::for_task(first, config.turns, config.bins);
    policy.feedback_masking = config.feedback_masking;

    let baseline = evaluate(
        &policy,
        tasks,
        scorer,
        config,
        config.baseline_groups,
        derive_seed(config.seed, u64::MAX),
    )?;
    let mut schedule = StagedWeights::new(config.weights, config.schedule);
    let mut task_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX - 1));
    let shape = RolloutShape {
        group: config.group,
        turns: config.turns,
        gamma: config.gamma,
    };
    let mut log = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        policy.refresh_behavior();
        let task = &tasks[task_rng.random_range(0..tasks.len())];
        let weights = schedule.weights();
        let stage = schedule.stage();
        let group = run_group(
            &policy,
            task,
            scorer,
            shape,
            &weights,
            derive_seed(config.seed, step as u64),
        )
        .map_err(|source| TrainError::Rollout { step, source })?;
        for traj in &group.trajectories {
            for turn in &traj.turns {
                schedule.observe(turn.reward.format == 1.0);
            }
        }
        log.push(group_metrics(std::slice::from_ref(&group), step, Some(stage)));

        let (_, advantages) =
            group_advantages(&group, &config.advantage).map_err(|source| TrainError::Advantage { step, source })?;
        let grad = logprob_grad(&policy.current, &group, &advantages, config.epsilon, config.beta_kl)
            .map_err(|source| TrainError::Advantage { step, source })?;
        for (w, g) in policy.current.logits.iter_mut().zip(&grad) {
            *w += config.learning_rate * g;
        }
    }

    Ok(TrainOutcome {
        params: policy.current,
        reference: policy.reference,
        baseline,
        log,
    })
}
