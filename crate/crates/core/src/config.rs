//! Engine configuration: a JSON file whose fields all have defaults.
//! Command-line flags override file values, which override defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::error::{ConfigError, JudgeError};
use crate::judge::{Judge, JudgeConfig, JudgeMode};
use crate::physics::Tolerances;
use crate::reward::{PhysicsWeights, RewardWeights, ScheduleConfig, ScheduleKind, Scorer};
use crate::trajectory::RolloutShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub group: usize,
    pub turns: usize,
    pub gamma: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub kl_beta: f64,
    pub weights: RewardWeights,
    pub physics: PhysicsWeights,
    pub tolerances: Tolerances,
    pub schedule: ScheduleConfig,
    pub advantage: AdvantageConfig,
    pub judge: JudgeConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            group: 4,
            turns: 3,
            gamma: 0.9,
            seed: 0,
            epsilon: 0.2,
            kl_beta: 0.01,
            weights: RewardWeights::default(),
            physics: PhysicsWeights::default(),
            tolerances: Tolerances::default(),
            schedule: ScheduleConfig::default(),
            advantage: AdvantageConfig::default(),
            judge: JudgeConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::invalid(&e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("{v} is outside [0, 1]")))
            }
        };
        if self.group < 2 {
            return Err(ConfigError::invalid("group", "needs at least 2 trajectories"));
        }
        if self.turns < 1 {
            return Err(ConfigError::invalid("turns", "needs at least 1 turn"));
        }
        unit("gamma", self.gamma)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ConfigError::invalid("epsilon", "must lie in (0, 1)"));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(ConfigError::invalid("kl_beta", "must be non-negative"));
        }
        unit("advantage.w_phys", self.advantage.w_phys)?;
        for (field, v) in [
            ("weights.format", self.weights.format),
            ("weights.physics", self.weights.physics),
            ("weights.render", self.weights.render),
            ("physics.alpha", self.physics.alpha),
            ("physics.beta", self.physics.beta),
            ("tolerances.bound", self.tolerances.bound),
            ("tolerances.support", self.tolerances.support),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(
                    field,
                    format!("{v} must be a non-negative number"),
                ));
            }
        }
        unit("schedule.format_gate", self.schedule.format_gate)?;
        if self.schedule.kind == ScheduleKind::Staged && self.schedule.window == 0 {
            return Err(ConfigError::invalid("schedule.window", "must be positive"));
        }
        if !(1..=10).contains(&self.judge.color_scheme) {
            return Err(ConfigError::invalid("judge.color_scheme", "grades run from 1 to 10"));
        }
        if self.judge.mode == JudgeMode::Remote && self.judge.endpoint.is_none() {
            return Err(ConfigError::invalid("judge.endpoint", "remote mode needs an endpoint"));
        }
        if self.judge.timeout_s.is_nan() || self.judge.timeout_s <= 0.0 {
            return Err(ConfigError::invalid("judge.timeout_s", "must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> RolloutShape {
        RolloutShape {
            group: self.group,
            turns: self.turns,
            gamma: self.gamma,
        }
    }

    pub fn scorer(&self) -> Result<Scorer, JudgeError> {
        Ok(Scorer {
            physics: self.physics,
            tolerances: self.tolerances,
            judge: Judge::new(self.judge.clone())?,
            always_render: false,
        })
    }
}
