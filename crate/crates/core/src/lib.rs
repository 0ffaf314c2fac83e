//! Reward engine, multi-turn trajectories and group-relative advantages for
//! training language models to lay out 3D scenes.

pub mod advantage;
pub mod config;
pub mod error;
pub mod format;
pub mod judge;
pub mod layout;
pub mod ops;
pub mod parse;
pub mod physics;
pub mod reward;
pub mod toy;
pub mod trajectory;

pub use advantage::{group_advantages, surrogate_objective, AdvantageConfig, AdvantageReport, AdvantageSet, CoordMask};
pub use config::EngineConfig;
pub use error::{AdvantageError, ConfigError, JudgeError, LayoutError, PolicyError, TrainError, TrajectoryError};
pub use format::{format_reward, FormatCheck, FormatScore};
pub use judge::{Judge, JudgeConfig, JudgeGrades, RenderReward};
pub use layout::{Axis, Layout, ObjectSpec, Placement, RoomSpec, SceneTask};
pub use parse::{parse_rollout, ParseStage, ParsedRollOut};
pub use physics::{build_scene_graph, physics_report, PhysicsReport, SceneGraph, Tolerances};
pub use reward::{RewardBreakdown, RewardWeights, Scorer, StagedWeights};
pub use trajectory::{run_group, run_trajectory, PolicyPort, Trajectory, TrajectoryGroup};
