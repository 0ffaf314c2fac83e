//! Composite reward and the staged weighting schedule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::JudgeError;
use crate::format::{format_reward, FormatCheck, FormatScore};
use crate::judge::{Judge, JudgeGrades, RenderReward};
use crate::layout::SceneTask;
use crate::parse::{parse_rollout, ParsedRollOut};
use crate::physics::{build_scene_graph, physics_report, PhysicsReport, SceneGraph, Tolerances, ViolationKind};

/// Weights of the format, physics and render terms.
///
/// The default profile weights format by 0.5 and takes the physics and
/// render terms as-is; with `alpha = beta = 0.2` inside the physics term this
/// gives `render + 0.5 * format - 0.2 * collision - 0.2 * constraint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub format: f64,
    pub physics: f64,
    pub render: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            format: 0.5,
            physics: 1.0,
            render: 1.0,
        }
    }
}

pub fn total_reward(
    format: f64,
    physics: &PhysicsReport,
    render: Option<&RenderReward>,
    weights: &RewardWeights,
) -> f64 {
    let render = render.map_or(0.0, |r| r.value);
    weights.format * format + weights.physics * physics.physics_reward + weights.render * render
}

/// Total reward from already-aggregated component values: a normalized
/// render score, a format score and the two physics ratios.
pub fn compose_components(
    render: f64,
    format: f64,
    collision_ratio: f64,
    constraint_ratio: f64,
    weights: &RewardWeights,
    physics: &PhysicsWeights,
) -> f64 {
    let report = PhysicsReport::from_ratios(collision_ratio, constraint_ratio, physics.alpha, physics.beta);
    weights.format * format + weights.physics * report.physics_reward + weights.render * render
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub format_check: FormatCheck,
    pub physics: PhysicsReport,
    /// Absent when the active stage leaves the render term out.
    pub render: Option<RenderReward>,
    pub total: f64,
}

/// Structured environment feedback handed to the policy on the next turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub format_failure: FormatCheck,
    pub colliding_pairs: Vec<(String, String)>,
    pub violations: BTreeMap<String, BTreeSet<ViolationKind>>,
    pub judge_grades: Option<JudgeGrades>,
}

impl FeedbackRecord {
    pub fn collided(&self, id: &str) -> bool {
        self.colliding_pairs.iter().any(|(a, b)| a == id || b == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PhysicsWeights {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.2 }
    }
}

/// Everything produced while scoring one roll-out.
#[derive(Debug, Clone)]
pub struct Scored {
    pub parsed: ParsedRollOut,
    pub format: FormatScore,
    pub graph: Option<SceneGraph>,
    pub breakdown: RewardBreakdown,
    pub feedback: FeedbackRecord,
}

/// Scores roll-outs against a task: format, physics, render, total.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub physics: PhysicsWeights,
    pub tolerances: Tolerances,
    pub judge: Judge,
    /// Query the judge even when the render weight is zero.
    pub always_render: bool,
}

impl Default for Scorer {
    fn default() -> Self {
        Self {
            physics: PhysicsWeights::default(),
            tolerances: Tolerances::default(),
            judge: Judge::stub(),
            always_render: false,
        }
    }
}

impl Scorer {
    pub fn score_text(&self, task: &SceneTask, raw_text: &str, weights: &RewardWeights) -> Result<Scored, JudgeError> {
        self.score(task, parse_rollout(raw_text), weights)
    }

    pub fn score(
        &self,
        task: &SceneTask,
        parsed: ParsedRollOut,
        weights: &RewardWeights,
    ) -> Result<Scored, JudgeError> {
        let format = format_reward(&parsed, task);
        let PhysicsWeights { alpha, beta } = self.physics;

        // Only a fully valid layout is physically scored; anything else gets
        // the worst-case report.
        let graph = match (&parsed.layout, format.is_full_match()) {
            (Some(layout), true) => build_scene_graph(layout, task, &self.tolerances).ok(),
            _ => None,
        };
        let physics = match &graph {
            Some(g) => physics_report(g, alpha, beta).unwrap_or_else(|_| PhysicsReport::unscorable(task, alpha, beta)),
            None => PhysicsReport::unscorable(task, alpha, beta),
        };

        let render = if weights.render > 0.0 || self.always_render {
            let layout = graph.as_ref().and(parsed.layout.as_ref());
            Some(self.judge.reward(task, layout, &physics)?)
        } else {
            None
        };
        let total = total_reward(format.score, &physics, render.as_ref(), weights);

        let feedback = FeedbackRecord {
            format_failure: format.failed_check,
            colliding_pairs: graph
                .as_ref()
                .map(|g| g.collision_edges.iter().cloned().collect())
                .unwrap_or_default(),
            violations: graph.as_ref().map(|g| g.violations.clone()).unwrap_or_default(),
            judge_grades: render.map(|r| r.grades),
        };
        let breakdown = RewardBreakdown {
            format: format.score,
            format_check: format.failed_check,
            physics,
            render,
            total,
        };
        Ok(Scored {
            parsed,
            format,
            graph,
            breakdown,
            feedback,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Format only, then format + physics, then all three.
    #[default]
    Staged,
    /// All three terms from the start.
    Full,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "staged" => Ok(ScheduleKind::Staged),
            "full" => Ok(ScheduleKind::Full),
            other => Err(format!("unknown stage schedule `{other}` (expected staged|full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Rolling window of roll-outs used for format accuracy.
    pub window: usize,
    /// Format accuracy that must be exceeded to enable the physics term.
    pub format_gate: f64,
    /// Roll-outs scored in the physics stage before the render term joins.
    pub render_after: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Staged,
            window: 64,
            format_gate: 0.9,
            render_after: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Format,
    FormatPhysics,
    Full,
}

/// Step-function reward schedule driven by observed format accuracy.
#[derive(Debug, Clone)]
pub struct StagedWeights {
    config: ScheduleConfig,
    base: RewardWeights,
    stage: Stage,
    recent: VecDeque<bool>,
    in_stage: usize,
}

impl StagedWeights {
    pub fn new(base: RewardWeights, config: ScheduleConfig) -> Self {
        let stage = match config.kind {
            ScheduleKind::Staged => Stage::Format,
            ScheduleKind::Full => Stage::Full,
        };
        Self {
            config,
            base,
            stage,
            recent: VecDeque::with_capacity(config.window),
            in_stage: 0,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn weights(&self) -> RewardWeights {
        match self.stage {
            Stage::Format => RewardWeights {
                physics: 0.0,
                render: 0.0,
                ..self.base
            },
            Stage::FormatPhysics => RewardWeights {
                render: 0.0,
                ..self.base
            },
            Stage::Full => self.base,
        }
    }

    pub fn format_accuracy(&self) -> Option<f64> {
        (!self.recent.is_empty())
            .then(|| self.recent.iter().filter(|&&ok| ok).count() as f64 / self.recent.len() as f64)
    }

    /// Records one scored roll-out and advances the stage if due.
    pub fn observe(&mut self, format_full_match: bool) {
        if self.recent.len() == self.config.window.max(1) {
            self.recent.pop_front();
        }
        self.recent.push_back(format_full_match);
        self.in_stage += 1;
        match self.stage {
            Stage::Format => {
                let full_window = self.recent.len() >= self.config.window.max(1);
                if full_window && self.format_accuracy().unwrap_or(0.0) > self.config.format_gate {
                    self.stage = Stage::FormatPhysics;
                    self.in_stage = 0;
                }
            }
            Stage::FormatPhysics => {
                if self.in_stage >= self.config.render_after {
                    self.stage = Stage::Full;
                    self.in_stage = 0;
                }
            }
            Stage::Full => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{render_reward, JudgeGrades, RenderSource};
    use crate::layout::{ObjectSpec, RoomSpec};

    fn render(value: f64) -> RenderReward {
        let mut r = render_reward(JudgeGrades::from_scores([5; 5]).unwrap(), RenderSource::Stub);
        r.value = value;
        r
    }

    #[test]
    fn seven_b_row_overall() {
        let physics = PhysicsReport::from_ratios(0.115, 0.708, 0.2, 0.2);
        let t = total_reward(0.98, &physics, Some(&render(0.62)), &RewardWeights::default());
        assert!((t - 0.9454).abs() < 1e-9);
    }

    #[test]
    fn three_b_row_overall() {
        let physics = PhysicsReport::from_ratios(0.79, 1.0, 0.2, 0.2);
        let t = total_reward(0.12, &physics, Some(&render(0.03)), &RewardWeights::default());
        assert!((t - -0.268).abs() < 1e-9);
    }

    #[test]
    fn zero_components() {
        let physics = PhysicsReport::from_ratios(0.0, 0.0, 0.2, 0.2);
        assert_eq!(
            total_reward(0.0, &physics, Some(&render(0.0)), &RewardWeights::default()),
            0.0
        );
    }

    fn task() -> SceneTask {
        SceneTask::new(
            RoomSpec::new(6.0, 5.0, 3.0),
            vec![ObjectSpec::new("a", [1.0; 3]), ObjectSpec::new("b", [1.0; 3])],
            "",
        )
        .unwrap()
    }

    #[test]
    fn untagged_rollout_gets_worst_case_physics() {
        let s = Scorer::default()
            .score_text(&task(), "no tags here", &RewardWeights::default())
            .unwrap();
        assert_eq!(s.breakdown.format, 0.0);
        assert_eq!(s.breakdown.physics.physics_reward, -0.4);
        let render = s.breakdown.render.unwrap();
        assert!((render.value - 0.24).abs() < 1e-12);
        assert!((s.breakdown.total - (0.24 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn feedback_mirrors_scene_graph() {
        let text = "<think>t</think><answer>[{\"new_object_id\":\"a\",\"x\":1,\"y\":1,\"z\":0.5},{\"new_object_id\":\"b\",\"x\":1.5,\"y\":1,\"z\":1.5}]</answer>";
        let s = Scorer::default()
            .score_text(&task(), text, &RewardWeights::default())
            .unwrap();
        assert!(s.feedback.colliding_pairs.is_empty());
        assert_eq!(s.feedback.violations["b"], BTreeSet::from([ViolationKind::Floating]));
        assert_eq!(s.breakdown.physics.constraint_ratio, 0.5);
        let g = s.graph.unwrap();
        assert_eq!(g.violations, s.feedback.violations);
    }

    #[test]
    fn schedule_advances_through_stages() {
        let cfg = ScheduleConfig {
            window: 4,
            render_after: 3,
            ..ScheduleConfig::default()
        };
        let mut s = StagedWeights::new(RewardWeights::default(), cfg);
        assert_eq!(s.weights().physics, 0.0);
        for _ in 0..3 {
            s.observe(true);
        }
        assert_eq!(s.stage(), Stage::Format);
        s.observe(true);
        assert_eq!(s.stage(), Stage::FormatPhysics);
        assert_eq!(s.weights().render, 0.0);
        assert_eq!(s.weights().physics, 1.0);
        for _ in 0..3 {
            s.observe(false);
        }
        assert_eq!(s.stage(), Stage::Full);
        assert_eq!(s.weights(), RewardWeights::default());
    }

    #[test]
    fn gate_is_strict() {
        let cfg = ScheduleConfig {
            window: 10,
            ..ScheduleConfig::default()
        };
        let mut s = StagedWeights::new(RewardWeights::default(), cfg);
        for i in 0..10 {
            s.observe(i != 0);
        }
        // 9/10 = 0.9 does not exceed the gate.
        assert_eq!(s.stage(), Stage::Format);
        s.observe(true);
        assert_eq!(s.stage(), Stage::FormatPhysics);
    }
}
