//! Multi-turn refinement trajectories.
//!
//! Each sample gets `G` trajectories of `T` turns. Turn 1 sees only the task;
//! later turns also see the previous roll-out and its feedback. A trajectory's
//! reward is `sum_{t=1..T} gamma^t * total_t`.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, TrajectoryError};
use crate::layout::{Axis, SceneTask};
use crate::parse::ParsedRollOut;
use crate::reward::{FeedbackRecord, RewardBreakdown, RewardWeights, Scorer};

pub const DUMP_SCHEMA_VERSION: u32 = 1;

/// Which categorical choice a toy-policy token encodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenAction {
    pub object: usize,
    pub axis: Axis,
    /// 1-based turn index.
    pub turn: usize,
    pub bin: usize,
    /// Bins excluded by feedback at sampling time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub index: usize,
    /// Byte range `[start, end)`.
    pub char_span: (usize, usize),
    pub logprob_new: Option<f64>,
    pub logprob_old: Option<f64>,
    pub logprob_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<TokenAction>,
}

impl TokenRecord {
    pub fn shifted(&self, by: usize, index: usize) -> Self {
        Self {
            index,
            char_span: (self.char_span.0 + by, self.char_span.1 + by),
            ..self.clone()
        }
    }
}

/// What the policy sees when asked for a roll-out.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRequest<'a> {
    pub task: &'a SceneTask,
    /// 1-based.
    pub turn: usize,
    pub previous: Option<&'a ParsedRollOut>,
    pub feedback: Option<&'a FeedbackRecord>,
    pub seed: u64,
}

/// Roll-out text and its tokens (spans relative to `raw_text`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub raw_text: String,
    pub tokens: Vec<TokenRecord>,
}

pub trait PolicyPort: Sync {
    fn generate(&self, request: &PolicyRequest<'_>) -> Result<PolicyOutput, PolicyError>;

    /// Whether trajectories may be generated concurrently.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub index: usize,
    /// Start of this turn's text in the trajectory's concatenated text.
    pub text_offset: usize,
    pub rollout: ParsedRollOut,
    pub reward: RewardBreakdown,
    pub feedback: FeedbackRecord,
    /// Spans relative to the concatenated text.
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub index: usize,
    pub seed: u64,
    pub turns: Vec<Turn>,
    pub discounted_reward: f64,
}

impl Trajectory {
    pub fn concatenated_text(&self) -> String {
        self.turns.iter().map(|t| t.rollout.raw_text.as_str()).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenRecord> {
        self.turns.iter().flat_map(|t| t.tokens.iter())
    }

    pub fn token_count(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn final_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryGroup {
    pub schema_version: u32,
    pub task_id: String,
    pub task: SceneTask,
    pub seed: u64,
    pub gamma: f64,
    pub weights: RewardWeights,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.discounted_reward).collect()
    }
}

/// `sum_{t=1..T} gamma^t * totals[t-1]`.
pub fn discounted_reward(totals: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut sum = 0.0;
    for r in totals {
        weight *= gamma;
        sum += weight * r;
    }
    sum
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutShape {
    pub group: usize,
    pub turns: usize,
    pub gamma: f64,
}

impl RolloutShape {
    fn validate(&self) -> Result<(), TrajectoryError> {
        if self.group < 2 {
            return Err(TrajectoryError::GroupSize(self.group));
        }
        validate_turns_gamma(self.turns, self.gamma)
    }
}

fn validate_turns_gamma(turns: usize, gamma: f64) -> Result<(), TrajectoryError> {
    if turns == 0 {
        return Err(TrajectoryError::InvalidArgument("turns must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(TrajectoryError::InvalidArgument(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// Runs one `turns`-turn refinement trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    policy: &dyn PolicyPort,
    task: &SceneTask,
    scorer: &Scorer,
    turns: usize,
    gamma: f64,
    weights: &RewardWeights,
    seed: u64,
    index: usize,
) -> Result<Trajectory, TrajectoryError> {
    validate_turns_gamma(turns, gamma)?;
    let mut out: Vec<Turn> = Vec::with_capacity(turns);
    let mut offset = 0usize;
    let mut token_index = 0usize;
    for t in 1..=turns {
        let prev = out.last();
        let request = PolicyRequest {
            task,
            turn: t,
            previous: prev.map(|p| &p.rollout),
            feedback: prev.map(|p| &p.feedback),
            seed: derive_seed(seed, t as u64),
        };
        let output = policy
            .generate(&request)
            .map_err(|source| TrajectoryError::Policy { turn: t, source })?;
        let scored = scorer
            .score_text(task, &output.raw_text, weights)
            .map_err(|source| TrajectoryError::Judge { turn: t, source })?;
        let tokens = output
            .tokens
            .iter()
            .map(|tok| {
                let shifted = tok.shifted(offset, token_index);
                token_index += 1;
                shifted
            })
            .collect();
        let len = output.raw_text.len();
        out.push(Turn {
            index: t,
            text_offset: offset,
            rollout: scored.parsed,
            reward: scored.breakdown,
            feedback: scored.feedback,
            tokens,
        });
        offset += len;
    }
    let totals: Vec<f64> = out.iter().map(|t| t.reward.total).collect();
    Ok(Trajectory {
        index,
        seed,
        turns: out,
        discounted_reward: discounted_reward(&totals, gamma),
    })
}

/// Runs `shape.group` trajectories for one task. Trajectory `i` is seeded
/// with `derive_seed(seed, i)`; output order is trajectory order.
pub fn run_group(
    policy: &dyn PolicyPort,
    task: &SceneTask,
    scorer: &Scorer,
    shape: RolloutShape,
    weights: &RewardWeights,
    seed: u64,
) -> Result<TrajectoryGroup, TrajectoryError> {
    shape.validate()?;
    let one = |i: usize| {
        run_trajectory(
            policy,
            task,
            scorer,
            shape.turns,
            shape.gamma,
            weights,
            derive_seed(seed, i as u64),
            i,
        )
        .map_err(|e| TrajectoryError::InTrajectory {
            index: i,
            source: Box::new(e),
        })
    };
    let trajectories = if policy.concurrent_safe() {
        (0..shape.group)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        (0..shape.group).map(one).collect::<Result<Vec<_>, _>>()?
    };
    Ok(TrajectoryGroup {
        schema_version: DUMP_SCHEMA_VERSION,
        task_id: task.task_id().to_string(),
        task: task.clone(),
        seed,
        gamma: shape.gamma,
        weights: *weights,
        trajectories,
    })
}

/// Writes groups as JSON lines.
pub fn write_dump<W: Write>(mut out: W, groups: &[TrajectoryGroup]) -> std::io::Result<()> {
    for g in groups {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unsupported schema version {found} (expected {DUMP_SCHEMA_VERSION})")]
    Version { line: usize, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_dump<R: BufRead>(input: R) -> Result<Vec<TrajectoryGroup>, DumpError> {
    let mut groups = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: TrajectoryGroup =
            serde_json::from_str(&line).map_err(|source| DumpError::Parse { line: i + 1, source })?;
        if group.schema_version != DUMP_SCHEMA_VERSION {
            return Err(DumpError::Version {
                line: i + 1,
                found: group.schema_version,
            });
        }
        groups.push(group);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Layout, ObjectSpec, Placement, RoomSpec};
    use crate::parse::render_rollout;
    use std::sync::Mutex;

    #[test]
    fn three_turn_discount() {
        let r = discounted_reward(&[1.0, 0.5, 0.2], 0.9);
        assert!((r - 1.4508).abs() < 1e-12);
    }

    #[test]
    fn single_turn_is_scaled_by_gamma() {
        assert!((discounted_reward(&[0.7], 0.9) - 0.63).abs() < 1e-12);
    }

    #[test]
    fn undiscounted_sum() {
        assert!((discounted_reward(&[0.3, 0.3, 0.3], 1.0) - 0.9).abs() < 1e-12);
    }

    fn task() -> SceneTask {
        SceneTask::new(RoomSpec::new(6.0, 5.0, 3.0), vec![ObjectSpec::new("a", [1.0; 3])], "").unwrap()
    }

    /// Places the single object at a scripted position per turn and records
    /// what it was shown.
    struct Scripted {
        z: Vec<f64>,
        seen: Mutex<Vec<(usize, bool, bool)>>,
    }

    impl PolicyPort for Scripted {
        fn generate(&self, req: &PolicyRequest<'_>) -> Result<PolicyOutput, PolicyError> {
            self.seen
                .lock()
                .unwrap()
                .push((req.turn, req.previous.is_some(), req.feedback.is_some()));
            let z = *self
                .z
                .get(req.turn - 1)
                .ok_or_else(|| PolicyError::Failed("out of script".into()))?;
            let text = render_rollout("t", &Layout::new(vec![Placement::new("a", 1.0, 1.0, z)]));
            let tokens = vec![TokenRecord {
                index: 0,
                char_span: (0, text.len()),
                logprob_new: Some(0.0),
                logprob_old: Some(0.0),
                logprob_ref: Some(0.0),
                action: None,
            }];
            Ok(PolicyOutput { raw_text: text, tokens })
        }
    }

    #[test]
    fn later_turns_see_previous_rollout_and_feedback() {
        let policy = Scripted {
            z: vec![1.5, 0.5],
            seen: Mutex::new(vec![]),
        };
        let w = RewardWeights::default();
        let traj = run_trajectory(&policy, &task(), &Scorer::default(), 2, 0.9, &w, 3, 0).unwrap();
        assert_eq!(*policy.seen.lock().unwrap(), vec![(1, false, false), (2, true, true)]);
        assert_eq!(traj.turns[0].feedback.violations.len(), 1);
        assert!(traj.turns[1].feedback.violations.is_empty());
        let totals: Vec<f64> = traj.turns.iter().map(|t| t.reward.total).collect();
        assert!((traj.discounted_reward - (0.9 * totals[0] + 0.81 * totals[1])).abs() < 1e-12);
        // Token spans land in the concatenated text.
        let text = traj.concatenated_text();
        let second = &traj.turns[1].tokens[0];
        assert_eq!(second.index, 1);
        assert_eq!(
            &text[second.char_span.0..second.char_span.1],
            traj.turns[1].rollout.raw_text
        );
    }

    #[test]
    fn policy_failure_names_the_turn() {
        let policy = Scripted {
            z: vec![0.5],
            seen: Mutex::new(vec![]),
        };
        let err = run_trajectory(
            &policy,
            &task(),
            &Scorer::default(),
            3,
            0.9,
            &RewardWeights::default(),
            0,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, TrajectoryError::Policy { turn: 2, .. }), "{err}");
    }

    #[test]
    fn group_of_one_is_rejected() {
        let policy = Scripted {
            z: vec![0.5],
            seen: Mutex::new(vec![]),
        };
        let shape = RolloutShape {
            group: 1,
            turns: 1,
            gamma: 0.9,
        };
        let err = run_group(
            &policy,
            &task(),
            &Scorer::default(),
            shape,
            &RewardWeights::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, TrajectoryError::GroupSize(1)));
    }

    #[test]
    fn bad_gamma_is_rejected() {
        let policy = Scripted {
            z: vec![0.5],
            seen: Mutex::new(vec![]),
        };
        for gamma in [0.0, 1.5, f64::NAN] {
            assert!(run_trajectory(
                &policy,
                &task(),
                &Scorer::default(),
                1,
                gamma,
                &RewardWeights::default(),
                0,
                0
            )
            .is_err());
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn moving_the_best_turn_earlier_never_hurts(
                totals in proptest::collection::vec(-1.0f64..1.5, 1..8),
                gamma in 0.05f64..0.999,
                to in 0usize..8,
            ) {
                let best = totals
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                let to = to.min(best);
                let mut moved = totals.clone();
                let v = moved.remove(best);
                moved.insert(to, v);
                prop_assert!(discounted_reward(&moved, gamma) >= discounted_reward(&totals, gamma) - 1e-12);
            }
        }
    }
}
