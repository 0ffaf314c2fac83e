//! Physics-aware group-relative advantages and the clipped surrogate.
//!
//! Per trajectory `i` with discounted reward `R_i`, every token gets the
//! adjusted reward `R_i`, except coordinate tokens of object `o`, which get
//! `R_i - w_phys * p_o` (or `R_i * (1 - w_phys * p_o)` in multiplicative
//! mode). Advantages are `(adjusted - mu) / sigma`, where `mu` and `sigma`
//! are the mean and population standard deviation of the *unadjusted*
//! rewards across the group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::AdvantageError;
use crate::layout::{Axis, Layout};
use crate::parse::parse_rollout;
use crate::trajectory::{TokenRecord, Trajectory, TrajectoryGroup};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordLabel {
    NotCoord,
    Coord { object_id: String, axis: Axis },
}

impl CoordLabel {
    pub fn object_id(&self) -> Option<&str> {
        match self {
            CoordLabel::Coord { object_id, .. } => Some(object_id),
            CoordLabel::NotCoord => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordMask {
    pub labels: Vec<CoordLabel>,
}

impl CoordMask {
    pub fn coord_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != CoordLabel::NotCoord).count()
    }
}

fn spans_intersect(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Labels tokens whose span touches an object's x/y/z literal inside the
/// answer block. Token spans are relative to `raw_text`.
pub fn coord_mask(raw_text: &str, tokens: &[TokenRecord], layout: Option<&Layout>) -> CoordMask {
    let not_coord = || CoordMask {
        labels: vec![CoordLabel::NotCoord; tokens.len()],
    };
    let Some(layout) = layout else {
        return not_coord();
    };
    let parsed = parse_rollout(raw_text);
    let Some(records) = parsed.records else {
        return not_coord();
    };
    let literals: Vec<((usize, usize), &str, Axis)> = records
        .iter()
        .filter_map(|r| {
            let id = r.object_id.as_deref()?;
            layout.get(id)?;
            Some(Axis::ALL.into_iter().filter_map(move |a| Some((r.span(a)?, id, a))))
        })
        .flatten()
        .collect();
    let labels = tokens
        .iter()
        .map(|tok| {
            literals
                .iter()
                .find(|(span, _, _)| spans_intersect(tok.char_span, *span))
                .map_or(CoordLabel::NotCoord, |(_, id, axis)| CoordLabel::Coord {
                    object_id: id.to_string(),
                    axis: *axis,
                })
        })
        .collect();
    CoordMask { labels }
}

/// Mask over all tokens of a trajectory, turn by turn.
pub fn trajectory_mask(traj: &Trajectory) -> CoordMask {
    let mut labels = Vec::with_capacity(traj.token_count());
    for turn in &traj.turns {
        let local: Vec<TokenRecord> = turn
            .tokens
            .iter()
            .map(|t| TokenRecord {
                char_span: (
                    t.char_span.0.saturating_sub(turn.text_offset),
                    t.char_span.1.saturating_sub(turn.text_offset),
                ),
                ..t.clone()
            })
            .collect();
        labels.extend(coord_mask(&turn.rollout.raw_text, &local, turn.rollout.layout.as_ref()).labels);
    }
    CoordMask { labels }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationMode {
    /// `R - w * p`
    #[default]
    Subtractive,
    /// `R * (1 - w * p)`
    Multiplicative,
}

/// Per-object penalties taken from each trajectory's final turn.
pub fn final_turn_penalties(group: &TrajectoryGroup) -> Vec<BTreeMap<String, f64>> {
    group
        .trajectories
        .iter()
        .map(|t| {
            t.final_turn()
                .map(|turn| turn.reward.physics.per_object_penalty.clone())
                .unwrap_or_default()
        })
        .collect()
}

/// Adjusted per-token rewards.
pub fn modulate_rewards(
    group: &TrajectoryGroup,
    masks: &[CoordMask],
    penalties: &[BTreeMap<String, f64>],
    w_phys: f64,
    mode: ModulationMode,
) -> Result<Vec<Vec<f64>>, AdvantageError> {
    if !(w_phys >= 0.0 && w_phys.is_finite()) {
        return Err(AdvantageError::InvalidArgument(format!(
            "w_phys must be >= 0, got {w_phys}"
        )));
    }
    let g = group.trajectories.len();
    if masks.len() != g || penalties.len() != g {
        return Err(AdvantageError::Shape(format!(
            "{g} trajectories but {} masks and {} penalty maps",
            masks.len(),
            penalties.len()
        )));
    }
    group
        .trajectories
        .iter()
        .zip(masks)
        .zip(penalties)
        .map(|((traj, mask), pen)| {
            if mask.labels.len() != traj.token_count() {
                return Err(AdvantageError::Shape(format!(
                    "trajectory {} has {} tokens but mask has {}",
                    traj.index,
                    traj.token_count(),
                    mask.labels.len()
                )));
            }
            if let Some((id, p)) = pen.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(AdvantageError::InvalidArgument(format!(
                    "penalty for `{id}` is {p}, outside [0, 1]"
                )));
            }
            let r = traj.discounted_reward;
            Ok(mask
                .labels
                .iter()
                .map(|label| match label.object_id().and_then(|id| pen.get(id)) {
                    Some(&p) => match mode {
                        ModulationMode::Subtractive => r - w_phys * p,
                        ModulationMode::Multiplicative => r * (1.0 - w_phys * p),
                    },
                    None => r,
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub group_mean: f64,
    pub group_std: f64,
    /// `advantages[i][k]` for trajectory `i`, token `k`.
    pub advantages: Vec<Vec<f64>>,
}

pub const DEFAULT_SIGMA_EPS: f64 = 1e-8;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn normalize_group(
    group: &TrajectoryGroup,
    adjusted: &[Vec<f64>],
    sigma_eps: f64,
) -> Result<AdvantageSet, AdvantageError> {
    if group.trajectories.len() < 2 {
        return Err(AdvantageError::InvalidArgument(format!(
            "group needs at least 2 trajectories, got {}",
            group.trajectories.len()
        )));
    }
    if adjusted.len() != group.trajectories.len() {
        return Err(AdvantageError::Shape(format!(
            "{} trajectories but {} reward rows",
            group.trajectories.len(),
            adjusted.len()
        )));
    }
    let (mu, sigma) = mean_std(&group.rewards());
    let degenerate = sigma < sigma_eps;
    let advantages = adjusted
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| if degenerate { 0.0 } else { (r - mu) / sigma })
                .collect()
        })
        .collect();
    Ok(AdvantageSet {
        group_mean: mu,
        group_std: sigma,
        advantages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvantageConfig {
    pub w_phys: f64,
    pub mode: ModulationMode,
    pub sigma_eps: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            w_phys: 0.2,
            mode: ModulationMode::Subtractive,
            sigma_eps: DEFAULT_SIGMA_EPS,
        }
    }
}

/// Masking, modulation and normalization in one call.
pub fn group_advantages(
    group: &TrajectoryGroup,
    config: &AdvantageConfig,
) -> Result<(Vec<CoordMask>, AdvantageSet), AdvantageError> {
    let masks: Vec<CoordMask> = group.trajectories.iter().map(trajectory_mask).collect();
    let penalties = final_turn_penalties(group);
    let adjusted = modulate_rewards(group, &masks, &penalties, config.w_phys, config.mode)?;
    let set = normalize_group(group, &adjusted, config.sigma_eps)?;
    Ok((masks, set))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenTerm {
    pub ratio: f64,
    /// `min(ratio * A, clip(ratio) * A)`
    pub policy_term: f64,
    /// `exp(d) - d - 1` with `d = logprob_ref - logprob_new`.
    pub kl: f64,
    /// `policy_term - beta_kl * kl`
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub objective: f64,
    pub terms: Vec<Vec<TokenTerm>>,
}

/// Non-negative per-token KL estimate.
pub fn kl_estimate(logprob_new: f64, logprob_ref: f64) -> f64 {
    let d = logprob_ref - logprob_new;
    d.exp() - d - 1.0
}

pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

pub fn surrogate_objective(
    group: &TrajectoryGroup,
    advantages: &AdvantageSet,
    epsilon: f64,
    beta_kl: f64,
) -> Result<Surrogate, AdvantageError> {
    if epsilon.is_nan() || epsilon <= 0.0 || beta_kl.is_nan() || beta_kl < 0.0 {
        return Err(AdvantageError::InvalidArgument(format!(
            "need epsilon > 0 and beta_kl >= 0, got {epsilon} and {beta_kl}"
        )));
    }
    if advantages.advantages.len() != group.trajectories.len() {
        return Err(AdvantageError::Shape("advantage rows do not match trajectories".into()));
    }
    let mut terms = Vec::with_capacity(group.trajectories.len());
    let mut objective = 0.0;
    for (i, (traj, adv)) in group.trajectories.iter().zip(&advantages.advantages).enumerate() {
        if adv.len() != traj.token_count() {
            return Err(AdvantageError::Shape(format!(
                "trajectory {i}: {} advantages for {} tokens",
                adv.len(),
                traj.token_count()
            )));
        }
        let mut row = Vec::with_capacity(adv.len());
        let mut sum = 0.0;
        for (tok, &a) in traj.tokens().zip(adv) {
            let missing = |what| AdvantageError::MissingLogprob {
                trajectory: i,
                token: tok.index,
                what,
            };
            let new = tok.logprob_new.ok_or_else(|| missing("logprob_new"))?;
            let old = tok.logprob_old.ok_or_else(|| missing("logprob_old"))?;
            let reference = tok.logprob_ref.ok_or_else(|| missing("logprob_ref"))?;
            let ratio = (new - old).exp();
            let policy_term = clipped_term(ratio, a, epsilon);
            let kl = kl_estimate(new, reference);
            let term = policy_term - beta_kl * kl;
            sum += term;
            row.push(TokenTerm {
                ratio,
                policy_term,
                kl,
                term,
            });
        }
        if !row.is_empty() {
            objective += sum / row.len() as f64;
        }
        terms.push(row);
    }
    objective /= group.trajectories.len() as f64;
    Ok(Surrogate { objective, terms })
}

pub const ADVANTAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAdvantage {
    pub index: usize,
    pub label: CoordLabel,
    pub advantage: f64,
    pub policy_term: f64,
    pub kl_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAdvantages {
    pub index: usize,
    pub discounted_reward: f64,
    pub tokens: Vec<TokenAdvantage>,
}

/// One record of the advantage output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub schema_version: u32,
    pub group_id: String,
    pub mu: f64,
    pub sigma: f64,
    pub objective: f64,
    pub trajectories: Vec<TrajectoryAdvantages>,
}

impl AdvantageReport {
    pub fn build(group: &TrajectoryGroup, masks: &[CoordMask], set: &AdvantageSet, surrogate: &Surrogate) -> Self {
        let trajectories = group
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, traj)| TrajectoryAdvantages {
                index: traj.index,
                discounted_reward: traj.discounted_reward,
                tokens: traj
                    .tokens()
                    .enumerate()
                    .map(|(k, tok)| TokenAdvantage {
                        index: tok.index,
                        label: masks[i].labels[k].clone(),
                        advantage: set.advantages[i][k],
                        policy_term: surrogate.terms[i][k].policy_term,
                        kl_term: surrogate.terms[i][k].kl,
                    })
                    .collect(),
            })
            .collect();
        Self {
            schema_version: ADVANTAGE_SCHEMA_VERSION,
            group_id: format!("{}:{}", group.task_id, group.seed),
            mu: set.group_mean,
            sigma: set.group_std,
            objective: surrogate.objective,
            trajectories,
        }
    }
}

/// Validates that every turn of every trajectory carries token data.
pub fn check_token_data(group: &TrajectoryGroup) -> Result<(), AdvantageError> {
    for (i, traj) in group.trajectories.iter().enumerate() {
        for turn in &traj.turns {
            if turn.tokens.is_empty() {
                return Err(AdvantageError::TokenData {
                    trajectory: i,
                    turn: turn.index,
                    reason: "no token records".into(),
                });
            }
            if let Some(t) = turn
                .tokens
                .iter()
                .find(|t| t.logprob_new.is_none() || t.logprob_old.is_none() || t.logprob_ref.is_none())
            {
                return Err(AdvantageError::TokenData {
                    trajectory: i,
                    turn: turn.index,
                    reason: format!("token {} lacks logprobs", t.index),
                });
            }
        }
    }
    Ok(())
}
