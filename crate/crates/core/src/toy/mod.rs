//! A tabular stochastic layout policy.
//!
//! Every (object, axis, turn) has its own row of logits over `B` bins whose
//! centers span the positions where the object fits inside the room. A
//! roll-out samples one bin per row and writes the centers out as a valid
//! roll-out, one token per coordinate literal plus one per structural
//! fragment. Log-probabilities are exact, so the surrogate's gradient with
//! respect to the logits is available in closed form.

mod train;

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{clipped_term, AdvantageSet};
use crate::error::{AdvantageError, PolicyError};
use crate::layout::{Axis, SceneTask};
use crate::trajectory::{PolicyOutput, PolicyPort, PolicyRequest, TokenAction, TokenRecord, TrajectoryGroup};

pub use train::{evaluate, train, MetricRecord, TrainConfig, TrainOutcome};

pub const DEFAULT_BINS: usize = 24;
const THINK_SENTENCE: &str =
    "Place every object inside the room, resting on the floor, without overlapping any other object.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPolicyParams {
    pub objects: usize,
    pub turns: usize,
    pub bins: usize,
    /// Row-major `[object][axis][turn][bin]`.
    pub logits: Vec<f64>,
}

impl GridPolicyParams {
    pub fn zeros(objects: usize, turns: usize, bins: usize) -> Self {
        Self {
            objects,
            turns,
            bins,
            logits: vec![0.0; objects * 3 * turns * bins],
        }
    }

    pub fn for_task(task: &SceneTask, turns: usize, bins: usize) -> Self {
        Self::zeros(task.objects.len(), turns, bins)
    }

    /// Offset of the row for `(object, axis, turn)`; `turn` is 1-based.
    pub fn row_offset(&self, object: usize, axis: Axis, turn: usize) -> usize {
        ((object * 3 + axis.index()) * self.turns + (turn - 1)) * self.bins
    }

    pub fn row(&self, object: usize, axis: Axis, turn: usize) -> &[f64] {
        let o = self.row_offset(object, axis, turn);
        &self.logits[o..o + self.bins]
    }

    pub fn row_mut(&mut self, object: usize, axis: Axis, turn: usize) -> &mut [f64] {
        let o = self.row_offset(object, axis, turn);
        &mut self.logits[o..o + self.bins]
    }

    fn check_action(&self, a: &TokenAction) -> Result<(), AdvantageError> {
        if a.object >= self.objects || a.turn == 0 || a.turn > self.turns || a.bin >= self.bins {
            return Err(AdvantageError::Shape(format!(
                "token action {a:?} does not fit params ({} objects, {} turns, {} bins)",
                self.objects, self.turns, self.bins
            )));
        }
        if a.masked.iter().any(|&m| m >= self.bins) {
            return Err(AdvantageError::Shape(format!("masked bin out of range in {a:?}")));
        }
        Ok(())
    }

    /// Log-probability of `action` under these logits.
    pub fn logprob(&self, action: &TokenAction) -> f64 {
        log_softmax(self.row(action.object, action.axis, action.turn), &action.masked)[action.bin]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// Log-softmax over the unmasked entries; masked entries get `-inf`.
/// Entries at `+inf` share all the mass.
pub fn log_softmax(logits: &[f64], masked: &[usize]) -> Vec<f64> {
    let live = |i: usize| !masked.contains(&i);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| live(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        let n = logits
            .iter()
            .enumerate()
            .filter(|(i, v)| live(*i) && **v == f64::INFINITY)
            .count();
        return logits
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if live(i) && v == f64::INFINITY {
                    -(n as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
    }
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| live(*i))
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if live(i) { v - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Bin centers for one object along one axis: `bins` evenly spaced points
/// from `size/2` to `extent - size/2`.
pub fn bin_centers(task: &SceneTask, object: usize, axis: Axis, bins: usize) -> Vec<f64> {
    let size = task.objects[object].size_m[axis.index()];
    let extent = task.room.extent(axis);
    let lo = size / 2.0;
    let hi = extent - size / 2.0;
    if bins == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..bins)
        .map(|k| lo + (hi - lo) * k as f64 / (bins - 1) as f64)
        .collect()
}

pub fn format_coord(v: f64) -> String {
    format!("{v:.3}")
}

/// The policy triple used by the surrogate: current parameters, the
/// behavior snapshot that generated the data, and the frozen reference.
#[derive(Debug, Clone)]
pub struct GridPolicy {
    pub current: GridPolicyParams,
    pub behavior: GridPolicyParams,
    pub reference: GridPolicyParams,
    /// Exclude the previous turn's x/y bins for objects that collided.
    pub feedback_masking: bool,
}

impl GridPolicy {
    pub fn new(params: GridPolicyParams) -> Self {
        Self {
            behavior: params.clone(),
            reference: params.clone(),
            current: params,
            feedback_masking: true,
        }
    }

    pub fn for_task(task: &SceneTask, turns: usize, bins: usize) -> Self {
        Self::new(GridPolicyParams::for_task(task, turns, bins))
    }

    /// Starts a new update round: the behavior policy becomes the current one.
    pub fn refresh_behavior(&mut self) {
        self.behavior = self.current.clone();
    }

    fn masked_bins(&self, req: &PolicyRequest<'_>, object: usize, axis: Axis, centers: &[f64]) -> Vec<usize> {
        if !self.feedback_masking || axis == Axis::Z || centers.len() < 2 {
            return Vec::new();
        }
        let (Some(prev), Some(fb)) = (req.previous, req.feedback) else {
            return Vec::new();
        };
        let id = &req.task.objects[object].id;
        if !fb.collided(id) {
            return Vec::new();
        }
        let Some(p) = prev.layout.as_ref().and_then(|l| l.get(id)) else {
            return Vec::new();
        };
        let v = p.coord(axis);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        vec![nearest]
    }

    /// Samples a roll-out for one turn.
    pub fn sample_rollout(&self, req: &PolicyRequest<'_>) -> Result<PolicyOutput, PolicyError> {
        let params = &self.current;
        let task = req.task;
        if task.objects.len() != params.objects {
            return Err(PolicyError::Failed(format!(
                "task has {} objects, policy has {}",
                task.objects.len(),
                params.objects
            )));
        }
        if req.turn == 0 || req.turn > params.turns {
            return Err(PolicyError::Failed(format!(
                "turn {} outside the policy's 1..={} turns",
                req.turn, params.turns
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut text = String::new();
        let mut tokens = Vec::new();
        let mut push = |text: &mut String, fragment: &str, lps: (f64, f64, f64), action: Option<TokenAction>| {
            let start = text.len();
            text.push_str(fragment);
            tokens.push(TokenRecord {
                index: tokens.len(),
                char_span: (start, text.len()),
                logprob_new: Some(lps.0),
                logprob_old: Some(lps.1),
                logprob_ref: Some(lps.2),
                action,
            });
        };
        let fixed = (0.0, 0.0, 0.0);

        push(
            &mut text,
            &format!("<think>\n{THINK_SENTENCE}\n</think>\n<answer>\n["),
            fixed,
            None,
        );
        for (i, obj) in task.objects.iter().enumerate() {
            let id_json = serde_json::to_string(&obj.id).expect("string serializes");
            let sep = if i == 0 { "" } else { "," };
            for axis in Axis::ALL {
                let prefix = match axis {
                    Axis::X => format!("{sep}{{\"new_object_id\":{id_json},\"x\":"),
                    Axis::Y => ",\"y\":".to_string(),
                    Axis::Z => ",\"z\":".to_string(),
                };
                push(&mut text, &prefix, fixed, None);

                let centers = bin_centers(task, i, axis, params.bins);
                let masked = self.masked_bins(req, i, axis, &centers);
                let behavior = log_softmax(self.behavior.row(i, axis, req.turn), &masked);
                let weights: Vec<f64> = behavior.iter().map(|lp| lp.exp()).collect();
                let bin = WeightedIndex::new(&weights)
                    .map_err(|e| PolicyError::Failed(format!("degenerate sampling row: {e}")))?
                    .sample(&mut rng);
                let action = TokenAction {
                    object: i,
                    axis,
                    turn: req.turn,
                    bin,
                    masked,
                };
                let lps = (params.logprob(&action), behavior[bin], self.reference.logprob(&action));
                push(&mut text, &format_coord(centers[bin]), lps, Some(action));
            }
            push(&mut text, "}", fixed, None);
        }
        push(&mut text, "]\n</answer>", fixed, None);
        Ok(PolicyOutput { raw_text: text, tokens })
    }

    /// Copy of `group` with `logprob_new` recomputed under `params`.
    pub fn rescore(group: &TrajectoryGroup, params: &GridPolicyParams) -> Result<TrajectoryGroup, AdvantageError> {
        let mut out = group.clone();
        for traj in &mut out.trajectories {
            for turn in &mut traj.turns {
                for tok in &mut turn.tokens {
                    if let Some(a) = &tok.action {
                        params.check_action(a)?;
                        tok.logprob_new = Some(params.logprob(a));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl PolicyPort for GridPolicy {
    fn generate(&self, request: &PolicyRequest<'_>) -> Result<PolicyOutput, PolicyError> {
        self.sample_rollout(request)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Gradient of the clipped, KL-regularized surrogate with respect to the
/// logits of `params`. Token `logprob_old`/`logprob_ref` come from the group;
/// `logprob_new` is recomputed from `params`.
pub fn logprob_grad(
    params: &GridPolicyParams,
    group: &TrajectoryGroup,
    advantages: &AdvantageSet,
    epsilon: f64,
    beta_kl: f64,
) -> Result<Vec<f64>, AdvantageError> {
    if advantages.advantages.len() != group.trajectories.len() {
        return Err(AdvantageError::Shape("advantage rows do not match trajectories".into()));
    }
    let g = group.trajectories.len() as f64;
    let mut grad = vec![0.0; params.logits.len()];
    for (i, (traj, adv)) in group.trajectories.iter().zip(&advantages.advantages).enumerate() {
        let n = traj.token_count();
        if adv.len() != n {
            return Err(AdvantageError::Shape(format!(
                "trajectory {i}: {} advantages for {n} tokens",
                adv.len()
            )));
        }
        if n == 0 {
            continue;
        }
        let scale = 1.0 / (g * n as f64);
        for (tok, &a) in traj.tokens().zip(adv) {
            let Some(action) = &tok.action else { continue };
            params.check_action(action)?;
            let missing = |what| AdvantageError::MissingLogprob {
                trajectory: i,
                token: tok.index,
                what,
            };
            let old = tok.logprob_old.ok_or_else(|| missing("logprob_old"))?;
            let reference = tok.logprob_ref.ok_or_else(|| missing("logprob_ref"))?;

            let lps = log_softmax(params.row(action.object, action.axis, action.turn), &action.masked);
            let new = lps[action.bin];
            let ratio = (new - old).exp();
            // d/d(new) of min(r A, clip(r) A): r A when the unclipped branch is active.
            let unclipped = ratio * a;
            let d_policy = if unclipped <= clipped_term(ratio, a, epsilon) {
                unclipped
            } else {
                0.0
            };
            let d_kl = beta_kl * ((reference - new).exp() - 1.0);
            let d = scale * (d_policy + d_kl);
            if d == 0.0 {
                continue;
            }
            let off = params.row_offset(action.object, action.axis, action.turn);
            for (b, lp) in lps.iter().enumerate() {
                let p = lp.exp();
                let onehot = if b == action.bin { 1.0 } else { 0.0 };
                grad[off + b] += d * (onehot - p);
            }
        }
    }
    Ok(grad)
}
