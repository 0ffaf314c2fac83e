//! Rendering-based reward.
//!
//! A judge grades a layout on five criteria from 1 to 10 (or `unknown`); the
//! reward is the grade sum over 50. Grades come either from a remote
//! vision-language judge over HTTP or from a deterministic offline stub
//! driven by the layout's physics statistics.

mod remote;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::JudgeError;
use crate::layout::{Layout, SceneTask};
use crate::physics::PhysicsReport;

pub use remote::{parse_grades, RemoteJudge};

/// Grade substituted for `unknown` when summing.
pub const UNKNOWN_GRADE_VALUE: u8 = 5;
/// Default pinned color-scheme grade.
pub const DEFAULT_COLOR_SCHEME: u8 = 8;
pub const DEFAULT_API_KEY_ENV: &str = "SPATIALRL_JUDGE_API_KEY";

const PROMPT_TEMPLATE: &str = include_str!("../../assets/judge_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grade {
    Score(u8),
    Unknown,
}

impl Grade {
    pub fn new(score: u8) -> Option<Self> {
        (1..=10).contains(&score).then_some(Grade::Score(score))
    }

    pub fn resolved(self) -> u8 {
        match self {
            Grade::Score(s) => s,
            Grade::Unknown => UNKNOWN_GRADE_VALUE,
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grade::Score(s) => write!(f, "{s}"),
            Grade::Unknown => f.write_str("unknown"),
        }
    }
}

impl Serialize for Grade {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Grade::Score(v) => s.serialize_u8(*v),
            Grade::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for Grade {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        remote::grade_from_value(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeGrades {
    pub realism: Grade,
    pub functionality: Grade,
    pub layout: Grade,
    pub color_scheme: Grade,
    pub aesthetic: Grade,
}

impl JudgeGrades {
    pub fn from_scores(scores: [u8; 5]) -> Option<Self> {
        Some(Self {
            realism: Grade::new(scores[0])?,
            functionality: Grade::new(scores[1])?,
            layout: Grade::new(scores[2])?,
            color_scheme: Grade::new(scores[3])?,
            aesthetic: Grade::new(scores[4])?,
        })
    }

    pub fn all(&self) -> [Grade; 5] {
        [
            self.realism,
            self.functionality,
            self.layout,
            self.color_scheme,
            self.aesthetic,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderSource {
    RemoteJudge,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderReward {
    pub value: f64,
    pub grades: JudgeGrades,
    pub source: RenderSource,
}

/// Normalized grade sum, with `unknown` counted as the scale midpoint.
pub fn render_reward(grades: JudgeGrades, source: RenderSource) -> RenderReward {
    let sum: u32 = grades.all().iter().map(|g| g.resolved() as u32).sum();
    RenderReward {
        value: sum as f64 / 50.0,
        grades,
        source,
    }
}

fn clamp_grade(v: f64) -> Grade {
    Grade::Score(v.round().clamp(1.0, 10.0) as u8)
}

/// Offline grades derived from collision and constraint ratios.
pub fn stub_grades(collision_ratio: f64, constraint_ratio: f64, color_scheme: u8) -> JudgeGrades {
    let realism = clamp_grade(10.0 * (1.0 - collision_ratio));
    let functionality = clamp_grade(10.0 * (1.0 - constraint_ratio));
    let layout = clamp_grade(10.0 * (1.0 - 0.5 * collision_ratio - 0.5 * constraint_ratio));
    let mean = (realism.resolved() + functionality.resolved() + layout.resolved()) as f64 / 3.0;
    JudgeGrades {
        realism,
        functionality,
        layout,
        color_scheme: Grade::Score(color_scheme.clamp(1, 10)),
        aesthetic: clamp_grade(mean),
    }
}

/// JSON skeleton the judge is asked to fill in.
pub fn example_json() -> String {
    let slot = "\"1-10 or unknown\"";
    format!(
        "{{\"realism\": {slot}, \"functionality\": {slot}, \"layout\": {slot}, \"color_scheme\": {slot}, \"aesthetic\": {slot}}}"
    )
}

/// The judge prompt with the preference and answer skeleton substituted.
pub fn judge_prompt(user_preference: &str) -> String {
    PROMPT_TEMPLATE
        .replace("{user_preference}", user_preference)
        .replace("{example_json}", &example_json())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    /// Color-scheme grade used by the stub.
    pub color_scheme: u8,
    /// Replace the remote judge's color-scheme grade with `color_scheme`.
    pub pin_remote_color_scheme: bool,
    pub api_key_env: String,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            mode: JudgeMode::Stub,
            endpoint: None,
            timeout_s: 30.0,
            retries: 3,
            color_scheme: DEFAULT_COLOR_SCHEME,
            pin_remote_color_scheme: false,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

/// Produces the image shown to a remote judge.
pub trait ImageProvider: Send + Sync {
    fn render(&self, task: &SceneTask, layout: &Layout) -> Result<Option<Vec<u8>>, JudgeError>;
}

/// Provider for setups without a renderer: the judge receives text only.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoImage;

impl ImageProvider for NoImage {
    fn render(&self, _task: &SceneTask, _layout: &Layout) -> Result<Option<Vec<u8>>, JudgeError> {
        Ok(None)
    }
}

/// Summary statistics sent along with a remote request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutStats {
    pub collision_ratio: f64,
    pub constraint_ratio: f64,
}

impl From<&PhysicsReport> for LayoutStats {
    fn from(r: &PhysicsReport) -> Self {
        Self {
            collision_ratio: r.collision_ratio,
            constraint_ratio: r.constraint_ratio,
        }
    }
}

/// Grades layouts according to a [`JudgeConfig`].
#[derive(Clone)]
pub struct Judge {
    config: JudgeConfig,
    provider: Arc<dyn ImageProvider>,
    remote: Option<RemoteJudge>,
}

impl fmt::Debug for Judge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Judge").field("config", &self.config).finish()
    }
}

impl Judge {
    pub fn new(config: JudgeConfig) -> Result<Self, JudgeError> {
        Self::with_provider(config, Arc::new(NoImage))
    }

    pub fn stub() -> Self {
        Self::new(JudgeConfig::default()).expect("stub judge needs no endpoint")
    }

    pub fn with_provider(config: JudgeConfig, provider: Arc<dyn ImageProvider>) -> Result<Self, JudgeError> {
        let remote = match config.mode {
            JudgeMode::Stub => None,
            JudgeMode::Remote => Some(RemoteJudge::new(&config)?),
        };
        Ok(Self {
            config,
            provider,
            remote,
        })
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    pub fn is_deterministic(&self) -> bool {
        self.config.mode == JudgeMode::Stub
    }

    /// Grades a layout. `layout` is `None` for roll-outs without a usable
    /// layout; the remote judge is not consulted for those.
    pub fn query(
        &self,
        task: &SceneTask,
        layout: Option<&Layout>,
        physics: &PhysicsReport,
    ) -> Result<JudgeGrades, JudgeError> {
        let stats = LayoutStats::from(physics);
        match (&self.remote, layout) {
            (Some(remote), Some(layout)) => {
                let image = self.provider.render(task, layout)?;
                let prompt = judge_prompt(&task.user_preference);
                let mut grades = remote.query(&prompt, image.as_deref(), Some(layout), &stats)?;
                if self.config.pin_remote_color_scheme {
                    grades.color_scheme = Grade::Score(self.config.color_scheme.clamp(1, 10));
                }
                Ok(grades)
            }
            _ => Ok(stub_grades(
                stats.collision_ratio,
                stats.constraint_ratio,
                self.config.color_scheme,
            )),
        }
    }

    pub fn reward(
        &self,
        task: &SceneTask,
        layout: Option<&Layout>,
        physics: &PhysicsReport,
    ) -> Result<RenderReward, JudgeError> {
        let grades = self.query(task, layout, physics)?;
        let source = match (&self.remote, layout) {
            (Some(_), Some(_)) => RenderSource::RemoteJudge,
            _ => RenderSource::Stub,
        };
        Ok(render_reward(grades, source))
    }
}
