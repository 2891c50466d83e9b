//! Prompt assembly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{template, RiskError};
use crate::scene::SceneDescription;

/// Longest stretch of frames a prompt may describe.
pub const LOOK_BACK_S: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub scene_text: String,
    pub answer: String,
}

/// The fixed parts of a prompt. The road scene text is supplied per call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub overall_task: String,
    pub input_explanation: String,
    pub few_shot: Vec<FewShot>,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            overall_task: template::OVERALL_TASK.to_string(),
            input_explanation: template::INPUT_EXPLANATION.to_string(),
            few_shot: vec![FewShot {
                scene_text: template::EXAMPLE_SCENE.to_string(),
                answer: template::EXAMPLE_OUTPUT.to_string(),
            }],
        }
    }
}

impl PromptBundle {
    /// Reads a bundle from JSON with the same field names.
    pub fn load(path: &Path) -> Result<Self, RiskError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RiskError::Template(format!("{}: {e}", path.display())))?;
        let bundle: Self = serde_json::from_str(&text)
            .map_err(|e| RiskError::Template(format!("{}: {e}", path.display())))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.overall_task) {
            return Err(RiskError::Template("overall task is empty".into()));
        }
        if blank(&self.input_explanation) {
            return Err(RiskError::Template("input explanation is empty".into()));
        }
        if self.few_shot.is_empty() {
            return Err(RiskError::Template("no few-shot example".into()));
        }
        if self
            .few_shot
            .iter()
            .any(|f| blank(&f.scene_text) || blank(&f.answer))
        {
            return Err(RiskError::Template("few-shot example has an empty part".into()));
        }
        Ok(())
    }
}

/// A two-message chat prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    /// Rough token count, one token per four characters.
    pub token_estimate: usize,
    /// The scene was cut to the look-back limit.
    pub truncated: bool,
}

impl Prompt {
    /// Plain-text rendering written next to each window's artifacts.
    pub fn render(&self) -> String {
        format!(
            "=== SYSTEM ===\n{}\n\n=== USER ===\n{}\n",
            self.system, self.user
        )
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Builds the prompt for one scene: the task as the system message, then the
/// input explanation, the worked examples and the scene as the user message.
///
/// A scene longer than [`LOOK_BACK_S`] is cut to its most recent frames
/// first.
pub fn build_prompt(scene: &SceneDescription, bundle: &PromptBundle) -> Result<Prompt, RiskError> {
    bundle.validate()?;
    let (scene, truncated) = scene.truncated(LOOK_BACK_S);
    if truncated {
        log::warn!(
            "{}: scene spans more than {LOOK_BACK_S} s, keeping frames {}",
            scene.video_id,
            scene.window
        );
    }

    let mut user = String::new();
    user.push_str(bundle.input_explanation.trim_end());
    user.push_str("\n\n");
    for (i, shot) in bundle.few_shot.iter().enumerate() {
        let _ = write!(
            user,
            "## Example {}\n\n{}\n\nExample Output:\n{}\n\n",
            i + 1,
            shot.scene_text.trim_end(),
            shot.answer.trim_end()
        );
    }
    user.push_str("## Road Scene\n\n");
    user.push_str(&scene.scene_text());
    let ids = scene.person_ids();
    let list = if ids.is_empty() {
        "none".to_string()
    } else {
        ids.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
    };
    let _ = writeln!(user, "\nPedestrian IDs to evaluate: {list}");

    let system = bundle.overall_task.trim_end().to_string();
    let token_estimate = estimate_tokens(&system) + estimate_tokens(&user);
    Ok(Prompt {
        system,
        user,
        token_estimate,
        truncated,
    })
}
