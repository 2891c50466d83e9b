//! Risk analysis: prompt assembly, the completion service, verdict parsing
//! and the evidence-based guard rules applied after parsing.

mod guards;
mod prompt;
mod service;
pub mod template;
mod verdict;

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::perception::SurfaceLabel;
use crate::scene::{DistanceClass, FrameRange, PositionClass, SceneDescription, SpeedClass};

pub use guards::{apply_guards, GuardConfig};
pub use prompt::{build_prompt, estimate_tokens, FewShot, Prompt, PromptBundle, LOOK_BACK_S};
pub use service::{
    Completion, CompletionRequest, CompletionService, HttpService, MockService, RuleService,
    ServiceConfig, ServiceError, DEFAULT_MODEL,
};
pub use verdict::parse_verdict;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("prompt template: {0}")]
    Template(String),
    #[error("response has no Safety Evaluation section")]
    MissingSafetyEvaluation { raw: String },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    None,
    Low,
    High,
}

impl RiskLevel {
    pub fn lowered(self) -> Self {
        match self {
            RiskLevel::High => RiskLevel::Low,
            _ => RiskLevel::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::None => "none",
            RiskLevel::Low => "low",
            RiskLevel::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Safe,
    Risky,
}

impl Verdict {
    pub fn of(level: RiskLevel) -> Self {
        if level == RiskLevel::None {
            Verdict::Safe
        } else {
            Verdict::Risky
        }
    }
}

/// Note left on a judgment by a guard rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "guard", rename_all = "snake_case")]
pub enum GuardAction {
    /// Distant sidewalk pedestrian not moving toward the road.
    Downgraded { from: RiskLevel },
    /// Safe-to-risky flip without any change in the evidence.
    FlipHeld { from: RiskLevel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskJudgment {
    pub id: u64,
    pub intention: String,
    pub risk_level: RiskLevel,
    pub binary: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guards: Vec<GuardAction>,
}

impl RiskJudgment {
    pub fn downgraded(&self) -> bool {
        self.guards
            .iter()
            .any(|g| matches!(g, GuardAction::Downgraded { .. }))
    }

    pub(crate) fn set_level(&mut self, level: RiskLevel) {
        self.risk_level = level;
        self.binary = Verdict::of(level);
    }
}

/// A verdict for an id the scene does not contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub id: u64,
    pub verdict: Verdict,
    pub line: String,
}

/// A judgment removed because the detections behind it were weak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub id: u64,
    pub mean_confidence: f64,
    pub judgment: RiskJudgment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceMeta {
    pub model: String,
    /// Zero when read back from a run directory, which keeps wall-clock
    /// values out of the reports.
    #[serde(default)]
    pub latency_s: f64,
}

/// The evidence a pedestrian showed at the end of a window, kept so later
/// windows can tell whether anything changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub surface: Option<SurfaceLabel>,
    pub position: PositionClass,
    pub speed: SpeedClass,
    pub distance: Option<DistanceClass>,
}

impl Observation {
    /// Position, surface or speed differ.
    pub fn changed_from(&self, other: &Observation) -> bool {
        (self.surface, self.position, self.speed) != (other.surface, other.position, other.speed)
    }
}

pub fn observations_of(scene: &SceneDescription) -> BTreeMap<u64, Observation> {
    scene
        .evidence
        .iter()
        .map(|(id, ev)| {
            let f = ev.latest();
            (
                *id,
                Observation {
                    surface: f.surface,
                    position: f.position,
                    speed: f.speed,
                    distance: f.distance,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub video_id: String,
    #[serde(serialize_with = "ser_interval", deserialize_with = "de_interval")]
    pub interval: FrameRange,
    pub risks: Vec<RiskJudgment>,
    /// Verdicts for ids absent from the scene.
    pub rejected: Vec<Rejected>,
    /// Scene ids the response never evaluated.
    pub missing: Vec<u64>,
    /// Lines of the Safety Evaluation section that were not verdicts.
    pub unparsed: Vec<String>,
    pub excluded: Vec<Excluded>,
    pub raw_response: String,
    pub service_meta: Option<ServiceMeta>,
    pub observations: BTreeMap<u64, Observation>,
}

fn ser_interval<S: Serializer>(r: &FrameRange, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.padded())
}

fn de_interval<'de, D: Deserializer<'de>>(d: D) -> Result<FrameRange, D::Error> {
    String::deserialize(d)?
        .parse()
        .map_err(serde::de::Error::custom)
}

impl RiskReport {
    pub fn judgment(&self, id: u64) -> Option<&RiskJudgment> {
        self.risks.iter().find(|j| j.id == id)
    }

    /// Ids currently judged risky.
    pub fn risky_ids(&self) -> Vec<u64> {
        self.risks
            .iter()
            .filter(|j| j.binary == Verdict::Risky)
            .map(|j| j.id)
            .collect()
    }

    /// The compact `{video_id, interval, risks}` form.
    pub fn to_risk_json(&self) -> Value {
        json!({
            "video_id": self.video_id,
            "interval": self.interval.padded(),
            "risks": self.risks.iter().map(|j| json!({
                "id": j.id,
                "intention": j.intention,
                "risk_level": j.risk_level,
            })).collect::<Vec<_>>(),
        })
    }
}
