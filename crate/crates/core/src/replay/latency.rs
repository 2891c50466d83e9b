//! Declarative per-stage latency and the reaction budget it leaves.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReplayError;

/// Time-to-collision horizon the driver's reaction budget is measured in.
pub const TTC_HORIZON_S: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tracking,
    Grounding,
    Depth,
    RiskAnalysis,
    Hud,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Tracking,
        Stage::Grounding,
        Stage::Depth,
        Stage::RiskAnalysis,
        Stage::Hud,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tracking => "tracking",
            Stage::Grounding => "grounding",
            Stage::Depth => "depth",
            Stage::RiskAnalysis => "risk_analysis",
            Stage::Hud => "hud",
        }
    }

    /// Perception stages run side by side in group 1; the rest follow.
    pub fn default_group(self) -> u32 {
        match self {
            Stage::Tracking | Stage::Grounding | Stage::Depth => 1,
            Stage::RiskAnalysis => 2,
            Stage::Hud => 3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: Stage,
    pub seconds: f64,
    pub parallel_group: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub label: String,
    pub stages: Vec<StageLatency>,
}

impl LatencyProfile {
    pub const BUILT_IN: [&'static str; 2] = ["paper-2023", "upgraded-2025"];

    /// Builds a profile with every stage in its default group.
    pub fn from_seconds(label: &str, seconds: [(Stage, f64); 5]) -> Self {
        Self {
            label: label.into(),
            stages: seconds
                .into_iter()
                .map(|(stage, seconds)| StageLatency {
                    stage,
                    seconds,
                    parallel_group: stage.default_group(),
                })
                .collect(),
        }
    }

    pub fn built_in(name: &str) -> Option<Self> {
        use Stage::*;
        match name {
            "paper-2023" => Some(Self::from_seconds(
                name,
                [(Tracking, 0.19), (Grounding, 3.86), (Depth, 14.97), (RiskAnalysis, 1.76), (Hud, 0.033)],
            )),
            "upgraded-2025" => Some(Self::from_seconds(
                name,
                [(Tracking, 0.19), (Grounding, 0.56), (Depth, 0.20), (RiskAnalysis, 1.40), (Hud, 0.033)],
            )),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ReplayError::Latency(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReplayError::io(path, e))?;
        Self::parse(&text).map_err(|e| ReplayError::Latency(format!("{}: {e}", path.display())))
    }

    /// A built-in name, or else a path to a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ReplayError> {
        match Self::built_in(name_or_path) {
            Some(p) => Ok(p),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        for s in &self.stages {
            if !(s.seconds.is_finite() && s.seconds >= 0.0) {
                return Err(ReplayError::Latency(format!("{}: seconds must be >= 0, got {}", s.stage, s.seconds)));
            }
        }
        Ok(())
    }

    pub fn seconds(&self, stage: Stage) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.seconds)
    }
}

impl FromStr for LatencyProfile {
    type Err = ReplayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::resolve(s)
    }
}

/// Groups run one after another; stages inside a group run concurrently,
/// so each group costs its slowest stage.
pub fn total_latency(profile: &LatencyProfile) -> Result<f64, ReplayError> {
    profile.validate()?;
    for required in [Stage::RiskAnalysis, Stage::Hud] {
        match profile.stages.iter().filter(|s| s.stage == required).count() {
            1 => {}
            0 => return Err(ReplayError::Latency(format!("{}: missing stage {required}", profile.label))),
            n => return Err(ReplayError::Latency(format!("{}: stage {required} listed {n} times", profile.label))),
        }
    }
    let mut groups: BTreeMap<u32, f64> = BTreeMap::new();
    for s in &profile.stages {
        let g = groups.entry(s.parallel_group).or_insert(0.0);
        *g = g.max(s.seconds);
    }
    Ok(groups.values().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetVerdict {
    WithinBudget,
    OverBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionBudget {
    pub verdict: BudgetVerdict,
    /// Reaction time left beyond `ttc_floor`; negative when over budget.
    pub margin_s: f64,
    pub horizon_s: f64,
    pub ttc_floor_s: f64,
}

/// Whether the driver keeps at least `ttc_floor` seconds to react once the
/// pipeline's latency is spent out of the [`TTC_HORIZON_S`] horizon.
/// The boundary counts as within budget.
pub fn check_reaction_budget(total: f64, ttc_floor: f64) -> Result<ReactionBudget, ReplayError> {
    check_reaction_budget_with(total, ttc_floor, TTC_HORIZON_S)
}

pub fn check_reaction_budget_with(total: f64, ttc_floor: f64, horizon: f64) -> Result<ReactionBudget, ReplayError> {
    if !(ttc_floor > 0.0 && ttc_floor.is_finite()) {
        return Err(ReplayError::Config(format!("ttc floor must be positive, got {ttc_floor}")));
    }
    let margin_s = horizon - total - ttc_floor;
    Ok(ReactionBudget {
        verdict: if margin_s >= -1e-9 {
            BudgetVerdict::WithinBudget
        } else {
            BudgetVerdict::OverBudget
        },
        margin_s,
        horizon_s: horizon,
        ttc_floor_s: ttc_floor,
    })
}

/// Mean measured seconds per stage, grouped like `template`.
pub fn measured_profile(samples: &[BTreeMap<Stage, f64>], template: &LatencyProfile) -> LatencyProfile {
    let stages = Stage::ALL
        .iter()
        .map(|&stage| {
            let vals: Vec<f64> = samples.iter().filter_map(|m| m.get(&stage).copied()).collect();
            let seconds = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            let parallel_group = template
                .stages
                .iter()
                .find(|s| s.stage == stage)
                .map_or(stage.default_group(), |s| s.parallel_group);
            StageLatency {
                stage,
                seconds,
                parallel_group,
            }
        })
        .collect();
    LatencyProfile {
        label: "measured".into(),
        stages,
    }
}
