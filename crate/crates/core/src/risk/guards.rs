//! Evidence checks applied to a parsed report.
//!
//! Three rules run in order: weak detections are excluded, safe-to-risky
//! flips without any change in the evidence are held back, and distant
//! sidewalk pedestrians that are not approaching the road are downgraded
//! one level. Guards only ever lower a risk level.

use serde::{Deserialize, Serialize};

use super::{observations_of, Excluded, GuardAction, RiskLevel, RiskReport, Verdict};
use crate::scene::{DistanceClass, SceneDescription};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Mean detection confidence below which an id is excluded.
    pub min_confidence: f64,
    /// Approach rate toward the road (frame widths per second) below which a
    /// distant sidewalk pedestrian counts as not approaching.
    pub approach_test: f64,
    /// How many earlier reports must agree before a flip is held.
    pub flip_window: usize,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.3,
            approach_test: 0.02,
            flip_window: 1,
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_confidence > 0.0 && self.approach_test > 0.0 && self.flip_window > 0) {
            return Err(format!("guard thresholds must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Applies the guard rules. `history` holds earlier guarded reports of the
/// same video in interval order.
pub fn apply_guards(
    report: &RiskReport,
    scene: &SceneDescription,
    history: &[RiskReport],
    cfg: &GuardConfig,
) -> RiskReport {
    let mut out = report.clone();
    let now = observations_of(scene);

    let (keep, weak): (Vec<_>, Vec<_>) = out.risks.into_iter().partition(|j| {
        scene
            .evidence
            .get(&j.id)
            .is_none_or(|ev| ev.mean_confidence() >= cfg.min_confidence)
    });
    out.risks = keep;
    for j in weak {
        let mean_confidence = scene.evidence[&j.id].mean_confidence();
        out.excluded.push(Excluded {
            id: j.id,
            mean_confidence,
            judgment: j,
        });
    }

    for j in &mut out.risks {
        if j.binary != Verdict::Risky {
            continue;
        }
        let Some(current) = now.get(&j.id) else {
            continue;
        };
        let prior: Vec<_> = history
            .iter()
            .rev()
            .filter_map(|r| Some((r.judgment(j.id)?, r.observations.get(&j.id)?)))
            .take(cfg.flip_window)
            .collect();
        let unsupported = !prior.is_empty()
            && prior
                .iter()
                .all(|(pj, po)| pj.binary == Verdict::Safe && !current.changed_from(po));
        if unsupported {
            j.guards.push(GuardAction::FlipHeld { from: j.risk_level });
            j.set_level(RiskLevel::None);
        }
    }

    for j in &mut out.risks {
        if j.binary != Verdict::Risky || j.downgraded() {
            continue;
        }
        let Some(ev) = scene.evidence.get(&j.id) else {
            continue;
        };
        let latest = ev.latest();
        let distant = matches!(latest.distance, Some(DistanceClass::Far | DistanceClass::VeryFar));
        let on_sidewalk = latest.surface.is_some_and(|s| s.is_sidewalk());
        if distant && on_sidewalk && ev.approach_rate < cfg.approach_test {
            j.guards.push(GuardAction::Downgraded { from: j.risk_level });
            let lowered = j.risk_level.lowered();
            j.set_level(lowered);
        }
    }
    out
}
