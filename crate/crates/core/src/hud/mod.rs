//! Gaze-adaptive overlay state.
//!
//! A guarded [`RiskReport`] plus the current frame becomes a list of
//! [`SignPlan`]s (one per merged group of risky ids). [`apply_plan`] carries
//! sign identity and acknowledgment over from the previous state and logs
//! lifecycle transitions; [`process_gaze`] acknowledges signs the driver has
//! looked at; [`render_model`] turns a state into a display list.
//!
//! Per sign the only non-lifecycle edges are `active_full -> acknowledged`
//! (gaze dwell) and `acknowledged -> active_full` (a member's risk level
//! rose). Appearing and retiring are logged from/to `absent`.

mod gaze;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{BoundingBox, EgoState, EntityClass, FrameObservation};
use crate::risk::{RiskLevel, RiskReport};
use crate::scene::assign_surface;

pub use gaze::{parse_gaze_csv, process_gaze, GazeSample};
pub use render::{render_model, Color, DisplayItem, Shape};

#[derive(Debug, Error, PartialEq)]
pub enum HudError {
    #[error("gaze line {line}: {message}")]
    Gaze { line: usize, message: String },
    #[error("hud config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    OnRoad,
    Roadside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignState {
    ActiveFull,
    Acknowledged,
}

/// State names used in the transition log, including `absent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateTag {
    Absent,
    ActiveFull,
    Acknowledged,
}

impl From<SignState> for StateTag {
    fn from(s: SignState) -> Self {
        match s {
            SignState::ActiveFull => StateTag::ActiveFull,
            SignState::Acknowledged => StateTag::Acknowledged,
        }
    }
}

impl fmt::Display for StateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateTag::Absent => "absent",
            StateTag::ActiveFull => "active_full",
            StateTag::Acknowledged => "acknowledged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Gaze,
    Report,
    Escalation,
}

/// One line of the transition log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub t: f64,
    pub sign: u64,
    pub from: StateTag,
    pub to: StateTag,
    pub cause: Cause,
}

/// Newline-delimited JSON, one event per line.
pub fn format_events(events: &[TransitionEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

pub fn parse_events(text: &str) -> Result<Vec<TransitionEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSign {
    pub sign_id: u64,
    pub member_ids: BTreeSet<u64>,
    pub kind: SignKind,
    pub geometry: BoundingBox,
    pub state: SignState,
    pub created_at: f64,
    pub acknowledged_at: Option<f64>,
    /// Risk level per member as of the last report.
    pub levels: BTreeMap<u64, RiskLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceArc {
    pub arc_id: u64,
    pub target_sign: u64,
    pub kind: SignKind,
    /// Degrees clockwise from display-up, in 45 degree steps.
    pub bearing: f64,
    pub visible: bool,
}

/// A merged group of risky ids for one frame, before identity matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignPlan {
    pub member_ids: BTreeSet<u64>,
    pub kind: SignKind,
    pub geometry: BoundingBox,
    pub levels: BTreeMap<u64, RiskLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HudConfig {
    pub dwell_ms: f64,
    /// Hit region padding, fraction of frame width.
    pub hit_pad: f64,
    /// Merge distance, fraction of frame width.
    pub gap_threshold: f64,
    /// Longest gap between valid gaze samples that keeps a dwell alive.
    pub continuity_gap_ms: f64,
    /// Padding of sign geometry around its members, fraction of frame width.
    pub sign_pad: f64,
    /// Full triangle edge, fraction of frame width.
    pub triangle_size: f64,
    /// Basics bar height, fraction of frame height.
    pub basics_height: f64,
    /// Distance of the arc band from the display edge, fraction of the
    /// shorter display side.
    pub arc_margin: f64,
}

impl Default for HudConfig {
    fn default() -> Self {
        Self {
            dwell_ms: 200.0,
            hit_pad: 0.05,
            gap_threshold: 0.02,
            continuity_gap_ms: 100.0,
            sign_pad: 0.005,
            triangle_size: 0.03,
            basics_height: 0.06,
            arc_margin: 0.04,
        }
    }
}

impl HudConfig {
    pub fn validate(&self) -> Result<(), HudError> {
        let fields = [
            ("dwell_ms", self.dwell_ms),
            ("hit_pad", self.hit_pad),
            ("gap_threshold", self.gap_threshold),
            ("continuity_gap_ms", self.continuity_gap_ms),
            ("sign_pad", self.sign_pad),
            ("triangle_size", self.triangle_size),
            ("basics_height", self.basics_height),
            ("arc_margin", self.arc_margin),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(HudError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct DwellRun {
    start: f64,
    last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HudOverlayState {
    pub frame_index: u32,
    pub t: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub signs: Vec<RiskSign>,
    pub arcs: Vec<GuidanceArc>,
    pub basics: EgoState,
    pub next_sign_id: u64,
    #[serde(skip)]
    dwell: BTreeMap<u64, DwellRun>,
    #[serde(skip)]
    last_gaze_t: Option<f64>,
    #[serde(skip)]
    last_valid_t: Option<f64>,
}

impl HudOverlayState {
    pub fn new(frame_width: u32, frame_height: u32) -> Self {
        Self {
            frame_index: 0,
            t: 0.0,
            frame_width,
            frame_height,
            signs: Vec::new(),
            arcs: Vec::new(),
            basics: EgoState::default(),
            next_sign_id: 1,
            dwell: BTreeMap::new(),
            last_gaze_t: None,
            last_valid_t: None,
        }
    }

    pub fn sign(&self, sign_id: u64) -> Option<&RiskSign> {
        self.signs.iter().find(|s| s.sign_id == sign_id)
    }

    pub fn sign_of_member(&self, id: u64) -> Option<&RiskSign> {
        self.signs.iter().find(|s| s.member_ids.contains(&id))
    }

    /// Time of the last gaze sample consumed, if any.
    pub fn last_gaze_t(&self) -> Option<f64> {
        self.last_gaze_t
    }

    /// Rebuilds arcs from sign states and drops dwell runs of signs that
    /// are gone or no longer active.
    fn sync(&mut self) {
        let (w, h) = (f64::from(self.frame_width), f64::from(self.frame_height));
        self.arcs = self
            .signs
            .iter()
            .filter(|s| s.state == SignState::ActiveFull)
            .map(|s| GuidanceArc {
                arc_id: s.sign_id,
                target_sign: s.sign_id,
                kind: s.kind,
                bearing: bearing_to(&s.geometry, w, h),
                visible: true,
            })
            .collect();
        let active: BTreeSet<u64> = self.arcs.iter().map(|a| a.target_sign).collect();
        self.dwell.retain(|id, _| active.contains(id));
    }
}

/// Compass bearing from the display center to the box center, clockwise
/// from up, snapped to the nearest of eight 45 degree sectors.
pub fn bearing_to(geometry: &BoundingBox, frame_w: f64, frame_h: f64) -> f64 {
    let (cx, cy) = geometry.center();
    let (dx, dy) = (cx - frame_w / 2.0, cy - frame_h / 2.0);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let deg = dx.atan2(-dy).to_degrees().rem_euclid(360.0);
    ((deg / 45.0).round() as i64).rem_euclid(8) as f64 * 45.0
}

fn adjacent(a: &RiskSign, b: &RiskSign, max_gap: f64) -> bool {
    if a.kind != b.kind {
        return false;
    }
    let gap = a.geometry.gap_to(&b.geometry);
    gap <= 0.0 || gap < max_gap
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn combine(group: Vec<RiskSign>) -> RiskSign {
    let mut iter = group.into_iter();
    let mut acc = iter.next().expect("non-empty group");
    for s in iter {
        acc.sign_id = acc.sign_id.min(s.sign_id);
        acc.member_ids.extend(s.member_ids);
        acc.geometry = acc.geometry.union(&s.geometry);
        acc.created_at = acc.created_at.min(s.created_at);
        acc.acknowledged_at = match (acc.state, s.state) {
            (SignState::Acknowledged, SignState::Acknowledged) => {
                Some(acc.acknowledged_at.unwrap_or(0.0).max(s.acknowledged_at.unwrap_or(0.0)))
            }
            _ => None,
        };
        if s.state == SignState::ActiveFull {
            acc.state = SignState::ActiveFull;
        }
        for (id, level) in s.levels {
            let e = acc.levels.entry(id).or_insert(level);
            *e = (*e).max(level);
        }
    }
    acc
}

/// Merges same-kind signs that overlap or lie closer than
/// `gap_threshold * frame_w`, repeating until no pair qualifies (a merged
/// box can reach signs its parts could not). Output is sorted by sign id.
pub fn merge_adjacent(mut signs: Vec<RiskSign>, gap_threshold: f64, frame_w: f64) -> Vec<RiskSign> {
    let max_gap = gap_threshold * frame_w;
    loop {
        let n = signs.len();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut merged = false;
        for i in 0..n {
            for j in i + 1..n {
                if adjacent(&signs[i], &signs[j], max_gap) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[b] = a;
                        merged = true;
                    }
                }
            }
        }
        if !merged {
            break;
        }
        let mut groups: BTreeMap<usize, Vec<RiskSign>> = BTreeMap::new();
        for (i, s) in signs.into_iter().enumerate() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(s);
        }
        signs = groups.into_values().map(combine).collect();
    }
    signs.sort_by_key(|s| s.sign_id);
    signs
}

/// Sign targets for one frame: every id judged at least low risk and
/// visible in `frame`, grouped by kind and merged by adjacency.
///
/// Vehicles are always on-road; pedestrians are on-road when their foot
/// strip lies on a road region. Ids not visible in the frame get no sign.
pub fn plan_signs(report: &RiskReport, frame: &FrameObservation, cfg: &HudConfig) -> Vec<SignPlan> {
    let (w, h) = (f64::from(frame.width()), f64::from(frame.height()));
    let pad = cfg.sign_pad * w;
    let protos: Vec<RiskSign> = report
        .risks
        .iter()
        .filter(|j| j.risk_level >= RiskLevel::Low)
        .filter_map(|j| {
            let entity = frame.entity(j.id)?;
            let on_road = entity.class == EntityClass::Vehicle
                || assign_surface(&entity.bbox, &frame.surfaces).is_some_and(|s| s.is_road());
            Some(RiskSign {
                sign_id: j.id,
                member_ids: BTreeSet::from([j.id]),
                kind: if on_road { SignKind::OnRoad } else { SignKind::Roadside },
                geometry: entity.bbox.padded(pad).clamp_to(w, h).0,
                state: SignState::ActiveFull,
                created_at: 0.0,
                acknowledged_at: None,
                levels: BTreeMap::from([(j.id, j.risk_level)]),
            })
        })
        .collect();
    merge_adjacent(protos, cfg.gap_threshold, w)
        .into_iter()
        .map(|s| SignPlan {
            member_ids: s.member_ids,
            kind: s.kind,
            geometry: s.geometry,
            levels: s.levels,
        })
        .collect()
}

/// Replaces the prior state's signs with `plans`, keeping identity and
/// acknowledgment where member sets intersect a same-kind prior sign.
///
/// A plan matching several prior signs takes the lowest unclaimed id; it is
/// acknowledged only if every matched sign was and no member's level rose
/// (a new member counts as a rise). Unmatched prior signs retire.
pub fn apply_plan(
    prior: &HudOverlayState,
    plans: &[SignPlan],
    frame_index: u32,
    t: f64,
    basics: &EgoState,
) -> (HudOverlayState, Vec<TransitionEvent>) {
    let mut next = prior.clone();
    next.frame_index = frame_index;
    next.t = t;
    next.basics = basics.clone();
    let mut events = Vec::new();
    let mut claimed = BTreeSet::new();
    let mut signs = Vec::with_capacity(plans.len());
    for plan in plans {
        let matches: Vec<&RiskSign> = prior
            .signs
            .iter()
            .filter(|s| s.kind == plan.kind && !s.member_ids.is_disjoint(&plan.member_ids))
            .collect();
        let prior_level = |id: u64| {
            matches
                .iter()
                .filter_map(|s| s.levels.get(&id).copied())
                .max()
                .unwrap_or(RiskLevel::None)
        };
        let escalated = plan.levels.iter().any(|(id, l)| *l > prior_level(*id));
        let all_ack = !matches.is_empty() && matches.iter().all(|s| s.state == SignState::Acknowledged);
        let state = if all_ack && !escalated {
            SignState::Acknowledged
        } else {
            SignState::ActiveFull
        };
        let ack_time = matches.iter().filter_map(|s| s.acknowledged_at).fold(None, |a: Option<f64>, v| {
            Some(a.map_or(v, |a| a.max(v)))
        });
        let identity = matches.iter().find(|s| !claimed.contains(&s.sign_id));
        let (sign_id, created_at) = match identity {
            Some(s) => {
                claimed.insert(s.sign_id);
                if s.state != state {
                    events.push(TransitionEvent {
                        t,
                        sign: s.sign_id,
                        from: s.state.into(),
                        to: state.into(),
                        cause: Cause::Escalation,
                    });
                }
                (s.sign_id, s.created_at)
            }
            None => {
                let id = next.next_sign_id;
                next.next_sign_id += 1;
                events.push(TransitionEvent {
                    t,
                    sign: id,
                    from: StateTag::Absent,
                    to: state.into(),
                    cause: Cause::Report,
                });
                (id, t)
            }
        };
        signs.push(RiskSign {
            sign_id,
            member_ids: plan.member_ids.clone(),
            kind: plan.kind,
            geometry: plan.geometry,
            state,
            created_at,
            acknowledged_at: (state == SignState::Acknowledged).then(|| ack_time.unwrap_or(t)),
            levels: plan.levels.clone(),
        });
    }
    for s in &prior.signs {
        if !claimed.contains(&s.sign_id) {
            events.push(TransitionEvent {
                t,
                sign: s.sign_id,
                from: s.state.into(),
                to: StateTag::Absent,
                cause: Cause::Report,
            });
        }
    }
    signs.sort_by_key(|s| s.sign_id);
    next.signs = signs;
    next.sync();
    (next, events)
}

/// [`plan_signs`] followed by [`apply_plan`] at the frame's own time.
pub fn ingest_report(
    report: &RiskReport,
    frame: &FrameObservation,
    prior: &HudOverlayState,
    cfg: &HudConfig,
) -> (HudOverlayState, Vec<TransitionEvent>) {
    let plans = plan_signs(report, frame, cfg);
    let mut base = prior.clone();
    base.frame_width = frame.width();
    base.frame_height = frame.height();
    apply_plan(&base, &plans, frame.frame_index, frame.timestamp, &frame.ego)
}
