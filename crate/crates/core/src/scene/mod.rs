//! Scene compilation: turns a window of frame observations into the two
//! text-friendly documents handed to the risk model, a roadside summary and
//! per-pedestrian fusion records.

mod classes;
mod ranges;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::perception::{BoundingBox, DepthField, FrameObservation, SurfaceLabel, VideoManifest};

pub use classes::{
    assign_surface, assign_surface_with, classify_distance, classify_position, classify_speed,
    classify_surface_side, compute_bbox_angle, position_of_point, region_centroid_x,
    DistanceBands, DistanceClass, PositionClass, SpeedClass, SpeedProfile, SurfaceSide,
};
pub use ranges::{FrameRange, RangeMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("depth must be finite and non-negative, got {0}")]
    InvalidDepth(f64),
    #[error("frame has zero area")]
    EmptyFrame,
    #[error("window contains no frames")]
    EmptyWindow,
    #[error("track has no frames")]
    EmptyTrack,
    #[error("track frames are not strictly increasing")]
    UnsortedTrack,
    #[error("frame rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("window frames are not strictly increasing at frame {0}")]
    UnsortedWindow(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no region '{0}' in the surface map")]
    UnknownRegion(SurfaceLabel),
}

/// Tunable thresholds of the compiler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub bands: DistanceBands,
    /// Fast above this many frame widths per second.
    pub speed_threshold: f64,
    /// Fraction of the bbox height sampled as the foot strip.
    pub foot_strip: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            bands: DistanceBands::default(),
            speed_threshold: 0.05,
            foot_strip: 0.1,
        }
    }
}

/// Everything computed for one pedestrian in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonFrameFacts {
    pub frame: u32,
    pub timestamp: f64,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub surface: Option<SurfaceLabel>,
    /// Median over the bbox's known-depth pixels; `None` if none are known.
    pub depth_m: Option<f64>,
    pub distance: Option<DistanceClass>,
    pub position: PositionClass,
    pub angle_deg: f64,
    pub speed: SpeedClass,
    /// Center speed in frame widths per second.
    pub speed_value: f64,
}

/// Per-frame evidence behind one fusion record, kept for the guard rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonEvidence {
    pub id: u64,
    pub frames: Vec<PersonFrameFacts>,
    /// The speed classes are a single-frame default.
    pub low_evidence_speed: bool,
    /// Horizontal foot-point motion toward the nearest road region, in frame
    /// widths per second. Negative means moving away.
    pub approach_rate: f64,
}

impl PersonEvidence {
    pub fn mean_confidence(&self) -> f64 {
        let n = self.frames.len().max(1) as f64;
        self.frames.iter().map(|f| f.confidence).sum::<f64>() / n
    }

    pub fn latest(&self) -> &PersonFrameFacts {
        self.frames.last().expect("evidence always has a frame")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonFusionRecord {
    pub id: u64,
    pub visible_frames: u32,
    pub traj: String,
    pub surface: RangeMap<SurfaceLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_depth: Option<f64>,
    pub bbox_angle: RangeMap<f64>,
    pub distance_class: RangeMap<DistanceClass>,
    pub speed_class: RangeMap<SpeedClass>,
    pub position_class: RangeMap<PositionClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub label: SurfaceLabel,
    /// Occupied grid cells, most pixels first.
    pub position: Vec<PositionClass>,
    pub areas_pixels: u64,
    pub side: SurfaceSide,
    pub centroid_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadsideInfo {
    pub regions: Vec<RegionInfo>,
    pub total_objects: u32,
    pub total_surface_area: u64,
    pub total_person_area: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescription {
    pub video_id: String,
    pub window: FrameRange,
    /// Frame indices present in the window, ascending.
    pub frames: Vec<u32>,
    pub fps: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub hfov_deg: f64,
    pub roadside: RoadsideInfo,
    pub persons: Vec<PersonFusionRecord>,
    pub evidence: BTreeMap<u64, PersonEvidence>,
}

/// Rounds to one decimal place without ever producing `-0.0`.
pub fn round1(x: f64) -> f64 {
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Median of the known depths inside the pixel footprint of `bbox`.
pub fn median_depth(bbox: &BoundingBox, depth: &DepthField) -> Option<f64> {
    let (w, h) = (i64::from(depth.width()), i64::from(depth.height()));
    let x0 = (bbox.x.floor() as i64).clamp(0, w);
    let x1 = (bbox.right().ceil() as i64).clamp(0, w);
    let y0 = (bbox.y.floor() as i64).clamp(0, h);
    let y1 = (bbox.bottom().ceil() as i64).clamp(0, h);
    let mut vals: Vec<f32> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if let Some(v) = depth.get(x as u32, y as u32) {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f32::total_cmp);
    let n = vals.len();
    Some(if n % 2 == 1 {
        f64::from(vals[n / 2])
    } else {
        (f64::from(vals[n / 2 - 1]) + f64::from(vals[n / 2])) / 2.0
    })
}

type Segment = (Option<SurfaceLabel>, Option<DistanceClass>, SpeedClass, PositionClass);

/// Builds the fusion record of one pedestrian from its per-frame facts.
///
/// Frames are split into maximal runs over which surface, distance, speed
/// and position are all constant and the person is present in consecutive
/// window frames; every map in the record is keyed by those runs. The
/// angle of a run is its mean, to one decimal.
pub fn summarize(id: u64, frames: &[PersonFrameFacts], window_frames: &[u32]) -> PersonFusionRecord {
    let key = |f: &PersonFrameFacts| -> Segment { (f.surface, f.distance, f.speed, f.position) };
    let slot = |frame: u32| window_frames.binary_search(&frame).ok();
    let mut segments: Vec<(FrameRange, Segment, Vec<f64>)> = Vec::new();
    let mut prev_slot: Option<usize> = None;
    for f in frames {
        let here = slot(f.frame);
        let adjacent = matches!((prev_slot, here), (Some(a), Some(b)) if b == a + 1);
        prev_slot = here;
        match segments.last_mut() {
            Some((range, k, angles)) if adjacent && *k == key(f) => {
                range.end = f.frame;
                angles.push(f.angle_deg);
            }
            _ => segments.push((FrameRange::new(f.frame, f.frame), key(f), vec![f.angle_deg])),
        }
    }
    let mut surface = Vec::new();
    let mut distance = Vec::new();
    let mut speed = Vec::new();
    let mut position = Vec::new();
    let mut angle = Vec::new();
    for (r, (s, d, v, p), angles) in &segments {
        if let Some(s) = s {
            surface.push((*r, *s));
        }
        if let Some(d) = d {
            distance.push((*r, *d));
        }
        speed.push((*r, *v));
        position.push((*r, *p));
        angle.push((*r, round1(angles.iter().sum::<f64>() / angles.len() as f64)));
    }
    let depths: Vec<f64> = frames.iter().filter_map(|f| f.depth_m).collect();
    let avg_depth = (!depths.is_empty())
        .then(|| round1(depths.iter().sum::<f64>() / depths.len() as f64));
    PersonFusionRecord {
        id,
        visible_frames: frames.len() as u32,
        traj: format!("mot_traj_{id}"),
        surface: RangeMap::from_entries(surface),
        avg_depth,
        bbox_angle: RangeMap::from_entries(angle),
        distance_class: RangeMap::from_entries(distance),
        speed_class: RangeMap::from_entries(speed),
        position_class: RangeMap::from_entries(position),
    }
}

fn approach_rate(frames: &[PersonFrameFacts], road_centroids: &[f64], frame_w: f64) -> f64 {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return 0.0;
    };
    let dt = last.timestamp - first.timestamp;
    if dt <= 0.0 {
        return 0.0;
    }
    let (x0, _) = first.bbox.center();
    let (x1, _) = last.bbox.center();
    let Some(road) = road_centroids
        .iter()
        .copied()
        .min_by(|a, b| (a - x0).abs().total_cmp(&(b - x0).abs()))
    else {
        return 0.0;
    };
    let toward = (road - x0).signum();
    if (road - x0).abs() < f64::EPSILON {
        return 0.0;
    }
    (x1 - x0) * toward / frame_w / dt
}

fn roadside_info(last: &FrameObservation) -> RoadsideInfo {
    let surfaces = &last.surfaces;
    let (w, h) = (f64::from(surfaces.width()), f64::from(surfaces.height()));
    let mut cells: BTreeMap<SurfaceLabel, BTreeMap<PositionClass, u64>> = BTreeMap::new();
    let mut xsum: BTreeMap<SurfaceLabel, f64> = BTreeMap::new();
    for (x, y, label) in surfaces.pixels() {
        if label == SurfaceLabel::None {
            continue;
        }
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let cell = position_of_point(px, py, w, h).expect("surface maps are never empty");
        *cells.entry(label).or_default().entry(cell).or_insert(0) += 1;
        *xsum.entry(label).or_insert(0.0) += px;
    }
    let regions: Vec<RegionInfo> = surfaces
        .regions()
        .filter(|(_, area)| *area > 0)
        .map(|(label, area)| {
            let mut occupied: Vec<(PositionClass, u64)> =
                cells.get(&label).map(|m| m.iter().map(|(c, n)| (*c, *n)).collect()).unwrap_or_default();
            occupied.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let centroid_x = xsum[&label] / area as f64;
            RegionInfo {
                label,
                position: occupied.into_iter().map(|(c, _)| c).collect(),
                areas_pixels: area,
                side: classes::side_of(label, centroid_x, w),
                centroid_x,
            }
        })
        .collect();
    let total_person_area = last.pedestrians().map(|e| e.bbox.area()).sum::<f64>().round() as u64;
    RoadsideInfo {
        total_objects: last.entities.len() as u32,
        total_surface_area: regions.iter().map(|r| r.areas_pixels).sum(),
        total_person_area,
        regions,
    }
}

/// Compiles one causal window.
///
/// The roadside summary describes the window's last frame. Pedestrians are
/// listed by ascending id.
pub fn compile_scene(
    window: &[FrameObservation],
    manifest: &VideoManifest,
    cfg: &SceneConfig,
) -> Result<SceneDescription, SceneError> {
    let first = window.first().ok_or(SceneError::EmptyWindow)?;
    let last = window.last().expect("non-empty");
    if !(manifest.fps > 0.0) {
        return Err(SceneError::InvalidRate(manifest.fps));
    }
    let (fw, fh) = (first.width(), first.height());
    if fw == 0 || fh == 0 {
        return Err(SceneError::EmptyFrame);
    }
    for pair in window.windows(2) {
        if pair[1].frame_index <= pair[0].frame_index {
            return Err(SceneError::UnsortedWindow(pair[1].frame_index));
        }
    }
    for obs in window {
        let dims = [
            (obs.surfaces.width(), obs.surfaces.height()),
            (obs.depth.width(), obs.depth.height()),
        ];
        if dims.iter().any(|d| *d != (fw, fh)) {
            return Err(SceneError::DimensionMismatch(format!(
                "frame {} has surface {}x{} and depth {}x{}, window started at {fw}x{fh}",
                obs.frame_index, dims[0].0, dims[0].1, dims[1].0, dims[1].1
            )));
        }
    }
    let (w, h) = (f64::from(fw), f64::from(fh));

    let roadside = roadside_info(last);
    let road_centroids: Vec<f64> = roadside
        .regions
        .iter()
        .filter(|r| r.label.is_road())
        .map(|r| r.centroid_x)
        .collect();

    // Per-id static facts first, speed needs the whole track.
    let mut partial: BTreeMap<u64, Vec<(PersonFrameFacts, BoundingBox)>> = BTreeMap::new();
    for obs in window {
        for e in obs.pedestrians() {
            let depth_m = median_depth(&e.bbox, &obs.depth);
            let distance = depth_m.map(|d| cfg.bands.classify(d)).transpose()?;
            let facts = PersonFrameFacts {
                frame: obs.frame_index,
                timestamp: obs.timestamp,
                bbox: e.bbox,
                confidence: e.confidence,
                surface: assign_surface_with(&e.bbox, &obs.surfaces, cfg.foot_strip),
                depth_m,
                distance,
                position: classify_position(&e.bbox, w, h)?,
                angle_deg: compute_bbox_angle(&e.bbox, w, manifest.hfov_deg),
                speed: SpeedClass::Slow,
                speed_value: 0.0,
            };
            partial.entry(e.id).or_default().push((facts, e.bbox));
        }
    }

    let window_frames: Vec<u32> = window.iter().map(|o| o.frame_index).collect();
    let mut persons = Vec::new();
    let mut evidence = BTreeMap::new();
    for (id, rows) in partial {
        let track: Vec<(u32, BoundingBox)> = rows.iter().map(|(f, b)| (f.frame, *b)).collect();
        let profile = classify_speed(&track, manifest.fps, w, cfg.speed_threshold)?;
        let frames: Vec<PersonFrameFacts> = rows
            .into_iter()
            .zip(&profile.per_frame)
            .map(|((mut f, _), (_, v, c))| {
                f.speed = *c;
                f.speed_value = *v;
                f
            })
            .collect();
        persons.push(summarize(id, &frames, &window_frames));
        evidence.insert(
            id,
            PersonEvidence {
                id,
                approach_rate: approach_rate(&frames, &road_centroids, w),
                frames,
                low_evidence_speed: profile.low_evidence,
            },
        );
    }

    Ok(SceneDescription {
        video_id: manifest.video_id.clone(),
        window: FrameRange::new(first.frame_index, last.frame_index),
        frames: window_frames,
        fps: manifest.fps,
        frame_width: fw,
        frame_height: fh,
        hfov_deg: manifest.hfov_deg,
        roadside,
        persons,
        evidence,
    })
}

impl SceneDescription {
    pub fn person_ids(&self) -> Vec<u64> {
        self.persons.iter().map(|p| p.id).collect()
    }

    pub fn person(&self, id: u64) -> Option<&PersonFusionRecord> {
        self.persons.iter().find(|p| p.id == id)
    }

    /// Seconds covered by the window's frame range.
    pub fn span_seconds(&self) -> f64 {
        f64::from(self.window.len()) / self.fps
    }

    /// Drops every frame older than the most recent `max_s` seconds.
    /// Returns the scene unchanged and `false` when it already fits.
    pub fn truncated(&self, max_s: f64) -> (SceneDescription, bool) {
        let keep = ((max_s * self.fps).round() as u32).max(1);
        if self.window.len() <= keep {
            return (self.clone(), false);
        }
        let cutoff = self.window.end + 1 - keep;
        let road_centroids: Vec<f64> = self
            .roadside
            .regions
            .iter()
            .filter(|r| r.label.is_road())
            .map(|r| r.centroid_x)
            .collect();
        let mut out = self.clone();
        out.window.start = cutoff;
        out.frames.retain(|f| *f >= cutoff);
        out.persons.clear();
        out.evidence.clear();
        for (id, ev) in &self.evidence {
            let frames: Vec<PersonFrameFacts> =
                ev.frames.iter().filter(|f| f.frame >= cutoff).cloned().collect();
            if frames.is_empty() {
                continue;
            }
            out.persons.push(summarize(*id, &frames, &out.frames));
            out.evidence.insert(
                *id,
                PersonEvidence {
                    id: *id,
                    approach_rate: approach_rate(&frames, &road_centroids, f64::from(self.frame_width)),
                    low_evidence_speed: ev.low_evidence_speed || frames.len() == 1,
                    frames,
                },
            );
        }
        (out, true)
    }

    /// The `Info_roadside` document.
    pub fn roadside_json(&self) -> Value {
        let mut m = Map::new();
        for r in &self.roadside.regions {
            m.insert(
                r.label.spaced(),
                json!({
                    "position": r.position,
                    "areas pixels": r.areas_pixels,
                }),
            );
        }
        m.insert("Total objects".into(), json!(self.roadside.total_objects));
        m.insert("Total surface area".into(), json!(self.roadside.total_surface_area));
        m.insert("Total person area".into(), json!(self.roadside.total_person_area));
        Value::Object(m)
    }

    /// The `person_fusion` document.
    pub fn person_fusion_json(&self) -> Value {
        serde_json::to_value(&self.persons).expect("fusion records serialize")
    }

    pub fn roadside_file_name(&self) -> String {
        format!("Info_roadside_{}.json", self.video_id)
    }

    pub fn person_fusion_file_name(&self) -> String {
        format!("person_fusion_{}.json", self.video_id)
    }

    /// Both documents as they appear in a prompt, each under its file name.
    pub fn scene_text(&self) -> String {
        format!(
            "{}\n{}\n\n{}\n{}\n",
            self.roadside_file_name(),
            pretty(&self.roadside_json()),
            self.person_fusion_file_name(),
            pretty(&self.person_fusion_json()),
        )
    }

    /// The full `scene.json` artifact: both documents plus window metadata,
    /// surface sides and the per-frame evidence.
    pub fn to_json(&self) -> Value {
        let sides: Map<String, Value> = self
            .roadside
            .regions
            .iter()
            .map(|r| (r.label.spaced(), json!(r.side)))
            .collect();
        let mut m = Map::new();
        m.insert("video_id".into(), json!(self.video_id));
        m.insert("window".into(), json!(self.window.to_string()));
        m.insert("fps".into(), json!(self.fps));
        m.insert("frame_width".into(), json!(self.frame_width));
        m.insert("frame_height".into(), json!(self.frame_height));
        m.insert("hfov_deg".into(), json!(self.hfov_deg));
        m.insert(self.roadside_file_name(), self.roadside_json());
        m.insert(self.person_fusion_file_name(), self.person_fusion_json());
        m.insert("surface_sides".into(), Value::Object(sides));
        m.insert("evidence".into(), json!(self.evidence.values().collect::<Vec<_>>()));
        Value::Object(m)
    }

    pub fn canonical_json(&self) -> String {
        pretty(&self.to_json()) + "\n"
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("values serialize")
}
