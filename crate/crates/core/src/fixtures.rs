//! Built-in fixtures.
//!
//! [`urban_two_lane`] rebuilds the worked two-lane scene used as the prompt
//! example (one pedestrian stepping from the left sidewalk onto the road,
//! one standing still), in memory at full resolution. [`synthetic_clip`] is
//! a small 10 s clip with a crossing pedestrian, a distant bystander, a
//! walker heading away from the road and a flickering low-confidence
//! detection, plus recorded gaze and canned verdicts for every window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::perception::{
    format_ego, format_tracks, write_fixture, BoundingBox, DepthField, EgoSample, EgoState, EgoStream, EntityClass,
    FrameObservation, IngestError, NavDirection, SurfaceLabel, SurfaceMap, TrackFrame,
    TrackedEntity, VideoManifest,
};

pub const URBAN_VIDEO_ID: &str = "JAAD_video_16";
pub const SYNTHETIC_VIDEO_ID: &str = "synthetic_10s";

/// Fills `n` pixels of `label` row by row inside columns `[x0, x1)`
/// starting at row `y0`.
fn fill(labels: &mut [SurfaceLabel], width: u32, (x0, x1): (u32, u32), y0: u32, n: u32, label: SurfaceLabel) {
    let cols = x1 - x0;
    for i in 0..n {
        let (x, y) = (x0 + i % cols, y0 + i / cols);
        labels[(y * width + x) as usize] = label;
    }
}

fn urban_mask(with_left_sidewalk: bool) -> SurfaceMap {
    let (w, h) = (1920u32, 1080u32);
    let mut l = vec![SurfaceLabel::None; (w * h) as usize];
    let road = SurfaceLabel::Road(0);
    let side0 = SurfaceLabel::Sidewalk(0);
    let side1 = SurfaceLabel::Sidewalk(1);
    fill(&mut l, w, (800, 1100), 300, 72_000, road);
    fill(&mut l, w, (700, 1240), 560, 180_945, road);
    fill(&mut l, w, (1300, 1900), 800, 40_000, side0);
    fill(&mut l, w, (640, 700), 540, 18_185, side0);
    fill(&mut l, w, (1300, 1900), 560, 35_574, side1);
    fill(&mut l, w, (1300, 1900), 300, 20_000, side1);
    if with_left_sidewalk {
        fill(&mut l, w, (380, 640), 470, 260 * 70, side0);
    }
    SurfaceMap::from_labels(w, h, &l).expect("valid labels")
}

/// Ground depth falling off with height in the image, an unknown sky band,
/// and constant-depth rectangles where pedestrians stand.
fn urban_depth(people: &[((u32, u32, u32, u32), f32)]) -> DepthField {
    let (w, h) = (1920u32, 1080u32);
    let mut v = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for _ in 0..w {
            v.push(if y < 100 {
                f32::NAN
            } else {
                3.0 + (h - y) as f32 * 0.05
            });
        }
    }
    for ((x0, y0, x1, y1), d) in people {
        for y in *y0..*y1 {
            for x in *x0..*x1 {
                v[(y * w + x) as usize] = *d;
            }
        }
    }
    DepthField::new(w, h, v).expect("valid depth")
}

fn entity(id: u64, class: EntityClass, x: f64, y: f64, w: f64, h: f64, confidence: f64) -> TrackedEntity {
    TrackedEntity {
        id,
        class,
        bbox: BoundingBox::new(x, y, w, h).expect("positive box"),
        confidence,
        clamped: false,
    }
}

/// The two-lane scene: frames 0 to 60 at 1920×1080 and 30 fps.
///
/// Person 8 walks right along the left sidewalk for frames 0 to 20, steps
/// onto the road close in front at frame 21 and is last seen at frame 50.
/// Person 12 stands at the sidewalk's edge throughout. Eleven vehicles are
/// parked upper right.
pub fn urban_two_lane() -> (VideoManifest, Vec<FrameObservation>) {
    let mut manifest = VideoManifest::new(URBAN_VIDEO_ID);
    manifest.frame_count = Some(61);
    let mask_a = Arc::new(urban_mask(true));
    let mask_b = Arc::new(urban_mask(false));
    let p12 = ((605, 380, 662, 558), 20.0);
    let depth_a = Arc::new(urban_depth(&[((380, 380, 590, 510), 7.0), p12]));
    let depth_b = Arc::new(urban_depth(&[((720, 420, 1017, 680), 4.0), p12]));

    let frames = (0..=60u32)
        .map(|f| {
            let mut entities = Vec::new();
            if f <= 20 {
                entities.push(entity(8, EntityClass::Pedestrian, 380.0 + 8.0 * f64::from(f), 380.0, 50.0, 130.0, 0.91));
            } else if f <= 50 {
                entities.push(entity(8, EntityClass::Pedestrian, 720.0 + 8.0 * f64::from(f - 21), 420.0, 65.0, 260.0, 0.93));
            }
            entities.push(entity(12, EntityClass::Pedestrian, 605.0, 380.0, 57.0, 178.0, 0.88));
            for i in 0..11u32 {
                entities.push(entity(100 + u64::from(i), EntityClass::Vehicle, 1290.0 + 55.0 * f64::from(i), 150.0, 50.0, 40.0, 0.8));
            }
            let early = f <= 20;
            FrameObservation {
                frame_index: f,
                timestamp: f64::from(f) / 30.0,
                entities,
                surfaces: Arc::clone(if early { &mask_a } else { &mask_b }),
                depth: Arc::clone(if early { &depth_a } else { &depth_b }),
                ego: EgoState {
                    speed_kmh: 28.0,
                    clock: "16:42:07".into(),
                    nav_direction: NavDirection::Straight,
                },
            }
        })
        .collect();
    (manifest, frames)
}

/// A generated clip held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub manifest: VideoManifest,
    /// Every frame, with surfaces and depth attached.
    pub observations: Vec<FrameObservation>,
    /// `t,x,y,valid` rows sampled at the frame rate, x and y normalized.
    pub gaze_csv: String,
    /// Canned verdicts keyed `<video_id>/window_NNNN`.
    pub responses: BTreeMap<String, String>,
}

const SW: u32 = 480;
const SH: u32 = 270;

fn synthetic_surfaces() -> SurfaceMap {
    let labels: Vec<SurfaceLabel> = (0..SW * SH)
        .map(|i| {
            let (x, y) = (i % SW, i / SW);
            match (x, y) {
                (160..320, 135..) | (200..280, 100..135) => SurfaceLabel::Road(0),
                (0..160, 180..) => SurfaceLabel::Sidewalk(0),
                (320.., 180..) => SurfaceLabel::Sidewalk(1),
                _ => SurfaceLabel::None,
            }
        })
        .collect();
    SurfaceMap::from_labels(SW, SH, &labels).expect("valid labels")
}

fn synthetic_depth() -> DepthField {
    let v = (0..SW * SH)
        .map(|i| {
            let y = i / SW;
            if y < 100 {
                f32::NAN
            } else {
                2.0 + (SH - y) as f32 * 0.25
            }
        })
        .collect();
    DepthField::new(SW, SH, v).expect("valid depth")
}

fn crosser_x(t: f64) -> f64 {
    110.0 + (t.clamp(2.0, 8.0) - 2.0) * 45.0
}

fn synthetic_entities(f: u32, fps: f64) -> Vec<TrackedEntity> {
    let t = f64::from(f) / fps;
    let ped = EntityClass::Pedestrian;
    let mut e = vec![entity(1, ped, crosser_x(t) - 8.0, 200.0, 16.0, 40.0, 0.92)];
    e.push(entity(2, ped, 424.0, 160.0, 10.0, 25.0, 0.85));
    if t < 6.0 {
        let cx = 90.0 - 10.0 * t;
        e.push(entity(3, ped, cx - 7.0, 215.0, 14.0, 35.0, 0.8));
    }
    if (120..240).contains(&f) {
        e.push(entity(4, ped, 343.0, 225.0, 14.0, 40.0, 0.2));
    }
    e.push(entity(100, EntityClass::Vehicle, 225.0, 110.0 + 3.0 * t, 30.0, 20.0, 0.9));
    e.push(entity(101, EntityClass::Vehicle, 400.0, 120.0, 60.0, 30.0, 0.9));
    e
}

fn synthetic_gaze(frames: u32, fps: f64) -> String {
    let mut out = String::from("t,x,y,valid\n");
    for f in 0..frames {
        let t = f64::from(f) / fps;
        let (x, y, valid) = if (4.2..4.9).contains(&t) {
            (crosser_x(t), 220.0, 1)
        } else if (7.0..7.1).contains(&t) {
            (0.0, 0.0, 0)
        } else if (8.5..8.62).contains(&t) {
            (429.0, 172.0, 1)
        } else {
            (240.0, 140.0, 1)
        };
        let (x, y) = (x / f64::from(SW), y / f64::from(SH));
        let _ = writeln!(out, "{t:.4},{x:.4},{y:.4},{valid}");
    }
    out
}

fn verdict(risks: &[(u64, &str)], evaluation: &[(u64, bool)]) -> String {
    let mut s = String::from("### Scene\nSuburban street with sidewalks on both sides.\n\n#### Potential Risks\n");
    for (id, why) in risks {
        let _ = writeln!(s, "Person {id} {why}");
    }
    s.push_str("\n#### Safety Evaluation\n");
    for (id, risky) in evaluation {
        let _ = writeln!(s, "Person {id} : {}", if *risky { "Risky" } else { "Safe" });
    }
    s
}

fn synthetic_responses() -> BTreeMap<String, String> {
    let wait = "stationary on the left sidewalk; no immediate risk.";
    let cross = "steps off the left sidewalk onto the road, indicating intention to cross.";
    let far = "stationary on the far right sidewalk.";
    let away = "walks along the left sidewalk away from the road.";
    let texts = [
        // Person 2 is left unevaluated so window 1 has no safe history for it.
        verdict(&[(1, wait), (3, away)], &[(1, false), (3, false)]),
        verdict(
            &[(1, cross), (2, "stands near the curb and may step out."), (3, away)],
            &[(1, true), (2, true), (3, false), (99, true)],
        ),
        verdict(
            &[(1, cross), (2, far), (4, "stationary near the right curb.")],
            &[(1, true), (2, false), (3, false), (4, true)],
        ),
        verdict(&[(1, cross), (2, far)], &[(1, true), (2, false), (4, false)]),
        verdict(&[(1, "stationary on the right sidewalk after crossing."), (2, far)], &[(1, false), (2, false)]),
    ];
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| (format!("{SYNTHETIC_VIDEO_ID}/window_{i:04}"), t))
        .collect()
}

/// The 10 s synthetic clip at 480×270, 30 fps.
pub fn synthetic_clip() -> SyntheticClip {
    let mut manifest = VideoManifest::new(SYNTHETIC_VIDEO_ID);
    manifest.width = SW;
    manifest.height = SH;
    manifest.frame_count = Some(300);
    let surfaces = Arc::new(synthetic_surfaces());
    let depth = Arc::new(synthetic_depth());
    let observations = (0..300u32)
        .map(|f| {
            let t = f64::from(f) / manifest.fps;
            FrameObservation {
                frame_index: f,
                timestamp: t,
                entities: synthetic_entities(f, manifest.fps),
                surfaces: Arc::clone(&surfaces),
                depth: Arc::clone(&depth),
                ego: EgoState {
                    speed_kmh: 32.0 - t,
                    clock: format!("08:30:{:02}", t.floor() as u32),
                    nav_direction: if t >= 8.0 {
                        NavDirection::Left
                    } else {
                        NavDirection::Straight
                    },
                },
            }
        })
        .collect();
    SyntheticClip {
        gaze_csv: synthetic_gaze(300, manifest.fps),
        responses: synthetic_responses(),
        manifest,
        observations,
    }
}

impl SyntheticClip {
    /// Writes the clip under `root/<video_id>/` with [`write_sampled`] and
    /// adds `gaze.csv`. Returns the fixture path.
    pub fn write(&self, root: &Path, image_stride: u32) -> Result<PathBuf, IngestError> {
        let dir = write_sampled(root, &self.manifest, &self.observations, image_stride)?;
        let p = dir.join("gaze.csv");
        fs::write(&p, &self.gaze_csv).map_err(|e| IngestError::io(&p, e))?;
        Ok(dir)
    }

    pub fn responses_json(&self) -> String {
        serde_json::to_string_pretty(&self.responses).expect("strings serialize") + "\n"
    }
}

/// Writes observations under `root/<video_id>/`. Masks and depth are written
/// only for frames divisible by `image_stride` (pass 1 for every frame);
/// tracks and ego cover every observation. Returns the fixture path.
pub fn write_sampled(
    root: &Path,
    manifest: &VideoManifest,
    observations: &[FrameObservation],
    image_stride: u32,
) -> Result<PathBuf, IngestError> {
    let dir = root.join(&manifest.video_id);
    let stride = image_stride.max(1);
    let imaged: Vec<FrameObservation> = observations
        .iter()
        .filter(|o| o.frame_index % stride == 0)
        .cloned()
        .collect();
    write_fixture(&dir, manifest, &imaged)?;
    let tracks: Vec<TrackFrame> = observations
        .iter()
        .map(|o| TrackFrame {
            frame_index: o.frame_index,
            entities: o.entities.clone(),
        })
        .collect();
    let ego: EgoStream = observations
        .iter()
        .map(|o| {
            let sample = EgoSample {
                timestamp: Some(o.timestamp),
                state: o.ego.clone(),
            };
            (o.frame_index, sample)
        })
        .collect();
    for (name, body) in [("tracks.csv", format_tracks(&tracks)), ("ego.csv", format_ego(&ego))] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| IngestError::io(&p, e))?;
    }
    Ok(dir)
}
