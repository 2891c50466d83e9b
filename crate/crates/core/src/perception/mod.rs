//! Perception fixtures: loading, validation and time alignment.
//!
//! The neural stages (detector/tracker, grounded segmentation, monocular
//! depth) are not run here. Their outputs are read from a per-video fixture
//! directory:
//!
//! ```text
//! <video>/manifest.json          video id, fps, frame size, horizontal FOV
//! <video>/tracks.csv             frame,id,x,y,w,h,confidence,class
//! <video>/legend.json            pixel value -> road_k / sidewalk_k / none
//! <video>/masks/NNNNNN.png       8-bit label image per frame
//! <video>/depth/NNNNNN.depth     "width height\n" + f32 LE, NaN = unknown
//! <video>/ego.csv                optional: frame,timestamp,speed_kmh,clock,nav
//! <video>/gaze.csv               optional: t,x,y,valid (recorded gaze)
//! ```

mod depth;
mod geometry;
mod surface;
mod tracks;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use depth::{load_depth_field, save_depth_field, DepthField};
pub use geometry::BoundingBox;
pub use surface::{
    format_legend, load_legend, load_surface_map, parse_legend, save_surface_map, Legend,
    SurfaceLabel, SurfaceMap,
};
pub use tracks::{format_tracks, load_track_file, parse_tracks, EntityClass, TrackFrame, TrackedEntity};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate detection for frame {frame}, id {id}")]
    DuplicateDetection { line: usize, frame: u32, id: u64 },
    #[error("legend: {0}")]
    Legend(String),
    #[error("pixel value {0} missing from legend")]
    LegendMissingValue(u8),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("invalid depth: {0}")]
    InvalidDepth(String),
    #[error("missing {stream} for frames {frames:?}")]
    MissingFrames { stream: &'static str, frames: Vec<u32> },
    #[error("timestamp regression at frame {frame}: {timestamp} s after {previous} s")]
    TimestampRegression {
        frame: u32,
        timestamp: f64,
        previous: f64,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

fn default_fps() -> f64 {
    30.0
}
fn default_width() -> u32 {
    1920
}
fn default_height() -> u32 {
    1080
}
fn default_hfov() -> f64 {
    90.0
}

/// Per-video metadata. Resolution and field of view default to 1920×1080
/// and 90° when a fixture omits them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default = "default_hfov")]
    pub hfov_deg: f64,
    /// Clip length in frames; derived from the tracks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u32>,
}

impl VideoManifest {
    pub fn new(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            fps: default_fps(),
            width: default_width(),
            height: default_height(),
            hfov_deg: default_hfov(),
            frame_count: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(IngestError::Manifest(format!("fps must be positive, got {}", self.fps)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(IngestError::Manifest("frame size must be non-zero".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(IngestError::Manifest(format!(
                "hfov_deg must lie in (0, 180), got {}",
                self.hfov_deg
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| IngestError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::parse(&read_text(path)?)
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavDirection {
    #[default]
    Straight,
    Left,
    Right,
}

impl FromStr for NavDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "straight" => Ok(NavDirection::Straight),
            "left" => Ok(NavDirection::Left),
            "right" => Ok(NavDirection::Right),
            other => Err(format!("unknown nav direction '{other}'")),
        }
    }
}

impl NavDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            NavDirection::Straight => "straight",
            NavDirection::Left => "left",
            NavDirection::Right => "right",
        }
    }
}

/// Basic driving data shown in the HUD's bottom bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub speed_kmh: f64,
    /// Wall-clock time as displayed, e.g. `14:05:09`.
    pub clock: String,
    pub nav_direction: NavDirection,
}

impl Default for EgoState {
    fn default() -> Self {
        Self {
            speed_kmh: 0.0,
            clock: "00:00:00".to_string(),
            nav_direction: NavDirection::Straight,
        }
    }
}

/// One row of `ego.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoSample {
    pub timestamp: Option<f64>,
    pub state: EgoState,
}

/// Ego samples keyed by frame; frames without a row inherit the previous one.
pub type EgoStream = BTreeMap<u32, EgoSample>;

pub fn parse_ego(text: &str) -> Result<EgoStream, IngestError> {
    let mut out = EgoStream::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (line_no == 1 && line.starts_with("frame")) {
            continue;
        }
        let err = |message: String| IngestError::Parse {
            line: line_no,
            message,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let frame: u32 = f[0].parse().map_err(|_| err(format!("invalid frame '{}'", f[0])))?;
        let timestamp = if f[1].is_empty() {
            None
        } else {
            Some(
                f[1]
                    .parse::<f64>()
                    .map_err(|_| err(format!("invalid timestamp '{}'", f[1])))?,
            )
        };
        let speed_kmh: f64 = f[2].parse().map_err(|_| err(format!("invalid speed '{}'", f[2])))?;
        if !(speed_kmh.is_finite() && speed_kmh >= 0.0) {
            return Err(err(format!("speed must be >= 0, got {speed_kmh}")));
        }
        let nav_direction = f[4].parse().map_err(err)?;
        out.insert(
            frame,
            EgoSample {
                timestamp,
                state: EgoState {
                    speed_kmh,
                    clock: f[3].to_string(),
                    nav_direction,
                },
            },
        );
    }
    Ok(out)
}

pub fn format_ego(stream: &EgoStream) -> String {
    let mut out = String::from("frame,timestamp,speed_kmh,clock,nav\n");
    for (frame, s) in stream {
        let ts = s.timestamp.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{frame},{ts},{},{},{}",
            s.state.speed_kmh,
            s.state.clock,
            s.state.nav_direction.as_str()
        );
    }
    out
}

/// Everything perception knows about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u32,
    pub timestamp: f64,
    pub entities: Vec<TrackedEntity>,
    pub surfaces: Arc<SurfaceMap>,
    pub depth: Arc<DepthField>,
    pub ego: EgoState,
}

impl FrameObservation {
    pub fn width(&self) -> u32 {
        self.surfaces.width()
    }

    pub fn height(&self) -> u32 {
        self.surfaces.height()
    }

    pub fn entity(&self, id: u64) -> Option<&TrackedEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn pedestrians(&self) -> impl Iterator<Item = &TrackedEntity> {
        self.entities
            .iter()
            .filter(|e| e.class == EntityClass::Pedestrian)
    }
}

/// Joins tracks, surface maps, depth fields and ego samples into one
/// observation per tracked frame.
///
/// Boxes are clamped to the manifest's frame and flagged. A frame without a
/// surface map or depth field is an error listing every gap; it is never
/// filled with a default.
pub fn align_streams(
    tracks: &[TrackFrame],
    surfaces: &BTreeMap<u32, Arc<SurfaceMap>>,
    depths: &BTreeMap<u32, Arc<DepthField>>,
    ego: &EgoStream,
    manifest: &VideoManifest,
) -> Result<Vec<FrameObservation>, IngestError> {
    let missing = |have: &dyn Fn(u32) -> bool| -> Vec<u32> {
        tracks
            .iter()
            .map(|t| t.frame_index)
            .filter(|f| !have(*f))
            .collect()
    };
    let no_surface = missing(&|f| surfaces.contains_key(&f));
    if !no_surface.is_empty() {
        return Err(IngestError::MissingFrames {
            stream: "surface map",
            frames: no_surface,
        });
    }
    let no_depth = missing(&|f| depths.contains_key(&f));
    if !no_depth.is_empty() {
        return Err(IngestError::MissingFrames {
            stream: "depth field",
            frames: no_depth,
        });
    }

    let (fw, fh) = manifest.dims();
    let mut out = Vec::with_capacity(tracks.len());
    let mut previous: Option<f64> = None;
    for t in tracks {
        let surf = &surfaces[&t.frame_index];
        let dep = &depths[&t.frame_index];
        if (surf.width(), surf.height()) != (fw, fh) || (dep.width(), dep.height()) != (fw, fh) {
            return Err(IngestError::Dimensions(format!(
                "frame {}: surface {}x{}, depth {}x{}, manifest {fw}x{fh}",
                t.frame_index,
                surf.width(),
                surf.height(),
                dep.width(),
                dep.height()
            )));
        }
        let sample = ego.range(..=t.frame_index).next_back();
        let timestamp = sample
            .filter(|(f, _)| **f == t.frame_index)
            .and_then(|(_, s)| s.timestamp)
            .unwrap_or(f64::from(t.frame_index) / manifest.fps);
        if let Some(prev) = previous {
            if timestamp <= prev {
                return Err(IngestError::TimestampRegression {
                    frame: t.frame_index,
                    timestamp,
                    previous: prev,
                });
            }
        }
        previous = Some(timestamp);

        let entities = t
            .entities
            .iter()
            .map(|e| {
                let (bbox, clamped) = e.bbox.clamp_to(f64::from(fw), f64::from(fh));
                if clamped {
                    log::debug!("frame {}: clamped bbox of id {}", t.frame_index, e.id);
                }
                TrackedEntity {
                    bbox,
                    clamped: e.clamped || clamped,
                    ..e.clone()
                }
            })
            .collect();
        out.push(FrameObservation {
            frame_index: t.frame_index,
            timestamp,
            entities,
            surfaces: Arc::clone(surf),
            depth: Arc::clone(dep),
            ego: sample.map(|(_, s)| s.state.clone()).unwrap_or_default(),
        });
    }
    Ok(out)
}

/// A fixture directory for one video, with the light-weight streams loaded
/// eagerly and masks/depth loaded on demand.
#[derive(Debug, Clone)]
pub struct VideoFixture {
    pub root: PathBuf,
    pub manifest: VideoManifest,
    pub tracks: Vec<TrackFrame>,
    pub legend: Legend,
    pub ego: EgoStream,
}

impl VideoFixture {
    pub fn open(root: &Path) -> Result<Self, IngestError> {
        let manifest = VideoManifest::load(&root.join("manifest.json"))?;
        let tracks = load_track_file(&root.join("tracks.csv"))?;
        let legend = load_legend(&root.join("legend.json"))?;
        let ego_path = root.join("ego.csv");
        let ego = if ego_path.exists() {
            parse_ego(&read_text(&ego_path)?)?
        } else {
            EgoStream::new()
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            tracks,
            legend,
            ego,
        })
    }

    /// Lists fixture directories: `dir` itself when it holds a manifest,
    /// otherwise every immediate subdirectory that does, sorted by name.
    pub fn discover(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
        if dir.join("manifest.json").is_file() {
            return Ok(vec![dir.to_path_buf()]);
        }
        let mut found = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))? {
            let path = entry.map_err(|e| IngestError::io(dir, e))?.path();
            if path.join("manifest.json").is_file() {
                found.push(path);
            }
        }
        found.sort();
        Ok(found)
    }

    pub fn mask_path(&self, frame: u32) -> PathBuf {
        self.root.join("masks").join(format!("{frame:06}.png"))
    }

    pub fn depth_path(&self, frame: u32) -> PathBuf {
        self.root.join("depth").join(format!("{frame:06}.depth"))
    }

    pub fn gaze_path(&self) -> Option<PathBuf> {
        let p = self.root.join("gaze.csv");
        p.is_file().then_some(p)
    }

    /// Clip length: the manifest's `frame_count`, else one past the last
    /// tracked frame.
    pub fn frame_count(&self) -> u32 {
        self.manifest
            .frame_count
            .unwrap_or_else(|| self.tracks.last().map_or(0, |t| t.frame_index + 1))
    }

    /// Track rows for `frames`, with an empty entity list where the tracker
    /// reported nothing.
    pub fn tracks_for(&self, frames: &[u32]) -> Vec<TrackFrame> {
        let wanted: BTreeSet<u32> = frames.iter().copied().collect();
        let by_frame: BTreeMap<u32, &TrackFrame> = self
            .tracks
            .iter()
            .filter(|t| wanted.contains(&t.frame_index))
            .map(|t| (t.frame_index, t))
            .collect();
        wanted
            .into_iter()
            .map(|f| TrackFrame {
                frame_index: f,
                entities: by_frame.get(&f).map(|t| t.entities.clone()).unwrap_or_default(),
            })
            .collect()
    }

    pub fn load_surfaces(
        &self,
        frames: &[u32],
    ) -> Result<BTreeMap<u32, Arc<SurfaceMap>>, IngestError> {
        frames
            .iter()
            .map(|&f| {
                let map = load_surface_map(&self.mask_path(f), &self.legend, Some(self.manifest.dims()))?;
                Ok((f, Arc::new(map)))
            })
            .collect()
    }

    pub fn load_depths(
        &self,
        frames: &[u32],
    ) -> Result<BTreeMap<u32, Arc<DepthField>>, IngestError> {
        frames
            .iter()
            .map(|&f| {
                let field = load_depth_field(&self.depth_path(f), Some(self.manifest.dims()))?;
                Ok((f, Arc::new(field)))
            })
            .collect()
    }

    /// Loads and aligns the observations for `frames`.
    pub fn observations(&self, frames: &[u32]) -> Result<Vec<FrameObservation>, IngestError> {
        let tracks = self.tracks_for(frames);
        let surfaces = self.load_surfaces(frames)?;
        let depths = self.load_depths(frames)?;
        align_streams(&tracks, &surfaces, &depths, &self.ego, &self.manifest)
    }
}

/// Writes observations as a fixture directory that [`VideoFixture::open`]
/// reads back. All frames must share one legend.
pub fn write_fixture(
    root: &Path,
    manifest: &VideoManifest,
    observations: &[FrameObservation],
) -> Result<(), IngestError> {
    let legend = observations
        .first()
        .map(|o| o.surfaces.legend().clone())
        .unwrap_or_else(|| Legend::from([(0, SurfaceLabel::None)]));
    if observations.iter().any(|o| *o.surfaces.legend() != legend) {
        return Err(IngestError::Legend("frames use different legends".into()));
    }
    for sub in ["masks", "depth"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| IngestError::io(&d, e))?;
    }
    let write = |name: &str, body: String| -> Result<(), IngestError> {
        let p = root.join(name);
        fs::write(&p, body).map_err(|e| IngestError::io(&p, e))
    };
    write(
        "manifest.json",
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )?;
    write("legend.json", format_legend(&legend))?;
    let frames: Vec<TrackFrame> = observations
        .iter()
        .map(|o| TrackFrame {
            frame_index: o.frame_index,
            entities: o.entities.clone(),
        })
        .collect();
    write("tracks.csv", format_tracks(&frames))?;
    let ego: EgoStream = observations
        .iter()
        .map(|o| {
            (
                o.frame_index,
                EgoSample {
                    timestamp: Some(o.timestamp),
                    state: o.ego.clone(),
                },
            )
        })
        .collect();
    write("ego.csv", format_ego(&ego))?;
    let fixture_paths = VideoFixture {
        root: root.to_path_buf(),
        manifest: manifest.clone(),
        tracks: Vec::new(),
        legend,
        ego: EgoStream::new(),
    };
    for o in observations {
        save_surface_map(&o.surfaces, &fixture_paths.mask_path(o.frame_index))?;
        save_depth_field(&o.depth, &fixture_paths.depth_path(o.frame_index))?;
    }
    Ok(())
}
