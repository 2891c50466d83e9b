//! End-to-end replay over causal windows, and the latency model.
//!
//! Each window is processed in order: perception outputs are loaded (tracks,
//! masks and depth on separate threads), compiled into a scene, judged,
//! guarded against the reports committed so far, and played through the
//! overlay engine frame by frame together with any recorded gaze. A failing
//! window writes `error.txt` and the run moves on.
//!
//! ```text
//! <out>/<video_id>/run.json
//! <out>/<video_id>/latency.json        declarative profile, total, budget
//! <out>/<video_id>/timings.json        wall-clock measurements
//! <out>/<video_id>/window_NNNN/{scene.json, prompt.txt, response.txt,
//!     risks.json, report.json, hud_events.ndjson, hud_frames.ndjson}
//! ```

mod latency;
mod windows;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hud::{
    apply_plan, format_events, parse_gaze_csv, plan_signs, process_gaze, render_model, DisplayItem,
    GazeSample, HudConfig, HudError, HudOverlayState, SignPlan, TransitionEvent,
};
use crate::perception::{align_streams, EgoState, FrameObservation, IngestError, VideoFixture};
use crate::risk::{
    apply_guards, build_prompt, parse_verdict, CompletionRequest, CompletionService, GuardConfig,
    PromptBundle, RiskError, RiskReport, ServiceMeta,
};
use crate::scene::{compile_scene, FrameRange, SceneConfig, SceneError};

pub use latency::{
    check_reaction_budget, check_reaction_budget_with, measured_profile, total_latency, BudgetVerdict,
    LatencyProfile, ReactionBudget, Stage, StageLatency, TTC_HORIZON_S,
};
pub use windows::{cut_windows, scene_frames, CausalWindow};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Hud(#[from] HudError),
    #[error("replay config: {0}")]
    Config(String),
    #[error("latency profile: {0}")]
    Latency(String),
    #[error("run directory: {0}")]
    RunDir(String),
}

impl ReplayError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ReplayError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub window_s: f64,
    pub sample_hz: f64,
    pub look_back_s: f64,
    pub ttc_floor_s: f64,
    pub scene: SceneConfig,
    pub guards: GuardConfig,
    pub hud: HudConfig,
    pub profile: LatencyProfile,
    pub bundle: PromptBundle,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            sample_hz: 2.0,
            look_back_s: 3.0,
            ttc_floor_s: 1.5,
            scene: SceneConfig::default(),
            guards: GuardConfig::default(),
            hud: HudConfig::default(),
            profile: LatencyProfile::built_in("upgraded-2025").expect("built-in profile"),
            bundle: PromptBundle::default(),
        }
    }
}

/// One line of `hud_frames.ndjson`: the sign targets the report yields for
/// this frame, the basics, and the display list after recorded gaze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HudFrame {
    pub frame_index: u32,
    pub t: f64,
    pub plans: Vec<SignPlan>,
    pub basics: EgoState,
    pub display: Vec<DisplayItem>,
}

pub fn format_hud_frames(frames: &[HudFrame]) -> String {
    frames
        .iter()
        .map(|f| serde_json::to_string(f).expect("frame serializes") + "\n")
        .collect()
}

pub fn parse_hud_frames(text: &str) -> Result<Vec<HudFrame>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub name: String,
    pub start_frame: u32,
    pub end_frame: u32,
    pub sampled_frames: Vec<u32>,
    pub scene_frames: Vec<u32>,
    pub status: WindowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub risky_ids: Vec<u64>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub video_id: String,
    pub fps: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub frame_count: u32,
    pub window_s: f64,
    pub sample_hz: f64,
    pub look_back_s: f64,
    pub model: String,
    pub profile: String,
    pub windows: Vec<WindowRecord>,
}

impl RunManifest {
    pub fn load(video_dir: &Path) -> Result<Self, ReplayError> {
        let path = video_dir.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| ReplayError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ReplayError::RunDir(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct VideoRun {
    pub video_id: String,
    pub dir: PathBuf,
    pub windows: Vec<WindowRecord>,
    /// Committed reports, in window order.
    pub reports: Vec<RiskReport>,
    /// Set when the video could not be replayed at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub videos: Vec<VideoRun>,
}

impl RunSummary {
    pub fn failed_windows(&self) -> usize {
        self.videos
            .iter()
            .flat_map(|v| &v.windows)
            .filter(|w| w.status == WindowStatus::Error)
            .count()
    }
}

/// Lists the video run directories under `out` (those holding `run.json`),
/// sorted by name.
pub fn list_runs(out: &Path) -> Result<Vec<PathBuf>, ReplayError> {
    let mut found = Vec::new();
    for entry in fs::read_dir(out).map_err(|e| ReplayError::io(out, e))? {
        let path = entry.map_err(|e| ReplayError::io(out, e))?.path();
        if path.join("run.json").is_file() {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

/// Reads the committed reports of a video run directory in window order.
pub fn load_reports(video_dir: &Path) -> Result<Vec<RiskReport>, ReplayError> {
    let run = RunManifest::load(video_dir)?;
    run.windows
        .iter()
        .filter(|w| w.status == WindowStatus::Ok)
        .map(|w| {
            let path = video_dir.join(&w.name).join("report.json");
            let text = fs::read_to_string(&path).map_err(|e| ReplayError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| ReplayError::RunDir(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), ReplayError> {
    fs::write(path, body).map_err(|e| ReplayError::io(path, e))
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

/// Replays every fixture directory into `out`. Window and video failures
/// are recorded and skipped; only an unwritable output is an error.
pub fn run_replay(
    fixtures: &[PathBuf],
    service: &dyn CompletionService,
    cfg: &ReplayConfig,
    out: &Path,
) -> Result<RunSummary, ReplayError> {
    cfg.hud.validate()?;
    cfg.guards.validate().map_err(|e| ReplayError::Config(e.to_string()))?;
    total_latency(&cfg.profile)?;
    fs::create_dir_all(out).map_err(|e| ReplayError::io(out, e))?;
    let mut summary = RunSummary::default();
    for dir in fixtures {
        let run = match VideoFixture::open(dir) {
            Ok(fixture) => replay_video(&fixture, service, cfg, out)?,
            Err(e) => {
                let name = dir.file_name().map_or("video".into(), |n| n.to_string_lossy().into_owned());
                log::error!("{}: {e}", dir.display());
                VideoRun {
                    video_id: name.clone(),
                    dir: out.join(name),
                    windows: Vec::new(),
                    reports: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        summary.videos.push(run);
    }
    Ok(summary)
}

/// Prepares `out/<video_id>`, clearing a previous run there. A non-empty
/// directory that is not a run is left alone and reported.
fn prepare_video_dir(out: &Path, video_id: &str) -> Result<PathBuf, ReplayError> {
    let dir = out.join(video_id);
    if dir.exists() {
        let empty = fs::read_dir(&dir).map_err(|e| ReplayError::io(&dir, e))?.next().is_none();
        if !empty && !dir.join("run.json").is_file() {
            return Err(ReplayError::RunDir(format!("{} exists and is not a run directory", dir.display())));
        }
        fs::remove_dir_all(&dir).map_err(|e| ReplayError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| ReplayError::io(&dir, e))?;
    Ok(dir)
}

struct VideoCtx<'a> {
    fixture: &'a VideoFixture,
    service: &'a dyn CompletionService,
    cfg: &'a ReplayConfig,
    gaze: Vec<GazeSample>,
}

struct WindowOutcome {
    report: RiskReport,
    timings: BTreeMap<Stage, f64>,
    service_latency_s: f64,
}

fn replay_video(
    fixture: &VideoFixture,
    service: &dyn CompletionService,
    cfg: &ReplayConfig,
    out: &Path,
) -> Result<VideoRun, ReplayError> {
    let mut manifest = fixture.manifest.clone();
    manifest.frame_count = Some(fixture.frame_count());
    let dir = prepare_video_dir(out, &manifest.video_id)?;
    let failed = |e: ReplayError| -> Result<VideoRun, ReplayError> {
        log::error!("{}: {e}", manifest.video_id);
        write(&dir.join("error.txt"), format!("{e}\n"))?;
        Ok(VideoRun {
            video_id: manifest.video_id.clone(),
            dir: dir.clone(),
            windows: Vec::new(),
            reports: Vec::new(),
            error: Some(e.to_string()),
        })
    };
    let windows = match cut_windows(&manifest, cfg.window_s, cfg.sample_hz) {
        Ok(w) => w,
        Err(e) => return failed(e),
    };
    let gaze = match fixture.gaze_path() {
        Some(p) => match fs::read_to_string(&p)
            .map_err(|e| ReplayError::io(&p, e))
            .and_then(|t| parse_gaze_csv(&t).map_err(ReplayError::from))
        {
            Ok(g) => g,
            Err(e) => return failed(e),
        },
        None => Vec::new(),
    };
    let ctx = VideoCtx {
        fixture,
        service,
        cfg,
        gaze,
    };

    let (w, h) = manifest.dims();
    let mut hud = HudOverlayState::new(w, h);
    let mut history: Vec<RiskReport> = Vec::new();
    let mut records = Vec::new();
    let mut timing_rows = Vec::new();
    let mut measured = Vec::new();
    for (i, window) in windows.iter().enumerate() {
        let previous = i.checked_sub(1).map(|p| &windows[p]);
        let frames = scene_frames(window, previous, manifest.fps, cfg.look_back_s);
        let wdir = dir.join(window.name());
        fs::create_dir_all(&wdir).map_err(|e| ReplayError::io(&wdir, e))?;
        let mut record = WindowRecord {
            index: window.index,
            name: window.name(),
            start_frame: window.start_frame,
            end_frame: window.end_frame,
            sampled_frames: window.sampled_frames.clone(),
            scene_frames: frames.clone(),
            status: WindowStatus::Ok,
            error: None,
            risky_ids: Vec::new(),
        };
        match run_window(&ctx, window, &frames, &mut hud, &history, &wdir) {
            Ok(outcome) => {
                record.risky_ids = outcome.report.risky_ids();
                timing_rows.push(json!({
                    "window": window.name(),
                    "stages": outcome.timings.iter().map(|(k, v)| (k.as_str(), *v)).collect::<BTreeMap<_, _>>(),
                    "service_latency_s": outcome.service_latency_s,
                }));
                measured.push(outcome.timings);
                history.push(outcome.report);
            }
            Err(e) => {
                log::error!("{} {}: {e}", manifest.video_id, window.name());
                write(&wdir.join("error.txt"), format!("{e}\n"))?;
                record.status = WindowStatus::Error;
                record.error = Some(e.to_string());
            }
        }
        records.push(record);
    }

    let run = RunManifest {
        video_id: manifest.video_id.clone(),
        fps: manifest.fps,
        frame_width: w,
        frame_height: h,
        frame_count: manifest.frame_count.unwrap_or(0),
        window_s: cfg.window_s,
        sample_hz: cfg.sample_hz,
        look_back_s: cfg.look_back_s,
        model: service.model().to_string(),
        profile: cfg.profile.label.clone(),
        windows: records.clone(),
    };
    write(&dir.join("run.json"), pretty(&run))?;
    let total = total_latency(&cfg.profile)?;
    let budget = check_reaction_budget(total, cfg.ttc_floor_s)?;
    write(
        &dir.join("latency.json"),
        pretty(&json!({"profile": cfg.profile, "total_s": total, "budget": budget})),
    )?;
    let measured = measured_profile(&measured, &cfg.profile);
    let measured_total = total_latency(&measured)?;
    write(
        &dir.join("timings.json"),
        pretty(&json!({"windows": timing_rows, "measured": measured, "measured_total_s": measured_total})),
    )?;
    Ok(VideoRun {
        video_id: manifest.video_id.clone(),
        dir,
        windows: records,
        reports: history,
        error: None,
    })
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn run_window(
    ctx: &VideoCtx<'_>,
    window: &CausalWindow,
    frames: &[u32],
    hud: &mut HudOverlayState,
    history: &[RiskReport],
    wdir: &Path,
) -> Result<WindowOutcome, ReplayError> {
    let fixture = ctx.fixture;
    let cfg = ctx.cfg;
    let mut timings = BTreeMap::new();

    let ((tracks, t_track), (surfaces, t_ground), (depths, t_depth)) = thread::scope(|s| {
        let tracks = s.spawn(|| timed(|| fixture.tracks_for(frames)));
        let surfaces = s.spawn(|| timed(|| fixture.load_surfaces(frames)));
        let depths = s.spawn(|| timed(|| fixture.load_depths(frames)));
        (
            tracks.join().expect("track loader panicked"),
            surfaces.join().expect("mask loader panicked"),
            depths.join().expect("depth loader panicked"),
        )
    });
    timings.insert(Stage::Tracking, t_track);
    timings.insert(Stage::Grounding, t_ground);
    timings.insert(Stage::Depth, t_depth);
    let (surfaces, depths) = (surfaces?, depths?);
    let observations = align_streams(&tracks, &surfaces, &depths, &fixture.ego, &fixture.manifest)?;

    let risk_start = Instant::now();
    let scene = compile_scene(&observations, &fixture.manifest, &cfg.scene)?;
    write(&wdir.join("scene.json"), scene.canonical_json())?;
    let prompt = build_prompt(&scene, &cfg.bundle)?;
    write(&wdir.join("prompt.txt"), prompt.render())?;
    let completion = ctx.service.complete(&CompletionRequest {
        prompt: &prompt,
        video_id: &fixture.manifest.video_id,
        window_index: window.index,
        scene: &scene,
    })
    .map_err(RiskError::from)?;
    write(&wdir.join("response.txt"), &completion.text)?;
    let mut parsed = parse_verdict(&completion.text, &scene)?;
    parsed.interval = window.range();
    parsed.service_meta = Some(ServiceMeta {
        model: completion.model.clone(),
        latency_s: completion.latency_s,
    });
    let report = apply_guards(&parsed, &scene, history, &cfg.guards);
    timings.insert(Stage::RiskAnalysis, risk_start.elapsed().as_secs_f64());
    write(&wdir.join("risks.json"), pretty(&report.to_risk_json()))?;
    let mut stored = serde_json::to_value(&report).expect("report serializes");
    if let Some(meta) = stored.get_mut("service_meta").and_then(Value::as_object_mut) {
        // Wall-clock values live in timings.json only.
        meta.remove("latency_s");
    }
    write(&wdir.join("report.json"), pretty(&stored))?;

    let hud_start = Instant::now();
    let (events, frames_out) = play_hud(ctx, window, &report, &surfaces, &depths, hud)?;
    timings.insert(Stage::Hud, hud_start.elapsed().as_secs_f64());
    write(&wdir.join("hud_events.ndjson"), format_events(&events))?;
    write(&wdir.join("hud_frames.ndjson"), format_hud_frames(&frames_out))?;

    Ok(WindowOutcome {
        report,
        timings,
        service_latency_s: completion.latency_s,
    })
}

/// Runs every display frame of the window through the overlay engine. Each
/// frame borrows the most recent loaded mask and depth; recorded gaze
/// between this frame and the next is applied after the report.
fn play_hud(
    ctx: &VideoCtx<'_>,
    window: &CausalWindow,
    report: &RiskReport,
    surfaces: &BTreeMap<u32, Arc<crate::perception::SurfaceMap>>,
    depths: &BTreeMap<u32, Arc<crate::perception::DepthField>>,
    hud: &mut HudOverlayState,
) -> Result<(Vec<TransitionEvent>, Vec<HudFrame>), ReplayError> {
    let fixture = ctx.fixture;
    let display: Vec<u32> = (window.start_frame..=window.end_frame).collect();
    let latest = |f: u32| -> Result<u32, ReplayError> {
        surfaces
            .range(..=f)
            .next_back()
            .map(|(k, _)| *k)
            .ok_or_else(|| ReplayError::Config(format!("no mask at or before frame {f}")))
    };
    let mut surf = BTreeMap::new();
    let mut dep = BTreeMap::new();
    for &f in &display {
        let k = latest(f)?;
        surf.insert(f, Arc::clone(&surfaces[&k]));
        dep.insert(f, Arc::clone(&depths[&k]));
    }
    let tracks = fixture.tracks_for(&display);
    let observations: Vec<FrameObservation> = align_streams(&tracks, &surf, &dep, &fixture.ego, &fixture.manifest)?;
    let frame_dt = 1.0 / fixture.manifest.fps;
    let mut events = Vec::new();
    let mut out = Vec::with_capacity(observations.len());
    let mut cursor = ctx.gaze.partition_point(|g| g.t < observations.first().map_or(0.0, |o| o.timestamp));
    for (i, obs) in observations.iter().enumerate() {
        let plans = plan_signs(report, obs, &ctx.cfg.hud);
        let (state, ev) = apply_plan(hud, &plans, obs.frame_index, obs.timestamp, &obs.ego);
        events.extend(ev);
        let until = observations.get(i + 1).map_or(obs.timestamp + frame_dt, |n| n.timestamp);
        let start = cursor;
        while cursor < ctx.gaze.len() && ctx.gaze[cursor].t < until {
            cursor += 1;
        }
        let (state, ev) = process_gaze(&state, &ctx.gaze[start..cursor], &ctx.cfg.hud);
        events.extend(ev);
        out.push(HudFrame {
            frame_index: obs.frame_index,
            t: obs.timestamp,
            plans,
            basics: obs.ego.clone(),
            display: render_model(&state, &ctx.cfg.hud),
        });
        *hud = state;
    }
    Ok((events, out))
}

/// Window of a run that covers `frame`, by its recorded range.
pub fn window_covering(run: &RunManifest, frame: u32) -> Option<&WindowRecord> {
    run.windows
        .iter()
        .find(|w| FrameRange::new(w.start_frame, w.end_frame).contains(frame))
}
