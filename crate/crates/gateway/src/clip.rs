//! Replayed HUD output loaded back from a run directory.

use std::fs;
use std::path::Path;

use serde::Serialize;
use vcd_core::hud::{parse_events, TransitionEvent};
use vcd_core::replay::{parse_hud_frames, HudFrame, RunManifest, WindowStatus};

use crate::GatewayError;

/// Display frames and transition log of one video, in frame order.
#[derive(Debug, Clone)]
pub struct Clip {
    pub manifest: RunManifest,
    pub frames: Vec<HudFrame>,
    pub events: Vec<TransitionEvent>,
}

/// Row of the `/videos` listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub fps: f64,
    pub frame_count: u32,
    pub windows: usize,
    pub failed_windows: usize,
}

impl Clip {
    pub fn load(video_dir: &Path) -> Result<Self, GatewayError> {
        let manifest = RunManifest::load(video_dir)?;
        let mut frames = Vec::new();
        let mut events = Vec::new();
        for w in manifest.windows.iter().filter(|w| w.status == WindowStatus::Ok) {
            let dir = video_dir.join(&w.name);
            let read = |name: &str| {
                let p = dir.join(name);
                fs::read_to_string(&p).map_err(|e| GatewayError::Io(format!("{}: {e}", p.display())))
            };
            let parse = |e: serde_json::Error| GatewayError::Run(format!("{}: {e}", dir.display()));
            frames.extend(parse_hud_frames(&read("hud_frames.ndjson")?).map_err(parse)?);
            events.extend(parse_events(&read("hud_events.ndjson")?).map_err(parse)?);
        }
        Ok(Self { manifest, frames, events })
    }

    pub fn entry(&self) -> VideoEntry {
        VideoEntry {
            video_id: self.manifest.video_id.clone(),
            fps: self.manifest.fps,
            frame_count: self.manifest.frame_count,
            windows: self.manifest.windows.len(),
            failed_windows: self.manifest.windows.iter().filter(|w| w.status != WindowStatus::Ok).count(),
        }
    }

    /// Position of a display frame in `frames`.
    pub fn position(&self, frame_index: u32) -> Option<usize> {
        self.frames.binary_search_by_key(&frame_index, |f| f.frame_index).ok()
    }

    /// Recorded transitions that belong to the display frame at `pos`: those
    /// timed from its timestamp up to the next frame's.
    pub fn events_at(&self, pos: usize) -> &[TransitionEvent] {
        let t0 = self.frames[pos].t;
        let t1 = self.frames.get(pos + 1).map_or(f64::INFINITY, |f| f.t);
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        &self.events[lo..hi.max(lo)]
    }
}
