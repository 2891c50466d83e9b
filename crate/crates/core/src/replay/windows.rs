//! Causal windows: back-to-back clips of fixed duration, each decimated to a
//! lower sampling rate.

use serde::{Deserialize, Serialize};

use super::ReplayError;
use crate::perception::VideoManifest;
use crate::scene::FrameRange;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalWindow {
    pub video_id: String,
    pub index: usize,
    pub start_frame: u32,
    /// Inclusive.
    pub end_frame: u32,
    pub sampled_frames: Vec<u32>,
    pub sample_rate: f64,
}

impl CausalWindow {
    pub fn range(&self) -> FrameRange {
        FrameRange::new(self.start_frame, self.end_frame)
    }

    pub fn name(&self) -> String {
        format!("window_{:04}", self.index)
    }
}

/// Cuts the clip into consecutive windows of `window_s` seconds. Window `i`
/// starts at frame `round(i * window_s * fps)`; it samples
/// `floor(window_s * sample_hz)` frames at `start + round(k * fps / sample_hz)`,
/// dropping samples past the clip end (the last window may be partial).
pub fn cut_windows(
    manifest: &VideoManifest,
    window_s: f64,
    sample_hz: f64,
) -> Result<Vec<CausalWindow>, ReplayError> {
    let fps = manifest.fps;
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(ReplayError::Config(format!("window length must be positive, got {window_s}")));
    }
    if !(sample_hz > 0.0 && sample_hz.is_finite()) {
        return Err(ReplayError::Config(format!("sample rate must be positive, got {sample_hz}")));
    }
    if sample_hz > fps {
        return Err(ReplayError::Config(format!(
            "sample rate {sample_hz} Hz exceeds the source rate {fps} fps"
        )));
    }
    let frames = manifest
        .frame_count
        .ok_or_else(|| ReplayError::Config(format!("{}: frame count unknown", manifest.video_id)))?;
    let per_window = (window_s * sample_hz + 1e-9).floor() as u32;
    let start_of = |i: usize| (i as f64 * window_s * fps).round() as u32;
    let mut out = Vec::new();
    let mut i = 0;
    while start_of(i) < frames {
        let start = start_of(i);
        let end = start_of(i + 1).max(start + 1).min(frames) - 1;
        let sampled_frames = (0..per_window)
            .map(|k| start + (f64::from(k) * fps / sample_hz).round() as u32)
            .filter(|f| *f <= end)
            .collect();
        out.push(CausalWindow {
            video_id: manifest.video_id.clone(),
            index: i,
            start_frame: start,
            end_frame: end,
            sampled_frames,
            sample_rate: sample_hz,
        });
        i += 1;
    }
    Ok(out)
}

/// Sampled frames for a window's scene: the tail of the previous window that
/// falls within `look_back_s` of the window end, then the window's own.
pub fn scene_frames(window: &CausalWindow, previous: Option<&CausalWindow>, fps: f64, look_back_s: f64) -> Vec<u32> {
    let span = (look_back_s * fps).round() as i64;
    let first = i64::from(window.end_frame) + 1 - span;
    let mut frames: Vec<u32> = previous
        .map(|p| {
            p.sampled_frames
                .iter()
                .copied()
                .filter(|f| i64::from(*f) >= first)
                .collect()
        })
        .unwrap_or_default();
    frames.extend(&window.sampled_frames);
    frames
}
