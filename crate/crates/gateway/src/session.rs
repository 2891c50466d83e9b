//! Per-session playback state machine, independent of the transport.

use std::sync::Arc;

use vcd_core::hud::{apply_plan, process_gaze, render_model, GazeSample, HudConfig, HudOverlayState};

use crate::clip::Clip;
use crate::wire::{Body, Control, ErrorCode, ErrorPayload, FramePayload, Hello, Mode, WireMessage};

pub const DEFAULT_RATE_HZ: f64 = 30.0;
const MAX_RATE_HZ: f64 = 240.0;

/// One viewer's playback of one clip.
///
/// The session clock is clip time: gaze timestamps are compared against the
/// frame timestamps. The epoch is the timestamp of the frame playback was
/// last positioned on (open or seek); gaze before it is stale.
#[derive(Debug)]
pub struct Session {
    id: String,
    clip: Arc<Clip>,
    mode: Mode,
    cfg: HudConfig,
    cursor: usize,
    playing: bool,
    at_end: bool,
    rate_hz: f64,
    seq: u64,
    epoch: f64,
    discontinuity: bool,
    hud: HudOverlayState,
}

impl Session {
    /// New session paused at the first frame, with its `hello` message.
    pub fn open(id: impl Into<String>, clip: Arc<Clip>, mode: Mode, cfg: HudConfig) -> (Self, WireMessage) {
        let m = &clip.manifest;
        let hud = HudOverlayState::new(m.frame_width, m.frame_height);
        let epoch = clip.frames.first().map_or(0.0, |f| f.t);
        let mut s = Self {
            id: id.into(),
            mode,
            cfg,
            cursor: 0,
            playing: false,
            at_end: clip.frames.is_empty(),
            rate_hz: DEFAULT_RATE_HZ,
            seq: 0,
            epoch,
            discontinuity: false,
            hud,
            clip,
        };
        let hello = Hello {
            video_id: s.clip.manifest.video_id.clone(),
            mode,
            fps: s.clip.manifest.fps,
            frame_width: s.clip.manifest.frame_width,
            frame_height: s.clip.manifest.frame_height,
            frame_count: s.clip.frames.len(),
            first_frame: s.clip.frames.first().map(|f| f.frame_index),
            last_frame: s.clip.frames.last().map(|f| f.frame_index),
            epoch,
            dwell_ms: s.cfg.dwell_ms,
        };
        let msg = s.emit(Body::Hello(hello));
        (s, msg)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn playing(&self) -> bool {
        self.playing
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Display frame index under the cursor.
    pub fn cursor_frame(&self) -> Option<u32> {
        self.clip.frames.get(self.cursor).map(|f| f.frame_index)
    }

    pub fn epoch(&self) -> f64 {
        self.epoch
    }

    /// Live overlay state; only advanced in live-gaze mode.
    pub fn hud(&self) -> &HudOverlayState {
        &self.hud
    }

    fn emit(&mut self, body: Body) -> WireMessage {
        let msg = WireMessage::new(self.id.clone(), self.seq, body);
        self.seq += 1;
        msg
    }

    /// Numbered error message from this session.
    pub fn error(&mut self, code: ErrorCode, reason: impl Into<String>) -> WireMessage {
        self.emit(Body::Error(ErrorPayload { code, reason: reason.into() }))
    }

    /// Handles one client message and returns the replies in send order.
    pub fn handle(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        if !msg.session_id.is_empty() && msg.session_id != self.id {
            let reason = format!("message for session {} on session {}", msg.session_id, self.id);
            return vec![self.error(ErrorCode::BadMessage, reason)];
        }
        match msg.body {
            Body::Control(c) => self.control(c),
            Body::Gaze(g) => self.push_gaze(g),
            other => {
                let reason = format!("clients may send control or gaze, not {}", type_name(&other));
                vec![self.error(ErrorCode::BadMessage, reason)]
            }
        }
    }

    fn control(&mut self, c: Control) -> Vec<WireMessage> {
        match c {
            Control::Play { rate_hz } => {
                if let Some(r) = rate_hz {
                    if !(r.is_finite() && r > 0.0 && r <= MAX_RATE_HZ) {
                        return vec![self.error(ErrorCode::BadMessage, format!("rate {r} Hz outside (0, {MAX_RATE_HZ}]"))];
                    }
                    self.rate_hz = r;
                }
                let ack = self.emit(Body::Control(Control::Play { rate_hz: Some(self.rate_hz) }));
                if self.at_end {
                    return vec![ack, self.emit(Body::Control(Control::EndOfClip))];
                }
                self.playing = true;
                vec![ack]
            }
            Control::Pause => {
                self.playing = false;
                vec![self.emit(Body::Control(Control::Pause))]
            }
            Control::Seek { frame_index } => match self.clip.position(frame_index) {
                Some(pos) => {
                    self.cursor = pos;
                    self.at_end = false;
                    self.epoch = self.clip.frames[pos].t;
                    self.discontinuity = true;
                    // The live overlay restarts from the new position.
                    let m = &self.clip.manifest;
                    self.hud = HudOverlayState::new(m.frame_width, m.frame_height);
                    vec![self.emit(Body::Control(Control::Seek { frame_index }))]
                }
                None => vec![self.error(ErrorCode::BadSeek, format!("frame {frame_index} is not in the clip"))],
            },
            Control::EndOfClip => vec![self.error(ErrorCode::BadMessage, "end_of_clip is server-only")],
        }
    }

    /// Acknowledges a live gaze sample and returns any transitions it caused.
    pub fn push_gaze(&mut self, g: GazeSample) -> Vec<WireMessage> {
        if self.mode != Mode::LiveGaze {
            return vec![self.error(ErrorCode::Mode, "gaze is only accepted in live_gaze sessions")];
        }
        if !g.t.is_finite() || g.t < self.epoch {
            return vec![self.error(ErrorCode::Stale, format!("timestamp {} is before the session epoch {}", g.t, self.epoch))];
        }
        if let Some(last) = self.hud.last_gaze_t() {
            if g.t < last {
                return vec![self.error(ErrorCode::Stale, format!("timestamp {} is before the previous sample at {last}", g.t))];
            }
        }
        if !self.playing {
            return vec![self.error(ErrorCode::Paused, "gaze is held off while playback is paused")];
        }
        if g.valid && !((0.0..=1.0).contains(&g.x) && (0.0..=1.0).contains(&g.y)) {
            return vec![self.error(ErrorCode::BadMessage, format!("gaze ({}, {}) outside the unit square", g.x, g.y))];
        }
        let (next, events) = process_gaze(&self.hud, &[g], &self.cfg);
        self.hud = next;
        let mut out = vec![self.emit(Body::Gaze(g))];
        out.extend(events.into_iter().map(|e| self.emit(Body::Transition(e))));
        out
    }

    /// Emits the frame under the cursor if playing, preceded by the
    /// transitions it brings, and advances. The last frame is followed by
    /// `end_of_clip` and playback pauses there.
    pub fn step(&mut self) -> Vec<WireMessage> {
        if !self.playing || self.at_end {
            return Vec::new();
        }
        let clip = Arc::clone(&self.clip);
        let frame = &clip.frames[self.cursor];
        let mut out = Vec::new();
        let display = match self.mode {
            Mode::ReplayGaze => {
                for e in clip.events_at(self.cursor) {
                    out.push(self.emit(Body::Transition(e.clone())));
                }
                frame.display.clone()
            }
            Mode::LiveGaze => {
                let (next, events) = apply_plan(&self.hud, &frame.plans, frame.frame_index, frame.t, &frame.basics);
                self.hud = next;
                for e in events {
                    out.push(self.emit(Body::Transition(e)));
                }
                render_model(&self.hud, &self.cfg)
            }
        };
        let payload = FramePayload {
            frame_index: frame.frame_index,
            t: frame.t,
            display,
            discontinuity: std::mem::take(&mut self.discontinuity),
        };
        out.push(self.emit(Body::Frame(payload)));
        if self.cursor + 1 < clip.frames.len() {
            self.cursor += 1;
        } else {
            self.at_end = true;
            self.playing = false;
            out.push(self.emit(Body::Control(Control::EndOfClip)));
        }
        out
    }
}

fn type_name(body: &Body) -> &'static str {
    match body {
        Body::Hello(_) => "hello",
        Body::Frame(_) => "frame",
        Body::Gaze(_) => "gaze",
        Body::Transition(_) => "transition",
        Body::Control(_) => "control",
        Body::Error(_) => "error",
    }
}
