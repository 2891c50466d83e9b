//! Websocket gateway that plays replay runs to a viewer.
//!
//! `GET /videos` lists the run directories under the runs root.
//! `GET /session?video_id=..&mode=live_gaze|replay_gaze` upgrades to a
//! websocket carrying one JSON [`WireMessage`] per text frame. Each session
//! runs on its own task; the server owns the playback clock.

pub mod clip;
pub mod session;
pub mod wire;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::time::Instant;
use vcd_core::hud::HudConfig;
use vcd_core::replay::{list_runs, ReplayError};

pub use clip::{Clip, VideoEntry};
pub use session::{Session, DEFAULT_RATE_HZ};
pub use wire::{Body, Control, ErrorCode, ErrorPayload, FramePayload, Hello, Mode, WireMessage};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("io: {0}")]
    Io(String),
    #[error("run directory: {0}")]
    Run(String),
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
}

impl From<ReplayError> for GatewayError {
    fn from(e: ReplayError) -> Self {
        GatewayError::Run(e.to_string())
    }
}

/// Shared state: the runs root and a cache of loaded clips.
#[derive(Debug)]
pub struct Gateway {
    runs: PathBuf,
    hud: HudConfig,
    clips: Mutex<HashMap<String, Arc<Clip>>>,
    next_session: AtomicU64,
}

impl Gateway {
    pub fn new(runs: impl Into<PathBuf>, hud: HudConfig) -> Self {
        Self {
            runs: runs.into(),
            hud,
            clips: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn runs_root(&self) -> &Path {
        &self.runs
    }

    fn run_dirs(&self) -> Result<Vec<PathBuf>, GatewayError> {
        Ok(list_runs(&self.runs)?)
    }

    pub fn videos(&self) -> Result<Vec<VideoEntry>, GatewayError> {
        let mut out = Vec::new();
        for dir in self.run_dirs()? {
            match self.load_dir(&dir) {
                Ok(c) => out.push(c.entry()),
                Err(e) => log::warn!("skipping {}: {e}", dir.display()),
            }
        }
        Ok(out)
    }

    fn load_dir(&self, dir: &Path) -> Result<Arc<Clip>, GatewayError> {
        let key = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(c) = self.clips.lock().expect("clip cache").get(&key) {
            return Ok(Arc::clone(c));
        }
        let clip = Arc::new(Clip::load(dir)?);
        self.clips.lock().expect("clip cache").insert(key, Arc::clone(&clip));
        Ok(clip)
    }

    /// Clip for a video id; only ids of listed run directories resolve.
    pub fn clip(&self, video_id: &str) -> Result<Arc<Clip>, GatewayError> {
        let dir = self
            .run_dirs()?
            .into_iter()
            .find(|d| d.file_name().is_some_and(|n| n == video_id))
            .ok_or_else(|| GatewayError::UnknownVideo(video_id.to_string()))?;
        self.load_dir(&dir)
    }

    /// Opens a session, or explains why not.
    pub fn open_session(&self, video_id: &str, mode: Mode) -> Result<(Session, WireMessage), GatewayError> {
        let clip = self.clip(video_id)?;
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        Ok(Session::open(id, clip, mode, self.hud.clone()))
    }
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/videos", get(videos))
        .route("/session", get(session))
        .with_state(gateway)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

async fn videos(State(gw): State<Arc<Gateway>>) -> Response {
    match gw.videos() {
        Ok(v) => Json(v).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    video_id: String,
    #[serde(default = "default_mode")]
    mode: Mode,
}

fn default_mode() -> Mode {
    Mode::LiveGaze
}

async fn session(State(gw): State<Arc<Gateway>>, Query(q): Query<SessionQuery>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, gw, q))
}

async fn send(socket: &mut WebSocket, msg: &WireMessage) -> bool {
    socket.send(Message::Text(msg.to_text().into())).await.is_ok()
}

async fn run_socket(mut socket: WebSocket, gw: Arc<Gateway>, q: SessionQuery) {
    let opened = {
        let gw = Arc::clone(&gw);
        let video = q.video_id.clone();
        tokio::task::spawn_blocking(move || gw.open_session(&video, q.mode)).await
    };
    let (mut session, hello) = match opened {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => {
            let code = match e {
                GatewayError::UnknownVideo(_) => ErrorCode::UnknownVideo,
                _ => ErrorCode::BadMessage,
            };
            let msg = WireMessage::new("", 0, Body::Error(ErrorPayload { code, reason: e.to_string() }));
            let _ = send(&mut socket, &msg).await;
            let _ = socket.close().await;
            return;
        }
        Err(e) => {
            log::error!("session open task failed: {e}");
            return;
        }
    };
    log::info!("session {} opened on {}", session.id(), q.video_id);
    if !send(&mut socket, &hello).await {
        return;
    }
    let mut next_tick: Option<Instant> = None;
    loop {
        let tick = async {
            match next_tick {
                Some(at) => tokio::time::sleep_until(at).await,
                None => std::future::pending().await,
            }
        };
        let replies = tokio::select! {
            incoming = socket.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let was_playing = session.playing();
                    let replies = match WireMessage::parse(text.as_str()) {
                        Ok(m) => session.handle(m),
                        Err(e) => vec![session.error(ErrorCode::BadMessage, format!("unparseable message: {e}"))],
                    };
                    if session.playing() && !was_playing {
                        next_tick = Some(Instant::now());
                    }
                    replies
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => Vec::new(),
            },
            _ = tick => {
                let replies = session.step();
                let period = Duration::from_secs_f64(1.0 / session.rate_hz());
                next_tick = next_tick.map(|t| t + period);
                replies
            }
        };
        if !session.playing() {
            next_tick = None;
        }
        for r in &replies {
            if !send(&mut socket, r).await {
                log::info!("session {} lost its client", session.id());
                return;
            }
        }
    }
    log::info!("session {} closed", session.id());
}
