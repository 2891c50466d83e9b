//! Message schema shared with the viewer.

use serde::{Deserialize, Serialize};
use vcd_core::hud::{DisplayItem, GazeSample, TransitionEvent};

/// Whether gaze comes from the recorded trace or from the connected client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ReplayGaze,
    LiveGaze,
}

/// One text frame on the session socket.
///
/// Client messages may omit `seq`; the server numbers its own messages per
/// session starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(default)]
    pub session_id: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Body {
    Hello(Hello),
    Frame(FramePayload),
    Gaze(GazeSample),
    Transition(TransitionEvent),
    Control(Control),
    Error(ErrorPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub video_id: String,
    pub mode: Mode,
    pub fps: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Display frames available; windows that failed during replay have none.
    pub frame_count: usize,
    pub first_frame: Option<u32>,
    pub last_frame: Option<u32>,
    pub epoch: f64,
    pub dwell_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub frame_index: u32,
    pub t: f64,
    pub display: Vec<DisplayItem>,
    /// Set on the first frame after a seek.
    pub discontinuity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Control {
    Play {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_hz: Option<f64>,
    },
    Pause,
    Seek { frame_index: u32 },
    EndOfClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownVideo,
    Mode,
    Stale,
    Paused,
    BadMessage,
    BadSeek,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub reason: String,
}

impl WireMessage {
    pub fn new(session_id: impl Into<String>, seq: u64, body: Body) -> Self {
        Self { session_id: session_id.into(), seq, body }
    }

    /// Single-line JSON.
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_fields() {
        let msg = WireMessage::new("s1", 4, Body::Control(Control::Seek { frame_index: 12 }));
        let v: serde_json::Value = serde_json::from_str(&msg.to_text()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["payload", "seq", "session_id", "type"]);
        assert_eq!(v["type"], "control");
        assert_eq!(v["payload"], serde_json::json!({"action": "seek", "frame_index": 12}));
        assert_eq!(WireMessage::parse(&msg.to_text()).unwrap(), msg);
    }

    #[test]
    fn client_messages_may_omit_seq() {
        let m = WireMessage::parse(r#"{"type":"control","session_id":"s2","payload":{"action":"play","rate_hz":10}}"#).unwrap();
        assert_eq!(m.seq, 0);
        assert_eq!(m.body, Body::Control(Control::Play { rate_hz: Some(10.0) }));
        let g = WireMessage::parse(r#"{"type":"gaze","payload":{"t":1.5,"x":0.2,"y":0.3,"valid":false}}"#).unwrap();
        assert!(matches!(g.body, Body::Gaze(s) if !s.valid));
        assert!(WireMessage::parse(r#"{"type":"warp","payload":{}}"#).is_err());
    }
}
