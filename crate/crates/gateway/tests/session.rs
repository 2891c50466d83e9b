//! Playback state machine driven step by step.

mod common;

use std::sync::Arc;

use proptest::prelude::*;
use vcd_core::fixtures::SYNTHETIC_VIDEO_ID;
use vcd_core::hud::{Cause, GazeSample, HudConfig, SignState, StateTag};
use vcd_gateway::{Body, Control, ErrorCode, Gateway, Mode, Session, WireMessage};

fn gateway() -> Gateway {
    Gateway::new(common::runs_root(), HudConfig::default())
}

fn open(mode: Mode) -> (Session, WireMessage) {
    gateway().open_session(SYNTHETIC_VIDEO_ID, mode).unwrap()
}

fn control(s: &Session, c: Control) -> WireMessage {
    WireMessage::new(s.id(), 0, Body::Control(c))
}

fn gaze(s: &Session, t: f64, x: f64, y: f64, valid: bool) -> WireMessage {
    WireMessage::new(s.id(), 0, Body::Gaze(GazeSample { t, x, y, valid }))
}

fn frames(msgs: &[WireMessage]) -> Vec<u32> {
    msgs.iter()
        .filter_map(|m| match &m.body {
            Body::Frame(f) => Some(f.frame_index),
            _ => None,
        })
        .collect()
}

fn error_code(msgs: &[WireMessage]) -> Option<ErrorCode> {
    msgs.iter().find_map(|m| match &m.body {
        Body::Error(e) => Some(e.code),
        _ => None,
    })
}

#[test]
fn opens_paused_at_the_first_frame() {
    let (mut s, hello) = open(Mode::LiveGaze);
    assert_eq!(hello.seq, 0);
    let Body::Hello(h) = &hello.body else { panic!("{hello:?}") };
    assert_eq!((h.video_id.as_str(), h.frame_count, h.first_frame, h.last_frame), (SYNTHETIC_VIDEO_ID, 300, Some(0), Some(299)));
    assert!(!s.playing());
    assert_eq!(s.cursor_frame(), Some(0));
    assert!(s.step().is_empty());
}

#[test]
fn unknown_video_opens_nothing() {
    let gw = gateway();
    assert!(gw.open_session("no_such_clip", Mode::LiveGaze).is_err());
    assert!(gw.open_session("../runs", Mode::LiveGaze).is_err());
}

#[test]
fn ten_steps_give_ten_consecutive_frames() {
    let (mut s, _) = open(Mode::ReplayGaze);
    s.handle(control(&s, Control::Play { rate_hz: Some(10.0) }));
    assert_eq!(s.rate_hz(), 10.0);
    let out: Vec<WireMessage> = (0..10).flat_map(|_| s.step()).collect();
    assert_eq!(frames(&out), (0..10).collect::<Vec<_>>());
    let frame_seqs: Vec<u64> = out.iter().filter(|m| matches!(m.body, Body::Frame(_))).map(|m| m.seq).collect();
    assert!(out.windows(2).all(|p| p[1].seq == p[0].seq + 1));
    assert_eq!(frame_seqs.len(), 10);
    s.handle(control(&s, Control::Pause));
    assert!(s.step().is_empty());
}

#[test]
fn seek_to_last_frame_plays_once_then_ends() {
    let (mut s, _) = open(Mode::ReplayGaze);
    let ack = s.handle(control(&s, Control::Seek { frame_index: 299 }));
    assert!(matches!(ack[0].body, Body::Control(Control::Seek { frame_index: 299 })));
    s.handle(control(&s, Control::Play { rate_hz: None }));
    let out = s.step();
    assert_eq!(frames(&out), vec![299]);
    let Body::Frame(f) = &out[out.len() - 2].body else { panic!() };
    assert!(f.discontinuity);
    assert!(matches!(out.last().unwrap().body, Body::Control(Control::EndOfClip)));
    assert!(!s.playing());
    assert_eq!(s.cursor_frame(), Some(299));
    assert!(s.step().is_empty());
    let again = s.handle(control(&s, Control::Play { rate_hz: None }));
    assert!(matches!(again.last().unwrap().body, Body::Control(Control::EndOfClip)));

    let bad = s.handle(control(&s, Control::Seek { frame_index: 5000 }));
    assert_eq!(error_code(&bad), Some(ErrorCode::BadSeek));
}

#[test]
fn only_the_first_frame_after_a_seek_is_flagged() {
    let (mut s, _) = open(Mode::ReplayGaze);
    s.handle(control(&s, Control::Seek { frame_index: 100 }));
    s.handle(control(&s, Control::Play { rate_hz: None }));
    let flags: Vec<bool> = (0..3)
        .flat_map(|_| s.step())
        .filter_map(|m| match m.body {
            Body::Frame(f) => Some(f.discontinuity),
            _ => None,
        })
        .collect();
    assert_eq!(flags, vec![true, false, false]);
    assert_eq!(s.epoch(), 100.0 / 30.0);
}

#[test]
fn gaze_rejections() {
    let (mut replay, _) = open(Mode::ReplayGaze);
    let g = gaze(&replay, 0.5, 0.5, 0.5, true);
    assert_eq!(error_code(&replay.handle(g)), Some(ErrorCode::Mode));

    let (mut live, _) = open(Mode::LiveGaze);
    assert_eq!(error_code(&live.handle(gaze(&live, 0.1, 0.5, 0.5, true))), Some(ErrorCode::Paused));
    live.handle(control(&live, Control::Seek { frame_index: 60 }));
    live.handle(control(&live, Control::Play { rate_hz: None }));
    let stale = live.handle(gaze(&live, 1.0, 0.5, 0.5, true));
    let Body::Error(e) = &stale[0].body else { panic!("{stale:?}") };
    assert_eq!(e.code, ErrorCode::Stale);
    assert!(e.reason.contains("epoch"), "{}", e.reason);

    // Invalid samples are acknowledged and change nothing.
    let before = live.hud().clone();
    let ack = live.handle(gaze(&live, 2.1, 0.0, 0.0, false));
    assert_eq!(ack.len(), 1);
    assert!(matches!(ack[0].body, Body::Gaze(_)));
    assert_eq!(live.hud().signs, before.signs);

    let other = WireMessage::new("s-elsewhere", 0, Body::Control(Control::Pause));
    assert_eq!(error_code(&live.handle(other)), Some(ErrorCode::BadMessage));
}

/// Plays a live session until the overlay has an active sign, returning the
/// normalized centre of its geometry.
fn play_until_active(s: &mut Session) -> (u64, f64, f64) {
    s.handle(control(s, Control::Play { rate_hz: None }));
    loop {
        assert!(!s.step().is_empty(), "clip ended without an active sign");
        let hud = s.hud();
        if let Some(sign) = hud.signs.iter().find(|g| g.state == SignState::ActiveFull) {
            let (w, h) = (f64::from(hud.frame_width), f64::from(hud.frame_height));
            let b = sign.geometry;
            return (sign.sign_id, (b.x + b.w / 2.0) / w, (b.y + b.h / 2.0) / h);
        }
    }
}

#[test]
fn live_dwell_acknowledges_before_the_next_frame() {
    let (mut s, _) = open(Mode::LiveGaze);
    let (sign, x, y) = play_until_active(&mut s);
    let t0 = s.hud().t;
    let mut out = Vec::new();
    for k in 0..8 {
        out.extend(s.handle(gaze(&s, t0 + f64::from(k) * 0.033, x, y, true)));
    }
    out.extend(s.step());
    let transitions: Vec<_> = out
        .iter()
        .filter_map(|m| match &m.body {
            Body::Transition(e) if e.cause == Cause::Gaze => Some((m.seq, e.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(transitions.len(), 1);
    let (seq, e) = &transitions[0];
    assert_eq!((e.sign, e.from, e.to), (sign, StateTag::ActiveFull, StateTag::Acknowledged));
    let frame_seq = out.iter().find(|m| matches!(m.body, Body::Frame(_))).unwrap().seq;
    assert!(*seq < frame_seq);
    assert_eq!(s.hud().sign(sign).unwrap().state, SignState::Acknowledged);
}

#[test]
fn short_glance_changes_nothing() {
    let (mut s, _) = open(Mode::LiveGaze);
    let (_, x, y) = play_until_active(&mut s);
    let t0 = s.hud().t;
    let out: Vec<WireMessage> = (0..4).flat_map(|k| s.handle(gaze(&s, t0 + f64::from(k) * 0.033, x, y, true))).collect();
    assert!(out.iter().all(|m| matches!(m.body, Body::Gaze(_))));
}

#[test]
fn sessions_on_one_video_are_isolated() {
    let gw = gateway();
    let (mut a, _) = gw.open_session(SYNTHETIC_VIDEO_ID, Mode::LiveGaze).unwrap();
    let (mut b, _) = gw.open_session(SYNTHETIC_VIDEO_ID, Mode::LiveGaze).unwrap();
    assert_ne!(a.id(), b.id());
    let (sign, x, y) = play_until_active(&mut a);
    play_until_active(&mut b);
    let t0 = a.hud().t;
    for k in 0..8 {
        a.handle(gaze(&a, t0 + f64::from(k) * 0.033, x, y, true));
    }
    assert_eq!(a.hud().sign(sign).unwrap().state, SignState::Acknowledged);
    assert_eq!(b.hud().sign(sign).unwrap().state, SignState::ActiveFull);
}

#[test]
fn replay_mode_streams_recorded_transitions() {
    let (mut s, _) = open(Mode::ReplayGaze);
    s.handle(control(&s, Control::Play { rate_hz: None }));
    let mut out = Vec::new();
    loop {
        let step = s.step();
        if step.is_empty() {
            break;
        }
        out.extend(step);
    }
    assert_eq!(frames(&out).len(), 300);
    let gaze_acks = out
        .iter()
        .filter(|m| matches!(&m.body, Body::Transition(e) if e.cause == Cause::Gaze))
        .count();
    assert_eq!(gaze_acks, 1);
    assert!(matches!(out.last().unwrap().body, Body::Control(Control::EndOfClip)));
}

#[derive(Debug, Clone)]
enum Op {
    Play,
    Pause,
    Seek(u32),
    Step,
    Gaze(f64, f64, f64, bool),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Play),
        Just(Op::Pause),
        (0u32..320).prop_map(Op::Seek),
        Just(Op::Step),
        Just(Op::Step),
        (0.0f64..10.0, 0.0f64..1.0, 0.0f64..1.0, any::<bool>()).prop_map(|(t, x, y, v)| Op::Gaze(t, x, y, v)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequence_numbers_are_gapless_and_cursor_stays_in_bounds(ops in prop::collection::vec(op(), 1..60)) {
        let gw = gateway();
        let (mut s, hello) = gw.open_session(SYNTHETIC_VIDEO_ID, Mode::LiveGaze).unwrap();
        let mut seqs = vec![hello.seq];
        for o in ops {
            let out = match o {
                Op::Play => s.handle(control(&s, Control::Play { rate_hz: None })),
                Op::Pause => s.handle(control(&s, Control::Pause)),
                Op::Seek(f) => s.handle(control(&s, Control::Seek { frame_index: f })),
                Op::Step => s.step(),
                Op::Gaze(t, x, y, v) => s.handle(gaze(&s, t, x, y, v)),
            };
            prop_assert!(out.iter().all(|m| m.session_id == s.id()));
            prop_assert!(out.iter().all(|m| !m.to_text().contains('\n')));
            seqs.extend(out.iter().map(|m| m.seq));
            prop_assert!(s.cursor_frame().is_some_and(|f| f < 300));
        }
        prop_assert!(seqs.iter().enumerate().all(|(i, q)| *q == i as u64));
    }
}

#[test]
fn shared_clip_is_cached() {
    let gw = gateway();
    let a = gw.clip(SYNTHETIC_VIDEO_ID).unwrap();
    let b = gw.clip(SYNTHETIC_VIDEO_ID).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    let videos = gw.videos().unwrap();
    assert_eq!(videos.len(), 1);
    assert_eq!((videos[0].windows, videos[0].failed_windows), (5, 0));
}
