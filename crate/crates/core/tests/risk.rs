use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use vcd_core::perception::{EgoState, EntityClass, FrameObservation, TrackedEntity};
use vcd_core::risk::*;
use vcd_core::scene::{compile_scene, SceneConfig, SceneDescription};
use vcd_core::{BoundingBox, DepthField, SurfaceLabel, SurfaceMap, VideoManifest};

const W: u32 = 200;
const H: u32 = 100;

/// Sidewalk for x < 80, road beyond, both from y = 40 down.
fn map() -> Arc<SurfaceMap> {
    let labels: Vec<SurfaceLabel> = (0..W * H)
        .map(|i| match (i % W, i / W) {
            (_, y) if y < 40 => SurfaceLabel::None,
            (x, _) if x < 80 => SurfaceLabel::Sidewalk(0),
            _ => SurfaceLabel::Road(0),
        })
        .collect();
    Arc::new(SurfaceMap::from_labels(W, H, &labels).unwrap())
}

struct Person {
    id: u64,
    x0: f64,
    vx: f64,
    depth: f32,
    confidence: f64,
    on_road: bool,
}

fn scene_of(people: &[Person], start: u32, frames: u32) -> SceneDescription {
    let mut manifest = VideoManifest::new("guards");
    manifest.width = W;
    manifest.height = H;
    let surfaces = map();
    let window: Vec<FrameObservation> = (start..start + frames)
        .map(|f| {
            let t = f64::from(f - start) / 30.0;
            let mut depth = vec![50.0f32; (W * H) as usize];
            let entities = people
                .iter()
                .map(|p| {
                    let x = if p.on_road { 120.0 } else { p.x0 + p.vx * t };
                    let bbox = BoundingBox::new(x, 50.0, 6.0, 20.0).unwrap();
                    for y in 50..70 {
                        for xx in x.floor() as u32..(x + 6.0).ceil() as u32 {
                            depth[(y * W + xx) as usize] = p.depth;
                        }
                    }
                    TrackedEntity {
                        id: p.id,
                        class: EntityClass::Pedestrian,
                        bbox,
                        confidence: p.confidence,
                        clamped: false,
                    }
                })
                .collect();
            FrameObservation {
                frame_index: f,
                timestamp: f64::from(f) / 30.0,
                entities,
                surfaces: surfaces.clone(),
                depth: Arc::new(DepthField::new(W, H, depth).unwrap()),
                ego: EgoState::default(),
            }
        })
        .collect();
    compile_scene(&window, &manifest, &SceneConfig::default()).unwrap()
}

fn far_stationary(id: u64) -> Person {
    Person { id, x0: 20.0, vx: 0.0, depth: 22.0, confidence: 0.9, on_road: false }
}

fn verdict_text(lines: &[(u64, bool)]) -> String {
    let mut s = String::from("### Safety Evaluation\n");
    for (id, risky) in lines {
        s.push_str(&format!("Person {id}: {}\n", if *risky { "Risky" } else { "Safe" }));
    }
    s
}

// Prompt assembly

#[test]
fn prompt_lists_input_keys_and_keeps_order() {
    let scene = scene_of(&[far_stationary(8), far_stationary(12)], 0, 4);
    let p = build_prompt(&scene, &PromptBundle::default()).unwrap();
    assert_eq!(p.system, template::OVERALL_TASK);
    for key in ["ID", "Surface", "Distance Class", "Speed Class", "Position Class"] {
        assert!(p.user.contains(&format!("- {key}:")), "{key}");
    }
    let explain = p.user.find("We have processed").unwrap();
    let example = p.user.find("Info_roadside_JAAD_video_16.json").unwrap();
    let scene_at = p.user.find("Info_roadside_guards.json").unwrap();
    assert!(explain < example && example < scene_at);
    assert!(p.user.ends_with("Pedestrian IDs to evaluate: 8, 12\n"));
    assert_eq!(p.token_estimate, estimate_tokens(&p.system) + estimate_tokens(&p.user));
    assert_eq!(estimate_tokens("abcde"), 2);
    assert!(!p.truncated);
}

#[test]
fn prompt_is_deterministic_and_differs_only_in_scene() {
    let a = scene_of(&[far_stationary(1)], 0, 4);
    let b = scene_of(&[far_stationary(2)], 60, 4);
    let bundle = PromptBundle::default();
    assert_eq!(build_prompt(&a, &bundle).unwrap(), build_prompt(&a, &bundle).unwrap());
    let pa = build_prompt(&a, &bundle).unwrap();
    let pb = build_prompt(&b, &bundle).unwrap();
    assert_eq!(pa.system, pb.system);
    let head = pa.user.find("## Road Scene").unwrap();
    assert_eq!(pa.user[..head], pb.user[..head]);
    assert_ne!(pa.user[head..], pb.user[head..]);
}

#[test]
fn prompt_without_people_still_asks_for_evaluation() {
    let scene = scene_of(&[], 0, 2);
    let p = build_prompt(&scene, &PromptBundle::default()).unwrap();
    assert!(p.user.contains("Pedestrian IDs to evaluate: none"));
    assert!(p.user.contains("Safety Evaluation"));
}

#[test]
fn long_scene_is_cut_to_three_seconds() {
    let scene = scene_of(&[far_stationary(1)], 0, 120);
    let p = build_prompt(&scene, &PromptBundle::default()).unwrap();
    assert!(p.truncated);
    assert!(p.user.contains("\"30-119\""), "{}", p.user);
}

#[test]
fn missing_template_part_is_an_error() {
    let scene = scene_of(&[], 0, 2);
    let mut bundle = PromptBundle::default();
    bundle.input_explanation = "  ".into();
    assert!(matches!(build_prompt(&scene, &bundle), Err(RiskError::Template(_))));
    let mut bundle = PromptBundle::default();
    bundle.few_shot.clear();
    assert!(matches!(build_prompt(&scene, &bundle), Err(RiskError::Template(_))));
}

// Verdict parsing

#[test]
fn hallucinated_id_is_rejected() {
    let scene = scene_of(&[far_stationary(8), far_stationary(12)], 0, 4);
    let r = parse_verdict(&verdict_text(&[(8, false), (12, false), (99, true)]), &scene).unwrap();
    assert_eq!(r.rejected.len(), 1);
    assert_eq!(r.rejected[0].id, 99);
    assert!(r.judgment(99).is_none());
}

#[test]
fn unevaluated_scene_id_is_reported_missing() {
    let scene = scene_of(&[far_stationary(8), far_stationary(12)], 0, 4);
    let r = parse_verdict("## Safety Evaluation\nPerson 8: Safe\n", &scene).unwrap();
    assert_eq!(r.missing, [12]);
    assert_eq!(r.judgment(8).unwrap().risk_level, RiskLevel::None);
    assert_eq!(r.judgment(8).unwrap().intention, "unspecified");
}

#[test]
fn missing_section_keeps_raw_text() {
    let scene = scene_of(&[far_stationary(8)], 0, 4);
    let raw = "Person 8 : Risky\nno headings here";
    match parse_verdict(raw, &scene) {
        Err(RiskError::MissingSafetyEvaluation { raw: kept }) => assert_eq!(kept, raw),
        other => panic!("{other:?}"),
    }
}

#[test]
fn tolerant_formats() {
    let scene = scene_of(&[far_stationary(3), far_stationary(5), far_stationary(7)], 0, 4);
    let text = "1. **Potential Risks**:\n- Person 5 walks toward the curb, low risk.\n\n2. **Safety Evaluation**:\n- Person 3 :Safe\n- **Person 5**: Risky\n* Person 7 - Risky (low)\nOverall fine.\n";
    let r = parse_verdict(text, &scene).unwrap();
    assert_eq!(r.judgment(3).unwrap().risk_level, RiskLevel::None);
    let five = r.judgment(5).unwrap();
    assert_eq!((five.risk_level, five.intention.as_str()), (RiskLevel::Low, "walking"));
    assert_eq!(r.judgment(7).unwrap().risk_level, RiskLevel::Low);
    assert_eq!(r.unparsed, ["Overall fine."]);
}

proptest! {
    #[test]
    fn parser_is_total(body in "(#{0,4} ?(Safety Evaluation|Potential Risks|Scene)?\n|Person [0-9]{1,3} ?: ?(Safe|Risky|maybe)\n|[a-z :]{0,20}\n){0,12}") {
        let scene = scene_of(&[far_stationary(1), far_stationary(2)], 0, 2);
        match parse_verdict(&body, &scene) {
            Ok(r) => {
                prop_assert_eq!(&r.raw_response, &body);
                for j in &r.risks {
                    prop_assert!(scene.person_ids().contains(&j.id));
                    prop_assert_eq!(j.binary == Verdict::Risky, j.risk_level != RiskLevel::None);
                }
            }
            Err(RiskError::MissingSafetyEvaluation { raw }) => prop_assert_eq!(raw, body),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

// Guards

#[test]
fn distant_stationary_sidewalk_pedestrian_is_downgraded() {
    let scene = scene_of(&[far_stationary(4)], 0, 8);
    let r = parse_verdict(&verdict_text(&[(4, true)]), &scene).unwrap();
    let g = apply_guards(&r, &scene, &[], &GuardConfig::default());
    let j = g.judgment(4).unwrap();
    assert_eq!(j.risk_level, RiskLevel::Low);
    assert_eq!(j.binary, Verdict::Risky);
    assert!(j.downgraded());
}

#[test]
fn approaching_or_near_pedestrians_are_not_downgraded() {
    let approaching = Person { id: 1, x0: 20.0, vx: 30.0, depth: 22.0, confidence: 0.9, on_road: false };
    let near = Person { id: 2, x0: 40.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: false };
    let road = Person { id: 3, x0: 0.0, vx: 0.0, depth: 22.0, confidence: 0.9, on_road: true };
    let scene = scene_of(&[approaching, near, road], 0, 8);
    let r = parse_verdict(&verdict_text(&[(1, true), (2, true), (3, true)]), &scene).unwrap();
    let g = apply_guards(&r, &scene, &[], &GuardConfig::default());
    assert_eq!(g.risks, r.risks);
}

#[test]
fn unsupported_flip_is_held() {
    // Same evidence in three windows, verdicts safe, risky, safe.
    let cfg = GuardConfig::default();
    let near = |start| scene_of(&[Person { id: 6, x0: 40.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: false }], start, 8);
    let mut history = Vec::new();
    let mut levels = Vec::new();
    for (i, risky) in [false, true, false].into_iter().enumerate() {
        let scene = near(i as u32 * 60);
        let r = parse_verdict(&verdict_text(&[(6, risky)]), &scene).unwrap();
        let g = apply_guards(&r, &scene, &history, &cfg);
        levels.push(g.judgment(6).unwrap().risk_level);
        history.push(g);
    }
    assert_eq!(levels, [RiskLevel::None; 3]);
    assert!(matches!(
        history[1].judgment(6).unwrap().guards[..],
        [GuardAction::FlipHeld { from: RiskLevel::High }]
    ));
}

#[test]
fn flip_with_new_evidence_passes() {
    let cfg = GuardConfig::default();
    let calm = scene_of(&[Person { id: 6, x0: 40.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: false }], 0, 8);
    let moved = scene_of(&[Person { id: 6, x0: 0.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: true }], 60, 8);
    let first = apply_guards(&parse_verdict(&verdict_text(&[(6, false)]), &calm).unwrap(), &calm, &[], &cfg);
    let second = apply_guards(&parse_verdict(&verdict_text(&[(6, true)]), &moved).unwrap(), &moved, &[first], &cfg);
    assert_eq!(second.judgment(6).unwrap().risk_level, RiskLevel::High);
}

#[test]
fn stable_risky_verdict_is_untouched() {
    let cfg = GuardConfig::default();
    let road = |start| scene_of(&[Person { id: 2, x0: 0.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: true }], start, 8);
    let s0 = road(0);
    let r0 = parse_verdict(&verdict_text(&[(2, true)]), &s0).unwrap();
    let g0 = apply_guards(&r0, &s0, &[], &cfg);
    assert_eq!(g0, r0);
    let s1 = road(60);
    let r1 = parse_verdict(&verdict_text(&[(2, true)]), &s1).unwrap();
    assert_eq!(apply_guards(&r1, &s1, &[g0], &cfg), r1);
}

#[test]
fn weak_detections_are_excluded() {
    let weak = Person { id: 9, x0: 40.0, vx: 0.0, depth: 6.0, confidence: 0.2, on_road: false };
    let scene = scene_of(&[weak], 0, 4);
    let r = parse_verdict(&verdict_text(&[(9, true)]), &scene).unwrap();
    let g = apply_guards(&r, &scene, &[], &GuardConfig::default());
    assert!(g.risks.is_empty());
    assert_eq!(g.excluded[0].id, 9);
    assert!((g.excluded[0].mean_confidence - 0.2).abs() < 1e-12);
}

fn arb_person() -> impl Strategy<Value = (f64, f64, f32, f64, bool)> {
    (0.0f64..70.0, -20.0f64..20.0, 1.0f32..45.0, 0.1f64..1.0, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn guards_are_idempotent_and_never_escalate(
        people in proptest::collection::vec(arb_person(), 1..4),
        now in proptest::collection::vec(any::<bool>(), 4),
        before in proptest::collection::vec(any::<bool>(), 4),
        same_before in any::<bool>(),
    ) {
        let cfg = GuardConfig::default();
        let persons: Vec<Person> = people
            .iter()
            .enumerate()
            .map(|(i, (x0, vx, depth, confidence, on_road))| Person {
                id: i as u64 + 1, x0: *x0, vx: *vx, depth: *depth, confidence: *confidence, on_road: *on_road,
            })
            .collect();
        let scene = scene_of(&persons, 60, 6);
        let prev_scene = if same_before { scene_of(&persons, 0, 6) } else { scene_of(&[], 0, 6) };
        let ids: Vec<u64> = (1..=persons.len() as u64).collect();
        let prev = parse_verdict(&verdict_text(&ids.iter().map(|i| (*i, before[*i as usize - 1])).collect::<Vec<_>>()), &prev_scene).unwrap();
        let history = [apply_guards(&prev, &prev_scene, &[], &cfg)];
        let r = parse_verdict(&verdict_text(&ids.iter().map(|i| (*i, now[*i as usize - 1])).collect::<Vec<_>>()), &scene).unwrap();
        let once = apply_guards(&r, &scene, &history, &cfg);
        let twice = apply_guards(&once, &scene, &history, &cfg);
        prop_assert_eq!(&once, &twice);
        for j in &once.risks {
            let orig = r.judgment(j.id).unwrap();
            prop_assert!(j.risk_level <= orig.risk_level);
            prop_assert_eq!(j.binary == Verdict::Risky, j.risk_level != RiskLevel::None);
        }
        prop_assert_eq!(once.risks.len() + once.excluded.len(), r.risks.len());
    }
}

// Completion services

fn request<'a>(prompt: &'a Prompt, scene: &'a SceneDescription, window: usize) -> CompletionRequest<'a> {
    CompletionRequest { prompt, video_id: "v1", window_index: window, scene }
}

#[test]
fn mock_returns_verbatim_with_key_precedence() {
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let mut mock = MockService::fixed(template::EXAMPLE_OUTPUT);
    mock.insert("window_0001", "one");
    mock.insert("v1/window_0002", "two");
    mock.insert("window_0002", "not this");
    let c = mock.complete(&request(&prompt, &scene, 0)).unwrap();
    assert_eq!(c.text, template::EXAMPLE_OUTPUT);
    assert!(c.latency_s >= 0.0);
    assert_eq!(mock.complete(&request(&prompt, &scene, 1)).unwrap().text, "one");
    assert_eq!(mock.complete(&request(&prompt, &scene, 2)).unwrap().text, "two");
    let empty = MockService::default();
    assert!(matches!(empty.complete(&request(&prompt, &scene, 0)), Err(ServiceError::NoMockResponse(_))));
}

#[test]
fn mock_timeout_carries_elapsed() {
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let slow = MockService::fixed("x")
        .with_delay(Duration::from_millis(300))
        .with_timeout(Duration::from_millis(50));
    match slow.complete(&request(&prompt, &scene, 0)) {
        Err(ServiceError::Timeout { elapsed_s, .. }) => assert!(elapsed_s >= 0.05),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rule_service_output_parses() {
    let scene = scene_of(
        &[far_stationary(1), Person { id: 2, x0: 0.0, vx: 0.0, depth: 6.0, confidence: 0.9, on_road: true }],
        0,
        4,
    );
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let text = RuleService::default().complete(&request(&prompt, &scene, 0)).unwrap().text;
    let r = parse_verdict(&text, &scene).unwrap();
    assert_eq!(r.risky_ids(), [2]);
    assert_eq!(r.judgment(2).unwrap().intention, "crossing");
    assert_eq!(r.judgment(1).unwrap().intention, "standing");
}

/// Serves chat-completion replies; the first `drop_first` connections are
/// closed without a reply and every reply is delayed by `delay`.
fn serve(drop_first: usize, delay: Duration, content: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let n = seen.fetch_add(1, Ordering::SeqCst);
            if n < drop_first {
                drop(stream);
                continue;
            }
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            thread::sleep(delay);
            let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    (url, hits)
}

fn http(endpoint: &str, timeout_s: f64) -> HttpService {
    HttpService::new(ServiceConfig { endpoint: endpoint.into(), timeout_s, ..ServiceConfig::default() })
}

#[test]
fn http_service_round_trip() {
    let (url, _) = serve(0, Duration::ZERO, "### Safety Evaluation\nPerson 1 : Safe");
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let svc = http(&url, 5.0);
    let c = svc.complete(&request(&prompt, &scene, 0)).unwrap();
    assert_eq!(c.text, "### Safety Evaluation\nPerson 1 : Safe");
    assert_eq!(c.model, DEFAULT_MODEL);
}

#[test]
fn http_service_retries_once_after_dropped_connection() {
    let (url, hits) = serve(1, Duration::ZERO, "ok");
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    assert_eq!(http(&url, 5.0).complete(&request(&prompt, &scene, 0)).unwrap().text, "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn http_service_gives_up_after_second_failure() {
    let (url, hits) = serve(5, Duration::ZERO, "never");
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let err = http(&url, 5.0).complete(&request(&prompt, &scene, 0)).unwrap_err();
    assert!(matches!(err, ServiceError::Transport { .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn http_service_timeout_reports_elapsed() {
    let (url, _) = serve(0, Duration::from_millis(1500), "late");
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    match http(&url, 0.2).complete(&request(&prompt, &scene, 0)) {
        Err(ServiceError::Timeout { elapsed_s, endpoint }) => {
            assert!(elapsed_s >= 0.2, "{elapsed_s}");
            assert_eq!(endpoint, url);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreachable_endpoint_names_it() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let scene = scene_of(&[], 0, 2);
    let prompt = build_prompt(&scene, &PromptBundle::default()).unwrap();
    let err = http(&url, 2.0).complete(&request(&prompt, &scene, 0)).unwrap_err();
    assert!(matches!(err, ServiceError::Transport { .. }), "{err:?}");
    assert!(err.to_string().contains(&url));
}

#[test]
fn config_env_overrides() {
    let vars = |k: &str| match k {
        "VCD_MODEL" => Some("local-model".to_string()),
        "VCD_TIMEOUT_S" => Some("2.5".to_string()),
        _ => None,
    };
    let cfg = ServiceConfig::default().with_vars(vars).unwrap();
    assert_eq!(cfg.model, "local-model");
    assert_eq!(cfg.timeout_s, 2.5);
    assert_eq!(cfg.temperature, 0.0);
    assert!(ServiceConfig::default().with_vars(|k| (k == "VCD_TIMEOUT_S").then(|| "soon".into())).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("svc.json");
    std::fs::write(&path, r#"{"endpoint": "http://localhost:9/x", "timeout_s": 4}"#).unwrap();
    let loaded = ServiceConfig::load(&path).unwrap();
    assert_eq!((loaded.endpoint.as_str(), loaded.timeout_s, loaded.model.as_str()), ("http://localhost:9/x", 4.0, DEFAULT_MODEL));
}
