//! Dwell-based acknowledgment.

use serde::{Deserialize, Serialize};

use super::{Cause, DwellRun, HudConfig, HudError, HudOverlayState, SignState, TransitionEvent};

/// One eye-tracker sample in normalized display coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

// Float slack for durations built from summed timestamps.
const EPS: f64 = 1e-9;

/// Feeds gaze samples through the dwell accumulators of the active signs.
///
/// A valid sample inside a sign's hit region (geometry padded by
/// `hit_pad * W`) extends that sign's run; a valid sample outside ends it.
/// Invalid samples are skipped, and a run survives them as long as the gap
/// between the surrounding valid samples is under `continuity_gap_ms`.
/// A run lasting `dwell_ms` acknowledges the sign. Samples older than the
/// last one consumed are dropped.
pub fn process_gaze(
    state: &HudOverlayState,
    samples: &[GazeSample],
    cfg: &HudConfig,
) -> (HudOverlayState, Vec<TransitionEvent>) {
    let mut next = state.clone();
    let mut events = Vec::new();
    let (w, h) = (f64::from(next.frame_width), f64::from(next.frame_height));
    let dwell_s = cfg.dwell_ms / 1000.0;
    let gap_s = cfg.continuity_gap_ms / 1000.0;
    for s in samples {
        if next.last_gaze_t.is_some_and(|last| s.t < last) {
            log::warn!("gaze sample at {} s is older than the last one consumed; dropped", s.t);
            continue;
        }
        next.last_gaze_t = Some(s.t);
        if !s.valid {
            continue;
        }
        if next.last_valid_t.is_some_and(|lv| s.t - lv >= gap_s) {
            next.dwell.clear();
        }
        next.last_valid_t = Some(s.t);
        let (px, py) = (s.x * w, s.y * h);
        let mut changed = false;
        for sign in next.signs.iter_mut().filter(|g| g.state == SignState::ActiveFull) {
            let hit = sign.geometry.padded(cfg.hit_pad * w).contains_point(px, py);
            if !hit {
                next.dwell.remove(&sign.sign_id);
                continue;
            }
            let run = next.dwell.entry(sign.sign_id).or_insert(DwellRun {
                start: s.t,
                last: s.t,
            });
            run.last = s.t;
            if run.last - run.start + EPS >= dwell_s {
                next.dwell.remove(&sign.sign_id);
                sign.state = SignState::Acknowledged;
                sign.acknowledged_at = Some(s.t);
                events.push(TransitionEvent {
                    t: s.t,
                    sign: sign.sign_id,
                    from: SignState::ActiveFull.into(),
                    to: SignState::Acknowledged.into(),
                    cause: Cause::Gaze,
                });
                changed = true;
            }
        }
        if changed {
            next.sync();
        }
    }
    (next, events)
}

/// Reads `t,x,y,valid` rows. `valid` is `1`/`0` or `true`/`false`; valid
/// samples must lie in the unit square and timestamps must not decrease.
pub fn parse_gaze_csv(text: &str) -> Result<Vec<GazeSample>, HudError> {
    let mut out: Vec<GazeSample> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() || (i == 0 && row.starts_with('t')) {
            continue;
        }
        let err = |message: String| HudError::Gaze { line, message };
        let cols: Vec<&str> = row.split(',').map(str::trim).collect();
        let [t, x, y, valid] = cols[..] else {
            return Err(err(format!("expected 4 columns, got {}", cols.len())));
        };
        let num = |name: &str, v: &str| -> Result<f64, HudError> {
            v.parse::<f64>()
                .ok()
                .filter(|n| n.is_finite())
                .ok_or_else(|| err(format!("{name} '{v}' is not a finite number")))
        };
        let sample = GazeSample {
            t: num("t", t)?,
            x: num("x", x)?,
            y: num("y", y)?,
            valid: match valid {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(err(format!("valid '{other}' is not 0/1"))),
            },
        };
        if sample.valid && !((0.0..=1.0).contains(&sample.x) && (0.0..=1.0).contains(&sample.y)) {
            return Err(err(format!("({}, {}) outside the unit square", sample.x, sample.y)));
        }
        if let Some(prev) = out.last() {
            if sample.t < prev.t {
                return Err(err(format!("timestamp {} after {}", sample.t, prev.t)));
            }
        }
        out.push(sample);
    }
    Ok(out)
}
