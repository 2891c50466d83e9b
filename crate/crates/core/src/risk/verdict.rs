//! Line-oriented reader for the Markdown verdict.
//!
//! Recognised sections are `Potential Risks` and `Safety Evaluation`, as
//! Markdown headings of any level or as bare/numbered/bold title lines.
//! Verdict lines look like `Person <ID>: Safe | Risky`, with any spacing
//! around the colon and optional list markers.

use std::collections::{BTreeMap, BTreeSet};

use super::{observations_of, Rejected, RiskError, RiskJudgment, RiskLevel, RiskReport, Verdict};
use crate::scene::SceneDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Risks,
    Evaluation,
    Other,
}

fn strip_decoration(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let before = s.len();
        s = s.trim_start_matches(['#', '*', '_', '`', '-', '+', '>']).trim_start();
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        if s.len() == before {
            break;
        }
    }
    s.trim_end_matches(['*', '_', '`']).trim_end()
}

/// Returns the section a title line opens plus any text after the title.
fn section_header(line: &str) -> Option<(Section, &str)> {
    let heading = line.trim_start().starts_with('#');
    let s = strip_decoration(line);
    let lower = s.to_ascii_lowercase();
    for (name, section) in [
        ("potential risks", Section::Risks),
        ("potential risk", Section::Risks),
        ("safety evaluation", Section::Evaluation),
    ] {
        if let Some(rest) = lower.strip_prefix(name) {
            let rest_raw = &s[s.len() - rest.len()..];
            let rest_raw = rest_raw
                .trim_start_matches(['*', '_', '`'])
                .trim_start()
                .trim_start_matches(':')
                .trim_start_matches(['*', '_', '`'])
                .trim();
            if rest.is_empty() || rest.trim_start_matches(['*', '_', '`']).trim_start().starts_with(':') {
                return Some((section, rest_raw));
            }
        }
    }
    heading.then_some((Section::Other, ""))
}

/// Parses `Person 8 : Risky` and friends into the id, the verdict and any
/// text that follows the verdict word.
fn parse_eval_line(line: &str) -> Option<(u64, Verdict, String)> {
    let s = strip_decoration(line);
    let lower = s.to_ascii_lowercase();
    let rest = ["person", "pedestrian", "id"]
        .iter()
        .find_map(|p| lower.strip_prefix(p))?;
    let rest = rest.trim_start().trim_start_matches('#').trim_start();
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let id: u64 = rest[..digits].parse().ok()?;
    let rest = rest[digits..]
        .trim_start_matches(['*', '_', '`'])
        .trim_start();
    let rest = rest
        .strip_prefix(':')
        .or_else(|| rest.strip_prefix('-'))
        .or_else(|| rest.strip_prefix('\u{2013}'))?;
    let rest = rest.trim_start().trim_start_matches(['*', '_', '`']);
    let (verdict, tail) = if let Some(t) = rest.strip_prefix("safe") {
        (Verdict::Safe, t)
    } else if let Some(t) = rest.strip_prefix("risky") {
        (Verdict::Risky, t)
    } else {
        return None;
    };
    Some((id, verdict, tail.to_string()))
}

/// Ids named as `Person <id>` anywhere in a line.
fn mentioned_ids(line: &str) -> Vec<u64> {
    let lower = line.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = lower[from..].find("person") {
        let after = lower[from + pos + "person".len()..].trim_start_matches(['s', ' ', '#']);
        let digits = after.len() - after.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if let Ok(id) = after[..digits].parse() {
            out.push(id);
        }
        from += pos + "person".len();
    }
    out
}

fn intention_of(text: &str) -> &'static str {
    let t = text.to_ascii_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| t.contains(w));
    if has(&["cross"]) {
        "crossing"
    } else if has(&["stationary", "standing", "stands", "waiting", "stays", "standstill"]) {
        "standing"
    } else if has(&["walk"]) {
        "walking"
    } else {
        "unspecified"
    }
}

fn says_low(text: &str) -> bool {
    let t = text.to_ascii_lowercase();
    ["low risk", "low-risk", "risky (low", "low)", "minor risk", "slight risk"]
        .iter()
        .any(|w| t.contains(w))
        || t.trim_start_matches([' ', '(', '-', ':', ',']).starts_with("low")
}

/// Reads a Markdown verdict against the scene it was asked about.
///
/// Verdicts for ids outside the scene land in `rejected`; scene ids without
/// a verdict are listed in `missing`. Risky maps to `high` unless the text
/// calls the risk low, safe maps to `none`.
pub fn parse_verdict(response: &str, scene: &SceneDescription) -> Result<RiskReport, RiskError> {
    let mut section = Section::Other;
    let mut saw_evaluation = false;
    let mut verdicts: Vec<(u64, Verdict, String, String)> = Vec::new();
    let mut unparsed = Vec::new();
    let mut risk_text: BTreeMap<u64, String> = BTreeMap::new();

    let mut handle = |section: Section, line: &str, unparsed: &mut Vec<String>| match section {
        Section::Evaluation => {
            if line.trim().is_empty() {
                return;
            }
            match parse_eval_line(line) {
                Some((id, v, tail)) => verdicts.push((id, v, tail, line.trim().to_string())),
                None => unparsed.push(line.trim().to_string()),
            }
        }
        Section::Risks => {
            for id in mentioned_ids(line) {
                let entry = risk_text.entry(id).or_default();
                entry.push_str(line);
                entry.push('\n');
            }
        }
        Section::Other => {}
    };

    for line in response.lines() {
        if let Some((next, rest)) = section_header(line) {
            section = next;
            saw_evaluation |= next == Section::Evaluation;
            if !rest.is_empty() {
                handle(section, rest, &mut unparsed);
            }
            continue;
        }
        handle(section, line, &mut unparsed);
    }

    if !saw_evaluation {
        return Err(RiskError::MissingSafetyEvaluation {
            raw: response.to_string(),
        });
    }

    let scene_ids: BTreeSet<u64> = scene.person_ids().into_iter().collect();
    let mut judged: BTreeMap<u64, RiskJudgment> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (id, verdict, tail, line) in verdicts {
        if !scene_ids.contains(&id) {
            rejected.push(Rejected { id, verdict, line });
            continue;
        }
        if judged.contains_key(&id) {
            unparsed.push(line);
            continue;
        }
        let context = risk_text.get(&id).map(String::as_str).unwrap_or("");
        let level = match verdict {
            Verdict::Safe => RiskLevel::None,
            Verdict::Risky if says_low(&tail) || says_low(context) => RiskLevel::Low,
            Verdict::Risky => RiskLevel::High,
        };
        judged.insert(
            id,
            RiskJudgment {
                id,
                intention: intention_of(context).to_string(),
                risk_level: level,
                binary: verdict,
                guards: Vec::new(),
            },
        );
    }
    let missing = scene_ids
        .iter()
        .filter(|id| !judged.contains_key(id))
        .copied()
        .collect();

    Ok(RiskReport {
        video_id: scene.video_id.clone(),
        interval: scene.window,
        risks: judged.into_values().collect(),
        rejected,
        missing,
        unparsed,
        excluded: Vec::new(),
        raw_response: response.to_string(),
        service_meta: None,
        observations: observations_of(scene),
    })
}
