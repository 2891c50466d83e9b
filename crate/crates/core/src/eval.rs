//! Measurement arithmetic: detection precision/recall, the per-second
//! judgment timeline, rating agreement (ICC) and the 7-point
//! conservative/aggressive summary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{RiskReport, LOOK_BACK_S};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{0} is undefined: zero denominator")]
    UndefinedMetric(&'static str),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("no report covers second {0}")]
    CoverageGap(u32),
    #[error("no reports")]
    NoReports,
    #[error("invalid rating matrix: {0}")]
    InvalidMatrix(String),
    #[error("ICC is undefined: ratings have no variance")]
    Degenerate,
    #[error("score {0} outside 1..=7")]
    ScoreOutOfRange(f64),
    #[error("no scores")]
    NoScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountUnit {
    Percent,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: Option<f64>,
    pub unit: CountUnit,
}

impl ConfusionCounts {
    pub fn percent(tp: f64, fp: f64, fn_: f64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn: None,
            unit: CountUnit::Percent,
        }
    }

    pub fn raw(tp: f64, fp: f64, fn_: f64) -> Self {
        Self {
            unit: CountUnit::Raw,
            ..Self::percent(tp, fp, fn_)
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let cells = [Some(self.tp), Some(self.fp), Some(self.fn_), self.tn];
        if cells.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EvalError::InvalidCounts("cells must be finite and non-negative".into()));
        }
        let total: f64 = cells.iter().flatten().sum();
        if self.unit == CountUnit::Percent && total > 100.5 {
            return Err(EvalError::InvalidCounts(format!("percentages sum to {total}")));
        }
        Ok(())
    }
}

/// `(tp / (tp + fp), tp / (tp + fn))`. Percentages work as well as raw
/// counts since the common denominator cancels.
pub fn precision_recall(c: &ConfusionCounts) -> Result<(f64, f64), EvalError> {
    c.validate()?;
    if c.tp + c.fp <= 0.0 {
        return Err(EvalError::UndefinedMetric("precision"));
    }
    if c.tp + c.fn_ <= 0.0 {
        return Err(EvalError::UndefinedMetric("recall"));
    }
    Ok((c.tp / (c.tp + c.fp), c.tp / (c.tp + c.fn_)))
}

/// Risky ids per second of the clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentTimeline {
    pub seconds: BTreeMap<u32, BTreeSet<u64>>,
    pub look_back_s: f64,
}

/// For every whole second from the first report's start to the last
/// report's end, the risky ids of the report whose interval holds that
/// second's first frame.
pub fn build_timeline(reports: &[RiskReport], fps: f64) -> Result<JudgmentTimeline, EvalError> {
    if !(fps > 0.0) {
        return Err(EvalError::InvalidCounts(format!("fps must be positive, got {fps}")));
    }
    let first = reports.iter().map(|r| r.interval.start).min().ok_or(EvalError::NoReports)?;
    let last = reports.iter().map(|r| r.interval.end).max().expect("non-empty");
    let frame_of = |s: u32| (f64::from(s) * fps).round() as u32;
    let mut s = (f64::from(first) / fps).ceil() as u32;
    let mut seconds = BTreeMap::new();
    while frame_of(s) <= last {
        let frame = frame_of(s);
        let report = reports
            .iter()
            .find(|r| r.interval.contains(frame))
            .ok_or(EvalError::CoverageGap(s))?;
        seconds.insert(s, report.risky_ids().into_iter().collect());
        s += 1;
    }
    Ok(JudgmentTimeline {
        seconds,
        look_back_s: LOOK_BACK_S,
    })
}

/// Raters (rows) by items (columns), scores on the 1 to 7 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    rows: Vec<Vec<f64>>,
}

impl RatingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        if rows.len() < 2 {
            return Err(EvalError::InvalidMatrix(format!("need at least 2 raters, got {}", rows.len())));
        }
        let items = rows[0].len();
        if items < 2 {
            return Err(EvalError::InvalidMatrix(format!("need at least 2 items, got {items}")));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != items) {
            return Err(EvalError::InvalidMatrix(format!("rater {} has {} scores, expected {items}", r + 1, rows[r].len())));
        }
        if let Some(v) = rows.iter().flatten().find(|v| !(1.0..=7.0).contains(*v)) {
            return Err(EvalError::ScoreOutOfRange(*v));
        }
        Ok(Self { rows })
    }

    /// One rater per line, comma-separated scores; `#` lines are comments.
    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let rows = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| EvalError::InvalidMatrix(format!("rater {}: '{}' is not a number", i + 1, c.trim())))
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        Self::new(rows)
    }

    pub fn raters(&self) -> usize {
        self.rows.len()
    }

    pub fn items(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Two-way ANOVA mean squares: between items (rows of the ANOVA), between
/// raters (columns) and residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSquares {
    pub msr: f64,
    pub msc: f64,
    pub mse: f64,
    pub items: usize,
    pub raters: usize,
}

pub fn mean_squares(m: &RatingMatrix) -> MeanSquares {
    let (k, n) = (m.raters(), m.items());
    let (kf, nf) = (k as f64, n as f64);
    let grand = m.rows.iter().flatten().sum::<f64>() / (kf * nf);
    let ss_items: f64 = (0..n)
        .map(|i| {
            let mean = m.rows.iter().map(|r| r[i]).sum::<f64>() / kf;
            (mean - grand).powi(2)
        })
        .sum::<f64>()
        * kf;
    let ss_raters: f64 = m
        .rows
        .iter()
        .map(|r| (r.iter().sum::<f64>() / nf - grand).powi(2))
        .sum::<f64>()
        * nf;
    let ss_total: f64 = m.rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_error = (ss_total - ss_items - ss_raters).max(0.0);
    MeanSquares {
        msr: ss_items / (nf - 1.0),
        msc: ss_raters / (kf - 1.0),
        mse: ss_error / ((nf - 1.0) * (kf - 1.0)),
        items: n,
        raters: k,
    }
}

/// ICC(2,1), single-rater absolute agreement under a two-way random-effects
/// model.
pub fn icc_two_way_random(m: &RatingMatrix) -> Result<f64, EvalError> {
    let ms = mean_squares(m);
    let (k, n) = (ms.raters as f64, ms.items as f64);
    let denom = ms.msr + (k - 1.0) * ms.mse + k * (ms.msc - ms.mse) / n;
    if ms.msr == 0.0 && ms.msc == 0.0 && ms.mse == 0.0 || denom.abs() < 1e-12 {
        return Err(EvalError::Degenerate);
    }
    Ok((ms.msr - ms.mse) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reasonableness {
    Conservative,
    Reasonable,
    Aggressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonablenessSummary {
    pub mean: f64,
    pub class: Reasonableness,
    /// "slightly conservative" or "slightly aggressive" inside the
    /// reasonable band, off the midpoint.
    pub note: Option<String>,
}

/// Mean of 1 to 7 ratings: below 3 conservative, 3 to 5 reasonable, above
/// 5 aggressive.
pub fn reasonableness_summary(scores: &[f64]) -> Result<ReasonablenessSummary, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    if let Some(v) = scores.iter().find(|v| !(1.0..=7.0).contains(*v)) {
        return Err(EvalError::ScoreOutOfRange(*v));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let class = if mean < 3.0 {
        Reasonableness::Conservative
    } else if mean <= 5.0 {
        Reasonableness::Reasonable
    } else {
        Reasonableness::Aggressive
    };
    let note = match class {
        Reasonableness::Reasonable if mean < 4.0 => Some("slightly conservative".to_string()),
        Reasonableness::Reasonable if mean > 4.0 => Some("slightly aggressive".to_string()),
        _ => None,
    };
    Ok(ReasonablenessSummary { mean, class, note })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_recall_edges() {
        assert_eq!(
            precision_recall(&ConfusionCounts::raw(0.0, 0.0, 3.0)),
            Err(EvalError::UndefinedMetric("precision"))
        );
        assert_eq!(
            precision_recall(&ConfusionCounts::raw(0.0, 2.0, 0.0)),
            Err(EvalError::UndefinedMetric("recall"))
        );
        assert_eq!(precision_recall(&ConfusionCounts::raw(7.0, 0.0, 0.0)), Ok((1.0, 1.0)));
        assert!(precision_recall(&ConfusionCounts::raw(-1.0, 2.0, 0.0)).is_err());
        assert!(precision_recall(&ConfusionCounts::percent(60.0, 30.0, 20.0)).is_err());
        assert!(precision_recall(&ConfusionCounts::raw(60.0, 30.0, 20.0)).is_ok());
    }

    #[test]
    fn matrix_validation() {
        assert!(RatingMatrix::new(vec![vec![1.0, 2.0]]).is_err());
        assert!(RatingMatrix::new(vec![vec![1.0], vec![2.0]]).is_err());
        assert!(RatingMatrix::new(vec![vec![1.0, 2.0], vec![2.0]]).is_err());
        assert_eq!(
            RatingMatrix::new(vec![vec![1.0, 8.0], vec![2.0, 2.0]]),
            Err(EvalError::ScoreOutOfRange(8.0))
        );
        let m = RatingMatrix::parse_csv("# two raters\n1,2,3\n2, 3, 4\n").unwrap();
        assert_eq!((m.raters(), m.items()), (2, 3));
        assert!(RatingMatrix::parse_csv("1,x\n1,2\n").is_err());
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let m = RatingMatrix::new(vec![vec![4.0; 3], vec![4.0; 3]]).unwrap();
        assert_eq!(icc_two_way_random(&m), Err(EvalError::Degenerate));
    }

    #[test]
    fn reasonableness_bands() {
        let s = reasonableness_summary(&[4.0; 5]).unwrap();
        assert_eq!((s.mean, s.class, s.note), (4.0, Reasonableness::Reasonable, None));
        let s = reasonableness_summary(&[7.0, 7.0]).unwrap();
        assert_eq!(s.class, Reasonableness::Aggressive);
        let s = reasonableness_summary(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.class, Reasonableness::Conservative);
        assert_eq!(reasonableness_summary(&[]), Err(EvalError::NoScores));
        assert_eq!(reasonableness_summary(&[0.5]), Err(EvalError::ScoreOutOfRange(0.5)));
        // Boundaries: 3 and 5 are reasonable.
        assert_eq!(reasonableness_summary(&[3.0]).unwrap().class, Reasonableness::Reasonable);
        assert_eq!(reasonableness_summary(&[5.0]).unwrap().class, Reasonableness::Reasonable);
        assert_eq!(reasonableness_summary(&[5.5]).unwrap().class, Reasonableness::Aggressive);
    }
}
