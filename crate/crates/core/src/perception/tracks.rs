//! MOT-style track fixture: `frame,id,x,y,w,h,confidence,class`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_text, BoundingBox, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Pedestrian,
    Vehicle,
}

impl EntityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Pedestrian => "pedestrian",
            EntityClass::Vehicle => "vehicle",
        }
    }
}

impl FromStr for EntityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pedestrian" | "person" => Ok(EntityClass::Pedestrian),
            "vehicle" | "car" => Ok(EntityClass::Vehicle),
            other => Err(format!("unknown entity class '{other}'")),
        }
    }
}

/// One detection carrying a tracker id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedEntity {
    pub id: u64,
    pub class: EntityClass,
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Set when the tracker's box overshot the frame and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

/// All detections of one frame, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame_index: u32,
    pub entities: Vec<TrackedEntity>,
}

/// Parses a track fixture from a file.
pub fn load_track_file(path: &Path) -> Result<Vec<TrackFrame>, IngestError> {
    let text = read_text(path)?;
    parse_tracks(&text)
}

/// Parses track rows. A leading `frame,...` header line and `#` comments are
/// skipped. Output is grouped per frame and sorted by frame then id.
pub fn parse_tracks(text: &str) -> Result<Vec<TrackFrame>, IngestError> {
    let mut frames: BTreeMap<u32, BTreeMap<u64, TrackedEntity>> = BTreeMap::new();
    let mut classes: HashMap<u64, EntityClass> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line_no == 1 && line.to_ascii_lowercase().starts_with("frame") {
            continue;
        }
        let err = |message: String| IngestError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64, IngestError> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("invalid {name} '{}'", fields[i])))
        };
        let frame: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("invalid frame '{}'", fields[0])))?;
        let id: u64 = fields[1]
            .parse()
            .map_err(|_| err(format!("invalid id '{}'", fields[1])))?;
        let (x, y, w, h) = (num(2, "x")?, num(3, "y")?, num(4, "w")?, num(5, "h")?);
        let confidence = num(6, "confidence")?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(err(format!("confidence out of range: {confidence}")));
        }
        let class: EntityClass = fields[7].parse().map_err(err)?;
        let bbox = BoundingBox::new(x, y, w, h)
            .ok_or_else(|| err(format!("bbox must have positive size, got {w}x{h}")))?;

        match classes.get(&id) {
            Some(prev) if *prev != class => {
                return Err(err(format!(
                    "id {id} changes class from {} to {}",
                    prev.as_str(),
                    class.as_str()
                )))
            }
            _ => {
                classes.insert(id, class);
            }
        }

        let slot = frames.entry(frame).or_default();
        if slot.contains_key(&id) {
            return Err(IngestError::DuplicateDetection {
                line: line_no,
                frame,
                id,
            });
        }
        slot.insert(
            id,
            TrackedEntity {
                id,
                class,
                bbox,
                confidence,
                clamped: false,
            },
        );
    }

    Ok(frames
        .into_iter()
        .map(|(frame_index, ents)| TrackFrame {
            frame_index,
            entities: ents.into_values().collect(),
        })
        .collect())
}

/// Writes frames back in the canonical row format (with header).
pub fn format_tracks(frames: &[TrackFrame]) -> String {
    let mut out = String::from("frame,id,x,y,w,h,confidence,class\n");
    for f in frames {
        for e in &f.entities {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f.frame_index,
                e.id,
                e.bbox.x,
                e.bbox.y,
                e.bbox.w,
                e.bbox.h,
                e.confidence,
                e.class.as_str()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_maps_fields_directly() {
        let frames = parse_tracks("1,8,100,200,40,90,0.91,pedestrian\n").unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].frame_index, 1);
        let e = &frames[0].entities[0];
        assert_eq!(e.id, 8);
        assert_eq!(e.bbox, BoundingBox::new(100.0, 200.0, 40.0, 90.0).unwrap());
        assert_eq!(e.confidence, 0.91);
        assert_eq!(e.class, EntityClass::Pedestrian);
    }

    #[test]
    fn groups_same_frame_and_sorts() {
        let text = "frame,id,x,y,w,h,confidence,class\n\
                    2,3,0,0,5,5,0.5,vehicle\n\
                    1,12,0,0,5,5,0.5,pedestrian\n\
                    1,8,10,0,5,5,0.5,pedestrian\n";
        let frames = parse_tracks(text).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame_index, 1);
        let ids: Vec<u64> = frames[0].entities.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![8, 12]);
    }

    #[test]
    fn confidence_out_of_range_is_rejected() {
        let err = parse_tracks("1,8,100,200,40,90,1.2,pedestrian\n").unwrap_err();
        assert!(err.to_string().contains("confidence out of range"), "{err}");
        assert!(matches!(err, IngestError::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_pair_is_rejected_with_line() {
        let text = "1,8,0,0,5,5,0.5,pedestrian\n1,8,3,0,5,5,0.5,pedestrian\n";
        let err = parse_tracks(text).unwrap_err();
        assert!(matches!(
            err,
            IngestError::DuplicateDetection {
                line: 2,
                frame: 1,
                id: 8
            }
        ));
    }

    #[test]
    fn class_change_is_rejected() {
        let text = "1,8,0,0,5,5,0.5,pedestrian\n2,8,3,0,5,5,0.5,vehicle\n";
        let err = parse_tracks(text).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse_tracks("1,8,0,0,5,5,0.5,pedestrian\n1,9,zz,0,5,5,0.5,pedestrian\n")
            .unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }));
        let err = parse_tracks("1,8,0,0\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_empty_sequence() {
        assert!(parse_tracks("").unwrap().is_empty());
        assert!(parse_tracks("frame,id,x,y,w,h,confidence,class\n")
            .unwrap()
            .is_empty());
    }
}
