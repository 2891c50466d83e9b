//! Single-frame classifiers: distance band, grid position, speed, surface
//! support, surface side and bearing angle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SceneError;
use crate::perception::{BoundingBox, SurfaceLabel, SurfaceMap};

macro_rules! string_enum {
    ($ty:ident { $($var:ident => $canon:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($ty::$var => $canon),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($canon $(| $alias)* => Ok($ty::$var),)+
                    other => Err(format!(concat!("unknown ", stringify!($ty), " '{}'"), other)),
                }
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// Distance band, ordered from nearest to farthest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistanceClass {
    VeryNear,
    Near,
    Medium,
    Far,
    VeryFar,
}

string_enum!(DistanceClass {
    VeryNear => "very_near" | "very near" | "very close" | "very_close",
    Near => "near",
    Medium => "medium",
    Far => "far",
    VeryFar => "very_far" | "very far",
});

/// One of six frame sections: three columns split at thirds of the width,
/// two rows split at half the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PositionClass {
    LowerLeft,
    CloseFront,
    LowerRight,
    UpperLeft,
    FarFront,
    UpperRight,
}

string_enum!(PositionClass {
    LowerLeft => "lower-left" | "lower left" | "lower_left",
    CloseFront => "close-front" | "front center" | "front-center" | "close front" | "close_front",
    LowerRight => "lower-right" | "lower right" | "lower_right",
    UpperLeft => "upper-left" | "upper left" | "upper_left",
    FarFront => "far-front" | "far front" | "far_front",
    UpperRight => "upper-right" | "upper right" | "upper_right",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeedClass {
    Slow,
    Fast,
}

string_enum!(SpeedClass {
    Slow => "slow" | "low",
    Fast => "fast" | "high",
});

/// Which side of the view a surface region lies on. Sidewalks are only
/// ever `left` or `right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceSide {
    Left,
    Center,
    Right,
}

string_enum!(SurfaceSide {
    Left => "left",
    Center => "center",
    Right => "right",
});

/// Half-open distance bands. Only the far/very-far boundary is tunable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBands {
    pub very_far_from_m: f64,
}

impl Default for DistanceBands {
    fn default() -> Self {
        Self {
            very_far_from_m: 30.0,
        }
    }
}

impl DistanceBands {
    pub fn classify(&self, depth_m: f64) -> Result<DistanceClass, SceneError> {
        if !depth_m.is_finite() || depth_m < 0.0 {
            return Err(SceneError::InvalidDepth(depth_m));
        }
        Ok(match depth_m {
            d if d < 5.0 => DistanceClass::VeryNear,
            d if d < 10.0 => DistanceClass::Near,
            d if d < 15.0 => DistanceClass::Medium,
            d if d < self.very_far_from_m => DistanceClass::Far,
            _ => DistanceClass::VeryFar,
        })
    }
}

/// `[0,5) very_near, [5,10) near, [10,15) medium, [15,30) far, [30,∞) very_far`.
pub fn classify_distance(depth_m: f64) -> Result<DistanceClass, SceneError> {
    DistanceBands::default().classify(depth_m)
}

/// Grid cell of a point. Points on a boundary belong to the right/lower cell.
pub fn position_of_point(
    px: f64,
    py: f64,
    frame_w: f64,
    frame_h: f64,
) -> Result<PositionClass, SceneError> {
    if !(frame_w > 0.0 && frame_h > 0.0) {
        return Err(SceneError::EmptyFrame);
    }
    let col = if px < frame_w / 3.0 {
        0
    } else if px < 2.0 * frame_w / 3.0 {
        1
    } else {
        2
    };
    let upper = py < frame_h / 2.0;
    Ok(match (upper, col) {
        (true, 0) => PositionClass::UpperLeft,
        (true, 1) => PositionClass::FarFront,
        (true, _) => PositionClass::UpperRight,
        (false, 0) => PositionClass::LowerLeft,
        (false, 1) => PositionClass::CloseFront,
        (false, _) => PositionClass::LowerRight,
    })
}

/// Position class of a (clamped) bbox, by its center.
pub fn classify_position(
    bbox: &BoundingBox,
    frame_w: f64,
    frame_h: f64,
) -> Result<PositionClass, SceneError> {
    let (cx, cy) = bbox.center();
    position_of_point(cx, cy, frame_w, frame_h)
}

/// Per-frame speed classes for one track.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    /// `(frame, center speed in frame-widths per second, class)`.
    pub per_frame: Vec<(u32, f64, SpeedClass)>,
    /// Set when the track has a single frame and the class is a default.
    pub low_evidence: bool,
}

impl SpeedProfile {
    pub fn ranges(&self) -> super::RangeMap<SpeedClass> {
        super::RangeMap::from_runs(self.per_frame.iter().map(|(f, _, c)| (*f, *c)))
    }
}

/// Classifies each frame of a track as slow or fast.
///
/// The speed at a frame is the displacement of the bbox center from the
/// previous sample, per second, divided by the frame width; the first frame
/// takes the speed of the step that follows it. Speeds strictly above
/// `threshold` are fast.
pub fn classify_speed(
    track: &[(u32, BoundingBox)],
    fps: f64,
    frame_w: f64,
    threshold: f64,
) -> Result<SpeedProfile, SceneError> {
    if !(fps > 0.0 && frame_w > 0.0) {
        return Err(SceneError::InvalidRate(fps));
    }
    if track.is_empty() {
        return Err(SceneError::EmptyTrack);
    }
    if track.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(SceneError::UnsortedTrack);
    }
    if track.len() == 1 {
        return Ok(SpeedProfile {
            per_frame: vec![(track[0].0, 0.0, SpeedClass::Slow)],
            low_evidence: true,
        });
    }
    let step = |a: &(u32, BoundingBox), b: &(u32, BoundingBox)| {
        let (ax, ay) = a.1.center();
        let (bx, by) = b.1.center();
        let dt = f64::from(b.0 - a.0) / fps;
        (bx - ax).hypot(by - ay) / dt / frame_w
    };
    let per_frame = (0..track.len())
        .map(|i| {
            let v = if i == 0 {
                step(&track[0], &track[1])
            } else {
                step(&track[i - 1], &track[i])
            };
            let class = if v > threshold {
                SpeedClass::Fast
            } else {
                SpeedClass::Slow
            };
            (track[i].0, v, class)
        })
        .collect();
    Ok(SpeedProfile {
        per_frame,
        low_evidence: false,
    })
}

/// Surface under a pedestrian's feet.
///
/// Samples the bottom `strip_fraction` of the bbox (at least one row, full
/// width). The most frequent labelled region wins; ties go to the region
/// with the larger total area. `None` only when every sampled pixel is
/// unlabelled.
pub fn assign_surface_with(
    bbox: &BoundingBox,
    surfaces: &SurfaceMap,
    strip_fraction: f64,
) -> Option<SurfaceLabel> {
    let w = surfaces.width() as i64;
    let h = surfaces.height() as i64;
    let strip = (bbox.h * strip_fraction).ceil().max(1.0);
    let x0 = (bbox.x.floor() as i64).clamp(0, w);
    let x1 = (bbox.right().ceil() as i64).clamp(0, w);
    let y1 = (bbox.bottom().ceil() as i64).clamp(0, h);
    let y0 = ((bbox.bottom() - strip).floor() as i64).clamp(0, h);

    let mut counts: std::collections::BTreeMap<SurfaceLabel, u64> = Default::default();
    for y in y0..y1 {
        for x in x0..x1 {
            let label = surfaces.label_at(x as u32, y as u32);
            if label != SurfaceLabel::None {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
    }
    let area = |l: &SurfaceLabel| surfaces.region_areas().get(l).copied().unwrap_or(0);
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| {
            ca.cmp(cb)
                .then_with(|| area(la).cmp(&area(lb)))
                .then_with(|| lb.cmp(la))
        })
        .map(|(l, _)| l)
}

/// [`assign_surface_with`] using the bottom 10 % of the box.
pub fn assign_surface(bbox: &BoundingBox, surfaces: &SurfaceMap) -> Option<SurfaceLabel> {
    assign_surface_with(bbox, surfaces, 0.1)
}

/// Mean pixel-center x of a region, or `None` if the region is absent.
pub fn region_centroid_x(label: SurfaceLabel, surfaces: &SurfaceMap) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0u64);
    for (x, _, l) in surfaces.pixels() {
        if l == label {
            sum += f64::from(x) + 0.5;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Left/right for sidewalks (split at half width), left/center/right for
/// roads (split at thirds), by the region's centroid.
pub fn classify_surface_side(
    label: SurfaceLabel,
    surfaces: &SurfaceMap,
    frame_w: f64,
) -> Result<SurfaceSide, SceneError> {
    let cx = match label {
        SurfaceLabel::None => None,
        _ => region_centroid_x(label, surfaces),
    }
    .ok_or(SceneError::UnknownRegion(label))?;
    Ok(side_of(label, cx, frame_w))
}

pub(crate) fn side_of(label: SurfaceLabel, cx: f64, frame_w: f64) -> SurfaceSide {
    if label.is_sidewalk() {
        if cx < frame_w / 2.0 {
            SurfaceSide::Left
        } else {
            SurfaceSide::Right
        }
    } else if cx < frame_w / 3.0 {
        SurfaceSide::Left
    } else if cx < 2.0 * frame_w / 3.0 {
        SurfaceSide::Center
    } else {
        SurfaceSide::Right
    }
}

/// Horizontal bearing of the bbox center relative to the camera axis under
/// a linear pixel-to-angle model. Negative is left of the axis.
pub fn compute_bbox_angle(bbox: &BoundingBox, frame_w: f64, hfov_deg: f64) -> f64 {
    let (cx, _) = bbox.center();
    (cx / frame_w - 0.5) * hfov_deg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn centered(cx: f64, cy: f64) -> BoundingBox {
        bb(cx - 1.0, cy - 1.0, 2.0, 2.0)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(classify_distance(3.2).unwrap(), DistanceClass::VeryNear);
        assert_eq!(classify_distance(8.7).unwrap(), DistanceClass::Near);
        assert_eq!(classify_distance(5.0).unwrap(), DistanceClass::Near);
        assert_eq!(classify_distance(0.0).unwrap(), DistanceClass::VeryNear);
        assert_eq!(classify_distance(14.999).unwrap(), DistanceClass::Medium);
        assert_eq!(classify_distance(15.0).unwrap(), DistanceClass::Far);
        assert_eq!(classify_distance(30.0).unwrap(), DistanceClass::VeryFar);
        assert!(classify_distance(-0.1).is_err());
        assert!(classify_distance(f64::NAN).is_err());
        assert!(classify_distance(f64::INFINITY).is_err());
    }

    #[test]
    fn position_examples() {
        let (w, h) = (1920.0, 1080.0);
        assert_eq!(
            classify_position(&centered(0.1 * w, 0.8 * h), w, h).unwrap(),
            PositionClass::LowerLeft
        );
        assert_eq!(
            classify_position(&centered(0.5 * w, 0.25 * h), w, h).unwrap(),
            PositionClass::FarFront
        );
        assert_eq!(
            position_of_point(w / 3.0, h / 2.0, w, h).unwrap(),
            PositionClass::CloseFront
        );
        assert!(position_of_point(1.0, 1.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn aliases_parse_to_canonical() {
        assert_eq!("front center".parse::<PositionClass>().unwrap(), PositionClass::CloseFront);
        assert_eq!("low".parse::<SpeedClass>().unwrap(), SpeedClass::Slow);
        assert_eq!("high".parse::<SpeedClass>().unwrap(), SpeedClass::Fast);
        assert_eq!("very close".parse::<DistanceClass>().unwrap(), DistanceClass::VeryNear);
        assert_eq!(SpeedClass::Fast.to_string(), "fast");
        assert_eq!(PositionClass::CloseFront.to_string(), "close-front");
    }

    #[test]
    fn stationary_track_is_slow() {
        let t: Vec<_> = (0..4).map(|f| (f, bb(100.0, 100.0, 20.0, 40.0))).collect();
        let p = classify_speed(&t, 30.0, 1920.0, 0.05).unwrap();
        assert!(p.per_frame.iter().all(|(_, v, c)| *v == 0.0 && *c == SpeedClass::Slow));
        assert_eq!(p.ranges().entries().len(), 1);
    }

    #[test]
    fn fast_track() {
        // 0.3 W per second at 30 fps.
        let w = 1920.0;
        let t: Vec<_> = (0..4)
            .map(|f| (f, bb(100.0 + 0.3 * w * f64::from(f) / 30.0, 100.0, 20.0, 40.0)))
            .collect();
        let p = classify_speed(&t, 30.0, w, 0.05).unwrap();
        assert!(p.per_frame.iter().all(|(_, _, c)| *c == SpeedClass::Fast));
        assert!((p.per_frame[2].1 - 0.3).abs() < 1e-9);
    }

    #[test]
    fn single_frame_is_low_evidence_slow() {
        let p = classify_speed(&[(5, bb(0.0, 0.0, 2.0, 2.0))], 30.0, 100.0, 0.05).unwrap();
        assert!(p.low_evidence);
        assert_eq!(p.per_frame[0].2, SpeedClass::Slow);
        assert!(classify_speed(&[], 30.0, 100.0, 0.05).is_err());
        assert!(classify_speed(&[(0, bb(0.0, 0.0, 2.0, 2.0))], 0.0, 100.0, 0.05).is_err());
    }

    fn strip_map() -> SurfaceMap {
        // 10 wide, 10 tall: columns 0..6 road_0, 6..10 sidewalk_0.
        let labels: Vec<SurfaceLabel> = (0..100)
            .map(|i| {
                if i % 10 < 6 {
                    SurfaceLabel::Road(0)
                } else {
                    SurfaceLabel::Sidewalk(0)
                }
            })
            .collect();
        SurfaceMap::from_labels(10, 10, &labels).unwrap()
    }

    #[test]
    fn surface_foot_strip() {
        let map = strip_map();
        assert_eq!(assign_surface(&bb(6.0, 0.0, 4.0, 10.0), &map), Some(SurfaceLabel::Sidewalk(0)));
        // 3 road columns vs 2 sidewalk columns under the feet.
        assert_eq!(assign_surface(&bb(3.0, 0.0, 5.0, 10.0), &map), Some(SurfaceLabel::Road(0)));
        let none = SurfaceMap::from_labels(4, 4, &[SurfaceLabel::None; 16]).unwrap();
        assert_eq!(assign_surface(&bb(0.0, 0.0, 4.0, 4.0), &none), None);
    }

    #[test]
    fn surface_tie_goes_to_larger_region() {
        // road_0 has 60 px overall, sidewalk_0 40 px; strip sees 2 of each.
        let map = strip_map();
        assert_eq!(assign_surface(&bb(4.0, 0.0, 4.0, 10.0), &map), Some(SurfaceLabel::Road(0)));
    }

    #[test]
    fn surface_sides() {
        let w = 100u32;
        let mut labels = vec![SurfaceLabel::None; 100];
        labels[80] = SurfaceLabel::Sidewalk(0);
        labels[50] = SurfaceLabel::Road(0);
        labels[10] = SurfaceLabel::Road(1);
        let map = SurfaceMap::from_labels(w, 1, &labels).unwrap();
        let fw = f64::from(w);
        assert_eq!(classify_surface_side(SurfaceLabel::Sidewalk(0), &map, fw).unwrap(), SurfaceSide::Right);
        assert_eq!(classify_surface_side(SurfaceLabel::Road(0), &map, fw).unwrap(), SurfaceSide::Center);
        assert_eq!(classify_surface_side(SurfaceLabel::Road(1), &map, fw).unwrap(), SurfaceSide::Left);
        assert!(classify_surface_side(SurfaceLabel::Road(7), &map, fw).is_err());
    }

    #[test]
    fn angles() {
        let w = 1920.0;
        assert_eq!(compute_bbox_angle(&centered(0.5 * w, 10.0), w, 90.0), 0.0);
        assert_eq!(compute_bbox_angle(&centered(w, 10.0), w, 90.0), 45.0);
        assert_eq!(compute_bbox_angle(&centered(0.25 * w, 10.0), w, 90.0), -22.5);
    }

    proptest! {
        #[test]
        fn distance_is_monotone(a in 0.0f64..200.0, b in 0.0f64..200.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify_distance(lo).unwrap() <= classify_distance(hi).unwrap());
        }
    }
}
