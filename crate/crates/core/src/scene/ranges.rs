//! Frame-range maps keyed `"<start>-<end>"` (inclusive).

use std::fmt;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: u32,
    pub end: u32,
}

impl FrameRange {
    pub fn new(start: u32, end: u32) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-padded `NNNN-NNNN` form used for report intervals.
    pub fn padded(&self) -> String {
        format!("{:04}-{:04}", self.start, self.end)
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("frame range '{s}' has no '-'"))?;
        let start: u32 = a.trim().parse().map_err(|_| format!("bad range start in '{s}'"))?;
        let end: u32 = b.trim().parse().map_err(|_| format!("bad range end in '{s}'"))?;
        if end < start {
            return Err(format!("range '{s}' ends before it starts"));
        }
        Ok(Self { start, end })
    }
}

/// Ordered, disjoint frame ranges, each carrying a value.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMap<T> {
    entries: Vec<(FrameRange, T)>,
}

impl<T> Default for RangeMap<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<T: Clone + PartialEq> RangeMap<T> {
    /// Run-length encodes `(frame, value)` samples given in increasing frame
    /// order: consecutive samples with equal values share one range that
    /// spans from the first to the last frame of the run.
    pub fn from_runs(samples: impl IntoIterator<Item = (u32, T)>) -> Self {
        let mut entries: Vec<(FrameRange, T)> = Vec::new();
        for (frame, value) in samples {
            match entries.last_mut() {
                Some((range, v)) if *v == value => range.end = frame,
                _ => entries.push((FrameRange::new(frame, frame), value)),
            }
        }
        Self { entries }
    }
}

impl<T> RangeMap<T> {
    pub fn from_entries(entries: Vec<(FrameRange, T)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(FrameRange, T)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame: u32) -> Option<&T> {
        self.entries
            .iter()
            .find(|(r, _)| r.contains(frame))
            .map(|(_, v)| v)
    }

    /// The value of the last range.
    pub fn last(&self) -> Option<&T> {
        self.entries.last().map(|(_, v)| v)
    }

    /// Looks up each frame; the inverse of [`RangeMap::from_runs`] on the
    /// frames that were encoded.
    pub fn expand(&self, frames: &[u32]) -> Vec<Option<&T>> {
        frames.iter().map(|f| self.get(*f)).collect()
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> RangeMap<U> {
        RangeMap {
            entries: self.entries.iter().map(|(r, v)| (*r, f(v))).collect(),
        }
    }
}

impl<T: Serialize> Serialize for RangeMap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.entries.len()))?;
        for (r, v) in &self.entries {
            m.serialize_entry(&r.to_string(), v)?;
        }
        m.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for RangeMap<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<T>(std::marker::PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = RangeMap<T>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of \"start-end\" frame ranges")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut a: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = a.next_entry::<String, T>()? {
                    let r: FrameRange = k.parse().map_err(serde::de::Error::custom)?;
                    entries.push((r, v));
                }
                Ok(RangeMap { entries })
            }
        }
        d.deserialize_map(V(std::marker::PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn runs_merge_and_serialize_in_order() {
        let m = RangeMap::from_runs([(0, "a"), (1, "a"), (2, "b"), (5, "b"), (6, "a")]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"0-1":"a","2-5":"b","6-6":"a"}"#);
        let back: RangeMap<String> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.entries().len(), 3);
        assert_eq!(back.get(4).map(String::as_str), Some("b"));
    }

    #[test]
    fn padded_interval() {
        assert_eq!(FrameRange::new(0, 14).padded(), "0000-0014");
        assert_eq!("0000-0014".parse::<FrameRange>().unwrap(), FrameRange::new(0, 14));
        assert!("9-3".parse::<FrameRange>().is_err());
    }

    proptest! {
        #[test]
        fn expand_inverts_runs(vals in proptest::collection::vec(0u8..3, 1..60), gaps in proptest::collection::vec(1u32..4, 60)) {
            let mut frame = 0;
            let mut frames = Vec::new();
            for (i, _) in vals.iter().enumerate() {
                frames.push(frame);
                frame += gaps[i];
            }
            let m = RangeMap::from_runs(frames.iter().copied().zip(vals.iter().copied()));
            let back: Vec<u8> = m.expand(&frames).into_iter().map(|v| *v.unwrap()).collect();
            prop_assert_eq!(back, vals);
            for w in m.entries().windows(2) {
                prop_assert!(w[0].0.end < w[1].0.start);
            }
        }
    }
}
