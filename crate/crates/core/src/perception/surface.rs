//! Road/sidewalk label fields.
//!
//! On disk a surface map is an 8-bit grayscale PNG whose pixel values are
//! looked up in a JSON legend such as
//! `{ "1": "road_0", "2": "sidewalk_0", "0": "none" }`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{read_text, IngestError};

/// Segmentation label for one pixel. Ordering puts roads first, then
/// sidewalks, then `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceLabel {
    Road(u16),
    Sidewalk(u16),
    None,
}

impl SurfaceLabel {
    pub fn is_road(self) -> bool {
        matches!(self, SurfaceLabel::Road(_))
    }

    pub fn is_sidewalk(self) -> bool {
        matches!(self, SurfaceLabel::Sidewalk(_))
    }

    /// Spaced form used as a key in the roadside document (`road 0`).
    pub fn spaced(self) -> String {
        match self {
            SurfaceLabel::Road(k) => format!("road {k}"),
            SurfaceLabel::Sidewalk(k) => format!("sidewalk {k}"),
            SurfaceLabel::None => "none".to_string(),
        }
    }
}

impl fmt::Display for SurfaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceLabel::Road(k) => write!(f, "road_{k}"),
            SurfaceLabel::Sidewalk(k) => write!(f, "sidewalk_{k}"),
            SurfaceLabel::None => f.write_str("none"),
        }
    }
}

impl FromStr for SurfaceLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "none" {
            return Ok(SurfaceLabel::None);
        }
        let (kind, idx) = s
            .rsplit_once(['_', ' '])
            .ok_or_else(|| format!("unknown surface label '{s}'"))?;
        let k: u16 = idx
            .parse()
            .map_err(|_| format!("bad region index in '{s}'"))?;
        match kind {
            "road" => Ok(SurfaceLabel::Road(k)),
            "sidewalk" => Ok(SurfaceLabel::Sidewalk(k)),
            _ => Err(format!("unknown surface label '{s}'")),
        }
    }
}

impl Serialize for SurfaceLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SurfaceLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pixel value → label.
pub type Legend = BTreeMap<u8, SurfaceLabel>;

pub fn parse_legend(text: &str) -> Result<Legend, IngestError> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(text).map_err(|e| IngestError::Legend(e.to_string()))?;
    let mut legend = Legend::new();
    for (k, v) in raw {
        let value: u8 = k
            .trim()
            .parse()
            .map_err(|_| IngestError::Legend(format!("legend key '{k}' is not a pixel value")))?;
        let label: SurfaceLabel = v.parse().map_err(IngestError::Legend)?;
        legend.insert(value, label);
    }
    check_dense(&legend)?;
    Ok(legend)
}

pub fn load_legend(path: &Path) -> Result<Legend, IngestError> {
    parse_legend(&read_text(path)?)
}

pub fn format_legend(legend: &Legend) -> String {
    let map: BTreeMap<String, String> = legend
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    serde_json::to_string_pretty(&map).expect("string map serializes")
}

fn check_dense(legend: &Legend) -> Result<(), IngestError> {
    let mut roads: Vec<u16> = Vec::new();
    let mut walks: Vec<u16> = Vec::new();
    for label in legend.values() {
        match label {
            SurfaceLabel::Road(k) => roads.push(*k),
            SurfaceLabel::Sidewalk(k) => walks.push(*k),
            SurfaceLabel::None => {}
        }
    }
    for (kind, mut idx) in [("road", roads), ("sidewalk", walks)] {
        idx.sort_unstable();
        idx.dedup();
        if idx.iter().enumerate().any(|(i, k)| *k as usize != i) {
            return Err(IngestError::Legend(format!(
                "{kind} indices must be dense from 0, got {idx:?}"
            )));
        }
    }
    Ok(())
}

/// Per-pixel surface labels for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMap {
    width: u32,
    height: u32,
    codes: Vec<u8>,
    legend: Legend,
    region_areas: BTreeMap<SurfaceLabel, u64>,
}

impl SurfaceMap {
    /// Builds a map from raw pixel codes, row-major.
    pub fn from_codes(
        width: u32,
        height: u32,
        codes: Vec<u8>,
        legend: Legend,
    ) -> Result<Self, IngestError> {
        if width == 0 || height == 0 || codes.len() != width as usize * height as usize {
            return Err(IngestError::Dimensions(format!(
                "surface map of {width}x{height} needs {} codes, got {}",
                width as usize * height as usize,
                codes.len()
            )));
        }
        check_dense(&legend)?;
        let mut counts = [0u64; 256];
        for &c in &codes {
            counts[c as usize] += 1;
        }
        let mut region_areas = BTreeMap::new();
        for (value, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let label = legend
                .get(&(value as u8))
                .ok_or(IngestError::LegendMissingValue(value as u8))?;
            *region_areas.entry(*label).or_insert(0) += n;
        }
        Ok(Self {
            width,
            height,
            codes,
            legend,
            region_areas,
        })
    }

    /// Builds a map from labels directly, deriving a compact legend.
    pub fn from_labels(width: u32, height: u32, labels: &[SurfaceLabel]) -> Result<Self, IngestError> {
        let mut legend = Legend::new();
        let mut lookup: BTreeMap<SurfaceLabel, u8> = BTreeMap::new();
        lookup.insert(SurfaceLabel::None, 0);
        legend.insert(0, SurfaceLabel::None);
        let mut distinct: Vec<SurfaceLabel> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        for label in distinct {
            if lookup.contains_key(&label) {
                continue;
            }
            let code = u8::try_from(lookup.len())
                .map_err(|_| IngestError::Legend("more than 256 labels".into()))?;
            lookup.insert(label, code);
            legend.insert(code, label);
        }
        let codes = labels.iter().map(|l| lookup[l]).collect();
        Self::from_codes(width, height, codes, legend)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn legend(&self) -> &Legend {
        &self.legend
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Exact pixel count per label present in the map.
    pub fn region_areas(&self) -> &BTreeMap<SurfaceLabel, u64> {
        &self.region_areas
    }

    /// Labelled regions (everything but `none`) present in the map.
    pub fn regions(&self) -> impl Iterator<Item = (SurfaceLabel, u64)> + '_ {
        self.region_areas
            .iter()
            .filter(|(l, _)| **l != SurfaceLabel::None)
            .map(|(l, n)| (*l, *n))
    }

    pub fn label_at(&self, x: u32, y: u32) -> SurfaceLabel {
        let code = self.codes[y as usize * self.width as usize + x as usize];
        self.legend[&code]
    }

    /// Iterates `(x, y, label)` over all pixels, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32, SurfaceLabel)> + '_ {
        let w = self.width;
        self.codes.iter().enumerate().map(move |(i, c)| {
            let i = i as u32;
            (i % w, i / w, self.legend[c])
        })
    }
}

/// Loads an 8-bit grayscale PNG and resolves it through `legend`.
///
/// `expected` (width, height) comes from the video manifest.
pub fn load_surface_map(
    path: &Path,
    legend: &Legend,
    expected: Option<(u32, u32)>,
) -> Result<SurfaceMap, IngestError> {
    let img = image::open(path).map_err(|e| IngestError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(IngestError::Image {
                path: path.to_path_buf(),
                message: format!("expected 8-bit single-channel image, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    if let Some((ew, eh)) = expected {
        if (w, h) != (ew, eh) {
            return Err(IngestError::Dimensions(format!(
                "{} is {w}x{h}, manifest says {ew}x{eh}",
                path.display()
            )));
        }
    }
    SurfaceMap::from_codes(w, h, gray.into_raw(), legend.clone())
}

/// Writes the pixel codes as an 8-bit grayscale PNG.
pub fn save_surface_map(map: &SurfaceMap, path: &Path) -> Result<(), IngestError> {
    let img = GrayImage::from_raw(map.width, map.height, map.codes.clone())
        .expect("code buffer matches dimensions");
    img.save(path).map_err(|e| IngestError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
