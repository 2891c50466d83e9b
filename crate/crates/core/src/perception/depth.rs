//! Per-pixel metric depth.
//!
//! File format: an ASCII header line `width height\n` followed by
//! `width * height` little-endian `f32` values, row-major. NaN marks a pixel
//! whose depth is unknown.

use std::fs;
use std::path::Path;

use super::IngestError;

#[derive(Debug, Clone)]
pub struct DepthField {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthField {
    /// Builds a field; NaN entries are unknown, every other value must be a
    /// finite non-negative distance in meters.
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, IngestError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(IngestError::Dimensions(format!(
                "depth field of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_nan() && (!v.is_finite() || **v < 0.0))
        {
            return Err(IngestError::InvalidDepth(format!(
                "pixel ({}, {}) has depth {v}",
                i as u32 % width,
                i as u32 / width
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, depth_m: f32) -> Result<Self, IngestError> {
        Self::new(width, height, vec![depth_m; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Depth at a pixel, `None` when unknown.
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let v = self.values[y as usize * self.width as usize + x as usize];
        (!v.is_nan()).then_some(v)
    }

    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {}\n", self.width, self.height).into_bytes();
        out.reserve(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| IngestError::InvalidDepth("missing 'width height' header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| IngestError::InvalidDepth("header is not text".into()))?;
        let mut parts = header.split_whitespace();
        let mut dim = || -> Result<u32, IngestError> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| IngestError::InvalidDepth(format!("bad header '{header}'")))
        };
        let (w, h) = (dim()?, dim()?);
        let body = &bytes[nl + 1..];
        let expected = w as usize * h as usize * 4;
        if body.len() != expected {
            return Err(IngestError::InvalidDepth(format!(
                "{w}x{h} depth needs {expected} bytes, got {}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(w, h, values)
    }
}

impl PartialEq for DepthField {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

pub fn load_depth_field(
    path: &Path,
    expected: Option<(u32, u32)>,
) -> Result<DepthField, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let field = DepthField::from_bytes(&bytes).map_err(|e| match e {
        IngestError::InvalidDepth(m) => IngestError::InvalidDepth(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some((ew, eh)) = expected {
        if (field.width, field.height) != (ew, eh) {
            return Err(IngestError::Dimensions(format!(
                "{} is {}x{}, manifest says {ew}x{eh}",
                path.display(),
                field.width,
                field.height
            )));
        }
    }
    Ok(field)
}

pub fn save_depth_field(field: &DepthField, path: &Path) -> Result<(), IngestError> {
    fs::write(path, field.to_bytes()).map_err(|e| IngestError::io(path, e))
}
