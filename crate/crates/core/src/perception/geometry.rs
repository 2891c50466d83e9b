use serde::{Deserialize, Serialize};

/// Axis-aligned box in frame pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Builds a box, returning `None` unless the extent is finite and positive.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Option<Self> {
        let finite = [x, y, w, h].iter().all(|v| v.is_finite());
        (finite && w > 0.0 && h > 0.0).then_some(Self { x, y, w, h })
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Clamps the box into a `frame_w` × `frame_h` frame.
    ///
    /// Returns the clamped box and whether anything changed. A box lying
    /// entirely outside the frame collapses to a 1 px box on the nearest
    /// edge so the detection (and its id) survives.
    pub fn clamp_to(&self, frame_w: f64, frame_h: f64) -> (Self, bool) {
        let x0 = self.x.clamp(0.0, frame_w);
        let y0 = self.y.clamp(0.0, frame_h);
        let x1 = self.right().clamp(0.0, frame_w);
        let y1 = self.bottom().clamp(0.0, frame_h);
        let (x0, x1) = if x1 - x0 > 0.0 {
            (x0, x1)
        } else {
            let x0 = x0.min(frame_w - 1.0);
            (x0, x0 + 1.0)
        };
        let (y0, y1) = if y1 - y0 > 0.0 {
            (y0, y1)
        } else {
            let y0 = y0.min(frame_h - 1.0);
            (y0, y0 + 1.0)
        };
        let clamped = Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        };
        (clamped, clamped != *self)
    }

    pub fn union(&self, other: &Self) -> Self {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn contains(&self, other: &Self) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Grows the box by `pad` pixels on every side.
    pub fn padded(&self, pad: f64) -> Self {
        Self {
            x: self.x - pad,
            y: self.y - pad,
            w: self.w + 2.0 * pad,
            h: self.h + 2.0 * pad,
        }
    }

    /// Chebyshev gap between two boxes: the larger of the horizontal and
    /// vertical separations, zero when they touch or overlap.
    pub fn gap_to(&self, other: &Self) -> f64 {
        let dx = (other.x - self.right()).max(self.x - other.right()).max(0.0);
        let dy = (other.y - self.bottom()).max(self.y - other.bottom()).max(0.0);
        dx.max(dy)
    }
}
