//! Display list: signs by id, then their arcs, then the basics bar.

use serde::{Deserialize, Serialize};

use super::{HudConfig, HudOverlayState, SignKind, SignState};
use crate::perception::{BoundingBox, EgoState};
use crate::scene::round1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    TriangleHollow,
    TriangleSolid,
    CornerRect,
    Arc,
    Basics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Yellow,
}

impl From<SignKind> for Color {
    fn from(kind: SignKind) -> Self {
        match kind {
            SignKind::OnRoad => Color::Red,
            SignKind::Roadside => Color::Yellow,
        }
    }
}

/// One drawing primitive. Boxed shapes carry `x, y, w, h` in frame
/// pixels; arcs carry `bearing` and `margin` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayItem {
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basics: Option<EgoState>,
}

impl DisplayItem {
    fn boxed(shape: Shape, color: Option<Color>, b: BoundingBox, scale: f64) -> Self {
        Self {
            shape,
            color,
            x: Some(round1(b.x)),
            y: Some(round1(b.y)),
            w: Some(round1(b.w)),
            h: Some(round1(b.h)),
            bearing: None,
            margin: None,
            scale,
            sign: None,
            basics: None,
        }
    }
}

/// Triangle of edge `size * scale` sitting on the geometry's top-center.
fn triangle_box(g: &BoundingBox, size: f64, scale: f64) -> BoundingBox {
    let s = size * scale;
    let (cx, _) = g.center();
    BoundingBox {
        x: cx - s / 2.0,
        y: g.y - s,
        w: s,
        h: s,
    }
}

pub fn render_model(state: &HudOverlayState, cfg: &HudConfig) -> Vec<DisplayItem> {
    let (w, h) = (f64::from(state.frame_width), f64::from(state.frame_height));
    let size = cfg.triangle_size * w;
    let mut items = Vec::new();
    for sign in &state.signs {
        let color = Some(Color::from(sign.kind));
        let g = &sign.geometry;
        let mut item = match (sign.kind, sign.state) {
            (SignKind::OnRoad, SignState::ActiveFull) => {
                DisplayItem::boxed(Shape::TriangleHollow, color, triangle_box(g, size, 1.0), 1.0)
            }
            (SignKind::OnRoad, SignState::Acknowledged) => {
                DisplayItem::boxed(Shape::TriangleHollow, color, triangle_box(g, size, 0.5), 0.5)
            }
            (SignKind::Roadside, SignState::ActiveFull) => DisplayItem::boxed(Shape::CornerRect, color, *g, 1.0),
            (SignKind::Roadside, SignState::Acknowledged) => {
                DisplayItem::boxed(Shape::TriangleSolid, color, triangle_box(g, size, 0.5), 0.5)
            }
        };
        item.sign = Some(sign.sign_id);
        items.push(item);
    }
    for arc in state.arcs.iter().filter(|a| a.visible) {
        items.push(DisplayItem {
            shape: Shape::Arc,
            color: Some(Color::from(arc.kind)),
            x: None,
            y: None,
            w: None,
            h: None,
            bearing: Some(arc.bearing),
            margin: Some(cfg.arc_margin),
            scale: 1.0,
            sign: Some(arc.target_sign),
            basics: None,
        });
    }
    let bar_h = cfg.basics_height * h;
    let mut bar = DisplayItem::boxed(
        Shape::Basics,
        None,
        BoundingBox {
            x: 0.0,
            y: h - bar_h,
            w,
            h: bar_h,
        },
        1.0,
    );
    bar.basics = Some(state.basics.clone());
    items.push(bar);
    items
}
