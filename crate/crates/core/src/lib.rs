//! Downstream half of a dash-cam co-driver pipeline.
//!
//! Precomputed perception outputs (tracks, surface masks, depth) are loaded
//! and time-aligned by [`perception`], compiled into a compact scene
//! description by [`scene`], judged by a text-completion service in
//! [`risk`], and turned into a gaze-adaptive overlay by [`hud`].
//! [`replay`] drives the whole chain over causal windows and models the
//! per-stage latency budget; [`eval`] holds the measurement arithmetic.

pub mod eval;
pub mod fixtures;
pub mod hud;
pub mod perception;
pub mod replay;
pub mod risk;
pub mod scene;

pub use perception::{
    BoundingBox, DepthField, EgoState, EntityClass, FrameObservation, IngestError, NavDirection,
    SurfaceLabel, SurfaceMap, TrackedEntity, VideoManifest,
};
pub use scene::{DistanceClass, PositionClass, SceneDescription, SpeedClass};
