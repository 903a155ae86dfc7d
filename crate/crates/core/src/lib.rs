//! Last-few-meters guidance and spatial annotation engine.

pub mod annotations;
pub mod engine;
pub mod fixtures;
pub mod geometry;
pub mod guidance;
pub mod navgrid;
pub mod orchestrator;
pub mod prefs;
pub mod scene;
pub mod session;
pub mod sim;

pub use geometry::{DirectionFormat, DistanceUnit, GeoAnchor, OrientedBox, Point2, Pose};
pub use navgrid::{NavGrid, Route};
pub use scene::{SceneGraph, SceneObject};
pub use annotations::{Annotation, AnnotationStore, Category};
pub use engine::{Engine, EngineEvent};
pub use orchestrator::{SessionContext, World};
pub use prefs::UserPrefs;
pub use session::{ClientMessage, LiveSession, ServerMessage};
