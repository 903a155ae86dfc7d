//! Bundled golden_square fixture data.

use std::sync::{Arc, RwLock};

use crate::annotations::AnnotationStore;
use crate::geometry::{Point2, Pose};
use crate::orchestrator::{Ports, World};
use crate::navgrid::{NavGrid, DEFAULT_CLEARANCE_M, DEFAULT_RESOLUTION_M};
use crate::scene::{SceneGraph, Strictness};

pub const GOLDEN_SQUARE_JSON: &str = include_str!("../../../data/golden_square.json");
pub const GOLDEN_SQUARE_ANNOTATIONS: &str =
    include_str!("../../../data/golden_square_annotations.jsonl");

/// Meeting point annotations for the two fixture routes.
pub const EMMA_ANNOTATION: &str = "ann_21";
pub const BEN_ANNOTATION: &str = "ann_20";

pub fn golden_square() -> SceneGraph {
    SceneGraph::load(GOLDEN_SQUARE_JSON, Strictness::Strict).expect("bundled fixture is valid")
}

pub fn golden_grid() -> NavGrid {
    NavGrid::build(&golden_square(), DEFAULT_RESOLUTION_M, DEFAULT_CLEARANCE_M)
        .expect("bundled fixture grid builds")
}

/// Top of the ramp, facing into the square.
pub fn ramp_start() -> Pose {
    golden_square().spawn_pose()
}

pub fn emma_goal() -> Point2 {
    Point2::new(-2.5, 11.5)
}

pub fn ben_goal() -> Point2 {
    Point2::new(3.5, 11.5)
}

pub fn emma_goal_pose() -> Pose {
    Pose::new(emma_goal(), 0.0)
}

/// Scene, grid and annotation store for golden_square with stub ports.
pub fn golden_world() -> World {
    let scene = Arc::new(golden_square());
    let store = AnnotationStore::load_jsonl(GOLDEN_SQUARE_ANNOTATIONS, scene.clone()).expect("bundled annotations load");
    World {
        grid: Arc::new(golden_grid()),
        scene,
        store: Arc::new(RwLock::new(store)),
        ports: Ports::default(),
    }
}
