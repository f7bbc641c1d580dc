//! Synthetic scenes of walking capsule bodies with exact labels.

mod body;
mod scene;

pub use body::{
    sample_bodies, sample_body, BodyModel, Capsule, Gait, LimbFractions, Proportions, MIN_HEIGHT_GAP,
    TWIN_HEIGHTS,
};
pub use scene::{
    generate_crossing_scenario, generate_dataset, generate_sequence, identity_label, read_truth, role_for,
    room_scene,
    CrossingScenario, CrossingSpec, ScenarioSpec, ROLES, ROOM_HALF_WIDTH, ROOM_OBJECTS,
};
