//! Design-space exploration: partitioning, placement, link selection and search.

pub mod comm;
pub mod design;
pub mod place;
pub mod search;

pub use comm::{build_comm_plan, cascade_eligible, classify_traffic};
pub use design::{
    Boundary, Channel, CommPlan, Design, DesignFile, DesignOptions, DesignPoint, Edge, LinkKind, Payload,
    Placement, Rect, Region, Tile, Traffic, WeightSource,
};
pub use place::place_layers;
pub use search::{
    compare_points, design_for_mapping, enumerate_mappings, evaluate_design, evaluate_mapping, search,
    SearchOptions, SearchResult,
};
