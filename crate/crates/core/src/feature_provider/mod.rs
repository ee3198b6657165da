//! Patch features: loading, linear adaptation, and synthetic worlds.
//!
//! The backbone is never run here. Features arrive pre-extracted (or are
//! synthesized) and a `dim × dim` linear adapter sharpens them with a triplet
//! objective on each round's pseudo-labels.

mod adapter;
mod world;

pub use adapter::{
    adapt_features, adapt_map, get_features, triplet_loss_and_grad, AdaptStats, AdapterParams,
    Triplet, DEFAULT_ADAPTER_LR, DEFAULT_MARGIN, TRIPLETS_PER_STEP,
};
pub use world::{
    class_centers, generate_sample, generate_world, record_id, SyntheticWorldConfig, WorldSample,
};
pub(crate) use world::write_json;
