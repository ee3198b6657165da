//! Interactive segmentation driven by better/worse feedback.
//!
//! A clicking agent proposes labelled clicks, clicks are densified into masks
//! by patch-feature similarity, an oracle (ground truth or a person) judges
//! each proposal, and the accepted masks train a lightweight segmentation
//! learner round after round.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f32` for running and `f64` for gradient checks.

pub mod checkpoint;
pub mod clicking_agent;
pub mod error;
pub mod feature_provider;
pub mod metrics;
pub mod oracle;
pub mod orchestrator;
pub mod propagation;
pub mod scalar;
pub mod seg_model;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{DatasetManifest, ImageRecord, Mask};

pub type Tensor32 = types::Tensor<f32>;
pub type Tensor64 = types::Tensor<f64>;
pub type FeatureMap32 = types::FeatureMap<f32>;
pub type FeatureMap64 = types::FeatureMap<f64>;
pub type PolicyParams32 = clicking_agent::PolicyParams<f32>;
pub type PolicyParams64 = clicking_agent::PolicyParams<f64>;
pub type SegModelParams32 = seg_model::SegModelParams<f32>;
pub type SegModelParams64 = seg_model::SegModelParams<f64>;
pub type AdapterParams32 = feature_provider::AdapterParams<f32>;
pub type AdapterParams64 = feature_provider::AdapterParams<f64>;
