//! Offline slate recommendation: compressed user features, user clustering
//! and per-cluster tabular Q-learning trained from logged sessions, plus the
//! weighted revenue metric used to evaluate and tune the whole pipeline.

pub mod clustering;
pub mod features;
pub mod ingest;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod qlearning;
pub mod scalar;
pub mod slate;

pub use scalar::Scalar;

pub type Catalog = ingest::ItemCatalog<f64>;
pub type Session = ingest::SessionRecord<f64>;
pub type User = ingest::UserRecord<f64>;
pub type Transition = ingest::Transition<f64>;
pub type QBank = qlearning::QTableBank<f64>;
pub type Pipeline = pipeline::FittedPipeline<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type Catalog = crate::ingest::ItemCatalog<f32>;
    pub type Session = crate::ingest::SessionRecord<f32>;
    pub type User = crate::ingest::UserRecord<f32>;
    pub type Transition = crate::ingest::Transition<f32>;
    pub type QBank = crate::qlearning::QTableBank<f32>;
    pub type Pipeline = crate::pipeline::FittedPipeline<f32>;
}
