//! Unsupervised re-identification on precomputed embeddings: offline and
//! online camera-aware proxy association with proxy-level contrastive
//! training.

pub mod association;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod memory;
pub mod metricspace;
pub mod trainer;
pub mod vecmath;

pub use association::{AssociationMode, AssociationParams, AssociationResult};
pub use clustering::{
    ClusterAssignment, DbscanParams, LabeledInstance, Proxy, ProxyTable, RetainedAssignment,
};
pub use dataset::{Instance, SynthesisConfig};
pub use error::{O2capError, Result};
pub use eval::{AssociationStats, ClusteringQuality, CmcCurve, RetrievalMetrics};
pub use losses::{LossOutput, LossParams};
pub use memory::{MemoryBank, MemoryLevel};
pub use metricspace::{JaccardParams, Matrix};
pub use trainer::{BatchShape, EmbeddingModel, EpochReport, LossMode, TrainConfig};
