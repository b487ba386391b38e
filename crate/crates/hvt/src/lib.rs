//! Vote-based object detection primitives: log-polar vote fields,
//! evidence aggregation in scatter, gather, and adjoint forms, training
//! objectives with analytic gradients, a peak-plus-Soft-NMS decoder,
//! dataset curation, small-scale detection evaluation, and figure-style
//! rendering.
//!
//! Everything computes in plain `f64` over flat buffers; nothing here
//! depends on a learning framework. The aggregation operator is linear,
//! so its gather and scatter forms must agree exactly and the adjoint
//! must satisfy the inner-product identity; the test suite enforces
//! both, with the brute-force scatter form serving as the oracle.

pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod field;
pub mod losses;
pub mod render;
pub mod tensor;
pub mod voting;

pub use dataset::CocoDataset;
pub use decoder::{BBox, Detection, DetectionRecord};
pub use error::{Error, Result};
pub use eval::EvalSummary;
pub use field::{MaskMode, VoteField, VoteFieldConfig};
pub use losses::{LabeledBox, LossReport};
pub use tensor::Tensor;
pub use voting::{EvidenceTensor, ObjectPresenceMap, PairMap};

/// Input-image pixels per output-map cell; 4 throughout the pipeline.
pub const DEFAULT_STRIDE: u32 = 4;
