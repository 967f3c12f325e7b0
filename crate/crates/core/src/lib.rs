//! Data-efficient 3D scene understanding toolkit.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`cloud`] and [`index`]: point clouds, rigid poses, voxel downsampling and a kd-tree.
//! * [`io`]: PLY and the small binary/text formats used between pipeline stages.
//! * [`mining`]: frame subsampling, overlap computation and correspondence mining.
//! * [`context`]: anchor-relative angle/distance partitions of space.
//! * [`contrastive`]: the partitioned PointInfoNCE objective, its gradient and a toy
//!   embedding trainer.
//! * [`labeling`]: k-means based active point selection and object coverage.
//! * [`instance`]: offset shifting and label-gated BFS instance clustering.
//! * [`harness`]: benchmark splits, evaluation metrics, synthetic scenes and sweeps.

pub mod cloud;
pub mod context;
pub mod contrastive;
pub mod error;
pub mod features;
pub mod harness;
pub mod index;
pub mod instance;
pub mod io;
pub mod labeling;
pub mod mining;
pub mod parallel;

pub use cloud::{Point3, PointCloud, Pose};
pub use context::{PartitionAssignment, PartitionConfig};
pub use contrastive::{LossConfig, LossReport, OptimizerConfig};
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use index::SpatialIndex;
pub use instance::{InstancePrediction, OffsetField};
pub use labeling::{LabelBudget, SelectionResult, Strategy};
pub use mining::{CorrespondenceSet, FramePair};

/// Label value marking a point without annotation.
pub const IGNORE_LABEL: u32 = 255;
