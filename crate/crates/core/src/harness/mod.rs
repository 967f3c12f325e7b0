//! Benchmark harness: annotation-budget and scene-subset splits, evaluation metrics,
//! synthetic scenes, the run-config file and the partitions × sampled-points sweep.

pub mod config;
pub mod metrics;
pub mod report;
pub mod splits;
pub mod sweep;
pub mod synthetic;

pub use config::RunConfig;
pub use metrics::{box_map, instance_map50, miou, ApResult, GtInstances, MiouResult, ScoredBox};
pub use report::{EvalReport, Replicates};
pub use splits::{subset_boxes, subset_scenes, BenchmarkConfig, BenchmarkMode, Box3};
pub use sweep::{dataset_margin, sweep_partitions, write_sweep_csv, SweepCell};
pub use synthetic::{
    generate_synthetic_scene, instance_features, synthetic_dataset, SceneSpec, SyntheticScene, TOY_DATASET_PAIRS,
};
