//! File formats shared by the pipeline stages.

pub mod binary;
pub mod ply;
pub mod text;

pub use binary::{
    read_features, read_mask, read_offsets, read_pairs, write_features, write_mask, write_offsets, write_pairs,
};
pub use ply::{read_ply, write_ply, PlyEncoding};
pub use text::{
    read_correspondences, read_pose, read_prediction, read_selection, write_correspondences, write_pose,
    write_prediction, write_selection,
};
