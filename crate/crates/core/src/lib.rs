//! Region-based node preselection for place recognition in topological SLAM.
//!
//! Map nodes are clustered into connected regions while the robot explores
//! ([`clustering`]); a small sigmoid-output network learns to predict the
//! current region from a node signature ([`predictor`]); and the working
//! memory used for loop-closure matching is refilled from the most likely
//! regions ([`memory`]). [`sim`] replays sequences through the whole
//! pipeline and scores the outcome.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod map;
pub mod memory;
pub mod predictor;
pub mod sim;

pub use clustering::{ClusterChange, ClusteringParams, RegionId, RegionSet};
pub use map::{angle_diff, planar_distance, MapGraph, NodeId, Pose2};
