//! Simulation harness: sequence I/O, synthetic environments, the
//! explore → train → navigate pipeline and its evaluation.

pub mod eval;
pub mod groundtruth;
pub mod pipeline;
pub mod sequence;
pub mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::clustering::ClusterError;
use crate::map::MapError;
use crate::memory::MemoryError;
use crate::predictor::PredictorError;

pub use eval::{eval_loops, eval_topk, run_report, score_log, DetectionScore, LatencyStats, RegionPairing, RunReport, TopKScore};
pub use groundtruth::{gt_events, gt_matches, GtEvent, GtThresholds, PoseIndex};
pub use pipeline::{
    exploration_memory, ground_truth_regions, run_exploration, run_navigation, Exploration, Navigation,
    NavigationConfig, PredictorSource, SessionMode,
};
pub use sequence::{load_sequence, parse_sequence, save_sequence, write_sequence, Frame};
pub use synthetic::{gen_synthetic, grid_revisit_route, trajectory, Layout, SyntheticSpec, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no frames")]
    NoFrames,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: time does not increase")]
    NonMonotoneTime { line: usize },
    #[error("line {line}: feature dimension {got}, expected {expected}")]
    DimensionMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: neither feature nor image given")]
    MissingFeature { line: usize },
    #[error("frame {0} has an image but no feature; embed it first")]
    FeatureUnavailable(u64),
    #[error("model predicts {model} regions but the map has {map}")]
    RegionCountMismatch { model: usize, map: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

impl SimError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
