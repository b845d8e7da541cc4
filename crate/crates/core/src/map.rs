//! Pose-graph data model: planar poses, nodes carrying a unit-norm signature,
//! and odometry / loop-closure edges.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("non-finite pose")]
    NonFinitePose,
    #[error("non-finite feature component")]
    NonFiniteFeature,
    #[error("feature has zero norm")]
    ZeroFeature,
    #[error("feature dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-monotone time: {t} after {last}")]
    NonMonotoneTime { last: f64, t: f64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop edge on node {0}")]
    SelfLoop(NodeId),
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can yield exactly 2π for tiny negative inputs
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Euclidean distance in the xy-plane.
pub fn planar_distance(a: &Pose2, b: &Pose2) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Minimal absolute heading difference, in [0, π].
pub fn angle_diff(a: &Pose2, b: &Pose2) -> f64 {
    normalize_angle(a.yaw - b.yaw).abs()
}

/// Scales `v` to unit L2 norm, rejecting non-finite or zero vectors.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, MapError> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(MapError::NonFiniteFeature);
    }
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MapError::ZeroFeature);
    }
    Ok(v.iter().map(|c| c / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub pose: Pose2,
    pub timestamp: f64,
    pub feature: Vec<f64>,
    pub region: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Odometry,
    LoopClosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
}

/// Sequentially numbered pose graph. Node ids are dense: the i-th inserted
/// node has id i.
#[derive(Debug, Clone, Default)]
pub struct MapGraph {
    dim: Option<usize>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<NodeId>>,
}

impl MapGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose features must have dimension `dim`.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Appends a node and links it to the previous one with an odometry edge.
    pub fn add_node(
        &mut self,
        pose: Pose2,
        timestamp: f64,
        feature: &[f64],
    ) -> Result<NodeId, MapError> {
        if !pose.is_finite() || !timestamp.is_finite() {
            return Err(MapError::NonFinitePose);
        }
        if let Some(expected) = self.dim {
            if feature.len() != expected {
                return Err(MapError::DimensionMismatch {
                    expected,
                    got: feature.len(),
                });
            }
        }
        if let Some(last) = self.nodes.last() {
            if timestamp < last.timestamp {
                return Err(MapError::NonMonotoneTime {
                    last: last.timestamp,
                    t: timestamp,
                });
            }
        }
        let feature = l2_normalize(feature)?;
        self.dim.get_or_insert(feature.len());

        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            pose: Pose2::new(pose.x, pose.y, pose.yaw),
            timestamp,
            feature,
            region: None,
        });
        self.adjacency.push(Vec::new());
        if id > 0 {
            self.push_edge(id - 1, id, EdgeKind::Odometry);
        }
        Ok(id)
    }

    /// Adds a loop-closure edge. Duplicate links are ignored.
    pub fn add_loop_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), MapError> {
        if a == b {
            return Err(MapError::SelfLoop(a));
        }
        for n in [a, b] {
            if n >= self.nodes.len() {
                return Err(MapError::UnknownNode(n));
            }
        }
        if !self.adjacency[a].contains(&b) {
            self.push_edge(a, b, EdgeKind::LoopClosure);
        }
        Ok(())
    }

    fn push_edge(&mut self, a: NodeId, b: NodeId, kind: EdgeKind) {
        self.edges.push(Edge { a, b, kind });
        self.adjacency[a].push(b);
        self.adjacency[b].push(a);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn pose(&self, id: NodeId) -> Pose2 {
        self.nodes[id].pose
    }

    pub(crate) fn set_region(&mut self, id: NodeId, region: Option<usize>) {
        self.nodes[id].region = region;
    }
}
