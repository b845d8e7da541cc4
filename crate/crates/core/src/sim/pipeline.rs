//! Phase orchestration: exploration (mapping and clustering) and navigation
//! (memory management driven by region predictions).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::groundtruth::{GtThresholds, PoseIndex};
use super::sequence::Frame;
use super::SimError;
use crate::clustering::{ClusteringParams, RegionId, RegionSet};
use crate::map::{planar_distance, MapGraph, NodeId, Pose2};
use crate::memory::{MemoryParams, MemoryState, NodeRecord, Policy, UpdateEvents};
use crate::predictor::{EmaState, LabeledExample, PredictorModel};

/// Frozen result of the exploration phase. Region ids are compact
/// (`0..n_regions()`).
#[derive(Debug, Clone)]
pub struct Exploration {
    pub graph: MapGraph,
    pub regions: RegionSet,
    pub labels: Vec<RegionId>,
    /// Revisit links (earlier node, later node) added while mapping.
    pub loop_edges: Vec<(NodeId, NodeId)>,
    pub clustering: ClusteringParams,
    pub gt: GtThresholds,
}

/// Maps `frames` and clusters the map node by node. A frame that revisits
/// an earlier place outside the temporal window is linked to the nearest
/// such node before clustering, so revisits can join the region of the
/// first visit.
pub fn run_exploration(
    frames: &[Frame],
    params: &ClusteringParams,
    gt: &GtThresholds,
) -> Result<Exploration, SimError> {
    params.validate()?;
    gt.validate()?;
    if frames.is_empty() {
        return Err(SimError::NoFrames);
    }
    let mut graph = MapGraph::new();
    let mut regions = RegionSet::new();
    let mut index = PoseIndex::new(gt.d_max);
    let mut loop_edges = Vec::new();
    for f in frames {
        let id = graph.add_node(f.pose, f.t, f.feature()?)?;
        let revisit = index
            .matches(&f.pose, gt)
            .into_iter()
            .filter(|&i| id - i > gt.window)
            .min_by(|&a, &b| {
                planar_distance(&graph.pose(a), &f.pose)
                    .total_cmp(&planar_distance(&graph.pose(b), &f.pose))
                    .then(a.cmp(&b))
            });
        if let Some(i) = revisit {
            graph.add_loop_edge(i, id)?;
            loop_edges.push((i, id));
        }
        index.push(f.pose);
        regions.on_new_node(&graph, id, params)?;
    }
    regions.compact();
    let labels: Vec<RegionId> = (0..graph.len())
        .map(|i| regions.region_of(i).expect("every mapped node is assigned"))
        .collect();
    for (i, &r) in labels.iter().enumerate() {
        graph.set_region(i, Some(r));
    }
    Ok(Exploration {
        graph,
        regions,
        labels,
        loop_edges,
        clustering: *params,
        gt: *gt,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotNode {
    id: NodeId,
    t: f64,
    pose: [f64; 3],
    region: RegionId,
    feature: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    clustering: ClusteringParams,
    gt: GtThresholds,
    nodes: Vec<SnapshotNode>,
    loop_edges: Vec<(NodeId, NodeId)>,
    regions: RegionSet,
}

impl Exploration {
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.graph.nodes().iter().map(|n| n.pose).collect()
    }

    /// Training pairs (signature, region) of every node.
    pub fn dataset(&self) -> Vec<LabeledExample> {
        self.graph
            .nodes()
            .iter()
            .map(|n| LabeledExample {
                feature: n.feature.clone(),
                region: self.labels[n.id],
            })
            .collect()
    }

    /// The mapped nodes as a sequence, for replaying the exploration run.
    pub fn frames(&self) -> Vec<Frame> {
        self.graph
            .nodes()
            .iter()
            .map(|n| Frame {
                seq: "exploration".into(),
                frame_id: n.id as u64,
                t: n.timestamp,
                pose: n.pose,
                feature: Some(n.feature.clone()),
                image_path: None,
                zone: None,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let snapshot = Snapshot {
            clustering: self.clustering,
            gt: self.gt,
            nodes: self
                .graph
                .nodes()
                .iter()
                .map(|n| SnapshotNode {
                    id: n.id,
                    t: n.timestamp,
                    pose: [n.pose.x, n.pose.y, n.pose.yaw],
                    region: self.labels[n.id],
                    feature: n.feature.clone(),
                })
                .collect(),
            loop_edges: self.loop_edges.clone(),
            regions: self.regions.clone(),
        };
        let file = File::create(path).map_err(|e| SimError::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), &snapshot).map_err(|e| SimError::io(path, e.into()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let file = File::open(path).map_err(|e| SimError::io(path, e))?;
        let snap: Snapshot = serde_json::from_reader(BufReader::new(file)).map_err(|e| SimError::Parse {
            line: e.line(),
            msg: format!("{}: {e}", path.display()),
        })?;
        let mut graph = MapGraph::new();
        let mut labels = Vec::with_capacity(snap.nodes.len());
        for (k, n) in snap.nodes.iter().enumerate() {
            if n.id != k || snap.regions.region_of(k) != Some(n.region) {
                return Err(SimError::InvalidParams(format!(
                    "{}: node {k} is inconsistent with the region set",
                    path.display()
                )));
            }
            let id = graph.add_node(Pose2::new(n.pose[0], n.pose[1], n.pose[2]), n.t, &n.feature)?;
            graph.set_region(id, Some(n.region));
            labels.push(n.region);
        }
        if labels.is_empty() {
            return Err(SimError::NoFrames);
        }
        for &(a, b) in &snap.loop_edges {
            graph.add_loop_edge(a, b)?;
        }
        Ok(Self {
            graph,
            regions: snap.regions,
            labels,
            loop_edges: snap.loop_edges,
            clustering: snap.clustering,
            gt: snap.gt,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PredictorSource<'a> {
    Model(&'a PredictorModel),
    /// One-hot of the ground-truth region.
    Oracle,
}

impl PredictorSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorSource::Model(_) => "model",
            PredictorSource::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    /// Navigate the explored sequence again, starting from empty memory;
    /// node i is exploration node i.
    Replay,
    /// A new session over the explored map. Memory starts as it was at the
    /// end of exploration; new nodes are numbered after the map.
    Relocalize,
}

#[derive(Debug, Clone, Copy)]
pub struct NavigationConfig {
    pub memory: MemoryParams,
    pub ema_alpha: f64,
    pub timing: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Navigation {
    pub events: Vec<UpdateEvents>,
    /// Per-frame `wm_update` wall time, ns; empty unless timing was asked.
    pub latencies_ns: Vec<u64>,
    /// Tracked node count at each timed update.
    pub map_sizes: Vec<usize>,
    /// Node id of the first session frame.
    pub id_offset: usize,
    /// Poses of every tracked node, indexed by node id.
    pub node_poses: Vec<Pose2>,
    /// Ground-truth region of every session frame, if it has one.
    pub truth: Vec<Option<RegionId>>,
}

/// Region of each frame: the region of the earliest mapped node whose pose
/// matches the frame's, or none. Replayed frames fall back to their own
/// label.
pub fn ground_truth_regions(exploration: &Exploration, frames: &[Frame], mode: SessionMode) -> Vec<Option<RegionId>> {
    let index = PoseIndex::build(&exploration.poses(), exploration.gt.d_max);
    frames
        .iter()
        .enumerate()
        .map(|(j, f)| {
            index
                .matches(&f.pose, &exploration.gt)
                .first()
                .map(|&i| exploration.labels[i])
                .or(match mode {
                    SessionMode::Replay => exploration.labels.get(j).copied(),
                    SessionMode::Relocalize => None,
                })
        })
        .collect()
}

/// Memory as it stands after the exploration run: the mapped sequence
/// replayed under the baseline policy, revisit links added, and the
/// short-term buffer flushed to long-term memory.
pub fn exploration_memory(exploration: &Exploration, params: MemoryParams) -> Result<MemoryState, SimError> {
    let mut base = params;
    base.policy = Policy::Baseline;
    let mut memory = MemoryState::new(base);
    let mut ema = EmaState::new(1.0)?;
    let zeros = vec![0.0; exploration.n_regions()];
    for node in exploration.graph.nodes() {
        memory.insert_new_node(NodeRecord {
            id: node.id,
            pose: node.pose,
            feature: node.feature.clone(),
            region: Some(exploration.labels[node.id]),
        })?;
        memory.wm_update(node.id, &zeros, &mut ema, &exploration.regions)?;
    }
    for &(a, b) in &exploration.loop_edges {
        memory.link(a, b)?;
    }
    memory.end_session(&exploration.regions);
    memory.set_params(params);
    Ok(memory)
}

/// Runs the navigation phase over `frames`: per frame, insert the node,
/// predict region confidences and run one memory update.
pub fn run_navigation(
    frames: &[Frame],
    exploration: &Exploration,
    predictor: PredictorSource<'_>,
    config: &NavigationConfig,
    mode: SessionMode,
) -> Result<Navigation, SimError> {
    let n_regions = exploration.n_regions();
    if let PredictorSource::Model(m) = predictor {
        if m.n_regions != n_regions {
            return Err(SimError::RegionCountMismatch {
                model: m.n_regions,
                map: n_regions,
            });
        }
    }
    if frames.is_empty() {
        return Err(SimError::NoFrames);
    }
    let (mut memory, id_offset, mut node_poses) = match mode {
        SessionMode::Replay => {
            if frames.len() != exploration.len() {
                return Err(SimError::InvalidParams(format!(
                    "replay needs the {} explored frames, got {}",
                    exploration.len(),
                    frames.len()
                )));
            }
            (MemoryState::new(config.memory), 0, Vec::with_capacity(frames.len()))
        }
        SessionMode::Relocalize => (
            exploration_memory(exploration, config.memory)?,
            exploration.len(),
            exploration.poses(),
        ),
    };
    let truth = ground_truth_regions(exploration, frames, mode);
    let mut ema = EmaState::new(config.ema_alpha)?;
    let mut nav = Navigation {
        id_offset,
        ..Navigation::default()
    };
    let mut one_hot = vec![0.0; n_regions];

    for (j, f) in frames.iter().enumerate() {
        let id = id_offset + j;
        let feature = f.feature()?;
        memory.insert_new_node(NodeRecord {
            id,
            pose: f.pose,
            feature: feature.to_vec(),
            region: match mode {
                SessionMode::Replay => Some(exploration.labels[j]),
                SessionMode::Relocalize => None,
            },
        })?;
        node_poses.push(f.pose);
        let model_out;
        let o: &[f64] = match predictor {
            PredictorSource::Model(m) => {
                model_out = m.forward(feature)?;
                &model_out
            }
            PredictorSource::Oracle => {
                one_hot.iter_mut().for_each(|v| *v = 0.0);
                if let Some(r) = truth[j] {
                    one_hot[r] = 1.0;
                }
                &one_hot
            }
        };
        let start = Instant::now();
        let ev = memory.wm_update(id, o, &mut ema, &exploration.regions)?;
        if config.timing {
            nav.latencies_ns.push(start.elapsed().as_nanos() as u64);
            nav.map_sizes.push(memory.len());
        }
        nav.events.push(ev);
    }
    nav.node_poses = node_poses;
    nav.truth = truth;
    Ok(nav)
}
