//! Short-term / working / long-term memory with region-aware transfer and
//! retrieval.
//!
//! Only working-memory nodes are compared against a new node. Each update
//! retrieves graph neighbors of the best hypothesis and, under the region
//! policy, nodes of the regions with the highest fused confidence; it then
//! pushes nodes of the least likely regions back to long-term memory until
//! the working set fits its capacity again. The baseline policy keeps
//! only the neighbor retrieval and evicts least-recently-touched nodes.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{RegionId, RegionSet};
use crate::map::{planar_distance, NodeId, Pose2};
use crate::predictor::{top_k, EmaState, PredictorError};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid memory parameters: {0}")]
    InvalidParams(String),
    #[error("constraint k1 + k2 <= N violated: k1 = {k1}, k2 = {k2}, N = {n}")]
    Constraint { k1: usize, k2: usize, n: usize },
    #[error("node {0} is already tracked")]
    Duplicate(NodeId),
    #[error("node {0} is not tracked")]
    UnknownNode(NodeId),
    #[error("feature dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Region-aware transfer and retrieval.
    Region,
    /// Spatio-temporal continuity only.
    Baseline,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "region" => Ok(Policy::Region),
            "baseline" => Ok(Policy::Baseline),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryParams {
    /// Working-memory capacity N.
    pub n_wm: usize,
    pub m_stm: usize,
    pub k1: usize,
    pub k2_frac: f64,
    pub tau_loop: f64,
    pub policy: Policy,
    /// Matches closer than this many ids to the new node are never
    /// declared loop closures.
    pub loop_window: usize,
    k2: usize,
    k3: usize,
}

impl MemoryParams {
    /// Derives k2 = ⌊k2_frac·N⌋ and k3 = N − k1 − k2.
    pub fn new(
        n_wm: usize,
        m_stm: usize,
        k1: usize,
        k2_frac: f64,
        tau_loop: f64,
        policy: Policy,
    ) -> Result<Self, MemoryError> {
        if n_wm == 0 {
            return Err(MemoryError::InvalidParams("N must be positive".into()));
        }
        if !(0.0..=1.0).contains(&k2_frac) {
            return Err(MemoryError::InvalidParams("k2_frac must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&tau_loop) {
            return Err(MemoryError::InvalidParams("tau_loop must lie in [0, 1]".into()));
        }
        // the epsilon keeps e.g. 0.34·3 from flooring to 1.0199.. → 1 while
        // 0.1·30 = 3.0000000000000004 still gives 3
        let k2 = (k2_frac * n_wm as f64 + 1e-9).floor() as usize;
        if k1 + k2 > n_wm {
            return Err(MemoryError::Constraint { k1, k2, n: n_wm });
        }
        Ok(Self {
            n_wm,
            m_stm,
            k1,
            k2_frac,
            tau_loop,
            policy,
            loop_window: m_stm,
            k2,
            k3: n_wm - k1 - k2,
        })
    }

    /// Standard setting: N = 50, k1 = 2, k2 = 25 % of N, ten STM slots.
    pub fn with_defaults(policy: Policy) -> Self {
        Self::new(50, 10, 2, 0.25, 0.85, policy).expect("defaults satisfy the constraint")
    }

    pub fn with_loop_window(mut self, window: usize) -> Self {
        self.loop_window = window;
        self
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn k3(&self) -> usize {
        self.k3
    }
}

/// Cosine similarity mapped to [0, 1].
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64, MemoryError> {
    if a.len() != b.len() {
        return Err(MemoryError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub pose: Pose2,
    pub feature: Vec<f64>,
    pub region: Option<RegionId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub node: NodeId,
    pub score: f64,
    pub loop_closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Stm,
    Wm,
    Ltm,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateEvents {
    pub step: u64,
    pub node: NodeId,
    pub hypothesis: Option<(NodeId, f64)>,
    /// Matched node when the hypothesis is accepted as a loop closure.
    pub loop_closed: Option<NodeId>,
    pub retrieved_u1: Vec<NodeId>,
    pub immunized: Vec<NodeId>,
    pub retrieved_u3: Vec<NodeId>,
    pub transferred: Vec<NodeId>,
    /// Working memory still exceeds N because every remaining node is
    /// immunized.
    pub overflow: bool,
    pub wm_size: usize,
    pub top_regions: Vec<RegionId>,
}

/// One line of the JSON-lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: u64,
    pub node_id: NodeId,
    pub hypothesis_id: Option<NodeId>,
    pub hypothesis_score: Option<f64>,
    pub loop_closed: bool,
    pub retrieved_u1: Vec<NodeId>,
    pub retrieved_u3: Vec<NodeId>,
    pub transferred: Vec<NodeId>,
    pub wm_size: usize,
    pub top_regions: Vec<RegionId>,
}

impl From<&UpdateEvents> for EventRecord {
    fn from(e: &UpdateEvents) -> Self {
        Self {
            step: e.step,
            node_id: e.node,
            hypothesis_id: e.hypothesis.map(|h| h.0),
            hypothesis_score: e.hypothesis.map(|h| h.1),
            loop_closed: e.loop_closed.is_some(),
            retrieved_u1: e.retrieved_u1.clone(),
            retrieved_u3: e.retrieved_u3.clone(),
            transferred: e.transferred.clone(),
            wm_size: e.wm_size,
            top_regions: e.top_regions.clone(),
        }
    }
}

/// Long-term store: id index plus, per region, members ordered by distance
/// to the region centroid. Distances are non-negative, so their bit
/// patterns sort like the values.
#[derive(Debug, Clone, Default)]
struct LongTermStore {
    ids: BTreeSet<NodeId>,
    by_region: HashMap<RegionId, BTreeSet<(u64, NodeId)>>,
    keys: HashMap<NodeId, (RegionId, u64)>,
}

impl LongTermStore {
    fn insert(&mut self, rec: &NodeRecord, regions: &RegionSet) {
        self.ids.insert(rec.id);
        if let Some(r) = rec.region {
            let d = regions
                .cluster(r)
                .map(|c| {
                    let [cx, cy] = c.centroid();
                    (rec.pose.x - cx).hypot(rec.pose.y - cy)
                })
                .unwrap_or(f64::MAX);
            let key = d.to_bits();
            self.by_region.entry(r).or_default().insert((key, rec.id));
            self.keys.insert(rec.id, (r, key));
        }
    }

    fn remove(&mut self, id: NodeId) -> bool {
        if !self.ids.remove(&id) {
            return false;
        }
        if let Some((r, key)) = self.keys.remove(&id) {
            if let Some(set) = self.by_region.get_mut(&r) {
                set.remove(&(key, id));
                if set.is_empty() {
                    self.by_region.remove(&r);
                }
            }
        }
        true
    }

    fn region_len(&self, r: RegionId) -> usize {
        self.by_region.get(&r).map_or(0, BTreeSet::len)
    }

    /// Nearest-to-centroid members of region `r`, up to `n`.
    fn region_head(&self, r: RegionId, n: usize) -> Vec<NodeId> {
        self.by_region
            .get(&r)
            .map(|s| s.iter().take(n).map(|&(_, id)| id).collect())
            .unwrap_or_default()
    }
}

/// Max-heap entry ordering regions by probability, then lower id first.
#[derive(Debug, PartialEq)]
struct RankedRegion(f64, RegionId);

impl Eq for RankedRegion {}

impl PartialOrd for RankedRegion {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RankedRegion {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

#[derive(Debug, Clone)]
pub struct MemoryState {
    params: MemoryParams,
    records: HashMap<NodeId, NodeRecord>,
    links: HashMap<NodeId, Vec<NodeId>>,
    stm: VecDeque<NodeId>,
    /// node → step at which it last entered or was retrieved into WM
    wm: BTreeMap<NodeId, u64>,
    ltm: LongTermStore,
    step: u64,
    last_inserted: Option<NodeId>,
    dim: Option<usize>,
}

impl MemoryState {
    pub fn new(params: MemoryParams) -> Self {
        Self {
            params,
            records: HashMap::new(),
            links: HashMap::new(),
            stm: VecDeque::new(),
            wm: BTreeMap::new(),
            ltm: LongTermStore::default(),
            step: 0,
            last_inserted: None,
            dim: None,
        }
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    /// Swaps the policy and capacities while keeping the stored map, e.g.
    /// when a new session reloads a previous working memory.
    pub fn set_params(&mut self, params: MemoryParams) {
        self.params = params;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn stm(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.stm.iter().copied()
    }

    pub fn wm(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.wm.keys().copied()
    }

    pub fn wm_len(&self) -> usize {
        self.wm.len()
    }

    pub fn ltm(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ltm.ids.iter().copied()
    }

    pub fn ltm_len(&self) -> usize {
        self.ltm.ids.len()
    }

    pub fn record(&self, id: NodeId) -> Option<&NodeRecord> {
        self.records.get(&id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn location(&self, id: NodeId) -> Option<Location> {
        if self.wm.contains_key(&id) {
            Some(Location::Wm)
        } else if self.ltm.ids.contains(&id) {
            Some(Location::Ltm)
        } else if self.records.contains_key(&id) {
            Some(Location::Stm)
        } else {
            None
        }
    }

    /// Links two tracked nodes (odometry or loop closure). Duplicates are
    /// ignored.
    pub fn link(&mut self, a: NodeId, b: NodeId) -> Result<(), MemoryError> {
        for n in [a, b] {
            if !self.records.contains_key(&n) {
                return Err(MemoryError::UnknownNode(n));
            }
        }
        if a == b {
            return Ok(());
        }
        let la = self.links.entry(a).or_default();
        if !la.contains(&b) {
            la.push(b);
            self.links.entry(b).or_default().push(a);
        }
        Ok(())
    }

    fn track(&mut self, rec: NodeRecord) -> Result<NodeId, MemoryError> {
        if self.records.contains_key(&rec.id) {
            return Err(MemoryError::Duplicate(rec.id));
        }
        match self.dim {
            Some(d) if d != rec.feature.len() => {
                return Err(MemoryError::DimensionMismatch {
                    expected: d,
                    got: rec.feature.len(),
                })
            }
            _ => self.dim = Some(rec.feature.len()),
        }
        let id = rec.id;
        self.records.insert(id, rec);
        Ok(id)
    }

    /// Appends a new node to STM, linking it to the previously inserted node
    /// of the session. Returns the oldest STM node when it spills into WM.
    pub fn insert_new_node(&mut self, rec: NodeRecord) -> Result<Option<NodeId>, MemoryError> {
        let id = self.track(rec)?;
        if let Some(prev) = self.last_inserted {
            self.link(prev, id)?;
        }
        self.last_inserted = Some(id);
        self.stm.push_back(id);
        if self.stm.len() > self.params.m_stm {
            let old = self.stm.pop_front().expect("non-empty");
            self.wm.insert(old, self.step);
            return Ok(Some(old));
        }
        Ok(None)
    }

    /// Stores a node directly in LTM (map reload).
    pub fn preload_ltm(&mut self, rec: NodeRecord, regions: &RegionSet) -> Result<(), MemoryError> {
        let id = self.track(rec)?;
        self.ltm.insert(&self.records[&id], regions);
        Ok(())
    }

    /// Ends the current session: STM content goes to LTM and the next node
    /// starts a new odometry chain. WM is kept as is.
    pub fn end_session(&mut self, regions: &RegionSet) {
        while let Some(id) = self.stm.pop_front() {
            self.ltm.insert(&self.records[&id], regions);
        }
        self.last_inserted = None;
    }

    /// Highest-similarity WM node for `v` (ties to the lower id).
    pub fn best_hypothesis(&self, v: NodeId) -> Result<Option<Hypothesis>, MemoryError> {
        let query = &self.records.get(&v).ok_or(MemoryError::UnknownNode(v))?.feature;
        let mut best: Option<(NodeId, f64)> = None;
        for &id in self.wm.keys() {
            if id == v {
                continue;
            }
            let s = similarity(query, &self.records[&id].feature)?;
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((id, s));
            }
        }
        Ok(best.map(|(node, score)| Hypothesis {
            node,
            score,
            loop_closed: score >= self.params.tau_loop && node.abs_diff(v) > self.params.loop_window,
        }))
    }

    /// Up to `k` LTM nodes around `h` in time and space. Candidates are the
    /// LTM nodes closest to `h` in the pose graph (odometry and loop links);
    /// they are ranked by id-distance rank plus planar-distance rank, ties
    /// to the smaller id distance, then the lower id.
    fn ltm_neighbors(&self, h: NodeId, k: usize) -> Vec<NodeId> {
        if k == 0 || self.ltm.ids.is_empty() {
            return Vec::new();
        }
        let pool = (4 * k).max(8);
        let visit_cap = 4 * (self.params.n_wm + self.params.m_stm + pool);

        let mut candidates = Vec::new();
        let mut seen = HashSet::from([h]);
        let mut frontier = vec![h];
        while !frontier.is_empty() && candidates.len() < pool && seen.len() < visit_cap {
            let mut next = Vec::new();
            for n in frontier {
                for &nb in self.links.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                    if seen.insert(nb) {
                        if self.ltm.ids.contains(&nb) {
                            candidates.push(nb);
                        }
                        next.push(nb);
                    }
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        if candidates.is_empty() {
            return candidates;
        }

        let hp = self.records[&h].pose;
        let mut by_time = candidates.clone();
        by_time.sort_by_key(|&c| (c.abs_diff(h), c));
        let mut by_space = candidates.clone();
        by_space.sort_by(|&a, &b| {
            planar_distance(&self.records[&a].pose, &hp)
                .total_cmp(&planar_distance(&self.records[&b].pose, &hp))
                .then(a.cmp(&b))
        });
        let mut rank: HashMap<NodeId, usize> = HashMap::new();
        for (i, &c) in by_time.iter().enumerate() {
            *rank.entry(c).or_default() += i;
        }
        for (i, &c) in by_space.iter().enumerate() {
            *rank.entry(c).or_default() += i;
        }
        candidates.sort_by_key(|&c| (rank[&c], c.abs_diff(h), c));
        candidates.truncate(k);
        candidates
    }

    /// Up to `k` WM nodes closest to `v` in id; ties to the lower id.
    fn wm_time_neighbors(&self, v: NodeId, k: usize) -> Vec<NodeId> {
        let mut below = self.wm.range(..=v).rev().map(|(&id, _)| id).peekable();
        let mut above = self.wm.range(v + 1..).map(|(&id, _)| id).peekable();
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let pick = match (below.peek(), above.peek()) {
                (Some(&b), Some(&a)) => {
                    if v - b <= a - v {
                        below.next()
                    } else {
                        above.next()
                    }
                }
                (Some(_), None) => below.next(),
                (None, Some(_)) => above.next(),
                (None, None) => None,
            };
            match pick {
                Some(id) => out.push(id),
                None => break,
            }
        }
        out
    }

    fn retrieve(&mut self, id: NodeId) {
        if self.ltm.remove(id) {
            self.wm.insert(id, self.step);
        }
    }

    /// Picks up to `k3` LTM nodes from the regions with positive probability,
    /// most likely region first and, inside a region, nearest to its
    /// centroid first. Does not move anything.
    pub fn select_region_nodes(&self, p: &[f64], k3: usize) -> Vec<NodeId> {
        let mut out = Vec::new();
        if k3 == 0 {
            return out;
        }
        let mut heap: BinaryHeap<RankedRegion> = p
            .iter()
            .enumerate()
            .filter(|&(r, &pr)| pr > 0.0 && self.ltm.region_len(r) > 0)
            .map(|(r, &pr)| RankedRegion(pr, r))
            .collect();
        while out.len() < k3 {
            let Some(RankedRegion(_, r)) = heap.pop() else {
                break;
            };
            out.extend(self.ltm.region_head(r, k3 - out.len()));
        }
        out
    }

    /// Retrieves the nodes chosen by [`MemoryState::select_region_nodes`].
    pub fn retrieve_regions(&mut self, p: &[f64], k3: usize) -> Vec<NodeId> {
        let picked = self.select_region_nodes(p, k3);
        for &id in &picked {
            self.retrieve(id);
        }
        picked
    }

    fn transfer(&mut self, id: NodeId, regions: &RegionSet) {
        if self.wm.remove(&id).is_some() {
            self.ltm.insert(&self.records[&id], regions);
        }
    }

    /// One transfer/retrieval cycle for the newly inserted node `v`.
    ///
    /// `o_t` holds the predictor confidences for every region. The event
    /// reports its three highest regions; the baseline policy ignores it
    /// otherwise.
    pub fn wm_update(
        &mut self,
        v: NodeId,
        o_t: &[f64],
        ema: &mut EmaState,
        regions: &RegionSet,
    ) -> Result<UpdateEvents, MemoryError> {
        if !self.records.contains_key(&v) {
            return Err(MemoryError::UnknownNode(v));
        }
        self.step += 1;
        let params = self.params;
        let mut ev = UpdateEvents {
            step: self.step,
            node: v,
            ..UpdateEvents::default()
        };

        let hyp = self.best_hypothesis(v)?;
        if let Some(h) = hyp {
            ev.hypothesis = Some((h.node, h.score));
            if h.loop_closed {
                ev.loop_closed = Some(h.node);
                self.link(v, h.node)?;
            }
            ev.retrieved_u1 = self.ltm_neighbors(h.node, params.k1);
            for &id in &ev.retrieved_u1 {
                self.retrieve(id);
            }
        }

        let u2 = self.wm_time_neighbors(v, params.k2);
        let immunized: BTreeSet<NodeId> = ev.retrieved_u1.iter().chain(&u2).copied().collect();
        ev.immunized = immunized.iter().copied().collect();

        ev.top_regions = top_k(o_t, 3);
        let prob: Vec<f64> = match params.policy {
            Policy::Region => {
                let p = ema.update(o_t)?.to_vec();
                ev.retrieved_u3 = self.retrieve_regions(&p, params.k3);
                p
            }
            Policy::Baseline => Vec::new(),
        };

        if self.wm.len() > params.n_wm {
            let region_p = |id: NodeId| -> f64 {
                self.records[&id]
                    .region
                    .and_then(|r| prob.get(r).copied())
                    .unwrap_or(0.0)
            };
            let mut order: Vec<(f64, u64, NodeId)> = self
                .wm
                .iter()
                .filter(|(id, _)| !immunized.contains(id))
                .map(|(&id, &touched)| {
                    let p = match params.policy {
                        Policy::Region => region_p(id),
                        Policy::Baseline => 0.0,
                    };
                    (p, touched, id)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let excess = self.wm.len() - params.n_wm;
            for &(_, _, id) in order.iter().take(excess) {
                self.transfer(id, regions);
                ev.transferred.push(id);
            }
            ev.overflow = self.wm.len() > params.n_wm;
        }
        ev.wm_size = self.wm.len();
        Ok(ev)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.stm.len() > self.params.m_stm {
            return Err(format!("STM holds {} > {}", self.stm.len(), self.params.m_stm));
        }
        let stm: HashSet<NodeId> = self.stm.iter().copied().collect();
        if stm.len() != self.stm.len() {
            return Err("duplicate STM entry".into());
        }
        for id in &stm {
            if self.wm.contains_key(id) || self.ltm.ids.contains(id) {
                return Err(format!("node {id} in STM and another store"));
            }
        }
        for id in self.wm.keys() {
            if self.ltm.ids.contains(id) {
                return Err(format!("node {id} in both WM and LTM"));
            }
        }
        let total = stm.len() + self.wm.len() + self.ltm.ids.len();
        if total != self.records.len() {
            return Err(format!("{} records but {total} placed nodes", self.records.len()));
        }
        let indexed: usize = self.ltm.by_region.values().map(BTreeSet::len).sum();
        if indexed != self.ltm.keys.len() {
            return Err("LTM region index out of sync".into());
        }
        Ok(())
    }
}
