//! Scoring: region prediction accuracy, loop-closure and relocalization
//! detection, latency statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::groundtruth::{gt_events, gt_matches, GtEvent, GtThresholds};
use super::pipeline::{Exploration, Navigation, SessionMode};
use super::sequence::Frame;
use super::SimError;
use crate::clustering::RegionId;
use crate::map::{planar_distance, Pose2};
use crate::memory::{EventRecord, Policy};

/// Training-region id → test-region id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionPairing(BTreeMap<RegionId, RegionId>);

impl RegionPairing {
    pub fn new(map: BTreeMap<RegionId, RegionId>) -> Result<Self, SimError> {
        let mut seen = BTreeMap::new();
        for (&train, &test) in &map {
            if let Some(other) = seen.insert(test, train) {
                return Err(SimError::InvalidParams(format!(
                    "pairing is not injective: regions {other} and {train} both map to {test}"
                )));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n_regions: usize) -> Self {
        Self((0..n_regions).map(|r| (r, r)).collect())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let file = File::open(path).map_err(|e| SimError::io(path, e))?;
        let map: BTreeMap<RegionId, RegionId> =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| SimError::Parse {
                line: e.line(),
                msg: format!("{}: {e}", path.display()),
            })?;
        Self::new(map)
    }

    pub fn get(&self, train: RegionId) -> Option<RegionId> {
        self.0.get(&train).copied()
    }

    /// True when some training region is paired with `test`.
    pub fn covers(&self, test: RegionId) -> bool {
        self.0.values().any(|&v| v == test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKScore {
    pub fraction: f64,
    pub evaluated: usize,
    /// Frames without a (paired) ground-truth region.
    pub excluded: usize,
}

/// Share of frames whose ground-truth region is among the first `k` ranked
/// predictions. Without a pairing, prediction and truth share ids.
pub fn eval_topk(
    ranked: &[Vec<RegionId>],
    truth: &[Option<RegionId>],
    pairing: Option<&RegionPairing>,
    k: usize,
) -> TopKScore {
    let mut hits = 0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for (pred, gt) in ranked.iter().zip(truth) {
        let Some(gt) = *gt else {
            excluded += 1;
            continue;
        };
        if pairing.is_some_and(|p| !p.covers(gt)) {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let map = |r: RegionId| pairing.map_or(Some(r), |p| p.get(r));
        if pred.iter().take(k).any(|&r| map(r) == Some(gt)) {
            hits += 1;
        }
    }
    TopKScore {
        fraction: if evaluated > 0 { hits as f64 / evaluated as f64 } else { 0.0 },
        evaluated,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionScore {
    pub detected: usize,
    pub total: usize,
}

/// Counts ground-truth events credited by a declared loop closure: the
/// closure's frame lies within `th.window` frames of the event span and
/// the matched node lies within `th.d_max` of a pose the event revisits.
/// Frame j of the second sequence is node `b_offset + j`.
pub fn eval_loops(
    log: &[EventRecord],
    events: &[GtEvent],
    node_poses: &[Pose2],
    a_poses: &[Pose2],
    b_offset: usize,
    th: &GtThresholds,
) -> DetectionScore {
    let mut closures: Vec<(usize, usize)> = log
        .iter()
        .filter(|r| r.loop_closed && r.node_id >= b_offset)
        .filter_map(|r| r.hypothesis_id.map(|h| (r.node_id - b_offset, h)))
        .collect();
    closures.sort_unstable();

    let detected = events
        .iter()
        .filter(|ev| {
            let lo = ev.start.saturating_sub(th.window);
            let hi = ev.end + th.window;
            let from = closures.partition_point(|&(j, _)| j < lo);
            closures[from..]
                .iter()
                .take_while(|&&(j, _)| j <= hi)
                .any(|&(_, h)| {
                    node_poses.get(h).is_some_and(|hp| {
                        ev.a_frames
                            .iter()
                            .any(|&i| planar_distance(hp, &a_poses[i]) < th.d_max)
                    })
                })
        })
        .count();
    DetectionScore {
        detected,
        total: events.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
    pub tail_frames: usize,
    pub tail_mean_us: f64,
}

impl LatencyStats {
    /// Statistics of `latencies_ns`; the tail is the last `tail` frames.
    pub fn from_ns(latencies_ns: &[u64], tail: usize) -> Option<Self> {
        if latencies_ns.is_empty() {
            return None;
        }
        let us: Vec<f64> = latencies_ns.iter().map(|&n| n as f64 / 1e3).collect();
        let mut sorted = us.clone();
        sorted.sort_by(f64::total_cmp);
        let pct = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let tail = tail.min(us.len());
        Some(Self {
            frames: us.len(),
            mean_us: mean(&us),
            p50_us: pct(0.5),
            p95_us: pct(0.95),
            max_us: *sorted.last().expect("non-empty"),
            tail_frames: tail,
            tail_mean_us: mean(&us[us.len() - tail..]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: SessionMode,
    pub policy: Policy,
    pub predictor: String,
    pub frames: usize,
    pub top1: f64,
    pub top3: f64,
    pub topk_evaluated: usize,
    pub topk_excluded: usize,
    pub loops_total: usize,
    pub loops_detected: usize,
    pub reloc_total: usize,
    pub reloc_performed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Scores an event log of a session over `frames` against the exploration
/// it navigated. Ranked predictions are the logged top regions.
pub fn score_log(
    log: &[EventRecord],
    exploration: &Exploration,
    frames: &[Frame],
    truth: &[Option<RegionId>],
    mode: SessionMode,
    pairing: Option<&RegionPairing>,
) -> (TopKScore, TopKScore, DetectionScore, DetectionScore) {
    let th = &exploration.gt;
    let ranked: Vec<Vec<RegionId>> = log.iter().map(|r| r.top_regions.clone()).collect();
    let top1 = eval_topk(&ranked, truth, pairing, 1);
    let top3 = eval_topk(&ranked, truth, pairing, 3);

    let session: Vec<Pose2> = frames.iter().map(|f| f.pose).collect();
    let map = exploration.poses();
    let (offset, node_poses) = match mode {
        SessionMode::Replay => (0, session.clone()),
        SessionMode::Relocalize => (map.len(), map.iter().chain(&session).copied().collect()),
    };
    let loop_events = gt_events(&gt_matches(&session, &session, true, th));
    let loops = eval_loops(log, &loop_events, &node_poses, &session, offset, th);
    let reloc = match mode {
        SessionMode::Replay => DetectionScore::default(),
        SessionMode::Relocalize => {
            let events = gt_events(&gt_matches(&map, &session, false, th));
            eval_loops(log, &events, &node_poses, &map, offset, th)
        }
    };
    (top1, top3, loops, reloc)
}

/// Report of a navigation run.
pub fn run_report(
    nav: &Navigation,
    exploration: &Exploration,
    frames: &[Frame],
    mode: SessionMode,
    policy: Policy,
    predictor: &str,
    pairing: Option<&RegionPairing>,
) -> RunReport {
    let log: Vec<EventRecord> = nav.events.iter().map(EventRecord::from).collect();
    let (top1, top3, loops, reloc) = score_log(&log, exploration, frames, &nav.truth, mode, pairing);
    RunReport {
        mode,
        policy,
        predictor: predictor.to_string(),
        frames: frames.len(),
        top1: top1.fraction,
        top3: top3.fraction,
        topk_evaluated: top3.evaluated,
        topk_excluded: top3.excluded,
        loops_total: loops.total,
        loops_detected: loops.detected,
        reloc_total: reloc.total,
        reloc_performed: reloc.detected,
        latency: LatencyStats::from_ns(&nav.latencies_ns, 200),
        config: None,
    }
}
