//! Pose-based ground truth: two poses match when both their planar distance
//! and heading difference are strictly below the thresholds.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::map::{angle_diff, planar_distance, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtThresholds {
    pub d_max: f64,
    pub theta_max: f64,
    /// Frames around an event within which a reported closure is credited;
    /// also the minimum index gap of intra-sequence matches.
    pub window: usize,
}

impl Default for GtThresholds {
    fn default() -> Self {
        Self {
            d_max: 3.0,
            theta_max: FRAC_PI_4,
            window: 20,
        }
    }
}

impl GtThresholds {
    pub fn indoor() -> Self {
        Self {
            d_max: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.d_max > 0.0 && self.d_max.is_finite()) || !(self.theta_max > 0.0) || self.window == 0 {
            return Err(SimError::InvalidParams(
                "ground-truth thresholds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn is_match(&self, a: &Pose2, b: &Pose2) -> bool {
        planar_distance(a, b) < self.d_max && angle_diff(a, b) < self.theta_max
    }
}

/// Uniform grid over planar positions. With a cell size of at least the
/// query radius, the 3×3 block around a query cell holds every candidate.
#[derive(Debug, Clone)]
pub struct PoseIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    poses: Vec<Pose2>,
}

impl PoseIndex {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
            poses: Vec::new(),
        }
    }

    pub fn build(poses: &[Pose2], cell: f64) -> Self {
        let mut index = Self::new(cell);
        for p in poses {
            index.push(*p);
        }
        index
    }

    fn key(&self, p: &Pose2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Adds a pose under the next index.
    pub fn push(&mut self, pose: Pose2) -> usize {
        let i = self.poses.len();
        let key = self.key(&pose);
        self.cells.entry(key).or_default().push(i);
        self.poses.push(pose);
        i
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Indices of stored poses matching `pose`, ascending. `th.d_max` must
    /// not exceed the cell size.
    pub fn matches(&self, pose: &Pose2, th: &GtThresholds) -> Vec<usize> {
        debug_assert!(th.d_max <= self.cell);
        let (cx, cy) = self.key(pose);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(ids.iter().copied().filter(|&i| th.is_match(&self.poses[i], pose)));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// All matching pairs (index in `a`, index in `b`), sorted. With
/// `same_sequence` only pairs i < j with j − i > window are kept.
pub fn gt_matches(a: &[Pose2], b: &[Pose2], same_sequence: bool, th: &GtThresholds) -> Vec<(usize, usize)> {
    let index = PoseIndex::build(a, th.d_max);
    let mut out = Vec::new();
    for (j, pb) in b.iter().enumerate() {
        for i in index.matches(pb, th) {
            if !same_sequence || (i < j && j - i > th.window) {
                out.push((i, j));
            }
        }
    }
    out.sort_unstable();
    out
}

/// A maximal run of consecutive matched frames of the second sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtEvent {
    /// First and last matched frame (inclusive) in the second sequence.
    pub start: usize,
    pub end: usize,
    /// Frames of the first sequence matched anywhere in the run.
    pub a_frames: Vec<usize>,
}

pub fn gt_events(matches: &[(usize, usize)]) -> Vec<GtEvent> {
    let mut by_b: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for &(i, j) in matches {
        by_b.entry(j).or_default().insert(i);
    }
    let mut events: Vec<GtEvent> = Vec::new();
    let mut a_set = BTreeSet::new();
    for (j, a) in by_b {
        match events.last_mut() {
            Some(ev) if ev.end + 1 == j => ev.end = j,
            _ => {
                if let Some(ev) = events.last_mut() {
                    ev.a_frames = std::mem::take(&mut a_set).into_iter().collect();
                }
                events.push(GtEvent {
                    start: j,
                    end: j,
                    a_frames: Vec::new(),
                });
            }
        }
        a_set.extend(a);
    }
    if let Some(ev) = events.last_mut() {
        ev.a_frames = a_set.into_iter().collect();
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn identical_poses_far_in_time_match() {
        let p = Pose2::new(5.0, 5.0, 0.3);
        let mut seq = vec![p];
        seq.extend((1..30).map(|i| Pose2::new(100.0 + i as f64, 0.0, 0.0)));
        seq.push(p);
        let th = GtThresholds::default();
        assert_eq!(gt_matches(&seq, &seq, true, &th), vec![(0, 30)]);
    }

    #[test]
    fn distance_exactly_d_max_is_no_match() {
        let th = GtThresholds::default();
        let a = Pose2::new(0.0, 0.0, 0.0);
        assert!(!th.is_match(&a, &Pose2::new(3.0, 0.0, 0.0)));
        assert!(th.is_match(&a, &Pose2::new(2.999, 0.0, 0.0)));
        assert!(!th.is_match(&a, &Pose2::new(0.0, 0.0, FRAC_PI_4)));
        assert!(gt_matches(&[a], &[Pose2::new(0.0, 3.0, 0.0)], false, &th).is_empty());
    }

    #[test]
    fn ten_frame_loop_is_one_event() {
        // around a 2 m square, then along its first side again
        let s = [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (2.0, 0.0, FRAC_PI_2),
            (2.0, 1.0, FRAC_PI_2),
            (2.0, 2.0, PI),
            (1.0, 2.0, PI),
            (0.0, 2.0, -FRAC_PI_2),
            (0.0, 1.0, -FRAC_PI_2),
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
        ];
        let poses: Vec<Pose2> = s.iter().map(|&(x, y, h)| Pose2::new(x, y, h)).collect();
        let th = GtThresholds {
            d_max: 0.5,
            theta_max: FRAC_PI_4,
            window: 2,
        };
        let m = gt_matches(&poses, &poses, true, &th);
        assert_eq!(m, vec![(0, 8), (1, 9)]);
        assert_eq!(
            gt_events(&m),
            vec![GtEvent {
                start: 8,
                end: 9,
                a_frames: vec![0, 1],
            }]
        );
    }

    #[test]
    fn events_split_on_gaps() {
        let m = [(0, 10), (1, 11), (0, 11), (5, 20), (6, 22)];
        let ev = gt_events(&m);
        assert_eq!(ev.len(), 3);
        assert_eq!((ev[0].start, ev[0].end, ev[0].a_frames.clone()), (10, 11, vec![0, 1]));
        assert_eq!((ev[1].start, ev[1].end), (20, 20));
        assert_eq!(ev[2].a_frames, vec![6]);
        assert!(gt_events(&[]).is_empty());
    }

    fn poses() -> impl Strategy<Value = Vec<Pose2>> {
        prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64), 0..40)
            .prop_map(|v| v.into_iter().map(|(x, y, h)| Pose2::new(x, y, h)).collect())
    }

    proptest! {
        #[test]
        fn matches_are_symmetric(a in poses(), b in poses()) {
            let th = GtThresholds::default();
            let mut ab: Vec<(usize, usize)> = gt_matches(&a, &b, false, &th);
            let mut ba: Vec<(usize, usize)> =
                gt_matches(&b, &a, false, &th).into_iter().map(|(j, i)| (i, j)).collect();
            ab.sort_unstable();
            ba.sort_unstable();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn index_agrees_with_brute_force(a in poses(), q in poses()) {
            let th = GtThresholds::default();
            let index = PoseIndex::build(&a, th.d_max);
            for p in &q {
                let brute: Vec<usize> = (0..a.len()).filter(|&i| th.is_match(&a[i], p)).collect();
                prop_assert_eq!(index.matches(p, &th), brute);
            }
        }
    }
}
