//! Fixtures and independent checkers shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use regionsel::clustering::{ClusterChange, ClusteringParams, RegionSet};
use regionsel::map::{planar_distance, MapGraph, NodeId, Pose2};
use regionsel::memory::{MemoryParams, MemoryState, NodeRecord, Policy};
use regionsel::predictor::{loss_and_gradient, EmaState, LabeledExample, PredictorModel};

/// Clustering scale used with 1 m node spacing.
pub fn walk_params() -> ClusteringParams {
    ClusteringParams {
        r_max: 300.0,
        ..ClusteringParams::default()
    }
}

/// Outcome of one clustering fixture.
#[derive(Debug, Default)]
pub struct ClusterAudit {
    pub nodes: usize,
    pub changes: usize,
    pub reassignments: usize,
    pub violations: Vec<String>,
}

/// Random walk confined to a 30 m box, one node per ~1 m. Revisits within
/// 1 m of an older node (more than 10 ids back) add a loop edge before the
/// node is clustered.
pub fn audit_random_walk(seed: u64, n: usize, params: &ClusteringParams) -> ClusterAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = Normal::new(0.0, 0.5).unwrap();
    let mut graph = MapGraph::new();
    let mut regions = RegionSet::new();
    let mut audit = ClusterAudit {
        nodes: n,
        ..ClusterAudit::default()
    };
    let (mut x, mut y, mut yaw) = (15.0f64, 15.0f64, 0.0f64);

    for i in 0..n {
        if i > 0 {
            yaw += turn.sample(&mut rng);
            let step = rng.random_range(0.5..1.5);
            let (nx, ny) = (x + step * yaw.cos(), y + step * yaw.sin());
            if !(0.0..=30.0).contains(&nx) || !(0.0..=30.0).contains(&ny) {
                yaw += std::f64::consts::PI;
            } else {
                (x, y) = (nx, ny);
            }
        }
        let id = graph.add_node(Pose2::new(x, y, yaw), i as f64, &[1.0]).unwrap();
        let here = graph.pose(id);
        let revisit = (0..id.saturating_sub(10))
            .map(|j| (planar_distance(&graph.pose(j), &here), j))
            .filter(|&(d, _)| d < 1.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, j)) = revisit {
            graph.add_loop_edge(j, id).unwrap();
        }

        let mut last_total = oracle_dispersion(&graph, &regions, params);
        let mut violations = Vec::new();
        let mut changes = 0;
        let mut moves = 0;
        regions
            .on_new_node_observed(&graph, id, params, |rs, change| {
                changes += 1;
                let total = oracle_dispersion(&graph, rs, params);
                if let ClusterChange::Reassigned { node, .. } = change {
                    moves += 1;
                    if total.partial_cmp(&last_total) != Some(std::cmp::Ordering::Less) {
                        violations.push(format!("step {id}: moving {node} raised dispersion {last_total} -> {total}"));
                    }
                }
                last_total = total;
                if let Err(e) = check_partition(&graph, rs, id) {
                    violations.push(format!("step {id}: {e}"));
                }
            })
            .unwrap();
        audit.changes += changes;
        audit.reassignments += moves;
        audit.violations.extend(violations);
        if audit.violations.len() > 10 {
            break;
        }
    }
    audit
}

/// Partition exactness over nodes `0..=last`, connectivity of every cluster
/// and cached moments against a from-scratch recomputation.
pub fn check_partition(graph: &MapGraph, rs: &RegionSet, last: NodeId) -> Result<(), String> {
    let mut seen = HashSet::new();
    for c in rs.clusters() {
        if c.members().is_empty() {
            return Err(format!("cluster {} is empty", c.id));
        }
        for &m in c.members() {
            if !seen.insert(m) {
                return Err(format!("node {m} in two clusters"));
            }
            if rs.region_of(m) != Some(c.id) {
                return Err(format!("node {m} lookup disagrees with cluster {}", c.id));
            }
        }
        if !connected(graph, c.members()) {
            return Err(format!("cluster {} is disconnected", c.id));
        }
        let n = c.members().len() as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for &m in c.members() {
            let p = graph.pose(m);
            cx += p.x;
            cy += p.y;
        }
        cx /= n;
        cy /= n;
        let ss: f64 = c
            .members()
            .iter()
            .map(|&m| {
                let p = graph.pose(m);
                (p.x - cx).powi(2) + (p.y - cy).powi(2)
            })
            .sum();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
        let [gx, gy] = c.centroid();
        if !close(gx, cx) || !close(gy, cy) || !close(c.sum_sq(), ss) {
            return Err(format!(
                "cluster {} moments drifted: cached ({gx}, {gy}, {}) vs ({cx}, {cy}, {ss})",
                c.id,
                c.sum_sq()
            ));
        }
    }
    if seen.len() != last + 1 || (0..=last).any(|i| !seen.contains(&i)) {
        return Err(format!("{} assigned nodes, expected {}", seen.len(), last + 1));
    }
    Ok(())
}

/// Σ s″ recomputed from member poses: Σ‖p − c‖² / (r_max·min(1, √(n/n_des)))
/// for clusters of two or more nodes.
pub fn oracle_dispersion(graph: &MapGraph, rs: &RegionSet, params: &ClusteringParams) -> f64 {
    rs.clusters()
        .filter(|c| c.members().len() > 1)
        .map(|c| {
            let pts: Vec<Pose2> = c.members().iter().map(|&m| graph.pose(m)).collect();
            let n = pts.len() as f64;
            let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
            let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
            let ss: f64 = pts.iter().map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2)).sum();
            ss / (params.r_max * (n / params.n_des as f64).sqrt().min(1.0))
        })
        .sum()
}

fn connected(graph: &MapGraph, members: &BTreeSet<NodeId>) -> bool {
    let Some(&start) = members.iter().next() else {
        return true;
    };
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        for &nb in graph.neighbors(cur) {
            if members.contains(&nb) && seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    seen.len() == members.len()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Tally of a randomized memory run.
#[derive(Debug, Default)]
pub struct MemoryAudit {
    pub updates: usize,
    pub transfers: usize,
    pub immunized: usize,
    pub violations: Vec<String>,
}

/// Drives `updates` wm_update calls with random parameters, random region
/// labels, random confidences, random extra links and features drawn from a
/// small vocabulary (so hypotheses and loop closures occur). Checks the
/// structural invariants and that no immunized node is transferred.
pub fn audit_random_memory(seed: u64, updates: usize) -> MemoryAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_wm = rng.random_range(2..24);
    let k1 = rng.random_range(0..=n_wm.min(3));
    let k2_frac = rng.random_range(0.0..=((n_wm - k1) as f64 / n_wm as f64));
    let m_stm = rng.random_range(0..6);
    let policy = if rng.random_bool(0.5) { Policy::Region } else { Policy::Baseline };
    let params = MemoryParams::new(n_wm, m_stm, k1, k2_frac, rng.random_range(0.6..0.99), policy).unwrap();

    // the memory only reads centroids from the region set
    let mut graph = MapGraph::new();
    let mut regions = RegionSet::new();
    let cp = ClusteringParams {
        r_max: 20.0,
        ..ClusteringParams::default()
    };
    let mut positions = Vec::with_capacity(updates);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    for i in 0..updates {
        x += rng.random_range(-1.0..1.0);
        y += rng.random_range(-1.0..1.0);
        let id = graph.add_node(Pose2::new(x, y, 0.0), i as f64, &[1.0]).unwrap();
        regions.on_new_node(&graph, id, &cp).unwrap();
        positions.push(Pose2::new(x, y, 0.0));
    }
    regions.compact();
    let n_regions = regions.len();

    let vocab: Vec<Vec<f64>> = (0..12).map(|_| random_unit(&mut rng, 6)).collect();
    let mut m = MemoryState::new(params);
    let mut ema = EmaState::new(rng.random_range(0.1..=1.0)).unwrap();
    let mut audit = MemoryAudit::default();

    for (id, &pose) in positions.iter().enumerate() {
        let feature = vocab[rng.random_range(0..vocab.len())].clone();
        let region = rng.random_bool(0.9).then(|| regions.region_of(id)).flatten();
        m.insert_new_node(NodeRecord {
            id,
            pose,
            feature,
            region,
        })
        .unwrap();
        if id > 20 && rng.random_bool(0.05) {
            m.link(id, rng.random_range(0..id - 10)).unwrap();
        }
        let o: Vec<f64> = (0..n_regions).map(|_| rng.random::<f64>().powi(4)).collect();
        let ev = m.wm_update(id, &o, &mut ema, &regions).unwrap();
        audit.updates += 1;
        audit.transfers += ev.transferred.len();
        audit.immunized += ev.immunized.len();
        if let Some(t) = ev.transferred.iter().find(|t| ev.immunized.contains(t)) {
            audit.violations.push(format!("update {id}: immunized node {t} transferred"));
        }
        if ev.overflow || ev.wm_size > n_wm {
            audit.violations.push(format!("update {id}: WM holds {} > {n_wm}", ev.wm_size));
        }
        if ev.wm_size != m.wm_len() {
            audit.violations.push(format!("update {id}: reported WM size {} != {}", ev.wm_size, m.wm_len()));
        }
        if let Err(e) = m.check_invariants() {
            audit.violations.push(format!("update {id}: {e}"));
        }
        if audit.violations.len() > 10 {
            break;
        }
    }
    audit
}

/// Largest relative error between the analytic focal-loss gradient and
/// central finite differences on a random D = 8, H = 6, R = 4 model.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PredictorModel::new(8, 6, 4, seed).unwrap();
    let batch: Vec<LabeledExample> = (0..5)
        .map(|_| LabeledExample {
            feature: random_unit(&mut rng, 8),
            region: rng.random_range(0..4),
        })
        .collect();
    let refs: Vec<&LabeledExample> = batch.iter().collect();
    let gamma = rng.random_range(0.0..3.0);
    let eps = 1e-7;
    let (_, grads) = loss_and_gradient(&model, &refs, gamma, eps);
    let analytic = grads.flatten();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        *plus.params_mut().nth(i).unwrap() += h;
        let mut minus = model.clone();
        *minus.params_mut().nth(i).unwrap() -= h;
        let numeric =
            (loss_and_gradient(&plus, &refs, gamma, eps).0 - loss_and_gradient(&minus, &refs, gamma, eps).0) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Eight well-separated classes on the unit sphere in 16 dimensions.
/// Returns (train, test).
pub fn separable_dataset(seed: u64, per_class: usize) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..8).map(|_| random_unit(&mut rng, 16)).collect();
    let noise = Normal::new(0.0, 0.08).unwrap();
    let sample = |rng: &mut ChaCha8Rng, c: usize| {
        let v: Vec<f64> = centers[c].iter().map(|x| x + noise.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        LabeledExample {
            feature: v.into_iter().map(|x| x / n).collect(),
            region: c,
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..8 {
        for _ in 0..per_class {
            train.push(sample(&mut rng, c));
            test.push(sample(&mut rng, c));
        }
    }
    (train, test)
}

pub fn unit(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; 8];
    v[i] = 1.0;
    v
}

/// Three regions of two nodes each, {0, 1}, {2, 3}, {4, 5}, 100 m apart,
/// all in LTM and chained by links; node i carries feature e_i. N = 3,
/// k1 = k2 = k3 = 1, one STM slot, loop window 1.
pub fn golden_fixture() -> (MemoryState, RegionSet) {
    let mut g = MapGraph::new();
    for i in 0..6 {
        g.add_node(Pose2::new(100.0 * (i / 2) as f64 + (i % 2) as f64, 0.0, 0.0), i as f64, &[1.0])
            .unwrap();
    }
    let mut regions = RegionSet::new();
    let cp = ClusteringParams {
        s_prime: 0.0,
        s_max: 10.0,
        n_des: 2,
        r_max: 5.0,
        shape_factor: 1.0,
    };
    for i in 0..6 {
        regions.on_new_node(&g, i, &cp).unwrap();
    }
    assert_eq!(regions.len(), 3);
    let params = MemoryParams::new(3, 1, 1, 0.34, 0.85, Policy::Region)
        .unwrap()
        .with_loop_window(1);
    assert_eq!((params.k2(), params.k3()), (1, 1));
    let mut m = MemoryState::new(params);
    for i in 0..6 {
        m.preload_ltm(
            NodeRecord {
                id: i,
                pose: g.pose(i),
                feature: unit(i),
                region: regions.region_of(i),
            },
            &regions,
        )
        .unwrap();
    }
    for i in 0..5 {
        m.link(i, i + 1).unwrap();
    }
    (m, regions)
}

pub fn golden_record(id: NodeId, feature: usize) -> NodeRecord {
    NodeRecord {
        id,
        pose: Pose2::new(300.0 + (id - 6) as f64, 0.0, 0.0),
        feature: unit(feature),
        region: None,
    }
}
