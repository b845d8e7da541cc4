mod common;

use proptest::prelude::*;

use regionsel::clustering::{ClusteringParams, RegionSet};
use regionsel::map::{MapGraph, Pose2};
use regionsel::memory::{MemoryParams, MemoryState, NodeRecord, Policy};
use regionsel::predictor::EmaState;

use common::audit_random_memory;

#[test]
fn randomized_updates_keep_invariants() {
    let mut updates = 0;
    let mut transfers = 0;
    for seed in 100..120 {
        let audit = audit_random_memory(seed, 500);
        assert!(audit.violations.is_empty(), "seed {seed}: {:?}", audit.violations);
        updates += audit.updates;
        transfers += audit.transfers;
    }
    assert_eq!(updates, 10_000);
    assert!(transfers > 0);
}

/// A single region holding every node, so region probabilities cannot
/// discriminate.
fn one_region(n: usize) -> RegionSet {
    let mut g = MapGraph::new();
    for i in 0..n {
        g.add_node(Pose2::new((i % 7) as f64, (i / 7 % 3) as f64, 0.0), i as f64, &[1.0])
            .unwrap();
    }
    let cp = ClusteringParams {
        s_max: 1e9,
        ..ClusteringParams::default()
    };
    let mut regions = RegionSet::new();
    for i in 0..n {
        regions.on_new_node(&g, i, &cp).unwrap();
    }
    assert_eq!(regions.len(), 1);
    regions
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // With k3 = 0 and one region the region policy has nothing to add:
    // U3 is empty and every transfer candidate carries the same
    // probability, so both policies make identical decisions.
    #[test]
    fn region_policy_reduces_to_baseline(
        n_wm in 2usize..12,
        k1 in 0usize..3,
        m_stm in 0usize..4,
        confidence in 0.01f64..1.0,
        picks in proptest::collection::vec(0usize..5, 40..120),
        links in proptest::collection::vec((0usize..1000, 0usize..1000), 0..8),
    ) {
        let k1 = k1.min(n_wm);
        let k2_frac = (n_wm - k1) as f64 / n_wm as f64;
        let n = picks.len();
        let regions = one_region(n);
        let vocab: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.1 }).collect())
            .collect();
        let run = |policy: Policy| {
            let params = MemoryParams::new(n_wm, m_stm, k1, k2_frac, 0.9, policy).unwrap();
            prop_assert_eq!(params.k3(), 0);
            let mut m = MemoryState::new(params);
            let mut ema = EmaState::new(0.5).unwrap();
            let mut events = Vec::new();
            for (id, &f) in picks.iter().enumerate() {
                m.insert_new_node(NodeRecord {
                    id,
                    pose: Pose2::new(id as f64, 0.0, 0.0),
                    feature: vocab[f].clone(),
                    region: Some(0),
                })
                .unwrap();
                for &(a, b) in &links {
                    if a % n == id && b % n < id {
                        m.link(id, b % n).unwrap();
                    }
                }
                events.push(m.wm_update(id, &[confidence], &mut ema, &regions).unwrap());
            }
            Ok(events)
        };
        let region = run(Policy::Region)?;
        let baseline = run(Policy::Baseline)?;
        prop_assert_eq!(region, baseline);
    }

    #[test]
    fn k2_split_respects_capacity(n_wm in 1usize..200, k1 in 0usize..20, frac in 0.0f64..=1.0) {
        match MemoryParams::new(n_wm, 10, k1, frac, 0.85, Policy::Region) {
            Ok(p) => {
                prop_assert!(p.k1 + p.k2() <= n_wm);
                prop_assert_eq!(p.k1 + p.k2() + p.k3(), n_wm);
                prop_assert!(p.k2() as f64 <= frac * n_wm as f64 + 1e-6);
            }
            Err(_) => prop_assert!(k1 + (frac * n_wm as f64 + 1e-9).floor() as usize > n_wm),
        }
    }
}
