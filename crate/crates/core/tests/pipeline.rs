use regionsel::memory::{MemoryParams, Policy};
use regionsel::sim::{
    gen_synthetic, grid_revisit_route, run_exploration, run_navigation, GtThresholds, NavigationConfig,
    PredictorSource, SessionMode, SyntheticSpec,
};
use regionsel::ClusteringParams;

fn map_params() -> ClusteringParams {
    ClusteringParams {
        r_max: 300.0,
        ..ClusteringParams::default()
    }
}

#[test]
fn default_world_region_count() {
    let spec = SyntheticSpec::default();
    let (world, frames) = gen_synthetic(&spec).unwrap();
    let ex = run_exploration(&frames, &map_params(), &GtThresholds::default()).unwrap();
    // frozen from the reference run of seed 7
    assert_eq!(ex.n_regions(), 51);
    assert_eq!(world.n_zones(), spec.n_regions);
    let ratio = ex.n_regions() as f64 / spec.n_regions as f64;
    assert!((0.7..=1.3).contains(&ratio));
    assert_eq!(ex.loop_edges.len(), 5 * 42);
}

#[test]
fn exploration_is_deterministic() {
    let spec = SyntheticSpec::grid_with_loops(2);
    let (_, frames) = gen_synthetic(&spec).unwrap();
    let a = run_exploration(&frames, &map_params(), &GtThresholds::default()).unwrap();
    let b = run_exploration(&frames, &map_params(), &GtThresholds::default()).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.loop_edges, b.loop_edges);
}

#[test]
fn relocalization_numbers_session_nodes_after_the_map() {
    let spec = SyntheticSpec::grid_with_loops(2);
    let (world, frames) = gen_synthetic(&spec).unwrap();
    let ex = run_exploration(&frames, &map_params(), &GtThresholds::default()).unwrap();
    let route = grid_revisit_route(&spec, &[1], 10.0);
    let session = world.render(&route, "session2", spec.dt, spec.noise_sigma, 99);
    let config = NavigationConfig {
        memory: MemoryParams::with_defaults(Policy::Region),
        ema_alpha: 0.5,
        timing: false,
    };
    let nav = run_navigation(&session, &ex, PredictorSource::Oracle, &config, SessionMode::Relocalize).unwrap();
    assert_eq!(nav.id_offset, ex.len());
    assert_eq!(nav.events.len(), session.len());
    assert!(nav.events.iter().enumerate().all(|(i, e)| e.node == ex.len() + i));
    // every closure found in a relocalization session points into the old map
    assert!(nav
        .events
        .iter()
        .filter_map(|e| e.loop_closed)
        .any(|h| h < ex.len()));
}
