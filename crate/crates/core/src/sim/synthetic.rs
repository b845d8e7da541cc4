//! Synthetic trajectories with appearance signatures.
//!
//! A signature mixes a zone archetype (zones are Voronoi cells of seed
//! points spread along the generating route) with a place code: random
//! Fourier features of position and heading, so that nearby poses with
//! similar headings look alike and distant ones are nearly orthogonal.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sequence::Frame;
use super::SimError;
use crate::map::{l2_normalize, Pose2};

/// Scale of the heading embedding: a quarter turn moves the place code as
/// far as ~2 correlation lengths of translation.
const HEADING_SCALE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// One lap of a circle, ending one step before the start.
    Loop,
    /// One lap of a lemniscate.
    FigureEight,
    /// A row of square blocks; each is circled once and its first side
    /// driven again before moving on, planting one loop per block.
    Grid,
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loop" => Ok(Layout::Loop),
            "figure-eight" => Ok(Layout::FigureEight),
            "grid" => Ok(Layout::Grid),
            other => Err(format!("unknown layout {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub layout: Layout,
    pub n_frames: usize,
    /// Number of appearance zones.
    pub n_regions: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub dim: usize,
    /// Distance between consecutive frames, m.
    pub step: f64,
    /// Side of a grid block, m.
    pub block_side: f64,
    /// Share of the zone archetype in a clean signature, in [0, 1].
    pub zone_weight: f64,
    /// Correlation length of the place code, m.
    pub length_scale: f64,
    /// Time between frames, s.
    pub dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            layout: Layout::Grid,
            n_frames: 1050,
            n_regions: 50,
            noise_sigma: 0.04,
            seed: 7,
            dim: 64,
            step: 1.0,
            block_side: 40.0,
            zone_weight: 0.6,
            length_scale: 2.0,
            dt: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.into()));
        if self.n_frames < 2 {
            return bad("n_frames must be >= 2");
        }
        if self.n_regions == 0 || self.dim == 0 {
            return bad("n_regions and dim must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !(self.step > 0.0) || !(self.dt > 0.0) {
            return bad("noise_sigma must be >= 0, step and dt positive");
        }
        if !(self.block_side > 0.0) || !(self.length_scale > 0.0) {
            return bad("block_side and length_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.zone_weight) {
            return bad("zone_weight must lie in [0, 1]");
        }
        Ok(())
    }

    /// Frames of one grid block: the lap, the repeated first side and the
    /// quarter-side gap to the next block.
    pub fn grid_block_frames(&self) -> usize {
        (5.25 * self.block_side / self.step).round() as usize
    }

    /// Grid spec planting exactly `loops` loops.
    pub fn grid_with_loops(loops: usize) -> Self {
        let mut spec = Self::default();
        spec.n_frames = loops * spec.grid_block_frames();
        spec
    }

    fn block_origin(&self, block: usize) -> f64 {
        block as f64 * 1.25 * self.block_side
    }
}

/// Samples `n` poses at arc-length spacing `step` along a polyline. A
/// sample on a vertex takes the heading of the outgoing segment.
fn walk(waypoints: &[[f64; 2]], step: f64, n: usize) -> Vec<Pose2> {
    let mut cum = vec![0.0];
    for w in waypoints.windows(2) {
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + len);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = k as f64 * step;
        if s > total + 1e-9 {
            break;
        }
        while seg + 2 < waypoints.len() && s >= cum[seg + 1] - 1e-9 {
            seg += 1;
        }
        let (a, b) = (waypoints[seg], waypoints[seg + 1]);
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { ((s - cum[seg]) / len).min(1.0) } else { 0.0 };
        let x = a[0] + u * (b[0] - a[0]);
        let y = a[1] + u * (b[1] - a[1]);
        out.push(Pose2::new(x, y, (b[1] - a[1]).atan2(b[0] - a[0])));
    }
    out
}

fn grid_waypoints(spec: &SyntheticSpec, blocks: usize) -> Vec<[f64; 2]> {
    let s = spec.block_side;
    let mut w = Vec::new();
    for b in 0..blocks {
        let x0 = spec.block_origin(b);
        w.extend([[x0, 0.0], [x0 + s, 0.0], [x0 + s, s], [x0, s], [x0, 0.0], [x0 + s, 0.0]]);
    }
    w.push([spec.block_origin(blocks), 0.0]);
    w
}

/// Route of a spec's layout.
pub fn trajectory(spec: &SyntheticSpec) -> Result<Vec<Pose2>, SimError> {
    spec.validate()?;
    let n = spec.n_frames;
    let poses = match spec.layout {
        Layout::Loop => {
            let r = n as f64 * spec.step / TAU;
            (0..n)
                .map(|k| {
                    let a = TAU * k as f64 / n as f64;
                    Pose2::new(r * a.cos(), r * a.sin(), a + PI / 2.0)
                })
                .collect()
        }
        Layout::FigureEight => {
            // the lemniscate of Bernoulli is ≈ 5.2441·a long
            let a = n as f64 * spec.step / 5.244_115;
            let at = |t: f64| {
                let d = 1.0 + t.sin().powi(2);
                [a * t.cos() / d, a * t.sin() * t.cos() / d]
            };
            (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    let [x, y] = at(t);
                    let (p, q) = (at(t - 1e-4), at(t + 1e-4));
                    Pose2::new(x, y, (q[1] - p[1]).atan2(q[0] - p[0]))
                })
                .collect()
        }
        Layout::Grid => {
            let blocks = n.div_ceil(spec.grid_block_frames().max(1)) + 1;
            walk(&grid_waypoints(spec, blocks), spec.step, n)
        }
    };
    Ok(poses)
}

/// A second-session route over a grid map: for each listed block, come up
/// from `detour` meters below the row, drive its first side, and leave
/// downwards again. The detours keep the visits apart.
pub fn grid_revisit_route(spec: &SyntheticSpec, blocks: &[usize], detour: f64) -> Vec<Pose2> {
    let s = spec.block_side;
    let mut w = Vec::new();
    for &b in blocks {
        let x0 = spec.block_origin(b);
        w.extend([[x0, -detour], [x0, 0.0], [x0 + s, 0.0], [x0 + s, -detour]]);
    }
    let total: f64 = w
        .windows(2)
        .map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]))
        .sum();
    walk(&w, spec.step, (total / spec.step).floor() as usize + 1)
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Appearance model shared by every session over the same environment.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    dim: usize,
    zone_seeds: Vec<[f64; 2]>,
    archetypes: Vec<Vec<f64>>,
    frequencies: Vec<[f64; 4]>,
    phases: Vec<f64>,
    length_scale: f64,
    zone_weight: f64,
}

impl World {
    /// Zone seeds are spread evenly (by index) along `route`.
    pub fn new(spec: &SyntheticSpec, route: &[Pose2]) -> Result<Self, SimError> {
        spec.validate()?;
        if route.is_empty() {
            return Err(SimError::NoFrames);
        }
        let n = spec.n_regions.min(route.len());
        let zone_seeds = (0..n)
            .map(|k| route[(2 * k + 1) * route.len() / (2 * n)].xy())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let archetypes = (0..n).map(|_| gaussian_unit(&mut rng, spec.dim)).collect();
        let frequencies = (0..spec.dim)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        let phases = (0..spec.dim).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self {
            dim: spec.dim,
            zone_seeds,
            archetypes,
            frequencies,
            phases,
            length_scale: spec.length_scale,
            zone_weight: spec.zone_weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_zones(&self) -> usize {
        self.zone_seeds.len()
    }

    /// Nearest zone seed; ties go to the lower zone.
    pub fn zone_of(&self, pose: &Pose2) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, s) in self.zone_seeds.iter().enumerate() {
            let d = (pose.x - s[0]).hypot(pose.y - s[1]);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    fn place_code(&self, pose: &Pose2) -> Vec<f64> {
        let u = [
            pose.x / self.length_scale,
            pose.y / self.length_scale,
            HEADING_SCALE * pose.yaw.cos(),
            HEADING_SCALE * pose.yaw.sin(),
        ];
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(w, b)| (w.iter().zip(&u).map(|(a, c)| a * c).sum::<f64>() + b).cos())
            .collect()
    }

    /// Noise-free unit signature of a pose.
    pub fn clean_feature(&self, pose: &Pose2) -> Vec<f64> {
        let arch = &self.archetypes[self.zone_of(pose)];
        let code = l2_normalize(&self.place_code(pose)).unwrap_or_else(|_| arch.clone());
        let w = self.zone_weight;
        let v: Vec<f64> = arch
            .iter()
            .zip(&code)
            .map(|(a, c)| w * a + (1.0 - w * w).sqrt() * c)
            .collect();
        l2_normalize(&v).unwrap_or_else(|_| arch.clone())
    }

    /// Frames at `poses` with isotropic Gaussian noise of deviation
    /// `noise_sigma` per component, renormalized. Noise comes from its own
    /// stream of `noise_seed`.
    pub fn render(&self, poses: &[Pose2], seq: &str, dt: f64, noise_sigma: f64, noise_seed: u64) -> Vec<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        rng.set_stream(1);
        poses
            .iter()
            .enumerate()
            .map(|(k, pose)| {
                let clean = self.clean_feature(pose);
                let feature = if noise_sigma > 0.0 {
                    let noisy: Vec<f64> = clean
                        .iter()
                        .map(|c| c + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    l2_normalize(&noisy).unwrap_or(clean)
                } else {
                    clean
                };
                Frame {
                    seq: seq.to_string(),
                    frame_id: k as u64,
                    t: k as f64 * dt,
                    pose: *pose,
                    feature: Some(feature),
                    image_path: None,
                    zone: Some(self.zone_of(pose)),
                }
            })
            .collect()
    }
}

/// Deterministic synthetic sequence and the world that rendered it.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(World, Vec<Frame>), SimError> {
    let route = trajectory(spec)?;
    let world = World::new(spec, &route)?;
    let frames = world.render(&route, "synthetic", spec.dt, spec.noise_sigma, spec.seed);
    Ok((world, frames))
}
