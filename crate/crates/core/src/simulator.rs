//! Seeded synthetic worlds with loopy paths, drifting odometry and
//! appearance descriptors that can be made to alias.
//!
//! The robot follows a closed polyline at constant speed. Frame `t` sits at
//! lap position `(t - 1) mod L`, so revisits reproduce the exact same pose
//! and the same place cell. Each place cell has a fixed random embedding;
//! descriptors are that embedding plus Gaussian noise. Aliasing is planted by
//! letting chosen pairs of distant cells share one embedding.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::GroundTruth;
use crate::pose_graph::{Odometry, Trajectory};
use crate::retrieval::RawDescriptor;
use crate::se2::Pose2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulatorError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathShape {
    SquareLoop,
    FigureEight,
    CampusGrid,
}

impl PathShape {
    /// Closed polyline through the given corners, starting at the origin.
    fn corners(self, a: f64) -> Vec<(f64, f64)> {
        match self {
            PathShape::SquareLoop => vec![(0.0, 0.0), (a, 0.0), (a, a), (0.0, a)],
            PathShape::FigureEight => vec![
                (0.0, 0.0),
                (a, 0.0),
                (a, a),
                (0.0, a),
                (0.0, 0.0),
                (-a, 0.0),
                (-a, -a),
                (0.0, -a),
            ],
            PathShape::CampusGrid => vec![
                (0.0, 0.0),
                (2.0 * a, 0.0),
                (2.0 * a, a),
                (a, a),
                (a, 2.0 * a),
                (0.0, 2.0 * a),
            ],
        }
    }
}

impl std::str::FromStr for PathShape {
    type Err = SimulatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "square_loop" => Ok(PathShape::SquareLoop),
            "figure_eight" => Ok(PathShape::FigureEight),
            "campus_grid" => Ok(PathShape::CampusGrid),
            other => Err(SimulatorError::InvalidConfig(format!("unknown path shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub rng_seed: u64,
    pub frames: usize,
    pub path_shape: PathShape,
    /// Side length of the path's unit block in meters.
    pub loop_size: f64,
    /// Nominal travel per frame in meters; adjusted so a lap is a whole
    /// number of frames.
    pub step: f64,
    /// Per-step odometry noise `(σ_xy, σ_θ)`.
    pub odo_noise: (f64, f64),
    /// Per-step odometry bias `(b_xy, b_θ)`; `b_xy` applies to forward motion.
    pub drift_bias: (f64, f64),
    pub descriptor_dim: usize,
    pub place_cell: f64,
    pub alias_pairs: usize,
    pub appearance_noise: f64,
    /// Temporal exclusion used when building the revisit registry.
    pub delta_t: usize,
    /// Distance below which two frames count as a revisit.
    pub revisit_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            frames: 1651,
            path_shape: PathShape::SquareLoop,
            loop_size: 45.0,
            step: 0.45,
            odo_noise: (0.01, 0.002),
            drift_bias: (0.0, 0.0005),
            descriptor_dim: 256,
            place_cell: 0.4,
            alias_pairs: 3,
            appearance_noise: 0.25,
            delta_t: 200,
            revisit_radius: 10.0,
        }
    }
}

impl WorldConfig {
    /// Zero noise, zero bias, no aliasing.
    pub fn noiseless(self) -> Self {
        Self {
            odo_noise: (0.0, 0.0),
            drift_bias: (0.0, 0.0),
            alias_pairs: 0,
            appearance_noise: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(m.to_string()));
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if !(self.step > 0.0 && self.loop_size > 0.0 && self.place_cell > 0.0 && self.revisit_radius > 0.0) {
            return bad("step, loop_size, place_cell and revisit_radius must be positive");
        }
        let sigmas = [self.odo_noise.0, self.odo_noise.1, self.appearance_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise levels must be finite and non-negative");
        }
        if !(self.drift_bias.0.is_finite() && self.drift_bias.1.is_finite()) {
            return bad("drift bias must be finite");
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim must be positive");
        }
        Ok(())
    }
}

/// Canonical frame pairs `(t, t')`, `t < t'`, that are true revisits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisitRegistry {
    pairs: Vec<(usize, usize)>,
}

impl RevisitRegistry {
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        for p in pairs.iter_mut() {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    /// Exhaustive scan over all frame pairs.
    pub fn scan(gt: &Trajectory, delta_t: usize, radius: f64) -> Self {
        let poses = gt.poses();
        let mut pairs = Vec::new();
        for (a, pa) in poses.iter().enumerate() {
            for (b, pb) in poses.iter().enumerate().skip(a + delta_t + 1) {
                if pa.distance_to(pb) < radius {
                    pairs.push((a + 1, b + 1));
                }
            }
        }
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, t: usize, t_prime: usize) -> bool {
        let key = (t.min(t_prime), t.max(t_prime));
        self.pairs.binary_search(&key).is_ok()
    }
}

pub type Cell = (i64, i64);

/// Two distant cells sharing one appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasPair {
    /// Cell whose embedding is used by both.
    pub source: Cell,
    pub target: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub ground_truth: GroundTruth,
    pub odometry: Odometry,
    pub descriptors: Vec<RawDescriptor>,
    pub registry: RevisitRegistry,
    pub aliases: Vec<AliasPair>,
    /// Place cell of every frame, index `t - 1`.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub source: Cell,
    pub target: Cell,
    /// Canonical frame pairs with one frame in each cell and a true gap at
    /// or above the revisit radius.
    pub frame_pairs: Vec<(usize, usize)>,
}

const STREAM_ODOMETRY: u64 = 1;
const STREAM_APPEARANCE: u64 = 2;
const STREAM_ALIAS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Closed-form path geometry.
struct Path {
    corners: Vec<(f64, f64)>,
    /// Cumulative arc length at each corner.
    starts: Vec<f64>,
    perimeter: f64,
    lap_frames: usize,
}

impl Path {
    fn new(shape: PathShape, size: f64, step: f64) -> Self {
        let corners = shape.corners(size);
        let mut starts = Vec::with_capacity(corners.len());
        let mut acc = 0.0;
        for (k, a) in corners.iter().enumerate() {
            starts.push(acc);
            let b = corners[(k + 1) % corners.len()];
            acc += (b.0 - a.0).hypot(b.1 - a.1);
        }
        let lap_frames = ((acc / step).round() as usize).max(1);
        Self {
            corners,
            starts,
            perimeter: acc,
            lap_frames,
        }
    }

    /// Pose at lap position `k` (frames since the start of the lap).
    fn pose(&self, k: usize) -> Pose2 {
        let s = k as f64 * self.perimeter / self.lap_frames as f64;
        let seg = self.starts.partition_point(|&st| st <= s).saturating_sub(1);
        let a = self.corners[seg];
        let b = self.corners[(seg + 1) % self.corners.len()];
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let u = (s - self.starts[seg]) / len;
        Pose2::new(a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), (b.1 - a.1).atan2(b.0 - a.0))
    }
}

fn cell_of(p: &Pose2, size: f64) -> Cell {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

fn cell_center(c: Cell, size: f64) -> (f64, f64) {
    ((c.0 as f64 + 0.5) * size, (c.1 as f64 + 0.5) * size)
}

/// Fixed appearance of a cell, independent of visit order.
fn embedding(seed: u64, cell: Cell, dim: usize) -> Vec<f64> {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&cell.0.to_le_bytes());
    key[16..24].copy_from_slice(&cell.1.to_le_bytes());
    key[24..].copy_from_slice(b"lv-place");
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn choose_aliases(cells: &BTreeSet<Cell>, cfg: &WorldConfig) -> Vec<AliasPair> {
    let mut pool: Vec<Cell> = cells.iter().copied().collect();
    pool.shuffle(&mut stream(cfg.rng_seed, STREAM_ALIAS));
    let min_sep = 2.0 * cfg.revisit_radius;
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for (i, &a) in pool.iter().enumerate() {
        if out.len() == cfg.alias_pairs {
            break;
        }
        if used.contains(&a) {
            continue;
        }
        let ca = cell_center(a, cfg.place_cell);
        let partner = pool[i + 1..].iter().copied().find(|b| {
            let cb = cell_center(*b, cfg.place_cell);
            !used.contains(b) && (ca.0 - cb.0).hypot(ca.1 - cb.1) >= min_sep
        });
        if let Some(b) = partner {
            used.insert(a);
            used.insert(b);
            out.push(AliasPair { source: a, target: b });
        }
    }
    out
}

pub fn generate(cfg: &WorldConfig) -> Result<World, SimulatorError> {
    cfg.validate()?;
    let path = Path::new(cfg.path_shape, cfg.loop_size, cfg.step);
    let gt: Vec<Pose2> = (0..cfg.frames).map(|t| path.pose(t % path.lap_frames)).collect();

    let mut odo_rng = stream(cfg.rng_seed, STREAM_ODOMETRY);
    let n_xy = Normal::new(0.0, cfg.odo_noise.0).expect("validated");
    let n_th = Normal::new(0.0, cfg.odo_noise.1).expect("validated");
    let deltas = gt
        .windows(2)
        .map(|w| {
            let d = w[0].between(&w[1]);
            let ex = n_xy.sample(&mut odo_rng);
            let ey = n_xy.sample(&mut odo_rng);
            let et = n_th.sample(&mut odo_rng);
            Pose2::new(d.x + ex + cfg.drift_bias.0, d.y + ey, d.theta + et + cfg.drift_bias.1)
        })
        .collect();

    let cells: Vec<Cell> = gt.iter().map(|p| cell_of(p, cfg.place_cell)).collect();
    let lap_cells: BTreeSet<Cell> = (0..path.lap_frames)
        .map(|k| cell_of(&path.pose(k), cfg.place_cell))
        .collect();
    let aliases = choose_aliases(&lap_cells, cfg);
    let remap: BTreeMap<Cell, Cell> = aliases.iter().map(|a| (a.target, a.source)).collect();

    let mut app_rng = stream(cfg.rng_seed, STREAM_APPEARANCE);
    let n_app = Normal::new(0.0, cfg.appearance_noise).expect("validated");
    let mut cache: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
    let descriptors = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let key = *remap.get(c).unwrap_or(c);
            let base = cache
                .entry(key)
                .or_insert_with(|| embedding(cfg.rng_seed, key, cfg.descriptor_dim));
            RawDescriptor {
                t: i + 1,
                values: base.iter().map(|v| v + n_app.sample(&mut app_rng)).collect(),
            }
        })
        .collect();

    let trajectory = Trajectory::from_poses(gt);
    let registry = RevisitRegistry::scan(&trajectory, cfg.delta_t, cfg.revisit_radius);
    Ok(World {
        config: *cfg,
        ground_truth: GroundTruth {
            trajectory,
            t_p: cfg.revisit_radius,
        },
        odometry: Odometry::from_deltas(deltas),
        descriptors,
        registry,
        aliases,
        cells,
    })
}

/// Planted aliasing: each shared cell pair with the frame pairs it can turn
/// into false constraints.
pub fn aliasing_report(world: &World) -> Vec<AliasEntry> {
    let poses = world.ground_truth.trajectory.poses();
    let frames_in = |c: Cell| -> Vec<usize> {
        world
            .cells
            .iter()
            .enumerate()
            .filter(|(_, x)| **x == c)
            .map(|(i, _)| i + 1)
            .collect()
    };
    world
        .aliases
        .iter()
        .map(|a| {
            let mut frame_pairs = Vec::new();
            for s in frames_in(a.source) {
                for t in frames_in(a.target) {
                    if poses[s - 1].distance_to(&poses[t - 1]) >= world.config.revisit_radius {
                        frame_pairs.push((s.min(t), s.max(t)));
                    }
                }
            }
            frame_pairs.sort_unstable();
            AliasEntry {
                source: a.source,
                target: a.target,
                frame_pairs,
            }
        })
        .collect()
}
