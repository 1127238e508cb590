//! Pose graphs over an odometry chain with translation-only loop edges.
//!
//! Frames are numbered from 1. Frame 1 is the anchor: it is fixed at the
//! identity and never moved by [`optimize`]. The odometry delta for frame `t`
//! (`t ≥ 2`) is the relative motion from frame `t − 1` to `t`.
//!
//! The objective is the weighted sum of squared residuals:
//!
//! * odometry edge `t`: `between(x[t−1] ⊕ delta[t], x[t])` as `(dx, dy, dθ)`,
//!   weighted by `(w_xy, w_xy, w_θ)`;
//! * loop edge `(i, j)`: `p(i) − p(j)`, weighted by the edge weight.
//!
//! It is minimized with damped Gauss–Newton. The linear system is solved by
//! [`crate::linalg`], which exploits the chain structure.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_low_rank_update, BlockTridiagonal, LowRankColumn};
use crate::se2::{wrap_angle, Pose2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseGraphError {
    #[error("odometry index gap: expected frame {expected}, found {found}")]
    MissingOdometry { expected: usize, found: usize },
    #[error("frame {frame} out of range 1..={len}")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("trajectory has {found} poses, graph has {expected} frames")]
    LengthMismatch { expected: usize, found: usize },
    #[error("loop edge joins frame {0} to itself")]
    SelfLoop(usize),
    #[error("edge weight must be positive and finite, got {0}")]
    BadWeight(f64),
}

/// Relative motion measured between frame `t − 1` and frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryMeasurement {
    pub t: usize,
    pub delta: Pose2,
}

/// Position-coincidence constraint between two frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Information weights shared by every graph built in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeights {
    /// Odometry translation weight, m⁻².
    pub w_xy: f64,
    /// Odometry rotation weight, rad⁻².
    pub w_theta: f64,
    /// Default loop edge weight, m⁻².
    pub loop_weight: f64,
}

impl Default for EdgeWeights {
    fn default() -> Self {
        Self {
            w_xy: 1.0,
            w_theta: 10.0,
            loop_weight: 1.0,
        }
    }
}

/// Contiguous odometry deltas for frames `2..=T`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    deltas: Vec<Pose2>,
}

impl Odometry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from measurements that must be numbered `2, 3, …` without gaps.
    pub fn from_measurements(measurements: &[OdometryMeasurement]) -> Result<Self, PoseGraphError> {
        let mut deltas = Vec::with_capacity(measurements.len());
        for (k, m) in measurements.iter().enumerate() {
            let expected = k + 2;
            if m.t != expected {
                return Err(PoseGraphError::MissingOdometry {
                    expected,
                    found: m.t,
                });
            }
            deltas.push(m.delta);
        }
        Ok(Self { deltas })
    }

    pub fn from_deltas(deltas: Vec<Pose2>) -> Self {
        Self { deltas }
    }

    /// Appends the delta for the next frame.
    pub fn push(&mut self, delta: Pose2) {
        self.deltas.push(delta);
    }

    /// Number of frames covered, counting the anchor.
    pub fn num_frames(&self) -> usize {
        self.deltas.len() + 1
    }

    /// Delta leading into `frame` (`frame ≥ 2`).
    pub fn delta(&self, frame: usize) -> Option<&Pose2> {
        frame.checked_sub(2).and_then(|k| self.deltas.get(k))
    }

    pub fn deltas(&self) -> &[Pose2] {
        &self.deltas
    }

    pub fn measurements(&self) -> impl Iterator<Item = OdometryMeasurement> + '_ {
        self.deltas
            .iter()
            .enumerate()
            .map(|(k, d)| OdometryMeasurement { t: k + 2, delta: *d })
    }

    /// Dead-reckoned trajectory starting from the identity.
    pub fn integrate(&self) -> Trajectory {
        let mut traj = Trajectory::anchor_only();
        traj.extend_with(self);
        traj
    }
}

/// Poses indexed by frame `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<Pose2>,
}

impl Trajectory {
    pub fn anchor_only() -> Self {
        Self {
            poses: vec![Pose2::identity()],
        }
    }

    pub fn from_poses(poses: Vec<Pose2>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, frame: usize) -> Option<&Pose2> {
        frame.checked_sub(1).and_then(|k| self.poses.get(k))
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    pub fn into_poses(self) -> Vec<Pose2> {
        self.poses
    }

    /// Chains odometry onto the last pose until the trajectory covers every
    /// frame of `odometry`. Existing poses are left untouched.
    ///
    /// For an optimized trajectory whose loop edges all lie inside the
    /// already-covered frames, the result is again the optimum over the
    /// longer chain: the new odometry edges have zero residual.
    pub fn extend_with(&mut self, odometry: &Odometry) {
        while self.poses.len() < odometry.num_frames() {
            let next = self.poses.len() + 1;
            let last = *self.poses.last().expect("trajectory holds the anchor");
            self.poses.push(last.compose(&odometry.deltas[next - 2]));
        }
    }
}

/// Dead-reckons a measurement sequence `t = 2, 3, …` from the identity.
pub fn integrate_odometry(measurements: &[OdometryMeasurement]) -> Result<Trajectory, PoseGraphError> {
    Ok(Odometry::from_measurements(measurements)?.integrate())
}

/// Euclidean distance between the positions of frames `i` and `j`.
pub fn closure_gap(traj: &Trajectory, i: usize, j: usize) -> Result<f64, PoseGraphError> {
    let len = traj.len();
    let a = traj
        .get(i)
        .ok_or(PoseGraphError::FrameOutOfRange { frame: i, len })?;
    let b = traj
        .get(j)
        .ok_or(PoseGraphError::FrameOutOfRange { frame: j, len })?;
    Ok(a.distance_to(b))
}

/// An odometry chain plus loop edges. Borrows the odometry so that many
/// graphs over the same chain can be built cheaply.
#[derive(Debug, Clone)]
pub struct PoseGraph<'a> {
    odometry: &'a Odometry,
    loop_edges: Vec<LoopEdge>,
    weights: EdgeWeights,
}

impl<'a> PoseGraph<'a> {
    pub fn new(odometry: &'a Odometry, weights: EdgeWeights) -> Self {
        Self {
            odometry,
            loop_edges: Vec::new(),
            weights,
        }
    }

    pub fn with_loop_edges(
        odometry: &'a Odometry,
        weights: EdgeWeights,
        edges: impl IntoIterator<Item = LoopEdge>,
    ) -> Result<Self, PoseGraphError> {
        let mut g = Self::new(odometry, weights);
        for e in edges {
            g.add_loop_edge(e)?;
        }
        Ok(g)
    }

    /// Adds a loop edge between two frames using the default loop weight.
    pub fn add_loop(&mut self, i: usize, j: usize) -> Result<(), PoseGraphError> {
        let weight = self.weights.loop_weight;
        self.add_loop_edge(LoopEdge { i, j, weight })
    }

    pub fn add_loop_edge(&mut self, edge: LoopEdge) -> Result<(), PoseGraphError> {
        let len = self.num_frames();
        for f in [edge.i, edge.j] {
            if f == 0 || f > len {
                return Err(PoseGraphError::FrameOutOfRange { frame: f, len });
            }
        }
        if edge.i == edge.j {
            return Err(PoseGraphError::SelfLoop(edge.i));
        }
        if !(edge.weight > 0.0 && edge.weight.is_finite()) {
            return Err(PoseGraphError::BadWeight(edge.weight));
        }
        self.loop_edges.push(edge);
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.odometry.num_frames()
    }

    pub fn odometry(&self) -> &Odometry {
        self.odometry
    }

    pub fn loop_edges(&self) -> &[LoopEdge] {
        &self.loop_edges
    }

    pub fn weights(&self) -> &EdgeWeights {
        &self.weights
    }
}

/// Residual of the odometry edge from `from` to `to` with measurement `delta`.
pub fn odometry_residual(from: &Pose2, to: &Pose2, delta: &Pose2) -> [f64; 3] {
    let predicted_theta = from.theta + delta.theta;
    let (sf, cf) = from.theta.sin_cos();
    let px = from.x + cf * delta.x - sf * delta.y;
    let py = from.y + sf * delta.x + cf * delta.y;
    let (s, c) = predicted_theta.sin_cos();
    let dx = to.x - px;
    let dy = to.y - py;
    [
        c * dx + s * dy,
        -s * dx + c * dy,
        wrap_angle(to.theta - predicted_theta),
    ]
}

/// Jacobians of [`odometry_residual`] with respect to `(x, y, θ)` of `from`
/// and of `to`, row-major.
pub fn odometry_jacobians(from: &Pose2, to: &Pose2, delta: &Pose2) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let e = odometry_residual(from, to, delta);
    let (s, c) = (from.theta + delta.theta).sin_cos();
    // delta translation rotated by −δθ
    let (sd, cd) = delta.theta.sin_cos();
    let ux = cd * delta.x + sd * delta.y;
    let uy = -sd * delta.x + cd * delta.y;
    let j_from = [
        [-c, -s, e[1] + uy],
        [s, -c, -e[0] - ux],
        [0.0, 0.0, -1.0],
    ];
    let j_to = [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]];
    (j_from, j_to)
}

fn check_lengths(graph: &PoseGraph<'_>, traj: &Trajectory) -> Result<(), PoseGraphError> {
    if traj.len() != graph.num_frames() {
        return Err(PoseGraphError::LengthMismatch {
            expected: graph.num_frames(),
            found: traj.len(),
        });
    }
    Ok(())
}

fn error_unchecked(graph: &PoseGraph<'_>, poses: &[Pose2]) -> f64 {
    let w = graph.weights;
    let mut total = 0.0;
    for (k, delta) in graph.odometry.deltas.iter().enumerate() {
        let e = odometry_residual(&poses[k], &poses[k + 1], delta);
        total += w.w_xy * (e[0] * e[0] + e[1] * e[1]) + w.w_theta * e[2] * e[2];
    }
    for edge in &graph.loop_edges {
        let a = &poses[edge.i - 1];
        let b = &poses[edge.j - 1];
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        total += edge.weight * (dx * dx + dy * dy);
    }
    total
}

/// Weighted sum of squared residuals over all edges.
pub fn total_error(graph: &PoseGraph<'_>, traj: &Trajectory) -> Result<f64, PoseGraphError> {
    check_lengths(graph, traj)?;
    Ok(error_unchecked(graph, &traj.poses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Absolute decrease of the total error below which iteration stops.
    pub tol: f64,
    pub initial_damping: f64,
    /// Damping above which the solver gives up and reports degraded convergence.
    pub max_damping: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            initial_damping: 1e-4,
            max_damping: 1e10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    /// Error decrease fell below tolerance, or the gradient vanished.
    Converged,
    MaxIterations,
    /// Damping hit its ceiling without an improving step; the best iterate is returned.
    Degraded,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub trajectory: Trajectory,
    pub final_error: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub status: Convergence,
    /// Total error after each accepted step, starting with the initial error.
    pub error_trace: Vec<f64>,
}

struct Linearization {
    hessian: BlockTridiagonal,
    gradient: Vec<Vector3<f64>>,
    columns: Vec<LowRankColumn>,
}

fn linearize(graph: &PoseGraph<'_>, poses: &[Pose2]) -> Linearization {
    let n = poses.len() - 1;
    let w = graph.weights;
    let weight = Matrix3::from_diagonal(&Vector3::new(w.w_xy, w.w_xy, w.w_theta));
    let mut hessian = BlockTridiagonal::zeros(n);
    let mut gradient = vec![Vector3::zeros(); n];

    for (k, delta) in graph.odometry.deltas.iter().enumerate() {
        // Edge into frame k + 2; variable block of frame f is f − 2.
        let (from, to) = (&poses[k], &poses[k + 1]);
        let e = Vector3::from(odometry_residual(from, to, delta));
        let (jf, jt) = odometry_jacobians(from, to, delta);
        let jf = Matrix3::from_row_slice(&jf.concat());
        let jt = Matrix3::from_row_slice(&jt.concat());
        let we = weight * e;
        let wjt = weight * jt;
        hessian.diag[k] += jt.transpose() * wjt;
        gradient[k] += jt.transpose() * we;
        if k > 0 {
            let wjf = weight * jf;
            hessian.diag[k - 1] += jf.transpose() * wjf;
            hessian.upper[k - 1] += jf.transpose() * wjt;
            gradient[k - 1] += jf.transpose() * we;
        }
    }

    let mut columns = Vec::with_capacity(2 * graph.loop_edges.len());
    for edge in &graph.loop_edges {
        let a = &poses[edge.i - 1];
        let b = &poses[edge.j - 1];
        let r = [a.x - b.x, a.y - b.y];
        let plus = edge.i.checked_sub(2);
        let minus = edge.j.checked_sub(2);
        for (c, rc) in r.iter().enumerate() {
            if let Some(p) = plus {
                gradient[p][c] += edge.weight * rc;
            }
            if let Some(m) = minus {
                gradient[m][c] -= edge.weight * rc;
            }
            columns.push(LowRankColumn {
                plus,
                minus,
                component: c,
                scale: edge.weight.sqrt(),
            });
        }
    }

    Linearization {
        hessian,
        gradient,
        columns,
    }
}

fn apply_step(poses: &[Pose2], step: &[Vector3<f64>]) -> Vec<Pose2> {
    let mut out = Vec::with_capacity(poses.len());
    out.push(poses[0]);
    for (p, d) in poses[1..].iter().zip(step) {
        out.push(Pose2::new(p.x + d[0], p.y + d[1], p.theta + d[2]));
    }
    out
}

/// Minimizes the total error starting from `initial`.
///
/// The returned error is never larger than the initial one, and the anchor
/// pose is copied through unchanged.
pub fn optimize(
    graph: &PoseGraph<'_>,
    initial: &Trajectory,
    config: &OptimizerConfig,
) -> Result<OptimizeOutcome, PoseGraphError> {
    check_lengths(graph, initial)?;
    let mut poses = initial.poses.clone();
    let mut error = error_unchecked(graph, &poses);
    let mut trace = vec![error];
    let mut damping = config.initial_damping;
    let mut iterations = 0;
    let mut status = Convergence::MaxIterations;

    if poses.len() < 2 {
        status = Convergence::Converged;
    }

    while status == Convergence::MaxIterations && iterations < config.max_iters {
        let lin = linearize(graph, &poses);
        let grad_norm = lin.gradient.iter().map(|g| g.amax()).fold(0.0, f64::max);
        if grad_norm <= 1e-10 {
            status = Convergence::Converged;
            break;
        }
        let rhs: Vec<Vector3<f64>> = lin.gradient.iter().map(|g| -g).collect();

        let accepted = loop {
            if damping > config.max_damping {
                break None;
            }
            let Some(step) = solve_low_rank_update(&lin.hessian, damping, &lin.columns, &rhs) else {
                damping *= 10.0;
                continue;
            };
            let candidate = apply_step(&poses, &step);
            let candidate_error = error_unchecked(graph, &candidate);
            if candidate_error < error {
                damping = (damping / 10.0).max(1e-12);
                break Some((candidate, candidate_error));
            }
            damping *= 10.0;
        };

        let Some((candidate, candidate_error)) = accepted else {
            status = Convergence::Degraded;
            break;
        };
        let decrease = error - candidate_error;
        poses = candidate;
        error = candidate_error;
        trace.push(error);
        iterations += 1;
        if decrease < config.tol {
            status = Convergence::Converged;
        }
    }

    Ok(OptimizeOutcome {
        trajectory: Trajectory { poses },
        final_error: error,
        iterations,
        status,
        error_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn straight(n: usize) -> Odometry {
        Odometry::from_deltas(vec![Pose2::new(1.0, 0.0, 0.0); n - 1])
    }

    #[test]
    fn integrate_straight_line() {
        let m = [
            OdometryMeasurement { t: 2, delta: Pose2::new(1.0, 0.0, 0.0) },
            OdometryMeasurement { t: 3, delta: Pose2::new(1.0, 0.0, 0.0) },
        ];
        let traj = integrate_odometry(&m).unwrap();
        assert_eq!(
            traj.poses(),
            &[Pose2::identity(), Pose2::new(1.0, 0.0, 0.0), Pose2::new(2.0, 0.0, 0.0)]
        );
    }

    #[test]
    fn integrate_unit_square() {
        let m: Vec<_> = (0..4)
            .map(|k| OdometryMeasurement { t: k + 2, delta: Pose2::new(1.0, 0.0, PI / 2.0) })
            .collect();
        let traj = integrate_odometry(&m).unwrap();
        let last = traj.get(5).unwrap();
        assert!(last.x.abs() < 1e-12 && last.y.abs() < 1e-12);
        assert!(last.theta.abs() < 1e-12);
        assert!((traj.get(3).unwrap().x - 1.0).abs() < 1e-12);
        assert!((traj.get(3).unwrap().y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_reports_gap() {
        let m = [
            OdometryMeasurement { t: 2, delta: Pose2::identity() },
            OdometryMeasurement { t: 4, delta: Pose2::identity() },
        ];
        assert_eq!(
            integrate_odometry(&m),
            Err(PoseGraphError::MissingOdometry { expected: 3, found: 4 })
        );
    }

    #[test]
    fn integrate_matches_fold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let deltas: Vec<Pose2> = (0..200)
            .map(|_| Pose2::new(rng.random_range(0.0..1.0), rng.random_range(-0.1..0.1), rng.random_range(-0.2..0.2)))
            .collect();
        let traj = Odometry::from_deltas(deltas.clone()).integrate();
        let mut acc = Pose2::identity();
        for (k, d) in deltas.iter().enumerate() {
            acc = acc.compose(d);
            assert_eq!(traj.get(k + 2).unwrap(), &acc);
        }
    }

    #[test]
    fn closure_gap_examples() {
        let traj = straight(11).integrate();
        assert_eq!(closure_gap(&traj, 4, 4).unwrap(), 0.0);
        assert!((closure_gap(&traj, 1, 11).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(
            closure_gap(&traj, 1, 12),
            Err(PoseGraphError::FrameOutOfRange { frame: 12, len: 11 })
        );
    }

    #[test]
    fn total_error_examples() {
        let odo = straight(11);
        let traj = odo.integrate();
        let mut g = PoseGraph::new(&odo, EdgeWeights::default());
        assert_eq!(total_error(&g, &traj).unwrap(), 0.0);
        g.add_loop_edge(LoopEdge { i: 1, j: 4, weight: 2.5 }).unwrap();
        assert!((total_error(&g, &traj).unwrap() - 2.5 * 9.0).abs() < 1e-12);
    }

    #[test]
    fn total_error_matches_recomputation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let deltas: Vec<Pose2> = (0..30)
            .map(|_| Pose2::new(rng.random_range(0.5..1.5), rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.3)))
            .collect();
        let odo = Odometry::from_deltas(deltas.clone());
        let poses: Vec<Pose2> = (0..31)
            .map(|_| Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)))
            .collect();
        let traj = Trajectory::from_poses(poses.clone());
        let w = EdgeWeights { w_xy: 2.0, w_theta: 7.0, loop_weight: 1.0 };
        let mut g = PoseGraph::new(&odo, w);
        g.add_loop_edge(LoopEdge { i: 3, j: 20, weight: 0.7 }).unwrap();
        // Independent route: residual as delta⁻¹ ⊕ (x_from⁻¹ ⊕ x_to).
        let mut expected = 0.0;
        for (k, d) in deltas.iter().enumerate() {
            let e = d.inverse().compose(&poses[k].inverse().compose(&poses[k + 1]));
            expected += 2.0 * (e.x * e.x + e.y * e.y) + 7.0 * e.theta * e.theta;
        }
        expected += 0.7 * poses[2].distance_to(&poses[19]).powi(2);
        assert!((total_error(&g, &traj).unwrap() - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn graph_validation() {
        let odo = straight(5);
        let mut g = PoseGraph::new(&odo, EdgeWeights::default());
        assert_eq!(g.add_loop(2, 2), Err(PoseGraphError::SelfLoop(2)));
        assert!(matches!(g.add_loop(0, 2), Err(PoseGraphError::FrameOutOfRange { .. })));
        assert!(matches!(g.add_loop(1, 6), Err(PoseGraphError::FrameOutOfRange { .. })));
        assert!(g.add_loop_edge(LoopEdge { i: 1, j: 3, weight: 0.0 }).is_err());
        assert!(total_error(&g, &straight(4).integrate()).is_err());
    }

    #[test]
    fn no_loop_edges_is_a_fixed_point() {
        let odo = straight(20);
        let g = PoseGraph::new(&odo, EdgeWeights::default());
        let init = odo.integrate();
        let out = optimize(&g, &init, &OptimizerConfig::default()).unwrap();
        assert_eq!(out.trajectory, init);
        assert_eq!(out.final_error, 0.0);
        assert_eq!(out.status, Convergence::Converged);
    }

    #[test]
    fn open_triangle_closes_and_error_decreases() {
        // 1 → 2 → 3 along two sides of a triangle; loop ties 3 back to 1.
        let odo = Odometry::from_deltas(vec![Pose2::new(1.0, 0.0, PI / 2.0), Pose2::new(1.0, 0.0, 0.0)]);
        let mut g = PoseGraph::new(&odo, EdgeWeights::default());
        g.add_loop(3, 1).unwrap();
        let init = odo.integrate();
        let before = closure_gap(&init, 3, 1).unwrap();
        let out = optimize(&g, &init, &OptimizerConfig::default()).unwrap();
        let after = closure_gap(&out.trajectory, 3, 1).unwrap();
        assert!(after < before);
        assert!(out.error_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.trajectory.get(1), init.get(1));
    }

    #[test]
    fn noise_free_loop_recovers_truth() {
        // Square with 10 frames per side, closing exactly at the start.
        let mut deltas = Vec::new();
        for _side in 0..4 {
            for k in 0..10 {
                let turn = if k == 9 { PI / 2.0 } else { 0.0 };
                deltas.push(Pose2::new(1.0, 0.0, turn));
            }
        }
        let odo = Odometry::from_deltas(deltas);
        let truth = odo.integrate();
        let mut g = PoseGraph::new(&odo, EdgeWeights::default());
        let end = odo.num_frames();
        assert!(closure_gap(&truth, 1, end).unwrap() < 1e-9);
        g.add_loop(1, end).unwrap();
        let out = optimize(&g, &truth, &OptimizerConfig::default()).unwrap();
        for (a, b) in out.trajectory.poses().iter().zip(truth.poses()) {
            assert!(a.distance_to(b) < 1e-6);
        }
    }

    fn random_small_graph(rng: &mut impl Rng) -> (Odometry, Vec<LoopEdge>, Trajectory) {
        let n = rng.random_range(2..=6);
        let deltas: Vec<Pose2> = (0..n - 1)
            .map(|_| Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-PI..PI)))
            .collect();
        let odo = Odometry::from_deltas(deltas);
        let mut edges = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let i = rng.random_range(1..=n);
            let j = rng.random_range(1..=n);
            if i != j {
                edges.push(LoopEdge { i, j, weight: rng.random_range(0.2..3.0) });
            }
        }
        let mut traj = odo.integrate().into_poses();
        for p in traj.iter_mut().skip(1) {
            *p = Pose2::new(p.x + rng.random_range(-0.5..0.5), p.y + rng.random_range(-0.5..0.5), p.theta + rng.random_range(-0.3..0.3));
        }
        (odo, edges, Trajectory::from_poses(traj))
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let a = Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let b = Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let d = Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            let (ja, jb) = odometry_jacobians(&a, &b, &d);
            let h = 1e-6;
            for (which, jac) in [(0, ja), (1, jb)] {
                for col in 0..3 {
                    let bump = |s: f64| {
                        let mut v = if which == 0 { [a.x, a.y, a.theta] } else { [b.x, b.y, b.theta] };
                        v[col] += s;
                        // Raw parameters; no wrap so the difference stays local.
                        let p = Pose2 { x: v[0], y: v[1], theta: v[2] };
                        if which == 0 { odometry_residual(&p, &b, &d) } else { odometry_residual(&a, &p, &d) }
                    };
                    let (plus, minus) = (bump(h), bump(-h));
                    for row in 0..3 {
                        let diff = plus[row] - minus[row];
                        let fd = if row == 2 { wrap_angle(diff) } else { diff } / (2.0 * h);
                        let an = jac[row][col];
                        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "row {row} col {col}: {fd} vs {an}");
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn optimize_never_increases_error_and_keeps_anchor(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (odo, edges, init) = random_small_graph(&mut rng);
            let g = PoseGraph::with_loop_edges(&odo, EdgeWeights::default(), edges).unwrap();
            let out = optimize(&g, &init, &OptimizerConfig::default()).unwrap();
            prop_assert!(out.final_error <= total_error(&g, &init).unwrap());
            prop_assert!(out.error_trace.windows(2).all(|w| w[1] <= w[0]));
            let a0 = init.get(1).unwrap();
            let a1 = out.trajectory.get(1).unwrap();
            prop_assert_eq!(a0.x.to_bits(), a1.x.to_bits());
            prop_assert_eq!(a0.y.to_bits(), a1.y.to_bits());
            prop_assert_eq!(a0.theta.to_bits(), a1.theta.to_bits());
        }
    }
}
