//! Incremental loop closure verification.
//!
//! Place-recognition matches are treated as unverified loop closure
//! constraints. Trajectory hypotheses are generated by pose-graph
//! optimization over growing subsets of those constraints, ranked by how
//! many constraints each trajectory agrees with, and pruned as the sequence
//! streams in.

pub mod constraints;
pub mod evaluation;
pub mod hypothesis;
pub mod io;
pub mod pipeline;
pub mod pose_graph;
pub mod retrieval;
pub mod se2;
pub mod simulator;

mod linalg;

pub use pose_graph::{
    closure_gap, integrate_odometry, optimize, total_error, Convergence, EdgeWeights, LoopEdge,
    Odometry, OdometryMeasurement, OptimizeOutcome, OptimizerConfig, PoseGraph, PoseGraphError,
    Trajectory,
};
pub use se2::{normalize_angle, Pose2};
pub use constraints::{
    is_consistent, label_ground_truth, Consistency, ConsistencyTable, ConstraintCandidate, ConstraintError,
    ConstraintHistory, GroundTruth, HypothesisId, VprConstraint,
};
pub use hypothesis::{EngineConfig, EngineError, Hypothesis, HypothesisEngine, LineageRecord, WindowStats};
pub use evaluation::{precision_recall, trajectory_rmse, PrCounts, PrPoint};
pub use simulator::{generate, PathShape, RevisitRegistry, World, WorldConfig};
pub use pipeline::{PipelineError, RunConfig};
