//! Precision/recall of consistent constraint sets and trajectory accuracy.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{is_consistent, label_ground_truth, Consistency, ConstraintHistory, GroundTruth};
use crate::hypothesis::{EngineError, GraphContext, Hypothesis};
use crate::pose_graph::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("trajectory has {found} poses, ground truth has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("ground truth does not cover frame {frame} (length {len})")]
    GroundTruthTooShort { frame: usize, len: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrCounts {
    /// `None` when nothing was selected.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there are no true constraints.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

/// One row of a precision/recall table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub method: String,
    pub param: String,
    pub seed: u64,
    pub counts: PrCounts,
}

impl PrPoint {
    pub fn new(method: impl Into<String>, param: impl ToString, seed: u64, counts: PrCounts) -> Self {
        Self {
            method: method.into(),
            param: param.to_string(),
            seed,
            counts,
        }
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.method, self.param)
    }

    pub fn precision(&self) -> Option<f64> {
        self.counts.precision()
    }

    pub fn recall(&self) -> Option<f64> {
        self.counts.recall()
    }
}

/// Ground-truth label of every history constraint.
pub fn ground_truth_labels(history: &ConstraintHistory, gt: &GroundTruth) -> Result<Vec<bool>, EvaluationError> {
    history
        .iter()
        .map(|c| match label_ground_truth(c, gt) {
            Consistency::Consistent => Ok(true),
            Consistency::Inconsistent => Ok(false),
            Consistency::NotEvaluable => Err(EvaluationError::GroundTruthTooShort {
                frame: c.t_prime,
                len: gt.len(),
            }),
        })
        .collect()
}

/// Set arithmetic between a selected subset and the labels, both indexed by
/// constraint id.
pub fn pr_counts(selected: &[bool], labels: &[bool]) -> PrCounts {
    let mut out = PrCounts::default();
    for (&s, &l) in selected.iter().zip(labels) {
        match (s, l) {
            (true, true) => out.tp += 1,
            (true, false) => out.fp += 1,
            (false, true) => out.fn_ += 1,
            (false, false) => {}
        }
    }
    out
}

/// Counts for the set of history constraints consistent with `traj`.
pub fn trajectory_pr(
    traj: &Trajectory,
    history: &ConstraintHistory,
    gt: &GroundTruth,
    t_p: f64,
) -> Result<PrCounts, EvaluationError> {
    let labels = ground_truth_labels(history, gt)?;
    let selected: Vec<bool> = history
        .iter()
        .map(|c| is_consistent(c, traj, t_p) == Consistency::Consistent)
        .collect();
    Ok(pr_counts(&selected, &labels))
}

pub fn precision_recall(h: &Hypothesis, history: &ConstraintHistory, gt: &GroundTruth) -> Result<PrCounts, EvaluationError> {
    trajectory_pr(&h.trajectory, history, gt, gt.t_p)
}

/// Position RMSE after mapping the first estimated pose onto the first true
/// pose.
pub fn trajectory_rmse(traj: &Trajectory, gt: &GroundTruth) -> Result<f64, EvaluationError> {
    if traj.len() != gt.len() {
        return Err(EvaluationError::LengthMismatch {
            expected: gt.len(),
            found: traj.len(),
        });
    }
    let (Some(e0), Some(g0)) = (traj.get(1), gt.trajectory.get(1)) else {
        return Ok(0.0);
    };
    let e0_inv = e0.inverse();
    let sum: f64 = traj
        .poses()
        .iter()
        .zip(gt.trajectory.poses())
        .map(|(e, g)| {
            let aligned = g0.compose(&e0_inv.compose(e));
            let (dx, dy) = (aligned.x - g.x, aligned.y - g.y);
            dx * dx + dy * dy
        })
        .sum();
    Ok((sum / traj.len() as f64).sqrt())
}

/// Random-subset baseline: pose-graph optimization over `x` constraints drawn
/// uniformly without replacement (all of them if the history is smaller).
pub fn random_subset_trajectory(
    history: &ConstraintHistory,
    ctx: &GraphContext<'_>,
    x: usize,
    seed: u64,
) -> Result<(Vec<usize>, Trajectory), EvaluationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.min(history.len());
    let mut ids = index::sample(&mut rng, history.len(), n).into_vec();
    ids.sort_unstable();
    let (traj, _) = ctx.solve(history, &ids, &ctx.odometry.integrate())?;
    Ok((ids, traj))
}

/// Mean and sample spread of one `(method, param)` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrSummary {
    pub method: String,
    pub param: String,
    pub runs: usize,
    /// Runs whose precision was defined.
    pub defined_precision: usize,
    pub mean_precision: Option<f64>,
    pub std_precision: Option<f64>,
    pub defined_recall: usize,
    pub mean_recall: Option<f64>,
    pub std_recall: Option<f64>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

/// Groups points by `(method, param)` and averages over seeds, ignoring
/// undefined values.
pub fn sweep(points: &[PrPoint]) -> Vec<PrSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&PrPoint>> = BTreeMap::new();
    for p in points {
        groups.entry((p.method.clone(), p.param.clone())).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|((method, param), ps)| {
            let prec: Vec<f64> = ps.iter().filter_map(|p| p.precision()).collect();
            let rec: Vec<f64> = ps.iter().filter_map(|p| p.recall()).collect();
            let (mean_precision, std_precision) = mean_std(&prec);
            let (mean_recall, std_recall) = mean_std(&rec);
            PrSummary {
                method,
                param,
                runs: ps.len(),
                defined_precision: prec.len(),
                mean_precision,
                std_precision,
                defined_recall: rec.len(),
                mean_recall,
                std_recall,
            }
        })
        .collect()
}
