//! Place-recognition constraint history and the consistency lookup table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose_graph::Trajectory;
use crate::retrieval::RetrievalMatch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("constraint {index} ({t}, {t_prime}) lies inside the temporal exclusion window of {delta_t} frames")]
    ExclusionViolation {
        index: usize,
        t: usize,
        t_prime: usize,
        delta_t: usize,
    },
}

/// A frame pair asserted to be the same place. Stored with `t < t_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VprConstraint {
    pub id: usize,
    pub t: usize,
    pub t_prime: usize,
    pub score: f64,
}

/// A constraint before an id has been assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCandidate {
    pub t: usize,
    pub t_prime: usize,
    pub score: f64,
}

impl From<RetrievalMatch> for ConstraintCandidate {
    fn from(m: RetrievalMatch) -> Self {
        Self {
            t: m.query,
            t_prime: m.matched,
            score: m.score,
        }
    }
}

/// Append-only, id-dense list of constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintHistory {
    delta_t: usize,
    constraints: Vec<VprConstraint>,
}

impl ConstraintHistory {
    pub fn new(delta_t: usize) -> Self {
        Self {
            delta_t,
            constraints: Vec::new(),
        }
    }

    pub fn delta_t(&self) -> usize {
        self.delta_t
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&VprConstraint> {
        self.constraints.get(id)
    }

    pub fn as_slice(&self) -> &[VprConstraint] {
        &self.constraints
    }

    pub fn iter(&self) -> std::slice::Iter<'_, VprConstraint> {
        self.constraints.iter()
    }

    /// Appends a batch and returns the assigned ids. If any item violates the
    /// exclusion window the whole batch is rejected.
    pub fn append<I>(&mut self, batch: I) -> Result<Vec<usize>, ConstraintError>
    where
        I: IntoIterator,
        I::Item: Into<ConstraintCandidate>,
    {
        let batch: Vec<ConstraintCandidate> = batch.into_iter().map(Into::into).collect();
        for (index, c) in batch.iter().enumerate() {
            if c.t.abs_diff(c.t_prime) <= self.delta_t {
                return Err(ConstraintError::ExclusionViolation {
                    index,
                    t: c.t,
                    t_prime: c.t_prime,
                    delta_t: self.delta_t,
                });
            }
        }
        let start = self.constraints.len();
        for (k, c) in batch.into_iter().enumerate() {
            self.constraints.push(VprConstraint {
                id: start + k,
                t: c.t.min(c.t_prime),
                t_prime: c.t.max(c.t_prime),
                score: c.score,
            });
        }
        Ok((start..self.constraints.len()).collect())
    }
}

/// Outcome of testing one constraint against one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Consistency {
    Consistent,
    Inconsistent,
    /// The trajectory does not cover both frames yet.
    NotEvaluable,
}

impl Consistency {
    pub fn is_consistent(self) -> bool {
        self == Consistency::Consistent
    }
}

/// Consistent iff the two frames lie strictly closer than `t_p` on `traj`.
pub fn is_consistent(c: &VprConstraint, traj: &Trajectory, t_p: f64) -> Consistency {
    gap_test(c.t, c.t_prime, traj, t_p)
}

fn gap_test(t: usize, t_prime: usize, traj: &Trajectory, t_p: f64) -> Consistency {
    match (traj.get(t), traj.get(t_prime)) {
        (Some(a), Some(b)) => {
            if a.distance_to(b) < t_p {
                Consistency::Consistent
            } else {
                Consistency::Inconsistent
            }
        }
        _ => Consistency::NotEvaluable,
    }
}

/// True trajectory plus the revisit threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub t_p: f64,
}

impl GroundTruth {
    pub const DEFAULT_T_P: f64 = 10.0;

    pub fn new(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            t_p: Self::DEFAULT_T_P,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}

pub fn label_ground_truth(c: &VprConstraint, gt: &GroundTruth) -> Consistency {
    is_consistent(c, &gt.trajectory, gt.t_p)
}

pub type HypothesisId = u64;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    entries: Vec<Consistency>,
    /// Trajectory length when the row was last brought up to date.
    stamp: usize,
    consistent: usize,
    pending: Vec<usize>,
}

/// Work done by one [`ConsistencyTable::refresh`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshStats {
    /// Gap tests performed.
    pub evaluated: usize,
    pub rows_added: usize,
    pub rows_dropped: usize,
}

/// Hypothesis × constraint lookup of [`Consistency`] values.
///
/// Rows assume that a hypothesis trajectory only ever grows at its end;
/// existing poses are never rewritten. Entries are therefore computed once,
/// except `NotEvaluable` ones, which are retried when the trajectory grows.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyTable {
    t_p: f64,
    rows: BTreeMap<HypothesisId, Row>,
}

impl ConsistencyTable {
    pub fn new(t_p: f64) -> Self {
        Self {
            t_p,
            rows: BTreeMap::new(),
        }
    }

    pub fn t_p(&self) -> f64 {
        self.t_p
    }

    /// Brings the table in line with the live hypotheses and the history.
    /// Rows of hypotheses that are no longer live are dropped.
    pub fn refresh<'a, I>(&mut self, live: I, history: &ConstraintHistory) -> RefreshStats
    where
        I: IntoIterator<Item = (HypothesisId, &'a Trajectory)>,
    {
        let mut stats = RefreshStats::default();
        let live: BTreeMap<HypothesisId, &Trajectory> = live.into_iter().collect();
        let before = self.rows.len();
        self.rows.retain(|id, _| live.contains_key(id));
        stats.rows_dropped = before - self.rows.len();

        let constraints = history.as_slice();
        for (&id, traj) in &live {
            let row = self.rows.entry(id).or_insert_with(|| {
                stats.rows_added += 1;
                Row {
                    entries: Vec::new(),
                    stamp: traj.len(),
                    consistent: 0,
                    pending: Vec::new(),
                }
            });
            if traj.len() != row.stamp {
                let pending = std::mem::take(&mut row.pending);
                for idx in pending {
                    let c = &constraints[idx];
                    let v = is_consistent(c, traj, self.t_p);
                    stats.evaluated += 1;
                    row.entries[idx] = v;
                    match v {
                        Consistency::Consistent => row.consistent += 1,
                        Consistency::NotEvaluable => row.pending.push(idx),
                        Consistency::Inconsistent => {}
                    }
                }
                row.stamp = traj.len();
            }
            for c in &constraints[row.entries.len()..] {
                let v = is_consistent(c, traj, self.t_p);
                stats.evaluated += 1;
                match v {
                    Consistency::Consistent => row.consistent += 1,
                    Consistency::NotEvaluable => row.pending.push(c.id),
                    Consistency::Inconsistent => {}
                }
                row.entries.push(v);
            }
        }
        stats
    }

    pub fn remove(&mut self, id: HypothesisId) {
        self.rows.remove(&id);
    }

    pub fn contains(&self, id: HypothesisId) -> bool {
        self.rows.contains_key(&id)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of consistent constraints in a row.
    pub fn count(&self, id: HypothesisId) -> Option<usize> {
        self.rows.get(&id).map(|r| r.consistent)
    }

    pub fn row(&self, id: HypothesisId) -> Option<&[Consistency]> {
        self.rows.get(&id).map(|r| r.entries.as_slice())
    }

    pub fn get(&self, id: HypothesisId, constraint: usize) -> Option<Consistency> {
        self.rows.get(&id).and_then(|r| r.entries.get(constraint).copied())
    }

    pub fn ids(&self) -> impl Iterator<Item = HypothesisId> + '_ {
        self.rows.keys().copied()
    }

    /// Consistent constraint ids of a row, ascending.
    pub fn consistent_ids(&self, id: HypothesisId) -> Vec<usize> {
        self.rows
            .get(&id)
            .map(|r| {
                r.entries
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_consistent())
                    .map(|(k, _)| k)
                    .collect()
            })
            .unwrap_or_default()
    }
}
