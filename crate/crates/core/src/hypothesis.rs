//! Multi-model hypothesize-and-verify over loop closure constraints.
//!
//! A hypothesis is an ordered set of constraint ids together with the
//! trajectory obtained by optimizing the pose graph with exactly those loop
//! edges. Hypotheses are seeded from a single random constraint and extended
//! one constraint at a time. Each extension picks a constraint that the
//! parent trajectory contradicts (gap strictly above `t_p`), so that children
//! explore trajectories unlike their parents. Verification counts how many
//! constraints of the whole history each trajectory agrees with.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{is_consistent, Consistency, ConsistencyTable, ConstraintHistory, HypothesisId};
use crate::pose_graph::{
    optimize, Convergence, EdgeWeights, LoopEdge, Odometry, OptimizerConfig, PoseGraph, PoseGraphError, Trajectory,
};
use crate::se2::Pose2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("constraint {0} is not in the history")]
    UnknownConstraint(usize),
    #[error(transparent)]
    Graph(#[from] PoseGraphError),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Frames per window.
    pub window: usize,
    /// Top-ranked hypotheses used as parents in each generation iteration.
    pub parents_per_window: usize,
    /// Generation iterations per window; every parent slot yields one child
    /// per iteration.
    pub children_per_parent: usize,
    /// Live hypotheses kept after pruning.
    pub n_h_cap: usize,
    /// Consistency threshold in meters.
    pub t_p: f64,
    pub rng_seed: u64,
    pub weights: EdgeWeights,
    pub optimizer: OptimizerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window: 500,
            parents_per_window: 10,
            children_per_parent: 10,
            n_h_cap: 200,
            t_p: 10.0,
            rng_seed: 0,
            weights: EdgeWeights::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl EngineConfig {
    /// New hypotheses per window.
    pub fn births_per_window(&self) -> usize {
        self.parents_per_window * self.children_per_parent
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.window == 0 || self.parents_per_window == 0 || self.children_per_parent == 0 || self.n_h_cap == 0 {
            return bad("window, parents, children and cap must be positive");
        }
        if !(self.t_p > 0.0 && self.t_p.is_finite()) {
            return bad("t_p must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BirthKind {
    Seed,
    Extension,
    /// Extension whose candidate pool was empty; no constraint was added.
    Stagnant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub parent: Option<HypothesisId>,
    pub constraint_ids: Vec<usize>,
    pub trajectory: Trajectory,
    pub consistent_count: usize,
    pub birth_window: usize,
    pub kind: BirthKind,
    pub convergence: Convergence,
}

impl Hypothesis {
    pub fn is_stagnant(&self) -> bool {
        self.kind == BirthKind::Stagnant
    }
}

/// Everything needed to turn a constraint set into a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct GraphContext<'a> {
    pub odometry: &'a Odometry,
    pub weights: EdgeWeights,
    pub optimizer: OptimizerConfig,
}

impl GraphContext<'_> {
    /// Optimizes the odometry graph with loop edges for `constraint_ids`,
    /// starting from `initial` (extended with odometry if it is short).
    pub fn solve(
        &self,
        history: &ConstraintHistory,
        constraint_ids: &[usize],
        initial: &Trajectory,
    ) -> Result<(Trajectory, Convergence), EngineError> {
        let mut graph = PoseGraph::new(self.odometry, self.weights);
        for &id in constraint_ids {
            let c = history.get(id).ok_or(EngineError::UnknownConstraint(id))?;
            graph.add_loop_edge(LoopEdge {
                i: c.t,
                j: c.t_prime,
                weight: self.weights.loop_weight,
            })?;
        }
        let mut start = initial.clone();
        start.extend_with(self.odometry);
        let out = optimize(&graph, &start, &self.optimizer)?;
        Ok((out.trajectory, out.status))
    }
}

/// Ids of evaluable constraints not in `h` whose gap under `h` exceeds `t_p`.
pub fn candidate_pool(h: &Hypothesis, history: &ConstraintHistory, t_p: f64) -> Vec<usize> {
    history
        .iter()
        .filter(|c| !h.constraint_ids.contains(&c.id))
        .filter(|c| match (h.trajectory.get(c.t), h.trajectory.get(c.t_prime)) {
            (Some(a), Some(b)) => a.distance_to(b) > t_p,
            _ => false,
        })
        .map(|c| c.id)
        .collect()
}

/// Picks one uniformly random constraint and optimizes with it alone.
/// Returns `None` for an empty history.
pub fn seed_hypothesis<R: Rng>(
    id: HypothesisId,
    birth_window: usize,
    history: &ConstraintHistory,
    ctx: &GraphContext<'_>,
    rng: &mut R,
) -> Result<Option<Hypothesis>, EngineError> {
    if history.is_empty() {
        return Ok(None);
    }
    let pick = rng.random_range(0..history.len());
    let (trajectory, convergence) = ctx.solve(history, &[pick], &ctx.odometry.integrate())?;
    Ok(Some(Hypothesis {
        id,
        parent: None,
        constraint_ids: vec![pick],
        trajectory,
        consistent_count: 0,
        birth_window,
        kind: BirthKind::Seed,
        convergence,
    }))
}

/// Child of `parent` with one extra constraint drawn uniformly from
/// [`candidate_pool`]. The optimization is warm-started from the parent.
pub fn extend_hypothesis<R: Rng>(
    id: HypothesisId,
    birth_window: usize,
    parent: &Hypothesis,
    history: &ConstraintHistory,
    ctx: &GraphContext<'_>,
    t_p: f64,
    rng: &mut R,
) -> Result<Hypothesis, EngineError> {
    let mut base = parent.clone();
    base.trajectory.extend_with(ctx.odometry);
    let pool = candidate_pool(&base, history, t_p);
    let mut constraint_ids = parent.constraint_ids.clone();
    let kind = if pool.is_empty() {
        BirthKind::Stagnant
    } else {
        constraint_ids.push(pool[rng.random_range(0..pool.len())]);
        BirthKind::Extension
    };
    let (trajectory, convergence) = ctx.solve(history, &constraint_ids, &base.trajectory)?;
    Ok(Hypothesis {
        id,
        parent: Some(parent.id),
        constraint_ids,
        trajectory,
        consistent_count: 0,
        birth_window,
        kind,
        convergence,
    })
}

/// Orders by consistent count (descending), then older birth window, then
/// smaller id.
pub fn rank_hypotheses<'a, I>(hypotheses: I) -> Vec<HypothesisId>
where
    I: IntoIterator<Item = &'a Hypothesis>,
{
    let mut keys: Vec<(usize, usize, HypothesisId)> = hypotheses
        .into_iter()
        .map(|h| (h.consistent_count, h.birth_window, h.id))
        .collect();
    keys.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    keys.into_iter().map(|k| k.2).collect()
}

/// Lineage entry kept for every hypothesis ever born, including pruned ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub id: HypothesisId,
    pub parent: Option<HypothesisId>,
    pub birth_window: usize,
    /// Frames covered by the odometry when the hypothesis was generated.
    pub birth_frames: usize,
    pub kind: BirthKind,
    pub constraint_ids: Vec<usize>,
    /// Parent-trajectory gap of the appended constraint at selection time.
    pub selection_gap: Option<f64>,
    /// Count when pruned, or the current count while live.
    pub final_count: usize,
    /// Rank among live hypotheses; `None` once pruned.
    pub final_rank: Option<usize>,
    pub pruned_in_window: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window: usize,
    pub frames: usize,
    pub history_len: usize,
    pub births: usize,
    pub seeds: usize,
    pub extensions: usize,
    pub stagnant: usize,
    /// Gap tests performed by table refreshes during this window.
    pub evaluated_pairs: usize,
    pub pruned: usize,
    pub live: usize,
}

/// Engine state: odometry so far, live hypotheses, lineage and the table.
#[derive(Debug, Clone)]
pub struct HypothesisEngine {
    config: EngineConfig,
    odometry: Odometry,
    live: BTreeMap<HypothesisId, Hypothesis>,
    lineage: Vec<LineageRecord>,
    table: ConsistencyTable,
    rng: ChaCha8Rng,
    windows_run: usize,
    stats: Vec<WindowStats>,
}

impl HypothesisEngine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            config,
            odometry: Odometry::new(),
            live: BTreeMap::new(),
            lineage: Vec::new(),
            table: ConsistencyTable::new(config.t_p),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            windows_run: 0,
            stats: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Adds the odometry delta for the next frame.
    pub fn push_odometry(&mut self, delta: Pose2) {
        self.odometry.push(delta);
    }

    pub fn odometry(&self) -> &Odometry {
        &self.odometry
    }

    pub fn num_frames(&self) -> usize {
        self.odometry.num_frames()
    }

    pub fn windows_run(&self) -> usize {
        self.windows_run
    }

    pub fn live(&self) -> impl Iterator<Item = &Hypothesis> {
        self.live.values()
    }

    pub fn num_live(&self) -> usize {
        self.live.len()
    }

    pub fn get(&self, id: HypothesisId) -> Option<&Hypothesis> {
        self.live.get(&id)
    }

    pub fn table(&self) -> &ConsistencyTable {
        &self.table
    }

    pub fn window_stats(&self) -> &[WindowStats] {
        &self.stats
    }

    pub fn total_births(&self) -> usize {
        self.lineage.len()
    }

    pub fn ranked(&self) -> Vec<HypothesisId> {
        rank_hypotheses(self.live.values())
    }

    /// Best live hypothesis.
    pub fn top(&self) -> Option<&Hypothesis> {
        self.ranked().first().and_then(|id| self.live.get(id))
    }

    fn refresh(&mut self, history: &ConstraintHistory) -> usize {
        let stats = self
            .table
            .refresh(self.live.iter().map(|(id, h)| (*id, &h.trajectory)), history);
        for (id, h) in self.live.iter_mut() {
            h.consistent_count = self.table.count(*id).unwrap_or(0);
        }
        stats.evaluated
    }

    /// Runs one window: `children_per_parent` generation iterations, each
    /// producing one child per top-ranked parent slot (fresh seeds fill empty
    /// slots), with a table refresh and re-rank after every iteration, then
    /// prunes to the cap.
    pub fn run_window(&mut self, history: &ConstraintHistory) -> Result<WindowStats, EngineError> {
        let window = self.windows_run;
        let mut stats = WindowStats {
            window,
            frames: self.num_frames(),
            history_len: history.len(),
            ..WindowStats::default()
        };

        for h in self.live.values_mut() {
            h.trajectory.extend_with(&self.odometry);
        }
        stats.evaluated_pairs += self.refresh(history);

        for _ in 0..self.config.children_per_parent {
            let parents: Vec<HypothesisId> = self
                .ranked()
                .into_iter()
                .take(self.config.parents_per_window)
                .collect();
            let mut born = Vec::with_capacity(self.config.parents_per_window);
            for slot in 0..self.config.parents_per_window {
                let id = self.lineage.len() as HypothesisId + born.len() as HypothesisId;
                let ctx = GraphContext {
                    odometry: &self.odometry,
                    weights: self.config.weights,
                    optimizer: self.config.optimizer,
                };
                let child = match parents.get(slot) {
                    Some(pid) => {
                        let parent = &self.live[pid];
                        Some(extend_hypothesis(id, window, parent, history, &ctx, self.config.t_p, &mut self.rng)?)
                    }
                    None => seed_hypothesis(id, window, history, &ctx, &mut self.rng)?,
                };
                if let Some(child) = child {
                    born.push(child);
                }
            }
            for child in born {
                let selection_gap = match (child.kind, child.parent) {
                    (BirthKind::Extension, Some(pid)) => {
                        let parent = &self.live[&pid];
                        let c = history.as_slice()[*child.constraint_ids.last().expect("extension adds a constraint")];
                        let mut base = parent.trajectory.clone();
                        base.extend_with(&self.odometry);
                        Some(base.get(c.t).expect("covered").distance_to(base.get(c.t_prime).expect("covered")))
                    }
                    _ => None,
                };
                match child.kind {
                    BirthKind::Seed => stats.seeds += 1,
                    BirthKind::Extension => stats.extensions += 1,
                    BirthKind::Stagnant => stats.stagnant += 1,
                }
                stats.births += 1;
                self.lineage.push(LineageRecord {
                    id: child.id,
                    parent: child.parent,
                    birth_window: window,
                    birth_frames: self.num_frames(),
                    kind: child.kind,
                    constraint_ids: child.constraint_ids.clone(),
                    selection_gap,
                    final_count: 0,
                    final_rank: None,
                    pruned_in_window: None,
                });
                self.live.insert(child.id, child);
            }
            stats.evaluated_pairs += self.refresh(history);
        }

        stats.pruned = self.prune(self.config.n_h_cap);
        stats.live = self.live.len();
        self.windows_run += 1;
        self.update_lineage();
        self.stats.push(stats);
        Ok(stats)
    }

    /// Keeps the `cap` best-ranked live hypotheses. Returns how many were removed.
    pub fn prune(&mut self, cap: usize) -> usize {
        if self.live.len() <= cap {
            return 0;
        }
        let ranked = self.ranked();
        let mut removed = 0;
        for id in &ranked[cap..] {
            if let Some(h) = self.live.remove(id) {
                self.table.remove(*id);
                let rec = &mut self.lineage[*id as usize];
                rec.final_count = h.consistent_count;
                rec.final_rank = None;
                rec.pruned_in_window = Some(self.windows_run);
                removed += 1;
            }
        }
        removed
    }

    fn update_lineage(&mut self) {
        for (rank, id) in self.ranked().into_iter().enumerate() {
            let rec = &mut self.lineage[id as usize];
            rec.final_rank = Some(rank);
            rec.final_count = self.live[&id].consistent_count;
        }
    }

    pub fn lineage(&self) -> &[LineageRecord] {
        &self.lineage
    }

    /// Table entries of live hypotheses in rank order: `(rank, id, consistent constraint ids)`.
    pub fn consistency_snapshot(&self) -> Vec<(usize, HypothesisId, Vec<usize>)> {
        self.ranked()
            .into_iter()
            .enumerate()
            .map(|(rank, id)| (rank, id, self.table.consistent_ids(id)))
            .collect()
    }

    /// Count of a live hypothesis recomputed from scratch, bypassing the table.
    pub fn recount(&self, id: HypothesisId, history: &ConstraintHistory) -> Option<usize> {
        let h = self.live.get(&id)?;
        Some(
            history
                .iter()
                .filter(|c| is_consistent(c, &h.trajectory, self.config.t_p) == Consistency::Consistent)
                .count(),
        )
    }
}

/// An extension whose appended constraint was not contradicted by its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub id: HypothesisId,
    pub parent: HypothesisId,
    pub constraint: usize,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub extensions_checked: usize,
    pub violations: Vec<AuditViolation>,
}

/// Rebuilds every hypothesis from its lineage record alone and checks that
/// each extension appended a constraint whose gap under the parent
/// trajectory exceeded `t_p` when it was selected.
///
/// Records must be listed in id order, as exported. Trajectories are
/// reconstructed with the same warm starts the engine uses, from the
/// odometry prefix available at each birth.
pub fn replay_audit(
    records: &[LineageRecord],
    history: &ConstraintHistory,
    odometry: &Odometry,
    config: &EngineConfig,
) -> Result<AuditReport, EngineError> {
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(records.len());
    let mut report = AuditReport::default();
    for (k, rec) in records.iter().enumerate() {
        if rec.id as usize != k {
            return Err(EngineError::InvalidConfig(format!("lineage record {k} has id {}", rec.id)));
        }
        let prefix = Odometry::from_deltas(odometry.deltas()[..rec.birth_frames.saturating_sub(1)].to_vec());
        let ctx = GraphContext {
            odometry: &prefix,
            weights: config.weights,
            optimizer: config.optimizer,
        };
        let start = match rec.parent {
            None => prefix.integrate(),
            Some(p) => {
                let mut base = trajectories
                    .get(p as usize)
                    .cloned()
                    .ok_or_else(|| EngineError::InvalidConfig(format!("parent {p} of {} not yet born", rec.id)))?;
                base.extend_with(&prefix);
                if rec.kind == BirthKind::Extension {
                    report.extensions_checked += 1;
                    let appended = *rec
                        .constraint_ids
                        .last()
                        .ok_or_else(|| EngineError::InvalidConfig(format!("extension {} has no constraints", rec.id)))?;
                    let c = history.get(appended).ok_or(EngineError::UnknownConstraint(appended))?;
                    let gap = match (base.get(c.t), base.get(c.t_prime)) {
                        (Some(a), Some(b)) => Some(a.distance_to(b)),
                        _ => None,
                    };
                    if !gap.is_some_and(|g| g > config.t_p) {
                        report.violations.push(AuditViolation {
                            id: rec.id,
                            parent: p,
                            constraint: appended,
                            gap,
                        });
                    }
                }
                base
            }
        };
        let (traj, _) = ctx.solve(history, &rec.constraint_ids, &start)?;
        trajectories.push(traj);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintCandidate;

    fn square_odometry(laps: usize, side: usize) -> Odometry {
        let mut deltas = Vec::new();
        for _ in 0..laps * 4 {
            for k in 0..side {
                let turn = if k + 1 == side { std::f64::consts::FRAC_PI_2 } else { 0.0 };
                deltas.push(Pose2::new(1.0, 0.0, turn));
            }
        }
        Odometry::from_deltas(deltas)
    }

    fn hyp(id: HypothesisId, count: usize, birth: usize) -> Hypothesis {
        Hypothesis {
            id,
            parent: None,
            constraint_ids: vec![],
            trajectory: Trajectory::anchor_only(),
            consistent_count: count,
            birth_window: birth,
            kind: BirthKind::Seed,
            convergence: Convergence::Converged,
        }
    }

    #[test]
    fn rank_tie_rule() {
        let hs = [hyp(0, 5, 0), hyp(1, 9, 1), hyp(2, 9, 0)];
        assert_eq!(rank_hypotheses(&hs), vec![2, 1, 0]);
        assert_eq!(rank_hypotheses(&hs[..1]), vec![0]);
    }

    #[test]
    fn seed_from_single_constraint_is_forced() {
        let odo = square_odometry(2, 30);
        let mut history = ConstraintHistory::new(10);
        history.append([ConstraintCandidate { t: 5, t_prime: 125, score: 0.0 }]).unwrap();
        let ctx = GraphContext { odometry: &odo, weights: EdgeWeights::default(), optimizer: OptimizerConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = seed_hypothesis(0, 0, &history, &ctx, &mut rng).unwrap().unwrap();
        assert_eq!(h.constraint_ids, vec![0]);
        let empty = ConstraintHistory::new(10);
        assert!(seed_hypothesis(0, 0, &empty, &ctx, &mut rng).unwrap().is_none());
    }

    #[test]
    fn seed_is_reproducible() {
        let odo = square_odometry(2, 30);
        let mut history = ConstraintHistory::new(10);
        history.append((0..20).map(|k| ConstraintCandidate { t: k + 1, t_prime: k + 121, score: 0.0 })).unwrap();
        let ctx = GraphContext { odometry: &odo, weights: EdgeWeights::default(), optimizer: OptimizerConfig::default() };
        let a = seed_hypothesis(0, 0, &history, &ctx, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().unwrap();
        let b = seed_hypothesis(0, 0, &history, &ctx, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pool_excludes_members_and_consistent() {
        let odo = Odometry::from_deltas(vec![Pose2::new(1.0, 0.0, 0.0); 99]);
        let mut history = ConstraintHistory::new(5);
        history
            .append([
                ConstraintCandidate { t: 1, t_prime: 8, score: 0.0 },  // gap 7: consistent
                ConstraintCandidate { t: 1, t_prime: 50, score: 0.0 }, // gap 49
                ConstraintCandidate { t: 2, t_prime: 60, score: 0.0 }, // gap 58, member
            ])
            .unwrap();
        let mut h = hyp(0, 0, 0);
        h.trajectory = odo.integrate();
        h.constraint_ids = vec![2];
        assert_eq!(candidate_pool(&h, &history, 10.0), vec![1]);
        // Frames beyond the trajectory are not evaluable and never enter the pool.
        history.append([ConstraintCandidate { t: 3, t_prime: 150, score: 0.0 }]).unwrap();
        assert_eq!(candidate_pool(&h, &history, 10.0), vec![1]);

        let ctx = GraphContext { odometry: &odo, weights: EdgeWeights::default(), optimizer: OptimizerConfig::default() };
        let child = extend_hypothesis(1, 0, &h, &history, &ctx, 10.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(child.constraint_ids, vec![2, 1]);
        assert_eq!(child.parent, Some(0));
        assert_eq!(child.kind, BirthKind::Extension);
    }

    #[test]
    fn empty_pool_gives_stagnant_child() {
        let odo = Odometry::from_deltas(vec![Pose2::new(1.0, 0.0, 0.0); 30]);
        let mut history = ConstraintHistory::new(5);
        history.append([ConstraintCandidate { t: 1, t_prime: 8, score: 0.0 }]).unwrap();
        let mut h = hyp(3, 0, 0);
        h.trajectory = odo.integrate();
        let ctx = GraphContext { odometry: &odo, weights: EdgeWeights::default(), optimizer: OptimizerConfig::default() };
        let child = extend_hypothesis(4, 0, &h, &history, &ctx, 10.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(child.is_stagnant());
        assert!(child.constraint_ids.is_empty());
        assert_eq!(child.parent, Some(3));
    }

    #[test]
    fn prune_keeps_top_ranked() {
        let mut engine = HypothesisEngine::new(EngineConfig::default()).unwrap();
        for (id, count, birth) in [(0, 3, 0), (1, 8, 0), (2, 8, 1), (3, 1, 0)] {
            engine.live.insert(id, hyp(id, count, birth));
            engine.lineage.push(LineageRecord {
                id,
                parent: None,
                birth_window: birth,
                birth_frames: 1,
                kind: BirthKind::Seed,
                constraint_ids: vec![],
                selection_gap: None,
                final_count: 0,
                final_rank: None,
                pruned_in_window: None,
            });
        }
        assert_eq!(engine.prune(10), 0);
        assert_eq!(engine.prune(1), 3);
        assert_eq!(engine.live.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(engine.lineage.len(), 4);
        assert_eq!(engine.lineage[2].final_count, 8);
        assert_eq!(engine.lineage[2].pruned_in_window, Some(0));
    }

    #[test]
    fn window_budget_and_lineage() {
        let odo = square_odometry(3, 25);
        let mut history = ConstraintHistory::new(50);
        // True revisits one lap apart plus a few contradictory pairs.
        history.append((2..40).map(|k| ConstraintCandidate { t: k, t_prime: k + 100, score: 0.0 })).unwrap();
        history.append([ConstraintCandidate { t: 10, t_prime: 160, score: 0.0 }]).unwrap();
        let mut engine = HypothesisEngine::new(EngineConfig { window: 150, n_h_cap: 30, ..EngineConfig::default() }).unwrap();
        for d in odo.deltas() {
            engine.push_odometry(*d);
        }
        let stats = engine.run_window(&history).unwrap();
        assert_eq!(stats.births, 100);
        assert_eq!(stats.seeds, 10);
        assert_eq!(engine.num_live(), 30);
        for rec in engine.lineage() {
            let mut cur = rec;
            while let Some(p) = cur.parent {
                assert!(p < cur.id);
                cur = &engine.lineage()[p as usize];
            }
            assert_eq!(cur.kind, BirthKind::Seed);
            if rec.kind == BirthKind::Extension {
                assert!(rec.selection_gap.unwrap() > 10.0);
            }
        }
        for h in engine.live() {
            assert_eq!(Some(h.consistent_count), engine.recount(h.id, &history));
        }
        let second = engine.run_window(&history).unwrap();
        assert_eq!(second.births, 100);
        assert_eq!(second.seeds, 0);
        assert_eq!(engine.total_births(), 200);
    }

    #[test]
    fn replay_reproduces_engine_and_passes_audit() {
        let odo = square_odometry(3, 25);
        let mut history = ConstraintHistory::new(50);
        history.append((2..40).map(|k| ConstraintCandidate { t: k, t_prime: k + 100, score: 0.0 })).unwrap();
        history.append([ConstraintCandidate { t: 10, t_prime: 160, score: 0.0 }]).unwrap();
        let cfg = EngineConfig { window: 150, n_h_cap: 30, ..EngineConfig::default() };
        let mut engine = HypothesisEngine::new(cfg).unwrap();
        for d in &odo.deltas()[..149] {
            engine.push_odometry(*d);
        }
        engine.run_window(&history).unwrap();
        for d in &odo.deltas()[149..] {
            engine.push_odometry(*d);
        }
        engine.run_window(&history).unwrap();
        let report = replay_audit(engine.lineage(), &history, &odo, &cfg).unwrap();
        assert!(report.extensions_checked > 0);
        assert!(report.violations.is_empty());

        // A hand-written lineage that appends a constraint the parent already
        // satisfies (noise-free odometry, true revisit) is flagged.
        let rec = |id, parent, kind, ids: Vec<usize>| LineageRecord {
            id,
            parent,
            birth_window: 0,
            birth_frames: odo.num_frames(),
            kind,
            constraint_ids: ids,
            selection_gap: None,
            final_count: 0,
            final_rank: None,
            pruned_in_window: None,
        };
        let forged = vec![
            rec(0, None, BirthKind::Seed, vec![0]),
            rec(1, Some(0), BirthKind::Extension, vec![0, 1]),
            rec(2, Some(0), BirthKind::Extension, vec![0, 38]),
        ];
        let bad = replay_audit(&forged, &history, &odo, &cfg).unwrap();
        assert_eq!(bad.extensions_checked, 2);
        assert_eq!(bad.violations.len(), 1);
        assert_eq!(bad.violations[0].id, 1);
        assert!(bad.violations[0].gap.unwrap() < 1e-6);
    }
}
