//! End-to-end driver: simulate, stream frames through retrieval and the
//! hypothesis engine, export results, and score them against ground truth.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintHistory, GroundTruth, HypothesisId};
use crate::evaluation::{
    ground_truth_labels, random_subset_trajectory, sweep, trajectory_pr, trajectory_rmse, EvaluationError, PrCounts,
    PrPoint, PrSummary,
};
use crate::hypothesis::{
    replay_audit, AuditReport, BirthKind, EngineConfig, EngineError, GraphContext, HypothesisEngine, LineageRecord,
    WindowStats,
};
use crate::io::{self, Dataset, IoError};
use crate::pose_graph::{Odometry, Trajectory};
use crate::retrieval::{
    compress, encode_binary, fit_pca, read_models, write_models, PcaModel, ProjectionModel, RetrievalConfig,
    RetrievalError, RetrievalIndex,
};
use crate::simulator::{aliasing_report, generate, AliasEntry, SimulatorError, WorldConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.bin";
pub const CONSTRAINTS_FILE: &str = "constraints.csv";
pub const LINEAGE_FILE: &str = "lineage.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const TOP_FILE: &str = "top_hypotheses.csv";
pub const SELECTED_FILE: &str = "selected_constraints.csv";
pub const RUN_STATS_FILE: &str = "run_stats.json";
pub const PR_FILE: &str = "pr.csv";
pub const PR_SUMMARY_FILE: &str = "pr_summary.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_ERROR_FILE: &str = "trajectory_error.csv";
pub const LABELS_FILE: &str = "labeled_constraints.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset has no ground truth")]
    MissingGroundTruth,
    #[error("results directory {path}: {msg}")]
    Results { path: String, msg: String },
}

impl PipelineError {
    /// Short category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Io(IoError::Io { .. }) => "io",
            PipelineError::Io(_) => "format",
            PipelineError::Retrieval(RetrievalError::InvalidConfig(_))
            | PipelineError::Engine(EngineError::InvalidConfig(_)) => "config",
            PipelineError::Retrieval(_) => "retrieval",
            PipelineError::Engine(_) => "engine",
            PipelineError::Constraint(_) => "constraint",
            PipelineError::Evaluation(_) => "evaluation",
            PipelineError::Simulator(_) | PipelineError::Config(_) => "config",
            PipelineError::Json { .. } | PipelineError::Csv { .. } | PipelineError::Results { .. } => "format",
            PipelineError::MissingGroundTruth => "input",
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Every tunable of a run. Serialized verbatim into each manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Seeds the world, the hash projection, the engine and the baseline.
    pub rng_seed: u64,
    pub retrieval: RetrievalConfig,
    pub engine: EngineConfig,
    pub world: WorldConfig,
    /// History stops growing once it holds this many constraints.
    pub max_constraints: Option<usize>,
    /// Random-subset baseline sizes.
    pub ir_grid: Vec<usize>,
    /// Baseline repetitions per size.
    pub ir_seeds: usize,
    /// Matches-per-query settings swept by `run`.
    pub nr_grid: Vec<usize>,
    /// Hypotheses exported as trajectories and in consistency snapshots.
    pub export_top: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            retrieval: RetrievalConfig::default(),
            engine: EngineConfig::default(),
            world: WorldConfig::default(),
            max_constraints: None,
            ir_grid: vec![10, 20, 30, 40, 50],
            ir_seeds: 10,
            nr_grid: vec![5, 10, 20],
            export_top: 10,
        }
    }
}

impl RunConfig {
    /// Propagates the global seed and shared thresholds into the sub-configs.
    pub fn resolved(mut self) -> Self {
        self.world.rng_seed = self.rng_seed;
        self.engine.rng_seed = self.rng_seed;
        self.world.delta_t = self.retrieval.delta_t;
        self.world.revisit_radius = self.engine.t_p;
        self
    }

    pub fn projection_seed(&self) -> u64 {
        self.rng_seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
    }

    pub fn baseline_seed(&self, rep: usize) -> u64 {
        self.rng_seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(rep as u64 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.engine.validate()?;
        self.world.validate()?;
        if self.nr_grid.is_empty() || self.nr_grid.contains(&0) {
            return Err(PipelineError::Config("nr_grid needs positive entries".into()));
        }
        if self.ir_grid.contains(&0) {
            return Err(PipelineError::Config("ir_grid entries must be positive".into()));
        }
        if self.export_top == 0 {
            return Err(PipelineError::Config("export_top must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub frames: usize,
    pub descriptor_dim: usize,
    pub has_ground_truth: bool,
    pub registry_pairs: Option<usize>,
}

impl DatasetInfo {
    pub fn of(data: &Dataset) -> Self {
        Self {
            frames: data.num_frames(),
            descriptor_dim: data.descriptors.first().map_or(0, |d| d.values.len()),
            has_ground_truth: data.ground_truth.is_some(),
            registry_pairs: data.registry.as_ref().map(|r| r.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub dataset: Option<DatasetInfo>,
    /// Where the PCA model came from: `dataset` or a training file name.
    pub pca_source: Option<String>,
    pub aliasing: Option<Vec<AliasEntry>>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            dataset: None,
            pca_source: None,
            aliasing: None,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |source| PipelineError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut any = false;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
        any = true;
    }
    if !any {
        drop(w);
        // csv only writes headers alongside the first record.
        fs::write(path, b"").map_err(|e| IoError::io(path, e))?;
        return Ok(());
    }
    w.flush().map_err(|e| IoError::io(path, e))?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(path))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| IoError::io(path, e).into())
}

/// Generates a world and writes it as a dataset directory with a manifest.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let world = generate(&cfg.world)?;
    let data = Dataset::from_world(&world);
    io::write_dataset(out, &data)?;
    let mut manifest = Manifest::new("simulate", &cfg);
    manifest.dataset = Some(DatasetInfo::of(&data));
    manifest.aliasing = Some(aliasing_report(&world));
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(data)
}

/// Consistent constraint ids of one live hypothesis at a window boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub rank: usize,
    pub id: HypothesisId,
    pub consistent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub window: usize,
    pub frames: usize,
    pub rows: Vec<SnapshotRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub frames: usize,
    pub windows: usize,
    pub matches: usize,
    /// Matches discarded because the history was full.
    pub dropped_by_cap: usize,
    pub history_len: usize,
    pub total_births: usize,
    pub live: usize,
}

/// In-memory outcome of streaming one dataset.
#[derive(Debug, Clone)]
pub struct VerifyRun {
    pub config: RunConfig,
    pub pca: PcaModel,
    pub projection: ProjectionModel,
    pub history: ConstraintHistory,
    pub engine: HypothesisEngine,
    pub snapshots: Vec<Snapshot>,
    pub stats: StreamStats,
}

impl VerifyRun {
    pub fn top_trajectories(&self) -> Vec<(usize, HypothesisId, &Trajectory)> {
        self.engine
            .ranked()
            .into_iter()
            .take(self.config.export_top)
            .enumerate()
            .map(|(rank, id)| (rank, id, &self.engine.get(id).expect("ranked ids are live").trajectory))
            .collect()
    }
}

/// Streams the dataset frame by frame: retrieve, append, and run the engine
/// whenever a window completes. A trailing partial window is processed at
/// the end of the stream. The PCA model defaults to one fitted on the
/// dataset's own descriptors.
pub fn verify_dataset(data: &Dataset, cfg: &RunConfig, pca: Option<PcaModel>) -> Result<VerifyRun> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    data.validate()?;
    let pca = match pca {
        Some(p) => p,
        None => fit_pca(&data.descriptors, cfg.retrieval.k)?,
    };
    let projection = ProjectionModel::random(pca.output_dim(), cfg.retrieval.n_b, cfg.projection_seed());
    let mut index = RetrievalIndex::new(pca.output_dim());
    let mut history = ConstraintHistory::new(cfg.retrieval.delta_t);
    let mut engine = HypothesisEngine::new(cfg.engine)?;
    let mut snapshots = Vec::new();
    let mut stats = StreamStats::default();
    let window = cfg.engine.window;

    let snapshot = |engine: &HypothesisEngine, top: usize| Snapshot {
        window: engine.windows_run() - 1,
        frames: engine.num_frames(),
        rows: engine
            .consistency_snapshot()
            .into_iter()
            .take(top)
            .map(|(rank, id, consistent)| SnapshotRow { rank, id, consistent })
            .collect(),
    };

    for (k, raw) in data.descriptors.iter().enumerate() {
        let t = k + 1;
        if t >= 2 {
            engine.push_odometry(*data.odometry.delta(t).expect("validated frame count"));
        }
        let c = compress(&pca, raw)?;
        let code = encode_binary(&projection, &c);
        let matches = index.query(&code, &c, &cfg.retrieval)?;
        stats.matches += matches.len();
        let room = cfg
            .max_constraints
            .map_or(usize::MAX, |cap| cap.saturating_sub(history.len()));
        stats.dropped_by_cap += matches.len().saturating_sub(room);
        history.append(matches.into_iter().take(room))?;
        index.insert(&code, &c)?;

        let last = t == data.num_frames();
        if t % window == 0 || (last && t % window != 0) {
            engine.run_window(&history)?;
            snapshots.push(snapshot(&engine, cfg.export_top));
        }
    }
    stats.frames = data.num_frames();
    stats.windows = engine.windows_run();
    stats.history_len = history.len();
    stats.total_births = engine.total_births();
    stats.live = engine.num_live();
    Ok(VerifyRun {
        config: cfg,
        pca,
        projection,
        history,
        engine,
        snapshots,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub id: usize,
    pub t: usize,
    pub t_prime: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageRow {
    pub id: HypothesisId,
    pub parent: Option<HypothesisId>,
    pub birth_window: usize,
    pub constraint_ids: String,
    pub final_count: usize,
    pub final_rank: Option<usize>,
    pub birth_frames: usize,
    pub kind: BirthKind,
    pub selection_gap: Option<f64>,
    pub pruned_in_window: Option<usize>,
}

impl From<&LineageRecord> for LineageRow {
    fn from(r: &LineageRecord) -> Self {
        Self {
            id: r.id,
            parent: r.parent,
            birth_window: r.birth_window,
            constraint_ids: r.constraint_ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            final_count: r.final_count,
            final_rank: r.final_rank,
            birth_frames: r.birth_frames,
            kind: r.kind,
            selection_gap: r.selection_gap,
            pruned_in_window: r.pruned_in_window,
        }
    }
}

impl LineageRow {
    pub fn to_record(&self) -> std::result::Result<LineageRecord, String> {
        let constraint_ids = if self.constraint_ids.is_empty() {
            Vec::new()
        } else {
            self.constraint_ids
                .split(';')
                .map(|s| s.parse::<usize>().map_err(|_| format!("bad constraint id {s:?} in hypothesis {}", self.id)))
                .collect::<std::result::Result<_, _>>()?
        };
        Ok(LineageRecord {
            id: self.id,
            parent: self.parent,
            birth_window: self.birth_window,
            birth_frames: self.birth_frames,
            kind: self.kind,
            constraint_ids,
            selection_gap: self.selection_gap,
            final_count: self.final_count,
            final_rank: self.final_rank,
            pruned_in_window: self.pruned_in_window,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRow {
    pub rank: usize,
    pub hypothesis_id: HypothesisId,
    pub consistent_count: usize,
    pub num_constraints: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectedRow {
    constraint_id: usize,
    t: usize,
    t_prime: usize,
    in_hypothesis: bool,
    consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotCsvRow {
    hypothesis_id: HypothesisId,
    rank: usize,
    constraint_id: usize,
}

fn trajectory_file(rank: usize) -> String {
    format!("trajectories/rank_{rank:02}.txt")
}

/// Writes every export of a verify run into `dir`.
pub fn write_results(dir: &Path, run: &VerifyRun, manifest: &Manifest) -> Result<()> {
    mkdir(dir)?;
    mkdir(&dir.join("trajectories"))?;
    mkdir(&dir.join("snapshots"))?;
    write_json(&dir.join(MANIFEST_FILE), manifest)?;

    let model_path = dir.join(MODEL_FILE);
    let mut w = BufWriter::new(fs::File::create(&model_path).map_err(|e| IoError::io(&model_path, e))?);
    write_models(&mut w, &run.pca, &run.projection)?;
    w.flush().map_err(|e| IoError::io(&model_path, e))?;

    write_csv(
        &dir.join(CONSTRAINTS_FILE),
        run.history.iter().map(|c| ConstraintRow {
            id: c.id,
            t: c.t,
            t_prime: c.t_prime,
            score: c.score,
        }),
    )?;
    write_csv(&dir.join(LINEAGE_FILE), run.engine.lineage().iter().map(LineageRow::from))?;
    write_csv(&dir.join(WINDOWS_FILE), run.engine.window_stats().iter().copied())?;

    let top = run.top_trajectories();
    let mut rows = Vec::new();
    for (rank, id, traj) in &top {
        let name = trajectory_file(*rank);
        let path = dir.join(&name);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| IoError::io(&path, e))?);
        io::write_trajectory(&mut w, "trajectory", traj)
            .and_then(|_| w.flush())
            .map_err(|e| IoError::io(&path, e))?;
        let h = run.engine.get(*id).expect("live");
        rows.push(TopRow {
            rank: *rank,
            hypothesis_id: *id,
            consistent_count: h.consistent_count,
            num_constraints: h.constraint_ids.len(),
            file: name,
        });
    }
    write_csv(&dir.join(TOP_FILE), rows)?;

    let selected: Vec<SelectedRow> = match run.engine.top() {
        Some(h) => {
            let consistent = run.engine.table().consistent_ids(h.id);
            run.history
                .iter()
                .filter(|c| consistent.binary_search(&c.id).is_ok() || h.constraint_ids.contains(&c.id))
                .map(|c| SelectedRow {
                    constraint_id: c.id,
                    t: c.t,
                    t_prime: c.t_prime,
                    in_hypothesis: h.constraint_ids.contains(&c.id),
                    consistent: consistent.binary_search(&c.id).is_ok(),
                })
                .collect()
        }
        None => Vec::new(),
    };
    write_csv(&dir.join(SELECTED_FILE), selected)?;

    for snap in &run.snapshots {
        let rows = snap.rows.iter().flat_map(|r| {
            r.consistent.iter().map(move |&c| SnapshotCsvRow {
                hypothesis_id: r.id,
                rank: r.rank,
                constraint_id: c,
            })
        });
        write_csv(&dir.join(format!("snapshots/window_{:03}.csv", snap.window)), rows)?;
    }
    write_json(&dir.join(RUN_STATS_FILE), &run.stats)?;
    Ok(())
}

/// Reads a PCA model from a model file or, failing that, fits one on a
/// descriptor file.
pub fn load_pca(path: &Path, k: usize) -> Result<PcaModel> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    if bytes.starts_with(b"LVRM") {
        return Ok(read_models(bytes.as_slice())?.0);
    }
    let descriptors = io::read_descriptors(bytes.as_slice(), &path.display().to_string())?;
    Ok(fit_pca(&descriptors, k)?)
}

pub fn cmd_verify(cfg: &RunConfig, dataset_dir: &Path, out: &Path, pca_training: Option<&Path>) -> Result<VerifyRun> {
    let data = io::read_dataset(dataset_dir)?;
    let pca = pca_training.map(|p| load_pca(p, cfg.retrieval.k)).transpose()?;
    let run = verify_dataset(&data, cfg, pca)?;
    let mut manifest = Manifest::new("verify", &run.config);
    manifest.dataset = Some(DatasetInfo::of(&data));
    manifest.pca_source = Some(match pca_training {
        Some(p) => p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
        None => "dataset".to_string(),
    });
    write_results(out, &run, &manifest)?;
    Ok(run)
}

/// What evaluation needs from a results directory.
#[derive(Debug, Clone)]
pub struct ResultsBundle {
    pub name: String,
    pub manifest: Manifest,
    pub history: ConstraintHistory,
    pub lineage: Vec<LineageRecord>,
    pub top: Vec<(TopRow, Trajectory)>,
}

impl ResultsBundle {
    /// Bundle of an in-memory run, equivalent to reading its exports back.
    pub fn from_run(name: &str, run: &VerifyRun) -> Self {
        let top = run
            .top_trajectories()
            .into_iter()
            .map(|(rank, id, traj)| {
                let h = run.engine.get(id).expect("live");
                let row = TopRow {
                    rank,
                    hypothesis_id: id,
                    consistent_count: h.consistent_count,
                    num_constraints: h.constraint_ids.len(),
                    file: trajectory_file(rank),
                };
                (row, traj.clone())
            })
            .collect();
        Self {
            name: name.to_string(),
            manifest: Manifest::new("verify", &run.config),
            history: run.history.clone(),
            lineage: run.engine.lineage().to_vec(),
            top,
        }
    }
}

pub fn read_results(dir: &Path) -> Result<ResultsBundle> {
    let bad = |msg: String| PipelineError::Results {
        path: dir.display().to_string(),
        msg,
    };
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let rows: Vec<ConstraintRow> = read_csv_or_empty(&dir.join(CONSTRAINTS_FILE))?;
    let mut history = ConstraintHistory::new(manifest.config.retrieval.delta_t);
    for (k, r) in rows.iter().enumerate() {
        if r.id != k {
            return Err(bad(format!("constraint row {k} has id {}", r.id)));
        }
    }
    history.append(rows.iter().map(|r| crate::constraints::ConstraintCandidate {
        t: r.t,
        t_prime: r.t_prime,
        score: r.score,
    }))?;
    let lineage = read_csv_or_empty::<LineageRow>(&dir.join(LINEAGE_FILE))?
        .iter()
        .map(LineageRow::to_record)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(bad)?;
    let mut top = Vec::new();
    for row in read_csv_or_empty::<TopRow>(&dir.join(TOP_FILE))? {
        let path = dir.join(&row.file);
        let file = fs::File::open(&path).map_err(|e| IoError::io(&path, e))?;
        let traj = io::read_trajectory(file, "trajectory", &path.display().to_string())?;
        top.push((row, traj));
    }
    let name = dir
        .file_name()
        .map_or_else(|| "results".to_string(), |n| n.to_string_lossy().into_owned());
    Ok(ResultsBundle {
        name,
        manifest,
        history,
        lineage,
        top,
    })
}

fn read_csv_or_empty<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let meta = fs::metadata(path).map_err(|e| IoError::io(path, e))?;
    if meta.len() == 0 {
        return Ok(Vec::new());
    }
    read_csv(path)
}

/// Replays the exported lineage of a results directory against its dataset.
pub fn audit_results(bundle: &ResultsBundle, odometry: &Odometry) -> Result<AuditReport> {
    Ok(replay_audit(&bundle.lineage, &bundle.history, odometry, &bundle.manifest.config.engine)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrorRow {
    pub hypothesis_id: String,
    pub rank: Option<usize>,
    pub rmse_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub results: String,
    pub n_r: usize,
    pub frames: usize,
    pub history_len: usize,
    pub gt_true_in_history: usize,
    pub registry_pairs: Option<usize>,
    pub registry_pairs_in_history: Option<usize>,
    pub rank0_id: Option<HypothesisId>,
    pub ilv: PrCounts,
    pub ilv_precision: Option<f64>,
    pub ilv_recall: Option<f64>,
    /// False negatives counted against every true revisit pair instead of
    /// only those retrieved.
    pub ilv_fn_all_revisits: Option<usize>,
    pub rank0_rmse_m: Option<f64>,
    pub odometry_rmse_m: f64,
    pub baseline: Vec<PrSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: Vec<RunSummary>,
    pub sweep: Vec<PrSummary>,
    #[serde(skip)]
    pub points: Vec<PrPoint>,
    #[serde(skip)]
    pub trajectory_errors: Vec<(String, Vec<TrajectoryErrorRow>)>,
    #[serde(skip)]
    pub labels: Vec<(String, Vec<LabelRow>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: usize,
    pub t: usize,
    pub t_prime: usize,
    pub gt_label: bool,
    pub in_registry: Option<bool>,
    pub rank0_consistent: bool,
}

pub fn ilv_param(n_r: usize) -> String {
    format!("nr{n_r}")
}

pub fn ir_param(n_r: usize, x: usize) -> String {
    format!("nr{n_r}_x{x}")
}

/// Scores one results bundle: the rank-0 hypothesis, the random-subset
/// baseline over the same history, and trajectory errors.
pub fn evaluate_bundle(
    bundle: &ResultsBundle,
    data: &Dataset,
) -> Result<(RunSummary, Vec<PrPoint>, Vec<TrajectoryErrorRow>, Vec<LabelRow>)> {
    let gt_traj = data.ground_truth.clone().ok_or(PipelineError::MissingGroundTruth)?;
    let cfg = &bundle.manifest.config;
    let gt = GroundTruth {
        trajectory: gt_traj,
        t_p: cfg.engine.t_p,
    };
    let n_r = cfg.retrieval.n_r;
    let labels = ground_truth_labels(&bundle.history, &gt)?;
    let rank0 = bundle.top.iter().find(|(row, _)| row.rank == 0);

    let (ilv, consistent) = match rank0 {
        Some((_, traj)) => {
            let mask: Vec<bool> = bundle
                .history
                .iter()
                .map(|c| crate::constraints::is_consistent(c, traj, gt.t_p).is_consistent())
                .collect();
            (trajectory_pr(traj, &bundle.history, &gt, gt.t_p)?, mask)
        }
        None => (
            crate::evaluation::pr_counts(&vec![false; labels.len()], &labels),
            vec![false; labels.len()],
        ),
    };
    let mut points = vec![PrPoint::new("ilv", ilv_param(n_r), cfg.rng_seed, ilv)];

    let ctx = GraphContext {
        odometry: &data.odometry,
        weights: cfg.engine.weights,
        optimizer: cfg.engine.optimizer,
    };
    let mut baseline_points = Vec::new();
    if !bundle.history.is_empty() {
        for &x in &cfg.ir_grid {
            for rep in 0..cfg.ir_seeds {
                let (_, traj) = random_subset_trajectory(&bundle.history, &ctx, x, cfg.baseline_seed(rep))?;
                let counts = trajectory_pr(&traj, &bundle.history, &gt, gt.t_p)?;
                baseline_points.push(PrPoint::new("ir", ir_param(n_r, x), rep as u64, counts));
            }
        }
    }
    let baseline = sweep(&baseline_points);
    points.extend(baseline_points);

    let mut errors = Vec::new();
    for (row, traj) in &bundle.top {
        errors.push(TrajectoryErrorRow {
            hypothesis_id: row.hypothesis_id.to_string(),
            rank: Some(row.rank),
            rmse_m: trajectory_rmse(traj, &gt)?,
        });
    }
    let odometry_rmse_m = trajectory_rmse(&data.odometry.integrate(), &gt)?;
    errors.push(TrajectoryErrorRow {
        hypothesis_id: "odometry".to_string(),
        rank: None,
        rmse_m: odometry_rmse_m,
    });

    let registry = data.registry.as_ref();
    let in_registry: Vec<Option<bool>> = bundle
        .history
        .iter()
        .map(|c| registry.map(|r| r.contains(c.t, c.t_prime)))
        .collect();
    let registry_pairs_in_history = registry.map(|_| in_registry.iter().filter(|v| **v == Some(true)).count());
    let ilv_fn_all_revisits = registry.map(|r| {
        let hit = bundle
            .history
            .iter()
            .zip(&consistent)
            .filter(|(c, s)| **s && r.contains(c.t, c.t_prime))
            .count();
        r.len() - hit
    });
    let label_rows = bundle
        .history
        .iter()
        .map(|c| LabelRow {
            id: c.id,
            t: c.t,
            t_prime: c.t_prime,
            gt_label: labels[c.id],
            in_registry: in_registry[c.id],
            rank0_consistent: consistent[c.id],
        })
        .collect();

    let summary = RunSummary {
        results: bundle.name.clone(),
        n_r,
        frames: data.num_frames(),
        history_len: bundle.history.len(),
        gt_true_in_history: labels.iter().filter(|l| **l).count(),
        registry_pairs: registry.map(|r| r.len()),
        registry_pairs_in_history,
        rank0_id: rank0.map(|(row, _)| row.hypothesis_id),
        ilv,
        ilv_precision: ilv.precision(),
        ilv_recall: ilv.recall(),
        ilv_fn_all_revisits,
        rank0_rmse_m: errors.first().filter(|e| e.rank == Some(0)).map(|e| e.rmse_m),
        odometry_rmse_m,
        baseline,
    };
    Ok((summary, points, errors, label_rows))
}

pub fn evaluate(bundles: &[ResultsBundle], data: &Dataset) -> Result<Evaluation> {
    let mut out = Evaluation {
        runs: Vec::new(),
        sweep: Vec::new(),
        points: Vec::new(),
        trajectory_errors: Vec::new(),
        labels: Vec::new(),
    };
    for b in bundles {
        let (summary, points, errors, labels) = evaluate_bundle(b, data)?;
        out.runs.push(summary);
        out.points.extend(points);
        out.trajectory_errors.push((b.name.clone(), errors));
        out.labels.push((b.name.clone(), labels));
    }
    out.sweep = sweep(&out.points);
    Ok(out)
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}

/// Row of the precision/recall table; undefined metrics are spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub method: String,
    pub param: String,
    pub seed: u64,
    pub precision: String,
    pub recall: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl From<&PrPoint> for PrRow {
    fn from(p: &PrPoint) -> Self {
        Self {
            method: p.method.clone(),
            param: p.param.clone(),
            seed: p.seed,
            precision: metric(p.precision()),
            recall: metric(p.recall()),
            tp: p.counts.tp,
            fp: p.counts.fp,
            fn_: p.counts.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PrSummaryRow {
    method: String,
    param: String,
    runs: usize,
    defined_precision: usize,
    mean_precision: String,
    std_precision: String,
    defined_recall: usize,
    mean_recall: String,
    std_recall: String,
}

pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    mkdir(dir)?;
    write_csv(&dir.join(PR_FILE), eval.points.iter().map(PrRow::from))?;
    write_csv(
        &dir.join(PR_SUMMARY_FILE),
        eval.sweep.iter().map(|s| PrSummaryRow {
            method: s.method.clone(),
            param: s.param.clone(),
            runs: s.runs,
            defined_precision: s.defined_precision,
            mean_precision: metric(s.mean_precision),
            std_precision: metric(s.std_precision),
            defined_recall: s.defined_recall,
            mean_recall: metric(s.mean_recall),
            std_recall: metric(s.std_recall),
        }),
    )?;
    for (name, rows) in &eval.trajectory_errors {
        mkdir(&dir.join(name))?;
        write_csv(&dir.join(name).join(TRAJECTORY_ERROR_FILE), rows.iter().cloned())?;
    }
    for (name, rows) in &eval.labels {
        write_csv(&dir.join(name).join(LABELS_FILE), rows.iter().cloned())?;
    }
    write_json(&dir.join(SUMMARY_FILE), eval)?;
    Ok(())
}

pub fn cmd_evaluate(results: &[PathBuf], dataset_dir: &Path, out: &Path) -> Result<Evaluation> {
    let data = io::read_dataset(dataset_dir)?;
    if data.ground_truth.is_none() {
        return Err(PipelineError::MissingGroundTruth);
    }
    let bundles = results.iter().map(|p| read_results(p)).collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = bundles.iter().map(|b| b.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(PipelineError::Config("results directories must have distinct names".into()));
    }
    let eval = evaluate(&bundles, &data)?;
    write_evaluation(out, &eval)?;
    Ok(eval)
}

/// Directory layout written by [`cmd_run`].
pub fn run_layout(out: &Path, n_r: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        out.join("dataset"),
        out.join("results").join(ilv_param(n_r)),
        out.join("evaluation"),
    )
}

/// Simulate, verify once per `nr_grid` entry, then evaluate everything.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Evaluation> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let dataset_dir = out.join("dataset");
    cmd_simulate(&cfg, &dataset_dir)?;
    let mut dirs = Vec::new();
    let mut grid = cfg.nr_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    for n_r in grid {
        let mut c = cfg.clone();
        c.retrieval.n_r = n_r;
        let (_, results_dir, _) = run_layout(out, n_r);
        cmd_verify(&c, &dataset_dir, &results_dir, None)?;
        dirs.push(results_dir);
    }
    let mut manifest = Manifest::new("run", &cfg);
    manifest.pca_source = Some("dataset".to_string());
    mkdir(out)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    cmd_evaluate(&dirs, &dataset_dir, &out.join("evaluation"))
}

/// Reads the stats written alongside a results directory.
pub fn read_run_stats(dir: &Path) -> Result<StreamStats> {
    read_json(&dir.join(RUN_STATS_FILE))
}

pub fn read_window_stats(dir: &Path) -> Result<Vec<WindowStats>> {
    read_csv_or_empty(&dir.join(WINDOWS_FILE))
}

pub fn read_pr_rows(path: &Path) -> Result<Vec<PrRow>> {
    read_csv_or_empty(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            rng_seed: 3,
            retrieval: RetrievalConfig {
                k: 16,
                delta_t: 50,
                ..RetrievalConfig::default()
            },
            engine: EngineConfig {
                window: 100,
                n_h_cap: 40,
                ..EngineConfig::default()
            },
            world: WorldConfig {
                frames: 330,
                loop_size: 12.0,
                descriptor_dim: 32,
                alias_pairs: 1,
                ..WorldConfig::default()
            },
            ir_grid: vec![5, 10],
            ir_seeds: 3,
            nr_grid: vec![5],
            export_top: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn resolved_config_shares_seed_and_thresholds() {
        let c = RunConfig { rng_seed: 9, ..RunConfig::default() }.resolved();
        assert_eq!(c.world.rng_seed, 9);
        assert_eq!(c.engine.rng_seed, 9);
        assert_eq!(c.world.delta_t, c.retrieval.delta_t);
        assert_ne!(c.projection_seed(), 9);
        assert!(RunConfig { nr_grid: vec![], ..RunConfig::default() }.validate().is_err());
    }

    #[test]
    fn verify_streams_windows_and_flushes_tail() {
        let cfg = tiny().resolved();
        let data = Dataset::from_world(&generate(&cfg.world).unwrap());
        let run = verify_dataset(&data, &cfg, None).unwrap();
        // 330 frames with windows of 100: three full windows and a tail.
        assert_eq!(run.stats.windows, 4);
        assert_eq!(run.snapshots.len(), 4);
        assert_eq!(run.snapshots[3].frames, 330);
        assert!(!run.history.is_empty());
        for s in run.engine.window_stats() {
            if s.history_len > 0 {
                assert_eq!(s.births, 100);
            }
        }
        let top = run.top_trajectories();
        assert_eq!(top.len(), 4);
        assert!(top.iter().all(|(_, _, t)| t.len() == 330));
        for c in run.history.iter() {
            assert!(c.t_prime - c.t > 50);
        }
    }

    #[test]
    fn history_cap_limits_constraints() {
        let cfg = RunConfig { max_constraints: Some(25), ..tiny() }.resolved();
        let data = Dataset::from_world(&generate(&cfg.world).unwrap());
        let run = verify_dataset(&data, &cfg, None).unwrap();
        assert_eq!(run.history.len(), 25);
        assert_eq!(run.stats.matches, 25 + run.stats.dropped_by_cap);
    }

    #[test]
    fn results_round_trip_and_audit() {
        let cfg = tiny();
        let tmp = tempfile::tempdir().unwrap();
        let ds = tmp.path().join("ds");
        cmd_simulate(&cfg, &ds).unwrap();
        let res = tmp.path().join("res");
        let run = cmd_verify(&cfg, &ds, &res, None).unwrap();
        let bundle = read_results(&res).unwrap();
        assert_eq!(bundle.history, run.history);
        assert_eq!(bundle.lineage, run.engine.lineage());
        assert_eq!(bundle.top.len(), 4);
        assert_eq!(&bundle.top[0].1, run.top_trajectories()[0].2);
        let data = io::read_dataset(&ds).unwrap();
        let audit = audit_results(&bundle, &data.odometry).unwrap();
        assert!(audit.extensions_checked > 0);
        assert!(audit.violations.is_empty());
        let (pca, _) = read_models(fs::File::open(res.join(MODEL_FILE)).unwrap()).unwrap();
        assert_eq!(pca, run.pca);
    }

    #[test]
    fn evaluation_summary_matches_exports() {
        let cfg = tiny();
        let tmp = tempfile::tempdir().unwrap();
        let eval = cmd_run(&cfg, tmp.path()).unwrap();
        let rows = read_pr_rows(&tmp.path().join("evaluation").join(PR_FILE)).unwrap();
        assert_eq!(rows.len(), 1 + 2 * 3);
        let ilv = rows.iter().find(|r| r.method == "ilv").unwrap();
        let run = &eval.runs[0];
        assert_eq!((ilv.tp, ilv.fp, ilv.fn_), (run.ilv.tp, run.ilv.fp, run.ilv.fn_));
        assert_eq!(run.ilv.tp + run.ilv.fn_, run.gt_true_in_history);
        let labels: Vec<LabelRow> = read_csv(&tmp.path().join("evaluation/nr5").join(LABELS_FILE)).unwrap();
        assert_eq!(labels.iter().filter(|l| l.gt_label).count(), run.gt_true_in_history);
        assert_eq!(labels.iter().filter(|l| l.gt_label && l.rank0_consistent).count(), run.ilv.tp);
        let errs: Vec<TrajectoryErrorRow> =
            read_csv(&tmp.path().join("evaluation/nr5").join(TRAJECTORY_ERROR_FILE)).unwrap();
        assert_eq!(errs.last().unwrap().hypothesis_id, "odometry");
        assert_eq!(Some(errs[0].rmse_m), run.rank0_rmse_m);
    }

    #[test]
    fn evaluate_requires_ground_truth() {
        let cfg = tiny();
        let tmp = tempfile::tempdir().unwrap();
        let ds = tmp.path().join("ds");
        cmd_simulate(&cfg, &ds).unwrap();
        let res = tmp.path().join("res");
        cmd_verify(&cfg, &ds, &res, None).unwrap();
        fs::remove_file(ds.join(io::GROUND_TRUTH_FILE)).unwrap();
        let err = cmd_evaluate(&[res], &ds, &tmp.path().join("ev")).unwrap_err();
        assert!(matches!(err, PipelineError::MissingGroundTruth));
        assert_eq!(err.category(), "input");
    }
}
