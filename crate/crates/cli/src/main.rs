use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loopverify::pipeline::{self, Manifest, PipelineError, RunConfig};
use loopverify::simulator::PathShape;

#[derive(Parser, Debug)]
#[command(name = "loopverify", version, about = "Incremental loop closure verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Stream a dataset through retrieval and hypothesis verification.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model file or descriptor file used to fit PCA instead of the dataset itself.
        #[arg(long)]
        pca_training: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score results directories against the dataset's ground truth.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, verify for every n_r in the grid, then evaluate.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Overrides applied on top of the defaults or of `--config`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Manifest (or bare config) JSON to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rng_seed: Option<u64>,

    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    t_b: Option<u32>,
    #[arg(long)]
    delta_t: Option<usize>,
    #[arg(long)]
    n_b: Option<u32>,
    #[arg(long)]
    k: Option<usize>,

    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    parents_per_window: Option<usize>,
    #[arg(long)]
    children_per_parent: Option<usize>,
    #[arg(long)]
    n_h_cap: Option<usize>,
    #[arg(long)]
    t_p: Option<f64>,
    #[arg(long)]
    w_xy: Option<f64>,
    #[arg(long)]
    w_theta: Option<f64>,
    #[arg(long)]
    loop_weight: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_shape)]
    path_shape: Option<PathShape>,
    #[arg(long)]
    loop_size: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    sigma_xy: Option<f64>,
    #[arg(long)]
    sigma_theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bias_xy: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bias_theta: Option<f64>,
    #[arg(long)]
    descriptor_dim: Option<usize>,
    #[arg(long)]
    place_cell: Option<f64>,
    #[arg(long)]
    alias_pairs: Option<usize>,
    #[arg(long)]
    appearance_noise: Option<f64>,

    #[arg(long)]
    max_constraints: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ir_grid: Option<Vec<usize>>,
    #[arg(long)]
    ir_seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    nr_grid: Option<Vec<usize>>,
    #[arg(long)]
    export_top: Option<usize>,
}

fn parse_shape(s: &str) -> Result<PathShape, String> {
    s.parse().map_err(|e: loopverify::simulator::SimulatorError| e.to_string())
}

fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| loopverify::io::IoError::io(path, e))?;
    let json_err = |source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    if value.get("config").is_some() {
        let manifest: Manifest = serde_json::from_value(value).map_err(json_err)?;
        Ok(manifest.config)
    } else {
        serde_json::from_value(value).map_err(json_err)
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    c.$($target)+ = v;
                }
            };
        }
        set!(rng_seed => rng_seed);
        set!(n_r => retrieval.n_r);
        set!(t_b => retrieval.t_b);
        set!(delta_t => retrieval.delta_t);
        set!(n_b => retrieval.n_b);
        set!(k => retrieval.k);
        set!(window => engine.window);
        set!(parents_per_window => engine.parents_per_window);
        set!(children_per_parent => engine.children_per_parent);
        set!(n_h_cap => engine.n_h_cap);
        set!(t_p => engine.t_p);
        set!(w_xy => engine.weights.w_xy);
        set!(w_theta => engine.weights.w_theta);
        set!(loop_weight => engine.weights.loop_weight);
        set!(max_iters => engine.optimizer.max_iters);
        set!(tol => engine.optimizer.tol);
        set!(frames => world.frames);
        set!(path_shape => world.path_shape);
        set!(loop_size => world.loop_size);
        set!(step => world.step);
        set!(sigma_xy => world.odo_noise.0);
        set!(sigma_theta => world.odo_noise.1);
        set!(bias_xy => world.drift_bias.0);
        set!(bias_theta => world.drift_bias.1);
        set!(descriptor_dim => world.descriptor_dim);
        set!(place_cell => world.place_cell);
        set!(alias_pairs => world.alias_pairs);
        set!(appearance_noise => world.appearance_noise);
        set!(ir_grid => ir_grid);
        set!(ir_seeds => ir_seeds);
        set!(nr_grid => nr_grid);
        set!(export_top => export_top);
        if self.max_constraints.is_some() {
            c.max_constraints = self.max_constraints;
        }
        let c = c.resolved();
        c.validate()?;
        Ok(c)
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

fn print_evaluation(eval: &pipeline::Evaluation) {
    for r in &eval.runs {
        println!(
            "{}: precision {} recall {} (tp {} fp {} fn {}), rank-0 rmse {} m, odometry rmse {:.3} m",
            r.results,
            fmt_metric(r.ilv_precision),
            fmt_metric(r.ilv_recall),
            r.ilv.tp,
            r.ilv.fp,
            r.ilv.fn_,
            fmt_metric(r.rank0_rmse_m),
            r.odometry_rmse_m
        );
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { out, config } => {
            let cfg = config.resolve()?;
            let data = pipeline::cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} frames to {} ({} revisit pairs)",
                data.num_frames(),
                out.display(),
                data.registry.as_ref().map_or(0, |r| r.len())
            );
        }
        Command::Verify {
            dataset,
            out,
            pca_training,
            config,
        } => {
            let cfg = config.resolve()?;
            let run = pipeline::cmd_verify(&cfg, &dataset, &out, pca_training.as_deref())?;
            println!(
                "{} frames, {} constraints, {} windows, {} hypotheses born, {} live",
                run.stats.frames, run.stats.history_len, run.stats.windows, run.stats.total_births, run.stats.live
            );
            if let Some(h) = run.engine.top() {
                println!(
                    "rank 0: hypothesis {} with {} constraints, consistent with {}",
                    h.id,
                    h.constraint_ids.len(),
                    h.consistent_count
                );
            }
        }
        Command::Evaluate { results, dataset, out } => {
            let eval = pipeline::cmd_evaluate(&results, &dataset, &out)?;
            print_evaluation(&eval);
        }
        Command::Run { out, config } => {
            let cfg = config.resolve()?;
            let eval = pipeline::cmd_run(&cfg, &out)?;
            print_evaluation(&eval);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
