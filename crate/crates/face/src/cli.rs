//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use face_core::metrics::{compression_report, eval_reconstruction};
use face_core::prep::{NormRecord, OrderMode};
use face_core::tokenizer::{compression_ratio, compression_ratio_without_eos};
use log::info;

use crate::config::RunConfig;
use crate::formats::{read_cloud, write_tokens};
use crate::pipeline::{self, PipelineError, Suite};
use crate::report;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "face", version, about = "Face-token mesh autoencoder: data preparation, training and reconstruction")]
pub struct Cli {
    /// Worker threads (0: one per core)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic OBJ corpus and manifest.csv
    GenData(GenDataArgs),
    /// Tokenize one mesh into an FTOK file
    Prep(PrepArgs),
    /// Compression report over a directory of OBJ files
    Stats(StatsArgs),
    /// Train (or resume) a model on a directory of OBJ files
    Train(TrainArgs),
    /// Greedy reconstruction of a mesh or point cloud
    Reconstruct(ReconstructArgs),
    /// Chamfer and Hausdorff distance between two meshes
    Eval(EvalArgs),
    /// Train every variant of an ablation suite under one budget
    Ablate(AblateArgs),
    /// Finite-difference gradient checks of every op and the full model
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Corpus description (TOML with [[mesh]] entries)
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Input OBJ mesh
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Quantization bins
    #[arg(long, default_value_t = 128)]
    pub resolution: u32,
    /// Face ordering
    #[arg(long, default_value = "zyx", value_parser = parse_order)]
    pub order: OrderMode,
    /// Output FTOK file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory of OBJ files
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Quantization bins
    #[arg(long, default_value_t = 128)]
    pub resolution: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML); built-in defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of OBJ training meshes
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write; the metrics log goes beside it
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Run seed, overriding train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once this many steps are done (default: train.steps)
    #[arg(long)]
    pub until: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input mesh (.obj) or normalized point cloud (.fpc)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output OBJ mesh
    #[arg(long)]
    pub out: PathBuf,
    /// Face limit (default: eval.max_faces of the checkpoint config)
    #[arg(long)]
    pub max_faces: Option<usize>,
    /// Surface sampling seed for mesh inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth OBJ mesh
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted OBJ mesh
    #[arg(long)]
    pub pred: PathBuf,
    /// Surface samples per mesh
    #[arg(long, default_value_t = 4096)]
    pub samples: usize,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Which comparison to run
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Base run config (TOML); desk defaults when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training meshes (default: the built-in synthetic set)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out meshes (default: the built-in synthetic set)
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Training steps per variant
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    /// Run seed, overriding train.seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for inputs and parameters
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_order(s: &str) -> Result<OrderMode, String> {
    OrderMode::ALL
        .into_iter()
        .find(|o| o.name() == s)
        .ok_or_else(|| format!("expected one of zyx, zyx-component, dfs, bfs, got {s:?}"))
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if matches!(e, PipelineError::NonFinite(_)) { EXIT_NUMERICAL } else { EXIT_DATA };
        Failure { code, message: e.to_string() }
    }
}

fn data_error(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_DATA, message: e.to_string() }
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let mut emit = |text: String| out.write_all(text.as_bytes()).map_err(data_error);
    match cli.command {
        Command::GenData(a) => {
            let text = std::fs::read_to_string(&a.spec).map_err(|e| data_error(format!("{}: {e}", a.spec.display())))?;
            let spec = pipeline::GenSpec::parse(&text)?;
            let rows = pipeline::generate_corpus(&spec, &a.out)?;
            emit(format!("wrote {} meshes to {}\n", rows.len(), a.out.display()))
        }
        Command::Prep(a) => {
            let mesh = pipeline::read_mesh(&a.input)?;
            let prepared = pipeline::prepare(&mesh, a.resolution, a.order)?;
            let tokens = &prepared.tokens;
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(&a.out).map_err(|e| data_error(format!("{}: {e}", a.out.display())))?,
            );
            write_tokens(&mut file, tokens).map_err(data_error)?;
            std::io::Write::flush(&mut file).map_err(data_error)?;
            let ratio = |r: face_core::Result<f64>| r.map_or_else(|_| "-".to_string(), |r| format!("{r:.6}"));
            emit(format!(
                "faces {}\ntokens {}\nratio {}\nratio_without_eos {}\n",
                tokens.face_count(),
                tokens.len(),
                ratio(compression_ratio(tokens)),
                ratio(compression_ratio_without_eos(tokens)),
            ))
        }
        Command::Stats(a) => {
            let corpus = pipeline::load_corpus(&a.input)?;
            let report = compression_report(&corpus, a.resolution).map_err(data_error)?;
            emit(report::compression_table(&report))
        }
        Command::Train(a) => {
            let mut config = load_config(a.config.as_deref(), RunConfig::default())?;
            if let Some(seed) = a.seed {
                config.train.seed = seed;
            }
            let corpus = pipeline::load_corpus(&a.data)?;
            let trainer = pipeline::train_to(config, &corpus, &a.out, a.resume.as_deref(), a.until)?;
            let tf = trainer.evaluate()?;
            emit(format!(
                "steps {}\nloss {:.6}\nslot_accuracy {:.6}\ncheckpoint {}\nmetrics {}\n",
                trainer.step,
                tf.loss,
                tf.slot_accuracy,
                a.out.display(),
                pipeline::metrics_path(&a.out).display()
            ))
        }
        Command::Reconstruct(a) => {
            let loaded = pipeline::load_model(&a.ckpt)?;
            let limit = match a.max_faces {
                Some(limit) => limit,
                None => loaded.config.reconstruct_limit(),
            };
            let is_cloud = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("fpc"));
            let (rec, world) = if is_cloud {
                let file = std::fs::File::open(&a.input).map_err(|e| data_error(format!("{}: {e}", a.input.display())))?;
                let cloud = read_cloud(&mut std::io::BufReader::new(file)).map_err(data_error)?;
                pipeline::reconstruct_cloud(&loaded, &cloud, NormRecord::IDENTITY, limit)?
            } else {
                let mesh = pipeline::read_mesh(&a.input)?;
                pipeline::reconstruct_mesh(&loaded, &mesh, a.seed, limit)?
            };
            pipeline::write_mesh(&a.out, &world)?;
            emit(format!("faces {}\nstop {}\n", world.faces.len(), rec.stop.name()))
        }
        Command::Eval(a) => {
            let gt = pipeline::read_mesh(&a.gt)?;
            let pred = pipeline::read_mesh(&a.pred)?;
            let r = eval_reconstruction(&gt, &pred, a.samples, a.seed).map_err(data_error)?;
            emit(format!("chamfer {:.8}\nhausdorff {:.8}\nsamples {}\nseed {}\n", r.chamfer, r.hausdorff, r.n_samples, r.seed))
        }
        Command::Ablate(a) => {
            let mut config = load_config(a.config.as_deref(), RunConfig::desk())?;
            config.train.steps = a.steps;
            config.train.seed = a.seed;
            let train = match &a.data {
                Some(dir) => pipeline::load_corpus(dir)?,
                None => pipeline::generate_in_memory(&pipeline::ablation_train_spec())?,
            };
            let heldout = match &a.heldout {
                Some(dir) => pipeline::load_corpus(dir)?,
                None => pipeline::generate_in_memory(&pipeline::ablation_heldout_spec())?,
            };
            info!("ablation: {} training meshes, {} held out", train.len(), heldout.len());
            let rows = pipeline::ablate(a.suite, &config, &train, &heldout)?;
            if let Some(path) = &a.out {
                report::write_ablation_csv(path, &rows)?;
            }
            let mut text = report::ablation_table(&rows);
            if let Some(finding) = pipeline::ordering_finding(&rows) {
                text.push_str(&finding);
                text.push('\n');
            }
            emit(text)
        }
        Command::Gradcheck(a) => {
            let outcomes = face_core::gradcheck::run_suite(a.seed).map_err(data_error)?;
            let mut text = String::new();
            let mut failed = 0;
            for o in &outcomes {
                let verdict = if o.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!o.passed());
                text.push_str(&format!("{verdict:<4} {:<40} {:.3e} (< {:.0e})\n", o.name, o.relative_error, o.tolerance));
            }
            text.push_str(&format!("{} checks, {failed} failed\n", outcomes.len()));
            emit(text)?;
            if failed > 0 {
                return Err(Failure { code: EXIT_NUMERICAL, message: format!("{failed} gradient checks failed") });
            }
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>, default: RunConfig) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(data_error),
        None => Ok(default),
    }
}

/// Full entry point: parses `args`, configures threads, runs, and returns
/// the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>, out: &mut dyn std::io::Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // Fails only if a pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
