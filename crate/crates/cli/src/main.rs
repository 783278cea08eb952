//! `fml`: dataset generation, training, prediction, evaluation and export.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fml::harness::{
    evaluate, export_frames, format_table, horizon_mse, predict_sequence, training_tracks, EvalConfig, EvalReport,
    PipelineConfig, TrackGraph, Variant,
};
use fml::motion::{train_from_scratch, GruParams, ModeWeights, TrainConfig};
use fml::relations::{GraphConfig, Parent};
use fml::scenegen::{generate_dataset, Dataset, SceneConfig, SequenceSource};
use fml::TransformVec;
use serde::{Deserialize, Serialize};

const CONFIG_FILE: &str = "fml.toml";
const CONFIG_ENV: &str = "FML_CONFIG";

#[derive(Parser, Debug)]
#[command(
    name = "fml",
    version,
    about = "Fourier-domain video prediction of hierarchically related moving objects",
    after_help = "Settings are taken from flags, then from fml.toml in the current directory \
                  (or the file named by FML_CONFIG), then from built-in defaults."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train the motion model on a dataset's training split.
    Train(TrainArgs),
    /// Predict test sequences and write per-sequence results as JSON.
    Predict(PredictArgs),
    /// Evaluate Ours / Ours (NoGraph) over several runs and write a report.
    Eval(EvalArgs),
    /// Predict test sequences and write PGM frames and graph traces.
    Export(PredictArgs),
}

#[derive(Args, Debug, Default)]
struct Runtime {
    /// Worker threads (default: all cores).
    #[arg(long, env = "FML_THREADS")]
    threads: Option<usize>,
    /// Require bit-reproducible output. Reductions are always performed in a
    /// fixed order, so this only records the request.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=3))]
    objects: Option<u64>,
    /// Number of sequences.
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frame side length in pixels (power of two).
    #[arg(long)]
    image_size: Option<usize>,
    /// Observed frames per sequence.
    #[arg(long)]
    k_in: Option<usize>,
    /// Predicted frames per sequence.
    #[arg(long)]
    k_out: Option<usize>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// GRU hidden size.
    #[arg(long)]
    hidden: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Tracks per batch.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training seed (run i of eval uses seed + i).
    #[arg(long)]
    seed: Option<u64>,
    /// Softmax temperature of the relation graph.
    #[arg(long)]
    tau: Option<f64>,
    /// Fix every parent to world (the NoGraph ablation).
    #[arg(long)]
    no_graph: bool,
    /// Use ground-truth parents instead of the inferred graph.
    #[arg(long, conflicts_with = "no_graph")]
    oracle_graph: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path (default: <data>/model.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Output file (predict) or directory (export).
    #[arg(long)]
    out: PathBuf,
    /// Number of test sequences to process (default: predict all, export 1).
    #[arg(long)]
    sequences: Option<usize>,
    /// Horizons scored in the output, comma separated.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    no_graph: bool,
    #[arg(long, conflicts_with = "no_graph")]
    oracle_graph: bool,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory; repeat for several datasets.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Evaluate this checkpoint instead of training per run.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Horizons, comma separated.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[command(flatten)]
    model_args: ModelArgs,
    #[command(flatten)]
    runtime: Runtime,
}

/// Keys accepted in `fml.toml`; every one is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    objects: Option<usize>,
    sequences: Option<usize>,
    seed: Option<u64>,
    image_size: Option<usize>,
    k_in: Option<usize>,
    k_out: Option<usize>,
    hidden: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    epochs: Option<usize>,
    tau: Option<f64>,
    runs: Option<usize>,
    horizons: Option<Vec<usize>>,
    threads: Option<usize>,
    deterministic: Option<bool>,
    no_graph: Option<bool>,
    oracle_graph: Option<bool>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<fml::Error> for Failure {
    fn from(e: fml::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_file_config() -> CliResult<FileConfig> {
    let path = match std::env::var_os(CONFIG_ENV) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = PathBuf::from(CONFIG_FILE);
            if !p.exists() {
                return Ok(FileConfig::default());
            }
            p
        }
    };
    let text =
        fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(name: &str, v: T) -> CliResult<T> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(Failure::Usage(format!("--{name} must be positive, got {v}")))
    }
}

fn setup_threads(rt: &Runtime, file: &FileConfig) -> CliResult {
    if rt.deterministic || file.deterministic == Some(true) {
        log::info!("deterministic mode: ordered reductions");
    }
    if let Some(k) = rt.threads.or(file.threads) {
        positive("threads", k)?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn graph_config(tau: Option<f64>, file: &FileConfig) -> CliResult<GraphConfig> {
    let mut g = GraphConfig::default();
    if let Some(t) = tau.or(file.tau) {
        g.temperature = positive("tau", t)?;
    }
    Ok(g)
}

fn train_config(m: &ModelArgs, file: &FileConfig) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        hidden: positive("hidden", m.hidden.or(file.hidden).unwrap_or(d.hidden))?,
        learning_rate: positive("lr", m.lr.or(file.lr).unwrap_or(d.learning_rate))?,
        batch_size: positive("batch", m.batch.or(file.batch).unwrap_or(d.batch_size))?,
        epochs: positive("epochs", m.epochs.or(file.epochs).unwrap_or(d.epochs))?,
        seed: m.seed.or(file.seed).unwrap_or(d.seed),
    })
}

fn graph_flags(no_graph: bool, oracle_graph: bool, file: &FileConfig) -> CliResult<(bool, bool)> {
    let no = no_graph || file.no_graph == Some(true);
    let oracle = oracle_graph || file.oracle_graph == Some(true);
    if no && oracle {
        return Err(Failure::Usage("--no-graph and --oracle-graph are exclusive".into()));
    }
    Ok((no, oracle))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn cmd_gen(a: &GenArgs, file: &FileConfig) -> CliResult {
    setup_threads(&a.runtime, file)?;
    let d = SceneConfig::default();
    let cfg = SceneConfig {
        num_objects: a.objects.map(|o| o as usize).or(file.objects).unwrap_or(d.num_objects),
        image_size: positive("image-size", a.image_size.or(file.image_size).unwrap_or(d.image_size))?,
        k_in: positive("k-in", a.k_in.or(file.k_in).unwrap_or(d.k_in))?,
        k_out: positive("k-out", a.k_out.or(file.k_out).unwrap_or(d.k_out))?,
        ..d
    };
    if !(2..=3).contains(&cfg.num_objects) {
        return Err(Failure::Usage(format!(
            "objects must be 2 or 3, got {}",
            cfg.num_objects
        )));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let count = positive("sequences", a.sequences.or(file.sequences).unwrap_or(10_000))?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let m = generate_dataset(&a.out, &cfg, count, seed)?;
    log::info!(
        "wrote {} sequences to {} (train/val/test {}/{}/{})",
        m.len(),
        a.out.display(),
        m.splits.train.len(),
        m.splits.val.len(),
        m.splits.test.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct LossCurve<'a> {
    config: TrainConfig,
    tracks: usize,
    losses: &'a [f64],
}

fn cmd_train(a: &TrainArgs, file: &FileConfig) -> CliResult {
    setup_threads(&a.runtime, file)?;
    let tc = train_config(&a.model, file)?;
    let graph = graph_config(a.model.tau, file)?;
    let (no_graph, oracle) = graph_flags(a.model.no_graph, a.model.oracle_graph, file)?;
    let mode = if no_graph {
        TrackGraph::World
    } else if oracle {
        TrackGraph::Oracle
    } else {
        TrackGraph::Inferred
    };
    let ds = Dataset::open(&a.data)?;
    let tracks = training_tracks(&ds, &ds.manifest().splits.train, &graph, mode)?;
    let out = train_from_scratch(&tracks, &tc)?;
    let path = a.out.clone().unwrap_or_else(|| a.data.join("model.ckpt"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    out.params.save(&path)?;
    let mut curve = path.clone().into_os_string();
    curve.push(".losses.json");
    write_text(
        Path::new(&curve),
        &to_json(&LossCurve {
            config: tc,
            tracks: tracks.len(),
            losses: &out.losses,
        }),
    )?;
    log::info!(
        "trained {} parameters on {} tracks; final batch loss {:.3e}",
        out.params.len(),
        tracks.len(),
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct SequencePrediction {
    index: usize,
    parents: Vec<Parent>,
    true_parents: Vec<Parent>,
    horizon_mse: Vec<(usize, f64)>,
    mode_weights: Vec<Vec<ModeWeights>>,
    relative_velocities: Vec<Vec<TransformVec>>,
}

fn pipeline_for(a: &PredictArgs, file: &FileConfig, k_out: usize) -> CliResult<PipelineConfig> {
    let (no_graph, oracle) = graph_flags(a.no_graph, a.oracle_graph, file)?;
    Ok(PipelineConfig {
        use_graph: !no_graph,
        oracle_graph: oracle,
        graph: graph_config(a.tau, file)?,
        k_out,
    })
}

fn cmd_predict(a: &PredictArgs, file: &FileConfig, export: bool) -> CliResult {
    setup_threads(&a.runtime, file)?;
    let ds = Dataset::open(&a.data)?;
    let model = GruParams::load(&a.model)?;
    let m = ds.manifest();
    let pipeline = pipeline_for(a, file, m.k_out)?;
    let default_count = if export { 1 } else { m.splits.test.len() };
    let count = a.sequences.or(file.sequences).unwrap_or(default_count);
    let horizons = a.horizons.clone().or(file.horizons.clone()).unwrap_or(vec![5, 10]);
    let mut results = Vec::new();
    for &i in m.splits.test.iter().take(count) {
        let record = ds.load(i)?;
        let truth = record.scene.parents();
        let run = predict_sequence(&record.channels[..m.k_in], &model, &pipeline, Some(&truth))?;
        if export {
            export_frames(&run, a.out.join(format!("seq_{i:06}")))?;
            continue;
        }
        let gt = &record.composite[m.k_in..];
        let scores = horizons
            .iter()
            .map(|&h| Ok((h, horizon_mse(&run.predicted, gt, h)?)))
            .collect::<Result<Vec<_>, fml::Error>>()?;
        results.push(SequencePrediction {
            index: i,
            parents: run.parents,
            true_parents: truth,
            horizon_mse: scores,
            mode_weights: run.mode_weights,
            relative_velocities: run.relative_velocities,
        });
    }
    if !export {
        write_text(&a.out, &to_json(&results))?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, file: &FileConfig) -> CliResult {
    setup_threads(&a.runtime, file)?;
    let mut train = train_config(&a.model_args, file)?;
    let (no_graph, oracle) = graph_flags(a.model_args.no_graph, a.model_args.oracle_graph, file)?;
    let model = a.model.as_ref().map(GruParams::load).transpose()?;
    if let Some(m) = &model {
        train.hidden = m.hidden();
    }
    let config = EvalConfig {
        train,
        graph: graph_config(a.model_args.tau, file)?,
        runs: positive("runs", a.runs.or(file.runs).unwrap_or(5))?,
        horizons: a.horizons.clone().or(file.horizons.clone()).unwrap_or(vec![5, 10]),
        variants: if no_graph {
            vec![Variant::NoGraph]
        } else {
            vec![Variant::Ours, Variant::NoGraph]
        },
        oracle_graph: oracle,
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    for dir in &a.data {
        let ds = Dataset::open(dir)?;
        reports.push(evaluate(&ds, &dir.display().to_string(), model.as_ref(), &config)?);
    }
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_text(&out.join("report.json"), &to_json(&reports))?;
    let table = format_table(&reports);
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let file = load_file_config()?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Predict(a) => cmd_predict(a, &file, false),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::Export(a) => cmd_predict(a, &file, true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
