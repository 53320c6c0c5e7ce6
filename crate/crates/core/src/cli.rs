//! Command-line surface: `train`, `eval`, `sample-tasks` and `inspect`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{self, RunManifest};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, Scorer, TaskSource};
use crate::graph::{load_edge_list, load_edge_list_remapped, load_labels_remapped, split_labels, Graph, IdMap, LabelMatrix, LabelSplit};
use crate::linalg::norm;
use crate::rng::{Seeds, Stream};
use crate::task::{eligible_labels, read_tasks, sample_from_eligible, write_tasks, TaskShape};
use crate::train::{train, Model};
use crate::transform::BLOCK_TENSOR_NAMES;

pub const TRAIN_LOG_FILE: &str = "train.log";
pub const VALIDATION_FILE: &str = "validation.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_TABLE_FILE: &str = "report_table.txt";

#[derive(Debug, Parser)]
#[command(name = "fewshot-graph", about = "Few-shot node classification on novel labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings and the transformation on the known labels.
    Train(TrainArgs),
    /// Evaluate a checkpoint on novel-label tasks.
    Eval(EvalArgs),
    /// Sample and freeze a task file.
    SampleTasks(SampleArgs),
    /// Print checkpoint configuration and statistics.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Treat node ids as opaque tokens and densify them.
    #[arg(long)]
    pub remap_ids: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override any config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pool {
    Train,
    Val,
    Test,
}

impl Pool {
    fn labels(self, split: &LabelSplit) -> &[usize] {
        match self {
            Pool::Train => &split.known,
            Pool::Val => &split.validation,
            Pool::Test => &split.novel,
        }
    }
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub k_support_pos: Option<usize>,
    #[arg(long)]
    pub k_support_neg: Option<usize>,
    #[arg(long)]
    pub k_query_pos: Option<usize>,
    #[arg(long)]
    pub k_query_neg: Option<usize>,
}

impl ShapeArgs {
    /// Query counts follow the support counts unless given.
    fn resolve(&self, cfg: &RunConfig) -> Result<TaskShape> {
        let sp = self.k_support_pos.unwrap_or(cfg.k_support_pos);
        let sn = self.k_support_neg.unwrap_or(cfg.k_support_neg);
        let qp = self
            .k_query_pos
            .or(self.k_support_pos)
            .unwrap_or(cfg.k_query_pos);
        let qn = self
            .k_query_neg
            .or(self.k_support_neg)
            .unwrap_or(cfg.k_query_neg);
        TaskShape::new(sp, sn, qp, qn)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Label file; required unless `--tasks` is given.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Frozen task file.
    #[arg(long, conflicts_with = "n_tasks")]
    pub tasks: Option<PathBuf>,
    #[arg(long)]
    pub n_tasks: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = Pool::Test)]
    pub pool: Pool,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Score with raw embeddings and plain prototypes.
    #[arg(long)]
    pub identity: bool,
    /// Report directory (defaults to the checkpoint directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = Pool::Test)]
    pub pool: Pool,
    #[arg(long, default_value_t = 1000)]
    pub n_tasks: usize,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

impl Error {
    /// 2 for usage, configuration and input problems; 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Usage(_)
            | Error::Checkpoint(_)
            | Error::Shape { .. }
            | Error::EmptyGraph
            | Error::NodeOutOfRange { .. } => 2,
            _ => 1,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::SampleTasks(a) => cmd_sample_tasks(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_text(checkpoint::open_text(path)?)?;
    }
    cfg.apply_env(std::env::vars())?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {o:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the graph and labels; without `--remap-ids` the id map is the
/// identity.
pub fn load_dataset(data: &DataArgs) -> Result<(Graph, LabelMatrix, IdMap)> {
    let edges = checkpoint::open_text(&data.edges)?;
    let (graph, map) = if data.remap_ids {
        load_edge_list_remapped(edges)?
    } else {
        let g = load_edge_list(edges)?;
        let n = g.node_count();
        (g, IdMap::identity(n))
    };
    let labels = load_labels_remapped(checkpoint::open_text(&data.labels)?, &map)?;
    Ok((graph, labels, map))
}

fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    let (graph, labels, map) = load_dataset(&args.data)?;
    let split = split_labels(&labels, cfg.split_ratio(), cfg.seed)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = create_writer(&log_path)?;
    let mut log_err = None;
    let result = train(&graph, &labels, &split, &cfg, |rec| {
        if log_err.is_none() {
            if let Err(e) = writeln!(log, "{rec}") {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    drop(log);

    let mut written = checkpoint::save_model(&result.model, out)?;
    written.push(checkpoint::save_split(&split, out)?);
    written.push(checkpoint::save_id_map(&map, out)?);
    let val_path = out.join(VALIDATION_FILE);
    let mut history = Vec::new();
    for v in &result.validations {
        history.push(format!(
            "validation step={} auc={:.6} f1={:.6} recall={:.6}",
            v.step, v.metrics.auc, v.metrics.f1, v.metrics.recall
        ));
    }
    if let Some(step) = result.best_step {
        history.push(format!("selected step={step}"));
    }
    let mut text = history.join("\n");
    text.push('\n');
    fs::write(&val_path, text).map_err(|e| Error::io(&val_path, e))?;
    written.push(val_path);
    written.push(log_path);

    let mut manifest = RunManifest {
        seed: cfg.seed,
        config: cfg.to_text(),
        history,
        ..Default::default()
    };
    manifest.add_input("edges", &args.data.edges)?;
    manifest.add_input("labels", &args.data.labels)?;
    for p in &written {
        manifest.add_output(p)?;
    }
    manifest.write(out)?;
    manifest.verify()?;

    match result.best_step {
        Some(s) => println!("selected checkpoint from step {s}; wrote {}", out.display()),
        None => println!("wrote final model to {}", out.display()),
    }
    if let Some(reason) = result.aborted {
        return Err(Error::Numerical(format!("training aborted: {reason}")));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = checkpoint::load_model(&args.checkpoint)?;
    let cfg = &model.config;
    let map = checkpoint::load_id_map(&args.checkpoint)?;
    if map.len() != model.embeddings.node_count() {
        return Err(Error::Shape {
            field: "node map size vs embedding rows".into(),
            expected: model.embeddings.node_count(),
            found: map.len(),
        });
    }
    let labels = match &args.labels {
        Some(p) => Some(load_labels_remapped(checkpoint::open_text(p)?, &map)?),
        None => None,
    };
    let threshold = args.threshold.unwrap_or(cfg.threshold);
    let scorer = if args.identity {
        Scorer::Identity
    } else {
        Scorer::Transform
    };
    let seed = args.seed.unwrap_or(cfg.seed);

    let frozen;
    let split;
    let source = if let Some(path) = &args.tasks {
        frozen = read_tasks(checkpoint::open_text(path)?)?;
        if frozen.is_empty() {
            return Err(Error::Usage(format!("{} holds no tasks", path.display())));
        }
        for t in &frozen {
            match &labels {
                Some(l) => t.validate(l)?,
                None => {
                    if let Some(id) = t.nodes().find(|&v| v >= model.embeddings.node_count()) {
                        return Err(Error::NodeOutOfRange {
                            id,
                            node_count: model.embeddings.node_count(),
                        });
                    }
                }
            }
        }
        TaskSource::Frozen(&frozen)
    } else {
        let labels = labels
            .as_ref()
            .ok_or_else(|| Error::Usage("--labels is required when sampling tasks".into()))?;
        split = checkpoint::load_split(&args.checkpoint)?;
        TaskSource::Sample {
            labels,
            pool: args.pool.labels(&split),
            shape: args.shape.resolve(cfg)?,
        }
    };
    let n_tasks = match &source {
        TaskSource::Frozen(t) => t.len(),
        TaskSource::Sample { .. } => args.n_tasks.unwrap_or(1000),
    };
    let report = evaluate(
        &model,
        &source,
        &EvalOptions {
            n_tasks,
            n_trials: args.trials,
            seed,
            threshold,
            scorer,
            threads: args.threads,
        },
    )?;

    let out = args.out.as_ref().unwrap_or(&args.checkpoint);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = report.table();
    print!("{table}");
    for (name, text) in [(REPORT_FILE, report.key_values()), (REPORT_TABLE_FILE, table)] {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn cmd_sample_tasks(args: &SampleArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    let (_, labels, _) = load_dataset(&args.data)?;
    let split = split_labels(&labels, cfg.split_ratio(), cfg.seed)?;
    let shape = args.shape.resolve(&cfg)?;
    let pool = args.pool.labels(&split);
    let eligible = eligible_labels(&labels, pool, shape);
    if eligible.is_empty() {
        return Err(Error::NoEligibleLabel {
            shape: shape.to_string(),
        });
    }
    let mut rng = Seeds::new(cfg.seed).stream(Stream::Tasks);
    let tasks = (0..args.n_tasks)
        .map(|_| sample_from_eligible(&labels, &eligible, shape, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    for t in &tasks {
        t.validate(&labels)?;
    }
    let mut w = create_writer(&args.out)?;
    write_tasks(&tasks, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {} tasks with shape {shape} to {}", tasks.len(), args.out.display());
    Ok(())
}

/// Summary text printed by `inspect`.
pub fn inspect_model(model: &Model) -> String {
    let mut s = String::new();
    let c = model.transform.config();
    s += &format!(
        "transform: d={} d_prime={} heads={} d_ff={} blocks={} p_drop={} ln_epsilon={} activation={}\n",
        c.d, c.d_prime, c.heads, c.d_ff, c.blocks, c.p_drop, c.ln_epsilon, c.activation
    );
    s += &format!("parameters: {}\n", model.transform.parameter_count());
    let tensors = model.transform.tensors();
    for (i, t) in tensors.iter().enumerate() {
        let name = BLOCK_TENSOR_NAMES[i % BLOCK_TENSOR_NAMES.len()];
        let block = i / BLOCK_TENSOR_NAMES.len();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        s += &format!("  block{block}.{name:<9} len={:<7} norm={:.6} mean={:.6}\n", t.len(), norm(t), mean);
    }
    let gains: Vec<f64> = model
        .transform
        .blocks()
        .iter()
        .flat_map(|b| b.ln1_gain.iter().chain(&b.ln2_gain))
        .copied()
        .collect();
    s += &format!(
        "layer-norm gain mean: {:.6}\n",
        gains.iter().sum::<f64>() / gains.len() as f64
    );
    let emb = &model.embeddings;
    let norms: Vec<f64> = (0..emb.node_count()).map(|i| norm(emb.row(i))).collect();
    let (min, max) = norms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    s += &format!(
        "embeddings: nodes={} d={} row norm min={:.6} max={:.6} mean={:.6}\n",
        emb.node_count(),
        emb.dim(),
        min,
        max,
        norms.iter().sum::<f64>() / norms.len().max(1) as f64
    );
    s
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let model = checkpoint::load_model(&args.checkpoint)?;
    print!("{}", model.config.to_text());
    print!("{}", inspect_model(&model));
    Ok(())
}
