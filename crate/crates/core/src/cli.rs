//! Command line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::constraints::{check, ConstraintSet};
use crate::error::{Error, Result};
use crate::exact::ExactConfig;
use crate::graph::{GraphOptions, Task};
use crate::harness::{bench_inference, sweep_restarts};
use crate::inference::{infer_table, Backend};
use crate::io::{load_checkpoint, predicted_document, save_checkpoint, write_jsonl, CorpusFile};
use crate::learning::{
    evaluate_with, local_accuracy, train_local, train_structured, Corpus, DevCriterion, LocalConfig, Split, TrainConfig,
};
use crate::metrics::MetricsReport;
use crate::randomized::RandConfig;
use crate::scorer::{BankSchema, Init, ScoreTable, ScorerBank, ScorerKind};
use crate::synth::{synthesize, SyntheticSpec};

pub const SEED_ENV: &str = "STRUCTURA_SEED";

#[derive(Debug, Parser)]
#[command(name = "structura", version, about = "Constrained structured prediction over argument and debate graphs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run seed; falls back to STRUCTURA_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with `synthetic`, `local`, `train`, `rand`, `exact` and `constraints` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// exact, rand_constrained, rand_unconstrained or local_only.
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    #[arg(long, global = true, conflicts_with = "unconstrained")]
    pub constrained: bool,
    /// Drop every constraint; randomized inference samples unconstrained structures.
    #[arg(long, global = true)]
    pub unconstrained: bool,
    /// Enforce one stance per author in debate threads.
    #[arg(long, global = true)]
    pub author_constraints: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted synthetic corpus.
    Gen(GenArgs),
    /// Train every factor scorer on its own.
    TrainLocal(TrainLocalArgs),
    /// Structured training from a checkpoint with dev-loss early stopping.
    Train(TrainArgs),
    /// Metrics of a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Predicted structure of one document, printed as JSON.
    Infer(InferArgs),
    /// Inference timing per backend.
    Bench(BenchArgs),
    /// Randomized inference against exact inference over restart counts.
    Sweep(SweepArgs),
    /// Check the gold labels of a corpus against the constraints.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    ArgMining,
    Stance,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::ArgMining => Task::ArgMining,
            TaskArg::Stance => Task::Stance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Named size preset: tiny, small or desk.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub graphs: Option<usize>,
    #[arg(long)]
    pub nodes_min: Option<usize>,
    #[arg(long)]
    pub nodes_max: Option<usize>,
    #[arg(long)]
    pub paragraphs_min: Option<usize>,
    #[arg(long)]
    pub paragraphs_max: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Linear,
    FeedForward,
}

#[derive(Debug, Args)]
pub struct TrainLocalArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    pub scorer: ScorerArg,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Starting checkpoint, normally the output of `train-local`.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log, one JSON object per line.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Compute dev loss with exact inference instead of the training backend.
    #[arg(long)]
    pub exact_dev_loss: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON metrics report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Document id; the first document when absent.
    #[arg(long)]
    pub doc: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "exact,rand_constrained")]
    pub backends: Vec<Backend>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15,20,30,50,100")]
    pub restart_list: Vec<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
}

/// Optional sections of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub local: Option<LocalConfig>,
    pub train: Option<TrainConfig>,
    pub rand: Option<RandConfig>,
    pub exact: Option<ExactConfig>,
    pub constraints: Option<ConstraintSet>,
}

struct Settings {
    seed: u64,
    file: FileConfig,
    backend: Option<Backend>,
    restarts: Option<usize>,
    unconstrained: bool,
    author_constraints: bool,
}

impl Settings {
    fn new(g: &Global) -> Result<Self> {
        let seed = match g.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
                Err(_) => 0,
            },
        };
        let file = match &g.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Ok(Settings {
            seed,
            file,
            backend: g.backend,
            restarts: g.restarts,
            unconstrained: g.unconstrained,
            author_constraints: g.author_constraints,
        })
    }

    fn constraints(&self, task: Task) -> Result<ConstraintSet> {
        let mut cs = match &self.file.constraints {
            Some(cs) if cs.task == task => cs.clone(),
            Some(cs) => return Err(Error::Config(format!("config constraints are for {}, corpus is {task}", cs.task))),
            None => ConstraintSet::for_task(task),
        };
        if self.author_constraints {
            cs.author_constraints_enabled = true;
        }
        if self.unconstrained {
            cs = cs.with_rules(&[]);
        }
        cs.validate()?;
        Ok(cs)
    }

    fn backend(&self, default: Backend) -> Backend {
        let b = self.backend.unwrap_or(default);
        match (b, self.unconstrained) {
            (Backend::RandConstrained, true) => Backend::RandUnconstrained,
            _ => b,
        }
    }

    fn rand(&self, task: Task) -> RandConfig {
        let mut r = self
            .file
            .rand
            .clone()
            .or_else(|| self.file.train.as_ref().map(|t| t.rand.clone()))
            .unwrap_or_else(|| TrainConfig::for_task(task).rand);
        r.seed = self.seed;
        if let Some(k) = self.restarts {
            r.restarts = k;
        }
        if self.unconstrained {
            r.constrained = false;
        }
        r
    }

    fn exact(&self) -> ExactConfig {
        self.file.exact.clone().unwrap_or_default()
    }
}

fn load(path: &Path) -> Result<(CorpusFile, Corpus)> {
    let file = CorpusFile::load(path)?;
    let corpus = file.to_corpus(GraphOptions::default())?;
    Ok((file, corpus))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn metrics_table(title: &str, r: &MetricsReport) -> String {
    let mut s = format!("{title} ({} graphs{})\n", r.graphs, if r.exact { "" } else { ", not proven optimal" });
    s += &format!("  {:<22}{:>8.4}\n", "node macro-F1", r.node_macro_f1);
    if let Some(l) = r.link_positive_f1 {
        s += &format!("  {:<22}{:>8.4}\n", "link F1", l);
    }
    s += &format!("  {:<22}{:>8.4}\n", "stance macro-F1", r.stance_macro_f1);
    s += &format!("  {:<22}{:>8.4}\n", "accuracy", r.accuracy);
    s += &format!("  {:<22}{:>8.4}\n", "average", r.average);
    for (name, c) in &r.per_class {
        s += &format!("    {:<20}P {:.3}  R {:.3}  F1 {:.3}  n {}\n", name, c.precision, c.recall, c.f1, c.support);
    }
    s
}

fn preset(name: &str, task: Task) -> Result<SyntheticSpec> {
    let base = SyntheticSpec::for_task(task);
    Ok(match name {
        "tiny" => SyntheticSpec {
            graphs: 8,
            nodes: match task {
                Task::ArgMining => (1, 3),
                Task::Stance => (2, 5),
            },
            paragraphs: (1, 2),
            ..base
        },
        "small" => SyntheticSpec { graphs: 50, ..base },
        "desk" => SyntheticSpec { graphs: 200, ..base },
        other => return Err(Error::Config(format!("unknown preset `{other}` (tiny, small, desk)"))),
    })
}

fn cmd_gen(s: &Settings, a: &GenArgs) -> Result<()> {
    let mut spec = match (&a.preset, &s.file.synthetic, a.task) {
        (Some(p), _, t) => preset(p, t.map(Task::from).unwrap_or(Task::ArgMining))?,
        (None, Some(spec), _) => spec.clone(),
        (None, None, t) => SyntheticSpec::for_task(t.map(Task::from).unwrap_or(Task::ArgMining)),
    };
    if let Some(t) = a.task {
        spec.task = t.into();
    }
    spec.seed = s.seed;
    spec.graphs = a.graphs.unwrap_or(spec.graphs);
    spec.nodes = (a.nodes_min.unwrap_or(spec.nodes.0), a.nodes_max.unwrap_or(spec.nodes.1));
    spec.paragraphs = (a.paragraphs_min.unwrap_or(spec.paragraphs.0), a.paragraphs_max.unwrap_or(spec.paragraphs.1));
    spec.dim = a.dim.unwrap_or(spec.dim);
    spec.margin = a.margin.unwrap_or(spec.margin);
    spec.noise_rate = a.noise_rate.unwrap_or(spec.noise_rate);
    let file = synthesize(&spec, a.split.into())?;
    file.save(&a.out)?;
    println!("wrote {} {} documents to {}", file.documents.len(), spec.task, a.out.display());
    Ok(())
}

fn cmd_train_local(s: &Settings, a: &TrainLocalArgs) -> Result<()> {
    let (file, corpus) = load(&a.train)?;
    let mut cfg = s.file.local.clone().unwrap_or_default();
    cfg.seed = s.seed;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    let schema = BankSchema::of_graphs(&corpus.graphs)?;
    let (kind, init) = match a.scorer {
        ScorerArg::Linear => (ScorerKind::Linear, Init::Zeros),
        // hidden units need distinct starting weights
        ScorerArg::FeedForward => (ScorerKind::FeedForward { hidden: a.hidden }, Init::Uniform { scale: 0.1, seed: s.seed }),
    };
    let bank = train_local(&corpus, &ScorerBank::new(&schema, kind, init), &cfg)?;
    save_checkpoint(&a.out, file.task, &bank)?;
    println!("local factor accuracy {:.4}; wrote {}", local_accuracy(&corpus, &bank)?, a.out.display());
    Ok(())
}

fn cmd_train(s: &Settings, a: &TrainArgs) -> Result<()> {
    let (file, train) = load(&a.train)?;
    let (_, mut dev) = load(&a.dev)?;
    dev.split = Split::Dev;
    let task = file.task;
    if dev.task != task {
        return Err(Error::parse(a.dev.display().to_string(), format!("dev corpus task is {}, expected {task}", dev.task)));
    }
    let schema = BankSchema::of_graphs(train.graphs.iter().chain(&dev.graphs))?;
    let init = load_checkpoint(&a.init, task, &schema)?;
    let mut cfg = s.file.train.clone().unwrap_or_else(|| TrainConfig::for_task(task));
    cfg.seed = s.seed;
    cfg.backend = s.backend(cfg.backend);
    cfg.rand = s.rand(task);
    if let Some(e) = &s.file.exact {
        cfg.exact = e.clone();
    }
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.patience = a.patience.unwrap_or(cfg.patience);
    cfg.max_epochs = a.max_epochs.unwrap_or(cfg.max_epochs);
    if a.exact_dev_loss {
        cfg.dev_criterion = DevCriterion::ExactLoss;
    }
    let cs = s.constraints(task)?;
    let out = train_structured(&train, &dev, &init, &cs, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  train {:>12.4}  dev {:>12.4}  |θ| {:>9.4}{}",
            r.epoch,
            r.train_loss,
            r.dev_loss,
            r.param_norm,
            if r.improved { "  *" } else { "" }
        );
    })?;
    save_checkpoint(&a.out, task, &out.bank)?;
    if let Some(h) = &a.history {
        write_jsonl(h, &out.history)?;
    }
    println!(
        "{} epochs with backend {}; best dev loss {:.4}; wrote {}",
        out.history.len(),
        cfg.backend,
        out.best_dev_loss,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(s: &Settings, a: &EvalArgs) -> Result<()> {
    let (file, corpus) = load(&a.data)?;
    let schema = BankSchema::of_graphs(&corpus.graphs)?;
    let bank = load_checkpoint(&a.checkpoint, file.task, &schema)?;
    let backend = s.backend(Backend::Exact);
    let report = evaluate_with(&corpus, &bank, &s.constraints(file.task)?, backend, &s.exact(), &s.rand(file.task))?;
    print!("{}", metrics_table(&format!("{} on {}", backend, a.data.display()), &report));
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    backend: Backend,
    score: f64,
    proven_optimal: bool,
    assignment: &'a [usize],
    document: crate::io::Document,
}

fn cmd_infer(s: &Settings, a: &InferArgs) -> Result<()> {
    let (file, corpus) = load(&a.data)?;
    let i = match &a.doc {
        Some(id) => corpus
            .graphs
            .iter()
            .position(|g| g.id() == id)
            .ok_or_else(|| Error::parse(a.data.display().to_string(), format!("no document `{id}`")))?,
        None => 0,
    };
    let g = &corpus.graphs[i];
    let bank = load_checkpoint(&a.checkpoint, file.task, &BankSchema::of_graph(g)?)?;
    let backend = s.backend(Backend::Exact);
    let table = ScoreTable::compute(g, &bank)?;
    let r = infer_table(g, &table, &s.constraints(file.task)?, backend, &s.exact(), &s.rand(file.task), None)?;
    let out = Prediction {
        id: g.id(),
        backend,
        score: r.score(),
        proven_optimal: r.proven_optimal,
        assignment: r.assignment.values(),
        document: predicted_document(&file.documents[i], g, &r.assignment)?,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_bench(s: &Settings, a: &BenchArgs) -> Result<()> {
    let (file, corpus) = load(&a.data)?;
    let bank = load_checkpoint(&a.checkpoint, file.task, &BankSchema::of_graphs(&corpus.graphs)?)?;
    let r = bench_inference(
        &corpus,
        &bank,
        &s.constraints(file.task)?,
        &a.backends,
        &s.rand(file.task),
        &s.exact(),
        a.repeats,
    )?;
    println!("{} graphs, {} repeats", r.graphs, r.repeats);
    println!("  {:<20}{:>12}{:>12}{:>14}{:>10}", "backend", "mean s", "stddev s", "mean score", "failed");
    for t in &r.timings {
        println!(
            "  {:<20}{:>12.6}{:>12.6}{:>14.4}{:>10}",
            t.backend.name(),
            t.mean_seconds,
            t.stddev_seconds,
            t.mean_score,
            t.failures.len()
        );
    }
    println!("speedup (row time / column time)");
    for (t, row) in r.timings.iter().zip(&r.speedup) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:>10.2}")).collect();
        println!("  {:<20}{}", t.backend.name(), cells.join(""));
    }
    if let Some(p) = &a.report {
        write_json(p, &r)?;
    }
    Ok(())
}

fn cmd_sweep(s: &Settings, a: &SweepArgs) -> Result<()> {
    let (file, corpus) = load(&a.data)?;
    let bank = load_checkpoint(&a.checkpoint, file.task, &BankSchema::of_graphs(&corpus.graphs)?)?;
    let r = sweep_restarts(&corpus, &bank, &s.constraints(file.task)?, &a.restart_list, &s.rand(file.task), &s.exact())?;
    println!("exact: {:.6} s, average F1 {:.4}", r.exact_seconds, r.exact_average_f1);
    println!("  {:>8}{:>12}{:>12}{:>8}{:>12}{:>12}", "restarts", "score", "min score", "hits", "F1 ratio", "time ratio");
    for p in &r.points {
        println!(
            "  {:>8}{:>12.6}{:>12.6}{:>8}{:>12.4}{:>12.4}",
            p.restarts, p.score_ratio, p.min_score_ratio, p.optimal_hits, p.metric_ratio, p.time_ratio
        );
    }
    if let Some(p) = &a.report {
        write_json(p, &r)?;
    }
    Ok(())
}

fn cmd_validate(s: &Settings, a: &ValidateArgs) -> Result<()> {
    let (file, corpus) = load(&a.data)?;
    let cs = s.constraints(file.task)?;
    let mut bad = 0;
    for (g, y) in corpus.graphs.iter().zip(&corpus.gold) {
        for v in check(g, y, &cs) {
            println!("{}: {} {}", g.id(), v.rule, v.message);
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(Error::Constraint(format!("{bad} violations in {}", a.data.display())));
    }
    println!("{} documents, no violations", corpus.len());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let s = Settings::new(&cli.global)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&s, a),
        Command::TrainLocal(a) => cmd_train_local(&s, a),
        Command::Train(a) => cmd_train(&s, a),
        Command::Eval(a) => cmd_eval(&s, a),
        Command::Infer(a) => cmd_infer(&s, a),
        Command::Bench(a) => cmd_bench(&s, a),
        Command::Sweep(a) => cmd_sweep(&s, a),
        Command::Validate(a) => cmd_validate(&s, a),
    }
}

/// Parses `argv` and runs the command; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
