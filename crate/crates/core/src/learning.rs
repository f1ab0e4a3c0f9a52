//! Local pretraining, structured hinge training with early stopping, and
//! evaluation under exact inference.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::exact::ExactConfig;
use crate::graph::{hamming_distance, labels, Assignment, FactorGraph, FactorType, Task};
use crate::inference::{infer_table, Augment, Backend};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::randomized::RandConfig;
use crate::scorer::{accumulate_structured_gradient, GradientBank, HMode, ScoreTable, ScorerBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Labeled graphs of one split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub split: Split,
    pub task: Task,
    pub graphs: Vec<FactorGraph>,
    pub gold: Vec<Assignment>,
}

impl Corpus {
    pub fn new(split: Split, graphs: Vec<FactorGraph>, gold: Vec<Assignment>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::parse(split.name(), "corpus has no documents"));
        }
        if graphs.len() != gold.len() {
            return Err(Error::structural("every graph needs a gold assignment"));
        }
        let task = graphs[0].task();
        let mut ids = HashSet::new();
        for (g, y) in graphs.iter().zip(&gold) {
            if g.task() != task {
                return Err(Error::structural(format!("graph `{}` belongs to a different task", g.id())));
            }
            if !ids.insert(g.id().to_string()) {
                return Err(Error::structural(format!("duplicate graph id `{}`", g.id())));
            }
            y.validate(g)?;
        }
        Ok(Corpus {
            split,
            task,
            graphs,
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            learning_rate: 0.05,
            weight_decay: 1e-5,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Which inference produces the dev predictions for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevCriterion {
    /// Same backend as training.
    #[default]
    BackendLoss,
    /// Exact inference regardless of the training backend.
    ExactLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub backend: Backend,
    pub rand: RandConfig,
    #[serde(default)]
    pub exact: ExactConfig,
    pub delta_coefficient: f64,
    pub seed: u64,
    #[serde(default)]
    pub dev_criterion: DevCriterion,
}

impl TrainConfig {
    /// Starting points for each task: argument mining uses lr 1e-4,
    /// patience 10 and 5 restarts; stance uses lr 2e-6, patience 3 and 50
    /// restarts.
    pub fn for_task(task: Task) -> Self {
        let (learning_rate, patience, restarts) = match task {
            Task::ArgMining => (1e-4, 10, 5),
            Task::Stance => (2e-6, 3, 50),
        };
        TrainConfig {
            learning_rate,
            weight_decay: 1e-5,
            patience,
            max_epochs: 100,
            backend: Backend::Exact,
            rand: RandConfig {
                restarts,
                ..RandConfig::default()
            },
            exact: ExactConfig::default(),
            delta_coefficient: 1.0,
            seed: 0,
            dev_criterion: DevCriterion::BackendLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if matches!(self.backend, Backend::LocalOnly | Backend::Ad3) {
            return Err(Error::Config(format!("backend {} cannot drive structured training", self.backend)));
        }
        self.rand.validate()?;
        self.exact.validate()
    }
}

/// Scorer output row a factor selects under `y`, for the local hinge.
fn local_targets(g: &FactorGraph, f: usize, y: &Assignment) -> Option<(Vec<usize>, usize)> {
    let factor = &g.factors()[f];
    let tuple = y.labels_of(&factor.scope);
    match factor.ftype {
        FactorType::Node | FactorType::Link | FactorType::Agreement => {
            let arity = g.variables()[factor.scope[0]].arity();
            Some(((0..arity).collect(), tuple[0]))
        }
        FactorType::Stance => (tuple[0] == labels::ON).then(|| ((0..g.variables()[factor.scope[1]].arity()).collect(), tuple[1])),
        // 0 = inactive (score 0), 1 = active (scorer row 0)
        FactorType::Grandparent | FactorType::Coparent => Some((vec![0, 1], usize::from(factor.ftype.active_row(&tuple).is_some()))),
    }
}

fn local_option_scores(ftype: FactorType, rows: &[f64], options: &[usize]) -> Vec<f64> {
    match ftype {
        FactorType::Grandparent | FactorType::Coparent => vec![0.0, rows[0]],
        _ => options.iter().map(|&o| rows[o]).collect(),
    }
}

/// Adds the per-factor multiclass hinge gradient for one graph and returns
/// the summed loss.
fn local_graph_step(g: &FactorGraph, y: &Assignment, bank: &ScorerBank, grad: &mut GradientBank) -> Result<f64> {
    let mut loss = 0.0;
    for f in g.factors() {
        let Some((options, gold)) = local_targets(g, f.id, y) else { continue };
        let scorer = bank.get(f.ftype)?;
        let rows = scorer.forward(&f.features)?;
        let scores = local_option_scores(f.ftype, &rows, &options);
        let mut best = (f64::NEG_INFINITY, gold);
        for (o, &s) in scores.iter().enumerate() {
            let v = s + if o == gold { 0.0 } else { 1.0 };
            if v > best.0 {
                best = (v, o);
            }
        }
        let violation = best.0 - scores[gold];
        if best.1 == gold || violation <= 0.0 {
            continue;
        }
        loss += violation;
        let slot = grad.grads.get_mut(&f.ftype).expect("gradient shaped like the bank");
        let second_order = matches!(f.ftype, FactorType::Grandparent | FactorType::Coparent);
        if second_order {
            // option 1 is the single scorer row; option 0 carries no parameters
            let sign = if best.1 == 1 { 1.0 } else { -1.0 };
            scorer.add_gradient(&f.features, 0, sign, slot)?;
        } else {
            scorer.add_gradient(&f.features, options[best.1], 1.0, slot)?;
            scorer.add_gradient(&f.features, options[gold], -1.0, slot)?;
        }
    }
    Ok(loss)
}

/// Trains every factor scorer independently with a margin-1 multiclass
/// hinge against its gold label. Structure and constraints are ignored;
/// stance factors only see gold links.
pub fn train_local(corpus: &Corpus, init: &ScorerBank, cfg: &LocalConfig) -> Result<ScorerBank> {
    if corpus.is_empty() {
        return Err(Error::parse("train", "corpus has no documents"));
    }
    let mut bank = init.clone();
    if cfg.learning_rate == 0.0 {
        return Ok(bank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let mut grad = GradientBank::zeros_like(&bank);
            local_graph_step(&corpus.graphs[i], &corpus.gold[i], &bank, &mut grad)?;
            bank.sgd_step(&grad, cfg.learning_rate, cfg.weight_decay);
        }
    }
    Ok(bank)
}

/// Fraction of scored factors whose own argmax picks the gold option.
pub fn local_accuracy(corpus: &Corpus, bank: &ScorerBank) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for (g, y) in corpus.graphs.iter().zip(&corpus.gold) {
        for f in g.factors() {
            let Some((options, gold)) = local_targets(g, f.id, y) else { continue };
            let rows = bank.get(f.ftype)?.forward(&f.features)?;
            let scores = local_option_scores(f.ftype, &rows, &options);
            let pred = (0..scores.len()).fold(0, |b, o| if scores[o] > scores[b] { o } else { b });
            right += usize::from(pred == gold);
            total += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { right as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub param_norm: f64,
    pub improved: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bank: ScorerBank,
    pub history: Vec<EpochRecord>,
    pub best_dev_loss: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct GraphLoss {
    loss: f64,
    pred: Assignment,
    table: ScoreTable,
}

fn augmented_loss(
    g: &FactorGraph,
    y: &Assignment,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    backend: Backend,
    cfg: &TrainConfig,
    rand_seed: u64,
) -> Result<GraphLoss> {
    let table = ScoreTable::compute(g, bank)?;
    let aug = Augment {
        gold: y,
        mode: HMode::AdditiveDelta {
            coefficient: cfg.delta_coefficient,
        },
    };
    let rand = RandConfig {
        seed: rand_seed,
        ..cfg.rand.clone()
    };
    let r = infer_table(g, &table, cs, backend, &cfg.exact, &rand, Some(aug))?;
    let delta = cfg.delta_coefficient * hamming_distance(y, &r.assignment, false)?;
    let loss = (delta + table.total(g, &r.assignment) - table.total(g, y)).max(0.0);
    Ok(GraphLoss {
        loss,
        pred: r.assignment,
        table,
    })
}

/// Summed structured hinge loss over a corpus with loss-augmented inference.
pub fn corpus_loss(corpus: &Corpus, bank: &ScorerBank, cs: &ConstraintSet, backend: Backend, cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let mut total = 0.0;
    for (i, (g, y)) in corpus.graphs.iter().zip(&corpus.gold).enumerate() {
        total += augmented_loss(g, y, bank, cs, backend, cfg, mix(cfg.seed, 1 << 32 | epoch as u64, i as u64))?.loss;
    }
    Ok(total)
}

/// Structured training with patience-based early stopping on the dev loss.
/// Each train graph gets a forward pass, loss-augmented inference through
/// the configured backend and one SGD step; the returned bank is the
/// snapshot with the lowest dev loss.
pub fn train_structured(
    train: &Corpus,
    dev: &Corpus,
    init: &ScorerBank,
    cs: &ConstraintSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut theta = init.clone();
    let mut ret = theta.clone();
    let mut best = f64::INFINITY;
    let mut patience = 0;
    let mut history = Vec::new();
    let dev_backend = match cfg.dev_criterion {
        DevCriterion::BackendLoss => cfg.backend,
        DevCriterion::ExactLoss => Backend::Exact,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch = 0;
    while patience < cfg.patience && epoch < cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let (g, y) = (&train.graphs[i], &train.gold[i]);
            let gl = augmented_loss(g, y, &theta, cs, cfg.backend, cfg, mix(cfg.seed, epoch as u64, i as u64))?;
            train_loss += gl.loss;
            let mut grad = GradientBank::zeros_like(&theta);
            if gl.loss > 0.0 {
                accumulate_structured_gradient(g, y, &gl.pred, &theta, &mut grad)?;
            }
            let _ = &gl.table;
            theta.sgd_step(&grad, cfg.learning_rate, cfg.weight_decay);
        }
        let dev_loss = corpus_loss(dev, &theta, cs, dev_backend, cfg, epoch)?;
        let improved = dev_loss < best;
        if improved {
            best = dev_loss;
            ret = theta.clone();
            patience = 0;
        } else {
            patience += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            param_norm: theta.param_norm(),
            improved,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
        epoch += 1;
    }
    Ok(TrainOutcome {
        bank: ret,
        history,
        best_dev_loss: best,
    })
}

/// Predictions of one backend over a corpus, plus whether all were proven optimal.
pub fn predict(
    corpus: &Corpus,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    backend: Backend,
    exact: &ExactConfig,
    rand: &RandConfig,
) -> Result<(Vec<Assignment>, bool)> {
    let mut preds = Vec::with_capacity(corpus.len());
    let mut all_exact = true;
    for g in &corpus.graphs {
        let table = ScoreTable::compute(g, bank)?;
        let r = infer_table(g, &table, cs, backend, exact, rand, None)?;
        all_exact &= r.proven_optimal;
        preds.push(r.assignment);
    }
    Ok((preds, all_exact))
}

/// Metrics of exact inference on every graph.
pub fn evaluate(corpus: &Corpus, bank: &ScorerBank, cs: &ConstraintSet, exact: &ExactConfig) -> Result<MetricsReport> {
    evaluate_with(corpus, bank, cs, Backend::Exact, exact, &RandConfig::default())
}

/// Metrics of the independent per-factor argmax ("Local" predictions).
pub fn evaluate_local(corpus: &Corpus, bank: &ScorerBank, cs: &ConstraintSet) -> Result<MetricsReport> {
    let mut r = evaluate_with(corpus, bank, cs, Backend::LocalOnly, &ExactConfig::default(), &RandConfig::default())?;
    r.exact = false;
    Ok(r)
}

pub fn evaluate_with(
    corpus: &Corpus,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    backend: Backend,
    exact: &ExactConfig,
    rand: &RandConfig,
) -> Result<MetricsReport> {
    let (preds, all_exact) = predict(corpus, bank, cs, backend, exact, rand)?;
    let mut report = compute_metrics(&corpus.graphs, &corpus.gold, &preds)?;
    report.exact = all_exact && backend == Backend::Exact;
    Ok(report)
}
