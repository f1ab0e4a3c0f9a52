//! Parameterized factor scorers, graph scores, loss-augmented scores and the
//! structured hinge loss with its closed-form gradient.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{active_factors, hamming_distance, Assignment, Factor, FactorGraph, FactorId, FactorType, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    Linear,
    FeedForward { hidden: usize },
}

impl ScorerKind {
    pub fn feed_forward() -> Self {
        ScorerKind::FeedForward { hidden: 64 }
    }
}

/// One scoring function. Parameters are stored flat, row-major:
/// `Linear` holds `W (rows x dim)` then `b (rows)`; `FeedForward` holds
/// `W1 (hidden x dim)`, `b1`, `W2 (rows x hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    #[serde(flatten)]
    pub kind: ScorerKind,
    pub input_dim: usize,
    pub rows: usize,
    pub params: Vec<f64>,
}

impl Scorer {
    pub fn param_count(kind: ScorerKind, dim: usize, rows: usize) -> usize {
        match kind {
            ScorerKind::Linear => rows * dim + rows,
            ScorerKind::FeedForward { hidden } => hidden * dim + hidden + rows * hidden + rows,
        }
    }

    pub fn zeros(kind: ScorerKind, dim: usize, rows: usize) -> Self {
        Scorer {
            kind,
            input_dim: dim,
            rows,
            params: vec![0.0; Self::param_count(kind, dim, rows)],
        }
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(kind: ScorerKind, dim: usize, rows: usize, scale: f64, rng: &mut R) -> Self {
        let n = Self::param_count(kind, dim, rows);
        let params = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Scorer {
            kind,
            input_dim: dim,
            rows,
            params,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::structural(format!(
                "feature dimension {} does not match scorer input dimension {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden(&self, hidden: usize, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let (w1, rest) = self.params.split_at(hidden * d);
        let b1 = &rest[..hidden];
        (0..hidden)
            .map(|h| {
                let pre: f64 = w1[h * d..(h + 1) * d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[h];
                pre.tanh()
            })
            .collect()
    }

    /// Scores of every output row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let d = self.input_dim;
        Ok(match self.kind {
            ScorerKind::Linear => {
                let (w, b) = self.params.split_at(self.rows * d);
                (0..self.rows)
                    .map(|r| w[r * d..(r + 1) * d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b[r])
                    .collect()
            }
            ScorerKind::FeedForward { hidden } => {
                let h = self.hidden(hidden, x);
                let off = hidden * d + hidden;
                let w2 = &self.params[off..off + self.rows * hidden];
                let b2 = &self.params[off + self.rows * hidden..];
                (0..self.rows)
                    .map(|r| w2[r * hidden..(r + 1) * hidden].iter().zip(&h).map(|(w, hi)| w * hi).sum::<f64>() + b2[r])
                    .collect()
            }
        })
    }

    pub fn score(&self, x: &[f64], row: usize) -> Result<f64> {
        if row >= self.rows {
            return Err(Error::structural(format!("row {row} out of range for a scorer with {} rows", self.rows)));
        }
        Ok(self.forward(x)?[row])
    }

    /// Adds `sign * d score(x, row) / d params` into `grad`.
    pub fn add_gradient(&self, x: &[f64], row: usize, sign: f64, grad: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        let d = self.input_dim;
        match self.kind {
            ScorerKind::Linear => {
                for (g, xi) in grad[row * d..(row + 1) * d].iter_mut().zip(x) {
                    *g += sign * xi;
                }
                grad[self.rows * d + row] += sign;
            }
            ScorerKind::FeedForward { hidden } => {
                let h = self.hidden(hidden, x);
                let off = hidden * d + hidden;
                let w2_row = &self.params[off + row * hidden..off + (row + 1) * hidden];
                for k in 0..hidden {
                    let dpre = sign * w2_row[k] * (1.0 - h[k] * h[k]);
                    for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                    grad[hidden * d + k] += dpre;
                    grad[off + row * hidden + k] += sign * h[k];
                }
                grad[off + self.rows * hidden + row] += sign;
            }
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub dim: usize,
    pub rows: usize,
}

/// Feature dimension and output arity each factor type needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSchema {
    pub entries: BTreeMap<FactorType, SchemaEntry>,
}

pub fn rows_for(g: &FactorGraph, f: &Factor) -> usize {
    match f.ftype {
        FactorType::Node => g.variables()[f.scope[0]].arity(),
        FactorType::Grandparent | FactorType::Coparent => 1,
        FactorType::Link | FactorType::Agreement => g.variables()[f.scope[0]].arity(),
        FactorType::Stance => g.variables()[f.scope[1]].arity(),
    }
}

impl BankSchema {
    pub fn of_graph(g: &FactorGraph) -> Result<Self> {
        let mut s = BankSchema::default();
        s.add_graph(g)?;
        Ok(s)
    }

    pub fn of_graphs<'a>(graphs: impl IntoIterator<Item = &'a FactorGraph>) -> Result<Self> {
        let mut s = BankSchema::default();
        for g in graphs {
            s.add_graph(g)?;
        }
        Ok(s)
    }

    fn add_graph(&mut self, g: &FactorGraph) -> Result<()> {
        for f in g.factors() {
            let entry = SchemaEntry {
                dim: f.features.len(),
                rows: rows_for(g, f),
            };
            match self.entries.get(&f.ftype) {
                Some(e) if *e != entry => {
                    return Err(Error::structural(format!(
                        "graph `{}`: {} factor {} has shape {:?}, expected {:?}",
                        g.id(),
                        f.ftype.name(),
                        f.id,
                        entry,
                        e
                    )))
                }
                Some(_) => {}
                None => {
                    self.entries.insert(f.ftype, entry);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "init", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Uniform { scale: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerBank {
    pub scorers: BTreeMap<FactorType, Scorer>,
}

impl ScorerBank {
    pub fn new(schema: &BankSchema, kind: ScorerKind, init: Init) -> Self {
        let mut rng = match init {
            Init::Uniform { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Init::Zeros => None,
        };
        let scorers = schema
            .entries
            .iter()
            .map(|(&ft, e)| {
                let s = match (&mut rng, init) {
                    (Some(rng), Init::Uniform { scale, .. }) => Scorer::random(kind, e.dim, e.rows, scale, rng),
                    _ => Scorer::zeros(kind, e.dim, e.rows),
                };
                (ft, s)
            })
            .collect();
        ScorerBank { scorers }
    }

    pub fn get(&self, ftype: FactorType) -> Result<&Scorer> {
        self.scorers
            .get(&ftype)
            .ok_or_else(|| Error::structural(format!("no scorer for {} factors", ftype.name())))
    }

    pub fn get_mut(&mut self, ftype: FactorType) -> Option<&mut Scorer> {
        self.scorers.get_mut(&ftype)
    }

    /// Every schema entry has a scorer of matching shape and parameter count.
    pub fn validate(&self, schema: &BankSchema) -> Result<()> {
        for (ft, e) in &schema.entries {
            let s = self.get(*ft)?;
            if s.input_dim != e.dim || s.rows != e.rows {
                return Err(Error::structural(format!(
                    "{} scorer has shape {}x{}, expected {}x{}",
                    ft.name(),
                    s.rows,
                    s.input_dim,
                    e.rows,
                    e.dim
                )));
            }
        }
        for (ft, s) in &self.scorers {
            if s.params.len() != Scorer::param_count(s.kind, s.input_dim, s.rows) {
                return Err(Error::structural(format!("{} scorer has a corrupt parameter vector", ft.name())));
            }
        }
        Ok(())
    }

    /// `sqrt(sum_i ||theta_i||^2)` over all scorers.
    pub fn param_norm(&self) -> f64 {
        self.scorers.values().map(Scorer::squared_norm).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for s in out.scorers.values_mut() {
            s.params.iter_mut().for_each(|p| *p *= alpha);
        }
        out
    }

    /// One SGD step with decoupled L2 weight decay: `theta -= lr * (grad + decay * theta)`.
    pub fn sgd_step(&mut self, grad: &GradientBank, lr: f64, weight_decay: f64) {
        for (ft, s) in self.scorers.iter_mut() {
            let g = grad.grads.get(ft);
            for (k, p) in s.params.iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                *p -= lr * (gk + weight_decay * *p);
            }
        }
    }
}

/// Gradient accumulator shaped like a [`ScorerBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBank {
    pub grads: BTreeMap<FactorType, Vec<f64>>,
}

impl GradientBank {
    pub fn zeros_like(bank: &ScorerBank) -> Self {
        GradientBank {
            grads: bank.scorers.iter().map(|(&ft, s)| (ft, vec![0.0; s.params.len()])).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|&x| x == 0.0))
    }

    pub fn norm(&self) -> f64 {
        self.grads.values().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &GradientBank) {
        for (ft, g) in &other.grads {
            if let Some(mine) = self.grads.get_mut(ft) {
                mine.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Shape congruence with a bank.
    pub fn matches(&self, bank: &ScorerBank) -> bool {
        self.grads.len() == bank.scorers.len()
            && bank
                .scorers
                .iter()
                .all(|(ft, s)| self.grads.get(ft).is_some_and(|g| g.len() == s.params.len()))
    }
}

/// Score of one factor under a label tuple; zero when the factor is inactive.
pub fn score_factor(f: &Factor, labels: &[Label], bank: &ScorerBank) -> Result<f64> {
    if labels.len() != f.scope.len() {
        return Err(Error::structural(format!(
            "factor {} expects {} labels, got {}",
            f.id,
            f.scope.len(),
            labels.len()
        )));
    }
    match f.ftype.active_row(labels) {
        Some(row) => bank.get(f.ftype)?.score(&f.features, row),
        None => Ok(0.0),
    }
}

/// Scores of every output row of every factor: the forward pass over a graph.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    rows: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn compute(g: &FactorGraph, bank: &ScorerBank) -> Result<Self> {
        let rows = g
            .factors()
            .iter()
            .map(|f| bank.get(f.ftype)?.forward(&f.features))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable { rows })
    }

    /// Builds a table from explicit row scores (test fixtures and planted scores).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        ScoreTable { rows }
    }

    pub fn row(&self, f: FactorId, row: usize) -> f64 {
        self.rows[f][row]
    }

    pub fn rows_of(&self, f: FactorId) -> &[f64] {
        &self.rows[f]
    }

    pub fn factor_score(&self, g: &FactorGraph, f: FactorId, a: &Assignment) -> f64 {
        let factor = &g.factors()[f];
        let mut labels = [0usize; 2];
        for (k, &v) in factor.scope.iter().enumerate() {
            labels[k] = a.get(v);
        }
        factor
            .ftype
            .active_row(&labels[..factor.scope.len()])
            .map_or(0.0, |r| self.rows[f][r])
    }

    pub fn total(&self, g: &FactorGraph, a: &Assignment) -> f64 {
        (0..g.factors().len()).map(|f| self.factor_score(g, f, a)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub total: f64,
    pub per_factor: Vec<(FactorId, f64)>,
    pub hamming_term: f64,
}

impl ScoreBreakdown {
    pub fn factor_sum(&self) -> f64 {
        self.per_factor.iter().map(|(_, s)| s).sum()
    }
}

/// Sum of the active factor scores of `a`.
pub fn score_graph(g: &FactorGraph, a: &Assignment, bank: &ScorerBank) -> Result<ScoreBreakdown> {
    a.validate(g)?;
    let per_factor = active_factors(g, a)
        .into_iter()
        .map(|af| {
            let f = &g.factors()[af.factor];
            Ok((af.factor, bank.get(f.ftype)?.score(&f.features, af.row)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_factor.iter().map(|(_, s)| s).sum();
    Ok(ScoreBreakdown {
        total,
        per_factor,
        hamming_term: 0.0,
    })
}

/// How the distance to the gold structure enters a loss-augmented score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HMode {
    /// `h * normalized_hamming` with a fixed weight.
    Fixed { h: f64 },
    /// `h = -w` per instance, so a structure differing everywhere scores zero.
    NegW,
    /// `coefficient * unnormalized_hamming`, the margin term of the hinge loss.
    AdditiveDelta { coefficient: f64 },
}

impl Default for HMode {
    fn default() -> Self {
        HMode::AdditiveDelta { coefficient: 1.0 }
    }
}

impl HMode {
    pub fn parse(name: &str, value: f64) -> Result<Self> {
        match name {
            "fixed" => Ok(HMode::Fixed { h: value }),
            "neg_w" | "negw" => Ok(HMode::NegW),
            "additive_delta" | "delta" => Ok(HMode::AdditiveDelta { coefficient: value }),
            other => Err(Error::Config(format!("unknown h-mode `{other}`"))),
        }
    }

    /// Hamming term for a structure of raw score `w` at `diff` differing
    /// positions out of `positions`.
    pub fn term(self, w: f64, diff: f64, positions: f64) -> f64 {
        let normalized = if positions > 0.0 { diff / positions } else { 0.0 };
        match self {
            HMode::Fixed { h } => h * normalized,
            HMode::NegW => -w * normalized,
            HMode::AdditiveDelta { coefficient } => coefficient * diff,
        }
    }

    /// `true` when the term is a sum of independent per-variable bonuses.
    pub fn decomposes(self) -> bool {
        !matches!(self, HMode::NegW)
    }

    /// Bonus for one variable disagreeing with gold, over `positions` variables.
    pub fn unit_bonus(self, positions: usize) -> f64 {
        match self {
            HMode::Fixed { h } => h / positions.max(1) as f64,
            HMode::AdditiveDelta { coefficient } => coefficient,
            HMode::NegW => f64::NAN,
        }
    }
}

pub fn augmented_score(
    g: &FactorGraph,
    a: &Assignment,
    gold: &Assignment,
    bank: &ScorerBank,
    mode: HMode,
) -> Result<ScoreBreakdown> {
    gold.validate(g)?;
    let mut out = score_graph(g, a, bank)?;
    let diff = hamming_distance(a, gold, false)?;
    out.hamming_term = mode.term(out.total, diff, a.len() as f64);
    out.total += out.hamming_term;
    Ok(out)
}

/// `max(0, delta(gold, pred) + score(pred) - score(gold))` with an
/// unnormalized Hamming delta.
pub fn hinge_loss(
    g: &FactorGraph,
    gold: &Assignment,
    pred: &Assignment,
    bank: &ScorerBank,
    delta_coefficient: f64,
) -> Result<f64> {
    let delta = delta_coefficient * hamming_distance(gold, pred, false)?;
    let sp = score_graph(g, pred, bank)?.total;
    let sg = score_graph(g, gold, bank)?.total;
    Ok((delta + sp - sg).max(0.0))
}

/// Subgradient of [`hinge_loss`] with respect to every scorer parameter.
pub fn hinge_gradient(
    g: &FactorGraph,
    gold: &Assignment,
    pred: &Assignment,
    bank: &ScorerBank,
    delta_coefficient: f64,
) -> Result<GradientBank> {
    let mut grad = GradientBank::zeros_like(bank);
    if hinge_loss(g, gold, pred, bank, delta_coefficient)? <= 0.0 {
        return Ok(grad);
    }
    accumulate_structured_gradient(g, gold, pred, bank, &mut grad)?;
    Ok(grad)
}

/// Adds `grad score(pred) - grad score(gold)`; factors selecting the same row
/// under both assignments are skipped so they cancel exactly.
pub fn accumulate_structured_gradient(
    g: &FactorGraph,
    gold: &Assignment,
    pred: &Assignment,
    bank: &ScorerBank,
    grad: &mut GradientBank,
) -> Result<()> {
    for f in g.factors() {
        let rp = f.ftype.active_row(&pred.labels_of(&f.scope));
        let rg = f.ftype.active_row(&gold.labels_of(&f.scope));
        if rp == rg {
            continue;
        }
        let scorer = bank.get(f.ftype)?;
        let slot = grad
            .grads
            .get_mut(&f.ftype)
            .ok_or_else(|| Error::structural(format!("gradient bank lacks {}", f.ftype.name())))?;
        if let Some(r) = rp {
            scorer.add_gradient(&f.features, r, 1.0, slot)?;
        }
        if let Some(r) = rg {
            scorer.add_gradient(&f.features, r, -1.0, slot)?;
        }
    }
    Ok(())
}
