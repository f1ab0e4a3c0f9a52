//! Restart-based randomized greedy inference: tree hill climbing for essays
//! and flip search for debate threads.

pub mod argmining;
pub mod stance;
pub mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Task};
use crate::inference::{check_gold, Augment, InferenceResult};
use crate::scorer::{HMode, ScoreTable, ScorerBank};

pub use argmining::{hill_climb, randomized_inference_argmining, ClimbOutcome, ParagraphProblem};
pub use stance::randomized_inference_stance;

/// How hill climbing labels a candidate structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Fresh random labels for every candidate, following the constrained
    /// labeling procedure (or uniform labels when unconstrained).
    Random,
    /// Best labels for the candidate structure under the current scores.
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandConfig {
    pub restarts: usize,
    pub constrained: bool,
    #[serde(default)]
    pub hmode: HMode,
    pub seed: u64,
    /// Upper bound on candidate evaluations per local search.
    pub max_moves: Option<u64>,
    #[serde(default)]
    pub labeling: Labeling,
    /// Keep the accepted-score sequence of every local search.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for RandConfig {
    fn default() -> Self {
        RandConfig {
            restarts: 20,
            constrained: true,
            hmode: HMode::default(),
            seed: 0,
            max_moves: Some(1_000_000),
            labeling: Labeling::Greedy,
            record_trace: false,
        }
    }
}

impl RandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// Generator for one restart: a fixed stream of the run seed, so restarts
    /// are independent of the order they are executed in.
    pub fn restart_rng(&self, restart: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(restart as u64);
        rng
    }
}

pub fn randomized_inference(
    g: &FactorGraph,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    cfg: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    let table = ScoreTable::compute(g, bank)?;
    randomized_inference_table(g, &table, cs, cfg, aug)
}

pub fn randomized_inference_table(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    cfg: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    cfg.validate()?;
    check_gold(g, aug)?;
    match g.task() {
        Task::ArgMining => randomized_inference_argmining(g, table, cs, cfg, aug),
        Task::Stance => randomized_inference_stance(g, table, None, cs, cfg, aug),
    }
}
