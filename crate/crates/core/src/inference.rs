//! Shared inference plumbing: backends, results, telemetry and objective
//! evaluation over precomputed factor scores.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::exact::{exact_map_table, ExactConfig};
use crate::graph::{hamming_distance, Assignment, FactorGraph};
use crate::randomized::{randomized_inference_table, RandConfig};
use crate::scorer::{HMode, ScoreBreakdown, ScoreTable, ScorerBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    RandConstrained,
    RandUnconstrained,
    /// Independent per-factor argmax with no structure and no constraints.
    LocalOnly,
    /// Reserved for externally produced AD3 results; not executable here.
    Ad3,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::RandConstrained => "rand_constrained",
            Backend::RandUnconstrained => "rand_unconstrained",
            Backend::LocalOnly => "local_only",
            Backend::Ad3 => "ad3",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "rand_constrained" | "rand-c" | "randc" => Ok(Backend::RandConstrained),
            "rand_unconstrained" | "rand" => Ok(Backend::RandUnconstrained),
            "local_only" | "local" => Ok(Backend::LocalOnly),
            "ad3" => Ok(Backend::Ad3),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// Gold structure and h-mode for loss-augmented inference.
#[derive(Debug, Clone, Copy)]
pub struct Augment<'a> {
    pub gold: &'a Assignment,
    pub mode: HMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub restarts: usize,
    pub moves_evaluated: u64,
    pub accepted_moves: u64,
    /// Search nodes visited by branch and bound.
    pub nodes_expanded: u64,
    #[serde(with = "secs")]
    pub wall_time: Duration,
    /// Set when a move cap or time budget cut a search short.
    pub truncated: bool,
    /// Accepted-move score sequences, one per local search, when recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<Vec<f64>>,
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(v.max(0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub assignment: Assignment,
    pub breakdown: ScoreBreakdown,
    pub telemetry: Telemetry,
    pub proven_optimal: bool,
}

impl InferenceResult {
    pub fn score(&self) -> f64 {
        self.breakdown.total
    }
}

/// Raw score plus the h-mode term against the gold structure.
pub fn objective(g: &FactorGraph, table: &ScoreTable, a: &Assignment, aug: Option<Augment<'_>>) -> f64 {
    let w = table.total(g, a);
    match aug {
        None => w,
        Some(au) => {
            let diff = hamming_distance(a, au.gold, false).unwrap_or(0.0);
            w + au.mode.term(w, diff, a.len() as f64)
        }
    }
}

pub fn breakdown(g: &FactorGraph, table: &ScoreTable, a: &Assignment, aug: Option<Augment<'_>>) -> ScoreBreakdown {
    let mut per_factor = Vec::new();
    for f in g.factors() {
        let labels = a.labels_of(&f.scope);
        if let Some(row) = f.ftype.active_row(&labels) {
            per_factor.push((f.id, table.row(f.id, row)));
        }
    }
    let w: f64 = per_factor.iter().map(|(_, s)| s).sum();
    let hamming_term = match aug {
        None => 0.0,
        Some(au) => {
            let diff = hamming_distance(a, au.gold, false).unwrap_or(0.0);
            au.mode.term(w, diff, a.len() as f64)
        }
    };
    ScoreBreakdown {
        total: w + hamming_term,
        per_factor,
        hamming_term,
    }
}

pub(crate) fn check_gold(g: &FactorGraph, aug: Option<Augment<'_>>) -> Result<()> {
    if let Some(au) = aug {
        au.gold.validate(g)?;
    }
    Ok(())
}

/// Per-variable argmax of each variable's own factor, ignoring structure.
/// Link labels take the argmax of their stance factor; second-order
/// factors are ignored.
pub fn local_argmax(g: &FactorGraph, table: &ScoreTable, aug: Option<Augment<'_>>) -> Assignment {
    let bonus = |v: usize, l: usize| -> f64 {
        match aug {
            Some(au) if au.mode.decomposes() && au.gold.get(v) != l => au.mode.unit_bonus(g.num_variables()),
            _ => 0.0,
        }
    };
    let mut a = Assignment::zeros(g);
    for v in g.variables() {
        let f = &g.factors()[v.feature_ref];
        let rows = table.rows_of(f.id);
        let mut best = (f64::NEG_INFINITY, 0);
        for l in 0..v.arity() {
            let s = rows.get(l).copied().unwrap_or(0.0) + bonus(v.id, l);
            if s > best.0 {
                best = (s, l);
            }
        }
        a.set(v.id, best.1);
    }
    a
}

/// Runs one backend on one graph with precomputed scores.
pub fn infer_table(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    backend: Backend,
    exact: &ExactConfig,
    rand: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    if cs.task != g.task() {
        return Err(Error::Config(format!(
            "constraint set for {} applied to {} graph `{}`",
            cs.task,
            g.task(),
            g.id()
        )));
    }
    check_gold(g, aug)?;
    let wrap = |e: Error| match e {
        Error::Inference { .. } => e,
        other => Error::Inference {
            graph: g.id().to_string(),
            source: Box::new(other),
        },
    };
    match backend {
        Backend::Exact => exact_map_table(g, table, cs, aug, exact).map_err(wrap),
        Backend::RandConstrained | Backend::RandUnconstrained => {
            let cfg = RandConfig {
                constrained: backend == Backend::RandConstrained,
                ..rand.clone()
            };
            randomized_inference_table(g, table, cs, &cfg, aug).map_err(wrap)
        }
        Backend::LocalOnly => {
            let start = std::time::Instant::now();
            let a = local_argmax(g, table, aug);
            Ok(InferenceResult {
                breakdown: breakdown(g, table, &a, aug),
                assignment: a,
                telemetry: Telemetry {
                    wall_time: start.elapsed(),
                    ..Telemetry::default()
                },
                proven_optimal: false,
            })
        }
        Backend::Ad3 => Err(Error::Unsupported(
            "the ad3 backend only ingests external results and cannot run inference".into(),
        )),
    }
}

pub fn infer(
    g: &FactorGraph,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    backend: Backend,
    exact: &ExactConfig,
    rand: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    let table = ScoreTable::compute(g, bank)?;
    infer_table(g, &table, cs, backend, exact, rand, aug)
}
