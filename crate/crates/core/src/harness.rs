//! Inference timing and restart sweeps.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::exact::ExactConfig;
use crate::inference::{infer_table, Backend};
use crate::learning::Corpus;
use crate::metrics::compute_metrics;
use crate::randomized::RandConfig;
use crate::scorer::{ScoreTable, ScorerBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendTiming {
    pub backend: Backend,
    /// Corpus inference time of every repeat, in seconds.
    pub runs: Vec<f64>,
    pub mean_seconds: f64,
    pub stddev_seconds: f64,
    /// Mean per-graph time over the repeats, in corpus order.
    pub per_graph_seconds: Vec<f64>,
    /// Mean objective of the returned assignments over successful graphs.
    pub mean_score: f64,
    /// Graph ids on which the backend failed; they are excluded from the means.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub graphs: usize,
    pub repeats: usize,
    pub timings: Vec<BackendTiming>,
    /// `speedup[i][j]` is the mean time of backend `i` over that of backend `j`.
    pub speedup: Vec<Vec<f64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn tables(corpus: &Corpus, bank: &ScorerBank) -> Result<Vec<ScoreTable>> {
    corpus.graphs.iter().map(|g| ScoreTable::compute(g, bank)).collect()
}

/// Times every backend over the whole corpus `repeats` times (at least 5).
/// Factor scores are computed once up front, so only inference is timed.
pub fn bench_inference(
    corpus: &Corpus,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    backends: &[Backend],
    rand: &RandConfig,
    exact: &ExactConfig,
    repeats: usize,
) -> Result<BenchReport> {
    if backends.is_empty() {
        return Err(Error::Config("no backends to benchmark".into()));
    }
    let repeats = repeats.max(5);
    let tables = tables(corpus, bank)?;
    let mut timings = Vec::with_capacity(backends.len());
    for &backend in backends {
        let mut failed = vec![false; corpus.len()];
        let mut per_graph = vec![0.0; corpus.len()];
        let mut scores = vec![0.0; corpus.len()];
        let mut runs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut total = 0.0;
            for (i, (g, t)) in corpus.graphs.iter().zip(&tables).enumerate() {
                let start = Instant::now();
                let r = infer_table(g, t, cs, backend, exact, rand, None);
                let secs = start.elapsed().as_secs_f64();
                match r {
                    Ok(r) if !failed[i] => {
                        per_graph[i] += secs / repeats as f64;
                        scores[i] = r.score();
                        total += secs;
                    }
                    _ => failed[i] = true,
                }
            }
            runs.push(total);
        }
        let ok: Vec<usize> = (0..corpus.len()).filter(|&i| !failed[i]).collect();
        let (mean_seconds, stddev_seconds) = mean_std(&runs);
        timings.push(BackendTiming {
            backend,
            runs,
            mean_seconds,
            stddev_seconds,
            per_graph_seconds: per_graph,
            mean_score: if ok.is_empty() { 0.0 } else { ok.iter().map(|&i| scores[i]).sum::<f64>() / ok.len() as f64 },
            failures: (0..corpus.len()).filter(|&i| failed[i]).map(|i| corpus.graphs[i].id().to_string()).collect(),
        });
    }
    let speedup = timings
        .iter()
        .map(|a| {
            timings
                .iter()
                .map(|b| {
                    if std::ptr::eq(a, b) {
                        1.0
                    } else {
                        a.mean_seconds / b.mean_seconds.max(f64::MIN_POSITIVE)
                    }
                })
                .collect()
        })
        .collect();
    Ok(BenchReport {
        graphs: corpus.len(),
        repeats,
        timings,
        speedup,
    })
}

/// Randomized score normalized by the exact optimum: `1 - gap / |exact|`.
/// When the optimum is zero the raw gap is used instead.
pub fn score_ratio(exact: f64, rand: f64) -> f64 {
    let gap = exact - rand;
    if exact.abs() < 1e-12 {
        1.0 - gap
    } else {
        1.0 - gap / exact.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub restarts: usize,
    /// Mean over graphs of [`score_ratio`].
    pub score_ratio: f64,
    pub min_score_ratio: f64,
    /// Graphs where the randomized score reached the exact optimum.
    pub optimal_hits: usize,
    /// Average F1 of randomized predictions over that of exact predictions.
    pub metric_ratio: f64,
    pub seconds: f64,
    pub time_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub graphs: usize,
    pub exact_seconds: f64,
    pub exact_average_f1: f64,
    pub points: Vec<SweepPoint>,
}

/// Evaluates the randomized backend at each restart count against exact
/// inference on the same scores.
pub fn sweep_restarts(
    corpus: &Corpus,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    restart_list: &[usize],
    rand: &RandConfig,
    exact: &ExactConfig,
) -> Result<SweepReport> {
    let tables = tables(corpus, bank)?;
    let mut exact_scores = Vec::with_capacity(corpus.len());
    let mut exact_preds = Vec::with_capacity(corpus.len());
    let start = Instant::now();
    for (g, t) in corpus.graphs.iter().zip(&tables) {
        let r = infer_table(g, t, cs, Backend::Exact, exact, rand, None)?;
        exact_scores.push(r.score());
        exact_preds.push(r.assignment);
    }
    let exact_seconds = start.elapsed().as_secs_f64();
    let exact_f1 = compute_metrics(&corpus.graphs, &corpus.gold, &exact_preds)?.average;

    let mut points = Vec::with_capacity(restart_list.len());
    for &restarts in restart_list {
        let cfg = RandConfig {
            restarts,
            constrained: true,
            ..rand.clone()
        };
        let mut ratios = Vec::with_capacity(corpus.len());
        let mut preds = Vec::with_capacity(corpus.len());
        let mut hits = 0;
        let mut seconds = 0.0;
        for ((g, t), &best) in corpus.graphs.iter().zip(&tables).zip(&exact_scores) {
            let start = Instant::now();
            let r = infer_table(g, t, cs, Backend::RandConstrained, exact, &cfg, None)?;
            seconds += start.elapsed().as_secs_f64();
            let s = r.score();
            if s > best + 1e-6 {
                return Err(Error::structural(format!(
                    "randomized score {s} exceeds the exact optimum {best} on `{}`",
                    g.id()
                )));
            }
            hits += usize::from(s >= best - 1e-9);
            ratios.push(score_ratio(best, s));
            preds.push(r.assignment);
        }
        let f1 = compute_metrics(&corpus.graphs, &corpus.gold, &preds)?.average;
        points.push(SweepPoint {
            restarts,
            score_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            min_score_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            optimal_hits: hits,
            metric_ratio: if exact_f1 > 0.0 { f1 / exact_f1 } else { 1.0 },
            seconds,
            time_ratio: seconds / exact_seconds.max(f64::MIN_POSITIVE),
        });
    }
    Ok(SweepReport {
        graphs: corpus.len(),
        exact_seconds,
        exact_average_f1: exact_f1,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Task;
    use crate::learning::Split;
    use crate::scorer::{BankSchema, Init, ScorerKind};
    use crate::synth::{generate_synthetic, SyntheticSpec};

    fn setup(task: Task, nodes: (usize, usize)) -> (Corpus, ScorerBank, ConstraintSet) {
        let spec = SyntheticSpec {
            graphs: 6,
            nodes,
            paragraphs: (1, 2),
            seed: 2,
            ..SyntheticSpec::for_task(task)
        };
        let c = generate_synthetic(&spec, Split::Test).unwrap();
        let bank = ScorerBank::new(&BankSchema::of_graphs(&c.graphs).unwrap(), ScorerKind::Linear, Init::Uniform { scale: 0.5, seed: 1 });
        let cs = ConstraintSet::for_task(task);
        (c, bank, cs)
    }

    #[test]
    fn single_backend_speedup_is_identity() {
        let (c, bank, cs) = setup(Task::Stance, (2, 5));
        let r = bench_inference(&c, &bank, &cs, &[Backend::Exact], &RandConfig::default(), &ExactConfig::default(), 1).unwrap();
        assert_eq!(r.repeats, 5);
        assert_eq!(r.speedup, vec![vec![1.0]]);
        let t = &r.timings[0];
        assert!(t.failures.is_empty());
        // totals are sums of per-graph timings
        let mean_total: f64 = t.per_graph_seconds.iter().sum();
        assert!((mean_total - t.mean_seconds).abs() < 1e-9);
    }

    #[test]
    fn failing_backend_is_flagged() {
        let (c, bank, cs) = setup(Task::Stance, (2, 3));
        let r = bench_inference(&c, &bank, &cs, &[Backend::Ad3, Backend::Exact], &RandConfig::default(), &ExactConfig::default(), 5).unwrap();
        assert_eq!(r.timings[0].failures.len(), c.len());
        assert!(r.timings[1].failures.is_empty());
    }

    #[test]
    fn one_variable_graphs_sweep_to_one() {
        let (c, bank, cs) = setup(Task::Stance, (1, 1));
        let r = sweep_restarts(&c, &bank, &cs, &[1], &RandConfig::default(), &ExactConfig::default()).unwrap();
        assert_eq!(r.points[0].score_ratio, 1.0);
        assert_eq!(r.points[0].optimal_hits, c.len());
    }

    #[test]
    fn ratios_never_exceed_one() {
        let (c, bank, cs) = setup(Task::ArgMining, (1, 3));
        let r = sweep_restarts(&c, &bank, &cs, &[1, 5], &RandConfig::default(), &ExactConfig::default()).unwrap();
        for p in &r.points {
            assert!(p.score_ratio <= 1.0 + 1e-12 && p.min_score_ratio <= p.score_ratio);
        }
    }

    #[test]
    fn zero_optimum_uses_the_raw_gap() {
        assert_eq!(score_ratio(0.0, 0.0), 1.0);
        assert_eq!(score_ratio(0.0, -0.25), 0.75);
        assert_eq!(score_ratio(-2.0, -3.0), 0.5);
        assert_eq!(score_ratio(4.0, 3.0), 0.75);
    }
}
