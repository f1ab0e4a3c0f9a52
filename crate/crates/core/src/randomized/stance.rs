//! Flip search over post stances in a debate thread.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::constraints::{propagate_stance_edges, ConstraintSet, Rule};
use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, Label, ThreadLayout};
use crate::inference::{breakdown, objective, Augment, InferenceResult, Telemetry};
use crate::randomized::RandConfig;
use crate::scorer::ScoreTable;

const PERTURB: f64 = 0.5;

fn argmax(scores: &[f64]) -> Label {
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    best
}

fn set_adjacent_edges(thread: &ThreadLayout, a: &mut Assignment, post: usize) {
    for e in thread.incident_edges(post) {
        let (Some(var), Some(parent)) = (thread.edges[e], thread.parent[e]) else { continue };
        let same = a.get(thread.posts[e]) == a.get(thread.posts[parent]);
        a.set(var, if same { labels::AGREE } else { labels::DISAGREE });
    }
}

/// Greedy local initialization followed by sweeps of random-order flips.
/// `local` holds per-post stance scores from the local classifiers; the
/// post factor rows of `table` are used when it is absent. The first
/// restart starts from the greedy labels; each later one flips every flip
/// unit of them with probability one half first.
///
/// Constrained search flips a post (or every post of its author when author
/// constraints are on) and recomputes all reply edges. Unconstrained search
/// starts from the per-edge argmax and flips single posts, re-aligning only
/// the edges touching the flipped post.
pub fn randomized_inference_stance(
    g: &FactorGraph,
    table: &ScoreTable,
    local: Option<&[Vec<f64>]>,
    cs: &ConstraintSet,
    cfg: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    let thread = g
        .thread_layout()
        .ok_or_else(|| Error::structural(format!("graph `{}` is not a thread", g.id())))?;
    cfg.validate()?;
    let start = Instant::now();
    let n = thread.len();
    let local: Vec<Vec<f64>> = match local {
        Some(l) if l.len() == n => l.to_vec(),
        Some(l) => {
            return Err(Error::structural(format!(
                "{} local score vectors for {} posts in `{}`",
                l.len(),
                n,
                g.id()
            )))
        }
        None => thread.post_factors.iter().map(|&f| table.rows_of(f).to_vec()).collect(),
    };
    let author = cfg.constrained && cs.is_active(Rule::AuthorUniformity);
    let groups: Vec<Vec<usize>> = if author {
        thread.author_groups()
    } else {
        (0..n).map(|p| vec![p]).collect()
    };

    let mut init = Assignment::zeros(g);
    for grp in &groups {
        let mut summed = vec![0.0; 2];
        for &p in grp {
            for (l, s) in summed.iter_mut().enumerate() {
                *s += local[p].get(l).copied().unwrap_or(0.0);
            }
        }
        let l = argmax(&summed);
        for &p in grp {
            init.set(thread.posts[p], l);
        }
    }
    if cfg.constrained {
        init = propagate_stance_edges(g, &init, cs)?;
    } else {
        for (e, f) in thread.edge_factors.iter().enumerate() {
            if let (Some(f), Some(var)) = (f, thread.edges[e]) {
                init.set(var, argmax(table.rows_of(*f)));
            }
        }
    }
    let init_score = objective(g, table, &init, aug);

    let mut telemetry = Telemetry::default();
    let mut best: Option<(f64, Assignment)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = cfg.restart_rng(restart);
        let (mut cur, mut score) = if restart == 0 {
            (init.clone(), init_score)
        } else {
            // later restarts start from the greedy labels with random groups flipped
            let mut a = init.clone();
            for grp in &groups {
                if rng.gen_bool(PERTURB) {
                    for &p in grp {
                        let v = thread.posts[p];
                        a.set(v, 1 - a.get(v));
                    }
                    if !cfg.constrained {
                        set_adjacent_edges(thread, &mut a, grp[0]);
                    }
                }
            }
            if cfg.constrained {
                a = propagate_stance_edges(g, &a, cs)?;
            }
            let s = objective(g, table, &a, aug);
            (a, s)
        };
        let mut trace = vec![score];
        let mut moves = 0u64;
        'iterations: loop {
            let mut improved = false;
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut rng);
            for gi in order {
                if cfg.max_moves.is_some_and(|m| moves >= m) {
                    telemetry.truncated = true;
                    break 'iterations;
                }
                moves += 1;
                let mut cand = cur.clone();
                for &p in &groups[gi] {
                    let v = thread.posts[p];
                    cand.set(v, 1 - cand.get(v));
                }
                if cfg.constrained {
                    cand = propagate_stance_edges(g, &cand, cs)?;
                } else {
                    set_adjacent_edges(thread, &mut cand, groups[gi][0]);
                }
                let s = objective(g, table, &cand, aug);
                if s > score {
                    cur = cand;
                    score = s;
                    trace.push(s);
                    telemetry.accepted_moves += 1;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        telemetry.moves_evaluated += moves;
        telemetry.restarts += 1;
        if cfg.record_trace {
            telemetry.traces.push(trace);
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, cur));
        }
    }
    let (_, a) = best.expect("at least one restart");
    telemetry.wall_time = start.elapsed();
    Ok(InferenceResult {
        breakdown: breakdown(g, table, &a, aug),
        assignment: a,
        telemetry,
        proven_optimal: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::check;
    use crate::exact::exhaustive;
    use crate::graph::tests::thread;
    use crate::graph::PostInput;
    use crate::scorer::{BankSchema, Init, ScorerBank, ScorerKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_edges_keep_the_local_argmax() {
        let g = thread(&[None, Some(0), Some(0)], &["a", "b", "c"], 2);
        let table = ScoreTable::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![0.5, 0.1],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ]);
        let cs = ConstraintSet::stance(false);
        let r = randomized_inference_stance(&g, &table, None, &cs, &RandConfig::default(), None).unwrap();
        let t = g.thread_layout().unwrap();
        let stances: Vec<Label> = t.posts.iter().map(|&v| r.assignment.get(v)).collect();
        assert_eq!(stances, vec![labels::PRO, labels::CON, labels::PRO]);
    }

    #[test]
    fn agreement_outweighs_weak_post() {
        let g = thread(&[None, Some(0)], &["a", "b"], 2);
        let table = ScoreTable::from_rows(vec![vec![3.0, 0.0], vec![0.0, 0.5], vec![2.0, 0.0]]);
        let cs = ConstraintSet::stance(false);
        let ex = exhaustive(&g, &table, &cs, None, 100).unwrap();
        let r = randomized_inference_stance(&g, &table, None, &cs, &RandConfig::default(), None).unwrap();
        assert_eq!(r.assignment, ex.assignment);
        assert_eq!(r.score(), ex.score());
    }

    #[test]
    fn author_groups_flip_together() {
        let g = thread(&[None, Some(0), Some(1)], &["a", "b", "a"], 2);
        let cs = ConstraintSet::stance(true);
        let table = ScoreTable::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 3.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ]);
        let r = randomized_inference_stance(&g, &table, None, &cs, &RandConfig::default(), None).unwrap();
        assert!(check(&g, &r.assignment, &cs).is_empty());
        let t = g.thread_layout().unwrap();
        assert_eq!(r.assignment.get(t.posts[0]), labels::CON);
    }

    fn random_thread(seed: u64) -> (FactorGraph, ScoreTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..9);
        let posts: Vec<PostInput> = (0..n)
            .map(|i| PostInput {
                parent: (i > 0).then(|| rng.gen_range(0..i)),
                author: format!("u{}", rng.gen_range(0..4)),
                features: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                reply_features: None,
            })
            .collect();
        let g = FactorGraph::thread("t", posts).unwrap();
        let bank = ScorerBank::new(&BankSchema::of_graph(&g).unwrap(), ScorerKind::Linear, Init::Uniform { scale: 1.0, seed });
        let t = ScoreTable::compute(&g, &bank).unwrap();
        (g, t)
    }

    proptest! {
        #[test]
        fn constrained_search_is_valid_and_monotone(seed in any::<u64>(), author in any::<bool>()) {
            let (g, t) = random_thread(seed);
            let cs = ConstraintSet::stance(author);
            let cfg = RandConfig { restarts: 3, seed, record_trace: true, ..RandConfig::default() };
            let r = randomized_inference_stance(&g, &t, None, &cs, &cfg, None).unwrap();
            prop_assert!(check(&g, &r.assignment, &cs).is_empty());
            for trace in &r.telemetry.traces {
                prop_assert!(trace.windows(2).all(|w| w[1] > w[0]));
            }
            let ex = exhaustive(&g, &t, &cs, None, u128::MAX).unwrap();
            prop_assert!(r.score() <= ex.score() + 1e-9);
        }

        #[test]
        fn unconstrained_search_never_loses_to_its_start(seed in any::<u64>()) {
            let (g, t) = random_thread(seed);
            let cs = ConstraintSet::stance(false);
            let cfg = RandConfig { restarts: 2, seed, constrained: false, record_trace: true, ..RandConfig::default() };
            let r = randomized_inference_stance(&g, &t, None, &cs, &cfg, None).unwrap();
            for trace in &r.telemetry.traces {
                prop_assert!(r.score() >= trace[0] - 1e-12);
            }
        }
    }
}
