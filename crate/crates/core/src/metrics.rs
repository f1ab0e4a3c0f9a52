//! Classification metrics over predicted structures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, Label, Layout};

/// Square confusion matrix indexed `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, gold: Label, pred: Label) {
        self.counts[gold][pred] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn class(&self, c: usize) -> ClassStats {
        let tp = self.counts[c][c] as f64;
        let gold: u64 = self.counts[c].iter().sum();
        let pred: u64 = self.counts.iter().map(|row| row[c]).sum();
        let precision = if pred > 0 { tp / pred as f64 } else { 0.0 };
        let recall = if gold > 0 { tp / gold as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassStats {
            precision,
            recall,
            f1,
            support: gold,
        }
    }

    /// `true` when a class never occurs in either the gold or the predictions.
    fn absent(&self, c: usize) -> bool {
        self.counts[c].iter().sum::<u64>() == 0 && self.counts.iter().all(|row| row[c] == 0)
    }

    /// Unweighted mean of per-class F1. A class with gold or predicted
    /// instances but no true positives contributes 0; a class absent from
    /// both sides is left out.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<usize> = (0..self.classes()).filter(|&c| !self.absent(c)).collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().map(|&c| self.class(c).f1).sum::<f64>() / present.len() as f64
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes()).map(|c| self.counts[c][c]).sum::<u64>() as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Component macro-F1 for essays, post stance macro-F1 for threads.
    pub node_macro_f1: f64,
    /// F1 of the link-present class over every candidate pair (essays only).
    pub link_positive_f1: Option<f64>,
    /// Support/attack macro-F1 over gold links for essays, agree/disagree
    /// macro-F1 over reply edges for threads.
    pub stance_macro_f1: f64,
    /// Node-level accuracy.
    pub accuracy: f64,
    /// Mean of node and link F1; node F1 alone when there are no links.
    pub average: f64,
    pub per_class: BTreeMap<String, ClassStats>,
    /// `false` when some prediction was not proven optimal.
    pub exact: bool,
    pub graphs: usize,
}

/// Scores predicted assignments against gold.
pub fn compute_metrics(graphs: &[FactorGraph], gold: &[Assignment], pred: &[Assignment]) -> Result<MetricsReport> {
    if graphs.len() != gold.len() || graphs.len() != pred.len() {
        return Err(Error::structural("graph, gold and prediction counts differ"));
    }
    let task_layouts: Vec<&Layout> = graphs.iter().map(FactorGraph::layout).collect();
    let essays = task_layouts.iter().all(|l| matches!(l, Layout::Essay(_)));
    let threads = task_layouts.iter().all(|l| matches!(l, Layout::Thread(_)));
    if !essays && !threads {
        return Err(Error::structural("cannot mix essays and threads in one report"));
    }
    let mut per_class = BTreeMap::new();
    if essays {
        let mut nodes = Confusion::new(3);
        let mut links = Confusion::new(2);
        let mut rel = Confusion::new(2);
        for ((g, y), p) in graphs.iter().zip(gold).zip(pred) {
            y.validate(g)?;
            p.validate(g)?;
            for para in &g.essay_layout().unwrap().paragraphs {
                for &v in &para.nodes {
                    nodes.add(y.get(v), p.get(v));
                }
                for (_, _, slot) in para.pair_slots() {
                    links.add(y.get(slot.indicator), p.get(slot.indicator));
                    if y.get(slot.indicator) == labels::ON {
                        rel.add(y.get(slot.label), p.get(slot.label));
                    }
                }
            }
        }
        for (c, name) in labels::COMPONENT_NAMES.iter().enumerate() {
            per_class.insert(name.to_string(), nodes.class(c));
        }
        per_class.insert("link".to_string(), links.class(labels::ON));
        for (c, name) in labels::RELATION_NAMES.iter().enumerate() {
            per_class.insert(name.to_string(), rel.class(c));
        }
        let node_f1 = nodes.macro_f1();
        let link_f1 = links.class(labels::ON).f1;
        Ok(MetricsReport {
            node_macro_f1: node_f1,
            link_positive_f1: Some(link_f1),
            stance_macro_f1: rel.macro_f1(),
            accuracy: nodes.accuracy(),
            average: 0.5 * (node_f1 + link_f1),
            per_class,
            exact: true,
            graphs: graphs.len(),
        })
    } else {
        let mut posts = Confusion::new(2);
        let mut edges = Confusion::new(2);
        for ((g, y), p) in graphs.iter().zip(gold).zip(pred) {
            y.validate(g)?;
            p.validate(g)?;
            let t = g.thread_layout().unwrap();
            for &v in &t.posts {
                posts.add(y.get(v), p.get(v));
            }
            for &v in t.edges.iter().flatten() {
                edges.add(y.get(v), p.get(v));
            }
        }
        for (c, name) in labels::STANCE_NAMES.iter().enumerate() {
            per_class.insert(name.to_string(), posts.class(c));
        }
        for (c, name) in labels::AGREEMENT_NAMES.iter().enumerate() {
            per_class.insert(name.to_string(), edges.class(c));
        }
        let node_f1 = posts.macro_f1();
        Ok(MetricsReport {
            node_macro_f1: node_f1,
            link_positive_f1: None,
            stance_macro_f1: edges.macro_f1(),
            accuracy: posts.accuracy(),
            average: node_f1,
            per_class,
            exact: true,
            graphs: graphs.len(),
        })
    }
}
