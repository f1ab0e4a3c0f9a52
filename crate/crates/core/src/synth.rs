//! Planted synthetic corpora.
//!
//! Every factor gets a feature vector `c * e_k + noise` where `k` encodes its
//! gold class, `c = margin + 2u` and each noise coordinate is uniform in
//! `[-u, u]` with `u = 0.5`. A linear scorer with weight `e_k` on row `k`
//! then separates the classes by at least `margin`. `noise_rate` replaces
//! the prototype of a node or post with a wrong class's prototype, and
//! `edge_noise_rate` does the same for pair and reply features; gold labels
//! are never touched.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{propagate_stance_edges, sample_valid_labeling, ConstraintSet};
use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, GraphOptions, Label, ParagraphInput, PostInput, Task};
use crate::io::{
    ComponentLabel, CorpusFile, Document, EssayDocument, Link, PairFeatures, Paragraph, Post, Proposition, RelationLabel, StanceLabel,
    ThreadDocument, SCHEMA_VERSION,
};
use crate::learning::{Corpus, Split};
use crate::randomized::tree::sample_random_tree;

const NOISE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: Task,
    pub graphs: usize,
    /// Inclusive range of propositions per paragraph or posts per thread.
    pub nodes: (usize, usize),
    /// Inclusive range of paragraphs per essay; ignored for threads.
    #[serde(default = "default_paragraphs")]
    pub paragraphs: (usize, usize),
    pub dim: usize,
    pub margin: f64,
    pub noise_rate: f64,
    /// Prototype corruption rate of pair and reply-edge features; `noise_rate`
    /// when absent.
    #[serde(default)]
    pub edge_noise_rate: Option<f64>,
    pub seed: u64,
}

fn default_paragraphs() -> (usize, usize) {
    (1, 3)
}

impl SyntheticSpec {
    pub fn for_task(task: Task) -> Self {
        SyntheticSpec {
            task,
            graphs: 20,
            nodes: match task {
                Task::ArgMining => (1, 4),
                Task::Stance => (2, 8),
            },
            paragraphs: default_paragraphs(),
            dim: 6,
            margin: 1.0,
            noise_rate: 0.0,
            edge_noise_rate: None,
            seed: 0,
        }
    }

    pub fn edge_noise(&self) -> f64 {
        self.edge_noise_rate.unwrap_or(self.noise_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 || !self.margin.is_finite() {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rate) || !(0.0..1.0).contains(&self.edge_noise()) {
            return Err(Error::Config("noise rates must lie in [0, 1)".into()));
        }
        if self.dim < 4 {
            return Err(Error::Config("dim must be at least 4".into()));
        }
        if self.graphs == 0 {
            return Err(Error::Config("graphs must be at least 1".into()));
        }
        for (name, (lo, hi)) in [("nodes", self.nodes), ("paragraphs", self.paragraphs)] {
            if lo < 1 || lo > hi {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is empty or starts at 0")));
            }
        }
        Ok(())
    }
}

struct Emitter<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
}

impl Emitter<'_> {
    fn scale(&self) -> f64 {
        self.spec.margin + 2.0 * NOISE
    }

    /// Prototype of class `k` out of `classes`, placed at coordinate `offset + k`.
    fn add_prototype(&mut self, x: &mut [f64], offset: usize, k: usize, classes: usize, rate: f64) {
        let mut k = k;
        if classes > 1 && self.rng.gen_bool(rate) {
            let wrong: Vec<usize> = (0..classes).filter(|&j| j != k).collect();
            k = *wrong.choose(&mut self.rng).expect("at least two classes");
        }
        x[offset + k] += self.scale();
    }

    fn noise(&mut self) -> Vec<f64> {
        (0..self.spec.dim).map(|_| self.rng.gen_range(-NOISE..=NOISE)).collect()
    }

    fn vector(&mut self, k: usize, classes: usize, rate: f64) -> Vec<f64> {
        let mut x = self.noise();
        self.add_prototype(&mut x, 0, k, classes, rate);
        x
    }

    fn nodes(&mut self) -> usize {
        let (lo, hi) = self.spec.nodes;
        self.rng.gen_range(lo..=hi)
    }

    fn essay(&mut self, id: String, cs: &ConstraintSet) -> Result<EssayDocument> {
        let (lo, hi) = self.spec.paragraphs;
        let sizes: Vec<usize> = (0..self.rng.gen_range(lo..=hi)).map(|_| self.nodes()).collect();
        // structure first, on a featureless skeleton of the same shape
        let skeleton = FactorGraph::essay(
            id.clone(),
            sizes
                .iter()
                .map(|&n| ParagraphInput {
                    propositions: vec![Vec::new(); n],
                    pair_features: vec![Vec::new(); if n > 1 { n * n } else { 0 }],
                })
                .collect(),
            GraphOptions { second_order: false },
        )?;
        let forest: Vec<_> = sizes.iter().map(|&n| sample_random_tree(n, &mut self.rng)).collect();
        let gold = sample_valid_labeling(&skeleton, &forest, cs, &mut self.rng)?;
        let essay = skeleton.essay_layout().expect("essay skeleton");

        let mut paragraphs = Vec::with_capacity(sizes.len());
        let mut links = Vec::new();
        for (p, para) in essay.paragraphs.iter().enumerate() {
            let pid = |k: usize| format!("p{p}.{k}");
            let propositions = para
                .nodes
                .iter()
                .enumerate()
                .map(|(k, &v)| Proposition {
                    id: pid(k),
                    features: self.vector(gold.get(v), 3, self.spec.noise_rate),
                    label: ComponentLabel::from_label(gold.get(v)),
                })
                .collect();
            let mut pairs = Vec::new();
            let edge = self.spec.edge_noise();
            for (s, t, slot) in para.pair_slots() {
                let on = gold.get(slot.indicator);
                let rel = gold.get(slot.label);
                // coordinates 0/1 carry the link indicator, 2/3 the relation
                let mut x = self.noise();
                self.add_prototype(&mut x, 0, on, 2, edge);
                if on == labels::ON {
                    self.add_prototype(&mut x, 2, rel, 2, edge);
                    links.push(Link {
                        src: pid(s),
                        dst: pid(t),
                        stance: RelationLabel::from_label(rel),
                    });
                }
                pairs.push(PairFeatures {
                    src: pid(s),
                    dst: pid(t),
                    features: x,
                });
            }
            paragraphs.push(Paragraph { propositions, pairs });
        }
        Ok(EssayDocument { id, paragraphs, links })
    }

    fn thread(&mut self, id: String, cs: &ConstraintSet) -> Result<ThreadDocument> {
        let n = self.nodes();
        let authors = n.div_ceil(2);
        let author_stance: Vec<Label> = (0..authors).map(|_| self.rng.gen_range(0..2)).collect();
        let parent: Vec<Option<usize>> = (0..n).map(|i| (i > 0).then(|| self.rng.gen_range(0..i))).collect();
        let author: Vec<usize> = (0..n).map(|_| self.rng.gen_range(0..authors)).collect();
        let skeleton = FactorGraph::thread(
            id.clone(),
            (0..n)
                .map(|i| PostInput {
                    parent: parent[i],
                    author: format!("u{}", author[i]),
                    features: Vec::new(),
                    reply_features: Some(Vec::new()),
                })
                .collect(),
        )?;
        let t = skeleton.thread_layout().expect("thread skeleton");
        let mut stances = Assignment::zeros(&skeleton);
        for i in 0..n {
            stances.set(t.posts[i], author_stance[author[i]]);
        }
        let gold = propagate_stance_edges(&skeleton, &stances, cs)?;
        let posts = (0..n)
            .map(|i| {
                let stance = gold.get(t.posts[i]);
                let reply_features = t.edges[i].map(|e| self.vector(gold.get(e), 2, self.spec.edge_noise()));
                Post {
                    id: format!("m{i}"),
                    author: format!("u{}", author[i]),
                    parent: parent[i].map(|q| format!("m{q}")),
                    features: self.vector(stance, 2, self.spec.noise_rate),
                    stance: StanceLabel::from_label(stance),
                    agreement: None,
                    reply_features,
                }
            })
            .collect();
        Ok(ThreadDocument {
            id,
            topic: "synthetic".into(),
            posts,
        })
    }
}

/// Documents of a planted corpus; identical for identical specs.
pub fn synthesize(spec: &SyntheticSpec, split: Split) -> Result<CorpusFile> {
    spec.validate()?;
    let mut em = Emitter {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let cs = match spec.task {
        Task::ArgMining => ConstraintSet::arg_mining(),
        Task::Stance => ConstraintSet::stance(true),
    };
    let documents = (0..spec.graphs)
        .map(|i| {
            let id = format!("{}-{}-{i}", split.name(), spec.seed);
            Ok(match spec.task {
                Task::ArgMining => Document::Essay(em.essay(id, &cs)?),
                Task::Stance => Document::Thread(em.thread(id, &cs)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusFile {
        schema_version: SCHEMA_VERSION,
        task: spec.task,
        split,
        documents,
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec, split: Split) -> Result<Corpus> {
    synthesize(spec, split)?.to_corpus(GraphOptions::default())
}
