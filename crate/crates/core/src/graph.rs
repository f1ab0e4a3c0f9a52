//! Factor-graph representation shared by the argument-mining and stance tasks.
//!
//! A graph owns dense variables `0..n` and factors `0..m`. The task layout
//! ([`EssayLayout`] or [`ThreadLayout`]) records how those ids map onto the
//! discourse structure so the search procedures can move between a tree view
//! and the flat assignment vector without hashing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, GroundConstraints};
use crate::error::{Error, Result};

pub type VarId = usize;
pub type FactorId = usize;
pub type Label = usize;

/// Label ids used by both tasks.
pub mod labels {
    use super::Label;

    pub const MAJOR_CLAIM: Label = 0;
    pub const CLAIM: Label = 1;
    pub const PREMISE: Label = 2;

    pub const SUPPORT: Label = 0;
    pub const ATTACK: Label = 1;

    pub const OFF: Label = 0;
    pub const ON: Label = 1;

    pub const PRO: Label = 0;
    pub const CON: Label = 1;

    pub const AGREE: Label = 0;
    pub const DISAGREE: Label = 1;

    pub const COMPONENT_NAMES: [&str; 3] = ["major_claim", "claim", "premise"];
    pub const RELATION_NAMES: [&str; 2] = ["support", "attack"];
    pub const STANCE_NAMES: [&str; 2] = ["pro", "con"];
    pub const AGREEMENT_NAMES: [&str; 2] = ["agree", "disagree"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ArgMining,
    Stance,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::ArgMining => write!(f, "arg_mining"),
            Task::Stance => write!(f, "stance"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    NodeLabel,
    LinkIndicator,
    LinkLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub id: VarId,
    pub kind: VarKind,
    pub domain: Vec<Label>,
    /// Factor holding the features this variable is primarily scored from.
    pub feature_ref: FactorId,
}

impl Variable {
    pub fn arity(&self) -> usize {
        self.domain.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorType {
    Node,
    Link,
    Stance,
    Grandparent,
    Coparent,
    Agreement,
}

impl FactorType {
    pub const ALL: [FactorType; 6] = [
        FactorType::Node,
        FactorType::Link,
        FactorType::Stance,
        FactorType::Grandparent,
        FactorType::Coparent,
        FactorType::Agreement,
    ];

    /// Scorer output row selected by the scope labels, or `None` when the
    /// factor is inactive and contributes nothing.
    ///
    /// Stance factors are gated by their link indicator; second-order factors
    /// need both of their indicators switched on.
    pub fn active_row(self, labels: &[Label]) -> Option<usize> {
        match self {
            FactorType::Node | FactorType::Link | FactorType::Agreement => Some(labels[0]),
            FactorType::Stance => (labels[0] == labels::ON).then_some(labels[1]),
            FactorType::Grandparent | FactorType::Coparent => {
                labels.iter().all(|&l| l == labels::ON).then_some(0)
            }
        }
    }

    pub fn scope_len(self) -> usize {
        match self {
            FactorType::Node | FactorType::Link | FactorType::Agreement => 1,
            FactorType::Stance | FactorType::Grandparent | FactorType::Coparent => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorType::Node => "node",
            FactorType::Link => "link",
            FactorType::Stance => "stance",
            FactorType::Grandparent => "grandparent",
            FactorType::Coparent => "coparent",
            FactorType::Agreement => "agreement",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub id: FactorId,
    pub ftype: FactorType,
    pub scope: Vec<VarId>,
    pub features: Vec<f64>,
}

/// Variables and factors of one candidate link `src -> dst` (src is the child).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSlot {
    pub indicator: VarId,
    pub label: VarId,
    pub link_factor: FactorId,
    pub stance_factor: FactorId,
}

#[derive(Debug, Clone)]
pub struct ParagraphLayout {
    pub nodes: Vec<VarId>,
    pub node_factors: Vec<FactorId>,
    pairs: Vec<Option<PairSlot>>,
    grandparents: Vec<Option<FactorId>>,
    coparents: Vec<Option<FactorId>>,
}

impl ParagraphLayout {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pair(&self, src: usize, dst: usize) -> Option<&PairSlot> {
        let n = self.len();
        self.pairs[src * n + dst].as_ref()
    }

    /// Factor for the chain `a -> b -> c`.
    pub fn grandparent(&self, a: usize, b: usize, c: usize) -> Option<FactorId> {
        let n = self.len();
        self.grandparents.get((a * n + b) * n + c).copied().flatten()
    }

    /// Factor for the sibling pair `a -> b <- c`.
    pub fn coparent(&self, a: usize, b: usize, c: usize) -> Option<FactorId> {
        let n = self.len();
        self.coparents.get((a * n + b) * n + c).copied().flatten()
    }

    pub fn has_second_order(&self) -> bool {
        self.grandparents.iter().any(Option::is_some) || self.coparents.iter().any(Option::is_some)
    }

    pub fn pair_slots(&self) -> impl Iterator<Item = (usize, usize, &PairSlot)> + '_ {
        let n = self.len();
        self.pairs
            .iter()
            .enumerate()
            .filter_map(move |(k, p)| p.as_ref().map(|p| (k / n, k % n, p)))
    }

    /// Every variable id owned by this paragraph, in ascending order.
    pub fn variables(&self) -> Vec<VarId> {
        let mut vars = self.nodes.clone();
        for (_, _, p) in self.pair_slots() {
            vars.push(p.indicator);
            vars.push(p.label);
        }
        vars.sort_unstable();
        vars
    }

    pub fn factors(&self) -> Vec<FactorId> {
        let mut fs = self.node_factors.clone();
        for (_, _, p) in self.pair_slots() {
            fs.push(p.link_factor);
            fs.push(p.stance_factor);
        }
        fs.extend(self.grandparents.iter().flatten());
        fs.extend(self.coparents.iter().flatten());
        fs.sort_unstable();
        fs
    }
}

#[derive(Debug, Clone)]
pub struct EssayLayout {
    pub paragraphs: Vec<ParagraphLayout>,
}

impl EssayLayout {
    /// Major claims may only sit in the first or the last paragraph. Empty
    /// paragraphs are skipped so an essay always has an eligible position.
    pub fn major_claim_allowed(&self, paragraph: usize) -> bool {
        let first = self.paragraphs.iter().position(|p| !p.is_empty());
        let last = self.paragraphs.iter().rposition(|p| !p.is_empty());
        Some(paragraph) == first || Some(paragraph) == last
    }

    /// Major-claim probability for roots of `paragraph`, if eligible.
    pub fn major_claim_prob(&self, paragraph: usize, first_prob: f64, last_prob: f64) -> Option<f64> {
        let first = self.paragraphs.iter().position(|p| !p.is_empty());
        let last = self.paragraphs.iter().rposition(|p| !p.is_empty());
        if Some(paragraph) == first {
            Some(first_prob)
        } else if Some(paragraph) == last {
            Some(last_prob)
        } else {
            None
        }
    }

    pub fn node_count(&self) -> usize {
        self.paragraphs.iter().map(ParagraphLayout::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ThreadLayout {
    pub posts: Vec<VarId>,
    pub parent: Vec<Option<usize>>,
    /// Agreement variable of the reply edge from each post to its parent.
    pub edges: Vec<Option<VarId>>,
    pub post_factors: Vec<FactorId>,
    pub edge_factors: Vec<Option<FactorId>>,
    pub authors: Vec<String>,
}

impl ThreadLayout {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Posts grouped by author, groups ordered by first appearance.
    pub fn author_groups(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (post, author) in self.authors.iter().enumerate() {
            match order.iter().position(|a| *a == author.as_str()) {
                Some(k) => groups[k].push(post),
                None => {
                    order.push(author);
                    groups.push(vec![post]);
                }
            }
        }
        groups
    }

    /// Reply edges touching a post: its own edge plus the edges of its children.
    pub fn incident_edges(&self, post: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if self.edges[post].is_some() {
            out.push(post);
        }
        for (child, parent) in self.parent.iter().enumerate() {
            if *parent == Some(post) {
                out.push(child);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum Layout {
    Essay(EssayLayout),
    Thread(ThreadLayout),
}

#[derive(Debug, Clone)]
pub struct ParagraphInput {
    pub propositions: Vec<Vec<f64>>,
    /// Row-major `n x n` pair features indexed `src * n + dst`; diagonal entries are ignored.
    pub pair_features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PostInput {
    pub parent: Option<usize>,
    pub author: String,
    pub features: Vec<f64>,
    /// Features of the reply edge to the parent; derived from both posts when absent.
    pub reply_features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Materialize grandparent and co-parent factors.
    pub second_order: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { second_order: true }
    }
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    id: String,
    task: Task,
    variables: Vec<Variable>,
    factors: Vec<Factor>,
    groups: Vec<usize>,
    layout: Layout,
    var_factors: Vec<Vec<FactorId>>,
}

struct Builder {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
    groups: Vec<usize>,
}

impl Builder {
    fn var(&mut self, kind: VarKind, arity: usize, group: usize) -> VarId {
        let id = self.variables.len();
        self.variables.push(Variable {
            id,
            kind,
            domain: (0..arity).collect(),
            feature_ref: usize::MAX,
        });
        self.groups.push(group);
        id
    }

    fn factor(&mut self, ftype: FactorType, scope: Vec<VarId>, features: Vec<f64>) -> FactorId {
        let id = self.factors.len();
        self.factors.push(Factor {
            id,
            ftype,
            scope,
            features,
        });
        id
    }
}

impl FactorGraph {
    /// Builds an essay graph: one node-label variable per proposition and, for
    /// every ordered within-paragraph pair, a link indicator and a link label.
    pub fn essay(id: impl Into<String>, paragraphs: Vec<ParagraphInput>, opts: GraphOptions) -> Result<Self> {
        let id = id.into();
        if paragraphs.is_empty() || paragraphs.iter().all(|p| p.propositions.is_empty()) {
            return Err(Error::structural(format!("essay `{id}` has no propositions")));
        }
        let mut b = Builder {
            variables: Vec::new(),
            factors: Vec::new(),
            groups: Vec::new(),
        };
        let mut layouts = Vec::with_capacity(paragraphs.len());

        for (p, para) in paragraphs.iter().enumerate() {
            let n = para.propositions.len();
            if n > 1 && para.pair_features.len() != n * n {
                return Err(Error::structural(format!(
                    "essay `{id}` paragraph {p}: expected {} pair feature slots, found {}",
                    n * n,
                    para.pair_features.len()
                )));
            }
            let nodes: Vec<VarId> = (0..n).map(|_| b.var(VarKind::NodeLabel, 3, p)).collect();
            let mut pairs: Vec<Option<(VarId, VarId)>> = vec![None; n * n];
            for src in 0..n {
                for dst in 0..n {
                    if src != dst {
                        pairs[src * n + dst] = Some((b.var(VarKind::LinkIndicator, 2, p), 0));
                    }
                }
            }
            for slot in pairs.iter_mut().flatten() {
                slot.1 = b.var(VarKind::LinkLabel, 2, p);
            }

            let node_factors: Vec<FactorId> = nodes
                .iter()
                .zip(&para.propositions)
                .map(|(&v, x)| b.factor(FactorType::Node, vec![v], x.clone()))
                .collect();
            let mut slots: Vec<Option<PairSlot>> = vec![None; n * n];
            for k in 0..n * n {
                if let Some((ind, _)) = pairs[k] {
                    let f = b.factor(FactorType::Link, vec![ind], para.pair_features[k].clone());
                    slots[k] = Some(PairSlot {
                        indicator: ind,
                        label: 0,
                        link_factor: f,
                        stance_factor: 0,
                    });
                }
            }
            for k in 0..n * n {
                if let Some((ind, lab)) = pairs[k] {
                    let f = b.factor(FactorType::Stance, vec![ind, lab], para.pair_features[k].clone());
                    let slot = slots[k].as_mut().expect("slot created above");
                    slot.label = lab;
                    slot.stance_factor = f;
                }
            }

            let mut grandparents = Vec::new();
            let mut coparents = Vec::new();
            if opts.second_order && n >= 3 {
                grandparents = vec![None; n * n * n];
                coparents = vec![None; n * n * n];
                let concat = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().chain(y).copied().collect() };
                for a in 0..n {
                    for bb in 0..n {
                        for c in 0..n {
                            if a == bb || bb == c || a == c {
                                continue;
                            }
                            let ab = slots[a * n + bb].unwrap();
                            let bc = slots[bb * n + c].unwrap();
                            let x = concat(&para.pair_features[a * n + bb], &para.pair_features[bb * n + c]);
                            grandparents[(a * n + bb) * n + c] =
                                Some(b.factor(FactorType::Grandparent, vec![ab.indicator, bc.indicator], x));
                        }
                    }
                }
                for a in 0..n {
                    for bb in 0..n {
                        for c in 0..n {
                            if a == bb || bb == c || a == c {
                                continue;
                            }
                            let ab = slots[a * n + bb].unwrap();
                            let cb = slots[c * n + bb].unwrap();
                            let x = concat(&para.pair_features[a * n + bb], &para.pair_features[c * n + bb]);
                            coparents[(a * n + bb) * n + c] =
                                Some(b.factor(FactorType::Coparent, vec![ab.indicator, cb.indicator], x));
                        }
                    }
                }
            }

            for (&v, &f) in nodes.iter().zip(&node_factors) {
                b.variables[v].feature_ref = f;
            }
            for slot in slots.iter().flatten() {
                b.variables[slot.indicator].feature_ref = slot.link_factor;
                b.variables[slot.label].feature_ref = slot.stance_factor;
            }
            layouts.push(ParagraphLayout {
                nodes,
                node_factors,
                pairs: slots,
                grandparents,
                coparents,
            });
        }

        Self::finish(id, Task::ArgMining, b, Layout::Essay(EssayLayout { paragraphs: layouts }))
    }

    /// Builds a debate-thread graph: one stance variable per post and one
    /// agreement variable per reply edge. Parent pointers must form a tree.
    pub fn thread(id: impl Into<String>, posts: Vec<PostInput>) -> Result<Self> {
        let id = id.into();
        let n = posts.len();
        if n == 0 {
            return Err(Error::structural(format!("thread `{id}` has no posts")));
        }
        let roots = posts.iter().filter(|p| p.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::structural(format!("thread `{id}` has {roots} root posts, expected 1")));
        }
        for (i, p) in posts.iter().enumerate() {
            if let Some(q) = p.parent {
                if q >= n || q == i {
                    return Err(Error::structural(format!("thread `{id}` post {i} has invalid parent {q}")));
                }
            }
            if p.author.is_empty() {
                return Err(Error::structural(format!("thread `{id}` post {i} has an empty author")));
            }
        }
        // every post must reach the root without revisiting a post
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(q) = posts[cur].parent {
                cur = q;
                steps += 1;
                if steps > n {
                    return Err(Error::structural(format!("thread `{id}` reply pointers contain a cycle")));
                }
            }
        }

        let mut b = Builder {
            variables: Vec::new(),
            factors: Vec::new(),
            groups: Vec::new(),
        };
        let post_vars: Vec<VarId> = (0..n).map(|_| b.var(VarKind::NodeLabel, 2, 0)).collect();
        let edge_vars: Vec<Option<VarId>> = posts
            .iter()
            .map(|p| p.parent.map(|_| b.var(VarKind::LinkLabel, 2, 0)))
            .collect();
        let post_factors: Vec<FactorId> = posts
            .iter()
            .zip(&post_vars)
            .map(|(p, &v)| b.factor(FactorType::Node, vec![v], p.features.clone()))
            .collect();
        let mut edge_factors = vec![None; n];
        for (i, p) in posts.iter().enumerate() {
            if let (Some(q), Some(ev)) = (p.parent, edge_vars[i]) {
                let x = match &p.reply_features {
                    Some(x) => x.clone(),
                    None => derive_reply_features(&p.features, &posts[q].features),
                };
                edge_factors[i] = Some(b.factor(FactorType::Agreement, vec![ev], x));
            }
        }
        for i in 0..n {
            b.variables[post_vars[i]].feature_ref = post_factors[i];
            if let (Some(ev), Some(f)) = (edge_vars[i], edge_factors[i]) {
                b.variables[ev].feature_ref = f;
            }
        }
        let layout = ThreadLayout {
            posts: post_vars,
            parent: posts.iter().map(|p| p.parent).collect(),
            edges: edge_vars,
            post_factors,
            edge_factors,
            authors: posts.iter().map(|p| p.author.clone()).collect(),
        };
        Self::finish(id, Task::Stance, b, Layout::Thread(layout))
    }

    fn finish(id: String, task: Task, b: Builder, layout: Layout) -> Result<Self> {
        let mut var_factors = vec![Vec::new(); b.variables.len()];
        for f in &b.factors {
            for &v in &f.scope {
                if v >= b.variables.len() {
                    return Err(Error::structural(format!(
                        "graph `{id}` factor {} references undeclared variable {v}",
                        f.id
                    )));
                }
                var_factors[v].push(f.id);
            }
        }
        Ok(FactorGraph {
            id,
            task,
            variables: b.variables,
            factors: b.factors,
            groups: b.groups,
            layout,
            var_factors,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn essay_layout(&self) -> Option<&EssayLayout> {
        match &self.layout {
            Layout::Essay(e) => Some(e),
            Layout::Thread(_) => None,
        }
    }

    pub fn thread_layout(&self) -> Option<&ThreadLayout> {
        match &self.layout {
            Layout::Thread(t) => Some(t),
            Layout::Essay(_) => None,
        }
    }

    pub fn factors_of(&self, var: VarId) -> &[FactorId] {
        &self.var_factors[var]
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    /// Product of all domain sizes, saturating at `u128::MAX`.
    pub fn assignment_space(&self) -> u128 {
        self.variables
            .iter()
            .fold(1u128, |acc, v| acc.saturating_mul(v.arity() as u128))
    }

    /// Checks the structural invariants: scopes reference declared variables,
    /// link indicators are binary, no duplicate `(ftype, scope)` pairs and
    /// second-order scopes chain or share a head as their type requires.
    pub fn validate(&self) -> Result<()> {
        for v in &self.variables {
            if v.domain.is_empty() {
                return Err(Error::structural(format!("variable {} has an empty domain", v.id)));
            }
            if v.kind == VarKind::LinkIndicator && v.domain != [0, 1] {
                return Err(Error::structural(format!("link indicator {} is not binary", v.id)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.factors {
            if f.scope.len() != f.ftype.scope_len() {
                return Err(Error::structural(format!("factor {} has scope of length {}", f.id, f.scope.len())));
            }
            if f.scope.iter().any(|&v| v >= self.variables.len()) {
                return Err(Error::structural(format!("factor {} references an undeclared variable", f.id)));
            }
            if !seen.insert((f.ftype, f.scope.clone())) {
                return Err(Error::structural(format!("duplicate {} factor over {:?}", f.ftype.name(), f.scope)));
            }
        }
        if let Layout::Essay(e) = &self.layout {
            for para in &e.paragraphs {
                let n = para.len();
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            if let Some(f) = para.grandparent(a, b, c) {
                                let ab = para.pair(a, b).unwrap().indicator;
                                let bc = para.pair(b, c).unwrap().indicator;
                                if self.factors[f].scope != [ab, bc] || a == c {
                                    return Err(Error::structural(format!("grandparent factor {f} is malformed")));
                                }
                            }
                            if let Some(f) = para.coparent(a, b, c) {
                                let ab = para.pair(a, b).unwrap().indicator;
                                let cb = para.pair(c, b).unwrap().indicator;
                                if self.factors[f].scope != [ab, cb] || a == c {
                                    return Err(Error::structural(format!("coparent factor {f} is malformed")));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Elementwise product and absolute difference of the two post vectors.
pub fn derive_reply_features(child: &[f64], parent: &[f64]) -> Vec<f64> {
    let prod = child.iter().zip(parent).map(|(a, b)| a * b);
    let diff = child.iter().zip(parent).map(|(a, b)| (a - b).abs());
    prod.chain(diff).collect()
}

/// A total labeling of a graph's variables, indexed by variable id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(Vec<Label>);

impl Assignment {
    pub fn new(values: Vec<Label>) -> Self {
        Assignment(values)
    }

    /// Every variable at label 0.
    pub fn zeros(g: &FactorGraph) -> Self {
        Assignment(vec![0; g.num_variables()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, v: VarId) -> Label {
        self.0[v]
    }

    pub fn set(&mut self, v: VarId, label: Label) {
        self.0[v] = label;
    }

    pub fn values(&self) -> &[Label] {
        &self.0
    }

    pub fn labels_of(&self, scope: &[VarId]) -> Vec<Label> {
        scope.iter().map(|&v| self.0[v]).collect()
    }

    /// Total over `g` with every label inside its variable's domain.
    pub fn validate(&self, g: &FactorGraph) -> Result<()> {
        if self.0.len() != g.num_variables() {
            return Err(Error::structural(format!(
                "assignment has {} values but graph `{}` has {} variables",
                self.0.len(),
                g.id(),
                g.num_variables()
            )));
        }
        for (v, &l) in self.0.iter().enumerate() {
            if !g.variables()[v].domain.contains(&l) {
                return Err(Error::structural(format!("label {l} outside the domain of variable {v}")));
            }
        }
        Ok(())
    }
}

/// Number of positions where `a` and `b` disagree; divided by the number of
/// variables when `normalize` is set.
pub fn hamming_distance(a: &Assignment, b: &Assignment, normalize: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::structural(format!(
            "cannot compare assignments over {} and {} variables",
            a.len(),
            b.len()
        )));
    }
    let diff = a.values().iter().zip(b.values()).filter(|(x, y)| x != y).count() as f64;
    if normalize && !a.is_empty() {
        Ok(diff / a.len() as f64)
    } else {
        Ok(diff)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveFactor {
    pub factor: FactorId,
    pub labels: Vec<Label>,
    pub row: usize,
}

/// Factors that contribute to the score of `a`, with the labels of their scope
/// and the scorer row they select.
pub fn active_factors(g: &FactorGraph, a: &Assignment) -> Vec<ActiveFactor> {
    g.factors()
        .iter()
        .filter_map(|f| {
            let labels = a.labels_of(&f.scope);
            f.ftype.active_row(&labels).map(|row| ActiveFactor {
                factor: f.id,
                labels,
                row,
            })
        })
        .collect()
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 100_000;

/// Lexicographic odometer over all total assignments of a graph.
pub struct Assignments<'a> {
    graph: &'a FactorGraph,
    filter: Option<GroundConstraints>,
    current: Option<Vec<Label>>,
}

impl Iterator for Assignments<'_> {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        loop {
            let cur = self.current.as_mut()?;
            let out = Assignment(cur.clone());
            // advance: last variable is least significant
            let mut k = cur.len();
            loop {
                if k == 0 {
                    self.current = None;
                    break;
                }
                k -= 1;
                cur[k] += 1;
                if cur[k] < self.graph.variables()[k].arity() {
                    break;
                }
                cur[k] = 0;
            }
            match &self.filter {
                Some(grounds) if !grounds.satisfied(out.values()) => continue,
                _ => return Some(out),
            }
        }
    }
}

/// Streams every total assignment exactly once in lexicographic order,
/// optionally keeping only those with zero constraint violations.
pub fn enumerate_assignments<'a>(
    g: &'a FactorGraph,
    cs: Option<&ConstraintSet>,
    cap: u128,
) -> Result<Assignments<'a>> {
    let size = g.assignment_space();
    if size > cap {
        return Err(Error::Size {
            graph: g.id().to_string(),
            size,
            cap,
        });
    }
    Ok(Assignments {
        graph: g,
        filter: cs.map(|cs| GroundConstraints::new(g, cs)),
        current: Some(vec![0; g.num_variables()]),
    })
}
