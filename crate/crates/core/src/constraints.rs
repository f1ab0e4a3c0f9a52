//! Domain constraints for essays and debate threads.
//!
//! Two independent evaluators live here. [`check`] walks the assignment as a
//! forest and reports human-readable [`Violation`]s. [`GroundConstraints`]
//! grounds every rule into small instances over variable ids and answers
//! "can this partial assignment still be completed" queries for the exact
//! search; on total assignments the two must agree.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, Label, Layout, ParagraphLayout, Task, VarId};
use crate::randomized::tree::TreeSkeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// R1: major claims only in the first or last paragraph.
    MajorClaimPosition,
    /// R2: at least one major claim per essay.
    MajorClaimPresence,
    /// R3: links of each paragraph form a forest.
    Forest,
    /// R4: premise->premise, premise->claim and claim->major-claim only.
    LinkTyping,
    /// R5: a node linking into a major claim is a claim.
    MajorClaimChildren,
    /// R6: forest roots are major claims or claims.
    RootLabel,
    /// R7: an absent link carries the support label.
    CanonicalLinkLabel,
    /// S1: agree iff the endpoint stances are equal.
    EdgeConsistency,
    /// S2: posts by one author share a stance.
    AuthorUniformity,
}

impl Rule {
    pub const ARG_MINING: [Rule; 7] = [
        Rule::MajorClaimPosition,
        Rule::MajorClaimPresence,
        Rule::Forest,
        Rule::LinkTyping,
        Rule::MajorClaimChildren,
        Rule::RootLabel,
        Rule::CanonicalLinkLabel,
    ];
    pub const STANCE: [Rule; 2] = [Rule::EdgeConsistency, Rule::AuthorUniformity];

    pub fn code(self) -> &'static str {
        match self {
            Rule::MajorClaimPosition => "R1",
            Rule::MajorClaimPresence => "R2",
            Rule::Forest => "R3",
            Rule::LinkTyping => "R4",
            Rule::MajorClaimChildren => "R5",
            Rule::RootLabel => "R6",
            Rule::CanonicalLinkLabel => "R7",
            Rule::EdgeConsistency => "S1",
            Rule::AuthorUniformity => "S2",
        }
    }

    pub fn task(self) -> Task {
        if Rule::STANCE.contains(&self) {
            Task::Stance
        } else {
            Task::ArgMining
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub task: Task,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub author_constraints_enabled: bool,
    #[serde(default = "half")]
    pub mc_first_prob: f64,
    #[serde(default = "half")]
    pub mc_last_prob: f64,
    #[serde(default = "default_support_prob")]
    pub support_prob: f64,
}

fn half() -> f64 {
    0.5
}

fn default_support_prob() -> f64 {
    0.9
}

impl ConstraintSet {
    pub fn arg_mining() -> Self {
        ConstraintSet {
            task: Task::ArgMining,
            rules: Rule::ARG_MINING.to_vec(),
            author_constraints_enabled: false,
            mc_first_prob: 0.5,
            mc_last_prob: 0.5,
            support_prob: 0.9,
        }
    }

    pub fn stance(author_constraints: bool) -> Self {
        ConstraintSet {
            task: Task::Stance,
            rules: Rule::STANCE.to_vec(),
            author_constraints_enabled: author_constraints,
            mc_first_prob: 0.5,
            mc_last_prob: 0.5,
            support_prob: 0.9,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::ArgMining => Self::arg_mining(),
            Task::Stance => Self::stance(false),
        }
    }

    /// Same probabilities, restricted to `rules`.
    pub fn with_rules(&self, rules: &[Rule]) -> Self {
        ConstraintSet {
            rules: rules.to_vec(),
            ..self.clone()
        }
    }

    pub fn is_active(&self, rule: Rule) -> bool {
        self.rules.contains(&rule) && (rule != Rule::AuthorUniformity || self.author_constraints_enabled)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mc_first_prob", self.mc_first_prob),
            ("mc_last_prob", self.mc_last_prob),
            ("support_prob", self.support_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if let Some(r) = self.rules.iter().find(|r| r.task() != self.task) {
            return Err(Error::Config(format!("rule {r} does not apply to task {}", self.task)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub variables: Vec<VarId>,
    pub message: String,
}

fn legal_link(child: Label, parent: Label) -> bool {
    matches!(
        (child, parent),
        (labels::PREMISE, labels::PREMISE) | (labels::PREMISE, labels::CLAIM) | (labels::CLAIM, labels::MAJOR_CLAIM)
    )
}

/// All rule violations of a total assignment; empty iff every active rule holds.
pub fn check(g: &FactorGraph, a: &Assignment, cs: &ConstraintSet) -> Vec<Violation> {
    let mut out = Vec::new();
    match g.layout() {
        Layout::Essay(essay) => {
            let mut any_mc = false;
            let mut all_nodes = Vec::new();
            for (p, para) in essay.paragraphs.iter().enumerate() {
                all_nodes.extend(&para.nodes);
                check_paragraph(para, a, cs, essay.major_claim_allowed(p), p, &mut out);
                any_mc |= para.nodes.iter().any(|&v| a.get(v) == labels::MAJOR_CLAIM);
            }
            if cs.is_active(Rule::MajorClaimPresence) && !any_mc {
                out.push(Violation {
                    rule: Rule::MajorClaimPresence,
                    variables: all_nodes,
                    message: format!("essay `{}` has no major claim", g.id()),
                });
            }
        }
        Layout::Thread(thread) => {
            if cs.is_active(Rule::EdgeConsistency) {
                for (post, edge) in thread.edges.iter().enumerate() {
                    let (Some(edge), Some(parent)) = (*edge, thread.parent[post]) else {
                        continue;
                    };
                    let same = a.get(thread.posts[post]) == a.get(thread.posts[parent]);
                    let expected = if same { labels::AGREE } else { labels::DISAGREE };
                    if a.get(edge) != expected {
                        out.push(Violation {
                            rule: Rule::EdgeConsistency,
                            variables: vec![edge, thread.posts[post], thread.posts[parent]],
                            message: format!(
                                "reply edge {post}->{parent} is labeled {} but the stances {}",
                                labels::AGREEMENT_NAMES[a.get(edge)],
                                if same { "match" } else { "differ" }
                            ),
                        });
                    }
                }
            }
            if cs.is_active(Rule::AuthorUniformity) {
                for group in thread.author_groups() {
                    let first = a.get(thread.posts[group[0]]);
                    if group.iter().any(|&p| a.get(thread.posts[p]) != first) {
                        out.push(Violation {
                            rule: Rule::AuthorUniformity,
                            variables: group.iter().map(|&p| thread.posts[p]).collect(),
                            message: format!("posts by `{}` disagree in stance", thread.authors[group[0]]),
                        });
                    }
                }
            }
        }
    }
    out
}

fn check_paragraph(
    para: &ParagraphLayout,
    a: &Assignment,
    cs: &ConstraintSet,
    mc_allowed: bool,
    p: usize,
    out: &mut Vec<Violation>,
) {
    let n = para.len();
    if cs.is_active(Rule::MajorClaimPosition) && !mc_allowed {
        for (k, &v) in para.nodes.iter().enumerate() {
            if a.get(v) == labels::MAJOR_CLAIM {
                out.push(Violation {
                    rule: Rule::MajorClaimPosition,
                    variables: vec![v],
                    message: format!("node {k} of middle paragraph {p} is a major claim"),
                });
            }
        }
    }

    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (src, dst, slot) in para.pair_slots() {
        if a.get(slot.indicator) == labels::ON {
            parents[src].push(dst);
        } else if cs.is_active(Rule::CanonicalLinkLabel) && a.get(slot.label) != labels::SUPPORT {
            out.push(Violation {
                rule: Rule::CanonicalLinkLabel,
                variables: vec![slot.indicator, slot.label],
                message: format!("absent link {src}->{dst} in paragraph {p} carries a non-support label"),
            });
        }
    }

    if cs.is_active(Rule::Forest) {
        for (src, ps) in parents.iter().enumerate() {
            if ps.len() > 1 {
                out.push(Violation {
                    rule: Rule::Forest,
                    variables: ps.iter().map(|&d| para.pair(src, d).unwrap().indicator).collect(),
                    message: format!("node {src} of paragraph {p} has {} parents", ps.len()),
                });
            }
        }
        // cycles: walk first-parent pointers; a node reached twice on one walk closes a cycle
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            loop {
                if state[cur] == 2 {
                    break;
                }
                if state[cur] == 1 {
                    let pos = path.iter().position(|&x| x == cur).unwrap();
                    let cycle = &path[pos..];
                    let vars = cycle
                        .iter()
                        .map(|&x| para.pair(x, parents[x][0]).unwrap().indicator)
                        .collect();
                    out.push(Violation {
                        rule: Rule::Forest,
                        variables: vars,
                        message: format!("links of paragraph {p} form a cycle through {cycle:?}"),
                    });
                    break;
                }
                state[cur] = 1;
                path.push(cur);
                match parents[cur].first() {
                    Some(&next) => cur = next,
                    None => break,
                }
            }
            for x in path {
                state[x] = 2;
            }
        }
    }

    for (src, ps) in parents.iter().enumerate() {
        for &dst in ps {
            let (c, q) = (a.get(para.nodes[src]), a.get(para.nodes[dst]));
            let slot = para.pair(src, dst).unwrap();
            if cs.is_active(Rule::LinkTyping) && !legal_link(c, q) {
                out.push(Violation {
                    rule: Rule::LinkTyping,
                    variables: vec![slot.indicator, para.nodes[src], para.nodes[dst]],
                    message: format!(
                        "link {src}->{dst} in paragraph {p} joins a {} to a {}",
                        labels::COMPONENT_NAMES[c],
                        labels::COMPONENT_NAMES[q]
                    ),
                });
            }
            if cs.is_active(Rule::MajorClaimChildren) && q == labels::MAJOR_CLAIM && c != labels::CLAIM {
                out.push(Violation {
                    rule: Rule::MajorClaimChildren,
                    variables: vec![para.nodes[src]],
                    message: format!("node {src} of paragraph {p} links into a major claim but is not a claim"),
                });
            }
        }
    }

    if cs.is_active(Rule::RootLabel) {
        for (k, ps) in parents.iter().enumerate() {
            if ps.is_empty() && a.get(para.nodes[k]) == labels::PREMISE {
                out.push(Violation {
                    rule: Rule::RootLabel,
                    variables: vec![para.nodes[k]],
                    message: format!("root {k} of paragraph {p} is a premise"),
                });
            }
        }
    }
}

/// One rule instantiated over concrete variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ground {
    MajorClaimPosition { node: VarId },
    MajorClaimPresence { nodes: Vec<VarId> },
    OneParent { links: Vec<VarId> },
    /// Candidate links `(src, dst, indicator)` over `n` local nodes.
    Acyclic { n: usize, links: Vec<(usize, usize, VarId)> },
    LinkTyping { link: VarId, child: VarId, parent: VarId },
    RootLabel { node: VarId, links: Vec<VarId> },
    CanonicalLabel { link: VarId, label: VarId },
    EdgeConsistency { edge: VarId, child: VarId, parent: VarId },
    AuthorUniform { posts: Vec<VarId> },
}

impl Ground {
    pub fn vars(&self) -> Vec<VarId> {
        match self {
            Ground::MajorClaimPosition { node } => vec![*node],
            Ground::MajorClaimPresence { nodes } => nodes.clone(),
            Ground::OneParent { links } => links.clone(),
            Ground::Acyclic { links, .. } => links.iter().map(|l| l.2).collect(),
            Ground::LinkTyping { link, child, parent } => vec![*link, *child, *parent],
            Ground::RootLabel { node, links } => std::iter::once(*node).chain(links.iter().copied()).collect(),
            Ground::CanonicalLabel { link, label } => vec![*link, *label],
            Ground::EdgeConsistency { edge, child, parent } => vec![*edge, *child, *parent],
            Ground::AuthorUniform { posts } => posts.clone(),
        }
    }

    /// `false` only when the decided variables already violate the instance.
    pub fn consistent(&self, get: &dyn Fn(VarId) -> Option<Label>) -> bool {
        match self {
            Ground::MajorClaimPosition { node } => get(*node) != Some(labels::MAJOR_CLAIM),
            Ground::MajorClaimPresence { nodes } => {
                let mut all_decided = true;
                for &v in nodes {
                    match get(v) {
                        Some(labels::MAJOR_CLAIM) => return true,
                        None => all_decided = false,
                        _ => {}
                    }
                }
                !all_decided
            }
            Ground::OneParent { links } => links.iter().filter(|&&l| get(l) == Some(labels::ON)).count() <= 1,
            Ground::Acyclic { n, links } => {
                let mut adj = vec![Vec::new(); *n];
                for &(s, d, l) in links {
                    if get(l) == Some(labels::ON) {
                        adj[s].push(d);
                    }
                }
                !has_cycle(&adj)
            }
            Ground::LinkTyping { link, child, parent } => {
                if get(*link) != Some(labels::ON) {
                    return true;
                }
                match (get(*child), get(*parent)) {
                    (Some(c), Some(p)) => legal_link(c, p),
                    (Some(c), None) => c != labels::MAJOR_CLAIM,
                    _ => true,
                }
            }
            Ground::RootLabel { node, links } => {
                get(*node) != Some(labels::PREMISE) || links.iter().any(|&l| get(l) != Some(labels::OFF))
            }
            Ground::CanonicalLabel { link, label } => {
                !(get(*link) == Some(labels::OFF) && matches!(get(*label), Some(l) if l != labels::SUPPORT))
            }
            Ground::EdgeConsistency { edge, child, parent } => match (get(*edge), get(*child), get(*parent)) {
                (Some(e), Some(c), Some(p)) => (e == labels::AGREE) == (c == p),
                _ => true,
            },
            Ground::AuthorUniform { posts } => {
                let mut seen = None;
                for &v in posts {
                    if let Some(l) = get(v) {
                        match seen {
                            None => seen = Some(l),
                            Some(s) if s != l => return false,
                            _ => {}
                        }
                    }
                }
                true
            }
        }
    }
}

fn has_cycle(adj: &[Vec<usize>]) -> bool {
    fn visit(u: usize, adj: &[Vec<usize>], color: &mut [u8]) -> bool {
        color[u] = 1;
        for &w in &adj[u] {
            if color[w] == 1 || (color[w] == 0 && visit(w, adj, color)) {
                return true;
            }
        }
        color[u] = 2;
        false
    }
    let mut color = vec![0u8; adj.len()];
    (0..adj.len()).any(|u| color[u] == 0 && visit(u, adj, &mut color))
}

/// Every active rule grounded over a graph, indexed by variable.
#[derive(Debug, Clone)]
pub struct GroundConstraints {
    grounds: Vec<Ground>,
    by_var: Vec<Vec<usize>>,
}

impl GroundConstraints {
    pub fn new(g: &FactorGraph, cs: &ConstraintSet) -> Self {
        Self::from_grounds(g.num_variables(), ground_rules(g, cs))
    }

    pub fn from_grounds(num_vars: usize, grounds: Vec<Ground>) -> Self {
        let mut by_var = vec![Vec::new(); num_vars];
        for (k, gr) in grounds.iter().enumerate() {
            for v in gr.vars() {
                if by_var[v].last() != Some(&k) {
                    by_var[v].push(k);
                }
            }
        }
        GroundConstraints { grounds, by_var }
    }

    pub fn grounds(&self) -> &[Ground] {
        &self.grounds
    }

    pub fn touching(&self, var: VarId) -> impl Iterator<Item = &Ground> + '_ {
        self.by_var[var].iter().map(move |&k| &self.grounds[k])
    }

    pub fn satisfied(&self, values: &[Label]) -> bool {
        let get = |v: VarId| Some(values[v]);
        self.grounds.iter().all(|gr| gr.consistent(&get))
    }

    /// Checks only the instances touching `var`.
    pub fn consistent_at(&self, partial: &[Option<Label>], var: VarId) -> bool {
        let get = |v: VarId| partial[v];
        self.touching(var).all(|gr| gr.consistent(&get))
    }

    pub fn first_violated(&self, values: &[Label]) -> Option<&Ground> {
        let get = |v: VarId| Some(values[v]);
        self.grounds.iter().find(|gr| !gr.consistent(&get))
    }
}

/// Grounds the active rules of `cs` over `g`.
pub fn ground_rules(g: &FactorGraph, cs: &ConstraintSet) -> Vec<Ground> {
    let mut out = Vec::new();
    match g.layout() {
        Layout::Essay(essay) => {
            let mut all_nodes = Vec::new();
            for (p, para) in essay.paragraphs.iter().enumerate() {
                all_nodes.extend(&para.nodes);
                out.extend(paragraph_grounds(para, cs, essay.major_claim_allowed(p)));
            }
            if cs.is_active(Rule::MajorClaimPresence) {
                out.push(Ground::MajorClaimPresence { nodes: all_nodes });
            }
        }
        Layout::Thread(thread) => {
            if cs.is_active(Rule::EdgeConsistency) {
                for (post, edge) in thread.edges.iter().enumerate() {
                    if let (Some(edge), Some(parent)) = (*edge, thread.parent[post]) {
                        out.push(Ground::EdgeConsistency {
                            edge,
                            child: thread.posts[post],
                            parent: thread.posts[parent],
                        });
                    }
                }
            }
            if cs.is_active(Rule::AuthorUniformity) {
                for group in thread.author_groups() {
                    if group.len() > 1 {
                        out.push(Ground::AuthorUniform {
                            posts: group.iter().map(|&p| thread.posts[p]).collect(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Grounds of the rules local to one paragraph (everything except R2).
pub fn paragraph_grounds(para: &ParagraphLayout, cs: &ConstraintSet, mc_allowed: bool) -> Vec<Ground> {
    let n = para.len();
    let mut out = Vec::new();
    if cs.is_active(Rule::MajorClaimPosition) && !mc_allowed {
        out.extend(para.nodes.iter().map(|&node| Ground::MajorClaimPosition { node }));
    }
    if cs.is_active(Rule::Forest) && n > 1 {
        for src in 0..n {
            let links = (0..n).filter(|&d| d != src).map(|d| para.pair(src, d).unwrap().indicator).collect();
            out.push(Ground::OneParent { links });
        }
        let links = para.pair_slots().map(|(s, d, slot)| (s, d, slot.indicator)).collect();
        out.push(Ground::Acyclic { n, links });
    }
    let typing = cs.is_active(Rule::LinkTyping) || cs.is_active(Rule::MajorClaimChildren);
    for (src, dst, slot) in para.pair_slots() {
        if typing {
            out.push(Ground::LinkTyping {
                link: slot.indicator,
                child: para.nodes[src],
                parent: para.nodes[dst],
            });
        }
        if cs.is_active(Rule::CanonicalLinkLabel) {
            out.push(Ground::CanonicalLabel {
                link: slot.indicator,
                label: slot.label,
            });
        }
    }
    if cs.is_active(Rule::RootLabel) {
        for src in 0..n {
            let links = (0..n).filter(|&d| d != src).map(|d| para.pair(src, d).unwrap().indicator).collect();
            out.push(Ground::RootLabel {
                node: para.nodes[src],
                links,
            });
        }
    }
    out
}

/// Node labels plus the label of each node's edge to its parent
/// (`SUPPORT` for roots).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphLabels {
    pub nodes: Vec<Label>,
    pub edges: Vec<Label>,
}

/// Fills non-root labels top-down: children of a major claim are claims,
/// every other child is a premise.
pub fn derive_child_labels(tree: &TreeSkeleton, nodes: &mut [Label]) {
    for slot in tree.level_list().into_iter().skip(1) {
        if let crate::randomized::tree::Slot::Node(k) = slot {
            if let Some(p) = tree.parent[k] {
                nodes[k] = if nodes[p] == labels::MAJOR_CLAIM {
                    labels::CLAIM
                } else {
                    labels::PREMISE
                };
            }
        }
    }
}

/// Random constrained labeling of one paragraph tree. Roots become major
/// claims with probability `mc_prob` (when the paragraph is eligible) and
/// claims otherwise; `force_mc` makes one uniformly chosen root a major claim
/// if none was drawn.
pub fn label_paragraph<R: Rng + ?Sized>(
    tree: &TreeSkeleton,
    mc_prob: Option<f64>,
    force_mc: bool,
    support_prob: f64,
    rng: &mut R,
) -> ParagraphLabels {
    let n = tree.len();
    let mut nodes = vec![labels::PREMISE; n];
    let roots = tree.roots();
    for &r in &roots {
        let mc = mc_prob.is_some_and(|p| rng.gen_bool(p));
        nodes[r] = if mc { labels::MAJOR_CLAIM } else { labels::CLAIM };
    }
    if force_mc && mc_prob.is_some() && !roots.iter().any(|&r| nodes[r] == labels::MAJOR_CLAIM) {
        if let Some(&r) = roots.choose(rng) {
            nodes[r] = labels::MAJOR_CLAIM;
        }
    }
    derive_child_labels(tree, &mut nodes);
    let edges = (0..n)
        .map(|k| {
            if tree.parent[k].is_some() && !rng.gen_bool(support_prob) {
                labels::ATTACK
            } else {
                labels::SUPPORT
            }
        })
        .collect();
    ParagraphLabels { nodes, edges }
}

/// Writes a labeled paragraph tree into `a`: indicators on exactly for the
/// tree edges, absent links at the support label.
pub fn write_paragraph(para: &ParagraphLayout, tree: &TreeSkeleton, labels_: &ParagraphLabels, a: &mut Assignment) {
    for (k, &v) in para.nodes.iter().enumerate() {
        a.set(v, labels_.nodes[k]);
    }
    for (src, dst, slot) in para.pair_slots() {
        if tree.parent[src] == Some(dst) {
            a.set(slot.indicator, labels::ON);
            a.set(slot.label, labels_.edges[src]);
        } else {
            a.set(slot.indicator, labels::OFF);
            a.set(slot.label, labels::SUPPORT);
        }
    }
}

/// Reads the first active parent of each node and the labels back out of `a`.
pub fn read_paragraph(para: &ParagraphLayout, a: &Assignment) -> (TreeSkeleton, ParagraphLabels) {
    let n = para.len();
    let mut parent = vec![None; n];
    let mut edges = vec![labels::SUPPORT; n];
    for (src, dst, slot) in para.pair_slots() {
        if a.get(slot.indicator) == labels::ON && parent[src].is_none() {
            parent[src] = Some(dst);
            edges[src] = a.get(slot.label);
        }
    }
    let nodes = para.nodes.iter().map(|&v| a.get(v)).collect();
    (TreeSkeleton { parent }, ParagraphLabels { nodes, edges })
}

/// Labels a forest (one tree per paragraph) so that every essay rule holds.
pub fn sample_valid_labeling<R: Rng + ?Sized>(
    g: &FactorGraph,
    forest: &[TreeSkeleton],
    cs: &ConstraintSet,
    rng: &mut R,
) -> Result<Assignment> {
    let essay = g
        .essay_layout()
        .ok_or_else(|| Error::structural(format!("graph `{}` is not an essay", g.id())))?;
    if forest.len() != essay.paragraphs.len()
        || forest.iter().zip(&essay.paragraphs).any(|(t, p)| t.len() != p.len() || !t.is_forest())
    {
        return Err(Error::structural(format!("forest does not match the paragraphs of `{}`", g.id())));
    }
    let mut labeled: Vec<ParagraphLabels> = forest
        .iter()
        .enumerate()
        .map(|(p, tree)| {
            let prob = essay.major_claim_prob(p, cs.mc_first_prob, cs.mc_last_prob);
            label_paragraph(tree, prob, false, cs.support_prob, rng)
        })
        .collect();

    let has_mc = labeled.iter().any(|l| l.nodes.contains(&labels::MAJOR_CLAIM));
    if !has_mc {
        let eligible: Vec<(usize, usize)> = (0..forest.len())
            .filter(|&p| essay.major_claim_allowed(p))
            .flat_map(|p| forest[p].roots().into_iter().map(move |r| (p, r)))
            .collect();
        if let Some(&(p, r)) = eligible.choose(rng) {
            labeled[p].nodes[r] = labels::MAJOR_CLAIM;
            derive_child_labels(&forest[p], &mut labeled[p].nodes);
        }
    }

    let mut a = Assignment::zeros(g);
    for ((para, tree), l) in essay.paragraphs.iter().zip(forest).zip(&labeled) {
        write_paragraph(para, tree, l, &mut a);
    }
    Ok(a)
}

/// Completes a thread labeling from its post stances: agree where the
/// endpoint stances match, disagree otherwise.
pub fn propagate_stance_edges(g: &FactorGraph, stances: &Assignment, cs: &ConstraintSet) -> Result<Assignment> {
    let thread = g
        .thread_layout()
        .ok_or_else(|| Error::structural(format!("graph `{}` is not a thread", g.id())))?;
    if stances.len() != g.num_variables() {
        return Err(Error::structural("stance assignment does not cover the thread"));
    }
    if cs.is_active(Rule::AuthorUniformity) {
        for group in thread.author_groups() {
            let first = stances.get(thread.posts[group[0]]);
            if group.iter().any(|&p| stances.get(thread.posts[p]) != first) {
                return Err(Error::Constraint(format!(
                    "posts by `{}` in thread `{}` have different stances",
                    thread.authors[group[0]],
                    g.id()
                )));
            }
        }
    }
    let mut out = stances.clone();
    for (post, edge) in thread.edges.iter().enumerate() {
        if let (Some(edge), Some(parent)) = (*edge, thread.parent[post]) {
            let same = stances.get(thread.posts[post]) == stances.get(thread.posts[parent]);
            out.set(edge, if same { labels::AGREE } else { labels::DISAGREE });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{paragraph, thread};
    use crate::graph::{enumerate_assignments, GraphOptions};
    use crate::randomized::tree::sample_random_tree;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn essay(sizes: &[usize]) -> FactorGraph {
        FactorGraph::essay("e", sizes.iter().map(|&n| paragraph(n, 2)).collect(), GraphOptions::default()).unwrap()
    }

    fn rules_of(v: &[Violation]) -> Vec<Rule> {
        let mut r: Vec<Rule> = v.iter().map(|v| v.rule).collect();
        r.dedup();
        r
    }

    #[test]
    fn all_premise_essay_violates_presence_only() {
        let g = essay(&[2, 1]);
        let mut a = Assignment::zeros(&g);
        let e = g.essay_layout().unwrap();
        for para in &e.paragraphs {
            for &v in &para.nodes {
                a.set(v, labels::PREMISE);
            }
        }
        // unlinked premises are roots, which the root rule also rejects
        let v = check(&g, &a, &ConstraintSet::arg_mining());
        assert_eq!(rules_of(&v), vec![Rule::RootLabel, Rule::MajorClaimPresence]);

        let cs = ConstraintSet::arg_mining().with_rules(&[
            Rule::MajorClaimPosition,
            Rule::MajorClaimPresence,
            Rule::Forest,
            Rule::LinkTyping,
            Rule::MajorClaimChildren,
        ]);
        assert_eq!(rules_of(&check(&g, &a, &cs)), vec![Rule::MajorClaimPresence]);
    }

    #[test]
    fn middle_major_claim_is_flagged() {
        let g = essay(&[1, 1, 1]);
        let e = g.essay_layout().unwrap();
        let mut a = Assignment::zeros(&g);
        for para in &e.paragraphs {
            a.set(para.nodes[0], labels::CLAIM);
        }
        a.set(e.paragraphs[1].nodes[0], labels::MAJOR_CLAIM);
        let v = check(&g, &a, &ConstraintSet::arg_mining());
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::MajorClaimPosition);
        assert_eq!(v[0].variables, vec![e.paragraphs[1].nodes[0]]);
    }

    #[test]
    fn disagree_between_equal_stances() {
        let g = thread(&[None, Some(0)], &["a", "b"], 2);
        let a = Assignment::new(vec![labels::PRO, labels::PRO, labels::DISAGREE]);
        let v = check(&g, &a, &ConstraintSet::stance(false));
        assert_eq!(rules_of(&v), vec![Rule::EdgeConsistency]);
    }

    #[test]
    fn two_post_thread_keeps_half() {
        let g = thread(&[None, Some(0)], &["a", "b"], 2);
        let cs = ConstraintSet::stance(false);
        let valid: Vec<Assignment> = enumerate_assignments(&g, Some(&cs), 100).unwrap().collect();
        assert_eq!(valid.len(), 4);
        for a in &valid {
            assert!(check(&g, a, &cs).is_empty());
        }
    }

    #[test]
    fn propagation_examples() {
        let g = thread(&[None, Some(0)], &["a", "b"], 2);
        let cs = ConstraintSet::stance(false);
        let out = propagate_stance_edges(&g, &Assignment::new(vec![labels::PRO, labels::PRO, 1]), &cs).unwrap();
        assert_eq!(out.get(2), labels::AGREE);
        let out = propagate_stance_edges(&g, &Assignment::new(vec![labels::PRO, labels::CON, 0]), &cs).unwrap();
        assert_eq!(out.get(2), labels::DISAGREE);

        let g = thread(&[None, Some(0)], &["a", "a"], 2);
        let err = propagate_stance_edges(&g, &Assignment::new(vec![0, 1, 0]), &ConstraintSet::stance(true));
        assert!(matches!(err, Err(Error::Constraint(_))));
    }

    #[test]
    fn only_first_paragraph_root_becomes_major_claim() {
        // no major claim is ever drawn, so the forced one lands on one of the
        // two eligible roots (first paragraph, root of the last paragraph's chain)
        let g = essay(&[1, 2, 2]);
        let mut cs = ConstraintSet::arg_mining();
        cs.mc_first_prob = 0.0;
        cs.mc_last_prob = 0.0;
        let forest = vec![
            TreeSkeleton { parent: vec![None] },
            TreeSkeleton { parent: vec![None, None] },
            TreeSkeleton { parent: vec![None, Some(0)] },
        ];
        let e = g.essay_layout().unwrap();
        let mut last_root_mc = 0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = sample_valid_labeling(&g, &forest, &cs, &mut rng).unwrap();
            assert!(check(&g, &a, &cs).is_empty());
            let first = a.get(e.paragraphs[0].nodes[0]) == labels::MAJOR_CLAIM;
            let last = a.get(e.paragraphs[2].nodes[0]) == labels::MAJOR_CLAIM;
            assert!(first ^ last);
            last_root_mc += last as usize;
        }
        // the forced choice is uniform over the two eligible roots
        assert!((400..600).contains(&last_root_mc), "{last_root_mc}");

        // a single eligible root is always chosen
        let g = essay(&[3]);
        let forest = vec![TreeSkeleton {
            parent: vec![Some(2), Some(0), None],
        }];
        let para = &g.essay_layout().unwrap().paragraphs[0];
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = sample_valid_labeling(&g, &forest, &cs, &mut rng).unwrap();
            assert!(check(&g, &a, &cs).is_empty());
            assert_eq!(a.get(para.nodes[2]), labels::MAJOR_CLAIM);
            assert_eq!(a.get(para.nodes[0]), labels::CLAIM);
            assert_eq!(a.get(para.nodes[1]), labels::PREMISE);
        }
    }

    #[test]
    fn support_prob_one_gives_support_edges() {
        let g = essay(&[4]);
        let mut cs = ConstraintSet::arg_mining();
        cs.support_prob = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let para = &g.essay_layout().unwrap().paragraphs[0];
        for _ in 0..200 {
            let tree = sample_random_tree(4, &mut rng);
            let a = sample_valid_labeling(&g, &[tree], &cs, &mut rng).unwrap();
            assert!(para.pair_slots().all(|(_, _, s)| a.get(s.label) == labels::SUPPORT));
        }
    }

    #[test]
    fn grounds_agree_with_checker_on_enumeration() {
        let g = essay(&[2, 1]);
        let cs = ConstraintSet::arg_mining();
        let grounds = GroundConstraints::new(&g, &cs);
        let mut valid = 0;
        for a in enumerate_assignments(&g, None, 1 << 20).unwrap() {
            let ok = check(&g, &a, &cs).is_empty();
            assert_eq!(ok, grounds.satisfied(a.values()), "{:?}", a);
            valid += ok as usize;
        }
        assert!(valid > 0);
    }

    fn random_essay(sizes: Vec<usize>, seed: u64) -> (FactorGraph, Vec<TreeSkeleton>, ChaCha8Rng) {
        let g = essay(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = sizes.iter().map(|&n| sample_random_tree(n, &mut rng)).collect();
        (g, forest, rng)
    }

    proptest! {
        #[test]
        fn sampler_output_is_valid(sizes in proptest::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
            let (g, forest, mut rng) = random_essay(sizes, seed);
            let cs = ConstraintSet::arg_mining();
            let a = sample_valid_labeling(&g, &forest, &cs, &mut rng).unwrap();
            prop_assert!(check(&g, &a, &cs).is_empty());
            prop_assert!(GroundConstraints::new(&g, &cs).satisfied(a.values()));
        }

        #[test]
        fn check_is_monotone_in_rules(sizes in proptest::collection::vec(1usize..4, 1..4),
                                      seed in any::<u64>(), mask in 0u32..128, extra in 0u32..128) {
            let g = essay(&sizes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = g.variables().iter().map(|v| rng.gen_range(0..v.arity())).collect();
            let a = Assignment::new(values);
            let pick = |m: u32| -> Vec<Rule> {
                Rule::ARG_MINING.iter().enumerate().filter(|(k, _)| m >> k & 1 == 1).map(|(_, r)| *r).collect()
            };
            let base = ConstraintSet::arg_mining();
            let small = check(&g, &a, &base.with_rules(&pick(mask)));
            let large = check(&g, &a, &base.with_rules(&pick(mask | extra)));
            for v in &small {
                prop_assert!(large.contains(v));
            }
            prop_assert_eq!(check(&g, &a, &base).is_empty(), GroundConstraints::new(&g, &base).satisfied(a.values()));
        }

        #[test]
        fn stance_propagation_completes_and_is_idempotent(stances in proptest::collection::vec(0usize..2, 5), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parents: Vec<Option<usize>> = (0..5).map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) }).collect();
            let g = thread(&parents, &["a", "b", "c", "d", "e"], 2);
            let mut a = Assignment::zeros(&g);
            let posts = &g.thread_layout().unwrap().posts;
            for (k, &s) in stances.iter().enumerate() {
                a.set(posts[k], s);
            }
            let cs = ConstraintSet::stance(false);
            let done = propagate_stance_edges(&g, &a, &cs).unwrap();
            prop_assert!(check(&g, &done, &cs).is_empty());
            prop_assert_eq!(propagate_stance_edges(&g, &done, &cs).unwrap(), done);
        }
    }
}
