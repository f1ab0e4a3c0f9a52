//! Per-paragraph tree hill climbing and the restart loop over essays.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::constraints::{label_paragraph, write_paragraph, ConstraintSet, ParagraphLabels, Rule};
use crate::error::{Error, Result};
use crate::graph::{labels, Assignment, FactorGraph, Label, ParagraphLayout};
use crate::inference::{breakdown, Augment, InferenceResult, Telemetry};
use crate::randomized::tree::{sample_random_tree, Slot, TreeSkeleton};
use crate::randomized::{Labeling, RandConfig};
use crate::scorer::{HMode, ScoreTable};

/// Scores and labeling parameters of one paragraph.
pub struct ParagraphProblem<'a> {
    g: &'a FactorGraph,
    para: &'a ParagraphLayout,
    table: &'a ScoreTable,
    /// Major-claim probability of roots; `None` when the paragraph is not eligible.
    pub mc_prob: Option<f64>,
    pub support_prob: f64,
    pub constrained: bool,
    aug: Option<Augment<'a>>,
    off_sum: f64,
}

impl<'a> ParagraphProblem<'a> {
    pub fn new(
        g: &'a FactorGraph,
        para: &'a ParagraphLayout,
        table: &'a ScoreTable,
        mc_prob: Option<f64>,
        cs: &ConstraintSet,
        constrained: bool,
        aug: Option<Augment<'a>>,
    ) -> Self {
        let off_sum = para
            .pair_slots()
            .map(|(_, _, slot)| table.row(slot.link_factor, labels::OFF))
            .sum();
        ParagraphProblem {
            g,
            para,
            table,
            mc_prob,
            support_prob: cs.support_prob,
            constrained,
            aug,
            off_sum,
        }
    }

    pub fn len(&self) -> usize {
        self.para.len()
    }

    pub fn is_empty(&self) -> bool {
        self.para.is_empty()
    }

    fn node_score(&self, k: usize, l: Label) -> f64 {
        self.table.row(self.para.node_factors[k], l)
    }

    /// Sum of the paragraph's active factor scores for a labeled forest.
    pub fn raw_score(&self, tree: &TreeSkeleton, lab: &ParagraphLabels) -> f64 {
        let n = self.len();
        let mut s = self.off_sum;
        for k in 0..n {
            s += self.node_score(k, lab.nodes[k]);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for a in 0..n {
            if let Some(b) = tree.parent[a] {
                let slot = self.para.pair(a, b).expect("tree edges join distinct nodes");
                s += self.table.row(slot.link_factor, labels::ON) - self.table.row(slot.link_factor, labels::OFF);
                s += self.table.row(slot.stance_factor, lab.edges[a]);
                children[b].push(a);
                if let Some(c) = tree.parent[b] {
                    if let Some(f) = self.para.grandparent(a, b, c) {
                        s += self.table.row(f, 0);
                    }
                }
            }
        }
        for (b, kids) in children.iter().enumerate() {
            for &a in kids {
                for &c in kids {
                    if a != c {
                        if let Some(f) = self.para.coparent(a, b, c) {
                            s += self.table.row(f, 0);
                        }
                    }
                }
            }
        }
        s
    }

    /// Variables of this paragraph that disagree with the gold structure.
    pub fn differences(&self, tree: &TreeSkeleton, lab: &ParagraphLabels) -> usize {
        let Some(au) = self.aug else { return 0 };
        let gold = au.gold;
        let mut d = 0;
        for (k, &v) in self.para.nodes.iter().enumerate() {
            d += usize::from(gold.get(v) != lab.nodes[k]);
        }
        for (src, dst, slot) in self.para.pair_slots() {
            let present = tree.parent[src] == Some(dst);
            let ind = if present { labels::ON } else { labels::OFF };
            let label = if present { lab.edges[src] } else { labels::SUPPORT };
            d += usize::from(gold.get(slot.indicator) != ind);
            d += usize::from(gold.get(slot.label) != label);
        }
        d
    }

    /// Paragraph score with its share of the Hamming term. Under `NegW` the
    /// paragraph is weighted by its own agreement with gold.
    pub fn objective(&self, tree: &TreeSkeleton, lab: &ParagraphLabels) -> f64 {
        let w = self.raw_score(tree, lab);
        match self.aug {
            None => w,
            Some(au) => {
                let d = self.differences(tree, lab) as f64;
                match au.mode {
                    HMode::NegW => {
                        let positions = (self.len() + 2 * self.len() * self.len().saturating_sub(1)) as f64;
                        w * (1.0 - d / positions)
                    }
                    mode => w + d * mode.unit_bonus(self.g.num_variables()),
                }
            }
        }
    }

    fn bonus(&self, v: usize, l: Label) -> f64 {
        match self.aug {
            Some(au) if au.mode.decomposes() && au.gold.get(v) != l => au.mode.unit_bonus(self.g.num_variables()),
            _ => 0.0,
        }
    }

    /// Labels a candidate structure according to the configured procedure.
    pub fn label<R: Rng + ?Sized>(&self, tree: &TreeSkeleton, labeling: Labeling, force_mc: bool, rng: &mut R) -> ParagraphLabels {
        if !self.constrained {
            let n = self.len();
            return ParagraphLabels {
                nodes: (0..n).map(|_| rng.gen_range(0..3)).collect(),
                edges: (0..n)
                    .map(|k| if tree.parent[k].is_some() { rng.gen_range(0..2) } else { labels::SUPPORT })
                    .collect(),
            };
        }
        match labeling {
            Labeling::Random => label_paragraph(tree, self.mc_prob, force_mc, self.support_prob, rng),
            Labeling::Greedy => self.greedy_labels(tree, force_mc),
        }
    }

    /// Best valid labels for a fixed structure. Each root independently picks
    /// claim or major claim (which relabels its children); edge labels take
    /// their best stance row.
    pub fn greedy_labels(&self, tree: &TreeSkeleton, force_mc: bool) -> ParagraphLabels {
        let n = self.len();
        let node = |k: usize, l: Label| self.node_score(k, l) + self.bonus(self.para.nodes[k], l);
        let mut nodes = vec![labels::PREMISE; n];
        let roots = tree.roots();
        let mut best_loss: Option<(f64, usize)> = None;
        for &r in &roots {
            let kids = tree.children(Slot::Node(r));
            let as_claim = node(r, labels::CLAIM) + kids.iter().map(|&c| node(c, labels::PREMISE)).sum::<f64>();
            let as_major = node(r, labels::MAJOR_CLAIM) + kids.iter().map(|&c| node(c, labels::CLAIM)).sum::<f64>();
            let mc = self.mc_prob.is_some() && as_major > as_claim;
            nodes[r] = if mc { labels::MAJOR_CLAIM } else { labels::CLAIM };
            let loss = as_claim - as_major;
            if best_loss.is_none_or(|(b, _)| loss < b) {
                best_loss = Some((loss, r));
            }
        }
        if force_mc && self.mc_prob.is_some() && !roots.iter().any(|&r| nodes[r] == labels::MAJOR_CLAIM) {
            if let Some((_, r)) = best_loss {
                nodes[r] = labels::MAJOR_CLAIM;
            }
        }
        crate::constraints::derive_child_labels(tree, &mut nodes);
        let edges = (0..n)
            .map(|a| match tree.parent[a] {
                Some(b) => {
                    let slot = self.para.pair(a, b).expect("tree edges join distinct nodes");
                    let s = |l: Label| self.table.row(slot.stance_factor, l) + self.bonus(slot.label, l);
                    if s(labels::ATTACK) > s(labels::SUPPORT) {
                        labels::ATTACK
                    } else {
                        labels::SUPPORT
                    }
                }
                None => labels::SUPPORT,
            })
            .collect();
        ParagraphLabels { nodes, edges }
    }
}

#[derive(Debug, Clone)]
pub struct ClimbOutcome {
    pub tree: TreeSkeleton,
    pub labels: ParagraphLabels,
    pub score: f64,
    /// Initial score followed by the score after every accepted move.
    pub trace: Vec<f64>,
    pub moves: u64,
    pub accepted: u64,
    pub truncated: bool,
}

/// Greedy local search over forests of one paragraph. Each sweep walks the
/// level list top-down and tries to hang the subtree at position `i` under
/// every earlier position `j = i-1, ..., 0`; a relabeled candidate replaces
/// the current forest only when it scores strictly higher. Stops after a
/// sweep with no accepted move.
pub fn hill_climb<R: Rng + ?Sized>(
    prob: &ParagraphProblem<'_>,
    cfg: &RandConfig,
    force_mc: bool,
    rng: &mut R,
) -> ClimbOutcome {
    let mut tree = sample_random_tree(prob.len(), rng);
    let mut lab = prob.label(&tree, cfg.labeling, force_mc, rng);
    let mut score = prob.objective(&tree, &lab);
    let mut out = ClimbOutcome {
        tree: tree.clone(),
        labels: lab.clone(),
        score,
        trace: vec![score],
        moves: 0,
        accepted: 0,
        truncated: false,
    };
    'sweeps: loop {
        let mut improved = false;
        let levels = tree.level_list();
        for i in 1..levels.len() {
            let Slot::Node(k) = levels[i] else { continue };
            for j in (0..i).rev() {
                let Some(cand) = tree.reattach(k, levels[j]) else { continue };
                if cfg.max_moves.is_some_and(|m| out.moves >= m) {
                    out.truncated = true;
                    break 'sweeps;
                }
                out.moves += 1;
                let cl = prob.label(&cand, cfg.labeling, force_mc, rng);
                let cs = prob.objective(&cand, &cl);
                if cs > score {
                    tree = cand;
                    lab = cl;
                    score = cs;
                    out.accepted += 1;
                    out.trace.push(score);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    out.tree = tree;
    out.labels = lab;
    out.score = score;
    out
}

/// Runs independent restarts of per-paragraph hill climbing and keeps the
/// forest with the highest summed paragraph score (ties to the lowest restart).
pub fn randomized_inference_argmining(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    cfg: &RandConfig,
    aug: Option<Augment<'_>>,
) -> Result<InferenceResult> {
    let essay = g
        .essay_layout()
        .ok_or_else(|| Error::structural(format!("graph `{}` is not an essay", g.id())))?;
    cfg.validate()?;
    let start = Instant::now();
    let problems: Vec<ParagraphProblem<'_>> = essay
        .paragraphs
        .iter()
        .enumerate()
        .map(|(p, para)| {
            let mc_prob = if cs.is_active(Rule::MajorClaimPosition) {
                essay.major_claim_prob(p, cs.mc_first_prob, cs.mc_last_prob)
            } else {
                Some(0.5 * (cs.mc_first_prob + cs.mc_last_prob))
            };
            ParagraphProblem::new(g, para, table, mc_prob, cs, cfg.constrained, aug)
        })
        .collect();
    let presence = cfg.constrained && cs.is_active(Rule::MajorClaimPresence);
    let eligible: Vec<usize> = (0..problems.len())
        .filter(|&p| !problems[p].is_empty() && problems[p].mc_prob.is_some())
        .collect();

    let mut telemetry = Telemetry::default();
    let mut best: Option<(f64, Assignment)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = cfg.restart_rng(restart);
        let record = |out: &ClimbOutcome, telemetry: &mut Telemetry| {
            telemetry.moves_evaluated += out.moves;
            telemetry.accepted_moves += out.accepted;
            telemetry.truncated |= out.truncated;
            if cfg.record_trace {
                telemetry.traces.push(out.trace.clone());
            }
        };
        let mut outs: Vec<Option<ClimbOutcome>> = Vec::with_capacity(problems.len());
        for prob in &problems {
            if prob.is_empty() {
                outs.push(None);
                continue;
            }
            let out = hill_climb(prob, cfg, false, &mut rng);
            record(&out, &mut telemetry);
            outs.push(Some(out));
        }
        let has_mc = outs.iter().flatten().any(|o| o.labels.nodes.contains(&labels::MAJOR_CLAIM));
        if presence && !has_mc {
            // climb one eligible paragraph again with a major claim forced in
            if let Some(&p) = eligible.choose(&mut rng) {
                let out = hill_climb(&problems[p], cfg, true, &mut rng);
                record(&out, &mut telemetry);
                outs[p] = Some(out);
            }
        }
        let mut a = Assignment::zeros(g);
        let mut total = 0.0;
        for (p, out) in outs.iter().enumerate() {
            if let Some(out) = out {
                total += out.score;
                write_paragraph(&essay.paragraphs[p], &out.tree, &out.labels, &mut a);
            }
        }
        telemetry.restarts += 1;
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, a));
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
