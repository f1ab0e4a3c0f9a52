//! Exact constrained MAP inference: exhaustive enumeration for small graphs
//! and a depth-first branch and bound that decomposes essays by paragraph.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::constraints::{paragraph_grounds, ConstraintSet, Ground, GroundConstraints, Rule};
use crate::error::{Error, Result};
use crate::graph::{enumerate_assignments, labels, Assignment, FactorGraph, FactorId, Label, Layout, VarId};
use crate::inference::{breakdown, check_gold, objective, Augment, InferenceResult, Telemetry};
use crate::scorer::{ScoreTable, ScorerBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactConfig {
    /// Largest assignment space searched by plain enumeration.
    pub enumeration_cap: u64,
    /// Fall back to branch and bound above the cap instead of failing.
    pub use_branch_and_bound: bool,
    #[serde(with = "crate::inference::secs")]
    pub time_budget: Duration,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            enumeration_cap: crate::graph::DEFAULT_ENUMERATION_CAP as u64,
            use_branch_and_bound: true,
            time_budget: Duration::from_secs(60),
        }
    }
}

impl ExactConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enumeration_cap < 1 {
            return Err(Error::Config("enumeration_cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn exhaustive_only() -> Self {
        ExactConfig {
            use_branch_and_bound: false,
            ..Self::default()
        }
    }
}

pub fn exact_map(
    g: &FactorGraph,
    bank: &ScorerBank,
    cs: &ConstraintSet,
    aug: Option<Augment<'_>>,
    cfg: &ExactConfig,
) -> Result<InferenceResult> {
    let table = ScoreTable::compute(g, bank)?;
    exact_map_table(g, &table, cs, aug, cfg)
}

/// Enumerates when the assignment space fits under the cap, otherwise runs
/// branch and bound if enabled.
pub fn exact_map_table(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    aug: Option<Augment<'_>>,
    cfg: &ExactConfig,
) -> Result<InferenceResult> {
    cfg.validate()?;
    check_gold(g, aug)?;
    if g.assignment_space() <= cfg.enumeration_cap as u128 || !cfg.use_branch_and_bound {
        exhaustive(g, table, cs, aug, cfg.enumeration_cap as u128)
    } else {
        branch_and_bound(g, table, cs, aug, cfg.time_budget)
    }
}

fn infeasible(g: &FactorGraph, cs: &ConstraintSet) -> Error {
    let zeros = Assignment::zeros(g);
    let grounds = GroundConstraints::new(g, cs);
    let (rule, message) = match grounds.first_violated(zeros.values()) {
        Some(gr) => (ground_rule(gr).code().to_string(), format!("e.g. the all-zero labeling violates {gr:?}")),
        None => ("?".to_string(), "no assignment satisfies the constraint set".to_string()),
    };
    Error::Infeasible {
        graph: g.id().to_string(),
        rule,
        message,
    }
}

fn ground_rule(gr: &Ground) -> Rule {
    match gr {
        Ground::MajorClaimPosition { .. } => Rule::MajorClaimPosition,
        Ground::MajorClaimPresence { .. } => Rule::MajorClaimPresence,
        Ground::OneParent { .. } | Ground::Acyclic { .. } => Rule::Forest,
        Ground::LinkTyping { .. } => Rule::LinkTyping,
        Ground::RootLabel { .. } => Rule::RootLabel,
        Ground::CanonicalLabel { .. } => Rule::CanonicalLinkLabel,
        Ground::EdgeConsistency { .. } => Rule::EdgeConsistency,
        Ground::AuthorUniform { .. } => Rule::AuthorUniformity,
    }
}

/// Scores every valid assignment; the first strict maximum in lexicographic
/// order wins, so ties go to the smallest assignment vector.
pub fn exhaustive(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    aug: Option<Augment<'_>>,
    cap: u128,
) -> Result<InferenceResult> {
    let start = Instant::now();
    let mut best: Option<(f64, Assignment)> = None;
    let mut visited = 0u64;
    for a in enumerate_assignments(g, Some(cs), cap)? {
        visited += 1;
        let s = objective(g, table, &a, aug);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, a));
        }
    }
    let (_, a) = best.ok_or_else(|| infeasible(g, cs))?;
    Ok(InferenceResult {
        breakdown: breakdown(g, table, &a, aug),
        assignment: a,
        telemetry: Telemetry {
            nodes_expanded: visited,
            wall_time: start.elapsed(),
            ..Telemetry::default()
        },
        proven_optimal: true,
    })
}

/// Factor restricted to the variables of one subproblem. `table` is indexed
/// `l0 * arity1 + l1` and already holds zero for inactive label tuples.
struct LocalFactor {
    scope: Vec<usize>,
    arity1: usize,
    table: Vec<f64>,
}

impl LocalFactor {
    fn value(&self, labels: &[Label]) -> f64 {
        match labels {
            [l0] => self.table[*l0],
            [l0, l1] => self.table[l0 * self.arity1 + l1],
            _ => unreachable!("factors have one or two scope variables"),
        }
    }
}

struct Subproblem {
    vars: Vec<VarId>,
    arity: Vec<usize>,
    factors: Vec<LocalFactor>,
    var_factors: Vec<Vec<usize>>,
    grounds: GroundConstraints,
}

impl Subproblem {
    fn new(
        g: &FactorGraph,
        table: &ScoreTable,
        vars: Vec<VarId>,
        factor_ids: &[FactorId],
        grounds: Vec<Ground>,
        aug: Option<Augment<'_>>,
    ) -> Self {
        let mut local = vec![usize::MAX; g.num_variables()];
        for (k, &v) in vars.iter().enumerate() {
            local[v] = k;
        }
        let arity: Vec<usize> = vars.iter().map(|&v| g.variables()[v].arity()).collect();
        let mut factors = Vec::new();
        for &fid in factor_ids {
            let f = &g.factors()[fid];
            let scope: Vec<usize> = f.scope.iter().map(|&v| local[v]).collect();
            let ar: Vec<usize> = scope.iter().map(|&k| arity[k]).collect();
            let arity1 = ar.get(1).copied().unwrap_or(1);
            let mut t = vec![0.0; ar.iter().product()];
            for (idx, slot) in t.iter_mut().enumerate() {
                let tuple: Vec<Label> = if scope.len() == 1 {
                    vec![idx]
                } else {
                    vec![idx / arity1, idx % arity1]
                };
                if let Some(row) = f.ftype.active_row(&tuple) {
                    *slot = table.row(fid, row);
                }
            }
            factors.push(LocalFactor { scope, arity1, table: t });
        }
        if let Some(au) = aug {
            let unit = au.mode.unit_bonus(g.num_variables());
            for (k, &v) in vars.iter().enumerate() {
                let gold = au.gold.get(v);
                let t = (0..arity[k]).map(|l| if l == gold { 0.0 } else { unit }).collect();
                factors.push(LocalFactor {
                    scope: vec![k],
                    arity1: 1,
                    table: t,
                });
            }
        }
        let mut var_factors = vec![Vec::new(); vars.len()];
        for (k, f) in factors.iter().enumerate() {
            for &v in &f.scope {
                var_factors[v].push(k);
            }
        }
        Subproblem {
            vars,
            arity,
            factors,
            var_factors,
            grounds: GroundConstraints::from_grounds(g.num_variables(), grounds),
        }
    }
}

#[derive(Default)]
struct Solved {
    values: Option<Vec<Label>>,
    score: f64,
    nodes: u64,
    truncated: bool,
}

struct Search<'a> {
    sp: &'a Subproblem,
    order: Vec<usize>,
    label_order: Vec<Vec<Label>>,
    vals: Vec<Option<Label>>,
    partial: Vec<Option<Label>>,
    fmax: Vec<f64>,
    bound: f64,
    best: f64,
    best_vals: Option<Vec<Label>>,
    nodes: u64,
    deadline: Instant,
    truncated: bool,
}

impl<'a> Search<'a> {
    fn new(sp: &'a Subproblem, num_vars: usize, deadline: Instant) -> Self {
        let n = sp.vars.len();
        let vals = vec![None; n];
        let mut s = Search {
            sp,
            order: Vec::new(),
            label_order: Vec::new(),
            vals,
            partial: vec![None; num_vars],
            fmax: Vec::new(),
            bound: 0.0,
            best: f64::NEG_INFINITY,
            best_vals: None,
            nodes: 0,
            deadline,
            truncated: false,
        };
        s.fmax = (0..sp.factors.len()).map(|f| s.factor_max(f)).collect();
        s.bound = s.fmax.iter().sum();

        // optimistic per-label value of every variable over its factors
        let optimistic: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                (0..sp.arity[k])
                    .map(|l| {
                        s.vals[k] = Some(l);
                        let v = sp.var_factors[k].iter().map(|&f| s.factor_max(f)).sum();
                        s.vals[k] = None;
                        v
                    })
                    .collect()
            })
            .collect();
        let gap = |k: usize| {
            let o = &optimistic[k];
            o.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - o.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| gap(b).total_cmp(&gap(a)).then(a.cmp(&b)));
        s.order = order;
        s.label_order = optimistic
            .iter()
            .map(|o| {
                let mut ls: Vec<Label> = (0..o.len()).collect();
                ls.sort_by(|&a, &b| o[b].total_cmp(&o[a]).then(a.cmp(&b)));
                ls
            })
            .collect();
        s
    }

    fn factor_max(&self, f: usize) -> f64 {
        let lf = &self.sp.factors[f];
        let mut best = f64::NEG_INFINITY;
        let choices = |k: usize| -> std::ops::Range<usize> {
            match self.vals[k] {
                Some(l) => l..l + 1,
                None => 0..self.sp.arity[k],
            }
        };
        match lf.scope.as_slice() {
            [a] => {
                for l in choices(*a) {
                    best = best.max(lf.value(&[l]));
                }
            }
            [a, b] => {
                for l0 in choices(*a) {
                    for l1 in choices(*b) {
                        best = best.max(lf.value(&[l0, l1]));
                    }
                }
            }
            _ => unreachable!("factors have one or two scope variables"),
        }
        best
    }

    fn run(&mut self) {
        self.dfs(0);
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(4096) && Instant::now() >= self.deadline {
            self.truncated = true;
        }
        if self.truncated {
            return;
        }
        if depth == self.order.len() {
            let exact: f64 = self.fmax.iter().sum();
            if exact > self.best {
                self.best = exact;
                self.best_vals = Some(self.vals.iter().map(|v| v.expect("all variables decided")).collect());
            }
            return;
        }
        let k = self.order[depth];
        let global = self.sp.vars[k];
        for li in 0..self.label_order[k].len() {
            let l = self.label_order[k][li];
            self.vals[k] = Some(l);
            self.partial[global] = Some(l);
            if self.sp.grounds.consistent_at(&self.partial, global) {
                let saved: Vec<(usize, f64)> = self.sp.var_factors[k].iter().map(|&f| (f, self.fmax[f])).collect();
                let old_bound = self.bound;
                for &(f, old) in &saved {
                    let new = self.factor_max(f);
                    self.fmax[f] = new;
                    self.bound += new - old;
                }
                if self.bound > self.best + 1e-9 {
                    self.dfs(depth + 1);
                }
                for &(f, old) in &saved {
                    self.fmax[f] = old;
                }
                self.bound = old_bound;
            }
            self.vals[k] = None;
            self.partial[global] = None;
            if self.truncated {
                return;
            }
        }
    }
}

fn solve(sp: &Subproblem, num_vars: usize, deadline: Instant) -> Solved {
    let mut s = Search::new(sp, num_vars, deadline);
    s.run();
    Solved {
        values: s.best_vals,
        score: s.best,
        nodes: s.nodes,
        truncated: s.truncated,
    }
}

/// Depth-first branch and bound. Variables are branched in descending order
/// of their optimistic score gap; the bound sums every factor's best value
/// over the labels still open. Essays are solved paragraph by paragraph with
/// the major-claim presence rule handled by combining per-paragraph variants.
pub fn branch_and_bound(
    g: &FactorGraph,
    table: &ScoreTable,
    cs: &ConstraintSet,
    aug: Option<Augment<'_>>,
    budget: Duration,
) -> Result<InferenceResult> {
    if aug.is_some_and(|au| !au.mode.decomposes()) {
        return Err(Error::Unsupported(
            "branch and bound needs an h-mode that decomposes over variables; use exhaustive search for neg_w".into(),
        ));
    }
    check_gold(g, aug)?;
    let start = Instant::now();
    let deadline = start + budget;
    let n = g.num_variables();
    let mut telemetry = Telemetry::default();
    let mut values = vec![0; n];

    match g.layout() {
        Layout::Thread(_) => {
            let all: Vec<FactorId> = (0..g.factors().len()).collect();
            let sp = Subproblem::new(g, table, (0..n).collect(), &all, crate::constraints::ground_rules(g, cs), aug);
            let s = solve(&sp, n, deadline);
            telemetry.nodes_expanded += s.nodes;
            telemetry.truncated |= s.truncated;
            match s.values {
                Some(v) => values = v,
                None if s.truncated => return Err(Error::Budget { graph: g.id().to_string() }),
                None => return Err(infeasible(g, cs)),
            }
        }
        Layout::Essay(essay) => {
            let presence = cs.is_active(Rule::MajorClaimPresence);
            let mut free = Vec::with_capacity(essay.paragraphs.len());
            for (p, para) in essay.paragraphs.iter().enumerate() {
                if para.is_empty() {
                    free.push(None);
                    continue;
                }
                let grounds = paragraph_grounds(para, cs, essay.major_claim_allowed(p));
                let sp = Subproblem::new(g, table, para.variables(), &para.factors(), grounds, aug);
                let s = solve(&sp, n, deadline);
                telemetry.nodes_expanded += s.nodes;
                telemetry.truncated |= s.truncated;
                if s.values.is_none() {
                    return Err(if s.truncated {
                        Error::Budget { graph: g.id().to_string() }
                    } else {
                        infeasible(g, cs)
                    });
                }
                free.push(Some((sp, s)));
            }
            let has_mc = |sp: &Subproblem, vals: &[Label]| {
                sp.vars
                    .iter()
                    .zip(vals)
                    .any(|(&v, &l)| g.variables()[v].kind == crate::graph::VarKind::NodeLabel && l == labels::MAJOR_CLAIM)
            };
            let satisfied = !presence
                || free
                    .iter()
                    .flatten()
                    .any(|(sp, s)| has_mc(sp, s.values.as_deref().unwrap()));
            let mut replacement: Option<(usize, Subproblem, Solved)> = None;
            if !satisfied {
                let mut best_gain = f64::NEG_INFINITY;
                for (p, para) in essay.paragraphs.iter().enumerate() {
                    if para.is_empty() || !essay.major_claim_allowed(p) {
                        continue;
                    }
                    let mut grounds = paragraph_grounds(para, cs, true);
                    grounds.push(Ground::MajorClaimPresence { nodes: para.nodes.clone() });
                    let sp = Subproblem::new(g, table, para.variables(), &para.factors(), grounds, aug);
                    let s = solve(&sp, n, deadline);
                    telemetry.nodes_expanded += s.nodes;
                    telemetry.truncated |= s.truncated;
                    if s.values.is_some() {
                        let gain = s.score - free[p].as_ref().unwrap().1.score;
                        if gain > best_gain {
                            best_gain = gain;
                            replacement = Some((p, sp, s));
                        }
                    }
                }
                if replacement.is_none() {
                    return Err(if telemetry.truncated {
                        Error::Budget { graph: g.id().to_string() }
                    } else {
                        infeasible(g, cs)
                    });
                }
            }
            for (p, slot) in free.iter().enumerate() {
                let (sp, s) = match (&replacement, slot) {
                    (Some((q, sp, s)), _) if *q == p => (sp, s),
                    (_, Some((sp, s))) => (sp, s),
                    _ => continue,
                };
                for (&v, &l) in sp.vars.iter().zip(s.values.as_ref().unwrap()) {
                    values[v] = l;
                }
            }
        }
    }

    let a = Assignment::new(values);
    telemetry.wall_time = start.elapsed();
    Ok(InferenceResult {
        breakdown: breakdown(g, table, &a, aug),
        assignment: a,
        proven_optimal: !telemetry.truncated,
        telemetry,
    })
}
