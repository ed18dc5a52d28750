//! Branch and bound over binary factors of a multistage QP.
//!
//! Binary variables take values in `{−1, 1}` and are relaxed to `[−1, 1]`.
//! Binaries may be organised in one-hot groups (exactly one member is `+1`);
//! branching on a group creates one child per admissible member.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msqp::{objective_bound, solve_qp, MultistageQP, QPSolution, QpError, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiqpError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("{0} binary combinations exceed the enumeration limit")]
    TooManyCombinations(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Binary variables of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGroup {
    pub stage: usize,
    /// Stage-local variable indices; exactly one is `+1`.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistageMIQP {
    pub qp: MultistageQP,
    /// Stage-local indices of binary variables, per stage.
    pub binaries: Vec<Vec<usize>>,
    pub groups: Vec<BinaryGroup>,
}

impl MultistageMIQP {
    /// A problem without integer variables.
    pub fn continuous(qp: MultistageQP) -> Self {
        let n = qp.stages.len();
        Self { qp, binaries: vec![Vec::new(); n], groups: Vec::new() }
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<(), MiqpError> {
        self.qp.validate()?;
        let invalid = |m: String| Err(MiqpError::Invalid(m));
        if self.binaries.len() != self.qp.stages.len() {
            return invalid("binary lists do not match stage count".into());
        }
        for (k, list) in self.binaries.iter().enumerate() {
            let s = &self.qp.stages[k];
            for &i in list {
                if i >= s.n() {
                    return invalid(format!("stage {k}: binary index {i} out of range"));
                }
                if s.lower[i] < -1.0 - 1e-12 || s.upper[i] > 1.0 + 1e-12 || s.lower[i] > s.upper[i] {
                    return invalid(format!("stage {k}: binary {i} bounds outside [-1, 1]"));
                }
            }
        }
        let mut grouped: Vec<Vec<bool>> = self.qp.stages.iter().map(|s| vec![false; s.n()]).collect();
        for g in &self.groups {
            if g.stage >= self.binaries.len() || g.members.is_empty() {
                return invalid("empty or misplaced binary group".into());
            }
            for &i in &g.members {
                if !self.binaries[g.stage].contains(&i) || grouped[g.stage][i] {
                    return invalid(format!("stage {}: group member {i} not a binary or grouped twice", g.stage));
                }
                grouped[g.stage][i] = true;
            }
        }
        Ok(())
    }

    fn ungrouped(&self) -> Vec<(usize, usize)> {
        let mut grouped: Vec<Vec<bool>> = self.qp.stages.iter().map(|s| vec![false; s.n()]).collect();
        for g in &self.groups {
            for &i in &g.members {
                grouped[g.stage][i] = true;
            }
        }
        self.binaries
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.iter().map(move |&i| (k, i)))
            .filter(|&(k, i)| !grouped[k][i])
            .collect()
    }

    /// Whether the base bounds admit binary `i` of stage `k` taking value `v`.
    fn allows(&self, k: usize, i: usize, v: f64) -> bool {
        let s = &self.qp.stages[k];
        s.lower[i] <= v && v <= s.upper[i]
    }

    fn with_fixings(&self, fix: &[(usize, usize, f64)]) -> MultistageQP {
        let mut qp = self.qp.clone();
        for &(k, i, v) in fix {
            // A value outside the base bounds leaves an empty interval.
            let s = &mut qp.stages[k];
            s.lower[i] = s.lower[i].max(v);
            s.upper[i] = s.upper[i].min(v);
        }
        qp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    RegionGroup,
    MostFractional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MIQPConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_nodes: usize,
    pub threads: usize,
    pub branching: Branching,
    /// Relative KKT tolerance of node QPs.
    pub qp_tol: f64,
    /// Keep a record of every evaluated node.
    pub record_nodes: bool,
}

impl Default for MIQPConfig {
    fn default() -> Self {
        Self {
            eps_abs: 0.1,
            eps_rel: 0.01,
            max_nodes: 100_000,
            threads: default_threads(),
            branching: Branching::RegionGroup,
            qp_tol: 1e-8,
            record_nodes: false,
        }
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(16)
}

impl MIQPConfig {
    pub fn validate(&self) -> Result<(), MiqpError> {
        if !(self.eps_abs > 0.0) || !(self.eps_rel > 0.0) {
            return Err(MiqpError::Config("eps_abs and eps_rel must be positive".into()));
        }
        if self.threads == 0 || self.max_nodes == 0 {
            return Err(MiqpError::Config("threads and max_nodes must be at least 1".into()));
        }
        if !(self.qp_tol > 0.0) {
            return Err(MiqpError::Config("qp_tol must be positive".into()));
        }
        Ok(())
    }

    fn tolerance(&self, incumbent: f64) -> f64 {
        self.eps_abs.max(self.eps_rel * incumbent.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    /// Stopped before the gap was certified, normally at the node limit.
    NodeLimit,
}

impl MiqpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MiqpStatus::Optimal => "optimal",
            MiqpStatus::Infeasible => "infeasible",
            MiqpStatus::NodeLimit => "node_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Lower bound of this node's own relaxation (not inherited).
    pub relaxation_bound: f64,
    pub status: QpStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MIQPResult {
    /// Stage-wise minimizer; empty when no feasible assignment was found.
    pub z_star: Vec<DVector<f64>>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: MiqpStatus,
    pub nodes_explored: usize,
    pub qp_solves: usize,
    pub qp_iterations: usize,
    pub root_bound: f64,
    pub wall_time: f64,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Clone)]
struct Node {
    id: usize,
    parent: Option<usize>,
    fix: Vec<(usize, usize, f64)>,
    bound: f64,
    depth: usize,
    warm: Option<Arc<QPSolution>>,
}

struct Evaluated {
    node: Node,
    sol: QPSolution,
    raw_bound: f64,
    rounded: Option<(Vec<(usize, usize, f64)>, QPSolution)>,
    solves: usize,
}

struct Incumbent {
    z: Vec<DVector<f64>>,
    objective: f64,
}

const INTEGRAL_TOL: f64 = 1e-6;

/// Best-first branch and bound with depth-first dives.
pub fn solve_miqp(problem: &MultistageMIQP, cfg: &MIQPConfig) -> Result<MIQPResult, MiqpError> {
    problem.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| MiqpError::Config(e.to_string()))?;
    let ungrouped = problem.ungrouped();

    let mut open: Vec<Node> =
        vec![Node { id: 0, parent: None, fix: Vec::new(), bound: f64::NEG_INFINITY, depth: 0, warm: None }];
    let mut next_id = 1;
    let mut incumbent: Option<Incumbent> = None;
    // Lowest bound among nodes discarded without proving their subtree worse.
    let mut settled_lb = f64::INFINITY;
    let mut nodes_explored = 0usize;
    let mut qp_solves = 0usize;
    let mut qp_iterations = 0usize;
    let mut root_bound = f64::NEG_INFINITY;
    let mut records = Vec::new();
    let mut round = 0usize;

    while !open.is_empty() {
        if let Some(inc) = &incumbent {
            let tol = cfg.tolerance(inc.objective);
            open.retain(|n| {
                let keep = n.bound < inc.objective - tol;
                if !keep {
                    settled_lb = settled_lb.min(n.bound);
                }
                keep
            });
            if open.is_empty() || inc.objective - global_lb(&open, settled_lb).min(inc.objective) <= tol {
                break;
            }
        }
        if nodes_explored >= cfg.max_nodes {
            break;
        }
        let batch_size = cfg.threads.min(cfg.max_nodes - nodes_explored).max(1);
        let dive = incumbent.is_none() || round % 4 == 3;
        let batch = take_batch(&mut open, batch_size, dive);
        round += 1;
        let try_rounding = incumbent.is_none();
        let evaluated: Vec<Evaluated> = pool.install(|| {
            batch.into_par_iter().map(|node| evaluate(problem, cfg, &ungrouped, node, try_rounding)).collect::<Vec<_>>()
        });

        for ev in evaluated {
            nodes_explored += 1;
            qp_solves += ev.solves;
            qp_iterations += ev.sol.iterations;
            if ev.node.id == 0 {
                root_bound = ev.raw_bound;
            }
            if cfg.record_nodes {
                records.push(NodeRecord {
                    id: ev.node.id,
                    parent: ev.node.parent,
                    depth: ev.node.depth,
                    relaxation_bound: ev.raw_bound,
                    status: ev.sol.status,
                });
            }
            if let Some((_, sol)) = &ev.rounded {
                offer(&mut incumbent, problem, sol);
            }
            if ev.sol.status == QpStatus::Infeasible {
                continue;
            }
            let bound = ev.raw_bound.max(ev.node.bound);
            if let Some(inc) = &incumbent {
                if bound >= inc.objective - cfg.tolerance(inc.objective) {
                    settled_lb = settled_lb.min(bound);
                    continue;
                }
            }
            let relaxed_ok = ev.sol.status == QpStatus::Optimal;
            let fractional =
                if relaxed_ok { choose_branch(problem, cfg, &ungrouped, &ev.node.fix, &ev.sol) } else { None };
            match fractional {
                None if relaxed_ok => {
                    // Integral relaxation: snap binaries and re-solve with all fixed.
                    let fix = full_fixing(problem, &ungrouped, &ev.node.fix, &ev.sol);
                    let sol = solve_qp(&problem.with_fixings(&fix), Some(&ev.sol), cfg.qp_tol)?;
                    qp_solves += 1;
                    qp_iterations += sol.iterations;
                    if sol.status == QpStatus::Optimal {
                        offer(&mut incumbent, problem, &sol);
                    }
                    settled_lb = settled_lb.min(bound);
                }
                None => {
                    // Relaxation not solved to optimality: branch anyway if possible.
                    match choose_branch(problem, cfg, &ungrouped, &ev.node.fix, &ev.sol)
                        .or_else(|| first_unfixed(problem, &ev.node.fix))
                    {
                        Some(b) => {
                            push_children(problem, &mut open, &mut next_id, &ev, b, bound);
                        }
                        None => settled_lb = settled_lb.min(bound),
                    }
                }
                Some(b) => push_children(problem, &mut open, &mut next_id, &ev, b, bound),
            }
        }
    }

    let status;
    let lb;
    match &incumbent {
        Some(inc) => {
            lb = global_lb(&open, settled_lb).min(inc.objective);
            let gap = inc.objective - lb;
            status = if gap <= cfg.tolerance(inc.objective) { MiqpStatus::Optimal } else { MiqpStatus::NodeLimit };
        }
        None => {
            lb = global_lb(&open, settled_lb);
            status = if open.is_empty() && settled_lb == f64::INFINITY {
                MiqpStatus::Infeasible
            } else {
                MiqpStatus::NodeLimit
            };
        }
    }
    let (z_star, objective) = match incumbent {
        Some(inc) => (inc.z, inc.objective),
        None => (Vec::new(), f64::INFINITY),
    };
    let gap = if objective.is_finite() { (objective - lb).max(0.0) } else { f64::INFINITY };
    Ok(MIQPResult {
        z_star,
        objective,
        bound: lb,
        gap,
        status,
        nodes_explored,
        qp_solves,
        qp_iterations,
        root_bound,
        wall_time: start.elapsed().as_secs_f64(),
        nodes: records,
    })
}

fn global_lb(open: &[Node], settled: f64) -> f64 {
    open.iter().map(|n| n.bound).fold(settled, f64::min)
}

/// Remove up to `size` nodes: lowest bound first, or deepest first when diving.
fn take_batch(open: &mut Vec<Node>, size: usize, dive: bool) -> Vec<Node> {
    let mut batch = Vec::with_capacity(size);
    for _ in 0..size.min(open.len()) {
        let key = |n: &Node| if dive { (-(n.depth as f64), n.bound, n.id) } else { (n.bound, -(n.depth as f64), n.id) };
        let best = (0..open.len())
            .min_by(|&a, &b| {
                let (ka, kb) = (key(&open[a]), key(&open[b]));
                ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
            })
            .expect("non-empty");
        batch.push(open.swap_remove(best));
    }
    batch
}

fn evaluate(
    problem: &MultistageMIQP,
    cfg: &MIQPConfig,
    ungrouped: &[(usize, usize)],
    node: Node,
    try_rounding: bool,
) -> Evaluated {
    let qp = problem.with_fixings(&node.fix);
    let mut solves = 1;
    let sol = match solve_qp(&qp, node.warm.as_deref(), cfg.qp_tol) {
        Ok(s) => s,
        Err(_) => unreachable!("validated problem"),
    };
    let raw_bound = match sol.status {
        QpStatus::Infeasible => f64::INFINITY,
        QpStatus::Optimal => sol.bound.min(sol.objective),
        QpStatus::MaxIter => objective_bound(&qp, &sol),
    };
    let mut rounded = None;
    if try_rounding && sol.status != QpStatus::Infeasible && problem.num_binaries() > 0 {
        let fix = full_fixing(problem, ungrouped, &node.fix, &sol);
        if let Ok(r) = solve_qp(&problem.with_fixings(&fix), Some(&sol), cfg.qp_tol) {
            solves += 1;
            if r.status == QpStatus::Optimal {
                rounded = Some((fix, r));
            }
        }
    }
    Evaluated { node, sol, raw_bound, rounded, solves }
}

fn offer(incumbent: &mut Option<Incumbent>, problem: &MultistageMIQP, sol: &QPSolution) {
    if sol.status != QpStatus::Optimal || problem.qp.max_violation(&sol.z) > 1e-6 {
        return;
    }
    let mut z = sol.z.clone();
    for (k, list) in problem.binaries.iter().enumerate() {
        for &i in list {
            z[k][i] = if z[k][i] >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    let objective = problem.qp.objective(&z);
    if incumbent.as_ref().is_none_or(|inc| objective < inc.objective) {
        *incumbent = Some(Incumbent { z, objective });
    }
}

fn is_fixed(fix: &[(usize, usize, f64)], k: usize, i: usize) -> bool {
    fix.iter().any(|&(a, b, _)| a == k && b == i)
}

/// Nearest group-consistent assignment of every binary, keeping existing fixings.
fn full_fixing(
    problem: &MultistageMIQP,
    ungrouped: &[(usize, usize)],
    fix: &[(usize, usize, f64)],
    sol: &QPSolution,
) -> Vec<(usize, usize, f64)> {
    let mut out = fix.to_vec();
    for g in &problem.groups {
        if g.members.iter().all(|&i| is_fixed(fix, g.stage, i)) {
            continue;
        }
        let forced = g.members.iter().find(|&&i| fix.iter().any(|&(a, b, v)| a == g.stage && b == i && v > 0.0));
        let chosen = match forced {
            Some(&i) => i,
            None => *g
                .members
                .iter()
                .filter(|&&i| !is_fixed(fix, g.stage, i))
                .max_by(|&&a, &&b| sol.z[g.stage][a].total_cmp(&sol.z[g.stage][b]).then(b.cmp(&a)))
                .expect("unfixed member"),
        };
        for &i in &g.members {
            if !is_fixed(fix, g.stage, i) {
                out.push((g.stage, i, if i == chosen { 1.0 } else { -1.0 }));
            }
        }
    }
    for &(k, i) in ungrouped {
        if !is_fixed(fix, k, i) {
            out.push((k, i, if sol.z[k][i] >= 0.0 { 1.0 } else { -1.0 }));
        }
    }
    out
}

enum Branch {
    Group(usize),
    Single(usize, usize),
}

fn choose_branch(
    problem: &MultistageMIQP,
    cfg: &MIQPConfig,
    ungrouped: &[(usize, usize)],
    fix: &[(usize, usize, f64)],
    sol: &QPSolution,
) -> Option<Branch> {
    let frac = |k: usize, i: usize| 1.0 - sol.z[k][i].abs();
    if cfg.branching == Branching::RegionGroup {
        // Group whose relaxed selection is furthest from integral; ties go to
        // the lowest stage, then the lowest group index.
        let mut order: Vec<usize> = (0..problem.groups.len()).collect();
        order.sort_by_key(|&g| problem.groups[g].stage);
        let mut best: Option<(usize, f64)> = None;
        for g in order {
            let grp = &problem.groups[g];
            if grp.members.iter().all(|&i| is_fixed(fix, grp.stage, i)) {
                continue;
            }
            let top = grp.members.iter().map(|&i| (sol.z[grp.stage][i] + 1.0) / 2.0).fold(f64::NEG_INFINITY, f64::max);
            let dist = 1.0 - top;
            let spread = grp.members.iter().map(|&i| frac(grp.stage, i)).fold(0.0, f64::max);
            if spread <= INTEGRAL_TOL {
                continue;
            }
            if best.is_none_or(|(_, d)| dist > d + 1e-12) {
                best = Some((g, dist));
            }
        }
        if let Some((g, _)) = best {
            return Some(Branch::Group(g));
        }
        return ungrouped
            .iter()
            .filter(|&&(k, i)| !is_fixed(fix, k, i) && frac(k, i) > INTEGRAL_TOL)
            .max_by(|a, b| frac(a.0, a.1).total_cmp(&frac(b.0, b.1)).then(b.cmp(a)))
            .map(|&(k, i)| Branch::Single(k, i));
    }
    problem
        .binaries
        .iter()
        .enumerate()
        .flat_map(|(k, l)| l.iter().map(move |&i| (k, i)))
        .filter(|&(k, i)| !is_fixed(fix, k, i) && frac(k, i) > INTEGRAL_TOL)
        .max_by(|a, b| frac(a.0, a.1).total_cmp(&frac(b.0, b.1)).then(b.cmp(a)))
        .map(|(k, i)| Branch::Single(k, i))
}

fn first_unfixed(problem: &MultistageMIQP, fix: &[(usize, usize, f64)]) -> Option<Branch> {
    problem
        .binaries
        .iter()
        .enumerate()
        .flat_map(|(k, l)| l.iter().map(move |&i| (k, i)))
        .find(|&(k, i)| !is_fixed(fix, k, i))
        .map(|(k, i)| Branch::Single(k, i))
}

fn push_children(
    problem: &MultistageMIQP,
    open: &mut Vec<Node>,
    next_id: &mut usize,
    ev: &Evaluated,
    branch: Branch,
    bound: f64,
) {
    let warm = Some(Arc::new(ev.sol.clone()));
    let mut child = |fix: Vec<(usize, usize, f64)>| {
        open.push(Node {
            id: *next_id,
            parent: Some(ev.node.id),
            fix,
            bound,
            depth: ev.node.depth + 1,
            warm: warm.clone(),
        });
        *next_id += 1;
    };
    let parent_fix = &ev.node.fix;
    match branch {
        Branch::Group(g) => {
            let grp = &problem.groups[g];
            let stage = grp.stage;
            let mut members: Vec<usize> = grp
                .members
                .iter()
                .copied()
                .filter(|&i| {
                    problem.allows(stage, i, 1.0)
                        && !parent_fix.iter().any(|&(a, b, v)| a == stage && b == i && v < 0.0)
                })
                .collect();
            // Most promising member first so dives follow the relaxation.
            members.sort_by(|&a, &b| ev.sol.z[stage][b].total_cmp(&ev.sol.z[stage][a]).then(a.cmp(&b)));
            for &chosen in &members {
                let mut fix = parent_fix.clone();
                for &i in &grp.members {
                    if !is_fixed(parent_fix, stage, i) {
                        fix.push((stage, i, if i == chosen { 1.0 } else { -1.0 }));
                    }
                }
                child(fix);
            }
        }
        Branch::Single(k, i) => {
            let first = if ev.sol.z[k][i] >= 0.0 { 1.0 } else { -1.0 };
            for v in [first, -first].into_iter().filter(|&v| problem.allows(k, i, v)) {
                let mut fix = parent_fix.clone();
                fix.push((k, i, v));
                child(fix);
            }
        }
    }
}

const ENUMERATION_LIMIT: f64 = 1e6;

/// Solve every group-consistent binary assignment and keep the best.
pub fn brute_force(problem: &MultistageMIQP) -> Result<MIQPResult, MiqpError> {
    problem.validate()?;
    let start = Instant::now();
    let ungrouped = problem.ungrouped();
    // Each choice is a list of fixings; the assignment picks one option per choice.
    let mut choices: Vec<Vec<Vec<(usize, usize, f64)>>> = Vec::new();
    for g in &problem.groups {
        choices.push(
            g.members
                .iter()
                .map(|&on| g.members.iter().map(|&i| (g.stage, i, if i == on { 1.0 } else { -1.0 })).collect())
                .collect(),
        );
    }
    for &(k, i) in &ungrouped {
        choices.push(vec![vec![(k, i, -1.0)], vec![(k, i, 1.0)]]);
    }
    let total: f64 = choices.iter().map(|c| c.len() as f64).product();
    if total > ENUMERATION_LIMIT {
        return Err(MiqpError::TooManyCombinations(total));
    }
    let total = total as usize;
    let solutions: Vec<Result<QPSolution, QpError>> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut fix = Vec::new();
            for c in &choices {
                fix.extend_from_slice(&c[idx % c.len()]);
                idx /= c.len();
            }
            solve_qp(&problem.with_fixings(&fix), None, 1e-9)
        })
        .collect();
    let mut best: Option<Incumbent> = None;
    let mut iterations = 0;
    for sol in solutions {
        let sol = sol?;
        iterations += sol.iterations;
        offer(&mut best, problem, &sol);
    }
    let (z_star, objective, status) = match best {
        Some(inc) => (inc.z, inc.objective, MiqpStatus::Optimal),
        None => (Vec::new(), f64::INFINITY, MiqpStatus::Infeasible),
    };
    Ok(MIQPResult {
        z_star,
        objective,
        bound: objective,
        gap: if objective.is_finite() { 0.0 } else { f64::INFINITY },
        status,
        nodes_explored: total,
        qp_solves: total,
        qp_iterations: iterations,
        root_bound: f64::NEG_INFINITY,
        wall_time: start.elapsed().as_secs_f64(),
        nodes: Vec::new(),
    })
}
