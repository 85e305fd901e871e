//! Best-first branch-and-bound over the activation binaries, solving the
//! continuous relaxation at every node with the augmented Lagrangian.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::nlp::{augmented_lagrangian, ConstrainedProblem, NlpOptions, NlpStatus};

/// Seconds since an arbitrary origin.
pub trait Clock {
    fn now_s(&self) -> f64;
}

/// A clock that never advances; time limits are then never hit.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_s(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbOptions {
    /// Stop when `(incumbent − bound) ≤ rel_gap · max(1, |incumbent|)`.
    pub rel_gap: f64,
    pub node_limit: usize,
    pub time_limit_s: f64,
    pub integrality_tol: f64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions { rel_gap: 1e-4, node_limit: 64, time_limit_s: 600.0, integrality_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    /// Search exhausted within the gap.
    Optimal,
    NodeLimit,
    TimeLimit,
    /// No integral feasible point found.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbResult {
    pub x: Option<Vec<f64>>,
    pub objective: f64,
    /// Lowest relaxation value among unexplored nodes and the incumbent.
    pub bound: f64,
    pub status: BnbStatus,
    pub nodes: usize,
    pub evaluations: usize,
    /// Incumbent objective after each improvement.
    pub incumbent_history: Vec<f64>,
}

/// Binary variables and the groups of them that may not sum above one.
#[derive(Debug, Clone, Default)]
pub struct IntegerStructure {
    pub binaries: Vec<usize>,
    pub exclusive: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    bound: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: Vec<f64>,
}

struct Search<'a, P: ConstrainedProblem> {
    problem: &'a mut P,
    ints: &'a IntegerStructure,
    nlp: &'a NlpOptions,
    opts: &'a BnbOptions,
    /// Root start point, retried when a warm start fails.
    cold: &'a [f64],
    evaluations: usize,
}

enum Relaxation {
    Pruned,
    Solved { x: Vec<f64>, objective: f64 },
}

impl<P: ConstrainedProblem> Search<'_, P> {
    fn relax(&mut self, start: &[f64], lo: &[f64], hi: &[f64]) -> Relaxation {
        if let Some(r) = self.try_solve(start, lo, hi) {
            return r;
        }
        // Retry from the root start clamped to this node's box.
        let cold: Vec<f64> = self.cold.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &u))| v.clamp(l, u)).collect();
        if cold.as_slice() != start {
            if let Some(r) = self.try_solve(&cold, lo, hi) {
                return r;
            }
        }
        Relaxation::Pruned
    }

    fn try_solve(&mut self, start: &[f64], lo: &[f64], hi: &[f64]) -> Option<Relaxation> {
        let r = augmented_lagrangian(self.problem, start, lo, hi, self.nlp);
        self.evaluations += r.evaluations;
        let usable = matches!(r.status, NlpStatus::Converged | NlpStatus::IterationLimit) && r.max_violation <= self.nlp.feas_tol;
        usable.then_some(Relaxation::Solved { x: r.x, objective: r.objective })
    }

    /// Most fractional binary, lowest index on ties.
    fn branching_variable(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &b in &self.ints.binaries {
            let frac = (x[b] - x[b].round()).abs();
            if frac > self.opts.integrality_tol && best.is_none_or(|(_, f)| frac > f) {
                best = Some((b, frac));
            }
        }
        best.map(|(b, _)| b)
    }

    /// Solves with every binary fixed at its rounded value.
    fn polish(&mut self, x: &[f64], lo: &[f64], hi: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut lo = lo.to_vec();
        let mut hi = hi.to_vec();
        let mut start = x.to_vec();
        for &b in &self.ints.binaries {
            let v = x[b].round().clamp(lo[b], hi[b]);
            lo[b] = v;
            hi[b] = v;
            start[b] = v;
        }
        match self.relax(&start, &lo, &hi) {
            Relaxation::Solved { x, objective } => Some((x, objective)),
            Relaxation::Pruned => None,
        }
    }
}

fn fix_to_one(ints: &IntegerStructure, b: usize, lo: &mut [f64], hi: &mut [f64]) {
    lo[b] = 1.0;
    hi[b] = 1.0;
    for group in ints.exclusive.iter().filter(|g| g.contains(&b)) {
        for &o in group {
            if o != b {
                hi[o] = 0.0;
            }
        }
    }
}

fn closes_gap(incumbent: f64, bound: f64, rel_gap: f64) -> bool {
    incumbent - bound <= rel_gap * incumbent.abs().max(1.0)
}

/// Minimizes `problem` with the listed variables restricted to `{0, 1}`.
///
/// The root is solved first; if its relaxation is fractional the point with
/// every binary at zero seeds the incumbent. Nodes are explored by lowest
/// relaxation value, lowest creation order on ties.
pub fn branch_and_bound<P: ConstrainedProblem>(
    problem: &mut P,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    ints: &IntegerStructure,
    nlp: &NlpOptions,
    opts: &BnbOptions,
    clock: &dyn Clock,
) -> BnbResult {
    let started = clock.now_s();
    let mut s = Search { problem, ints, nlp, opts, cold: x0, evaluations: 0 };
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut open = vec![Node { id: 0, bound: f64::NEG_INFINITY, lo: lo.to_vec(), hi: hi.to_vec(), start: x0.to_vec() }];
    let mut next_id = 1;
    let mut nodes = 0;
    let mut status = BnbStatus::Optimal;
    let mut seeded = false;
    let mut history = Vec::new();

    while !open.is_empty() {
        if nodes >= opts.node_limit {
            status = BnbStatus::NodeLimit;
            break;
        }
        if clock.now_s() - started > opts.time_limit_s {
            status = BnbStatus::TimeLimit;
            break;
        }
        let pick = (0..open.len())
            .min_by(|&a, &b| open[a].bound.total_cmp(&open[b].bound).then(open[a].id.cmp(&open[b].id)))
            .expect("non-empty");
        let node = open.swap_remove(pick);
        if let Some((_, inc)) = &incumbent {
            if closes_gap(*inc, node.bound, opts.rel_gap) {
                continue;
            }
        }
        nodes += 1;
        let Relaxation::Solved { x, objective } = s.relax(&node.start, &node.lo, &node.hi) else { continue };
        if let Some((_, inc)) = &incumbent {
            if closes_gap(*inc, objective, opts.rel_gap) {
                continue;
            }
        }
        let Some(b) = s.branching_variable(&x) else {
            let exact = ints.binaries.iter().all(|&b| x[b] == x[b].round());
            let candidate = if exact { Some((x, objective)) } else { s.polish(&x, &node.lo, &node.hi) };
            if let Some((x, obj)) = candidate {
                if incumbent.as_ref().is_none_or(|(_, inc)| obj < *inc) {
                    history.push(obj);
                    incumbent = Some((x, obj));
                }
            }
            continue;
        };
        if !seeded && incumbent.is_none() {
            seeded = true;
            let mut zlo = node.lo.clone();
            let mut zhi = node.hi.clone();
            let mut zx = x.clone();
            for &v in &ints.binaries {
                zlo[v] = zlo[v].min(0.0);
                zhi[v] = 0.0;
                zx[v] = 0.0;
            }
            if ints.binaries.iter().all(|&v| node.lo[v] <= 0.0) {
                if let Relaxation::Solved { x, objective } = s.relax(&zx, &zlo, &zhi) {
                    history.push(objective);
                    incumbent = Some((x, objective));
                }
            }
        }
        let mut hi0 = node.hi.clone();
        hi0[b] = 0.0;
        let mut start0 = x.clone();
        start0[b] = 0.0;
        open.push(Node { id: next_id, bound: objective, lo: node.lo.clone(), hi: hi0, start: start0 });
        let mut lo1 = node.lo.clone();
        let mut hi1 = node.hi;
        fix_to_one(ints, b, &mut lo1, &mut hi1);
        let start1: Vec<f64> = x.iter().zip(lo1.iter().zip(&hi1)).map(|(&v, (&l, &u))| v.clamp(l, u)).collect();
        open.push(Node { id: next_id + 1, bound: objective, lo: lo1, hi: hi1, start: start1 });
        next_id += 2;
    }

    let open_bound = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((x, objective)) => BnbResult {
            bound: open_bound.min(objective),
            x: Some(x),
            objective,
            status,
            nodes,
            evaluations: s.evaluations,
            incumbent_history: history,
        },
        None => BnbResult {
            x: None,
            objective: f64::INFINITY,
            bound: open_bound,
            status: if status == BnbStatus::Optimal { BnbStatus::Infeasible } else { status },
            nodes,
            evaluations: s.evaluations,
            incumbent_history: history,
        },
    }
}
