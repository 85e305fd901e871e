//! The receding-horizon controller: build a scenario tree, solve the
//! lookahead program, post-process the first-stage caps.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::bnb::{branch_and_bound, BnbOptions, BnbStatus, Clock, IntegerStructure};
use super::nlp::{augmented_lagrangian, NlpOptions, NlpResult, NlpStatus};
use super::problem::{LookaheadProblem, ProblemOptions, Variable};
use crate::error::Result;
use crate::mdp::{ControlAction, Environment, ExogenousDraw, SystemState};
use crate::scenario::{build_tree, sample_trajectories, ward_cluster, Scenario, ScenarioTree, Trajectory};

/// Caps within this many MW of the largest potential count as no cap.
const CAP_SNAP_MW: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "clusters")]
pub enum Mode {
    /// The realized future is known and forms a one-scenario tree.
    PerfectInfo,
    /// Sampled trajectories reduced to this many clusters.
    Scenarios(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub n_trajectories: usize,
    /// Trajectories closer than this (standardized features) are treated as
    /// sharing a history when building the tree.
    pub branch_tolerance: f64,
    pub time_limit_s: f64,
    pub node_limit: usize,
    pub rel_gap: f64,
    pub limit_margin: f64,
    pub smoothing_mw: f64,
    pub nlp: NlpOptions,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let p = ProblemOptions::default();
        PlannerConfig {
            gamma: 0.99,
            horizon: 15,
            n_trajectories: 100,
            branch_tolerance: 0.0,
            time_limit_s: 600.0,
            node_limit: 64,
            rel_gap: 1e-4,
            limit_margin: p.limit_margin,
            smoothing_mw: p.smoothing_mw,
            nlp: NlpOptions::default(),
        }
    }
}

impl PlannerConfig {
    /// Short horizon and budget for laptop-scale benchmarks.
    pub fn desk() -> Self {
        PlannerConfig { horizon: 8, time_limit_s: 30.0, node_limit: 16, ..Default::default() }
    }

    fn problem_options(&self) -> ProblemOptions {
        ProblemOptions { gamma: self.gamma, limit_margin: self.limit_margin, smoothing_mw: self.smoothing_mw }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
    Infeasible,
    FallbackUsed,
}

/// The plan of one scenario, `[stage][device slot]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub probability: f64,
    /// MW; infinite when the stage has no cap for the generator.
    #[serde(with = "crate::mdp::inf_as_null_nested")]
    pub caps: Vec<Vec<f64>>,
    /// Planned generator output, MW.
    pub injections: Vec<Vec<f64>>,
    pub potentials: Vec<Vec<f64>>,
    pub activations: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSolution {
    /// The first-stage action, common to every scenario.
    pub action: ControlAction,
    pub plans: Vec<ScenarioPlan>,
    /// Expected discounted cost of the plan in currency units.
    pub objective: f64,
    pub status: SolveStatus,
    /// The fallback also failed and the no-op action was returned.
    pub degraded: bool,
    pub nodes: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
}

impl PlannerSolution {
    pub fn fallback_used(&self) -> bool {
        self.status == SolveStatus::FallbackUsed
    }
}

/// Caps of the previous plan, `[stage][generator]` in MW, used to warm
/// start the next solve shifted by one stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerMemory {
    pub caps: Vec<Vec<f64>>,
}

/// Keeps a cap only if it binds for at least one scenario's next-period
/// potential; `potentials[k][g]`.
pub fn postprocess_curtailment(caps: &[f64], potentials: &[Vec<f64>]) -> Vec<f64> {
    caps.iter()
        .enumerate()
        .map(|(g, &cap)| if cap.is_finite() && potentials.iter().any(|p| cap < p[g] - CAP_SNAP_MW) { cap } else { f64::INFINITY })
        .collect()
}

/// Samples trajectories from `state` and reduces them to `w` scenarios.
pub fn scenario_tree(env: &Environment, state: &SystemState, w: usize, config: &PlannerConfig, seed: u64) -> Result<ScenarioTree> {
    let trajectories = sample_trajectories(env, state, config.horizon, config.n_trajectories, seed)?;
    let points: Vec<Vec<f64>> = trajectories.iter().map(Trajectory::features).collect();
    let clusters = ward_cluster(&points, w.min(trajectories.len()))?;
    build_tree(&clusters, &trajectories, trajectories.len(), config.branch_tolerance)
}

/// The realized future as a one-scenario tree.
pub fn perfect_info_tree(env: &Environment, state: &SystemState, future: &[ExogenousDraw]) -> Result<ScenarioTree> {
    let outcomes = env.exogenous_rollout(state, future)?;
    Ok(ScenarioTree::single(Trajectory::from_exogenous(&env.instance, &outcomes)))
}

fn integer_structure(p: &LookaheadProblem) -> IntegerStructure {
    IntegerStructure { binaries: p.binaries(), exclusive: p.windows().to_vec() }
}

/// Solves the continuous program with binaries either relaxed to `[0, 1]`
/// (`fixed = None`) or fixed to the given values in `binaries()` order.
pub fn solve_continuous(problem: &mut LookaheadProblem, x0: &[f64], fixed: Option<&[bool]>, nlp: &NlpOptions) -> NlpResult {
    let (lo, hi) = problem.bounds();
    let (mut lo, mut hi) = (lo.to_vec(), hi.to_vec());
    let mut x = x0.to_vec();
    if let Some(f) = fixed {
        for (&b, &v) in problem.binaries().iter().zip(f) {
            let v = if v { 1.0 } else { 0.0 };
            lo[b] = v;
            hi[b] = v;
            x[b] = v;
        }
    }
    augmented_lagrangian(problem, &x, &lo, &hi, nlp)
}

fn warm_start(problem: &LookaheadProblem, memory: Option<&PlannerMemory>) -> Vec<f64> {
    let mut x = problem.start_point();
    let Some(mem) = memory else { return x };
    for (i, v) in problem.variables().iter().enumerate() {
        if let Variable::Curtailment { stage, generator, scale_mw, .. } = v {
            if let Some(prev) = mem.caps.get(stage + 1).and_then(|c| c.get(*generator)) {
                if prev.is_finite() && *scale_mw > 0.0 {
                    x[i] = (prev / scale_mw).clamp(0.0, x[i]);
                }
            }
        }
    }
    x
}

/// Per-scenario plans at a solver point.
fn extract_plans(problem: &LookaheadProblem, x: &[f64]) -> Vec<ScenarioPlan> {
    let tree = problem.tree();
    let h = problem.horizon();
    let injections = problem.planned_injections(x);
    let n_gen = tree.scenarios[0].trajectory.steps[0].potentials.len();
    let n_flex = problem
        .variables()
        .iter()
        .filter_map(|v| if let Variable::Activation { flexible, .. } = v { Some(flexible + 1) } else { None })
        .max()
        .unwrap_or(0);
    let mut plans: Vec<ScenarioPlan> = tree
        .scenarios
        .iter()
        .zip(injections)
        .map(|(s, inj)| ScenarioPlan {
            probability: s.probability,
            caps: vec![vec![f64::INFINITY; n_gen]; h],
            injections: inj,
            potentials: s.trajectory.steps.iter().map(|st| st.potentials.clone()).collect(),
            activations: vec![vec![false; n_flex]; h],
        })
        .collect();
    for (i, v) in problem.variables().iter().enumerate() {
        match v {
            Variable::Curtailment { stage, generator, scenarios, scale_mw, .. } => {
                for &k in scenarios {
                    plans[k].caps[*stage][*generator] = x[i] * scale_mw;
                }
            }
            Variable::Activation { stage, flexible, scenarios, .. } => {
                for &k in scenarios {
                    plans[k].activations[*stage][*flexible] = x[i] > 0.5;
                }
            }
        }
    }
    plans
}

/// First-stage action from the plans: stage-0 decisions are shared.
fn first_stage_action(plans: &[ScenarioPlan], n_gen: usize, n_flex: usize) -> ControlAction {
    let raw: Vec<f64> = if plans.is_empty() { vec![f64::INFINITY; n_gen] } else { plans[0].caps[0].clone() };
    let potentials: Vec<Vec<f64>> = plans.iter().map(|p| p.potentials[0].clone()).collect();
    let caps = postprocess_curtailment(&raw, &potentials);
    let activations = if plans.is_empty() || plans[0].activations[0].is_empty() { vec![false; n_flex] } else { plans[0].activations[0].clone() };
    ControlAction { caps, activations }
}

fn remember(plans: &[ScenarioPlan]) -> PlannerMemory {
    PlannerMemory { caps: plans.first().map(|p| p.caps.clone()).unwrap_or_default() }
}

/// One-period, curtailment-only program over the same scenarios. Returns
/// `None` when even that fails.
pub fn fallback_plan(env: &Environment, state: &SystemState, tree: &ScenarioTree, config: &PlannerConfig) -> Result<Option<(Vec<ScenarioPlan>, f64, usize)>> {
    let short = ScenarioTree {
        scenarios: tree
            .scenarios
            .iter()
            .map(|s| Scenario { probability: s.probability, trajectory: Trajectory { steps: s.trajectory.steps[..1].to_vec() } })
            .collect(),
        groups: tree.groups[..1].to_vec(),
    };
    let mut problem = LookaheadProblem::assemble(env, state, &short, config.problem_options())?;
    let x0 = problem.start_point();
    let off = vec![false; problem.binaries().len()];
    let r = solve_continuous(&mut problem, &x0, Some(&off), &config.nlp);
    let ok = matches!(r.status, NlpStatus::Converged | NlpStatus::IterationLimit) && r.max_violation <= config.nlp.feas_tol;
    if !ok {
        return Ok(None);
    }
    let cost = problem.cost(&r.x);
    Ok(Some((extract_plans(&problem, &r.x), cost, r.evaluations)))
}

/// Solves the lookahead program over `tree` and returns the first-stage
/// action. `memory` is updated with the new plan.
pub fn plan(
    env: &Environment,
    state: &SystemState,
    tree: &ScenarioTree,
    config: &PlannerConfig,
    memory: &mut PlannerMemory,
    clock: &dyn Clock,
) -> Result<PlannerSolution> {
    let started = clock.now_s();
    let n_gen = env.instance.generators().len();
    let n_flex = env.instance.flexible().len();
    let mut problem = LookaheadProblem::assemble(env, state, tree, config.problem_options())?;
    let noop = problem.noop_point();

    let finish = |plans: Vec<ScenarioPlan>, objective, status, degraded, nodes, evaluations, memory: &mut PlannerMemory| {
        *memory = remember(&plans);
        let action = first_stage_action(&plans, n_gen, n_flex);
        PlannerSolution { action, plans, objective, status, degraded, nodes, evaluations, wall_time_s: clock.now_s() - started }
    };

    match problem.max_violation(&noop) {
        Some(v) if v <= 0.0 => {
            let plans = extract_plans(&problem, &noop);
            return Ok(finish(plans, 0.0, SolveStatus::Optimal, false, 0, 1, memory));
        }
        Some(_) => {
            let x0 = warm_start(&problem, Some(memory));
            let ints = integer_structure(&problem);
            let (lo, hi) = problem.bounds();
            let (lo, hi) = (lo.to_vec(), hi.to_vec());
            let opts = BnbOptions {
                rel_gap: config.rel_gap,
                node_limit: config.node_limit,
                time_limit_s: (config.time_limit_s - (clock.now_s() - started)).max(0.0),
                integrality_tol: 1e-6,
            };
            let r = branch_and_bound(&mut problem, &x0, &lo, &hi, &ints, &config.nlp, &opts, clock);
            if let Some(x) = r.x {
                let status = match r.status {
                    BnbStatus::Optimal => SolveStatus::Optimal,
                    BnbStatus::NodeLimit => SolveStatus::NodeLimit,
                    BnbStatus::TimeLimit => SolveStatus::TimeLimit,
                    BnbStatus::Infeasible => SolveStatus::Infeasible,
                };
                let cost = problem.cost(&x);
                let plans = extract_plans(&problem, &x);
                return Ok(finish(plans, cost, status, false, r.nodes, r.evaluations + 1, memory));
            }
            let nodes = r.nodes;
            let evaluations = r.evaluations;
            match fallback_plan(env, state, tree, config)? {
                Some((plans, cost, ev)) => Ok(finish(plans, cost, SolveStatus::FallbackUsed, false, nodes, evaluations + ev, memory)),
                None => Ok(degraded(memory, n_gen, n_flex, nodes, evaluations, clock.now_s() - started)),
            }
        }
        None => match fallback_plan(env, state, tree, config)? {
            Some((plans, cost, ev)) => Ok(finish(plans, cost, SolveStatus::FallbackUsed, false, 0, ev, memory)),
            None => Ok(degraded(memory, n_gen, n_flex, 0, 0, clock.now_s() - started)),
        },
    }
}

fn degraded(memory: &mut PlannerMemory, n_gen: usize, n_flex: usize, nodes: usize, evaluations: usize, wall: f64) -> PlannerSolution {
    *memory = PlannerMemory::default();
    PlannerSolution {
        action: ControlAction::noop(n_gen, n_flex),
        plans: Vec::new(),
        objective: f64::NAN,
        status: SolveStatus::FallbackUsed,
        degraded: true,
        nodes,
        evaluations,
        wall_time_s: wall,
    }
}

/// A planner bound to one simulation run.
#[derive(Debug, Clone)]
pub struct Planner {
    pub mode: Mode,
    pub config: PlannerConfig,
    pub memory: PlannerMemory,
}

impl Planner {
    pub fn new(mode: Mode, config: PlannerConfig) -> Self {
        Planner { mode, config, memory: PlannerMemory::default() }
    }

    /// Decides the action for `state`. Scenario mode samples with `seed`;
    /// perfect-information mode needs the draws of the next `horizon`
    /// periods in `future`.
    pub fn act(
        &mut self,
        env: &Environment,
        state: &SystemState,
        seed: u64,
        future: Option<&[ExogenousDraw]>,
        clock: &dyn Clock,
    ) -> Result<PlannerSolution> {
        let started = clock.now_s();
        let tree = match self.mode {
            Mode::PerfectInfo => {
                let draws = future.ok_or_else(|| crate::Error::InvalidArgument("perfect information needs the realized future".into()))?;
                let n = self.config.horizon.min(draws.len());
                if n == 0 {
                    return Err(crate::Error::InvalidArgument("empty realized future".into()));
                }
                perfect_info_tree(env, state, &draws[..n])?
            }
            Mode::Scenarios(w) => scenario_tree(env, state, w, &self.config, seed)?,
        };
        let mut sol = plan(env, state, &tree, &self.config, &mut self.memory, clock)?;
        sol.wall_time_s = clock.now_s() - started;
        Ok(sol)
    }
}
