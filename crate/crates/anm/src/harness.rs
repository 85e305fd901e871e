//! Closed-loop simulation runs and their aggregation into reports.
//!
//! Run `i` of an experiment draws its exogenous noise from
//! `stream(seed, [EXOGENOUS, i])` and its initial state from
//! `stream(seed, [INITIAL_STATE, i])`, whatever the policy. Comparing modes
//! under one seed therefore compares them on identical weather and load
//! realizations.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;

use anm_core::mdp::{discounted_return, ControlAction, Environment, ExogenousDraw, SystemState, TransitionOutcome};
use anm_core::planner::{Clock, Mode, Planner, PlannerConfig, PlannerSolution, SolveStatus};
use anm_core::rng::{split_seed, stream, tags};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::WallClock;
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "anm-report/1";

/// The controller used in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "clusters")]
pub enum PolicyKind {
    /// Never curtails nor activates.
    Noop,
    PerfectInfo,
    Scenarios(usize),
}

impl PolicyKind {
    pub fn planner_mode(self) -> Option<Mode> {
        match self {
            PolicyKind::Noop => None,
            PolicyKind::PerfectInfo => Some(Mode::PerfectInfo),
            PolicyKind::Scenarios(w) => Some(Mode::Scenarios(w)),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Noop => write!(f, "noop"),
            PolicyKind::PerfectInfo => write!(f, "perfect_info"),
            PolicyKind::Scenarios(w) => write!(f, "scenarios({w})"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    /// Accepts `noop`, `perfect_info` (or `perfect-info`) and
    /// `scenarios(W)` (or `scenarios:W`).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        match s {
            "noop" => return Ok(PolicyKind::Noop),
            "perfect_info" | "perfect-info" => return Ok(PolicyKind::PerfectInfo),
            _ => {}
        }
        let w = s
            .strip_prefix("scenarios(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("scenarios:"))
            .ok_or_else(|| format!("unknown mode `{s}`; expected noop, perfect_info or scenarios(W)"))?;
        match w.parse::<usize>() {
            Ok(w) if w >= 1 => Ok(PolicyKind::Scenarios(w)),
            _ => Err(format!("scenario count in `{s}` must be a positive integer")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    /// Quarter of the day of every initial state.
    pub start_quarter: u8,
    pub planner: PlannerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// 20 runs of one day with the short-horizon planner.
    pub fn desk() -> Self {
        ExperimentConfig { runs: 20, steps: 96, seed: 1, start_quarter: 1, planner: PlannerConfig::desk() }
    }

    /// 50 runs of three days, horizon 15, ten minutes per step.
    pub fn reference_scale() -> Self {
        ExperimentConfig { runs: 50, steps: 288, seed: 1, start_quarter: 1, planner: PlannerConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.planner;
        let bad = |m: String| Err(Error::Argument(m));
        if self.runs == 0 || self.steps == 0 {
            return bad("runs and steps must be positive".into());
        }
        if !(1..=96).contains(&self.start_quarter) {
            return bad(format!("start quarter {} outside 1..=96", self.start_quarter));
        }
        if !(p.gamma > 0.0 && p.gamma <= 1.0) {
            return bad(format!("discount factor {} outside (0, 1]", p.gamma));
        }
        if p.horizon == 0 || p.n_trajectories == 0 {
            return bad("horizon and trajectory count must be positive".into());
        }
        if !(p.time_limit_s >= 0.0) || !(p.rel_gap >= 0.0) || !(p.branch_tolerance >= 0.0) {
            return bad("time limit, gap and branch tolerance must be non-negative".into());
        }
        if p.node_limit == 0 {
            return bad("node limit must be positive".into());
        }
        if !(p.limit_margin >= 0.0) || !(p.smoothing_mw > 0.0) {
            return bad("limit margin must be non-negative and smoothing positive".into());
        }
        Ok(())
    }
}

/// One row of a run trace, describing the period entered after acting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Quarter of the period entered.
    pub quarter: u8,
    /// Total consumption, MW (positive).
    pub load_mw: f64,
    pub wind_speed: f64,
    pub irradiance: f64,
    /// Uncurtailed generation, MW.
    pub potential_mw: f64,
    /// Generation actually injected, MW.
    pub generation_mw: f64,
    pub caps_set: usize,
    pub activations: usize,
    /// Flexible loads in service during the period.
    pub active_flex: usize,
    pub reward: f64,
    pub cost_curtailment: f64,
    pub cost_flexibility: f64,
    pub cost_barrier: f64,
    pub violations: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Largest `|I| / i_max` over links.
    pub max_loading: f64,
    pub converged: bool,
    pub status: String,
    pub fallback: bool,
    pub degraded: bool,
    pub nodes: usize,
    pub evaluations: usize,
    /// All scenario plans agree on the first-stage decisions.
    pub first_stage_shared: bool,
    /// Largest `|planned injection − min(cap, potential)|` at stage 0, MW.
    pub injection_gap: f64,
}

/// Outcome of one run. Aggregates are only meaningful when `failure` is
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub discounted_return: f64,
    pub steps: usize,
    pub violation_periods: usize,
    pub fallback_steps: usize,
    pub degraded_steps: usize,
    pub diverged_steps: usize,
    pub nodes: usize,
    pub evaluations: usize,
    pub nonshared_steps: usize,
    pub max_injection_gap: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
    pub rewards: Vec<f64>,
    /// Planner wall time per step, seconds.
    pub solve_times: Vec<f64>,
}

/// Aggregate of one policy over an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub policy: PolicyKind,
    /// Free-form label of the instance, e.g. its flexibility level.
    pub label: String,
    pub config: ExperimentConfig,
    /// Mean discounted return over completed runs.
    pub expected_return: f64,
    /// Standard error of `expected_return`.
    pub std_error: f64,
    pub violation_pct: f64,
    pub fallback_pct: f64,
    pub completed_runs: usize,
    pub failed_runs: Vec<usize>,
    pub mean_nodes_per_step: f64,
    pub mean_evaluations_per_step: f64,
    pub runs: Vec<RunSummary>,
}

/// Planner wall times of a report, kept apart so that the report itself is
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub policy: PolicyKind,
    pub label: String,
    /// `[run][step]`, seconds.
    pub solve_times: Vec<Vec<f64>>,
}

impl Timing {
    pub fn all(&self) -> Vec<f64> {
        self.solve_times.iter().flatten().copied().collect()
    }

    pub fn mean(&self) -> f64 {
        let v = self.all();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Noise of periods `0..count`, shared by every policy for run `run`.
pub fn exogenous_draws(env: &Environment, seed: u64, run: usize, count: usize) -> Vec<ExogenousDraw> {
    let mut rng = stream(seed, &[tags::EXOGENOUS, run as u64]);
    let n = env.instance.loads().len();
    (0..count).map(|_| ExogenousDraw::sample(&mut rng, n)).collect()
}

pub fn initial_state(env: &Environment, seed: u64, run: usize, quarter: u8) -> SystemState {
    env.initial_state(quarter, &mut stream(seed, &[tags::INITIAL_STATE, run as u64]))
}

fn first_stage_shared(sol: &PlannerSolution) -> bool {
    let Some(first) = sol.plans.first() else { return true };
    sol.plans.iter().all(|p| {
        let same_caps = p.caps.first().zip(first.caps.first()).map_or(true, |(a, b)| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y || (x.is_infinite() && y.is_infinite()))
        });
        same_caps && p.activations.first() == first.activations.first()
    })
}

fn injection_gap(sol: &PlannerSolution) -> f64 {
    let mut gap: f64 = 0.0;
    for p in &sol.plans {
        let (Some(caps), Some(inj), Some(pot)) = (p.caps.first(), p.injections.first(), p.potentials.first()) else {
            continue;
        };
        for ((c, i), q) in caps.iter().zip(inj).zip(pot) {
            gap = gap.max((i - c.min(*q)).abs());
        }
    }
    gap
}

fn record(step: usize, env: &Environment, action: &ControlAction, out: &TransitionOutcome, sol: Option<&PlannerSolution>) -> StepRecord {
    let inst = &env.instance;
    let net = inst.network();
    let s = &out.next_state;
    let generation: f64 = out.potentials.iter().zip(&action.caps).map(|(p, c)| p.min(*c)).sum();
    let mags: Vec<f64> = out.solution.v.iter().map(|v| v.norm()).collect();
    let loading = net.links.iter().zip(&out.solution.branch_currents).map(|(l, i)| i / l.i_max).fold(0.0, f64::max);
    StepRecord {
        step,
        quarter: s.quarter,
        load_mw: -s.load_power.iter().sum::<f64>(),
        wind_speed: s.wind_speed,
        irradiance: s.irradiance,
        potential_mw: out.potentials.iter().sum(),
        generation_mw: generation,
        caps_set: action.caps.iter().filter(|c| c.is_finite()).count(),
        activations: action.activations.iter().filter(|a| **a).count(),
        active_flex: s.countdown.iter().filter(|c| **c > 0).count(),
        reward: out.reward,
        cost_curtailment: out.costs.curtailment,
        cost_flexibility: out.costs.flexibility,
        cost_barrier: out.costs.barrier,
        violations: out.violations.len(),
        v_min: mags.iter().copied().fold(f64::INFINITY, f64::min),
        v_max: mags.iter().copied().fold(0.0, f64::max),
        max_loading: loading,
        converged: out.solution.converged,
        status: sol.map_or("noop".into(), |s| status_name(s.status).into()),
        fallback: sol.is_some_and(|s| s.fallback_used()),
        degraded: sol.is_some_and(|s| s.degraded),
        nodes: sol.map_or(0, |s| s.nodes),
        evaluations: sol.map_or(0, |s| s.evaluations),
        first_stage_shared: sol.map_or(true, first_stage_shared),
        injection_gap: sol.map_or(0.0, injection_gap),
    }
}

pub fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::NodeLimit => "node_limit",
        SolveStatus::TimeLimit => "time_limit",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::FallbackUsed => "fallback",
    }
}

fn simulate_inner(
    env: &Environment,
    policy: PolicyKind,
    config: &ExperimentConfig,
    run: usize,
    clock: &dyn Clock,
) -> (Vec<StepRecord>, Vec<f64>, Vec<f64>, Option<String>) {
    let horizon = config.planner.horizon;
    let draws = exogenous_draws(env, config.seed, run, config.steps + horizon);
    let mut state = initial_state(env, config.seed, run, config.start_quarter);
    let mut planner = policy.planner_mode().map(|m| Planner::new(m, config.planner));
    let (n_gen, n_flex) = (env.instance.generators().len(), env.instance.flexible().len());
    let mut records = Vec::with_capacity(config.steps);
    let mut rewards = Vec::with_capacity(config.steps);
    let mut times = Vec::with_capacity(config.steps);
    for t in 0..config.steps {
        let sol = match planner.as_mut() {
            None => None,
            Some(p) => {
                let seed = split_seed(config.seed, &[tags::PLANNER, run as u64, t as u64]);
                match p.act(env, &state, seed, Some(&draws[t..t + horizon]), clock) {
                    Ok(s) => Some(s),
                    Err(e) => return (records, rewards, times, Some(format!("step {t}: planner: {e}"))),
                }
            }
        };
        let action = sol.as_ref().map_or_else(|| ControlAction::noop(n_gen, n_flex), |s| s.action.clone());
        times.push(sol.as_ref().map_or(0.0, |s| s.wall_time_s));
        let out = match env.step(&state, &action, &draws[t]) {
            Ok(o) => o,
            Err(e) => return (records, rewards, times, Some(format!("step {t}: transition: {e}"))),
        };
        records.push(record(t, env, &action, &out, sol.as_ref()));
        rewards.push(out.reward);
        state = out.next_state;
    }
    (records, rewards, times, None)
}

/// Simulates run `run` of an experiment. A panic or error inside the run
/// is caught and reported in `summary.failure`.
pub fn simulate_run(env: &Environment, policy: PolicyKind, config: &ExperimentConfig, run: usize, clock: &dyn Clock) -> RunTrace {
    let caught = catch_unwind(AssertUnwindSafe(|| simulate_inner(env, policy, config, run, clock)));
    let (records, rewards, solve_times, failure) = match caught {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (Vec::new(), Vec::new(), Vec::new(), Some(format!("panic: {msg}")))
        }
    };
    let summary = RunSummary {
        run,
        discounted_return: discounted_return(&rewards, config.planner.gamma),
        steps: records.len(),
        violation_periods: records.iter().filter(|r| r.violations > 0 || !r.converged).count(),
        fallback_steps: records.iter().filter(|r| r.fallback).count(),
        degraded_steps: records.iter().filter(|r| r.degraded).count(),
        diverged_steps: records.iter().filter(|r| !r.converged).count(),
        nodes: records.iter().map(|r| r.nodes).sum(),
        evaluations: records.iter().map(|r| r.evaluations).sum(),
        nonshared_steps: records.iter().filter(|r| !r.first_stage_shared).count(),
        max_injection_gap: records.iter().map(|r| r.injection_gap).fold(0.0, f64::max),
        failure,
    };
    RunTrace { summary, records, rewards, solve_times }
}

/// Folds run summaries, in run order, into a report.
pub fn aggregate(policy: PolicyKind, label: &str, config: &ExperimentConfig, runs: Vec<RunSummary>) -> RunReport {
    let ok: Vec<&RunSummary> = runs.iter().filter(|r| r.failure.is_none()).collect();
    let n = ok.len();
    let mean = if n == 0 { f64::NAN } else { ok.iter().map(|r| r.discounted_return).sum::<f64>() / n as f64 };
    let std_error = if n < 2 {
        0.0
    } else {
        let var = ok.iter().map(|r| (r.discounted_return - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    let steps: usize = ok.iter().map(|r| r.steps).sum();
    let pct = |k: usize| if steps == 0 { 0.0 } else { 100.0 * k as f64 / steps as f64 };
    let per_step = |k: usize| if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
    RunReport {
        format: REPORT_FORMAT.into(),
        policy,
        label: label.into(),
        config: config.clone(),
        expected_return: mean,
        std_error,
        violation_pct: pct(ok.iter().map(|r| r.violation_periods).sum()),
        fallback_pct: pct(ok.iter().map(|r| r.fallback_steps).sum()),
        completed_runs: n,
        failed_runs: runs.iter().filter(|r| r.failure.is_some()).map(|r| r.run).collect(),
        mean_nodes_per_step: per_step(ok.iter().map(|r| r.nodes).sum()),
        mean_evaluations_per_step: per_step(ok.iter().map(|r| r.evaluations).sum()),
        runs,
    }
}

/// Runs every `(policy, run)` pair in parallel and returns one report,
/// timing and trace set per policy, in the order given.
pub fn compare_modes(
    env: &Environment,
    policies: &[PolicyKind],
    label: &str,
    config: &ExperimentConfig,
) -> Result<Vec<(RunReport, Timing, Vec<RunTrace>)>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..policies.len()).flat_map(|p| (0..config.runs).map(move |r| (p, r))).collect();
    let traces: Vec<RunTrace> = jobs
        .par_iter()
        .map(|&(p, r)| simulate_run(env, policies[p], config, r, &WallClock::new()))
        .collect();
    let mut out = Vec::with_capacity(policies.len());
    let mut it = traces.into_iter();
    for &policy in policies {
        let traces: Vec<RunTrace> = it.by_ref().take(config.runs).collect();
        let report = aggregate(policy, label, config, traces.iter().map(|t| t.summary.clone()).collect());
        let timing = Timing { policy, label: label.into(), solve_times: traces.iter().map(|t| t.solve_times.clone()).collect() };
        out.push((report, timing, traces));
    }
    Ok(out)
}

pub fn run_experiment(env: &Environment, policy: PolicyKind, label: &str, config: &ExperimentConfig) -> Result<(RunReport, Timing, Vec<RunTrace>)> {
    Ok(compare_modes(env, &[policy], label, config)?.pop().expect("one policy"))
}

/// Fraction of runs completed by both on which `a` has a strictly higher
/// return than every report in `others`.
pub fn strictly_best_fraction(a: &RunReport, others: &[&RunReport]) -> f64 {
    let mut wins = 0;
    let mut total = 0;
    for ra in a.runs.iter().filter(|r| r.failure.is_none()) {
        let rivals: Option<Vec<f64>> = others
            .iter()
            .map(|o| o.runs.get(ra.run).filter(|r| r.failure.is_none() && r.run == ra.run).map(|r| r.discounted_return))
            .collect();
        if let Some(rivals) = rivals {
            total += 1;
            if rivals.iter().all(|&v| ra.discounted_return > v) {
                wins += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wins as f64 / total as f64
    }
}

/// Fraction of runs where `a` does at least as well as every rival, up to
/// `tol` relative.
pub fn weakly_best_fraction(a: &RunReport, others: &[&RunReport], tol: f64) -> f64 {
    let mut wins = 0;
    let mut total = 0;
    for ra in a.runs.iter().filter(|r| r.failure.is_none()) {
        let rivals: Option<Vec<f64>> = others
            .iter()
            .map(|o| o.runs.get(ra.run).filter(|r| r.failure.is_none()).map(|r| r.discounted_return))
            .collect();
        if let Some(rivals) = rivals {
            total += 1;
            if rivals.iter().all(|&v| ra.discounted_return >= v - tol * v.abs().max(1.0)) {
                wins += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wins as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in [PolicyKind::Noop, PolicyKind::PerfectInfo, PolicyKind::Scenarios(3)] {
            assert_eq!(p.to_string().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("scenarios:2".parse::<PolicyKind>().unwrap(), PolicyKind::Scenarios(2));
        assert_eq!("perfect-info".parse::<PolicyKind>().unwrap(), PolicyKind::PerfectInfo);
        assert!("scenarios(0)".parse::<PolicyKind>().is_err());
        assert!("greedy".parse::<PolicyKind>().is_err());
    }

    fn summary(run: usize, ret: f64, failure: Option<&str>) -> RunSummary {
        RunSummary {
            run,
            discounted_return: ret,
            steps: 4,
            violation_periods: 1,
            fallback_steps: 0,
            degraded_steps: 0,
            diverged_steps: 0,
            nodes: 2,
            evaluations: 8,
            nonshared_steps: 0,
            max_injection_gap: 0.0,
            failure: failure.map(String::from),
        }
    }

    #[test]
    fn aggregation_excludes_failed_runs() {
        let cfg = ExperimentConfig { runs: 3, steps: 4, ..ExperimentConfig::desk() };
        let r = aggregate(PolicyKind::Noop, "x", &cfg, vec![summary(0, -2.0, None), summary(1, -1e9, Some("panic")), summary(2, -4.0, None)]);
        assert_eq!(r.failed_runs, vec![1]);
        assert_eq!(r.completed_runs, 2);
        assert_eq!(r.expected_return, -3.0);
        assert!((r.std_error - 1.0).abs() < 1e-12);
        assert_eq!(r.violation_pct, 25.0);
        assert_eq!(r.mean_nodes_per_step, 0.5);
    }

    #[test]
    fn paired_fractions() {
        let cfg = ExperimentConfig { runs: 3, steps: 4, ..ExperimentConfig::desk() };
        let a = aggregate(PolicyKind::PerfectInfo, "x", &cfg, vec![summary(0, -1.0, None), summary(1, -5.0, None), summary(2, -2.0, None)]);
        let b = aggregate(PolicyKind::Scenarios(1), "x", &cfg, vec![summary(0, -3.0, None), summary(1, -5.0, None), summary(2, -2.5, None)]);
        assert!((strictly_best_fraction(&a, &[&b]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(weakly_best_fraction(&a, &[&b], 0.0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::desk().validate().is_ok());
        let mut c = ExperimentConfig::desk();
        c.planner.gamma = 1.5;
        assert!(c.validate().is_err());
        let c = ExperimentConfig { start_quarter: 0, ..ExperimentConfig::desk() };
        assert!(c.validate().is_err());
    }
}
