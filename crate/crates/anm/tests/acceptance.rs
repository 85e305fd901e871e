//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so lines print in order.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anm::core::bench::{generate_instance, FlexLevel, InstanceSpec};
use anm::core::devices::{modulation_signal, FlexParams, ModulationDirection};
use anm::core::grid::{solve_power_flow, Bus, BusKind, Link, NetworkModel, PowerFlowSolution, PowerFlowStatus};
use anm::core::mdp::{barrier_chi, barrier_phi, Environment};
use anm::core::planner::{
    branch_and_bound, plan, postprocess_curtailment, solve_continuous, BnbOptions, ConstrainedProblem, IntegerStructure, LookaheadProblem,
    NlpOptions, NlpStatus, NoClock, PlannerConfig, PlannerMemory, ProblemOptions, SolveStatus,
};
use anm::core::rng::{stream, NoisePair};
use anm::core::scenario::ScenarioTree;
use anm::core::stochastic::{fit_em, EmOptions, ModelSet};
use anm::core::Complex64;
use anm::harness::{self, ExperimentConfig, PolicyKind, RunReport};
use common::{split_tree, state, trajectory, weak_environment};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// 1. Power flow

/// Net current leaving each bus, summed link by link from the π-model.
fn nodal_currents(net: &NetworkModel, v: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    for l in &net.links {
        let (m, n) = (l.from_bus, l.to_bus);
        let i_from = l.t_from.norm_sqr() * (l.y_shunt_from + l.y_branch) * v[m] - l.t_from.conj() * l.t_to * l.y_branch * v[n];
        let i_to = l.t_to.norm_sqr() * (l.y_shunt_to + l.y_branch) * v[n] - l.t_to.conj() * l.t_from * l.y_branch * v[m];
        out[m] += i_from;
        out[n] += i_to;
    }
    out
}

fn random_radial(rng: &mut impl Rng) -> NetworkModel {
    let n = rng.gen_range(2..=20);
    let buses = (0..n).map(|i| Bus::new(i, if i == 0 { BusKind::Slack } else { BusKind::Pq })).collect();
    let links = (1..n)
        .map(|i| {
            let z = Complex64::new(rng.gen_range(0.002..0.02), rng.gen_range(0.005..0.04));
            let mut l = Link::line(rng.gen_range(0..i), i, z, 1.0);
            let b = rng.gen_range(0.0..0.002);
            l.y_shunt_from = Complex64::new(0.0, b);
            l.y_shunt_to = Complex64::new(0.0, b);
            if rng.gen_bool(0.2) {
                l.t_from = Complex64::new(rng.gen_range(0.95..1.05), 0.0);
            }
            l
        })
        .collect();
    NetworkModel::new(buses, links, 10.0, 20.0).expect("valid radial network")
}

/// Fixed-point Gauss–Seidel on a 2-bus system; `s` is the injection at bus 1.
fn gauss_seidel_two_bus(z: Complex64, s: Complex64, v1: Complex64) -> Complex64 {
    let y = z.inv();
    let mut v2 = v1;
    for _ in 0..100_000 {
        let next = (s.conj() / v2.conj() + y * v1) / y;
        let done = (next - v2).norm() < 1e-15;
        v2 = next;
        if done {
            break;
        }
    }
    v2
}

fn criterion_power_flow() -> Outcome {
    let started = Instant::now();
    let mut worst_mismatch: f64 = 0.0;
    let mut worst_balance: f64 = 0.0;
    for case in 0..200u64 {
        let mut rng = stream(11, &[case]);
        let net = random_radial(&mut rng);
        let n = net.n_buses();
        let p: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { rng.gen_range(-0.04..0.03) }).collect();
        let q: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { rng.gen_range(-0.015..0.01) }).collect();
        let slack = Complex64::from_polar(rng.gen_range(0.98..1.04), 0.0);
        let sol = solve_power_flow(&net, &p, &q, slack);
        ensure(sol.converged, || format!("case {case}: {:?} after {} iterations", sol.status, sol.iterations))?;
        let cur = nodal_currents(&net, &sol.v);
        for i in 1..n {
            let s = sol.v[i] * cur[i].conj();
            worst_mismatch = worst_mismatch.max((s - Complex64::new(p[i], q[i])).norm());
        }
        let injected: Complex64 = sol.s_injected.iter().sum();
        let losses: Complex64 = (0..n).map(|i| sol.v[i] * cur[i].conj()).sum();
        worst_balance = worst_balance.max((injected - losses).norm());
    }
    ensure(worst_mismatch <= 1e-8, || format!("mismatch {worst_mismatch:e}"))?;
    ensure(worst_balance <= 1e-7, || format!("power balance {worst_balance:e}"))?;

    let mut worst_gs: f64 = 0.0;
    for case in 0..10u64 {
        let mut rng = stream(12, &[case]);
        let z = Complex64::new(rng.gen_range(0.005..0.03), rng.gen_range(0.01..0.08));
        let s = Complex64::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.3..0.3));
        let v1 = Complex64::new(1.02, 0.0);
        let buses = vec![Bus::new(0, BusKind::Slack), Bus::new(1, BusKind::Pq)];
        let net = NetworkModel::new(buses, vec![Link::line(0, 1, z, 1.0)], 10.0, 20.0).unwrap();
        let sol = solve_power_flow(&net, &[0.0, s.re], &[0.0, s.im], v1);
        ensure(sol.converged, || format!("2-bus case {case} diverged"))?;
        worst_gs = worst_gs.max((sol.v[1] - gauss_seidel_two_bus(z, s, v1)).norm());
    }
    ensure(worst_gs <= 1e-7, || format!("Gauss–Seidel gap {worst_gs:e}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("200 networks, mismatch {worst_mismatch:.1e}, balance {worst_balance:.1e}, 2-bus gap {worst_gs:.1e}, {secs:.2} s"))
}

// ---------------------------------------------------------------------------
// 2. Barrier

fn synthetic_solution(v: &[f64], currents: &[f64]) -> PowerFlowSolution {
    PowerFlowSolution {
        v: v.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
        s_injected: vec![Complex64::new(0.0, 0.0); v.len()],
        branch_currents: currents.to_vec(),
        converged: true,
        status: PowerFlowStatus::Converged,
        iterations: 0,
        residual: 0.0,
    }
}

fn criterion_barrier() -> Outcome {
    ensure(barrier_chi(0.0) == 0.0, || "chi(0) != 0".into())?;
    for (x, want) in [(0.5, 1000.0 * (0.5f64.exp() - 1.0)), (10.0, 1e6)] {
        let got = barrier_chi(x);
        ensure(rel(got, want) <= 1e-9, || format!("chi({x}) = {got}, want {want}"))?;
    }
    let net = common::chain(5, Complex64::new(0.01, 0.02), 0.5);
    let mut worst: f64 = 0.0;
    let mut rng = stream(21, &[]);
    for _ in 0..500 {
        let mut v = vec![1.0; 5];
        let mut cur = vec![0.2; 4];
        let mut expected = 0.0;
        for (i, vi) in v.iter_mut().enumerate().skip(1) {
            match rng.gen_range(0..3) {
                0 => {
                    let e = rng.gen_range(0.0..0.2);
                    *vi = net.buses[i].v_max + e;
                    expected += 1000.0 * (e.exp() - 1.0);
                }
                1 => {
                    let e = rng.gen_range(0.0..0.2);
                    *vi = net.buses[i].v_min - e;
                    expected += 1000.0 * (e.exp() - 1.0);
                }
                _ => *vi = rng.gen_range(net.buses[i].v_min..net.buses[i].v_max),
            }
        }
        for (c, l) in cur.iter_mut().zip(&net.links) {
            if rng.gen_bool(0.5) {
                let e = rng.gen_range(0.0..0.3);
                *c = l.i_max + e;
                expected += 1000.0 * (e.exp() - 1.0);
            }
        }
        let phi = barrier_phi(&net, &synthetic_solution(&v, &cur));
        worst = worst.max((phi - expected).abs() / expected.max(1.0));
    }
    ensure(worst <= 1e-9, || format!("additivity error {worst:e}"))?;
    Ok(format!("chi values exact, additivity error {worst:.1e} over 500 draws"))
}

// ---------------------------------------------------------------------------
// 3. Modulation signals

fn check_signal(p: &FlexParams) -> Result<(), String> {
    let s: Vec<f64> = (1..=p.duration).map(|t| modulation_signal(p, t)).collect();
    ensure(s == p.signal_table(), || "signal table disagrees with the signal".into())?;
    let sum: f64 = s.iter().sum();
    ensure(sum.abs() <= 1e-9 * p.amplitude_mw.max(1.0), || format!("{p:?}: integral {sum:e}"))?;
    let signs: Vec<f64> = s.iter().filter(|x| x.abs() > 1e-12 * p.amplitude_mw).map(|x| x.signum()).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    ensure(changes == 1, || format!("{p:?}: {changes} sign changes"))
}

fn criterion_modulation() -> Outcome {
    let mut checked = 0;
    for spec in [InstanceSpec::desk(), InstanceSpec::reference_scale()] {
        for level in FlexLevel::LEVELS {
            let inst = generate_instance(&InstanceSpec { flex_level: level, ..spec.clone() }).map_err(|e| e.to_string())?;
            for &d in inst.flexible() {
                check_signal(inst.devices()[d].flex_params().expect("flexible"))?;
                checked += 1;
            }
        }
    }
    for duration in 2..=16 {
        for direction in [ModulationDirection::DownThenUp, ModulationDirection::UpThenDown] {
            check_signal(&FlexParams { duration, amplitude_mw: 0.7, direction, activation_cost: 1.0 })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} parameter sets"))
}

// ---------------------------------------------------------------------------
// 4. Stochastic models

fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn criterion_stochastic() -> Outcome {
    let started = Instant::now();
    let opts = EmOptions::default();
    let (models, reports) = ModelSet::fit_synthetic(30, 1, &opts).map_err(|e| e.to_string())?;
    ensure(reports.iter().all(|r| r.is_monotone(1e-9)), || "synthetic fit log-likelihood decreased".into())?;

    let (phi, sigma) = (0.8, 0.5);
    let mut rng = stream(31, &[]);
    let mut x = 0.0;
    let mut series = Vec::with_capacity(20_000);
    for t in 0..20_100 {
        x = phi * x + sigma * anm::core::rng::standard_normal(&mut rng);
        if t >= 100 {
            series.push(x);
        }
    }
    let rows: Vec<f64> = series.windows(2).flatten().copied().collect();
    for n in 1..=3 {
        let (_, report) = fit_em(&rows, 1, n, 5, &opts).map_err(|e| e.to_string())?;
        ensure(report.is_monotone(1e-9), || format!("AR(1) fit with {n} components not monotone"))?;
    }
    let (ar, _) = fit_em(&rows, 1, 1, 5, &opts).map_err(|e| e.to_string())?;
    let hi = ar.conditionalize(&[1.0]).map_err(|e| e.to_string())?;
    let lo = ar.conditionalize(&[-1.0]).map_err(|e| e.to_string())?;
    let slope = (hi[0].mean - lo[0].mean) / 2.0;
    ensure(rel(slope, phi) <= 0.05, || format!("AR coefficient {slope}, want {phi}"))?;
    ensure(rel(hi[0].std, sigma) <= 0.05, || format!("innovation std {}, want {sigma}", hi[0].std))?;

    let model = &models.irradiance;
    let history: Vec<f64> = model.params().components[0].mean[..model.lags()].to_vec();
    let mix = model.conditionalize(&history).map_err(|e| e.to_string())?;
    let n = 100_000;
    let mut rng = stream(32, &[]);
    let mut draws: Vec<f64> = (0..n)
        .map(|_| {
            let w = NoisePair::draw(&mut rng);
            model.sample_next_residual(&history, w.w1, w.w2).expect("valid history")
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let cdf = |x: f64| mix.iter().map(|c| c.weight * normal_cdf((x - c.mean) / c.std)).sum::<f64>();
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
        })
        .fold(0.0, f64::max);
    ensure(ks < 0.01, || format!("KS distance {ks}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "EM monotone, AR coefficient {slope:.4} std {:.4}, KS {ks:.4} over {} components, {secs:.1} s",
        hi[0].std,
        mix.len()
    ))
}

// ---------------------------------------------------------------------------
// 5. Branch-and-bound against enumeration

fn enumerate_binaries(p: &mut LookaheadProblem, x0: &[f64], nlp: &NlpOptions) -> f64 {
    let bins = p.binaries();
    let nb = bins.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << nb) {
        let fixed: Vec<bool> = (0..nb).map(|i| mask >> i & 1 == 1).collect();
        let mut x = x0.to_vec();
        for (&i, &f) in bins.iter().zip(&fixed) {
            x[i] = if f { 1.0 } else { 0.0 };
        }
        if p.windows().iter().any(|w| w.iter().map(|&i| x[i]).sum::<f64>() > 1.0) {
            continue;
        }
        let r = solve_continuous(p, x0, Some(&fixed), nlp);
        if r.status == NlpStatus::Converged && r.max_violation <= nlp.feas_tol {
            best = best.min(r.objective);
        }
    }
    best
}

fn criterion_branch_and_bound() -> Outcome {
    let started = Instant::now();
    let nlp = NlpOptions::default();
    let mut worst: f64 = 0.0;
    let mut activated = 0;
    for case in 0..25u64 {
        let mut rng = stream(51, &[case]);
        let flex = FlexParams {
            duration: rng.gen_range(2..=3),
            amplitude_mw: rng.gen_range(0.8..1.6),
            direction: if case % 3 == 0 { ModulationDirection::DownThenUp } else { ModulationDirection::UpThenDown },
            activation_cost: rng.gen_range(0.5..4.0),
        };
        let env = weak_environment(rng.gen_range(32_000.0..45_000.0), flex);
        let st = state(&env, 40, 0);
        let mut step = || (rng.gen_range(0.2..0.5), 0.0, rng.gen_range(850.0..1050.0));
        let tree = if case % 2 == 0 {
            let t = 2 + (case as usize / 2) % 3;
            let steps: Vec<_> = (0..t).map(|_| step()).collect();
            ScenarioTree::single(trajectory(&env, &steps))
        } else {
            let first = step();
            let a = [first, step()];
            let b = [first, step()];
            split_tree(&env, &a, &b, 0.5)
        };
        let mut p = LookaheadProblem::assemble(&env, &st, &tree, ProblemOptions::default()).map_err(|e| e.to_string())?;
        let nb = p.binaries().len();
        ensure(nb <= 4, || format!("case {case}: {nb} binaries"))?;
        let x0 = p.start_point();
        let best = enumerate_binaries(&mut p, &x0, &nlp);
        let (lo, hi) = p.bounds();
        let (lo, hi) = (lo.to_vec(), hi.to_vec());
        let ints = IntegerStructure { binaries: p.binaries(), exclusive: p.windows().to_vec() };
        let opts = BnbOptions { node_limit: 1000, ..Default::default() };
        let r = branch_and_bound(&mut p, &x0, &lo, &hi, &ints, &nlp, &opts, &NoClock);
        let gap = (r.objective - best).abs() / best.abs().max(1.0);
        ensure(gap <= 1e-4, || format!("case {case}: branch-and-bound {} enumeration {best}", r.objective))?;
        worst = worst.max(gap);
        if r.x.as_ref().is_some_and(|x| ints.binaries.iter().any(|&i| x[i] > 0.5)) {
            activated += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1} s"))?;
    Ok(format!("25 instances, worst relative gap {worst:.1e}, {activated} with an activation, {secs:.1} s"))
}

// ---------------------------------------------------------------------------
// 6. Single binding constraint and gradients

fn peak_voltage(env: &Environment, load: &[f64], irr: f64, cap: f64) -> f64 {
    let (sol, _) = env.evaluate_period(load, 0.0, irr, &[cap, f64::INFINITY], &[0.0]);
    assert!(sol.converged);
    sol.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn bisect_cap(env: &Environment, load: &[f64], irr: f64, limit: f64, potential: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, potential);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if peak_voltage(env, load, irr, mid) <= limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn lagrangian(p: &mut LookaheadProblem, x: &[f64], w: &[f64]) -> f64 {
    let mut h = vec![0.0; p.n_constraints()];
    let f = p.evaluate(x, &mut h).expect("power flow converges");
    f + h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
}

fn criterion_single_constraint() -> Outcome {
    let mut worst_cap: f64 = 0.0;
    for (k, (surface, irr)) in [(36_000.0, 1000.0), (40_000.0, 1000.0), (40_000.0, 950.0), (45_000.0, 1050.0), (50_000.0, 900.0)]
        .into_iter()
        .enumerate()
    {
        let env = weak_environment(surface, common::default_flex());
        let st = state(&env, 40, 1);
        let tree = ScenarioTree::single(trajectory(&env, &[(0.3, 0.0, irr)]));
        let load = tree.scenarios[0].trajectory.steps[0].load_power.clone();
        let config = PlannerConfig { horizon: 1, ..Default::default() };
        ensure(peak_voltage(&env, &load, irr, f64::INFINITY) > 1.05, || format!("case {k} has no overvoltage"))?;
        let potential = tree.scenarios[0].trajectory.steps[0].potentials[0];
        let oracle = bisect_cap(&env, &load, irr, 1.05 - config.limit_margin, potential);
        let sol = plan(&env, &st, &tree, &config, &mut PlannerMemory::default(), &NoClock).map_err(|e| e.to_string())?;
        ensure(sol.status == SolveStatus::Optimal, || format!("case {k}: {:?}", sol.status))?;
        let gap = rel(sol.action.caps[0], oracle);
        ensure(gap <= 1e-4, || format!("case {k}: cap {} bisection {oracle}", sol.action.caps[0]))?;
        worst_cap = worst_cap.max(gap);
    }

    let env = weak_environment(30_000.0, common::default_flex());
    let a = [(0.3, 0.0, 900.0), (0.2, 0.0, 950.0), (0.4, 0.0, 700.0)];
    let b = [(0.3, 0.0, 900.0), (0.5, 0.0, 500.0), (0.6, 0.0, 300.0)];
    let tree = split_tree(&env, &a, &b, 0.6);
    let mut p = LookaheadProblem::assemble(&env, &state(&env, 40, 0), &tree, ProblemOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = stream(61, &[]);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..p.n_vars()).map(|_| rng.gen_range(0.1..0.9)).collect();
        let w: Vec<f64> = (0..p.n_constraints()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut h = vec![0.0; p.n_constraints()];
        p.evaluate(&x, &mut h).expect("power flow converges");
        let mut g = vec![0.0; p.n_vars()];
        p.gradient(&x, &w, &mut g);
        for i in 0..p.n_vars() {
            let d = 1e-6;
            let mut xp = x.clone();
            xp[i] += d;
            let mut xm = x.clone();
            xm[i] -= d;
            let fd = (lagrangian(&mut p, &xp, &w) - lagrangian(&mut p, &xm, &w)) / (2.0 * d);
            worst_grad = worst_grad.max((fd - g[i]).abs() / fd.abs().max(1.0));
        }
    }
    ensure(worst_grad <= 1e-4, || format!("gradient error {worst_grad:e}"))?;
    Ok(format!("cap vs bisection {worst_cap:.1e}, gradient vs finite differences {worst_grad:.1e}"))
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk protocol

struct Protocol {
    reports: Vec<RunReport>,
    secs: f64,
}

fn run_protocol() -> Result<Protocol, String> {
    let started = Instant::now();
    let inst = generate_instance(&InstanceSpec::desk()).map_err(|e| e.to_string())?;
    let (models, _) = ModelSet::fit_synthetic(30, 1, &EmOptions::default()).map_err(|e| e.to_string())?;
    let env = Environment::new(inst, models);
    let policies = [PolicyKind::PerfectInfo, PolicyKind::Scenarios(3), PolicyKind::Scenarios(1)];
    let out = harness::compare_modes(&env, &policies, "low", &ExperimentConfig::desk()).map_err(|e| e.to_string())?;
    Ok(Protocol { reports: out.into_iter().map(|(r, _, _)| r).collect(), secs: started.elapsed().as_secs_f64() })
}

fn criterion_protocol(p: &Protocol) -> Outcome {
    let [pi, s3, s1] = [&p.reports[0], &p.reports[1], &p.reports[2]];
    for r in &p.reports {
        ensure(r.failed_runs.is_empty(), || format!("{} failed runs {:?}", r.policy, r.failed_runs))?;
        ensure(r.completed_runs == 20 && r.runs.iter().all(|s| s.steps == 96), || format!("{} incomplete", r.policy))?;
        let json = serde_json::to_value(r).map_err(|e| e.to_string())?;
        for key in ["format", "policy", "expected_return", "std_error", "violation_pct", "fallback_pct", "completed_runs", "failed_runs", "runs"] {
            ensure(json.get(key).is_some(), || format!("report lacks `{key}`"))?;
        }
    }
    let table = anm::report::markdown_table(&anm::report::rows(&p.reports, &[None, None, None]));
    ensure(table.lines().count() == 5, || format!("unexpected table:\n{table}"))?;
    let (a, b, c) = (pi.expected_return, s3.expected_return, s1.expected_return);
    ensure(a >= b && b >= c, || format!("returns PI {a:.3} S3 {b:.3} S1 {c:.3}"))?;
    let strict = harness::strictly_best_fraction(pi, &[s3, s1]);
    ensure(strict >= 0.8, || format!("PI strictly best on {strict:.2} of runs"))?;
    ensure(pi.violation_pct == 0.0, || format!("PI violation {}%", pi.violation_pct))?;
    ensure(p.secs < 1800.0, || format!("took {:.0} s", p.secs))?;
    Ok(format!("PI {a:.3} >= S3 {b:.3} >= S1 {c:.3}, PI strictly best {strict:.2}, PI violations 0%, {:.0} s", p.secs))
}

fn criterion_shared_first_stage(p: &Protocol) -> Outcome {
    let mut steps = 0;
    let mut gap: f64 = 0.0;
    for r in &p.reports {
        for s in &r.runs {
            ensure(s.nonshared_steps == 0, || format!("{} run {}: {} steps with a split first stage", r.policy, s.run, s.nonshared_steps))?;
            steps += s.steps;
            gap = gap.max(s.max_injection_gap);
        }
    }
    ensure(gap <= 1e-6, || format!("injection gap {gap:e}"))?;
    Ok(format!("{steps} steps, max injection gap {gap:.1e} MW"))
}

// ---------------------------------------------------------------------------
// 9. Command-line determinism

fn anm(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_anm")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("anm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    anm(&["fit", "--out", &p("models"), "--synthetic-days", "30", "--seed", "3"])?;
    anm(&["gen-instance", "--out", &p("inst"), "--preset", "desk"])?;
    let inst = anm::io::read_instance(&root.join("inst/instance.json")).map_err(|e| e.to_string())?;
    let models = anm::io::read_models(&root.join("models")).map_err(|e| e.to_string())?;
    let env = Environment::new(inst, models);
    let st = harness::initial_state(&env, 4, 0, 48);
    std::fs::write(root.join("state.json"), serde_json::to_vec_pretty(&st).unwrap()).map_err(|e| e.to_string())?;
    let common = ["--horizon", "4", "--trajectories", "20"];
    let sim = ["simulate", "--instance", &p("inst/instance.json"), "--models", &p("models"), "--steps", "6", "--out", &p("sim"), "--start-quarter", "44"];
    anm(&[&sim[..], &common[..]].concat())?;
    let pl = ["plan", "--instance", &p("inst/instance.json"), "--models", &p("models"), "--state", &p("state.json"), "--out", &p("plan")];
    anm(&[&pl[..], &common[..]].concat())?;
    let bench = ["benchmark", "--instance", &p("inst/instance.json"), "--models", &p("models"), "--runs", "2", "--steps", "3", "--out", &p("bench"), "--start-quarter", "44", "--traces"];
    anm(&[&bench[..], &common[..]].concat())?;
    anm(&["report", &p("bench"), "--out", &p("report"), "--no-timing", "--tree", &p("plan/tree.json")])
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timing.json") {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure(fa == fb, || format!("file sets differ: {fa:?} vs {fb:?}"))?;
    for f in &fa {
        let read = |root: &Path| String::from_utf8_lossy(&std::fs::read(root.join(f)).unwrap()).replace(&*root.to_string_lossy(), "<out>");
        ensure(read(a.path()) == read(b.path()), || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files identical across two runs", fa.len()))
}

// ---------------------------------------------------------------------------
// 10. Curtailment post-processing

fn criterion_postprocess() -> Outcome {
    let grid = |hi: u32| (0..=hi).prop_map(|k| k as f64 * 0.25);
    let caps = proptest::collection::vec(proptest::option::weighted(0.7, grid(40)), 1..6);
    let strategy = caps.prop_flat_map(|caps| {
        let n = caps.len();
        (proptest::strategy::Just(caps), proptest::collection::vec(proptest::collection::vec(grid(40), n), 1..5))
    });
    let mut runner = TestRunner::new(Config { cases: 4000, failure_persistence: None, ..Config::default() });
    runner
        .run(&strategy, |(caps, pots)| {
            let caps: Vec<f64> = caps.into_iter().map(|c| c.unwrap_or(f64::INFINITY)).collect();
            let out = postprocess_curtailment(&caps, &pots);
            for g in 0..caps.len() {
                let binding = caps[g].is_finite() && pots.iter().any(|p| p[g] > caps[g]);
                let want = if binding { caps[g] } else { f64::INFINITY };
                if out[g] != want {
                    return Err(TestCaseError::fail(format!("generator {g}: got {} want {want} for {caps:?} {pots:?}", out[g])));
                }
            }
            if postprocess_curtailment(&out, &pots) != out {
                return Err(TestCaseError::fail("not idempotent"));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("4000 random plans".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({why})");
            }
        }
    };
    report(1, "power flow", criterion_power_flow());
    report(2, "barrier", criterion_barrier());
    report(3, "modulation signals", criterion_modulation());
    report(4, "stochastic models", criterion_stochastic());
    report(5, "branch-and-bound vs enumeration", criterion_branch_and_bound());
    report(6, "single binding constraint and gradients", criterion_single_constraint());
    match run_protocol() {
        Ok(p) => {
            report(7, "desk protocol ordering", criterion_protocol(&p));
            report(8, "shared first stage", criterion_shared_first_stage(&p));
        }
        Err(e) => {
            report(7, "desk protocol ordering", Err(e.clone()));
            report(8, "shared first stage", Err(e));
        }
    }
    report(9, "command-line determinism", criterion_cli_determinism());
    report(10, "curtailment post-processing", criterion_postprocess());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
