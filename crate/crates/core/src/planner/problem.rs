//! The deterministic-equivalent lookahead program over a scenario tree.
//!
//! Power-flow equalities are eliminated: every (scenario, stage) block is
//! solved by Newton's method and limit constraints are differentiated
//! through the power-flow Jacobian with one adjoint solve per block.
//!
//! Decision variables, all scaled to `[0, 1]`:
//! - a curtailment variable per (stage, nonanticipativity group,
//!   generator) with non-zero potential. For a single-scenario group it is
//!   the injected fraction of that scenario's potential. For a shared group
//!   it is a cap, as a fraction of the group's largest potential, and each
//!   scenario injects a smoothed `min(cap, potential)`;
//! - an activation variable per (stage, group, flexible load) that is not
//!   blocked by a service already running at the start of the horizon.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::nlp::ConstrainedProblem;
use crate::devices::modulation_signal;
use crate::error::{Error, Result};
use crate::grid::{branch_current, PowerFlowOptions, PowerFlowStatus, PowerFlowWorkspace};
use crate::mdp::{Environment, SystemState};
use crate::next_quarter;
use crate::scenario::ScenarioTree;

/// A solve stalled above the planner's tolerance still counts if its
/// mismatch is below this.
const LOOSE_PF_TOL: f64 = 1e-8;

/// Voltage constraints are expressed in units of this many per-unit.
const VOLTAGE_UNIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemOptions {
    pub gamma: f64,
    /// Limits are tightened by this much (per-unit) inside the planner.
    pub limit_margin: f64,
    /// Half-width (MW) of the quadratic blend smoothing `min(cap, P)` for
    /// caps shared by several scenarios.
    pub smoothing_mw: f64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions { gamma: 0.99, limit_margin: 5e-6, smoothing_mw: 2e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variable {
    Curtailment {
        stage: usize,
        group: usize,
        generator: usize,
        scenarios: Vec<usize>,
        /// MW corresponding to the value 1.
        scale_mw: f64,
        shared: bool,
    },
    Activation { stage: usize, group: usize, flexible: usize, scenarios: Vec<usize> },
}

/// Sizes of the program as formulated with explicit caps and per-scenario
/// injections, before singleton groups merge the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemStructure {
    /// One per (stage, nonanticipativity group, generator).
    pub caps: usize,
    /// One per (scenario, stage, generator).
    pub injections: usize,
    /// Activation binaries actually free.
    pub binaries: usize,
    /// Binaries of the first stage; shared by every scenario.
    pub first_stage_binaries: usize,
    /// Variables handed to the solver.
    pub solver_variables: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone)]
struct GenTerm {
    bus: usize,
    tan_phi: f64,
    potential: f64,
    var: Option<usize>,
    shared: bool,
    scale: f64,
}

#[derive(Debug, Clone)]
struct FlexTerm {
    bus: usize,
    tan_phi: f64,
    constant: f64,
    /// `(activation variable, offset in MW per unit activation)`.
    terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct Block {
    /// Probability × discount.
    weight: f64,
    price: f64,
    base_p: Vec<f64>,
    base_q: Vec<f64>,
    gens: Vec<GenTerm>,
    flex: Vec<FlexTerm>,
    ws: PowerFlowWorkspace,
    constraint_offset: usize,
    /// Constant blocks are solved once; their constraint values are kept.
    constant: bool,
    cached: Option<Vec<f64>>,
    factored: bool,
}

/// An assembled lookahead program. Holds one power-flow workspace per
/// (scenario, stage) block so that successive evaluations warm start.
#[derive(Debug, Clone)]
pub struct LookaheadProblem<'a> {
    env: &'a Environment,
    tree: &'a ScenarioTree,
    opts: ProblemOptions,
    vars: Vec<Variable>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    blocks: Vec<Block>,
    windows: Vec<Vec<usize>>,
    window_offset: usize,
    n_constraints: usize,
    /// Expected discounted cost of curtailing everything and activating
    /// every available service; used to normalize the objective.
    cost_scale: f64,
    pq_index: Vec<Option<usize>>,
    flex_cost: Vec<f64>,
    pf_opts: PowerFlowOptions,
    pub evaluations: usize,
    pub power_flows: usize,
}

impl<'a> LookaheadProblem<'a> {
    pub fn assemble(env: &'a Environment, state: &SystemState, tree: &'a ScenarioTree, opts: ProblemOptions) -> Result<Self> {
        let inst = &env.instance;
        state.check_shape(inst)?;
        tree.validate()?;
        let horizon = tree.horizon();
        let n_gen = inst.generators().len();
        let n_flex = inst.flexible().len();
        let n_loads = inst.loads().len();
        for s in &tree.scenarios {
            for st in &s.trajectory.steps {
                if st.potentials.len() != n_gen || st.load_power.len() != n_loads {
                    return Err(Error::InconsistentProblem("scenario does not match the instance".into()));
                }
            }
        }
        if !(opts.gamma > 0.0 && opts.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("discount factor {} outside (0, 1]", opts.gamma)));
        }
        let net = inst.network();
        let base = net.base_mva;
        let devices = inst.devices();
        let w = tree.n_scenarios();

        // Variables, stage by stage.
        let mut vars = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut cap_var = vec![vec![vec![None; n_gen]; horizon]; w];
        let mut act_var = vec![vec![vec![None; n_flex]; horizon]; w];
        for tau in 0..horizon {
            let groups = tree.decision_groups(tau);
            let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (k, &g) in groups.iter().enumerate() {
                by_group.entry(g).or_default().push(k);
            }
            for (&group, members) in &by_group {
                for gen in 0..n_gen {
                    let top = members.iter().map(|&k| tree.scenarios[k].trajectory.steps[tau].potentials[gen]).fold(0.0, f64::max);
                    if top <= 1e-9 {
                        continue;
                    }
                    let shared = members.len() > 1;
                    let scale_mw = if shared { top + opts.smoothing_mw } else { top };
                    let idx = vars.len();
                    vars.push(Variable::Curtailment { stage: tau, group, generator: gen, scenarios: members.clone(), scale_mw, shared });
                    lo.push(0.0);
                    // Shared caps stop at the largest potential, where the
                    // smoothed minimum still has slope.
                    hi.push(if shared { top / scale_mw } else { 1.0 });
                    for &k in members {
                        cap_var[k][tau][gen] = Some(idx);
                    }
                }
                for f in 0..n_flex {
                    if tau < state.countdown[f] {
                        continue;
                    }
                    let idx = vars.len();
                    vars.push(Variable::Activation { stage: tau, group, flexible: f, scenarios: members.clone() });
                    lo.push(0.0);
                    hi.push(1.0);
                    for &k in members {
                        act_var[k][tau][f] = Some(idx);
                    }
                }
            }
        }

        // Blocks.
        let n_bus = net.n_buses();
        let slack = net.slack();
        let per_block = 2 * (n_bus - 1) + net.links.len();
        let mut quarters = Vec::with_capacity(horizon);
        let mut q = state.quarter;
        for _ in 0..horizon {
            q = next_quarter(q);
            quarters.push(q);
        }
        let mut blocks = Vec::with_capacity(w * horizon);
        let mut gamma_pow = 1.0;
        let mut discounts = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            discounts.push(gamma_pow);
            gamma_pow *= opts.gamma;
        }
        let mut cost_scale = 0.0;
        for (k, sc) in tree.scenarios.iter().enumerate() {
            for tau in 0..horizon {
                let step = &sc.trajectory.steps[tau];
                let weight = sc.probability * discounts[tau];
                let price = inst.prices().at(quarters[tau]);
                let mut base_p = vec![0.0; n_bus];
                let mut base_q = vec![0.0; n_bus];
                for (l, &d) in inst.loads().iter().enumerate() {
                    let dev = &devices[d];
                    base_p[dev.bus] += step.load_power[l] / base;
                    base_q[dev.bus] += dev.tan_phi * step.load_power[l] / base;
                }
                let gens: Vec<GenTerm> = inst
                    .generators()
                    .iter()
                    .enumerate()
                    .map(|(gi, &d)| {
                        let var = cap_var[k][tau][gi];
                        let (shared, scale) = match var.map(|v| &vars[v]) {
                            Some(Variable::Curtailment { shared, scale_mw, .. }) => (*shared, *scale_mw),
                            _ => (false, 0.0),
                        };
                        GenTerm { bus: devices[d].bus, tan_phi: devices[d].tan_phi, potential: step.potentials[gi], var, shared, scale }
                    })
                    .collect();
                cost_scale += weight * price * step.potentials.iter().sum::<f64>() / 4.0;
                let flex: Vec<FlexTerm> = inst
                    .flexible()
                    .iter()
                    .enumerate()
                    .map(|(fi, &d)| {
                        let p = devices[d].flex_params().expect("flexible");
                        let s0 = state.countdown[fi];
                        let constant = if s0 >= 2 && tau + 2 <= s0 { modulation_signal(p, p.duration + tau + 2 - s0) } else { 0.0 };
                        let terms = (0..=tau)
                            .filter(|&t0| tau - t0 < p.duration)
                            .filter_map(|t0| act_var[k][t0][fi].map(|v| (v, modulation_signal(p, tau - t0 + 1))))
                            .collect();
                        FlexTerm { bus: devices[d].bus, tan_phi: devices[d].tan_phi, constant, terms }
                    })
                    .collect();
                let constant = gens.iter().all(|g| g.var.is_none()) && flex.iter().all(|f| f.terms.is_empty());
                blocks.push(Block {
                    weight,
                    price,
                    base_p,
                    base_q,
                    gens,
                    flex,
                    ws: PowerFlowWorkspace::new(net),
                    constraint_offset: blocks.len() * per_block,
                    constant,
                    cached: None,
                    factored: false,
                });
            }
        }

        // Activation windows: two services of one load must start more than
        // T_d stages apart.
        let flex_cost: Vec<f64> = inst.flexible().iter().map(|&d| devices[d].flex_params().expect("flexible").activation_cost).collect();
        let mut windows: Vec<Vec<usize>> = Vec::new();
        for k in 0..w {
            for (fi, &d) in inst.flexible().iter().enumerate() {
                let td = devices[d].flex_params().expect("flexible").duration;
                for start in 0..horizon {
                    let mut win: Vec<usize> = (start..horizon.min(start + td + 1)).filter_map(|t| act_var[k][t][fi]).collect();
                    win.sort_unstable();
                    win.dedup();
                    if win.len() > 1 && !windows.contains(&win) {
                        windows.push(win);
                    }
                }
            }
        }
        // Drop windows contained in another one.
        let all = windows.clone();
        windows.retain(|a| !all.iter().any(|b| b.len() > a.len() && a.iter().all(|v| b.contains(v))));
        for v in &vars {
            if let Variable::Activation { stage, flexible, scenarios, .. } = v {
                let p: f64 = scenarios.iter().map(|&k| tree.scenarios[k].probability).sum();
                cost_scale += p * discounts[*stage] * flex_cost[*flexible];
            }
        }

        let mut pq_index = vec![None; n_bus];
        let mut i = 0;
        for b in 0..n_bus {
            if b != slack {
                pq_index[b] = Some(i);
                i += 1;
            }
        }
        let window_offset = blocks.len() * per_block;
        let n_constraints = window_offset + windows.len();
        Ok(LookaheadProblem {
            env,
            tree,
            opts,
            vars,
            lo,
            hi,
            blocks,
            windows,
            window_offset,
            n_constraints,
            cost_scale: if cost_scale > 1e-9 { cost_scale } else { 1.0 },
            pq_index,
            flex_cost,
            // Tight enough that warm-started solves always move with the
            // iterate; the line search compares values differing by ~1e-10.
            pf_opts: PowerFlowOptions { tol: 1e-11, ..PowerFlowOptions::default() },
            evaluations: 0,
            power_flows: 0,
        })
    }

    pub fn structure(&self) -> ProblemStructure {
        let n_gen = self.env.instance.generators().len();
        let h = self.horizon();
        let groups: usize = (0..h)
            .map(|t| {
                let mut g = self.tree.decision_groups(t);
                g.sort_unstable();
                g.dedup();
                g.len()
            })
            .sum();
        let binaries = self.binaries();
        ProblemStructure {
            caps: groups * n_gen,
            injections: self.tree.n_scenarios() * h * n_gen,
            first_stage_binaries: binaries.iter().filter(|&&b| matches!(self.vars[b], Variable::Activation { stage: 0, .. })).count(),
            binaries: binaries.len(),
            solver_variables: self.vars.len(),
            constraints: self.n_constraints,
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.tree
    }

    pub fn horizon(&self) -> usize {
        self.tree.horizon()
    }

    /// Indices of activation variables.
    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&i| matches!(self.vars[i], Variable::Activation { .. })).collect()
    }

    /// Objective values are divided by this to keep them of order one.
    pub fn cost_scale(&self) -> f64 {
        self.cost_scale
    }

    pub fn windows(&self) -> &[Vec<usize>] {
        &self.windows
    }

    /// No curtailment and no activation.
    pub fn noop_point(&self) -> Vec<f64> {
        self.vars.iter().map(|v| if matches!(v, Variable::Curtailment { .. }) { 1.0 } else { 0.0 }).collect()
    }

    /// The no-op point with shared caps at their upper bound, the largest
    /// potential of their group. Solves start here.
    pub fn start_point(&self) -> Vec<f64> {
        self.vars
            .iter()
            .zip(&self.hi)
            .map(|(v, &hi)| match v {
                Variable::Curtailment { .. } => hi,
                Variable::Activation { .. } => 0.0,
            })
            .collect()
    }

    /// Generator injection (MW) and its derivative wrt the variable.
    #[inline]
    fn injection(&self, g: &GenTerm, x: &[f64]) -> (f64, f64) {
        let Some(v) = g.var else { return (g.potential, 0.0) };
        if !g.shared {
            return (x[v] * g.potential, g.potential);
        }
        let eps = self.opts.smoothing_mw;
        let cap = x[v] * g.scale;
        let d = cap - g.potential;
        if d >= eps {
            (g.potential, 0.0)
        } else if d <= -eps {
            (cap, g.scale)
        } else {
            let t = d - eps;
            (g.potential - t * t / (4.0 * eps), -t / (2.0 * eps) * g.scale)
        }
    }

    /// Planned injection of every generator in every block, MW, indexed
    /// `[scenario][stage][generator]`.
    pub fn planned_injections(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let h = self.horizon();
        (0..self.tree.n_scenarios())
            .map(|k| (0..h).map(|t| self.blocks[k * h + t].gens.iter().map(|g| self.injection(g, x).0).collect()).collect())
            .collect()
    }

    /// Flexibility offsets of every block, MW, `[scenario][stage][flexible]`.
    pub fn planned_offsets(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let h = self.horizon();
        (0..self.tree.n_scenarios())
            .map(|k| {
                (0..h)
                    .map(|t| self.blocks[k * h + t].flex.iter().map(|f| f.constant + f.terms.iter().map(|(v, s)| x[*v] * s).sum::<f64>()).collect())
                    .collect()
            })
            .collect()
    }

    /// Expected discounted cost (currency) of a point, unscaled.
    pub fn cost(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            let curtailed: f64 = b.gens.iter().map(|g| g.potential - self.injection(g, x).0).sum();
            total += b.weight * b.price * curtailed / 4.0;
        }
        total + self.activation_cost(x)
    }

    fn activation_cost(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut disc = vec![1.0; self.horizon()];
        for t in 1..disc.len() {
            disc[t] = disc[t - 1] * self.opts.gamma;
        }
        for (i, v) in self.vars.iter().enumerate() {
            if let Variable::Activation { stage, flexible, scenarios, .. } = v {
                let p: f64 = scenarios.iter().map(|&k| self.tree.scenarios[k].probability).sum();
                total += x[i] * p * disc[*stage] * self.flex_cost[*flexible];
            }
        }
        total
    }

    fn block_injections(&self, b: &Block, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let base = self.env.instance.network().base_mva;
        let mut p = b.base_p.clone();
        let mut q = b.base_q.clone();
        for g in &b.gens {
            let (c, _) = self.injection(g, x);
            p[g.bus] += c / base;
            q[g.bus] += g.tan_phi * c / base;
        }
        for f in &b.flex {
            let dp = f.constant + f.terms.iter().map(|(v, s)| x[*v] * s).sum::<f64>();
            p[f.bus] += dp / base;
            q[f.bus] += f.tan_phi * dp / base;
        }
        (p, q)
    }

    /// Solves one block; returns false if its power flow diverges.
    fn solve_block(&mut self, i: usize, x: &[f64]) -> bool {
        let (p, q) = self.block_injections(&self.blocks[i], x);
        let net = self.env.instance.network();
        let slack = self.env.instance.slack_voltage();
        let b = &mut self.blocks[i];
        b.factored = false;
        self.power_flows += 1;
        let accept = |(status, _, residual): (PowerFlowStatus, usize, f64)| status == PowerFlowStatus::Converged || residual <= LOOSE_PF_TOL;
        if accept(b.ws.solve(net, &p, &q, slack, &self.pf_opts)) {
            return true;
        }
        b.ws.set_flat();
        self.power_flows += 1;
        accept(b.ws.solve(net, &p, &q, slack, &self.pf_opts))
    }

    fn block_constraints(&self, b: &Block, h: &mut [f64]) {
        let net = self.env.instance.network();
        let m = self.opts.limit_margin;
        let vm = b.ws.voltage_magnitudes();
        let mut c = 0;
        for bus in &net.buses {
            if bus.id == net.slack() {
                continue;
            }
            h[c] = (vm[bus.id] - (bus.v_max - m)) / VOLTAGE_UNIT;
            h[c + 1] = ((bus.v_min + m) - vm[bus.id]) / VOLTAGE_UNIT;
            c += 2;
        }
        let v = b.ws.voltages();
        for link in &net.links {
            let i = branch_current(link, &v);
            let imax = link.i_max - m;
            h[c] = 0.5 * (i.norm_sqr() / (imax * imax) - 1.0);
            c += 1;
        }
    }

    fn per_block(&self) -> usize {
        let net = self.env.instance.network();
        2 * (net.n_buses() - 1) + net.links.len()
    }

    /// Whether `x` satisfies every constraint within `tol`; `None` if some
    /// power flow diverges.
    pub fn max_violation(&mut self, x: &[f64]) -> Option<f64> {
        let mut h = vec![0.0; self.n_constraints];
        self.evaluate(x, &mut h)?;
        Some(h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Voltage magnitudes of each block at the last evaluated point,
    /// `[scenario][stage][bus]`.
    pub fn voltage_profile(&self) -> Vec<Vec<Vec<f64>>> {
        let h = self.horizon();
        (0..self.tree.n_scenarios()).map(|k| (0..h).map(|t| self.blocks[k * h + t].ws.voltage_magnitudes().to_vec()).collect()).collect()
    }
}

impl ConstrainedProblem for LookaheadProblem<'_> {
    fn n_vars(&self) -> usize {
        self.vars.len()
    }

    fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    fn evaluate(&mut self, x: &[f64], h: &mut [f64]) -> Option<f64> {
        self.evaluations += 1;
        let per = self.per_block();
        for i in 0..self.blocks.len() {
            let off = self.blocks[i].constraint_offset;
            if self.blocks[i].constant {
                if self.blocks[i].cached.is_none() {
                    if !self.solve_block(i, x) {
                        return None;
                    }
                    let mut vals = vec![0.0; per];
                    self.block_constraints(&self.blocks[i], &mut vals);
                    self.blocks[i].cached = Some(vals);
                }
                h[off..off + per].copy_from_slice(self.blocks[i].cached.as_ref().expect("cached"));
                continue;
            }
            if !self.solve_block(i, x) {
                return None;
            }
            self.block_constraints(&self.blocks[i], &mut h[off..off + per]);
        }
        for (j, win) in self.windows.iter().enumerate() {
            h[self.window_offset + j] = win.iter().map(|&v| x[v]).sum::<f64>() - 1.0;
        }
        Some(self.cost(x) / self.cost_scale)
    }

    fn gradient(&mut self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let net = self.env.instance.network();
        let base = net.base_mva;
        let m_pq = net.n_buses() - 1;
        let per = self.per_block();
        let margin = self.opts.limit_margin;
        let scale = self.cost_scale;
        let j = Complex64::new(0.0, 1.0);
        for i in 0..self.blocks.len() {
            // Objective terms.
            let (weight, price) = (self.blocks[i].weight, self.blocks[i].price);
            for g in &self.blocks[i].gens {
                if let Some(v) = g.var {
                    let (_, dc) = self.injection(g, x);
                    grad[v] -= weight * price / 4.0 * dc / scale;
                }
            }
            if self.blocks[i].constant {
                continue;
            }
            let off = self.blocks[i].constraint_offset;
            let w = &weights[off..off + per];
            if w.iter().all(|&v| v == 0.0) {
                continue;
            }
            // Gradient of Σ wᵢ hᵢ wrt the power-flow state [θ; |V|].
            let mut dy = vec![0.0; 2 * m_pq];
            let b = &self.blocks[i];
            let vm = b.ws.voltage_magnitudes();
            let v = b.ws.voltages();
            let mut c = 0;
            for bus in &net.buses {
                if bus.id == net.slack() {
                    continue;
                }
                let r = m_pq + self.pq_index[bus.id].expect("non-slack");
                dy[r] += (w[c] - w[c + 1]) / VOLTAGE_UNIT;
                c += 2;
            }
            for link in &net.links {
                let wl = w[c];
                c += 1;
                if wl == 0.0 {
                    continue;
                }
                let cur = branch_current(link, &v);
                let imax = link.i_max - margin;
                let k = wl / (imax * imax);
                let a = link.t_from.norm_sqr();
                let bb = link.t_from.conj() * link.t_to;
                let y = link.y_branch;
                let ends = [(link.from_bus, y * a), (link.to_bus, -(y * bb))];
                for (bus, coef) in ends {
                    if let Some(p) = self.pq_index[bus] {
                        let d_theta = coef * j * v[bus];
                        let d_mag = coef * v[bus] / vm[bus];
                        dy[p] += k * (cur.conj() * d_theta).re;
                        dy[m_pq + p] += k * (cur.conj() * d_mag).re;
                    }
                }
            }
            let b = &mut self.blocks[i];
            if !b.factored {
                b.ws.factor_at_solution(net);
                b.factored = true;
            }
            let Some(lu) = b.ws.jacobian_lu() else { continue };
            lu.solve_transpose(&mut dy);
            let b = &self.blocks[i];
            let sens = |bus: usize, tan_phi: f64| -> f64 {
                match self.pq_index[bus] {
                    Some(p) => (dy[p] + tan_phi * dy[m_pq + p]) / base,
                    None => 0.0,
                }
            };
            for g in &b.gens {
                if let Some(v) = g.var {
                    let (_, dc) = self.injection(g, x);
                    grad[v] += sens(g.bus, g.tan_phi) * dc;
                }
            }
            for f in &b.flex {
                let s = sens(f.bus, f.tan_phi);
                for &(v, sig) in &f.terms {
                    grad[v] += s * sig;
                }
            }
        }
        let mut disc = vec![1.0; self.horizon()];
        for t in 1..disc.len() {
            disc[t] = disc[t - 1] * self.opts.gamma;
        }
        for (i, v) in self.vars.iter().enumerate() {
            if let Variable::Activation { stage, flexible, scenarios, .. } = v {
                let p: f64 = scenarios.iter().map(|&k| self.tree.scenarios[k].probability).sum();
                grad[i] += p * disc[*stage] * self.flex_cost[*flexible] / scale;
            }
        }
        for (jw, win) in self.windows.iter().enumerate() {
            let wv = weights[self.window_offset + jw];
            if wv != 0.0 {
                for &v in win {
                    grad[v] += wv;
                }
            }
        }
    }
}
