use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::reward::{barrier_phi, reward, RewardBreakdown, DIVERGED_PENALTY};
use super::state::{ActionSpace, ControlAction, ExogenousDraw, ExogenousOutcome, SystemState};
use super::Instance;
use crate::devices::{bus_injections, modulation_signal, DeviceInputs};
use crate::error::Result;
use crate::grid::{check_limits, solve_power_flow, PowerFlowSolution, Violation};
use crate::next_quarter;
use crate::stochastic::ModelSet;

/// Result of one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    pub next_state: SystemState,
    pub solution: PowerFlowSolution,
    /// Uncurtailed generator outputs of the new period, MW.
    pub potentials: Vec<f64>,
    /// Modulation offsets applied in the new period, MW, flexible order.
    pub flex_offsets: Vec<f64>,
    pub costs: RewardBreakdown,
    pub reward: f64,
    pub violations: Vec<Violation>,
}

impl TransitionOutcome {
    pub fn diverged(&self) -> bool {
        !self.solution.converged
    }
}

/// An instance together with the stochastic models driving it.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub instance: Instance,
    pub models: ModelSet,
}

impl Environment {
    pub fn new(instance: Instance, models: ModelSet) -> Self {
        Environment { instance, models }
    }

    pub fn action_space(&self, state: &SystemState) -> ActionSpace {
        ActionSpace::of(state, self.instance.generators().len())
    }

    /// Samples the exogenous values of the next period. Depends only on the
    /// quarter and the histories of `state`.
    pub fn advance_exogenous(&self, state: &SystemState, draw: &ExogenousDraw) -> Result<ExogenousOutcome> {
        self.sample_exogenous(state.quarter, &state.load_history, &state.wind_history, &state.irradiance_history, draw)
    }

    fn sample_exogenous(
        &self,
        quarter: u8,
        load_history: &[Vec<f64>],
        wind_history: &[f64],
        irradiance_history: &[f64],
        draw: &ExogenousDraw,
    ) -> Result<ExogenousOutcome> {
        let q = next_quarter(quarter);
        let load_consumption = load_history
            .iter()
            .zip(&draw.load)
            .map(|(h, w)| self.models.load.sample_next(h, q, w.w1, w.w2).map(|x| x.max(0.0)))
            .collect::<Result<Vec<_>>>()?;
        let wind_speed = self.models.wind.sample_next(wind_history, q, draw.wind.w1, draw.wind.w2)?.max(0.0);
        let irradiance =
            self.models.irradiance.sample_next(irradiance_history, q, draw.irradiance.w1, draw.irradiance.w2)?.max(0.0);
        Ok(ExogenousOutcome { load_consumption, wind_speed, irradiance })
    }

    /// Countdowns after applying `activations` in a state with `countdown`.
    pub fn next_countdowns(&self, countdown: &[usize], activations: &[bool]) -> Vec<usize> {
        self.instance
            .flexible()
            .iter()
            .zip(countdown.iter().zip(activations))
            .map(|(&f, (&s, &a))| {
                let td = self.instance.devices()[f].flex_params().expect("flexible").duration;
                s.saturating_sub(1) + if a { td } else { 0 }
            })
            .collect()
    }

    /// Modulation offsets for the given countdowns: a load with `s` periods
    /// left is at step `T_d − s + 1` of its service.
    pub fn flex_offsets(&self, countdown: &[usize]) -> Vec<f64> {
        self.instance
            .flexible()
            .iter()
            .zip(countdown)
            .map(|(&f, &s)| {
                let p = self.instance.devices()[f].flex_params().expect("flexible");
                if s == 0 {
                    0.0
                } else {
                    modulation_signal(p, p.duration + 1 - s)
                }
            })
            .collect()
    }

    /// Solves the power flow of one period from loads, weather, caps and
    /// flexibility offsets. Returns the solution and the generator potentials.
    pub fn evaluate_period(
        &self,
        load_power: &[f64],
        wind_speed: f64,
        irradiance: f64,
        caps: &[f64],
        flex_offsets: &[f64],
    ) -> (PowerFlowSolution, Vec<f64>) {
        let inst = &self.instance;
        let n = inst.devices().len();
        let mut power = vec![0.0; n];
        let mut cap = vec![f64::INFINITY; n];
        let mut offset = vec![0.0; n];
        let mut potentials = Vec::with_capacity(inst.generators().len());
        for (k, &g) in inst.generators().iter().enumerate() {
            let p = inst.devices()[g].generator_potential(wind_speed, irradiance).expect("generator");
            power[g] = p;
            cap[g] = caps[k];
            potentials.push(p);
        }
        for (k, &d) in inst.loads().iter().enumerate() {
            power[d] = load_power[k];
        }
        for (k, &f) in inst.flexible().iter().enumerate() {
            offset[f] = flex_offsets[k];
        }
        let inp = DeviceInputs { power: &power, cap: &cap, flex_offset: &offset };
        let (p, q) = bus_injections(inst.network(), inst.devices(), &inp);
        (solve_power_flow(inst.network(), &p, &q, inst.slack_voltage()), potentials)
    }

    /// Applies `action` given the already-sampled exogenous outcome of the
    /// next period.
    pub fn apply(&self, state: &SystemState, action: &ControlAction, exo: &ExogenousOutcome) -> Result<TransitionOutcome> {
        let inst = &self.instance;
        state.check_shape(inst)?;
        self.action_space(state).check(action)?;
        let q_next = next_quarter(state.quarter);
        let load_power: Vec<f64> = inst
            .loads()
            .iter()
            .zip(&exo.load_consumption)
            .map(|(&d, &x)| inst.devices()[d].load_params().expect("load").power(x))
            .collect();
        let countdown = self.next_countdowns(&state.countdown, &action.activations);
        let flex_offsets = self.flex_offsets(&countdown);
        let (solution, potentials) =
            self.evaluate_period(&load_power, exo.wind_speed, exo.irradiance, &action.caps, &flex_offsets);
        let (barrier, violations) = if solution.converged {
            (barrier_phi(inst.network(), &solution), check_limits(inst.network(), &solution))
        } else {
            (DIVERGED_PENALTY, Vec::new())
        };
        let costs = reward(inst, action, &potentials, q_next, barrier);
        let next_state = SystemState {
            quarter: q_next,
            load_power,
            irradiance: exo.irradiance,
            wind_speed: exo.wind_speed,
            caps: action.caps.clone(),
            countdown,
            load_history: state.load_history.iter().zip(&exo.load_consumption).map(|(h, &x)| shift(h, x)).collect(),
            irradiance_history: shift(&state.irradiance_history, exo.irradiance),
            wind_history: shift(&state.wind_history, exo.wind_speed),
        };
        Ok(TransitionOutcome {
            next_state,
            solution,
            potentials,
            flex_offsets,
            reward: costs.reward(),
            costs,
            violations,
        })
    }

    /// One full transition `s' = f(s, a, w)`.
    pub fn step(&self, state: &SystemState, action: &ControlAction, draw: &ExogenousDraw) -> Result<TransitionOutcome> {
        state.check_shape(&self.instance)?;
        self.action_space(state).check(action)?;
        let exo = self.advance_exogenous(state, draw)?;
        self.apply(state, action, &exo)
    }

    /// Exogenous outcomes of the next `draws.len()` periods.
    pub fn exogenous_rollout(&self, state: &SystemState, draws: &[ExogenousDraw]) -> Result<Vec<ExogenousOutcome>> {
        let mut s = ExoCursor::from_state(state);
        let mut out = Vec::with_capacity(draws.len());
        for d in draws {
            let exo = self.sample_exogenous(s.quarter, &s.load_history, &s.wind_history, &s.irradiance_history, d)?;
            s.push(&exo);
            out.push(exo);
        }
        Ok(out)
    }

    /// A state at quarter `quarter` with idle flexible loads and no caps,
    /// whose histories are windows drawn from the models' joint mixtures.
    pub fn initial_state<R: Rng + ?Sized>(&self, quarter: u8, rng: &mut R) -> SystemState {
        let inst = &self.instance;
        let history = |m: &crate::stochastic::GmmMarkovModel, rng: &mut R| {
            let w = m.sample_window(quarter, rng);
            w[1..].to_vec()
        };
        let load_history: Vec<Vec<f64>> =
            inst.loads().iter().map(|_| history(&self.models.load, rng).into_iter().map(|x| x.max(0.0)).collect()).collect();
        let wind_history = history(&self.models.wind, rng).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
        let irradiance_history = history(&self.models.irradiance, rng).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
        let load_power = inst
            .loads()
            .iter()
            .zip(&load_history)
            .map(|(&d, h)| inst.devices()[d].load_params().expect("load").power(*h.last().expect("lags >= 1")))
            .collect();
        SystemState {
            quarter,
            load_power,
            irradiance: *irradiance_history.last().expect("lags >= 1"),
            wind_speed: *wind_history.last().expect("lags >= 1"),
            caps: vec![f64::INFINITY; inst.generators().len()],
            countdown: vec![0; inst.flexible().len()],
            load_history,
            irradiance_history,
            wind_history,
        }
    }
}

/// Drops the oldest value and appends `x`.
fn shift(h: &[f64], x: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(h.len());
    v.extend_from_slice(&h[1..]);
    v.push(x);
    v
}

/// Exogenous part of a state, advanced along a rollout.
#[derive(Debug, Clone)]
struct ExoCursor {
    quarter: u8,
    load_history: Vec<Vec<f64>>,
    irradiance_history: Vec<f64>,
    wind_history: Vec<f64>,
}

impl ExoCursor {
    fn from_state(s: &SystemState) -> Self {
        ExoCursor {
            quarter: s.quarter,
            load_history: s.load_history.clone(),
            irradiance_history: s.irradiance_history.clone(),
            wind_history: s.wind_history.clone(),
        }
    }

    fn push(&mut self, exo: &ExogenousOutcome) {
        self.quarter = next_quarter(self.quarter);
        for (h, &x) in self.load_history.iter_mut().zip(&exo.load_consumption) {
            *h = shift(h, x);
        }
        self.irradiance_history = shift(&self.irradiance_history, exo.irradiance);
        self.wind_history = shift(&self.wind_history, exo.wind_speed);
    }
}
