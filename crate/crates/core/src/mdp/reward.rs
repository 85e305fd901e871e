#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{ControlAction, Instance};
use crate::grid::{NetworkModel, PowerFlowSolution};

/// Penalty charged when the power flow of a transition does not converge.
pub const DIVERGED_PENALTY: f64 = 1e6;

/// `1000·min(eˣ − 1, 1000)` for `x > 0`, else 0.
#[inline]
pub fn barrier_chi(x: f64) -> f64 {
    if x > 0.0 {
        1e3 * (x.exp() - 1.0).min(1e3)
    } else {
        0.0
    }
}

/// Sum of [`barrier_chi`] over every voltage and current limit excess.
pub fn barrier_phi(net: &NetworkModel, sol: &PowerFlowSolution) -> f64 {
    let mut total = 0.0;
    for (bus, v) in net.buses.iter().zip(&sol.v) {
        let m = v.norm();
        total += barrier_chi(m - bus.v_max) + barrier_chi(bus.v_min - m);
    }
    for (link, &i) in net.links.iter().zip(&sol.branch_currents) {
        total += barrier_chi(i - link.i_max);
    }
    total
}

/// The three non-negative cost terms of one transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub curtailment: f64,
    pub flexibility: f64,
    pub barrier: f64,
}

impl RewardBreakdown {
    pub fn total_cost(&self) -> f64 {
        self.curtailment + self.flexibility + self.barrier
    }

    pub fn reward(&self) -> f64 {
        -self.total_cost()
    }
}

/// Cost terms for applying `action` when the next period has quarter
/// `q_next` and generator potentials `potentials` (MW, generator order).
/// Curtailed energy over a quarter hour is `(P − P̄)/4` MWh.
pub fn reward(inst: &Instance, action: &ControlAction, potentials: &[f64], q_next: u8, barrier: f64) -> RewardBreakdown {
    let price = inst.prices().at(q_next);
    let curtailment: f64 = potentials
        .iter()
        .zip(&action.caps)
        .map(|(&p, &cap)| if cap < p { (p - cap) / 4.0 * price } else { 0.0 })
        .sum();
    let flexibility: f64 = inst
        .flexible()
        .iter()
        .zip(&action.activations)
        .filter(|(_, &a)| a)
        .map(|(&f, _)| inst.devices()[f].flex_params().expect("flexible").activation_cost)
        .sum();
    RewardBreakdown { curtailment, flexibility, barrier }
}

/// `Σ_t γᵗ r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for &r in rewards {
        acc += g * r;
        g *= gamma;
    }
    acc
}
