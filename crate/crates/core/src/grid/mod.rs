//! Static network representation and AC power flow.
//!
//! All electrical quantities are per-unit on the network's `(base_mva,
//! base_kv)` pair. Injections are positive when they supply the network.

mod admittance;
mod limits;
mod powerflow;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance_matrix, CMatrix};
pub use limits::{branch_current, branch_current_magnitude, check_limits, Violation, ViolationKind};
pub use powerflow::{
    solve_power_flow, solve_power_flow_with, PowerFlowOptions, PowerFlowSolution, PowerFlowStatus,
    PowerFlowWorkspace,
};

/// Voltage band used when an instance omits limits.
pub const DEFAULT_V_MIN: f64 = 0.95;
pub const DEFAULT_V_MAX: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Pq,
    Topological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    pub attached_devices: Vec<usize>,
}

impl Bus {
    pub fn new(id: usize, kind: BusKind) -> Self {
        Bus { id, kind, v_min: DEFAULT_V_MIN, v_max: DEFAULT_V_MAX, attached_devices: Vec::new() }
    }
}

/// π-model of a line, cable or transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Transformation ratio on the `from_bus` side.
    pub t_from: Complex64,
    /// Transformation ratio on the `to_bus` side.
    pub t_to: Complex64,
    pub y_branch: Complex64,
    pub y_shunt_from: Complex64,
    pub y_shunt_to: Complex64,
    /// Current magnitude limit.
    pub i_max: f64,
}

impl Link {
    /// A plain line with unit ratios and no shunts.
    pub fn line(from_bus: usize, to_bus: usize, z: Complex64, i_max: f64) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Link {
            from_bus,
            to_bus,
            t_from: Complex64::new(1.0, 0.0),
            t_to: Complex64::new(1.0, 0.0),
            y_branch: z.inv(),
            y_shunt_from: zero,
            y_shunt_to: zero,
            i_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub links: Vec<Link>,
    pub y_matrix: CMatrix,
    pub base_mva: f64,
    pub base_kv: f64,
    slack: usize,
}

impl NetworkModel {
    pub fn new(buses: Vec<Bus>, links: Vec<Link>, base_mva: f64, base_kv: f64) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("no buses".into()));
        }
        if !(base_mva > 0.0 && base_kv > 0.0) {
            return Err(Error::InvalidNetwork("bases must be positive".into()));
        }
        let mut slack = None;
        for (i, b) in buses.iter().enumerate() {
            if b.id != i {
                return Err(Error::InvalidNetwork(format!("bus at position {i} has id {}", b.id)));
            }
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                return Err(Error::InvalidNetwork(format!("bus {i}: need 0 < v_min < v_max")));
            }
            match b.kind {
                BusKind::Slack if slack.is_some() => {
                    return Err(Error::InvalidNetwork("more than one slack bus".into()))
                }
                BusKind::Slack => slack = Some(i),
                BusKind::Topological if !b.attached_devices.is_empty() => {
                    return Err(Error::InvalidNetwork(format!(
                        "topological bus {i} has attached devices"
                    )))
                }
                _ => {}
            }
        }
        let slack = slack.ok_or_else(|| Error::InvalidNetwork("no slack bus".into()))?;
        for (k, l) in links.iter().enumerate() {
            if l.y_branch == Complex64::new(0.0, 0.0) || !l.y_branch.is_finite() {
                return Err(Error::InvalidNetwork(format!("link {k}: zero branch admittance")));
            }
            if !(l.i_max > 0.0) {
                return Err(Error::InvalidNetwork(format!("link {k}: i_max must be positive")));
            }
        }
        let y_matrix = build_admittance_matrix(&links, n)?;
        let net = NetworkModel { buses, links, y_matrix, base_mva, base_kv, slack };
        if !net.is_connected() {
            return Err(Error::InvalidNetwork("graph is not connected".into()));
        }
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn is_radial(&self) -> bool {
        self.links.len() + 1 == self.buses.len() && self.is_connected()
    }

    fn is_connected(&self) -> bool {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for l in &self.links {
            adj[l.from_bus].push(l.to_bus);
            adj[l.to_bus].push(l.from_bus);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.slack];
        while let Some(b) = stack.pop() {
            if seen.insert(b) {
                stack.extend(adj[b].iter().copied());
            }
        }
        seen.len() == n
    }

    /// Impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Current base in amperes (three-phase, line-to-line base voltage).
    pub fn i_base_amps(&self) -> f64 {
        self.base_mva * 1e3 / (libm_sqrt3() * self.base_kv)
    }
}

#[inline]
fn libm_sqrt3() -> f64 {
    1.732_050_807_568_877_2
}
