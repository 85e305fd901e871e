//! Parametric radial test instances: residential nodes carry an aggregate
//! load and a PV installation, production nodes a wind farm, topological
//! nodes only branch the feeder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::devices::{Device, DeviceKind, FlexParams, LoadParams, ModulationDirection, PvParams, WindParams};
use crate::error::{Error, Result};
use crate::grid::{Bus, BusKind, Link, NetworkModel};
use crate::mdp::{Instance, InstanceData, PriceProfile};
use crate::rng::{stream, tags};
use crate::stochastic::load_profile;
use crate::{Complex64, QUARTERS_PER_DAY};

/// Residential node count of the reference 75-bus feeder, against which
/// flexibility levels are scaled.
const REFERENCE_RESIDENTIAL: f64 = 53.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexLevel {
    None,
    Low,
    Medium,
    High,
}

impl FlexLevel {
    pub const LEVELS: [FlexLevel; 3] = [FlexLevel::Low, FlexLevel::Medium, FlexLevel::High];

    /// Flexible loads and Σ max modulation (MW) on the reference feeder.
    pub fn reference(self) -> (usize, f64) {
        match self {
            FlexLevel::None => (0, 0.0),
            FlexLevel::Low => (11, 1.7),
            FlexLevel::Medium => (22, 3.4),
            FlexLevel::High => (33, 5.0),
        }
    }

    /// Count and total modulation scaled to `n_residential` nodes.
    pub fn scaled(self, n_residential: usize) -> (usize, f64) {
        let (count, total) = self.reference();
        let ratio = n_residential as f64 / REFERENCE_RESIDENTIAL;
        let n = ((count as f64 * ratio).round() as usize).min(n_residential);
        let n = if count > 0 { n.max(1) } else { 0 };
        (n, total * ratio)
    }

    pub fn name(self) -> &'static str {
        match self {
            FlexLevel::None => "none",
            FlexLevel::Low => "low",
            FlexLevel::Medium => "medium",
            FlexLevel::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceSpec {
    pub n_buses: usize,
    pub n_residential: usize,
    pub n_production: usize,
    pub n_topological: usize,
    pub flex_level: FlexLevel,
    /// Target aggregate peak consumption of all residential loads, MW.
    pub peak_load_mw: f64,
    /// Total PV surface over all residential nodes, m².
    pub pv_surface_m2: f64,
    pub pv_efficiency: f64,
    /// Capacity of each wind farm, MW.
    pub wind_capacity_mw: f64,
    pub base_mva: f64,
    pub base_kv: f64,
    /// Line length range, km.
    pub line_km: (f64, f64),
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub i_max_amps: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub slack_voltage: f64,
    pub load_tan_phi: f64,
    pub peak_price: f64,
    pub off_peak_price: f64,
    /// Activation cost per MW of modulation amplitude.
    pub flex_cost_per_mw: f64,
    /// Inclusive range of modulation durations, periods.
    pub flex_duration: (usize, usize),
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec::desk()
    }
}

impl InstanceSpec {
    /// 15 buses: 9 residential, 2 production, 3 topological and the slack.
    pub fn desk() -> Self {
        InstanceSpec {
            n_buses: 15,
            n_residential: 9,
            n_production: 2,
            n_topological: 3,
            flex_level: FlexLevel::Low,
            peak_load_mw: 3.4,
            pv_surface_m2: 50_000.0,
            pv_efficiency: 0.2,
            wind_capacity_mw: 1.5,
            base_mva: 10.0,
            base_kv: 20.0,
            line_km: (1.5, 4.5),
            r_ohm_per_km: 0.32,
            x_ohm_per_km: 0.35,
            i_max_amps: 300.0,
            v_min: 0.95,
            v_max: 1.05,
            slack_voltage: 1.03,
            load_tan_phi: 0.2,
            peak_price: 50.0,
            off_peak_price: 30.0,
            flex_cost_per_mw: 10.0,
            flex_duration: (4, 10),
            seed: 1,
        }
    }

    /// 75 buses, 53 residential nodes peaking near 20 MW with 98 610 m² of
    /// PV, 6 MW wind farms.
    pub fn reference_scale() -> Self {
        InstanceSpec {
            n_buses: 75,
            n_residential: 53,
            n_production: 5,
            n_topological: 16,
            peak_load_mw: 20.0,
            pv_surface_m2: 98_610.0,
            wind_capacity_mw: 6.0,
            base_mva: 50.0,
            line_km: (0.5, 2.0),
            i_max_amps: 600.0,
            ..InstanceSpec::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.n_buses < 2 {
            return bad("at least two buses are needed");
        }
        if 1 + self.n_residential + self.n_production + self.n_topological != self.n_buses {
            return Err(Error::InvalidSpec(format!(
                "1 slack + {} residential + {} production + {} topological != {} buses",
                self.n_residential, self.n_production, self.n_topological, self.n_buses
            )));
        }
        if self.flex_level != FlexLevel::None && self.n_residential == 0 {
            return bad("flexibility needs residential nodes");
        }
        if self.line_km.0 <= 0.0 || self.line_km.1 < self.line_km.0 {
            return bad("line length range must be positive and ordered");
        }
        if self.flex_duration.0 < 2 || self.flex_duration.1 < self.flex_duration.0 {
            return bad("modulation durations must be at least 2 and ordered");
        }
        let positive = [
            self.base_mva,
            self.base_kv,
            self.r_ohm_per_km.max(self.x_ohm_per_km),
            self.i_max_amps,
            self.slack_voltage,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return bad("bases, impedances, current limit and slack voltage must be positive");
        }
        let sizes = [self.peak_load_mw, self.pv_surface_m2, self.pv_efficiency, self.wind_capacity_mw, self.flex_cost_per_mw];
        if sizes.iter().any(|v| !(*v >= 0.0)) {
            return bad("device sizes and costs must be non-negative");
        }
        if self.n_production > 0 && !(self.wind_capacity_mw > 0.0) {
            return bad("production nodes need a positive wind capacity");
        }
        if !(self.v_min < self.v_max) {
            return bad("voltage limits must be ordered");
        }
        Ok(())
    }
}

/// Largest value of the normalized consumption profile over a day.
fn profile_peak() -> f64 {
    (0..QUARTERS_PER_DAY).map(|q| load_profile((q as f64 + 0.5) * 24.0 / QUARTERS_PER_DAY as f64)).fold(0.0, f64::max)
}

/// Weights in `[0.5, 1.5]` normalized to sum to one.
fn shares<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Builds a random radial feeder and its devices from `spec`.
pub fn generate_instance(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = stream(spec.seed, &[tags::INSTANCE]);
    let n = spec.n_buses;

    let mut rest = Vec::new();
    rest.extend(core::iter::repeat_n(true, spec.n_residential));
    rest.extend(core::iter::repeat_n(false, spec.n_production));
    rest.shuffle(&mut rng);
    let mut buses: Vec<Bus> = vec![Bus::new(0, BusKind::Slack)];
    let mut residential = Vec::new();
    let mut production = Vec::new();
    for id in 1..n {
        let kind = if id <= spec.n_topological { BusKind::Topological } else { BusKind::Pq };
        if kind == BusKind::Pq {
            if rest[id - 1 - spec.n_topological] {
                residential.push(id);
            } else {
                production.push(id);
            }
        }
        let mut b = Bus::new(id, kind);
        b.v_min = spec.v_min;
        b.v_max = spec.v_max;
        buses.push(b);
    }

    let z_base = spec.base_kv * spec.base_kv / spec.base_mva;
    let i_base = spec.base_mva * 1e6 / (3f64.sqrt() * spec.base_kv * 1e3);
    let mut links = Vec::with_capacity(n - 1);
    for id in 1..n {
        // Topological nodes come first, so they only hang off each other.
        let parent = rng.gen_range(0..id);
        let km = rng.gen_range(spec.line_km.0..=spec.line_km.1);
        let z = Complex64::new(spec.r_ohm_per_km * km, spec.x_ohm_per_km * km) / z_base;
        links.push(Link::line(parent, id, z, spec.i_max_amps / i_base));
    }

    let mut devices = Vec::new();
    let load_shares = shares(residential.len(), &mut rng);
    let pv_shares = shares(residential.len(), &mut rng);
    let peak = profile_peak();
    let (n_flex, total_flex) = spec.flex_level.scaled(residential.len());
    let mut flex_nodes: Vec<usize> = (0..residential.len()).collect();
    flex_nodes.shuffle(&mut rng);
    flex_nodes.truncate(n_flex);
    flex_nodes.sort_unstable();
    let flex_shares = shares(n_flex, &mut rng);
    for (i, &bus) in residential.iter().enumerate() {
        let load = LoadParams { scale_mw: spec.peak_load_mw * load_shares[i] / peak };
        let kind = match flex_nodes.iter().position(|&f| f == i) {
            Some(slot) => {
                let duration = rng.gen_range(spec.flex_duration.0..=spec.flex_duration.1);
                let direction = if slot % 2 == 0 { ModulationDirection::DownThenUp } else { ModulationDirection::UpThenDown };
                let mut flex = FlexParams { duration, amplitude_mw: 1.0, direction, activation_cost: 0.0 };
                // Σ over loads of the largest |ΔP| matches the level's total.
                let unit_peak = flex.signal_table().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                flex.amplitude_mw = total_flex * flex_shares[slot] / unit_peak;
                flex.activation_cost = spec.flex_cost_per_mw * flex.amplitude_mw;
                DeviceKind::FlexibleLoad { load, flex }
            }
            None => DeviceKind::AggregateLoad { load },
        };
        devices.push(Device { id: devices.len(), bus, tan_phi: spec.load_tan_phi, kind });
        buses[bus].attached_devices.push(devices.len() - 1);
        let pv = PvParams { efficiency: spec.pv_efficiency, surface_m2: spec.pv_surface_m2 * pv_shares[i] };
        devices.push(Device { id: devices.len(), bus, tan_phi: 0.0, kind: DeviceKind::Pv { pv } });
        buses[bus].attached_devices.push(devices.len() - 1);
    }
    for &bus in &production {
        devices.push(Device { id: devices.len(), bus, tan_phi: 0.0, kind: DeviceKind::Wind { wind: WindParams::standard(spec.wind_capacity_mw) } });
        buses[bus].attached_devices.push(devices.len() - 1);
    }
    let network = NetworkModel::new(buses, links, spec.base_mva, spec.base_kv)?;
    Instance::new(InstanceData {
        network,
        devices,
        prices: PriceProfile::two_level(spec.peak_price, spec.off_peak_price),
        slack_voltage: Complex64::new(spec.slack_voltage, 0.0),
    })
}
