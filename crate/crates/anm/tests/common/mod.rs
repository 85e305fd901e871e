//! Small hand-built instances shared by the integration tests.
#![allow(dead_code)]

use anm::core::devices::{Device, DeviceKind, FlexParams, LoadParams, ModulationDirection, PvParams, WindParams};
use anm::core::grid::{Bus, BusKind, Link, NetworkModel};
use anm::core::mdp::{Environment, ExogenousOutcome, Instance, InstanceData, PriceProfile, SystemState};
use anm::core::scenario::{Scenario, ScenarioTree, Trajectory};
use anm::core::stochastic::{DetrendProfile, GmmComponent, GmmMarkovModel, GmmParams, ModelSet};
use anm::core::Complex64;

pub fn chain(n: usize, z: Complex64, i_max: f64) -> NetworkModel {
    let buses = (0..n).map(|i| Bus::new(i, if i == 0 { BusKind::Slack } else { BusKind::Pq })).collect();
    let links = (1..n).map(|i| Link::line(i - 1, i, z, i_max)).collect();
    NetworkModel::new(buses, links, 10.0, 20.0).unwrap()
}

/// Slack, a load bus carrying a 2 MW load and a 1 MW flexible load, and a
/// far bus with PV and wind.
pub fn three_bus(pv_surface: f64, wind_cap: f64, z: Complex64, flex: FlexParams) -> Instance {
    let mut network = chain(3, z, 1.0);
    network.buses[1].attached_devices = vec![0, 1];
    network.buses[2].attached_devices = vec![2, 3];
    let devices = vec![
        Device { id: 0, bus: 1, tan_phi: 0.2, kind: DeviceKind::AggregateLoad { load: LoadParams { scale_mw: 2.0 } } },
        Device { id: 1, bus: 1, tan_phi: 0.2, kind: DeviceKind::FlexibleLoad { load: LoadParams { scale_mw: 1.0 }, flex } },
        Device { id: 2, bus: 2, tan_phi: 0.0, kind: DeviceKind::Pv { pv: PvParams { efficiency: 0.2, surface_m2: pv_surface } } },
        Device { id: 3, bus: 2, tan_phi: 0.0, kind: DeviceKind::Wind { wind: WindParams::standard(wind_cap) } },
    ];
    Instance::new(InstanceData {
        network,
        devices,
        prices: PriceProfile::two_level(40.0, 40.0),
        slack_voltage: Complex64::new(1.0, 0.0),
    })
    .unwrap()
}

pub fn default_flex() -> FlexParams {
    FlexParams { duration: 4, amplitude_mw: 0.5, direction: ModulationDirection::DownThenUp, activation_cost: 5.0 }
}

fn single_gaussian(mean: &[f64], cov: &[f64], lo: f64, hi: f64) -> GmmMarkovModel {
    GmmMarkovModel::new(GmmParams {
        lags: mean.len() - 1,
        components: vec![GmmComponent { weight: 1.0, mean: mean.to_vec(), cov: cov.to_vec() }],
        clamp_lo: lo,
        clamp_hi: hi,
        detrend: DetrendProfile::identity(),
    })
    .unwrap()
}

pub fn simple_models() -> ModelSet {
    ModelSet {
        load: single_gaussian(&[0.6, 0.6, 0.6], &[0.010, 0.008, 0.006, 0.008, 0.010, 0.008, 0.006, 0.008, 0.010], 0.0, 1.5),
        wind: single_gaussian(&[8.0, 8.0], &[4.0, 3.6, 3.6, 4.0], 0.0, 30.0),
        irradiance: single_gaussian(&[500.0, 500.0], &[10_000.0, 9_000.0, 9_000.0, 10_000.0], 0.0, 1100.0),
    }
}

/// Weak lines, so PV output lifts the far bus above its voltage limit.
pub fn weak_environment(pv_surface: f64, flex: FlexParams) -> Environment {
    Environment::new(three_bus(pv_surface, 1.0, Complex64::new(0.05, 0.1), flex), simple_models())
}

/// `(load consumption, wind speed, irradiance)` per step.
pub fn trajectory(env: &Environment, steps: &[(f64, f64, f64)]) -> Trajectory {
    let outcomes: Vec<ExogenousOutcome> = steps
        .iter()
        .map(|&(x, w, ir)| ExogenousOutcome { load_consumption: vec![x; env.instance.loads().len()], wind_speed: w, irradiance: ir })
        .collect();
    Trajectory::from_exogenous(&env.instance, &outcomes)
}

pub fn state(env: &Environment, quarter: u8, countdown: usize) -> SystemState {
    let inst = &env.instance;
    SystemState {
        quarter,
        load_power: inst.loads().iter().map(|&d| inst.devices()[d].load_params().unwrap().power(0.3)).collect(),
        irradiance: 800.0,
        wind_speed: 0.0,
        caps: vec![f64::INFINITY; inst.generators().len()],
        countdown: vec![countdown; inst.flexible().len()],
        load_history: vec![vec![0.3, 0.3]; inst.loads().len()],
        irradiance_history: vec![800.0],
        wind_history: vec![0.0],
    }
}

/// Two scenarios sharing step 0 and splitting afterwards.
pub fn split_tree(env: &Environment, a: &[(f64, f64, f64)], b: &[(f64, f64, f64)], pa: f64) -> ScenarioTree {
    assert_eq!(a[0], b[0]);
    let mut groups = vec![vec![0, 0]];
    groups.extend((1..a.len()).map(|_| vec![0, 1]));
    ScenarioTree {
        scenarios: vec![
            Scenario { probability: pa, trajectory: trajectory(env, a) },
            Scenario { probability: 1.0 - pa, trajectory: trajectory(env, b) },
        ],
        groups,
    }
}
