//! The network operation problem as a Markov decision process.

mod reward;
mod state;
mod transition;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::devices::{validate_devices, Device};
use crate::error::{Error, Result};
use crate::grid::NetworkModel;
use crate::QUARTERS_PER_DAY;

pub use reward::{barrier_chi, barrier_phi, discounted_return, reward, RewardBreakdown, DIVERGED_PENALTY};
pub(crate) use state::inf_as_null_nested;
pub use state::{ActionSpace, ControlAction, ExogenousDraw, ExogenousOutcome, SystemState};
pub use transition::{Environment, TransitionOutcome};

/// First and last peak quarters of the default two-level price profile.
pub const PEAK_QUARTERS: (u8, u8) = (29, 88);

/// Curtailment compensation per MWh for every quarter of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceProfile {
    pub curtailment: Vec<f64>,
}

impl PriceProfile {
    pub fn two_level(peak: f64, off_peak: f64) -> Self {
        let curtailment = (1..=QUARTERS_PER_DAY as u8)
            .map(|q| if (PEAK_QUARTERS.0..=PEAK_QUARTERS.1).contains(&q) { peak } else { off_peak })
            .collect();
        PriceProfile { curtailment }
    }

    #[inline]
    pub fn at(&self, q: u8) -> f64 {
        self.curtailment[q as usize - 1]
    }
}

/// A network, its devices and its tariffs, with device roles indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceData", into = "InstanceData")]
pub struct Instance {
    data: InstanceData,
    generators: Vec<usize>,
    loads: Vec<usize>,
    flexible: Vec<usize>,
    /// For each device: its position in `generators`, `loads` or `flexible`.
    generator_slot: Vec<Option<usize>>,
    load_slot: Vec<Option<usize>>,
    flex_slot: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceData {
    pub network: NetworkModel,
    pub devices: Vec<Device>,
    pub prices: PriceProfile,
    /// Slack bus voltage, per-unit.
    pub slack_voltage: Complex64,
}

impl From<Instance> for InstanceData {
    fn from(i: Instance) -> Self {
        i.data
    }
}

impl TryFrom<InstanceData> for Instance {
    type Error = Error;
    fn try_from(d: InstanceData) -> Result<Self> {
        Instance::new(d)
    }
}

impl Instance {
    pub fn new(data: InstanceData) -> Result<Self> {
        validate_devices(&data.network, &data.devices)?;
        if data.prices.curtailment.len() != QUARTERS_PER_DAY
            || data.prices.curtailment.iter().any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "price profile needs {QUARTERS_PER_DAY} finite non-negative entries"
            )));
        }
        if !(data.slack_voltage.norm() > 0.0) {
            return Err(Error::InvalidNetwork("slack voltage magnitude must be positive".into()));
        }
        let n = data.devices.len();
        let mut generators = Vec::new();
        let mut loads = Vec::new();
        let mut flexible = Vec::new();
        let mut generator_slot = vec![None; n];
        let mut load_slot = vec![None; n];
        let mut flex_slot = vec![None; n];
        for d in &data.devices {
            if d.is_generator() {
                generator_slot[d.id] = Some(generators.len());
                generators.push(d.id);
            } else {
                load_slot[d.id] = Some(loads.len());
                loads.push(d.id);
                if d.flex_params().is_some() {
                    flex_slot[d.id] = Some(flexible.len());
                    flexible.push(d.id);
                }
            }
        }
        Ok(Instance { data, generators, loads, flexible, generator_slot, load_slot, flex_slot })
    }

    pub fn data(&self) -> &InstanceData {
        &self.data
    }

    pub fn network(&self) -> &NetworkModel {
        &self.data.network
    }

    pub fn devices(&self) -> &[Device] {
        &self.data.devices
    }

    pub fn prices(&self) -> &PriceProfile {
        &self.data.prices
    }

    pub fn slack_voltage(&self) -> Complex64 {
        self.data.slack_voltage
    }

    /// Device ids of generators, in generator order.
    pub fn generators(&self) -> &[usize] {
        &self.generators
    }

    /// Device ids of all loads (flexible or not), in load order.
    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    /// Device ids of flexible loads, in flexible order.
    pub fn flexible(&self) -> &[usize] {
        &self.flexible
    }

    pub fn generator_slot(&self, device: usize) -> Option<usize> {
        self.generator_slot[device]
    }

    pub fn load_slot(&self, device: usize) -> Option<usize> {
        self.load_slot[device]
    }

    pub fn flex_slot(&self, device: usize) -> Option<usize> {
        self.flex_slot[device]
    }

    /// Replaces the price profile.
    pub fn with_prices(mut self, prices: PriceProfile) -> Result<Self> {
        self.data.prices = prices;
        Instance::new(self.data)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::devices::{DeviceKind, FlexParams, LoadParams, ModulationDirection, PvParams, WindParams};
    use crate::grid::test_networks::chain;
    use crate::stochastic::{DetrendProfile, GmmComponent, GmmMarkovModel, GmmParams, ModelSet};
    use super::transition::Environment;

    pub fn instance_with(pv_surface: f64, wind_cap: f64, z: Complex64) -> Instance {
        let mut network = chain(3, z, 1.0);
        network.buses[1].attached_devices = vec![0, 1];
        network.buses[2].attached_devices = vec![2, 3];
        let devices = vec![
            Device { id: 0, bus: 1, tan_phi: 0.2, kind: DeviceKind::AggregateLoad { load: LoadParams { scale_mw: 2.0 } } },
            Device {
                id: 1,
                bus: 1,
                tan_phi: 0.2,
                kind: DeviceKind::FlexibleLoad {
                    load: LoadParams { scale_mw: 1.0 },
                    flex: FlexParams {
                        duration: 4,
                        amplitude_mw: 0.5,
                        direction: ModulationDirection::DownThenUp,
                        activation_cost: 5.0,
                    },
                },
            },
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

    pub fn instance() -> Instance {
        instance_with(30_000.0, 3.0, Complex64::new(0.01, 0.04))
    }

    fn model(mean: &[f64], cov: &[f64], lo: f64, hi: f64) -> GmmMarkovModel {
        GmmMarkovModel::new(GmmParams {
            lags: mean.len() - 1,
            components: vec![GmmComponent { weight: 1.0, mean: mean.to_vec(), cov: cov.to_vec() }],
            clamp_lo: lo,
            clamp_hi: hi,
            detrend: DetrendProfile::identity(),
        })
        .unwrap()
    }

    pub fn models() -> ModelSet {
        ModelSet {
            load: model(&[0.6, 0.6, 0.6], &[0.010, 0.008, 0.006, 0.008, 0.010, 0.008, 0.006, 0.008, 0.010], 0.0, 1.5),
            wind: model(&[8.0, 8.0], &[4.0, 3.6, 3.6, 4.0], 0.0, 30.0),
            irradiance: model(&[500.0, 500.0], &[10_000.0, 9_000.0, 9_000.0, 10_000.0], 0.0, 1100.0),
        }
    }

    pub fn environment() -> Environment {
        Environment::new(instance(), models())
    }
}
