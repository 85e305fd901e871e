use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Instance;
use crate::error::{Error, Result};
use crate::rng::NoisePair;

/// Everything the operator observes at the start of a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Quarter of the day of the current period, `1..=96`.
    pub quarter: u8,
    /// Active power of every load, MW (non-positive), in load order.
    pub load_power: Vec<f64>,
    /// Irradiance, W/m².
    pub irradiance: f64,
    /// Wind speed, m/s.
    pub wind_speed: f64,
    /// Caps in force for the current period, MW, in generator order.
    /// `f64::INFINITY` when uncapped; serialized as `null`.
    #[serde(with = "inf_as_null")]
    pub caps: Vec<f64>,
    /// Remaining active periods of each flexible load.
    pub countdown: Vec<usize>,
    /// Normalized consumption of each load, oldest first, current last.
    pub load_history: Vec<Vec<f64>>,
    pub irradiance_history: Vec<f64>,
    pub wind_history: Vec<f64>,
}

/// Caps for the next period and flexibility activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    /// MW per generator; `f64::INFINITY` (serialized `null`) for no cap.
    #[serde(with = "inf_as_null")]
    pub caps: Vec<f64>,
    /// One flag per flexible load.
    pub activations: Vec<bool>,
}

impl ControlAction {
    /// No caps and no activations.
    pub fn noop(n_generators: usize, n_flexible: usize) -> Self {
        ControlAction { caps: alloc::vec![f64::INFINITY; n_generators], activations: alloc::vec![false; n_flexible] }
    }

    pub fn is_noop(&self) -> bool {
        self.caps.iter().all(|c| c.is_infinite()) && self.activations.iter().all(|a| !a)
    }
}

/// The admissible action set of a state: caps in `[0, ∞]` per generator and
/// a free binary only for idle flexible loads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub n_generators: usize,
    /// `true` when the flexible load may be activated.
    pub free_binaries: Vec<bool>,
}

impl ActionSpace {
    pub fn of(state: &SystemState, n_generators: usize) -> Self {
        ActionSpace { n_generators, free_binaries: state.countdown.iter().map(|&s| s == 0).collect() }
    }

    pub fn n_free_binaries(&self) -> usize {
        self.free_binaries.iter().filter(|&&b| b).count()
    }

    pub fn check(&self, action: &ControlAction) -> Result<()> {
        if action.caps.len() != self.n_generators || action.activations.len() != self.free_binaries.len() {
            return Err(Error::InfeasibleAction("action dimensions do not match the instance".into()));
        }
        if let Some(g) = action.caps.iter().position(|c| !(*c >= 0.0)) {
            return Err(Error::InfeasibleAction(format!("cap of generator {g} is negative or NaN")));
        }
        if let Some(f) = action.activations.iter().zip(&self.free_binaries).position(|(&a, &free)| a && !free) {
            return Err(Error::InfeasibleAction(format!("flexible load {f} is already active")));
        }
        Ok(())
    }
}

/// Random draws for one transition: one pair per load, one for wind and one
/// for irradiance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousDraw {
    pub load: Vec<NoisePair>,
    pub wind: NoisePair,
    pub irradiance: NoisePair,
}

impl ExogenousDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n_loads: usize) -> Self {
        let load = (0..n_loads).map(|_| NoisePair::draw(rng)).collect();
        let wind = NoisePair::draw(rng);
        let irradiance = NoisePair::draw(rng);
        ExogenousDraw { load, wind, irradiance }
    }
}

/// Realized exogenous values of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousOutcome {
    /// Normalized consumption per load.
    pub load_consumption: Vec<f64>,
    pub wind_speed: f64,
    pub irradiance: f64,
}

impl SystemState {
    /// Uncapped generator outputs for the current weather, MW.
    pub fn generator_potentials(&self, inst: &Instance) -> Vec<f64> {
        inst.generators()
            .iter()
            .map(|&g| inst.devices()[g].generator_potential(self.wind_speed, self.irradiance).expect("generator"))
            .collect()
    }

    pub fn check_shape(&self, inst: &Instance) -> Result<()> {
        let ok = self.load_power.len() == inst.loads().len()
            && self.load_history.len() == inst.loads().len()
            && self.caps.len() == inst.generators().len()
            && self.countdown.len() == inst.flexible().len()
            && (1..=crate::QUARTERS_PER_DAY as u8).contains(&self.quarter);
        if !ok {
            return Err(Error::InconsistentProblem("state does not match the instance".into()));
        }
        for (k, &f) in inst.flexible().iter().enumerate() {
            let td = inst.devices()[f].flex_params().expect("flexible").duration;
            if self.countdown[k] > td {
                return Err(Error::InconsistentProblem(format!("countdown of flexible load {k} exceeds its duration")));
            }
        }
        Ok(())
    }
}

pub(crate) mod inf_as_null {
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> core::result::Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|&x| if x.is_finite() { Some(x) } else { None }).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

pub(crate) mod inf_as_null_nested {
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> core::result::Result<S::Ok, S::Error> {
        let opt: Vec<Vec<Option<f64>>> = v.iter().map(|r| r.iter().map(|&x| if x.is_finite() { Some(x) } else { None }).collect()).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<Vec<Vec<f64>>, D::Error> {
        let opt: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|r| r.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()).collect())
    }
}
