//! Exogenous trajectories over a lookahead horizon and their reduction to a
//! weighted scenario tree.

mod tree;
mod ward;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Environment, ExogenousDraw, ExogenousOutcome, Instance, SystemState};
use crate::rng::stream;

pub use tree::{build_tree, Scenario, ScenarioTree};
pub use ward::{ward_cluster, within_sum_of_squares, Clustering, Merge};

/// Exogenous values of one future period in device terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// MW per load, load order.
    pub load_power: Vec<f64>,
    pub wind_speed: f64,
    pub irradiance: f64,
    /// Uncurtailed output per generator, MW, generator order.
    pub potentials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn from_exogenous(inst: &Instance, outcomes: &[ExogenousOutcome]) -> Self {
        let steps = outcomes
            .iter()
            .map(|o| TrajectoryStep {
                load_power: inst
                    .loads()
                    .iter()
                    .zip(&o.load_consumption)
                    .map(|(&d, &x)| inst.devices()[d].load_params().expect("load").power(x))
                    .collect(),
                wind_speed: o.wind_speed,
                irradiance: o.irradiance,
                potentials: inst
                    .generators()
                    .iter()
                    .map(|&g| inst.devices()[g].generator_potential(o.wind_speed, o.irradiance).expect("generator"))
                    .collect(),
            })
            .collect();
        Trajectory { steps }
    }

    /// Clustering features: per step, load powers then generator potentials.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::new();
        for s in &self.steps {
            f.extend_from_slice(&s.load_power);
            f.extend_from_slice(&s.potentials);
        }
        f
    }

    /// Feature values of step `t` only.
    pub fn step_features(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        let s = &self.steps[t];
        s.load_power.iter().chain(&s.potentials).copied()
    }

    /// Field-wise arithmetic mean of equally long trajectories.
    pub fn mean<'a>(members: impl IntoIterator<Item = &'a Trajectory>) -> Trajectory {
        let members: Vec<&Trajectory> = members.into_iter().collect();
        let k = members.len() as f64;
        let first = members[0];
        let steps = (0..first.horizon())
            .map(|t| {
                let avg = |f: &dyn Fn(&TrajectoryStep) -> f64| members.iter().map(|m| f(&m.steps[t])).sum::<f64>() / k;
                TrajectoryStep {
                    load_power: (0..first.steps[t].load_power.len()).map(|i| avg(&|s| s.load_power[i])).collect(),
                    wind_speed: avg(&|s| s.wind_speed),
                    irradiance: avg(&|s| s.irradiance),
                    potentials: (0..first.steps[t].potentials.len()).map(|i| avg(&|s| s.potentials[i])).collect(),
                }
            })
            .collect();
        Trajectory { steps }
    }
}

/// `count` independent rollouts of the exogenous models over `horizon`
/// periods. Rollout `i` draws from its own stream `(seed, i)`.
pub fn sample_trajectories(
    env: &Environment,
    state: &SystemState,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n_loads = env.instance.loads().len();
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let draws: Vec<ExogenousDraw> = (0..horizon).map(|_| ExogenousDraw::sample(&mut rng, n_loads)).collect();
            let outcomes = env.exogenous_rollout(state, &draws)?;
            Ok(Trajectory::from_exogenous(&env.instance, &outcomes))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{environment, instance};
    use crate::stochastic::{DetrendProfile, GmmComponent, GmmMarkovModel, GmmParams};

    #[test]
    fn sampling_is_replayable_with_fixed_length() {
        let env = environment();
        let mut rng = stream(4, &[0]);
        let s = env.initial_state(30, &mut rng);
        let a = sample_trajectories(&env, &s, 5, 7, 11).unwrap();
        assert_eq!(a, sample_trajectories(&env, &s, 5, 7, 11).unwrap());
        assert!(a.iter().all(|t| t.horizon() == 5));
        assert_ne!(a[0], a[1]);
        let f = a[0].features();
        assert_eq!(f.len(), 5 * (2 + 2));
    }

    #[test]
    fn near_deterministic_models_give_the_mean_path() {
        let tiny = |m: f64, lags: usize| {
            let dim = lags + 1;
            let mut cov = alloc::vec![0.0; dim * dim];
            for a in 0..dim {
                cov[a * dim + a] = 1e-12;
            }
            GmmMarkovModel::new(GmmParams {
                lags,
                components: alloc::vec![GmmComponent { weight: 1.0, mean: alloc::vec![m; dim], cov }],
                clamp_lo: 0.0,
                clamp_hi: 2000.0,
                detrend: DetrendProfile::identity(),
            })
            .unwrap()
        };
        let models = crate::stochastic::ModelSet { load: tiny(0.5, 2), wind: tiny(9.0, 1), irradiance: tiny(700.0, 1) };
        let env = Environment::new(instance(), models);
        let mut rng = stream(4, &[0]);
        let s = env.initial_state(30, &mut rng);
        let t = &sample_trajectories(&env, &s, 3, 1, 0).unwrap()[0];
        for step in &t.steps {
            assert!((step.wind_speed - 9.0).abs() < 1e-4);
            assert!((step.irradiance - 700.0).abs() < 1e-4);
            assert!((step.load_power[0] + 1.0).abs() < 1e-4);
            assert!((step.load_power[1] + 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn stage_one_mean_matches_conditional_mean() {
        let env = environment();
        let mut rng = stream(8, &[0]);
        let s = env.initial_state(30, &mut rng);
        let n = 10_000;
        let trajs = sample_trajectories(&env, &s, 1, n, 3).unwrap();
        let xs: Vec<f64> = trajs.iter().map(|t| t.steps[0].wind_speed).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expect = env.models.wind.conditional_mean(&s.wind_history, crate::next_quarter(s.quarter)).unwrap();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect} (se {se})");
    }
}
