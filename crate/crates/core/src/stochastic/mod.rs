//! Gaussian-mixture Markov models of the exogenous processes.
//!
//! A model of order `N` is a mixture over windows `(x_{t−N+1}, …, x_t,
//! x_{t+1})`. The daily cycle is removed before fitting: each series is
//! standardized per quarter-hour by a [`DetrendProfile`] and the mixture
//! operates on the residuals.

mod corpus;
mod em;
mod gmm;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use corpus::make_synthetic_corpus;
pub(crate) use corpus::load_profile;
pub use em::{fit_em, fit_series, EmOptions, FitReport};
pub use gmm::{ConditionalComponent, DetrendProfile, GmmComponent, GmmMarkovModel, GmmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    /// Normalized consumption shared by all loads.
    Load,
    /// Wind speed, m/s.
    Wind,
    /// Solar irradiance, W/m².
    Irradiance,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 3] = [ProcessKind::Load, ProcessKind::Wind, ProcessKind::Irradiance];

    /// Default `(N, n)`: history length and component count.
    pub fn default_order(self) -> (usize, usize) {
        match self {
            ProcessKind::Wind => (1, 1),
            ProcessKind::Irradiance => (1, 10),
            ProcessKind::Load => (2, 10),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Load => "load",
            ProcessKind::Wind => "wind",
            ProcessKind::Irradiance => "irradiance",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// The three fitted models driving an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub load: GmmMarkovModel,
    pub wind: GmmMarkovModel,
    pub irradiance: GmmMarkovModel,
}

impl ModelSet {
    pub fn get(&self, kind: ProcessKind) -> &GmmMarkovModel {
        match kind {
            ProcessKind::Load => &self.load,
            ProcessKind::Wind => &self.wind,
            ProcessKind::Irradiance => &self.irradiance,
        }
    }

    pub fn max_lags(&self) -> usize {
        self.load.lags().max(self.wind.lags()).max(self.irradiance.lags())
    }

    /// Fits all three processes with their default orders to synthetic
    /// corpora of `days` days. Reports are in [`ProcessKind::ALL`] order.
    pub fn fit_synthetic(days: usize, seed: u64, opts: &EmOptions) -> Result<(ModelSet, Vec<FitReport>)> {
        let fit = |kind: ProcessKind| {
            let series = make_synthetic_corpus(kind, days, seed);
            let (lags, n) = kind.default_order();
            fit_series(&series, 1, lags, n, seed, opts)
        };
        let (load, rl) = fit(ProcessKind::Load)?;
        let (wind, rw) = fit(ProcessKind::Wind)?;
        let (irradiance, ri) = fit(ProcessKind::Irradiance)?;
        Ok((ModelSet { load, wind, irradiance }, alloc::vec![rl, rw, ri]))
    }
}
