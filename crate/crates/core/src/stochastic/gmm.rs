use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_log_det, cholesky_solve};
use crate::{quarter_before, QUARTERS_PER_DAY};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-quarter-hour location and scale of a series. Quarters with zero scale
/// (irradiance at night) are deterministic: their residual is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetrendProfile {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DetrendProfile {
    /// Mean 0, scale 1 at every quarter: residuals equal raw values.
    pub fn identity() -> Self {
        DetrendProfile { mean: vec![0.0; QUARTERS_PER_DAY], scale: vec![1.0; QUARTERS_PER_DAY] }
    }

    /// Per-quarter mean and standard deviation of `series`, whose first value
    /// falls in quarter `first_quarter`. Standard deviations below
    /// `1e-9 × (max − min)` are set to 0.
    pub fn estimate(series: &[f64], first_quarter: u8) -> Self {
        let mut sum = [0.0f64; QUARTERS_PER_DAY];
        let mut count = [0usize; QUARTERS_PER_DAY];
        let slot = |i: usize| (first_quarter as usize - 1 + i) % QUARTERS_PER_DAY;
        for (i, &x) in series.iter().enumerate() {
            sum[slot(i)] += x;
            count[slot(i)] += 1;
        }
        let mean: Vec<f64> = (0..QUARTERS_PER_DAY)
            .map(|q| if count[q] > 0 { sum[q] / count[q] as f64 } else { 0.0 })
            .collect();
        let mut ss = [0.0f64; QUARTERS_PER_DAY];
        for (i, &x) in series.iter().enumerate() {
            let d = x - mean[slot(i)];
            ss[slot(i)] += d * d;
        }
        let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = 1e-9 * (hi - lo).max(0.0);
        let scale = (0..QUARTERS_PER_DAY)
            .map(|q| {
                let s = if count[q] > 1 { (ss[q] / count[q] as f64).sqrt() } else { 0.0 };
                if s > floor { s } else { 0.0 }
            })
            .collect();
        DetrendProfile { mean, scale }
    }

    #[inline]
    pub fn to_residual(&self, x: f64, q: u8) -> f64 {
        let k = q as usize - 1;
        if self.scale[k] > 0.0 {
            (x - self.mean[k]) / self.scale[k]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn from_residual(&self, z: f64, q: u8) -> f64 {
        let k = q as usize - 1;
        self.mean[k] + self.scale[k] * z
    }

    pub fn is_deterministic(&self, q: u8) -> bool {
        self.scale[q as usize - 1] == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    /// Window mean, length `N + 1`.
    pub mean: Vec<f64>,
    /// Row-major window covariance, `(N + 1)²` entries.
    pub cov: Vec<f64>,
}

/// Serializable description of a mixture Markov model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub lags: usize,
    pub components: Vec<GmmComponent>,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub detrend: DetrendProfile,
}

/// One term of the mixture for the next residual given a history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Conditioner {
    ln_weight: f64,
    hist_mean: Vec<f64>,
    next_mean: f64,
    hist_chol: Vec<f64>,
    hist_log_det: f64,
    beta: Vec<f64>,
    cond_std: f64,
    joint_chol: Vec<f64>,
}

/// A fitted mixture Markov model with conditioning data precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParams", into = "GmmParams")]
pub struct GmmMarkovModel {
    params: GmmParams,
    cond: Vec<Conditioner>,
}

impl From<GmmMarkovModel> for GmmParams {
    fn from(m: GmmMarkovModel) -> Self {
        m.params
    }
}

impl TryFrom<GmmParams> for GmmMarkovModel {
    type Error = Error;
    fn try_from(p: GmmParams) -> Result<Self> {
        GmmMarkovModel::new(p)
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(format!("mixture model: {msg}"))
}

impl GmmMarkovModel {
    pub fn new(params: GmmParams) -> Result<Self> {
        let n_lags = params.lags;
        if n_lags == 0 || params.components.is_empty() {
            return Err(invalid("need at least one lag and one component".into()));
        }
        let dim = n_lags + 1;
        if !(params.clamp_lo <= params.clamp_hi) {
            return Err(invalid("clamp bounds out of order".into()));
        }
        if params.detrend.mean.len() != QUARTERS_PER_DAY || params.detrend.scale.len() != QUARTERS_PER_DAY {
            return Err(invalid(format!("detrend profile must have {QUARTERS_PER_DAY} entries")));
        }
        if params.detrend.scale.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(invalid("detrend scales must be finite and non-negative".into()));
        }
        let total: f64 = params.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("weights sum to {total}")));
        }
        let mut cond = Vec::with_capacity(params.components.len());
        for (i, c) in params.components.iter().enumerate() {
            if !(c.weight > 0.0) || c.mean.len() != dim || c.cov.len() != dim * dim {
                return Err(invalid(format!("component {i} has a bad shape or weight")));
            }
            for r in 0..dim {
                for s in 0..r {
                    if (c.cov[r * dim + s] - c.cov[s * dim + r]).abs() > 1e-9 * (1.0 + c.cov[r * dim + s].abs()) {
                        return Err(invalid(format!("component {i} covariance is not symmetric")));
                    }
                }
            }
            let joint_chol = cholesky(&c.cov, dim)
                .ok_or_else(|| invalid(format!("component {i} covariance is not positive definite")))?;
            let hist: Vec<f64> = (0..n_lags).flat_map(|r| (0..n_lags).map(move |s| (r, s))).map(|(r, s)| c.cov[r * dim + s]).collect();
            let hist_chol = cholesky(&hist, n_lags).expect("leading block of a positive definite matrix");
            let mut beta: Vec<f64> = (0..n_lags).map(|r| c.cov[r * dim + n_lags]).collect();
            cholesky_solve(&hist_chol, n_lags, &mut beta);
            let cross: f64 = (0..n_lags).map(|r| c.cov[n_lags * dim + r] * beta[r]).sum();
            let var = (c.cov[dim * dim - 1] - cross).max(0.0);
            cond.push(Conditioner {
                ln_weight: c.weight.ln(),
                hist_mean: c.mean[..n_lags].to_vec(),
                next_mean: c.mean[n_lags],
                hist_log_det: cholesky_log_det(&hist_chol, n_lags),
                hist_chol,
                beta,
                cond_std: var.sqrt(),
                joint_chol,
            });
        }
        Ok(GmmMarkovModel { params, cond })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    /// History length `N`.
    pub fn lags(&self) -> usize {
        self.params.lags
    }

    pub fn n_components(&self) -> usize {
        self.params.components.len()
    }

    pub fn clamp_bounds(&self) -> (f64, f64) {
        (self.params.clamp_lo, self.params.clamp_hi)
    }

    pub fn detrend(&self) -> &DetrendProfile {
        &self.params.detrend
    }

    /// Mixture of the next residual given the last `N` residuals (oldest
    /// first). Weights are the prior weights rescaled by each component's
    /// marginal likelihood of the history.
    pub fn conditionalize(&self, history: &[f64]) -> Result<Vec<ConditionalComponent>> {
        let n_lags = self.lags();
        if history.len() != n_lags {
            return Err(Error::InvalidHistory(format!("expected {n_lags} values, got {}", history.len())));
        }
        if history.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidHistory("history contains non-finite values".into()));
        }
        let mut out = Vec::with_capacity(self.cond.len());
        let mut log_w = Vec::with_capacity(self.cond.len());
        let mut dev = vec![0.0; n_lags];
        for c in &self.cond {
            for j in 0..n_lags {
                dev[j] = history[j] - c.hist_mean[j];
            }
            let mean = c.next_mean + c.beta.iter().zip(&dev).map(|(b, d)| b * d).sum::<f64>();
            let mut sol = dev.clone();
            cholesky_solve(&c.hist_chol, n_lags, &mut sol);
            let maha: f64 = sol.iter().zip(&dev).map(|(a, b)| a * b).sum();
            log_w.push(c.ln_weight - 0.5 * (maha + c.hist_log_det + n_lags as f64 * LN_2PI));
            out.push(ConditionalComponent { weight: 0.0, mean, std: c.cond_std });
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_w.iter().map(|l| (l - top).exp()).sum();
        for (o, l) in out.iter_mut().zip(&log_w) {
            o.weight = (l - top).exp() / total;
        }
        Ok(out)
    }

    /// Next residual: picks the first component whose cumulative posterior
    /// weight exceeds `w1` and returns `μ + w2·σ` for it. No clamping.
    pub fn sample_next_residual(&self, history: &[f64], w1: f64, w2: f64) -> Result<f64> {
        let mix = self.conditionalize(history)?;
        let mut cum = 0.0;
        for c in &mix {
            cum += c.weight;
            if w1 < cum {
                return Ok(c.mean + w2 * c.std);
            }
        }
        let last = mix.last().expect("at least one component");
        Ok(last.mean + w2 * last.std)
    }

    /// Residuals of a raw history ending just before quarter `q_next`.
    pub fn residual_history(&self, history: &[f64], q_next: u8) -> Vec<f64> {
        let n = history.len();
        history
            .iter()
            .enumerate()
            .map(|(j, &x)| self.params.detrend.to_residual(x, quarter_before(q_next, n - j)))
            .collect()
    }

    /// Next raw outcome at quarter `q_next`, given the last `N` raw values,
    /// clamped to the model's bounds.
    pub fn sample_next(&self, history: &[f64], q_next: u8, w1: f64, w2: f64) -> Result<f64> {
        if history.len() != self.lags() {
            return Err(Error::InvalidHistory(format!("expected {} values, got {}", self.lags(), history.len())));
        }
        let detrend = &self.params.detrend;
        if detrend.is_deterministic(q_next) {
            return Ok(self.clamp(detrend.from_residual(0.0, q_next)));
        }
        let resid = self.residual_history(history, q_next);
        let z = self.sample_next_residual(&resid, w1, w2)?;
        Ok(self.clamp(detrend.from_residual(z, q_next)))
    }

    /// Mean of the next raw outcome under the conditional mixture, clamped.
    pub fn conditional_mean(&self, history: &[f64], q_next: u8) -> Result<f64> {
        let detrend = &self.params.detrend;
        if detrend.is_deterministic(q_next) {
            return Ok(self.clamp(detrend.from_residual(0.0, q_next)));
        }
        let resid = self.residual_history(history, q_next);
        let mix = self.conditionalize(&resid)?;
        let z: f64 = mix.iter().map(|c| c.weight * c.mean).sum();
        Ok(self.clamp(detrend.from_residual(z, q_next)))
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.params.clamp_lo, self.params.clamp_hi)
    }

    /// Draws a raw window of `N + 1` consecutive values from the joint
    /// mixture, the last one at quarter `q_last`.
    pub fn sample_window<R: Rng + ?Sized>(&self, q_last: u8, rng: &mut R) -> Vec<f64> {
        let dim = self.lags() + 1;
        let u: f64 = rng.gen();
        let mut idx = self.cond.len() - 1;
        let mut cum = 0.0;
        for (i, c) in self.params.components.iter().enumerate() {
            cum += c.weight;
            if u < cum {
                idx = i;
                break;
            }
        }
        let z: Vec<f64> = (0..dim).map(|_| crate::rng::standard_normal(rng)).collect();
        let l = &self.cond[idx].joint_chol;
        let mean = &self.params.components[idx].mean;
        (0..dim)
            .map(|r| {
                let resid = mean[r] + (0..=r).map(|s| l[r * dim + s] * z[s]).sum::<f64>();
                let q = quarter_before(q_last, dim - 1 - r);
                let x = if self.params.detrend.is_deterministic(q) { self.params.detrend.mean[q as usize - 1] } else { self.params.detrend.from_residual(resid, q) };
                self.clamp(x)
            })
            .collect()
    }

    /// Log-density of one residual window under the joint mixture.
    pub fn window_log_density(&self, window: &[f64]) -> f64 {
        let dim = self.lags() + 1;
        let mut terms = Vec::with_capacity(self.cond.len());
        for (c, comp) in self.cond.iter().zip(&self.params.components) {
            let mut d: Vec<f64> = window.iter().zip(&comp.mean).map(|(x, m)| x - m).collect();
            let dev = d.clone();
            cholesky_solve(&c.joint_chol, dim, &mut d);
            let maha: f64 = d.iter().zip(&dev).map(|(a, b)| a * b).sum();
            terms.push(c.ln_weight - 0.5 * (maha + cholesky_log_det(&c.joint_chol, dim) + dim as f64 * LN_2PI));
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }
}
