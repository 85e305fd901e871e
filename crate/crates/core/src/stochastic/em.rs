use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{DetrendProfile, GmmComponent, GmmMarkovModel, GmmParams};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_log_det, cholesky_solve, symmetric_min_eigenvalue};
use crate::rng::{stream, tags};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop when the mean log-likelihood per row improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Covariances with an eigenvalue below this are considered degenerate.
    pub degeneracy: f64,
    /// Diagonal added to degenerate covariances.
    pub jitter: f64,
    /// Lloyd iterations refining the k-means++ seeds.
    pub kmeans_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-7, max_iter: 500, degeneracy: 1e-9, jitter: 1e-6, kmeans_iter: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rows: usize,
    /// Mean log-likelihood per row: at the initial guess, then after each
    /// EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times a degenerate covariance was regularized.
    pub jitter_events: usize,
}

impl FitReport {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihood.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp<R: Rng>(rows: &[f64], dim: usize, k: usize, iters: usize, rng: &mut R) -> Vec<usize> {
    let m = rows.len() / dim;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut centers: Vec<Vec<f64>> = vec![row(rng.gen_range(0..m)).to_vec()];
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centers.push(c);
    }
    let mut assign = vec![0usize; m];
    for it in 0..=iters {
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(row(i), c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            *a = best.1;
        }
        if it == iters {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    assign
}

struct Estimate {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// Weighted means and covariances from a responsibility matrix
/// (`resp[i * k + j]`). Components with too little mass to estimate a
/// covariance fall back to `fallback`.
fn m_step(rows: &[f64], dim: usize, k: usize, resp: &[f64], fallback: (&[f64], &[f64])) -> Estimate {
    let m = rows.len() / dim;
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; dim]; k];
    let mut covs = vec![vec![0.0; dim * dim]; k];
    for i in 0..m {
        let x = &rows[i * dim..(i + 1) * dim];
        for j in 0..k {
            let r = resp[i * k + j];
            weights[j] += r;
            for (mu, xv) in means[j].iter_mut().zip(x) {
                *mu += r * xv;
            }
        }
    }
    for j in 0..k {
        if weights[j] > 1e-12 {
            for mu in means[j].iter_mut() {
                *mu /= weights[j];
            }
        } else {
            means[j] = fallback.0.to_vec();
        }
    }
    let mut d = vec![0.0; dim];
    for i in 0..m {
        let x = &rows[i * dim..(i + 1) * dim];
        for j in 0..k {
            let r = resp[i * k + j];
            if r == 0.0 {
                continue;
            }
            for a in 0..dim {
                d[a] = x[a] - means[j][a];
            }
            let c = &mut covs[j];
            for a in 0..dim {
                let ra = r * d[a];
                for b in 0..=a {
                    c[a * dim + b] += ra * d[b];
                }
            }
        }
    }
    for j in 0..k {
        let nk = weights[j];
        if nk > dim as f64 {
            for a in 0..dim {
                for b in 0..=a {
                    let v = covs[j][a * dim + b] / nk;
                    covs[j][a * dim + b] = v;
                    covs[j][b * dim + a] = v;
                }
            }
        } else {
            covs[j] = fallback.1.to_vec();
        }
    }
    let total = m as f64;
    for w in weights.iter_mut() {
        *w = (*w / total).max(1e-300);
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Estimate { weights, means, covs }
}

/// Regularizes degenerate covariances in place; returns how many needed it.
fn regularize(covs: &mut [Vec<f64>], dim: usize, opts: &EmOptions) -> usize {
    let mut events = 0;
    for c in covs.iter_mut() {
        if !(symmetric_min_eigenvalue(c, dim) >= opts.degeneracy) || cholesky(c, dim).is_none() {
            for a in 0..dim {
                c[a * dim + a] += opts.jitter;
            }
            events += 1;
        }
    }
    events
}

/// Log-likelihood per row, filling `resp` with posterior responsibilities.
fn e_step(rows: &[f64], dim: usize, est: &Estimate, resp: &mut [f64]) -> f64 {
    let k = est.weights.len();
    let m = rows.len() / dim;
    let factors: Vec<(Vec<f64>, f64)> = est
        .covs
        .iter()
        .map(|c| {
            let l = cholesky(c, dim).expect("regularized covariance");
            let ld = cholesky_log_det(&l, dim);
            (l, ld)
        })
        .collect();
    let ln_w: Vec<f64> = est.weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    let mut d = vec![0.0; dim];
    for i in 0..m {
        let x = &rows[i * dim..(i + 1) * dim];
        let mut top = f64::NEG_INFINITY;
        for j in 0..k {
            for a in 0..dim {
                d[a] = x[a] - est.means[j][a];
            }
            let dev = d.clone();
            cholesky_solve(&factors[j].0, dim, &mut d);
            let maha: f64 = d.iter().zip(&dev).map(|(p, q)| p * q).sum();
            let lp = ln_w[j] - 0.5 * (maha + factors[j].1 + dim as f64 * LN_2PI);
            resp[i * k + j] = lp;
            top = top.max(lp);
        }
        let mut s = 0.0;
        for j in 0..k {
            let e = (resp[i * k + j] - top).exp();
            resp[i * k + j] = e;
            s += e;
        }
        for j in 0..k {
            resp[i * k + j] /= s;
        }
        total += top + s.ln();
    }
    total / m as f64
}

/// Maximum-likelihood mixture of `n` full-covariance Gaussians over
/// row-major windows of length `lags + 1`. The returned model has an
/// identity detrend profile and clamps at the data range widened by 10%.
pub fn fit_em(rows: &[f64], lags: usize, n: usize, seed: u64, opts: &EmOptions) -> Result<(GmmMarkovModel, FitReport)> {
    let dim = lags + 1;
    if lags == 0 || n == 0 {
        return Err(Error::InvalidArgument("mixture order needs lags >= 1 and n >= 1".into()));
    }
    if rows.len() % dim != 0 {
        return Err(Error::InvalidArgument("row data is not a whole number of windows".into()));
    }
    let m = rows.len() / dim;
    let required = 10 * n * dim;
    if m < required {
        return Err(Error::InsufficientData { rows: m, required });
    }
    if rows.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("row data contains non-finite values".into()));
    }
    let mut rng = stream(seed, &[tags::EM]);
    let assign = kmeans_pp(rows, dim, n, opts.kmeans_iter, &mut rng);
    let mut resp = vec![0.0; m * n];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * n + a] = 1.0;
    }
    let ones = vec![1.0; m];
    let zero = vec![0.0; dim];
    let global = m_step(rows, dim, 1, &ones, (&zero, &identity(dim)));
    let global_mean = global.means[0].clone();
    let mut fallback = global.covs[0].clone();
    let mut jitter_events = regularize(core::slice::from_mut(&mut fallback), dim, opts);
    let mut est = m_step(rows, dim, n, &resp, (&global_mean, &fallback));
    jitter_events += regularize(&mut est.covs, dim, opts);

    let mut history = vec![e_step(rows, dim, &est, &mut resp)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let mut next = m_step(rows, dim, n, &resp, (&global_mean, &fallback));
        jitter_events += regularize(&mut next.covs, dim, opts);
        est = next;
        let ll = e_step(rows, dim, &est, &mut resp);
        iterations += 1;
        let prev = *history.last().expect("non-empty");
        history.push(ll);
        if ll - prev < opts.tol {
            converged = true;
            break;
        }
    }

    let lo = rows.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo);
    let components = (0..n)
        .map(|j| GmmComponent { weight: est.weights[j], mean: est.means[j].clone(), cov: est.covs[j].clone() })
        .collect();
    let model = GmmMarkovModel::new(GmmParams {
        lags,
        components,
        clamp_lo: lo - pad,
        clamp_hi: hi + pad,
        detrend: DetrendProfile::identity(),
    })?;
    Ok((model, FitReport { rows: m, log_likelihood: history, iterations, converged, jitter_events }))
}

fn identity(dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim * dim];
    for a in 0..dim {
        c[a * dim + a] = 1.0;
    }
    c
}

/// Fits a model to a raw 15-minute series whose first value falls in
/// quarter `first_quarter`: the series is standardized per quarter-hour,
/// windows touching a deterministic quarter are dropped, and the clamp
/// bounds are the raw data range widened by 10%.
pub fn fit_series(
    series: &[f64],
    first_quarter: u8,
    lags: usize,
    n: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<(GmmMarkovModel, FitReport)> {
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    let detrend = DetrendProfile::estimate(series, first_quarter);
    let quarter = |i: usize| ((first_quarter as usize - 1 + i) % crate::QUARTERS_PER_DAY + 1) as u8;
    let mut rows = Vec::new();
    if series.len() > lags {
        for t in (lags - 1)..(series.len() - 1) {
            let idx = (t + 1 - lags)..=(t + 1);
            if idx.clone().any(|i| detrend.is_deterministic(quarter(i))) {
                continue;
            }
            rows.extend(idx.map(|i| detrend.to_residual(series[i], quarter(i))));
        }
    }
    let m = rows.len() / (lags + 1);
    if m < 10 * n * (lags + 1) {
        return Err(Error::InsufficientData { rows: m, required: 10 * n * (lags + 1) });
    }
    let (model, report) = fit_em(&rows, lags, n, seed, opts)?;
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo);
    let mut params = model.params().clone();
    params.detrend = detrend;
    params.clamp_lo = lo - pad;
    params.clamp_hi = hi + pad;
    Ok((GmmMarkovModel::new(params)?, report))
}
