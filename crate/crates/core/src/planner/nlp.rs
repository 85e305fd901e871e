//! Augmented-Lagrangian solver for `min f(x)` subject to `h(x) ≤ 0` and box
//! bounds, with a projected L-BFGS inner loop.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// A smooth problem with inequality constraints `h(x) ≤ 0`.
pub trait ConstrainedProblem {
    fn n_vars(&self) -> usize;
    fn n_constraints(&self) -> usize;
    /// Objective at `x`, writing constraint values into `h`. `None` when the
    /// point cannot be evaluated (e.g. the power flow diverges).
    fn evaluate(&mut self, x: &[f64], h: &mut [f64]) -> Option<f64>;
    /// Gradient of `f + Σ wᵢ hᵢ` at the point passed to the last successful
    /// [`Self::evaluate`].
    fn gradient(&mut self, x: &[f64], weights: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlpOptions {
    /// Required projected-gradient norm of the Lagrangian.
    pub kkt_tol: f64,
    /// Required largest constraint value.
    pub feas_tol: f64,
    /// A run is declared infeasible once the penalty exceeds this and the
    /// violation is still above `infeasible_violation`.
    pub max_penalty: f64,
    pub infeasible_violation: f64,
    pub initial_penalty: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub memory: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            kkt_tol: 1e-6,
            feas_tol: 1e-6,
            max_penalty: 1e10,
            infeasible_violation: 1e-4,
            initial_penalty: 10.0,
            max_outer: 40,
            max_inner: 400,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Converged,
    Infeasible,
    /// Iteration limits reached before the tolerances were met.
    IterationLimit,
    /// The starting point could not be evaluated.
    EvaluationFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub status: NlpStatus,
    /// Largest constraint value at `x`.
    pub max_violation: f64,
    /// Projected-gradient norm of the Lagrangian at `x`.
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub evaluations: usize,
}

struct Al<'a, P: ConstrainedProblem> {
    p: &'a mut P,
    lambda: Vec<f64>,
    rho: f64,
    h: Vec<f64>,
    w: Vec<f64>,
    evaluations: usize,
}

impl<P: ConstrainedProblem> Al<'_, P> {
    /// Augmented Lagrangian value; fills `self.h`.
    fn value(&mut self, x: &[f64]) -> Option<f64> {
        self.evaluations += 1;
        let f = self.p.evaluate(x, &mut self.h)?;
        let mut v = f;
        for (h, l) in self.h.iter().zip(&self.lambda) {
            let t = (l + self.rho * h).max(0.0);
            v += (t * t - l * l) / (2.0 * self.rho);
        }
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    /// Gradient at the last evaluated point.
    fn grad(&mut self, x: &[f64], g: &mut [f64]) {
        for ((w, h), l) in self.w.iter_mut().zip(&self.h).zip(&self.lambda) {
            *w = (l + self.rho * h).max(0.0);
        }
        self.p.gradient(x, &self.w, g);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &u))| ((xi - gi).clamp(l, u) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes the current augmented Lagrangian over the box from `x`.
/// Returns the final value, or `None` if `x` itself cannot be evaluated.
fn inner<P: ConstrainedProblem>(al: &mut Al<P>, x: &mut [f64], lo: &[f64], hi: &[f64], tol: f64, opts: &NlpOptions) -> Option<f64> {
    let n = x.len();
    let mut fx = al.value(x)?;
    let mut g = vec![0.0; n];
    al.grad(x, &mut g);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut free = vec![true; n];
    for _ in 0..opts.max_inner {
        if projected_gradient_norm(x, &g, lo, hi) <= tol {
            break;
        }
        for i in 0..n {
            let at_lo = x[i] <= lo[i] && g[i] > 0.0;
            let at_hi = x[i] >= hi[i] && g[i] < 0.0;
            free[i] = !(at_lo || at_hi) && lo[i] < hi[i];
        }
        // Two-loop recursion restricted to the free variables.
        for i in 0..n {
            d[i] = if free[i] { -g[i] } else { 0.0 };
        }
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * (0..n).filter(|&i| free[i]).map(|i| s[i] * d[i]).sum::<f64>();
            for i in 0..n {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let sy: f64 = (0..n).filter(|&i| free[i]).map(|i| s[i] * y[i]).sum();
            let yy: f64 = (0..n).filter(|&i| free[i]).map(|i| y[i] * y[i]).sum();
            if sy > 0.0 && yy > 0.0 {
                let gamma = sy / yy;
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * (0..n).filter(|&i| free[i]).map(|i| y[i] * d[i]).sum::<f64>();
            for i in 0..n {
                if free[i] {
                    d[i] += s[i] * (a - b);
                }
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            pairs.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = -d.iter().map(|v| v * v).sum::<f64>();
            if slope == 0.0 {
                break;
            }
        }
        let mut step = if pairs.is_empty() {
            let dn = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if dn > 0.0 { (1.0f64).min(0.1 / dn).max(1e-12) } else { 1.0 }
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = (x[i] + step * d[i]).clamp(lo[i], hi[i]);
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if let Some(ft) = al.value(&xt) {
                if ft <= fx + 1e-4 * decrease {
                    accepted = Some(ft);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else { break };
        al.grad(&xt, &mut gt);
        let s: Vec<f64> = xt.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let stalled = (fx - ft).abs() <= 1e-15 * (1.0 + fx.abs()) && ss.sqrt() <= 1e-15;
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        if sy > 1e-12 * (ss * yy).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if stalled {
            break;
        }
    }
    // Leave the problem evaluated at x for the caller.
    al.value(x)
}

/// Solves the constrained problem from `x0` (projected onto the box).
pub fn augmented_lagrangian<P: ConstrainedProblem>(
    problem: &mut P,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NlpOptions,
) -> NlpResult {
    let n = problem.n_vars();
    let m = problem.n_constraints();
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &u))| v.clamp(l, u)).collect();
    let mut al = Al { p: problem, lambda: vec![0.0; m], rho: opts.initial_penalty, h: vec![0.0; m], w: vec![0.0; m], evaluations: 0 };
    let mut g = vec![0.0; n];
    let fail = |x: Vec<f64>, evaluations| NlpResult {
        x,
        objective: f64::NAN,
        multipliers: vec![0.0; m],
        status: NlpStatus::EvaluationFailure,
        max_violation: f64::INFINITY,
        kkt_residual: f64::INFINITY,
        outer_iterations: 0,
        evaluations,
    };
    if al.value(&x).is_none() {
        return fail(x, al.evaluations);
    }
    let mut prev_violation = al.h.iter().copied().fold(0.0, f64::max);
    let mut omega = 1e-2f64.max(opts.kkt_tol);
    let mut status = NlpStatus::IterationLimit;
    let mut outer = 0;
    let mut kkt = f64::INFINITY;
    let mut violation = prev_violation;
    while outer < opts.max_outer {
        outer += 1;
        if inner(&mut al, &mut x, lo, hi, omega, opts).is_none() {
            return fail(x, al.evaluations);
        }
        violation = al.h.iter().copied().fold(0.0, f64::max);
        for (l, h) in al.lambda.iter_mut().zip(&al.h) {
            *l = (*l + al.rho * h).max(0.0);
        }
        // Lagrangian gradient with the updated multipliers.
        let lambda = al.lambda.clone();
        al.p.gradient(&x, &lambda, &mut g);
        kkt = projected_gradient_norm(&x, &g, lo, hi);
        let complementarity = al.h.iter().zip(&al.lambda).map(|(h, l)| (h * l).abs()).fold(0.0, f64::max);
        if violation <= opts.feas_tol && kkt <= opts.kkt_tol && complementarity <= opts.kkt_tol.max(opts.feas_tol) {
            status = NlpStatus::Converged;
            break;
        }
        if violation > 0.25 * prev_violation && violation > opts.feas_tol {
            al.rho *= 10.0;
        }
        if al.rho > opts.max_penalty {
            status = if violation > opts.infeasible_violation { NlpStatus::Infeasible } else { NlpStatus::IterationLimit };
            break;
        }
        prev_violation = violation;
        omega = (omega * 0.1).max(opts.kkt_tol);
    }
    let objective = al.p.evaluate(&x, &mut al.h).unwrap_or(f64::NAN);
    NlpResult {
        x,
        objective,
        multipliers: al.lambda,
        status,
        max_violation: violation,
        kkt_residual: kkt,
        outer_iterations: outer,
        evaluations: al.evaluations,
    }
}
