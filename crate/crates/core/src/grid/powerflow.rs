//! Newton–Raphson power flow in polar coordinates.
//!
//! Every non-slack bus is a PQ bus. The state is `[θ; |V|]` over the
//! non-slack buses in increasing bus order.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by std's inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{branch_current_magnitude, NetworkModel};
use crate::linalg::Lu;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    /// Largest complex mismatch `|S_spec − S_calc|` accepted at a PQ bus.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { tol: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerFlowStatus {
    Converged,
    MaxIterations,
    SingularJacobian,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v: Vec<Complex64>,
    pub s_injected: Vec<Complex64>,
    pub branch_currents: Vec<f64>,
    pub converged: bool,
    pub status: PowerFlowStatus,
    pub iterations: usize,
    pub residual: f64,
}

/// Private scratch state of one solver. Keeps the last iterate so that
/// consecutive solves on nearby injections can warm start, and the
/// factorised Jacobian at the solution for sensitivity analysis.
#[derive(Debug, Clone)]
pub struct PowerFlowWorkspace {
    slack: usize,
    pq: Vec<usize>,
    vm: Vec<f64>,
    va: Vec<f64>,
    current: Vec<Complex64>,
    lu: Option<Lu>,
}

impl PowerFlowWorkspace {
    pub fn new(net: &NetworkModel) -> Self {
        let n = net.n_buses();
        let pq = (0..n).filter(|&i| i != net.slack()).collect();
        PowerFlowWorkspace {
            slack: net.slack(),
            pq,
            vm: vec![1.0; n],
            va: vec![0.0; n],
            current: vec![Complex64::new(0.0, 0.0); n],
            lu: None,
        }
    }

    /// Non-slack buses in state order.
    pub fn pq_buses(&self) -> &[usize] {
        &self.pq
    }

    pub fn set_flat(&mut self) {
        self.vm.iter_mut().for_each(|v| *v = 1.0);
        self.va.iter_mut().for_each(|a| *a = 0.0);
        self.lu = None;
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.vm.iter().zip(&self.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }

    pub fn voltage_magnitudes(&self) -> &[f64] {
        &self.vm
    }

    /// LU factors of the Jacobian at the last converged point, when
    /// [`Self::factor_at_solution`] has been called.
    pub fn jacobian_lu(&self) -> Option<&Lu> {
        self.lu.as_ref()
    }

    fn compute_currents(&mut self, net: &NetworkModel, v: &[Complex64]) {
        let n = v.len();
        for i in 0..n {
            let row = net.y_matrix.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let y = row[k];
                if y.re != 0.0 || y.im != 0.0 {
                    acc += y * v[k];
                }
            }
            self.current[i] = acc;
        }
    }

    /// Mismatch `S_calc − S_spec` stacked as `[ΔP; ΔQ]`; returns the largest
    /// complex mismatch magnitude.
    fn mismatch(&mut self, net: &NetworkModel, p: &[f64], q: &[f64], f: &mut [f64]) -> f64 {
        let v = self.voltages();
        self.compute_currents(net, &v);
        let m = self.pq.len();
        let mut worst = 0.0f64;
        for (i, &b) in self.pq.iter().enumerate() {
            let s = v[b] * self.current[b].conj();
            let dp = s.re - p[b];
            let dq = s.im - q[b];
            f[i] = dp;
            f[m + i] = dq;
            let mag = (dp * dp + dq * dq).sqrt();
            worst = if mag.is_nan() { f64::NAN } else { worst.max(mag) };
        }
        worst
    }

    /// Jacobian of `S_calc` wrt `[θ; |V|]`; requires `self.current` to be up to
    /// date with the present iterate.
    fn jacobian(&self, net: &NetworkModel) -> Vec<f64> {
        let m = self.pq.len();
        let dim = 2 * m;
        let mut jac = vec![0.0; dim * dim];
        let v = self.voltages();
        let vn: Vec<Complex64> = self.va.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
        let j = Complex64::new(0.0, 1.0);
        for (r, &bi) in self.pq.iter().enumerate() {
            let row = net.y_matrix.row(bi);
            for (c, &bk) in self.pq.iter().enumerate() {
                let y = row[bk];
                let diag = r == c;
                if !diag && y.re == 0.0 && y.im == 0.0 {
                    continue;
                }
                let mut d_va = -(y * v[bk]).conj();
                if diag {
                    d_va += self.current[bi].conj();
                }
                let d_va = j * v[bi] * d_va;
                let mut d_vm = v[bi] * (y * vn[bk]).conj();
                if diag {
                    d_vm += self.current[bi].conj() * vn[bk];
                }
                jac[r * dim + c] = d_va.re;
                jac[r * dim + m + c] = d_vm.re;
                jac[(m + r) * dim + c] = d_va.im;
                jac[(m + r) * dim + m + c] = d_vm.im;
            }
        }
        jac
    }

    /// Newton iterations from the present iterate. The slack voltage is
    /// imposed first. Returns `(status, iterations, residual)`.
    pub fn solve(
        &mut self,
        net: &NetworkModel,
        p: &[f64],
        q: &[f64],
        slack_voltage: Complex64,
        opts: &PowerFlowOptions,
    ) -> (PowerFlowStatus, usize, f64) {
        self.lu = None;
        self.vm[self.slack] = slack_voltage.norm();
        self.va[self.slack] = slack_voltage.arg();
        let m = self.pq.len();
        let mut f = vec![0.0; 2 * m];
        let mut iterations = 0;
        loop {
            let residual = self.mismatch(net, p, q, &mut f);
            if !residual.is_finite() {
                return (PowerFlowStatus::NonFinite, iterations, residual);
            }
            if residual <= opts.tol {
                return (PowerFlowStatus::Converged, iterations, residual);
            }
            if iterations >= opts.max_iter {
                return (PowerFlowStatus::MaxIterations, iterations, residual);
            }
            let jac = self.jacobian(net);
            let Some(lu) = Lu::factor(jac, 2 * m) else {
                return (PowerFlowStatus::SingularJacobian, iterations, residual);
            };
            lu.solve(&mut f);
            for (i, &b) in self.pq.iter().enumerate() {
                self.va[b] -= f[i];
                self.vm[b] -= f[m + i];
            }
            iterations += 1;
        }
    }

    /// Factorises the Jacobian at the present (converged) iterate.
    pub fn factor_at_solution(&mut self, net: &NetworkModel) -> bool {
        let v = self.voltages();
        self.compute_currents(net, &v);
        let jac = self.jacobian(net);
        self.lu = Lu::factor(jac, 2 * self.pq.len());
        self.lu.is_some()
    }

    fn solution(
        &mut self,
        net: &NetworkModel,
        status: PowerFlowStatus,
        iterations: usize,
        residual: f64,
    ) -> PowerFlowSolution {
        let v = self.voltages();
        self.compute_currents(net, &v);
        let s_injected = v.iter().zip(&self.current).map(|(vi, ii)| vi * ii.conj()).collect();
        let branch_currents = net.links.iter().map(|l| branch_current_magnitude(l, &v)).collect();
        PowerFlowSolution {
            v,
            s_injected,
            branch_currents,
            converged: status == PowerFlowStatus::Converged,
            status,
            iterations,
            residual,
        }
    }
}

/// Flat-start solve with default options. `p` and `q` are indexed by bus;
/// the slack entries are ignored.
pub fn solve_power_flow(
    net: &NetworkModel,
    p: &[f64],
    q: &[f64],
    slack_voltage: Complex64,
) -> PowerFlowSolution {
    let mut ws = PowerFlowWorkspace::new(net);
    solve_power_flow_with(net, p, q, slack_voltage, &PowerFlowOptions::default(), &mut ws)
}

/// Solve using caller-owned scratch state, warm-starting from whatever
/// iterate `ws` holds (call [`PowerFlowWorkspace::set_flat`] for a flat start).
pub fn solve_power_flow_with(
    net: &NetworkModel,
    p: &[f64],
    q: &[f64],
    slack_voltage: Complex64,
    opts: &PowerFlowOptions,
    ws: &mut PowerFlowWorkspace,
) -> PowerFlowSolution {
    assert_eq!(p.len(), net.n_buses());
    assert_eq!(q.len(), net.n_buses());
    let (status, it, res) = ws.solve(net, p, q, slack_voltage, opts);
    ws.solution(net, status, it, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_networks::chain;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_injection_is_flat_without_iterations() {
        let net = chain(4, c(0.01, 0.05), 1.0);
        let z = vec![0.0; 4];
        let sol = solve_power_flow(&net, &z, &z, c(1.0, 0.0));
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        for v in &sol.v {
            assert_eq!(*v, c(1.0, 0.0));
        }
        assert!(sol.branch_currents.iter().all(|&i| i == 0.0));
    }

    // Gauss–Seidel on the two-bus case: V2 = (conj(S2)/conj(V2) − Y21·V1)/Y22.
    fn gauss_seidel_two_bus(z: Complex64, s: Complex64) -> Complex64 {
        let y = z.inv();
        let (y21, y22) = (-y, y);
        let v1 = c(1.0, 0.0);
        let mut v2 = c(1.0, 0.0);
        for _ in 0..10_000 {
            let next = ((s.conj() / v2.conj()) - y21 * v1) / y22;
            if (next - v2).norm() < 1e-15 {
                return next;
            }
            v2 = next;
        }
        v2
    }

    #[test]
    fn two_bus_matches_gauss_seidel() {
        let z = c(0.01, 0.1);
        let net = chain(2, z, 1.0);
        let sol = solve_power_flow(&net, &[0.0, -0.5], &[0.0, -0.1], c(1.0, 0.0));
        assert!(sol.converged);
        let gs = gauss_seidel_two_bus(z, c(-0.5, -0.1));
        assert_abs_diff_eq!(sol.v[1].re, gs.re, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.v[1].im, gs.im, epsilon = 1e-7);
    }

    #[test]
    fn reports_divergence_on_impossible_load() {
        let net = chain(2, c(0.01, 0.1), 1.0);
        let sol = solve_power_flow(&net, &[0.0, -50.0], &[0.0, -20.0], c(1.0, 0.0));
        assert!(!sol.converged);
        assert_ne!(sol.status, PowerFlowStatus::Converged);
    }

    #[test]
    fn scaling_admittances_and_injections_keeps_magnitudes() {
        let z = c(0.02, 0.08);
        let a = solve_power_flow(&chain(2, z, 1.0), &[0.0, -0.4], &[0.0, -0.1], c(1.0, 0.0));
        let b = solve_power_flow(&chain(2, z / 2.0, 1.0), &[0.0, -0.8], &[0.0, -0.2], c(1.0, 0.0));
        assert_abs_diff_eq!(a.v[1].norm(), b.v[1].norm(), epsilon = 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = chain(4, c(0.02, 0.06), 1.0);
        let p = [0.0, -0.3, 0.4, -0.2];
        let q = [0.0, -0.05, 0.0, -0.1];
        let mut ws = PowerFlowWorkspace::new(&net);
        ws.solve(&net, &p, &q, c(1.0, 0.0), &PowerFlowOptions::default());
        // Perturb the solution so the check is off the manifold as well.
        ws.va[2] += 0.01;
        ws.vm[3] -= 0.02;
        let v = ws.voltages();
        ws.compute_currents(&net, &v);
        let jac = ws.jacobian(&net);
        let m = ws.pq.len();
        let h = 1e-6;
        for col in 0..2 * m {
            let bus = ws.pq[col % m];
            let mut f_plus = vec![0.0; 2 * m];
            let mut f_minus = vec![0.0; 2 * m];
            let mut w = ws.clone();
            if col < m { w.va[bus] += h } else { w.vm[bus] += h }
            w.mismatch(&net, &p, &q, &mut f_plus);
            let mut w = ws.clone();
            if col < m { w.va[bus] -= h } else { w.vm[bus] -= h }
            w.mismatch(&net, &p, &q, &mut f_minus);
            for row in 0..2 * m {
                let fd = (f_plus[row] - f_minus[row]) / (2.0 * h);
                assert_abs_diff_eq!(jac[row * 2 * m + col], fd, epsilon = 1e-6);
            }
        }
    }
}
