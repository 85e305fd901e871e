use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Link, NetworkModel, PowerFlowSolution};

/// Complex current entering the series branch of `link` from its
/// `from_bus` side: `(|t_mn|² V_m − conj(t_mn) t_nm V_n) · Y_br`.
#[inline]
pub fn branch_current(link: &Link, v: &[Complex64]) -> Complex64 {
    let vm = v[link.from_bus];
    let vn = v[link.to_bus];
    (vm * link.t_from.norm_sqr() - link.t_from.conj() * link.t_to * vn) * link.y_branch
}

#[inline]
pub fn branch_current_magnitude(link: &Link, v: &[Complex64]) -> f64 {
    branch_current(link, v).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ViolationKind {
    OverVoltage(usize),
    UnderVoltage(usize),
    OverCurrent(usize),
}

/// An operational-limit violation with its signed per-unit excess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub margin: f64,
}

/// Buses outside `[v_min, v_max]` and links above `i_max`, in bus order then
/// link order.
pub fn check_limits(net: &NetworkModel, sol: &PowerFlowSolution) -> Vec<Violation> {
    let mut out = Vec::new();
    for (bus, v) in net.buses.iter().zip(&sol.v) {
        let mag = v.norm();
        if mag > bus.v_max {
            out.push(Violation { kind: ViolationKind::OverVoltage(bus.id), margin: mag - bus.v_max });
        } else if mag < bus.v_min {
            out.push(Violation { kind: ViolationKind::UnderVoltage(bus.id), margin: bus.v_min - mag });
        }
    }
    for (k, (link, &i)) in net.links.iter().zip(&sol.branch_currents).enumerate() {
        if i > link.i_max {
            out.push(Violation { kind: ViolationKind::OverCurrent(k), margin: i - link.i_max });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::powerflow::{PowerFlowStatus, PowerFlowSolution};
    use crate::grid::test_networks::chain;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn equal_voltages_carry_no_current() {
        let l = Link::line(0, 1, c(0.01, 0.1), 1.0);
        let v = [c(1.01, -0.02), c(1.01, -0.02)];
        assert_eq!(branch_current_magnitude(&l, &v), 0.0);
    }

    #[test]
    fn rectangular_and_polar_paths_agree() {
        let l = Link::line(0, 1, c(0.01, 0.1), 1.0);
        let v = [c(1.0, 0.0), c(0.95, 0.0)];
        let rect = branch_current_magnitude(&l, &v);
        // Polar path: |ΔV|·|Y| with both factors taken in polar form.
        let y = c(0.01, 0.1).inv();
        let (y_mag, _) = y.to_polar();
        let (dv_mag, _) = (Complex64::from_polar(1.0, 0.0) - Complex64::from_polar(0.95, 0.0)).to_polar();
        assert_abs_diff_eq!(rect, dv_mag * y_mag, epsilon = 1e-12);
    }

    #[test]
    fn transformer_ratio_expansion() {
        let mut l = Link::line(0, 1, c(0.02, 0.08), 1.0);
        l.t_from = c(1.05, 0.0);
        let v = [c(1.0, 0.0), c(0.97, -0.03)];
        // Hand expansion for real t_mn = 1.05, t_nm = 1:
        // I = (1.1025·V_m − 1.05·V_n)·Y_br.
        let y = l.y_branch;
        let expect = ((v[0] * 1.1025 - v[1] * 1.05) * y).norm();
        assert_abs_diff_eq!(branch_current_magnitude(&l, &v), expect, epsilon = 1e-14);
    }

    fn fake_solution(v: Vec<Complex64>, currents: Vec<f64>) -> PowerFlowSolution {
        PowerFlowSolution {
            s_injected: vec![c(0.0, 0.0); v.len()],
            v,
            branch_currents: currents,
            converged: true,
            status: PowerFlowStatus::Converged,
            iterations: 0,
            residual: 0.0,
        }
    }

    #[test]
    fn within_limits_is_empty() {
        let net = chain(3, c(0.01, 0.05), 1.0);
        let sol = fake_solution(vec![c(1.0, 0.0); 3], vec![0.5, 0.2]);
        assert!(check_limits(&net, &sol).is_empty());
    }

    #[test]
    fn single_overvoltage_margin() {
        let net = chain(3, c(0.01, 0.05), 1.0);
        let sol = fake_solution(vec![c(1.0, 0.0), c(1.06, 0.0), c(1.0, 0.0)], vec![0.1, 0.1]);
        let v = check_limits(&net, &sol);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::OverVoltage(1));
        assert_abs_diff_eq!(v[0].margin, 0.01, epsilon = 1e-12);
    }
}
