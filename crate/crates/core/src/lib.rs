//! Active network management of medium-voltage distribution networks.
//!
//! The crate models a distribution network as a Markov decision process and
//! provides a receding-horizon stochastic MINLP controller for it:
//!
//! - [`grid`]: π-model network, nodal admittance matrix, Newton power flow and
//!   operational limits.
//! - [`devices`]: loads, flexible loads, wind and PV generators and the bus
//!   injections they produce.
//! - [`stochastic`]: Gaussian-mixture Markov models of load, wind speed and
//!   irradiance (EM fitting, conditioning, sampling, synthetic corpora).
//! - [`mdp`]: state, action, transition, reward and return accounting.
//! - [`scenario`]: trajectory sampling, Ward clustering and scenario trees.
//! - [`planner`]: deterministic-equivalent lookahead program, augmented
//!   Lagrangian continuous solver, branch-and-bound and the policy itself.
//! - [`bench`]: parametric radial test-instance generation.
//!
//! The crate is `no_std` and only needs `alloc`. Wall-clock access is injected
//! through [`planner::Clock`].
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod devices;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mdp;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod stochastic;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Number of 15-minute periods in a day.
pub const QUARTERS_PER_DAY: usize = 96;

/// Quarter of an hour following `q` (both in `1..=96`).
#[inline]
pub fn next_quarter(q: u8) -> u8 {
    (q % QUARTERS_PER_DAY as u8) + 1
}

/// Quarter of an hour `back` periods before `q`.
#[inline]
pub fn quarter_before(q: u8, back: usize) -> u8 {
    let n = QUARTERS_PER_DAY as i64;
    let z = (q as i64 - 1 - back as i64).rem_euclid(n);
    (z + 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_arithmetic_wraps() {
        assert_eq!(next_quarter(96), 1);
        assert_eq!(next_quarter(1), 2);
        assert_eq!(quarter_before(1, 1), 96);
        assert_eq!(quarter_before(3, 2), 1);
        assert_eq!(quarter_before(5, 96 + 1), 4);
    }
}
