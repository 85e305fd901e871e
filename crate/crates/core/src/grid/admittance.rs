use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Link;
use crate::error::{Error, Result};

/// Dense row-major complex square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut Complex64 {
        &mut self.data[r * self.n + c]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }
}

/// Nodal admittance matrix of the π-model links.
///
/// Off-diagonal `(m, n)` is `−conj(t_mn)·t_nm·Y_br`; the diagonal collects
/// `|t_mk|²·(Y_sh + Y_br)` over incident links. A second link on the same
/// bus pair, in either orientation, is rejected.
pub fn build_admittance_matrix(links: &[Link], n_buses: usize) -> Result<CMatrix> {
    let mut y = CMatrix::zeros(n_buses);
    let mut seen = BTreeSet::new();
    for l in links {
        let (m, n) = (l.from_bus, l.to_bus);
        if m >= n_buses || n >= n_buses || m == n {
            return Err(Error::InvalidNetwork(alloc::format!(
                "link ({m}, {n}) has invalid endpoints for {n_buses} buses"
            )));
        }
        if !seen.insert((m.min(n), m.max(n))) {
            return Err(Error::DuplicateLink { from: m, to: n });
        }
        *y.get_mut(m, n) = -l.t_from.conj() * l.t_to * l.y_branch;
        *y.get_mut(n, m) = -l.t_to.conj() * l.t_from * l.y_branch;
        *y.get_mut(m, m) += l.t_from.norm_sqr() * (l.y_shunt_from + l.y_branch);
        *y.get_mut(n, n) += l.t_to.norm_sqr() * (l.y_shunt_to + l.y_branch);
    }
    Ok(y)
}
