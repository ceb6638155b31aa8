use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform coarse mesh of step `eps` on `[0, T]` with a dyadic fine mesh of
/// `refine` substeps per coarse cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    eps: f64,
    coarse_cells: usize,
    refine: usize,
}

/// Relative slack accepted when checking that `T/eps` is an integer.
const INTEGRALITY_TOL: f64 = 1e-9;

/// Builds the mesh for horizon `horizon`, coarse step `eps` and `refine`
/// fine substeps per coarse cell.
pub fn make_mesh(horizon: f64, eps: f64, refine: usize) -> Result<TimeMesh> {
    TimeMesh::new(horizon, eps, refine)
}

impl TimeMesh {
    pub fn new(horizon: f64, eps: f64, refine: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidMesh(format!("eps must be positive, got {eps}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidMesh(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if refine == 0 {
            return Err(Error::InvalidMesh("refinement factor m must be >= 1".into()));
        }
        if !refine.is_power_of_two() {
            return Err(Error::InvalidMesh(format!(
                "refinement factor m must be a power of two, got {refine}"
            )));
        }
        let ratio = horizon / eps;
        let cells = ratio.round();
        if cells < 1.0 || (ratio - cells).abs() > INTEGRALITY_TOL * ratio.max(1.0) {
            return Err(Error::InvalidMesh(format!(
                "T/eps not integral (T = {horizon}, eps = {eps})"
            )));
        }
        Ok(Self {
            eps,
            coarse_cells: cells as usize,
            refine,
        })
    }

    /// Same coarse step and refinement with a different number of cells.
    pub fn with_cells(&self, coarse_cells: usize) -> Self {
        Self {
            coarse_cells,
            ..*self
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn refine(&self) -> usize {
        self.refine
    }

    /// Fine step `eps / m`.
    pub fn delta(&self) -> f64 {
        self.eps / self.refine as f64
    }

    pub fn coarse_cells(&self) -> usize {
        self.coarse_cells
    }

    pub fn fine_cells(&self) -> usize {
        self.coarse_cells * self.refine
    }

    pub fn fine_nodes(&self) -> usize {
        self.fine_cells() + 1
    }

    /// `N * eps`.
    pub fn horizon(&self) -> f64 {
        self.coarse_time(self.coarse_cells)
    }

    pub fn coarse_time(&self, k: usize) -> f64 {
        k as f64 * self.eps
    }

    /// Time of fine node `j`. Computed from the enclosing coarse node so that
    /// `fine_time(k * m) == coarse_time(k)` bit for bit.
    pub fn fine_time(&self, j: usize) -> f64 {
        let k = j / self.refine;
        let local = j % self.refine;
        self.coarse_time(k) + local as f64 * self.delta()
    }

    /// Fine index of coarse node `k`.
    pub fn fine_index(&self, k: usize) -> usize {
        k * self.refine
    }

    /// Coarse node index of time `t`, if `t` lies on the coarse mesh.
    pub fn coarse_index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.eps).round();
        if k < 0.0 || k > self.coarse_cells as f64 {
            return None;
        }
        let k = k as usize;
        ((self.coarse_time(k) - t).abs() <= INTEGRALITY_TOL * t.abs().max(self.eps)).then_some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_horizon_counts() {
        let m = make_mesh(1.0, 0.1, 8).unwrap();
        assert_eq!(m.coarse_cells(), 10);
        assert_eq!(m.fine_cells(), 80);
        assert_eq!(m.fine_nodes(), 81);
    }

    #[test]
    fn long_horizon_counts() {
        let m = make_mesh(50.0, 0.05, 64).unwrap();
        assert_eq!(m.coarse_cells(), 1000);
        assert_eq!(m.fine_cells(), 64000);
    }

    #[test]
    fn non_integral_horizon_rejected() {
        let e = make_mesh(1.0, 0.3, 8).unwrap_err();
        assert!(e.to_string().contains("T/eps not integral"), "{e}");
    }

    #[test]
    fn zero_or_non_dyadic_refinement_rejected() {
        assert!(matches!(make_mesh(1.0, 0.1, 0), Err(Error::InvalidMesh(_))));
        assert!(matches!(make_mesh(1.0, 0.1, 6), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn fine_and_coarse_nodes_align_bitwise() {
        let m = make_mesh(50.0, 0.05, 64).unwrap();
        for k in 0..=m.coarse_cells() {
            assert_eq!(m.fine_time(m.fine_index(k)).to_bits(), m.coarse_time(k).to_bits());
        }
    }

    #[test]
    fn coarse_index_lookup() {
        let m = make_mesh(20.0, 0.1, 4).unwrap();
        assert_eq!(m.coarse_index_of(5.0), Some(50));
        assert_eq!(m.coarse_index_of(0.0), Some(0));
        assert_eq!(m.coarse_index_of(0.05), None);
        assert_eq!(m.coarse_index_of(25.0), None);
    }
}
