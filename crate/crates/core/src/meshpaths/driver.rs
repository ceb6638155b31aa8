use serde::{Deserialize, Serialize};

use super::brownian::BrownianPath;
use super::mesh::TimeMesh;
use crate::error::{Error, Result};

/// The two smooth approximations of Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    /// Piecewise-linear interpolation through the coarse nodes.
    Polygonal,
    /// Time integral of an OU process with relaxation time `eps`.
    #[serde(rename = "ou")]
    OrnsteinUhlenbeck,
}

impl std::fmt::Display for DriverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DriverKind::Polygonal => "polygonal",
            DriverKind::OrnsteinUhlenbeck => "ou",
        })
    }
}

/// A smooth driver `B̄` sampled on the fine mesh.
///
/// `slopes` holds one derivative vector per fine cell; the driver is linear
/// inside every fine cell, so `values[j+1] = values[j] + delta * slopes[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    kind: DriverKind,
    dim: usize,
    eps: f64,
    mesh: TimeMesh,
    values: Vec<f64>,
    slopes: Vec<f64>,
    ou_state: Vec<f64>,
}

impl DriverPath {
    pub fn empty(kind: DriverKind, mesh: TimeMesh, dim: usize) -> Self {
        Self {
            kind,
            dim,
            eps: mesh.eps(),
            mesh,
            values: Vec::new(),
            slopes: Vec::new(),
            ou_state: Vec::new(),
        }
    }

    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smoothing scale.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// `B̄` at fine node `j`.
    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Derivative of `B̄` on fine cell `j`.
    #[inline]
    pub fn slope(&self, j: usize) -> &[f64] {
        &self.slopes[j * self.dim..(j + 1) * self.dim]
    }

    /// OU state `Y` at fine node `j` (OU driver only).
    pub fn ou_state(&self, j: usize) -> Option<&[f64]> {
        (self.kind == DriverKind::OrnsteinUhlenbeck)
            .then(|| &self.ou_state[j * self.dim..(j + 1) * self.dim])
    }
}

/// Piecewise-linear interpolant of `bp` through the coarse nodes.
pub fn polygonal_driver(bp: &BrownianPath, mesh: &TimeMesh) -> Result<DriverPath> {
    let mut d = DriverPath::empty(DriverKind::Polygonal, *mesh, bp.dim());
    polygonal_driver_into(&mut d, bp, mesh)?;
    Ok(d)
}

fn check_path_mesh(bp: &BrownianPath, mesh: &TimeMesh) -> Result<()> {
    if bp.mesh() != mesh {
        return Err(Error::Dimension(
            "Brownian path was sampled on a different mesh".into(),
        ));
    }
    Ok(())
}

pub fn polygonal_driver_into(
    out: &mut DriverPath,
    bp: &BrownianPath,
    mesh: &TimeMesh,
) -> Result<()> {
    check_path_mesh(bp, mesh)?;
    let dim = bp.dim();
    let m = mesh.refine();
    let eps = mesh.eps();
    out.kind = DriverKind::Polygonal;
    out.dim = dim;
    out.eps = eps;
    out.mesh = *mesh;
    out.ou_state.clear();
    out.values.clear();
    out.values.resize(mesh.fine_nodes() * dim, 0.0);
    out.slopes.clear();
    out.slopes.resize(mesh.fine_cells() * dim, 0.0);

    for k in 0..mesh.coarse_cells() {
        let left = bp.coarse_value(k);
        let right = bp.coarse_value(k + 1);
        for local in 0..m {
            let j = k * m + local;
            let u = local as f64 / m as f64;
            for i in 0..dim {
                let inc = right[i] - left[i];
                out.values[j * dim + i] = left[i] + u * inc;
                out.slopes[j * dim + i] = inc / eps;
            }
        }
    }
    let last = mesh.fine_cells();
    let end = bp.value(last);
    out.values[last * dim..].copy_from_slice(end);
    Ok(())
}

/// Integrated OU driver with relaxation time `eps`, driven by the fine
/// increments of `bp`.
pub fn ou_driver(bp: &BrownianPath, mesh: &TimeMesh, eps: f64) -> Result<DriverPath> {
    let mut d = DriverPath::empty(DriverKind::OrnsteinUhlenbeck, *mesh, bp.dim());
    ou_driver_into(&mut d, bp, mesh, eps)?;
    Ok(d)
}

/// `Y` follows the explicit Euler update `Y ← Y(1 − δ/ε) + ΔB/ε`, and `B̄`
/// is its trapezoid integral.
pub fn ou_driver_into(
    out: &mut DriverPath,
    bp: &BrownianPath,
    mesh: &TimeMesh,
    eps: f64,
) -> Result<()> {
    check_path_mesh(bp, mesh)?;
    if (eps - mesh.eps()).abs() > 1e-12 * mesh.eps() {
        return Err(Error::InvalidArgument(format!(
            "OU smoothing scale {eps} differs from mesh eps {}",
            mesh.eps()
        )));
    }
    let delta = mesh.delta();
    let ratio = delta / eps;
    if ratio >= 1.0 {
        return Err(Error::RefinementTooCoarse { ratio });
    }
    let dim = bp.dim();
    let cells = mesh.fine_cells();
    out.kind = DriverKind::OrnsteinUhlenbeck;
    out.dim = dim;
    out.eps = eps;
    out.mesh = *mesh;
    out.values.clear();
    out.values.resize(mesh.fine_nodes() * dim, 0.0);
    out.slopes.clear();
    out.slopes.resize(cells * dim, 0.0);
    out.ou_state.clear();
    out.ou_state.resize(mesh.fine_nodes() * dim, 0.0);

    let decay = 1.0 - ratio;
    for j in 0..cells {
        for i in 0..dim {
            let y = out.ou_state[j * dim + i];
            let y_next = y * decay + bp.increment(j, i) / eps;
            out.ou_state[(j + 1) * dim + i] = y_next;
            let slope = 0.5 * (y + y_next);
            out.slopes[j * dim + i] = slope;
            out.values[(j + 1) * dim + i] = out.values[j * dim + i] + delta * slope;
        }
    }
    Ok(())
}

/// Builds the driver of the given kind with smoothing scale `mesh.eps()`.
pub fn build_driver_into(
    kind: DriverKind,
    out: &mut DriverPath,
    bp: &BrownianPath,
    mesh: &TimeMesh,
) -> Result<()> {
    match kind {
        DriverKind::Polygonal => polygonal_driver_into(out, bp, mesh),
        DriverKind::OrnsteinUhlenbeck => ou_driver_into(out, bp, mesh, mesh.eps()),
    }
}

/// `(2p − 1)!! = (2p)! / (p! 2^p)`.
fn double_factorial_odd(p: u32) -> f64 {
    (1..=p).map(|k| (2 * k - 1) as f64).product()
}

/// Closed-form `E[(B_t − B̄_t)^{2p}]` for a scalar coordinate.
///
/// Polygonal: `(2p−1)!! · eps^p · (u(1−u))^p` with `u` the position of `t`
/// inside its coarse cell. OU: `(2p−1)!!/2^p · eps^p · (1 − e^{−2t/eps})^p`.
pub fn driver_gap_moments(kind: DriverKind, eps: f64, t: f64, p: u32) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidArgument("moment order p must be >= 1".into()));
    }
    if !(eps > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0 and t >= 0, got eps = {eps}, t = {t}"
        )));
    }
    let pi = p as i32;
    let df = double_factorial_odd(p);
    Ok(match kind {
        DriverKind::Polygonal => {
            let cell = (t / eps).floor();
            let mut u = t / eps - cell;
            // snap rounding noise at mesh nodes
            if u < 1e-12 || u > 1.0 - 1e-12 {
                u = 0.0;
            }
            df * eps.powi(pi) * (u * (1.0 - u)).powi(pi)
        }
        DriverKind::OrnsteinUhlenbeck => {
            let s = -(-2.0 * t / eps).exp_m1();
            df / 2f64.powi(pi) * eps.powi(pi) * s.powi(pi)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshpaths::{make_mesh, sample_brownian};

    #[test]
    fn polygonal_interpolates_coarse_nodes() {
        let mesh = make_mesh(1.0, 0.1, 8).unwrap();
        let bp = sample_brownian(&mesh, 2, 3, 1);
        let d = polygonal_driver(&bp, &mesh).unwrap();
        for k in 0..=mesh.coarse_cells() {
            let j = mesh.fine_index(k);
            assert_eq!(d.value(j), bp.value(j));
        }
    }

    #[test]
    fn polygonal_midpoint_and_slopes() {
        let mesh = make_mesh(1.0, 0.1, 8).unwrap();
        let bp = sample_brownian(&mesh, 1, 3, 1);
        let d = polygonal_driver(&bp, &mesh).unwrap();
        for k in 0..mesh.coarse_cells() {
            let (l, r) = (bp.coarse_value(k)[0], bp.coarse_value(k + 1)[0]);
            let mid = d.value(k * 8 + 4)[0];
            assert!((mid - 0.5 * (l + r)).abs() <= 1e-15 * (1.0 + l.abs() + r.abs()));
            for local in 0..8 {
                assert_eq!(d.slope(k * 8 + local)[0], (r - l) / 0.1);
            }
        }
    }

    #[test]
    fn ou_starts_at_zero_and_is_consistent() {
        let mesh = make_mesh(1.0, 0.1, 64).unwrap();
        let bp = sample_brownian(&mesh, 1, 0, 0);
        let d = ou_driver(&bp, &mesh, 0.1).unwrap();
        assert_eq!(d.value(0), &[0.0]);
        assert_eq!(d.ou_state(0).unwrap(), &[0.0]);
        let delta = mesh.delta();
        for j in 0..mesh.fine_cells() {
            let y0 = d.ou_state(j).unwrap()[0];
            let y1 = d.ou_state(j + 1).unwrap()[0];
            assert!((d.slope(j)[0] - 0.5 * (y0 + y1)).abs() < 1e-12);
            let lhs = d.value(j + 1)[0] - d.value(j)[0];
            assert!((lhs - delta * d.slope(j)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn ou_rejects_unrefined_mesh() {
        let mesh = make_mesh(1.0, 0.1, 1).unwrap();
        let bp = sample_brownian(&mesh, 1, 0, 0);
        assert!(matches!(
            ou_driver(&bp, &mesh, 0.1),
            Err(Error::RefinementTooCoarse { .. })
        ));
    }

    #[test]
    fn gap_moment_closed_forms() {
        let eps = 0.2;
        assert_eq!(driver_gap_moments(DriverKind::Polygonal, eps, 0.4, 1).unwrap(), 0.0);
        let mid = driver_gap_moments(DriverKind::Polygonal, eps, 0.5, 1).unwrap();
        assert!((mid - eps / 4.0).abs() < 1e-15);
        let mid4 = driver_gap_moments(DriverKind::Polygonal, eps, 0.5, 2).unwrap();
        assert!((mid4 - 3.0 * (eps / 4.0).powi(2)).abs() < 1e-15);
        let far = driver_gap_moments(DriverKind::OrnsteinUhlenbeck, eps, 1e3, 1).unwrap();
        assert!((far - eps / 2.0).abs() < 1e-15);
        let far4 = driver_gap_moments(DriverKind::OrnsteinUhlenbeck, eps, 1e3, 2).unwrap();
        assert!((far4 - 3.0 * eps * eps / 4.0).abs() < 1e-15);
        assert_eq!(driver_gap_moments(DriverKind::OrnsteinUhlenbeck, eps, 0.0, 1).unwrap(), 0.0);
        assert!(driver_gap_moments(DriverKind::Polygonal, eps, 0.1, 0).is_err());
    }
}
