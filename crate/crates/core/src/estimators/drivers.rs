use serde::{Deserialize, Serialize};

use super::accumulator::{Estimate, MomentAccumulator};
use super::parallel::run_paths;
use crate::error::{Error, Result};
use crate::meshpaths::{
    build_driver_into, driver_gap_moments, sample_brownian_into, BrownianPath, DriverKind, DriverPath,
    TimeMesh,
};

/// Monte Carlo versus closed form for `E(B_t − B̄_t)^{2p}` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverMomentRow {
    pub kind: DriverKind,
    pub t: f64,
    /// Moment order `2p`.
    pub order: u32,
    pub mc: Estimate,
    pub exact: f64,
    /// Discretization allowance: `p · (δ/ε) · exact` for the OU driver, 0
    /// for the polygonal driver.
    pub allowance: f64,
}

impl DriverMomentRow {
    pub fn passes(&self, k_se: f64) -> bool {
        (self.mc.mean - self.exact).abs() <= k_se * self.mc.se + self.allowance
    }
}

/// Second and fourth moments of the driver gap at each of `times`, which
/// must be fine nodes of the mesh.
pub fn driver_moment_check(
    kind: DriverKind,
    mesh: &TimeMesh,
    times: &[f64],
    paths: u64,
    seed: u64,
) -> Result<Vec<DriverMomentRow>> {
    let delta = mesh.delta();
    let mut idx = Vec::with_capacity(times.len());
    for &t in times {
        let j = (t / delta).round();
        if t < 0.0 || (j * delta - t).abs() > 1e-9 * delta.max(t) || j as usize > mesh.fine_cells() {
            return Err(Error::InvalidArgument(format!("t = {t} is not a fine node of the mesh")));
        }
        idx.push(j as usize);
    }
    let k = idx.len();
    let acc = run_paths(
        paths,
        || vec![MomentAccumulator::new(); 2 * k],
        || (BrownianPath::empty(*mesh, 1), DriverPath::empty(kind, *mesh, 1)),
        |acc, (bp, d), p| {
            sample_brownian_into(bp, mesh, 1, seed, p);
            build_driver_into(kind, d, bp, mesh)?;
            for (i, &j) in idx.iter().enumerate() {
                let g = bp.value(j)[0] - d.value(j)[0];
                let g2 = g * g;
                acc[2 * i].push(g2);
                acc[2 * i + 1].push(g2 * g2);
            }
            Ok(())
        },
    )?;
    let ratio = delta / mesh.eps();
    let mut rows = Vec::with_capacity(2 * k);
    for (i, &j) in idx.iter().enumerate() {
        let t = mesh.fine_time(j);
        for p in 1..=2u32 {
            let exact = driver_gap_moments(kind, mesh.eps(), t, p)?;
            let allowance = match kind {
                DriverKind::Polygonal => 0.0,
                DriverKind::OrnsteinUhlenbeck => p as f64 * ratio * exact,
            };
            rows.push(DriverMomentRow {
                kind,
                t,
                order: 2 * p,
                mc: acc[2 * i + p as usize - 1].estimate(),
                exact,
                allowance,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshpaths::make_mesh;

    #[test]
    fn polygonal_moments_match() {
        let mesh = make_mesh(1.0, 0.1, 16).unwrap();
        let rows = driver_moment_check(DriverKind::Polygonal, &mesh, &[0.0, 0.1, 0.125, 0.45], 20_000, 1).unwrap();
        assert_eq!(rows.len(), 8);
        for r in &rows {
            if r.exact == 0.0 {
                assert_eq!(r.mc.mean, 0.0);
            }
            assert!(r.passes(4.0), "{r:?}");
        }
    }

    #[test]
    fn ou_moments_match_with_allowance() {
        let mesh = make_mesh(1.0, 0.1, 64).unwrap();
        let rows = driver_moment_check(DriverKind::OrnsteinUhlenbeck, &mesh, &[0.1, 0.5, 1.0], 20_000, 2).unwrap();
        for r in &rows {
            assert!(r.passes(4.0), "{r:?}");
            assert!(r.allowance > 0.0);
        }
    }

    #[test]
    fn rejects_off_mesh_time() {
        let mesh = make_mesh(1.0, 0.1, 4).unwrap();
        assert!(driver_moment_check(DriverKind::Polygonal, &mesh, &[0.013], 10, 0).is_err());
        assert!(driver_moment_check(DriverKind::Polygonal, &mesh, &[2.0], 10, 0).is_err());
    }
}
