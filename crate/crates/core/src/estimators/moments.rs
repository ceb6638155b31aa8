use serde::{Deserialize, Serialize};

use super::accumulator::{Estimate, MomentAccumulator};
use super::parallel::run_paths;
use crate::error::{Error, Result};
use crate::flows::WzIntegrator;
use crate::meshpaths::{build_driver_into, sample_brownian_into, BrownianPath, DriverKind, DriverPath, TimeMesh};
use crate::models::SdeModel;

/// `E‖X̄_{t_n}‖^p` per coarse node for one initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub x0: Vec<f64>,
    pub p: u32,
    pub times: Vec<f64>,
    pub moments: Vec<Estimate>,
}

impl MomentReport {
    /// Largest node estimate with `t ≤ horizon`, and its index.
    pub fn sup_until(&self, horizon: f64) -> (usize, Estimate) {
        let mut best = (0, self.moments[0]);
        for (i, (t, e)) in self.times.iter().zip(&self.moments).enumerate() {
            if *t <= horizon * (1.0 + 1e-12) && e.mean > best.1.mean {
                best = (i, *e);
            }
        }
        best
    }
}

/// Moments of the Wong–Zakai flow at the coarse nodes.
#[allow(clippy::too_many_arguments)]
pub fn uniform_moments_experiment<M: SdeModel + ?Sized>(
    model: &M,
    kind: DriverKind,
    mesh: &TimeMesh,
    substeps: usize,
    x0_panel: &[Vec<f64>],
    paths: u64,
    p: u32,
    seed: u64,
) -> Result<Vec<MomentReport>> {
    let r = model.state_dim();
    let rb = model.noise_dim();
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be >= 1".into()));
    }
    if x0_panel.iter().any(|x| x.len() != r) {
        return Err(Error::Dimension(format!("x0 must have dimension {r}")));
    }
    let m = mesh.refine();
    let nodes = mesh.coarse_cells() + 1;
    let panel = x0_panel.len();
    let acc = run_paths(
        paths,
        || vec![MomentAccumulator::new(); panel * nodes],
        || {
            (
                BrownianPath::empty(*mesh, rb),
                DriverPath::empty(kind, *mesh, rb),
                WzIntegrator::new(model),
                vec![0.0; r],
            )
        },
        |acc, (bp, d, wz, state), path| {
            sample_brownian_into(bp, mesh, rb, seed, path);
            build_driver_into(kind, d, bp, mesh)?;
            for (ix, x0) in x0_panel.iter().enumerate() {
                let slot = &mut acc[ix * nodes..(ix + 1) * nodes];
                wz.run(d, x0, substeps, state, |j, x| {
                    if j % m == 0 {
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        slot[j / m].push(norm.powi(p as i32));
                    }
                })?;
            }
            Ok(())
        },
    )?;
    Ok(x0_panel
        .iter()
        .enumerate()
        .map(|(ix, x0)| MomentReport {
            x0: x0.clone(),
            p,
            times: (0..nodes).map(|k| mesh.coarse_time(k)).collect(),
            moments: acc[ix * nodes..(ix + 1) * nodes].iter().map(|a| a.estimate()).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshpaths::make_mesh;
    use crate::models::Linear1d;

    #[test]
    fn linear_second_moment_matches_closed_form() {
        // X̄ is Gaussian: E X̄² = x0² e^{2at} + Var, Var from the cell sums
        let (a, eps) = (-1.0f64, 0.2);
        let mesh = make_mesh(4.0, eps, 16).unwrap();
        let rep = uniform_moments_experiment(&Linear1d::new(a), DriverKind::Polygonal, &mesh, 1, &[vec![1.0]], 20_000, 2, 3)
            .unwrap();
        let cell = (a * eps).exp_m1() / a / eps;
        for (n, e) in rep[0].moments.iter().enumerate() {
            let t = n as f64 * eps;
            let var: f64 = (0..n)
                .map(|k| ((a * (t - (k + 1) as f64 * eps)).exp() * cell).powi(2) * eps)
                .sum();
            let exact = (2.0 * a * t).exp() + var;
            assert!(e.within(exact, 4.0) || (e.mean - exact).abs() < 1e-12, "n = {n}: {e:?} vs {exact}");
        }
        let (i, sup) = rep[0].sup_until(4.0);
        assert_eq!(i, 0);
        assert_eq!(sup.mean, 1.0);
    }
}
