//! Logarithmic norms and grid certification of the spectral conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Mat};
use crate::models::SdeModel;

/// Absolute tolerance on the off-diagonal mass in the Jacobi iteration.
pub const JACOBI_TOL: f64 = 1e-12;

/// Largest grid accepted by [`certify`].
pub const MAX_GRID_POINTS: u128 = 1_000_000;

/// Largest state dimension accepted for full tensor grids.
pub const MAX_GRID_DIM: usize = 4;

/// `ρ(A) = λ_max((A + A')/2)`.
pub fn lognorm(a: &Mat) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFiniteMatrix);
    }
    let eig = symmetric_eigenvalues(&a.symmetric_part(), JACOBI_TOL)?;
    Ok(*eig.last().expect("non-empty matrix"))
}

/// Spectral norm `λ_max(A'A)^{1/2}`.
pub fn spectral_norm(a: &Mat) -> Result<f64> {
    let ata = a.transpose().matmul(a);
    let eig = symmetric_eigenvalues(&ata, JACOBI_TOL)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// The three spectral conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// `sup_x ρ(∇b(x)) < 0`.
    #[serde(rename = "H_b")]
    Hb,
    /// `sup_x ρ(∇b_σ(x)) < 0`.
    #[serde(rename = "H_bsigma")]
    HbSigma,
    /// `sup_x λ_max(S_σ(x)) < 0` with
    /// `S_σ = (∇b_σ)_sym + ½ Σ_k ∇σ_k (∇σ_k)'`.
    #[serde(rename = "H_sigma")]
    HSigma,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Hb => "H_b",
            Condition::HbSigma => "H_bsigma",
            Condition::HSigma => "H_sigma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "H_b" | "Hb" | "hb" => Some(Condition::Hb),
            "H_bsigma" | "Hbsigma" | "hbsigma" => Some(Condition::HbSigma),
            "H_sigma" | "Hsigma" | "hsigma" => Some(Condition::HSigma),
            _ => None,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of scanning a condition's test value over a tensor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub condition: Condition,
    /// Grid maximum of the tested log-norm or eigenvalue.
    pub sup_value: f64,
    /// `−sup_value` when the condition holds on the grid.
    pub lambda: Option<f64>,
    pub arg_point: Vec<f64>,
    pub grid_n: usize,
    pub grid_size: usize,
    pub bounds: Vec<(f64, f64)>,
    /// Grid maximum of `‖∇b‖₂`.
    pub sup_drift_jacobian_norm: f64,
}

impl CertReport {
    pub fn holds(&self) -> bool {
        self.sup_value < 0.0
    }

    pub fn into_result(self) -> Result<Self> {
        if self.holds() {
            Ok(self)
        } else {
            Err(Error::CertificationFailed {
                condition: self.condition.name().into(),
                sup_value: self.sup_value,
                point: self.arg_point,
            })
        }
    }

    /// Contraction rate `(1 − δ)(λ − δ ‖∇b‖₂²)` for a user-chosen `δ ∈ (0, 1)`.
    /// `None` when the condition fails.
    pub fn contraction_rate(&self, delta: f64) -> Option<f64> {
        let lambda = self.lambda?;
        Some((1.0 - delta) * (lambda - delta * self.sup_drift_jacobian_norm.powi(2)))
    }
}

/// Test matrix of `condition` at `x`.
pub fn condition_matrix<M: SdeModel + ?Sized>(model: &M, condition: Condition, x: &[f64]) -> Mat {
    let r = model.state_dim();
    let mut m = Mat::zeros(r, r);
    match condition {
        Condition::Hb => model.drift_jacobian(x, m.as_mut_slice()),
        Condition::HbSigma => model.ito_drift_jacobian(x, m.as_mut_slice()),
        Condition::HSigma => {
            model.ito_drift_jacobian(x, m.as_mut_slice());
            m = m.symmetric_part();
            if !model.constant_diffusion() {
                let rb = model.noise_dim();
                let mut jac = vec![0.0; r * r * rb];
                model.diffusion_jacobian(x, &mut jac);
                // ∇σ_k in the transposed-Jacobian convention, so ∇σ_k ∇σ_k' = J_k' J_k
                for k in 0..rb {
                    let jk = Mat::from_row_major(r, r, jac[k * r * r..(k + 1) * r * r].to_vec());
                    m.add_scaled(&jk.transpose().matmul(&jk), 0.5);
                }
            }
        }
    }
    m
}

/// Scans a tensor grid of `grid_n` points per axis over `bounds` and returns
/// the maximum of the condition's test value.
pub fn certify<M: SdeModel + ?Sized>(
    model: &M,
    condition: Condition,
    bounds: &[(f64, f64)],
    grid_n: usize,
) -> Result<CertReport> {
    let r = model.state_dim();
    if bounds.len() != r {
        return Err(Error::Dimension(format!(
            "box has {} axes, model state dimension is {r}",
            bounds.len()
        )));
    }
    if grid_n < 2 {
        return Err(Error::InvalidArgument("grid_n must be >= 2".into()));
    }
    if r > MAX_GRID_DIM {
        return Err(Error::InvalidArgument(format!(
            "tensor grids limited to r <= {MAX_GRID_DIM}, got r = {r}"
        )));
    }
    let points = (grid_n as u128).pow(r as u32);
    if points > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge {
            points,
            max: MAX_GRID_POINTS,
        });
    }
    if bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid box {bounds:?}")));
    }
    let total = points as usize;
    let mut x = vec![0.0; r];
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; r];
    let mut sup_norm: f64 = 0.0;
    let mut jac = Mat::zeros(r, r);
    for idx in 0..total {
        let mut rem = idx;
        for d in 0..r {
            let i = rem % grid_n;
            rem /= grid_n;
            let (lo, hi) = bounds[d];
            x[d] = lo + (hi - lo) * i as f64 / (grid_n - 1) as f64;
        }
        let m = condition_matrix(model, condition, &x);
        let v = if condition == Condition::HSigma {
            // already symmetric
            *symmetric_eigenvalues(&m, JACOBI_TOL)?.last().unwrap()
        } else {
            lognorm(&m)?
        };
        if v > best {
            best = v;
            arg.copy_from_slice(&x);
        }
        model.drift_jacobian(&x, jac.as_mut_slice());
        sup_norm = sup_norm.max(spectral_norm(&jac)?);
    }
    Ok(CertReport {
        condition,
        sup_value: best,
        lambda: (best < 0.0).then_some(-best),
        arg_point: arg,
        grid_n,
        grid_size: total,
        bounds: bounds.to_vec(),
        sup_drift_jacobian_norm: sup_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BoundedSigma1d, Linear1d, LinearNd, StableNonlinear1d};
    use proptest::prelude::*;

    #[test]
    fn lognorm_examples() {
        assert_eq!(lognorm(&Mat::identity(2)).unwrap(), 1.0);
        assert_eq!(lognorm(&Mat::from_rows(&[&[-3.5]])).unwrap(), -3.5);
        let nil = Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!((lognorm(&nil).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(
            lognorm(&Mat::from_rows(&[&[f64::INFINITY]])),
            Err(Error::NonFiniteMatrix)
        );
    }

    fn matrix(n: usize) -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-10.0f64..10.0, n * n)
            .prop_map(move |d| Mat::from_row_major(n, n, d))
    }

    proptest! {
        #[test]
        fn lognorm_bounds_diagonal(a in (1usize..6).prop_flat_map(matrix)) {
            let rho = lognorm(&a).unwrap();
            for i in 0..a.rows() {
                prop_assert!(rho >= a[(i, i)] - 1e-10);
            }
        }

        #[test]
        fn lognorm_symmetric_part_invariant(a in (1usize..6).prop_flat_map(matrix)) {
            let rho = lognorm(&a).unwrap();
            let rho_sym = lognorm(&a.symmetric_part()).unwrap();
            prop_assert!((rho - rho_sym).abs() <= 1e-10 * (1.0 + rho.abs()));
        }
    }

    #[test]
    fn linear_scalar_certificates() {
        let m = Linear1d::new(-1.0);
        let hb = certify(&m, Condition::Hb, &[(-5.0, 5.0)], 11).unwrap();
        assert_eq!(hb.sup_value, -1.0);
        assert_eq!(hb.lambda, Some(1.0));
        assert!(hb.holds());
        let hs = certify(&m, Condition::HSigma, &[(-5.0, 5.0)], 11).unwrap();
        assert_eq!(hs.sup_value, -1.0);
        let unstable = certify(&Linear1d::new(2.0), Condition::Hb, &[(-5.0, 5.0)], 5).unwrap();
        assert!(!unstable.holds());
        assert!(unstable.clone().into_result().is_err());
        assert_eq!(unstable.contraction_rate(0.1), None);
    }

    #[test]
    fn stable_nonlinear_grid_matches_dense_scan() {
        let m = StableNonlinear1d;
        let rep = certify(&m, Condition::Hb, &[(-5.0, 5.0)], 1001).unwrap();
        // dense oracle
        let dense = (0..=100_000)
            .map(|i| -2.0 + (-5.0 + 10.0 * i as f64 / 100_000.0).cos())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((rep.sup_value - dense).abs() < 1e-12);
        assert!((rep.sup_value + 1.0).abs() < 1e-12);
        assert_eq!(rep.arg_point, vec![0.0]);
        assert_eq!(rep.lambda, Some(1.0));
    }

    #[test]
    fn constant_sigma_conditions_coincide() {
        let models: Vec<Box<dyn SdeModel>> = vec![
            Box::new(Linear1d::new(-0.3)),
            Box::new(StableNonlinear1d),
        ];
        for m in models {
            let b = [(-5.0, 5.0)];
            let hb = certify(m.as_ref(), Condition::Hb, &b, 201).unwrap();
            let hbs = certify(m.as_ref(), Condition::HbSigma, &b, 201).unwrap();
            let hs = certify(m.as_ref(), Condition::HSigma, &b, 201).unwrap();
            assert_eq!(hb.sup_value, hbs.sup_value);
            assert!((hb.sup_value - hs.sup_value).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_nd_certificate_is_box_independent() {
        let a = Mat::from_rows(&[&[-2.0, 1.5], &[-0.5, -1.0]]);
        let m = LinearNd::new(a.clone(), Mat::identity(2)).unwrap();
        let want = lognorm(&a).unwrap();
        for (bounds, n) in [([(-1.0, 1.0); 2], 3), ([(-5.0, 5.0); 2], 21), ([(0.0, 7.0); 2], 8)] {
            let rep = certify(&m, Condition::Hb, &bounds, n).unwrap();
            assert!((rep.sup_value - want).abs() < 1e-14);
        }
    }

    #[test]
    fn bounded_sigma_h_sigma_holds() {
        // S_sigma = -5/2 + (3/2) sin^2 x for this model, so sup = -1
        let rep = certify(&BoundedSigma1d, Condition::HSigma, &[(-5.0, 5.0)], 2001).unwrap();
        assert!((rep.sup_value + 1.0).abs() < 1e-5, "{}", rep.sup_value);
        let hbs = certify(&BoundedSigma1d, Condition::HbSigma, &[(-5.0, 5.0)], 2001).unwrap();
        assert!((hbs.sup_value + 1.5).abs() < 1e-5, "{}", hbs.sup_value);
    }

    #[test]
    fn contraction_rate_formula() {
        let rep = certify(&Linear1d::new(-1.0), Condition::Hb, &[(-1.0, 1.0)], 3).unwrap();
        let lam = rep.contraction_rate(0.1).unwrap();
        assert!((lam - 0.9 * (1.0 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn grid_guards() {
        let m = LinearNd::new(Mat::identity(4), Mat::identity(4)).unwrap();
        assert!(matches!(
            certify(&m, Condition::Hb, &[(-1.0, 1.0); 4], 40),
            Err(Error::GridTooLarge { .. })
        ));
        assert!(certify(&Linear1d::new(-1.0), Condition::Hb, &[(-1.0, 1.0)], 1).is_err());
    }
}
