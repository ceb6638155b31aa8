//! SDE models: drift, diffusion columns, derivatives and the Itô drift.
//!
//! Layout conventions used throughout the crate, with `r` the state
//! dimension and `r̄` the driver dimension:
//!
//! * diffusion: column-major `r × r̄`, `out[j * r + i] = σ_j^i`;
//! * Jacobians: row-major `r × r`, `J[i * r + k] = ∂_k f^i`;
//! * diffusion Jacobians: `r̄` consecutive blocks, one `J_j` per column.

mod builtin;

pub use builtin::{
    builtin_models, BoundedSigma1d, Linear1d, LinearNd, ModelRegistry, ScalarModel,
    StableNonlinear1d,
};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Stratonovich SDE `dX = b(X) dt + σ(X) ∘ dB` (equivalently the random ODE
/// driven by a smooth `B̄`).
pub trait SdeModel: Send + Sync {
    /// Identifier including parameters, e.g. `linear1d(a=-1)`.
    fn id(&self) -> String;

    fn state_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Column-major `r × r̄` diffusion matrix.
    fn diffusion(&self, x: &[f64], out: &mut [f64]);

    /// Row-major Jacobian of the drift. Defaults to central differences.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let r = self.state_dim();
        fd_jacobian(|y, o| self.drift(y, o), x, r, out);
    }

    /// One row-major Jacobian block per diffusion column. Defaults to central
    /// differences.
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let r = self.state_dim();
        let rb = self.noise_dim();
        // differentiate the whole column-major matrix as one r*rb vector
        let mut full = vec![0.0; r * rb * r];
        fd_jacobian(|y, o| self.diffusion(y, o), x, r * rb, &mut full);
        for j in 0..rb {
            for i in 0..r {
                let src = &full[(j * r + i) * r..(j * r + i + 1) * r];
                out[j * r * r + i * r..j * r * r + (i + 1) * r].copy_from_slice(src);
            }
        }
    }

    /// Jacobian of the Itô drift `b_σ`. Constant-diffusion models reuse the
    /// drift Jacobian; otherwise central differences of [`ito_correction`].
    fn ito_drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        if self.constant_diffusion() {
            self.drift_jacobian(x, out);
        } else {
            let r = self.state_dim();
            fd_jacobian(|y, o| ito_correction_into(self, y, o), x, r, out);
        }
    }

    /// True when the derivative methods are closed-form.
    fn has_analytic_derivatives(&self) -> bool {
        false
    }

    /// True when `σ(x) = σ(0)` for all `x`.
    fn constant_diffusion(&self) -> bool {
        false
    }
}

/// Central-difference step `cbrt(machine eps) · (1 + |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

/// Row-major Jacobian (`n_out × x.len()`) of `f` by central differences.
pub fn fd_jacobian<F>(f: F, x: &[f64], n_out: usize, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let n_in = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n_out];
    let mut fm = vec![0.0; n_out];
    for k in 0..n_in {
        let h = fd_step(x[k]);
        xp[k] = x[k] + h;
        f(&xp, &mut fp);
        xp[k] = x[k] - h;
        f(&xp, &mut fm);
        xp[k] = x[k];
        let width = 2.0 * h;
        for i in 0..n_out {
            out[i * n_in + k] = (fp[i] - fm[i]) / width;
        }
    }
}

/// Itô drift `b_σ(x) = b(x) + ½ Σ_j ∇σ_j(x)' σ_j(x)`, componentwise
/// `b^i + ½ Σ_j Σ_k σ_j^k ∂_k σ_j^i`.
pub fn ito_correction<M: SdeModel + ?Sized>(model: &M, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.state_dim()];
    ito_correction_into(model, x, &mut out);
    out
}

pub fn ito_correction_into<M: SdeModel + ?Sized>(model: &M, x: &[f64], out: &mut [f64]) {
    let r = model.state_dim();
    let rb = model.noise_dim();
    model.drift(x, out);
    if model.constant_diffusion() {
        return;
    }
    let mut sig = vec![0.0; r * rb];
    let mut jac = vec![0.0; r * r * rb];
    model.diffusion(x, &mut sig);
    model.diffusion_jacobian(x, &mut jac);
    for j in 0..rb {
        let col = &sig[j * r..(j + 1) * r];
        let block = &jac[j * r * r..(j + 1) * r * r];
        for i in 0..r {
            let dir: f64 = (0..r).map(|k| block[i * r + k] * col[k]).sum();
            out[i] += 0.5 * dir;
        }
    }
}

/// Directional derivative `∇_{σ_l} σ_k = J_k σ_l` at `x`.
pub fn directional_derivative<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    k: usize,
    l: usize,
) -> Vec<f64> {
    let r = model.state_dim();
    let rb = model.noise_dim();
    let mut sig = vec![0.0; r * rb];
    let mut jac = vec![0.0; r * r * rb];
    model.diffusion(x, &mut sig);
    model.diffusion_jacobian(x, &mut jac);
    let block = &jac[k * r * r..(k + 1) * r * r];
    let col = &sig[l * r..(l + 1) * r];
    (0..r)
        .map(|i| (0..r).map(|c| block[i * r + c] * col[c]).sum())
        .collect()
}

/// Drift Jacobian as a matrix.
pub fn drift_jacobian_mat<M: SdeModel + ?Sized>(model: &M, x: &[f64]) -> Mat {
    let r = model.state_dim();
    let mut m = Mat::zeros(r, r);
    model.drift_jacobian(x, m.as_mut_slice());
    m
}

/// Jacobian of `σ_j` for every column.
pub fn diffusion_jacobian_mats<M: SdeModel + ?Sized>(model: &M, x: &[f64]) -> Vec<Mat> {
    let r = model.state_dim();
    let rb = model.noise_dim();
    let mut flat = vec![0.0; r * r * rb];
    model.diffusion_jacobian(x, &mut flat);
    flat.chunks(r * r)
        .map(|c| Mat::from_row_major(r, r, c.to_vec()))
        .collect()
}

/// Worst violation of `∇σ_k' σ_l = ∇σ_l' σ_k` over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutationReport {
    pub max_violation: f64,
    pub arg_point: Vec<f64>,
    pub arg_pair: (usize, usize),
    pub tol: f64,
}

impl CommutationReport {
    pub fn passes(&self) -> bool {
        self.max_violation <= self.tol
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passes() {
            Ok(self)
        } else {
            Err(Error::CommutationViolation {
                violation: self.max_violation,
                tol: self.tol,
                point: self.arg_point,
            })
        }
    }
}

/// Evaluates `max ‖J_k σ_l − J_l σ_k‖` over `points` and all pairs `k < l`.
///
/// Single-column and constant-diffusion models are reported as exactly 0
/// without evaluating derivatives.
pub fn check_commutation<M: SdeModel + ?Sized>(
    model: &M,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<CommutationReport> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("commutation check needs at least one point".into()))?;
    let mut report = CommutationReport {
        max_violation: 0.0,
        arg_point: first.clone(),
        arg_pair: (0, 0),
        tol,
    };
    let rb = model.noise_dim();
    if rb == 1 || model.constant_diffusion() {
        return Ok(report);
    }
    let r = model.state_dim();
    let mut sig = vec![0.0; r * rb];
    let mut jac = vec![0.0; r * r * rb];
    for x in points {
        if x.len() != r {
            return Err(Error::Dimension(format!(
                "commutation point has dimension {}, model has {r}",
                x.len()
            )));
        }
        model.diffusion(x, &mut sig);
        model.diffusion_jacobian(x, &mut jac);
        for k in 0..rb {
            for l in (k + 1)..rb {
                let mut v2 = 0.0;
                for i in 0..r {
                    let mut kl = 0.0;
                    let mut lk = 0.0;
                    for c in 0..r {
                        kl += jac[k * r * r + i * r + c] * sig[l * r + c];
                        lk += jac[l * r * r + i * r + c] * sig[k * r + c];
                    }
                    v2 += (kl - lk) * (kl - lk);
                }
                let v = v2.sqrt();
                if v > report.max_violation {
                    report.max_violation = v;
                    report.arg_point = x.clone();
                    report.arg_pair = (k, l);
                }
            }
        }
    }
    Ok(report)
}

/// Default certification box `[-5, 5]^r`.
pub fn default_box(r: usize) -> Vec<(f64, f64)> {
    vec![(-5.0, 5.0); r]
}

/// Deterministic probe points for commutation checks: the box corners,
/// the center and a small interior lattice.
pub fn probe_points(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let r = bounds.len();
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(r as u32);
    (0..total)
        .map(|mut idx| {
            (0..r)
                .map(|d| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    let (lo, hi) = bounds[d];
                    lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// σ_1 = (x2, 0)', σ_2 = (c·x1, 0)'.
    struct TwoColumn {
        c: f64,
    }

    impl SdeModel for TwoColumn {
        fn id(&self) -> String {
            "two-column".into()
        }
        fn state_dim(&self) -> usize {
            2
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            out[0] = -x[0];
            out[1] = -x[1];
        }
        fn diffusion(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[1];
            out[1] = 0.0;
            out[2] = self.c * x[0];
            out[3] = 0.0;
        }
    }

    #[test]
    fn ito_drift_constant_sigma_is_drift() {
        let m = Linear1d::new(-1.5);
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(ito_correction(&m, &[x]), vec![-1.5 * x]);
        }
    }

    #[test]
    fn ito_drift_linear_sigma() {
        // sigma(x) = x: b_sigma = b + x/2
        let m = ScalarModel::new("lin-sigma", |x| -x, |_| -1.0, |x| x, |_| 1.0);
        for x in [-2.0, 0.5, 3.0] {
            let v = ito_correction(&m, &[x])[0];
            assert!((v - (-x + 0.5 * x)).abs() < 1e-14);
        }
    }

    #[test]
    fn ito_drift_cosine_sigma_matches_symbolic() {
        let m = ScalarModel::new(
            "cos-sigma",
            |x| -2.0 * x,
            |_| -2.0,
            |x| 2.0 + x.cos(),
            |x| -x.sin(),
        );
        for x in [-4.0f64, -1.0, 0.0, 0.7, 2.9] {
            let want = -2.0 * x - 0.5 * (2.0 + x.cos()) * x.sin();
            assert!((ito_correction(&m, &[x])[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn fd_default_diffusion_jacobian_matches_analytic() {
        let m = TwoColumn { c: 1.0 };
        let mut jac = vec![0.0; 8];
        m.diffusion_jacobian(&[0.3, -1.2], &mut jac);
        let want = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (a, b) in jac.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn commutation_single_column_and_constant() {
        let pts = vec![vec![1.0], vec![-2.0]];
        let cos = ScalarModel::new("c", |x| -x, |_| -1.0, |x| 2.0 + x.cos(), |x| -x.sin());
        assert_eq!(check_commutation(&cos, &pts, 0.0).unwrap().max_violation, 0.0);
        let lin = LinearNd::new(
            Mat::from_rows(&[&[-1.0, 0.0], &[0.0, -1.0]]),
            Mat::from_rows(&[&[1.0, 0.5, 0.0], &[0.0, 1.0, 2.0]]),
        )
        .unwrap();
        let pts2 = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        assert_eq!(check_commutation(&lin, &pts2, 0.0).unwrap().max_violation, 0.0);
    }

    #[test]
    fn commutation_two_column_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let points: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        // sigma_2 = 0: both directional derivatives vanish
        let zero = TwoColumn { c: 0.0 };
        let rep = check_commutation(&zero, &points, 1e-9).unwrap();
        assert!(rep.max_violation < 1e-9 && rep.passes());
        // sigma_2 = (x1, 0)': J_1 sigma_2 = 0, J_2 sigma_1 = (x2, 0)' -> |x2|
        let one = TwoColumn { c: 1.0 };
        let rep = check_commutation(&one, &points, 1e-6).unwrap();
        let oracle = points.iter().map(|p| p[1].abs()).fold(0.0, f64::max);
        assert!((rep.max_violation - oracle).abs() < 1e-8, "{rep:?} vs {oracle}");
        assert_eq!(rep.arg_pair, (0, 1));
        assert!(!rep.passes());
        assert!(matches!(
            rep.into_result(),
            Err(Error::CommutationViolation { .. })
        ));
    }

    #[test]
    fn probe_points_cover_corners() {
        let pts = probe_points(&[(-1.0, 1.0), (0.0, 2.0)], 3);
        assert_eq!(pts.len(), 9);
        assert!(pts.contains(&vec![-1.0, 0.0]));
        assert!(pts.contains(&vec![1.0, 2.0]));
        assert!(pts.contains(&vec![0.0, 1.0]));
    }
}
