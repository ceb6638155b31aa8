//! Built-in models and the by-name registry.

use super::SdeModel;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// `b(x) = a x`, `σ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear1d {
    pub a: f64,
}

impl Linear1d {
    pub fn new(a: f64) -> Self {
        Self { a }
    }
}

impl SdeModel for Linear1d {
    fn id(&self) -> String {
        format!("linear1d(a={})", self.a)
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0];
    }
    #[inline]
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    #[inline]
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = self.a;
    }
    #[inline]
    fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// `b(x) = A x`, constant `σ(x) = Σ` (`r × r̄`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearNd {
    a: Mat,
    sigma: Mat,
}

impl LinearNd {
    pub fn new(a: Mat, sigma: Mat) -> Result<Self> {
        if !a.is_square() || sigma.rows() != a.rows() || sigma.cols() == 0 {
            return Err(Error::BadModelParams {
                model: "linear_nd".into(),
                reason: format!(
                    "A must be r x r and Sigma r x rbar, got {}x{} and {}x{}",
                    a.rows(),
                    a.cols(),
                    sigma.rows(),
                    sigma.cols()
                ),
            });
        }
        Ok(Self { a, sigma })
    }

    pub fn drift_matrix(&self) -> &Mat {
        &self.a
    }
}

impl SdeModel for LinearNd {
    fn id(&self) -> String {
        format!(
            "linear_nd(A={:?},Sigma={:?})",
            self.a.as_slice(),
            self.sigma.as_slice()
        )
    }
    fn state_dim(&self) -> usize {
        self.a.rows()
    }
    fn noise_dim(&self) -> usize {
        self.sigma.cols()
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let r = self.a.rows();
        for i in 0..r {
            out[i] = (0..r).map(|k| self.a[(i, k)] * x[k]).sum();
        }
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        let r = self.sigma.rows();
        for j in 0..self.sigma.cols() {
            for i in 0..r {
                out[j * r + i] = self.sigma[(i, j)];
            }
        }
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.a.as_slice());
    }
    fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// `b(x) = −2x + sin x`, `σ = 1`; `∇b = −2 + cos x ≤ −1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StableNonlinear1d;

impl SdeModel for StableNonlinear1d {
    fn id(&self) -> String {
        "stable_nonlinear1d".into()
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * x[0] + x[0].sin();
    }
    #[inline]
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    #[inline]
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 + x[0].cos();
    }
    #[inline]
    fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// `b(x) = −2x + sin x`, `σ(x) = 2 + cos x ∈ [1, 3]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundedSigma1d;

impl SdeModel for BoundedSigma1d {
    fn id(&self) -> String {
        "bounded_sigma1d".into()
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    #[inline]
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * x[0] + x[0].sin();
    }
    #[inline]
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 + x[0].cos();
    }
    #[inline]
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 + x[0].cos();
    }
    #[inline]
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0].sin();
    }
    /// `b_σ = −2x + sin x − ½(2 + cos x) sin x`, so
    /// `∇b_σ = −2 + cos x + ½ sin²x − ½(2 + cos x) cos x`.
    fn ito_drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[0].sin_cos();
        out[0] = -2.0 + c + 0.5 * s * s - 0.5 * (2.0 + c) * c;
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar model assembled from closures. Derivatives are optional; missing
/// ones fall back to central differences.
pub struct ScalarModel {
    name: String,
    b: ScalarFn,
    db: Option<ScalarFn>,
    sigma: ScalarFn,
    dsigma: Option<ScalarFn>,
}

impl ScalarModel {
    pub fn new(
        name: impl Into<String>,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        db: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dsigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            b: Box::new(b),
            db: Some(Box::new(db)),
            sigma: Box::new(sigma),
            dsigma: Some(Box::new(dsigma)),
        }
    }

    pub fn without_derivatives(
        name: impl Into<String>,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            b: Box::new(b),
            db: None,
            sigma: Box::new(sigma),
            dsigma: None,
        }
    }

    fn central(f: &ScalarFn, x: f64) -> f64 {
        let h = super::fd_step(x);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }
}

impl std::fmt::Debug for ScalarModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarModel").field("name", &self.name).finish()
    }
}

impl SdeModel for ScalarModel {
    fn id(&self) -> String {
        self.name.clone()
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.b)(x[0]);
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.sigma)(x[0]);
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = match &self.db {
            Some(db) => db(x[0]),
            None => Self::central(&self.b, x[0]),
        };
    }
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = match &self.dsigma {
            Some(ds) => ds(x[0]),
            None => Self::central(&self.sigma, x[0]),
        };
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.db.is_some() && self.dsigma.is_some()
    }
}

/// Lookup of the built-in models by name and positional parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelRegistry;

/// The registry of built-in models.
pub fn builtin_models() -> ModelRegistry {
    ModelRegistry
}

const REGISTRY: &[(&str, &str)] = &[
    ("linear1d", "[a]: b(x) = a x, sigma = 1"),
    (
        "linear_nd",
        "[r, rbar, A (r*r row-major), Sigma (r*rbar row-major)]: b(x) = A x, sigma = Sigma",
    ),
    ("stable_nonlinear1d", "[]: b(x) = -2x + sin x, sigma = 1"),
    ("bounded_sigma1d", "[]: b(x) = -2x + sin x, sigma = 2 + cos x"),
];

impl ModelRegistry {
    pub fn names(&self) -> Vec<String> {
        REGISTRY.iter().map(|(n, _)| n.to_string()).collect()
    }

    /// Parameter documentation for `name`.
    pub fn describe(&self, name: &str) -> Option<&'static str> {
        REGISTRY.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.describe(name).is_some()
    }

    pub fn build(&self, name: &str, params: &[f64]) -> Result<Box<dyn SdeModel>> {
        let bad = |reason: String| Error::BadModelParams {
            model: name.to_string(),
            reason,
        };
        match name {
            "linear1d" => match params {
                [a] if a.is_finite() => Ok(Box::new(Linear1d::new(*a))),
                _ => Err(bad(format!("expected [a], got {params:?}"))),
            },
            "linear_nd" => {
                let (r, rb) = match params {
                    [r, rb, ..] if *r >= 1.0 && *rb >= 1.0 && r.fract() == 0.0 && rb.fract() == 0.0 => {
                        (*r as usize, *rb as usize)
                    }
                    _ => return Err(bad("expected leading [r, rbar] positive integers".into())),
                };
                let need = 2 + r * r + r * rb;
                if params.len() != need {
                    return Err(bad(format!(
                        "expected {need} values for r = {r}, rbar = {rb}, got {}",
                        params.len()
                    )));
                }
                let a = Mat::from_row_major(r, r, params[2..2 + r * r].to_vec());
                let s = Mat::from_row_major(r, rb, params[2 + r * r..].to_vec());
                Ok(Box::new(LinearNd::new(a, s)?))
            }
            "stable_nonlinear1d" | "bounded_sigma1d" => {
                if !params.is_empty() {
                    return Err(bad(format!("takes no parameters, got {params:?}")));
                }
                Ok(if name == "stable_nonlinear1d" {
                    Box::new(StableNonlinear1d)
                } else {
                    Box::new(BoundedSigma1d)
                })
            }
            _ => Err(Error::UnknownModel {
                name: name.to_string(),
                valid: self.names(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fd_jacobian, ito_correction_into};
    use rand::{Rng, SeedableRng};

    fn all_builtins() -> Vec<Box<dyn SdeModel>> {
        let reg = builtin_models();
        vec![
            reg.build("linear1d", &[-1.0]).unwrap(),
            reg.build("linear1d", &[2.0]).unwrap(),
            reg.build(
                "linear_nd",
                &[2.0, 3.0, -1.0, 0.5, 0.2, -2.0, 1.0, 0.0, 0.3, 0.0, 1.0, 0.7],
            )
            .unwrap(),
            reg.build("stable_nonlinear1d", &[]).unwrap(),
            reg.build("bounded_sigma1d", &[]).unwrap(),
        ]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for model in all_builtins() {
            assert!(model.has_analytic_derivatives());
            let r = model.state_dim();
            let rb = model.noise_dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
                let mut an = vec![0.0; r * r];
                let mut fd = vec![0.0; r * r];
                model.drift_jacobian(&x, &mut an);
                fd_jacobian(|y, o| model.drift(y, o), &x, r, &mut fd);
                for (a, b) in an.iter().zip(&fd) {
                    assert!(rel_close(*b, *a, 1e-6), "{}: {a} vs {b}", model.id());
                }
                let mut an_s = vec![0.0; r * r * rb];
                model.diffusion_jacobian(&x, &mut an_s);
                let mut full = vec![0.0; r * rb * r];
                fd_jacobian(|y, o| model.diffusion(y, o), &x, r * rb, &mut full);
                for j in 0..rb {
                    for i in 0..r {
                        for k in 0..r {
                            let a = an_s[j * r * r + i * r + k];
                            let b = full[(j * r + i) * r + k];
                            assert!(rel_close(b, a, 1e-6), "{}", model.id());
                        }
                    }
                }
                let mut an_i = vec![0.0; r * r];
                let mut fd_i = vec![0.0; r * r];
                model.ito_drift_jacobian(&x, &mut an_i);
                fd_jacobian(|y, o| ito_correction_into(model.as_ref(), y, o), &x, r, &mut fd_i);
                for (a, b) in an_i.iter().zip(&fd_i) {
                    assert!(rel_close(*b, *a, 1e-6), "{}", model.id());
                }
            }
        }
    }

    #[test]
    fn linear_gradient_is_constant() {
        let m = Linear1d::new(-0.7);
        let mut g = [0.0];
        for x in [-100.0, 0.0, 3.0] {
            m.drift_jacobian(&[x], &mut g);
            assert_eq!(g[0], -0.7);
        }
    }

    #[test]
    fn stable_nonlinear_supremum_of_gradient() {
        let m = StableNonlinear1d;
        let mut g = [0.0];
        let mut sup = f64::NEG_INFINITY;
        for i in 0..=100_000 {
            let x = -5.0 + 10.0 * i as f64 / 100_000.0;
            m.drift_jacobian(&[x], &mut g);
            sup = sup.max(g[0]);
        }
        assert!((sup + 1.0).abs() < 1e-12);
        m.drift_jacobian(&[0.0], &mut g);
        assert_eq!(g[0], -1.0);
    }

    #[test]
    fn bounded_sigma_range() {
        let m = BoundedSigma1d;
        let mut s = [0.0];
        for i in 0..=10_000 {
            let x = -20.0 + 40.0 * i as f64 / 10_000.0;
            m.diffusion(&[x], &mut s);
            assert!((1.0..=3.0).contains(&s[0]));
        }
    }

    #[test]
    fn unknown_model_lists_registry() {
        let Err(e) = builtin_models().build("glub", &[]) else {
            panic!("glub should not resolve")
        };
        let msg = e.to_string();
        for name in builtin_models().names() {
            assert!(msg.contains(&name), "{msg}");
        }
    }

    #[test]
    fn parameter_validation() {
        let reg = builtin_models();
        assert!(reg.build("linear1d", &[]).is_err());
        assert!(reg.build("stable_nonlinear1d", &[1.0]).is_err());
        assert!(reg.build("linear_nd", &[2.0, 1.0, 1.0]).is_err());
        let m = reg.build("linear_nd", &[1.0, 1.0, -3.0, 0.5]).unwrap();
        assert_eq!((m.state_dim(), m.noise_dim()), (1, 1));
    }
}
