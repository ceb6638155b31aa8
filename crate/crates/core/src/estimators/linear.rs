//! Closed-form error of the polygonal Wong–Zakai approximation for the scalar
//! linear model `dX = aX dt + dB`.

use crate::error::{Error, Result};

/// Per-cell factor `v(aε) = (e^{2z} − 1)/(2z) − ((e^z − 1)/z)²` with
/// `z = aε`, so that one cell contributes `v ε` to the squared gap.
pub fn per_cell_variance(a: f64, eps: f64) -> f64 {
    let z = a * eps;
    if z == 0.0 {
        return 0.0;
    }
    if z.abs() <= 0.5 {
        // Σ_{k≥2} (2^k (k − 2) + 2) / (k + 2)! z^k, free of cancellation
        let mut sum = 0.0;
        let mut zk = z * z;
        let mut fact = 24.0;
        let mut pow2 = 4.0;
        for k in 2..80u32 {
            let term = (pow2 * (k as f64 - 2.0) + 2.0) / fact * zk;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            zk *= z;
            pow2 *= 2.0;
            fact *= (k + 3) as f64;
        }
        sum
    } else {
        let q = z.exp_m1() / z;
        (2.0 * z).exp_m1() / (2.0 * z) - q * q
    }
}

/// `E[(X_{t_n} − X̄_{t_n})²] = v ε Σ_{j<n} e^{2aεj}` for the polygonal driver.
pub fn exact_linear_variance(a: f64, eps: f64, n: i64) -> Result<f64> {
    if n < 0 {
        return Err(Error::InvalidArgument(format!("n must be >= 0, got {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    if n == 0 || a == 0.0 {
        return Ok(0.0);
    }
    let z2 = 2.0 * a * eps;
    let geometric = (z2 * n as f64).exp_m1() / z2.exp_m1();
    Ok(per_cell_variance(a, eps) * eps * geometric)
}

/// `lim_{n→∞}` of [`exact_linear_variance`] for `a < 0`.
pub fn exact_linear_variance_limit(a: f64, eps: f64) -> Result<f64> {
    if !(a < 0.0) {
        return Err(Error::InvalidArgument(format!("limit needs a < 0, got {a}")));
    }
    Ok(per_cell_variance(a, eps) * eps / -(2.0 * a * eps).exp_m1())
}

/// Time-uniform bound `e^{2|a|ε} |a| ε² / 24` for `a < 0`.
pub fn lg_stable_bound(a: f64, eps: f64) -> Result<f64> {
    if !(a < 0.0) {
        return Err(Error::InvalidArgument(format!("stable bound needs a < 0, got {a}")));
    }
    Ok((2.0 * a.abs() * eps).exp() * a.abs() / 24.0 * eps * eps)
}

/// Lower and upper growth envelopes `c_± ε² (e^{2a t_n} − 1)` with
/// `c_± = (a/24) e^{±2aε}`, for `a > 0`.
pub fn unstable_bounds(a: f64, eps: f64, n: i64) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("growth bounds need a > 0, got {a}")));
    }
    if n < 0 {
        return Err(Error::InvalidArgument(format!("n must be >= 0, got {n}")));
    }
    let growth = (2.0 * a * eps * n as f64).exp_m1() * eps * eps * a / 24.0;
    Ok(((-2.0 * a * eps).exp() * growth, (2.0 * a * eps).exp() * growth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;
    use proptest::prelude::*;

    /// `(1/2ε²) ∬_{[0,ε]²} (e^{as} − e^{au})² du ds`, the per-cell factor
    /// written as a double integral.
    fn quadrature_v(a: f64, eps: f64) -> f64 {
        let scale = (a * eps).powi(2) / 12.0 * 2.0 * eps * eps;
        let inner = |s: f64| {
            let f = |u: f64| ((a * s).exp() - (a * u).exp()).powi(2);
            adaptive_simpson(&f, 0.0, eps, 1e-13 * scale / eps)
        };
        adaptive_simpson(&inner, 0.0, eps, 1e-12 * scale) / (2.0 * eps * eps)
    }

    #[test]
    fn reference_values() {
        let v = per_cell_variance(-1.0, 0.1);
        assert!((v - 7.547e-4).abs() < 1e-6, "{v}");
        let lim = exact_linear_variance_limit(-1.0, 0.1).unwrap();
        assert!((lim - 4.163e-4).abs() < 1e-6, "{lim}");
        let big = exact_linear_variance(-1.0, 0.1, 10_000).unwrap();
        assert!((big - lim).abs() < 1e-15);
        assert!((v - quadrature_v(-1.0, 0.1)).abs() < 1e-9 * v);
        assert!((lg_stable_bound(-1.0, 0.1).unwrap() - 0.2f64.exp() / 2400.0).abs() < 1e-16);
        assert!(lim <= lg_stable_bound(-1.0, 0.1).unwrap());
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(exact_linear_variance(-1.0, 0.1, 0).unwrap(), 0.0);
        assert_eq!(exact_linear_variance(0.0, 0.1, 7).unwrap(), 0.0);
        assert!(exact_linear_variance(-1.0, 0.1, -1).is_err());
        assert!(lg_stable_bound(0.0, 0.1).is_err());
        assert!(unstable_bounds(-1.0, 0.1, 3).is_err());
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        for &z in &[0.49, 0.5, 0.51, -0.49, -0.5, -0.51] {
            let q = f64::exp_m1(z) / z;
            let closed = (2.0 * z).exp_m1() / (2.0 * z) - q * q;
            assert!((per_cell_variance(z, 1.0) - closed).abs() < 1e-13 * closed);
        }
        for &(a, eps) in &[(3.0, 0.3), (-4.0, 0.25), (0.2, 0.01)] {
            let v = per_cell_variance(a, eps);
            assert!((v - quadrature_v(a, eps)).abs() < 1e-8 * v);
        }
    }

    #[test]
    fn unstable_example() {
        for n in [1i64, 10, 100, 500] {
            let e = exact_linear_variance(2.0, 0.01, n).unwrap();
            let (lo, hi) = unstable_bounds(2.0, 0.01, n).unwrap();
            assert!(lo <= e && e <= hi);
        }
    }

    #[test]
    fn stable_bound_limits() {
        let a: f64 = -1.5;
        let e = 1e-6;
        assert!((lg_stable_bound(a, e).unwrap() / (a.abs() * e * e / 24.0) - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn stable_bound_monotone_in_eps(a in -3.0f64..-0.01, e1 in 1e-3f64..0.5, e2 in 1e-3f64..0.5) {
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(lg_stable_bound(a, lo).unwrap() <= lg_stable_bound(a, hi).unwrap());
        }

        #[test]
        fn stable_variance_increases_to_bounded_limit(a in -3.0f64..-0.05, eps in 1e-3f64..0.3, n in 1i64..5000) {
            let v0 = exact_linear_variance(a, eps, n).unwrap();
            let v1 = exact_linear_variance(a, eps, n + 1).unwrap();
            prop_assert!(v1 >= v0);
            prop_assert!(v1 <= lg_stable_bound(a, eps).unwrap());
        }

        #[test]
        fn per_cell_factor_positive(a in -5.0f64..5.0, eps in 1e-4f64..0.5) {
            prop_assume!(a != 0.0);
            prop_assert!(per_cell_variance(a, eps) > 0.0);
        }
    }
}
