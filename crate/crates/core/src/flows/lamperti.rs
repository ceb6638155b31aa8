//! Lamperti change of variables `θ(x) = ∫_0^x dy/σ(y)` for scalar models.

use crate::error::{Error, Result};
use crate::models::SdeModel;
use crate::quad::adaptive_simpson;

const THETA_TOL: f64 = 1e-10;

/// Unit-diffusion model `dY = b^θ(Y) dt + ∘dB` with `Y = θ(X)` and
/// `b^θ = (b/σ)∘θ^{-1}`.
pub struct LampertiModel<M> {
    inner: M,
    sigma_lo: f64,
    sigma_hi: f64,
}

impl<M: SdeModel> LampertiModel<M> {
    pub fn inner(&self) -> &M {
        &self.inner
    }

    /// `(σ_−, σ_+)` observed on the certification box.
    pub fn sigma_bounds(&self) -> (f64, f64) {
        (self.sigma_lo, self.sigma_hi)
    }

    fn sigma(&self, x: f64) -> f64 {
        let mut s = [0.0];
        self.inner.diffusion(&[x], &mut s);
        s[0]
    }

    pub fn theta(&self, x: f64) -> f64 {
        adaptive_simpson(&|y| 1.0 / self.sigma(y), 0.0, x, THETA_TOL)
    }

    /// Inverse of [`theta`](Self::theta) by safeguarded Newton iteration.
    pub fn theta_inv(&self, y: f64) -> f64 {
        // θ is increasing with slope in [1/σ_+, 1/σ_−], which brackets the root
        let (a, b) = (y * self.sigma_lo, y * self.sigma_hi);
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        let mut width = (hi - lo).max(1.0);
        while self.theta(lo) > y {
            lo -= width;
            width *= 2.0;
        }
        while self.theta(hi) < y {
            hi += width;
            width *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.theta(x) - y;
            if g == 0.0 {
                return x;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = x - g * self.sigma(x);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

impl<M: SdeModel> SdeModel for LampertiModel<M> {
    fn id(&self) -> String {
        format!("lamperti({})", self.inner.id())
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, y: &[f64], out: &mut [f64]) {
        let x = self.theta_inv(y[0]);
        let mut b = [0.0];
        self.inner.drift(&[x], &mut b);
        out[0] = b[0] / self.sigma(x);
    }
    fn diffusion(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_jacobian(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// Builds the Lamperti-transformed model after checking `σ > 0` on a
/// `grid_n`-point grid of `bounds`.
pub fn lamperti_transform<M: SdeModel>(
    model: M,
    bounds: (f64, f64),
    grid_n: usize,
) -> Result<LampertiModel<M>> {
    if model.state_dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::Dimension(format!(
            "Lamperti transform needs r = r̄ = 1, got r = {}, r̄ = {}",
            model.state_dim(),
            model.noise_dim()
        )));
    }
    if grid_n < 2 || !(bounds.0 < bounds.1) {
        return Err(Error::InvalidArgument("need grid_n >= 2 and lo < hi".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut s = [0.0];
    for i in 0..grid_n {
        let x = bounds.0 + (bounds.1 - bounds.0) * i as f64 / (grid_n - 1) as f64;
        model.diffusion(&[x], &mut s);
        if !(s[0] > 0.0) {
            return Err(Error::NonPositiveDiffusion { point: x, value: s[0] });
        }
        lo = lo.min(s[0]);
        hi = hi.max(s[0]);
    }
    Ok(LampertiModel { inner: model, sigma_lo: lo, sigma_hi: hi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BoundedSigma1d, ScalarModel, StableNonlinear1d};

    #[test]
    fn unit_diffusion_is_identity() {
        let l = lamperti_transform(StableNonlinear1d, (-5.0, 5.0), 101).unwrap();
        for &x in &[-3.0, -0.5, 0.0, 1.25, 4.0] {
            assert!((l.theta(x) - x).abs() < 1e-12);
            assert!((l.theta_inv(x) - x).abs() < 1e-12);
            let mut a = [0.0];
            let mut b = [0.0];
            l.drift(&[x], &mut a);
            StableNonlinear1d.drift(&[x], &mut b);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scaling() {
        let m = ScalarModel::new("c2", |x| -x, |_| -1.0, |_| 2.0, |_| 0.0);
        let l = lamperti_transform(m, (-5.0, 5.0), 11).unwrap();
        for &y in &[-2.0, -0.3, 0.7, 3.0] {
            assert!((l.theta(2.0 * y) - y).abs() < 1e-12);
            let mut out = [0.0];
            l.drift(&[y], &mut out);
            assert!((out[0] + y).abs() < 1e-10);
        }
    }

    #[test]
    fn round_trip_bounded_sigma() {
        let l = lamperti_transform(BoundedSigma1d, (-5.0, 5.0), 1001).unwrap();
        let (lo, hi) = l.sigma_bounds();
        assert!((lo - 1.0).abs() < 1e-4 && (hi - 3.0).abs() < 1e-12);
        for i in 0..100 {
            let y = -3.0 + 6.0 * i as f64 / 99.0;
            assert!((l.theta(l.theta_inv(y)) - y).abs() < 1e-8);
        }
        // θ is odd and increasing
        assert!((l.theta(1.3) + l.theta(-1.3)).abs() < 1e-10);
        assert!(l.theta(0.5) < l.theta(0.6));
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let m = ScalarModel::new("c", |x| -x, |_| -1.0, |x| x, |_| 1.0);
        assert!(matches!(
            lamperti_transform(m, (-1.0, 1.0), 11),
            Err(Error::NonPositiveDiffusion { .. })
        ));
    }
}
