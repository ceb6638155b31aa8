use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares power law `err ≈ e^{intercept} ε^{slope}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub eps_list: Vec<f64>,
    pub err_list: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Euclidean norm of the log-residuals.
    pub residual_norm: f64,
    /// Standard error of the slope from the regression residuals (0 for
    /// exactly collinear points).
    pub slope_se: f64,
}

/// Fits `log err = intercept + slope · log ε`.
pub fn rate_fit(eps_list: &[f64], err_list: &[f64]) -> Result<RateFit> {
    if eps_list.len() != err_list.len() {
        return Err(Error::InvalidArgument("eps and err lists differ in length".into()));
    }
    if eps_list.len() < 3 {
        return Err(Error::InvalidArgument("rate fit needs at least 3 points".into()));
    }
    if eps_list.iter().chain(err_list).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("rate fit needs positive finite values".into()));
    }
    let xs: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err_list.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct eps values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        eps_list: eps_list.to_vec(),
        err_list: err_list.to_vec(),
        slope,
        intercept,
        residual_norm: rss.sqrt(),
        slope_se: (rss / (n - 2.0) / sxx).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

    #[test]
    fn exact_power_laws() {
        let f = rate_fit(&EPS, &EPS).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        let roots: Vec<f64> = EPS.iter().map(|e| e.sqrt()).collect();
        let f = rate_fit(&EPS, &roots).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!(f.residual_norm < 1e-12);
    }

    #[test]
    fn noisy_three_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let err: Vec<f64> = EPS
                .iter()
                .map(|e| 2.5 * e.powf(1.5) * (1.0 + rng.random_range(-0.01..0.01)))
                .collect();
            let f = rate_fit(&EPS, &err).unwrap();
            assert!((1.45..=1.55).contains(&f.slope), "{}", f.slope);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(rate_fit(&EPS[..2], &EPS[..2]).is_err());
        assert!(rate_fit(&EPS, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(rate_fit(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).is_err());
    }
}
