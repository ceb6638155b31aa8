//! Wong–Zakai integrals against the smooth driver, the Itô sum, the
//! Stratonovich correction and the remainder experiment for discounted
//! kernels `F_{s,t}(x) = e^{−λ(t−s)} g(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{certify_model, rate_fit, run_paths, Estimate, MomentAccumulator, RateFit};
use crate::flows::WzIntegrator;
use crate::meshpaths::{
    build_driver_into, sample_brownian_into, BrownianPath, DriverKind, DriverPath, TimeMesh,
};
use crate::models::SdeModel;
use crate::spectral::{CertReport, Condition};

/// `e_λ(t) = (1 − e^{−λt})/λ`, with `e_0(t) = t`.
pub fn e_lambda(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        -(-lambda * t).exp_m1() / lambda
    }
}

/// Scalar spatial factor `g` of a discounted kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFn {
    Sin,
    Constant(f64),
    Identity,
}

impl KernelFn {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            KernelFn::Sin => x.sin(),
            KernelFn::Constant(c) => *c,
            KernelFn::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            KernelFn::Sin => x.cos(),
            KernelFn::Constant(_) => 0.0,
            KernelFn::Identity => 1.0,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(KernelFn::Sin),
            "one" | "constant" => Some(KernelFn::Constant(1.0)),
            "identity" => Some(KernelFn::Identity),
            _ => None,
        }
    }
}

/// `F_{s,t}(x) = e^{−λ(t−s)} g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedKernel {
    pub lambda: f64,
    pub g: KernelFn,
}

impl DiscountedKernel {
    pub fn new(lambda: f64, g: KernelFn) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda, g })
    }

    pub fn eval(&self, s: f64, t: f64, x: f64) -> f64 {
        (-self.lambda * (t - s)).exp() * self.g.value(x)
    }
}

fn check_scalar_driver(dim: usize, len: usize, nodes: usize) -> Result<()> {
    if dim != 1 {
        return Err(Error::Dimension("integrals need a scalar driver".into()));
    }
    if len != nodes {
        return Err(Error::Dimension(format!("expected {nodes} integrand values, got {len}")));
    }
    Ok(())
}

/// `∫_0^T f_s B̄'_s ds` from integrand values at the fine nodes: the
/// integrand is averaged over each fine cell and multiplied by the stored
/// slope.
pub fn wz_riemann_integral(f: &[f64], driver: &DriverPath) -> Result<f64> {
    let mesh = driver.mesh();
    check_scalar_driver(driver.dim(), f.len(), mesh.fine_nodes())?;
    let delta = mesh.delta();
    Ok((0..mesh.fine_cells())
        .map(|j| 0.5 * (f[j] + f[j + 1]) * driver.slope(j)[0] * delta)
        .sum())
}

/// Left-endpoint Itô sum `Σ_j f_j ΔB_j`.
pub fn ito_integral(f: &[f64], bp: &BrownianPath) -> Result<f64> {
    let mesh = bp.mesh();
    check_scalar_driver(bp.dim(), f.len(), mesh.fine_nodes())?;
    Ok((0..mesh.fine_cells()).map(|j| f[j] * bp.increment(j, 0)).sum())
}

/// `½ ∫_0^T σ(X_s) f'(X_s) ds` by the trapezoid rule along the fine path.
pub fn strato_correction<M: SdeModel + ?Sized>(
    model: &M,
    path: &[f64],
    df: impl Fn(f64) -> f64,
    mesh: &TimeMesh,
) -> Result<f64> {
    if model.state_dim() != 1 {
        return Err(Error::Dimension("correction needs a scalar model".into()));
    }
    check_scalar_driver(model.noise_dim(), path.len(), mesh.fine_nodes())?;
    let mut s = [0.0];
    let h: Vec<f64> = path
        .iter()
        .map(|&x| {
            model.diffusion(&[x], &mut s);
            s[0] * df(x)
        })
        .collect();
    let delta = mesh.delta();
    Ok(0.5 * (0..mesh.fine_cells()).map(|j| 0.5 * (h[j] + h[j + 1]) * delta).sum::<f64>())
}

/// The three integrals at one horizon and their remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralSample {
    pub t: f64,
    pub wz_integral: f64,
    pub ito_integral: f64,
    pub correction: f64,
    /// `wz_integral − ito_integral − correction`.
    pub remainder: f64,
}

/// Path along which the Wong–Zakai integral evaluates its integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrandSource {
    /// Along the reference flow `X`.
    Reference,
    /// Along the Wong–Zakai flow `X̄`.
    WongZakai,
}

/// Discounted integrals of one path at the fine nodes `t_nodes` (sorted).
/// `wz_path` feeds the Wong–Zakai integral; `ref_path` feeds the Itô sum
/// and the correction.
#[allow(clippy::too_many_arguments)]
pub fn integral_samples<M: SdeModel + ?Sized>(
    model: &M,
    kernel: &DiscountedKernel,
    bp: &BrownianPath,
    driver: &DriverPath,
    wz_path: &[f64],
    ref_path: &[f64],
    t_nodes: &[usize],
    out: &mut Vec<IntegralSample>,
) -> Result<()> {
    let mesh = bp.mesh();
    let nodes = mesh.fine_nodes();
    check_scalar_driver(bp.dim(), wz_path.len(), nodes)?;
    check_scalar_driver(driver.dim(), ref_path.len(), nodes)?;
    if t_nodes.windows(2).any(|w| w[1] < w[0]) || t_nodes.last().is_some_and(|&j| j >= nodes) {
        return Err(Error::InvalidArgument("horizons must be sorted fine nodes".into()));
    }
    out.clear();
    let delta = mesh.delta();
    let decay = (-kernel.lambda * delta).exp();
    let mut sig = [0.0];
    let h = |x: f64, s: &mut [f64; 1]| {
        model.diffusion(&[x], s);
        s[0] * kernel.g.derivative(x)
    };
    let (mut wz, mut ito, mut corr) = (0.0, 0.0, 0.0);
    let mut g_wz = kernel.g.value(wz_path[0]);
    let mut g_ref = kernel.g.value(ref_path[0]);
    let mut h_ref = h(ref_path[0], &mut sig);
    let mut next = t_nodes.iter().peekable();
    for j in 0..=mesh.fine_cells() {
        while next.peek() == Some(&&j) {
            next.next();
            out.push(IntegralSample {
                t: mesh.fine_time(j),
                wz_integral: wz,
                ito_integral: ito,
                correction: corr,
                remainder: wz - ito - corr,
            });
        }
        if j == mesh.fine_cells() || next.peek().is_none() {
            break;
        }
        let g_wz1 = kernel.g.value(wz_path[j + 1]);
        let g_ref1 = kernel.g.value(ref_path[j + 1]);
        let h_ref1 = h(ref_path[j + 1], &mut sig);
        wz = decay * wz + 0.5 * (decay * g_wz + g_wz1) * driver.slope(j)[0] * delta;
        ito = decay * (ito + g_ref * bp.increment(j, 0));
        corr = decay * corr + 0.25 * (decay * h_ref + h_ref1) * delta;
        g_wz = g_wz1;
        g_ref = g_ref1;
        h_ref = h_ref1;
    }
    Ok(())
}

/// Settings of [`remainder_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderConfig {
    pub kernel: DiscountedKernel,
    pub eps_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub x0: f64,
    pub paths: u64,
    pub refine: usize,
    pub substeps: usize,
    pub seed: u64,
    pub source: IntegrandSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub eps: f64,
    pub t: f64,
    /// `E R_t²`.
    pub sq: Estimate,
    pub mean: Estimate,
    /// `√(c-free envelope)`: `√ε (1 + e_λ(t) ∨ e_{2λ}(t)^{1/2})(1 + |x0|)`
    /// for the reference source, `(1 + t) √ε (1 + |x0|)` otherwise.
    pub bound_envelope: f64,
    pub e_lambda_t: f64,
}

impl RemainderRow {
    /// `√(E R²)`.
    pub fn l2(&self) -> f64 {
        self.sq.mean.sqrt()
    }

    /// Delta-method standard error of [`l2`](Self::l2).
    pub fn l2_se(&self) -> f64 {
        let l = self.l2();
        if l > 0.0 {
            self.sq.se / (2.0 * l)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub model_id: String,
    pub kernel: DiscountedKernel,
    pub source: IntegrandSource,
    pub rows: Vec<RemainderRow>,
    /// Rate fit in `ε` of the L² remainder, one per horizon (three or more `ε`).
    pub fits: Vec<(f64, RateFit)>,
    pub certificate: CertReport,
}

impl RemainderReport {
    pub fn row(&self, eps: f64, t: f64) -> Option<&RemainderRow> {
        self.rows
            .iter()
            .find(|r| (r.eps - eps).abs() <= 1e-12 * eps && (r.t - t).abs() <= 1e-9 * t.max(1.0))
    }

    pub fn fit(&self, t: f64) -> Option<&RateFit> {
        self.fits.iter().find(|(s, _)| (s - t).abs() <= 1e-9 * t.max(1.0)).map(|(_, f)| f)
    }
}

fn envelope(source: IntegrandSource, lambda: f64, eps: f64, t: f64, x0: f64) -> f64 {
    let base = eps.sqrt() * (1.0 + x0.abs());
    match source {
        IntegrandSource::Reference => {
            base * (1.0 + e_lambda(lambda, t).max(e_lambda(2.0 * lambda, t).sqrt()))
        }
        IntegrandSource::WongZakai => base * (1.0 + t),
    }
}

/// L² remainder of the discounted Wong–Zakai integral per `(ε, t)`.
/// Requires `H_{bσ}` on the default box. Scalar models only.
pub fn remainder_experiment<M: SdeModel + ?Sized>(
    model: &M,
    cfg: &RemainderConfig,
) -> Result<RemainderReport> {
    if model.state_dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::Dimension("remainder experiment needs r = r̄ = 1".into()));
    }
    if cfg.eps_list.is_empty() || cfg.t_list.is_empty() {
        return Err(Error::InvalidArgument("eps and t lists must be non-empty".into()));
    }
    if cfg.paths < 2 {
        return Err(Error::InvalidArgument("need at least 2 paths".into()));
    }
    let mut t_list = cfg.t_list.clone();
    t_list.sort_by(f64::total_cmp);
    let horizon = *t_list.last().expect("non-empty");
    let certificate = certify_model(model, Condition::HbSigma, None, None)?;
    let make_scheme = crate::estimators::checked_scheme(model)?;
    let mut rows = Vec::new();
    for &eps in &cfg.eps_list {
        let mesh = TimeMesh::new(horizon, eps, cfg.refine)?;
        let mut t_nodes = Vec::with_capacity(t_list.len());
        for &t in &t_list {
            let k = mesh.coarse_index_of(t).ok_or_else(|| {
                Error::InvalidArgument(format!("t = {t} is not a coarse node for eps = {eps}"))
            })?;
            t_nodes.push(mesh.fine_index(k));
        }
        let nt = t_nodes.len();
        let acc = run_paths(
            cfg.paths,
            || vec![MomentAccumulator::new(); 2 * nt],
            || {
                (
                    BrownianPath::empty(mesh, 1),
                    DriverPath::empty(DriverKind::Polygonal, mesh, 1),
                    make_scheme(),
                    WzIntegrator::new(model),
                    Vec::<f64>::new(),
                    Vec::<f64>::new(),
                    Vec::new(),
                    [0.0],
                )
            },
            |acc, (bp, d, scheme, wz, xr, xw, samples, state), p| {
                sample_brownian_into(bp, &mesh, 1, cfg.seed, p);
                build_driver_into(DriverKind::Polygonal, d, bp, &mesh)?;
                xr.clear();
                scheme.run(bp, &[cfg.x0], state, |_, x| xr.push(x[0]))?;
                let wz_path: &[f64] = match cfg.source {
                    IntegrandSource::Reference => xr,
                    IntegrandSource::WongZakai => {
                        xw.clear();
                        wz.run(d, &[cfg.x0], cfg.substeps, state, |_, x| xw.push(x[0]))?;
                        xw
                    }
                };
                integral_samples(model, &cfg.kernel, bp, d, wz_path, xr, &t_nodes, samples)?;
                for (i, s) in samples.iter().enumerate() {
                    acc[2 * i].push(s.remainder * s.remainder);
                    acc[2 * i + 1].push(s.remainder);
                }
                Ok(())
            },
        )?;
        for (i, &t) in t_list.iter().enumerate() {
            rows.push(RemainderRow {
                eps,
                t,
                sq: acc[2 * i].estimate(),
                mean: acc[2 * i + 1].estimate(),
                bound_envelope: envelope(cfg.source, cfg.kernel.lambda, eps, t, cfg.x0),
                e_lambda_t: e_lambda(cfg.kernel.lambda, t),
            });
        }
    }
    let mut fits = Vec::new();
    if cfg.eps_list.len() >= 3 {
        for &t in &t_list {
            let pts: Vec<&RemainderRow> = rows.iter().filter(|r| r.t == t).collect();
            let eps: Vec<f64> = pts.iter().map(|r| r.eps).collect();
            let err: Vec<f64> = pts.iter().map(|r| r.l2()).collect();
            if let Ok(f) = rate_fit(&eps, &err) {
                fits.push((t, f));
            }
        }
    }
    Ok(RemainderReport {
        model_id: model.id(),
        kernel: cfg.kernel,
        source: cfg.source,
        rows,
        fits,
        certificate,
    })
}
