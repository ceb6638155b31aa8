//! The Wong–Zakai ODE flow `X̄`, the fine-mesh Itô reference flow `X`, the
//! deterministic flow `Z`, and tools built on them.

mod lamperti;

pub use lamperti::{lamperti_transform, LampertiModel};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::meshpaths::{
    ou_driver, polygonal_driver, sample_brownian, BrownianPath, DriverKind, DriverPath, TimeMesh,
};
use crate::models::{check_commutation, default_box, probe_points, CommutationReport, SdeModel};

/// Tolerance used by [`ito_flow_fine`] for the commutation check.
pub const COMMUTATION_TOL: f64 = 1e-8;

/// States recorded at a subset of fine nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub fine_indices: Vec<usize>,
    pub times: Vec<f64>,
    states: Vec<f64>,
}

impl Trajectory {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            fine_indices: Vec::new(),
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    fn push(&mut self, j: usize, t: f64, x: &[f64]) {
        self.fine_indices.push(j);
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
}

fn check_finite(x: &[f64], time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { time })
    }
}

/// Classical RK4 integrator for `x' = b(x) + σ(x) v` with a slope `v` held
/// constant over each fine cell.
pub struct WzIntegrator<'m, M: ?Sized> {
    model: &'m M,
    sig: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'m, M: SdeModel + ?Sized> WzIntegrator<'m, M> {
    pub fn new(model: &'m M) -> Self {
        let r = model.state_dim();
        Self {
            model,
            sig: vec![0.0; r * model.noise_dim()],
            k: std::array::from_fn(|_| vec![0.0; r]),
            tmp: vec![0.0; r],
        }
    }

    #[inline]
    fn field(model: &M, sig: &mut [f64], x: &[f64], slope: &[f64], out: &mut [f64]) {
        let r = x.len();
        model.drift(x, out);
        model.diffusion(x, sig);
        for (j, v) in slope.iter().enumerate() {
            for i in 0..r {
                out[i] += sig[j * r + i] * v;
            }
        }
    }

    /// One RK4 step of size `h` in place.
    #[inline]
    pub fn rk4_step(&mut self, x: &mut [f64], slope: &[f64], h: f64) {
        let r = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        Self::field(self.model, &mut self.sig, x, slope, k1);
        for i in 0..r {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        Self::field(self.model, &mut self.sig, &self.tmp, slope, k2);
        for i in 0..r {
            self.tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        Self::field(self.model, &mut self.sig, &self.tmp, slope, k3);
        for i in 0..r {
            self.tmp[i] = x[i] + h * k3[i];
        }
        Self::field(self.model, &mut self.sig, &self.tmp, slope, k4);
        for i in 0..r {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Integrates over the driver's whole mesh with `substeps` RK4 steps per
    /// fine cell, calling `observe(j, x)` at every fine node `j`.
    pub fn run<F>(
        &mut self,
        driver: &DriverPath,
        x0: &[f64],
        substeps: usize,
        state: &mut [f64],
        mut observe: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &[f64]),
    {
        check_dims(self.model, x0, driver.dim())?;
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be >= 1".into()));
        }
        let mesh = driver.mesh();
        let h = mesh.delta() / substeps as f64;
        state.copy_from_slice(x0);
        observe(0, state);
        for j in 0..mesh.fine_cells() {
            let slope = driver.slope(j);
            for _ in 0..substeps {
                self.rk4_step(state, slope, h);
            }
            check_finite(state, mesh.fine_time(j + 1))?;
            observe(j + 1, state);
        }
        Ok(())
    }
}

fn check_dims<M: SdeModel + ?Sized>(model: &M, x0: &[f64], noise_dim: usize) -> Result<()> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "x0 has dimension {}, model state dimension is {}",
            x0.len(),
            model.state_dim()
        )));
    }
    if noise_dim != model.noise_dim() {
        return Err(Error::Dimension(format!(
            "driver has dimension {noise_dim}, model noise dimension is {}",
            model.noise_dim()
        )));
    }
    Ok(())
}

/// `X̄` at the coarse nodes of the driver's mesh.
pub fn wz_flow<M: SdeModel + ?Sized>(
    model: &M,
    driver: &DriverPath,
    x0: &[f64],
    substeps: usize,
) -> Result<Trajectory> {
    let mesh = *driver.mesh();
    let mut traj = Trajectory::new(model.state_dim());
    let mut state = vec![0.0; model.state_dim()];
    WzIntegrator::new(model).run(driver, x0, substeps, &mut state, |j, x| {
        if j % mesh.refine() == 0 {
            traj.push(j, mesh.fine_time(j), x);
        }
    })?;
    Ok(traj)
}

/// Milstein scheme on the Itô form `dX = b_σ(X) dt + σ(X) dB` without Lévy
/// areas, so it requires the commutation condition.
pub struct MilsteinScheme<'m, M: ?Sized> {
    model: &'m M,
    drift: Vec<f64>,
    sig: Vec<f64>,
    jac: Vec<f64>,
    dir: Vec<f64>,
    commutation: CommutationReport,
}

impl<'m, M: SdeModel + ?Sized> MilsteinScheme<'m, M> {
    /// Checks commutation on a probe lattice of the default box and fails
    /// above [`COMMUTATION_TOL`].
    pub fn new(model: &'m M) -> Result<Self> {
        let r = model.state_dim();
        let points = probe_points(&default_box(r), if r <= 2 { 7 } else { 3 });
        Self::with_points(model, &points, COMMUTATION_TOL)
    }

    pub fn with_points(model: &'m M, points: &[Vec<f64>], tol: f64) -> Result<Self> {
        let commutation = check_commutation(model, points, tol)?.into_result()?;
        Ok(Self::unchecked(model, commutation))
    }

    pub(crate) fn unchecked(model: &'m M, commutation: CommutationReport) -> Self {
        let r = model.state_dim();
        let rb = model.noise_dim();
        Self {
            model,
            drift: vec![0.0; r],
            sig: vec![0.0; r * rb],
            jac: vec![0.0; r * r * rb],
            dir: vec![0.0; r * rb * rb],
            commutation,
        }
    }

    pub fn commutation(&self) -> &CommutationReport {
        &self.commutation
    }

    /// Writes the three Milstein terms at `x` for time step `dt` and noise
    /// increment `db`: `(b_σ dt, σ db, ½ Σ_{k,l} ∇_{σ_l}σ_k (db^k db^l − 1_{k=l} dt))`.
    pub fn terms_into(
        &mut self,
        x: &[f64],
        dt: f64,
        db: &[f64],
        drift_term: &mut [f64],
        gauss_term: &mut [f64],
        levy_term: &mut [f64],
    ) {
        let r = self.model.state_dim();
        let rb = self.model.noise_dim();
        self.model.drift(x, &mut self.drift);
        self.model.diffusion(x, &mut self.sig);
        let constant = self.model.constant_diffusion();
        if !constant {
            self.model.diffusion_jacobian(x, &mut self.jac);
            // dir[(k*rb + l)*r + i] = (J_k σ_l)^i
            for k in 0..rb {
                for l in 0..rb {
                    for i in 0..r {
                        let mut s = 0.0;
                        for c in 0..r {
                            s += self.jac[k * r * r + i * r + c] * self.sig[l * r + c];
                        }
                        self.dir[(k * rb + l) * r + i] = s;
                    }
                }
            }
        }
        for i in 0..r {
            let mut corr = 0.0;
            let mut gauss = 0.0;
            let mut levy = 0.0;
            for k in 0..rb {
                gauss += self.sig[k * r + i] * db[k];
                if !constant {
                    corr += self.dir[(k * rb + k) * r + i];
                    for l in 0..rb {
                        let w = db[k] * db[l] - if k == l { dt } else { 0.0 };
                        levy += self.dir[(k * rb + l) * r + i] * w;
                    }
                }
            }
            drift_term[i] = (self.drift[i] + 0.5 * corr) * dt;
            gauss_term[i] = gauss;
            levy_term[i] = 0.5 * levy;
        }
    }

    /// Adds one Milstein increment to `x`.
    #[inline]
    pub fn step(&mut self, x: &mut [f64], dt: f64, db: &[f64]) {
        let r = self.model.state_dim();
        let rb = self.model.noise_dim();
        self.model.drift(x, &mut self.drift);
        self.model.diffusion(x, &mut self.sig);
        if self.model.constant_diffusion() {
            for i in 0..r {
                let mut g = 0.0;
                for k in 0..rb {
                    g += self.sig[k * r + i] * db[k];
                }
                x[i] += self.drift[i] * dt + g;
            }
            return;
        }
        if r == 1 && rb == 1 {
            self.model.diffusion_jacobian(x, &mut self.jac);
            let s = self.sig[0];
            let ss = self.jac[0] * s;
            x[0] += (self.drift[0] + 0.5 * ss) * dt + s * db[0] + 0.5 * ss * (db[0] * db[0] - dt);
            return;
        }
        let mut d = vec![0.0; r];
        let mut g = vec![0.0; r];
        let mut l = vec![0.0; r];
        let xs = x.to_vec();
        self.terms_into(&xs, dt, db, &mut d, &mut g, &mut l);
        for i in 0..r {
            x[i] += d[i] + g[i] + l[i];
        }
    }

    /// Runs over the fine mesh of `bp`, calling `observe(j, x)` at every
    /// fine node.
    pub fn run<F>(&mut self, bp: &BrownianPath, x0: &[f64], state: &mut [f64], mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]),
    {
        check_dims(self.model, x0, bp.dim())?;
        let mesh = *bp.mesh();
        let dt = mesh.delta();
        let mut db = vec![0.0; bp.dim()];
        state.copy_from_slice(x0);
        observe(0, state);
        for j in 0..mesh.fine_cells() {
            bp.increment_into(j, &mut db);
            self.step(state, dt, &db);
            check_finite(state, mesh.fine_time(j + 1))?;
            observe(j + 1, state);
        }
        Ok(())
    }
}

/// Fine-mesh Milstein reference flow `X` at every fine node.
pub fn ito_flow_fine<M: SdeModel + ?Sized>(
    model: &M,
    bp: &BrownianPath,
    x0: &[f64],
) -> Result<Trajectory> {
    let mut scheme = MilsteinScheme::new(model)?;
    let mesh = *bp.mesh();
    let mut traj = Trajectory::new(model.state_dim());
    let mut state = vec![0.0; model.state_dim()];
    scheme.run(bp, x0, &mut state, |j, x| traj.push(j, mesh.fine_time(j), x))?;
    Ok(traj)
}

/// Second-order decomposition of one coarse step.
#[derive(Debug, Clone, PartialEq)]
pub struct MilsteinDecomposition {
    pub drift_term: Vec<f64>,
    pub gauss_term: Vec<f64>,
    pub levy_term: Vec<f64>,
    /// Observed increment minus the three terms; zero until
    /// [`with_increment`](Self::with_increment) is called.
    pub residual: Vec<f64>,
}

impl MilsteinDecomposition {
    pub fn predicted(&self) -> Vec<f64> {
        (0..self.drift_term.len())
            .map(|i| self.drift_term[i] + self.gauss_term[i] + self.levy_term[i])
            .collect()
    }

    pub fn with_increment(mut self, observed: &[f64]) -> Self {
        let p = self.predicted();
        self.residual = observed.iter().zip(&p).map(|(o, p)| o - p).collect();
        self
    }
}

/// The drift, Gaussian and Lévy terms at `(x, eps, chi)`, with
/// `chi = ΔB/√eps` the normalized coarse increment.
pub fn milstein_terms<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    eps: f64,
    chi: &[f64],
) -> MilsteinDecomposition {
    let r = model.state_dim();
    let mut scheme = MilsteinScheme::unchecked(
        model,
        CommutationReport {
            max_violation: 0.0,
            arg_point: x.to_vec(),
            arg_pair: (0, 0),
            tol: f64::INFINITY,
        },
    );
    let db: Vec<f64> = chi.iter().map(|c| c * eps.sqrt()).collect();
    let mut out = MilsteinDecomposition {
        drift_term: vec![0.0; r],
        gauss_term: vec![0.0; r],
        levy_term: vec![0.0; r],
        residual: vec![0.0; r],
    };
    scheme.terms_into(
        x,
        eps,
        &db,
        &mut out.drift_term,
        &mut out.gauss_term,
        &mut out.levy_term,
    );
    out
}

/// RK4 for the deterministic flow `Z' = b(Z)`, sampled at `times` (sorted,
/// non-negative). Each interval between requested times is split into
/// equal steps no longer than `h`.
pub fn det_flow<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    times: &[f64],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension("x0 does not match the model".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidArgument("times must be sorted and >= 0".into()));
    }
    let r = model.state_dim();
    let zero = vec![0.0; model.noise_dim()];
    let mut rk = WzIntegrator::new(model);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let n = (span / h).ceil().max(1.0) as usize;
            let step = span / n as f64;
            for _ in 0..n {
                rk.rk4_step(&mut x, &zero, step);
            }
            check_finite(&x, target)?;
        }
        t = target;
        out.push(x.clone());
    }
    debug_assert!(out.iter().all(|v| v.len() == r));
    Ok(out)
}

/// Finite-difference estimate of `‖∇Z_t(x0) e_i‖` per axis at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentEstimate {
    pub t: f64,
    pub per_axis: Vec<f64>,
    /// `e^{−λ_b t}`.
    pub envelope: f64,
}

impl TangentEstimate {
    pub fn max(&self) -> f64 {
        self.per_axis.iter().copied().fold(0.0, f64::max)
    }
}

/// `‖Z_t(x0 + δ e_i) − Z_t(x0)‖ / δ` for each axis `i`, with the reference
/// envelope `e^{−λ_b t}`.
pub fn tangent_decay<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    delta: f64,
    times: &[f64],
    h: f64,
    lambda_b: f64,
) -> Result<Vec<TangentEstimate>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be > 0".into()));
    }
    let base = det_flow(model, x0, times, h)?;
    let r = model.state_dim();
    let mut per_axis = vec![vec![0.0; times.len()]; r];
    for i in 0..r {
        let mut y = x0.to_vec();
        y[i] += delta;
        let shifted = det_flow(model, &y, times, h)?;
        for (k, (a, b)) in shifted.iter().zip(&base).enumerate() {
            let diff: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
            per_axis[i][k] = norm2(&diff) / delta;
        }
    }
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| TangentEstimate {
            t,
            per_axis: (0..r).map(|i| per_axis[i][k]).collect(),
            envelope: (-lambda_b * t).exp(),
        })
        .collect())
}

/// Fine indices of the observation grid: every `m / per_cell`-th fine node.
pub fn observation_nodes(mesh: &TimeMesh, per_cell: usize) -> Result<Vec<usize>> {
    let m = mesh.refine();
    if per_cell == 0 || m % per_cell != 0 {
        return Err(Error::InvalidArgument(format!(
            "observations per cell ({per_cell}) must divide m = {m}"
        )));
    }
    let stride = m / per_cell;
    Ok((0..=mesh.fine_cells()).step_by(stride).collect())
}

/// Both flows driven by one stored Brownian path.
#[derive(Debug, Clone)]
pub struct CoupledSample {
    pub x0: Vec<f64>,
    pub coarse_x: Trajectory,
    pub coarse_xbar: Trajectory,
    pub fine_x: Option<Trajectory>,
    pub driver: DriverPath,
    pub brownian: BrownianPath,
}

/// Samples path `(seed, path_id)` on `mesh`, builds the driver and runs the
/// reference and Wong–Zakai flows from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_sample<M: SdeModel + ?Sized>(
    model: &M,
    kind: DriverKind,
    mesh: &TimeMesh,
    x0: &[f64],
    seed: u64,
    path_id: u64,
    substeps: usize,
    keep_fine: bool,
) -> Result<CoupledSample> {
    let brownian = sample_brownian(mesh, model.noise_dim(), seed, path_id);
    let driver = match kind {
        DriverKind::Polygonal => polygonal_driver(&brownian, mesh)?,
        DriverKind::OrnsteinUhlenbeck => ou_driver(&brownian, mesh, mesh.eps())?,
    };
    let coarse_xbar = wz_flow(model, &driver, x0, substeps)?;
    let fine = ito_flow_fine(model, &brownian, x0)?;
    let m = mesh.refine();
    let mut coarse_x = Trajectory::new(model.state_dim());
    for k in (0..fine.len()).step_by(m) {
        coarse_x.push(fine.fine_indices[k], fine.times[k], fine.state(k));
    }
    Ok(CoupledSample {
        x0: x0.to_vec(),
        coarse_x,
        coarse_xbar,
        fine_x: keep_fine.then_some(fine),
        driver,
        brownian,
    })
}
