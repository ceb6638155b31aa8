use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::accumulator::{Estimate, Merge, MomentAccumulator};
use super::coupled::{checked_scheme, PathScratch};
use super::parallel::run_paths;
use super::rate::{rate_fit, RateFit};
use crate::error::{Error, Result};
use crate::flows::WzIntegrator;
use crate::meshpaths::{build_driver_into, sample_brownian_into, DriverKind, TimeMesh};
use crate::models::SdeModel;

/// Number of equiprobable bins for the normalized increment `χ`.
pub const CHI_BINS: usize = 20;

/// Settings shared by the residual and orthogonality experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    pub horizon: f64,
    pub refine: usize,
    pub substeps: usize,
    pub x0: Vec<f64>,
    pub paths: u64,
    pub seed: u64,
}

/// Interior bin edges `Φ^{-1}(k/CHI_BINS)`.
pub fn chi_bin_edges() -> Vec<f64> {
    let n = Normal::standard();
    (1..CHI_BINS).map(|k| n.inverse_cdf(k as f64 / CHI_BINS as f64)).collect()
}

#[inline]
fn bin_of(edges: &[f64], chi: f64) -> usize {
    edges.partition_point(|e| *e <= chi)
}

/// Sufficient statistics of `(χ, res)` pairs per `χ` bin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BinSums {
    n: f64,
    r: f64,
    r2: f64,
    c: f64,
    c2: f64,
    c4: f64,
    cr: f64,
    c2r: f64,
    c4r: f64,
    c2r2: f64,
    c4r2: f64,
}

impl BinSums {
    #[inline]
    fn push(&mut self, chi: f64, res: f64) {
        let c2 = chi * chi;
        let r2 = res * res;
        self.n += 1.0;
        self.r += res;
        self.r2 += r2;
        self.c += chi;
        self.c2 += c2;
        self.c4 += c2 * c2;
        self.cr += chi * res;
        self.c2r += c2 * res;
        self.c4r += c2 * c2 * res;
        self.c2r2 += c2 * r2;
        self.c4r2 += c2 * c2 * r2;
    }

    fn mean(&self) -> f64 {
        if self.n > 0.0 {
            self.r / self.n
        } else {
            0.0
        }
    }
}

impl Merge for BinSums {
    fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.r += o.r;
        self.r2 += o.r2;
        self.c += o.c;
        self.c2 += o.c2;
        self.c4 += o.c4;
        self.cr += o.cr;
        self.c2r += o.c2r;
        self.c4r += o.c4r;
        self.c2r2 += o.c2r2;
        self.c4r2 += o.c4r2;
    }
}

/// Mean and standard error from a sum and a sum of squares.
fn from_sums(n: f64, s: f64, s2: f64) -> Estimate {
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Estimate { mean, se: (var / n).sqrt() }
}

/// Binned statistics of the first residual coordinate against `χ^1`.
#[derive(Debug, Clone, PartialEq)]
struct Binned {
    bins: Vec<BinSums>,
}

impl Binned {
    fn new() -> Self {
        Self { bins: vec![BinSums::default(); CHI_BINS] }
    }

    fn total(&self) -> BinSums {
        let mut t = BinSums::default();
        for b in &self.bins {
            t.merge(b);
        }
        t
    }

    /// `E[χ^k (res − m(χ))] / ε` for `k ∈ {0, 1, 2}` with the binned
    /// conditional mean `m`.
    fn projected(&self, k: u32, eps: f64) -> Estimate {
        let n: f64 = self.bins.iter().map(|b| b.n).sum();
        let (mut s, mut s2) = (0.0, 0.0);
        for b in &self.bins {
            let m = b.mean();
            let (w, w2, wr, wr2) = match k {
                0 => (b.n, b.n, b.r, b.r2),
                1 => (b.c, b.c2, b.cr, b.c2r2),
                _ => (b.c2, b.c4, b.c2r, b.c4r2),
            };
            // Σ w(res − m) and Σ w²(res − m)²
            let w2r = match k {
                0 => b.r,
                1 => b.c2r,
                _ => b.c4r,
            };
            s += wr - m * w;
            s2 += wr2 - 2.0 * m * w2r + m * m * w2;
        }
        let e = from_sums(n, s, s2);
        Estimate { mean: e.mean / eps, se: e.se / eps }
    }

    /// `E[χ^k res] / ε` without projection.
    fn raw(&self, k: u32, eps: f64) -> Estimate {
        let t = self.total();
        let (s, s2) = match k {
            0 => (t.r, t.r2),
            1 => (t.cr, t.c2r2),
            _ => (t.c2r, t.c4r2),
        };
        let e = from_sums(t.n, s, s2);
        Estimate { mean: e.mean / eps, se: e.se / eps }
    }

    /// Root mean square of the binned conditional mean, with the sampling
    /// variance of each bin mean subtracted.
    fn conditional_mean_rms(&self) -> f64 {
        let n: f64 = self.bins.iter().map(|b| b.n).sum();
        let mut s = 0.0;
        for b in &self.bins {
            if b.n > 1.0 {
                let m = b.mean();
                let var = (b.r2 / b.n - m * m) * b.n / (b.n - 1.0);
                s += b.n * (m * m - var / b.n);
            }
        }
        (s / n).max(0.0).sqrt()
    }
}

impl Merge for Binned {
    fn merge(&mut self, o: &Self) {
        self.bins.merge(&o.bins);
    }
}

#[derive(Debug, Clone)]
struct ResidualAcc {
    x_sq: MomentAccumulator,
    xbar_sq: MomentAccumulator,
    x_mean: MomentAccumulator,
    xbar_mean: MomentAccumulator,
    x_bins: Binned,
}

impl ResidualAcc {
    fn new() -> Self {
        Self {
            x_sq: MomentAccumulator::new(),
            xbar_sq: MomentAccumulator::new(),
            x_mean: MomentAccumulator::new(),
            xbar_mean: MomentAccumulator::new(),
            x_bins: Binned::new(),
        }
    }
}

impl Merge for ResidualAcc {
    fn merge(&mut self, o: &Self) {
        self.x_sq.merge(&o.x_sq);
        self.xbar_sq.merge(&o.xbar_sq);
        self.x_mean.merge(&o.x_mean);
        self.xbar_mean.merge(&o.xbar_mean);
        self.x_bins.merge(&o.x_bins);
    }
}

/// Residual statistics at one `ε`, pooled over coarse steps and paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eps: f64,
    /// `E‖res‖²` for the reference flow.
    pub x_sq: Estimate,
    /// `E‖res‖²` for the Wong–Zakai flow.
    pub xbar_sq: Estimate,
    /// Mean of the first residual coordinate, reference flow.
    pub x_mean: Estimate,
    /// Mean of the first residual coordinate, Wong–Zakai flow.
    pub xbar_mean: Estimate,
    /// RMS of the `χ`-conditional mean of the reference residual.
    pub x_projected_rms: f64,
    pub samples: u64,
}

impl ResidualRow {
    pub fn x_l2(&self) -> f64 {
        self.x_sq.mean.sqrt()
    }

    pub fn xbar_l2(&self) -> f64 {
        self.xbar_sq.mean.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub model_id: String,
    pub rows: Vec<ResidualRow>,
    /// Fits of the L² norms and of `|mean|`; present with three or more `ε`.
    pub x_fit: Option<RateFit>,
    pub xbar_fit: Option<RateFit>,
    pub x_mean_fit: Option<RateFit>,
    pub x_projected_fit: Option<RateFit>,
}

fn residual_pass<M: SdeModel + ?Sized>(
    model: &M,
    cfg: &ResidualConfig,
    eps: f64,
    with_xbar: bool,
) -> Result<ResidualAcc> {
    let mesh = TimeMesh::new(cfg.horizon, eps, cfg.refine)?;
    let r = model.state_dim();
    let rb = model.noise_dim();
    if cfg.x0.len() != r {
        return Err(Error::Dimension(format!("x0 must have dimension {r}")));
    }
    if cfg.paths < 2 {
        return Err(Error::InvalidArgument("need at least 2 paths".into()));
    }
    let make_scheme = checked_scheme(model)?;
    let m = mesh.refine();
    let cells = mesh.coarse_cells();
    let edges = chi_bin_edges();
    let sqrt_eps = eps.sqrt();
    run_paths(
        cfg.paths,
        ResidualAcc::new,
        || {
            (
                PathScratch::new(&mesh, DriverKind::Polygonal, r, rb),
                make_scheme(),
                WzIntegrator::new(model),
                Vec::<f64>::new(),
                [vec![0.0; r], vec![0.0; r], vec![0.0; r]],
                vec![0.0; rb],
                vec![0.0; rb],
            )
        },
        |acc, (w, scheme, wz, xbar_nodes, terms, db, chi), p| {
            sample_brownian_into(&mut w.bp, &mesh, rb, cfg.seed, p);
            w.obs.clear();
            let obs = &mut w.obs;
            scheme.run(&w.bp, &cfg.x0, &mut w.state, |j, x| {
                if j % m == 0 {
                    obs.extend_from_slice(x);
                }
            })?;
            if with_xbar {
                build_driver_into(DriverKind::Polygonal, &mut w.driver, &w.bp, &mesh)?;
                xbar_nodes.clear();
                wz.run(&w.driver, &cfg.x0, cfg.substeps, &mut w.state, |j, x| {
                    if j % m == 0 {
                        xbar_nodes.extend_from_slice(x);
                    }
                })?;
            }
            for n in 0..cells {
                let (b0, b1) = (w.bp.coarse_value(n), w.bp.coarse_value(n + 1));
                for i in 0..rb {
                    db[i] = b1[i] - b0[i];
                    chi[i] = db[i] / sqrt_eps;
                }
                let [dt, gt, lt] = terms;
                for (series, is_x) in [(&w.obs, true), (&*xbar_nodes, false)] {
                    if !is_x && !with_xbar {
                        continue;
                    }
                    let x = &series[n * r..(n + 1) * r];
                    let x1 = &series[(n + 1) * r..(n + 2) * r];
                    scheme.terms_into(x, eps, db, dt, gt, lt);
                    let mut sq = 0.0;
                    let mut first = 0.0;
                    for i in 0..r {
                        let res = x1[i] - x[i] - dt[i] - gt[i] - lt[i];
                        sq += res * res;
                        if i == 0 {
                            first = res;
                        }
                    }
                    if is_x {
                        acc.x_sq.push(sq);
                        acc.x_mean.push(first);
                        acc.x_bins.bins[bin_of(&edges, chi[0])].push(chi[0], first);
                    } else {
                        acc.xbar_sq.push(sq);
                        acc.xbar_mean.push(first);
                    }
                }
            }
            Ok(())
        },
    )
}

fn fit_if_possible(eps: &[f64], vals: &[f64]) -> Option<RateFit> {
    (eps.len() >= 3 && vals.iter().all(|v| *v > 0.0))
        .then(|| rate_fit(eps, vals).ok())
        .flatten()
}

/// Residual of the three-term expansion over each coarse step, for the
/// reference flow and the polygonal Wong–Zakai flow.
pub fn milstein_residual_experiment<M: SdeModel + ?Sized>(
    model: &M,
    eps_list: &[f64],
    cfg: &ResidualConfig,
) -> Result<ResidualReport> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    let mut rows = Vec::new();
    for &eps in eps_list {
        let acc = residual_pass(model, cfg, eps, true)?;
        rows.push(ResidualRow {
            eps,
            x_sq: acc.x_sq.estimate(),
            xbar_sq: acc.xbar_sq.estimate(),
            x_mean: acc.x_mean.estimate(),
            xbar_mean: acc.xbar_mean.estimate(),
            x_projected_rms: acc.x_bins.conditional_mean_rms(),
            samples: acc.x_sq.count(),
        });
    }
    let col = |f: &dyn Fn(&ResidualRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(ResidualReport {
        model_id: model.id(),
        x_fit: fit_if_possible(eps_list, &col(&|r| r.x_l2())),
        xbar_fit: fit_if_possible(eps_list, &col(&|r| r.xbar_l2())),
        x_mean_fit: fit_if_possible(eps_list, &col(&|r| r.x_mean.mean.abs())),
        x_projected_fit: fit_if_possible(eps_list, &col(&|r| r.x_projected_rms)),
        rows,
    })
}

/// One moment of the extracted martingale increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoEntry {
    pub name: String,
    pub value: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityTable {
    pub model_id: String,
    pub eps: f64,
    pub samples: u64,
    /// `E[ΔM]`, `E[χΔM]`, `E[χ²ΔM]`, `E[(χ²−1)ΔM]` with
    /// `ΔM = (res − m(χ))/ε`, then the unprojected `E[χ^k res/ε]`.
    pub entries: Vec<OrthoEntry>,
}

impl OrthogonalityTable {
    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }
}

/// Moments of `χ^k ΔM` with `ΔM` extracted from the reference residual by
/// subtracting its binned conditional mean given `χ`. Scalar models only.
pub fn orthogonality_check<M: SdeModel + ?Sized>(
    model: &M,
    eps: f64,
    cfg: &ResidualConfig,
) -> Result<OrthogonalityTable> {
    if model.state_dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::Dimension("orthogonality check needs r = r̄ = 1".into()));
    }
    let acc = residual_pass(model, cfg, eps, false)?;
    let b = &acc.x_bins;
    let p0 = b.projected(0, eps);
    let p1 = b.projected(1, eps);
    let p2 = b.projected(2, eps);
    let entries = vec![
        ("E[dM]", p0),
        ("E[chi dM]", p1),
        ("E[chi^2 dM]", p2),
        ("E[(chi^2-1) dM]", Estimate { mean: p2.mean - p0.mean, se: p2.se }),
        ("E[res/eps]", b.raw(0, eps)),
        ("E[chi res/eps]", b.raw(1, eps)),
        ("E[chi^2 res/eps]", b.raw(2, eps)),
    ];
    Ok(OrthogonalityTable {
        model_id: model.id(),
        eps,
        samples: acc.x_sq.count(),
        entries: entries
            .into_iter()
            .map(|(n, v)| OrthoEntry { name: n.into(), value: v })
            .collect(),
    })
}
