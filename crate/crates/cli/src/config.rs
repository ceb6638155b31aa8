//! TOML experiment configuration.
//!
//! All keys live at the top level; see `docs/config.md` for the schema.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use toml::{Table, Value};
use wz_core::spectral::Condition;
use wz_core::wzint::{IntegrandSource, KernelFn};
use wz_core::{builtin_models, DriverKind, SdeModel, TimeMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DriversCheck,
    SpectralCert,
    LinearExact,
    CoupledError,
    Rates,
    MilsteinResidual,
    Orthogonality,
    WzIntegral,
    MomentsUniform,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::DriversCheck,
        Experiment::SpectralCert,
        Experiment::LinearExact,
        Experiment::CoupledError,
        Experiment::Rates,
        Experiment::MilsteinResidual,
        Experiment::Orthogonality,
        Experiment::WzIntegral,
        Experiment::MomentsUniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::DriversCheck => "drivers-check",
            Experiment::SpectralCert => "spectral-cert",
            Experiment::LinearExact => "linear-exact",
            Experiment::CoupledError => "coupled-error",
            Experiment::Rates => "rates",
            Experiment::MilsteinResidual => "milstein-residual",
            Experiment::Orthogonality => "orthogonality",
            Experiment::WzIntegral => "wz-integral",
            Experiment::MomentsUniform => "moments-uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    pub params: Vec<f64>,
}

impl ModelSpec {
    pub fn build(&self) -> wz_core::Result<Box<dyn SdeModel>> {
        builtin_models().build(&self.name, &self.params)
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Absent only for `drivers-check`.
    pub model: Option<ModelSpec>,
    pub driver: DriverKind,
    pub eps_list: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub m: usize,
    pub substeps: usize,
    pub x0_panel: Vec<Vec<f64>>,
    pub paths: u64,
    pub moments: Vec<u32>,
    pub seed: u64,
    pub cert_box: Option<Vec<(f64, f64)>>,
    pub grid: Option<usize>,
    pub obs_per_cell: usize,
    pub t_list: Vec<f64>,
    pub lambda: f64,
    pub kernel: KernelFn,
    pub source: IntegrandSource,
    pub times: Vec<f64>,
    pub conditions: Vec<Condition>,
    pub slope_window: Option<(f64, f64)>,
    pub mean_slope_min: f64,
    pub growth_tol: f64,
    pub plateau_tol: f64,
    pub se_gate: f64,
    /// Output directory; not part of the config hash.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Every problem found in a config text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

const KEYS: &[&str] = &[
    "experiment",
    "model",
    "params",
    "a",
    "driver",
    "eps",
    "T",
    "m",
    "substeps",
    "x0",
    "paths",
    "moments",
    "seed",
    "box",
    "grid",
    "obs_per_cell",
    "t_list",
    "lambda",
    "kernel",
    "source",
    "times",
    "conditions",
    "slope_window",
    "mean_slope_min",
    "growth_tol",
    "plateau_tol",
    "se_gate",
    "out",
];

struct Reader<'a> {
    table: &'a Table,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn float(&mut self, key: &str) -> Option<f64> {
        let v = self.table.get(key)?;
        match as_f64(v) {
            Some(x) => Some(x),
            None => {
                self.errs.push(format!("`{key}` must be a number"));
                None
            }
        }
    }

    fn count(&mut self, key: &str) -> Option<u64> {
        let v = self.table.get(key)?;
        match v.as_integer() {
            Some(n) if n > 0 => Some(n as u64),
            Some(n) => {
                self.errs.push(format!("`{key}` must be positive, got {n}"));
                None
            }
            None => {
                self.errs.push(format!("`{key}` must be an integer"));
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        let v = self.table.get(key)?;
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.errs.push(format!("`{key}` must be a string"));
                None
            }
        }
    }

    /// A number or an array of numbers.
    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.table.get(key)?;
        if let Some(x) = as_f64(v) {
            return Some(vec![x]);
        }
        match v.as_array().map(|a| a.iter().map(as_f64).collect::<Option<Vec<_>>>()) {
            Some(Some(xs)) => Some(xs),
            _ => {
                self.errs.push(format!("`{key}` must be a number or an array of numbers"));
                None
            }
        }
    }

    /// `[[a, b], ...]`
    fn nested(&mut self, key: &str) -> Option<Vec<Vec<f64>>> {
        let v = self.table.get(key)?;
        let parsed = v.as_array().and_then(|rows| {
            rows.iter()
                .map(|r| r.as_array().and_then(|xs| xs.iter().map(as_f64).collect::<Option<Vec<_>>>()))
                .collect::<Option<Vec<_>>>()
        });
        if parsed.is_none() {
            self.errs.push(format!("`{key}` must be an array of number arrays"));
        }
        parsed
    }

    fn strings(&mut self, key: &str) -> Option<Vec<String>> {
        let v = self.table.get(key)?;
        if let Some(s) = v.as_str() {
            return Some(vec![s.to_string()]);
        }
        match v.as_array().map(|a| a.iter().map(|x| x.as_str().map(String::from)).collect::<Option<Vec<_>>>()) {
            Some(Some(xs)) => Some(xs),
            _ => {
                self.errs.push(format!("`{key}` must be a string or an array of strings"));
                None
            }
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(n) => Some(*n as f64),
        _ => None,
    }
}

fn default_times(driver: DriverKind, eps: f64, horizon: f64) -> Vec<f64> {
    match driver {
        // five positions inside the first cell
        DriverKind::Polygonal => [0.125, 0.25, 0.5, 0.625, 0.875].iter().map(|u| u * eps).collect(),
        DriverKind::OrnsteinUhlenbeck => vec![eps, 5.0 * eps, horizon],
    }
}

fn default_slope_window(e: Experiment) -> Option<(f64, f64)> {
    match e {
        Experiment::Rates | Experiment::WzIntegral => Some((0.4, 0.6)),
        Experiment::MilsteinResidual => Some((1.3, 1.7)),
        _ => None,
    }
}

/// Parses and validates a config. `experiment` may be supplied by the
/// caller (the CLI positional); it must agree with the file if both are set.
pub fn parse_config(text: &str, experiment: Option<Experiment>) -> Result<ExperimentConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        violations: vec![format!("TOML syntax: {}", e.message())],
    })?;
    let mut rd = Reader { table: &table, errs: Vec::new() };

    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            rd.errs.push(format!("unknown key `{key}`"));
        }
    }

    let exp = match (rd.string("experiment"), experiment) {
        (Some(name), given) => match Experiment::parse(&name) {
            Some(e) if given.is_none_or(|g| g == e) => Some(e),
            Some(e) => {
                rd.errs.push(format!("config is for `{e}` but `{}` was requested", given.unwrap()));
                None
            }
            None => {
                let valid: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                rd.errs.push(format!("unknown experiment `{name}`; valid: {}", valid.join(", ")));
                None
            }
        },
        (None, Some(e)) => Some(e),
        (None, None) => {
            rd.errs.push("missing `experiment`".into());
            None
        }
    };

    // model: `model` + `params`, or the `a = ...` shorthand for linear1d
    let a = rd.float("a");
    let model_name = rd.string("model");
    let params = rd.floats("params");
    let model = match (model_name, a) {
        (Some(_), Some(_)) if params.is_some() => {
            rd.errs.push("give either `params` or `a`, not both".into());
            None
        }
        (Some(name), Some(a)) => Some(ModelSpec { name, params: vec![a] }),
        (Some(name), None) => Some(ModelSpec { name, params: params.unwrap_or_default() }),
        (None, Some(a)) => Some(ModelSpec { name: "linear1d".into(), params: vec![a] }),
        (None, None) => {
            if exp.is_some_and(|e| e != Experiment::DriversCheck) {
                rd.errs.push("missing `model` (or the `a` shorthand for linear1d)".into());
            }
            None
        }
    };
    let built = model.as_ref().and_then(|m| match m.build() {
        Ok(b) => Some(b),
        Err(e) => {
            rd.errs.push(e.to_string());
            None
        }
    });

    let driver = match rd.string("driver").as_deref() {
        None | Some("polygonal") => DriverKind::Polygonal,
        Some("ou") => DriverKind::OrnsteinUhlenbeck,
        Some(other) => {
            rd.errs.push(format!("unknown driver `{other}`; valid: polygonal, ou"));
            DriverKind::Polygonal
        }
    };

    let eps_list = rd.floats("eps").unwrap_or_default();
    if eps_list.is_empty() && rd.table.get("eps").is_none() {
        rd.errs.push("missing `eps`".into());
    }
    let horizon = rd.float("T");
    if horizon.is_none() && rd.table.get("T").is_none() {
        rd.errs.push("missing `T`".into());
    }
    let m = rd.count("m").unwrap_or(64) as usize;
    let substeps = rd.count("substeps").unwrap_or(1) as usize;
    let paths = rd.count("paths").unwrap_or(1000);
    let seed = match rd.table.get("seed") {
        None => 0,
        Some(v) => match v.as_integer() {
            Some(n) if n >= 0 => n as u64,
            _ => {
                rd.errs.push("`seed` must be a non-negative integer".into());
                0
            }
        },
    };
    let obs_per_cell = rd.count("obs_per_cell").unwrap_or(1) as usize;

    if let Some(t) = horizon {
        if !(t > 0.0) {
            rd.errs.push(format!("`T` must be positive, got {t}"));
        }
        for &e in &eps_list {
            if !(e > 0.0) {
                rd.errs.push(format!("`eps` must be positive, got {e}"));
            } else if t > 0.0 {
                if let Err(err) = TimeMesh::new(t, e, m) {
                    rd.errs.push(err.to_string());
                }
            }
        }
    }
    if m > 0 && (!m.is_power_of_two() || obs_per_cell > m || m % obs_per_cell != 0) {
        rd.errs.push(format!("`obs_per_cell` = {obs_per_cell} must divide m = {m}"));
    }

    let r = built.as_ref().map(|b| b.state_dim());
    let x0_panel = match rd.table.get("x0") {
        None => vec![vec![0.0; r.unwrap_or(1)]],
        Some(Value::Array(items)) if items.iter().all(|v| v.is_array()) => rd.nested("x0").unwrap_or_default(),
        Some(_) => {
            let flat = rd.floats("x0").unwrap_or_default();
            // a flat list is a panel of scalars for 1-d models, one point otherwise
            if r == Some(1) {
                flat.into_iter().map(|x| vec![x]).collect()
            } else {
                vec![flat]
            }
        }
    };
    if let Some(r) = r {
        for x in &x0_panel {
            if x.len() != r {
                rd.errs.push(format!("x0 {x:?} does not have the model dimension {r}"));
            }
        }
    }
    if x0_panel.is_empty() {
        rd.errs.push("`x0` is empty".into());
    }

    let moments: Vec<u32> = rd.floats("moments").unwrap_or_else(|| vec![2.0]).into_iter().map(|p| p as u32).collect();
    for &p in &moments {
        if p != 2 && p != 4 {
            rd.errs.push(format!("`moments` entries must be 2 or 4, got {p}"));
        }
    }

    let cert_box = rd.nested("box").map(|rows| {
        rows.iter()
            .map(|row| {
                if row.len() != 2 || !(row[0] < row[1]) {
                    rd.errs.push(format!("box entry {row:?} must be [lo, hi] with lo < hi"));
                    (0.0, 1.0)
                } else {
                    (row[0], row[1])
                }
            })
            .collect::<Vec<_>>()
    });
    if let (Some(b), Some(r)) = (&cert_box, r) {
        if b.len() != r {
            rd.errs.push(format!("`box` has {} axes, the model has {r}", b.len()));
        }
    }
    let grid = rd.count("grid").map(|g| g as usize);
    if grid == Some(1) {
        rd.errs.push("`grid` must be >= 2".into());
    }

    let t_list = rd.floats("t_list").unwrap_or_else(|| horizon.into_iter().collect());
    if let Some(t) = horizon {
        for &s in &t_list {
            if !(s > 0.0 && s <= t * (1.0 + 1e-12)) {
                rd.errs.push(format!("t_list entry {s} must lie in (0, T]"));
            }
        }
    }
    let lambda = rd.float("lambda").unwrap_or(0.0);
    if !(lambda >= 0.0) {
        rd.errs.push(format!("`lambda` must be >= 0, got {lambda}"));
    }
    let kernel = match rd.string("kernel") {
        None => KernelFn::Sin,
        Some(k) => KernelFn::parse(&k).unwrap_or_else(|| {
            rd.errs.push(format!("unknown kernel `{k}`; valid: sin, one, identity"));
            KernelFn::Sin
        }),
    };
    let source = match rd.string("source").as_deref() {
        None | Some("reference") => IntegrandSource::Reference,
        Some("wz") => IntegrandSource::WongZakai,
        Some(other) => {
            rd.errs.push(format!("unknown source `{other}`; valid: reference, wz"));
            IntegrandSource::Reference
        }
    };
    let times = rd.floats("times").unwrap_or_else(|| match (eps_list.first(), horizon) {
        (Some(&e), Some(t)) => default_times(driver, e, t),
        _ => Vec::new(),
    });
    let conditions = match rd.strings("conditions") {
        None => vec![Condition::Hb, Condition::HbSigma, Condition::HSigma],
        Some(names) => names
            .iter()
            .filter_map(|n| {
                let c = Condition::parse(n);
                if c.is_none() {
                    rd.errs.push(format!("unknown condition `{n}`; valid: H_b, H_bsigma, H_sigma"));
                }
                c
            })
            .collect(),
    };
    let slope_window = match rd.floats("slope_window") {
        Some(w) if w.len() == 2 && w[0] <= w[1] => Some((w[0], w[1])),
        Some(w) => {
            rd.errs.push(format!("`slope_window` must be [lo, hi], got {w:?}"));
            None
        }
        None => exp.and_then(default_slope_window),
    };
    let mean_slope_min = rd.float("mean_slope_min").unwrap_or(1.4);
    let growth_tol = rd.float("growth_tol").unwrap_or(0.05);
    let plateau_tol = rd.float("plateau_tol").unwrap_or(0.25);
    let se_gate = rd.float("se_gate").unwrap_or(4.0);
    let out = rd.string("out").map(PathBuf::from);

    if let Some(e) = exp {
        check_experiment(&mut rd.errs, e, &model, built.as_deref(), &eps_list, &t_list, driver);
    }

    if !rd.errs.is_empty() {
        return Err(ConfigError { violations: rd.errs });
    }
    Ok(ExperimentConfig {
        experiment: exp.expect("checked"),
        model,
        driver,
        eps_list,
        horizon: horizon.expect("checked"),
        m,
        substeps,
        x0_panel,
        paths,
        moments,
        seed,
        cert_box,
        grid,
        obs_per_cell,
        t_list,
        lambda,
        kernel,
        source,
        times,
        conditions,
        slope_window,
        mean_slope_min,
        growth_tol,
        plateau_tol,
        se_gate,
        out,
    })
}

fn check_experiment(
    errs: &mut Vec<String>,
    e: Experiment,
    model: &Option<ModelSpec>,
    built: Option<&dyn SdeModel>,
    eps_list: &[f64],
    t_list: &[f64],
    driver: DriverKind,
) {
    let scalar = built.map(|b| b.state_dim() == 1 && b.noise_dim() == 1);
    match e {
        Experiment::LinearExact => {
            if model.as_ref().is_some_and(|m| m.name != "linear1d") {
                errs.push("linear-exact needs the linear1d model".into());
            }
            if driver != DriverKind::Polygonal {
                errs.push("linear-exact has a closed form for the polygonal driver only".into());
            }
        }
        Experiment::DriversCheck => {
            if eps_list.len() > 1 {
                errs.push("drivers-check takes a single eps".into());
            }
        }
        Experiment::Rates | Experiment::MilsteinResidual => {
            if eps_list.len() < 3 {
                errs.push(format!("{e} needs at least 3 eps values for a rate fit"));
            }
        }
        Experiment::Orthogonality => {
            if scalar == Some(false) {
                errs.push("orthogonality needs a scalar model".into());
            }
        }
        Experiment::WzIntegral => {
            if scalar == Some(false) {
                errs.push("wz-integral needs a scalar model".into());
            }
            for &eps in eps_list {
                for &t in t_list {
                    let k = (t / eps).round();
                    if (k * eps - t).abs() > 1e-9 * t.max(eps) {
                        errs.push(format!("t_list entry {t} is not a multiple of eps = {eps}"));
                    }
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("experiment = \"linear-exact\"\na = -1\neps = 0.1\nT = 20\n", None).unwrap();
        assert_eq!(c.m, 64);
        assert_eq!(c.seed, 0);
        assert_eq!(c.model.unwrap(), ModelSpec { name: "linear1d".into(), params: vec![-1.0] });
        assert_eq!(c.eps_list, vec![0.1]);
        assert_eq!(c.x0_panel, vec![vec![0.0]]);
        assert_eq!(c.experiment, Experiment::LinearExact);
    }

    #[test]
    fn non_integral_horizon() {
        let e = parse_config("experiment = \"linear-exact\"\na = -1\neps = 0.3\nT = 1\n", None).unwrap_err();
        assert!(e.to_string().contains("T/eps not integral"), "{e}");
    }

    #[test]
    fn unknown_model_lists_registry() {
        let e = parse_config("experiment = \"coupled-error\"\nmodel = \"glub\"\neps = 0.1\nT = 1\n", None)
            .unwrap_err();
        let msg = e.to_string();
        for name in builtin_models().names() {
            assert!(msg.contains(&name), "{msg}");
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let text = "experiment = \"nope\"\nmodel = \"glub\"\neps = -0.1\nT = 1\npaths = 0\nbogus = 3\n";
        let e = parse_config(text, None).unwrap_err();
        assert!(e.violations.len() >= 5, "{e}");
        assert!(e.violations.iter().any(|v| v.contains("unknown key `bogus`")));
        assert!(e.violations.iter().any(|v| v.contains("unknown experiment")));
        assert!(e.violations.iter().any(|v| v.contains("paths")));
    }

    #[test]
    fn drivers_check_needs_no_model() {
        let c = parse_config("experiment = \"drivers-check\"\neps = 0.1\nT = 1\n", None).unwrap();
        assert!(c.model.is_none());
        assert_eq!(c.times.len(), 5);
        assert!(parse_config("experiment = \"rates\"\neps = [0.1, 0.05, 0.025]\nT = 1\n", None).is_err());
    }

    #[test]
    fn x0_forms() {
        let base = "experiment = \"coupled-error\"\neps = 0.1\nT = 1\n";
        let c = parse_config(&format!("{base}model = \"stable_nonlinear1d\"\nx0 = [-2, 0, 2]\n"), None).unwrap();
        assert_eq!(c.x0_panel, vec![vec![-2.0], vec![0.0], vec![2.0]]);
        let c = parse_config(&format!("{base}model = \"stable_nonlinear1d\"\nx0 = 1.5\n"), None).unwrap();
        assert_eq!(c.x0_panel, vec![vec![1.5]]);
        let nd = "model = \"linear_nd\"\nparams = [2, 2, -1, 0, 0, -1, 1, 0, 0, 1]\n";
        let c = parse_config(&format!("{base}{nd}x0 = [[2, 2], [-2, 2]]\n"), None).unwrap();
        assert_eq!(c.x0_panel.len(), 2);
        let c = parse_config(&format!("{base}{nd}x0 = [1, 2]\n"), None).unwrap();
        assert_eq!(c.x0_panel, vec![vec![1.0, 2.0]]);
        assert!(parse_config(&format!("{base}{nd}x0 = [1, 2, 3]\n"), None).is_err());
    }

    #[test]
    fn experiment_from_caller() {
        let text = "a = -1\neps = [0.2, 0.1]\nT = 2\n";
        let c = parse_config(text, Some(Experiment::LinearExact)).unwrap();
        assert_eq!(c.eps_list, vec![0.2, 0.1]);
        let text = "experiment = \"linear-exact\"\na = -1\neps = 0.1\nT = 2\n";
        assert!(parse_config(text, Some(Experiment::Rates)).is_err());
        assert!(parse_config("a = -1\neps = 0.1\nT = 2\n", None).is_err());
    }

    #[test]
    fn gate_defaults_and_overrides() {
        let base = "experiment = \"rates\"\nmodel = \"stable_nonlinear1d\"\neps = [0.2, 0.1, 0.05]\nT = 1\n";
        let c = parse_config(base, None).unwrap();
        assert_eq!(c.slope_window, Some((0.4, 0.6)));
        let c = parse_config(&format!("{base}slope_window = [0.25, inf]\n"), None).unwrap();
        assert_eq!(c.slope_window, Some((0.25, f64::INFINITY)));
        assert!(parse_config("experiment = \"rates\"\nmodel = \"stable_nonlinear1d\"\neps = 0.1\nT = 1\n", None).is_err());
    }
}
