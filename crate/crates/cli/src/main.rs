use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use wz_lab::{parse_config, run, Experiment};

/// Wong–Zakai experiments with CSV output.
#[derive(Debug, Parser)]
#[command(name = "wz-lab", version)]
struct Args {
    /// One of: drivers-check, spectral-cert, linear-exact, coupled-error,
    /// rates, milstein-residual, orthogonality, wz-integral, moments-uniform.
    experiment: String,
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides WZ_LAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_text(path: &PathBuf) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).context("parsing manifest")?;
        return match v.get("config_text").and_then(|t| t.as_str()) {
            Some(t) => Ok(t.to_string()),
            None => bail!("{} has no config_text", path.display()),
        };
    }
    Ok(text)
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("WZ_LAB_THREADS") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("WZ_LAB_THREADS = {s:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn main_inner(args: Args) -> Result<bool> {
    let Some(exp) = Experiment::parse(&args.experiment) else {
        let valid: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        bail!("unknown experiment `{}`; valid: {}", args.experiment, valid.join(", "));
    };
    let text = config_text(&args.config)?;
    let mut cfg = parse_config(&text, Some(exp))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(exp.name()));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads(args.threads)? {
        if k == 0 {
            bail!("thread count must be >= 1");
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().context("building thread pool")?;
    let (manifest, _) = pool.install(|| run(&cfg, &text, &out))?;

    for g in &manifest.gates {
        println!("{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    for p in &manifest.outputs {
        println!("wrote {}", p.display());
    }
    println!(
        "{}: {} in {:.1}s",
        exp,
        if manifest.passed { "passed" } else { "FAILED" },
        manifest.wall_time_s
    );
    Ok(manifest.passed)
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
