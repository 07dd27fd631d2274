//! `npjive` command-line harness.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use npjive::data::{load_historical_csv, load_novel_csv, write_historical_csv, write_novel_csv};
use npjive::debias::DebiasConfig;
use npjive::experiment::{estimate, run_sweep, Estimator, SweepConfig};
use npjive::npjive::FitConfig;
use npjive::oracle::{run_suite, SuiteConfig};
use npjive::simulate::Dgp;
use npjive::{Error, Result};

#[derive(Parser)]
#[command(name = "npjive", version, about = "npJIVE estimation, one-step inference and Monte Carlo sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a historical/novel dataset pair from a DGP config; writes
    /// `historical.csv` and `novel.csv` into `--out`.
    Simulate(Common),
    /// Fit one estimator and print its estimate as a JSON line.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        historical: Option<PathBuf>,
        #[arg(long)]
        novel: Option<PathBuf>,
        #[arg(long)]
        estimator: Option<Estimator>,
        /// Raise λ (and μ) just enough to keep indefinite systems solvable.
        #[arg(long)]
        lambda_floor: bool,
    },
    /// Monte Carlo sweep over K and n; writes the summary CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also render MSE / bias² / variance against K.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Exact checks on random finite-support worlds.
    OracleCheck(Common),
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Input(format!("missing {what}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn with_seed(dgp: Dgp, seed: Option<u64>) -> Dgp {
    match (dgp, seed) {
        (Dgp::Continuous(mut p), Some(s)) => {
            p.seed = s;
            Dgp::Continuous(p)
        }
        (Dgp::ExactId(mut p), Some(s)) => {
            p.seed = s;
            Dgp::ExactId(p)
        }
        (d, None) => d,
    }
}

fn simulate(c: Common) -> Result<()> {
    let dgp = with_seed(read_config(&require(c.config, "--config")?)?, c.seed);
    let dir = require(c.out, "--out directory")?;
    fs::create_dir_all(&dir)?;
    let sim = dgp.simulate()?;
    let (hp, np) = (dir.join("historical.csv"), dir.join("novel.csv"));
    write_historical_csv(&hp, &sim.historical)?;
    write_novel_csv(&np, &sim.novel)?;
    let line = serde_json::json!({
        "theta_true": sim.theta_true,
        "K": sim.historical.num_arms(),
        "n": sim.historical.per_arm(),
        "n_new": sim.novel.len(),
        "historical": hp,
        "novel": np,
    });
    println!("{line}");
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FitJob {
    #[serde(default)]
    historical: Option<PathBuf>,
    #[serde(default)]
    novel: Option<PathBuf>,
    #[serde(default)]
    dgp: Option<Dgp>,
    #[serde(default)]
    estimator: Option<Estimator>,
    #[serde(default)]
    fit: Option<FitConfig>,
    #[serde(default)]
    debias: Option<DebiasConfig>,
    #[serde(default)]
    seed: u64,
}

fn fit(
    c: Common,
    historical: Option<PathBuf>,
    novel: Option<PathBuf>,
    estimator: Option<Estimator>,
    lambda_floor: bool,
) -> Result<()> {
    let mut job: FitJob = match &c.config {
        Some(p) => read_config(p)?,
        None => FitJob::default(),
    };
    job.historical = historical.or(job.historical);
    job.novel = novel.or(job.novel);
    job.estimator = estimator.or(job.estimator);
    let seed = c.seed.unwrap_or(job.seed);
    let estimator = require(job.estimator, "estimator (--estimator or config)")?;
    let (hist, nov, theta_true) = match (&job.historical, &job.novel, job.dgp) {
        (Some(h), Some(n), _) => (load_historical_csv(h)?, load_novel_csv(n)?, None),
        (None, None, Some(dgp)) => {
            let sim = with_seed(dgp, c.seed).simulate()?;
            (sim.historical, sim.novel, Some(sim.theta_true))
        }
        _ => return Err(Error::Input("give --historical and --novel, or a dgp in the config".into())),
    };
    let cfg = job.fit.unwrap_or_else(|| FitConfig::for_per_arm(hist.per_arm()));
    let cfg = FitConfig { seed, lambda_floor: cfg.lambda_floor || lambda_floor, ..cfg };
    let debias = job.debias.map(|d| DebiasConfig { fit: FitConfig { lambda_floor: d.fit.lambda_floor || lambda_floor, ..d.fit }, ..d });
    let report = estimate(&hist, &nov, estimator, &cfg, debias.as_ref(), seed)?;
    let mut value = serde_json::to_value(&report)?;
    if let Some(t) = theta_true {
        value["theta_true"] = t.into();
    }
    emit(c.out.as_deref(), &format!("{value}\n"))
}

fn sweep(c: Common, svg: Option<PathBuf>) -> Result<()> {
    let mut cfg: SweepConfig = read_config(&require(c.config, "--config")?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if c.out.is_some() {
        cfg.output = c.out;
    }
    if svg.is_some() {
        cfg.svg = svg;
    }
    let summary = run_sweep(&cfg)?;
    if cfg.output.is_none() {
        print!("{}", summary.to_csv_string()?);
    }
    Ok(())
}

fn oracle_check(c: Common) -> Result<()> {
    let mut cfg: SuiteConfig = match &c.config {
        Some(p) => read_config(p)?,
        None => SuiteConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let report = run_suite(&cfg)?;
    emit(c.out.as_deref(), &format!("{}\n", serde_json::to_string(&report)?))?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Numerical("oracle checks failed".into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit { common, historical, novel, estimator, lambda_floor } => {
            fit(common, historical, novel, estimator, lambda_floor)
        }
        Command::Sweep { common, svg } => sweep(common, svg),
        Command::OracleCheck(c) => oracle_check(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numerical(_) => 3,
                _ => 2,
            })
        }
    }
}
