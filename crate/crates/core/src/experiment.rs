//! Monte Carlo sweeps comparing estimators over grids of `K` and `n`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{HistoricalDataset, NovelDataset};
use crate::debias::{fit_debias_exact_in, fit_q_approx_in, DebiasConfig};
use crate::error::{Error, Result};
use crate::kernel::{FoldSet, Provenance};
use crate::npjive::{fit_npjive_in, fit_plugin_in, fit_pooled_regression_in, training_view, Dictionary, FitConfig};
use crate::onestep::{one_step_theta, pair_folds, plug_in_theta, Debias, ThetaEstimate};
use crate::rng::derive_seed;
use crate::simulate::Dgp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Plug-in risk minimizer, plug-in functional.
    #[serde(rename = "plugin-md")]
    PluginMd,
    /// npJIVE, plug-in functional.
    #[serde(rename = "npjive")]
    Npjive,
    /// npJIVE on folds {0,1} plus the exact-identification correction.
    #[serde(rename = "npjive+onestep-exact")]
    NpjiveOnestepExact,
    /// npJIVE on folds {0,1} plus the arm-weight correction.
    #[serde(rename = "npjive+onestep-approx")]
    NpjiveOnestepApprox,
    /// Kernel ridge of `Y` on `S` ignoring arms.
    #[serde(rename = "pooled-regression-baseline")]
    PooledRegressionBaseline,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::PluginMd,
        Estimator::Npjive,
        Estimator::NpjiveOnestepExact,
        Estimator::NpjiveOnestepApprox,
        Estimator::PooledRegressionBaseline,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Estimator::PluginMd => "plugin-md",
            Estimator::Npjive => "npjive",
            Estimator::NpjiveOnestepExact => "npjive+onestep-exact",
            Estimator::NpjiveOnestepApprox => "npjive+onestep-approx",
            Estimator::PooledRegressionBaseline => "pooled-regression-baseline",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::Input(format!("unknown estimator {s:?}; expected one of {}", ids())))
    }
}

fn ids() -> String {
    Estimator::ALL.map(Estimator::id).join(", ")
}

/// A fitted estimate with the folds each nuisance saw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub estimator: Estimator,
    #[serde(flatten)]
    pub estimate: ThetaEstimate,
    pub provenance: BTreeMap<&'static str, NuisanceFolds>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceFolds {
    /// Historical folds used; empty means "all rows, no fold labels".
    pub folds: Vec<u8>,
    pub novel: bool,
}

impl From<Provenance> for NuisanceFolds {
    fn from(p: Provenance) -> Self {
        let folds = if p.folds == FoldSet::ALL { Vec::new() } else { p.folds.folds() };
        Self { folds, novel: p.novel }
    }
}

/// Fit one estimator on one dataset pair. `debias` defaults to
/// [`DebiasConfig::for_primary`]; `seed` drives fold assignment and pairing.
pub fn estimate(
    hist: &HistoricalDataset,
    novel: &NovelDataset,
    estimator: Estimator,
    fit: &FitConfig,
    debias: Option<&DebiasConfig>,
    seed: u64,
) -> Result<FitReport> {
    novel.check_compatible(hist)?;
    let default_debias = DebiasConfig::for_primary(fit);
    let dcfg = debias.unwrap_or(&default_debias);
    let mut provenance = BTreeMap::new();
    let mut tag = |name: &'static str, p: Option<Provenance>| {
        if let Some(p) = p {
            provenance.insert(name, NuisanceFolds::from(p));
        }
    };
    let estimate = match estimator {
        Estimator::PluginMd | Estimator::PooledRegressionBaseline => {
            let dict = Dictionary::from_data(hist, Some(novel), fit)?;
            let h = if estimator == Estimator::PluginMd {
                fit_plugin_in(hist, &dict, fit)?
            } else {
                fit_pooled_regression_in(hist, &dict, fit)?
            };
            tag("h", h.provenance());
            plug_in_theta(&h, novel)?
        }
        Estimator::Npjive => {
            let data = hist.assign_folds(2, seed)?;
            let dict = Dictionary::from_data(&data, Some(novel), fit)?;
            let h = fit_npjive_in(&data, &dict, fit)?;
            tag("h", h.provenance());
            plug_in_theta(&h, novel)?
        }
        Estimator::NpjiveOnestepExact | Estimator::NpjiveOnestepApprox => {
            let data = hist.assign_folds(4, seed)?;
            let (train, _) = training_view(&data)?;
            let dict = Dictionary::from_data(&train, Some(novel), fit)?;
            let h = fit_npjive_in(&data, &dict, fit)?;
            tag("h", h.provenance());
            let ddict = Dictionary::from_data(&train, Some(novel), &dcfg.fit)?;
            let pairing = pair_folds(&data, seed)?;
            if estimator == Estimator::NpjiveOnestepExact {
                let xi = fit_debias_exact_in(&data, novel, &ddict, dcfg)?;
                tag("xi", xi.provenance());
                one_step_theta(&h, Debias::Function(&xi), &data, novel, &pairing)?
            } else {
                let q = fit_q_approx_in(&data, novel, &ddict, dcfg)?;
                tag("q", Some(q.provenance()));
                one_step_theta(&h, Debias::ArmWeights(&q), &data, novel, &pairing)?
            }
        }
    };
    Ok(FitReport { estimator, estimate, provenance })
}

fn default_replications() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dgp: Dgp,
    pub k_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub estimators: Vec<Estimator>,
    /// Primary-nuisance settings; `None` uses the per-`n` defaults with the
    /// regularization floor switched on.
    #[serde(default)]
    pub fit: Option<FitConfig>,
    /// Debiasing settings; `None` derives them from the primary settings.
    #[serde(default)]
    pub debias: Option<DebiasConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Record wall-clock runtimes. Off by default so that CSVs are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub svg: Option<PathBuf>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Input("replications must be ≥ 1".into()));
        }
        if self.k_grid.is_empty() || self.n_grid.is_empty() {
            return Err(Error::Input("K and n grids must be non-empty".into()));
        }
        if self.k_grid.contains(&0) || self.n_grid.contains(&0) {
            return Err(Error::Input("grid values must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Input(format!("estimator set is empty; choose from {}", ids())));
        }
        if self.workers == 0 {
            return Err(Error::Input("workers must be ≥ 1".into()));
        }
        if let Some(f) = &self.fit {
            f.validate()?;
        }
        if let Some(d) = &self.debias {
            d.validate()?;
        }
        Ok(())
    }

    fn fit_for(&self, n: usize, seed: u64) -> FitConfig {
        FitConfig { seed, ..self.fit.unwrap_or_else(|| FitConfig { lambda_floor: true, ..FitConfig::for_per_arm(n) }) }
    }
}

/// Per-(estimator, K, n) Monte Carlo summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub k: usize,
    pub n: usize,
    pub n_new: usize,
    pub replications: usize,
    pub theta_true: f64,
    pub bias: f64,
    pub bias_sq: f64,
    /// `(1/R') Σ (θ̂ − mean θ̂)²` over the `R'` successful replications, so
    /// that `mse = bias_sq + variance` exactly.
    pub variance: f64,
    pub mse: f64,
    pub mean_se: f64,
    pub coverage95: f64,
    pub mean_runtime_ms: Option<f64>,
    pub successes: usize,
    /// Failure counts by error code.
    pub failures: BTreeMap<&'static str, usize>,
}

impl SummaryRow {
    /// Monte Carlo standard error of `bias`.
    pub fn bias_mc_se(&self) -> f64 {
        (self.variance / (self.successes.max(2) - 1) as f64).sqrt()
    }

    fn failures_field(&self) -> String {
        if self.failures.is_empty() {
            return "0".into();
        }
        self.failures.iter().map(|(c, k)| format!("{c}:{k}")).collect::<Vec<_>>().join("|")
    }
}

/// Sweep result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
}

pub const CSV_HEADER: [&str; 14] = [
    "estimator",
    "K",
    "n",
    "n_new",
    "R",
    "theta_true",
    "bias",
    "bias_sq",
    "variance",
    "mse",
    "mean_se",
    "coverage95",
    "mean_runtime_ms",
    "failures",
];

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        String::new()
    }
}

impl McSummary {
    pub fn row(&self, estimator: Estimator, k: usize, n: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.k == k && r.n == n)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.estimator.id().to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.n_new.to_string(),
                r.replications.to_string(),
                num(r.theta_true),
                num(r.bias),
                num(r.bias_sq),
                num(r.variance),
                num(r.mse),
                num(r.mean_se),
                num(r.coverage95),
                r.mean_runtime_ms.map(num).unwrap_or_default(),
                r.failures_field(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    /// Log-log panels of MSE, squared bias and variance against `K`, one
    /// polyline per (estimator, n).
    pub fn to_svg(&self) -> String {
        svg::render(self)
    }
}

struct Outcome {
    estimator: Estimator,
    result: std::result::Result<(ThetaEstimate, f64), &'static str>,
}

struct Cell {
    k: usize,
    n: usize,
    replication: u64,
}

fn run_cell(cfg: &SweepConfig, cell: &Cell) -> (f64, Vec<Outcome>) {
    let grid_seed = derive_seed(&[cfg.seed, cell.k as u64, cell.n as u64]);
    let dgp = cfg.dgp.instance(cell.k, cell.n, grid_seed, cell.replication);
    let sim = match dgp.simulate() {
        Ok(s) => s,
        Err(e) => {
            let code = e.code();
            let theta = dgp.theta_star().unwrap_or(f64::NAN);
            return (theta, cfg.estimators.iter().map(|&estimator| Outcome { estimator, result: Err(code) }).collect());
        }
    };
    let fit_seed = derive_seed(&[grid_seed, cell.replication]);
    let fit = cfg.fit_for(cell.n, fit_seed);
    let debias = cfg.debias.map(|d| DebiasConfig { fit: FitConfig { seed: fit_seed.wrapping_add(1), ..d.fit }, ..d });
    let outcomes = cfg
        .estimators
        .iter()
        .map(|&estimator| {
            let start = Instant::now();
            let r = estimate(&sim.historical, &sim.novel, estimator, &fit, debias.as_ref(), fit_seed);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let result = match r {
                Ok(rep) => Ok((rep.estimate, ms)),
                Err(e) => {
                    log::debug!("{estimator} K={} n={} rep={}: {e}", cell.k, cell.n, cell.replication);
                    Err(e.code())
                }
            };
            Outcome { estimator, result }
        })
        .collect();
    (sim.theta_true, outcomes)
}

fn summarize(
    estimator: Estimator,
    k: usize,
    n: usize,
    cfg: &SweepConfig,
    theta_true: f64,
    results: &[&std::result::Result<(ThetaEstimate, f64), &'static str>],
) -> SummaryRow {
    let mut failures = BTreeMap::new();
    let mut ok = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(*v),
            Err(code) => *failures.entry(*code).or_insert(0) += 1,
        }
    }
    let m = ok.len() as f64;
    let (bias, variance, mean_se, coverage, runtime) = if ok.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean_theta = ok.iter().map(|(e, _)| e.theta).sum::<f64>() / m;
        let variance = ok.iter().map(|(e, _)| (e.theta - mean_theta).powi(2)).sum::<f64>() / m;
        let mean_se = ok.iter().map(|(e, _)| e.se).sum::<f64>() / m;
        let covered = ok.iter().filter(|(e, _)| e.covers(theta_true)).count() as f64;
        let runtime = ok.iter().map(|(_, t)| t).sum::<f64>() / m;
        (mean_theta - theta_true, variance, mean_se, covered / m, runtime)
    };
    SummaryRow {
        estimator,
        k,
        n,
        n_new: cfg.dgp.n_new(),
        replications: cfg.replications,
        theta_true,
        bias,
        bias_sq: bias * bias,
        variance,
        mse: bias * bias + variance,
        mean_se,
        coverage95: coverage,
        mean_runtime_ms: cfg.timing.then_some(runtime),
        successes: ok.len(),
        failures,
    }
}

/// Simulate, fit and aggregate every (grid point, replication); writes the
/// CSV (and SVG) when the config names an output path. Individual failures
/// are counted per row rather than aborting the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<McSummary> {
    cfg.validate()?;
    cfg.dgp.theta_star()?;
    let mut ks = cfg.k_grid.clone();
    let mut ns = cfg.n_grid.clone();
    ks.sort_unstable();
    ks.dedup();
    ns.sort_unstable();
    ns.dedup();
    let cells: Vec<Cell> = ks
        .iter()
        .flat_map(|&k| ns.iter().map(move |&n| (k, n)))
        .flat_map(|(k, n)| (0..cfg.replications as u64).map(move |replication| Cell { k, n, replication }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Input(format!("cannot start {} workers: {e}", cfg.workers)))?;
    // `collect` on an indexed parallel iterator keeps cell order.
    let results: Vec<(f64, Vec<Outcome>)> = pool.install(|| cells.par_iter().map(|c| run_cell(cfg, c)).collect());

    let mut estimators = cfg.estimators.clone();
    estimators.sort_unstable();
    estimators.dedup();
    let mut rows = Vec::new();
    for &k in &ks {
        for &n in &ns {
            let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].k == k && cells[i].n == n).collect();
            // θ* depends on the grid point only through the DGP's fixed laws
            let theta_true = results[idx[0]].0;
            for &est in &estimators {
                let rs: Vec<_> = idx
                    .iter()
                    .flat_map(|&i| results[i].1.iter().filter(|o| o.estimator == est).map(|o| &o.result))
                    .collect();
                rows.push(summarize(est, k, n, cfg, theta_true, &rs));
            }
        }
    }
    let summary = McSummary { rows };
    if let Some(path) = &cfg.output {
        summary.write_csv(path)?;
    }
    if let Some(path) = &cfg.svg {
        std::fs::write(path, summary.to_svg())?;
    }
    Ok(summary)
}

mod svg {
    use super::McSummary;
    use std::fmt::Write;

    const W: f64 = 300.0;
    const H: f64 = 220.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    pub(super) fn render(s: &McSummary) -> String {
        type Metric = (&'static str, fn(&super::SummaryRow) -> f64);
        let metrics: [Metric; 3] =
            [("MSE", |r| r.mse), ("squared bias", |r| r.bias_sq), ("variance", |r| r.variance)];
        let mut series: Vec<(String, Vec<&super::SummaryRow>)> = Vec::new();
        for r in &s.rows {
            let key = format!("{} (n={})", r.estimator, r.n);
            match series.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => series.push((key, vec![r])),
            }
        }
        let ks: Vec<f64> = s.rows.iter().map(|r| (r.k as f64).log10()).collect();
        let (kmin, kmax) = bounds(&ks);
        let width = 3.0 * W + PAD;
        let height = H + 30.0 + 16.0 * series.len() as f64;
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
        for (p, (title, f)) in metrics.iter().enumerate() {
            let ox = p as f64 * W + PAD;
            let vals: Vec<f64> = s.rows.iter().map(f).filter(|v| *v > 0.0 && v.is_finite()).map(f64::log10).collect();
            let (vmin, vmax) = bounds(&vals);
            let _ = writeln!(out, r#"<rect x="{ox}" y="20" width="{}" height="{}" fill="none" stroke="grey"/>"#, W - PAD, H - PAD);
            let _ = writeln!(out, r#"<text x="{}" y="14">{title} vs K (log-log)</text>"#, ox + 4.0);
            let _ = writeln!(out, r#"<text x="{ox}" y="{}">K {:.0}–{:.0}; y 1e{vmin:.1}–1e{vmax:.1}</text>"#, H - 5.0, 10f64.powf(kmin), 10f64.powf(kmax));
            for (i, (_, rows)) in series.iter().enumerate() {
                let pts: Vec<String> = rows
                    .iter()
                    .filter(|r| f(r) > 0.0 && f(r).is_finite())
                    .map(|r| {
                        let x = ox + scale((r.k as f64).log10(), kmin, kmax) * (W - PAD);
                        let y = 20.0 + (1.0 - scale(f(r).log10(), vmin, vmax)) * (H - PAD);
                        format!("{x:.1},{y:.1}")
                    })
                    .collect();
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, COLORS[i % COLORS.len()], pts.join(" "));
            }
        }
        for (i, (name, _)) in series.iter().enumerate() {
            let y = H + 20.0 + 16.0 * i as f64;
            let _ = writeln!(out, r#"<rect x="{PAD}" y="{}" width="12" height="4" fill="{}"/><text x="{}" y="{y}">{name}</text>"#, y - 4.0, COLORS[i % COLORS.len()], PAD + 18.0);
        }
        out.push_str("</svg>\n");
        out
    }

    fn bounds(v: &[f64]) -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    fn scale(v: f64, lo: f64, hi: f64) -> f64 {
        (v - lo) / (hi - lo)
    }
}
