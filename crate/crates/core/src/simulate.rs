//! Confounded-surrogate data-generating processes and their ground truth.
//!
//! Both designs share the structural function `h*(s) = s + sin(s) + 1{s > 0.25}`
//! and an unobserved confounder `U` that enters `S` and `Y` with opposite
//! signs, so a regression of `Y` on `S` is biased while `E[Y − h*(S) | A] = 0`.
//!
//! * Continuous: arm effects `Γ_a ~ N(0, σ_Γ²)`,
//!   `S = Uniform(Γ_a − ½, Γ_a + ½) + U`, `U ~ N(0, σ_U²)`, `Y = h*(S) − U`.
//! * Exact identification: arm pmfs `μ_a ~ Dirichlet(c)` over support points
//!   `s_m`, `S = s_m + U`, `U ~ Uniform(−w, w)`, `Y = h*(S) − 10 U`. The
//!   novel arm uses the fixed pmf `μ^new`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{HistoricalDataset, NovelDataset};
use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::rng;

/// Absolute tolerance for ground-truth quadrature.
pub const THETA_TOL: f64 = 1e-8;
/// Location of the jump in `h*`.
pub const JUMP: f64 = 0.25;

/// `h*(s) = s + sin(s) + 1{s > 0.25}`.
pub fn h_star(s: f64) -> f64 {
    s + s.sin() + if s > JUMP { 1.0 } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousDgpParams {
    pub k: usize,
    pub n: usize,
    pub n_new: usize,
    pub sigma_gamma: f64,
    pub gamma_new: f64,
    pub sigma_u: f64,
    pub seed: u64,
    pub replication: u64,
}

impl Default for ContinuousDgpParams {
    fn default() -> Self {
        Self { k: 100, n: 30, n_new: 1000, sigma_gamma: 2.0, gamma_new: 1.0, sigma_u: 1.0, seed: 0, replication: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExactIdDgpParams {
    pub k: usize,
    pub n: usize,
    pub n_new: usize,
    /// Dirichlet concentration per support point.
    pub concentration: Vec<f64>,
    /// Support points `s_m`, strictly increasing.
    pub support: Vec<f64>,
    /// Confounder half-width `w`.
    pub half_width: f64,
    /// Outcome confounder scale (`Y = h*(S) − scale·U`).
    pub outcome_scale: f64,
    pub novel_pmf: Vec<f64>,
    /// When set, every arm uses this pmf (the infinite-concentration limit).
    pub fixed_arm_pmf: Option<Vec<f64>>,
    pub seed: u64,
    pub replication: u64,
}

impl Default for ExactIdDgpParams {
    fn default() -> Self {
        Self {
            k: 100,
            n: 100,
            n_new: 500,
            concentration: vec![10.0; 5],
            support: (1..=5).map(|m| -1.0 + 2.0 * m as f64 / 5.0).collect(),
            half_width: 0.2,
            outcome_scale: 10.0,
            novel_pmf: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            fixed_arm_pmf: None,
            seed: 0,
            replication: 0,
        }
    }
}

/// Either design, tagged for JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dgp {
    Continuous(ContinuousDgpParams),
    ExactId(ExactIdDgpParams),
}

/// A simulated historical/novel pair with its true target.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub historical: HistoricalDataset,
    pub novel: NovelDataset,
    pub theta_true: f64,
}

fn positive_sizes(k: usize, n: usize, n_new: usize) -> Result<()> {
    if k == 0 || n == 0 || n_new == 0 {
        return Err(Error::Input(format!("K, n and n' must be positive (got {k}, {n}, {n_new})")));
    }
    Ok(())
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    }
}

impl ContinuousDgpParams {
    pub fn validate(&self) -> Result<()> {
        positive_sizes(self.k, self.n, self.n_new)?;
        for (name, v) in [("sigma_gamma", self.sigma_gamma), ("sigma_u", self.sigma_u)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !self.gamma_new.is_finite() {
            return Err(Error::Input("gamma_new must be finite".into()));
        }
        Ok(())
    }

    /// One unit: `(S, U)` given the arm effect.
    fn draw_unit(&self, rng: &mut ChaCha8Rng, effect: f64) -> (f64, f64) {
        let uniform: f64 = rng.random::<f64>() - 0.5;
        let u = normal(rng, self.sigma_u);
        (effect + uniform + u, u)
    }
}

/// Continuous-surrogate design.
pub fn dgp_continuous(p: &ContinuousDgpParams) -> Result<Simulated> {
    p.validate()?;
    let nn = p.k * p.n;
    let mut s = DMatrix::zeros(nn, 1);
    let mut y = Vec::with_capacity(nn);
    let mut arm = Vec::with_capacity(nn);
    for a in 0..p.k {
        let mut rng = rng::stream(p.seed, p.replication, a as u64);
        let effect = normal(&mut rng, p.sigma_gamma);
        for r in 0..p.n {
            let (si, u) = p.draw_unit(&mut rng, effect);
            s[(a * p.n + r, 0)] = si;
            y.push(h_star(si) - u);
            arm.push(a);
        }
    }
    let mut rng = rng::stream(p.seed, p.replication, rng::purpose::NOVEL);
    let s_new = DMatrix::from_fn(p.n_new, 1, |_, _| p.draw_unit(&mut rng, p.gamma_new).0);
    let historical = HistoricalDataset::new(s, y, arm, p.k)?
        .with_meta("sigma_gamma", p.sigma_gamma)
        .with_meta("gamma_new", p.gamma_new)
        .with_meta("sigma_u", p.sigma_u);
    Ok(Simulated { historical, novel: NovelDataset::new(s_new)?, theta_true: theta_star_continuous(p)? })
}

/// `E[h*(S_new)]` for the continuous design by quadrature against the
/// density of `Uniform(Γ_new ± ½) + N(0, σ_U²)`.
pub fn theta_star_continuous(p: &ContinuousDgpParams) -> Result<f64> {
    p.validate()?;
    let g = p.gamma_new;
    if p.sigma_u == 0.0 {
        return integrate(h_star, g - 0.5, g + 0.5, &[JUMP], THETA_TOL);
    }
    let norm = Normal::new(0.0, p.sigma_u).map_err(|e| Error::Input(e.to_string()))?;
    let density = |s: f64| norm.cdf(s - g + 0.5) - norm.cdf(s - g - 0.5);
    let reach = 0.5 + 12.0 * p.sigma_u;
    integrate(|s| h_star(s) * density(s), g - reach, g + reach, &[JUMP, g - 0.5, g + 0.5], THETA_TOL)
}

impl ExactIdDgpParams {
    pub fn validate(&self) -> Result<()> {
        positive_sizes(self.k, self.n, self.n_new)?;
        let m = self.support.len();
        if m == 0 {
            return Err(Error::Input("support must be non-empty".into()));
        }
        if self.support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("support points must be strictly increasing".into()));
        }
        if self.concentration.len() != m || self.novel_pmf.len() != m {
            return Err(Error::Input("concentration, support and novel_pmf lengths differ".into()));
        }
        if self.concentration.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Input("concentration entries must be positive".into()));
        }
        check_pmf(&self.novel_pmf, "novel_pmf")?;
        if let Some(f) = &self.fixed_arm_pmf {
            if f.len() != m {
                return Err(Error::Input("fixed_arm_pmf length differs from support".into()));
            }
            check_pmf(f, "fixed_arm_pmf")?;
        }
        if !(self.half_width >= 0.0 && self.half_width.is_finite()) {
            return Err(Error::Input("half_width must be ≥ 0".into()));
        }
        if !self.outcome_scale.is_finite() {
            return Err(Error::Input("outcome_scale must be finite".into()));
        }
        Ok(())
    }

    fn draw_unit(&self, rng: &mut ChaCha8Rng, pmf: &[f64]) -> (f64, f64) {
        let atom = categorical(rng, pmf);
        let u = (2.0 * rng.random::<f64>() - 1.0) * self.half_width;
        (self.support[atom] + u, u)
    }
}

fn check_pmf(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| v.is_nan() || v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("{name} must be nonnegative and sum to 1")));
    }
    Ok(())
}

fn categorical(rng: &mut ChaCha8Rng, pmf: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (m, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return m;
        }
    }
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

/// Discrete-support design in which the target is exactly identified.
pub fn dgp_exact_id(p: &ExactIdDgpParams) -> Result<Simulated> {
    p.validate()?;
    let nn = p.k * p.n;
    let mut s = DMatrix::zeros(nn, 1);
    let mut y = Vec::with_capacity(nn);
    let mut arm = Vec::with_capacity(nn);
    for a in 0..p.k {
        let mut rng = rng::stream(p.seed, p.replication, a as u64);
        let pmf = match &p.fixed_arm_pmf {
            Some(f) => f.clone(),
            None => dirichlet(&mut rng, &p.concentration),
        };
        for r in 0..p.n {
            let (si, u) = p.draw_unit(&mut rng, &pmf);
            s[(a * p.n + r, 0)] = si;
            y.push(h_star(si) - p.outcome_scale * u);
            arm.push(a);
        }
    }
    let mut rng = rng::stream(p.seed, p.replication, rng::purpose::NOVEL);
    let s_new = DMatrix::from_fn(p.n_new, 1, |_, _| p.draw_unit(&mut rng, &p.novel_pmf).0);
    let historical = HistoricalDataset::new(s, y, arm, p.k)?
        .with_meta("half_width", p.half_width)
        .with_meta("outcome_scale", p.outcome_scale);
    Ok(Simulated { historical, novel: NovelDataset::new(s_new)?, theta_true: theta_star_exact_id(p)? })
}

/// `Σ_m μ^new_m · E[h*(s_m + U)]`, each expectation by quadrature.
pub fn theta_star_exact_id(p: &ExactIdDgpParams) -> Result<f64> {
    p.validate()?;
    let w = p.half_width;
    let mut total = 0.0;
    for (&mass, &sm) in p.novel_pmf.iter().zip(&p.support) {
        if mass == 0.0 {
            continue;
        }
        let e = if w == 0.0 {
            h_star(sm)
        } else {
            integrate(h_star, sm - w, sm + w, &[JUMP], THETA_TOL)? / (2.0 * w)
        };
        total += mass * e;
    }
    Ok(total)
}

impl Dgp {
    pub fn simulate(&self) -> Result<Simulated> {
        match self {
            Dgp::Continuous(p) => dgp_continuous(p),
            Dgp::ExactId(p) => dgp_exact_id(p),
        }
    }

    pub fn theta_star(&self) -> Result<f64> {
        match self {
            Dgp::Continuous(p) => theta_star_continuous(p),
            Dgp::ExactId(p) => theta_star_exact_id(p),
        }
    }

    /// Copy with the arm count, per-arm size, seed and replication replaced.
    pub fn instance(&self, k: usize, n: usize, seed: u64, replication: u64) -> Dgp {
        let mut out = self.clone();
        match &mut out {
            Dgp::Continuous(p) => {
                (p.k, p.n, p.seed, p.replication) = (k, n, seed, replication);
            }
            Dgp::ExactId(p) => {
                (p.k, p.n, p.seed, p.replication) = (k, n, seed, replication);
            }
        }
        out
    }

    pub fn n_new(&self) -> usize {
        match self {
            Dgp::Continuous(p) => p.n_new,
            Dgp::ExactId(p) => p.n_new,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn h_star_values() {
        assert_eq!(h_star(0.0), 0.0);
        assert_eq!(h_star(0.25), 0.25 + 0.25f64.sin());
        assert!((h_star(PI) - (PI + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_continuous_design() {
        let p = ContinuousDgpParams { k: 4, n: 50, n_new: 20, sigma_gamma: 0.0, gamma_new: 0.0, sigma_u: 0.0, ..Default::default() };
        let sim = dgp_continuous(&p).unwrap();
        let d = &sim.historical;
        for i in 0..d.len() {
            let s = d.s()[(i, 0)];
            assert!((-0.5..0.5).contains(&s));
            assert_eq!(d.y()[i], h_star(s));
        }
    }

    #[test]
    fn continuous_defaults_are_recorded() {
        let p = ContinuousDgpParams { k: 3, n: 4, n_new: 5, ..Default::default() };
        let sim = dgp_continuous(&p).unwrap();
        assert_eq!(sim.historical.meta()["sigma_gamma"], 2.0);
        assert_eq!(sim.historical.meta()["gamma_new"], 1.0);
        assert_eq!(sim.historical.meta()["sigma_u"], 1.0);
        assert_eq!(sim.historical.arms()[..4], [0, 0, 0, 0]);
    }

    #[test]
    fn equal_seeds_identical_draws() {
        let p = ContinuousDgpParams { k: 5, n: 6, n_new: 7, seed: 9, ..Default::default() };
        let (a, b) = (dgp_continuous(&p).unwrap(), dgp_continuous(&p).unwrap());
        assert_eq!(a.historical, b.historical);
        assert_eq!(a.novel, b.novel);
        let q = ExactIdDgpParams { k: 5, n: 6, n_new: 7, seed: 9, ..Default::default() };
        let (a, b) = (dgp_exact_id(&q).unwrap(), dgp_exact_id(&q).unwrap());
        assert_eq!(a.historical, b.historical);
        let other = dgp_exact_id(&ExactIdDgpParams { replication: 1, ..q }).unwrap();
        assert_ne!(a.historical, other.historical);
    }

    #[test]
    fn exact_id_default_novel_pmf_accepted() {
        let p = ExactIdDgpParams::default();
        assert_eq!(p.novel_pmf, vec![0.0, 0.1, 0.2, 0.3, 0.4]);
        assert!(p.validate().is_ok());
        let bad = ExactIdDgpParams { novel_pmf: vec![0.5; 5], ..Default::default() };
        assert!(bad.validate().is_err());
        let unsorted = ExactIdDgpParams { support: vec![0.0, 0.0, 1.0, 2.0, 3.0], ..Default::default() };
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn fixed_arm_pmf_makes_arms_identical_in_law() {
        let fixed = vec![0.2; 5];
        let p = ExactIdDgpParams { k: 3, n: 4000, n_new: 2, fixed_arm_pmf: Some(fixed), ..Default::default() };
        let sim = dgp_exact_id(&p).unwrap();
        let d = &sim.historical;
        let means: Vec<f64> = d
            .arm_rows()
            .iter()
            .map(|rows| rows.iter().map(|&i| d.s()[(i, 0)]).sum::<f64>() / rows.len() as f64)
            .collect();
        // all arms centered on the support mean 0.2 with sd ≈ 0.57/√4000
        for m in means {
            assert!((m - 0.2).abs() < 0.04, "{m}");
        }
    }

    #[test]
    fn theta_closed_form_uniform_case() {
        // support ⊂ (0.25, ∞) so the jump contributes exactly 1
        let g = 2.0;
        let p = ContinuousDgpParams { sigma_u: 0.0, gamma_new: g, ..Default::default() };
        let want = g + ((g - 0.5).cos() - (g + 0.5).cos()) + 1.0;
        assert!((theta_star_continuous(&p).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn theta_point_mass_exact_id() {
        let p = ExactIdDgpParams { half_width: 0.0, novel_pmf: vec![0.0, 0.0, 0.0, 1.0, 0.0], ..Default::default() };
        assert_eq!(theta_star_exact_id(&p).unwrap(), h_star(p.support[3]));
    }
}
