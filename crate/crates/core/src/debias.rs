//! Debiasing nuisances for the one-step estimator.
//!
//! Exactly identified targets use `ξ̂`, the minimizer of the cross-fold
//! empirical analog of `½‖T_Kξ‖² − E[ξ(S_new)]` plus `μ‖ξ‖²_{2,N}`. Its
//! population first-order condition is `T*_K T_K ξ = α_K`, and the novel-arm
//! mean stands in for `E[α_K ξ]` so no density ratio is ever estimated.
//!
//! Approximately identified targets use arm weights `q(a)`. Each basis
//! function `q̂*_a` is a least-squares problem
//! `(1/N)Σ h(S_i)² − (2/n)Σ_{A_i=a} h(S_i)` with closed form
//! `(G_N + εI)⁻¹ φ̄_a`. The weights then solve a `K × K` quadratic whose
//! diagonal uses leave-one-out basis functions `q̂*_{a,−i}` evaluated at
//! their own held-out row. All `K·n` leave-one-out problems share a single
//! Cholesky factorization of `G_N + εI`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::{HistoricalDataset, NovelDataset};
use crate::error::{Error, Result};
use crate::kernel::{FoldSet, Provenance, RkhsFunction};
use crate::npjive::{crossfold_of, empirical_sq_norm, training_view, ArmMoments, Dictionary, FitConfig};
use crate::quadratic::{add_diagonal, factor, floored_level, jitter_for, QuadraticProblem};

/// Scaling of the jackknife diagonal of `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JackknifeDiagonal {
    /// `C_aa = (1/n) Σ_{i∈a} q̂*_{a,−i}(S_i)`, on the same scale as the
    /// off-diagonal `(1/N) Σ_i q̂*_a(S_i) q̂*_{a′}(S_i)`.
    #[default]
    PerArm,
    /// `C_aa = (1/(Kn)) Σ_{i∈a} q̂*_{a,−i}(S_i)`.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    /// Tikhonov level `μ ≥ 0` for `ξ̂`.
    pub mu: f64,
    /// Ridge `τ ≥ 0` for the arm-weight system; `None` picks
    /// `10⁻⁶ · mean diag(C_sym)`.
    pub tau: Option<f64>,
    /// Dictionary for the debiasing nuisances (`lambda` is unused here).
    pub fit: FitConfig,
    pub diagonal: JackknifeDiagonal,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self::for_primary(&FitConfig::default())
    }
}

impl DebiasConfig {
    /// `ν = 1/10`, `L = 10`, and `μ` equal to the primary nuisance's `λ`.
    pub fn for_primary(primary: &FitConfig) -> Self {
        Self {
            mu: primary.lambda,
            tau: None,
            fit: FitConfig { bandwidth: 0.1, num_centers: 10, seed: primary.seed.wrapping_add(1), ..*primary },
            diagonal: JackknifeDiagonal::PerArm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Input(format!("mu must be ≥ 0, got {}", self.mu)));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Input(format!("tau must be ≥ 0, got {t}")));
            }
        }
        self.fit.validate()
    }
}

/// Cross-fold debiasing risk `R̂_{2,μ}(ξ)` on the training view.
pub fn debias_exact_objective(xi: &RkhsFunction, data: &HistoricalDataset, novel: &NovelDataset, mu: f64) -> Result<f64> {
    let (train, _) = training_view(data)?;
    let v: Vec<f64> = xi.evaluate(train.s())?.iter().copied().collect();
    let novel_mean = xi.evaluate(novel.s())?.mean();
    Ok(crossfold_of(&v, &train)? - novel_mean + mu * empirical_sq_norm(xi, &train)?)
}

/// Quadratic whose minimizer is `ξ̂`.
pub fn debias_exact_problem(moments: &ArmMoments, novel_features: &DMatrix<f64>, mu: f64, jitter: f64) -> Result<QuadraticProblem> {
    let a = moments.crossfold_quadratic()? + &moments.second_moment * (2.0 * mu);
    let b = novel_features.row_mean().transpose();
    Ok(QuadraticProblem::new(a, b, jitter_for(&moments.second_moment, jitter)))
}

/// Exact-identification debiasing nuisance over a given dictionary.
pub fn fit_debias_exact_in(
    data: &HistoricalDataset,
    novel: &NovelDataset,
    dict: &Dictionary,
    cfg: &DebiasConfig,
) -> Result<RkhsFunction> {
    cfg.validate()?;
    novel.check_compatible(data)?;
    if data.folds().is_none() {
        return Err(Error::State("the debiasing fit needs fold labels; call assign_folds first".into()));
    }
    let (train, folds) = training_view(data)?;
    let phi = dict.features(train.s())?;
    let zeros = vec![0.0; train.len()];
    let moments = ArmMoments::compute(&train, &phi, &zeros)?;
    let phi_new = dict.features(novel.s())?;
    let eps = jitter_for(&moments.second_moment, cfg.fit.jitter);
    let mu = floored_level(&moments.crossfold_quadratic()?, &moments.second_moment, eps, cfg.mu, cfg.fit.lambda_floor)?;
    let beta = debias_exact_problem(&moments, &phi_new, mu, cfg.fit.jitter)?
        .solve("the cross-fold quadratic is indefinite at this regularization; increase mu")?;
    Ok(dict.function(beta)?.with_provenance(Provenance { folds, novel: true }))
}

/// Exact-identification debiasing nuisance, centers from training plus novel rows.
pub fn fit_debias_exact(data: &HistoricalDataset, novel: &NovelDataset, cfg: &DebiasConfig) -> Result<RkhsFunction> {
    let (train, _) = training_view(data)?;
    let dict = Dictionary::from_data(&train, Some(novel), &cfg.fit)?;
    fit_debias_exact_in(data, novel, &dict, cfg)
}

/// Row indices of `data` that make up its training view.
fn training_rows(data: &HistoricalDataset) -> Vec<usize> {
    match (data.num_folds(), data.folds()) {
        (4, Some(f)) => (0..data.len()).filter(|&i| f[i] <= 1).collect(),
        _ => (0..data.len()).collect(),
    }
}

/// Linear term `φ̄_a` (or its leave-one-out version) of the `q̂*_a` problem.
pub fn qa_star_linear_term(
    data: &HistoricalDataset,
    dict: &Dictionary,
    arm: usize,
    exclude: Option<usize>,
) -> Result<DVector<f64>> {
    if arm >= data.num_arms() {
        return Err(Error::Input(format!("arm {arm} outside 0..{}", data.num_arms())));
    }
    let rows = training_rows(data);
    let members: Vec<usize> = rows.iter().copied().filter(|&i| data.arms()[i] == arm).collect();
    let used: Vec<usize> = match exclude {
        None => members,
        Some(x) => {
            if !members.contains(&x) {
                return Err(Error::Input(format!("excluded row {x} is not a training row of arm {arm}")));
            }
            if members.len() < 2 {
                return Err(Error::Input("leave-one-out needs at least 2 units per arm".into()));
            }
            members.into_iter().filter(|&i| i != x).collect()
        }
    };
    let phi = dict.features(&data.s().select_rows(used.iter()))?;
    Ok(phi.row_mean().transpose())
}

/// `q̂*_a` (or `q̂*_{a,−i}` when `exclude = Some(i)`) fitted from scratch.
///
/// This refits and refactors on every call; [`JackknifeBasis`] is the fast
/// path for all arms and rows at once.
pub fn fit_qa_star_in(
    data: &HistoricalDataset,
    dict: &Dictionary,
    arm: usize,
    cfg: &DebiasConfig,
    exclude: Option<usize>,
) -> Result<RkhsFunction> {
    cfg.validate()?;
    let rows = training_rows(data);
    let phi = dict.features(&data.s().select_rows(rows.iter()))?;
    let g = phi.transpose() * &phi / rows.len() as f64;
    let b = qa_star_linear_term(data, dict, arm, exclude)?;
    let chol = factor(add_diagonal(&g, jitter_for(&g, cfg.fit.jitter)), "increase the jitter")?;
    let folds = training_view(data)?.1;
    Ok(dict.function(chol.solve(&b))?.with_provenance(Provenance { folds, novel: false }))
}

/// `q̂*_a` with centers drawn from the training rows.
pub fn fit_qa_star(data: &HistoricalDataset, arm: usize, cfg: &DebiasConfig, exclude: Option<usize>) -> Result<RkhsFunction> {
    let (train, _) = training_view(data)?;
    let dict = Dictionary::from_data(&train, None, &cfg.fit)?;
    fit_qa_star_in(data, &dict, arm, cfg, exclude)
}

/// All `q̂*_a` plus the leave-one-out values `q̂*_{a,−i}(S_i)`, from one
/// factorization of `G_N + εI`.
#[derive(Debug, Clone)]
pub struct JackknifeBasis {
    dict: Dictionary,
    chol: Cholesky<f64, Dyn>,
    /// Training-view features, `N_train × L`.
    phi: DMatrix<f64>,
    /// Full-sample coefficients, one column per arm (`L × K`).
    coefficients: DMatrix<f64>,
    /// Per arm: training-row positions `i` (into the training view).
    arm_members: Vec<Vec<usize>>,
    /// Per arm: `q̂*_{a,−i}(S_i)` for each member `i`.
    loo_self: Vec<Vec<f64>>,
    arm_features: DMatrix<f64>,
    folds: FoldSet,
}

impl JackknifeBasis {
    pub fn fit(data: &HistoricalDataset, dict: &Dictionary, cfg: &DebiasConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, folds) = training_view(data)?;
        let n = train.per_arm();
        if n < 2 {
            return Err(Error::Input("leave-one-out needs at least 2 units per arm".into()));
        }
        let phi = dict.features(train.s())?;
        let arm_members = train.arm_rows();
        let l = phi.ncols();
        let mut arm_features = DMatrix::zeros(arm_members.len(), l);
        for (a, members) in arm_members.iter().enumerate() {
            for &i in members {
                for j in 0..l {
                    arm_features[(a, j)] += phi[(i, j)];
                }
            }
            arm_features.row_mut(a).scale_mut(1.0 / members.len() as f64);
        }
        let g = phi.transpose() * &phi / train.len() as f64;
        let chol = factor(add_diagonal(&g, jitter_for(&g, cfg.fit.jitter)), "increase the jitter")?;
        let coefficients = chol.solve(&arm_features.transpose());
        // leverages ‖L⁻¹φ_i‖²: invert the factor once, then one blocked product
        let mut l_inv = DMatrix::identity(l, l);
        if !chol.l_dirty().solve_lower_triangular_mut(&mut l_inv) {
            return Err(Error::Numerical("singular Cholesky factor; increase the jitter".into()));
        }
        let whitened = l_inv.lower_triangle() * phi.transpose();
        let nf = n as f64;
        let loo_self = arm_members
            .iter()
            .enumerate()
            .map(|(a, members)| {
                members
                    .iter()
                    .map(|&i| {
                        let leverage = whitened.column(i).norm_squared();
                        let own = phi.row(i).dot(&coefficients.column(a).transpose());
                        (nf * own - leverage) / (nf - 1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            dict: dict.clone(),
            chol,
            phi,
            coefficients,
            arm_members,
            loo_self,
            arm_features,
            folds,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.arm_members.len()
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    fn provenance(&self) -> Provenance {
        Provenance { folds: self.folds, novel: false }
    }

    /// `q̂*_a`.
    pub fn function(&self, arm: usize) -> Result<RkhsFunction> {
        Ok(self.dict.function(self.coefficients.column(arm).into_owned())?.with_provenance(self.provenance()))
    }

    /// Full-sample coefficients as an `L × K` matrix.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// `q̂*_{a,−i}` for the `pos`-th training member of `arm`, via the shared factor.
    pub fn loo_function(&self, arm: usize, pos: usize) -> Result<RkhsFunction> {
        let members = self
            .arm_members
            .get(arm)
            .ok_or_else(|| Error::Input(format!("arm {arm} out of range")))?;
        let &i = members.get(pos).ok_or_else(|| Error::Input(format!("arm {arm} has no member {pos}")))?;
        let n = members.len() as f64;
        let b = (self.arm_features.row(arm).transpose() * n - self.phi.row(i).transpose()) / (n - 1.0);
        Ok(self.dict.function(self.chol.solve(&b))?.with_provenance(self.provenance()))
    }

    /// `q̂*_{a,−i}(S_i)` for every training member `i` of every arm.
    pub fn loo_self_values(&self) -> &[Vec<f64>] {
        &self.loo_self
    }

    /// `q̂*_a(S_i)` on training rows, `N_train × K`.
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.phi * &self.coefficients
    }

    /// `v_a = (1/n′) Σ_i q̂*_a(S_i^new)`.
    pub fn novel_means(&self, novel: &NovelDataset) -> Result<DVector<f64>> {
        let phi_new = self.dict.features(novel.s())?;
        Ok((phi_new * &self.coefficients).row_mean().transpose())
    }
}

/// The `K × K` matrix `C`: jackknife diagonal, full-sample off-diagonal.
#[allow(non_snake_case)]
pub fn assemble_C(basis: &JackknifeBasis, diagonal: JackknifeDiagonal) -> DMatrix<f64> {
    let k = basis.num_arms();
    let fitted = basis.fitted();
    let n_total = fitted.nrows() as f64;
    let mut c = fitted.transpose() * &fitted / n_total;
    for a in 0..k {
        let vals = &basis.loo_self[a];
        let denom = match diagonal {
            JackknifeDiagonal::PerArm => vals.len() as f64,
            JackknifeDiagonal::Pooled => (k * vals.len()) as f64,
        };
        c[(a, a)] = vals.iter().sum::<f64>() / denom;
    }
    c
}

/// Solve `(C_sym + τI)γ = v` with `C_sym = (C + Cᵀ)/2`.
pub fn solve_gamma(c: &DMatrix<f64>, v: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    if c.nrows() != v.len() || c.ncols() != v.len() {
        return Err(Error::Input("C and v dimensions differ".into()));
    }
    let sym = (c + c.transpose()) * 0.5;
    let chol = factor(add_diagonal(&sym, tau), "the arm-weight system is not positive definite; increase tau")?;
    Ok(chol.solve(v))
}

/// Default ridge `10⁻⁶ · mean diag(C_sym)`.
pub fn default_tau(c: &DMatrix<f64>) -> f64 {
    let mean = c.diagonal().mean();
    1e-6 * if mean > 0.0 { mean } else { 1.0 }
}

/// Debiasing arm weights `q(a)` together with the basis they came from.
#[derive(Debug, Clone)]
pub struct ArmWeightFunction {
    gamma: DVector<f64>,
    basis: Vec<RkhsFunction>,
    provenance: Provenance,
}

impl ArmWeightFunction {
    pub fn new(gamma: DVector<f64>, basis: Vec<RkhsFunction>, provenance: Provenance) -> Result<Self> {
        if gamma.len() != basis.len() {
            return Err(Error::Input(format!("{} weights for {} basis functions", gamma.len(), basis.len())));
        }
        Ok(Self { gamma, basis, provenance })
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn basis(&self) -> &[RkhsFunction] {
        &self.basis
    }

    pub fn num_arms(&self) -> usize {
        self.gamma.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `q(a) = K γ_a`.
    ///
    /// The basis `q̂*_a ≈ p(s|a)/p̄(s)` is `K` times `T*_K 1{·=a}` under the
    /// `(1/K)Σ_a` inner product on arms, so `Σ_a γ_a q̂*_a = T*_K(Kγ)`.
    pub fn arm_weight(&self, arm: usize) -> f64 {
        self.gamma.len() as f64 * self.gamma[arm]
    }

    /// `Σ_a γ_a q̂*_a(s)`, the fitted approximation of the Riesz representer.
    pub fn evaluate(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(points.nrows());
        for (g, q) in self.gamma.iter().zip(&self.basis) {
            out += q.evaluate(points)? * *g;
        }
        Ok(out)
    }
}

/// Approximate-identification debiasing weights over a given dictionary.
pub fn fit_q_approx_in(
    data: &HistoricalDataset,
    novel: &NovelDataset,
    dict: &Dictionary,
    cfg: &DebiasConfig,
) -> Result<ArmWeightFunction> {
    novel.check_compatible(data)?;
    let basis = JackknifeBasis::fit(data, dict, cfg)?;
    let c = assemble_C(&basis, cfg.diagonal);
    let v = basis.novel_means(novel)?;
    let sym = (&c + c.transpose()) * 0.5;
    let mut tau = cfg.tau.unwrap_or_else(|| default_tau(&sym));
    if cfg.fit.lambda_floor {
        // leave the smallest eigenvalue of C_sym + τI at |e_min|
        let e = sym.symmetric_eigen().eigenvalues.min();
        if e + tau <= 0.0 {
            log::debug!("raising tau from {tau:e} to {:e}", -2.0 * e);
            tau = -2.0 * e;
        }
    }
    let gamma = solve_gamma(&c, &v, tau)?;
    let functions = (0..basis.num_arms()).map(|a| basis.function(a)).collect::<Result<Vec<_>>>()?;
    ArmWeightFunction::new(gamma, functions, Provenance { folds: basis.folds, novel: true })
}

/// Approximate-identification weights, centers from training plus novel rows.
pub fn fit_q_approx(data: &HistoricalDataset, novel: &NovelDataset, cfg: &DebiasConfig) -> Result<ArmWeightFunction> {
    let (train, _) = training_view(data)?;
    let dict = Dictionary::from_data(&train, Some(novel), &cfg.fit)?;
    fit_q_approx_in(data, novel, &dict, cfg)
}
