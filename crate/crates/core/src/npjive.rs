//! Primary nuisance: the plug-in (minimum-distance) and split-IV risks and fits.
//!
//! With `m_a` the arm mean of a residual `Y − h(S)`, the plug-in risk is
//! `(1/2K) Σ_a m_a²`. Its expectation carries an extra `Var(Y − h | a)/n` per
//! arm that does not vanish when `n` stays bounded as `K` grows. The
//! cross-fold risk multiplies the fold-0 and fold-1 means of each arm
//! instead, which is unbiased for `½‖T_K(h − Y)‖²` because the two folds are
//! independent given the arm.
//!
//! Fits minimize either risk plus `λ‖h‖²_{2,N}` over the span of a Nyström
//! dictionary, where the objective is an exact quadratic in the coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{HistoricalDataset, NovelDataset};
use crate::error::{Error, Result};
use crate::kernel::{choose_centers, gram, FoldSet, KernelSpec, Provenance, RkhsFunction};
use crate::quadratic::{floored_level, jitter_for, symmetrize, QuadraticProblem};

/// Settings shared by every dictionary fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Tikhonov level `λ ≥ 0`.
    pub lambda: f64,
    /// Dictionary size `L`.
    pub num_centers: usize,
    /// Gaussian bandwidth `ν`.
    pub bandwidth: f64,
    /// Seed for center selection.
    pub seed: u64,
    /// Relative jitter: `ε = jitter · trace(G_N)/L`.
    pub jitter: f64,
    /// Raise the Tikhonov level just enough to make an indefinite
    /// cross-fold system positive definite instead of failing.
    pub lambda_floor: bool,
    /// The simulation captions' `w`; recorded for provenance, not used by any fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lambda: 1e-2, num_centers: 5, bandwidth: 1.0 / 3.0, seed: 0, jitter: 1e-8, lambda_floor: false, w: None }
    }
}

/// `(n, λ, ν, L)` rows used for the primary nuisance in the simulation study.
pub const PRIMARY_DEFAULTS: [(usize, f64, f64, usize); 4] = [
    (30, 1e-2, 1.0 / 3.0, 5),
    (100, 1e-2, 1.0 / 4.0, 7),
    (300, 1e-1, 1.0 / 10.0, 10),
    (3000, 1e-1, 1.0 / 10.0, 10),
];

impl FitConfig {
    /// Defaults from the row of [`PRIMARY_DEFAULTS`] nearest to `n` on a log scale.
    pub fn for_per_arm(n: usize) -> Self {
        let ln = (n.max(1) as f64).ln();
        let &(_, lambda, bandwidth, num_centers) = PRIMARY_DEFAULTS
            .iter()
            .min_by(|a, b| {
                let da = ((a.0 as f64).ln() - ln).abs();
                let db = ((b.0 as f64).ln() - ln).abs();
                da.total_cmp(&db)
            })
            .expect("non-empty table");
        Self { lambda, num_centers, bandwidth, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::Input(format!("jitter must be > 0, got {}", self.jitter)));
        }
        if self.num_centers == 0 {
            return Err(Error::Input("num_centers must be ≥ 1".into()));
        }
        KernelSpec::new(self.bandwidth, 1)?;
        Ok(())
    }
}

/// A kernel plus its `L` centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub spec: KernelSpec,
    pub centers: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(spec: KernelSpec, centers: DMatrix<f64>) -> Result<Self> {
        if centers.ncols() != spec.dim() {
            return Err(Error::Input("center dimension differs from kernel dimension".into()));
        }
        Ok(Self { spec, centers })
    }

    /// Subsample centers from the historical rows, pooled with the novel
    /// sample when one is given.
    pub fn from_data(hist: &HistoricalDataset, novel: Option<&NovelDataset>, cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = KernelSpec::new(cfg.bandwidth, hist.dim())?;
        let pooled = match novel {
            Some(nv) => {
                nv.check_compatible(hist)?;
                let mut p = DMatrix::zeros(hist.len() + nv.len(), hist.dim());
                p.rows_mut(0, hist.len()).copy_from(hist.s());
                p.rows_mut(hist.len(), nv.len()).copy_from(nv.s());
                p
            }
            None => hist.s().clone(),
        };
        let centers = choose_centers(&pooled, cfg.num_centers, cfg.seed)?;
        Ok(Self { spec, centers })
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn features(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        gram(points, &self.centers, &self.spec)
    }

    pub fn function(&self, coefficients: DVector<f64>) -> Result<RkhsFunction> {
        RkhsFunction::new(self.spec, self.centers.clone(), coefficients)
    }
}

/// Rows a nuisance may be trained on: folds `{0, 1}` of a 4-fold dataset,
/// or everything otherwise. Returns the view and the folds it covers.
pub fn training_view(data: &HistoricalDataset) -> Result<(HistoricalDataset, FoldSet)> {
    match data.num_folds() {
        0 => Ok((data.clone(), FoldSet::ALL)),
        2 => Ok((data.clone(), FoldSet::of(&[0, 1]))),
        _ => {
            let folds = FoldSet::of(&[0, 1]);
            Ok((data.restrict_to_folds(folds)?, folds))
        }
    }
}

/// Fold-0/fold-1 arm target means and arm feature means.
pub type FoldPair = ([DVector<f64>; 2], [DMatrix<f64>; 2]);

/// Per-arm (and per arm-fold) means of a target and of the dictionary features.
#[derive(Debug, Clone)]
pub struct ArmMoments {
    /// Arm means of the target, length `K`.
    pub arm_means: DVector<f64>,
    /// Arm feature means, `K × L`.
    pub arm_features: DMatrix<f64>,
    /// `(m_{0,a}, m_{1,a})` and `(φ̄_{0,a}, φ̄_{1,a})` when fold labels exist.
    pub folds: Option<FoldPair>,
    /// `G_N = ΦᵀΦ / N`, which realizes `‖h‖²_{2,N} = βᵀG_Nβ`.
    pub second_moment: DMatrix<f64>,
}

fn cell_means(rows: &[Vec<usize>], phi: &DMatrix<f64>, target: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = rows.len();
    let l = phi.ncols();
    let mut m = DVector::zeros(k);
    let mut f = DMatrix::zeros(k, l);
    for (a, cell) in rows.iter().enumerate() {
        if cell.is_empty() {
            return Err(Error::State(format!("arm {a} has an empty cell")));
        }
        let w = 1.0 / cell.len() as f64;
        for &i in cell {
            m[a] += w * target[i];
            for j in 0..l {
                f[(a, j)] += w * phi[(i, j)];
            }
        }
    }
    Ok((m, f))
}

impl ArmMoments {
    /// Moments of `target` and of `phi` (rows aligned with `data`).
    pub fn compute(data: &HistoricalDataset, phi: &DMatrix<f64>, target: &[f64]) -> Result<Self> {
        if phi.nrows() != data.len() || target.len() != data.len() {
            return Err(Error::Input("feature/target rows differ from dataset rows".into()));
        }
        let (arm_means, arm_features) = cell_means(&data.arm_rows(), phi, target)?;
        let folds = if data.folds().is_some() {
            let (m0, f0) = cell_means(&data.fold_rows(0)?, phi, target)?;
            let (m1, f1) = cell_means(&data.fold_rows(1)?, phi, target)?;
            Some(([m0, m1], [f0, f1]))
        } else {
            None
        };
        let second_moment = phi.transpose() * phi / data.len() as f64;
        Ok(Self { arm_means, arm_features, folds, second_moment })
    }

    fn fold_pair(&self) -> Result<&FoldPair> {
        self.folds
            .as_ref()
            .ok_or_else(|| Error::State("split-IV fits need fold labels; call assign_folds first".into()))
    }

    pub fn num_arms(&self) -> usize {
        self.arm_means.len()
    }

    /// `(1/K) sym(Σ_a φ̄_{0,a} φ̄_{1,a}ᵀ)`, twice the symmetrized cross-fold quadratic.
    pub fn crossfold_quadratic(&self) -> Result<DMatrix<f64>> {
        let (_, [f0, f1]) = self.fold_pair()?;
        let mut q = f0.transpose() * f1 / self.num_arms() as f64;
        symmetrize(&mut q);
        Ok(q)
    }
}

/// Residuals `Y_i − h(S_i)`.
fn residuals(h: &RkhsFunction, data: &HistoricalDataset) -> Result<Vec<f64>> {
    let hv = h.evaluate(data.s())?;
    Ok(data.y().iter().zip(hv.iter()).map(|(y, v)| y - v).collect())
}

fn mean_over(rows: &[usize], v: &[f64]) -> f64 {
    rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64
}

/// `(1/2K) Σ_a ([T̂_K(Y − h)](a))²`.
pub fn plug_in_risk(h: &RkhsFunction, data: &HistoricalDataset) -> Result<f64> {
    let r = residuals(h, data)?;
    let k = data.num_arms() as f64;
    Ok(data.arm_rows().iter().map(|rows| mean_over(rows, &r).powi(2)).sum::<f64>() / (2.0 * k))
}

/// `(1/2K) Σ_a [T̂_{K,0}(Y − h)](a) · [T̂_{K,1}(Y − h)](a)`; may be negative.
pub fn crossfold_risk(h: &RkhsFunction, data: &HistoricalDataset) -> Result<f64> {
    let r = residuals(h, data)?;
    crossfold_of(&r, data)
}

pub(crate) fn crossfold_of(values: &[f64], data: &HistoricalDataset) -> Result<f64> {
    let f0 = data.fold_rows(0)?;
    let f1 = data.fold_rows(1)?;
    let k = data.num_arms() as f64;
    let mut total = 0.0;
    for (c0, c1) in f0.iter().zip(&f1) {
        if c0.is_empty() || c1.is_empty() {
            return Err(Error::State("fold 0 or fold 1 cell is empty".into()));
        }
        total += mean_over(c0, values) * mean_over(c1, values);
    }
    Ok(total / (2.0 * k))
}

/// `‖h‖²_{2,N} = (1/N) Σ_i h(S_i)²`.
pub fn empirical_sq_norm(h: &RkhsFunction, data: &HistoricalDataset) -> Result<f64> {
    let v = h.evaluate(data.s())?;
    Ok(v.norm_squared() / data.len() as f64)
}

/// Penalized plug-in objective on the training view.
pub fn plugin_objective(h: &RkhsFunction, data: &HistoricalDataset, lambda: f64) -> Result<f64> {
    let (train, _) = training_view(data)?;
    Ok(plug_in_risk(h, &train)? + lambda * empirical_sq_norm(h, &train)?)
}

/// Penalized cross-fold (npJIVE) objective on the training view.
pub fn npjive_objective(h: &RkhsFunction, data: &HistoricalDataset, lambda: f64) -> Result<f64> {
    let (train, _) = training_view(data)?;
    Ok(crossfold_risk(h, &train)? + lambda * empirical_sq_norm(h, &train)?)
}

/// Quadratic whose minimizer is the plug-in fit.
pub fn plugin_problem(moments: &ArmMoments, lambda: f64, jitter: f64) -> QuadraticProblem {
    let k = moments.num_arms() as f64;
    let f = &moments.arm_features;
    let mut a = f.transpose() * f / k + &moments.second_moment * (2.0 * lambda);
    symmetrize(&mut a);
    let b = f.transpose() * &moments.arm_means / k;
    QuadraticProblem::new(a, b, jitter_for(&moments.second_moment, jitter))
}

/// Quadratic whose minimizer is the npJIVE fit.
pub fn npjive_problem(moments: &ArmMoments, lambda: f64, jitter: f64) -> Result<QuadraticProblem> {
    let k = moments.num_arms() as f64;
    let ([m0, m1], [f0, f1]) = moments.fold_pair()?;
    let a = moments.crossfold_quadratic()? + &moments.second_moment * (2.0 * lambda);
    let b = (f1.transpose() * m0 + f0.transpose() * m1) / (2.0 * k);
    Ok(QuadraticProblem::new(a, b, jitter_for(&moments.second_moment, jitter)))
}

const NPJIVE_ADVICE: &str = "the cross-fold quadratic is indefinite at this regularization; increase lambda";

fn provenance(folds: FoldSet, novel: bool) -> Provenance {
    Provenance { folds, novel }
}

/// Minimum-distance fit: plug-in risk plus `λ‖h‖²_{2,N}` over a given dictionary.
pub fn fit_plugin_in(data: &HistoricalDataset, dict: &Dictionary, cfg: &FitConfig) -> Result<RkhsFunction> {
    cfg.validate()?;
    let (train, folds) = training_view(data)?;
    let phi = dict.features(train.s())?;
    let moments = ArmMoments::compute(&train, &phi, train.y())?;
    let beta = plugin_problem(&moments, cfg.lambda, cfg.jitter).solve("increase lambda")?;
    Ok(dict.function(beta)?.with_provenance(provenance(folds, false)))
}

/// Minimum-distance fit with centers drawn from the training rows.
pub fn fit_plugin(data: &HistoricalDataset, cfg: &FitConfig) -> Result<RkhsFunction> {
    let (train, _) = training_view(data)?;
    let dict = Dictionary::from_data(&train, None, cfg)?;
    fit_plugin_in(data, &dict, cfg)
}

/// npJIVE: cross-fold risk plus `λ‖h‖²_{2,N}` over a given dictionary.
pub fn fit_npjive_in(data: &HistoricalDataset, dict: &Dictionary, cfg: &FitConfig) -> Result<RkhsFunction> {
    cfg.validate()?;
    if data.folds().is_none() {
        return Err(Error::State("npJIVE needs fold labels; call assign_folds first".into()));
    }
    let (train, folds) = training_view(data)?;
    let phi = dict.features(train.s())?;
    let moments = ArmMoments::compute(&train, &phi, train.y())?;
    let eps = jitter_for(&moments.second_moment, cfg.jitter);
    let lambda = floored_level(&moments.crossfold_quadratic()?, &moments.second_moment, eps, cfg.lambda, cfg.lambda_floor)?;
    let beta = npjive_problem(&moments, lambda, cfg.jitter)?.solve(NPJIVE_ADVICE)?;
    Ok(dict.function(beta)?.with_provenance(provenance(folds, false)))
}

/// npJIVE with centers drawn from the training rows.
pub fn fit_npjive(data: &HistoricalDataset, cfg: &FitConfig) -> Result<RkhsFunction> {
    if data.folds().is_none() {
        return Err(Error::State("npJIVE needs fold labels; call assign_folds first".into()));
    }
    let (train, _) = training_view(data)?;
    let dict = Dictionary::from_data(&train, None, cfg)?;
    fit_npjive_in(data, &dict, cfg)
}

/// Pooled kernel ridge of `Y` on `S`, ignoring the arms. This is the
/// confounded regression baseline: `(1/N)Σ(Y − h)² + λ‖h‖²_{2,N}`.
pub fn fit_pooled_regression_in(data: &HistoricalDataset, dict: &Dictionary, cfg: &FitConfig) -> Result<RkhsFunction> {
    cfg.validate()?;
    let (train, folds) = training_view(data)?;
    let phi = dict.features(train.s())?;
    let nn = train.len() as f64;
    let g = phi.transpose() * &phi / nn;
    let mut a = &g * (1.0 + cfg.lambda);
    symmetrize(&mut a);
    let b = phi.transpose() * DVector::from_column_slice(train.y()) / nn;
    let beta = QuadraticProblem::new(a, b, jitter_for(&g, cfg.jitter)).solve("increase lambda")?;
    Ok(dict.function(beta)?.with_provenance(provenance(folds, false)))
}
