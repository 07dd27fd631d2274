//! Four-fold one-step estimator of `θ = E[h*(S(new))]` with Wald intervals.
//!
//! Nuisances are fit on folds 0 and 1 (plus the novel arm). Each fold-2 row
//! `i` is paired with a fold-3 row `j(i)` from the same arm, which plays the
//! independent copy `S′` in `ψ = h(S_new) + ξ(S′)(Y − h(S))`:
//!
//! `θ̂ = (1/n′) Σ ĥ(S_new) + (4/N) Σ_{i ∈ fold 2} ξ̂(S_i)(Y_{j(i)} − ĥ(S_{j(i)}))`.
//!
//! With arm weights the correction uses `q(A_i)` in place of `ξ̂(S_i)`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{HistoricalDataset, NovelDataset};
use crate::debias::ArmWeightFunction;
use crate::error::{Error, Result};
use crate::kernel::{Provenance, RkhsFunction};
use crate::rng;

/// Normal 97.5% quantile used for the Wald interval.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Sample variance of `ĥ` over the novel arm.
    pub sigma1_sq: f64,
    /// Sample variance of the realized correction terms.
    pub sigma2_sq: f64,
    /// `min(n′, N/4)` for one-step estimates, `n′` for plug-in ones.
    pub n_eff: usize,
    pub n_new: usize,
    /// Number of fold-2/fold-3 pairs (0 for plug-in estimates).
    pub n_pairs: usize,
}

impl ThetaEstimate {
    /// Assemble from a point estimate and variance components:
    /// `se² = σ₁²/n′ + σ₂²/n_pairs`, interval `θ ± 1.96·se`.
    pub fn from_components(theta: f64, sigma1_sq: f64, sigma2_sq: f64, n_new: usize, n_pairs: usize) -> Self {
        let mut var = sigma1_sq / n_new as f64;
        if n_pairs > 0 {
            var += sigma2_sq / n_pairs as f64;
        }
        let se = var.sqrt();
        let n_eff = if n_pairs > 0 { n_new.min(n_pairs) } else { n_new };
        Self {
            theta,
            se,
            ci_low: theta - Z_975 * se,
            ci_high: theta + Z_975 * se,
            sigma1_sq,
            sigma2_sq,
            n_eff,
            n_new,
            n_pairs,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// One-to-one map from fold-2 rows to fold-3 rows of the same arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPairing {
    pairs: Vec<(usize, usize)>,
}

impl FoldPairing {
    /// Validate an explicit pairing: bijective and arm-respecting.
    pub fn new(data: &HistoricalDataset, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let folds = data.folds().ok_or_else(|| Error::State("pairing needs fold labels".into()))?;
        let mut seen_src = vec![false; data.len()];
        let mut seen_dst = vec![false; data.len()];
        for &(i, j) in &pairs {
            if i >= data.len() || j >= data.len() {
                return Err(Error::Input(format!("pair ({i}, {j}) out of range")));
            }
            if folds[i] != 2 || folds[j] != 3 {
                return Err(Error::Input(format!("pair ({i}, {j}) must map fold 2 to fold 3")));
            }
            if data.arms()[i] != data.arms()[j] {
                return Err(Error::Input(format!("pair ({i}, {j}) crosses arms")));
            }
            if std::mem::replace(&mut seen_src[i], true) || std::mem::replace(&mut seen_dst[j], true) {
                return Err(Error::Input(format!("pair ({i}, {j}) repeats a row")));
            }
        }
        let n2 = folds.iter().filter(|&&v| v == 2).count();
        if pairs.len() != n2 {
            return Err(Error::Input(format!("{} pairs for {n2} fold-2 rows", pairs.len())));
        }
        Ok(Self { pairs })
    }

    /// `(i, j(i))` in fold-2 row order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `j(i)`.
    pub fn partner(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }

    /// The map fold 3 → fold 2.
    pub fn inverse(&self) -> HashMap<usize, usize> {
        self.pairs.iter().map(|&(i, j)| (j, i)).collect()
    }
}

/// Seeded random bijection between fold-2 and fold-3 rows within each arm.
pub fn pair_folds(data: &HistoricalDataset, seed: u64) -> Result<FoldPairing> {
    let f2 = data.fold_rows(2)?;
    let f3 = data.fold_rows(3)?;
    let mut pairs = Vec::new();
    for (a, (src, dst)) in f2.iter().zip(&f3).enumerate() {
        if src.len() != dst.len() {
            return Err(Error::State(format!(
                "arm {a}: fold 2 has {} rows but fold 3 has {}",
                src.len(),
                dst.len()
            )));
        }
        let mut perm = dst.clone();
        perm.shuffle(&mut rng::stream(seed, rng::purpose::PAIRING, a as u64));
        pairs.extend(src.iter().copied().zip(perm));
    }
    pairs.sort_unstable();
    Ok(FoldPairing { pairs })
}

/// The debiasing nuisance used in the correction term.
#[derive(Debug, Clone, Copy)]
pub enum Debias<'a> {
    /// No correction: the plug-in functional.
    None,
    /// `ξ(S_i)` evaluated at the fold-2 row.
    Function(&'a RkhsFunction),
    /// `q(A_i)` per arm.
    ArmWeights(&'a ArmWeightFunction),
}

fn check_out_of_fold(what: &str, p: Option<Provenance>) -> Result<()> {
    if let Some(p) = p {
        if p.folds.contains(2) || p.folds.contains(3) {
            return Err(Error::Contract(format!(
                "{what} was trained on folds {:?}; it must not see the evaluation folds 2 and 3",
                p.folds.folds()
            )));
        }
    }
    Ok(())
}

fn check_provenance(h: &RkhsFunction, debias: Debias<'_>) -> Result<()> {
    check_out_of_fold("primary nuisance", h.provenance())?;
    match debias {
        Debias::None => Ok(()),
        Debias::Function(xi) => check_out_of_fold("debiasing nuisance", xi.provenance()),
        Debias::ArmWeights(q) => check_out_of_fold("debiasing weights", Some(q.provenance())),
    }
}

/// Correction terms `ξ(S_i)(Y_{j(i)} − ĥ(S_{j(i)}))` in pairing order.
fn correction_terms(
    h: &RkhsFunction,
    debias: Debias<'_>,
    data: &HistoricalDataset,
    pairing: &FoldPairing,
) -> Result<Vec<f64>> {
    let src: Vec<usize> = pairing.pairs().iter().map(|p| p.0).collect();
    let dst: Vec<usize> = pairing.pairs().iter().map(|p| p.1).collect();
    let weights: Vec<f64> = match debias {
        Debias::None => return Ok(vec![0.0; src.len()]),
        Debias::Function(xi) => xi.evaluate(&data.s().select_rows(src.iter()))?.iter().copied().collect(),
        Debias::ArmWeights(q) => {
            if q.num_arms() != data.num_arms() {
                return Err(Error::Input(format!(
                    "arm weights cover {} arms, data has {}",
                    q.num_arms(),
                    data.num_arms()
                )));
            }
            src.iter().map(|&i| q.arm_weight(data.arms()[i])).collect()
        }
    };
    let h_dst = h.evaluate(&data.s().select_rows(dst.iter()))?;
    Ok(weights
        .iter()
        .zip(&dst)
        .zip(h_dst.iter())
        .map(|((w, &j), hv)| w * (data.y()[j] - hv))
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn check_inputs(data: &HistoricalDataset, novel: &NovelDataset) -> Result<()> {
    novel.check_compatible(data)?;
    if data.folds().is_none() {
        return Err(Error::State("one-step estimation needs 4-fold labels".into()));
    }
    Ok(())
}

/// Point estimate `θ̂` only (no variance requirements).
pub fn one_step_point(
    h: &RkhsFunction,
    debias: Debias<'_>,
    data: &HistoricalDataset,
    novel: &NovelDataset,
    pairing: &FoldPairing,
) -> Result<f64> {
    check_inputs(data, novel)?;
    check_provenance(h, debias)?;
    let plug_in = h.evaluate(novel.s())?.mean();
    let terms = correction_terms(h, debias, data, pairing)?;
    if terms.is_empty() {
        return Err(Error::Input("pairing is empty".into()));
    }
    Ok(plug_in + mean(&terms))
}

/// `(σ̂₁², σ̂₂²)`: unbiased sample variances of `ĥ(S_new)` and of the
/// correction terms.
pub fn variance_components(
    h: &RkhsFunction,
    debias: Debias<'_>,
    data: &HistoricalDataset,
    novel: &NovelDataset,
    pairing: &FoldPairing,
) -> Result<(f64, f64)> {
    check_inputs(data, novel)?;
    check_provenance(h, debias)?;
    if novel.len() < 2 {
        return Err(Error::Input("variance estimation needs at least 2 novel rows".into()));
    }
    if pairing.len() < 2 {
        return Err(Error::Input("variance estimation needs at least 2 fold pairs".into()));
    }
    let hv: Vec<f64> = h.evaluate(novel.s())?.iter().copied().collect();
    let terms = correction_terms(h, debias, data, pairing)?;
    Ok((sample_variance(&hv), sample_variance(&terms)))
}

/// One-step estimate with standard error and 95% Wald interval.
pub fn one_step_theta(
    h: &RkhsFunction,
    debias: Debias<'_>,
    data: &HistoricalDataset,
    novel: &NovelDataset,
    pairing: &FoldPairing,
) -> Result<ThetaEstimate> {
    let theta = one_step_point(h, debias, data, novel, pairing)?;
    let (s1, s2) = variance_components(h, debias, data, novel, pairing)?;
    Ok(ThetaEstimate::from_components(theta, s1, s2, novel.len(), pairing.len()))
}

/// Plug-in functional `(1/n′) Σ ĥ(S_new)` with its sampling-only interval.
pub fn plug_in_theta(h: &RkhsFunction, novel: &NovelDataset) -> Result<ThetaEstimate> {
    if novel.len() < 2 {
        return Err(Error::Input("variance estimation needs at least 2 novel rows".into()));
    }
    let hv: Vec<f64> = h.evaluate(novel.s())?.iter().copied().collect();
    Ok(ThetaEstimate::from_components(mean(&hv), sample_variance(&hv), 0.0, novel.len(), 0))
}
