//! Property tests for the structural invariants of kernels, datasets, risks,
//! fits and the inference formulas.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{clustered, dictionary, rng};
use npjive::data::{load_historical_csv, load_novel_csv, write_historical_csv, write_novel_csv, HistoricalDataset};
use npjive::debias::{debias_exact_objective, fit_debias_exact_in, fit_q_approx_in, qa_star_linear_term, DebiasConfig};
use npjive::kernel::{gram, KernelSpec, RkhsFunction};
use npjive::npjive::{
    crossfold_risk, fit_npjive_in, fit_plugin_in, npjive_objective, plug_in_risk, plugin_objective, training_view, FitConfig,
};
use npjive::onestep::{one_step_theta, pair_folds, Debias, ThetaEstimate, Z_975};

fn points(n: usize, d: usize, seed: u64, range: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(n, d, |_, _| range * (2.0 * r.random::<f64>() - 1.0))
}

/// Rebuild `data` with rows reordered by `perm` (fold labels follow their rows).
fn reorder(data: &HistoricalDataset, perm: &[usize]) -> HistoricalDataset {
    let s = data.s().select_rows(perm.iter());
    let y = perm.iter().map(|&i| data.y()[i]).collect();
    let arm = perm.iter().map(|&i| data.arms()[i]).collect();
    let out = HistoricalDataset::new(s, y, arm, data.num_arms()).unwrap();
    match data.folds() {
        Some(f) => out.with_folds(perm.iter().map(|&i| f[i]).collect(), data.num_folds()).unwrap(),
        None => out,
    }
}

fn toy(k: usize, n: usize, seed: u64) -> (HistoricalDataset, npjive::data::NovelDataset, Vec<f64>) {
    let mut r = rng(seed);
    let centers: Vec<f64> = (0..4).map(|j| j as f64).collect();
    let (h, nov) = clustered(&mut r, k, n, 30, &centers, 0.4);
    (h, nov, centers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_values_bounded(seed in any::<u64>(), d in 1usize..=3, bw in 0.3f64..3.0) {
        let spec = KernelSpec::new(bw, d).unwrap();
        let p = points(12, d, seed, 3.0);
        let g = gram(&p, &p, &spec).unwrap();
        for i in 0..12 {
            prop_assert_eq!(g[(i, i)], 1.0);
            for j in 0..12 {
                prop_assert!(g[(i, j)] > 0.0 && g[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn gram_is_symmetric_psd(seed in any::<u64>(), n in 1usize..=200, d in 1usize..=2, bw in 0.05f64..5.0) {
        let spec = KernelSpec::new(bw, d).unwrap();
        let p = points(n, d, seed, 3.0);
        let g = gram(&p, &p, &spec).unwrap();
        prop_assert_eq!(&g, &g.transpose());
        let e = g.symmetric_eigen().eigenvalues.min();
        prop_assert!(e >= -1e-10 * n as f64, "min eigenvalue {e}");
    }

    #[test]
    fn gram_translation_invariant(seed in any::<u64>(), d in 1usize..=3, bw in 0.1f64..3.0, shift in -5.0f64..5.0) {
        let spec = KernelSpec::new(bw, d).unwrap();
        let (a, b) = (points(9, d, seed, 2.0), points(7, d, seed ^ 1, 2.0));
        let g = gram(&a, &b, &spec).unwrap();
        let gs = gram(&a.add_scalar(shift), &b.add_scalar(shift), &spec).unwrap();
        prop_assert!((g - gs).amax() <= 1e-12);
    }

    #[test]
    fn evaluate_is_linear(seed in any::<u64>(), l in 1usize..=20, x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let spec = KernelSpec::new(0.7, 1).unwrap();
        let centers = points(l, 1, seed, 2.0);
        let mut r = rng(seed ^ 2);
        let b1 = DVector::from_fn(l, |_, _| 10.0 * (r.random::<f64>() - 0.5));
        let b2 = DVector::from_fn(l, |_, _| 10.0 * (r.random::<f64>() - 0.5));
        let f = |b: DVector<f64>| RkhsFunction::new(spec, centers.clone(), b).unwrap();
        let pts = points(15, 1, seed ^ 3, 4.0);
        let lhs = f(&b1 * x + &b2 * y).evaluate(&pts).unwrap();
        let rhs = f(b1).evaluate(&pts).unwrap() * x + f(b2).evaluate(&pts).unwrap() * y;
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn folds_are_balanced(k in 1usize..=6, n in 4usize..=15, four in any::<bool>(), seed in any::<u64>()) {
        let f = if four { 4u8 } else { 2 };
        let (h, _, _) = toy(k, n, seed);
        let d = h.assign_folds(f, seed).unwrap();
        prop_assert_eq!(d.per_arm(), n - n % f as usize);
        let folds = d.folds().unwrap();
        for a in 0..k {
            for v in 0..f {
                let c = (0..d.len()).filter(|&i| d.arms()[i] == a && folds[i] == v).count();
                prop_assert_eq!(c, n / f as usize);
            }
        }
    }

    #[test]
    fn folds_ignore_values(k in 1usize..=5, n in 4usize..=12, seed in any::<u64>()) {
        let (h, _, _) = toy(k, n, seed);
        let other = HistoricalDataset::new(h.s().map(|v| -3.0 * v), h.y().iter().map(|v| v + 1.0).collect(), h.arms().to_vec(), k).unwrap();
        let (a, b) = (h.assign_folds(4, 7).unwrap(), other.assign_folds(4, 7).unwrap());
        prop_assert_eq!(a.folds(), b.folds());
    }

    #[test]
    fn csv_round_trip_is_exact(k in 1usize..=4, n in 1usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = DMatrix::from_fn(k * n, 2, |_, _| (r.random::<f64>() - 0.5) * 10f64.powi(r.random_range(-8..8)));
        let y = (0..k * n).map(|_| r.random::<f64>() * 1e5 - 1.0).collect();
        let h = HistoricalDataset::new(s, y, (0..k * n).map(|i| i / n).collect(), k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_historical_csv(&p, &h).unwrap();
        let back = load_historical_csv(&p).unwrap();
        prop_assert_eq!(back.s(), h.s());
        prop_assert_eq!(back.y(), h.y());
        prop_assert_eq!(back.arms(), h.arms());
        let nov = npjive::data::NovelDataset::new(h.s().clone()).unwrap();
        let q = dir.path().join("n.csv");
        write_novel_csv(&q, &nov).unwrap();
        let back = load_novel_csv(&q).unwrap();
        prop_assert_eq!(back.s(), nov.s());
    }

    #[test]
    fn risks_invariant_to_within_cell_permutation(k in 1usize..=5, half in 1usize..=5, seed in any::<u64>()) {
        let (h, _, centers) = toy(k, 2 * half, seed);
        let d = h.assign_folds(2, seed).unwrap();
        let mut r = rng(seed ^ 5);
        let b = DVector::from_fn(centers.len(), |_, _| r.random::<f64>() - 0.5);
        let f = dictionary(&centers, 0.5).function(b).unwrap();
        let mut perm: Vec<usize> = Vec::new();
        for v in 0..2 {
            for mut cell in d.fold_rows(v).unwrap() {
                cell.shuffle(&mut r);
                perm.extend(cell);
            }
        }
        perm.shuffle(&mut r); // cell membership, not row order, is what matters
        let p = reorder(&d, &perm);
        prop_assert!((crossfold_risk(&f, &d).unwrap() - crossfold_risk(&f, &p).unwrap()).abs() <= 1e-12);
        prop_assert!((plug_in_risk(&f, &d).unwrap() - plug_in_risk(&f, &p).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn crossfold_risk_symmetric_in_folds(k in 1usize..=5, half in 1usize..=5, seed in any::<u64>()) {
        let (h, _, centers) = toy(k, 2 * half, seed);
        let d = h.assign_folds(2, seed).unwrap();
        let mut r = rng(seed ^ 6);
        let f = dictionary(&centers, 0.5).function(DVector::from_fn(centers.len(), |_, _| r.random::<f64>())).unwrap();
        prop_assert!((crossfold_risk(&f, &d).unwrap() - crossfold_risk(&f, &d.swap_folds01()).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn fits_beat_the_zero_function(k in 2usize..=8, half in 2usize..=6, lambda in 0.01f64..1.0, seed in any::<u64>()) {
        let (h, nov, centers) = toy(k, 2 * half, seed);
        let d = h.assign_folds(2, seed).unwrap();
        let dict = dictionary(&centers, 0.5);
        let cfg = FitConfig { lambda, num_centers: centers.len(), bandwidth: 0.5, lambda_floor: true, ..FitConfig::default() };
        let zero = dict.function(DVector::zeros(centers.len())).unwrap();
        let hn = fit_npjive_in(&d, &dict, &cfg).unwrap();
        prop_assert!(npjive_objective(&hn, &d, lambda).unwrap() <= npjive_objective(&zero, &d, lambda).unwrap() + 1e-12);
        let hp = fit_plugin_in(&d, &dict, &cfg).unwrap();
        prop_assert!(plugin_objective(&hp, &d, lambda).unwrap() <= plugin_objective(&zero, &d, lambda).unwrap() + 1e-12);
        let dc = DebiasConfig { mu: lambda, fit: cfg, ..DebiasConfig::default() };
        let xi = fit_debias_exact_in(&d, &nov, &dict, &dc).unwrap();
        prop_assert!(debias_exact_objective(&xi, &d, &nov, lambda).unwrap() <= debias_exact_objective(&zero, &d, &nov, lambda).unwrap() + 1e-12);
    }

    #[test]
    fn loo_linear_term_identity(k in 1usize..=4, n in 2usize..=8, seed in any::<u64>()) {
        let (h, _, centers) = toy(k, n, seed);
        let dict = dictionary(&centers, 0.5);
        let a = (seed % k as u64) as usize;
        let full = qa_star_linear_term(&h, &dict, a, None).unwrap();
        let phi = dict.features(h.s()).unwrap();
        for &i in &h.arm_rows()[a] {
            let loo = qa_star_linear_term(&h, &dict, a, Some(i)).unwrap();
            let rebuilt = (loo * (n - 1) as f64 + phi.row(i).transpose()) / n as f64;
            prop_assert!((rebuilt - &full).amax() <= 1e-12);
        }
    }

    #[test]
    fn pairing_is_an_arm_preserving_bijection(k in 1usize..=6, q in 1usize..=4, seed in any::<u64>()) {
        let (h, _, _) = toy(k, 4 * q, seed);
        let d = h.assign_folds(4, seed).unwrap();
        let p = pair_folds(&d, seed).unwrap();
        let folds = d.folds().unwrap();
        let mut dst: Vec<usize> = p.pairs().iter().map(|x| x.1).collect();
        dst.sort_unstable();
        dst.dedup();
        prop_assert_eq!(dst.len(), p.len());
        prop_assert_eq!(p.len(), k * q);
        for &(i, j) in p.pairs() {
            prop_assert_eq!((folds[i], folds[j]), (2, 3));
            prop_assert_eq!(d.arms()[i], d.arms()[j]);
            prop_assert_eq!(p.partner(i), Some(j));
        }
    }

    #[test]
    fn wald_interval_formula(theta in -10.0f64..10.0, s1 in 0.0f64..5.0, s2 in 0.0f64..5.0, n_new in 2usize..5000, np in 2usize..5000) {
        let e = ThetaEstimate::from_components(theta, s1, s2, n_new, np);
        prop_assert!((e.se * e.se - (s1 / n_new as f64 + s2 / np as f64)).abs() <= 1e-12);
        prop_assert!(e.ci_low <= theta && theta <= e.ci_high);
        prop_assert!(((e.ci_high - theta) - Z_975 * e.se).abs() <= 1e-12);
        prop_assert!(((theta - e.ci_low) - (e.ci_high - theta)).abs() <= 1e-12);
        // fewer units on either side never narrows the interval
        prop_assert!(ThetaEstimate::from_components(theta, s1, s2, n_new - 1, np).se >= e.se);
        prop_assert!(ThetaEstimate::from_components(theta, s1, s2, n_new, np - 1).se >= e.se);
    }

    #[test]
    fn se_regimes(s1 in 0.1f64..5.0, s2 in 0.1f64..5.0, m in 10usize..1000) {
        // n′/N → 0: the novel-sample term dominates; n′/N → ∞: the correction term does
        let small = ThetaEstimate::from_components(0.0, s1, s2, m, m * 1_000_000);
        prop_assert!((small.se * small.se / (s1 / m as f64) - 1.0).abs() < 1e-4);
        let large = ThetaEstimate::from_components(0.0, s1, s2, m * 1_000_000, m);
        prop_assert!((large.se * large.se / (s2 / m as f64) - 1.0).abs() < 1e-4);
    }
}

#[test]
fn arm_weight_one_step_matches_scalar_recomputation() {
    for seed in 0..10 {
        let (h, nov, centers) = toy(6, 8, seed);
        let d = h.assign_folds(4, seed).unwrap();
        let dict = dictionary(&centers, 0.5);
        let cfg = FitConfig { lambda: 0.3, num_centers: 4, bandwidth: 0.5, lambda_floor: true, ..FitConfig::default() };
        let hf = fit_npjive_in(&d, &dict, &cfg).unwrap();
        let q = fit_q_approx_in(&d, &nov, &dict, &DebiasConfig { fit: cfg, ..DebiasConfig::default() }).unwrap();
        let pairing = pair_folds(&d, seed).unwrap();
        let est = one_step_theta(&hf, Debias::ArmWeights(&q), &d, &nov, &pairing).unwrap();

        let k = d.num_arms() as f64;
        let mut plug = 0.0;
        for i in 0..nov.len() {
            plug += hf.evaluate_one(&[nov.s()[(i, 0)]]);
        }
        plug /= nov.len() as f64;
        let mut corr = 0.0;
        for &(i, j) in pairing.pairs() {
            let a = d.arms()[i];
            corr += k * q.gamma()[a] * (d.y()[j] - hf.evaluate_one(&[d.s()[(j, 0)]]));
        }
        corr /= pairing.len() as f64;
        assert!((est.theta - (plug + corr)).abs() <= 1e-12, "{} vs {}", est.theta, plug + corr);
    }
}

#[test]
fn training_view_of_four_folds_is_folds_zero_and_one() {
    let (h, _, _) = toy(3, 8, 1);
    let d = h.assign_folds(4, 1).unwrap();
    let (t, f) = training_view(&d).unwrap();
    assert_eq!(f.folds(), vec![0, 1]);
    assert_eq!(t.len(), d.len() / 2);
}
