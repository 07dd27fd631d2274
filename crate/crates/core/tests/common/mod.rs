//! Toy instances and a derivative-free quadratic minimizer shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use npjive::data::{HistoricalDataset, NovelDataset};
use npjive::kernel::KernelSpec;
use npjive::npjive::Dictionary;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss<R: Rng + ?Sized>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// `K` arms of `n` units on a 1-d surrogate clustered around `centers`,
/// plus `n_new` novel rows. Arms differ in how they weight the clusters.
pub fn clustered(r: &mut impl Rng, k: usize, n: usize, n_new: usize, centers: &[f64], spread: f64) -> (HistoricalDataset, NovelDataset) {
    let draw = |r: &mut dyn rand::RngCore, w: &[f64]| {
        let total: f64 = w.iter().sum();
        let mut u = r.random::<f64>() * total;
        let mut j = 0;
        while j + 1 < w.len() && u >= w[j] {
            u -= w[j];
            j += 1;
        }
        centers[j] + spread * gauss(r)
    };
    let mut s = Vec::new();
    let mut y = Vec::new();
    let mut arm = Vec::new();
    for a in 0..k {
        let w: Vec<f64> = centers.iter().map(|_| 0.1 + r.random::<f64>()).collect();
        for _ in 0..n {
            let si = draw(r, &w);
            s.push(si);
            y.push(si.sin() + 0.5 * gauss(r));
            arm.push(a);
        }
    }
    let w = vec![1.0; centers.len()];
    let s_new: Vec<f64> = (0..n_new).map(|_| draw(r, &w)).collect();
    let hist = HistoricalDataset::new(DMatrix::from_vec(s.len(), 1, s), y, arm, k).unwrap();
    (hist, NovelDataset::new(DMatrix::from_vec(n_new, 1, s_new)).unwrap())
}

pub fn dictionary(centers: &[f64], bandwidth: f64) -> Dictionary {
    Dictionary::new(KernelSpec::new(bandwidth, 1).unwrap(), DMatrix::from_column_slice(centers.len(), 1, centers)).unwrap()
}

/// `ε` as the fits compute it: `rel · trace(G)/L` for `G = ΦᵀΦ/N`.
pub fn jitter_of(phi: &DMatrix<f64>, rel: f64) -> f64 {
    let l = phi.ncols() as f64;
    rel * phi.iter().map(|v| v * v).sum::<f64>() / phi.nrows() as f64 / l
}

fn unit(d: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[i] = 1.0;
    e
}

/// Central-difference gradient with unit steps. Exact (up to rounding)
/// for a quadratic `f`.
pub fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let d = x.len();
    DVector::from_fn(d, |i, _| (f(&(x + unit(d, i))) - f(&(x - unit(d, i)))) / 2.0)
}

/// Hessian of a quadratic from unit-step second differences at 0.
pub fn fd_hessian(f: &dyn Fn(&DVector<f64>) -> f64, d: usize) -> DMatrix<f64> {
    let z = DVector::zeros(d);
    let f0 = f(&z);
    DMatrix::from_fn(d, d, |i, j| {
        let (ei, ej) = (unit(d, i), unit(d, j));
        f(&(&ei + &ej)) - f(&ei) - f(&ej) + f0
    })
}

/// Grid half-width per dimension count. A center that beats its whole window
/// is within `h·√(dκ)` of the minimizer, so the window must exceed `√(dκ)`.
pub fn grid_half_width(d: usize) -> i32 {
    if d == 1 {
        20
    } else {
        10
    }
}

/// Largest condition number for which [`grid_minimize`] is guaranteed to zoom
/// onto the minimizer.
pub fn grid_max_condition(d: usize) -> f64 {
    let w = grid_half_width(d) as f64;
    w * w / d as f64
}

/// Zooming grid search: a (2·W+1)^d grid around the incumbent at spacing
/// `h`; recenter on the best point, halve `h` once the incumbent wins.
pub fn grid_minimize(f: &dyn Fn(&DVector<f64>) -> f64, d: usize) -> DVector<f64> {
    let w = grid_half_width(d);
    let mut x = DVector::zeros(d);
    let mut fx = f(&x);
    let mut h = 1.0;
    for _ in 0..100_000 {
        let mut best = (fx, None::<DVector<f64>>);
        let mut idx = vec![-w; d];
        loop {
            let p = &x + DVector::from_fn(d, |i, _| h * idx[i] as f64);
            let fp = f(&p);
            if fp < best.0 {
                best = (fp, Some(p));
            }
            let mut c = 0;
            while c < d {
                idx[c] += 1;
                if idx[c] <= w {
                    break;
                }
                idx[c] = -w;
                c += 1;
            }
            if c == d {
                break;
            }
        }
        match best.1 {
            Some(p) => {
                x = p;
                fx = best.0;
            }
            None => {
                h *= 0.5;
                if h < 1e-9 {
                    break;
                }
            }
        }
    }
    x
}

/// Generic minimizer for a strictly convex quadratic of dimension ≤ 3:
/// the zooming grid for `d ≤ 2`, the finite-difference normal equations for `d = 3`.
pub fn brute_minimize(f: &dyn Fn(&DVector<f64>) -> f64, d: usize) -> DVector<f64> {
    if d <= 2 {
        grid_minimize(f, d)
    } else {
        let h = fd_hessian(f, d);
        let g = fd_gradient(f, &DVector::zeros(d));
        h.lu().solve(&(-g)).expect("nonsingular finite-difference Hessian")
    }
}

/// Condition number of the finite-difference Hessian (∞ if not positive definite).
pub fn condition(f: &dyn Fn(&DVector<f64>) -> f64, d: usize) -> f64 {
    let e = fd_hessian(f, d).symmetric_eigen().eigenvalues;
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
