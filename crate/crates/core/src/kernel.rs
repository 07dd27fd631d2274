//! Gaussian kernels, Nyström dictionaries and RKHS hypothesis functions.
//!
//! Every hypothesis in the crate (the structural function `h`, the debiasing
//! nuisance `ξ`, the basis functions `q*_a`) lives in the span of a finite
//! dictionary `{k(·, c_j)}` of `L` centers. A function is its coefficient
//! vector `β`, evaluated as `h(s) = Σ_j β_j k(s, c_j)`, so every objective in
//! the crate becomes an `L`-dimensional quadratic in `β`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Gaussian kernel `k(s,t) = exp(-‖s-t‖² / (2ν²))` on `ℝ^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Input(format!("bandwidth must be positive and finite, got {bandwidth}")));
        }
        if dim == 0 {
            return Err(Error::Input("kernel dimension must be at least 1".into()));
        }
        Ok(Self { bandwidth, dim })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn of_sq_dist(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Kernel value for two points given as slices.
    pub fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), t.len());
        let sq: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        self.of_sq_dist(sq)
    }

    fn check(&self, points: &DMatrix<f64>, what: &str) -> Result<()> {
        if points.ncols() != self.dim {
            return Err(Error::Input(format!(
                "{what} have dimension {}, kernel expects {}",
                points.ncols(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.check(a, "points_a")?;
    spec.check(b, "points_b")?;
    let (na, d) = (a.nrows(), spec.dim);
    let scale = -0.5 / (spec.bandwidth * spec.bandwidth);
    let mut out = DMatrix::zeros(na, b.nrows());
    if na == 0 {
        return Ok(out);
    }
    for (j, col) in out.as_mut_slice().chunks_mut(na).enumerate() {
        for c in 0..d {
            let t = b[(j, c)];
            for (o, &x) in col.iter_mut().zip(a.column(c).iter()) {
                *o += (x - t) * (x - t);
            }
        }
        for o in col.iter_mut() {
            *o = (scale * *o).exp();
        }
    }
    Ok(out)
}

/// Set of fold labels, as a bitmask over folds `0..8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FoldSet(u8);

impl FoldSet {
    pub const EMPTY: FoldSet = FoldSet(0);
    /// Every fold; used for fits on unfolded data.
    pub const ALL: FoldSet = FoldSet(u8::MAX);

    pub fn of(folds: &[u8]) -> Self {
        FoldSet(folds.iter().fold(0u8, |m, &f| m | (1 << f)))
    }

    pub fn contains(&self, fold: u8) -> bool {
        self.0 & (1 << fold) != 0
    }

    pub fn union(self, other: FoldSet) -> FoldSet {
        FoldSet(self.0 | other.0)
    }

    pub fn folds(&self) -> Vec<u8> {
        (0..8).filter(|&f| self.contains(f)).collect()
    }
}

/// Which data a fitted function has seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Historical folds used for fitting.
    pub folds: FoldSet,
    /// Whether the novel-arm sample entered the objective.
    pub novel: bool,
}

/// A function in the span of a Gaussian-kernel dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    spec: KernelSpec,
    centers: DMatrix<f64>,
    coefficients: DVector<f64>,
    provenance: Option<Provenance>,
}

impl RkhsFunction {
    pub fn new(spec: KernelSpec, centers: DMatrix<f64>, coefficients: DVector<f64>) -> Result<Self> {
        spec.check(&centers, "centers")?;
        if centers.nrows() != coefficients.len() {
            return Err(Error::Input(format!(
                "{} centers but {} coefficients",
                centers.nrows(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        Ok(Self { spec, centers, coefficients, provenance: None })
    }

    /// The zero function on a dictionary.
    pub fn zero(spec: KernelSpec, centers: DMatrix<f64>) -> Result<Self> {
        let l = centers.nrows();
        Self::new(spec, centers, DVector::zeros(l))
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    /// Same dictionary, new coefficients (provenance is dropped).
    pub fn with_coefficients(&self, coefficients: DVector<f64>) -> Result<Self> {
        Self::new(self.spec, self.centers.clone(), coefficients)
    }

    /// Dictionary features `Φ[i, j] = k(p_i, c_j)` for the given points.
    pub fn features(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        gram(points, &self.centers, &self.spec)
    }

    /// `h(p_i)` for every row `p_i` of `points`.
    pub fn evaluate(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.features(points)? * &self.coefficients)
    }

    pub fn evaluate_one(&self, point: &[f64]) -> f64 {
        (0..self.centers.nrows())
            .map(|j| {
                let c: Vec<f64> = self.centers.row(j).iter().copied().collect();
                self.coefficients[j] * self.spec.eval(point, &c)
            })
            .sum()
    }
}

/// Subsample `l` Nyström centers from `pooled` without replacement.
pub fn choose_centers(pooled: &DMatrix<f64>, l: usize, seed: u64) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(Error::Input("dictionary size must be at least 1".into()));
    }
    if l > pooled.nrows() {
        return Err(Error::Input(format!(
            "cannot choose {l} centers from {} points",
            pooled.nrows()
        )));
    }
    let mut rng = rng::stream(seed, 0, rng::purpose::CENTERS);
    let picked = index::sample(&mut rng, pooled.nrows(), l);
    let rows: Vec<usize> = picked.into_iter().collect();
    Ok(pooled.select_rows(rows.iter()))
}
