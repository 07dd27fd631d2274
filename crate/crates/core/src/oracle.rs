//! Finite-support worlds in which every population quantity is a matrix.
//!
//! A [`DiscreteWorld`] has `M` support points, `K` arms with conditional pmfs
//! `T[a, m] = p(s_m | a)`, a novel-arm pmf, and an outcome law that does not
//! depend on the arm: `Y | S = s_m` is `outcome_mean[m] ± noise[m]` with
//! probability ½ each. The hypothesis space is all functions on the support,
//! so `h` is just an `M`-vector and the structural function is `outcome_mean`.
//!
//! Inner products: functions of `S` use the pooled pmf `p̄ = (1/K) Σ_a T[a, ·]`;
//! functions of the arm use `(1/K) Σ_a`. With these, `T* g = D⁻¹ Tᵀ g / K`
//! where `D = diag(p̄)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{HistoricalDataset, NovelDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Relative singular-value cutoff for every rank and range decision.
pub const RANK_TOL: f64 = 1e-10;
/// Least-squares residual above which a target counts as unidentified.
pub const ID_TOL: f64 = 1e-8;
/// Largest number of outcome atoms an enumeration may visit.
pub const MAX_ATOMS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWorld {
    support: Vec<f64>,
    cond_pmf: DMatrix<f64>,
    novel_pmf: DVector<f64>,
    outcome_mean: DVector<f64>,
    noise: DVector<f64>,
}

fn check_pmf(row: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for p in row {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Input(format!("{what} has a negative or non-finite entry")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl DiscreteWorld {
    pub fn new(
        support: Vec<f64>,
        cond_pmf: DMatrix<f64>,
        novel_pmf: DVector<f64>,
        outcome_mean: DVector<f64>,
        noise: DVector<f64>,
    ) -> Result<Self> {
        let m = support.len();
        if m == 0 || cond_pmf.nrows() == 0 {
            return Err(Error::Input("world needs at least one arm and one support point".into()));
        }
        if cond_pmf.ncols() != m || novel_pmf.len() != m || outcome_mean.len() != m || noise.len() != m {
            return Err(Error::Input("world component sizes disagree with the support".into()));
        }
        for a in 0..cond_pmf.nrows() {
            check_pmf(cond_pmf.row(a).iter().copied(), &format!("cond_pmf row {a}"))?;
        }
        check_pmf(novel_pmf.iter().copied(), "novel_pmf")?;
        if outcome_mean.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("outcome law must be finite".into()));
        }
        Ok(Self { support, cond_pmf, novel_pmf, outcome_mean, noise })
    }

    pub fn num_arms(&self) -> usize {
        self.cond_pmf.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn cond_pmf(&self) -> &DMatrix<f64> {
        &self.cond_pmf
    }

    pub fn novel_pmf(&self) -> &DVector<f64> {
        &self.novel_pmf
    }

    /// `E[Y | S]`, which is also the structural function.
    pub fn outcome_mean(&self) -> &DVector<f64> {
        &self.outcome_mean
    }

    pub fn noise(&self) -> &DVector<f64> {
        &self.noise
    }

    /// `p̄(s_m) = (1/K) Σ_a p(s_m | a)`.
    pub fn pooled_pmf(&self) -> DVector<f64> {
        self.cond_pmf.row_mean().transpose()
    }

    /// `r₀[a] = E[Y | A = a]`.
    pub fn arm_outcome_means(&self) -> DVector<f64> {
        &self.cond_pmf * &self.outcome_mean
    }

    /// `θ* = E[h*(S^new)]`.
    pub fn theta_star(&self) -> f64 {
        self.novel_pmf.dot(&self.outcome_mean)
    }

    /// `Var(Y − h(S) | A = a)` for every arm.
    pub fn residual_variance(&self, h: &DVector<f64>) -> DVector<f64> {
        let t = &self.cond_pmf;
        DVector::from_fn(self.num_arms(), |a, _| {
            let (mut first, mut second) = (0.0, 0.0);
            for m in 0..self.num_points() {
                let r = self.outcome_mean[m] - h[m];
                first += t[(a, m)] * r;
                second += t[(a, m)] * (r * r + self.noise[m] * self.noise[m]);
            }
            second - first * first
        })
    }

    /// Draws `n` units per arm and `n_new` novel units; `S` takes the support values.
    pub fn sample(&self, n: usize, n_new: usize, seed: u64) -> Result<(HistoricalDataset, NovelDataset)> {
        let k = self.num_arms();
        let mut s = DMatrix::zeros(k * n, 1);
        let mut y = Vec::with_capacity(k * n);
        let mut arm = Vec::with_capacity(k * n);
        for a in 0..k {
            let mut r = rng::stream(seed, 0, a as u64);
            let pmf: Vec<f64> = self.cond_pmf.row(a).iter().copied().collect();
            for i in 0..n {
                let m = draw(&mut r, &pmf);
                let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                s[(a * n + i, 0)] = self.support[m];
                y.push(self.outcome_mean[m] + sign * self.noise[m]);
                arm.push(a);
            }
        }
        let mut r = rng::stream(seed, 0, rng::purpose::NOVEL);
        let pmf: Vec<f64> = self.novel_pmf.iter().copied().collect();
        let s_new = DMatrix::from_fn(n_new, 1, |_, _| self.support[draw(&mut r, &pmf)]);
        Ok((HistoricalDataset::new(s, y, arm, k)?, NovelDataset::new(s_new)?))
    }
}

fn draw(r: &mut impl Rng, pmf: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (m, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return m;
        }
    }
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn random_pmf(r: &mut impl Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -(1.0 - r.random::<f64>()).ln() + 1e-3).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn rows_to_world(r: &mut impl Rng, rows: Vec<Vec<f64>>, novel: Vec<f64>) -> DiscreteWorld {
    let (k, m) = (rows.len(), novel.len());
    let t = DMatrix::from_fn(k, m, |a, j| rows[a][j]);
    let om = DVector::from_fn(m, |_, _| 2.0 * r.random::<f64>() - 1.0);
    let noise = DVector::from_fn(m, |_, _| r.random::<f64>());
    let mut world = DiscreteWorld::new((0..m).map(|j| j as f64).collect(), t, DVector::from_vec(novel), om, noise)
        .expect("generated pmfs are valid");
    renormalise(&mut world);
    world
}

// Guard against rounding drift so constructor-level checks stay exact.
fn renormalise(w: &mut DiscreteWorld) {
    for mut row in w.cond_pmf.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    let s = w.novel_pmf.sum();
    w.novel_pmf /= s;
}

/// A world with independent random arm pmfs and novel pmf.
pub fn random_world(r: &mut impl Rng, k: usize, m: usize) -> DiscreteWorld {
    let rows = (0..k).map(|_| random_pmf(r, m)).collect();
    let novel = random_pmf(r, m);
    rows_to_world(r, rows, novel)
}

/// A world whose novel pmf is a mixture of the arm pmfs, so the target is identified.
pub fn random_identified_world(r: &mut impl Rng, k: usize, m: usize) -> DiscreteWorld {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| random_pmf(r, m)).collect();
    let weights = random_pmf(r, k);
    let novel = (0..m).map(|j| (0..k).map(|a| weights[a] * rows[a][j]).sum()).collect();
    rows_to_world(r, rows, novel)
}

/// A world in which some arms duplicate others, so `T` is rank deficient.
pub fn random_rank_deficient_world(r: &mut impl Rng, k: usize, m: usize) -> DiscreteWorld {
    let distinct = if k < 2 { 1 } else { r.random_range(1..k) };
    let base: Vec<Vec<f64>> = (0..distinct).map(|_| random_pmf(r, m)).collect();
    let rows = (0..k).map(|a| base[if a < distinct { a } else { r.random_range(0..distinct) }].clone()).collect();
    let novel = random_pmf(r, m);
    rows_to_world(r, rows, novel)
}

/// `T[a, m] = p(s_m | a)`.
pub fn exact_operator(w: &DiscreteWorld) -> DMatrix<f64> {
    w.cond_pmf.clone()
}

fn sigma_cutoff(m: &DMatrix<f64>) -> (nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    (svd, RANK_TOL * smax)
}

/// Numerical rank at the relative cutoff [`RANK_TOL`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let (svd, tol) = sigma_cutoff(m);
    svd.singular_values.iter().filter(|&&s| s > tol && s > 0.0).count()
}

/// Moore–Penrose pseudo-inverse with the relative cutoff [`RANK_TOL`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (svd, tol) = sigma_cutoff(m);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// Population nuisances of a world.
#[derive(Debug, Clone)]
pub struct Nuisances {
    /// Density ratio `p^new / p̄`.
    pub rho: DVector<f64>,
    /// Riesz representer of `h ↦ E[h(S^new)]` in the pooled inner product.
    pub alpha: DVector<f64>,
    /// Minimum-norm solution of `T*Tξ = α`, present only when identified.
    pub xi: Option<DVector<f64>>,
    /// `min_q ‖α − T* q‖` in the pooled norm; zero (≤ [`ID_TOL`]) iff identified.
    pub id_residual: f64,
    pub identified: bool,
    /// Minimum pooled-norm solution of `T h = r₀`.
    pub h_dagger: DVector<f64>,
    /// Least-squares arm weights `q_K` (minimum norm).
    pub q: DVector<f64>,
    pub r0: DVector<f64>,
}

fn sqrt_diag(p: &DVector<f64>, power: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&p.map(|v| v.powf(power)))
}

/// `ρ`, `α`, `ξ_K`, `h†` and `q_K` for a world.
pub fn riesz_and_nuisances(w: &DiscreteWorld) -> Result<Nuisances> {
    let pbar = w.pooled_pmf();
    if let Some(m) = pbar.iter().position(|&p| p <= 0.0) {
        return Err(Error::Input(format!("support point {m} has zero pooled mass")));
    }
    let k = w.num_arms() as f64;
    let t = &w.cond_pmf;
    let rho = w.novel_pmf.component_div(&pbar);
    let alpha = rho.clone();
    let d_half = sqrt_diag(&pbar, 0.5);
    let d_inv_half = sqrt_diag(&pbar, -0.5);
    // On the g = D^{1/2} f scale the pooled inner product is Euclidean.
    let w_op = t * &d_inv_half;
    let alpha_g = &d_half * &alpha;

    // q_K: least squares for D^{1/2} T* q ≈ D^{1/2} α.
    let adj = w_op.transpose() / k;
    let q = pinv(&adj) * &alpha_g;
    let id_residual = (&adj * &q - &alpha_g).norm();
    let identified = id_residual <= ID_TOL;

    let xi = identified.then(|| {
        let b = w_op.transpose() * &w_op / k;
        &d_inv_half * (pinv(&b) * &alpha_g)
    });
    let r0 = w.arm_outcome_means();
    let h_dagger = &d_inv_half * (pinv(&w_op) * &r0);
    Ok(Nuisances { rho, alpha, xi, id_residual, identified, h_dagger, q, r0 })
}

/// Whether `rank(Tᵀ) = rank(TᵀT)`.
pub fn rank_equivalence(t: &DMatrix<f64>) -> bool {
    rank(&t.transpose()) == rank(&(t.transpose() * t))
}

/// Identification ⇔ strong identification, as a rank comparison on the world's `T`.
pub fn check_id_equiv(w: &DiscreteWorld) -> bool {
    rank_equivalence(&w.cond_pmf)
}

/// Weak norm `‖f‖_K = ((1/K) Σ_a f(a)²)^{1/2}` of an arm function.
pub fn arm_norm(f: &DVector<f64>) -> f64 {
    (f.norm_squared() / f.len() as f64).sqrt()
}

/// Pooled norm `‖h‖ = (Σ_m p̄_m h_m²)^{1/2}`.
pub fn pooled_norm(w: &DiscreteWorld, h: &DVector<f64>) -> f64 {
    w.pooled_pmf().iter().zip(h.iter()).map(|(p, v)| p * v * v).sum::<f64>().sqrt()
}

/// `R₁(h) = (1/2K) Σ_a (E[Y − h(S) | A = a])²`.
pub fn population_risk(w: &DiscreteWorld, h: &DVector<f64>) -> f64 {
    let gap = &w.cond_pmf * (&w.outcome_mean - h);
    gap.norm_squared() / (2.0 * w.num_arms() as f64)
}

/// `(1/2K) Σ_a Var(Y − h | A = a) / n` for `n` units per arm.
pub fn plugin_bias(w: &DiscreteWorld, h: &DVector<f64>, n: usize) -> f64 {
    w.residual_variance(h).sum() / (2.0 * w.num_arms() as f64 * n as f64)
}

/// Exact expectations of the two empirical risks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskExpectation {
    pub crossfold: f64,
    pub plugin: f64,
    pub atoms: u64,
}

/// `E[R̂₁(h)]` and `E[R̂₁^plug-in(h)]` with `n_per_fold` units in each of two
/// folds per arm, by summing over every joint outcome of each arm's units.
pub fn enumerate_crossfold_expectation(w: &DiscreteWorld, h: &DVector<f64>, n_per_fold: usize) -> Result<RiskExpectation> {
    let m = w.num_points();
    if h.len() != m {
        return Err(Error::Input(format!("h has {} entries, world has {m} support points", h.len())));
    }
    if n_per_fold == 0 {
        return Err(Error::Input("n_per_fold must be positive".into()));
    }
    let units = 2 * n_per_fold;
    let per_unit = 2 * m as u64;
    let per_arm = per_unit.checked_pow(units as u32).unwrap_or(u64::MAX);
    let atoms = per_arm.saturating_mul(w.num_arms() as u64);
    if atoms > MAX_ATOMS {
        return Err(Error::Input(format!(
            "{atoms} outcome atoms exceed the limit of {MAX_ATOMS}; use fewer arms, support points or units per fold"
        )));
    }
    let mut cross_total = 0.0;
    let mut plug_total = 0.0;
    let mut digits = vec![0usize; units];
    for a in 0..w.num_arms() {
        // per-unit atom (support index, sign): probability and residual
        let unit: Vec<(f64, f64)> = (0..m)
            .flat_map(|j| {
                let p = 0.5 * w.cond_pmf[(a, j)];
                let base = w.outcome_mean[j] - h[j];
                [(p, base + w.noise[j]), (p, base - w.noise[j])]
            })
            .collect();
        let (mut cross, mut plug) = (0.0, 0.0);
        digits.iter_mut().for_each(|d| *d = 0);
        loop {
            let mut prob = 1.0;
            let (mut s0, mut s1) = (0.0, 0.0);
            for (u, &d) in digits.iter().enumerate() {
                let (p, z) = unit[d];
                prob *= p;
                if u < n_per_fold {
                    s0 += z;
                } else {
                    s1 += z;
                }
            }
            if prob > 0.0 {
                let m0 = s0 / n_per_fold as f64;
                let m1 = s1 / n_per_fold as f64;
                let all = (s0 + s1) / units as f64;
                cross += prob * m0 * m1;
                plug += prob * all * all;
            }
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == units {
                    break;
                }
                digits[pos] += 1;
                if digits[pos] < unit.len() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == units {
                break;
            }
        }
        cross_total += cross;
        plug_total += plug;
    }
    let scale = 2.0 * w.num_arms() as f64;
    Ok(RiskExpectation { crossfold: cross_total / scale, plugin: plug_total / scale, atoms })
}

/// `E[ψ(h, ξ)]` where `ψ = h(S^new) + ξ(S)(Y′ − h(S′))` and `(S′, Y′)` is an
/// independent unit from the same arm as `S`, enumerated over the pmfs.
pub fn expected_psi(w: &DiscreteWorld, h: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let m = w.num_points();
    let k = w.num_arms();
    let mut plug = 0.0;
    for j in 0..m {
        plug += w.novel_pmf[j] * h[j];
    }
    let mut corr = 0.0;
    for a in 0..k {
        for j in 0..m {
            for jp in 0..m {
                for sign in [1.0, -1.0] {
                    let p = w.cond_pmf[(a, j)] * w.cond_pmf[(a, jp)] * 0.5;
                    let y = w.outcome_mean[jp] + sign * w.noise[jp];
                    corr += p * xi[j] * (y - h[jp]);
                }
            }
        }
    }
    plug + corr / k as f64
}

/// `E[h(S^new) + q(A)(Y − h(S))]` with `A` uniform over arms, enumerated.
pub fn expected_psi_arm(w: &DiscreteWorld, h: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let k = w.num_arms();
    let plug: f64 = (0..w.num_points()).map(|j| w.novel_pmf[j] * h[j]).sum();
    let mut corr = 0.0;
    for a in 0..k {
        for j in 0..w.num_points() {
            for sign in [1.0, -1.0] {
                let y = w.outcome_mean[j] + sign * w.noise[j];
                corr += 0.5 * w.cond_pmf[(a, j)] * q[a] * (y - h[j]);
            }
        }
    }
    plug + corr / k as f64
}

/// `(|E ψ(h, ξ) − θ*|, ‖T(ξ − ξ_K)‖_K · ‖T(h − h_K)‖_K)`.
pub fn mixed_bias_check(w: &DiscreteWorld, h: &DVector<f64>, xi: &DVector<f64>) -> Result<(f64, f64)> {
    let nu = riesz_and_nuisances(w)?;
    let xi_k = nu.xi.ok_or_else(|| {
        Error::Contract(format!("mixed-bias check needs an identified world (residual {:e})", nu.id_residual))
    })?;
    let lhs = (expected_psi(w, h, xi) - w.theta_star()).abs();
    let t = &w.cond_pmf;
    // any h_K with T h_K = r₀ gives T(h − h_K) = T h − r₀
    let rhs = arm_norm(&(t * (xi - xi_k))) * arm_norm(&(t * h - &nu.r0));
    Ok((lhs, rhs))
}

/// Outcome of the approximate-identification check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxIdReport {
    /// `|E ψ(h†, q_K) − θ*|`.
    pub bias: f64,
    /// `‖h* − h†‖`, the norm of the structural function's null-space component.
    pub epsilon: f64,
    /// `min_q ‖α − T* q‖`.
    pub delta: f64,
}

impl ApproxIdReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.bias <= self.epsilon * self.delta + slack
    }
}

pub fn approx_id_check(w: &DiscreteWorld) -> Result<ApproxIdReport> {
    let nu = riesz_and_nuisances(w)?;
    let bias = (expected_psi_arm(w, &nu.h_dagger, &nu.q) - w.theta_star()).abs();
    let epsilon = pooled_norm(w, &(&w.outcome_mean - &nu.h_dagger));
    Ok(ApproxIdReport { bias, epsilon, delta: nu.id_residual })
}

/// Expected jackknife diagonal with the feature second moment known.
///
/// With indicator features on the support, `G = diag(p̄)` and the population
/// `q*_a = D⁻¹ T[a, ·]ᵀ`. Returns `(E[(1/n) Σ_i q̂_{a,−i}(S_i)], E[q*_a(S) | A = a])`
/// where `q̂_{a,−i} = G⁻¹ φ̄_{a,−i}`, enumerated over all `M^n` draws of the arm.
pub fn enumerate_jackknife_diagonal(w: &DiscreteWorld, arm: usize, n: usize) -> Result<(f64, f64)> {
    let m = w.num_points();
    if arm >= w.num_arms() {
        return Err(Error::Input(format!("arm {arm} out of range")));
    }
    if n < 2 {
        return Err(Error::Input("the jackknife needs n ≥ 2".into()));
    }
    let atoms = (m as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if atoms > MAX_ATOMS {
        return Err(Error::Input(format!("{atoms} atoms exceed the limit of {MAX_ATOMS}; use smaller n or M")));
    }
    let pbar = w.pooled_pmf();
    let pmf: Vec<f64> = w.cond_pmf.row(arm).iter().copied().collect();
    let mut digits = vec![0usize; n];
    let mut total = 0.0;
    'outer: loop {
        let prob: f64 = digits.iter().map(|&d| pmf[d]).product();
        if prob > 0.0 {
            let mut v = 0.0;
            for i in 0..n {
                let matches = (0..n).filter(|&j| j != i && digits[j] == digits[i]).count();
                v += matches as f64 / ((n - 1) as f64 * pbar[digits[i]]);
            }
            total += prob * v / n as f64;
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < m {
                continue 'outer;
            }
            *d = 0;
        }
        break;
    }
    let target = (0..m).map(|j| pmf[j] * pmf[j] / pbar[j]).sum();
    Ok((total, target))
}

fn default_seed() -> u64 {
    0
}

/// Sizes for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub crossfold_worlds: usize,
    pub functions_per_world: usize,
    pub rank_worlds: usize,
    pub mixed_worlds: usize,
    pub perturbations: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 0, crossfold_worlds: 50, functions_per_world: 20, rank_worlds: 1000, mixed_worlds: 100, perturbations: 100 }
    }
}

/// Worst deviations and violation counts from [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SuiteReport {
    /// `max |E R̂₁(h) − R₁(h)|`.
    pub crossfold_max_error: f64,
    /// `max |E R̂₁^plug-in(h) − R₁(h) − (1/2K)Σ Var/n|`.
    pub plugin_bias_max_error: f64,
    pub rank_failures: usize,
    pub mixed_bias_violations: usize,
    pub approx_id_violations: usize,
    pub passed: bool,
}

fn random_h(r: &mut impl Rng, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| 4.0 * r.random::<f64>() - 2.0)
}

/// Cross-fold unbiasedness, the plug-in bias formula, identification
/// equivalence, the mixed-bias bound and the approximate-identification bound
/// on seeded random worlds.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut r = rng::stream(cfg.seed, 0, 0);
    let (mut cross, mut plug) = (0.0f64, 0.0f64);
    for _ in 0..cfg.crossfold_worlds {
        let k = r.random_range(1..=3);
        let m = r.random_range(2..=3);
        let npf = r.random_range(1..=2);
        let w = random_world(&mut r, k, m);
        for _ in 0..cfg.functions_per_world {
            let h = random_h(&mut r, m);
            let e = enumerate_crossfold_expectation(&w, &h, npf)?;
            let r1 = population_risk(&w, &h);
            cross = cross.max((e.crossfold - r1).abs());
            plug = plug.max((e.plugin - r1 - plugin_bias(&w, &h, 2 * npf)).abs());
        }
    }
    let mut rank_failures = 0;
    for i in 0..cfg.rank_worlds {
        let w = if i % 2 == 0 { random_world(&mut r, 5, 8) } else { random_rank_deficient_world(&mut r, 5, 8) };
        if !check_id_equiv(&w) {
            rank_failures += 1;
        }
    }
    let (mut mixed, mut approx) = (0, 0);
    for _ in 0..cfg.mixed_worlds {
        let k = r.random_range(2..=5);
        let m = r.random_range(2..=6);
        let w = random_identified_world(&mut r, k, m);
        let nu = riesz_and_nuisances(&w)?;
        let xi = nu.xi.clone().ok_or_else(|| Error::Numerical("generated world is not identified".into()))?;
        for _ in 0..cfg.perturbations {
            let h = &nu.h_dagger + random_h(&mut r, m);
            let x = &xi + random_h(&mut r, m);
            let (lhs, rhs) = mixed_bias_check(&w, &h, &x)?;
            if lhs > rhs + 1e-10 {
                mixed += 1;
            }
        }
        let unidentified = random_world(&mut r, k, m.max(k + 1));
        if !approx_id_check(&unidentified)?.holds(1e-10) {
            approx += 1;
        }
    }
    let passed = cross <= 1e-12 && plug <= 1e-10 && rank_failures == 0 && mixed == 0 && approx == 0;
    Ok(SuiteReport {
        crossfold_max_error: cross,
        plugin_bias_max_error: plug,
        rank_failures,
        mixed_bias_violations: mixed,
        approx_id_violations: approx,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(t: DMatrix<f64>, novel: Vec<f64>, om: Vec<f64>, noise: Vec<f64>) -> DiscreteWorld {
        let m = t.ncols();
        DiscreteWorld::new((0..m).map(|j| j as f64).collect(), t, DVector::from_vec(novel), DVector::from_vec(om), DVector::from_vec(noise))
            .unwrap()
    }

    #[test]
    fn operator_examples() {
        let w = world(DMatrix::identity(3, 3), vec![0.2, 0.3, 0.5], vec![0.0; 3], vec![0.0; 3]);
        assert_eq!(exact_operator(&w), DMatrix::identity(3, 3));
        let w = world(DMatrix::from_row_slice(1, 2, &[0.5, 0.5]), vec![0.5, 0.5], vec![0.0; 2], vec![0.0; 2]);
        let th = exact_operator(&w) * DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(th[0], 1.0);
    }

    #[test]
    fn invalid_world_rejected() {
        let t = DMatrix::from_row_slice(1, 2, &[0.6, 0.6]);
        let r = DiscreteWorld::new(vec![0.0, 1.0], t, DVector::from_vec(vec![0.5, 0.5]), DVector::zeros(2), DVector::zeros(2));
        assert!(r.is_err());
    }

    #[test]
    fn equal_laws_give_unit_ratio() {
        let t = DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.4, 0.4, 0.2]);
        let novel = vec![0.3, 0.35, 0.35];
        let w = world(t, novel, vec![1.0, 2.0, 3.0], vec![0.5; 3]);
        let nu = riesz_and_nuisances(&w).unwrap();
        assert!(nu.rho.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        assert!(nu.identified);
        let xi = nu.xi.unwrap();
        let lhs = w.cond_pmf().transpose() * (w.cond_pmf() * &xi) / 2.0;
        // T*Tξ = α ⇔ TᵀTξ/K = D α
        let rhs = w.pooled_pmf().component_mul(&nu.alpha);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn single_arm_identification() {
        let t = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let on_span = world(t.clone(), vec![0.3, 0.7], vec![0.0; 2], vec![0.0; 2]);
        assert!(riesz_and_nuisances(&on_span).unwrap().identified);
        let off = world(t, vec![0.9, 0.1], vec![0.0; 2], vec![0.0; 2]);
        let nu = riesz_and_nuisances(&off).unwrap();
        assert!(!nu.identified && nu.id_residual >= ID_TOL);
        assert!(nu.xi.is_none());
    }

    #[test]
    fn rank_equivalence_edge_cases() {
        assert!(rank_equivalence(&DMatrix::zeros(3, 4)));
        let dup = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.5, 0.5, 0.1, 0.9]);
        assert!(rank_equivalence(&dup));
        assert_eq!(rank(&dup), 2);
    }

    #[test]
    fn hand_enumeration_single_arm() {
        // K=1, M=2, one unit per fold
        let t = DMatrix::from_row_slice(1, 2, &[0.25, 0.75]);
        let w = world(t, vec![0.5, 0.5], vec![1.0, -1.0], vec![0.5, 1.0]);
        let h = DVector::from_vec(vec![0.2, 0.4]);
        let e = enumerate_crossfold_expectation(&w, &h, 1).unwrap();
        let mean = 0.25 * 0.8 + 0.75 * (-1.4);
        assert!((e.crossfold - mean * mean / 2.0).abs() < 1e-14);
        let var = w.residual_variance(&h)[0];
        assert!((e.plugin - e.crossfold - var / 4.0).abs() < 1e-14);
    }

    #[test]
    fn guard_trips() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let w = random_world(&mut r, 3, 3);
        let err = enumerate_crossfold_expectation(&w, &DVector::zeros(3), 5).unwrap_err();
        assert!(err.to_string().contains("fewer"));
    }

    #[test]
    fn mixed_bias_vanishes_at_truth() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let w = random_identified_world(&mut r, 3, 4);
        let nu = riesz_and_nuisances(&w).unwrap();
        let xi = nu.xi.clone().unwrap();
        let (lhs, _) = mixed_bias_check(&w, &nu.h_dagger, &DVector::from_element(4, 7.0)).unwrap();
        assert!(lhs < 1e-12);
        let (lhs, _) = mixed_bias_check(&w, &DVector::from_element(4, -3.0), &xi).unwrap();
        assert!(lhs < 1e-12);
    }

    #[test]
    fn mixed_bias_needs_identification() {
        let t = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let w = world(t, vec![0.9, 0.1], vec![0.0; 2], vec![0.0; 2]);
        let err = mixed_bias_check(&w, &DVector::zeros(2), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig { crossfold_worlds: 3, functions_per_world: 2, rank_worlds: 10, mixed_worlds: 3, perturbations: 3, seed: 4 };
        let rep = run_suite(&cfg).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn jackknife_diagonal_is_unbiased() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let w = random_world(&mut r, 2, 3);
        let (got, want) = enumerate_jackknife_diagonal(&w, 1, 4).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
