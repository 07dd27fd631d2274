//! Statistical properties of the shipped data-generating processes.

use npjive::simulate::{h_star, ContinuousDgpParams, Dgp, ExactIdDgpParams};

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// `(S, U, arm)` columns for a continuous draw; `U = h*(S) − Y`.
fn continuous(k: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let sim = Dgp::Continuous(ContinuousDgpParams { k, n, n_new: 10, seed, ..Default::default() }).simulate().unwrap();
    let h = &sim.historical;
    let s: Vec<f64> = h.s().column(0).iter().copied().collect();
    let u = s.iter().zip(h.y()).map(|(s, y)| h_star(*s) - y).collect();
    (s, u, h.arms().iter().map(|&a| a as f64).collect())
}

#[test]
fn instrument_is_exogenous() {
    let (_, u, a) = continuous(200, 200, 3);
    let rho = corr(&u, &a);
    assert!(rho.abs() <= 3.0 / (u.len() as f64).sqrt(), "corr(U, A) = {rho}");
}

#[test]
fn confounding_is_real() {
    let (s, u, _) = continuous(200, 200, 4);
    let resid: Vec<f64> = u.iter().map(|v| -v).collect();
    let rho_us = corr(&u, &s);
    assert!(rho_us > 0.1, "corr(U, S) = {rho_us}");
    assert!(corr(&u, &resid) < -0.1);
}

#[test]
fn moment_restriction_holds_per_arm() {
    for (dgp, scale) in [
        (Dgp::Continuous(ContinuousDgpParams { k: 20, n: 5000, n_new: 10, seed: 5, ..Default::default() }), 1.0),
        (Dgp::ExactId(ExactIdDgpParams { k: 20, n: 5000, n_new: 10, seed: 5, ..Default::default() }), 10.0),
    ] {
        let sim = dgp.simulate().unwrap();
        let h = &sim.historical;
        for rows in h.arm_rows() {
            let r: Vec<f64> = rows.iter().map(|&i| (h.y()[i] - h_star(h.s()[(i, 0)])) / scale).collect();
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
            // 20 arms: a 4-se band keeps the family-wise false alarm rate near 0.1%
            assert!(m.abs() <= 4.0 * sd / n.sqrt(), "arm residual mean {m} (se {})", sd / n.sqrt());
        }
    }
}

#[test]
fn novel_arm_follows_its_own_law() {
    let p = ExactIdDgpParams { k: 2, n: 2, n_new: 100_000, seed: 6, ..Default::default() };
    let sim = Dgp::ExactId(p.clone()).simulate().unwrap();
    let s = sim.novel.s();
    for (m, &sm) in p.support.iter().enumerate() {
        let frac = s.iter().filter(|&&v| (v - sm).abs() <= p.half_width).count() as f64 / s.nrows() as f64;
        let want = p.novel_pmf[m];
        assert!((frac - want).abs() <= 4.0 * (want * (1.0 - want) / s.nrows() as f64).sqrt() + 1e-12, "{m}: {frac} vs {want}");
    }
}
