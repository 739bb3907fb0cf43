//! Library results against independently computed references: gamma-function
//! closed forms, brute-force sums, dense least squares, dense inverses and
//! dense eigen/singular value decompositions.

use std::sync::Arc;

use longmem::banding::estimation_loss;
use longmem::chol_inverse::{build_estimated_inverse, build_population_inverse, fit_ar_ls, BandedCholInverse};
use longmem::farima::{autocov, durbin_levinson, FarimaModel, Simulator};
use longmem::linalg::{materialize, spectral_norm, symmetric_spectral_norm, DenseOp, PowerIteration};
use longmem::regression::{detrend, fgls, DesignMatrix};
use longmem::rng::rng_from_seed;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::{gamma, ln_gamma};

/// γ(k) of FARIMA(0,d,0) with unit innovation variance.
fn frac_gamma(d: f64, k: usize) -> f64 {
    if d == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (ln_gamma(1.0 - 2.0 * d) + ln_gamma(k + d) - ln_gamma(d) - ln_gamma(1.0 - d) - ln_gamma(k + 1.0 - d)).exp()
}

fn toeplitz(g: &[f64]) -> DMatrix<f64> {
    let n = g.len();
    DMatrix::from_fn(n, n, |i, j| g[i.abs_diff(j)])
}

fn sym_norm(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn fractional_autocov_matches_gamma_closed_form() {
    for d in [0.0, 0.1, 0.25, 0.4, 0.49] {
        let g = autocov(&FarimaModel::fractional(d).unwrap(), 300).unwrap();
        for k in 0..300 {
            let want = frac_gamma(d, k);
            assert!((g.at(k as isize) - want).abs() <= 1e-12 * want.abs().max(1.0), "d={d} k={k}");
        }
    }
    let g = autocov(&FarimaModel::fractional(0.25).unwrap(), 2).unwrap();
    assert!((g.at(0) - gamma(0.5) / gamma(0.75).powi(2)).abs() < 1e-12);
    assert!((g.at(1) / g.at(0) - 1.0 / 3.0).abs() < 1e-14);
}

/// Σ_{j≥0} ψ_j ψ_{j+k} by direct summation to M plus an Euler–Maclaurin
/// tail built on ψ_j ≈ j^{d−1}(1 + d(d−1)/(2j))/Γ(d).
fn brute_force_frac_gamma(d: f64, lags: usize, m: usize) -> Vec<f64> {
    let mut psi = vec![1.0; m + lags + 1];
    for j in 1..psi.len() {
        psi[j] = psi[j - 1] * (j as f64 - 1.0 + d) / j as f64;
    }
    let c = 1.0 / gamma(d);
    let a = d * (d - 1.0) / 2.0;
    let mf = m as f64;
    (0..=lags)
        .map(|k| {
            let head: f64 = (0..=m).map(|j| psi[j] * psi[j + k]).sum();
            // ∫_M^∞ f with x = M/s, s = v^{1/(1−2d)}
            let kf = k as f64;
            let g = |s: f64| {
                let x = mf / s;
                (1.0 + kf * s / mf).powf(d - 1.0) * (1.0 + a / x) * (1.0 + a / (x + kf))
            };
            let nodes = 2000;
            let h = 1.0 / nodes as f64;
            let mut integral = 0.0;
            for i in 0..nodes {
                // composite midpoint on v ∈ (0, 1]
                let v = (i as f64 + 0.5) * h;
                integral += g(v.powf(1.0 / (1.0 - 2.0 * d))) * h;
            }
            let tail = c * c * mf.powf(2.0 * d - 1.0) / (1.0 - 2.0 * d) * integral - psi[m] * psi[m + k] / 2.0;
            head + tail
        })
        .collect()
}

#[test]
fn fractional_autocov_matches_brute_force_sum() {
    for d in [0.1, 0.25, 0.4] {
        let g = autocov(&FarimaModel::fractional(d).unwrap(), 51).unwrap();
        let brute = brute_force_frac_gamma(d, 50, 1_000_000);
        for (k, b) in brute.iter().enumerate() {
            let diff = (g.at(k as isize) - b).abs();
            assert!(diff <= g.tail_bound() + 1e-9, "d={d} k={k} diff={diff:e}");
        }
    }
}

/// (1 − φB) applied on both sides: (1+φ²)γ(k) − φ(γ(k−1) + γ(k+1)).
fn ar1_filtered(g: &dyn Fn(usize) -> f64, phi: f64, k: usize) -> f64 {
    let lower = g(if k == 0 { 1 } else { k - 1 });
    (1.0 + phi * phi) * g(k) - phi * (lower + g(k + 1))
}

/// (1 + θB) applied on both sides.
fn ma1_filtered(g: &dyn Fn(usize) -> f64, theta: f64, k: usize) -> f64 {
    ar1_filtered(g, -theta, k)
}

#[test]
fn arma_autocov_satisfies_filter_identities() {
    for d in [0.1, 0.25, 0.4] {
        let frac = |k: usize| frac_gamma(d, k);

        let g3 = autocov(&FarimaModel::preset("dgp3", d).unwrap(), 60).unwrap();
        for k in 0..50 {
            let want = ma1_filtered(&frac, -0.4, k);
            assert!((g3.at(k as isize) - want).abs() <= g3.tail_bound() + 1e-9, "dgp3 d={d} k={k}");
        }

        let g2 = autocov(&FarimaModel::preset("dgp2", d).unwrap(), 60).unwrap();
        let u2 = |k: usize| g2.at(k as isize);
        for k in 0..50 {
            let got = ar1_filtered(&u2, 0.7, k);
            assert!((got - frac(k)).abs() <= 3.0 * g2.tail_bound() + 1e-9, "dgp2 d={d} k={k}");
        }

        let g4 = autocov(&FarimaModel::preset("dgp4", d).unwrap(), 60).unwrap();
        let u4 = |k: usize| g4.at(k as isize);
        for k in 0..50 {
            let got = ar1_filtered(&u4, -0.4, k);
            let want = ma1_filtered(&frac, -0.3, k);
            assert!((got - want).abs() <= 3.0 * g4.tail_bound() + 1e-9, "dgp4 d={d} k={k}");
        }
    }
}

#[test]
fn durbin_levinson_matches_fractional_predictor_formula() {
    let d = 0.25;
    let binom = |k: usize, j: usize| (ln_gamma(k as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((k - j) as f64 + 1.0)).exp();
    let g = autocov(&FarimaModel::fractional(d).unwrap(), 40).unwrap();
    let table = durbin_levinson(&g, 30).unwrap();
    for k in [1usize, 5, 10, 30] {
        for j in 1..=k {
            let kf = k as f64;
            let jf = j as f64;
            // φ_{k,j} = −C(k,j) Γ(j−d) Γ(k−d−j+1) / (Γ(−d) Γ(k−d+1))
            let want = -binom(k, j) * gamma(jf - d) * gamma(kf - d - jf + 1.0) / (gamma(-d) * gamma(kf - d + 1.0));
            let got = table.row(k)[j - 1];
            assert!((got - want).abs() <= 1e-9 * want.abs(), "k={k} j={j}: {got} vs {want}");
        }
    }
}

#[test]
fn full_band_population_inverse_equals_dense_inverse() {
    for n in [5usize, 12, 30, 120] {
        for d in [0.0, 0.1, 0.25, 0.45] {
            let g: Vec<f64> = (0..n).map(|k| frac_gamma(d, k)).collect();
            let dense = toeplitz(&g).try_inverse().unwrap();
            let gamma = autocov(&FarimaModel::fractional(d).unwrap(), n).unwrap();
            let inv = build_population_inverse(&gamma, n, n - 1).unwrap();
            let err = sym_norm(materialize(&inv).unwrap() - &dense);
            assert!(err <= 1e-8 * sym_norm(dense.clone()), "n={n} d={d}: {err:e}");
        }
    }
}

#[test]
fn ar1_inverse_is_exactly_banded() {
    let phi: f64 = 0.7;
    let g: Vec<f64> = (0..5).map(|k| phi.powi(k) / (1.0 - phi * phi)).collect();
    let dense = toeplitz(&g).try_inverse().unwrap();
    let gamma = autocov(&FarimaModel::new(vec![phi], vec![], 0.0, 1.0).unwrap(), 5).unwrap();
    let inv = build_population_inverse(&gamma, 5, 1).unwrap();
    let m = materialize(&inv).unwrap();
    assert!((m - dense).abs().max() < 1e-10);
}

/// T̂ and D̂ assembled from per-order dense least-squares solves.
fn dense_ls_triple_product(u: &[f64], k_max: usize) -> DMatrix<f64> {
    let n = u.len();
    let mut coeffs: Vec<Vec<f64>> = vec![vec![]];
    let mean = u.iter().sum::<f64>() / n as f64;
    let mut sigma2 = vec![u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64];
    for k in 1..=k_max {
        let rows = n - k;
        let x = DMatrix::from_fn(rows, k, |r, j| u[k + r - j - 1]);
        let y = DVector::from_iterator(rows, u[k..].iter().copied());
        let a = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let resid = &y - &x * &a;
        sigma2.push(resid.norm_squared() / rows as f64);
        coeffs.push(a.iter().copied().collect());
    }
    let mut t = DMatrix::<f64>::identity(n, n);
    let mut dinv = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let m = i.min(k_max);
        for j in 1..=m {
            t[(i, i - j)] = -coeffs[m][j - 1];
        }
        dinv[(i, i)] = 1.0 / sigma2[m];
    }
    t.transpose() * dinv * t
}

#[test]
fn estimator_matches_dense_least_squares_oracle() {
    let model = FarimaModel::fractional(0.25).unwrap();
    let u = Simulator::new(&model, 30).unwrap().sample(&mut rng_from_seed(2024));
    let est = build_estimated_inverse(&u, 4).unwrap();
    let oracle = dense_ls_triple_product(&u, 4);
    let diff = (materialize(&est).unwrap() - oracle).abs().max();
    assert!(diff < 1e-10, "{diff:e}");
}

#[test]
fn single_order_fit_matches_dense_least_squares() {
    let u = noise(30, 9);
    let fit = fit_ar_ls(&u, 3).unwrap();
    let x = DMatrix::from_fn(27, 3, |r, j| u[3 + r - j - 1]);
    let y = DVector::from_iterator(27, u[3..].iter().copied());
    let a = x.svd(true, true).solve(&y, 1e-14).unwrap();
    for (g, w) in fit.coeffs.iter().zip(a.iter()) {
        assert!((g - w).abs() < 1e-10);
    }
}

#[test]
fn spectral_norm_matches_svd() {
    let mut rng = rng_from_seed(5);
    let a = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
    let svd_max = a.clone().svd(false, false).singular_values.max();
    let got = spectral_norm(&DenseOp(a), &PowerIteration::default()).unwrap();
    assert!((got - svd_max).abs() <= 1e-8 * svd_max);
}

#[test]
fn estimation_loss_matches_dense_eigenvalues() {
    let n = 150;
    let model = FarimaModel::preset("dgp4", 0.25).unwrap();
    let gamma = autocov(&model, n).unwrap();
    let truth = build_population_inverse(&gamma, n, n - 1).unwrap();
    let u = Simulator::from_autocov(&gamma).unwrap().sample(&mut rng_from_seed(77));
    for k in [1, 3, 8] {
        let est = build_estimated_inverse(&u, k).unwrap();
        let dense = sym_norm(materialize(&est).unwrap() - materialize(&truth).unwrap());
        let lz = estimation_loss(&est, &truth, &PowerIteration::default().with_tol(1e-10)).unwrap();
        assert!((lz - dense).abs() <= 1e-7 * dense, "K={k}: {lz} vs {dense}");
    }
}

#[test]
fn lanczos_and_power_iteration_agree() {
    let mut rng = rng_from_seed(8);
    let a = DMatrix::from_fn(60, 60, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &a + a.transpose();
    let cfg = PowerIteration::default().with_tol(1e-12);
    let lz = symmetric_spectral_norm(&DenseOp(s.clone()), &cfg).unwrap();
    let pw = spectral_norm(&DenseOp(s.clone()), &PowerIteration { max_iter: 200_000, ..cfg }).unwrap();
    let exact = sym_norm(s);
    assert!((lz - exact).abs() <= 1e-9 * exact);
    assert!((pw - exact).abs() <= 1e-5 * exact);
}

#[test]
fn fgls_with_population_inverse_equals_dense_gls() {
    let n = 80;
    let d = 0.25;
    let g: Vec<f64> = (0..n).map(|k| frac_gamma(d, k)).collect();
    let omega_inv = toeplitz(&g).try_inverse().unwrap();
    let gamma = autocov(&FarimaModel::fractional(d).unwrap(), n).unwrap();
    let inv = build_population_inverse(&gamma, n, n - 1).unwrap();
    let u = Simulator::from_autocov(&gamma).unwrap().sample(&mut rng_from_seed(3));
    let y: Vec<f64> = (1..=n).zip(&u).map(|(t, e)| 1.0 + 2.0 * t as f64 + e).collect();

    let x = DMatrix::from_fn(n, 2, |i, j| ((i + 1) as f64).powi(j as i32));
    let yv = DVector::from_vec(y.clone());
    let xtw = x.transpose() * &omega_inv;
    let want = (&xtw * &x).try_inverse().unwrap() * (&xtw * &yv);

    let fit = fgls(&y, &DesignMatrix::polynomial(n, &[0, 1]), &inv).unwrap();
    for (g, w) in fit.beta_hat.iter().zip(want.iter()) {
        assert!((g - w).abs() <= 1e-8 * w.abs().max(1.0), "{g} vs {w}");
    }
}

#[test]
fn fgls_intercept_only_closed_form() {
    let n = 50;
    let model = FarimaModel::preset("dgp2", 0.1).unwrap();
    let gamma = autocov(&model, n).unwrap();
    let inv = build_population_inverse(&gamma, n, 6).unwrap();
    let y = noise(n, 12);
    let w = materialize(&inv).unwrap();
    let ones = DVector::from_element(n, 1.0);
    let yv = DVector::from_vec(y.clone());
    let want = (ones.transpose() * &w * &yv)[0] / (ones.transpose() * &w * &ones)[0];
    let fit = fgls(&y, &DesignMatrix::polynomial(n, &[0]), &inv).unwrap();
    assert!((fit.beta_hat[0] - want).abs() < 1e-10);
}

#[test]
fn detrend_matches_dense_projection() {
    let n = 100;
    let u = noise(n, 4);
    let y: Vec<f64> = u.iter().enumerate().map(|(i, e)| 1.0 + 2.0 * (i + 1) as f64 + e).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| ((i + 1) as f64).powi(j as i32));
    let uv = DVector::from_vec(u);
    let beta = (x.transpose() * &x).try_inverse().unwrap() * (x.transpose() * &uv);
    let want = &uv - &x * beta;
    let got = detrend(&y, &DesignMatrix::polynomial(n, &[0, 1])).unwrap().residuals;
    for (g, w) in got.iter().zip(want.iter()) {
        assert!((g - w).abs() < 1e-10);
    }
}

#[test]
fn simulated_covariance_matches_autocov() {
    let model = FarimaModel::preset("dgp3", 0.3).unwrap();
    let gamma = autocov(&model, 3).unwrap();
    let sim = Simulator::from_autocov(&gamma).unwrap();
    let mut rng = rng_from_seed(99);
    let reps = 200_000;
    let mut acc = [[0.0f64; 3]; 3];
    for _ in 0..reps {
        let u = sim.sample(&mut rng);
        for i in 0..3 {
            for j in 0..3 {
                acc[i][j] += u[i] * u[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let emp = acc[i][j] / reps as f64;
            let want = gamma.at(i as isize - j as isize);
            let se = ((gamma.at(0).powi(2) + want * want) / reps as f64).sqrt();
            assert!((emp - want).abs() < 4.0 * se, "({i},{j}): {emp} vs {want}");
        }
    }
}

#[test]
fn shared_table_band_views_match_fresh_builds() {
    let n = 40;
    let gamma = autocov(&FarimaModel::fractional(0.3).unwrap(), n).unwrap();
    let full = build_population_inverse(&gamma, n, n - 1).unwrap();
    let table = Arc::new(durbin_levinson(&gamma, n - 1).unwrap());
    for k in [0, 1, 7, 39] {
        let a = materialize(&full.with_band(k).unwrap()).unwrap();
        let b = materialize(&BandedCholInverse::new(n, k, Arc::clone(&table)).unwrap()).unwrap();
        let c = materialize(&build_population_inverse(&gamma, n, k).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!((a - c).abs().max() < 1e-12);
    }
}
