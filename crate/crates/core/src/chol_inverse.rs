//! Banded modified-Cholesky representation of inverse autocovariance
//! matrices, Ω⁻¹(K) = T(K)ᵀ D(K)⁻¹ T(K), and its least-squares plug-in
//! estimate.
//!
//! Row i of T(K) (1-based) is the negated order-min(i−1, K) predictor
//! placed immediately left of the unit diagonal; D(K) holds
//! (σ₀², σ₁², …, σ_K², …, σ_K²). Applying the operator costs O(nK) and the
//! n × n matrix is never formed.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farima::{durbin_levinson, AutocovSequence, PredictorSource, PredictorTable};
use crate::linalg::{op_difference, symmetric_spectral_norm, Cholesky, LinearOperator, PowerIteration};

/// Relative pivot tolerance for Gram-matrix Cholesky factorizations.
pub const PIVOT_TOL: f64 = 1e-12;
/// Residual variances at or below this fraction of the window's mean
/// square are treated as an exact fit.
pub const EXACT_FIT_TOL: f64 = 1e-12;

/// Windowed cross-product sums of a series.
///
/// For order k the window is t = k+1..n (1-based), and
/// `S_k(i, j) = Σ_t u_{t−i} u_{t−j}` for 0 ≤ i, j ≤ k. Each order has its
/// own window, so the Gram matrices of different orders are not nested.
/// Sums are served from per-lag prefix sums built in one O(n·k_max) pass.
#[derive(Clone, Debug)]
pub struct SampleGram {
    n: usize,
    k_max: usize,
    /// prefix[h][m] = Σ_{s<m} u_s u_{s+h} (0-based s)
    prefix: Vec<Vec<f64>>,
}

impl SampleGram {
    pub fn new(u: &[f64], k_max: usize) -> Result<Self> {
        let n = u.len();
        if k_max >= n {
            return Err(Error::Parameter(format!("order {k_max} needs more than {n} observations")));
        }
        let prefix = (0..=k_max)
            .map(|h| {
                let mut p = Vec::with_capacity(n - h + 1);
                let mut acc = 0.0;
                p.push(0.0);
                for s in 0..n - h {
                    acc += u[s] * u[s + h];
                    p.push(acc);
                }
                p
            })
            .collect();
        Ok(SampleGram { n, k_max, prefix })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// S_k(i, j).
    pub fn cross(&self, k: usize, i: usize, j: usize) -> f64 {
        debug_assert!(k <= self.k_max && i <= k && j <= k);
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let p = &self.prefix[j - i];
        p[self.n - j] - p[k - j]
    }

    /// Regression Gram (S_k(i, j))_{1 ≤ i, j ≤ k}, row-major, and the
    /// cross-covariance vector (S_k(0, i))_{1 ≤ i ≤ k}.
    pub fn normal_equations(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = self.cross(k, i + 1, j + 1);
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
        }
        let r = (1..=k).map(|i| self.cross(k, 0, i)).collect();
        (g, r)
    }

    /// Γ̂_{k,n} = (n−k)⁻¹ Σ_{t=k}^{n−1} U_t(k) U_t(k)ᵀ with
    /// U_t(k) = (u_t, …, u_{t−k+1})ᵀ, as a dense k × k matrix.
    pub fn windowed_gram(&self, k: usize) -> DMatrix<f64> {
        let (g, _) = self.normal_equations(k);
        DMatrix::from_row_slice(k, k, &g) / (self.n - k) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArFit {
    pub coeffs: Vec<f64>,
    pub sigma2: f64,
}

fn solve_order(u: &[f64], gram: &SampleGram, k: usize) -> Result<ArFit> {
    let (g, r) = gram.normal_equations(k);
    let chol = Cholesky::factor(&g, k, PIVOT_TOL).map_err(|reason| Error::Singular { order: k, reason })?;
    let coeffs = chol.solve(&r);
    let n = u.len();
    let mut rss = 0.0;
    for t in k..n {
        let pred: f64 = coeffs.iter().zip(u[t - k..t].iter().rev()).map(|(a, v)| a * v).sum();
        let e = u[t] - pred;
        rss += e * e;
    }
    Ok(ArFit {
        coeffs,
        sigma2: rss / (n - k) as f64,
    })
}

fn check_len(n: usize, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Parameter("AR order must be at least 1".into()));
    }
    if n <= 2 * k {
        return Err(Error::Parameter(format!("order {k} needs more than {} observations, got {n}", 2 * k)));
    }
    Ok(())
}

/// Least-squares AR(k) fit of the raw (uncentred) series over t = k+1..n.
pub fn fit_ar_ls(u: &[f64], k: usize) -> Result<ArFit> {
    check_len(u.len(), k)?;
    let gram = SampleGram::new(u, k)?;
    solve_order(u, &gram, k)
}

/// σ̂₀² (mean-corrected, divisor n − 1) and the order-specific LS fits
/// for k = 1..=max_order.
pub fn fit_all_orders(u: &[f64], max_order: usize) -> Result<PredictorTable> {
    if max_order > 0 {
        check_len(u.len(), max_order)?;
    } else if u.len() < 2 {
        return Err(Error::Parameter("need at least two observations".into()));
    }
    let n = u.len();
    let gram = SampleGram::new(u, max_order)?;
    let mut coeffs = Vec::with_capacity(max_order * (max_order + 1) / 2);
    let mut sigma2 = Vec::with_capacity(max_order + 1);
    let mean = u.iter().sum::<f64>() / n as f64;
    sigma2.push(u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64);
    for k in 1..=max_order {
        let fit = solve_order(u, &gram, k)?;
        let window_ms = gram.cross(k, 0, 0) / (n - k) as f64;
        if !(fit.sigma2 > EXACT_FIT_TOL * window_ms) {
            return Err(Error::Singular {
                order: k,
                reason: format!("zero residual variance ({:e})", fit.sigma2),
            });
        }
        coeffs.extend_from_slice(&fit.coeffs);
        sigma2.push(fit.sigma2);
    }
    if !(sigma2[0] > 0.0) {
        return Err(Error::Singular {
            order: 0,
            reason: "zero sample variance".into(),
        });
    }
    PredictorTable::from_flat(coeffs, sigma2, PredictorSource::LeastSquares)
}

/// Ω⁻¹(K) = T(K)ᵀ D(K)⁻¹ T(K) for dimension n.
#[derive(Clone, Debug)]
pub struct BandedCholInverse {
    n: usize,
    band: usize,
    table: Arc<PredictorTable>,
}

impl BandedCholInverse {
    /// Uses orders 0..=band of `table`, which may hold more.
    pub fn new(n: usize, band: usize, table: Arc<PredictorTable>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        if band >= n {
            return Err(Error::Parameter(format!("band {band} must be below dimension {n}")));
        }
        if table.order() < band {
            return Err(Error::Parameter(format!(
                "table holds orders up to {}, band {band} requested",
                table.order()
            )));
        }
        Ok(BandedCholInverse { n, band, table })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn table(&self) -> &PredictorTable {
        &self.table
    }

    pub fn shared_table(&self) -> Arc<PredictorTable> {
        Arc::clone(&self.table)
    }

    /// Same table, different band.
    pub fn with_band(&self, band: usize) -> Result<Self> {
        Self::new(self.n, band, Arc::clone(&self.table))
    }

    /// Dense T(K) (unit lower triangular).
    pub fn t_matrix(&self) -> DMatrix<f64> {
        let mut t = DMatrix::identity(self.n, self.n);
        for i in 1..self.n {
            let m = i.min(self.band);
            for (l, a) in self.table.row(m).iter().enumerate() {
                t[(i, i - 1 - l)] = -a;
            }
        }
        t
    }

    /// Diagonal of D(K).
    pub fn d_diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.table.sigma2(i.min(self.band))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&BandedCholInverseJson::from(self)).expect("serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BandedCholInverseJson =
            serde_json::from_str(text).map_err(|e| Error::Parameter(format!("inverse json: {e}")))?;
        let table = PredictorTable::from_rows(raw.coeffs, raw.sigma2, PredictorSource::LeastSquares)?;
        Self::new(raw.n, raw.band, Arc::new(table))
    }
}

#[derive(Serialize, Deserialize)]
struct BandedCholInverseJson {
    n: usize,
    #[serde(rename = "K")]
    band: usize,
    sigma2: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl From<&BandedCholInverse> for BandedCholInverseJson {
    fn from(inv: &BandedCholInverse) -> Self {
        BandedCholInverseJson {
            n: inv.n,
            band: inv.band,
            sigma2: inv.table.sigma2_by_order()[..=inv.band].to_vec(),
            coeffs: (1..=inv.band).map(|k| inv.table.row(k).to_vec()).collect(),
        }
    }
}

/// Ω⁻¹(K) x in O(nK): T x, scale by D⁻¹, then Tᵀ.
pub fn inverse_apply(inv: &BandedCholInverse, x: &[f64]) -> Vec<f64> {
    inv.apply(x)
}

impl LinearOperator for BandedCholInverse {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let m = i.min(self.band);
            let row = self.table.row(m);
            let pred: f64 = row.iter().zip(x[..i].iter().rev()).map(|(a, v)| a * v).sum();
            y[i] = (x[i] - pred) / self.table.sigma2(m);
        }
        out.copy_from_slice(&y);
        for i in 1..n {
            let m = i.min(self.band);
            let row = self.table.row(m);
            let yi = y[i];
            for (o, a) in out[..i].iter_mut().rev().zip(row) {
                *o -= a * yi;
            }
        }
    }

    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

pub fn build_population_inverse(gamma: &AutocovSequence, n: usize, band: usize) -> Result<BandedCholInverse> {
    if band >= n {
        return Err(Error::Parameter(format!("band {band} must be below dimension {n}")));
    }
    let table = durbin_levinson(gamma, band)?;
    BandedCholInverse::new(n, band, Arc::new(table))
}

/// Ω̂⁻¹(K) over n = len(u).
pub fn build_estimated_inverse(u: &[f64], band: usize) -> Result<BandedCholInverse> {
    let table = fit_all_orders(u, band)?;
    BandedCholInverse::new(u.len(), band, Arc::new(table))
}

/// ‖Ω⁻¹(K) − Ω⁻¹‖₂ for each K in `bands`, with Ω⁻¹ the full-band inverse.
pub fn approximation_error_curve(
    gamma: &AutocovSequence,
    n: usize,
    bands: &[usize],
    cfg: &PowerIteration,
) -> Result<Vec<(usize, f64)>> {
    if n < 2 {
        return Err(Error::Parameter("dimension must be at least 2".into()));
    }
    if let Some(&bad) = bands.iter().find(|&&k| k >= n) {
        return Err(Error::Parameter(format!("band {bad} must be below dimension {n}")));
    }
    let full = build_population_inverse(gamma, n, n - 1)?;
    bands
        .iter()
        .map(|&k| {
            let banded = full.with_band(k)?;
            let diff = op_difference(&banded, &full)?;
            Ok((k, symmetric_spectral_norm(&diff, cfg)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farima::{autocov, FarimaModel};
    use crate::linalg::materialize;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn noiseless_ar1_recovers_coefficient() {
        let mut u = vec![1.0];
        for t in 1..60 {
            u.push(0.7 * u[t - 1]);
        }
        let fit = fit_ar_ls(&u, 1).unwrap();
        assert!((fit.coeffs[0] - 0.7).abs() < 1e-12);
        assert!(fit.sigma2 < 1e-20);
        assert!(matches!(build_estimated_inverse(&u, 1), Err(Error::Singular { order: 1, .. })));
    }

    #[test]
    fn zero_series_is_singular() {
        assert!(matches!(fit_all_orders(&[0.0; 40], 3), Err(Error::Singular { order: 1, .. })));
    }

    #[test]
    fn order_constraints() {
        assert!(fit_ar_ls(&noise(10, 1), 5).is_err());
        assert!(fit_ar_ls(&noise(11, 1), 5).is_ok());
        assert!(fit_ar_ls(&noise(11, 1), 0).is_err());
    }

    #[test]
    fn cross_products_match_direct_sums() {
        let u = noise(25, 3);
        let g = SampleGram::new(&u, 4).unwrap();
        for k in 0..=4 {
            for i in 0..=k {
                for j in 0..=k {
                    let direct: f64 = (k..25).map(|t| u[t - i] * u[t - j]).sum();
                    assert!((g.cross(k, i, j) - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn white_noise_table_is_identity() {
        let table = Arc::new(PredictorTable::white_noise(3, 1.0).unwrap());
        let inv = BandedCholInverse::new(8, 3, table).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 2.5).collect();
        assert_eq!(inverse_apply(&inv, &x), x);
    }

    #[test]
    fn apply_matches_dense_triple_product() {
        let u = noise(40, 9);
        let inv = build_estimated_inverse(&u, 4).unwrap();
        let t = inv.t_matrix();
        let d_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            inv.n(),
            inv.d_diagonal().into_iter().map(|v| 1.0 / v),
        ));
        let dense = t.transpose() * d_inv * t;
        let m = materialize(&inv).unwrap();
        assert!((m - &dense).amax() < 1e-12);
    }

    #[test]
    fn symmetric_positive_definite() {
        let u = noise(60, 4);
        let inv = build_estimated_inverse(&u, 5).unwrap();
        let x = noise(60, 5);
        let y = noise(60, 6);
        let xy: f64 = x.iter().zip(inv.apply(&y)).map(|(a, b)| a * b).sum();
        let yx: f64 = y.iter().zip(inv.apply(&x)).map(|(a, b)| a * b).sum();
        assert!((xy - yx).abs() < 1e-12 * xy.abs().max(1.0));
        let xx: f64 = x.iter().zip(inv.apply(&x)).map(|(a, b)| a * b).sum();
        assert!(xx > 0.0);
    }

    #[test]
    fn banding_structure() {
        let gamma = autocov(&FarimaModel::fractional(0.3).unwrap(), 12).unwrap();
        let inv = build_population_inverse(&gamma, 12, 3).unwrap();
        let m = materialize(&inv).unwrap();
        for i in 0..12usize {
            for j in 0..12usize {
                if i.abs_diff(j) > 3 {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn ar1_inverse_is_exact_at_band_one() {
        let g0 = 1.0 / 0.51;
        let gamma = AutocovSequence::new((0..5).map(|k| g0 * 0.7f64.powi(k)).collect(), 0.0).unwrap();
        let inv = build_population_inverse(&gamma, 5, 1).unwrap();
        let omega = DMatrix::from_fn(5, 5, |i, j| gamma.at(i as isize - j as isize));
        let dense_inv = omega.try_inverse().unwrap();
        assert!((materialize(&inv).unwrap() - dense_inv).amax() < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let u = noise(30, 2);
        let inv = build_estimated_inverse(&u, 2).unwrap();
        let json = inv.to_json();
        assert!(json.contains("\"K\":2"));
        let back = BandedCholInverse::from_json(&json).unwrap();
        assert_eq!(back.apply(&u), inv.apply(&u));
    }

    #[test]
    fn white_noise_curve_is_zero() {
        let gamma = AutocovSequence::new(vec![1.0; 1].into_iter().chain(vec![0.0; 29]).collect(), 0.0).unwrap();
        let curve = approximation_error_curve(&gamma, 30, &[1, 2, 5], &PowerIteration::default()).unwrap();
        assert!(curve.iter().all(|&(_, e)| e == 0.0));
    }
}
