//! Regression with long-memory errors: detrending by least-squares
//! residuals, the residual-based inverse estimate Ω̃⁻¹(K), the finite
//! predictor estimate a*(n), FGLS, and best-subset polynomial selection.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::banding::{sar_defaults, select_k};
use crate::chol_inverse::{fit_all_orders, BandedCholInverse, SampleGram, PIVOT_TOL};
use crate::error::{Error, Result};
use crate::farima::{FarimaModel, PredictorSource, Simulator};
use crate::linalg::{Cholesky, LinearOperator};
use crate::rng::{replication_seed, rng_from_seed};

/// Columns whose residual norm after orthogonalization falls below this
/// fraction of their original norm are dependent.
pub const RANK_TOL: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e12;

/// Regressor columns x̌_{n1}, …, x̌_{np}. Stored columns may be rescaled
/// copies of the raw regressors (`stored = raw · scale`); coefficients are
/// always reported for the raw regressors.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
    scales: Vec<f64>,
    powers: Option<Vec<u32>>,
}

impl DesignMatrix {
    pub fn empty(n: usize) -> Self {
        DesignMatrix {
            n,
            columns: Vec::new(),
            labels: Vec::new(),
            scales: Vec::new(),
            powers: Some(Vec::new()),
        }
    }

    /// Columns t^k, t = 1..n, for each k in `powers`, stored as (t/n)^k.
    pub fn polynomial(n: usize, powers: &[u32]) -> Self {
        let nf = n as f64;
        let columns = powers
            .iter()
            .map(|&k| (1..=n).map(|t| (t as f64 / nf).powi(k as i32)).collect())
            .collect();
        let labels = powers
            .iter()
            .map(|&k| match k {
                0 => "1".to_string(),
                1 => "t".to_string(),
                k => format!("t^{k}"),
            })
            .collect();
        let scales = powers.iter().map(|&k| nf.powi(-(k as i32))).collect();
        DesignMatrix {
            n,
            columns,
            labels,
            scales,
            powers: Some(powers.to_vec()),
        }
    }

    /// Intercept through t^{p−1}.
    pub fn polynomial_degree(n: usize, p: usize) -> Self {
        Self::polynomial(n, &(0..p as u32).collect::<Vec<_>>())
    }

    /// Single regressor 1 + cos(θt).
    pub fn cosine(n: usize, theta: f64) -> Self {
        let col = (1..=n).map(|t| 1.0 + (theta * t as f64).cos()).collect();
        Self::from_columns(vec![col], vec![format!("1+cos({theta}t)")]).expect("consistent lengths")
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                actual: bad.len(),
            });
        }
        if labels.len() != columns.len() {
            return Err(Error::Dimension {
                expected: columns.len(),
                actual: labels.len(),
            });
        }
        let scales = vec![1.0; columns.len()];
        Ok(DesignMatrix {
            n,
            columns,
            labels,
            scales,
            powers: None,
        })
    }

    /// Parses `poly:p=<p>` (intercept through t^{p−1}).
    pub fn parse_poly_spec(spec: &str, n: usize) -> Result<Self> {
        let p = spec
            .strip_prefix("poly:p=")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parameter(format!("bad design spec '{spec}', expected poly:p=<int>")))?;
        Ok(Self::polynomial_degree(n, p))
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn powers(&self) -> Option<&[u32]> {
        self.powers.as_deref()
    }

    /// Σ_j raw_j β_j.
    pub fn mean_response(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.ncols());
        let mut y = vec![0.0; self.n];
        for ((col, &s), &b) in self.columns.iter().zip(&self.scales).zip(beta) {
            for (yi, xi) in y.iter_mut().zip(col) {
                *yi += xi / s * b;
            }
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetrendResult {
    /// ũ = (I − M)y.
    pub residuals: Vec<f64>,
    /// Orthonormal basis q̌_1..q̌_r of the column span.
    pub q_basis: Vec<Vec<f64>>,
    /// v_i = q̌_iᵀ y.
    pub v: Vec<f64>,
    pub rank: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthonormal basis of the column span by Gram–Schmidt with one full
/// reorthogonalization pass; dependent columns are dropped.
fn orthonormal_basis(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in columns {
        let norm0 = dot(col, col).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm > RANK_TOL * norm0 {
            w.iter_mut().for_each(|v| *v /= norm);
            basis.push(w);
        }
    }
    basis
}

pub fn design_rank(x: &DesignMatrix) -> usize {
    orthonormal_basis(&x.columns).len()
}

/// Least-squares residuals of y on the columns of X. Rank-deficient
/// designs are handled through the span.
pub fn detrend(y: &[f64], x: &DesignMatrix) -> Result<DetrendResult> {
    if x.ncols() > 0 && x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let q_basis = orthonormal_basis(&x.columns);
    let mut residuals = y.to_vec();
    let mut v = vec![0.0; q_basis.len()];
    for _ in 0..2 {
        for (q, vi) in q_basis.iter().zip(v.iter_mut()) {
            let c = dot(q, &residuals);
            axpy(-c, q, &mut residuals);
            *vi += c;
        }
    }
    Ok(DetrendResult {
        residuals,
        rank: q_basis.len(),
        q_basis,
        v,
    })
}

/// Ω̃⁻¹(K): the banded Cholesky estimate computed from detrended residuals.
pub fn build_detrended_inverse(y: &[f64], x: &DesignMatrix, band: usize) -> Result<BandedCholInverse> {
    let resid = detrend(y, x)?.residuals;
    detrended_inverse_from_residuals(&resid, band)
}

pub fn detrended_inverse_from_residuals(resid: &[f64], band: usize) -> Result<BandedCholInverse> {
    let table = fit_all_orders(resid, band)?.with_source(PredictorSource::Detrended);
    BandedCholInverse::new(resid.len(), band, Arc::new(table))
}

/// a*(n) = Ω̃⁻¹(K) γ̃_n with γ̃_n = (γ̃₁, …, γ̃_K, 0, …, 0) and γ̃_j the
/// (1, j+1) entry of Γ̃_{K+1,n}.
pub fn predictor_estimate(y: &[f64], x: &DesignMatrix, band: usize) -> Result<Vec<f64>> {
    let n = y.len();
    if band < 1 || n <= 2 * (band + 1) {
        return Err(Error::Parameter(format!("band {band} too large for n = {n}")));
    }
    let resid = detrend(y, x)?.residuals;
    let inv = detrended_inverse_from_residuals(&resid, band)?;
    let gram = SampleGram::new(&resid, band + 1)?;
    let scale = (n - band - 1) as f64;
    let mut gamma = vec![0.0; n];
    for j in 1..=band {
        gamma[j - 1] = gram.cross(band + 1, 1, j + 1) / scale;
    }
    Ok(inv.apply(&gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FglsResult {
    /// Coefficients of the raw regressors.
    pub beta_hat: Vec<f64>,
    /// True when the design is polynomial, so L_n(β̂ − β) is defined.
    pub scaled_error_available: bool,
    /// Condition number of the equilibrated normal matrix.
    pub condition_number: f64,
}

/// β̂ = (XᵀΩ̃⁻¹X)⁻¹ XᵀΩ̃⁻¹y, using p + 1 operator applications.
pub fn fgls<A: LinearOperator>(y: &[f64], x: &DesignMatrix, inv: &A) -> Result<FglsResult> {
    let n = y.len();
    let p = x.ncols();
    if p == 0 {
        return Err(Error::Parameter("FGLS needs at least one regressor".into()));
    }
    if inv.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: inv.dim(),
        });
    }
    if x.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: x.nrows(),
        });
    }
    let rank = design_rank(x);
    if rank < p {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    let weighted: Vec<Vec<f64>> = x.columns.iter().map(|c| inv.apply(c)).collect();
    let wy = inv.apply(y);
    let mut a = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let v = dot(&x.columns[i], &weighted[j]);
            a[i * p + j] = v;
            a[j * p + i] = v;
        }
    }
    let b: Vec<f64> = x.columns.iter().map(|c| dot(c, &wy)).collect();

    let d: Vec<f64> = (0..p).map(|i| a[i * p + i].sqrt()).collect();
    let equilibrated = DMatrix::from_fn(p, p, |i, j| a[i * p + j] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(equilibrated).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition_number));
    }
    let chol = Cholesky::factor(&a, p, PIVOT_TOL).map_err(|_| Error::IllConditioned(condition_number))?;
    let beta_stored = chol.solve(&b);
    let beta_hat = beta_stored.iter().zip(&x.scales).map(|(b, s)| b * s).collect();
    Ok(FglsResult {
        beta_hat,
        scaled_error_available: x.powers.is_some(),
        condition_number,
    })
}

/// ‖L_n(β̂ − β)‖₂ with L_n = n^{−d} diag(n^{1/2}, n^{3/2}, …, n^{p−1/2}).
pub fn polynomial_scaled_error(beta_hat: &[f64], beta: &[f64], n: usize, d: f64) -> f64 {
    let nf = n as f64;
    beta_hat
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(i, (bh, b))| {
            let w = nf.powf(i as f64 + 0.5 - d);
            (w * (bh - b)).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Candidate regressors for subset selection: 1, t, …, t⁵.
pub const SELECTION_POWERS: [u32; 6] = [0, 1, 2, 3, 4, 5];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSelection {
    /// Bit i set when t^i is included.
    pub mask: u8,
    pub labels: Vec<String>,
    /// Residual mean square RSS/n of the chosen subset.
    pub sigma2: f64,
    /// L_n(M) = ln σ̂²(M) + #M / ln n (−∞ for an exact fit).
    pub criterion: f64,
    /// Set when the chosen subset fits y exactly.
    pub degenerate: bool,
}

pub fn mask_powers(mask: u8) -> Vec<u32> {
    SELECTION_POWERS.iter().copied().filter(|&k| mask & (1 << k) != 0).collect()
}

pub fn powers_mask(powers: &[u32]) -> u8 {
    powers.iter().fold(0u8, |m, &k| m | (1 << k))
}

/// Best subset of {1, t, …, t⁵} (nonempty) under L_n(M).
pub fn model_select(y: &[f64]) -> Result<ModelSelection> {
    let n = y.len();
    if n < 50 {
        return Err(Error::Parameter(format!("model selection needs n ≥ 50, got {n}")));
    }
    let ln_n = (n as f64).ln();
    let mut masks: Vec<u8> = (1u8..64).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let max_abs = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let exact_ms = (16.0 * f64::EPSILON * max_abs).powi(2);

    let mut best: Option<ModelSelection> = None;
    for mask in masks {
        let powers = mask_powers(mask);
        let design = DesignMatrix::polynomial(n, &powers);
        let resid = detrend(y, &design)?.residuals;
        let sigma2 = dot(&resid, &resid) / n as f64;
        if sigma2 <= exact_ms {
            return Ok(ModelSelection {
                mask,
                labels: design.labels.clone(),
                sigma2,
                criterion: f64::NEG_INFINITY,
                degenerate: true,
            });
        }
        let criterion = sigma2.ln() + powers.len() as f64 / ln_n;
        let better = match &best {
            None => true,
            Some(b) => criterion < b.criterion || (criterion == b.criterion && mask < b.mask),
        };
        if better {
            best = Some(ModelSelection {
                mask,
                labels: design.labels.clone(),
                sigma2,
                criterion,
                degenerate: false,
            });
        }
    }
    Ok(best.expect("63 candidate subsets"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RateDesign {
    /// Intercept through t^{p−1}, scaled by n^{−d} diag(n^{1/2}, …, n^{p−1/2}).
    Polynomial(usize),
    /// 1 + cos(θt), scaled by n^{1/2−d} K^d.
    Cosine(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub median_scaled_error: f64,
    pub reps_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Every ratio of successive medians is below 1.5.
    pub stable: bool,
}

/// Monte Carlo medians of the scaled FGLS error across sample sizes.
/// The error series follows `model`; β is all ones; K is chosen by SAR on
/// the detrended residuals.
pub fn fgls_rate_diagnostic(
    design: RateDesign,
    model: &FarimaModel,
    n_grid: &[usize],
    reps: usize,
    master_seed: u64,
) -> Result<RateTable> {
    if reps == 0 || n_grid.is_empty() {
        return Err(Error::Parameter("need at least one replication and one n".into()));
    }
    let d = model.d;
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let x = match design {
            RateDesign::Polynomial(p) => DesignMatrix::polynomial_degree(n, p),
            RateDesign::Cosine(theta) => DesignMatrix::cosine(n, theta),
        };
        let beta = vec![1.0; x.ncols()];
        let mean = x.mean_response(&beta);
        let sim = Simulator::new(model, n)?;
        let sar = sar_defaults(n)?;
        let label = format!("fgls-rate|{design:?}|{d}|{n}");
        let errors: Vec<Result<f64>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_from_seed(replication_seed(master_seed, &label, r as u64));
                let u = sim.sample(&mut rng);
                let y: Vec<f64> = mean.iter().zip(&u).map(|(m, e)| m + e).collect();
                let resid = detrend(&y, &x)?.residuals;
                let k = select_k(&resid, &sar)?.chosen_k;
                let inv = detrended_inverse_from_residuals(&resid, k)?;
                let fit = fgls(&y, &x, &inv)?;
                Ok(match design {
                    RateDesign::Polynomial(_) => polynomial_scaled_error(&fit.beta_hat, &beta, n, d),
                    RateDesign::Cosine(_) => {
                        (n as f64).powf(0.5 - d) * (k as f64).powf(d) * (fit.beta_hat[0] - beta[0]).abs()
                    }
                })
            })
            .collect();
        let mut ok: Vec<f64> = errors.into_iter().filter_map(Result::ok).collect();
        if ok.is_empty() {
            return Err(Error::Degenerate(format!("every replication failed at n = {n}")));
        }
        ok.sort_by(f64::total_cmp);
        rows.push(RateRow {
            n,
            median_scaled_error: median_sorted(&ok),
            reps_used: ok.len(),
        });
    }
    let stable = rows
        .windows(2)
        .all(|w| w[1].median_scaled_error < 1.5 * w[0].median_scaled_error);
    Ok(RateTable { rows, stable })
}

fn median_sorted(v: &[f64]) -> f64 {
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}
