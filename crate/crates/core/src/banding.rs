//! Data-driven choice of the banding parameter by subsampling and risk
//! minimization (SAR).
//!
//! The series is cut into ⌊n/b⌋ consecutive blocks of length b. For each
//! candidate band k in [L, H) every block yields an H-dimensional estimate
//! Ω̂⁻¹_{H,k,v}; its spectral distance to the inverse of the full-sample
//! windowed Gram Γ̂_{H,n} is averaged over blocks to give the risk R̂(k).

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::chol_inverse::{build_population_inverse, fit_all_orders, BandedCholInverse, SampleGram, PIVOT_TOL};
use crate::error::{Error, Result};
use crate::farima::AutocovSequence;
use crate::linalg::{materialize, op_difference, symmetric_spectral_norm, Cholesky, LinearOperator, PowerIteration};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SarConfig {
    /// Block length b.
    pub block_len: usize,
    /// Smallest candidate band L.
    pub lower: usize,
    /// Exclusive upper bound H, also the dimension of block estimates.
    pub upper: usize,
    /// Set when the default L had to be lowered below H.
    pub lowered: bool,
}

impl SarConfig {
    pub fn new(block_len: usize, lower: usize, upper: usize) -> Self {
        SarConfig {
            block_len,
            lower,
            upper,
            lowered: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let SarConfig {
            block_len: b,
            lower: l,
            upper: h,
            ..
        } = *self;
        if !(1 <= l && l < h && h < b && b <= n) {
            return Err(Error::Parameter(format!("SAR bounds need 1 ≤ L < H < b ≤ n, got L={l}, H={h}, b={b}, n={n}")));
        }
        if n / b < 2 {
            return Err(Error::Parameter(format!("SAR needs at least two blocks, n={n}, b={b}")));
        }
        // block fits go up to order H − 1
        if b <= 2 * (h - 1) {
            return Err(Error::Parameter(format!("block length {b} too short for bands below {h}")));
        }
        Ok(())
    }
}

/// b = ⌊n/5⌋, L = ⌊ln n⌋, H = ⌈n^0.4⌉.
pub fn sar_defaults(n: usize) -> Result<SarConfig> {
    if n < 50 {
        return Err(Error::Parameter(format!("SAR defaults need n ≥ 50, got {n}")));
    }
    let nf = n as f64;
    let block_len = n / 5;
    let mut lower = nf.ln().floor() as usize;
    let upper = nf.powf(0.4).ceil() as usize;
    let mut lowered = false;
    if lower >= upper {
        lower = upper.saturating_sub(1).max(1);
        lowered = true;
        warn!("SAR lower bound reduced to {lower} for n = {n}");
    }
    let cfg = SarConfig {
        block_len,
        lower,
        upper,
        lowered,
    };
    cfg.validate(n)?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SarTrace {
    /// (k, R̂(k)) for k = L..H−1.
    pub risks: Vec<(usize, f64)>,
    pub chosen_k: usize,
    /// Blocks dropped because their fits were singular.
    pub skipped_blocks: usize,
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub(crate) fn symmetric_norm(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Inverse of the full-sample windowed Gram Γ̂_{H,n}.
pub fn surrogate_inverse(u: &[f64], h: usize) -> Result<DMatrix<f64>> {
    let gram = SampleGram::new(u, h)?;
    let g = gram.windowed_gram(h);
    let row_major: Vec<f64> = g.transpose().iter().copied().collect();
    let chol = Cholesky::factor(&row_major, h, PIVOT_TOL).map_err(|reason| Error::Singular { order: h, reason })?;
    Ok(chol.inverse())
}

pub fn select_k(u: &[f64], cfg: &SarConfig) -> Result<SarTrace> {
    let n = u.len();
    cfg.validate(n)?;
    let h = cfg.upper;
    let surrogate = surrogate_inverse(u, h)?;
    let blocks = n / cfg.block_len;

    let block_tables: Vec<Option<Arc<_>>> = u
        .chunks_exact(cfg.block_len)
        .take(blocks)
        .map(|block| match fit_all_orders(block, h - 1) {
            Ok(t) => Some(Arc::new(t)),
            Err(e) => {
                warn!("SAR block skipped: {e}");
                None
            }
        })
        .collect();
    let used = block_tables.iter().flatten().count();
    if 2 * used < blocks {
        return Err(Error::Singular {
            order: h - 1,
            reason: format!("only {used} of {blocks} SAR blocks could be fitted"),
        });
    }

    let mut risks = Vec::with_capacity(h - cfg.lower);
    for k in cfg.lower..h {
        let mut total = 0.0;
        for table in block_tables.iter().flatten() {
            let est = BandedCholInverse::new(h, k, Arc::clone(table))?;
            total += symmetric_norm(materialize(&est)? - &surrogate);
        }
        risks.push((k, total / used as f64));
    }
    let mut chosen = risks[0];
    for &(k, r) in &risks[1..] {
        if r < chosen.1 {
            chosen = (k, r);
        }
    }
    Ok(SarTrace {
        risks,
        chosen_k: chosen.0,
        skipped_blocks: blocks - used,
    })
}

/// ‖Ω̂⁻¹ − Ω⁻¹‖₂ evaluated matrix-free. Both operators must be symmetric.
pub fn estimation_loss<A: LinearOperator, B: LinearOperator>(estimate: A, truth: B, cfg: &PowerIteration) -> Result<f64> {
    symmetric_spectral_norm(&op_difference(estimate, truth)?, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SensitivityOutcome {
    pub c: f64,
    pub k: usize,
    pub perturbed_k: usize,
    pub base_loss: f64,
    pub perturbed_loss: f64,
    pub sf: f64,
}

/// round(cK) clamped to [1, n/2 − 1].
pub fn perturbed_band(c: f64, k: usize, n: usize) -> usize {
    let hi = (n / 2).saturating_sub(1).max(1);
    ((c * k as f64).round() as usize).clamp(1, hi)
}

/// SF(c) = (‖Ω̂⁻¹(cK) − Ω⁻¹‖₂ − ‖Ω̂⁻¹(K) − Ω⁻¹‖₂) / ‖Ω̂⁻¹(K) − Ω⁻¹‖₂
/// with K from SAR and Ω⁻¹ the exact inverse of the true covariance.
pub fn sensitivity(u: &[f64], c: f64, gamma_true: &AutocovSequence) -> Result<f64> {
    let n = u.len();
    if gamma_true.len() < n {
        return Err(Error::Dimension {
            expected: n,
            actual: gamma_true.len(),
        });
    }
    let truth = build_population_inverse(gamma_true, n, n - 1)?;
    let sar = sar_defaults(n)?;
    let out = sensitivity_against(u, &[c], &truth, &sar, &PowerIteration::default())?;
    Ok(out[0].sf)
}

/// SF(c) for several c sharing one SAR choice and one base loss.
pub fn sensitivity_against(
    u: &[f64],
    cs: &[f64],
    truth: &BandedCholInverse,
    sar: &SarConfig,
    power: &PowerIteration,
) -> Result<Vec<SensitivityOutcome>> {
    let n = u.len();
    if truth.n() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: truth.n(),
        });
    }
    if let Some(&c) = cs.iter().find(|&&c| !(c > 0.0)) {
        return Err(Error::Parameter(format!("perturbation factor c = {c} must be positive")));
    }
    let k = select_k(u, sar)?.chosen_k;
    let bands: Vec<usize> = cs.iter().map(|&c| perturbed_band(c, k, n)).collect();
    let max_band = bands.iter().copied().chain([k]).max().unwrap_or(k);
    let table = Arc::new(fit_all_orders(u, max_band)?);
    let base = BandedCholInverse::new(n, k, Arc::clone(&table))?;
    let base_loss = estimation_loss(&base, truth, power)?;
    if base_loss == 0.0 {
        return Err(Error::Degenerate("estimate matches the true inverse exactly".into()));
    }
    cs.iter()
        .zip(bands)
        .map(|(&c, ck)| {
            let perturbed_loss = if ck == k {
                base_loss
            } else {
                estimation_loss(BandedCholInverse::new(n, ck, Arc::clone(&table))?, truth, power)?
            };
            Ok(SensitivityOutcome {
                c,
                k,
                perturbed_k: ck,
                base_loss,
                perturbed_loss,
                sf: (perturbed_loss - base_loss) / base_loss,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn default_bounds() {
        let c = sar_defaults(1000).unwrap();
        assert_eq!((c.block_len, c.lower, c.upper), (200, 6, 16));
        let c = sar_defaults(250).unwrap();
        assert_eq!((c.block_len, c.lower, c.upper), (50, 5, 10));
        let c = sar_defaults(4000).unwrap();
        assert_eq!((c.block_len, c.lower, c.upper), (800, 8, 28));
        assert!(!c.lowered);
        assert!(sar_defaults(49).is_err());
    }

    #[test]
    fn single_candidate() {
        let u = noise(500, 1);
        let cfg = SarConfig::new(100, 7, 8);
        let trace = select_k(&u, &cfg).unwrap();
        assert_eq!(trace.chosen_k, 7);
        assert_eq!(trace.risks.len(), 1);
    }

    #[test]
    fn white_noise_prefers_small_bands() {
        let u = noise(1000, 11);
        let cfg = sar_defaults(1000).unwrap();
        let trace = select_k(&u, &cfg).unwrap();
        assert_eq!(trace.risks.len(), cfg.upper - cfg.lower);
        assert!(trace.risks.iter().all(|&(_, r)| r >= 0.0));
        assert!(trace.chosen_k <= cfg.lower + 2, "chose {}", trace.chosen_k);
    }

    #[test]
    fn invalid_config_rejected() {
        let u = noise(100, 2);
        assert!(select_k(&u, &SarConfig::new(60, 3, 5)).is_err());
        assert!(select_k(&u, &SarConfig::new(20, 5, 5)).is_err());
        assert!(select_k(&u, &SarConfig::new(10, 3, 9)).is_err());
    }

    #[test]
    fn perturbed_band_rounds_and_clamps() {
        assert_eq!(perturbed_band(0.8, 6, 1000), 5);
        assert_eq!(perturbed_band(1.2, 6, 1000), 7);
        assert_eq!(perturbed_band(0.01, 6, 1000), 1);
        assert_eq!(perturbed_band(100.0, 6, 40), 19);
    }
}
