//! FARIMA(p, d, q) processes: filter weights, exact autocovariances,
//! population finite predictors and exact Gaussian simulation.
//!
//! Polynomial conventions: `φ(B) = 1 − φ₁B − … − φ_pB^p` and
//! `θ(B) = 1 + θ₁B + … + θ_qB^q`, so `(1 − 0.4B)w_t` is encoded as
//! `ma = [-0.4]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::special::gamma;

/// Roots of φ and θ must lie outside the circle of this radius.
const ROOT_MARGIN: f64 = 1e-8;
/// Target absolute truncation error for ARMA-convolved autocovariances,
/// relative to γ₀.
const TAIL_TARGET: f64 = 1e-13;
const MAX_IMPULSE_LEN: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarimaModel {
    #[serde(rename = "ar", default)]
    pub ar_coeffs: Vec<f64>,
    #[serde(rename = "ma", default)]
    pub ma_coeffs: Vec<f64>,
    pub d: f64,
    #[serde(default = "unit_variance")]
    pub sigma2: f64,
}

fn unit_variance() -> f64 {
    1.0
}

impl FarimaModel {
    pub fn new(ar_coeffs: Vec<f64>, ma_coeffs: Vec<f64>, d: f64, sigma2: f64) -> Result<Self> {
        let model = FarimaModel {
            ar_coeffs,
            ma_coeffs,
            d,
            sigma2,
        };
        model.validate()?;
        Ok(model)
    }

    /// FARIMA(0, d, 0) with unit innovation variance.
    pub fn fractional(d: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), d, 1.0)
    }

    /// The four simulation designs, with unit-variance Gaussian innovations:
    ///
    /// * `dgp1`: `(1−B)^d u_t = w_t`
    /// * `dgp2`: `(1−0.7B)(1−B)^d u_t = w_t`
    /// * `dgp3`: `(1−B)^d u_t = (1−0.4B) w_t`
    /// * `dgp4`: `(1+0.4B)(1−B)^d u_t = (1−0.3B) w_t`
    pub fn preset(name: &str, d: f64) -> Result<Self> {
        let (ar, ma) = match name.to_ascii_lowercase().as_str() {
            "dgp1" => (vec![], vec![]),
            "dgp2" => (vec![0.7], vec![]),
            "dgp3" => (vec![], vec![-0.4]),
            "dgp4" => (vec![-0.4], vec![-0.3]),
            other => return Err(Error::Parameter(format!("unknown model preset '{other}'"))),
        };
        Self::new(ar, ma, d, 1.0)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FarimaModel =
            serde_json::from_str(text).map_err(|e| Error::Parameter(format!("model json: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn is_short_memory_only(&self) -> bool {
        self.ar_coeffs.is_empty() && self.ma_coeffs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d < 0.5) {
            return Err(Error::Parameter(format!("d = {} outside [0, 1/2)", self.d)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Parameter(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if self.ar_coeffs.iter().chain(&self.ma_coeffs).any(|c| !c.is_finite()) {
            return Err(Error::Model("non-finite polynomial coefficient".into()));
        }
        // Reciprocal roots of φ(z) = 1 − Σφ_i z^i are the eigenvalues of the
        // companion matrix of z^p − φ₁z^{p−1} − … − φ_p.
        let ar_companion: Vec<f64> = self.ar_coeffs.clone();
        if max_reciprocal_root(&ar_companion) * (1.0 + ROOT_MARGIN) >= 1.0 {
            return Err(Error::Model("AR polynomial has a root in the closed unit disc".into()));
        }
        let ma_companion: Vec<f64> = self.ma_coeffs.iter().map(|c| -c).collect();
        if max_reciprocal_root(&ma_companion) * (1.0 + ROOT_MARGIN) >= 1.0 {
            return Err(Error::Model("MA polynomial has a root in the closed unit disc".into()));
        }
        Ok(())
    }
}

/// Largest eigenvalue modulus of the companion matrix whose first row is
/// `first_row`.
fn max_reciprocal_root(first_row: &[f64]) -> f64 {
    let p = first_row.len();
    match p {
        0 => 0.0,
        1 => first_row[0].abs(),
        _ => {
            let mut m = DMatrix::<f64>::zeros(p, p);
            for (j, &c) in first_row.iter().enumerate() {
                m[(0, j)] = c;
            }
            for i in 1..p {
                m[(i, i - 1)] = 1.0;
            }
            m.complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// ψ-weights of the MA(∞) representation, starting at ψ₀ = 1.
    MaPsi,
    /// a-weights of the AR(∞) representation `u_t = Σ a_j u_{t−j} + w_t`,
    /// starting at a₁.
    ArA,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    pub kind: WeightKind,
    pub values: Vec<f64>,
}

impl WeightSequence {
    pub fn truncation_len(&self) -> usize {
        match self.kind {
            WeightKind::MaPsi => self.values.len() - 1,
            WeightKind::ArA => self.values.len(),
        }
    }

    /// Weight at lag `j` (ψ_j, or a_j with j ≥ 1).
    pub fn at(&self, j: usize) -> f64 {
        match self.kind {
            WeightKind::MaPsi => self.values[j],
            WeightKind::ArA => {
                assert!(j >= 1, "AR weights start at lag 1");
                self.values[j - 1]
            }
        }
    }
}

fn check_d(d: f64) -> Result<()> {
    if (0.0..0.5).contains(&d) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("d = {d} outside [0, 1/2)")))
    }
}

/// Coefficients of `(1 − B)^{-d}` (MA kind) or the AR(∞) weights implied by
/// `(1 − B)^d` (AR kind), through lag `m`.
pub fn frac_weights(d: f64, m: usize, kind: WeightKind) -> Result<WeightSequence> {
    check_d(d)?;
    if m < 1 {
        return Err(Error::Parameter("truncation length must be at least 1".into()));
    }
    let values = match kind {
        WeightKind::MaPsi => frac_ma(d, m),
        WeightKind::ArA => frac_pi(d, m)[1..].iter().map(|p| -p).collect(),
    };
    Ok(WeightSequence { kind, values })
}

/// ψ₀..ψ_m of (1 − B)^{−d}.
fn frac_ma(d: f64, m: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(m + 1);
    psi.push(1.0);
    for j in 1..=m {
        let prev = psi[j - 1];
        psi.push(prev * (j as f64 - 1.0 + d) / j as f64);
    }
    psi
}

/// π₀..π_m of (1 − B)^{d}.
fn frac_pi(d: f64, m: usize) -> Vec<f64> {
    let mut pi = Vec::with_capacity(m + 1);
    pi.push(1.0);
    for j in 1..=m {
        let prev = pi[j - 1];
        pi.push(prev * (j as f64 - 1.0 - d) / j as f64);
    }
    pi
}

/// Impulse response c₀..c_m of θ(B)/φ(B).
pub fn arma_impulse(ar: &[f64], ma: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m + 1];
    for j in 0..=m {
        let mut v = match j {
            0 => 1.0,
            _ => ma.get(j - 1).copied().unwrap_or(0.0),
        };
        for (i, &phi) in ar.iter().enumerate().take(j) {
            v += phi * c[j - 1 - i];
        }
        c[j] = v;
    }
    c
}

fn convolve_truncated(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|j| {
            (0..=j)
                .filter(|&i| i < a.len() && j - i < b.len())
                .map(|i| a[i] * b[j - i])
                .sum()
        })
        .collect()
}

/// ψ-weights of the full FARIMA filter θ(B)/(φ(B)(1 − B)^d), ψ₀..ψ_m.
pub fn arma_weights(model: &FarimaModel, m: usize) -> Result<WeightSequence> {
    model.validate()?;
    if m < 1 {
        return Err(Error::Parameter("truncation length must be at least 1".into()));
    }
    let frac = frac_ma(model.d, m);
    let arma = arma_impulse(&model.ar_coeffs, &model.ma_coeffs, m);
    Ok(WeightSequence {
        kind: WeightKind::MaPsi,
        values: convolve_truncated(&frac, &arma, m + 1),
    })
}

/// AR(∞) weights a₁..a_m of the full model: `1 − Σ a_i B^i = φ(B)(1 − B)^d / θ(B)`.
pub fn ar_weights(model: &FarimaModel, m: usize) -> Result<WeightSequence> {
    model.validate()?;
    if m < 1 {
        return Err(Error::Parameter("truncation length must be at least 1".into()));
    }
    let pi = frac_pi(model.d, m);
    let mut phi_poly = vec![1.0];
    phi_poly.extend(model.ar_coeffs.iter().map(|c| -c));
    let numer = convolve_truncated(&phi_poly, &pi, m + 1);
    // g = numer / θ(B)
    let mut g = vec![0.0; m + 1];
    for j in 0..=m {
        let mut v = numer[j];
        for (i, &theta) in model.ma_coeffs.iter().enumerate().take(j) {
            v -= theta * g[j - 1 - i];
        }
        g[j] = v;
    }
    Ok(WeightSequence {
        kind: WeightKind::ArA,
        values: g[1..].iter().map(|v| -v).collect(),
    })
}

/// γ₀..γ_{n−1} with a bound on the absolute truncation error of each entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AutocovSequence {
    gamma: Vec<f64>,
    tail_bound: f64,
}

impl AutocovSequence {
    pub fn new(gamma: Vec<f64>, tail_bound: f64) -> Result<Self> {
        match gamma.first() {
            Some(&g0) if g0 > 0.0 && g0.is_finite() => {}
            _ => return Err(Error::Parameter("autocovariances need γ₀ > 0".into())),
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::Parameter("non-finite autocovariance".into()));
        }
        Ok(AutocovSequence { gamma, tail_bound })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// γ_{|k|}.
    pub fn at(&self, k: isize) -> f64 {
        self.gamma[k.unsigned_abs()]
    }
}

/// Unit-innovation-variance autocovariances of FARIMA(0, d, 0), lags 0..len−1.
pub fn fractional_autocov(d: f64, len: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(len);
    if len == 0 {
        return g;
    }
    g.push(if d == 0.0 {
        1.0
    } else {
        gamma(1.0 - 2.0 * d) / gamma(1.0 - d).powi(2)
    });
    for k in 1..len {
        let kf = k as f64;
        let prev = g[k - 1];
        g.push(prev * (kf - 1.0 + d) / (kf - d));
    }
    g
}

pub fn autocov(model: &FarimaModel, n: usize) -> Result<AutocovSequence> {
    model.validate()?;
    if n < 1 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    if model.is_short_memory_only() {
        let g = fractional_autocov(model.d, n)
            .into_iter()
            .map(|v| v * model.sigma2)
            .collect();
        return AutocovSequence::new(g, 0.0);
    }

    let impulse = arma_impulse(&model.ar_coeffs, &model.ma_coeffs, MAX_IMPULSE_LEN);
    let abs_total: f64 = impulse.iter().map(|c| c.abs()).sum();
    // suffix[m] = Σ_{i ≥ m} |c_i|
    let mut suffix = vec![0.0; impulse.len() + 1];
    for i in (0..impulse.len()).rev() {
        suffix[i] = suffix[i + 1] + impulse[i].abs();
    }
    let frac0 = fractional_autocov(model.d, 1)[0];
    let bound_for = |m: usize| {
        let tail = suffix[m + 1];
        model.sigma2 * frac0 * (2.0 * abs_total * tail + tail * tail)
    };
    // The last retained coefficient estimates the unresolved remainder.
    if impulse[MAX_IMPULSE_LEN].abs() > f64::EPSILON * abs_total {
        return Err(Error::Precision(
            "ARMA impulse response does not decay within the truncation limit".into(),
        ));
    }
    let scale = model.sigma2 * frac0;
    let mc = (1..MAX_IMPULSE_LEN)
        .find(|&m| bound_for(m) <= TAIL_TARGET * scale)
        .ok_or_else(|| Error::Precision("could not certify ARMA tail".into()))?;
    let c = &impulse[..=mc];
    let tail_bound = bound_for(mc);

    // r(h) = Σ_i c_i c_{i+h}
    let r: Vec<f64> = (0..=mc)
        .map(|h| (0..=mc - h).map(|i| c[i] * c[i + h]).sum())
        .collect();
    let frac = fractional_autocov(model.d, n + mc);
    let g: Vec<f64> = (0..n)
        .map(|k| {
            let mut acc = 0.0;
            for h in -(mc as isize)..=(mc as isize) {
                let lag = (k as isize - h).unsigned_abs();
                acc += r[h.unsigned_abs()] * frac[lag];
            }
            model.sigma2 * acc
        })
        .collect();
    AutocovSequence::new(g, tail_bound)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSource {
    Population,
    LeastSquares,
    Detrended,
}

/// Finite-predictor coefficients a(k) = (a_{k,1},…,a_{k,k}) and
/// prediction-error variances σ_k² for k = 0..K. σ₀² is the marginal
/// variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorTable {
    /// Row k (1 ≤ k ≤ K) occupies `coeffs[k(k−1)/2 .. k(k+1)/2]`.
    coeffs: Vec<f64>,
    sigma2: Vec<f64>,
    source: PredictorSource,
}

fn row_offset(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

impl PredictorTable {
    pub fn from_rows(rows: Vec<Vec<f64>>, sigma2: Vec<f64>, source: PredictorSource) -> Result<Self> {
        if sigma2.len() != rows.len() + 1 {
            return Err(Error::Dimension {
                expected: rows.len() + 1,
                actual: sigma2.len(),
            });
        }
        let mut coeffs = Vec::with_capacity(row_offset(rows.len() + 1));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Dimension {
                    expected: i + 1,
                    actual: row.len(),
                });
            }
            coeffs.extend_from_slice(row);
        }
        Self::from_flat(coeffs, sigma2, source)
    }

    pub(crate) fn from_flat(coeffs: Vec<f64>, sigma2: Vec<f64>, source: PredictorSource) -> Result<Self> {
        debug_assert_eq!(coeffs.len(), row_offset(sigma2.len()));
        if let Some((order, &variance)) = sigma2.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
            return Err(Error::NotPositiveDefinite { order, variance });
        }
        Ok(PredictorTable {
            coeffs,
            sigma2,
            source,
        })
    }

    /// White-noise table: all coefficients zero, all variances `variance`.
    pub fn white_noise(order: usize, variance: f64) -> Result<Self> {
        Self::from_flat(
            vec![0.0; row_offset(order + 1)],
            vec![variance; order + 1],
            PredictorSource::Population,
        )
    }

    /// Highest order K held.
    pub fn order(&self) -> usize {
        self.sigma2.len() - 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let start = row_offset(k);
        &self.coeffs[start..start + k]
    }

    pub fn sigma2(&self, k: usize) -> f64 {
        self.sigma2[k]
    }

    pub fn sigma2_by_order(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn source(&self) -> PredictorSource {
        self.source
    }

    pub(crate) fn with_source(mut self, source: PredictorSource) -> Self {
        self.source = source;
        self
    }

    /// Copy holding orders 0..=k only.
    pub fn truncated(&self, k: usize) -> PredictorTable {
        assert!(k <= self.order());
        PredictorTable {
            coeffs: self.coeffs[..row_offset(k + 1)].to_vec(),
            sigma2: self.sigma2[..=k].to_vec(),
            source: self.source,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (1..=self.order()).map(move |k| self.row(k))
    }
}

/// Population a(k), σ_k² for k = 0..=max_order by the Levinson recursion.
pub fn durbin_levinson(gamma: &AutocovSequence, max_order: usize) -> Result<PredictorTable> {
    levinson(gamma.as_slice(), max_order)
}

pub(crate) fn levinson(g: &[f64], max_order: usize) -> Result<PredictorTable> {
    if max_order + 1 > g.len() {
        return Err(Error::Parameter(format!(
            "order {max_order} needs {} autocovariances, got {}",
            max_order + 1,
            g.len()
        )));
    }
    let mut coeffs = vec![0.0; row_offset(max_order + 1)];
    let mut sigma2 = Vec::with_capacity(max_order + 1);
    if !(g[0] > 0.0) {
        return Err(Error::NotPositiveDefinite {
            order: 0,
            variance: g[0],
        });
    }
    sigma2.push(g[0]);
    for k in 1..=max_order {
        let prev_var = sigma2[k - 1];
        let (head, tail) = coeffs.split_at_mut(row_offset(k));
        let prev = &head[row_offset(k - 1)..];
        let row = &mut tail[..k];
        let mut num = g[k];
        for (j, &a) in prev.iter().enumerate() {
            num -= a * g[k - 1 - j];
        }
        let reflection = num / prev_var;
        for j in 0..k - 1 {
            row[j] = prev[j] - reflection * prev[k - 2 - j];
        }
        row[k - 1] = reflection;
        let var = prev_var * (1.0 - reflection * reflection);
        if !(var > 0.0) {
            return Err(Error::NotPositiveDefinite {
                order: k,
                variance: var,
            });
        }
        sigma2.push(var);
    }
    PredictorTable::from_flat(coeffs, sigma2, PredictorSource::Population)
}

/// Exact Gaussian sampler for a stationary sequence of length n, using the
/// innovations form of the Levinson recursion:
/// `u_t = Σ_{j<t} a_{t−1,j} u_{t−j} + σ_{t−1} z_t`.
#[derive(Clone, Debug)]
pub struct Simulator {
    table: PredictorTable,
    sd: Vec<f64>,
}

impl Simulator {
    pub fn new(model: &FarimaModel, n: usize) -> Result<Self> {
        Self::from_autocov(&autocov(model, n)?)
    }

    /// Sampler for series of length `gamma.len()`.
    pub fn from_autocov(gamma: &AutocovSequence) -> Result<Self> {
        let table = durbin_levinson(gamma, gamma.len() - 1)?;
        let sd = table.sigma2_by_order().iter().map(|v| v.sqrt()).collect();
        Ok(Simulator { table, sd })
    }

    pub fn len(&self) -> usize {
        self.sd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sd.is_empty()
    }

    /// Population predictor table to order n − 1.
    pub fn table(&self) -> &PredictorTable {
        &self.table
    }

    pub fn into_table(self) -> PredictorTable {
        self.table
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.len();
        let mut u = Vec::with_capacity(n);
        for t in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let row = self.table.row(t);
            let mut pred = 0.0;
            for (a, past) in row.iter().zip(u.iter().rev()) {
                pred += a * past;
            }
            u.push(pred + self.sd[t] * z);
        }
        u
    }
}

/// One realization u₁..u_n, deterministic in `seed`.
pub fn simulate(model: &FarimaModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    let sim = Simulator::new(model, n)?;
    Ok(sim.sample(&mut rng_from_seed(seed)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorRatioReport {
    /// max_i |a_{m,i}/a_i| · ((m − i + 1)/m)^d
    pub max_ratio_scaled: f64,
    /// max_{i ≤ m/2} |a_{m,i}/a_i − 1| · m/i
    pub max_early_dev: f64,
}

/// Compares the order-m finite predictor with the AR(∞) weights.
pub fn predictor_ratio_check(model: &FarimaModel, m: usize) -> Result<PredictorRatioReport> {
    if m < 10 {
        return Err(Error::Parameter("predictor ratio check needs m ≥ 10".into()));
    }
    if !(model.d > 0.0) {
        return Err(Error::NotApplicable("predictor ratios need d > 0".into()));
    }
    let gamma = autocov(model, m + 1)?;
    let table = durbin_levinson(&gamma, m)?;
    let a_inf = ar_weights(model, m)?;
    let finite = table.row(m);
    let mf = m as f64;
    let mut max_ratio_scaled = 0.0f64;
    let mut max_early_dev = 0.0f64;
    for i in 1..=m {
        let ai = a_inf.at(i);
        if ai == 0.0 {
            return Err(Error::NotApplicable(format!("AR weight a_{i} is zero")));
        }
        let ratio = finite[i - 1] / ai;
        let scaled = ratio.abs() * ((mf - i as f64 + 1.0) / mf).powf(model.d);
        max_ratio_scaled = max_ratio_scaled.max(scaled);
        if 2 * i <= m {
            max_early_dev = max_early_dev.max((ratio - 1.0).abs() * mf / i as f64);
        }
    }
    Ok(PredictorRatioReport {
        max_ratio_scaled,
        max_early_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frac_weights_examples() {
        let w = frac_weights(0.0, 4, WeightKind::MaPsi).unwrap();
        assert_eq!(w.values, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = frac_weights(0.25, 2, WeightKind::MaPsi).unwrap();
        assert_eq!(w.values, vec![1.0, 0.25, 0.15625]);
        // (1−B)^{1/4} = 1 − B/4 − 3B²/32 − …, exact in binary.
        let w = frac_weights(0.25, 2, WeightKind::ArA).unwrap();
        assert_eq!(w.values, vec![0.25, 0.09375]);
        assert_eq!(w.at(2), 0.09375);
        assert_eq!(w.truncation_len(), 2);
    }

    #[test]
    fn frac_weights_reject_bad_input() {
        assert!(frac_weights(0.5, 3, WeightKind::MaPsi).is_err());
        assert!(frac_weights(-0.1, 3, WeightKind::MaPsi).is_err());
        assert!(frac_weights(0.2, 0, WeightKind::ArA).is_err());
    }

    #[test]
    fn ma_ar_duality() {
        for &d in &[0.1, 0.25, 0.45] {
            let psi = frac_ma(d, 100);
            let pi = frac_pi(d, 100);
            let id = convolve_truncated(&psi, &pi, 101);
            assert!((id[0] - 1.0).abs() < 1e-12);
            for v in &id[1..] {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arma_weight_examples() {
        let m = FarimaModel::preset("dgp1", 0.25).unwrap();
        assert!((arma_weights(&m, 1).unwrap().values[1] - 0.25).abs() < 1e-15);
        let m = FarimaModel::preset("dgp2", 0.0).unwrap();
        let w = arma_weights(&m, 3).unwrap().values;
        for (a, b) in w.iter().zip([1.0, 0.7, 0.49, 0.343]) {
            assert!((a - b).abs() < 1e-14);
        }
        let m = FarimaModel::preset("dgp3", 0.25).unwrap();
        assert!((arma_weights(&m, 1).unwrap().values[1] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn ar_weights_invert_ma_weights() {
        let m = FarimaModel::preset("dgp4", 0.3).unwrap();
        let psi = arma_weights(&m, 60).unwrap().values;
        let mut g = vec![1.0];
        g.extend(ar_weights(&m, 60).unwrap().values.iter().map(|a| -a));
        let id = convolve_truncated(&psi, &g, 61);
        assert!((id[0] - 1.0).abs() < 1e-12);
        assert!(id[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn presets_encode_polynomials() {
        let m = FarimaModel::preset("dgp4", 0.1).unwrap();
        assert_eq!(m.ar_coeffs, vec![-0.4]);
        assert_eq!(m.ma_coeffs, vec![-0.3]);
        assert!(FarimaModel::preset("dgp9", 0.1).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(FarimaModel::new(vec![1.0], vec![], 0.2, 1.0).is_err());
        assert!(FarimaModel::new(vec![], vec![-1.0], 0.2, 1.0).is_err());
        assert!(FarimaModel::new(vec![], vec![], 0.5, 1.0).is_err());
        assert!(FarimaModel::new(vec![], vec![], 0.2, 0.0).is_err());
        // 1 − 1.5z + 0.56z² = (1 − 0.7z)(1 − 0.8z): stationary
        assert!(FarimaModel::new(vec![1.5, -0.56], vec![], 0.2, 1.0).is_ok());
        // (1 − 0.5z)(1 − 1.25z): root inside the unit disc
        assert!(FarimaModel::new(vec![1.75, -0.625], vec![], 0.2, 1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = FarimaModel::preset("dgp4", 0.25).unwrap();
        let back = FarimaModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let parsed = FarimaModel::from_json(r#"{"ar":[0.7],"ma":[],"d":0.1,"sigma2":2.0}"#).unwrap();
        assert_eq!(parsed.ar_coeffs, vec![0.7]);
        assert_eq!(parsed.sigma2, 2.0);
        assert!(FarimaModel::from_json(r#"{"ar":[1.2],"ma":[],"d":0.1,"sigma2":1.0}"#).is_err());
    }

    #[test]
    fn autocov_examples() {
        let g = autocov(&FarimaModel::fractional(0.0).unwrap(), 3).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 0.0]);
        let g = autocov(&FarimaModel::fractional(0.25).unwrap(), 2).unwrap();
        assert!((g.at(1) / g.at(0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.at(0) - 1.180_340_599_016_096).abs() < 1e-12);
    }

    #[test]
    fn ar1_autocov_is_geometric() {
        let m = FarimaModel::preset("dgp2", 0.0).unwrap();
        let g = autocov(&m, 10).unwrap();
        let g0 = 1.0 / (1.0 - 0.49);
        for k in 0..10 {
            assert!((g.at(k as isize) - g0 * 0.7f64.powi(k)).abs() < 1e-12);
        }
        assert!(g.tail_bound() <= 1e-10 * g0);
    }

    #[test]
    fn ma1_autocov_is_finite_lag() {
        let m = FarimaModel::new(vec![], vec![0.5], 0.0, 2.0).unwrap();
        let g = autocov(&m, 4).unwrap();
        assert!((g.at(0) - 2.5).abs() < 1e-14);
        assert!((g.at(1) - 1.0).abs() < 1e-14);
        assert!(g.at(2).abs() < 1e-14);
    }

    #[test]
    fn durbin_levinson_ar1() {
        let g0 = 1.0 / 0.51;
        let gamma = AutocovSequence::new((0..4).map(|k| g0 * 0.7f64.powi(k)).collect(), 0.0).unwrap();
        let t = durbin_levinson(&gamma, 3).unwrap();
        assert!((t.row(3)[0] - 0.7).abs() < 1e-14);
        assert!(t.row(3)[1].abs() < 1e-14 && t.row(3)[2].abs() < 1e-14);
        assert!((t.sigma2(3) - g0 * 0.51).abs() < 1e-13);
        assert_eq!(t.order(), 3);
    }

    #[test]
    fn durbin_levinson_detects_non_pd() {
        let gamma = AutocovSequence::new(vec![1.0, 1.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            durbin_levinson(&gamma, 2),
            Err(Error::NotPositiveDefinite { order: 1, .. })
        ));
        assert!(durbin_levinson(&gamma, 3).is_err());
    }

    #[test]
    fn predictor_table_rows() {
        let t = PredictorTable::from_rows(
            vec![vec![0.5], vec![0.4, 0.1]],
            vec![1.0, 0.75, 0.7],
            PredictorSource::LeastSquares,
        )
        .unwrap();
        assert_eq!(t.row(2), &[0.4, 0.1]);
        assert_eq!(t.truncated(1).row(1), &[0.5]);
        assert!(PredictorTable::from_rows(vec![vec![0.5, 0.1]], vec![1.0, 0.5], PredictorSource::Population).is_err());
        assert!(PredictorTable::from_rows(vec![vec![0.5]], vec![1.0, 0.0], PredictorSource::Population).is_err());
    }

    #[test]
    fn simulate_is_deterministic() {
        let m = FarimaModel::preset("dgp4", 0.25).unwrap();
        let a = simulate(&m, 200, 7).unwrap();
        let b = simulate(&m, 200, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate(&m, 200, 8).unwrap());
    }

    #[test]
    fn predictor_ratio_requires_memory() {
        let m = FarimaModel::fractional(0.0).unwrap();
        assert!(matches!(predictor_ratio_check(&m, 20), Err(Error::NotApplicable(_))));
        let m = FarimaModel::fractional(0.25).unwrap();
        assert!(predictor_ratio_check(&m, 5).is_err());
    }
}
