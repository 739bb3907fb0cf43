//! Monte Carlo reproduction of the simulation tables.
//!
//! Every cell builds its fixed state (true autocovariances, the exact
//! inverse, SAR bounds) once, then runs replications in parallel. Results
//! are gathered in replication order before any reduction, so output bytes
//! do not depend on the thread count.

use std::fmt::Write as _;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::banding::{estimation_loss, perturbed_band, sar_defaults, select_k, SarConfig};
use crate::chol_inverse::{build_estimated_inverse, fit_all_orders, BandedCholInverse};
use crate::error::{Error, Result};
use crate::farima::{autocov, FarimaModel, Simulator};
use crate::linalg::PowerIteration;
use crate::regression::{detrend, detrended_inverse_from_residuals, mask_powers, model_select, powers_mask, DesignMatrix};
use crate::rng::{replication_seed, rng_from_seed};

/// Relative tolerance of the spectral-norm evaluations in experiments.
pub const LOSS_TOL: f64 = 1e-6;
/// Per-cell share of failed replications that is tolerated and dropped.
pub const MAX_FAILURE_SHARE: f64 = 0.02;
pub const THREADS_ENV: &str = "LONGMEM_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpSpec {
    /// `dgp1` … `dgp4`.
    Preset(String),
    Custom {
        name: String,
        #[serde(default)]
        ar: Vec<f64>,
        #[serde(default)]
        ma: Vec<f64>,
    },
}

impl DgpSpec {
    pub fn preset(name: &str) -> Self {
        DgpSpec::Preset(name.to_string())
    }

    pub fn label(&self) -> &str {
        match self {
            DgpSpec::Preset(name) => name,
            DgpSpec::Custom { name, .. } => name,
        }
    }

    pub fn model(&self, d: f64) -> Result<FarimaModel> {
        match self {
            DgpSpec::Preset(name) => FarimaModel::preset(name, d),
            DgpSpec::Custom { ar, ma, .. } => FarimaModel::new(ar.clone(), ma.clone(), d, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    L2Loss,
    L2OverOp,
    SfSensitivity,
    Table3Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionModel {
    /// y = 1 + u
    Model1,
    /// y = 1 + 2t + u
    Model2,
    /// y = 5 + t + 2t⁴ + u
    Model3,
}

impl RegressionModel {
    pub fn label(self) -> &'static str {
        match self {
            RegressionModel::Model1 => "model1",
            RegressionModel::Model2 => "model2",
            RegressionModel::Model3 => "model3",
        }
    }

    /// Powers of t in the true mean and their coefficients.
    pub fn terms(self) -> (&'static [u32], &'static [f64]) {
        match self {
            RegressionModel::Model1 => (&[0], &[1.0]),
            RegressionModel::Model2 => (&[0, 1], &[1.0, 2.0]),
            RegressionModel::Model3 => (&[0, 1, 4], &[5.0, 1.0, 2.0]),
        }
    }

    pub fn mean(self, n: usize) -> Vec<f64> {
        let (powers, coefs) = self.terms();
        (1..=n)
            .map(|t| {
                let t = t as f64;
                powers.iter().zip(coefs).map(|(&k, c)| c * t.powi(k as i32)).sum()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Known,
    #[serde(rename = "Ln_select", alias = "ln_select")]
    LnSelect,
    Both,
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn default_seed() -> u64 {
    42
}

fn default_cs() -> Vec<f64> {
    vec![0.8, 1.2]
}

fn default_selection() -> Selection {
    Selection::Both
}

fn default_tol() -> f64 {
    LOSS_TOL
}

/// A grid of experiment cells. `dgp` and `regression_model` accept a single
/// value or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "one_or_many", default)]
    pub dgp: Vec<DgpSpec>,
    pub d_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    pub statistic: Statistic,
    #[serde(deserialize_with = "one_or_many", default)]
    pub regression_model: Vec<RegressionModel>,
    #[serde(default = "default_selection")]
    pub selection: Selection,
    /// Perturbation factors for SF(c).
    #[serde(default = "default_cs")]
    pub c_list: Vec<f64>,
    /// Fixed band instead of the SAR choice.
    #[serde(default)]
    pub band: Option<usize>,
    #[serde(default = "default_tol")]
    pub loss_tol: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Parameter("replications must be at least 1".into()));
        }
        if let Some(d) = self.d_list.iter().find(|d| !(**d >= 0.0 && **d < 0.5)) {
            return Err(Error::Parameter(format!("d = {d} outside [0, 1/2)")));
        }
        if self.d_list.is_empty() || self.n_list.is_empty() {
            return Err(Error::Parameter("d_list and n_list must be nonempty".into()));
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 50) {
            return Err(Error::Parameter(format!("n = {n} below the SAR minimum of 50")));
        }
        if let Some(c) = self.c_list.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Parameter(format!("perturbation factor {c} must be positive")));
        }
        if !(self.loss_tol > 0.0) {
            return Err(Error::Parameter("loss_tol must be positive".into()));
        }
        match self.statistic {
            Statistic::Table3Regression => {
                if self.regression_model.is_empty() {
                    return Err(Error::Parameter("regression_model is required for table3_regression".into()));
                }
            }
            _ => {
                if self.dgp.is_empty() {
                    return Err(Error::Parameter("dgp is required".into()));
                }
                for spec in &self.dgp {
                    spec.model(self.d_list[0])?;
                }
            }
        }
        if self.statistic == Statistic::L2OverOp {
            if let Some(d) = self.d_list.iter().find(|&&d| d == 0.0) {
                return Err(Error::Parameter(format!("OP(d) needs d > 0, got {d}")));
            }
        }
        Ok(())
    }

    fn power(&self) -> PowerIteration {
        PowerIteration::default().with_tol(self.loss_tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

const ALL_DGPS: [&str; 4] = ["dgp1", "dgp2", "dgp3", "dgp4"];

fn dgps(names: &[&str]) -> Vec<DgpSpec> {
    names.iter().map(|n| DgpSpec::preset(n)).collect()
}

/// The grids behind each table. Desk-scale Table 1/2 grids are a list of
/// configurations because DGP 1 runs to n = 1000 while DGPs 2–4 stop at 500.
pub fn table_configs(table: u8, scale: Scale, master_seed: u64, reps: Option<usize>) -> Result<Vec<ExperimentConfig>> {
    let base = |statistic, dgp: Vec<DgpSpec>, d_list: Vec<f64>, n_list: Vec<usize>, default_reps| ExperimentConfig {
        dgp,
        d_list,
        n_list,
        replications: reps.unwrap_or(default_reps),
        master_seed,
        statistic,
        regression_model: Vec::new(),
        selection: Selection::Both,
        c_list: default_cs(),
        band: None,
        loss_tol: LOSS_TOL,
    };
    let full_n = vec![250, 500, 1000, 2000, 4000];
    let cfgs = match (table, scale) {
        (1 | 2, Scale::Desk) => {
            let stat = if table == 1 { Statistic::L2Loss } else { Statistic::L2OverOp };
            vec![
                base(stat, dgps(&["dgp1"]), vec![0.25, 0.4], vec![250, 500, 1000], 250),
                base(stat, dgps(&["dgp2", "dgp3", "dgp4"]), vec![0.25, 0.4], vec![250, 500], 250),
            ]
        }
        (1 | 2, Scale::Full) => {
            let stat = if table == 1 { Statistic::L2Loss } else { Statistic::L2OverOp };
            vec![base(stat, dgps(&ALL_DGPS), vec![0.01, 0.1, 0.25, 0.4, 0.49], full_n, 1000)]
        }
        (3, scale) => {
            let (n_list, r) = match scale {
                Scale::Desk => (vec![250, 500, 1000], 250),
                Scale::Full => (full_n, 1000),
            };
            let mut cfg = base(Statistic::Table3Regression, dgps(&["dgp1"]), vec![0.1, 0.25, 0.45], n_list, r);
            cfg.regression_model = vec![RegressionModel::Model1, RegressionModel::Model2, RegressionModel::Model3];
            vec![cfg]
        }
        (4, scale) => {
            let (n_list, r) = match scale {
                Scale::Desk => (vec![250, 500, 1000], 250),
                Scale::Full => (full_n, 1000),
            };
            vec![base(Statistic::SfSensitivity, dgps(&ALL_DGPS), vec![0.1, 0.25, 0.45], n_list, r)]
        }
        (t, _) => return Err(Error::Parameter(format!("no table {t}; expected 1, 2, 3 or 4"))),
    };
    for cfg in &cfgs {
        cfg.validate()?;
    }
    Ok(cfgs)
}

/// OP(d) with the constant fixed at 0.05 and the branch cut at 0.225.
pub fn op_rate(d: f64, n: usize) -> Result<f64> {
    if !(d > 0.0 && d < 0.5) {
        return Err(Error::Parameter(format!("OP(d) needs 0 < d < 1/2, got {d}")));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("OP(d) needs n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    Ok(if d <= 0.225 {
        0.05 * nf.powf(-d / (4.0 + 2.0 * d)) * ln_n.powf((4.0 + d) / (4.0 + 2.0 * d))
    } else {
        0.05 * nf.powf(-d * (1.0 - 2.0 * d) / (2.0 + 2.0 * d)) * ln_n.powf((2.0 + d) / (2.0 + 2.0 * d))
    })
}

/// Sample mean and its standard error sd/√m (sd with divisor m − 1).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Quantile by linear interpolation between order statistics
/// (h = (m − 1)p), on sorted input.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 0 {
        return f64::NAN;
    }
    let h = (m - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let threads: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&t| t >= 1)
                .ok_or_else(|| Error::Parameter(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Runs `reps` replications in parallel and keeps the successes in
/// replication order, dropping failures when they are rare enough.
fn replicate<T: Send>(label: &str, reps: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..reps).into_par_iter().map(&f).collect();
    let mut ok = Vec::with_capacity(reps);
    let mut failures = 0usize;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                warn!("{label}: replication {r} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 >= MAX_FAILURE_SHARE * reps as f64 && failures > 0 {
        return Err(Error::Degenerate(format!("cell {label}: {failures} of {reps} replications failed")));
    }
    Ok(ok)
}

/// Fixed per-cell state: the simulator and the exact Ω⁻¹ sharing one
/// population predictor table.
struct CellTruth {
    sim: Simulator,
    truth: BandedCholInverse,
    sar: SarConfig,
}

impl CellTruth {
    fn new(model: &FarimaModel, n: usize) -> Result<Self> {
        let gamma = autocov(model, n)?;
        let sim = Simulator::from_autocov(&gamma)?;
        let truth = BandedCholInverse::new(n, n - 1, Arc::new(sim.table().clone()))?;
        Ok(CellTruth {
            sim,
            truth,
            sar: sar_defaults(n)?,
        })
    }

    fn band(&self, u: &[f64], fixed: Option<usize>) -> Result<usize> {
        match fixed {
            Some(k) => Ok(k),
            None => Ok(select_k(u, &self.sar)?.chosen_k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct L2Row {
    pub dgp: String,
    pub d: f64,
    pub n: usize,
    pub l2_mean: f64,
    pub l2_se: f64,
    pub reps: usize,
    /// Present for l2_over_op.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op: Option<f64>,
}

impl L2Row {
    pub fn ratio(&self) -> Option<f64> {
        self.op.map(|op| self.l2_mean / op)
    }
}

fn l2_label(dgp: &str, d: f64, n: usize, band: Option<usize>) -> String {
    match band {
        Some(k) => format!("l2|{dgp}|{d}|{n}|K={k}"),
        None => format!("l2|{dgp}|{d}|{n}"),
    }
}

/// Mean spectral loss ‖Ω̂⁻¹(K) − Ω⁻¹‖₂ per (dgp, d, n) cell.
pub fn run_l2_table(cfg: &ExperimentConfig) -> Result<Vec<L2Row>> {
    if !matches!(cfg.statistic, Statistic::L2Loss | Statistic::L2OverOp) {
        return Err(Error::Parameter("run_l2_table needs statistic l2_loss or l2_over_op".into()));
    }
    cfg.validate()?;
    let power = cfg.power();
    with_threads(|| {
        let mut rows = Vec::new();
        for spec in &cfg.dgp {
            for &d in &cfg.d_list {
                let model = spec.model(d)?;
                for &n in &cfg.n_list {
                    let label = l2_label(spec.label(), d, n, cfg.band);
                    info!("{label}: {} replications", cfg.replications);
                    let cell = CellTruth::new(&model, n)?;
                    let losses = replicate(&label, cfg.replications, |r| {
                        let mut rng = rng_from_seed(replication_seed(cfg.master_seed, &label, r as u64));
                        let u = cell.sim.sample(&mut rng);
                        let k = cell.band(&u, cfg.band)?;
                        let est = build_estimated_inverse(&u, k)?;
                        estimation_loss(&est, &cell.truth, &power)
                    })?;
                    let (l2_mean, l2_se) = mean_se(&losses);
                    let op = match cfg.statistic {
                        Statistic::L2OverOp => Some(op_rate(d, n)?),
                        _ => None,
                    };
                    rows.push(L2Row {
                        dgp: spec.label().to_string(),
                        d,
                        n,
                        l2_mean,
                        l2_se,
                        reps: losses.len(),
                        op,
                    });
                }
            }
        }
        Ok(rows)
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SfCell {
    pub dgp: String,
    pub c: f64,
    pub d: f64,
    pub n: usize,
    pub sf_mean: f64,
    pub sf_se: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Number of (c, d, dgp) cells summarized.
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SfTable {
    pub cells: Vec<SfCell>,
    pub summary: Vec<FiveNumber>,
}

/// Replication-averaged SF(c) per (c, d, dgp, n) and its five-number
/// summary across the grid for each n. All factors in `c_list` share one
/// SAR choice and one base loss per replication.
pub fn run_sf_table(cfg: &ExperimentConfig) -> Result<SfTable> {
    if cfg.statistic != Statistic::SfSensitivity {
        return Err(Error::Parameter("run_sf_table needs statistic sf_sensitivity".into()));
    }
    cfg.validate()?;
    let power = cfg.power();
    let cs = &cfg.c_list;
    with_threads(|| {
        let mut cells = Vec::new();
        for &n in &cfg.n_list {
            for spec in &cfg.dgp {
                for &d in &cfg.d_list {
                    let model = spec.model(d)?;
                    let label = format!("sf|{}|{d}|{n}", spec.label());
                    info!("{label}: {} replications", cfg.replications);
                    let cell = CellTruth::new(&model, n)?;
                    let per_rep = replicate(&label, cfg.replications, |r| {
                        let mut rng = rng_from_seed(replication_seed(cfg.master_seed, &label, r as u64));
                        let u = cell.sim.sample(&mut rng);
                        let k = cell.band(&u, cfg.band)?;
                        let bands: Vec<usize> = cs.iter().map(|&c| perturbed_band(c, k, n)).collect();
                        let max_band = bands.iter().copied().fold(k, usize::max);
                        let table = Arc::new(fit_all_orders(&u, max_band)?);
                        let base = BandedCholInverse::new(n, k, Arc::clone(&table))?;
                        let base_loss = estimation_loss(&base, &cell.truth, &power)?;
                        if base_loss == 0.0 {
                            return Err(Error::Degenerate("estimate matches the true inverse exactly".into()));
                        }
                        bands
                            .iter()
                            .map(|&ck| {
                                let loss = if ck == k {
                                    base_loss
                                } else {
                                    estimation_loss(base.with_band(ck)?, &cell.truth, &power)?
                                };
                                Ok((loss - base_loss) / base_loss)
                            })
                            .collect::<Result<Vec<f64>>>()
                    })?;
                    for (i, &c) in cs.iter().enumerate() {
                        let sf: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
                        let (sf_mean, sf_se) = mean_se(&sf);
                        cells.push(SfCell {
                            dgp: spec.label().to_string(),
                            c,
                            d,
                            n,
                            sf_mean,
                            sf_se,
                            reps: sf.len(),
                        });
                    }
                }
            }
        }
        let summary = cfg
            .n_list
            .iter()
            .map(|&n| {
                let mut v: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.sf_mean).collect();
                v.sort_by(f64::total_cmp);
                FiveNumber {
                    n,
                    min: v[0],
                    q1: quantile_sorted(&v, 0.25),
                    median: quantile_sorted(&v, 0.5),
                    q3: quantile_sorted(&v, 0.75),
                    max: v[v.len() - 1],
                    cells: v.len(),
                }
            })
            .collect();
        Ok(SfTable { cells, summary })
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionRow {
    pub model: String,
    pub d: f64,
    pub n: usize,
    /// l̃₂ with the true design.
    pub l2_known: Option<f64>,
    pub l2_known_se: Option<f64>,
    /// l̃₂ with the design chosen by L_n(M).
    pub l2_selected: Option<f64>,
    pub l2_selected_se: Option<f64>,
    /// Share of replications in which L_n(M) picked the true design.
    pub q_hat: Option<f64>,
    pub reps: usize,
}

/// l̃₂ per (model, d, n) from DGP 1 errors, with the true design and/or
/// the L_n(M)-selected one, plus the correct-selection frequency.
pub fn run_regression_table(cfg: &ExperimentConfig) -> Result<Vec<RegressionRow>> {
    if cfg.statistic != Statistic::Table3Regression {
        return Err(Error::Parameter("run_regression_table needs statistic table3_regression".into()));
    }
    cfg.validate()?;
    let power = cfg.power();
    let known = matches!(cfg.selection, Selection::Known | Selection::Both);
    let selected = matches!(cfg.selection, Selection::LnSelect | Selection::Both);
    with_threads(|| {
        let mut rows = Vec::new();
        for &model in &cfg.regression_model {
            let (powers, _) = model.terms();
            let true_mask = powers_mask(powers);
            for &d in &cfg.d_list {
                let farima = FarimaModel::fractional(d)?;
                for &n in &cfg.n_list {
                    let label = match cfg.band {
                        Some(k) => format!("reg|{}|{d}|{n}|K={k}", model.label()),
                        None => format!("reg|{}|{d}|{n}", model.label()),
                    };
                    info!("{label}: {} replications", cfg.replications);
                    let cell = CellTruth::new(&farima, n)?;
                    let mean = model.mean(n);
                    // (I−M)y = (I−M)mean + (I−M)u; the first term is zero when the
                    // design spans the mean.
                    let loss_for = |u: &[f64], mask: u8| -> Result<f64> {
                        let x = DesignMatrix::polynomial(n, &mask_powers(mask));
                        let mut resid = detrend(u, &x)?.residuals;
                        if mask & true_mask != true_mask {
                            let trend = detrend(&mean, &x)?.residuals;
                            resid.iter_mut().zip(&trend).for_each(|(r, t)| *r += t);
                        }
                        let k = cell.band(&resid, cfg.band)?;
                        let inv = detrended_inverse_from_residuals(&resid, k)?;
                        estimation_loss(&inv, &cell.truth, &power)
                    };
                    let per_rep = replicate(&label, cfg.replications, |r| {
                        let mut rng = rng_from_seed(replication_seed(cfg.master_seed, &label, r as u64));
                        let u = cell.sim.sample(&mut rng);
                        let y: Vec<f64> = mean.iter().zip(&u).map(|(m, e)| m + e).collect();
                        let known_loss = if known { Some(loss_for(&u, true_mask)?) } else { None };
                        let (sel_loss, hit) = if selected {
                            let choice = model_select(&y)?;
                            let hit = choice.mask == true_mask;
                            let loss = match known_loss {
                                Some(l) if hit => l,
                                _ => loss_for(&u, choice.mask)?,
                            };
                            (Some(loss), Some(hit))
                        } else {
                            (None, None)
                        };
                        Ok((known_loss, sel_loss, hit))
                    })?;
                    let stats = |xs: Vec<f64>| if xs.is_empty() { (None, None) } else {
                        let (m, s) = mean_se(&xs);
                        (Some(m), Some(s))
                    };
                    let (l2_known, l2_known_se) = stats(per_rep.iter().filter_map(|r| r.0).collect());
                    let (l2_selected, l2_selected_se) = stats(per_rep.iter().filter_map(|r| r.1).collect());
                    let q_hat = selected
                        .then(|| per_rep.iter().filter(|r| r.2 == Some(true)).count() as f64 / per_rep.len() as f64);
                    rows.push(RegressionRow {
                        model: model.label().to_string(),
                        d,
                        n,
                        l2_known,
                        l2_known_se,
                        l2_selected,
                        l2_selected_se,
                        q_hat,
                        reps: per_rep.len(),
                    });
                }
            }
        }
        Ok(rows)
    })?
}

/// Output of one experiment run, in any of the table shapes.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ExperimentOutput {
    L2(Vec<L2Row>),
    Sf(SfTable),
    Regression(Vec<RegressionRow>),
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    Ok(match cfg.statistic {
        Statistic::L2Loss | Statistic::L2OverOp => ExperimentOutput::L2(run_l2_table(cfg)?),
        Statistic::SfSensitivity => ExperimentOutput::Sf(run_sf_table(cfg)?),
        Statistic::Table3Regression => ExperimentOutput::Regression(run_regression_table(cfg)?),
    })
}

/// Runs several configurations of the same statistic and concatenates
/// their rows.
pub fn run_all(cfgs: &[ExperimentConfig]) -> Result<ExperimentOutput> {
    let mut out: Option<ExperimentOutput> = None;
    for cfg in cfgs {
        let next = run(cfg)?;
        out = Some(match (out, next) {
            (None, next) => next,
            (Some(ExperimentOutput::L2(mut a)), ExperimentOutput::L2(b)) => {
                a.extend(b);
                ExperimentOutput::L2(a)
            }
            (Some(ExperimentOutput::Sf(mut a)), ExperimentOutput::Sf(b)) => {
                a.cells.extend(b.cells);
                a.summary.extend(b.summary);
                ExperimentOutput::Sf(a)
            }
            (Some(ExperimentOutput::Regression(mut a)), ExperimentOutput::Regression(b)) => {
                a.extend(b);
                ExperimentOutput::Regression(a)
            }
            _ => return Err(Error::Parameter("configurations mix different statistics".into())),
        });
    }
    out.ok_or_else(|| Error::Parameter("no configurations to run".into()))
}

fn fx(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fx).unwrap_or_default()
}

impl ExperimentOutput {
    /// CSV with a fixed column order and six-decimal fixed point. SF output
    /// is the per-n summary; the per-cell values are in the JSON form.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self {
            ExperimentOutput::L2(rows) => {
                let with_op = rows.iter().any(|r| r.op.is_some());
                if with_op {
                    s.push_str("dgp,d,n,l2_mean,l2_se,op,ratio,ratio_se,reps\n");
                } else {
                    s.push_str("dgp,d,n,l2_mean,l2_se,reps\n");
                }
                for r in rows {
                    match r.op {
                        Some(op) if with_op => {
                            let _ = writeln!(
                                s,
                                "{},{},{},{},{},{},{},{},{}",
                                r.dgp,
                                fx(r.d),
                                r.n,
                                fx(r.l2_mean),
                                fx(r.l2_se),
                                fx(op),
                                fx(r.l2_mean / op),
                                fx(r.l2_se / op),
                                r.reps
                            );
                        }
                        _ => {
                            let _ = writeln!(s, "{},{},{},{},{},{}", r.dgp, fx(r.d), r.n, fx(r.l2_mean), fx(r.l2_se), r.reps);
                        }
                    }
                }
            }
            ExperimentOutput::Sf(t) => {
                s.push_str("n,min,q1,median,q3,max,cells\n");
                for r in &t.summary {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        r.n,
                        fx(r.min),
                        fx(r.q1),
                        fx(r.median),
                        fx(r.q3),
                        fx(r.max),
                        r.cells
                    );
                }
            }
            ExperimentOutput::Regression(rows) => {
                s.push_str("model,d,n,l2_known,l2_known_se,l2_selected,l2_selected_se,q_hat,reps\n");
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{}",
                        r.model,
                        fx(r.d),
                        r.n,
                        opt(r.l2_known),
                        opt(r.l2_known_se),
                        opt(r.l2_selected),
                        opt(r.l2_selected_se),
                        opt(r.q_hat),
                        r.reps
                    );
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("rows serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_rate_branches() {
        let n = 1000usize;
        let nf = 1000f64;
        let want = 0.05 * nf.powf(-0.1 / 4.2) * nf.ln().powf(4.1 / 4.2);
        assert!((op_rate(0.1, n).unwrap() - want).abs() < 1e-15);
        let e10 = 10f64.exp();
        let got = op_rate(0.3, e10.round() as usize).unwrap();
        let want = 0.05 * (-10.0f64 * 0.3 * 0.4 / 2.6).exp() * 10f64.powf(2.3 / 2.6);
        assert!((got - want).abs() < 1e-5 * want);
        // the cut sits at 0.225 exactly
        let a = op_rate(0.225, n).unwrap();
        let first = 0.05 * nf.powf(-0.225 / 4.45) * nf.ln().powf(4.225 / 4.45);
        assert!((a - first).abs() < 1e-15);
        assert!(op_rate(0.0, n).is_err());
        assert!(op_rate(0.5, n).is_err());
    }

    #[test]
    fn mean_se_and_quantiles() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
        let v = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&[1.0, 2.0], 0.25), 1.25);
    }

    #[test]
    fn config_parses_toml_and_json() {
        let toml_text = r#"
dgp = "dgp2"
d_list = [0.25]
n_list = [250]
replications = 3
statistic = "l2_loss"
"#;
        let cfg = ExperimentConfig::from_toml(toml_text).unwrap();
        assert_eq!(cfg.dgp, vec![DgpSpec::preset("dgp2")]);
        assert_eq!(cfg.master_seed, 42);
        let json = r#"{"dgp":["dgp1",{"name":"ar5","ar":[0.5]}],"d_list":[0.1],"n_list":[100],
            "replications":2,"statistic":"table3_regression","regression_model":"model3","selection":"Ln_select"}"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.regression_model, vec![RegressionModel::Model3]);
        assert_eq!(cfg.selection, Selection::LnSelect);
        assert_eq!(cfg.dgp[1].label(), "ar5");
        assert!(ExperimentConfig::from_toml(&toml_text.replace("replications = 3", "replications = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&toml_text.replace("[0.25]", "[0.5]")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{toml_text}\nbogus = 1")).is_err());
    }

    fn small_cfg(statistic: Statistic) -> ExperimentConfig {
        ExperimentConfig {
            dgp: vec![DgpSpec::preset("dgp1")],
            d_list: vec![0.25],
            n_list: vec![100],
            replications: 4,
            master_seed: 5,
            statistic,
            regression_model: vec![RegressionModel::Model1],
            selection: Selection::Both,
            c_list: vec![1.0, 1.5],
            band: None,
            loss_tol: LOSS_TOL,
        }
    }

    #[test]
    fn l2_rows_are_deterministic() {
        let cfg = small_cfg(Statistic::L2Loss);
        let a = run(&cfg).unwrap().to_csv();
        let b = run(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with("dgp,d,n,l2_mean,l2_se,reps\ndgp1,0.250000,100,"));
    }

    #[test]
    fn sf_at_unit_factor_is_zero() {
        let t = run_sf_table(&small_cfg(Statistic::SfSensitivity)).unwrap();
        assert_eq!(t.cells.len(), 2);
        assert_eq!(t.cells[0].sf_mean, 0.0);
        assert_eq!(t.summary[0].cells, 2);
    }

    #[test]
    fn regression_rows_have_both_pipelines() {
        let rows = run_regression_table(&small_cfg(Statistic::Table3Regression)).unwrap();
        let r = &rows[0];
        assert_eq!(r.reps, 4);
        assert!(r.l2_known.unwrap() > 0.0 && r.l2_selected.unwrap() > 0.0);
        let q = r.q_hat.unwrap();
        assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn model_means() {
        assert_eq!(RegressionModel::Model3.mean(2), vec![5.0 + 1.0 + 2.0, 5.0 + 2.0 + 32.0]);
        assert_eq!(RegressionModel::Model2.mean(1), vec![3.0]);
    }

    #[test]
    fn table_grids() {
        let cfgs = table_configs(1, Scale::Desk, 1, None).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[0].replications, 250);
        assert!(table_configs(5, Scale::Desk, 1, None).is_err());
        let full = table_configs(4, Scale::Full, 1, Some(10)).unwrap();
        assert_eq!(full[0].n_list.len(), 5);
        assert_eq!(full[0].replications, 10);
    }
}
