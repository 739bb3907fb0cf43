//! Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage
//! error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::banding::{sar_defaults, select_k, SarConfig};
use crate::chol_inverse::build_estimated_inverse;
use crate::error::{Error, Result};
use crate::experiments::{run_all, table_configs, ExperimentConfig, Scale};
use crate::farima::{autocov, simulate, FarimaModel};
use crate::regression::{detrend, detrended_inverse_from_residuals, fgls, DesignMatrix};

#[derive(Parser, Debug)]
#[command(name = "longmem", version, about = "Banded Cholesky inverse autocovariance estimation for long-memory series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// dgp1..dgp4, or "custom" with --ar/--ma.
    #[arg(long, default_value = "dgp1")]
    model: String,
    #[arg(long)]
    d: f64,
    /// AR coefficients φ₁,…,φ_p of φ(B) = 1 − φ₁B − …
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ar: Vec<f64>,
    /// MA coefficients θ₁,…,θ_q of θ(B) = 1 + θ₁B + …
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ma: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

impl ModelArgs {
    fn model(&self) -> Result<FarimaModel> {
        if self.model == "custom" {
            FarimaModel::new(self.ar.clone(), self.ma.clone(), self.d, self.sigma2)
        } else {
            if !self.ar.is_empty() || !self.ma.is_empty() {
                return Err(Error::Parameter("--ar/--ma need --model custom".into()));
            }
            let m = FarimaModel::preset(&self.model, self.d)?;
            FarimaModel::new(m.ar_coeffs, m.ma_coeffs, self.d, self.sigma2)
        }
    }
}

#[derive(Args, Debug)]
struct SarArgs {
    /// Block length b (default ⌊n/5⌋).
    #[arg(long)]
    block: Option<usize>,
    /// Smallest candidate band L (default ⌊ln n⌋).
    #[arg(long)]
    lower: Option<usize>,
    /// Exclusive upper candidate band H (default ⌈n^0.4⌉).
    #[arg(long)]
    upper: Option<usize>,
}

impl SarArgs {
    fn config(&self, n: usize) -> Result<SarConfig> {
        if self.block.is_none() && self.lower.is_none() && self.upper.is_none() {
            return sar_defaults(n);
        }
        let nf = n as f64;
        let cfg = SarConfig::new(
            self.block.unwrap_or(n / 5),
            self.lower.unwrap_or(nf.ln().floor() as usize),
            self.upper.unwrap_or(nf.powf(0.4).ceil() as usize),
        );
        cfg.validate(n)?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw an exact Gaussian FARIMA sample path.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Autocovariances γ(0..n−1) of a FARIMA model.
    Autocov {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Banded Cholesky inverse estimate from a series.
    Estimate {
        /// Headerless single-column CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Band K; chosen by SAR when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        sar: SarArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Choose the band K by subsampling and risk minimization.
    SelectK {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also print the risk curve.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        sar: SarArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Feasible GLS with a polynomial design.
    Fgls {
        /// Response series, headerless single-column CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// poly:p=<p> for intercept through t^{p−1}.
        #[arg(long, default_value = "poly:p=1")]
        design: String,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Reproduce a simulation table.
    Experiment {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), required_unless_present = "config")]
        table: Option<u8>,
        /// Grid file (TOML, or JSON by .json extension); replaces --table.
        #[arg(long, conflicts_with = "table")]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_series(&text)
}

/// One value per line; blank lines are skipped.
pub fn parse_series(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let field = l.split(',').next().unwrap_or("").trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parameter(format!("line {}: '{}' is not a finite number", i + 1, l.trim())))
        })
        .collect()
}

fn emit(output: &Output, csv: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<()> {
    let text = match output.format {
        Format::Csv => csv(),
        Format::Json => json(),
    };
    match &output.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_of<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { model, n, seed, output } => {
            let u = simulate(&model.model()?, n, seed)?;
            emit(
                &output,
                || u.iter().map(|v| format!("{v}\n")).collect(),
                || json_of(&serde_json::json!({ "series": u })),
            )
        }
        Command::Autocov { model, n, output } => {
            let g = autocov(&model.model()?, n)?;
            emit(
                &output,
                || {
                    let mut s = String::from("lag,gamma\n");
                    for (k, v) in g.as_slice().iter().enumerate() {
                        let _ = writeln!(s, "{k},{v}");
                    }
                    s
                },
                || json_of(&serde_json::json!({ "gamma": g.as_slice(), "tail_bound": g.tail_bound() })),
            )
        }
        Command::Estimate { input, k, sar, output } => {
            let u = read_series(&input)?;
            let k = match k {
                Some(k) => k,
                None => select_k(&u, &sar.config(u.len())?)?.chosen_k,
            };
            let inv = build_estimated_inverse(&u, k)?;
            emit(
                &output,
                || {
                    let mut s = String::from("order,sigma2,coeffs\n");
                    for order in 0..=k {
                        let coeffs: Vec<String> = inv.table().row(order).iter().map(|a| a.to_string()).collect();
                        let _ = writeln!(s, "{order},{},{}", inv.table().sigma2(order), coeffs.join(" "));
                    }
                    s
                },
                || {
                    let mut s = inv.to_json();
                    s.push('\n');
                    s
                },
            )
        }
        Command::SelectK { input, trace, sar, output } => {
            let u = read_series(&input)?;
            let t = select_k(&u, &sar.config(u.len())?)?;
            emit(
                &output,
                || {
                    if trace {
                        let mut s = String::from("k,risk\n");
                        for (k, r) in &t.risks {
                            let _ = writeln!(s, "{k},{r:.6}");
                        }
                        s
                    } else {
                        format!("{}\n", t.chosen_k)
                    }
                },
                || json_of(&t),
            )
        }
        Command::Fgls { input, design, k, output } => {
            let y = read_series(&input)?;
            let x = DesignMatrix::parse_poly_spec(&design, y.len())?;
            let resid = detrend(&y, &x)?.residuals;
            let k = match k {
                Some(k) => k,
                None => select_k(&resid, &sar_defaults(y.len())?)?.chosen_k,
            };
            let inv = detrended_inverse_from_residuals(&resid, k)?;
            let fit = fgls(&y, &x, &inv)?;
            emit(
                &output,
                || {
                    let mut s = String::from("term,beta\n");
                    for (label, b) in x.labels().iter().zip(&fit.beta_hat) {
                        let _ = writeln!(s, "{label},{b}");
                    }
                    s
                },
                || {
                    json_of(&serde_json::json!({
                        "band": k,
                        "terms": x.labels(),
                        "beta_hat": fit.beta_hat,
                        "condition_number": fit.condition_number,
                    }))
                },
            )
        }
        Command::Experiment {
            table,
            config,
            reps,
            scale,
            seed,
            output,
        } => {
            let cfgs = match (table, config) {
                (_, Some(path)) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                    let mut cfg = if path.extension().is_some_and(|e| e == "json") {
                        ExperimentConfig::from_json(&text)?
                    } else {
                        ExperimentConfig::from_toml(&text)?
                    };
                    if let Some(r) = reps {
                        cfg.replications = r;
                    }
                    if let Some(s) = seed {
                        cfg.master_seed = s;
                    }
                    cfg.validate()?;
                    vec![cfg]
                }
                (Some(t), None) => {
                    let scale = match scale {
                        ScaleArg::Desk => Scale::Desk,
                        ScaleArg::Full => Scale::Full,
                    };
                    table_configs(t, scale, seed.unwrap_or(42), reps)?
                }
                (None, None) => unreachable!("clap requires --table or --config"),
            };
            let out = run_all(&cfgs)?;
            emit(&output, || out.to_csv(), || out.to_json())
        }
    }
}
