//! Command-line front end: `estimate`, `select`, `simulate` and `oracle`.
//!
//! Without `--input`, commands run on the bundled 107 Old Faithful eruption lengths.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bandwidth::{
    closed_form::{self, Polynomial},
    theoretical_from_functionals, SelectorMethod, SelectorSpec,
};
use crate::density::{evaluate_grid, DensityEstimate, EvaluationGrid, Mode, Sample};
use crate::divergence::BetaParam;
use crate::error::{Error, Result};
use crate::kernels::{gaussian_kernel, Kernel};
use crate::quadrature::gaussian_functional_oracle;
use crate::simulate::{
    default_cells, default_selectors, run_simulation, Cell, NormalMixture, SelectorKind, SimulationConfig, TrialOutcome,
};

const FAITHFUL_CSV: &str = include_str!("../data/faithful107.csv");

/// Tolerance for flagging a printed closed form as agreeing with quadrature.
pub const ORACLE_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "betakde", version, about = "Bias-reduced kernel density estimation and bandwidth selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub opts: SharedOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the estimated density on a grid as TSV.
    Estimate,
    /// Select a bandwidth and write a JSON report.
    Select,
    /// Run the Monte Carlo study and write summary tables into the output directory.
    Simulate,
    /// Compare Gaussian functionals by quadrature with their printed closed forms.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Nr,
    Cv,
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    BiasReduced,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::BiasReduced => Mode::BiasReduced,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SharedOpts {
    /// CSV with one value per row and an optional header.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,

    /// Output file (directory for `simulate`); stdout when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 2.0)]
    pub beta: f64,

    #[arg(long, global = true, value_enum, default_value_t = SelectorArg::Nr)]
    pub selector: SelectorArg,

    /// Fixed bandwidth for `estimate`, bypassing the selector.
    #[arg(long, global = true)]
    pub bandwidth: Option<f64>,

    #[arg(long, global = true, value_enum, default_value_t = ModeArg::BiasReduced)]
    pub mode: ModeArg,

    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[arg(long, global = true, default_value_t = 200)]
    pub reps: usize,

    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value_t = 512)]
    pub grid_count: usize,

    /// Use the bias-reduced leave-one-out evaluator in cross-validation.
    #[arg(long, global = true)]
    pub loo_bias_reduced: bool,

    /// Second-component mean of the mixture used by `--selector theoretical`.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub mu: f64,

    /// Scale for `oracle`; second-component sd for `--selector theoretical`.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub sigma: f64,

    /// Sample size used by `oracle` for bandwidth consequences.
    #[arg(long, global = true, default_value_t = 100)]
    pub n: usize,

    /// Simulation cells as `mu:sigma:n,...`; defaults to the full 27-cell design.
    #[arg(long, global = true)]
    pub cells: Option<String>,

    /// Simulation selectors as `nr:B,cv:B,cvbr:B,th:B,...`; defaults to NR(2), CV(2), CV(1.1), CV(1.5), CV(1.9).
    #[arg(long, global = true)]
    pub selectors: Option<String>,
}

/// Runs the parsed command on a dedicated thread pool.
pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.opts.threads {
        if t == 0 {
            return Err(Error::InvalidConfig("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &cli.opts))
}

fn dispatch(command: Command, opts: &SharedOpts) -> Result<()> {
    BetaParam::new(opts.beta)?;
    if command != Command::Simulate {
        if let Some(out) = &opts.output {
            check_writable_parent(out)?;
        }
    }
    match command {
        Command::Select => {
            let sample = load_sample(opts)?;
            let report = cmd_select(&sample, opts)?;
            emit(opts.output.as_deref(), &json_bytes(&report)?)
        }
        Command::Estimate => {
            let sample = load_sample(opts)?;
            let curve = cmd_estimate(&sample, opts)?;
            emit(opts.output.as_deref(), curve_tsv(&curve).as_bytes())
        }
        Command::Oracle => {
            let report = cmd_oracle(opts.beta, opts.sigma, opts.n)?;
            emit(opts.output.as_deref(), &json_bytes(&report)?)
        }
        Command::Simulate => {
            let dir = opts
                .output
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("simulate needs --output DIR".into()))?;
            cmd_simulate(&simulation_config(opts)?, dir)
        }
    }
}

fn check_writable_parent(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Error::Input {
            path: path.to_path_buf(),
            reason: "parent directory does not exist".into(),
        })
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses one value per row; a non-numeric first row is treated as a header.
/// Row numbers in errors are 1-based line numbers.
pub fn parse_values<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let text = record.get(0).unwrap_or("");
        if text.is_empty() && record.len() <= 1 {
            continue;
        }
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => return Err(Error::NonFiniteRow { row, value: v }),
            Err(_) if first => {}
            Err(_) => {
                return Err(Error::ParseRow {
                    row,
                    text: text.to_string(),
                })
            }
        }
        first = false;
    }
    Ok(values)
}

/// Reads a one-column CSV into a sorted [`Sample`].
pub fn ingest_csv(path: &Path) -> Result<Sample> {
    let file = fs::File::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let values = parse_values(file)?;
    if values.len() < 2 {
        let reason = if values.is_empty() {
            "no numeric rows".to_string()
        } else {
            "need at least 2 numeric rows, found 1".to_string()
        };
        return Err(Error::Input {
            path: path.to_path_buf(),
            reason,
        });
    }
    Sample::new(values)
}

/// The bundled 107 Old Faithful eruption lengths in minutes.
pub fn faithful_sample() -> Sample {
    let values = parse_values(FAITHFUL_CSV.as_bytes()).expect("bundled data parses");
    Sample::new(values).expect("bundled data is a valid sample")
}

fn load_sample(opts: &SharedOpts) -> Result<Sample> {
    match &opts.input {
        Some(p) => ingest_csv(p),
        None => Ok(faithful_sample()),
    }
}

/// The selector named by the flags.
pub fn selector_from_opts(opts: &SharedOpts) -> Result<SelectorSpec> {
    let beta = BetaParam::new(opts.beta)?;
    let method = match opts.selector {
        SelectorArg::Nr => SelectorMethod::NormalReference(beta),
        SelectorArg::Cv => SelectorMethod::CrossValidation {
            beta,
            loo_bias_reduced: opts.loo_bias_reduced,
        },
        SelectorArg::Theoretical => SelectorMethod::TheoreticalBeta {
            beta,
            target: Arc::new(NormalMixture::new(opts.mu, opts.sigma)?),
        },
    };
    Ok(SelectorSpec::new(method))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectReport {
    pub selector: String,
    pub beta: f64,
    pub bandwidth: f64,
    pub n: usize,
    pub sigma_hat: f64,
    pub boundary_hit: bool,
    pub search_bounds: Option<[f64; 2]>,
}

pub fn cmd_select(sample: &Sample, opts: &SharedOpts) -> Result<SelectReport> {
    let spec = selector_from_opts(opts)?;
    let selection = spec.select(sample, &gaussian_kernel())?;
    Ok(SelectReport {
        selector: spec.name(),
        beta: opts.beta,
        bandwidth: selection.bandwidth,
        n: sample.n(),
        sigma_hat: sample.scale_estimate(),
        boundary_hit: selection.boundary_hit,
        search_bounds: selection.search.map(|s| [s.h_lo, s.h_hi]),
    })
}

/// Density on `grid_count` points over the data range widened by `3σ̂`,
/// negative values clipped to zero.
pub fn cmd_estimate(sample: &Sample, opts: &SharedOpts) -> Result<Vec<(f64, f64)>> {
    let kernel = gaussian_kernel();
    let h = match opts.bandwidth {
        Some(h) => h,
        None => selector_from_opts(opts)?.select(sample, &kernel)?.bandwidth,
    };
    let est = DensityEstimate::new(sample, kernel, h, opts.mode.into())?;
    let pad = 3.0 * sample.scale_estimate();
    let grid = EvaluationGrid::new(sample.min() - pad, sample.max() + pad, opts.grid_count)?;
    Ok(evaluate_grid(&est, &grid)
        .into_iter()
        .map(|(x, y)| (x, y.max(0.0)))
        .collect())
}

/// Formats with 9 significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

pub fn curve_tsv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("x\tdensity\n");
    for &(x, y) in curve {
        s.push_str(&sig9(x));
        s.push('\t');
        s.push_str(&sig9(y));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PolynomialReading {
    pub reading: String,
    pub polynomial_value: f64,
    pub i2: f64,
    pub relative_error: f64,
    pub matches_quadrature: bool,
    /// Bandwidth from the printed simplified rule with this polynomial.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleReport {
    pub beta: f64,
    pub sigma: f64,
    pub n: usize,
    pub i1_quadrature: f64,
    pub i2_quadrature: f64,
    /// Printed `I₁`, which omits the scale factor.
    pub i1_printed: f64,
    pub i1_printed_matches: bool,
    pub i1_scaled: f64,
    pub i1_scaled_matches: bool,
    pub readings: Vec<PolynomialReading>,
    /// Bandwidth minimising the asymptotic expected divergence with quadrature functionals.
    pub bandwidth_quadrature: f64,
    /// The printed β = 2 rule, reported only at β = 2.
    pub bandwidth_beta_two_printed: Option<f64>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

pub fn cmd_oracle(beta: f64, sigma: f64, n: usize) -> Result<OracleReport> {
    BetaParam::new(beta)?;
    if n == 0 {
        return Err(Error::SampleTooSmall(0));
    }
    let quad = gaussian_functional_oracle(0.0, sigma, beta)?;
    let kernel: Kernel = gaussian_kernel();
    let readings = [Polynomial::Linear270, Polynomial::Linear27]
        .into_iter()
        .map(|p| {
            let i2 = closed_form::i2_printed(beta, sigma, p);
            let relative_error = rel_err(i2, quad.i2);
            PolynomialReading {
                reading: p.label().to_string(),
                polynomial_value: p.evaluate(beta),
                i2,
                relative_error,
                matches_quadrature: relative_error < ORACLE_MATCH_TOL,
                bandwidth: closed_form::simplified_rule(beta, n, sigma, p),
            }
        })
        .collect();
    let i1_printed = closed_form::i1_printed(beta);
    let i1_scaled = closed_form::i1_scaled(beta, sigma);
    Ok(OracleReport {
        beta,
        sigma,
        n,
        i1_quadrature: quad.i1,
        i2_quadrature: quad.i2,
        i1_printed,
        i1_printed_matches: rel_err(i1_printed, quad.i1) < ORACLE_MATCH_TOL,
        i1_scaled,
        i1_scaled_matches: rel_err(i1_scaled, quad.i1) < ORACLE_MATCH_TOL,
        readings,
        bandwidth_quadrature: theoretical_from_functionals(quad, &kernel, n)?,
        bandwidth_beta_two_printed: (beta == 2.0).then(|| closed_form::beta_two_rule(n, sigma)),
    })
}

/// Parses `mu:sigma:n,...`.
pub fn parse_cells(text: &str) -> Result<Vec<Cell>> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let bad = || Error::InvalidConfig(format!("cell {item:?} is not mu:sigma:n"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(Cell::new(
                parts[0].parse().map_err(|_| bad())?,
                parts[1].parse().map_err(|_| bad())?,
                parts[2].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Parses `nr:B,cv:B,cvbr:B,th:B,...`.
pub fn parse_selectors(text: &str) -> Result<Vec<SelectorKind>> {
    text.split(',')
        .map(|item| {
            let bad = || Error::InvalidConfig(format!("selector {item:?} is not kind:beta"));
            let (kind, beta) = item.trim().split_once(':').ok_or_else(bad)?;
            let beta = BetaParam::new(beta.parse().map_err(|_| bad())?)?;
            match kind {
                "nr" => Ok(SelectorKind::NormalReference(beta)),
                "cv" => Ok(SelectorKind::CrossValidation {
                    beta,
                    loo_bias_reduced: false,
                }),
                "cvbr" => Ok(SelectorKind::CrossValidation {
                    beta,
                    loo_bias_reduced: true,
                }),
                "th" => Ok(SelectorKind::Theoretical(beta)),
                _ => Err(bad()),
            }
        })
        .collect()
}

pub fn simulation_config(opts: &SharedOpts) -> Result<SimulationConfig> {
    let config = SimulationConfig {
        cells: match &opts.cells {
            Some(t) => parse_cells(t)?,
            None => default_cells(),
        },
        reps: opts.reps,
        selectors: match &opts.selectors {
            Some(t) => parse_selectors(t)?,
            None => default_selectors(),
        },
        seed: opts.seed,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Manifest {
    version: &'static str,
    seed: u64,
    reps: usize,
    cells: Vec<Cell>,
    selectors: Vec<String>,
    skipped_trials: usize,
    files: Vec<&'static str>,
}

const TABLE_FILES: [&str; 5] = [
    "table1_re.csv",
    "table2_meanh.csv",
    "table3_relerr.csv",
    "re_per_rep.csv",
    "manifest.json",
];

fn table_csv(rows: impl IntoIterator<Item = (Cell, String, f64)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mu", "sigma", "n", "selector", "value"])?;
    for (c, sel, v) in rows {
        w.write_record([c.mu.to_string(), c.sigma.to_string(), c.n.to_string(), sel, v.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs the study and writes the three tables, per-replication efficiency
/// ratios and a manifest into `dir`. Either all files appear or none do.
pub fn cmd_simulate(config: &SimulationConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let out = run_simulation(config, &gaussian_kernel())?;
    let rows = &out.table.rows;
    for r in rows.iter().filter(|r| r.re_warning) {
        eprintln!(
            "warning: {} {}: RE {:.4} exceeds 1 + 3 SE ({:.4})",
            r.cell.key(),
            r.selector,
            r.re,
            r.re_se
        );
    }

    let table1 = table_csv(rows.iter().map(|r| (r.cell, r.selector.clone(), r.re)))?;
    let mut meanh: Vec<(Cell, String, f64)> = Vec::new();
    for run in &out.runs {
        meanh.push((run.cell, "h_MISE".into(), run.h_mise));
        meanh.extend(rows.iter().filter(|r| r.cell == run.cell).map(|r| (r.cell, r.selector.clone(), r.mean_h)));
    }
    let table2 = table_csv(meanh)?;
    let table3 = table_csv(rows.iter().map(|r| (r.cell, r.selector.clone(), r.mean_rel_err)))?;

    let mut per_rep = csv::Writer::from_writer(Vec::new());
    per_rep.write_record(["mu", "sigma", "n", "selector", "rep", "value"])?;
    let mut skipped = 0;
    for rec in out.runs.iter().flat_map(|r| &r.records) {
        match &rec.outcome {
            TrialOutcome::Completed {
                ise_at_h_hat,
                ise_at_h_mise,
                ..
            } => per_rep.write_record([
                rec.cell.mu.to_string(),
                rec.cell.sigma.to_string(),
                rec.cell.n.to_string(),
                rec.selector.clone(),
                rec.rep.to_string(),
                (ise_at_h_mise / ise_at_h_hat).to_string(),
            ])?,
            TrialOutcome::Skipped { reason } => {
                skipped += 1;
                eprintln!("skipped: {} {} rep {}: {reason}", rec.cell.key(), rec.selector, rec.rep);
            }
        }
    }
    let per_rep = per_rep.into_inner().map_err(|e| Error::Io(e.into_error()))?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        reps: config.reps,
        cells: config.cells.clone(),
        selectors: config.selectors.iter().map(SelectorKind::name).collect(),
        skipped_trials: skipped,
        files: TABLE_FILES[..4].to_vec(),
    };
    let contents = [table1, table2, table3, per_rep, json_bytes(&manifest)?];

    let targets: Vec<PathBuf> = TABLE_FILES.iter().map(|f| dir.join(f)).collect();
    let staged: Vec<PathBuf> = targets.iter().map(|p| tmp_path(p)).collect();
    let cleanup = |paths: &[PathBuf]| {
        for p in paths {
            let _ = fs::remove_file(p);
        }
    };
    for (tmp, bytes) in staged.iter().zip(&contents) {
        if let Err(e) = fs::write(tmp, bytes) {
            cleanup(&staged);
            return Err(e.into());
        }
    }
    for (i, (tmp, target)) in staged.iter().zip(&targets).enumerate() {
        if let Err(e) = fs::rename(tmp, target) {
            cleanup(&staged);
            cleanup(&targets[..i]);
            return Err(e.into());
        }
    }
    Ok(())
}
