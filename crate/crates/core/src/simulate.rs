//! Monte Carlo study of bandwidth selectors on two-component normal mixtures.
//!
//! Every replication draws its sample from a seed derived from
//! `(master seed, cell index, rep index)`, so results do not depend on thread
//! count or scheduling, and all selectors in a cell see the same samples.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bandwidth::{mise_search, reduced_ise, BandwidthSearch, MiseCurve, SelectorMethod, SelectorSpec};
use crate::density::{panels_for, DensityEstimate, Mode, Sample};
use crate::divergence::{BetaParam, NormalTarget, TargetDensity};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::quadrature::{normal_fourth_derivative, normal_pdf, QuadratureSpec};

/// A target density that can also be sampled from.
pub trait SimulationTarget: TargetDensity {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64;

    /// Interval the ISE quadrature must cover regardless of the data.
    fn mass_range(&self) -> (f64, f64);
}

/// `0.5·N(0, 1) + 0.5·N(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalMixture {
    pub mu: f64,
    pub sigma: f64,
    /// Weight of the N(0, 1) component.
    pub weight: f64,
}

impl NormalMixture {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("mixture needs finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma, weight: 0.5 })
    }

    fn widest_sd(&self) -> f64 {
        self.sigma.max(1.0)
    }

    fn span(&self, half_widths: f64) -> (f64, f64) {
        let w = half_widths * self.widest_sd();
        (self.mu.min(0.0) - w, self.mu.max(0.0) + w)
    }
}

impl TargetDensity for NormalMixture {
    fn pdf(&self, x: f64) -> f64 {
        self.weight * normal_pdf(x, 0.0, 1.0) + (1.0 - self.weight) * normal_pdf(x, self.mu, self.sigma)
    }

    fn fourth_derivative(&self, x: f64) -> f64 {
        self.weight * normal_fourth_derivative(x, 0.0, 1.0)
            + (1.0 - self.weight) * normal_fourth_derivative(x, self.mu, self.sigma)
    }

    fn support_hint(&self) -> (f64, f64) {
        self.span(10.0)
    }

    fn resolution(&self) -> f64 {
        self.sigma.min(1.0)
    }

    fn scale(&self) -> f64 {
        let w = self.weight;
        (w + (1.0 - w) * self.sigma * self.sigma + w * (1.0 - w) * self.mu * self.mu).sqrt()
    }
}

impl SimulationTarget for NormalMixture {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if rng.random_bool(self.weight) {
            z
        } else {
            self.mu + self.sigma * z
        }
    }

    fn mass_range(&self) -> (f64, f64) {
        self.span(8.0)
    }
}

impl SimulationTarget for NormalTarget {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * z
    }

    fn mass_range(&self) -> (f64, f64) {
        (self.mean - 8.0 * self.sd, self.mean + 8.0 * self.sd)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17) ^ 0xA076_1D64_78BD_642F)
}

/// Seed for one simulation cell.
pub fn cell_seed(master: u64, cell_index: usize) -> u64 {
    mix(master, 0xCE11_0000_0000_0000 ^ cell_index as u64)
}

/// Seed for one replication within a seed lineage.
pub fn trial_seed(lineage: u64, rep: u64) -> u64 {
    mix(lineage, rep)
}

/// `n` draws from `target` using the stream for `seed`, as a sorted [`Sample`].
pub fn draw_sample(target: &dyn SimulationTarget, n: usize, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sample::new((0..n).map(|_| target.draw(&mut rng)).collect())
}

/// Draws from the mixture.
pub fn sample_mixture(mix: &NormalMixture, n: usize, seed: u64) -> Result<Sample> {
    draw_sample(mix, n, seed)
}

/// ISE quadrature range: the target's mass range united with the data
/// range widened by the kernel reach, stepped finely enough for both the
/// bandwidth and the narrowest target feature.
pub fn ise_quadrature(target: &dyn SimulationTarget, sample: &Sample, kernel: &Kernel, h: f64) -> Result<QuadratureSpec> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    let reach = kernel.support_radius() * h;
    let (a, b) = target.mass_range();
    let lo = a.min(sample.min() - reach);
    let hi = b.max(sample.max() + reach);
    QuadratureSpec::new(lo, hi, panels_for(hi - lo, h.min(target.resolution())))
}

/// One `(μ, σ, n)` combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

impl Cell {
    pub fn new(mu: f64, sigma: f64, n: usize) -> Self {
        Self { mu, sigma, n }
    }

    pub fn mixture(&self) -> Result<NormalMixture> {
        NormalMixture::new(self.mu, self.sigma)
    }

    pub fn key(&self) -> String {
        format!("mu={},sigma={},n={}", self.mu, self.sigma, self.n)
    }
}

/// μ ∈ {0, 1, 5}, σ ∈ {1, 0.5, 0.1}, n ∈ {50, 200, 700}.
pub fn default_cells() -> Vec<Cell> {
    let mut cells = Vec::with_capacity(27);
    for mu in [0.0, 1.0, 5.0] {
        for sigma in [1.0, 0.5, 0.1] {
            for n in [50, 200, 700] {
                cells.push(Cell::new(mu, sigma, n));
            }
        }
    }
    cells
}

/// A selector as configured for a study; bound to each cell's mixture at run time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectorKind {
    NormalReference(BetaParam),
    CrossValidation { beta: BetaParam, loo_bias_reduced: bool },
    Theoretical(BetaParam),
}

impl SelectorKind {
    pub fn bind(&self, mixture: &NormalMixture) -> SelectorSpec {
        let method = match *self {
            SelectorKind::NormalReference(beta) => SelectorMethod::NormalReference(beta),
            SelectorKind::CrossValidation { beta, loo_bias_reduced } => {
                SelectorMethod::CrossValidation { beta, loo_bias_reduced }
            }
            SelectorKind::Theoretical(beta) => SelectorMethod::TheoreticalBeta {
                beta,
                target: Arc::new(*mixture),
            },
        };
        SelectorSpec::new(method)
    }

    pub fn name(&self) -> String {
        // Names do not depend on the target.
        self.bind(&NormalMixture::new(0.0, 1.0).expect("valid mixture")).name()
    }
}

/// NR(2), CV(2), CV(1.1), CV(1.5), CV(1.9).
pub fn default_selectors() -> Vec<SelectorKind> {
    let b = |v| BetaParam::new(v).expect("valid beta");
    vec![
        SelectorKind::NormalReference(b(2.0)),
        SelectorKind::CrossValidation { beta: b(2.0), loo_bias_reduced: false },
        SelectorKind::CrossValidation { beta: b(1.1), loo_bias_reduced: false },
        SelectorKind::CrossValidation { beta: b(1.5), loo_bias_reduced: false },
        SelectorKind::CrossValidation { beta: b(1.9), loo_bias_reduced: false },
    ]
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub cells: Vec<Cell>,
    pub reps: usize,
    pub selectors: Vec<SelectorKind>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            cells: default_cells(),
            reps: 200,
            selectors: default_selectors(),
            seed: 42,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::InvalidConfig("no cells".into()));
        }
        if self.selectors.is_empty() {
            return Err(Error::InvalidConfig("no selectors".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        for c in &self.cells {
            if c.n < 10 {
                return Err(Error::InvalidConfig(format!("cell {} has n < 10", c.key())));
            }
            c.mixture()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum TrialOutcome {
    #[serde(rename_all = "camelCase")]
    Completed {
        h_hat: f64,
        ise_at_h_hat: f64,
        ise_at_h_mise: f64,
    },
    Skipped { reason: String },
}

/// One selector's result on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub cell: Cell,
    pub rep: usize,
    pub selector: String,
    pub outcome: TrialOutcome,
}

/// All records for one cell, plus its MISE-optimal bandwidth.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: Cell,
    pub cell_index: usize,
    pub h_mise: f64,
    pub mise_curve: MiseCurve,
    pub records: Vec<TrialRecord>,
}

/// Runs one cell: the MISE search first, then every selector on every replication.
pub fn run_cell(
    cell: Cell,
    cell_index: usize,
    selectors: &[SelectorKind],
    reps: usize,
    master_seed: u64,
    kernel: &Kernel,
) -> Result<CellRun> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    let mixture = cell.mixture()?;
    let lineage = cell_seed(master_seed, cell_index);
    let search = BandwidthSearch::for_target(&mixture, cell.n)?;
    let curve = mise_search(&mixture, cell.n, kernel, reps, lineage, &search)?;
    let h_mise = curve.bandwidth;
    let bound: Vec<(String, SelectorSpec)> = selectors.iter().map(|s| (s.name(), s.bind(&mixture))).collect();

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<TrialRecord>> {
            let sample = draw_sample(&mixture, cell.n, trial_seed(lineage, rep as u64))?;
            let ise_at_h_mise = reduced_ise(&sample, &mixture, kernel, h_mise)?;
            Ok(bound
                .iter()
                .map(|(name, spec)| {
                    let outcome = match spec
                        .select(&sample, kernel)
                        .and_then(|sel| Ok((sel.bandwidth, reduced_ise(&sample, &mixture, kernel, sel.bandwidth)?)))
                    {
                        Ok((h_hat, ise_at_h_hat)) => TrialOutcome::Completed {
                            h_hat,
                            ise_at_h_hat,
                            ise_at_h_mise,
                        },
                        Err(e) => TrialOutcome::Skipped { reason: e.to_string() },
                    };
                    TrialRecord {
                        cell,
                        rep,
                        selector: name.clone(),
                        outcome,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records: Vec<TrialRecord> = per_rep.into_iter().flatten().collect();
    let order: BTreeMap<&str, usize> = bound.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
    records.sort_by_key(|r| (order[r.selector.as_str()], r.rep));
    Ok(CellRun {
        cell,
        cell_index,
        h_mise,
        mise_curve: curve,
        records,
    })
}

/// One `(cell, selector)` row of the summary tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRow {
    pub cell: Cell,
    pub selector: String,
    /// `mean(ISE at h_MISE) / mean(ISE at ĥ)`.
    pub re: f64,
    /// Delta-method standard error of `re`.
    pub re_se: f64,
    pub mean_h: f64,
    /// `mean |ĥ/h_MISE − 1|`.
    pub mean_rel_err: f64,
    pub h_mise: f64,
    pub completed: usize,
    pub skipped: usize,
    /// `re > 1 + 3·re_se`.
    pub re_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, cell: &Cell, selector: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.cell == *cell && r.selector == selector)
    }
}

/// Aggregates cell runs into one row per `(cell, selector)`.
pub fn summarize(runs: &[CellRun], selectors: &[String]) -> Result<SummaryTable> {
    let mut ordered: Vec<&CellRun> = runs.iter().collect();
    ordered.sort_by_key(|r| r.cell_index);
    let mut rows = Vec::new();
    for run in ordered {
        for name in selectors {
            let mut group: Vec<&TrialRecord> = run.records.iter().filter(|r| &r.selector == name).collect();
            group.sort_by_key(|r| r.rep);
            let done: Vec<(f64, f64, f64)> = group
                .iter()
                .filter_map(|r| match r.outcome {
                    TrialOutcome::Completed {
                        h_hat,
                        ise_at_h_hat,
                        ise_at_h_mise,
                    } => Some((h_hat, ise_at_h_hat, ise_at_h_mise)),
                    TrialOutcome::Skipped { .. } => None,
                })
                .collect();
            if done.is_empty() {
                return Err(Error::MissingGroup(format!("{},selector={}", run.cell.key(), name)));
            }
            rows.push(summarize_group(run, name, &done, group.len() - done.len()));
        }
    }
    Ok(SummaryTable { rows })
}

fn summarize_group(run: &CellRun, name: &str, done: &[(f64, f64, f64)], skipped: usize) -> SummaryRow {
    let m = done.len() as f64;
    let mean_hat_ise = done.iter().map(|d| d.1).sum::<f64>() / m;
    let mean_mise_ise = done.iter().map(|d| d.2).sum::<f64>() / m;
    let re = mean_mise_ise / mean_hat_ise;
    let re_se = if done.len() > 1 {
        let ss: f64 = done.iter().map(|d| (d.2 - re * d.1).powi(2)).sum();
        (ss / (m - 1.0)).sqrt() / (m.sqrt() * mean_hat_ise)
    } else {
        0.0
    };
    SummaryRow {
        cell: run.cell,
        selector: name.to_string(),
        re,
        re_se,
        mean_h: done.iter().map(|d| d.0).sum::<f64>() / m,
        mean_rel_err: done.iter().map(|d| (d.0 / run.h_mise - 1.0).abs()).sum::<f64>() / m,
        h_mise: run.h_mise,
        completed: done.len(),
        skipped,
        re_warning: re > 1.0 + 3.0 * re_se,
    }
}

pub struct SimulationOutput {
    pub runs: Vec<CellRun>,
    pub table: SummaryTable,
}

/// Runs every cell of `config` and summarises.
pub fn run_simulation(config: &SimulationConfig, kernel: &Kernel) -> Result<SimulationOutput> {
    config.validate()?;
    let runs = config
        .cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| run_cell(cell, i, &config.selectors, config.reps, config.seed, kernel))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = config.selectors.iter().map(SelectorKind::name).collect();
    let table = summarize(&runs, &names)?;
    Ok(SimulationOutput { runs, table })
}

/// Monte Carlo means of the plain and bias-reduced estimates at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PointBias {
    pub truth: f64,
    pub mean_plain: f64,
    pub se_plain: f64,
    pub mean_reduced: f64,
    pub se_reduced: f64,
}

impl PointBias {
    pub fn plain_gap(&self) -> f64 {
        (self.mean_plain - self.truth).abs()
    }

    pub fn reduced_gap(&self) -> f64 {
        (self.mean_reduced - self.truth).abs()
    }
}

/// Estimates `E fₙ(x)` and `E f̂ₙ(x)` at fixed `h` over `reps` seeded samples.
pub fn point_bias(
    target: &dyn SimulationTarget,
    n: usize,
    h: f64,
    x: f64,
    reps: usize,
    seed: u64,
    kernel: &Kernel,
) -> Result<PointBias> {
    if reps < 2 {
        return Err(Error::InvalidConfig("point bias needs at least 2 replications".into()));
    }
    let values = (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = draw_sample(target, n, trial_seed(seed, r as u64))?;
            let est = DensityEstimate::new(&s, *kernel, h, Mode::Plain)?;
            Ok((est.parzen_at(x), est.bias_reduced_at(x)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let m = reps as f64;
    let stats = |it: &dyn Fn(&(f64, f64)) -> f64| {
        let mean = values.iter().map(it).sum::<f64>() / m;
        let var = values.iter().map(|v| (it(v) - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    };
    let (mean_plain, se_plain) = stats(&|v| v.0);
    let (mean_reduced, se_reduced) = stats(&|v| v.1);
    Ok(PointBias {
        truth: target.pdf(x),
        mean_plain,
        se_plain,
        mean_reduced,
        se_reduced,
    })
}
