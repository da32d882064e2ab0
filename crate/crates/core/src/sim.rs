//! Monte Carlo harness for the sigmoid regression model: sample generation,
//! true limit constants, coverage experiments and block-size pilots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    pivot_set, rss1_set, rss2_set, stump_split, subsample_ci, wald_set, ConfidenceSet, Method, SubsampleSpec,
};
use crate::error::{Error, Result};
use crate::limit_process::{Dist, QuantileTable};
use crate::nuisance::{limit_params, LimitParams, NuisanceEstimates, NuisanceSource, PluginEstimator, SIGMA2_FLOOR};
use crate::rng::{derive_seed, stream_rng};
use crate::stump::{Sample, StumpProblem};

pub const TRUE_SPLIT: f64 = 0.5;
const SLOPE: f64 = 15.0;
const PILOT_TAG: u64 = 0x7069_6c6f_74;
const SUBSAMPLE_TAG: u64 = 0x7375_6273;

/// Regression function `e^{15(x - 1/2)} / (1 + e^{15(x - 1/2)})`.
pub fn sigmoid(x: f64) -> f64 {
    let z = SLOPE * (x - 0.5);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_antiderivative(x: f64) -> f64 {
    let z = SLOPE * (x - 0.5);
    // ln(1 + e^z) without overflow
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / SLOPE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorModel {
    /// Constant variance 0.25.
    Homoscedastic,
    /// Variance `exp(-2.77 x)`.
    Heteroscedastic,
    /// No noise; for harness checks only.
    Noiseless,
}

impl ErrorModel {
    pub fn variance(&self, x: f64) -> f64 {
        match self {
            ErrorModel::Homoscedastic => 0.25,
            ErrorModel::Heteroscedastic => (-2.77 * x).exp(),
            ErrorModel::Noiseless => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErrorModel::Homoscedastic => "homoscedastic",
            ErrorModel::Heteroscedastic => "heteroscedastic",
            ErrorModel::Noiseless => "noiseless",
        }
    }
}

/// Uniform design on [0, 1] with Gaussian errors around the sigmoid.
pub fn generate_sample(n: usize, model: ErrorModel, seed: u64) -> Result<Sample> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("sample size must be at least 2, got {n}")));
    }
    let mut rng = stream_rng(seed, 0);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random();
        let eps = std_normal.sample(&mut rng) * model.variance(xi).sqrt();
        x.push(xi);
        y.push(sigmoid(xi) + eps);
    }
    Sample::new(x, y)
}

/// Population stump projection and limit constants for an error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub d0: f64,
    pub beta_l: f64,
    pub beta_u: f64,
    pub nuisance: NuisanceEstimates,
    pub params: LimitParams,
}

pub fn true_limit_constants(model: ErrorModel) -> Truth {
    let d0 = TRUE_SPLIT;
    let mid = sigmoid_antiderivative(d0);
    let beta_l = (mid - sigmoid_antiderivative(0.0)) / d0;
    let beta_u = (sigmoid_antiderivative(1.0) - mid) / (1.0 - d0);
    let s = sigmoid(d0);
    let nuisance = NuisanceEstimates {
        density_at_d: 1.0,
        cdf_at_d: d0,
        fprime_at_d: SLOPE * s * (1.0 - s),
        sigma2_at_d: model.variance(d0).max(SIGMA2_FLOOR),
    };
    let params = limit_params(&nuisance, beta_l, beta_u).expect("truth constants are valid");
    Truth {
        d0,
        beta_l,
        beta_u,
        nuisance,
        params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    #[default]
    TrueValues,
    Estimated,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_seed() -> u64 {
    1
}

fn default_min_side() -> usize {
    1
}

fn default_subsamples() -> usize {
    1000
}

fn default_pilot_reps() -> usize {
    200
}

pub fn default_pilot_grid() -> Vec<f64> {
    vec![0.33, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
}

/// Subsampling settings of a scenario; a missing `gamma` is chosen by a
/// pilot simulation over `pilot_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_subsamples")]
    pub n_subsamples: usize,
    #[serde(default = "default_pilot_grid")]
    pub pilot_grid: Vec<f64>,
    #[serde(default = "default_pilot_reps")]
    pub pilot_reps: usize,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            n_subsamples: default_subsamples(),
            pilot_grid: default_pilot_grid(),
            pilot_reps: default_pilot_reps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub reps: usize,
    pub error_model: ErrorModel,
    pub methods: Vec<Method>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub nuisance: NuisanceMode,
    #[serde(default)]
    pub subsample: Option<SubsampleConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_min_side")]
    pub min_side: usize,
}

impl Scenario {
    pub fn new(n: usize, reps: usize, error_model: ErrorModel, methods: Vec<Method>) -> Self {
        Self {
            n,
            reps,
            error_model,
            methods,
            alpha: default_alpha(),
            nuisance: NuisanceMode::TrueValues,
            subsample: None,
            seed: default_seed(),
            min_side: default_min_side(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config { key: key.into(), msg };
        if self.reps == 0 {
            return Err(bad("reps", "must be at least 1".into()));
        }
        if self.n < 2 * self.min_side.max(1) {
            return Err(bad("n", format!("too small for min_side {}", self.min_side)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(bad("methods", "at least one method required".into()));
        }
        if self.methods.contains(&Method::Subsample) {
            let sub = self
                .subsample
                .as_ref()
                .ok_or_else(|| bad("subsample", "required when methods include subsample".into()))?;
            if let Some(g) = sub.gamma {
                if !(g > 0.0 && g < 1.0) {
                    return Err(bad("subsample.gamma", format!("must lie in (0, 1), got {g}")));
                }
            } else {
                if sub.pilot_grid.is_empty() || sub.pilot_grid.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
                    return Err(bad("subsample.pilot_grid", "values must lie in (0, 1)".into()));
                }
                if sub.pilot_reps < 100 {
                    return Err(bad("subsample.pilot_reps", "must be at least 100".into()));
                }
            }
            if sub.n_subsamples < 100 {
                return Err(bad("subsample.n_subsamples", "must be at least 100".into()));
            }
        }
        Ok(())
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// Quantile tables used to calibrate the analytic procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub chernoff: QuantileTable,
    pub maxq1: QuantileTable,
}

impl Calibration {
    pub fn embedded() -> Self {
        Self {
            chernoff: QuantileTable::embedded(Dist::ChernoffArgmax),
            maxq1: QuantileTable::embedded(Dist::MaxQ1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// Fraction of successful replications whose longest component covers the truth.
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_length: f64,
    /// Coverage of the interval spanned by the whole accepted set.
    pub full_set_coverage: f64,
    pub failure_codes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub reps: usize,
    pub error_model: ErrorModel,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub methods: Vec<MethodSummary>,
}

pub const REPORT_HEADER: &str =
    "method\tn\treps\terror_model\tsuccesses\tfailures\tcoverage\tcoverage_se\tmean_length\tfull_set_coverage\tgamma";

impl CoverageReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for s in &self.methods {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.method,
                self.n,
                self.reps,
                self.error_model.name(),
                s.successes,
                s.failures,
                s.coverage,
                s.coverage_se,
                s.mean_length,
                s.full_set_coverage,
                match (s.method, self.gamma) {
                    (Method::Subsample, Some(g)) => g.to_string(),
                    _ => "-".to_string(),
                }
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    covered: bool,
    length: f64,
    hull_covered: bool,
}

fn outcome(set: &ConfidenceSet, truth: f64) -> Outcome {
    Outcome {
        covered: set.longest_component.contains(truth),
        length: set.longest_component.len(),
        hull_covered: set.hull().contains(truth),
    }
}

fn summarize(method: Method, results: &[std::result::Result<Outcome, &'static str>]) -> MethodSummary {
    let mut failure_codes = BTreeMap::new();
    let mut covered = 0usize;
    let mut hull = 0usize;
    let mut length = 0.0;
    let mut successes = 0usize;
    for r in results {
        match r {
            Ok(o) => {
                successes += 1;
                covered += o.covered as usize;
                hull += o.hull_covered as usize;
                length += o.length;
            }
            Err(code) => *failure_codes.entry(code.to_string()).or_insert(0) += 1,
        }
    }
    let frac = |k: usize| if successes == 0 { f64::NAN } else { k as f64 / successes as f64 };
    let coverage = frac(covered);
    MethodSummary {
        method,
        successes,
        failures: results.len() - successes,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / successes as f64).sqrt(),
        mean_length: if successes == 0 { f64::NAN } else { length / successes as f64 },
        full_set_coverage: frac(hull),
        failure_codes,
    }
}

/// One replication's confidence sets, keyed by method.
fn replicate(
    scenario: &Scenario,
    sample: &Sample,
    truth: &Truth,
    source: &dyn NuisanceSource,
    cal: &Calibration,
    sub: Option<SubsampleSpec>,
) -> Vec<Result<ConfidenceSet>> {
    let problem = match StumpProblem::new(sample, scenario.min_side) {
        Ok(p) => p,
        Err(e) => return scenario.methods.iter().map(|_| Err(e.clone())).collect(),
    };
    let fit = problem.fit();
    let needs_constants = scenario.methods.iter().any(|m| *m != Method::Subsample);
    let lp = if !needs_constants {
        Err(Error::InvalidInput("unused".into()))
    } else {
        match scenario.nuisance {
            NuisanceMode::TrueValues => Ok(truth.params),
            NuisanceMode::Estimated => source
                .estimate(sample, fit.d_hat)
                .and_then(|nuis| limit_params(&nuis, fit.beta_l, fit.beta_u)),
        }
    };
    let alpha = scenario.alpha;
    scenario
        .methods
        .iter()
        .map(|m| {
            if *m == Method::Subsample {
                let spec = sub.ok_or_else(|| Error::InvalidInput("missing subsampling spec".into()))?;
                return subsample_ci(sample, fit.d_hat, stump_split(scenario.min_side), &spec, alpha);
            }
            let lp = lp.as_ref().map_err(Clone::clone)?;
            match m {
                Method::Wald => wald_set(&fit, lp, problem.n(), alpha, &cal.chernoff),
                Method::Rss1 => rss1_set(&problem, &fit, lp, alpha, &cal.maxq1),
                Method::Rss2 => rss2_set(&problem, &fit, lp, alpha, &cal.maxq1),
                Method::Pivot => pivot_set(&problem, &fit, lp, alpha, &cal.chernoff),
                Method::Subsample => unreachable!(),
            }
        })
        .collect()
}

fn subsample_spec_for(n_subsamples: usize, gamma: Option<f64>, rep_seed: u64) -> Option<SubsampleSpec> {
    gamma.map(|gamma| SubsampleSpec {
        gamma,
        n_subsamples,
        seed: derive_seed(rep_seed, SUBSAMPLE_TAG),
    })
}

pub fn run_coverage_experiment(scenario: &Scenario) -> Result<CoverageReport> {
    run_coverage_experiment_with(scenario, &PluginEstimator::default(), &Calibration::embedded())
}

/// Coverage experiment with an explicit nuisance source and calibration.
pub fn run_coverage_experiment_with(
    scenario: &Scenario,
    source: &dyn NuisanceSource,
    cal: &Calibration,
) -> Result<CoverageReport> {
    scenario.validate()?;
    let truth = true_limit_constants(scenario.error_model);
    let sub_cfg = scenario.subsample.clone().unwrap_or_default();
    let gamma = if scenario.methods.contains(&Method::Subsample) {
        Some(match sub_cfg.gamma {
            Some(g) => g,
            None => select_block_exponent(scenario, &sub_cfg.pilot_grid, sub_cfg.pilot_reps, scenario.alpha)?,
        })
    } else {
        None
    };
    let per_rep: Vec<Vec<std::result::Result<Outcome, &'static str>>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = scenario.replication_seed(rep);
            let sets = match generate_sample(scenario.n, scenario.error_model, seed) {
                Ok(sample) => replicate(
                    scenario,
                    &sample,
                    &truth,
                    source,
                    cal,
                    subsample_spec_for(sub_cfg.n_subsamples, gamma, seed),
                ),
                Err(e) => scenario.methods.iter().map(|_| Err(e.clone())).collect(),
            };
            sets.into_iter()
                .map(|s| s.map(|set| outcome(&set, truth.d0)).map_err(|e| e.code()))
                .collect()
        })
        .collect();
    let methods = scenario
        .methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let column: Vec<_> = per_rep.iter().map(|r| r[j]).collect();
            summarize(m, &column)
        })
        .collect();
    Ok(CoverageReport {
        n: scenario.n,
        reps: scenario.reps,
        error_model: scenario.error_model,
        alpha: scenario.alpha,
        gamma,
        methods,
    })
}

/// Empirical subsampling coverage for each block exponent in `grid`.
pub fn pilot_coverages(scenario: &Scenario, grid: &[f64], pilot_reps: usize, alpha: f64) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("pilot grid is empty".into()));
    }
    if pilot_reps < 100 {
        return Err(Error::InvalidInput(format!("at least 100 pilot replications required, got {pilot_reps}")));
    }
    let n_subsamples = scenario.subsample.as_ref().map_or(default_subsamples(), |s| s.n_subsamples);
    let pilot_seed = derive_seed(scenario.seed, PILOT_TAG);
    let truth = true_limit_constants(scenario.error_model).d0;
    grid.iter()
        .map(|&gamma| {
            let hits: Vec<Option<bool>> = (0..pilot_reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = derive_seed(pilot_seed, rep as u64);
                    let sample = generate_sample(scenario.n, scenario.error_model, seed).ok()?;
                    let d_hat = StumpProblem::new(&sample, scenario.min_side).ok()?.fit().d_hat;
                    let spec = subsample_spec_for(n_subsamples, Some(gamma), seed)?;
                    let set = subsample_ci(&sample, d_hat, stump_split(scenario.min_side), &spec, alpha).ok()?;
                    Some(set.longest_component.contains(truth))
                })
                .collect();
            let ok: Vec<bool> = hits.into_iter().flatten().collect();
            let cov = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().filter(|&&c| c).count() as f64 / ok.len() as f64
            };
            Ok((gamma, cov))
        })
        .collect()
}

/// Grid value whose coverage is closest to `target`; ties go to the smaller
/// exponent and exponents without any successful run are ignored.
pub fn closest_to_target(coverages: &[(f64, f64)], target: f64) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = coverages.iter().copied().filter(|(_, c)| c.is_finite()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (g, c) in sorted {
        let gap = (c - target).abs();
        if best.is_none_or(|(_, b)| gap < b) {
            best = Some((g, gap));
        }
    }
    best.map(|(g, _)| g)
}

pub fn select_block_exponent(scenario: &Scenario, grid: &[f64], pilot_reps: usize, alpha: f64) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let cov = pilot_coverages(scenario, grid, pilot_reps, alpha)?;
    closest_to_target(&cov, 1.0 - alpha)
        .ok_or_else(|| Error::InvalidInput("no block exponent in the pilot grid produced an interval".into()))
}

/// Wide table: one row per scenario, coverage and length per method.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }
}

const TABLE_METHODS: [Method; 5] = [Method::Subsample, Method::Wald, Method::Rss1, Method::Rss2, Method::Pivot];

pub fn reproduce_table(rows: &[Scenario]) -> Table {
    let mut header = vec!["n".to_string(), "error_model".to_string()];
    for m in TABLE_METHODS {
        header.push(format!("{m}_coverage"));
        header.push(format!("{m}_length"));
    }
    let rows = rows
        .iter()
        .map(|sc| {
            let mut cells = vec![sc.n.to_string(), sc.error_model.name().to_string()];
            match run_coverage_experiment(sc) {
                Ok(rep) => {
                    for m in TABLE_METHODS {
                        match rep.method(m) {
                            Some(s) if s.successes > 0 => {
                                cells.push(format!("{:.3}", s.coverage));
                                cells.push(format!("{:.3}", s.mean_length));
                            }
                            Some(_) => cells.extend(["failed".to_string(), "failed".to_string()]),
                            None => cells.extend(["-".to_string(), "-".to_string()]),
                        }
                    }
                }
                Err(e) => {
                    for _ in 0..2 * TABLE_METHODS.len() {
                        cells.push(format!("error:{}", e.code()));
                    }
                }
            }
            cells
        })
        .collect();
    Table { header, rows }
}
