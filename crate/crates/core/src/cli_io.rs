//! CSV ingestion, scenario files and the reports printed by the command
//! line tool.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::{
    pivot_set, rss1_set, rss2_set, stump_split, subsample_ci, wald_cis, wald_set, ConfidenceSet, Interval, Method,
    SubsampleSpec, WaldIntervals,
};
use crate::error::{Error, Result};
use crate::glm::{relative_risk_ci, transform_fit, LinkSpec};
use crate::limit_process::{Dist, QuantileTable};
use crate::nuisance::{
    limit_params, LimitParams, NuisanceEstimates, NuisanceOptions, NuisanceSource, PluginEstimator,
};
use crate::parametric::{rss2_ci_parametric, ParametricProblem, WorkingModel};
use crate::sim::Scenario;
use crate::stump::{Sample, StumpProblem};

/// Reads a two-column CSV with header `x,y`.
pub fn read_sample_csv(path: &Path) -> Result<Sample> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_sample(file)
}

pub fn read_sample<R: Read>(reader: R) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?;
    if header.len() != 2 || &header[0] != "x" || &header[1] != "y" {
        return Err(Error::Parse {
            row: 1,
            msg: format!("expected header `x,y`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse {
                row,
                msg: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let cell = |i: usize, name: &str| -> Result<f64> {
            let s = &rec[i];
            if s.is_empty() {
                return Err(Error::Parse {
                    row,
                    msg: format!("missing {name} value"),
                });
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    msg: format!("{name} value `{s}` is not a finite number"),
                }),
            }
        };
        x.push(cell(0, "x")?);
        y.push(cell(1, "y")?);
    }
    if x.len() < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 rows, found {}", x.len())));
    }
    Sample::new(x, y)
}

pub fn write_sample<W: Write>(writer: W, sample: &Sample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x", "y"]).map_err(io)?;
    for (x, y) in sample.x().iter().zip(sample.y()) {
        w.write_record([x.to_string(), y.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a scenario file: either the keys of a single scenario at top
/// level or an array of tables named `scenarios`.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Many {
        scenarios: Vec<Scenario>,
    }
    let value: toml::Table = toml::from_str(text).map_err(config_error)?;
    let scenarios = if value.contains_key("scenarios") {
        value.try_into::<Many>().map_err(config_error)?.scenarios
    } else {
        vec![value.try_into::<Scenario>().map_err(config_error)?]
    };
    for s in &scenarios {
        s.validate()?;
    }
    Ok(scenarios)
}

fn config_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let key = backticked_after(&msg, "unknown field")
        .or_else(|| backticked_after(&msg, "missing field"))
        .or_else(|| backticked_after(&msg, "unknown variant"))
        .unwrap_or_else(|| "<document>".to_string());
    Error::Config {
        key,
        msg: msg.lines().next().unwrap_or_default().to_string(),
    }
}

fn backticked_after(msg: &str, marker: &str) -> Option<String> {
    let rest = &msg[msg.find(marker)? + marker.len()..];
    let start = rest.find('`')? + 1;
    let len = rest[start..].find('`')?;
    Some(rest[start..start + len].to_string())
}

/// Working model selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Stump,
    Poly(WorkingModel),
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "stump" {
            Ok(ModelSpec::Stump)
        } else if let Some(rest) = s.strip_prefix("poly:") {
            Ok(ModelSpec::Poly(rest.parse()?))
        } else {
            Err(Error::InvalidInput(format!("unknown model `{s}` (use stump or poly:kl,ku)")))
        }
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelSpec::Stump => f.write_str("stump"),
            ModelSpec::Poly(wm) => write!(f, "{wm}"),
        }
    }
}

/// `cv` or `fixed:h`.
pub fn parse_bandwidth(s: &str) -> Result<NuisanceOptions> {
    if s == "cv" {
        return Ok(NuisanceOptions::default());
    }
    let h = s
        .strip_prefix("fixed:")
        .and_then(|h| h.parse::<f64>().ok())
        .filter(|h| *h > 0.0 && h.is_finite())
        .ok_or_else(|| Error::InvalidInput(format!("bandwidth must be `cv` or `fixed:h` with h > 0, got `{s}`")))?;
    Ok(NuisanceOptions::with_fixed_bandwidth(h))
}

/// How nuisance values are obtained: estimated from the data, or supplied
/// as `values:density,cdf,fprime,sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuisanceArg {
    Auto,
    Values(NuisanceEstimates),
}

impl FromStr for NuisanceArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(NuisanceArg::Auto);
        }
        let bad = || Error::InvalidInput(format!("nuisance must be `auto` or `values:p,F,fprime,sigma2`, got `{s}`"));
        let v: Vec<f64> = s
            .strip_prefix("values:")
            .ok_or_else(bad)?
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(bad());
        }
        let est = NuisanceEstimates {
            density_at_d: v[0],
            cdf_at_d: v[1],
            fprime_at_d: v[2],
            sigma2_at_d: v[3],
        };
        est.validate().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(NuisanceArg::Values(est))
    }
}

impl NuisanceArg {
    fn resolve(&self, sample: &Sample, d: f64, options: &NuisanceOptions) -> Result<NuisanceEstimates> {
        match self {
            NuisanceArg::Auto => PluginEstimator {
                options: options.clone(),
            }
            .estimate(sample, d),
            NuisanceArg::Values(v) => Ok(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub n: usize,
    pub d_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef_left: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef_right: Option<Vec<f64>>,
    pub link: LinkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_u: Option<f64>,
    pub rss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance: Option<NuisanceEstimates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitParams>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub model: ModelSpec,
    pub link: LinkSpec,
    pub min_side: usize,
    pub options: NuisanceOptions,
}

impl Default for FitRequest {
    fn default() -> Self {
        Self {
            model: ModelSpec::Stump,
            link: LinkSpec::Identity,
            min_side: 1,
            options: NuisanceOptions::default(),
        }
    }
}

pub fn fit_report(sample: &Sample, req: &FitRequest) -> Result<FitReport> {
    let mut warnings = Vec::new();
    let mut report = match req.model {
        ModelSpec::Stump => {
            let fit = StumpProblem::new(sample, req.min_side)?.fit();
            let linked = transform_fit(&fit, req.link)?;
            FitReport {
                model: req.model.to_string(),
                n: sample.len(),
                d_hat: fit.d_hat,
                beta_l: Some(fit.beta_l),
                beta_u: Some(fit.beta_u),
                coef_left: None,
                coef_right: None,
                link: req.link,
                theta_l: Some(linked.theta_l),
                theta_u: Some(linked.theta_u),
                rss: fit.rss,
                nuisance: None,
                limit: None,
                warnings: Vec::new(),
            }
        }
        ModelSpec::Poly(wm) => {
            if req.link != LinkSpec::Identity {
                return Err(Error::InvalidInput("links apply to the stump model only".into()));
            }
            let fit = ParametricProblem::new(sample, wm, req.min_side)?.fit()?;
            FitReport {
                model: req.model.to_string(),
                n: sample.len(),
                d_hat: fit.d_hat,
                beta_l: None,
                beta_u: None,
                coef_left: Some(fit.coef_left()),
                coef_right: Some(fit.coef_right()),
                link: req.link,
                theta_l: None,
                theta_u: None,
                rss: fit.rss,
                nuisance: None,
                limit: None,
                warnings: Vec::new(),
            }
        }
    };
    let estimator = PluginEstimator {
        options: req.options.clone(),
    };
    match estimator.estimate(sample, report.d_hat) {
        Ok(nuis) => {
            report.nuisance = Some(nuis);
            if let (Some(bl), Some(bu)) = (report.beta_l, report.beta_u) {
                match limit_params(&nuis, bl, bu) {
                    Ok(lp) => {
                        if lp.instability_warning {
                            warnings.push(format!(
                                "curvature b = {} <= 0: Wald and RSS1 procedures are unstable here",
                                lp.b
                            ));
                        }
                        report.limit = Some(lp);
                    }
                    Err(e) => warnings.push(format!("limit constants unavailable: {e}")),
                }
            }
        }
        Err(e) => warnings.push(format!("nuisance estimation failed: {e}")),
    }
    report.warnings = warnings;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiRequest {
    pub model: ModelSpec,
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
    pub subsamples: usize,
    pub seed: u64,
    pub min_side: usize,
    pub nuisance: NuisanceArg,
    pub options: NuisanceOptions,
    pub link: LinkSpec,
}

impl Default for CiRequest {
    fn default() -> Self {
        Self {
            model: ModelSpec::Stump,
            method: Method::Rss2,
            alpha: 0.05,
            gamma: 0.6,
            subsamples: 1000,
            seed: 1,
            min_side: 1,
            nuisance: NuisanceArg::Auto,
            options: NuisanceOptions::default(),
            link: LinkSpec::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub model: String,
    pub n: usize,
    #[serde(flatten)]
    pub set: ConfidenceSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance: Option<NuisanceEstimates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_intervals: Option<WaldIntervals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_risk: Option<Interval>,
}

fn with_context(method: Method, e: Error) -> Error {
    match e {
        Error::Unstable(msg) => Error::Unstable(format!("{method}: {msg}")),
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{method}: {msg}")),
        other => other,
    }
}

pub fn ci_report(sample: &Sample, req: &CiRequest) -> Result<CiReport> {
    ci_report_inner(sample, req).map_err(|e| with_context(req.method, e))
}

fn ci_report_inner(sample: &Sample, req: &CiRequest) -> Result<CiReport> {
    let p_table = QuantileTable::embedded(Dist::ChernoffArgmax);
    let q_table = QuantileTable::embedded(Dist::MaxQ1);
    let n = sample.len();
    if let ModelSpec::Poly(wm) = req.model {
        let problem = ParametricProblem::new(sample, wm, req.min_side)?;
        let fit = problem.fit()?;
        return match req.method {
            Method::Rss2 => {
                let nuis = req.nuisance.resolve(sample, fit.d_hat, &req.options)?;
                let set = rss2_ci_parametric(&problem, &fit, &nuis, req.alpha, &q_table)?;
                Ok(CiReport {
                    model: req.model.to_string(),
                    n,
                    set,
                    nuisance: Some(nuis),
                    level_intervals: None,
                    relative_risk: None,
                })
            }
            Method::Subsample => {
                let spec = SubsampleSpec {
                    gamma: req.gamma,
                    n_subsamples: req.subsamples,
                    seed: req.seed,
                };
                let min_side = req.min_side;
                let fit_fn = move |s: &Sample| Ok(ParametricProblem::new(s, wm, min_side)?.fit()?.d_hat);
                let set = subsample_ci(sample, fit.d_hat, fit_fn, &spec, req.alpha)?;
                Ok(CiReport {
                    model: req.model.to_string(),
                    n,
                    set,
                    nuisance: None,
                    level_intervals: None,
                    relative_risk: None,
                })
            }
            m => Err(Error::InvalidInput(format!(
                "method {m} is available for the stump model only; polynomial models support rss2 and subsample"
            ))),
        };
    }
    let problem = StumpProblem::new(sample, req.min_side)?;
    let fit = problem.fit();
    transform_fit(&fit, req.link)?;
    if req.method == Method::Subsample {
        let spec = SubsampleSpec {
            gamma: req.gamma,
            n_subsamples: req.subsamples,
            seed: req.seed,
        };
        let set = subsample_ci(sample, fit.d_hat, stump_split(req.min_side), &spec, req.alpha)?;
        return Ok(CiReport {
            model: req.model.to_string(),
            n,
            set,
            nuisance: None,
            level_intervals: None,
            relative_risk: None,
        });
    }
    let nuis = req.nuisance.resolve(sample, fit.d_hat, &req.options)?;
    let lp = limit_params(&nuis, fit.beta_l, fit.beta_u)?;
    let mut level_intervals = None;
    let mut relative_risk = None;
    let set = match req.method {
        Method::Wald => {
            level_intervals = Some(wald_cis(&fit, &lp, n, req.alpha, &p_table)?);
            if req.link == LinkSpec::Log {
                relative_risk = Some(relative_risk_ci(&fit, &lp, n, req.alpha, &p_table)?);
            }
            wald_set(&fit, &lp, n, req.alpha, &p_table)?
        }
        Method::Rss1 => rss1_set(&problem, &fit, &lp, req.alpha, &q_table)?,
        Method::Rss2 => rss2_set(&problem, &fit, &lp, req.alpha, &q_table)?,
        Method::Pivot => pivot_set(&problem, &fit, &lp, req.alpha, &p_table)?,
        Method::Subsample => unreachable!(),
    };
    Ok(CiReport {
        model: req.model.to_string(),
        n,
        set,
        nuisance: Some(nuis),
        level_intervals,
        relative_risk,
    })
}

/// Upper-tail quantiles `(level, value)` with `P(X > value) = level`.
pub fn upper_quantiles(table: &QuantileTable, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    levels.iter().map(|&l| Ok((l, table.quantile_at(1.0 - l)?))).collect()
}

pub fn upper_quantiles_tsv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("upper_tail\tquantile\n");
    for (l, q) in rows {
        out.push_str(&format!("{l}\t{q}\n"));
    }
    out
}

/// JSON with every float printed in shortest round-trip form.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::BandwidthPolicy;
    use crate::sim::{generate_sample, ErrorModel};

    #[test]
    fn csv_roundtrip_is_exact() {
        let s = generate_sample(200, ErrorModel::Homoscedastic, 4).unwrap();
        let mut buf = Vec::new();
        write_sample(&mut buf, &s).unwrap();
        assert_eq!(read_sample(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let e = read_sample("x,y\n1,2\n3,abc\n".as_bytes()).unwrap_err();
        assert_eq!(e, Error::Parse { row: 3, msg: "y value `abc` is not a finite number".into() });
        let e = read_sample("x,y\n1,2\n,4\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 3, .. }));
        assert!(matches!(read_sample("a,b\n1,2\n".as_bytes()), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(read_sample("x,y\n1,2,3\n".as_bytes()), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(read_sample("x,y\n1,inf\n2,3\n".as_bytes()), Err(Error::Parse { row: 2, .. })));
        assert!(read_sample("x,y\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn scenario_files() {
        let one = "n = 100\nreps = 3\nerror_model = \"homoscedastic\"\nmethods = [\"wald\", \"rss2\"]\n";
        let s = parse_scenarios(one).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].alpha, 0.05);
        let many = "[[scenarios]]\nn = 100\nreps = 3\nerror_model = \"heteroscedastic\"\nmethods = [\"rss1\"]\n\
                    [[scenarios]]\nn = 50\nreps = 2\nerror_model = \"homoscedastic\"\nmethods = [\"pivot\"]\nseed = 4\n";
        assert_eq!(parse_scenarios(many).unwrap().len(), 2);
        let unknown = format!("{one}bogus_key = 1\n");
        match parse_scenarios(&unknown) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bogus_key"),
            other => panic!("{other:?}"),
        }
        let nested = format!("{one}[subsample]\ngama = 0.5\n");
        assert!(matches!(parse_scenarios(&nested), Err(Error::Config { key, .. }) if key == "gama"));
        assert!(matches!(parse_scenarios("reps = 1"), Err(Error::Config { .. })));
    }

    #[test]
    fn fit_report_roundtrips() {
        let s = generate_sample(300, ErrorModel::Homoscedastic, 8).unwrap();
        let r = fit_report(&s, &FitRequest::default()).unwrap();
        let back: FitReport = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.limit.is_some());
    }

    #[test]
    fn arg_parsing() {
        assert_eq!("stump".parse::<ModelSpec>().unwrap(), ModelSpec::Stump);
        assert_eq!("poly:1,2".parse::<ModelSpec>().unwrap().to_string(), "poly:1,2");
        assert!("tree".parse::<ModelSpec>().is_err());
        assert_eq!(parse_bandwidth("fixed:0.1").unwrap().local, Some(BandwidthPolicy::Fixed(0.1)));
        assert!(parse_bandwidth("fixed:-1").is_err());
        assert!(matches!("values:1,0.5,3.75,0.25".parse::<NuisanceArg>(), Ok(NuisanceArg::Values(_))));
        assert!("values:1,1.5,3.75,0.25".parse::<NuisanceArg>().is_err());
    }
}
