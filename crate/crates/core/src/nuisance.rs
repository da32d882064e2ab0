//! Plug-in estimates of the design density, distribution function, slope
//! and conditional variance of the regression at the split, and assembly of
//! the limit constants that calibrate every analytic confidence procedure.
//!
//! Smoothing uses a Gaussian kernel throughout. Local polynomial fits are
//! solved on the scaled basis `((x - d) / h)^j`, which keeps the normal
//! equations well conditioned; the small system is solved by SVD with an
//! explicit rank check.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};
use crate::stump::Sample;

/// Floor applied to variance estimates.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Kernel support used by local fits, in bandwidth units.
const WINDOW: f64 = 6.0;

const GRID_SIZE: usize = 20;

/// How a smoothing bandwidth is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// Leave-one-out cross-validation over the given bandwidths.
    CrossValidated(Vec<f64>),
    /// Normal-reference rule `1.06 min(sd, IQR/1.34) n^(-1/5)`.
    RuleOfThumb,
}

impl BandwidthPolicy {
    /// Cross-validation over a log-spaced grid from 2% to 50% of the range.
    pub fn cv_default(x: &[f64]) -> Self {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        BandwidthPolicy::CrossValidated(log_grid((hi - lo) * 0.02, (hi - lo) * 0.5, GRID_SIZE))
    }

    fn validate(&self) -> Result<()> {
        match self {
            BandwidthPolicy::Fixed(h) if !(*h > 0.0 && h.is_finite()) => {
                Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")))
            }
            BandwidthPolicy::CrossValidated(grid)
                if grid.is_empty() || grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) =>
            {
                Err(Error::InvalidInput("bandwidth grid must be nonempty and positive".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Plug-in estimates at the split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub density_at_d: f64,
    pub cdf_at_d: f64,
    pub fprime_at_d: f64,
    pub sigma2_at_d: f64,
}

impl NuisanceEstimates {
    pub fn validate(&self) -> Result<()> {
        if !(self.density_at_d > 0.0 && self.density_at_d.is_finite()) {
            return Err(Error::NonpositiveEstimate(format!("density {}", self.density_at_d)));
        }
        if !(self.cdf_at_d > 0.0 && self.cdf_at_d < 1.0) {
            return Err(Error::InvalidInput(format!(
                "distribution function {} not in (0, 1)",
                self.cdf_at_d
            )));
        }
        if !(self.sigma2_at_d > 0.0 && self.sigma2_at_d.is_finite()) {
            return Err(Error::NonpositiveEstimate(format!("variance {}", self.sigma2_at_d)));
        }
        if !self.fprime_at_d.is_finite() {
            return Err(Error::InvalidInput("non-finite slope".into()));
        }
        Ok(())
    }
}

/// Constants of the cube-root limit: `Q(t) = a W(t) - b t^2`, the
/// frozen-level curvature `b0`, and the level slopes `c1`, `c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub a: f64,
    pub b: f64,
    pub b0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `beta_l - beta_u`.
    pub jump: f64,
    /// Set when `b <= 0`; Wald and RSS1 procedures refuse such constants.
    pub instability_warning: bool,
}

pub fn limit_params(nuis: &NuisanceEstimates, beta_l: f64, beta_u: f64) -> Result<LimitParams> {
    nuis.validate()?;
    if beta_l == beta_u {
        return Err(Error::DegenerateLevels(beta_l));
    }
    let p = nuis.density_at_d;
    let cdf = nuis.cdf_at_d;
    let jump = beta_l - beta_u;
    let a = (nuis.sigma2_at_d * p).sqrt();
    let b0 = nuis.fprime_at_d.abs() * p / 2.0;
    let b = b0 - jump.abs() * p * p * (1.0 / cdf + 1.0 / (1.0 - cdf)) / 8.0;
    let c1 = p * (beta_u - beta_l) / (2.0 * cdf);
    let c2 = p * (beta_u - beta_l) / (2.0 * (1.0 - cdf));
    Ok(LimitParams {
        a,
        b,
        b0,
        c1,
        c2,
        jump,
        instability_warning: b <= 0.0,
    })
}

pub fn ecdf_at(x: &[f64], d: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().filter(|&&v| v <= d).count() as f64 / x.len() as f64
}

fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sorted = sorted_copy(x);
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * n.powf(-0.2)
}

fn kde(x: &[f64], d: f64, h: f64) -> f64 {
    x.iter().map(|&xi| gauss((d - xi) / h)).sum::<f64>() * INV_SQRT_2PI / (x.len() as f64 * h)
}

/// Least-squares cross-validation score of a Gaussian KDE.
fn lscv_score(x: &[f64], h: f64) -> f64 {
    let n = x.len() as f64;
    let pairs: Vec<(f64, f64)> = x
        .par_iter()
        .map(|&xi| {
            let mut conv = 0.0;
            let mut loo = 0.0;
            for &xj in x {
                let u = (xi - xj) / h;
                conv += (-0.25 * u * u).exp();
                loo += gauss(u);
            }
            (conv, loo - 1.0)
        })
        .collect();
    let conv: f64 = pairs.iter().map(|p| p.0).sum();
    let loo: f64 = pairs.iter().map(|p| p.1).sum();
    conv * INV_SQRT_2PI / (2f64.sqrt() * n * n * h) - 2.0 * loo * INV_SQRT_2PI / (n * (n - 1.0) * h)
}

/// Gaussian kernel density estimate at `d`.
pub fn density_at(x: &[f64], d: f64, policy: &BandwidthPolicy) -> Result<f64> {
    policy.validate()?;
    if x.len() < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: x.len() });
    }
    let h = match policy {
        BandwidthPolicy::Fixed(h) => *h,
        BandwidthPolicy::RuleOfThumb => silverman_bandwidth(x),
        BandwidthPolicy::CrossValidated(grid) => {
            let mut best = (f64::INFINITY, grid[0]);
            for &h in grid {
                let s = lscv_score(x, h);
                if s < best.0 {
                    best = (s, h);
                }
            }
            best.1
        }
    };
    if !(h > 0.0) {
        return Err(Error::NonpositiveEstimate(format!(
            "bandwidth {h} from a sample without spread"
        )));
    }
    let est = kde(x, d, h);
    if !(est > 0.0) {
        return Err(Error::NonpositiveEstimate(format!("density at {d} underflows")));
    }
    Ok(est)
}

/// A local polynomial fit at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub value: f64,
    pub slope: f64,
    pub bandwidth: f64,
}

/// Sorted data for repeated local polynomial smoothing.
#[derive(Debug, Clone)]
pub struct LocalSmoother {
    xs: Vec<f64>,
    ys: Vec<f64>,
    degree: usize,
}

struct PointSolve {
    /// Coefficients on the scaled basis.
    coef: Vec<f64>,
    /// Diagonal entry of the inverse Gram matrix for the intercept.
    inv00: f64,
}

impl LocalSmoother {
    pub fn new(x: &[f64], y: &[f64], degree: usize) -> Result<Self> {
        let needed = 5 * (degree + 1);
        if x.len() < needed {
            return Err(Error::TooFewPoints { needed, got: x.len() });
        }
        let sample = Sample::new(x.to_vec(), y.to_vec())?;
        let (xs, ys) = sample.sorted_pairs();
        Ok(Self { xs, ys, degree })
    }

    fn solve_at(&self, d: f64, h: f64) -> Option<PointSolve> {
        let p = self.degree + 1;
        let lo = self.xs.partition_point(|&x| x < d - WINDOW * h);
        let hi = self.xs.partition_point(|&x| x <= d + WINDOW * h);
        if hi - lo < p {
            return None;
        }
        let mut moments = vec![0.0; 2 * p - 1];
        let mut rhs = vec![0.0; p];
        for i in lo..hi {
            let u = (self.xs[i] - d) / h;
            let w = gauss(u);
            let mut pow = w;
            for (j, m) in moments.iter_mut().enumerate() {
                *m += pow;
                if j < p {
                    rhs[j] += pow * self.ys[i];
                }
                pow *= u;
            }
        }
        let gram = DMatrix::from_fn(p, p, |r, c| moments[r + c]);
        let svd = gram.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin < smax * 1e-12 {
            return None;
        }
        let coef = svd.solve(&DVector::from_vec(rhs), 0.0).ok()?;
        let e0 = DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let inv0 = svd.solve(&e0, 0.0).ok()?;
        Some(PointSolve {
            coef: coef.iter().copied().collect(),
            inv00: inv0[0],
        })
    }

    /// Leave-one-out mean squared prediction error at bandwidth `h`, or
    /// `None` when any point's fit is singular.
    fn loo_score(&self, h: f64) -> Option<f64> {
        let errs: Vec<Option<f64>> = (0..self.xs.len())
            .into_par_iter()
            .map(|i| {
                let s = self.solve_at(self.xs[i], h)?;
                let lev = s.inv00;
                if !(lev < 1.0 - 1e-10) {
                    return None;
                }
                let r = (self.ys[i] - s.coef[0]) / (1.0 - lev);
                Some(r * r)
            })
            .collect();
        let mut total = 0.0;
        for e in errs {
            total += e?;
        }
        Some(total / self.xs.len() as f64)
    }

    pub fn select_bandwidth(&self, policy: &BandwidthPolicy) -> Result<f64> {
        policy.validate()?;
        match policy {
            BandwidthPolicy::Fixed(h) => Ok(*h),
            BandwidthPolicy::RuleOfThumb => Ok(silverman_bandwidth(&self.xs)),
            BandwidthPolicy::CrossValidated(grid) => {
                let mut best: Option<(f64, f64)> = None;
                for &h in grid {
                    if let Some(score) = self.loo_score(h) {
                        if best.is_none_or(|b| score < b.0) {
                            best = Some((score, h));
                        }
                    }
                }
                best.map(|b| b.1).ok_or_else(|| {
                    Error::SingularDesign("every bandwidth in the grid gives a singular fit".into())
                })
            }
        }
    }

    pub fn fit_at(&self, d: f64, h: f64) -> Result<LocalFit> {
        let s = self
            .solve_at(d, h)
            .ok_or_else(|| Error::SingularDesign(format!("local fit at {d} with bandwidth {h}")))?;
        Ok(LocalFit {
            value: s.coef[0],
            slope: if self.degree >= 1 { s.coef[1] / h } else { 0.0 },
            bandwidth: h,
        })
    }

    pub fn fit(&self, d: f64, policy: &BandwidthPolicy) -> Result<LocalFit> {
        let h = self.select_bandwidth(policy)?;
        self.fit_at(d, h)
    }

    /// Fitted values at every (sorted) design point, with the observations.
    fn fitted_everywhere(&self, h: f64) -> Result<Vec<(f64, f64, f64)>> {
        let out: Vec<Result<(f64, f64, f64)>> = (0..self.xs.len())
            .into_par_iter()
            .map(|i| Ok((self.xs[i], self.ys[i], self.fit_at(self.xs[i], h)?.value)))
            .collect();
        out.into_iter().collect()
    }
}

fn check_inside(x: &[f64], d: f64) -> Result<()> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if d < lo || d > hi {
        return Err(Error::InvalidInput(format!(
            "evaluation point {d} outside the observed range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Local polynomial estimate of `(f(d), f'(d))`.
pub fn local_poly_fit(
    sample: &Sample,
    d: f64,
    degree: usize,
    policy: &BandwidthPolicy,
) -> Result<(f64, f64)> {
    if degree == 0 {
        return Err(Error::InvalidInput("local fit degree must be at least 1".into()));
    }
    check_inside(sample.x(), d)?;
    let fit = LocalSmoother::new(sample.x(), sample.y(), degree)?.fit(d, policy)?;
    Ok((fit.value, fit.slope))
}

/// Conditional variance at `d`: local-linear smoothing of squared
/// residuals from a local polynomial fit of the given degree.
pub fn sigma2_at_with_degree(
    sample: &Sample,
    d: f64,
    degree: usize,
    policy: &BandwidthPolicy,
) -> Result<f64> {
    check_inside(sample.x(), d)?;
    let smoother = LocalSmoother::new(sample.x(), sample.y(), degree)?;
    let h = smoother.select_bandwidth(policy)?;
    let fitted = smoother.fitted_everywhere(h)?;
    let xs: Vec<f64> = fitted.iter().map(|t| t.0).collect();
    let r2: Vec<f64> = fitted.iter().map(|t| (t.1 - t.2).powi(2)).collect();
    let var_smoother = LocalSmoother::new(&xs, &r2, 1)?;
    let est = var_smoother.fit(d, policy)?.value;
    Ok(est.max(SIGMA2_FLOOR))
}

pub fn sigma2_at(sample: &Sample, d: f64, policy: &BandwidthPolicy) -> Result<f64> {
    sigma2_at_with_degree(sample, d, 2, policy)
}

/// Options for the plug-in estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceOptions {
    pub degree: usize,
    pub density: BandwidthPolicy,
    /// `None` selects cross-validation over the default grid.
    pub local: Option<BandwidthPolicy>,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            degree: 2,
            density: BandwidthPolicy::RuleOfThumb,
            local: None,
        }
    }
}

impl NuisanceOptions {
    pub fn with_fixed_bandwidth(h: f64) -> Self {
        Self {
            degree: 2,
            density: BandwidthPolicy::Fixed(h),
            local: Some(BandwidthPolicy::Fixed(h)),
        }
    }
}

/// Source of nuisance estimates for a sample at a split.
pub trait NuisanceSource: Sync {
    fn estimate(&self, sample: &Sample, d: f64) -> Result<NuisanceEstimates>;
}

/// Kernel plug-in estimator.
#[derive(Debug, Clone, Default)]
pub struct PluginEstimator {
    pub options: NuisanceOptions,
}

impl NuisanceSource for PluginEstimator {
    fn estimate(&self, sample: &Sample, d: f64) -> Result<NuisanceEstimates> {
        let opts = &self.options;
        let local = opts
            .local
            .clone()
            .unwrap_or_else(|| BandwidthPolicy::cv_default(sample.x()));
        check_inside(sample.x(), d)?;
        let density_at_d = density_at(sample.x(), d, &opts.density)?;
        let cdf_at_d = ecdf_at(sample.x(), d);
        let smoother = LocalSmoother::new(sample.x(), sample.y(), opts.degree)?;
        let h = smoother.select_bandwidth(&local)?;
        let fprime_at_d = smoother.fit_at(d, h)?.slope;
        let sigma2_at_d = sigma2_at_with_degree(sample, d, opts.degree, &local)?;
        let est = NuisanceEstimates {
            density_at_d,
            cdf_at_d,
            fprime_at_d,
            sigma2_at_d,
        };
        est.validate()?;
        Ok(est)
    }
}
