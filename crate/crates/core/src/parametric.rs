//! Two-phase polynomial working models: separate polynomial branches left
//! and right of the split, fitted jointly by least squares over the
//! candidate grid, with the profiled-split (RSS2) confidence set.
//!
//! Branches are fitted on the scaled predictor `u = (x - c) / s` with `c`
//! the sample mean and `s` the largest deviation from it, and each side is
//! solved by SVD of its design matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{rss_threshold, set_from_flags, ConfidenceSet, Method};
use crate::error::{Error, Result};
use crate::limit_process::{maxq1_quantile, QuantileTable};
use crate::nuisance::NuisanceEstimates;
use crate::stump::Sample;

pub const MAX_DEGREE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingModel {
    pub degree_left: usize,
    pub degree_right: usize,
}

impl WorkingModel {
    pub fn new(degree_left: usize, degree_right: usize) -> Result<Self> {
        if degree_left > MAX_DEGREE || degree_right > MAX_DEGREE {
            return Err(Error::InvalidInput(format!(
                "branch degrees are limited to {MAX_DEGREE}"
            )));
        }
        Ok(Self {
            degree_left,
            degree_right,
        })
    }
}

impl fmt::Display for WorkingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "poly:{},{}", self.degree_left, self.degree_right)
    }
}

impl FromStr for WorkingModel {
    type Err = Error;

    /// Parses `kl,ku` (the part after `poly:`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("expected `kl,ku` degrees, got `{s}`"));
        let (l, u) = s.split_once(',').ok_or_else(bad)?;
        let l = l.trim().parse().map_err(|_| bad())?;
        let u = u.trim().parse().map_err(|_| bad())?;
        WorkingModel::new(l, u)
    }
}

/// Polynomial in the scaled predictor `u = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub center: f64,
    pub scale: f64,
    pub coef: Vec<f64>,
}

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        self.coef.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        let mut acc = 0.0;
        for (j, &c) in self.coef.iter().enumerate().skip(1).rev() {
            acc = acc * u + j as f64 * c;
        }
        acc / self.scale
    }

    /// Coefficients in the raw power basis `1, x, x^2, ...`.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let p = self.coef.len();
        let mut raw = vec![0.0; p];
        // (x - c)^j / s^j expanded binomially.
        for (j, &cj) in self.coef.iter().enumerate() {
            let factor = cj / self.scale.powi(j as i32);
            let mut binom = 1.0;
            for i in 0..=j {
                raw[i] += factor * binom * (-self.center).powi((j - i) as i32);
                binom = binom * (j - i) as f64 / (i + 1) as f64;
            }
        }
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub d_hat: f64,
    pub left: Poly,
    pub right: Poly,
    pub rss: f64,
    pub n_left: usize,
}

impl ParametricFit {
    pub fn coef_left(&self) -> Vec<f64> {
        self.left.raw_coefficients()
    }

    pub fn coef_right(&self) -> Vec<f64> {
        self.right.raw_coefficients()
    }

    /// `|Psi_l(d_hat) - Psi_u(d_hat)|`.
    pub fn jump(&self) -> f64 {
        (self.left.eval(self.d_hat) - self.right.eval(self.d_hat)).abs()
    }

    /// Slope of the branch average at `d_hat`.
    pub fn mean_branch_slope(&self) -> f64 {
        (self.left.derivative(self.d_hat) + self.right.derivative(self.d_hat)) / 2.0
    }
}

/// Sorted sample and candidate grid for a polynomial working model.
#[derive(Debug, Clone)]
pub struct ParametricProblem {
    xs: Vec<f64>,
    ys: Vec<f64>,
    model: WorkingModel,
    center: f64,
    scale: f64,
    candidates: Vec<usize>,
}

impl ParametricProblem {
    pub fn new(sample: &Sample, model: WorkingModel, min_side: usize) -> Result<Self> {
        let (xs, ys) = sample.sorted_pairs();
        let n = xs.len();
        if xs[0] == xs[n - 1] {
            return Err(Error::DegenerateSample("all x values are equal".into()));
        }
        let left_min = min_side.max(model.degree_left + 1);
        let right_min = min_side.max(model.degree_right + 1);
        let candidates: Vec<usize> = (1..n)
            .filter(|&k| xs[k - 1] < xs[k] && k >= left_min && n - k >= right_min)
            .collect();
        if candidates.is_empty() {
            return Err(Error::DegenerateSample(format!(
                "no split leaves {left_min} points on the left and {right_min} on the right"
            )));
        }
        let center = xs.iter().sum::<f64>() / n as f64;
        let scale = xs.iter().map(|x| (x - center).abs()).fold(0.0, f64::max);
        Ok(Self {
            xs,
            ys,
            model,
            center,
            scale,
            candidates,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn model(&self) -> WorkingModel {
        self.model
    }

    pub fn candidates(&self) -> Vec<f64> {
        self.candidates.iter().map(|&k| self.xs[k - 1]).collect()
    }

    fn fit_side(&self, xs: &[f64], ys: &[f64], degree: usize) -> Option<Poly> {
        let coef = if degree == 0 {
            vec![ys.iter().sum::<f64>() / ys.len() as f64]
        } else {
            let p = degree + 1;
            if xs.len() < p {
                return None;
            }
            let design = DMatrix::from_fn(xs.len(), p, |i, j| {
                ((xs[i] - self.center) / self.scale).powi(j as i32)
            });
            let svd = design.svd(true, true);
            let smax = svd.singular_values.max();
            if !(svd.singular_values.min() > smax * 1e-10) {
                return None;
            }
            let sol = svd.solve(&DVector::from_column_slice(ys), 0.0).ok()?;
            sol.iter().copied().collect()
        };
        Some(Poly {
            center: self.center,
            scale: self.scale,
            coef,
        })
    }

    /// Branch fits with `k` observations on the left.
    fn fits_at_count(&self, k: usize) -> Result<(Poly, Poly)> {
        let singular = || Error::SingularDesign(format!("branch fit at split {}", self.xs[k - 1]));
        let left = self
            .fit_side(&self.xs[..k], &self.ys[..k], self.model.degree_left)
            .ok_or_else(singular)?;
        let right = self
            .fit_side(&self.xs[k..], &self.ys[k..], self.model.degree_right)
            .ok_or_else(singular)?;
        Ok((left, right))
    }

    fn rss_with(&self, k: usize, left: &Poly, right: &Poly) -> f64 {
        let l: f64 = self.xs[..k]
            .iter()
            .zip(&self.ys[..k])
            .map(|(&x, &y)| (y - left.eval(x)).powi(2))
            .sum();
        let r: f64 = self.xs[k..]
            .iter()
            .zip(&self.ys[k..])
            .map(|(&x, &y)| (y - right.eval(x)).powi(2))
            .sum();
        l + r
    }

    pub fn fit(&self) -> Result<ParametricFit> {
        let fits: Vec<Option<(f64, Poly, Poly)>> = self
            .candidates
            .par_iter()
            .map(|&k| {
                let (l, r) = self.fits_at_count(k).ok()?;
                Some((self.rss_with(k, &l, &r), l, r))
            })
            .collect();
        let mut best: Option<(usize, f64, Poly, Poly)> = None;
        for (&k, f) in self.candidates.iter().zip(fits) {
            if let Some((rss, l, r)) = f {
                if best.as_ref().is_none_or(|b| rss < b.1) {
                    best = Some((k, rss, l, r));
                }
            }
        }
        let (k, rss, left, right) = best.ok_or_else(|| {
            Error::SingularDesign("every candidate split gives a rank-deficient branch".into())
        })?;
        Ok(ParametricFit {
            d_hat: self.xs[k - 1],
            left,
            right,
            rss,
            n_left: k,
        })
    }

    /// RSS2 statistic at `d`: branches fitted at `d` and then frozen while
    /// the split is re-optimized over the grid.
    pub fn rss2(&self, d: f64) -> Result<f64> {
        let k = self.xs.partition_point(|&x| x <= d);
        if k == 0 || k == self.n() {
            return Err(Error::EmptySide(d));
        }
        let (left, right) = self.fits_at_count(k)?;
        Ok(self.rss2_frozen(k, &left, &right))
    }

    fn rss2_frozen(&self, k: usize, left: &Poly, right: &Poly) -> f64 {
        // prefix[j] = criterion with j points on the left, up to a constant.
        let mut prefix = Vec::with_capacity(self.n() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for (&x, &y) in self.xs.iter().zip(&self.ys) {
            acc += (y - left.eval(x)).powi(2) - (y - right.eval(x)).powi(2);
            prefix.push(acc);
        }
        let mut best = prefix[self.candidates[0]];
        for &j in &self.candidates[1..] {
            if prefix[j] < best {
                best = prefix[j];
            }
        }
        (prefix[k] - best).max(0.0)
    }

    /// Constants for the RSS2 threshold, all evaluated at the fitted split.
    pub fn threshold_constants(&self, fit: &ParametricFit, nuis: &NuisanceEstimates) -> Result<ParametricConstants> {
        nuis.validate()?;
        let a = (nuis.sigma2_at_d * nuis.density_at_d).sqrt();
        let jump = fit.jump();
        let b0 = (nuis.fprime_at_d - fit.mean_branch_slope()).abs() * nuis.density_at_d;
        let scale = fit.left.eval(fit.d_hat).abs().max(fit.right.eval(fit.d_hat).abs()).max(1.0);
        if !(jump > 1e-12 * scale) {
            return Err(Error::Unstable(format!(
                "branches meet at the split (jump {jump}); the working model has no discontinuity"
            )));
        }
        if !(b0 > 1e-12) {
            return Err(Error::Unstable(format!(
                "b0 = {b0}: regression slope equals the branch-average slope at the split"
            )));
        }
        Ok(ParametricConstants { a, b0, jump })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricConstants {
    pub a: f64,
    pub b0: f64,
    pub jump: f64,
}

pub fn fit_parametric(sample: &Sample, model: WorkingModel, min_side: usize) -> Result<ParametricFit> {
    ParametricProblem::new(sample, model, min_side)?.fit()
}

pub fn rss2_parametric(sample: &Sample, model: WorkingModel, d: f64) -> Result<f64> {
    ParametricProblem::new(sample, model, 1)?.rss2(d)
}

pub fn rss2_ci_parametric(
    problem: &ParametricProblem,
    fit: &ParametricFit,
    nuis: &NuisanceEstimates,
    alpha: f64,
    q_table: &QuantileTable,
) -> Result<ConfidenceSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let k = problem.threshold_constants(fit, nuis)?;
    let q = maxq1_quantile(alpha, q_table)?;
    let tau = rss_threshold(problem.n(), k.jump, k.a, k.b0, q);
    let grid = problem.candidates();
    let stats: Vec<Option<f64>> = grid.par_iter().map(|&d| problem.rss2(d).ok()).collect();
    let rejected = stats.iter().filter(|s| s.is_none()).count();
    let flags: Vec<bool> = stats.iter().map(|s| s.is_some_and(|v| v <= tau)).collect();
    let diag = BTreeMap::from([
        ("a".to_string(), k.a),
        ("b0".to_string(), k.b0),
        ("jump".to_string(), k.jump),
        ("threshold".to_string(), tau),
        ("degenerate_candidates".to_string(), rejected as f64),
    ]);
    set_from_flags(Method::Rss2, &grid, &flags, fit.d_hat, alpha, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_process::Dist;
    use crate::rng::stream_rng;
    use crate::stump::{fit_stump, rss2_stat, StumpProblem};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_sample(seed: u64, n: usize) -> Sample {
        let mut rng = stream_rng(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = x.iter().map(|&v| (3.0 * v).sin() + 0.3 * rng.random::<f64>()).collect();
        Sample::new(x, y).unwrap()
    }

    fn rel_close(a: f64, b: f64, floor: f64) -> bool {
        (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(floor)
    }

    /// Exhaustive per-candidate least squares via the normal equations in
    /// raw powers of x (independent of the SVD path).
    fn oracle_fit(s: &Sample, dl: usize, du: usize) -> (f64, f64) {
        let mut xs = s.x().to_vec();
        xs.sort_by(f64::total_cmp);
        let mut best = (f64::NAN, f64::INFINITY);
        for &d in &xs[..xs.len() - 1] {
            let side = |left: bool, deg: usize| -> Option<f64> {
                let pts: Vec<(f64, f64)> = s
                    .x()
                    .iter()
                    .zip(s.y())
                    .filter(|(x, _)| (**x <= d) == left)
                    .map(|(x, y)| (*x, *y))
                    .collect();
                if pts.len() < deg + 1 {
                    return None;
                }
                let p = deg + 1;
                let a = DMatrix::from_fn(pts.len(), p, |i, j| pts[i].0.powi(j as i32));
                let y = DVector::from_fn(pts.len(), |i, _| pts[i].1);
                let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * &y))?;
                Some((y - a * beta).norm_squared())
            };
            if let (Some(l), Some(r)) = (side(true, dl), side(false, du)) {
                if l + r < best.1 {
                    best = (d, l + r);
                }
            }
        }
        best
    }

    #[test]
    fn model_parsing() {
        assert_eq!("1,2".parse::<WorkingModel>().unwrap(), WorkingModel::new(1, 2).unwrap());
        assert!("1".parse::<WorkingModel>().is_err());
        assert!("9,0".parse::<WorkingModel>().is_err());
        assert_eq!(WorkingModel::new(0, 3).unwrap().to_string(), "poly:0,3");
    }

    #[test]
    fn poly_helpers() {
        let p = Poly {
            center: 2.0,
            scale: 0.5,
            coef: vec![1.0, -1.0, 0.25],
        };
        let raw = p.raw_coefficients();
        for x in [-1.0, 0.3, 2.0, 5.0] {
            let direct = raw[0] + raw[1] * x + raw[2] * x * x;
            assert!((p.eval(x) - direct).abs() < 1e-10);
            let h = 1e-6;
            let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
            assert!((p.derivative(x) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn degree_zero_reduces_to_stump() {
        for seed in 0..30 {
            let s = random_sample(seed, 5 + seed as usize * 3);
            let wm = WorkingModel::new(0, 0).unwrap();
            let pf = fit_parametric(&s, wm, 1).unwrap();
            let sf = fit_stump(&s, 1).unwrap();
            assert_eq!(pf.d_hat, sf.d_hat);
            assert!(rel_close(pf.coef_left()[0], sf.beta_l, 1e-300));
            assert!(rel_close(pf.coef_right()[0], sf.beta_u, 1e-300));
            assert!(rel_close(pf.rss, sf.rss, 1e-12));
            let prob = ParametricProblem::new(&s, wm, 1).unwrap();
            let floor = 1e-12 * s.y().iter().map(|y| y * y).sum::<f64>();
            for d in prob.candidates() {
                let a = prob.rss2(d).unwrap();
                let b = rss2_stat(&s, d).unwrap();
                assert!(rel_close(a, b, floor), "{d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_two_phase_line() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y = x.iter().map(|&v| if v <= 0.5 { 1.0 + 2.0 * v } else { 4.0 - v }).collect();
        let s = Sample::new(x, y).unwrap();
        let f = fit_parametric(&s, WorkingModel::new(1, 1).unwrap(), 1).unwrap();
        assert!(f.rss < 1e-20);
        assert!((f.d_hat - 0.5).abs() < 0.03);
        let (l, r) = (f.coef_left(), f.coef_right());
        assert!((l[0] - 1.0).abs() < 1e-9 && (l[1] - 2.0).abs() < 1e-9);
        assert!((r[0] - 4.0).abs() < 1e-9 && (r[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_least_squares() {
        for seed in 0..10 {
            let s = random_sample(50 + seed, 25);
            let f = fit_parametric(&s, WorkingModel::new(1, 1).unwrap(), 1).unwrap();
            let (d, rss) = oracle_fit(&s, 1, 1);
            assert_eq!(f.d_hat, d);
            assert!((f.rss - rss).abs() < 1e-9 * (1.0 + rss));
        }
    }

    #[test]
    fn rss2_matches_brute_force() {
        let s = random_sample(77, 30);
        let wm = WorkingModel::new(1, 2).unwrap();
        let prob = ParametricProblem::new(&s, wm, 1).unwrap();
        let fit = prob.fit().unwrap();
        assert_eq!(prob.rss2(fit.d_hat).unwrap(), 0.0);
        let grid = prob.candidates();
        for &d in &grid[2..grid.len() - 3] {
            let (l, r) = prob.fits_at_count(prob.xs.partition_point(|&x| x <= d)).unwrap();
            let crit = |c: f64| -> f64 {
                s.x()
                    .iter()
                    .zip(s.y())
                    .map(|(&x, &y)| (y - if x <= c { l.eval(x) } else { r.eval(x) }).powi(2))
                    .sum()
            };
            let min = grid.iter().map(|&c| crit(c)).fold(f64::INFINITY, f64::min);
            assert!((prob.rss2(d).unwrap() - (crit(d) - min)).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_sides_and_errors() {
        let s = Sample::new(vec![1.0, 1.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let prob = ParametricProblem::new(&s, WorkingModel::new(1, 1).unwrap(), 1).unwrap();
        // Only split at x = 1 leaves two right points; the left branch has a
        // single distinct x and cannot carry a slope.
        assert!(matches!(prob.fit(), Err(Error::SingularDesign(_))));
        assert!(prob.rss2(0.0).is_err());
        let flat = Sample::new(vec![2.0; 6], vec![1.0; 6]).unwrap();
        assert!(fit_parametric(&flat, WorkingModel::new(0, 0).unwrap(), 1).is_err());
    }

    #[test]
    fn parametric_threshold_uses_undivided_b0() {
        let s = random_sample(90, 200);
        let wm = WorkingModel::new(0, 0).unwrap();
        let prob = ParametricProblem::new(&s, wm, 1).unwrap();
        let fit = prob.fit().unwrap();
        let nuis = NuisanceEstimates {
            density_at_d: 1.0,
            cdf_at_d: 0.5,
            fprime_at_d: 3.0,
            sigma2_at_d: 0.1,
        };
        let q = QuantileTable::embedded(Dist::MaxQ1);
        let set = rss2_ci_parametric(&prob, &fit, &nuis, 0.05, &q).unwrap();
        let stump = StumpProblem::new(&s, 1).unwrap().fit();
        let lp = crate::nuisance::limit_params(&nuis, stump.beta_l, stump.beta_u).unwrap();
        let qa = maxq1_quantile(0.05, &q).unwrap();
        let stump_tau = rss_threshold(200, stump.jump(), lp.a, lp.b0, qa);
        let ratio = set.diagnostics["threshold"] / stump_tau;
        assert!((ratio - 0.5f64.cbrt()).abs() < 1e-10, "{ratio}");
        assert!(set.contains(fit.d_hat));
        let flat = NuisanceEstimates {
            fprime_at_d: 0.0,
            ..nuis
        };
        assert!(matches!(rss2_ci_parametric(&prob, &fit, &flat, 0.05, &q), Err(Error::Unstable(_))));
    }

    #[test]
    fn shrinks_with_noise() {
        let q = QuantileTable::embedded(Dist::MaxQ1);
        let wm = WorkingModel::new(1, 1).unwrap();
        let mut widths = Vec::new();
        for noise in [0.1, 0.001] {
            let mut rng = stream_rng(5, 0);
            let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
            let y = x
                .iter()
                .map(|&v| (if v <= 0.5 { v } else { 1.0 + 2.0 * v }) + noise * (rng.random::<f64>() - 0.5))
                .collect();
            let s = Sample::new(x, y).unwrap();
            let prob = ParametricProblem::new(&s, wm, 1).unwrap();
            let fit = prob.fit().unwrap();
            let nuis = NuisanceEstimates {
                density_at_d: 1.0,
                cdf_at_d: 0.5,
                fprime_at_d: 1.5,
                sigma2_at_d: noise * noise / 12.0,
            };
            let set = rss2_ci_parametric(&prob, &fit, &nuis, 0.05, &q).unwrap();
            widths.push(set.longest_component.len());
        }
        assert!(widths[1] < widths[0], "{widths:?}");
        assert!(widths[1] < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn richer_basis_never_fits_worse(seed in 0u64..5000) {
            let s = random_sample(seed, 40);
            // Same grid for all models: each side keeps at least 4 points.
            let rss = |l, u| fit_parametric(&s, WorkingModel::new(l, u).unwrap(), 4).unwrap().rss;
            let r00 = rss(0, 0);
            let r10 = rss(1, 0);
            let r11 = rss(1, 1);
            let r21 = rss(2, 1);
            prop_assert!(r10 <= r00 + 1e-10);
            prop_assert!(r11 <= r10 + 1e-10);
            prop_assert!(r21 <= r11 + 1e-10);
        }
    }
}
