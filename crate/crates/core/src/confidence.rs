//! Confidence procedures for the split point: centered Wald limits, RSS
//! inversion with profiled levels (RSS1) or with a re-estimated split
//! (RSS2), the frozen-level pivot, and the subsampling interval.
//!
//! Inversion procedures scan the candidate grid; accepted candidates are
//! merged into maximal runs of consecutive grid points and each run is
//! reported as the closed interval between its first and last candidate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_process::{chernoff_quantile, maxq1_quantile, QuantileTable};
use crate::nuisance::LimitParams;
use crate::rng::stream_rng;
use crate::stats::{quantile_sorted, sorted_copy};
use crate::stump::{Sample, StumpFit, StumpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wald,
    Rss1,
    Rss2,
    Pivot,
    Subsample,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Subsample,
        Method::Wald,
        Method::Rss1,
        Method::Rss2,
        Method::Pivot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Wald => "wald",
            Method::Rss1 => "rss1",
            Method::Rss2 => "rss2",
            Method::Pivot => "pivot",
            Method::Subsample => "subsample",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn centered(center: f64, half: f64) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub method: Method,
    pub level: f64,
    pub accepted: Vec<Interval>,
    pub longest_component: Interval,
    pub point_estimate: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ConfidenceSet {
    fn single(method: Method, alpha: f64, iv: Interval, point: f64, diag: BTreeMap<String, f64>) -> Self {
        Self {
            method,
            level: 1.0 - alpha,
            accepted: vec![iv],
            longest_component: iv,
            point_estimate: point,
            diagnostics: diag,
        }
    }

    /// Hull of the entire accepted set.
    pub fn hull(&self) -> Interval {
        Interval::new(
            self.accepted.first().map_or(f64::NAN, |i| i.lo),
            self.accepted.last().map_or(f64::NAN, |i| i.hi),
        )
    }

    pub fn contains(&self, v: f64) -> bool {
        self.accepted.iter().any(|i| i.contains(v))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Merges accepted grid flags into maximal runs.
pub fn components(grid: &[f64], accepted: &[bool]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=grid.len() {
        let on = i < grid.len() && accepted[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Interval::new(grid[s], grid[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Longest interval, leftmost on ties.
pub fn longest(intervals: &[Interval]) -> Option<Interval> {
    let mut best: Option<Interval> = None;
    for iv in intervals {
        if best.is_none_or(|b| iv.len() > b.len()) {
            best = Some(*iv);
        }
    }
    best
}

fn scan_set(
    method: Method,
    problem: &StumpProblem,
    fit: &StumpFit,
    alpha: f64,
    accepted: Vec<bool>,
    diagnostics: BTreeMap<String, f64>,
) -> Result<ConfidenceSet> {
    set_from_flags(method, &problem.candidates(), &accepted, fit.d_hat, alpha, diagnostics)
}

/// Assembles a confidence set from per-candidate acceptance flags.
pub fn set_from_flags(
    method: Method,
    grid: &[f64],
    flags: &[bool],
    point_estimate: f64,
    alpha: f64,
    diagnostics: BTreeMap<String, f64>,
) -> Result<ConfidenceSet> {
    let accepted = components(grid, flags);
    let longest_component = longest(&accepted).ok_or_else(|| Error::EmptySet(method.to_string()))?;
    Ok(ConfidenceSet {
        method,
        level: 1.0 - alpha,
        accepted,
        longest_component,
        point_estimate,
        diagnostics,
    })
}

fn require_stable(lp: &LimitParams, what: &str) -> Result<()> {
    if lp.b > 0.0 {
        Ok(())
    } else {
        Err(Error::Unstable(format!(
            "{what}: curvature b = {} <= 0; the regression is too flat at the split \
             relative to the jump, so the limit is undefined",
            lp.b
        )))
    }
}

fn require_b0(lp: &LimitParams, what: &str) -> Result<()> {
    if lp.b0 > 0.0 {
        Ok(())
    } else {
        Err(Error::Unstable(format!(
            "{what}: b0 = {} (estimated slope at the split is zero)",
            lp.b0
        )))
    }
}

/// Half-width `n^{-1/3} (a/b)^{2/3} p_{alpha/2}` of the Wald limits.
pub fn wald_delta(lp: &LimitParams, n: usize, alpha: f64, p_table: &QuantileTable) -> Result<f64> {
    check_alpha(alpha)?;
    require_stable(lp, "wald")?;
    let p = chernoff_quantile(alpha / 2.0, p_table)?;
    Ok(wald_delta_with_quantile(lp, n, p))
}

pub fn wald_delta_with_quantile(lp: &LimitParams, n: usize, p_half: f64) -> f64 {
    (n as f64).powf(-1.0 / 3.0) * (lp.a / lp.b).powf(2.0 / 3.0) * p_half
}

/// Simultaneous Wald limits for both levels and the split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldIntervals {
    pub beta_l: Interval,
    pub beta_u: Interval,
    pub split: Interval,
    pub delta: f64,
}

pub fn wald_cis_with_quantile(fit: &StumpFit, lp: &LimitParams, n: usize, p_half: f64) -> Result<WaldIntervals> {
    require_stable(lp, "wald")?;
    let delta = wald_delta_with_quantile(lp, n, p_half);
    Ok(WaldIntervals {
        beta_l: Interval::centered(fit.beta_l, (lp.c1 * delta).abs()),
        beta_u: Interval::centered(fit.beta_u, (lp.c2 * delta).abs()),
        split: Interval::centered(fit.d_hat, delta),
        delta,
    })
}

pub fn wald_cis(
    fit: &StumpFit,
    lp: &LimitParams,
    n: usize,
    alpha: f64,
    p_table: &QuantileTable,
) -> Result<WaldIntervals> {
    check_alpha(alpha)?;
    require_stable(lp, "wald")?;
    let p = chernoff_quantile(alpha / 2.0, p_table)?;
    wald_cis_with_quantile(fit, lp, n, p)
}

pub fn wald_set(
    fit: &StumpFit,
    lp: &LimitParams,
    n: usize,
    alpha: f64,
    p_table: &QuantileTable,
) -> Result<ConfidenceSet> {
    let w = wald_cis(fit, lp, n, alpha, p_table)?;
    let mut diag = base_diagnostics(lp);
    diag.insert("delta".into(), w.delta);
    Ok(ConfidenceSet::single(Method::Wald, alpha, w.split, fit.d_hat, diag))
}

fn base_diagnostics(lp: &LimitParams) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("a".to_string(), lp.a),
        ("b".to_string(), lp.b),
        ("b0".to_string(), lp.b0),
        ("c1".to_string(), lp.c1),
        ("c2".to_string(), lp.c2),
    ])
}

/// `2 n^{1/3} |jump| a (a/curv)^{1/3} q`.
pub fn rss_threshold(n: usize, jump: f64, a: f64, curvature: f64, q: f64) -> f64 {
    2.0 * (n as f64).cbrt() * jump.abs() * a * (a / curvature).cbrt() * q
}

pub fn rss1_set(
    problem: &StumpProblem,
    fit: &StumpFit,
    lp: &LimitParams,
    alpha: f64,
    q_table: &QuantileTable,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    require_stable(lp, "rss1")?;
    let q = maxq1_quantile(alpha, q_table)?;
    let tau = rss_threshold(problem.n(), fit.jump(), lp.a, lp.b, q);
    rss1_set_with_threshold(problem, fit, alpha, tau, base_diagnostics(lp))
}

pub fn rss1_set_with_threshold(
    problem: &StumpProblem,
    fit: &StumpFit,
    alpha: f64,
    tau: f64,
    mut diag: BTreeMap<String, f64>,
) -> Result<ConfidenceSet> {
    let accepted: Vec<bool> = problem
        .candidates()
        .iter()
        .map(|&d| problem.rss1(d, fit).map(|s| s <= tau))
        .collect::<Result<_>>()?;
    diag.insert("threshold".into(), tau);
    scan_set(Method::Rss1, problem, fit, alpha, accepted, diag)
}

pub fn rss2_set(
    problem: &StumpProblem,
    fit: &StumpFit,
    lp: &LimitParams,
    alpha: f64,
    q_table: &QuantileTable,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    require_b0(lp, "rss2")?;
    let q = maxq1_quantile(alpha, q_table)?;
    let tau = rss_threshold(problem.n(), fit.jump(), lp.a, lp.b0, q);
    rss2_set_with_threshold(problem, fit, alpha, tau, base_diagnostics(lp))
}

pub fn rss2_set_with_threshold(
    problem: &StumpProblem,
    fit: &StumpFit,
    alpha: f64,
    tau: f64,
    mut diag: BTreeMap<String, f64>,
) -> Result<ConfidenceSet> {
    let grid = problem.candidates();
    let stats: Vec<Option<f64>> = grid.par_iter().map(|&d| problem.rss2(d).ok()).collect();
    let rejected = stats.iter().filter(|s| s.is_none()).count();
    let accepted = stats.iter().map(|s| s.is_some_and(|v| v <= tau)).collect();
    diag.insert("threshold".into(), tau);
    diag.insert("degenerate_candidates".into(), rejected as f64);
    scan_set(Method::Rss2, problem, fit, alpha, accepted, diag)
}

pub fn pivot_set(
    problem: &StumpProblem,
    fit: &StumpFit,
    lp: &LimitParams,
    alpha: f64,
    p_table: &QuantileTable,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    require_b0(lp, "pivot")?;
    if fit.beta_l == fit.beta_u {
        return Err(Error::DegenerateLevels(fit.beta_l));
    }
    let p = chernoff_quantile(alpha / 2.0, p_table)?;
    let radius = (problem.n() as f64).powf(-1.0 / 3.0) * (lp.a / lp.b0).powf(2.0 / 3.0) * p;
    pivot_set_with_radius(problem, fit, alpha, radius, base_diagnostics(lp))
}

pub fn pivot_set_with_radius(
    problem: &StumpProblem,
    fit: &StumpFit,
    alpha: f64,
    radius: f64,
    mut diag: BTreeMap<String, f64>,
) -> Result<ConfidenceSet> {
    let grid = problem.candidates();
    let dev: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&d| {
            let (bl, bu) = problem.profile_levels(d).ok()?;
            let dd = problem.profiled_dhat(bl, bu).ok()?;
            Some((dd - d).abs())
        })
        .collect();
    let rejected = dev.iter().filter(|s| s.is_none()).count();
    let accepted = dev.iter().map(|s| s.is_some_and(|v| v <= radius)).collect();
    diag.insert("radius".into(), radius);
    diag.insert("degenerate_candidates".into(), rejected as f64);
    scan_set(Method::Pivot, problem, fit, alpha, accepted, diag)
}

/// Block exponent, number of subsamples and seed for subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    pub gamma: f64,
    pub n_subsamples: usize,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn block_size(&self, n: usize) -> usize {
        (n as f64).powf(self.gamma).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.n_subsamples < 100 {
            return Err(Error::InvalidInput(format!(
                "at least 100 subsamples required, got {}",
                self.n_subsamples
            )));
        }
        Ok(())
    }
}

/// Index sets of the subsamples; a pure function of `(seed, n, m, B)`.
pub fn subsample_indices(seed: u64, n: usize, m: usize, count: usize) -> Vec<Vec<usize>> {
    (0..count as u64)
        .map(|b| index::sample(&mut stream_rng(seed, b), n, m).into_vec())
        .collect()
}

/// Subsampling interval from the spread of `m^{1/3}(d*_m - d_hat)`.
pub fn subsample_ci<F>(
    sample: &Sample,
    d_hat: f64,
    fit_fn: F,
    spec: &SubsampleSpec,
    alpha: f64,
) -> Result<ConfidenceSet>
where
    F: Fn(&Sample) -> Result<f64> + Sync,
{
    check_alpha(alpha)?;
    spec.validate()?;
    let n = sample.len();
    let m = spec.block_size(n);
    if m < 2 {
        return Err(Error::BlockTooSmall { m, n });
    }
    if m >= n {
        return Err(Error::BlockTooLarge { m, n });
    }
    let scale = (m as f64).cbrt();
    let draws: Vec<Result<f64>> = (0..spec.n_subsamples as u64)
        .into_par_iter()
        .map(|b| {
            let idx = index::sample(&mut stream_rng(spec.seed, b), n, m).into_vec();
            let sub = sample.subset(&idx)?;
            Ok(scale * (fit_fn(&sub)? - d_hat))
        })
        .collect();
    let draws: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
    let sorted = sorted_copy(&draws);
    let t_lo = quantile_sorted(&sorted, alpha / 2.0);
    let t_hi = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    let rate = (n as f64).powf(-1.0 / 3.0);
    let iv = Interval::new(d_hat - rate * t_hi, d_hat - rate * t_lo);
    let diag = BTreeMap::from([
        ("gamma".to_string(), spec.gamma),
        ("block_size".to_string(), m as f64),
        ("subsamples".to_string(), spec.n_subsamples as f64),
        ("t_lo".to_string(), t_lo),
        ("t_hi".to_string(), t_hi),
    ]);
    Ok(ConfidenceSet::single(Method::Subsample, alpha, iv, d_hat, diag))
}

/// Stump split estimator for use with [`subsample_ci`].
pub fn stump_split(min_side: usize) -> impl Fn(&Sample) -> Result<f64> + Sync {
    move |s: &Sample| Ok(StumpProblem::new(s, min_side)?.fit().d_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_process::{Dist, Provenance};
    use crate::nuisance::{limit_params, NuisanceEstimates};
    use crate::stump::oracle;
    use rand::Rng;

    fn sigmoid_sample(seed: u64, n: usize) -> Sample {
        let mut rng = stream_rng(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = x
            .iter()
            .map(|&v| {
                let e = (15.0 * (v - 0.5)).exp();
                e / (1.0 + e) + 0.5 * (rng.random::<f64>() - 0.5) * 3.4
            })
            .collect();
        Sample::new(x, y).unwrap()
    }

    fn truth_lp() -> LimitParams {
        let nuis = NuisanceEstimates {
            density_at_d: 1.0,
            cdf_at_d: 0.5,
            fprime_at_d: 3.75,
            sigma2_at_d: 0.25,
        };
        limit_params(&nuis, 0.092, 0.908).unwrap()
    }

    fn tables() -> (QuantileTable, QuantileTable) {
        (
            QuantileTable::embedded(Dist::ChernoffArgmax),
            QuantileTable::embedded(Dist::MaxQ1),
        )
    }

    fn table_with(dist: Dist, value: f64) -> QuantileTable {
        QuantileTable {
            dist,
            pairs: vec![(0.001, value), (0.999, value)],
            provenance: Provenance::Embedded,
        }
    }

    #[test]
    fn component_merging() {
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let c = components(&g, &[true, true, false, true, false, true]);
        assert_eq!(c, vec![Interval::new(1.0, 2.0), Interval::new(4.0, 4.0), Interval::new(6.0, 6.0)]);
        assert_eq!(longest(&c), Some(Interval::new(1.0, 2.0)));
        let tie = [Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)];
        assert_eq!(longest(&tie), Some(tie[0]));
        assert!(components(&g, &[false; 6]).is_empty());
    }

    #[test]
    fn wald_matches_hand_computation() {
        let lp = LimitParams {
            a: 0.5,
            b: 1.467,
            ..truth_lp()
        };
        let fit = StumpFit {
            d_hat: 0.5,
            beta_l: 0.09,
            beta_u: 0.91,
            rss: 1.0,
            n_left: 500,
        };
        let w = wald_cis_with_quantile(&fit, &lp, 1000, 0.998).unwrap();
        assert!((w.delta - 0.0487).abs() < 5e-5, "{}", w.delta);
        assert!((w.split.len() - 0.0974).abs() < 1e-4);
        assert!((w.beta_l.len() - 2.0 * lp.c1 * w.delta).abs() < 1e-12);
        let zero = wald_cis_with_quantile(&fit, &lp, 1000, 0.0).unwrap();
        assert_eq!(zero.split, Interval::new(0.5, 0.5));
        assert_eq!(zero.beta_u, Interval::new(0.91, 0.91));
        let flat = LimitParams { b: -0.1, ..lp };
        assert!(matches!(wald_cis_with_quantile(&fit, &flat, 1000, 1.0), Err(Error::Unstable(_))));
        let (p, _) = tables();
        assert!(matches!(wald_cis(&fit, &flat, 1000, 0.05, &p), Err(Error::Unstable(_))));
    }

    #[test]
    fn point_estimate_always_accepted() {
        let (p, q) = tables();
        let lp = truth_lp();
        for seed in 0..5 {
            let s = sigmoid_sample(seed, 200);
            let prob = StumpProblem::new(&s, 1).unwrap();
            let fit = prob.fit();
            for alpha in [0.01, 0.05, 0.5, 0.9] {
                for set in [
                    rss1_set(&prob, &fit, &lp, alpha, &q).unwrap(),
                    rss2_set(&prob, &fit, &lp, alpha, &q).unwrap(),
                    pivot_set(&prob, &fit, &lp, alpha, &p).unwrap(),
                ] {
                    assert!(set.contains(fit.d_hat), "{:?}", set.method);
                    assert!(set.accepted.contains(&set.longest_component));
                    assert!(set.accepted.windows(2).all(|w| w[0].hi < w[1].lo));
                }
            }
        }
    }

    #[test]
    fn huge_thresholds_accept_everything() {
        let s = sigmoid_sample(3, 100);
        let prob = StumpProblem::new(&s, 1).unwrap();
        let fit = prob.fit();
        let lp = truth_lp();
        let grid = prob.candidates();
        let full = Interval::new(grid[0], *grid.last().unwrap());
        let q = table_with(Dist::MaxQ1, 1e9);
        let p = table_with(Dist::ChernoffArgmax, 1e9);
        assert_eq!(rss1_set(&prob, &fit, &lp, 0.05, &q).unwrap().accepted, vec![full]);
        assert_eq!(rss2_set(&prob, &fit, &lp, 0.05, &q).unwrap().accepted, vec![full]);
        assert_eq!(pivot_set(&prob, &fit, &lp, 0.05, &p).unwrap().accepted, vec![full]);
    }

    #[test]
    fn nesting_across_levels() {
        let (p, q) = tables();
        let lp = truth_lp();
        for seed in 10..14 {
            let s = sigmoid_sample(seed, 150);
            let prob = StumpProblem::new(&s, 1).unwrap();
            let fit = prob.fit();
            type Build = fn(&StumpProblem, &StumpFit, &LimitParams, f64, &QuantileTable) -> Result<ConfidenceSet>;
            let builders: [(Build, &QuantileTable); 3] = [(rss1_set, &q), (rss2_set, &q), (pivot_set, &p)];
            for (build, table) in builders {
                let wide = build(&prob, &fit, &lp, 0.01, table).unwrap();
                let narrow = build(&prob, &fit, &lp, 0.05, table).unwrap();
                for d in prob.candidates() {
                    if narrow.contains(d) {
                        assert!(wide.contains(d));
                    }
                }
            }
        }
    }

    #[test]
    fn pivot_matches_brute_force() {
        let s = sigmoid_sample(21, 40);
        let prob = StumpProblem::new(&s, 1).unwrap();
        let fit = prob.fit();
        let radius = 0.08;
        let set = pivot_set_with_radius(&prob, &fit, 0.05, radius, BTreeMap::new()).unwrap();
        for d in prob.candidates() {
            let (bl, bu) = oracle::side_means(&s, d);
            let dd = oracle::best_frozen(&s, bl, bu);
            assert_eq!(set.contains(d), (dd - d).abs() <= radius, "{d}");
        }
    }

    #[test]
    fn rss_sets_match_brute_force() {
        let s = sigmoid_sample(22, 40);
        let prob = StumpProblem::new(&s, 1).unwrap();
        let fit = prob.fit();
        let tau = 0.5;
        let s1 = rss1_set_with_threshold(&prob, &fit, 0.05, tau, BTreeMap::new()).unwrap();
        let s2 = rss2_set_with_threshold(&prob, &fit, 0.05, tau, BTreeMap::new()).unwrap();
        for d in prob.candidates() {
            let (bl, bu) = oracle::side_means(&s, d);
            let r1 = oracle::criterion(&s, bl, bu, d) - fit.rss;
            assert_eq!(s1.contains(d), r1 <= tau);
            assert_eq!(s2.contains(d), oracle::rss2(&s, d) <= tau);
        }
    }

    #[test]
    fn shift_equivariance() {
        let (p, q) = tables();
        let lp = truth_lp();
        let s = sigmoid_sample(31, 120);
        let c = 4.0;
        let shifted = Sample::new(s.x().iter().map(|x| x + c).collect(), s.y().to_vec()).unwrap();
        let (a, b) = (StumpProblem::new(&s, 1).unwrap(), StumpProblem::new(&shifted, 1).unwrap());
        let (fa, fb) = (a.fit(), b.fit());
        let pairs = [
            (rss1_set(&a, &fa, &lp, 0.05, &q).unwrap(), rss1_set(&b, &fb, &lp, 0.05, &q).unwrap()),
            (rss2_set(&a, &fa, &lp, 0.05, &q).unwrap(), rss2_set(&b, &fb, &lp, 0.05, &q).unwrap()),
            (pivot_set(&a, &fa, &lp, 0.05, &p).unwrap(), pivot_set(&b, &fb, &lp, 0.05, &p).unwrap()),
            (wald_set(&fa, &lp, 120, 0.05, &p).unwrap(), wald_set(&fb, &lp, 120, 0.05, &p).unwrap()),
        ];
        for (x, y) in pairs {
            assert_eq!(x.accepted.len(), y.accepted.len());
            for (i, j) in x.accepted.iter().zip(&y.accepted) {
                assert!((i.lo + c - j.lo).abs() < 1e-12 && (i.hi + c - j.hi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unstable_constants_refused() {
        let (p, q) = tables();
        let s = sigmoid_sample(1, 50);
        let prob = StumpProblem::new(&s, 1).unwrap();
        let fit = prob.fit();
        let flat = LimitParams {
            b: -0.2,
            b0: 0.0,
            ..truth_lp()
        };
        assert!(matches!(rss1_set(&prob, &fit, &flat, 0.05, &q), Err(Error::Unstable(_))));
        assert!(matches!(rss2_set(&prob, &fit, &flat, 0.05, &q), Err(Error::Unstable(_))));
        assert!(matches!(pivot_set(&prob, &fit, &flat, 0.05, &p), Err(Error::Unstable(_))));
        assert!(rss1_set(&prob, &fit, &truth_lp(), 1.5, &q).is_err());
    }

    #[test]
    fn b0_exceeds_b() {
        let lp = truth_lp();
        assert!(lp.b0 > lp.b);
        assert!(rss_threshold(500, 0.8, lp.a, lp.b0, 1.0) < rss_threshold(500, 0.8, lp.a, lp.b, 1.0));
    }

    fn replicated_step() -> Sample {
        let x: Vec<f64> = (0..100).map(|i| (i % 4 + 1) as f64).collect();
        let y = x.iter().map(|&v| if v <= 2.0 { 0.0 } else { 1.0 }).collect();
        Sample::new(x, y).unwrap()
    }

    #[test]
    fn subsampling_noiseless_step_is_degenerate() {
        let s = replicated_step();
        let spec = SubsampleSpec {
            gamma: 0.8,
            n_subsamples: 500,
            seed: 3,
        };
        let set = subsample_ci(&s, 2.0, stump_split(1), &spec, 0.05).unwrap();
        assert_eq!(set.longest_component, Interval::new(2.0, 2.0));
    }

    #[test]
    fn subsampling_is_deterministic() {
        let s = sigmoid_sample(40, 300);
        let fit = fit_of(&s);
        let spec = SubsampleSpec {
            gamma: 0.6,
            n_subsamples: 200,
            seed: 7,
        };
        let a = subsample_ci(&s, fit, stump_split(1), &spec, 0.05).unwrap();
        let b = subsample_ci(&s, fit, stump_split(1), &spec, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(subsample_indices(7, 300, 30, 5), subsample_indices(7, 300, 30, 5));
        assert_ne!(subsample_indices(7, 300, 30, 5), subsample_indices(8, 300, 30, 5));
        assert!(a.longest_component.lo <= a.longest_component.hi);
    }

    fn fit_of(s: &Sample) -> f64 {
        StumpProblem::new(s, 1).unwrap().fit().d_hat
    }

    #[test]
    fn subsampling_block_errors() {
        let s = sigmoid_sample(41, 50);
        let mut spec = SubsampleSpec {
            gamma: 0.1,
            n_subsamples: 100,
            seed: 1,
        };
        assert!(matches!(
            subsample_ci(&s, 0.5, stump_split(1), &spec, 0.05),
            Err(Error::BlockTooSmall { .. })
        ));
        spec.gamma = 0.9999;
        assert!(matches!(
            subsample_ci(&s, 0.5, stump_split(1), &spec, 0.05),
            Err(Error::BlockTooLarge { .. })
        ));
        spec.gamma = 1.0;
        assert!(subsample_ci(&s, 0.5, stump_split(1), &spec, 0.05).is_err());
    }
}
