//! Least squares fitting of the single-split (stump) working model and the
//! residual-sum-of-squares statistics used to invert tests for the split.
//!
//! The residual sum of squares is piecewise constant in the split `d`
//! between consecutive order statistics, so every search runs over a
//! discrete candidate grid: the distinct observed `x` values that leave at
//! least `min_side` observations on each side. A candidate `d` puts every
//! observation with `x <= d` on the left.
//!
//! All scans are driven by prefix sums of the (globally centered) responses
//! after one stable sort by `x`.

use crate::error::{Error, Result};

/// Paired predictor/response observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "x has {} values but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::DegenerateSample(format!(
                "need at least 2 observations, got {}",
                x.len()
            )));
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at position {}",
                i % x.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Observations at the given positions, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Sample> {
        Sample::new(
            idx.iter().map(|&i| self.x[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// Returns `(x, y)` pairs sorted by `x`, stable on ties.
    pub fn sorted_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.x[a].total_cmp(&self.x[b]));
        (
            order.iter().map(|&i| self.x[i]).collect(),
            order.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Fitted stump: split point, side levels and residual sum of squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StumpFit {
    pub d_hat: f64,
    pub beta_l: f64,
    pub beta_u: f64,
    pub rss: f64,
    /// Number of observations with `x <= d_hat`.
    pub n_left: usize,
}

impl StumpFit {
    pub fn jump(&self) -> f64 {
        self.beta_l - self.beta_u
    }
}

/// A sample sorted once by `x`, with prefix sums and the candidate grid,
/// ready for repeated split queries.
#[derive(Debug, Clone)]
pub struct StumpProblem {
    xs: Vec<f64>,
    ys: Vec<f64>,
    y_mean: f64,
    /// `centered[k]` = sum of the first `k` centered responses.
    centered: Vec<f64>,
    total_ss: f64,
    /// Left counts of the admissible splits, strictly increasing.
    candidates: Vec<usize>,
    min_side: usize,
}

impl StumpProblem {
    pub fn new(sample: &Sample, min_side: usize) -> Result<Self> {
        let min_side = min_side.max(1);
        let n = sample.len();
        if n < 2 * min_side {
            return Err(Error::DegenerateSample(format!(
                "n = {n} is smaller than 2 * min_side = {}",
                2 * min_side
            )));
        }
        let (xs, ys) = sample.sorted_pairs();
        if xs[0] == xs[n - 1] {
            return Err(Error::DegenerateSample("all x values are equal".into()));
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let mut centered = Vec::with_capacity(n + 1);
        centered.push(0.0);
        let mut acc = 0.0;
        let mut total_ss = 0.0;
        for &y in &ys {
            let c = y - y_mean;
            acc += c;
            total_ss += c * c;
            centered.push(acc);
        }
        let candidates: Vec<usize> = (1..n)
            .filter(|&k| xs[k - 1] < xs[k] && k >= min_side && n - k >= min_side)
            .collect();
        if candidates.is_empty() {
            return Err(Error::DegenerateSample(format!(
                "no split leaves {min_side} observations on each side"
            )));
        }
        Ok(Self {
            xs,
            ys,
            y_mean,
            centered,
            total_ss,
            candidates,
            min_side,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn min_side(&self) -> usize {
        self.min_side
    }

    pub fn sorted_x(&self) -> &[f64] {
        &self.xs
    }

    pub fn sorted_y(&self) -> &[f64] {
        &self.ys
    }

    /// Left counts of the candidate splits.
    pub fn candidate_counts(&self) -> &[usize] {
        &self.candidates
    }

    /// Candidate split values (the grid), strictly increasing.
    pub fn candidates(&self) -> Vec<f64> {
        self.candidates.iter().map(|&k| self.xs[k - 1]).collect()
    }

    pub fn split_value(&self, k: usize) -> f64 {
        self.xs[k - 1]
    }

    /// Number of observations with `x <= d`.
    pub fn left_count(&self, d: f64) -> usize {
        self.xs.partition_point(|&x| x <= d)
    }

    fn checked_left_count(&self, d: f64) -> Result<usize> {
        let k = self.left_count(d);
        if k == 0 || k == self.n() {
            return Err(Error::EmptySide(d));
        }
        Ok(k)
    }

    /// Between-sides sum of squares for the split leaving `k` on the left.
    fn gain(&self, k: usize) -> f64 {
        let n = self.n() as f64;
        let s = self.centered[k];
        s * s * n / (k as f64 * (n - k as f64))
    }

    fn levels_at_count(&self, k: usize) -> (f64, f64) {
        let s = self.centered[k];
        let kl = k as f64;
        let kr = (self.n() - k) as f64;
        (self.y_mean + s / kl, self.y_mean - s / kr)
    }

    /// Profiled residual sum of squares with side means at `k`.
    fn profiled_rss(&self, k: usize) -> f64 {
        (self.total_ss - self.gain(k)).max(0.0)
    }

    /// Global least squares stump; ties broken by the smallest split.
    pub fn fit(&self) -> StumpFit {
        let mut best_k = self.candidates[0];
        let mut best_gain = self.gain(best_k);
        for &k in &self.candidates[1..] {
            let g = self.gain(k);
            if g > best_gain {
                best_gain = g;
                best_k = k;
            }
        }
        let (beta_l, beta_u) = self.levels_at_count(best_k);
        StumpFit {
            d_hat: self.split_value(best_k),
            beta_l,
            beta_u,
            rss: self.profiled_rss(best_k),
            n_left: best_k,
        }
    }

    /// Side means of `y` at split `d`.
    pub fn profile_levels(&self, d: f64) -> Result<(f64, f64)> {
        Ok(self.levels_at_count(self.checked_left_count(d)?))
    }

    /// Excess of the profiled RSS at `d` over the global minimum.
    pub fn rss1(&self, d: f64, fit: &StumpFit) -> Result<f64> {
        let k = self.checked_left_count(d)?;
        Ok((self.profiled_rss(k) - fit.rss).max(0.0))
    }

    /// Criterion with frozen levels, relative to putting everything on the
    /// right: `(beta_u - beta_l) * sum_{i<k} (2 y_i - beta_l - beta_u)`.
    fn frozen_criterion(&self, k: usize, beta_l: f64, beta_u: f64) -> f64 {
        let offset = 2.0 * self.y_mean - beta_l - beta_u;
        (beta_u - beta_l) * (2.0 * self.centered[k] + k as f64 * offset)
    }

    fn argmin_frozen(&self, beta_l: f64, beta_u: f64) -> usize {
        let mut best_k = self.candidates[0];
        let mut best = self.frozen_criterion(best_k, beta_l, beta_u);
        for &k in &self.candidates[1..] {
            let c = self.frozen_criterion(k, beta_l, beta_u);
            if c < best {
                best = c;
                best_k = k;
            }
        }
        best_k
    }

    /// Best split for fixed side levels, smallest split on ties.
    pub fn profiled_dhat(&self, beta_l: f64, beta_u: f64) -> Result<f64> {
        if beta_l == beta_u {
            return Err(Error::DegenerateLevels(beta_l));
        }
        Ok(self.split_value(self.argmin_frozen(beta_l, beta_u)))
    }

    /// Profiled-split statistic: the criterion at `d` with levels profiled
    /// at `d`, minus its minimum over the grid with those levels frozen.
    pub fn rss2(&self, d: f64) -> Result<f64> {
        let k = self.checked_left_count(d)?;
        let (bl, bu) = self.levels_at_count(k);
        if bl == bu {
            return Err(Error::DegenerateLevels(bl));
        }
        let k_star = self.argmin_frozen(bl, bu);
        let value = self.frozen_criterion(k, bl, bu) - self.frozen_criterion(k_star, bl, bu);
        Ok(value.max(0.0))
    }

    /// Likelihood-ratio style excess at fully specified parameters.
    pub fn rss0(&self, beta_l: f64, beta_u: f64, d: f64, fit: &StumpFit) -> Result<f64> {
        if !(beta_l.is_finite() && beta_u.is_finite() && d.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        let rss: f64 = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(&x, &y)| {
                let r = if x <= d { y - beta_l } else { y - beta_u };
                r * r
            })
            .sum();
        Ok(rss - fit.rss)
    }
}

pub fn fit_stump(sample: &Sample, min_side: usize) -> Result<StumpFit> {
    Ok(StumpProblem::new(sample, min_side)?.fit())
}

pub fn profile_levels(sample: &Sample, d: f64) -> Result<(f64, f64)> {
    let mut left = (0.0, 0usize);
    let mut right = (0.0, 0usize);
    for (&x, &y) in sample.x().iter().zip(sample.y()) {
        if x <= d {
            left = (left.0 + y, left.1 + 1);
        } else {
            right = (right.0 + y, right.1 + 1);
        }
    }
    if left.1 == 0 || right.1 == 0 {
        return Err(Error::EmptySide(d));
    }
    Ok((left.0 / left.1 as f64, right.0 / right.1 as f64))
}

pub fn rss1_stat(sample: &Sample, d: f64, fit: &StumpFit) -> Result<f64> {
    StumpProblem::new(sample, 1)?.rss1(d, fit)
}

pub fn profiled_dhat(sample: &Sample, beta_l: f64, beta_u: f64) -> Result<f64> {
    StumpProblem::new(sample, 1)?.profiled_dhat(beta_l, beta_u)
}

pub fn rss2_stat(sample: &Sample, d: f64) -> Result<f64> {
    StumpProblem::new(sample, 1)?.rss2(d)
}

pub fn rss0_stat(sample: &Sample, beta_l: f64, beta_u: f64, d: f64, fit: &StumpFit) -> Result<f64> {
    StumpProblem::new(sample, 1)?.rss0(beta_l, beta_u, d, fit)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive recomputation by direct two-pass sums.
    use super::Sample;

    pub fn candidates(s: &Sample, min_side: usize) -> Vec<f64> {
        let mut xs = s.x().to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.into_iter()
            .filter(|&d| {
                let l = s.x().iter().filter(|&&x| x <= d).count();
                l >= min_side && s.len() - l >= min_side
            })
            .collect()
    }

    pub fn side_means(s: &Sample, d: f64) -> (f64, f64) {
        let (mut sl, mut nl, mut su, mut nu) = (0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in s.x().iter().zip(s.y()) {
            if x <= d {
                sl += y;
                nl += 1.0;
            } else {
                su += y;
                nu += 1.0;
            }
        }
        (sl / nl, su / nu)
    }

    pub fn criterion(s: &Sample, bl: f64, bu: f64, d: f64) -> f64 {
        s.x()
            .iter()
            .zip(s.y())
            .map(|(&x, &y)| {
                let r = if x <= d { y - bl } else { y - bu };
                r * r
            })
            .sum()
    }

    /// (d, beta_l, beta_u, rss) minimizing over the grid, smallest d on ties.
    pub fn best_stump(s: &Sample, min_side: usize) -> (f64, f64, f64, f64) {
        let mut best: Option<(f64, f64, f64, f64)> = None;
        for d in candidates(s, min_side) {
            let (bl, bu) = side_means(s, d);
            let rss = criterion(s, bl, bu, d);
            if best.is_none_or(|b| rss < b.3) {
                best = Some((d, bl, bu, rss));
            }
        }
        best.unwrap()
    }

    pub fn best_frozen(s: &Sample, bl: f64, bu: f64) -> f64 {
        let mut best: Option<(f64, f64)> = None;
        for d in candidates(s, 1) {
            let c = criterion(s, bl, bu, d);
            if best.is_none_or(|b| c < b.1) {
                best = Some((d, c));
            }
        }
        best.unwrap().0
    }

    pub fn rss2(s: &Sample, d: f64) -> f64 {
        let (bl, bu) = side_means(s, d);
        let d_star = best_frozen(s, bl, bu);
        criterion(s, bl, bu, d) - criterion(s, bl, bu, d_star)
    }
}
