//! Grid simulation of `Q(t) = a W(t) - b t^2` for a two-sided standard
//! Brownian motion `W`, and quantile tables for the location of its maximum
//! (Chernoff's distribution when `a = b = 1`) and for the maximum itself.
//!
//! Standardized tables ship embedded in the crate; they were produced by
//! [`QuantileTable::simulate_standard`] and can be regenerated from the CLI.

use std::fmt::Write as _;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats::{quantile_sorted, sorted_copy};

const EMBEDDED_CHERNOFF: &str = include_str!("../data/chernoff_argmax.tsv");
const EMBEDDED_MAXQ1: &str = include_str!("../data/maxq1.tsv");

pub const DEFAULT_HALF_WIDTH: f64 = 3.0;
pub const DEFAULT_STEP: f64 = 2.5e-4;
pub const DEFAULT_REPS: usize = 200_000;
pub const DEFAULT_SEED: u64 = 24_301;

/// Grid and replication settings for one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSpec {
    pub a: f64,
    pub b: f64,
    pub half_width: f64,
    pub step: f64,
    pub reps: usize,
    pub seed: u64,
}

impl ProcessSpec {
    /// The standardized process `W(t) - t^2` on the default grid.
    pub fn standard() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            half_width: DEFAULT_HALF_WIDTH,
            step: DEFAULT_STEP,
            reps: DEFAULT_REPS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::InvalidInput("a and b must be positive".into()));
        }
        let min_width = 3.0 * (self.a / self.b).powf(2.0 / 3.0);
        if !(self.half_width >= min_width * (1.0 - 1e-12)) {
            return Err(Error::InvalidInput(format!(
                "half width {} below 3 (a/b)^(2/3) = {min_width}",
                self.half_width
            )));
        }
        if !(self.step > 0.0 && self.step <= self.half_width / 1000.0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!(
                "step {} must be positive and at most T/1000",
                self.step
            )));
        }
        if self.reps < 10_000 {
            return Err(Error::InvalidInput(format!(
                "at least 10000 replications required, got {}",
                self.reps
            )));
        }
        Ok(())
    }

    fn steps_per_side(&self) -> usize {
        (self.half_width / self.step).round() as usize
    }
}

/// Location and value of the grid maximum of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub argmax: f64,
    pub max: f64,
}

struct Tracker {
    best: f64,
    at: f64,
}

impl Tracker {
    fn new() -> Self {
        Self { best: 0.0, at: 0.0 }
    }

    /// Points are offered outward in |t|, negative side first, so strict
    /// improvement keeps the smaller |t| and then the negative side on ties.
    fn offer(&mut self, t: f64, q: f64) {
        if q > self.best {
            self.best = q;
            self.at = t;
        }
    }

    fn finish(&self) -> Extremum {
        Extremum {
            argmax: self.at,
            max: self.best,
        }
    }
}

/// Walks one path on a fine grid of `steps` points per side with spacing
/// `step`. Returns the fine-grid extremum and, if `coarse_every > 1`, the
/// extremum on the sub-grid of every `coarse_every`-th point.
fn walk(
    spec: &ProcessSpec,
    rep: u64,
    step: f64,
    steps: usize,
    coarse_every: usize,
) -> (Extremum, Extremum) {
    let mut rng = stream_rng(spec.seed, rep);
    let sd = step.sqrt();
    let (mut left, mut right) = (0.0f64, 0.0f64);
    let mut fine = Tracker::new();
    let mut coarse = Tracker::new();
    for j in 1..=steps {
        let zl: f64 = StandardNormal.sample(&mut rng);
        let zr: f64 = StandardNormal.sample(&mut rng);
        left += sd * zl;
        right += sd * zr;
        let t = j as f64 * step;
        let drift = spec.b * t * t;
        let ql = spec.a * left - drift;
        let qr = spec.a * right - drift;
        fine.offer(-t, ql);
        fine.offer(t, qr);
        if j % coarse_every == 0 {
            coarse.offer(-t, ql);
            coarse.offer(t, qr);
        }
    }
    (fine.finish(), coarse.finish())
}

/// One extremum per replication; replication `r` uses random stream `r`.
pub fn simulate_argmax_max(spec: &ProcessSpec) -> Result<Vec<Extremum>> {
    spec.validate()?;
    let steps = spec.steps_per_side();
    Ok((0..spec.reps as u64)
        .into_par_iter()
        .map(|r| walk(spec, r, spec.step, steps, 1).0)
        .collect())
}

/// Coupled simulation at steps `h` and `h/2`: each path is drawn at `h/2`
/// and the coarse result reads every second grid point of the same path.
/// Returns `(coarse, fine)`.
pub fn simulate_nested(spec: &ProcessSpec) -> Result<(Vec<Extremum>, Vec<Extremum>)> {
    spec.validate()?;
    let steps = 2 * spec.steps_per_side();
    let pairs: Vec<(Extremum, Extremum)> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|r| walk(spec, r, spec.step / 2.0, steps, 2))
        .collect();
    Ok(pairs.into_iter().map(|(f, c)| (c, f)).unzip())
}

/// Which limit law a table describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dist {
    /// Location of the maximum of `W(t) - t^2`.
    ChernoffArgmax,
    /// Maximum value of `W(t) - t^2`.
    MaxQ1,
}

impl Dist {
    pub fn name(&self) -> &'static str {
        match self {
            Dist::ChernoffArgmax => "chernoff_argmax",
            Dist::MaxQ1 => "maxq1",
        }
    }
}

impl FromStr for Dist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chernoff" | "chernoff_argmax" => Ok(Dist::ChernoffArgmax),
            "maxq1" => Ok(Dist::MaxQ1),
            other => Err(Error::InvalidInput(format!("unknown distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Embedded,
    Simulated {
        seed: u64,
        reps: usize,
        half_width: f64,
        step: f64,
    },
}

/// Quantiles `F^{-1}(level)` of a limit law at increasing levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub dist: Dist,
    pub pairs: Vec<(f64, f64)>,
    pub provenance: Provenance,
}

/// Default tabulated levels: 0.001, 0.0025, 0.005(0.005)0.995, 0.9975, 0.999.
pub fn default_levels() -> Vec<f64> {
    let mut v = vec![0.001, 0.0025];
    v.extend((1..200).map(|i| i as f64 * 0.005));
    v.extend([0.9975, 0.999]);
    v
}

impl QuantileTable {
    pub fn from_draws(dist: Dist, draws: &[f64], levels: &[f64], provenance: Provenance) -> Self {
        let sorted = sorted_copy(draws);
        let pairs = levels.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect();
        Self {
            dist,
            pairs,
            provenance,
        }
    }

    /// Simulates the standardized process once and tabulates both laws.
    pub fn simulate_standard(spec: &ProcessSpec, levels: &[f64]) -> Result<(Self, Self)> {
        let draws = simulate_argmax_max(spec)?;
        let provenance = Provenance::Simulated {
            seed: spec.seed,
            reps: spec.reps,
            half_width: spec.half_width,
            step: spec.step,
        };
        let argmax: Vec<f64> = draws.iter().map(|e| e.argmax).collect();
        let max: Vec<f64> = draws.iter().map(|e| e.max).collect();
        Ok((
            Self::from_draws(Dist::ChernoffArgmax, &argmax, levels, provenance),
            Self::from_draws(Dist::MaxQ1, &max, levels, provenance),
        ))
    }

    /// Table shipped with the crate.
    pub fn embedded(dist: Dist) -> Self {
        let text = match dist {
            Dist::ChernoffArgmax => EMBEDDED_CHERNOFF,
            Dist::MaxQ1 => EMBEDDED_MAXQ1,
        };
        // Keeps the simulation record from the file header.
        Self::from_tsv(text).expect("embedded quantile table is well formed")
    }

    /// Quantile at a lower-tail probability, by linear interpolation.
    pub fn quantile_at(&self, level: f64) -> Result<f64> {
        let first = self.pairs.first().ok_or(Error::LevelOutOfRange(level))?;
        let last = self.pairs.last().ok_or(Error::LevelOutOfRange(level))?;
        if !(level >= first.0 - 1e-12 && level <= last.0 + 1e-12) {
            return Err(Error::LevelOutOfRange(level));
        }
        let i = self.pairs.partition_point(|p| p.0 < level);
        if i == 0 {
            return Ok(first.1);
        }
        if i == self.pairs.len() {
            return Ok(last.1);
        }
        let (l0, q0) = self.pairs[i - 1];
        let (l1, q1) = self.pairs[i];
        Ok(q0 + (level - l0) / (l1 - l0) * (q1 - q0))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        match self.provenance {
            Provenance::Embedded => {
                let _ = writeln!(out, "# dist={} provenance=embedded", self.dist.name());
            }
            Provenance::Simulated {
                seed,
                reps,
                half_width,
                step,
            } => {
                let _ = writeln!(
                    out,
                    "# dist={} provenance=simulated seed={seed} reps={reps} T={half_width} h={step}",
                    self.dist.name()
                );
            }
        }
        out.push_str("level\tquantile\n");
        for (l, q) in &self.pairs {
            let _ = writeln!(out, "{l}\t{q}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut dist = None;
        let mut provenance = Provenance::Embedded;
        let mut pairs = Vec::new();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut fields = std::collections::HashMap::new();
                for tok in comment.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        fields.insert(k, v);
                    }
                }
                if let Some(d) = fields.get("dist") {
                    dist = Some(d.parse::<Dist>()?);
                }
                if fields.get("provenance") == Some(&"simulated") {
                    let get = |k: &str| {
                        fields.get(k).copied().ok_or_else(|| Error::Parse {
                            row,
                            msg: format!("provenance line lacks `{k}`"),
                        })
                    };
                    let num = |k: &str| -> Result<f64> {
                        get(k)?.parse::<f64>().map_err(|e| Error::Parse {
                            row,
                            msg: format!("{k}: {e}"),
                        })
                    };
                    provenance = Provenance::Simulated {
                        seed: num("seed")? as u64,
                        reps: num("reps")? as usize,
                        half_width: num("T")?,
                        step: num("h")?,
                    };
                }
                continue;
            }
            if !seen_header {
                if line != "level\tquantile" {
                    return Err(Error::Parse {
                        row,
                        msg: "expected header `level<TAB>quantile`".into(),
                    });
                }
                seen_header = true;
                continue;
            }
            let (l, q) = line.split_once('\t').ok_or_else(|| Error::Parse {
                row,
                msg: "expected two tab-separated columns".into(),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row,
                    msg: e.to_string(),
                })
            };
            pairs.push((parse(l)?, parse(q)?));
        }
        let dist = dist.ok_or(Error::Parse {
            row: 1,
            msg: "missing `# dist=` line".into(),
        })?;
        if pairs.is_empty() || pairs.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Parse {
                row: 0,
                msg: "levels must be nonempty and strictly increasing".into(),
            });
        }
        Ok(Self {
            dist,
            pairs,
            provenance,
        })
    }
}

/// Upper `alpha_half` quantile of Chernoff's distribution.
pub fn chernoff_quantile(alpha_half: f64, table: &QuantileTable) -> Result<f64> {
    if table.dist != Dist::ChernoffArgmax {
        return Err(Error::InvalidInput("expected a chernoff_argmax table".into()));
    }
    if !(alpha_half > 0.0 && alpha_half < 1.0) {
        return Err(Error::LevelOutOfRange(alpha_half));
    }
    table.quantile_at(1.0 - alpha_half)
}

/// Upper `alpha` quantile of `max_t (W(t) - t^2)`.
pub fn maxq1_quantile(alpha: f64, table: &QuantileTable) -> Result<f64> {
    if table.dist != Dist::MaxQ1 {
        return Err(Error::InvalidInput("expected a maxq1 table".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::LevelOutOfRange(alpha));
    }
    table.quantile_at(1.0 - alpha)
}
