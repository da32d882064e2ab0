//! Link-scale reporting for exponential-family responses.
//!
//! Splits are fitted on the mean scale; a strictly increasing link leaves
//! the split unchanged and maps each level through the link.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::{wald_delta, Interval};
use crate::error::{Error, Result};
use crate::limit_process::QuantileTable;
use crate::nuisance::LimitParams;
use crate::stump::StumpFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkSpec {
    #[default]
    Identity,
    Logit,
    Log,
}

impl LinkSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LinkSpec::Identity => "identity",
            LinkSpec::Logit => "logit",
            LinkSpec::Log => "log",
        }
    }

    pub fn apply(&self, mean: f64) -> Result<f64> {
        let out_of_domain = || Error::DomainError {
            link: self.name().into(),
            value: mean,
        };
        match self {
            LinkSpec::Identity => Ok(mean),
            LinkSpec::Logit if mean > 0.0 && mean < 1.0 => Ok((mean / (1.0 - mean)).ln()),
            LinkSpec::Log if mean > 0.0 => Ok(mean.ln()),
            _ => Err(out_of_domain()),
        }
    }
}

impl FromStr for LinkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkSpec::Identity),
            "logit" => Ok(LinkSpec::Logit),
            "log" => Ok(LinkSpec::Log),
            other => Err(Error::InvalidInput(format!("unknown link `{other}`"))),
        }
    }
}

/// Stump levels on the link scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkedFit {
    pub theta_l: f64,
    pub theta_u: f64,
    pub d: f64,
}

pub fn transform_fit(fit: &StumpFit, link: LinkSpec) -> Result<LinkedFit> {
    Ok(LinkedFit {
        theta_l: link.apply(fit.beta_l)?,
        theta_u: link.apply(fit.beta_u)?,
        d: fit.d_hat,
    })
}

/// Delta-method limits for `beta_u / beta_l` given the Wald half-width.
pub fn relative_risk_ci_with_delta(fit: &StumpFit, lp: &LimitParams, delta: f64) -> Result<Interval> {
    if !(fit.beta_l > 0.0 && fit.beta_u > 0.0) {
        return Err(Error::DomainError {
            link: "log".into(),
            value: fit.beta_l.min(fit.beta_u),
        });
    }
    let slope = lp.c2 / fit.beta_u - lp.c1 / fit.beta_l;
    let scale = (lp.c2 / fit.beta_u).abs().max((lp.c1 / fit.beta_l).abs());
    if slope.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateRatio);
    }
    let log_r = (fit.beta_u / fit.beta_l).ln();
    let half = slope.abs() * delta;
    Ok(Interval::new((log_r - half).exp(), (log_r + half).exp()))
}

pub fn relative_risk_ci(
    fit: &StumpFit,
    lp: &LimitParams,
    n: usize,
    alpha: f64,
    p_table: &QuantileTable,
) -> Result<Interval> {
    let delta = wald_delta(lp, n, alpha, p_table)?;
    relative_risk_ci_with_delta(fit, lp, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_process::Dist;
    use proptest::prelude::*;

    fn fit(bl: f64, bu: f64) -> StumpFit {
        StumpFit {
            d_hat: 0.37,
            beta_l: bl,
            beta_u: bu,
            rss: 1.0,
            n_left: 10,
        }
    }

    fn lp(c1: f64, c2: f64) -> LimitParams {
        LimitParams {
            a: 0.5,
            b: 1.0,
            b0: 1.5,
            c1,
            c2,
            jump: 0.0,
            instability_warning: false,
        }
    }

    #[test]
    fn link_examples() {
        let f = fit(0.5, 1.0);
        assert_eq!(transform_fit(&f, LinkSpec::Identity).unwrap().theta_u, 1.0);
        assert_eq!(transform_fit(&fit(0.5, 0.7), LinkSpec::Logit).unwrap().theta_l, 0.0);
        assert_eq!(transform_fit(&f, LinkSpec::Log).unwrap().theta_u, 0.0);
        assert!(matches!(transform_fit(&f, LinkSpec::Logit), Err(Error::DomainError { .. })));
        assert!(matches!(transform_fit(&fit(0.0, 0.3), LinkSpec::Log), Err(Error::DomainError { .. })));
        assert_eq!(transform_fit(&f, LinkSpec::Log).unwrap().d, f.d_hat);
    }

    #[test]
    fn relative_risk_examples() {
        let f = fit(0.2, 0.4);
        let iv = relative_risk_ci_with_delta(&f, &lp(1.0, 1.0), 0.1).unwrap();
        assert!((iv.lo - 2.0 * (-0.25f64).exp()).abs() < 1e-12);
        assert!((iv.hi - 2.0 * 0.25f64.exp()).abs() < 1e-12);
        let zero = relative_risk_ci_with_delta(&f, &lp(1.0, 1.0), 0.0).unwrap();
        assert!((zero.lo - 2.0).abs() < 1e-12 && (zero.hi - 2.0).abs() < 1e-12);
        assert_eq!(
            relative_risk_ci_with_delta(&f, &lp(1.0, 2.0), 0.1),
            Err(Error::DegenerateRatio)
        );
        let table = QuantileTable::embedded(Dist::ChernoffArgmax);
        let unstable = LimitParams { b: -1.0, ..lp(1.0, 1.0) };
        assert!(matches!(relative_risk_ci(&f, &unstable, 100, 0.05, &table), Err(Error::Unstable(_))));
        assert!(relative_risk_ci(&f, &lp(1.0, 1.0), 100, 0.05, &table).is_ok());
    }

    proptest! {
        #[test]
        fn link_and_ratio_invariants(bl in 0.01f64..0.99, bu in 0.01f64..0.99, c1 in -2.0f64..2.0, delta in 0.0f64..0.5) {
            prop_assume!(bl != bu);
            let f = fit(bl, bu);
            for link in [LinkSpec::Identity, LinkSpec::Logit, LinkSpec::Log] {
                let t = transform_fit(&f, link).unwrap();
                prop_assert_eq!(t.d, f.d_hat);
                prop_assert_eq!((t.theta_u - t.theta_l).signum(), (bu - bl).signum());
            }
            let c2 = c1 * bl / (1.0 - bl);
            if let Ok(iv) = relative_risk_ci_with_delta(&f, &lp(c1, c2), delta) {
                let r = bu / bl;
                prop_assert!(iv.lo > 0.0 && iv.lo <= r * (1.0 + 1e-12) && r <= iv.hi * (1.0 + 1e-12));
                prop_assert!(((iv.lo * iv.hi).sqrt() - r).abs() < 1e-9 * r);
            }
        }
    }
}
