//! Accumulated privacy accounting over T steps: CLT composition of the
//! subsampled Gaussian mechanism, and (eps, delta) conversion for reporting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoreError, Result};
use crate::tradeoff::TradeoffCurve;

/// Which composition formula to apply. `Clt` is the Gaussian-DP central limit
/// theorem form mu = p * sqrt(T (e^{1/sigma^2} - 1)); `Literal` multiplies in
/// an extra sqrt(T) factor and is kept only for comparison with an
/// alternative circulating statement of the same result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuFormula {
    Clt,
    Literal,
}

impl Default for MuFormula {
    fn default() -> Self {
        MuFormula::Clt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub mu: f64,
    pub p: f64,
    pub steps: usize,
    pub sigma: f64,
}

impl PrivacyBudget {
    /// Gaussian budgets compose in quadrature.
    pub fn compose(&self, other: &PrivacyBudget) -> PrivacyBudget {
        PrivacyBudget {
            mu: (self.mu * self.mu + other.mu * other.mu).sqrt(),
            p: self.p,
            steps: self.steps + other.steps,
            sigma: self.sigma,
        }
    }
}

/// CLT accounting of T compositions of `C_p(G_{1/sigma})`.
pub fn compose_clt(p: f64, steps: usize, sigma: f64, formula: MuFormula) -> Result<PrivacyBudget> {
    if !(0.0 < p && p <= 1.0) {
        return Err(CoreError::InvalidParameter(format!("p = {p} outside (0,1]")));
    }
    if steps == 0 {
        return Err(CoreError::InvalidParameter("need T >= 1".into()));
    }
    if sigma <= 0.0 {
        return Err(CoreError::NoFiniteBudget(
            "sigma = 0 yields an unbounded privacy loss".into(),
        ));
    }
    let t = steps as f64;
    let base = (t * ((1.0 / (sigma * sigma)).exp() - 1.0)).sqrt();
    let mu = match formula {
        MuFormula::Clt => p * base,
        MuFormula::Literal => p * t.sqrt() * base,
    };
    Ok(PrivacyBudget { mu, p, steps, sigma })
}

/// GDP duality: delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2).
pub fn to_eps_delta(mu: f64, eps: f64) -> Result<f64> {
    if eps < 0.0 {
        return Err(CoreError::InvalidParameter("eps must be >= 0".into()));
    }
    if !(mu > 0.0) {
        return Err(CoreError::InvalidParameter("mu must be > 0".into()));
    }
    let normal = Normal::standard();
    Ok(normal.cdf(-eps / mu + mu / 2.0) - eps.exp() * normal.cdf(-eps / mu - mu / 2.0))
}

/// Lower bound on the trade-off curve implied by a family of (eps, delta)
/// guarantees: the pointwise supremum of the straight-line trade-off
/// functions `f_{eps,delta}`.
pub fn curve_from_eps_delta_envelope(mu: f64, eps_grid: &[f64]) -> Result<TradeoffCurve> {
    let grid = crate::tradeoff::default_grid();
    let mut betas = vec![0.0f64; grid.len()];
    for &eps in eps_grid {
        let delta = to_eps_delta(mu, eps)?;
        for (b, &a) in betas.iter_mut().zip(&grid) {
            let line = (1.0 - delta - eps.exp() * a).max((-eps).exp() * (1.0 - delta - a)).max(0.0);
            if line > *b {
                *b = line;
            }
        }
    }
    TradeoffCurve::from_points(grid, betas)
}
