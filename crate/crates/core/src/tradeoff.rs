//! Numeric trade-off functions for Gaussian differential privacy.
//!
//! A trade-off function maps the type-I error of the optimal distinguishing
//! test to its minimal type-II error. Curves are stored as piecewise-linear
//! functions on a fixed alpha grid. The p-sampling operator is realized as
//! `min{f_p, f_p^{-1}}` followed by its lower convex envelope, which equals
//! the convex biconjugate for piecewise-linear data.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CoreError, Result};

/// Canonical alpha grid: 4097 uniform points plus log-spaced refinement near
/// both endpoints, where Gaussian curves are steep.
pub fn default_grid() -> Vec<f64> {
    let n = 4096usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let refine = 769usize;
    for j in 0..refine {
        // log-spaced in [1e-6, 5e-2]
        let x = 1e-6 * (5e4f64).powf(j as f64 / (refine - 1) as f64);
        grid.push(x);
        grid.push(1.0 - x);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl TradeoffCurve {
    pub fn from_points(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if alphas.len() != betas.len() || alphas.len() < 2 {
            return Err(CoreError::InvalidParameter("curve needs matching grids of size >= 2".into()));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(CoreError::InvalidParameter("grid must include both endpoints".into()));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::InvalidParameter("grid must be strictly increasing".into()));
        }
        Ok(TradeoffCurve { alphas, betas })
    }

    pub fn identity() -> Self {
        Self::identity_on(default_grid())
    }

    pub fn identity_on(grid: Vec<f64>) -> Self {
        let betas = grid.iter().map(|a| 1.0 - a).collect();
        TradeoffCurve { alphas: grid, betas }
    }

    /// G_mu(alpha) = Phi(Phi^{-1}(1 - alpha) - mu).
    pub fn gaussian(mu: f64) -> Result<Self> {
        Self::gaussian_on(mu, default_grid())
    }

    pub fn gaussian_on(mu: f64, grid: Vec<f64>) -> Result<Self> {
        if mu < 0.0 || !mu.is_finite() {
            return Err(CoreError::InvalidParameter("mu must be finite and >= 0".into()));
        }
        let normal = Normal::standard();
        let betas = grid
            .iter()
            .map(|&a| {
                if mu == 0.0 {
                    1.0 - a
                } else if a <= 0.0 {
                    1.0
                } else if a >= 1.0 {
                    0.0
                } else {
                    normal.cdf(normal.inverse_cdf(1.0 - a) - mu)
                }
            })
            .collect();
        Ok(TradeoffCurve { alphas: grid, betas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Piecewise-linear evaluation.
    pub fn eval(&self, alpha: f64) -> f64 {
        let a = alpha.clamp(0.0, 1.0);
        let idx = self.alphas.partition_point(|&x| x < a);
        if idx == 0 {
            return self.betas[0];
        }
        if idx >= self.alphas.len() {
            return *self.betas.last().unwrap();
        }
        let (a0, a1) = (self.alphas[idx - 1], self.alphas[idx]);
        let (b0, b1) = (self.betas[idx - 1], self.betas[idx]);
        b0 + (b1 - b0) * (a - a0) / (a1 - a0)
    }

    /// Grid inverse per the infimum definition
    /// `f^{-1}(y) = inf{t in [0,1] : f(t) <= y}`, exact for piecewise-linear
    /// monotone data.
    pub fn inverse_at(&self, y: f64) -> f64 {
        // first knot with beta <= y (betas are non-increasing)
        let idx = self.betas.partition_point(|&b| b > y);
        if idx == 0 {
            return 0.0;
        }
        if idx >= self.betas.len() {
            return 1.0;
        }
        let (b0, b1) = (self.betas[idx - 1], self.betas[idx]);
        let (a0, a1) = (self.alphas[idx - 1], self.alphas[idx]);
        // b0 > y >= b1 on this segment
        a0 + (b0 - y) / (b0 - b1) * (a1 - a0)
    }

    /// The inverse function sampled on this curve's own grid.
    pub fn inverse_curve(&self) -> TradeoffCurve {
        let betas = self.alphas.iter().map(|&a| self.inverse_at(a)).collect();
        TradeoffCurve { alphas: self.alphas.clone(), betas }
    }

    /// p-sampling operator `C_p(f) = min{f_p, f_p^{-1}}**` with
    /// `f_p = p f + (1-p) Id`.
    pub fn subsample(&self, p: f64) -> Result<TradeoffCurve> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::InvalidParameter(format!("p = {p} outside [0,1]")));
        }
        let fp_betas: Vec<f64> = self
            .alphas
            .iter()
            .zip(&self.betas)
            .map(|(&a, &b)| p * b + (1.0 - p) * (1.0 - a))
            .collect();
        let fp = TradeoffCurve { alphas: self.alphas.clone(), betas: fp_betas };
        let min_betas: Vec<f64> = fp
            .alphas
            .iter()
            .zip(&fp.betas)
            .map(|(&a, &b)| b.min(fp.inverse_at(a)))
            .collect();
        let hull = lower_convex_envelope(&self.alphas, &min_betas);
        let betas = self
            .alphas
            .iter()
            .map(|&a| hull.eval(a).clamp(0.0, 1.0))
            .collect();
        Ok(TradeoffCurve { alphas: self.alphas.clone(), betas })
    }

    /// Checks the structural invariants: values in [0,1], non-increasing, and
    /// discretely convex up to `slack`.
    pub fn validate(&self, slack: f64) -> Result<()> {
        if self.betas.iter().any(|b| !(-slack..=1.0 + slack).contains(b)) {
            return Err(CoreError::InvalidParameter("curve leaves [0,1]".into()));
        }
        for w in self.betas.windows(2) {
            if w[1] > w[0] + slack {
                return Err(CoreError::InvalidParameter("curve not non-increasing".into()));
            }
        }
        for i in 1..self.alphas.len() - 1 {
            let (a0, a1, a2) = (self.alphas[i - 1], self.alphas[i], self.alphas[i + 1]);
            let (b0, b1, b2) = (self.betas[i - 1], self.betas[i], self.betas[i + 1]);
            let left = (b1 - b0) / (a1 - a0);
            let right = (b2 - b1) / (a2 - a1);
            if right < left - slack / (a2 - a1).min(a1 - a0) {
                return Err(CoreError::InvalidParameter(format!(
                    "curve not convex at alpha = {a1}"
                )));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &TradeoffCurve, probes: usize) -> f64 {
        (0..=probes)
            .map(|k| {
                let a = k as f64 / probes as f64;
                (self.eval(a) - other.eval(a)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with header `alpha,beta`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta\n");
        for (a, b) in self.alphas.iter().zip(&self.betas) {
            out.push_str(&format!("{a:.16e},{b:.16e}\n"));
        }
        out
    }

    /// Standalone SVG plot of the curve with the identity reference line.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h) = (800.0f64, 600.0f64);
        let margin = 60.0;
        let px = |a: f64| margin + a * (w - 2.0 * margin);
        let py = |b: f64| h - margin - b * (h - 2.0 * margin);
        let mut path = String::new();
        for (i, (a, b)) in self.alphas.iter().zip(&self.betas).enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            path.push_str(&format!("{cmd}{:.2},{:.2} ", px(*a), py(*b)));
        }
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\">\n",
                "<rect width=\"800\" height=\"600\" fill=\"white\"/>\n",
                "<text x=\"400\" y=\"30\" text-anchor=\"middle\" font-size=\"18\">{title}</text>\n",
                "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#999\" stroke-dasharray=\"6 4\"/>\n",
                "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
                "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n",
                "<text x=\"400\" y=\"585\" text-anchor=\"middle\" font-size=\"14\">type-I error</text>\n",
                "<text x=\"20\" y=\"300\" font-size=\"14\" transform=\"rotate(-90 20 300)\">type-II error</text>\n",
                "<path d=\"{path}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
                "</svg>\n"
            ),
            title = title,
            x0 = px(0.0),
            y0 = py(0.0),
            x1 = px(1.0),
            y1 = py(1.0),
            path = path.trim_end(),
        )
    }
}

/// Lower convex envelope of a discrete point set via a monotone-chain scan,
/// returned as a piecewise-linear curve on the hull vertices.
fn lower_convex_envelope(alphas: &[f64], betas: &[f64]) -> TradeoffCurve {
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(alphas.len());
    for (&a, &b) in alphas.iter().zip(betas) {
        let p = (a, b);
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    TradeoffCurve {
        alphas: hull.iter().map(|p| p.0).collect(),
        betas: hull.iter().map(|p| p.1).collect(),
    }
}
