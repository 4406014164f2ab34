//! Closed-form convergence and drift bounds evaluated on measured problem
//! constants, plus Monte-Carlo checks of those bounds against the simulator.
//!
//! Convention notes. The analysis treats the global objective as the mean of
//! the per-client objectives over the block-structured space where restriction
//! scales the shared block by 1/sqrt(M). Two gradient norms appear below:
//! the mean-form norm (used by the decay and convergence bounds) and the
//! sum-form norm (used by the per-update inner-product and second-moment
//! bounds, which are stated for the unnormalized sum objective).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::DpConfig;
use crate::error::{CoreError, Result};
use crate::objective::{global_loss, TaskSpec};
use crate::params::{virtual_average, BlockLayout, ClientParams, GlobalParam};
use crate::rng::{Purpose, RngStream};
use crate::sim::{local_step, ClientState, Method, RunMetrics};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Max per-client gradient Lipschitz constant.
    pub l: f64,
    /// Strong convexity modulus; 0 when merely convex.
    pub c: f64,
    /// Gradient diversity bound, >= 1.
    pub lambda: f64,
    /// Uniform bound on the shared partial gradient over the visited region.
    pub b: f64,
    /// Dimension of the shared block.
    pub d_shared: usize,
    /// Noise sensitivity (the per-release l2 sensitivity).
    pub s: f64,
    pub sigma: f64,
    pub m: usize,
    pub h: usize,
    /// Level-set radius at the initial gap.
    pub r0: f64,
    pub f0: f64,
    pub fstar: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.l, self.c, self.lambda, self.b, self.s, self.sigma, self.r0, self.f0, self.fstar];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::InvalidParameter("bound inputs must be finite".into()));
        }
        if self.lambda < 1.0 || self.c < 0.0 || self.b < 0.0 || self.sigma < 0.0 || self.h == 0 || self.m == 0 {
            return Err(CoreError::InvalidParameter("bound inputs out of range".into()));
        }
        Ok(())
    }

    /// The step size at which the bounds are stated.
    pub fn theory_eta(&self) -> f64 {
        1.0 / (self.lambda * self.l)
    }

    /// H^2 B^2/(2 lambda^2) + (2H^2 + 1/(2ML)) d (S sigma)^2 / lambda^2 — the
    /// stationary perturbation term shared by all three bounds.
    fn perturbation(&self) -> f64 {
        let h2 = (self.h * self.h) as f64;
        let ml = self.m as f64 * self.l;
        let noise = self.d_shared as f64 * (self.s * self.sigma).powi(2);
        h2 * self.b * self.b / (2.0 * self.lambda * self.lambda)
            + (2.0 * h2 + 1.0 / (2.0 * ml)) * noise / (self.lambda * self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    NonconvexAvgGrad,
    ConvexGap,
    StronglyConvexGap,
    SufficientDecay,
    Drift,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremBound {
    pub kind: BoundKind,
    pub value: f64,
}

/// Bound on the running average of squared gradient norms after T rounds.
pub fn nonconvex_bound(inputs: &BoundInputs, t: usize) -> f64 {
    let m = inputs.m as f64;
    let h2 = (inputs.h * inputs.h) as f64;
    let ml = m * inputs.l;
    let noise = inputs.d_shared as f64 * (inputs.s * inputs.sigma).powi(2);
    m * h2 * inputs.l * inputs.b * inputs.b / inputs.lambda
        + (2.0 * ml / inputs.lambda) * (2.0 * h2 + 1.0 / (2.0 * ml)) * noise
        + 2.0 * inputs.lambda * ml * (inputs.f0 - inputs.fstar) / t as f64
}

/// Residual radius for the convex guarantee.
pub fn convex_radius(inputs: &BoundInputs) -> f64 {
    let ml = inputs.m as f64 * inputs.l;
    (2.0 * inputs.lambda * ml * inputs.r0 * inputs.r0 * inputs.perturbation()).sqrt()
}

/// Residual gap and contraction rate for the strongly convex guarantee.
pub fn strongly_convex_radius(inputs: &BoundInputs) -> Result<(f64, f64)> {
    if inputs.c <= 0.0 {
        return Err(CoreError::InvalidParameter("strong convexity requires c > 0".into()));
    }
    let lml = inputs.lambda * inputs.m as f64 * inputs.l;
    let beta = lml / inputs.c * inputs.perturbation();
    let rho = 1.0 - inputs.c / lml;
    Ok((beta, rho))
}

/// Right-hand side of the per-step decay guarantee at a point with
/// squared gradient norm `grad_sq` (mean-form).
pub fn sufficient_decay_rhs(inputs: &BoundInputs, grad_sq: f64) -> f64 {
    -grad_sq / (2.0 * inputs.lambda * inputs.m as f64 * inputs.l) + inputs.perturbation()
}

/// Per-step drift bound for a synchronization interval H.
pub fn drift_bound(inputs: &BoundInputs, eta: f64) -> f64 {
    let noise = inputs.d_shared as f64 * (inputs.s * inputs.sigma).powi(2);
    4.0 * eta * eta * (inputs.h * inputs.h) as f64 * (inputs.lambda * inputs.b * inputs.b + noise)
}

/// Per-client partial gradients evaluated at the virtual average.
fn partials_at_avg(
    tasks: &[TaskSpec],
    avg: &GlobalParam,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| t.gradient(avg.task_block(i)?, avg.shared_block()))
        .collect()
}

/// Sum-form squared gradient norm: sum of task partial norms plus the scaled
/// shared sum.
fn sum_form_grad_sq(partials: &[(Vec<f64>, Vec<f64>)], m: usize) -> f64 {
    let task: f64 = partials.iter().map(|(gt, _)| gt.iter().map(|x| x * x).sum::<f64>()).sum();
    let d = partials[0].1.len();
    let mut shared_sum = vec![0.0; d];
    for (_, gs) in partials {
        for (a, b) in shared_sum.iter_mut().zip(gs) {
            *a += b;
        }
    }
    task + shared_sum.iter().map(|x| x * x).sum::<f64>() / m as f64
}

/// Mean-form squared gradient norm (sum-form divided by M^2).
fn mean_form_grad_sq(partials: &[(Vec<f64>, Vec<f64>)], m: usize) -> f64 {
    sum_form_grad_sq(partials, m) / (m * m) as f64
}

fn drift_of(clients: &[ClientState], avg: &GlobalParam) -> f64 {
    let m = clients.len() as f64;
    let sh = avg.shared_block();
    clients
        .iter()
        .map(|c| c.shared_copy.iter().zip(sh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / m
}

fn to_client_params(clients: &[ClientState]) -> Vec<ClientParams> {
    clients
        .iter()
        .map(|c| ClientParams { task: c.task.clone(), shared: c.shared_copy.clone() })
        .collect()
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCheck {
    pub lhs_mc: f64,
    pub se: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Monte-Carlo check of the per-step decay guarantee at a checkpoint: draw a
/// uniform client and a noise realization, apply one theory-mode update
/// (single selected client, no clipping), and compare the expected decrement
/// of the global loss against the closed-form right-hand side.
pub fn check_sufficient_decay(
    clients: &[ClientState],
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    inputs: &BoundInputs,
    n_samples: usize,
    seed: u64,
) -> Result<DecayCheck> {
    inputs.validate()?;
    if n_samples < 100 {
        return Err(CoreError::InvalidParameter(format!(
            "need at least 100 Monte-Carlo samples, got {n_samples}"
        )));
    }
    let m = clients.len();
    let eta = inputs.theory_eta();
    let dp = DpConfig {
        clip_norm: f64::INFINITY,
        sigma: inputs.sigma,
        k: 1,
        m,
        sensitivity_override: Some(inputs.s),
    };
    let avg = virtual_average(&to_client_params(clients), layout)?;
    let f_avg = global_loss(tasks, &avg)?;
    let grad_sq = mean_form_grad_sq(&partials_at_avg(tasks, &avg)?, m);

    let stream = RngStream::new(seed);
    let samples: Vec<f64> = {
        use rayon::prelude::*;
        (0..n_samples)
            .into_par_iter()
            .map(|n| {
                let mut rng = stream.stream(Purpose::MonteCarlo, n as u64, 0);
                let i = rng.gen_range(0..m);
                let next = local_step(&clients[i], &tasks[i], eta, &dp, &mut rng, Method::DpFedMtl)?;
                let mut moved = to_client_params(clients);
                moved[i] = ClientParams { task: next.task, shared: next.shared_copy };
                let w1 = virtual_average(&moved, layout)?;
                Ok(global_loss(tasks, &w1)? - f_avg)
            })
            .collect::<Result<Vec<f64>>>()?
    };
    let (lhs_mc, se) = mean_and_se(&samples);
    let rhs = sufficient_decay_rhs(inputs, grad_sq);
    // absolute slack keeps the comparison meaningful at stationary points,
    // where both sides are zero up to rounding
    let tol = 1e-12 * (1.0 + f_avg.abs());
    Ok(DecayCheck { lhs_mc, se, rhs, holds: lhs_mc <= rhs + 3.0 * se + tol })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMargin {
    pub step: usize,
    pub observed: f64,
    pub bound: f64,
    pub se: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceReport {
    pub kind: BoundKind,
    pub checkpoints: Vec<CheckpointMargin>,
    pub all_hold: bool,
}

/// Checks a seed-averaged metric trace against the matching convergence
/// theorem. All runs must share recording steps; expectations are estimated
/// by the across-seed mean, and a checkpoint passes when the mean is below
/// the bound plus three standard errors.
pub fn check_convergence_trace(
    runs: &[&RunMetrics],
    inputs: &BoundInputs,
    kind: BoundKind,
) -> Result<TraceReport> {
    inputs.validate()?;
    if runs.is_empty() {
        return Err(CoreError::InvalidParameter("no runs supplied".into()));
    }
    let steps: Vec<usize> = runs[0].records.iter().map(|r| r.step).collect();
    for r in runs {
        if r.records.iter().map(|x| x.step).ne(steps.iter().copied()) {
            return Err(CoreError::InvalidParameter("runs have mismatched recording steps".into()));
        }
        if r.diverged.is_some() {
            return Err(CoreError::Diverged { step: r.diverged.unwrap() });
        }
    }

    let n_steps = steps.len();
    let mut checkpoints = Vec::with_capacity(n_steps);
    match kind {
        BoundKind::NonconvexAvgGrad => {
            // per-run running averages of the squared gradient norm
            let mut running: Vec<f64> = vec![0.0; runs.len()];
            for (si, &step) in steps.iter().enumerate() {
                let mut vals = Vec::with_capacity(runs.len());
                for (ri, r) in runs.iter().enumerate() {
                    running[ri] += r.records[si].grad_sq;
                    vals.push(running[ri] / (si + 1) as f64);
                }
                let (mean, se) = mean_and_se(&vals);
                let bound = nonconvex_bound(inputs, step);
                checkpoints.push(CheckpointMargin {
                    step,
                    observed: mean,
                    bound,
                    se,
                    holds: mean <= bound + 3.0 * se,
                });
            }
        }
        BoundKind::ConvexGap => {
            let alpha = convex_radius(inputs);
            let ml = inputs.m as f64 * inputs.l;
            for (si, &step) in steps.iter().enumerate() {
                let vals: Vec<f64> =
                    runs.iter().map(|r| r.records[si].loss - inputs.fstar).collect();
                let (mean, se) = mean_and_se(&vals);
                let bound =
                    2.0 * inputs.lambda * ml * inputs.r0 * inputs.r0 / step as f64 + alpha;
                checkpoints.push(CheckpointMargin {
                    step,
                    observed: mean,
                    bound,
                    se,
                    holds: mean <= bound + 3.0 * se,
                });
            }
        }
        BoundKind::StronglyConvexGap => {
            let (beta, rho) = strongly_convex_radius(inputs)?;
            let gap0 = inputs.f0 - inputs.fstar;
            for (si, &step) in steps.iter().enumerate() {
                let vals: Vec<f64> =
                    runs.iter().map(|r| r.records[si].loss - inputs.fstar - beta).collect();
                let (mean, se) = mean_and_se(&vals);
                let bound = rho.powi(step as i32) * (gap0 - beta);
                checkpoints.push(CheckpointMargin {
                    step,
                    observed: mean,
                    bound,
                    se,
                    holds: mean <= bound + 3.0 * se,
                });
            }
        }
        BoundKind::SufficientDecay | BoundKind::Drift => {
            return Err(CoreError::InvalidParameter(
                "trace checking applies to the convergence theorems only".into(),
            ));
        }
    }
    let all_hold = checkpoints.iter().all(|c| c.holds);
    Ok(TraceReport { kind, checkpoints, all_hold })
}

/// Measured maximum of the shared partial gradient over recorded traces,
/// inflated by 10%.
pub fn measure_b(runs: &[&RunMetrics]) -> f64 {
    1.1 * runs
        .iter()
        .flat_map(|r| r.records.iter().map(|rec| rec.shared_grad_norm))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McBound {
    pub observed: f64,
    pub bound: f64,
    pub se: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Inner product of the global gradient with the stochastic update is at
    /// least the gradient norm term minus the drift penalty (sum-form).
    pub inner: McBound,
    /// Second moment of the stochastic update is bounded by the diversity
    /// term plus the injected noise (sum-form).
    pub norm: McBound,
    /// Restricted distance of local parameters to the virtual average is
    /// bounded by the synchronization-interval drift bound.
    pub drift: McBound,
}

/// Monte-Carlo estimates of the per-update quantities the decay analysis
/// relies on, each compared against its closed-form bound with measured
/// constants.
pub fn appendix_diagnostics(
    clients: &[ClientState],
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    inputs: &BoundInputs,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    inputs.validate()?;
    if n_samples < 100 {
        return Err(CoreError::InvalidParameter(format!(
            "need at least 100 Monte-Carlo samples, got {n_samples}"
        )));
    }
    let m = clients.len();
    let avg = virtual_average(&to_client_params(clients), layout)?;
    let avg_partials = partials_at_avg(tasks, &avg)?;
    let grad_sq_sum = sum_form_grad_sq(&avg_partials, m);
    let d = layout.shared_range().len();
    let noise_std = inputs.s * inputs.sigma;

    // shared sum at the average, for the inner products
    let mut shared_sum = vec![0.0; d];
    for (_, gs) in &avg_partials {
        for (a, b) in shared_sum.iter_mut().zip(gs) {
            *a += b;
        }
    }

    let stream = RngStream::new(seed);
    let draws: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..n_samples)
            .into_par_iter()
            .map(|n| {
                let mut rng = stream.stream(Purpose::MonteCarlo, n as u64, 1);
                let i = rng.gen_range(0..m);
                let (gt, gs) = tasks[i].gradient(&clients[i].task, &clients[i].shared_copy)?;
                let noised: Vec<f64> = gs
                    .iter()
                    .map(|x| {
                        if noise_std > 0.0 {
                            x + noise_std
                                * rng.sample::<f64, _>(rand_distr::StandardNormal)
                        } else {
                            *x
                        }
                    })
                    .collect();
                // sum-form embedding: the task block passes through, the
                // shared block is scaled by 1/sqrt(M)
                let norm_sq = gt.iter().map(|x| x * x).sum::<f64>()
                    + noised.iter().map(|x| x * x).sum::<f64>() / m as f64;
                let inner = gt.iter().zip(&avg_partials[i].0).map(|(a, b)| a * b).sum::<f64>()
                    + shared_sum.iter().zip(&noised).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                Ok((inner, norm_sq))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let inners: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let norms: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let (inner_mean, inner_se) = mean_and_se(&inners);
    let (norm_mean, norm_se) = mean_and_se(&norms);

    let drift_penalty: f64 = {
        let sh = avg.shared_block();
        clients
            .iter()
            .map(|c| {
                inputs.l * inputs.l
                    * c.shared_copy.iter().zip(sh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / (2.0 * m as f64)
    };
    let inner_bound = grad_sq_sum / m as f64 - drift_penalty;
    let noise_term = d as f64 * noise_std * noise_std;
    let norm_bound = (noise_term + inputs.lambda * grad_sq_sum) / m as f64;

    let drift_observed = drift_of(clients, &avg);
    let drift_b = drift_bound(inputs, eta);

    Ok(DiagnosticsReport {
        inner: McBound {
            observed: inner_mean,
            bound: inner_bound,
            se: inner_se,
            holds: inner_mean >= inner_bound - 3.0 * inner_se,
        },
        norm: McBound {
            observed: norm_mean,
            bound: norm_bound,
            se: norm_se,
            holds: norm_mean <= norm_bound + 3.0 * norm_se,
        },
        drift: McBound {
            observed: drift_observed,
            bound: drift_b,
            se: 0.0,
            holds: drift_observed <= drift_b,
        },
    })
}
