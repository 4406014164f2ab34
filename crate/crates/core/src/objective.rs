//! Local objective functions over a client's raw parameter pair and the
//! assembled global objective. Objectives consume raw shared weights; the
//! sqrt(1/M) restriction scaling lives exclusively in the parameter-space
//! operators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::params::{BlockLayout, ClientParams, GlobalParam};
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

#[derive(Debug, Clone)]
pub enum Loss {
    /// f(v) = 1/2 v^T H v - b^T v over the stacked pair v = [task; shared].
    Quadratic { hessian: DMatrix<f64>, linear: DVector<f64> },
    /// Quadratic plus a bounded sinusoidal perturbation
    /// `amplitude * sum_j sin(frequency * v_j)`; gradient Lipschitz bound is
    /// `lambda_max(H) + amplitude * frequency^2`.
    SineQuadratic {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        amplitude: f64,
        frequency: f64,
    },
    /// Squared error of a bilinear model: the shared block is a linear map
    /// (task_dim x x_dim, row major), the task block is the head applied on
    /// top: pred = task^T (W x), loss = 1/2 (pred - y)^2 averaged.
    Bilinear { samples: Vec<Sample> },
    /// Logistic regression on the stacked pair: z = x^T [task; shared],
    /// labels in {0, 1}.
    Logistic { samples: Vec<Sample> },
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub client_id: usize,
    pub task_dim: usize,
    pub shared_dim: usize,
    pub loss: Loss,
}

impl TaskSpec {
    fn check_dims(&self, task: &[f64], shared: &[f64]) -> Result<()> {
        if task.len() != self.task_dim || shared.len() != self.shared_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "client {} expects ({}, {}) got ({}, {})",
                self.client_id,
                self.task_dim,
                self.shared_dim,
                task.len(),
                shared.len()
            )));
        }
        Ok(())
    }

    /// Local loss at raw parameters.
    pub fn loss(&self, task: &[f64], shared: &[f64]) -> Result<f64> {
        self.check_dims(task, shared)?;
        Ok(match &self.loss {
            Loss::Quadratic { hessian, linear } => {
                let v = stack(task, shared);
                0.5 * v.dot(&(hessian * &v)) - linear.dot(&v)
            }
            Loss::SineQuadratic { hessian, linear, amplitude, frequency } => {
                let v = stack(task, shared);
                let quad = 0.5 * v.dot(&(hessian * &v)) - linear.dot(&v);
                quad + amplitude * v.iter().map(|x| (frequency * x).sin()).sum::<f64>()
            }
            Loss::Bilinear { samples } => {
                let n = samples.len() as f64;
                samples
                    .iter()
                    .map(|s| {
                        let pred = bilinear_pred(task, shared, &s.features);
                        0.5 * (pred - s.label) * (pred - s.label)
                    })
                    .sum::<f64>()
                    / n
            }
            Loss::Logistic { samples } => {
                let n = samples.len() as f64;
                samples
                    .iter()
                    .map(|s| {
                        let z = dot_split(task, shared, &s.features);
                        // ln(1 + e^z) - y z, computed stably
                        softplus(z) - s.label * z
                    })
                    .sum::<f64>()
                    / n
            }
        })
    }

    /// Exact analytic partials with respect to the task block and the raw
    /// shared block.
    pub fn gradient(&self, task: &[f64], shared: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(task, shared)?;
        Ok(match &self.loss {
            Loss::Quadratic { hessian, linear } => {
                let v = stack(task, shared);
                let g = hessian * &v - linear;
                split(g.as_slice(), self.task_dim)
            }
            Loss::SineQuadratic { hessian, linear, amplitude, frequency } => {
                let v = stack(task, shared);
                let mut g = hessian * &v - linear;
                for (gj, vj) in g.iter_mut().zip(v.iter()) {
                    *gj += amplitude * frequency * (frequency * vj).cos();
                }
                split(g.as_slice(), self.task_dim)
            }
            Loss::Bilinear { samples } => {
                let x_dim = self.shared_dim / self.task_dim;
                let n = samples.len() as f64;
                let mut g_task = vec![0.0; self.task_dim];
                let mut g_shared = vec![0.0; self.shared_dim];
                for s in samples {
                    let hidden = apply_shared_map(shared, &s.features, self.task_dim, x_dim);
                    let pred: f64 = task.iter().zip(&hidden).map(|(a, b)| a * b).sum();
                    let resid = pred - s.label;
                    for (gt, h) in g_task.iter_mut().zip(&hidden) {
                        *gt += resid * h / n;
                    }
                    for r in 0..self.task_dim {
                        for c in 0..x_dim {
                            g_shared[r * x_dim + c] += resid * task[r] * s.features[c] / n;
                        }
                    }
                }
                (g_task, g_shared)
            }
            Loss::Logistic { samples } => {
                let n = samples.len() as f64;
                let mut g_task = vec![0.0; self.task_dim];
                let mut g_shared = vec![0.0; self.shared_dim];
                for s in samples {
                    let z = dot_split(task, shared, &s.features);
                    let resid = sigmoid(z) - s.label;
                    for (g, x) in g_task.iter_mut().zip(&s.features[..self.task_dim]) {
                        *g += resid * x / n;
                    }
                    for (g, x) in g_shared.iter_mut().zip(&s.features[self.task_dim..]) {
                        *g += resid * x / n;
                    }
                }
                (g_task, g_shared)
            }
        })
    }
}

fn stack(task: &[f64], shared: &[f64]) -> DVector<f64> {
    DVector::from_iterator(task.len() + shared.len(), task.iter().chain(shared).copied())
}

fn split(v: &[f64], task_dim: usize) -> (Vec<f64>, Vec<f64>) {
    (v[..task_dim].to_vec(), v[task_dim..].to_vec())
}

fn dot_split(task: &[f64], shared: &[f64], features: &[f64]) -> f64 {
    task.iter()
        .chain(shared)
        .zip(features)
        .map(|(a, b)| a * b)
        .sum()
}

fn apply_shared_map(shared: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| shared[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn bilinear_pred(task: &[f64], shared: &[f64], x: &[f64]) -> f64 {
    let cols = x.len();
    let hidden = apply_shared_map(shared, x, task.len(), cols);
    task.iter().zip(&hidden).map(|(a, b)| a * b).sum()
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        (1.0 + z.exp()).ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Global objective f(w) = (1/M) sum_i f_i(w_i, w_{M+1}).
pub fn global_loss(tasks: &[TaskSpec], w: &GlobalParam) -> Result<f64> {
    let layout = w.layout();
    if tasks.len() != layout.num_clients() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} tasks for {} clients",
            tasks.len(),
            layout.num_clients()
        )));
    }
    let shared = w.shared_block();
    let mut acc = 0.0;
    for (i, t) in tasks.iter().enumerate() {
        acc += t.loss(w.task_block(i)?, shared)?;
    }
    Ok(acc / tasks.len() as f64)
}

/// Gradient of the global objective in raw coordinates.
pub fn global_gradient(tasks: &[TaskSpec], w: &GlobalParam) -> Result<GlobalParam> {
    let layout = Arc::clone(w.layout());
    let m = tasks.len() as f64;
    let shared = w.shared_block().to_vec();
    let mut g = GlobalParam::zeros(Arc::clone(&layout));
    let mut g_shared_acc = vec![0.0; layout.shared_dim];
    for (i, t) in tasks.iter().enumerate() {
        let (gt, gs) = t.gradient(w.task_block(i)?, &shared)?;
        let range = layout.task_range(i)?;
        for (dst, src) in g.as_mut_slice()[range].iter_mut().zip(&gt) {
            *dst = src / m;
        }
        for (acc, src) in g_shared_acc.iter_mut().zip(&gs) {
            *acc += src;
        }
    }
    let shared_range = layout.shared_range();
    for (dst, src) in g.as_mut_slice()[shared_range].iter_mut().zip(&g_shared_acc) {
        *dst = src / m;
    }
    Ok(g)
}

/// Norm of the shared partial of the global objective at `w`.
pub fn shared_partial_norm(tasks: &[TaskSpec], w: &GlobalParam) -> Result<f64> {
    let g = global_gradient(tasks, w)?;
    Ok(g.shared_block().iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Problem constants consumed by the theory verifier.
#[derive(Debug, Clone)]
pub struct ObjectiveConstants {
    pub l_per_client: Vec<f64>,
    /// max_i L_i
    pub l: f64,
    /// Strong convexity of the global objective; None for nonconvex
    /// problems, Some(0.0) for merely convex ones.
    pub c: Option<f64>,
    /// Bound on the shared partial of the global objective over the probe
    /// region.
    pub b: f64,
    /// Shared-gradient diversity bound, >= 1.
    pub lambda: f64,
    /// Level-set radius from the reference initial point.
    pub r0: f64,
    pub fstar: f64,
    pub minimizer: Vec<f64>,
}

impl ObjectiveConstants {
    pub fn effective_lambda(&self) -> f64 {
        self.lambda.max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeRegion {
    /// Center in global coordinates.
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Samples B and lambda over the probe region and fills the level-set radius.
///
/// lambda follows the ratio the decay proof consumes:
/// `M * sum_i ||∂_s f_i(v_i)||^2 / ||sum_i ∂_s f_i(w̄)||^2`, clamped below at
/// 1 and inflated by 10%; a degenerate denominator yields the +inf sentinel.
/// The main-text variant of the ratio (with a 1/M numerator) is reported
/// separately as `lambda_main_text` by [`diversity_ratio`] callers if needed.
pub fn estimate_constants(
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    probe: &ProbeRegion,
    n_samples: usize,
    seed: u64,
    base: ObjectiveConstants,
) -> Result<ObjectiveConstants> {
    if n_samples == 0 {
        return Err(CoreError::InvalidParameter("need n_samples >= 1".into()));
    }
    if probe.center.len() != layout.total_dim() {
        return Err(CoreError::DimensionMismatch("probe center".into()));
    }
    let stream = RngStream::new(seed);
    let mut rng = stream.stream(Purpose::Probe, 0, 0);
    let mut b_max = 0.0f64;
    let mut lambda_max = if layout.num_clients() == 1 { 1.0 } else { 0.0f64 };
    for _ in 0..n_samples {
        // global point for B
        let data: Vec<f64> = probe
            .center
            .iter()
            .map(|c| c + rng.gen_range(-probe.radius..=probe.radius))
            .collect();
        let w = GlobalParam::from_vec(data, Arc::clone(layout))?;
        b_max = b_max.max(shared_partial_norm(tasks, &w)?);

        // independent client tuple for lambda
        let clients: Vec<ClientParams> = (0..layout.num_clients())
            .map(|i| {
                let range = layout.task_range(i).unwrap();
                ClientParams {
                    task: probe.center[range]
                        .iter()
                        .map(|c| c + rng.gen_range(-probe.radius..=probe.radius))
                        .collect(),
                    shared: probe.center[layout.shared_range()]
                        .iter()
                        .map(|c| c + rng.gen_range(-probe.radius..=probe.radius))
                        .collect(),
                }
            })
            .collect();
        let ratio = diversity_ratio(tasks, layout, &clients)?;
        lambda_max = lambda_max.max(ratio);
    }
    let lambda = if lambda_max.is_finite() {
        (lambda_max * 1.1).max(1.0)
    } else {
        f64::INFINITY
    };
    let r0 = level_set_radius(tasks, layout, &probe.center, &base, seed)?;
    Ok(ObjectiveConstants {
        b: b_max,
        lambda,
        r0,
        ..base
    })
}

/// The Appendix form of the gradient-diversity ratio for one client tuple.
pub fn diversity_ratio(
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    clients: &[ClientParams],
) -> Result<f64> {
    let m = layout.num_clients();
    let w_bar = crate::params::virtual_average(clients, layout)?;
    let shared_bar = w_bar.shared_block().to_vec();
    let mut numerator = 0.0;
    let mut denom_vec = vec![0.0; layout.shared_dim];
    for (i, t) in tasks.iter().enumerate() {
        let (_, gs) = t.gradient(&clients[i].task, &clients[i].shared)?;
        numerator += gs.iter().map(|x| x * x).sum::<f64>();
        let (_, gs_bar) = t.gradient(w_bar.task_block(i)?, &shared_bar)?;
        for (d, g) in denom_vec.iter_mut().zip(&gs_bar) {
            *d += g;
        }
    }
    numerator *= m as f64;
    let denominator: f64 = denom_vec.iter().map(|x| x * x).sum();
    if denominator < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok((numerator / denominator).max(1.0))
}

/// Level-set radius max ||w - w*|| over {f <= f(w0)}: closed form for
/// strongly convex quadratics, direction-sampled bisection otherwise.
fn level_set_radius(
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    w0: &[f64],
    base: &ObjectiveConstants,
    seed: u64,
) -> Result<f64> {
    let w0 = GlobalParam::from_vec(w0.to_vec(), Arc::clone(layout))?;
    let f0 = global_loss(tasks, &w0)?;
    let gap = (f0 - base.fstar).max(0.0);
    if let Some(c) = base.c {
        if c > 0.0 {
            return Ok((2.0 * gap / c).sqrt());
        }
    }
    // bisection along random unit directions from the minimizer
    let stream = RngStream::new(seed);
    let mut rng = stream.stream(Purpose::Probe, 1, 0);
    let n = layout.total_dim();
    let mut r_max = 0.0f64;
    for _ in 0..64 {
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let eval = |r: f64| -> Result<f64> {
            let data: Vec<f64> = base
                .minimizer
                .iter()
                .zip(&dir)
                .map(|(m, d)| m + r * d / norm)
                .collect();
            global_loss(tasks, &GlobalParam::from_vec(data, Arc::clone(layout))?)
        };
        let mut hi = 1.0f64;
        let mut iters = 0;
        while eval(hi)? <= f0 && iters < 60 {
            hi *= 2.0;
            iters += 1;
        }
        let mut lo = 0.0f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eval(mid)? <= f0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        r_max = r_max.max(lo);
    }
    Ok(r_max * 1.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn quad_task(task_dim: usize, shared_dim: usize, seed: u64) -> TaskSpec {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = task_dim + shared_dim;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let hessian = &a * a.transpose() + DMatrix::identity(d, d);
        let linear = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        TaskSpec {
            client_id: 0,
            task_dim,
            shared_dim,
            loss: Loss::Quadratic { hessian, linear },
        }
    }

    fn fd_gradient(t: &TaskSpec, task: &[f64], shared: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-5;
        let mut g_task = vec![0.0; task.len()];
        let mut g_shared = vec![0.0; shared.len()];
        for j in 0..task.len() {
            let mut plus = task.to_vec();
            let mut minus = task.to_vec();
            plus[j] += h;
            minus[j] -= h;
            g_task[j] =
                (t.loss(&plus, shared).unwrap() - t.loss(&minus, shared).unwrap()) / (2.0 * h);
        }
        for j in 0..shared.len() {
            let mut plus = shared.to_vec();
            let mut minus = shared.to_vec();
            plus[j] += h;
            minus[j] -= h;
            g_shared[j] =
                (t.loss(task, &plus).unwrap() - t.loss(task, &minus).unwrap()) / (2.0 * h);
        }
        (g_task, g_shared)
    }

    fn assert_close_rel(got: &[f64], want: &[f64], tol: f64) {
        for (g, w) in got.iter().zip(want) {
            assert!(
                (g - w).abs() <= tol * w.abs().max(1.0),
                "got {g}, want {w}"
            );
        }
    }

    #[test]
    fn quadratic_zero_at_origin_when_unforced() {
        let d = 3;
        let t = TaskSpec {
            client_id: 0,
            task_dim: 1,
            shared_dim: 2,
            loss: Loss::Quadratic {
                hessian: DMatrix::identity(d, d),
                linear: DVector::zeros(d),
            },
        };
        assert_eq!(t.loss(&[0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn bilinear_toy_values() {
        // single sample, scalar everything: loss = 1/2 (h s x - y)^2
        let t = TaskSpec {
            client_id: 0,
            task_dim: 1,
            shared_dim: 1,
            loss: Loss::Bilinear {
                samples: vec![Sample { features: vec![1.0], label: 0.0 }],
            },
        };
        assert!((t.loss(&[2.0], &[3.0]).unwrap() - 18.0).abs() < 1e-12);
        let (gt, gs) = t.gradient(&[2.0], &[3.0]).unwrap();
        assert!((gt[0] - 18.0).abs() < 1e-12); // h s^2 x^2
        assert!((gs[0] - 12.0).abs() < 1e-12); // h^2 s x^2
    }

    #[test]
    fn logistic_matches_naive_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples: Vec<Sample> = (0..3)
            .map(|_| Sample {
                features: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
            })
            .collect();
        let t = TaskSpec {
            client_id: 0,
            task_dim: 2,
            shared_dim: 2,
            loss: Loss::Logistic { samples: samples.clone() },
        };
        let task = [0.3, -0.7];
        let shared = [1.1, 0.2];
        // independent per-sample log-loss summation
        let mut expect = 0.0;
        for s in &samples {
            let z: f64 = s.features.iter().zip(task.iter().chain(shared.iter())).map(|(x, w)| x * w).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            expect += -(s.label * p.ln() + (1.0 - s.label) * (1.0 - p).ln());
        }
        expect /= 3.0;
        assert!((t.loss(&task, &shared).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let kinds: Vec<TaskSpec> = vec![
            quad_task(2, 3, 1),
            TaskSpec {
                client_id: 0,
                task_dim: 2,
                shared_dim: 3,
                loss: match quad_task(2, 3, 2).loss {
                    Loss::Quadratic { hessian, linear } => Loss::SineQuadratic {
                        hessian,
                        linear,
                        amplitude: 0.3,
                        frequency: 2.0,
                    },
                    _ => unreachable!(),
                },
            },
            TaskSpec {
                client_id: 0,
                task_dim: 2,
                shared_dim: 6,
                loss: Loss::Bilinear {
                    samples: (0..5)
                        .map(|_| Sample {
                            features: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                            label: rng.gen_range(-1.0..1.0),
                        })
                        .collect(),
                },
            },
            TaskSpec {
                client_id: 0,
                task_dim: 2,
                shared_dim: 3,
                loss: Loss::Logistic {
                    samples: (0..6)
                        .map(|_| Sample {
                            features: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                            label: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
                        })
                        .collect(),
                },
            },
        ];
        for t in &kinds {
            for _ in 0..100 {
                let task: Vec<f64> = (0..t.task_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let shared: Vec<f64> = (0..t.shared_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (gt, gs) = t.gradient(&task, &shared).unwrap();
                let (ft, fs) = fd_gradient(t, &task, &shared);
                assert_close_rel(&gt, &ft, 1e-5);
                assert_close_rel(&gs, &fs, 1e-5);
            }
        }
    }

    #[test]
    fn gradient_zero_at_quadratic_minimizer() {
        let t = quad_task(2, 2, 5);
        let (hessian, linear) = match &t.loss {
            Loss::Quadratic { hessian, linear } => (hessian.clone(), linear.clone()),
            _ => unreachable!(),
        };
        let vstar = hessian.clone().lu().solve(&linear).unwrap();
        let (gt, gs) = t.gradient(&vstar.as_slice()[..2], &vstar.as_slice()[2..]).unwrap();
        assert!(gt.iter().chain(&gs).all(|g| g.abs() <= 1e-10));
    }

    #[test]
    fn global_loss_single_client_equals_local() {
        let layout = Arc::new(BlockLayout::new(vec![2], 3).unwrap());
        let t = quad_task(2, 3, 8);
        let data: Vec<f64> = (0..5).map(|k| 0.3 * k as f64 - 0.5).collect();
        let w = GlobalParam::from_vec(data, Arc::clone(&layout)).unwrap();
        let local = t.loss(w.task_block(0).unwrap(), w.shared_block()).unwrap();
        assert_eq!(global_loss(&[t], &w).unwrap(), local);
    }

    #[test]
    fn global_loss_identical_clients_equals_any_one() {
        let layout = Arc::new(BlockLayout::new(vec![2, 2, 2], 3).unwrap());
        let proto = quad_task(2, 3, 9);
        let tasks: Vec<TaskSpec> = (0..3)
            .map(|i| TaskSpec { client_id: i, ..proto.clone() })
            .collect();
        let data: Vec<f64> = (0..layout.total_dim()).map(|k| (k as f64 * 0.7).sin()).collect();
        // identical task blocks so every restriction sees the same view
        let mut data = data;
        for i in 1..3 {
            let src: Vec<f64> = data[0..2].to_vec();
            let range = layout.task_range(i).unwrap();
            data[range].copy_from_slice(&src);
        }
        let w = GlobalParam::from_vec(data, Arc::clone(&layout)).unwrap();
        let one = tasks[0].loss(w.task_block(0).unwrap(), w.shared_block()).unwrap();
        assert!((global_loss(&tasks, &w).unwrap() - one).abs() < 1e-12);
    }

    #[test]
    fn global_loss_matches_assembled_quadratic_oracle() {
        // assemble the full global Hessian explicitly and evaluate the form
        let layout = Arc::new(BlockLayout::new(vec![2, 1, 2], 2).unwrap());
        let tasks: Vec<TaskSpec> = vec![
            TaskSpec { client_id: 0, ..quad_task(2, 2, 21) },
            TaskSpec { client_id: 1, ..quad_task(1, 2, 22) },
            TaskSpec { client_id: 2, ..quad_task(2, 2, 23) },
        ];
        let n = layout.total_dim();
        let mut h_g = DMatrix::<f64>::zeros(n, n);
        let mut b_g = DVector::<f64>::zeros(n);
        let m = tasks.len() as f64;
        for (i, t) in tasks.iter().enumerate() {
            let (h, b) = match &t.loss {
                Loss::Quadratic { hessian, linear } => (hessian, linear),
                _ => unreachable!(),
            };
            let mut idx: Vec<usize> = layout.task_range(i).unwrap().collect();
            idx.extend(layout.shared_range());
            for (r, &gr) in idx.iter().enumerate() {
                b_g[gr] += b[r] / m;
                for (c, &gc) in idx.iter().enumerate() {
                    h_g[(gr, gc)] += h[(r, c)] / m;
                }
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..20 {
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v = DVector::from_vec(data.clone());
            let oracle = 0.5 * v.dot(&(&h_g * &v)) - b_g.dot(&v);
            let w = GlobalParam::from_vec(data, Arc::clone(&layout)).unwrap();
            let got = global_loss(&tasks, &w).unwrap();
            assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn diversity_ratio_is_one_for_identical_clients() {
        let layout = Arc::new(BlockLayout::new(vec![2, 2, 2], 3).unwrap());
        let proto = quad_task(2, 3, 31);
        let tasks: Vec<TaskSpec> = (0..3)
            .map(|i| TaskSpec { client_id: i, ..proto.clone() })
            .collect();
        let client = ClientParams { task: vec![0.4, -0.2], shared: vec![1.0, 0.5, -0.3] };
        let clients = vec![client.clone(), client.clone(), client];
        let ratio = diversity_ratio(&tasks, &layout, &clients).unwrap();
        assert!((ratio - 1.0).abs() < 1e-9, "ratio = {ratio}");
    }

    #[test]
    fn diversity_ratio_single_client_is_one() {
        let layout = Arc::new(BlockLayout::new(vec![2], 3).unwrap());
        let tasks = vec![quad_task(2, 3, 32)];
        let clients = vec![ClientParams { task: vec![0.4, -0.2], shared: vec![1.0, 0.5, -0.3] }];
        assert!((diversity_ratio(&tasks, &layout, &clients).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_denominator_yields_infinity() {
        // two clients whose shared partials cancel exactly at the average
        let d = 2; // task 1, shared 1
        let h = DMatrix::identity(d, d);
        let make = |sign: f64| TaskSpec {
            client_id: 0,
            task_dim: 1,
            shared_dim: 1,
            loss: Loss::Quadratic {
                hessian: h.clone(),
                linear: DVector::from_vec(vec![0.0, sign]),
            },
        };
        let layout = Arc::new(BlockLayout::new(vec![1, 1], 1).unwrap());
        let tasks = vec![
            TaskSpec { client_id: 0, ..make(1.0) },
            TaskSpec { client_id: 1, ..make(-1.0) },
        ];
        // shared copies both zero: partials are -1 and +1, sum is 0
        let clients = vec![
            ClientParams { task: vec![0.0], shared: vec![0.0] },
            ClientParams { task: vec![0.0], shared: vec![0.0] },
        ];
        let ratio = diversity_ratio(&tasks, &layout, &clients).unwrap();
        assert!(ratio.is_infinite());
    }
}
