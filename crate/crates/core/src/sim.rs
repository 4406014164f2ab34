//! In-process federated simulator: shared lower layers with task-specific
//! upper layers, client subsampling, periodic aggregation, and optional
//! per-client Gaussian perturbation of the shared update.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::{compose_clt, MuFormula};
use crate::dp::{clip, perturb, DpConfig};
use crate::error::{CoreError, Result};
use crate::objective::{global_gradient, global_loss, TaskSpec};
use crate::params::{virtual_average, BlockLayout, ClientParams, GlobalParam};
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Independent per-client descent, no communication.
    Local,
    /// The whole parameter vector is aggregated.
    FedAvg,
    /// FedAvg with clipped, noised client updates.
    DpFedAvg,
    /// Shared block aggregated, task blocks private to each client.
    FedMtl,
    /// FedMtl with clipped, noised shared updates.
    DpFedMtl,
}

impl Method {
    pub fn is_private(self) -> bool {
        matches!(self, Method::DpFedAvg | Method::DpFedMtl)
    }

    pub fn communicates(self) -> bool {
        !matches!(self, Method::Local)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Each client participates independently with probability K/M.
    #[default]
    Bernoulli,
    /// Exactly K clients drawn uniformly without replacement.
    FixedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationDivisor {
    /// Divide by the realized subset size (unbiased mean).
    #[default]
    Realized,
    /// Divide by the nominal K regardless of the realized size.
    NominalK,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub method: Method,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub h: usize,
    pub eta: f64,
    pub dp: DpConfig,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub divisor: AggregationDivisor,
    /// Selected clients overwrite their shared copy with the (possibly stale)
    /// server value every round instead of only at synchronization rounds.
    #[serde(default)]
    pub literal_broadcast: bool,
    /// Initial global parameter; zeros when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Capture full client states every this many rounds (for diagnostics).
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn default_record_every() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.t == 0 || self.h == 0 || self.record_every == 0 {
            return Err(CoreError::InvalidParameter(
                "m, t, h, record_every must be positive".into(),
            ));
        }
        if self.k == 0 || self.k > self.m {
            return Err(CoreError::InvalidParameter(format!(
                "need 1 <= k <= m, got k = {}, m = {}",
                self.k, self.m
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("eta = {} must be positive", self.eta)));
        }
        if self.method.is_private() {
            self.dp.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: usize,
    pub task: Vec<f64>,
    pub shared_copy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_sq: f64,
    /// Sum over clients of the squared restricted distance to the virtual
    /// average.
    pub drift: f64,
    /// Norm of the shared block of the global gradient (used to calibrate
    /// the shared-gradient bound).
    pub shared_grad_norm: f64,
    pub subset_size: usize,
    /// Cumulative privacy parameter; absent for non-private dynamics.
    pub cum_mu: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
    pub initial_loss: f64,
    pub skipped_rounds: usize,
    pub diverged: Option<usize>,
    pub wall_time_ms: u128,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub clients: Vec<ClientState>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub final_clients: Vec<ClientState>,
    pub snapshots: Vec<Snapshot>,
}

/// Client subset for one round. Bernoulli mode includes each client with
/// probability K/M; fixed-K mode draws exactly K without replacement.
pub fn poisson_sample(m: usize, k: usize, sampling: Sampling, rng: &mut ChaCha12Rng) -> Vec<usize> {
    match sampling {
        Sampling::Bernoulli => {
            let p = k as f64 / m as f64;
            (0..m).filter(|_| rng.gen::<f64>() < p).collect()
        }
        Sampling::FixedK => {
            let mut pool: Vec<usize> = (0..m).collect();
            for j in 0..k {
                let pick = rng.gen_range(j..pool.len());
                pool.swap(j, pick);
            }
            let mut chosen = pool[..k].to_vec();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// One local update. Private methods clip the communication-bound partial
/// gradient and add Gaussian noise from `rng`; `rng` is untouched when the
/// noise scale is zero.
pub fn local_step(
    state: &ClientState,
    task: &TaskSpec,
    eta: f64,
    dp: &DpConfig,
    rng: &mut ChaCha12Rng,
    method: Method,
) -> Result<ClientState> {
    let (mut g_task, mut g_shared) = task.gradient(&state.task, &state.shared_copy)?;
    if g_task.iter().chain(&g_shared).any(|x| !x.is_finite()) {
        return Err(CoreError::Diverged { step: 0 });
    }
    match method {
        Method::Local | Method::FedMtl => {}
        Method::DpFedMtl => {
            clip(&mut g_shared, dp.clip_norm);
            perturb(&mut g_shared, dp.sensitivity(), dp.sigma, rng);
        }
        Method::FedAvg => {}
        Method::DpFedAvg => {
            // the whole vector is communication-bound: clip and noise jointly
            let mut full: Vec<f64> = g_task.iter().chain(&g_shared).copied().collect();
            clip(&mut full, dp.clip_norm);
            perturb(&mut full, dp.sensitivity(), dp.sigma, rng);
            let nt = g_task.len();
            g_task.copy_from_slice(&full[..nt]);
            g_shared.copy_from_slice(&full[nt..]);
        }
    }
    let mut next = state.clone();
    for (x, g) in next.task.iter_mut().zip(&g_task) {
        *x -= eta * g;
    }
    for (x, g) in next.shared_copy.iter_mut().zip(&g_shared) {
        *x -= eta * g;
    }
    Ok(next)
}

/// Mean of the selected clients' communication-bound vectors.
pub fn aggregate(selected: &[&[f64]], divisor: AggregationDivisor, nominal_k: usize) -> Result<Vec<f64>> {
    if selected.is_empty() {
        return Err(CoreError::InvalidParameter("aggregate over empty selection".into()));
    }
    let d = selected[0].len();
    let denom = match divisor {
        AggregationDivisor::Realized => selected.len() as f64,
        AggregationDivisor::NominalK => nominal_k as f64,
    };
    let mut out = vec![0.0; d];
    for s in selected {
        for (o, x) in out.iter_mut().zip(*s) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    Ok(out)
}

fn initial_states(cfg: &SimConfig, layout: &Arc<BlockLayout>) -> Result<Vec<ClientState>> {
    let init = match &cfg.init {
        Some(v) => GlobalParam::from_vec(v.clone(), Arc::clone(layout))?,
        None => GlobalParam::zeros(Arc::clone(layout)),
    };
    (0..cfg.m)
        .map(|i| {
            Ok(ClientState {
                client_id: i,
                task: init.task_block(i)?.to_vec(),
                shared_copy: init.shared_block().to_vec(),
            })
        })
        .collect()
}

fn drift_sum(clients: &[ClientState], avg: &GlobalParam) -> f64 {
    // task blocks of the virtual average coincide with each client's own
    // block, so only the shared component contributes; the restriction scales
    // it by 1/sqrt(M)
    let m = clients.len() as f64;
    let sh = avg.shared_block();
    clients
        .iter()
        .map(|c| {
            c.shared_copy
                .iter()
                .zip(sh)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m
        })
        .sum()
}

fn client_params(clients: &[ClientState]) -> Vec<ClientParams> {
    clients
        .iter()
        .map(|c| ClientParams { task: c.task.clone(), shared: c.shared_copy.clone() })
        .collect()
}

/// Executes the federated loop for `cfg.t` rounds. Bit-reproducible in
/// (cfg, tasks) and independent of thread scheduling.
pub fn run(cfg: &SimConfig, tasks: &[TaskSpec], layout: &Arc<BlockLayout>) -> Result<RunOutput> {
    cfg.validate()?;
    if tasks.len() != cfg.m || layout.num_clients() != cfg.m {
        return Err(CoreError::InvalidParameter(format!(
            "m = {} but {} tasks and {}-client layout",
            cfg.m,
            tasks.len(),
            layout.num_clients()
        )));
    }
    let start = Instant::now();
    let stream = RngStream::new(cfg.seed);
    let mut clients = initial_states(cfg, layout)?;
    let mut server_shared: Vec<f64> = clients[0].shared_copy.clone();
    let p = cfg.k as f64 / cfg.m as f64;
    let noisy = cfg.method.is_private() && cfg.dp.sigma > 0.0;

    let avg0 = virtual_average(&client_params(&clients), layout)?;
    let initial_loss = global_loss(tasks, &avg0)?;

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut skipped_rounds = 0usize;
    let mut diverged = None;

    'rounds: for t in 0..cfg.t {
        let mut rng = stream.stream(Purpose::ClientSampling, 0, t as u64);
        let subset = if cfg.method.communicates() {
            poisson_sample(cfg.m, cfg.k, cfg.sampling, &mut rng)
        } else {
            (0..cfg.m).collect()
        };

        if subset.is_empty() {
            skipped_rounds += 1;
        } else {
            if cfg.literal_broadcast && cfg.method.communicates() {
                for &i in &subset {
                    clients[i].shared_copy.copy_from_slice(&server_shared);
                }
            }
            // deterministic regardless of scheduling: per-client generators
            // are derived from (seed, client, round), and results are written
            // back in subset order
            let stepped: Vec<Result<ClientState>> = {
                use rayon::prelude::*;
                subset
                    .par_iter()
                    .map(|&i| {
                        let mut nrng = stream.stream(Purpose::Noise, i as u64, t as u64);
                        local_step(&clients[i], &tasks[i], cfg.eta, &cfg.dp, &mut nrng, cfg.method)
                    })
                    .collect()
            };
            for (&i, next) in subset.iter().zip(stepped) {
                match next {
                    Ok(s) if s.task.iter().chain(&s.shared_copy).all(|x| x.is_finite()) => {
                        clients[i] = s;
                    }
                    _ => {
                        diverged = Some(t);
                        break 'rounds;
                    }
                }
            }

            if cfg.method.communicates() && (t + 1) % cfg.h == 0 {
                if matches!(cfg.method, Method::FedAvg | Method::DpFedAvg) {
                    let full: Vec<Vec<f64>> = subset
                        .iter()
                        .map(|&i| {
                            clients[i]
                                .task
                                .iter()
                                .chain(&clients[i].shared_copy)
                                .copied()
                                .collect()
                        })
                        .collect();
                    let refs: Vec<&[f64]> = full.iter().map(|v| v.as_slice()).collect();
                    let mean = aggregate(&refs, cfg.divisor, cfg.k)?;
                    let nt = clients[0].task.len();
                    for c in clients.iter_mut() {
                        c.task.copy_from_slice(&mean[..nt]);
                        c.shared_copy.copy_from_slice(&mean[nt..]);
                    }
                    server_shared.copy_from_slice(&mean[nt..]);
                } else {
                    let refs: Vec<&[f64]> =
                        subset.iter().map(|&i| clients[i].shared_copy.as_slice()).collect();
                    let mean = aggregate(&refs, cfg.divisor, cfg.k)?;
                    for c in clients.iter_mut() {
                        c.shared_copy.copy_from_slice(&mean);
                    }
                    server_shared = mean;
                }
            }
        }

        let step = t + 1;
        if step % cfg.record_every == 0 || step == cfg.t {
            let avg = virtual_average(&client_params(&clients), layout)?;
            let loss = global_loss(tasks, &avg)?;
            let grad = global_gradient(tasks, &avg)?;
            let grad_sq = grad.norm_sq();
            let shared_grad_norm =
                grad.shared_block().iter().map(|x| x * x).sum::<f64>().sqrt();
            if !loss.is_finite() || !grad_sq.is_finite() {
                diverged = Some(t);
                break 'rounds;
            }
            let cum_mu = if noisy {
                Some(compose_clt(p, step, cfg.dp.sigma, MuFormula::Clt)?.mu)
            } else {
                None
            };
            records.push(StepRecord {
                step,
                loss,
                grad_sq,
                drift: drift_sum(&clients, &avg),
                shared_grad_norm,
                subset_size: subset.len(),
                cum_mu,
            });
        }
        if let Some(every) = cfg.snapshot_every {
            if step % every == 0 {
                snapshots.push(Snapshot { step, clients: clients.clone() });
            }
        }
    }

    Ok(RunOutput {
        metrics: RunMetrics {
            records,
            initial_loss,
            skipped_rounds,
            diverged,
            wall_time_ms: start.elapsed().as_millis(),
            seed: cfg.seed,
            config_hash: String::new(),
        },
        final_clients: clients,
        snapshots,
    })
}

/// One sweep point overrides a subset of the base configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub h: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub method: Option<Method>,
}

impl SweepPoint {
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut cfg = base.clone();
        if let Some(s) = self.sigma {
            cfg.dp.sigma = s;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub point: usize,
    pub mean_final_loss: f64,
    pub std_final_loss: f64,
    pub diverged_runs: usize,
}

/// Runs each grid point `repeats` times with seeds derived from
/// (base seed, grid index, repeat).
pub fn sweep(
    base: &SimConfig,
    tasks: &[TaskSpec],
    layout: &Arc<BlockLayout>,
    grid: &[SweepPoint],
    repeats: usize,
) -> Result<(Vec<Vec<RunOutput>>, Vec<SweepSummary>)> {
    if grid.is_empty() || repeats == 0 {
        return Err(CoreError::InvalidParameter("sweep needs a nonempty grid and repeats >= 1".into()));
    }
    let stream = RngStream::new(base.seed);
    let mut all = Vec::with_capacity(grid.len());
    let mut summaries = Vec::with_capacity(grid.len());
    for (gi, point) in grid.iter().enumerate() {
        let mut runs = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mut cfg = point.apply(base);
            cfg.seed = stream.derive(gi as u64, rep as u64).master_seed;
            runs.push(run(&cfg, tasks, layout)?);
        }
        let finals: Vec<f64> = runs
            .iter()
            .filter(|r| r.metrics.diverged.is_none())
            .filter_map(|r| r.metrics.records.last().map(|rec| rec.loss))
            .collect();
        let n = finals.len().max(1) as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        summaries.push(SweepSummary {
            point: gi,
            mean_final_loss: mean,
            std_final_loss: var.sqrt(),
            diverged_runs: runs.iter().filter(|r| r.metrics.diverged.is_some()).count(),
        });
        all.push(runs);
    }
    Ok((all, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, SuiteKind, SyntheticConfig};

    fn quad_problem(m: usize, seed: u64) -> crate::synthetic::SyntheticProblem {
        generate_synthetic(
            &SyntheticConfig {
                kind: SuiteKind::StronglyConvexQuadratic,
                clients: m,
                task_dim: 2,
                shared_dim: 3,
                eig_range: (1.0, 6.0),
                heterogeneity: 0.5,
                linear_scale: 1.0,
                samples_per_client: 0,
                amplitude: 0.0,
                frequency: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    fn base_cfg(m: usize, method: Method) -> SimConfig {
        SimConfig {
            method,
            m,
            k: m,
            t: 50,
            h: 1,
            eta: 0.05,
            dp: DpConfig {
                clip_norm: f64::INFINITY,
                sigma: 0.0,
                k: m,
                m,
                sensitivity_override: None,
            },
            seed: 7,
            record_every: 1,
            sampling: Sampling::Bernoulli,
            divisor: AggregationDivisor::Realized,
            literal_broadcast: false,
            init: None,
            snapshot_every: None,
        }
    }

    #[test]
    fn sample_k_equals_m_selects_all() {
        let stream = RngStream::new(1);
        for t in 0..20 {
            let mut rng = stream.stream(Purpose::ClientSampling, 0, t);
            let s = poisson_sample(7, 7, Sampling::Bernoulli, &mut rng);
            assert_eq!(s, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sample_mean_size_matches_binomial() {
        let stream = RngStream::new(2);
        let mut total = 0usize;
        for t in 0..10_000u64 {
            let mut rng = stream.stream(Purpose::ClientSampling, 0, t);
            total += poisson_sample(1000, 20, Sampling::Bernoulli, &mut rng).len();
        }
        let mean = total as f64 / 10_000.0;
        assert!((mean - 20.0).abs() < 0.5, "mean subset size {mean}");
    }

    #[test]
    fn sample_deterministic_per_step() {
        let stream = RngStream::new(3);
        let a = poisson_sample(50, 5, Sampling::Bernoulli, &mut stream.stream(Purpose::ClientSampling, 0, 9));
        let b = poisson_sample(50, 5, Sampling::Bernoulli, &mut stream.stream(Purpose::ClientSampling, 0, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_k_is_exact_and_sorted() {
        let stream = RngStream::new(4);
        for t in 0..100u64 {
            let s = poisson_sample(30, 7, Sampling::FixedK, &mut stream.stream(Purpose::ClientSampling, 0, t));
            assert_eq!(s.len(), 7);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 30));
        }
    }

    #[test]
    fn aggregate_trivials() {
        let one = [1.0, -2.0];
        assert_eq!(aggregate(&[&one], AggregationDivisor::Realized, 1).unwrap(), vec![1.0, -2.0]);
        let a = [0.0];
        let b = [4.0];
        assert_eq!(aggregate(&[&a, &b], AggregationDivisor::Realized, 2).unwrap(), vec![2.0]);
    }

    #[test]
    fn aggregate_matches_naive_oracle() {
        let stream = RngStream::new(5);
        let mut rng = stream.stream(Purpose::Probe, 0, 0);
        let vecs: Vec<Vec<f64>> =
            (0..5).map(|_| (0..8).map(|_| rng.gen_range(-10.0f64..10.0)).collect()).collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        let got = aggregate(&refs, AggregationDivisor::Realized, 5).unwrap();
        for j in 0..8 {
            let mut acc = 0.0;
            for v in &vecs {
                acc += v[j];
            }
            assert!((got[j] - acc / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn local_step_eta_zero_is_identity() {
        let p = quad_problem(2, 1);
        let cfg = base_cfg(2, Method::FedMtl);
        let state = ClientState { client_id: 0, task: vec![1.0, 2.0], shared_copy: vec![0.5; 3] };
        let mut rng = RngStream::new(0).stream(Purpose::Noise, 0, 0);
        let next = local_step(&state, &p.tasks[0], 0.0, &cfg.dp, &mut rng, Method::FedMtl).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn local_step_fixed_at_minimizer() {
        let p = quad_problem(1, 2);
        let cfg = base_cfg(1, Method::FedMtl);
        let w = &p.constants.minimizer;
        let state = ClientState {
            client_id: 0,
            task: w[..2].to_vec(),
            shared_copy: w[2..].to_vec(),
        };
        let mut rng = RngStream::new(0).stream(Purpose::Noise, 0, 0);
        let next = local_step(&state, &p.tasks[0], 0.1, &cfg.dp, &mut rng, Method::FedMtl).unwrap();
        for (a, b) in next.task.iter().chain(&next.shared_copy).zip(w) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_private_step_equals_public_step() {
        let p = quad_problem(2, 3);
        let cfg = base_cfg(2, Method::DpFedMtl);
        let state = ClientState { client_id: 1, task: vec![0.3, -0.7], shared_copy: vec![1.0, 2.0, -1.0] };
        let mut r1 = RngStream::new(0).stream(Purpose::Noise, 1, 0);
        let mut r2 = RngStream::new(0).stream(Purpose::Noise, 1, 0);
        let a = local_step(&state, &p.tasks[1], 0.05, &cfg.dp, &mut r1, Method::DpFedMtl).unwrap();
        let b = local_step(&state, &p.tasks[1], 0.05, &cfg.dp, &mut r2, Method::FedMtl).unwrap();
        assert_eq!(a, b);
    }

    /// With sigma = 0, H = 1, K = M the federated dynamics are synchronized
    /// block gradient descent: task blocks advance with the unscaled local
    /// partials and the shared block with their mean.
    #[test]
    fn full_participation_matches_block_gd_oracle() {
        let p = quad_problem(3, 4);
        let mut cfg = base_cfg(3, Method::DpFedMtl);
        cfg.t = 40;
        let out = run(&cfg, &p.tasks, &p.layout).unwrap();

        // monolithic oracle on the assembled objective
        let mut w = GlobalParam::zeros(Arc::clone(&p.layout));
        for rec in &out.metrics.records {
            let g = global_gradient(&p.tasks, &w).unwrap();
            let m = 3.0;
            for i in 0..3 {
                let r = p.layout.task_range(i).unwrap();
                for j in r {
                    w.as_mut_slice()[j] -= cfg.eta * m * g.as_slice()[j];
                }
            }
            for j in p.layout.shared_range() {
                w.as_mut_slice()[j] -= cfg.eta * g.as_slice()[j];
            }
            let loss = global_loss(&p.tasks, &w).unwrap();
            assert!((loss - rec.loss).abs() < 1e-8, "step {}: {} vs {}", rec.step, loss, rec.loss);
        }
    }

    #[test]
    fn zero_noise_run_is_bitwise_equal_to_public_run() {
        let p = quad_problem(4, 5);
        let mut private = base_cfg(4, Method::DpFedMtl);
        private.k = 2;
        private.h = 3;
        private.t = 30;
        let mut public = private.clone();
        public.method = Method::FedMtl;
        let a = run(&private, &p.tasks, &p.layout).unwrap();
        let b = run(&public, &p.tasks, &p.layout).unwrap();
        for (x, y) in a.final_clients.iter().zip(&b.final_clients) {
            assert_eq!(x, y);
        }
        for (ra, rb) in a.metrics.records.iter().zip(&b.metrics.records) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        }
    }

    #[test]
    fn shared_copies_agree_after_sync() {
        let p = quad_problem(4, 6);
        let mut cfg = base_cfg(4, Method::FedMtl);
        cfg.k = 2;
        cfg.h = 5;
        cfg.t = 20;
        cfg.sampling = Sampling::FixedK; // every sync round actually aggregates
        cfg.snapshot_every = Some(5);
        let out = run(&cfg, &p.tasks, &p.layout).unwrap();
        assert!(!out.snapshots.is_empty());
        for snap in &out.snapshots {
            // snapshots land on multiples of h = 5, i.e. right after a sync
            let first = &snap.clients[0].shared_copy;
            for c in &snap.clients[1..] {
                assert_eq!(&c.shared_copy, first, "step {}", snap.step);
            }
            let avg = virtual_average(&client_params(&snap.clients), &p.layout).unwrap();
            assert_eq!(avg.shared_block(), first.as_slice());
        }
    }

    #[test]
    fn recording_cadence_does_not_perturb_dynamics() {
        let p = quad_problem(3, 7);
        let mut dense = base_cfg(3, Method::DpFedMtl);
        dense.dp.sigma = 1.0;
        dense.dp.clip_norm = 1.0;
        dense.k = 2;
        dense.t = 25;
        let mut sparse = dense.clone();
        sparse.record_every = 25;
        let a = run(&dense, &p.tasks, &p.layout).unwrap();
        let b = run(&sparse, &p.tasks, &p.layout).unwrap();
        assert_eq!(a.final_clients, b.final_clients);
        assert_eq!(a.metrics.records.last().unwrap(), b.metrics.records.last().unwrap());
    }

    #[test]
    fn local_method_matches_independent_descent() {
        let p = quad_problem(3, 8);
        let mut cfg = base_cfg(3, Method::Local);
        cfg.t = 30;
        let out = run(&cfg, &p.tasks, &p.layout).unwrap();
        for (i, c) in out.final_clients.iter().enumerate() {
            let mut task = vec![0.0; 2];
            let mut shared = vec![0.0; 3];
            for _ in 0..30 {
                let (gt, gs) = p.tasks[i].gradient(&task, &shared).unwrap();
                for (x, g) in task.iter_mut().zip(&gt) {
                    *x -= cfg.eta * g;
                }
                for (x, g) in shared.iter_mut().zip(&gs) {
                    *x -= cfg.eta * g;
                }
            }
            assert_eq!(c.task, task);
            assert_eq!(c.shared_copy, shared);
        }
    }

    #[test]
    fn identical_across_thread_counts() {
        let p = quad_problem(6, 9);
        let mut cfg = base_cfg(6, Method::DpFedMtl);
        cfg.dp.sigma = 0.5;
        cfg.dp.clip_norm = 2.0;
        cfg.k = 3;
        cfg.t = 20;
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = single.install(|| run(&cfg, &p.tasks, &p.layout)).unwrap();
        let b = many.install(|| run(&cfg, &p.tasks, &p.layout)).unwrap();
        for (x, y) in a.final_clients.iter().zip(&b.final_clients) {
            assert_eq!(x, y);
        }
        for (ra, rb) in a.metrics.records.iter().zip(&b.metrics.records) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
            assert_eq!(ra.drift.to_bits(), rb.drift.to_bits());
        }
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        let p = quad_problem(2, 10);
        let mut cfg = base_cfg(2, Method::FedMtl);
        cfg.eta = 10.0; // far beyond 2/L: blows up
        cfg.t = 200;
        let out = run(&cfg, &p.tasks, &p.layout).unwrap();
        assert!(out.metrics.diverged.is_some());
        assert!(!out.metrics.records.is_empty());
        assert!(out.metrics.records.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn cumulative_mu_grows_with_steps() {
        let p = quad_problem(4, 11);
        let mut cfg = base_cfg(4, Method::DpFedMtl);
        cfg.dp.sigma = 2.0;
        cfg.dp.clip_norm = 1.0;
        cfg.k = 2;
        cfg.t = 30;
        let out = run(&cfg, &p.tasks, &p.layout).unwrap();
        let mus: Vec<f64> = out.metrics.records.iter().map(|r| r.cum_mu.unwrap()).collect();
        assert!(mus.windows(2).all(|w| w[1] > w[0]));
        // closed form at the final step
        let expect = ((30.0f64 * ((1.0f64 / 4.0).exp() - 1.0)).sqrt()) * 0.5;
        assert!((mus.last().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn sweep_single_point_matches_run() {
        let p = quad_problem(3, 12);
        let mut cfg = base_cfg(3, Method::FedMtl);
        cfg.t = 15;
        let (runs, summary) =
            sweep(&cfg, &p.tasks, &p.layout, &[SweepPoint::default()], 1).unwrap();
        let mut solo_cfg = cfg.clone();
        solo_cfg.seed = RngStream::new(cfg.seed).derive(0, 0).master_seed;
        let solo = run(&solo_cfg, &p.tasks, &p.layout).unwrap();
        assert_eq!(runs[0][0].metrics.records, solo.metrics.records);
        assert_eq!(summary[0].std_final_loss, 0.0);
    }

    #[test]
    fn deterministic_dynamics_have_zero_sweep_variance() {
        let p = quad_problem(3, 13);
        let mut cfg = base_cfg(3, Method::FedMtl);
        cfg.t = 15; // K = M: sampling noise cannot matter
        let (_, summary) = sweep(&cfg, &p.tasks, &p.layout, &[SweepPoint::default()], 10).unwrap();
        assert_eq!(summary[0].std_final_loss, 0.0);
    }

    #[test]
    fn mean_final_loss_nondecreasing_in_sigma() {
        let p = quad_problem(4, 14);
        let mut cfg = base_cfg(4, Method::DpFedMtl);
        cfg.dp.clip_norm = 1.0;
        cfg.t = 100;
        cfg.eta = 0.05;
        let grid: Vec<SweepPoint> = [0.0, 0.65, 2.42, 9.69]
            .iter()
            .map(|&s| SweepPoint { sigma: Some(s), ..Default::default() })
            .collect();
        let (_, summary) = sweep(&cfg, &p.tasks, &p.layout, &grid, 10).unwrap();
        for w in summary.windows(2) {
            assert!(
                w[1].mean_final_loss >= w[0].mean_final_loss - 1e-9,
                "{} then {}",
                w[0].mean_final_loss,
                w[1].mean_final_loss
            );
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = base_cfg(3, Method::FedMtl);
        cfg.k = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(3, Method::FedMtl);
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(3, Method::FedMtl);
        cfg.h = 0;
        assert!(cfg.validate().is_err());
    }
}
