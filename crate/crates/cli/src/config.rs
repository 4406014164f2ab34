//! Config file schema. Files are TOML; unknown keys are rejected everywhere
//! so typos surface as schema errors instead of silently using defaults.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use fedmtl_core::accountant::MuFormula;
use fedmtl_core::csv_data::load_csv;
use fedmtl_core::dp::DpConfig;
use fedmtl_core::objective::{Loss, TaskSpec};
use fedmtl_core::params::BlockLayout;
use fedmtl_core::sim::{AggregationDivisor, Method, Sampling, SimConfig, SweepPoint};
use fedmtl_core::synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format_version: u32,
    pub experiment: String,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub tasks: TasksSection,
    pub sim: SimSection,
    #[serde(default)]
    pub dp: DpSection,
    #[serde(default)]
    pub accountant: Option<AccountantSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    pub source: TaskSourceKind,
    /// Seed of the problem generator (independent of the run seed).
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub csv: Option<CsvSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// One file per client.
    pub paths: Vec<String>,
    pub task_dim: usize,
    pub shared_dim: usize,
    #[serde(default)]
    pub has_header: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub method: Method,
    pub k: usize,
    pub t: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    /// Step size; derived as 1/(lambda * L) for synthetic problems when
    /// omitted.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub divisor: AggregationDivisor,
    #[serde(default)]
    pub literal_broadcast: bool,
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn default_h() -> usize {
    1
}
fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub sensitivity_override: Option<f64>,
}

fn default_clip() -> f64 {
    f64::INFINITY
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection { clip_norm: f64::INFINITY, sigma: 0.0, sensitivity_override: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountantSection {
    #[serde(default)]
    pub formula: MuFormula,
    /// Epsilon values at which deltas are reported.
    #[serde(default)]
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub repeats: usize,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub theory_mode: bool,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_h")]
    pub h: usize,
    pub t: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_decay_samples")]
    pub n_decay_samples: usize,
    #[serde(default = "default_checkpoints")]
    pub decay_checkpoints: usize,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    /// Noise sensitivity for theory runs (clipping is disabled there).
    #[serde(default)]
    pub sensitivity: Option<f64>,
    /// Deliberate override of the reference optimum, for falsification tests.
    #[serde(default)]
    pub fstar_override: Option<f64>,
}

fn default_seeds() -> usize {
    100
}
fn default_decay_samples() -> usize {
    5000
}
fn default_checkpoints() -> usize {
    10
}
fn default_probe_radius() -> f64 {
    1.0
}
fn default_probe_samples() -> usize {
    400
}

/// A fully materialized problem: tasks, layout, and (for synthetic sources)
/// analytically known constants.
pub struct Problem {
    pub tasks: Vec<TaskSpec>,
    pub layout: Arc<BlockLayout>,
    pub constants: Option<fedmtl_core::objective::ObjectiveConstants>,
}

impl FileConfig {
    pub fn load(path: &Path) -> AppResult<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: FileConfig =
            toml::from_str(&text).map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(AppError::config(format!(
                "format_version {} not supported (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> AppResult<()> {
        match self.tasks.source {
            TaskSourceKind::Synthetic if self.tasks.synthetic.is_none() => {
                return Err(AppError::config("tasks.source = synthetic requires a [tasks.synthetic] table"));
            }
            TaskSourceKind::Csv if self.tasks.csv.is_none() => {
                return Err(AppError::config("tasks.source = csv requires a [tasks.csv] table"));
            }
            _ => {}
        }
        let m = self.num_clients();
        if self.sim.k == 0 || self.sim.k > m {
            return Err(AppError::config(format!(
                "sim.k must satisfy 1 <= k <= clients ({}), got {}",
                m, self.sim.k
            )));
        }
        if self.sim.t == 0 || self.sim.h == 0 || self.sim.record_every == 0 {
            return Err(AppError::config("sim.t, sim.h, sim.record_every must be positive"));
        }
        if let Some(eta) = self.sim.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(AppError::config(format!("sim.eta must be positive, got {eta}")));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.points.is_empty() {
                return Err(AppError::config("sweep.points must be nonempty"));
            }
            if sweep.repeats == 0 {
                return Err(AppError::config("sweep.repeats must be >= 1"));
            }
        }
        if let Some(v) = &self.verify {
            if v.t == 0 || v.seeds == 0 || v.decay_checkpoints == 0 {
                return Err(AppError::config("verify.t, verify.seeds, verify.decay_checkpoints must be positive"));
            }
            if v.sigma > 0.0 && v.sensitivity.is_none() {
                return Err(AppError::config(
                    "verify.sigma > 0 requires verify.sensitivity (theory runs disable clipping)",
                ));
            }
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        match self.tasks.source {
            TaskSourceKind::Synthetic => self.tasks.synthetic.as_ref().map(|s| s.clients).unwrap_or(0),
            TaskSourceKind::Csv => self.tasks.csv.as_ref().map(|c| c.paths.len()).unwrap_or(0),
        }
    }

    pub fn build_problem(&self) -> AppResult<Problem> {
        match self.tasks.source {
            TaskSourceKind::Synthetic => {
                let scfg = self.tasks.synthetic.as_ref().expect("validated");
                let p = generate_synthetic(scfg, self.tasks.data_seed)?;
                Ok(Problem { tasks: p.tasks, layout: p.layout, constants: Some(p.constants) })
            }
            TaskSourceKind::Csv => {
                let csv = self.tasks.csv.as_ref().expect("validated");
                let d = csv.task_dim + csv.shared_dim;
                let mut tasks = Vec::with_capacity(csv.paths.len());
                for (i, path) in csv.paths.iter().enumerate() {
                    let samples = load_csv(Path::new(path), csv.has_header)?;
                    for s in &samples {
                        if s.features.len() != d {
                            return Err(AppError::config(format!(
                                "{path}: rows have {} feature columns but task_dim + shared_dim = {d}",
                                s.features.len()
                            )));
                        }
                    }
                    tasks.push(TaskSpec {
                        client_id: i,
                        task_dim: csv.task_dim,
                        shared_dim: csv.shared_dim,
                        loss: Loss::Logistic { samples },
                    });
                }
                let layout =
                    Arc::new(BlockLayout::new(vec![csv.task_dim; tasks.len()], csv.shared_dim)?);
                Ok(Problem { tasks, layout, constants: None })
            }
        }
    }

    /// Resolves the step size, deriving the theory default from estimated
    /// constants when the config omits it.
    pub fn resolve_eta(&self, problem: &Problem) -> AppResult<f64> {
        if let Some(eta) = self.sim.eta {
            return Ok(eta);
        }
        let constants = problem.constants.as_ref().ok_or_else(|| {
            AppError::config("sim.eta is required for csv task sources (no known constants)")
        })?;
        let init = self.initial_point(problem);
        let probe = fedmtl_core::objective::ProbeRegion { center: init, radius: 1.0 };
        let est = fedmtl_core::objective::estimate_constants(
            &problem.tasks,
            &problem.layout,
            &probe,
            200,
            self.seed,
            constants.clone(),
        )?;
        let lambda = est.effective_lambda();
        if !lambda.is_finite() {
            return Err(AppError::config(
                "cannot derive sim.eta: diversity estimate is unbounded; set sim.eta explicitly",
            ));
        }
        Ok(1.0 / (lambda * constants.l))
    }

    pub fn initial_point(&self, problem: &Problem) -> Vec<f64> {
        self.sim
            .init
            .clone()
            .unwrap_or_else(|| vec![1.0; problem.layout.total_dim()])
    }

    pub fn sim_config(&self, m: usize, eta: f64, problem: &Problem) -> SimConfig {
        SimConfig {
            method: self.sim.method,
            m,
            k: self.sim.k,
            t: self.sim.t,
            h: self.sim.h,
            eta,
            dp: DpConfig {
                clip_norm: self.dp.clip_norm,
                sigma: self.dp.sigma,
                k: self.sim.k,
                m,
                sensitivity_override: self.dp.sensitivity_override,
            },
            seed: self.seed,
            record_every: self.sim.record_every,
            sampling: self.sim.sampling,
            divisor: self.sim.divisor,
            literal_broadcast: self.sim.literal_broadcast,
            init: Some(self.initial_point(problem)),
            snapshot_every: self.sim.snapshot_every,
        }
    }
}
