use std::path::{Path, PathBuf};

use fedmtl_core::sim::{run, RunMetrics};

use crate::artifact::{
    artifact_dir, canonical_json, config_hash, write_atomic, write_metrics_jsonl,
    write_summary_csv,
};
use crate::config::FileConfig;
use crate::error::{AppError, AppResult};
use crate::plot::{Curve, Plot};

pub fn write_run_artifacts(dir: &Path, cfg: &FileConfig, metrics: &RunMetrics) -> AppResult<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.json"), canonical_json(cfg)?.as_bytes())?;
    write_metrics_jsonl(&dir.join("metrics.jsonl"), metrics)?;
    write_summary_csv(&dir.join("summary.csv"), metrics)?;
    let plot = Plot {
        title: format!("{} loss", cfg.experiment),
        x_label: "step".into(),
        y_label: "loss".into(),
        log_y: false,
        curves: vec![Curve {
            label: cfg.experiment.clone(),
            xs: metrics.records.iter().map(|r| r.step as f64).collect(),
            ys: metrics.records.iter().map(|r| r.loss).collect(),
        }],
    };
    write_atomic(&dir.join("loss.svg"), plot.to_svg().as_bytes())?;
    Ok(())
}

pub fn cmd_run(config_path: &Path) -> AppResult<PathBuf> {
    let cfg = FileConfig::load(config_path)?;
    let hash = config_hash(&cfg)?;
    let problem = cfg.build_problem()?;
    let eta = cfg.resolve_eta(&problem)?;
    let m = problem.tasks.len();
    let sim_cfg = cfg.sim_config(m, eta, &problem);
    let output = run(&sim_cfg, &problem.tasks, &problem.layout)?;
    let mut metrics = output.metrics;
    metrics.config_hash = hash.clone();

    let dir = artifact_dir(&cfg, &hash);
    write_run_artifacts(&dir, &cfg, &metrics)?;
    println!("artifact: {}", dir.display());
    println!(
        "final loss: {}",
        metrics.records.last().map(|r| r.loss).unwrap_or(metrics.initial_loss)
    );
    if let Some(step) = metrics.diverged {
        return Err(AppError::divergence(format!(
            "run diverged at step {step}; partial trace written to {}",
            dir.display()
        )));
    }
    Ok(dir)
}
