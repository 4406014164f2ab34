//! Deterministic run artifacts. Every file written here must be a pure
//! function of the config and seed: no wall-clock values, fixed key order,
//! fixed float formatting.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use fedmtl_core::sim::RunMetrics;

use crate::config::{FileConfig, FORMAT_VERSION};
use crate::error::AppResult;

/// Canonical JSON: serde_json's default Map keeps keys sorted, so one
/// serialization pass is already canonical for our value types.
pub fn canonical_json<T: Serialize>(value: &T) -> AppResult<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| crate::error::AppError::config(format!("serialize: {e}")))?;
    Ok(v.to_string())
}

pub fn config_hash(cfg: &FileConfig) -> AppResult<String> {
    let json = canonical_json(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(12);
    for b in &digest[..6] {
        write!(hex, "{b:02x}").unwrap();
    }
    Ok(hex)
}

pub fn output_root(cfg: &FileConfig) -> PathBuf {
    if let Some(dir) = &cfg.output_dir {
        return PathBuf::from(dir);
    }
    if let Ok(root) = std::env::var("FEDMTL_OUT_ROOT") {
        return PathBuf::from(root);
    }
    PathBuf::from("runs")
}

pub fn artifact_dir(cfg: &FileConfig, hash: &str) -> PathBuf {
    output_root(cfg).join(format!("{}-{}-s{}", cfg.experiment, hash, cfg.seed))
}

/// 17 significant digits: round-trips any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt_f64(v),
        None => String::new(),
    }
}

/// First line is a header object carrying run-level fields; each following
/// line is one step record. Timing data is deliberately omitted so reruns
/// are byte-identical.
pub fn write_metrics_jsonl(path: &Path, metrics: &RunMetrics) -> AppResult<()> {
    let mut out = String::new();
    let header = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "seed": metrics.seed,
        "config_hash": metrics.config_hash,
        "initial_loss": metrics.initial_loss,
        "skipped_rounds": metrics.skipped_rounds,
        "diverged": metrics.diverged,
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for r in &metrics.records {
        let line = serde_json::json!({
            "step": r.step,
            "loss": r.loss,
            "grad_sq": r.grad_sq,
            "drift": r.drift,
            "shared_grad_norm": r.shared_grad_norm,
            "subset_size": r.subset_size,
            "cum_mu": r.cum_mu,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_summary_csv(path: &Path, metrics: &RunMetrics) -> AppResult<()> {
    let mut out = String::from(
        "format_version,step,loss,grad_sq,drift,shared_grad_norm,subset_size,cum_mu\n",
    );
    for r in &metrics.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            FORMAT_VERSION,
            r.step,
            fmt_f64(r.loss),
            fmt_f64(r.grad_sq),
            fmt_f64(r.drift),
            fmt_f64(r.shared_grad_norm),
            r.subset_size,
            fmt_opt(r.cum_mu),
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loss trajectory read back from a metrics.jsonl file.
pub struct LoadedMetrics {
    pub steps: Vec<f64>,
    pub losses: Vec<f64>,
}

pub fn read_metrics_jsonl(path: &Path) -> AppResult<LoadedMetrics> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: serde_json::Value = lines
        .next()
        .ok_or_else(|| crate::error::AppError::config(format!("{}: empty file", path.display())))
        .and_then(|l| {
            serde_json::from_str(l)
                .map_err(|e| crate::error::AppError::config(format!("{}: {e}", path.display())))
        })?;
    if header.get("format_version").and_then(|v| v.as_u64()) != Some(FORMAT_VERSION as u64) {
        return Err(crate::error::AppError::config(format!(
            "{}: missing or unsupported format_version",
            path.display()
        )));
    }
    let mut steps = Vec::new();
    let mut losses = Vec::new();
    for (i, line) in lines.enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            crate::error::AppError::config(format!("{} line {}: {e}", path.display(), i + 2))
        })?;
        let step = v.get("step").and_then(|x| x.as_f64());
        let loss = v.get("loss").and_then(|x| x.as_f64());
        match (step, loss) {
            (Some(s), Some(l)) => {
                steps.push(s);
                losses.push(l);
            }
            _ => {
                return Err(crate::error::AppError::config(format!(
                    "{} line {}: missing step/loss",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok(LoadedMetrics { steps, losses })
}
