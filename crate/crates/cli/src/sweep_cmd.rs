use std::path::{Path, PathBuf};

use fedmtl_core::sim::sweep;

use crate::artifact::{artifact_dir, config_hash, fmt_f64, write_atomic};
use crate::config::{FileConfig, FORMAT_VERSION};
use crate::error::{AppError, AppResult};
use crate::run_cmd::write_run_artifacts;

pub fn cmd_sweep(config_path: &Path) -> AppResult<PathBuf> {
    let cfg = FileConfig::load(config_path)?;
    let sweep_cfg = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| AppError::config("sweep requires a [sweep] section with points"))?;
    let hash = config_hash(&cfg)?;
    let problem = cfg.build_problem()?;
    let eta = cfg.resolve_eta(&problem)?;
    let m = problem.tasks.len();
    let base = cfg.sim_config(m, eta, &problem);

    let (all_runs, summaries) =
        sweep(&base, &problem.tasks, &problem.layout, &sweep_cfg.points, sweep_cfg.repeats)?;

    let root = artifact_dir(&cfg, &hash);
    for (gi, runs) in all_runs.iter().enumerate() {
        for (rep, output) in runs.iter().enumerate() {
            let mut metrics = output.metrics.clone();
            metrics.config_hash = hash.clone();
            write_run_artifacts(&root.join(format!("g{gi}-r{rep}")), &cfg, &metrics)?;
        }
    }

    let mut csv = String::from(
        "format_version,point,sigma,h,k,eta,method,mean_final_loss,std_final_loss,diverged_runs\n",
    );
    for s in &summaries {
        let p = &sweep_cfg.points[s.point];
        let eff = p.apply(&base);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:?},{},{},{}\n",
            FORMAT_VERSION,
            s.point,
            fmt_f64(eff.dp.sigma),
            eff.h,
            eff.k,
            fmt_f64(eff.eta),
            eff.method,
            fmt_f64(s.mean_final_loss),
            fmt_f64(s.std_final_loss),
            s.diverged_runs,
        ));
    }
    write_atomic(&root.join("sweep_summary.csv"), csv.as_bytes())?;

    println!("artifact: {}", root.display());
    println!("point  mean_final_loss  std  diverged");
    for s in &summaries {
        println!(
            "{:5}  {:15.6e}  {:.3e}  {}",
            s.point, s.mean_final_loss, s.std_final_loss, s.diverged_runs
        );
    }
    Ok(root)
}
