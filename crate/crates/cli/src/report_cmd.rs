use std::path::{Path, PathBuf};

use crate::artifact::{read_metrics_jsonl, write_atomic};
use crate::error::{AppError, AppResult};
use crate::plot::{Curve, Plot};

pub fn cmd_report(dirs: &[PathBuf], out: &Path, log_y: bool) -> AppResult<()> {
    let mut curves = Vec::new();
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for dir in dirs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        match read_metrics_jsonl(&dir.join("metrics.jsonl")) {
            Ok(m) => {
                let final_loss = m.losses.last().copied().unwrap_or(f64::NAN);
                let min_loss = m.losses.iter().copied().fold(f64::INFINITY, f64::min);
                rows.push((label.clone(), m.steps.len(), final_loss, min_loss));
                curves.push(Curve { label, xs: m.steps, ys: m.losses });
            }
            Err(e) => bad.push(format!("{}: {}", dir.display(), e.message)),
        }
    }
    for b in &bad {
        eprintln!("skipped artifact: {b}");
    }
    if curves.is_empty() {
        return Err(AppError::config("no readable artifacts among the given directories"));
    }

    std::fs::create_dir_all(out)?;
    let plot = Plot {
        title: "loss vs step".into(),
        x_label: "step".into(),
        y_label: "loss".into(),
        log_y,
        curves,
    };
    write_atomic(&out.join("comparison.svg"), plot.to_svg().as_bytes())?;

    let mut md = String::from("| run | records | final loss | min loss |\n|---|---|---|---|\n");
    for (label, n, final_loss, min_loss) in &rows {
        md.push_str(&format!("| {label} | {n} | {final_loss:.6e} | {min_loss:.6e} |\n"));
    }
    if !bad.is_empty() {
        md.push_str("\nSkipped artifacts:\n");
        for b in &bad {
            md.push_str(&format!("- {b}\n"));
        }
    }
    write_atomic(&out.join("report.md"), md.as_bytes())?;
    println!("report: {}", out.display());
    print!("{md}");
    Ok(())
}
