//! Per-client CSV datasets: one file per client, features in the leading
//! columns, label in the last.

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::objective::Sample;

/// Parses one client's dataset. `has_header` skips the first line.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut samples = Vec::new();
    let mut expected_cols: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(CoreError::Csv {
                path: path.display().to_string(),
                message: format!(
                    "row {} has {} column(s); need at least one feature and a label",
                    line_no + 1,
                    fields.len()
                ),
            });
        }
        match expected_cols {
            None => expected_cols = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(CoreError::Csv {
                    path: path.display().to_string(),
                    message: format!(
                        "row {} has {} columns but earlier rows have {}",
                        line_no + 1,
                        fields.len(),
                        n
                    ),
                });
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| CoreError::Csv {
                path: path.display().to_string(),
                message: format!("row {}, column {}: cannot parse {:?} as a number", line_no + 1, col + 1, field),
            })?;
            values.push(v);
        }
        let label = values.pop().expect("at least two columns checked above");
        samples.push(Sample { features: values, label });
    }
    if samples.is_empty() {
        return Err(CoreError::Csv {
            path: path.display().to_string(),
            message: "client dataset is empty".into(),
        });
    }
    Ok(samples)
}
