//! Plain-text tables and CSV output for `stats` and `ablate`.

use std::fmt::Write as _;
use std::path::Path;

use face_core::metrics::CompressionReport;

use crate::pipeline::{AblationRow, PipelineError};

fn ratio_cell(r: Option<f64>) -> String {
    r.map_or_else(|| "-".into(), |r| format!("{r:.4}"))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.5}"))
}

pub fn compression_table(report: &CompressionReport) -> String {
    let mut out = String::new();
    let width = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(9);
    let _ = writeln!(out, "resolution {}", report.resolution);
    let _ = writeln!(out, "{:<width$} {:>7} {:>11} {:>14} {:>7}", "mesh", "faces", "face_tokens", "coord_tokens", "ratio");
    for r in report.rows.iter().chain(std::iter::once(&report.aggregate)) {
        let _ = writeln!(
            out,
            "{:<width$} {:>7} {:>11} {:>14} {:>7}",
            r.name,
            r.faces,
            r.face_tokens,
            r.baseline_tokens,
            ratio_cell(r.ratio)
        );
    }
    let _ = writeln!(out, "\nreference ratios (per-coordinate tokens = 1.00):");
    for p in report.published {
        let _ = writeln!(out, "  {:<16} {:.2}", p.method, p.ratio);
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>10} {:>9} {:>9} {:>9} {:>5}",
        "variant", "steps", "final_loss", "slot_acc", "chamfer", "hausdorff", "empty"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>10.4} {:>9.4} {:>9} {:>9} {:>5}",
            r.variant,
            r.steps,
            r.final_loss,
            r.token_accuracy,
            opt_cell(r.chamfer),
            opt_cell(r.hausdorff),
            r.empty
        );
    }
    out
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "steps", "final_loss", "token_accuracy", "chamfer", "hausdorff", "empty"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        w.write_record([
            r.variant.clone(),
            r.steps.to_string(),
            r.final_loss.to_string(),
            r.token_accuracy.to_string(),
            opt(r.chamfer),
            opt(r.hausdorff),
            r.empty.to_string(),
        ])?;
    }
    w.flush().map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_predictions_show_a_dash() {
        let rows = [AblationRow {
            variant: "bfs".into(),
            steps: 10,
            final_loss: 1.5,
            token_accuracy: 0.25,
            chamfer: None,
            hausdorff: None,
            empty: 2,
        }];
        let table = ablation_table(&rows);
        let line = table.lines().nth(1).unwrap();
        assert!(line.starts_with("bfs"));
        assert_eq!(line.matches(" -").count(), 2);
    }
}
