//! Pure formatting of a run's summary.csv into a markdown table grouped
//! by strategy, with the best value of each metric column marked.

use std::path::Path;

use super::{HarnessError, SUMMARY_COLUMNS};

const METRIC_COLUMNS: [usize; 3] = [7, 8, 9]; // EM, F1, ACC

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::MissingSummary(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::MissingSummary(format!("header: {e}")))?;
    let expected: Vec<&str> = SUMMARY_COLUMNS.to_vec();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(HarnessError::MissingSummary(format!(
            "unexpected columns {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| HarnessError::MissingSummary(format!("data line {}: {e}", i + 2)))?;
        if record.len() != SUMMARY_COLUMNS.len() {
            return Err(HarnessError::MissingSummary(format!(
                "data line {}: {} fields, expected {}",
                i + 2,
                record.len(),
                SUMMARY_COLUMNS.len()
            )));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Renders the report for a run directory. No recomputation: the table
/// reflects summary.csv exactly, with the best EM, F1, and ACC across
/// all rows wrapped in ** marks (ties all marked).
pub fn render_report(run_dir: impl AsRef<Path>) -> Result<String, HarnessError> {
    let run_dir = run_dir.as_ref();
    let path = run_dir.join("summary.csv");
    if !path.exists() {
        return Err(HarnessError::MissingSummary(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let rows = read_rows(&path)?;

    let mut best: [Option<f64>; 3] = [None; 3];
    for row in &rows {
        for (slot, &col) in METRIC_COLUMNS.iter().enumerate() {
            if let Ok(v) = row[col].parse::<f64>() {
                if best[slot].is_none_or(|b| v > b) {
                    best[slot] = Some(v);
                }
            }
        }
    }

    let mut strategies: Vec<&str> = Vec::new();
    for row in &rows {
        let s = row[2].as_str();
        if !strategies.contains(&s) {
            strategies.push(s);
        }
    }

    let mut out = String::new();
    out.push_str(&format!("# Run report: {}\n", run_dir.display()));
    if rows.is_empty() {
        out.push_str("\nsummary.csv contains no rows.\n");
        return Ok(out);
    }
    let display_cols: Vec<usize> = (0..SUMMARY_COLUMNS.len()).filter(|&c| c != 2).collect();
    for strategy in strategies {
        out.push_str(&format!("\n## {strategy}\n\n"));
        out.push('|');
        for &c in &display_cols {
            out.push_str(&format!(" {} |", SUMMARY_COLUMNS[c]));
        }
        out.push_str("\n|");
        for _ in &display_cols {
            out.push_str(" --- |");
        }
        out.push('\n');
        for row in rows.iter().filter(|r| r[2] == strategy) {
            out.push('|');
            for &c in &display_cols {
                let mut value = row[c].clone();
                if let Some(slot) = METRIC_COLUMNS.iter().position(|&m| m == c) {
                    if let (Ok(v), Some(b)) = (row[c].parse::<f64>(), best[slot]) {
                        if v == b {
                            value = format!("**{value}**");
                        }
                    }
                }
                out.push_str(&format!(" {value} |"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
