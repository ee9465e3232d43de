//! CSV writers for metrics and loss traces. Float fields use Rust's shortest
//! round-trip formatting, so files are byte-stable across identical runs.

use std::fmt::Write as _;
use std::path::Path;

use pjrm_core::analysis::MetricsRecord;
use pjrm_core::solver::TraceRow;

pub fn metrics_csv_text(m: &MetricsRecord) -> String {
    let mut header = String::from(
        "rmse_timelapse,mean_std_in_plume,mean_std_out_plume,pearson_r_std_vs_abs_error,pearson_degenerate",
    );
    let mut row = format!(
        "{},{},{},{},{}",
        m.rmse_timelapse,
        m.mean_std_in_plume,
        m.mean_std_out_plume,
        m.pearson_r_std_vs_abs_error,
        m.pearson_degenerate
    );
    for (i, r) in m.data_residuals.iter().enumerate() {
        let _ = write!(header, ",data_residual_{}", i + 1);
        let _ = write!(row, ",{r}");
    }
    header.push_str(",forward_op_calls\n");
    let _ = writeln!(row, ",{}", m.forward_op_calls);
    header + &row
}

pub fn write_metrics_csv(path: &Path, m: &MetricsRecord) -> std::io::Result<()> {
    std::fs::write(path, metrics_csv_text(m))
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut out = String::with_capacity(32 * rows.len() + 64);
    out.push_str("outer_iter,inner_iter,survey,term,value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.outer,
            r.inner,
            r.survey,
            r.term.as_str(),
            r.value
        );
    }
    std::fs::write(path, out)
}

/// Tiny `key,value` provenance table (residuals, operator-call counts).
pub fn write_kv_csv(path: &Path, pairs: &[(String, String)]) -> std::io::Result<()> {
    let mut out = String::from("key,value\n");
    for (k, v) in pairs {
        let _ = writeln!(out, "{k},{v}");
    }
    std::fs::write(path, out)
}

pub fn read_kv_csv(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            anyhow::ensure!(line == "key,value", "bad provenance header");
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| anyhow::anyhow!("bad provenance row: {line}"))?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
