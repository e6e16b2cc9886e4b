//! CSV and JSON emission of run records.

use std::io::Write;
use std::path::Path;

use crate::config::ConfigError;
use crate::run::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fmt_opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

fn fmt_opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV columns: sweep_value, iterations, res_gradient, res_state,
/// res_adjoint, max_eig (empty when not computed), wall_ms.
pub fn write_csv<W: Write>(records: &[RunRecord], mut w: W) -> Result<(), ConfigError> {
    writeln!(
        w,
        "sweep_value,iterations,res_gradient,res_state,res_adjoint,max_eig,wall_ms"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_opt_f(r.sweep_value),
            fmt_opt_u(r.iterations),
            fmt_opt_f(r.res_gradient),
            fmt_opt_f(r.res_state),
            fmt_opt_f(r.res_adjoint),
            fmt_opt_f(r.max_eig),
            r.wall_ms
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write>(records: &[RunRecord], w: W) -> Result<(), ConfigError> {
    serde_json::to_writer_pretty(w, records)
        .map_err(|e| ConfigError::ParseError(e.to_string()))
}

pub fn read_json<R: std::io::Read>(r: R) -> Result<Vec<RunRecord>, ConfigError> {
    serde_json::from_reader(r).map_err(|e| ConfigError::ParseError(e.to_string()))
}

/// Write records to `path` in the requested format.
pub fn emit_report(
    records: &[RunRecord],
    format: ReportFormat,
    path: &Path,
) -> Result<(), ConfigError> {
    let file = std::fs::File::create(path)?;
    let buf = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_csv(records, buf),
        ReportFormat::Json => write_json(records, buf),
    }
}

/// One-line console summary per record.
pub fn print_summary(records: &[RunRecord]) {
    for r in records {
        let sweep = r
            .sweep_value
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "-".into());
        let iters = r
            .iterations
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into());
        let eig = r
            .max_eig
            .map(|v| format!("{v:.8}"))
            .unwrap_or_else(|| "-".into());
        let grad = r
            .res_gradient
            .map(|v| format!("{v:.2e}"))
            .unwrap_or_else(|| "-".into());
        let flag = r.flag.as_deref().unwrap_or("");
        println!(
            "sweep={sweep:>10} iters={iters:>5} res_grad={grad:>9} max_eig={eig:>12} wall={:.1}ms {flag}",
            r.wall_ms
        );
    }
}
