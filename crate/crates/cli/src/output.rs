use std::fs;
use std::path::Path;

use kronprecon::schema::check_schema;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const SUMMARY_SCHEMA: &str = "kronprecon.summary/1.0";
pub const CONVERGENCE_SCHEMA: &str = "kronprecon.convergence/1.0";
pub const DECOMPOSE_SCHEMA: &str = "kronprecon.decompose/1.0";
pub const COMPARISON_SCHEMA: &str = "kronprecon.comparison/1.0";
pub const WORK_REPORT_SCHEMA: &str = "kronprecon.work_report/1.0";
pub const SWEEP_SCHEMA: &str = "kronprecon.sweep/1.0";

pub const SCHEMAS: &[&str] = &[
    SUMMARY_SCHEMA,
    CONVERGENCE_SCHEMA,
    DECOMPOSE_SCHEMA,
    COMPARISON_SCHEMA,
    WORK_REPORT_SCHEMA,
    SWEEP_SCHEMA,
];

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Write `rows` under `header`, prefixing every row with the schema tag.
pub(crate) fn write_csv(
    path: &Path,
    schema: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut head = vec!["schema"];
    head.extend_from_slice(header);
    w.write_record(&head).map_err(|e| io_err(path, e))?;
    for row in rows {
        let mut rec = vec![schema.to_string()];
        rec.extend(row.iter().cloned());
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub(crate) fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        String::new()
    }
}

pub(crate) fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Read a JSON file written by this tool, checking its schema tag against `expected`.
pub fn read_summary(path: &Path, expected: &str) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let tag = value
        .get("schema")
        .and_then(Value::as_str)
        .ok_or_else(|| io_err(path, "missing schema field"))?;
    check_schema(tag, expected).map_err(|e| io_err(path, e))?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_json(
            &p,
            &serde_json::json!({"schema": "kronprecon.summary/1.4", "x": 1}),
        )
        .unwrap();
        assert_eq!(read_summary(&p, SUMMARY_SCHEMA).unwrap()["x"], 1);
        write_json(&p, &serde_json::json!({"schema": "kronprecon.summary/2.0"})).unwrap();
        assert!(read_summary(&p, SUMMARY_SCHEMA).is_err());
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(
            &p,
            "s/1.0",
            &["a", "b"],
            &[vec!["x,y".into(), "say \"hi\"".into()]],
        )
        .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "schema,a,b\ns/1.0,\"x,y\",\"say \"\"hi\"\"\"\n");
    }
}
