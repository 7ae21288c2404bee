//! Report envelope and the three output formats.
//!
//! Every report carries the pricing snapshot date it was computed with.
//! JSON output is the payload itself; table and CSV output render the
//! command's tabular view of it.

use std::fmt::Write as _;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MACHINE_DECIMALS: u32 = 4;
pub const TABLE_MONEY_DECIMALS: usize = 2;
const TABLE_REAL_DECIMALS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub tool_version: String,
    pub catalog_snapshot_date: NaiveDate,
    pub command: String,
    pub parameters: Value,
    pub payload: Value,
    pub generated_at: String,
}

/// `SOURCE_DATE_EPOCH` when set, so repeated runs can be byte-identical.
pub fn generated_at() -> String {
    let ts = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Rounds every non-integer number in `value` to `decimals` places.
pub fn round_floats(value: &mut Value, decimals: u32) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let scale = 10f64.powi(decimals.min(12) as i32);
            let mut r = (x * scale).round() / scale;
            if r == 0.0 {
                r = 0.0;
            }
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| round_floats(v, decimals)),
        Value::Object(map) => map.values_mut().for_each(|v| round_floats(v, decimals)),
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Money(f64),
    Real(f64),
    Empty,
}

impl Cell {
    fn human(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Money(x) => format!("{x:.TABLE_MONEY_DECIMALS$}"),
            Cell::Real(x) => format!("{x:.TABLE_REAL_DECIMALS$}"),
            Cell::Empty => "-".into(),
        }
    }

    fn machine(&self, decimals: usize) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Money(x) | Cell::Real(x) => format!("{x:.decimals$}"),
            Cell::Empty => String::new(),
        }
    }

    fn is_numeric(&self) -> bool {
        !matches!(self, Cell::Text(_))
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_columns(title: impl Into<String>, columns: Vec<String>) -> Self {
        Table {
            title: title.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render_human(&self, out: &mut String) {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::human).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let numeric: Vec<bool> = (0..self.columns.len())
            .map(|i| !self.rows.is_empty() && self.rows.iter().all(|r| r[i].is_numeric()))
            .collect();
        let line = |values: &[String]| {
            values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if numeric[i] {
                        format!("{v:>w$}", w = widths[i])
                    } else {
                        format!("{v:<w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        let _ = writeln!(out, "{}", line(&self.columns));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &cells {
            let _ = writeln!(out, "{}", line(row));
        }
    }
}

/// Serialises the envelope as pretty JSON with floats rounded to `decimals`.
/// Object keys come out sorted, so parsing and re-emitting is byte-stable.
pub fn render_json(envelope: &ReportEnvelope, decimals: u32) -> Result<String, serde_json::Error> {
    let mut value = serde_json::to_value(envelope)?;
    round_floats(&mut value, decimals);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

fn header_lines(envelope: &ReportEnvelope) -> Vec<(String, String)> {
    let params = match &envelope.parameters {
        Value::Object(m) => m
            .iter()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect::<Vec<_>>()
            .join(" "),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    vec![
        ("command".into(), envelope.command.clone()),
        ("catalog_snapshot_date".into(), envelope.catalog_snapshot_date.to_string()),
        ("parameters".into(), params),
        ("tool_version".into(), envelope.tool_version.clone()),
        ("generated_at".into(), envelope.generated_at.clone()),
    ]
}

pub fn render_table(envelope: &ReportEnvelope, tables: &[Table]) -> String {
    let mut out = String::new();
    for (k, v) in header_lines(envelope) {
        let _ = writeln!(out, "{k}: {v}");
    }
    for t in tables {
        out.push('\n');
        t.render_human(&mut out);
    }
    out
}

/// Envelope fields as `#` comment lines, then each table with a header row.
pub fn render_csv(envelope: &ReportEnvelope, tables: &[Table], decimals: u32) -> Result<String, csv::Error> {
    let mut out = String::new();
    for (k, v) in header_lines(envelope) {
        let _ = writeln!(out, "# {k}: {v}");
    }
    for t in tables {
        let _ = writeln!(out, "# table: {}", t.title);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&t.columns)?;
        for row in &t.rows {
            w.write_record(row.iter().map(|c| c.machine(decimals as usize)))?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        out.push_str(&String::from_utf8_lossy(&bytes));
    }
    Ok(out)
}
