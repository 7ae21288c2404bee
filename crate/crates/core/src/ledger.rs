//! Per-query usage records: ingest, validation and indexing.
//!
//! Records arrive as JSON lines (one object per line) or as CSV with the same
//! column names. Validation is field-by-field so each rejection names the
//! offending line and field.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::{CatalogError, PricingCatalog};

pub const RECORD_FIELDS: [&str; 10] = [
    "record_id",
    "model_id",
    "dataset_id",
    "query_id",
    "trial_index",
    "prompt_tokens",
    "output_tokens",
    "thinking_tokens",
    "timestamp",
    "query_text",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub record_id: String,
    pub model_id: String,
    pub dataset_id: String,
    pub query_id: String,
    /// 0 is the original run; 1.. are repeated trials of the same query.
    pub trial_index: u32,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    /// Billed as output; always a subset of `output_tokens`.
    pub thinking_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    /// Set on synthetic records that carry a whole table cell's totals.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aggregate: bool,
}

impl UsageRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            query_id: self.query_id.clone(),
            trial_index: self.trial_index,
        }
    }

    /// Visible-answer tokens: output minus thinking.
    pub fn generation_tokens(&self) -> u64 {
        self.output_tokens - self.thinking_tokens
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.thinking_tokens > self.output_tokens {
            return Err(RecordError::ThinkingExceedsOutput {
                thinking: self.thinking_tokens,
                output: self.output_tokens,
            });
        }
        for (field, value) in [
            ("record_id", &self.record_id),
            ("model_id", &self.model_id),
            ("dataset_id", &self.dataset_id),
            ("query_id", &self.query_id),
        ] {
            if value.is_empty() {
                return Err(RecordError::EmptyField(field));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub model_id: String,
    pub dataset_id: String,
    pub query_id: String,
    pub trial_index: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, trial {})",
            self.model_id, self.dataset_id, self.query_id, self.trial_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("unparseable line: {0}")]
    Unparseable(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("field `{field}` has the wrong type: {detail}")]
    InvalidType { field: &'static str, detail: String },
    #[error("field `{field}` is negative ({value})")]
    NegativeCount { field: &'static str, value: String },
    #[error("field `{field}` is fractional ({value}); token counts are integers")]
    FractionalCount { field: &'static str, value: String },
    #[error("thinking exceeds output ({thinking} > {output})")]
    ThinkingExceedsOutput { thinking: u64, output: u64 },
    #[error("invalid timestamp `{0}`")]
    BadTimestamp(String),
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("cannot read ledger {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {error}")]
    Record { line: usize, error: RecordError },
    #[error("line {line}: duplicate record key {key}")]
    DuplicateKey { line: usize, key: RecordKey },
    #[error("line {line}: duplicate record_id \"{record_id}\"")]
    DuplicateRecordId { line: usize, record_id: String },
    #[error("empty ledger")]
    Empty,
    #[error("ledger model \"{model_id}\" has no catalog pricing")]
    Unpriced {
        model_id: String,
        #[source]
        source: CatalogError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    /// Any invalid line rejects the whole file.
    #[default]
    Strict,
    /// Invalid lines are skipped and listed in the ingest report.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialFilter {
    #[default]
    OriginalsOnly,
    AllTrials,
}

impl TrialFilter {
    pub fn admits(self, record: &UsageRecord) -> bool {
        match self {
            TrialFilter::OriginalsOnly => record.trial_index == 0,
            TrialFilter::AllTrials => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    /// Records whose `thinking_tokens` was absent and defaulted to 0.
    pub missing_thinking: usize,
    /// Lines skipped in lenient mode, with the reason.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateUsage {
    pub model_id: String,
    pub dataset_id: String,
    pub total_prompt_tokens: u64,
    pub total_output_tokens: u64,
    pub total_thinking_tokens: u64,
    pub query_count: usize,
}

/// Validated, immutable collection of usage records.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    records: Vec<UsageRecord>,
    by_cell: BTreeMap<(String, String), Vec<usize>>,
    by_query: HashMap<(String, String, String), Vec<usize>>,
    report: IngestReport,
}

impl Ledger {
    /// Validates and indexes `records`. Line numbers in errors are 1-based
    /// positions in the input sequence.
    pub fn from_records(records: Vec<UsageRecord>) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::default();
        let mut keys = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for (i, r) in records.into_iter().enumerate() {
            let line = i + 1;
            r.validate()
                .map_err(|error| LedgerError::Record { line, error })?;
            check_unique(&mut keys, &mut ids, &r, line)?;
            ledger.push(r);
        }
        Ok(ledger)
    }

    fn push(&mut self, r: UsageRecord) {
        let idx = self.records.len();
        self.by_cell
            .entry((r.model_id.clone(), r.dataset_id.clone()))
            .or_default()
            .push(idx);
        self.by_query
            .entry((r.model_id.clone(), r.dataset_id.clone(), r.query_id.clone()))
            .or_default()
            .push(idx);
        self.records.push(r);
    }

    pub fn parse_jsonl(text: &str, mode: IngestMode) -> Result<Self, LedgerError> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let parsed = serde_json::from_str::<Value>(l)
                    .map_err(|e| RecordError::Unparseable(e.to_string()))
                    .and_then(|v| match v {
                        Value::Object(m) => Ok(m),
                        _ => Err(RecordError::Unparseable("expected a JSON object".into())),
                    });
                (i + 1, parsed)
            });
        Self::from_raw_rows(rows, mode)
    }

    pub fn parse_csv(text: &str, mode: IngestMode) -> Result<Self, LedgerError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = match reader.headers() {
            Ok(h) => h.clone(),
            Err(_) => return Err(LedgerError::Empty),
        };
        let mut rows = Vec::new();
        for (i, row) in reader.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let parsed = row
                .map_err(|e| RecordError::Unparseable(e.to_string()))
                .map(|row| {
                    let mut m = Map::new();
                    for (h, cell) in headers.iter().zip(row.iter()) {
                        if cell.is_empty() {
                            continue;
                        }
                        let v = if is_count_field(h) {
                            serde_json::from_str::<Value>(cell)
                                .ok()
                                .filter(Value::is_number)
                                .unwrap_or_else(|| Value::String(cell.to_string()))
                        } else {
                            Value::String(cell.to_string())
                        };
                        m.insert(h.to_string(), v);
                    }
                    m
                });
            rows.push((line, parsed));
        }
        Self::from_raw_rows(rows, mode)
    }

    fn from_raw_rows(
        rows: impl IntoIterator<Item = (usize, Result<Map<String, Value>, RecordError>)>,
        mode: IngestMode,
    ) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::default();
        let mut keys = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for (line, raw) in rows {
            let outcome = raw
                .and_then(|m| record_from_map(&m))
                .map_err(|error| LedgerError::Record { line, error })
                .and_then(|(r, defaulted)| {
                    check_unique(&mut keys, &mut ids, &r, line)?;
                    Ok((r, defaulted))
                });
            match (outcome, mode) {
                (Ok((r, defaulted)), _) => {
                    if defaulted {
                        ledger.report.missing_thinking += 1;
                    }
                    ledger.push(r);
                }
                (Err(e), IngestMode::Strict) => return Err(e),
                (Err(e), IngestMode::Lenient) => {
                    log::warn!("skipping {e}");
                    ledger.report.skipped.push((line, e.to_string()));
                }
            }
        }
        if ledger.report.missing_thinking > 0 {
            log::warn!(
                "{} record(s) had no thinking_tokens field; treated as 0",
                ledger.report.missing_thinking
            );
        }
        if ledger.records.is_empty() {
            return Err(LedgerError::Empty);
        }
        Ok(ledger)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ingest_report(&self) -> &IngestReport {
        &self.report
    }

    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.by_cell.keys().map(|(m, _)| m.as_str()).collect()
    }

    pub fn dataset_ids(&self) -> BTreeSet<&str> {
        self.by_cell.keys().map(|(_, d)| d.as_str()).collect()
    }

    /// Models with at least one record admitted by `filter` on `dataset_id`.
    pub fn models_in_dataset(&self, dataset_id: &str, filter: TrialFilter) -> BTreeSet<&str> {
        self.by_cell
            .iter()
            .filter(|((_, d), idx)| d == dataset_id && idx.iter().any(|&i| filter.admits(&self.records[i])))
            .map(|((m, _), _)| m.as_str())
            .collect()
    }

    /// Records of one (model, dataset) cell admitted by `filter`, in ledger order.
    pub fn cell<'a>(
        &'a self,
        model_id: &str,
        dataset_id: &str,
        filter: TrialFilter,
    ) -> impl Iterator<Item = &'a UsageRecord> + 'a {
        self.by_cell
            .get(&(model_id.to_string(), dataset_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .map(|&i| &self.records[i])
            .filter(move |r| filter.admits(r))
    }

    pub fn for_model<'a>(
        &'a self,
        model_id: &'a str,
        filter: TrialFilter,
    ) -> impl Iterator<Item = &'a UsageRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.model_id == model_id && filter.admits(r))
    }

    /// Every trial of one query, ordered by trial index.
    pub fn query_trials(&self, model_id: &str, dataset_id: &str, query_id: &str) -> Vec<&UsageRecord> {
        let mut out: Vec<&UsageRecord> = self
            .by_query
            .get(&(model_id.to_string(), dataset_id.to_string(), query_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .map(|&i| &self.records[i])
            .collect();
        out.sort_by_key(|r| r.trial_index);
        out
    }

    /// (dataset, query) pairs of `model_id`, sorted.
    pub fn queries_of_model(&self, model_id: &str) -> Vec<(&str, &str)> {
        let mut out: Vec<(&str, &str)> = self
            .by_query
            .keys()
            .filter(|(m, _, _)| m == model_id)
            .map(|(_, d, q)| (d.as_str(), q.as_str()))
            .collect();
        out.sort_unstable();
        out
    }

    /// Fails on the first model that has no pricing in `catalog`.
    pub fn ensure_priced(&self, catalog: &PricingCatalog) -> Result<(), LedgerError> {
        for m in self.model_ids() {
            catalog.get(m).map_err(|source| LedgerError::Unpriced {
                model_id: m.to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn check_unique(
    keys: &mut BTreeSet<RecordKey>,
    ids: &mut BTreeSet<String>,
    r: &UsageRecord,
    line: usize,
) -> Result<(), LedgerError> {
    let key = r.key();
    if keys.contains(&key) {
        return Err(LedgerError::DuplicateKey { line, key });
    }
    if ids.contains(&r.record_id) {
        return Err(LedgerError::DuplicateRecordId {
            line,
            record_id: r.record_id.clone(),
        });
    }
    keys.insert(key);
    ids.insert(r.record_id.clone());
    Ok(())
}

fn is_count_field(name: &str) -> bool {
    matches!(
        name,
        "trial_index" | "prompt_tokens" | "output_tokens" | "thinking_tokens"
    )
}

fn required_str(m: &Map<String, Value>, field: &'static str) -> Result<String, RecordError> {
    match m.get(field) {
        None | Some(Value::Null) => Err(RecordError::MissingField(field)),
        Some(Value::String(s)) if s.is_empty() => Err(RecordError::EmptyField(field)),
        Some(Value::String(s)) => Ok(s.clone()),
        // numeric ids are common in exported logs
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(RecordError::InvalidType {
            field,
            detail: format!("expected string, found {other}"),
        }),
    }
}

fn optional_count(m: &Map<String, Value>, field: &'static str) -> Result<Option<u64>, RecordError> {
    let v = match m.get(field) {
        None | Some(Value::Null) => return Ok(None),
        Some(v) => v,
    };
    let n = match v {
        Value::Number(n) => n,
        other => {
            return Err(RecordError::InvalidType {
                field,
                detail: format!("expected integer, found {other}"),
            })
        }
    };
    if let Some(u) = n.as_u64() {
        return Ok(Some(u));
    }
    if n.as_i64().is_some() {
        return Err(RecordError::NegativeCount {
            field,
            value: n.to_string(),
        });
    }
    let f = n.as_f64().unwrap_or(f64::NAN);
    if f < 0.0 {
        Err(RecordError::NegativeCount {
            field,
            value: n.to_string(),
        })
    } else if f.fract() != 0.0 || !f.is_finite() || f > u64::MAX as f64 {
        Err(RecordError::FractionalCount {
            field,
            value: n.to_string(),
        })
    } else {
        Ok(Some(f as u64))
    }
}

fn required_count(m: &Map<String, Value>, field: &'static str) -> Result<u64, RecordError> {
    optional_count(m, field)?.ok_or(RecordError::MissingField(field))
}

/// Returns the record and whether `thinking_tokens` was defaulted.
fn record_from_map(m: &Map<String, Value>) -> Result<(UsageRecord, bool), RecordError> {
    let trial_index = required_count(m, "trial_index")?;
    let trial_index = u32::try_from(trial_index).map_err(|_| RecordError::InvalidType {
        field: "trial_index",
        detail: format!("{trial_index} is out of range"),
    })?;
    let thinking = optional_count(m, "thinking_tokens")?;
    let timestamp = match m.get("timestamp") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            DateTime::parse_from_rfc3339(s)
                .map_err(|_| RecordError::BadTimestamp(s.clone()))?
                .with_timezone(&Utc),
        ),
        Some(other) => return Err(RecordError::BadTimestamp(other.to_string())),
    };
    let query_text = match m.get("query_text") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(RecordError::InvalidType {
                field: "query_text",
                detail: format!("expected string, found {other}"),
            })
        }
    };
    let aggregate = match m.get("aggregate") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s == "true" || s == "false" => s == "true",
        Some(other) => {
            return Err(RecordError::InvalidType {
                field: "aggregate",
                detail: format!("expected boolean, found {other}"),
            })
        }
    };
    let record = UsageRecord {
        record_id: required_str(m, "record_id")?,
        model_id: required_str(m, "model_id")?,
        dataset_id: required_str(m, "dataset_id")?,
        query_id: required_str(m, "query_id")?,
        trial_index,
        prompt_tokens: required_count(m, "prompt_tokens")?,
        output_tokens: required_count(m, "output_tokens")?,
        thinking_tokens: thinking.unwrap_or(0),
        timestamp,
        query_text,
        aggregate,
    };
    record.validate()?;
    Ok((record, thinking.is_none()))
}

/// Loads a ledger file. `.csv` files use the delimited import; anything else
/// is read as JSON lines.
pub fn ingest_records(path: impl AsRef<Path>, mode: IngestMode) -> Result<Ledger, LedgerError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LedgerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        Ledger::parse_csv(&text, mode)
    } else {
        Ledger::parse_jsonl(&text, mode)
    }
}

/// Appends records to a JSON-lines file, creating it if needed.
pub fn append_jsonl(path: impl AsRef<Path>, records: &[UsageRecord]) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)
}

/// Per-(model, dataset) token totals, sorted by model then dataset.
pub fn aggregate_usage(ledger: &Ledger, filter: TrialFilter) -> Vec<AggregateUsage> {
    let mut out = Vec::new();
    for ((model_id, dataset_id), idx) in &ledger.by_cell {
        let mut agg = AggregateUsage {
            model_id: model_id.clone(),
            dataset_id: dataset_id.clone(),
            total_prompt_tokens: 0,
            total_output_tokens: 0,
            total_thinking_tokens: 0,
            query_count: 0,
        };
        let mut queries = BTreeSet::new();
        for r in idx.iter().map(|&i| &ledger.records[i]).filter(|r| filter.admits(r)) {
            agg.total_prompt_tokens += r.prompt_tokens;
            agg.total_output_tokens += r.output_tokens;
            agg.total_thinking_tokens += r.thinking_tokens;
            queries.insert(r.query_id.as_str());
        }
        agg.query_count = queries.len();
        if agg.query_count > 0 {
            out.push(agg);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(model: &str, query: &str, trial: u32, p: u64, o: u64, t: u64) -> String {
        format!(
            r#"{{"record_id":"{model}-{query}-{trial}","model_id":"{model}","dataset_id":"d","query_id":"{query}","trial_index":{trial},"prompt_tokens":{p},"output_tokens":{o},"thinking_tokens":{t}}}"#
        )
    }

    #[test]
    fn accepts_valid_record() {
        let l = Ledger::parse_jsonl(&line("m", "q", 0, 100, 50, 30), IngestMode::Strict).unwrap();
        let r = &l.records()[0];
        assert_eq!((r.prompt_tokens, r.output_tokens, r.thinking_tokens), (100, 50, 30));
        assert_eq!(r.generation_tokens(), 20);
    }

    #[test]
    fn thinking_above_output_rejected() {
        let err = Ledger::parse_jsonl(&line("m", "q", 0, 100, 50, 60), IngestMode::Strict).unwrap_err();
        assert!(err.to_string().contains("thinking exceeds output"), "{err}");
        assert!(matches!(err, LedgerError::Record { line: 1, .. }));
    }

    #[test]
    fn duplicate_key_rejected() {
        let a = line("m", "q", 0, 1, 1, 0);
        let b = a.replace("\"record_id\":\"m-q-0\"", "\"record_id\":\"other\"");
        let err = Ledger::parse_jsonl(&format!("{a}\n{b}\n"), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, LedgerError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_record_id_rejected() {
        let a = line("m", "q", 0, 1, 1, 0);
        let b = line("m", "q", 1, 1, 1, 0).replace("m-q-1", "m-q-0");
        let err = Ledger::parse_jsonl(&format!("{a}\n{b}\n"), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, LedgerError::DuplicateRecordId { line: 2, .. }));
    }

    #[test]
    fn negative_and_fractional_counts_rejected() {
        let neg = line("m", "q", 0, 1, 1, 0).replace("\"prompt_tokens\":1", "\"prompt_tokens\":-5");
        let err = Ledger::parse_jsonl(&neg, IngestMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::Record { error: RecordError::NegativeCount { field: "prompt_tokens", .. }, .. }
        ));
        let frac = line("m", "q", 0, 1, 1, 0).replace("\"output_tokens\":1", "\"output_tokens\":1.5");
        let err = Ledger::parse_jsonl(&frac, IngestMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::Record { error: RecordError::FractionalCount { field: "output_tokens", .. }, .. }
        ));
    }

    #[test]
    fn unparseable_line_rejected() {
        let text = format!("{}\nnot json\n", line("m", "q", 0, 1, 1, 0));
        let err = Ledger::parse_jsonl(&text, IngestMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::Record { line: 2, error: RecordError::Unparseable(_) }
        ));
    }

    #[test]
    fn lenient_mode_skips_and_reports() {
        let text = [
            line("m", "q1", 0, 1, 10, 5),
            "garbage".to_string(),
            line("m", "q2", 0, 1, 10, 50),
            line("m", "q3", 0, 1, 10, 0),
        ]
        .join("\n");
        let l = Ledger::parse_jsonl(&text, IngestMode::Lenient).unwrap();
        assert_eq!(l.len(), 2);
        let skipped: Vec<usize> = l.ingest_report().skipped.iter().map(|(n, _)| *n).collect();
        assert_eq!(skipped, vec![2, 3]);
    }

    #[test]
    fn missing_thinking_defaults_to_zero_and_is_counted() {
        let text = line("m", "q", 0, 1, 10, 0).replace(",\"thinking_tokens\":0", "");
        let l = Ledger::parse_jsonl(&text, IngestMode::Strict).unwrap();
        assert_eq!(l.records()[0].thinking_tokens, 0);
        assert_eq!(l.ingest_report().missing_thinking, 1);
    }

    #[test]
    fn empty_file_is_empty_ledger() {
        let err = Ledger::parse_jsonl("\n\n", IngestMode::Strict).unwrap_err();
        assert_eq!(err.to_string(), "empty ledger");
    }

    #[test]
    fn csv_import_matches_jsonl() {
        let csv = "record_id,model_id,dataset_id,query_id,trial_index,prompt_tokens,output_tokens,thinking_tokens,timestamp,query_text\n\
                   r1,m,d,q,0,100,50,30,2026-03-01T10:00:00Z,what is 2+2\n\
                   r2,m,d,q,1,100,40,,,\n";
        let l = Ledger::parse_csv(csv, IngestMode::Strict).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l.records()[0].query_text.as_deref(), Some("what is 2+2"));
        assert_eq!(l.records()[1].thinking_tokens, 0);
        assert_eq!(l.ingest_report().missing_thinking, 1);

        let bad = "record_id,model_id,dataset_id,query_id,trial_index,prompt_tokens,output_tokens,thinking_tokens\n\
                   r1,m,d,q,0,100,50,2.5\n";
        let err = Ledger::parse_csv(bad, IngestMode::Strict).unwrap_err();
        assert!(matches!(err, LedgerError::Record { line: 2, error: RecordError::FractionalCount { .. } }));
    }

    #[test]
    fn aggregate_sums_and_filters_trials() {
        let text = [
            line("m", "q1", 0, 1, 20, 10),
            line("m", "q2", 0, 1, 20, 20),
            line("m", "q1", 1, 1, 100, 100),
        ]
        .join("\n");
        let l = Ledger::parse_jsonl(&text, IngestMode::Strict).unwrap();
        let orig = aggregate_usage(&l, TrialFilter::OriginalsOnly);
        assert_eq!(orig.len(), 1);
        assert_eq!(orig[0].total_thinking_tokens, 30);
        assert_eq!(orig[0].query_count, 2);
        let all = aggregate_usage(&l, TrialFilter::AllTrials);
        assert_eq!(all[0].total_thinking_tokens, 130);
        assert_eq!(all[0].query_count, 2);
    }

    #[test]
    fn query_trials_sorted_by_trial() {
        let text = [line("m", "q", 2, 1, 5, 1), line("m", "q", 0, 1, 5, 2), line("m", "q", 1, 1, 5, 3)].join("\n");
        let l = Ledger::parse_jsonl(&text, IngestMode::Strict).unwrap();
        let trials: Vec<u32> = l.query_trials("m", "d", "q").iter().map(|r| r.trial_index).collect();
        assert_eq!(trials, vec![0, 1, 2]);
    }
}
