//! Usage collection from OpenAI-compatible chat-completion endpoints.
//!
//! Each (query, trial) pair becomes one request. Token counts are pulled out
//! of the response with a configurable field map, since providers disagree
//! on where thinking tokens live.

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::catalog::ModelPricing;
use crate::cost::query_cost;
use crate::http::{run_bounded, with_retries, HttpError, JsonClient, RetryError, RetryPolicy};
use crate::ledger::{Ledger, RecordKey, UsageRecord};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid collector config: {0}")]
    Config(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("no queries to collect")]
    NoQueries,
    #[error("query {0} appears more than once in the input")]
    DuplicateQuery(String),
    #[error("ledger already holds {0}; refusing to collect it again")]
    AlreadyCollected(RecordKey),
    #[error("bad query line {line}: {message}")]
    BadQuery { line: usize, message: String },
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("cannot write record: {0}")]
    Write(#[source] std::io::Error),
}

/// Response paths for each ledger token field. A path is dot-separated
/// (`usage.completion_tokens_details.reasoning_tokens`); numeric segments
/// index arrays; `a+b` sums two paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsageFieldMap {
    pub prompt_tokens: String,
    pub output_tokens: String,
    #[serde(default)]
    pub thinking_tokens: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Openai,
    Gemini,
    Anthropic,
    OpenaiCompatible,
}

impl Preset {
    pub fn field_map(self) -> UsageFieldMap {
        let (p, o, t) = match self {
            Preset::Openai | Preset::OpenaiCompatible => (
                "usage.prompt_tokens",
                "usage.completion_tokens",
                Some("usage.completion_tokens_details.reasoning_tokens"),
            ),
            Preset::Gemini => (
                "usageMetadata.promptTokenCount",
                "usageMetadata.candidatesTokenCount+usageMetadata.thoughtsTokenCount",
                Some("usageMetadata.thoughtsTokenCount"),
            ),
            // thinking is billed inside output_tokens with no separate counter
            Preset::Anthropic => ("usage.input_tokens", "usage.output_tokens", None),
        };
        UsageFieldMap {
            prompt_tokens: p.into(),
            output_tokens: o.into(),
            thinking_tokens: t.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorConfig {
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// Ledger model id; must match the pricing catalog.
    pub model_id: String,
    /// Model name sent on the wire. Defaults to `model_id`.
    #[serde(default)]
    pub api_model: Option<String>,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Overrides the preset's map when given.
    #[serde(default)]
    pub usage_field_map: Option<UsageFieldMap>,
    /// Merged into the request body untouched.
    #[serde(default)]
    pub generation_params: Map<String, Value>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub max_spend_usd: Option<f64>,
    #[serde(default = "default_true")]
    pub store_query_text: bool,
}

fn default_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl CollectorConfig {
    pub fn from_toml(text: &str) -> Result<Self, CollectError> {
        let cfg: CollectorConfig = toml::from_str(text).map_err(|e| CollectError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CollectError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CollectError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CollectError> {
        if self.model_id.is_empty() {
            return Err(CollectError::Config("model_id is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(CollectError::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(CollectError::Config("retry.max_attempts must be at least 1".into()));
        }
        if let Some(limit) = self.max_spend_usd {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(CollectError::Config(format!("max_spend_usd must be positive, got {limit}")));
            }
        }
        if self.usage_field_map.is_none() && self.preset.is_none() {
            return Err(CollectError::Config("set either preset or usage_field_map".into()));
        }
        let map = self.field_map();
        for (name, path) in [("prompt_tokens", &map.prompt_tokens), ("output_tokens", &map.output_tokens)] {
            if path.trim().is_empty() {
                return Err(CollectError::Config(format!("usage_field_map.{name} is empty")));
            }
        }
        for reserved in ["model", "messages"] {
            if self.generation_params.contains_key(reserved) {
                return Err(CollectError::Config(format!("generation_params may not set \"{reserved}\"")));
            }
        }
        Ok(())
    }

    pub fn field_map(&self) -> UsageFieldMap {
        self.usage_field_map
            .clone()
            .or_else(|| self.preset.map(Preset::field_map))
            .unwrap_or_else(|| Preset::Openai.field_map())
    }

    pub fn wire_model(&self) -> &str {
        self.api_model.as_deref().unwrap_or(&self.model_id)
    }

    pub fn request_body(&self, text: &str) -> Value {
        let mut body = self.generation_params.clone();
        body.insert("model".into(), json!(self.wire_model()));
        body.insert("messages".into(), json!([{ "role": "user", "content": text }]));
        Value::Object(body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectQuery {
    pub query_id: String,
    pub dataset_id: String,
    pub text: String,
}

/// Reads queries as JSON lines with `query_id`, `dataset_id` and `text`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<CollectQuery>, CollectError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CollectError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CollectError::BadQuery {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, seg| match v {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UsageError {
    #[error("missing usage field {0}")]
    Missing(String),
    #[error("usage field {path} is not a non-negative integer: {value}")]
    NotACount { path: String, value: String },
    #[error("thinking tokens {thinking} exceed output tokens {output}")]
    ThinkingExceedsOutput { thinking: u64, output: u64 },
}

fn resolve(response: &Value, spec: &str) -> Result<Option<u64>, UsageError> {
    let mut total = 0u64;
    for part in spec.split('+').map(str::trim) {
        let Some(v) = lookup(response, part) else {
            return Ok(None);
        };
        let n = v.as_u64().ok_or_else(|| UsageError::NotACount {
            path: part.into(),
            value: v.to_string(),
        })?;
        total = total.saturating_add(n);
    }
    Ok(Some(total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractedUsage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub thinking_tokens: u64,
    /// The thinking path was configured but absent, so 0 was used.
    pub thinking_defaulted: bool,
}

pub fn extract_usage(response: &Value, map: &UsageFieldMap) -> Result<ExtractedUsage, UsageError> {
    let required = |path: &str| resolve(response, path)?.ok_or_else(|| UsageError::Missing(path.into()));
    let prompt_tokens = required(&map.prompt_tokens)?;
    let output_tokens = required(&map.output_tokens)?;
    let (thinking_tokens, thinking_defaulted) = match &map.thinking_tokens {
        None => (0, false),
        Some(path) => match resolve(response, path)? {
            Some(n) => (n, false),
            None => (0, true),
        },
    };
    if thinking_tokens > output_tokens {
        return Err(UsageError::ThinkingExceedsOutput {
            thinking: thinking_tokens,
            output: output_tokens,
        });
    }
    Ok(ExtractedUsage {
        prompt_tokens,
        output_tokens,
        thinking_tokens,
        thinking_defaulted,
    })
}

pub trait ChatTransport: Sync {
    fn complete(&self, body: &Value, query: &CollectQuery, trial: u32) -> Result<Value, HttpError>;
}

pub struct HttpTransport {
    client: JsonClient,
    url: String,
    credential: String,
}

impl HttpTransport {
    pub fn new(config: &CollectorConfig) -> Result<Self, CollectError> {
        let credential = std::env::var(&config.credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CollectError::MissingCredential(config.credential_env.clone()))?;
        Ok(HttpTransport {
            client: JsonClient::new(Duration::from_secs(config.retry.timeout_secs))?,
            url: config.endpoint_url.clone(),
            credential,
        })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, body: &Value, _: &CollectQuery, _: u32) -> Result<Value, HttpError> {
        self.client.post(&self.url, Some(&self.credential), body)
    }
}

/// Serves canned responses from a directory instead of the network. Looks
/// for `<query_id>.<trial>.json`, then `<query_id>.json`, then `default.json`.
pub struct DryRunTransport {
    dir: PathBuf,
}

impl DryRunTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DryRunTransport { dir: dir.into() }
    }
}

impl ChatTransport for DryRunTransport {
    fn complete(&self, _: &Value, query: &CollectQuery, trial: u32) -> Result<Value, HttpError> {
        let candidates = [
            format!("{}.{trial}.json", query.query_id),
            format!("{}.json", query.query_id),
            "default.json".to_string(),
        ];
        for name in candidates {
            let path = self.dir.join(name);
            if let Ok(text) = std::fs::read_to_string(&path) {
                return serde_json::from_str(&text).map_err(|e| HttpError::Decode(format!("{}: {e}", path.display())));
            }
        }
        Err(HttpError::Decode(format!(
            "no canned response for {} trial {trial} in {}",
            query.query_id,
            self.dir.display()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Authentication,
    MalformedUsage,
    RetriesExhausted,
    RequestRejected,
    /// Not sent because the spend limit was reached.
    SpendLimit,
    /// Not sent because an earlier authentication failure stopped the run.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectFailure {
    pub query_id: String,
    pub dataset_id: String,
    pub trial_index: u32,
    pub kind: FailureKind,
    pub message: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectOutcome {
    pub model_id: String,
    pub requested: usize,
    pub records: Vec<UsageRecord>,
    pub failures: Vec<CollectFailure>,
    pub warnings: Vec<String>,
    pub spend_usd: Option<f64>,
    /// Set when an authentication failure ended the run early.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

struct Job<'q> {
    query: &'q CollectQuery,
    trial: u32,
}

type JobResult = Result<(UsageRecord, bool), (FailureKind, String, u32)>;

pub fn record_id(model_id: &str, dataset_id: &str, query_id: &str, trial: u32) -> String {
    format!("{model_id}:{dataset_id}:{query_id}:{trial}")
}

/// Runs `trials` requests for every query and hands each finished record to
/// `write` as it arrives. `write` is only ever called from this thread.
/// Keys already present in `existing` are rejected before anything is sent.
pub fn collect(
    config: &CollectorConfig,
    transport: &dyn ChatTransport,
    queries: &[CollectQuery],
    trials: u32,
    existing: Option<&Ledger>,
    pricing: Option<&ModelPricing>,
    mut write: impl FnMut(&UsageRecord) -> std::io::Result<()>,
) -> Result<CollectOutcome, CollectError> {
    config.validate()?;
    if trials == 0 {
        return Err(CollectError::ZeroTrials);
    }
    if queries.is_empty() {
        return Err(CollectError::NoQueries);
    }
    if config.max_spend_usd.is_some() && pricing.is_none() {
        return Err(CollectError::Config("max_spend_usd needs the model's pricing".into()));
    }
    let mut seen = BTreeSet::new();
    for q in queries {
        if !seen.insert((&q.dataset_id, &q.query_id)) {
            return Err(CollectError::DuplicateQuery(format!("{}/{}", q.dataset_id, q.query_id)));
        }
    }
    if let Some(ledger) = existing {
        let taken: BTreeSet<RecordKey> = ledger.records().iter().map(UsageRecord::key).collect();
        for q in queries {
            for trial in 0..trials {
                let key = RecordKey {
                    model_id: config.model_id.clone(),
                    dataset_id: q.dataset_id.clone(),
                    query_id: q.query_id.clone(),
                    trial_index: trial,
                };
                if taken.contains(&key) {
                    return Err(CollectError::AlreadyCollected(key));
                }
            }
        }
    }

    let map = config.field_map();
    let jobs: Vec<Job> = queries
        .iter()
        .flat_map(|query| (0..trials).map(move |trial| Job { query, trial }))
        .collect();
    let requested = jobs.len();

    let work = |job: &Job| -> JobResult {
        let body = config.request_body(&job.query.text);
        let (response, attempts) = with_retries(&config.retry, |_| transport.complete(&body, job.query, job.trial))
            .map_err(|e| match &e {
                RetryError::Fatal(inner) if inner.is_auth_failure() => (FailureKind::Authentication, e.to_string(), 1),
                RetryError::Fatal(_) => (FailureKind::RequestRejected, e.to_string(), 1),
                RetryError::Exhausted { attempts, .. } => (FailureKind::RetriesExhausted, e.to_string(), *attempts),
            })?;
        let received = Utc::now();
        let usage = extract_usage(&response, &map).map_err(|e| (FailureKind::MalformedUsage, e.to_string(), attempts))?;
        let q = job.query;
        let record = UsageRecord {
            record_id: record_id(&config.model_id, &q.dataset_id, &q.query_id, job.trial),
            model_id: config.model_id.clone(),
            dataset_id: q.dataset_id.clone(),
            query_id: q.query_id.clone(),
            trial_index: job.trial,
            prompt_tokens: usage.prompt_tokens,
            output_tokens: usage.output_tokens,
            thinking_tokens: usage.thinking_tokens,
            timestamp: Some(received),
            query_text: config.store_query_text.then(|| q.text.clone()),
            aggregate: false,
        };
        Ok((record, usage.thinking_defaulted))
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let mut spend = 0.0;
    let mut aborted = None;
    let mut write_error = None;
    let mut stop_kind = FailureKind::Aborted;

    let unstarted = run_bounded(jobs, config.max_in_flight, work, |job, result| {
        match result {
            Ok((record, defaulted)) => {
                if defaulted {
                    let msg = format!("{}: thinking-token field absent, recorded 0", record.record_id);
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                if let Err(e) = write(&record) {
                    write_error = Some(e);
                    return ControlFlow::Break(());
                }
                if let Some(p) = pricing {
                    spend += query_cost(p, &record).unwrap_or(0.0);
                }
                records.push(record);
                if let Some(limit) = config.max_spend_usd {
                    if spend >= limit {
                        stop_kind = FailureKind::SpendLimit;
                        return ControlFlow::Break(());
                    }
                }
            }
            Err((kind, message, attempts)) => {
                log::warn!("{} trial {}: {message}", job.query.query_id, job.trial);
                failures.push(CollectFailure {
                    query_id: job.query.query_id.clone(),
                    dataset_id: job.query.dataset_id.clone(),
                    trial_index: job.trial,
                    kind,
                    message: message.clone(),
                    attempts,
                });
                if kind == FailureKind::Authentication {
                    aborted = Some(message);
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    });
    if let Some(e) = write_error {
        return Err(CollectError::Write(e));
    }
    let reason = match stop_kind {
        FailureKind::SpendLimit => "spend limit reached",
        _ => "run stopped after authentication failure",
    };
    for job in unstarted {
        failures.push(CollectFailure {
            query_id: job.query.query_id.clone(),
            dataset_id: job.query.dataset_id.clone(),
            trial_index: job.trial,
            kind: stop_kind,
            message: reason.into(),
            attempts: 0,
        });
    }
    Ok(CollectOutcome {
        model_id: config.model_id.clone(),
        requested,
        records,
        failures,
        warnings,
        spend_usd: pricing.map(|_| spend),
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn config(url: &str) -> CollectorConfig {
        CollectorConfig::from_toml(&format!(
            r#"
endpoint_url = "{url}"
credential_env = "COST_AUDIT_TEST_KEY"
model_id = "GPT-5.2"
api_model = "gpt-5.2"
preset = "openai"
max_in_flight = 2

[generation_params]
reasoning_effort = "medium"

[retry]
max_attempts = 3
backoff_base_ms = 1
timeout_secs = 5
"#
        ))
        .unwrap()
    }

    fn openai_usage(p: u64, o: u64, t: u64) -> Value {
        json!({"choices": [], "usage": {"prompt_tokens": p, "completion_tokens": o,
            "completion_tokens_details": {"reasoning_tokens": t}}})
    }

    struct Canned(Value);
    impl ChatTransport for Canned {
        fn complete(&self, _: &Value, _: &CollectQuery, _: u32) -> Result<Value, HttpError> {
            Ok(self.0.clone())
        }
    }

    fn queries(n: usize) -> Vec<CollectQuery> {
        (0..n)
            .map(|i| CollectQuery {
                query_id: format!("q{i}"),
                dataset_id: "AIME".into(),
                text: format!("question {i}"),
            })
            .collect()
    }

    #[test]
    fn direct_field_mapping() {
        let u = extract_usage(&openai_usage(10, 100, 60), &Preset::Openai.field_map()).unwrap();
        assert_eq!((u.prompt_tokens, u.output_tokens, u.thinking_tokens, u.thinking_defaulted), (10, 100, 60, false));
    }

    #[test]
    fn missing_thinking_defaults_to_zero() {
        let resp = json!({"usage": {"prompt_tokens": 10, "completion_tokens": 100}});
        let u = extract_usage(&resp, &Preset::Openai.field_map()).unwrap();
        assert_eq!((u.thinking_tokens, u.thinking_defaulted), (0, true));
    }

    #[test]
    fn gemini_sums_output_paths() {
        let resp = json!({"usageMetadata": {"promptTokenCount": 5, "candidatesTokenCount": 40, "thoughtsTokenCount": 60}});
        let u = extract_usage(&resp, &Preset::Gemini.field_map()).unwrap();
        assert_eq!((u.prompt_tokens, u.output_tokens, u.thinking_tokens), (5, 100, 60));
    }

    #[test]
    fn malformed_usage() {
        let map = Preset::Openai.field_map();
        assert!(matches!(extract_usage(&json!({"usage": {}}), &map), Err(UsageError::Missing(_))));
        let bad = json!({"usage": {"prompt_tokens": -1, "completion_tokens": 3}});
        assert!(matches!(extract_usage(&bad, &map), Err(UsageError::NotACount { .. })));
        assert!(matches!(
            extract_usage(&openai_usage(1, 5, 9), &map),
            Err(UsageError::ThinkingExceedsOutput { .. })
        ));
        let indexed = json!({"a": [{"n": 3}]});
        assert_eq!(resolve(&indexed, "a.0.n").unwrap(), Some(3));
    }

    #[test]
    fn request_body_passes_params_through() {
        let body = config("http://x").request_body("hi");
        assert_eq!(body["model"], "gpt-5.2");
        assert_eq!(body["reasoning_effort"], "medium");
        assert_eq!(body["messages"][0]["content"], "hi");
    }

    #[test]
    fn config_validation() {
        let base = "endpoint_url = \"u\"\ncredential_env = \"K\"\nmodel_id = \"m\"\n";
        assert!(CollectorConfig::from_toml(base).is_err());
        assert!(CollectorConfig::from_toml(&format!("{base}preset = \"anthropic\"\n")).is_ok());
        assert!(CollectorConfig::from_toml(&format!("{base}preset = \"openai\"\nmax_in_flight = 0\n")).is_err());
        assert!(CollectorConfig::from_toml(&format!("{base}preset = \"openai\"\nbogus = 1\n")).is_err());
        let custom = format!("{base}[usage_field_map]\nprompt_tokens = \"u.p\"\noutput_tokens = \"u.o\"\n");
        let cfg = CollectorConfig::from_toml(&custom).unwrap();
        assert_eq!(cfg.field_map().thinking_tokens, None);
        assert_eq!(cfg.retry, RetryPolicy::default());
    }

    #[test]
    fn six_trials_give_six_records() {
        let cfg = config("http://unused");
        let mut written = Vec::new();
        let out = collect(&cfg, &Canned(openai_usage(10, 100, 60)), &queries(1), 6, None, None, |r| {
            written.push(r.clone());
            Ok(())
        })
        .unwrap();
        let mut trials: Vec<u32> = out.records.iter().map(|r| r.trial_index).collect();
        trials.sort();
        assert_eq!(trials, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(written.len(), 6);
        assert!(out.failures.is_empty());
        let r = &out.records[0];
        assert_eq!((r.prompt_tokens, r.output_tokens, r.thinking_tokens), (10, 100, 60));
        assert_eq!(r.record_id, format!("GPT-5.2:AIME:q0:{}", r.trial_index));
        assert!(r.timestamp.is_some());
        assert!(Ledger::from_records(out.records).is_ok());
    }

    #[test]
    fn rejects_already_collected_keys() {
        let cfg = config("http://unused");
        let first = collect(&cfg, &Canned(openai_usage(1, 2, 1)), &queries(2), 2, None, None, |_| Ok(())).unwrap();
        let ledger = Ledger::from_records(first.records).unwrap();
        let again = collect(&cfg, &Canned(openai_usage(1, 2, 1)), &queries(2), 2, Some(&ledger), None, |_| {
            panic!("nothing should be written")
        });
        assert!(matches!(again, Err(CollectError::AlreadyCollected(_))));
    }

    #[test]
    fn failures_account_for_every_missing_record() {
        struct Flaky;
        impl ChatTransport for Flaky {
            fn complete(&self, _: &Value, q: &CollectQuery, _: u32) -> Result<Value, HttpError> {
                match q.query_id.as_str() {
                    "q0" => Err(HttpError::Status { status: 503, body: String::new() }),
                    "q1" => Ok(json!({"usage": {}})),
                    _ => Ok(openai_usage(3, 30, 20)),
                }
            }
        }
        let out = collect(&config("http://unused"), &Flaky, &queries(4), 3, None, None, |_| Ok(())).unwrap();
        assert_eq!(out.records.len() + out.failures.len(), 12);
        assert_eq!(out.records.len(), 6);
        let kinds: BTreeSet<_> = out.failures.iter().map(|f| format!("{:?}", f.kind)).collect();
        assert_eq!(kinds, ["MalformedUsage", "RetriesExhausted"].iter().map(|s| s.to_string()).collect());
        assert!(out.failures.iter().filter(|f| f.kind == FailureKind::RetriesExhausted).all(|f| f.attempts == 3));
    }

    #[test]
    fn spend_limit_stops_the_run() {
        let mut cfg = config("http://unused");
        cfg.max_in_flight = 1;
        cfg.max_spend_usd = Some(0.001);
        let pricing = ModelPricing::new("GPT-5.2", "OpenAI", "1.75".parse().unwrap(), "14".parse().unwrap(), chrono::NaiveDate::from_ymd_opt(2026, 2, 28).unwrap());
        // 1000 output tokens at $14/M = $0.014 per request
        let out = collect(&cfg, &Canned(openai_usage(0, 1000, 0)), &queries(10), 1, None, Some(&pricing), |_| Ok(())).unwrap();
        assert!(out.records.len() <= 2);
        assert_eq!(out.records.len() + out.failures.len(), 10);
        assert!(out.failures.iter().all(|f| f.kind == FailureKind::SpendLimit));
    }

    #[test]
    fn dry_run_reads_canned_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("default.json"), openai_usage(1, 10, 5).to_string()).unwrap();
        std::fs::write(dir.path().join("q1.json"), openai_usage(2, 20, 6).to_string()).unwrap();
        std::fs::write(dir.path().join("q1.1.json"), openai_usage(3, 30, 7).to_string()).unwrap();
        let t = DryRunTransport::new(dir.path());
        let out = collect(&config("http://unused"), &t, &queries(2), 2, None, None, |_| Ok(())).unwrap();
        let mut got: Vec<(String, u32, u64)> =
            out.records.iter().map(|r| (r.query_id.clone(), r.trial_index, r.prompt_tokens)).collect();
        got.sort();
        assert_eq!(
            got,
            vec![("q0".into(), 0, 1), ("q0".into(), 1, 1), ("q1".into(), 0, 2), ("q1".into(), 1, 3)]
        );
    }

    /// Answers each connection with the next canned (status, body) pair.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (stream, (status, body)) in listener.incoming().zip(replies) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = false;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    auth |= lower.starts_with("authorization: bearer sk-test");
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                assert!(auth, "missing bearer token");
                counter.fetch_add(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (url, hits)
    }

    fn with_key<T>(f: impl FnOnce() -> T) -> T {
        std::env::set_var("COST_AUDIT_TEST_KEY", "sk-test");
        f()
    }

    #[test]
    fn http_retries_transient_errors() {
        let ok = openai_usage(7, 70, 50).to_string();
        let (url, hits) = serve(vec![(503, "busy".into()), (200, ok)]);
        let mut cfg = config(&url);
        cfg.max_in_flight = 1;
        let out = with_key(|| {
            let t = HttpTransport::new(&cfg).unwrap();
            collect(&cfg, &t, &queries(1), 1, None, None, |_| Ok(())).unwrap()
        });
        assert_eq!(hits.load(Ordering::SeqCst), 2);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].thinking_tokens, 50);
    }

    #[test]
    fn http_auth_failure_aborts() {
        let (url, hits) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let mut cfg = config(&url);
        cfg.max_in_flight = 1;
        let out = with_key(|| {
            let t = HttpTransport::new(&cfg).unwrap();
            collect(&cfg, &t, &queries(3), 2, None, None, |_| Ok(())).unwrap()
        });
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        assert!(out.aborted.is_some());
        assert!(out.records.is_empty());
        assert_eq!(out.failures.len(), 6);
        assert_eq!(out.failures.iter().filter(|f| f.kind == FailureKind::Authentication).count(), 1);
    }

    #[test]
    fn missing_credential() {
        let mut cfg = config("http://unused");
        cfg.credential_env = "COST_AUDIT_SURELY_UNSET".into();
        assert!(matches!(HttpTransport::new(&cfg), Err(CollectError::MissingCredential(_))));
    }
}
