//! Blocking JSON-over-HTTP with bounded retries, plus a bounded worker pool.

use std::collections::VecDeque;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff delay; doubles after each failed attempt.
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
            timeout_secs: 60,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, failed_attempts: u32) -> Duration {
        let factor = 1u64 << failed_attempts.saturating_sub(1).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HttpError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response body: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Network(_) => true,
            HttpError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            HttpError::Decode(_) => false,
        }
    }

    pub fn is_auth_failure(&self) -> bool {
        matches!(self, HttpError::Status { status: 401 | 403, .. })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RetryError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: HttpError },
    #[error("{0}")]
    Fatal(HttpError),
}

impl RetryError {
    pub fn inner(&self) -> &HttpError {
        match self {
            RetryError::Exhausted { last, .. } => last,
            RetryError::Fatal(e) => e,
        }
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// policy's attempt budget is spent. Returns the value and attempts used.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, HttpError>,
) -> Result<(T, u32), RetryError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(e) if !e.is_retryable() => return Err(RetryError::Fatal(e)),
            Err(e) if attempt >= max => {
                return Err(RetryError::Exhausted {
                    attempts: attempt,
                    last: e,
                })
            }
            Err(e) => {
                log::debug!("attempt {attempt} failed ({e}); retrying");
                thread::sleep(policy.backoff(attempt));
                attempt += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HttpError::Network(e.to_string()))?;
        Ok(JsonClient { client })
    }

    pub fn post(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, HttpError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| HttpError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| HttpError::Network(e.to_string()))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(512);
            return Err(HttpError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()))
    }
}

/// Applies `work` to every item on at most `max_in_flight` threads. Results
/// are handed to `sink` on the calling thread in completion order, so `sink`
/// is the single writer. Returning `ControlFlow::Break` from `sink` stops new
/// items from being started; items never started are returned.
pub fn run_bounded<T, R, W, S>(items: Vec<T>, max_in_flight: usize, work: W, mut sink: S) -> Vec<T>
where
    T: Send,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(T, R) -> ControlFlow<()>,
{
    let workers = max_in_flight.max(1).min(items.len());
    let queue = Mutex::new(items.into_iter().collect::<VecDeque<T>>());
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::sync_channel::<(T, R)>(0);
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (queue, stop, work) = (&queue, &stop, &work);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Some(item) = queue.lock().expect("queue poisoned").pop_front() else {
                    break;
                };
                let out = work(&item);
                if tx.send((item, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (item, out) in rx {
            if sink(item, out).is_break() {
                stop.store(true, Ordering::SeqCst);
            }
        }
    });
    queue.into_inner().expect("queue poisoned").into_iter().collect()
}
