//! Datasets bundled into the binary.
//!
//! The pricing snapshot and per-cell totals reproduce the published appendix
//! tables. Per-query data (repeated trials, prediction demo) is synthetic and
//! seeded; see `fixtures/generate.py`.

use crate::catalog::{CatalogError, PricingCatalog};
use crate::ledger::{IngestMode, Ledger, LedgerError};
use crate::predict::embedding::{EmbeddingCache, EmbeddingError};

pub const PRICING_CSV: &str = include_str!("../fixtures/pricing_2026-02-28.csv");
pub const AGGREGATE_LEDGER: &str = include_str!("../fixtures/aggregate_ledger.jsonl");
pub const REPEATED_TRIALS: &str = include_str!("../fixtures/repeated_trials_aime.jsonl");
pub const PREDICT_DEMO: &str = include_str!("../fixtures/predict_demo.jsonl");
pub const PREDICT_DEMO_EMBEDDINGS: &str = include_str!("../fixtures/predict_demo.embeddings");
/// Published per-model MAE. Reference only; not reproducible from the demo set.
pub const REFERENCE_MAE_CSV: &str = include_str!("../fixtures/reference_prediction_mae.csv");

pub fn pricing() -> Result<PricingCatalog, CatalogError> {
    PricingCatalog::parse_csv(PRICING_CSV)
}

/// One aggregate record per (model, dataset) cell.
pub fn aggregate_ledger() -> Result<Ledger, LedgerError> {
    Ledger::parse_jsonl(AGGREGATE_LEDGER, IngestMode::Strict)
}

/// 30 AIME queries, 6 trials each, for three models.
pub fn repeated_trials() -> Result<Ledger, LedgerError> {
    Ledger::parse_jsonl(REPEATED_TRIALS, IngestMode::Strict)
}

pub fn predict_demo() -> Result<Ledger, LedgerError> {
    Ledger::parse_jsonl(PREDICT_DEMO, IngestMode::Strict)
}

pub fn predict_demo_embeddings() -> Result<EmbeddingCache, EmbeddingError> {
    EmbeddingCache::from_text(PREDICT_DEMO_EMBEDDINGS)
}
