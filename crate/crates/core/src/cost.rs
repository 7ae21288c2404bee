//! Per-query, per-dataset, ablated and decomposed costs.
//!
//! Thinking tokens are billed at the output rate, so a record's cost is
//! `p_in * prompt + p_out * output` (per million tokens) and removing the
//! thinking contribution leaves `p_in * prompt + p_out * (output - thinking)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, ModelPricing, PricingCatalog};
use crate::ledger::{Ledger, TrialFilter, UsageRecord};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("record for model \"{record}\" priced with \"{pricing}\"")]
    ModelMismatch { pricing: String, record: String },
    #[error("no original-trial records for ({model_id}, {dataset_id})")]
    EmptyCell { model_id: String, dataset_id: String },
    #[error("thinking share undefined: {0} is zero")]
    ZeroDenominator(&'static str),
    #[error("unknown model_id \"{0}\"")]
    UnknownModel(String),
}

impl From<CatalogError> for CostError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownModel(m) => CostError::UnknownModel(m),
            other => CostError::UnknownModel(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Actual,
    /// Thinking-token spend removed.
    Ablated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Query,
    Dataset,
    Workload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareBasis {
    /// Thinking tokens over output tokens.
    #[default]
    Tokens,
    /// Thinking cost over total cost.
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub model_id: String,
    pub scope: Scope,
    pub prompt_cost: f64,
    pub thinking_cost: f64,
    pub generation_cost: f64,
    pub total_cost: f64,
    pub prompt_tokens: u64,
    pub thinking_tokens: u64,
    pub generation_tokens: u64,
}

fn check_model(pricing: &ModelPricing, record: &UsageRecord) -> Result<(), CostError> {
    if pricing.model_id != record.model_id {
        return Err(CostError::ModelMismatch {
            pricing: pricing.model_id.clone(),
            record: record.model_id.clone(),
        });
    }
    Ok(())
}

fn raw_cost(pricing: &ModelPricing, prompt: u64, output: u64) -> f64 {
    pricing.input_price_per_mtok.cost_of(prompt) + pricing.output_price_per_mtok.cost_of(output)
}

/// USD cost of one API call.
pub fn query_cost(pricing: &ModelPricing, record: &UsageRecord) -> Result<f64, CostError> {
    check_model(pricing, record)?;
    Ok(raw_cost(pricing, record.prompt_tokens, record.output_tokens))
}

/// USD cost of one API call with its thinking tokens left unbilled.
pub fn ablated_cost(pricing: &ModelPricing, record: &UsageRecord) -> Result<f64, CostError> {
    check_model(pricing, record)?;
    Ok(raw_cost(pricing, record.prompt_tokens, record.generation_tokens()))
}

pub fn record_cost(pricing: &ModelPricing, record: &UsageRecord, mode: CostMode) -> Result<f64, CostError> {
    match mode {
        CostMode::Actual => query_cost(pricing, record),
        CostMode::Ablated => ablated_cost(pricing, record),
    }
}

/// Sum of per-query costs over the original-trial records of one dataset.
pub fn dataset_cost(pricing: &ModelPricing, ledger: &Ledger, dataset_id: &str) -> Result<f64, CostError> {
    dataset_cost_in_mode(pricing, ledger, dataset_id, CostMode::Actual)
}

pub fn ablated_dataset_cost(pricing: &ModelPricing, ledger: &Ledger, dataset_id: &str) -> Result<f64, CostError> {
    dataset_cost_in_mode(pricing, ledger, dataset_id, CostMode::Ablated)
}

pub fn dataset_cost_in_mode(
    pricing: &ModelPricing,
    ledger: &Ledger,
    dataset_id: &str,
    mode: CostMode,
) -> Result<f64, CostError> {
    let mut total = 0.0;
    let mut seen = false;
    for r in ledger.cell(&pricing.model_id, dataset_id, TrialFilter::OriginalsOnly) {
        total += record_cost(pricing, r, mode)?;
        seen = true;
    }
    if !seen {
        return Err(CostError::EmptyCell {
            model_id: pricing.model_id.clone(),
            dataset_id: dataset_id.to_string(),
        });
    }
    Ok(total)
}

/// Splits spend on `records` into prompt, thinking and generation parts.
pub fn cost_breakdown<'a>(
    pricing: &ModelPricing,
    records: impl IntoIterator<Item = &'a UsageRecord>,
    scope: Scope,
) -> Result<CostBreakdown, CostError> {
    let (mut prompt, mut thinking, mut generation) = (0u64, 0u64, 0u64);
    for r in records {
        check_model(pricing, r)?;
        prompt += r.prompt_tokens;
        thinking += r.thinking_tokens;
        generation += r.generation_tokens();
    }
    let prompt_cost = pricing.input_price_per_mtok.cost_of(prompt);
    let thinking_cost = pricing.output_price_per_mtok.cost_of(thinking);
    let generation_cost = pricing.output_price_per_mtok.cost_of(generation);
    Ok(CostBreakdown {
        model_id: pricing.model_id.clone(),
        scope,
        prompt_cost,
        thinking_cost,
        generation_cost,
        total_cost: prompt_cost + thinking_cost + generation_cost,
        prompt_tokens: prompt,
        thinking_tokens: thinking,
        generation_tokens: generation,
    })
}

/// Fraction of output tokens (or of total cost) attributable to thinking.
pub fn thinking_share(breakdown: &CostBreakdown, basis: ShareBasis) -> Result<f64, CostError> {
    match basis {
        ShareBasis::Tokens => {
            let output = breakdown.thinking_tokens + breakdown.generation_tokens;
            if output == 0 {
                return Err(CostError::ZeroDenominator("output token count"));
            }
            Ok(breakdown.thinking_tokens as f64 / output as f64)
        }
        ShareBasis::Cost => {
            if breakdown.total_cost <= 0.0 {
                return Err(CostError::ZeroDenominator("total cost"));
            }
            Ok(breakdown.thinking_cost / breakdown.total_cost)
        }
    }
}

/// Dataset-level costs for every (model, dataset) cell with original records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    pub mode: CostMode,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl CostMatrix {
    pub fn build(catalog: &PricingCatalog, ledger: &Ledger, mode: CostMode) -> Result<Self, CostError> {
        let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut datasets = BTreeSet::new();
        for m in ledger.model_ids() {
            let pricing = catalog.get(m)?;
            for d in ledger.dataset_ids() {
                match dataset_cost_in_mode(pricing, ledger, d, mode) {
                    Ok(c) => {
                        cells.entry(m.to_string()).or_default().insert(d.to_string(), c);
                        datasets.insert(d.to_string());
                    }
                    Err(CostError::EmptyCell { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(CostMatrix {
            mode,
            models: cells.keys().cloned().collect(),
            datasets: datasets.into_iter().collect(),
            cells,
        })
    }

    pub fn get(&self, model_id: &str, dataset_id: &str) -> Option<f64> {
        self.cells.get(model_id)?.get(dataset_id).copied()
    }

    /// Costs of every model present on `dataset_id`.
    pub fn column(&self, dataset_id: &str) -> BTreeMap<String, f64> {
        self.cells
            .iter()
            .filter_map(|(m, row)| row.get(dataset_id).map(|c| (m.clone(), *c)))
            .collect()
    }

    /// Workload total of a model across every dataset it ran.
    pub fn row_total(&self, model_id: &str) -> Option<f64> {
        self.cells.get(model_id).map(|row| row.values().sum())
    }
}

/// Total cost of a model across all datasets in the ledger.
pub fn workload_cost(pricing: &ModelPricing, ledger: &Ledger, mode: CostMode) -> Result<f64, CostError> {
    let mut total = 0.0;
    let mut seen = false;
    for d in ledger.dataset_ids() {
        match dataset_cost_in_mode(pricing, ledger, d, mode) {
            Ok(c) => {
                total += c;
                seen = true;
            }
            Err(CostError::EmptyCell { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if !seen {
        return Err(CostError::EmptyCell {
            model_id: pricing.model_id.clone(),
            dataset_id: "*".into(),
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::UnitPrice;
    use chrono::NaiveDate;

    fn pricing(model: &str, i: &str, o: &str) -> ModelPricing {
        ModelPricing::new(
            model,
            "p",
            i.parse::<UnitPrice>().unwrap(),
            o.parse::<UnitPrice>().unwrap(),
            NaiveDate::from_ymd_opt(2026, 2, 28).unwrap(),
        )
    }

    fn rec(model: &str, p: u64, o: u64, t: u64) -> UsageRecord {
        UsageRecord {
            record_id: format!("{model}-{p}-{o}-{t}"),
            model_id: model.into(),
            dataset_id: "d".into(),
            query_id: "q".into(),
            trial_index: 0,
            prompt_tokens: p,
            output_tokens: o,
            thinking_tokens: t,
            timestamp: None,
            query_text: None,
            aggregate: false,
        }
    }

    #[test]
    fn one_mtok_each_sums_unit_prices() {
        let gpt = pricing("GPT-5.2", "1.75", "14.00");
        assert_eq!(query_cost(&gpt, &rec("GPT-5.2", 1_000_000, 1_000_000, 0)).unwrap(), 15.75);
        assert_eq!(query_cost(&gpt, &rec("GPT-5.2", 0, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn small_query_hand_arithmetic() {
        let p = pricing("m", "1.00", "2.00");
        let c = query_cost(&p, &rec("m", 100, 50, 30)).unwrap();
        approx::assert_relative_eq!(c, 0.0002, max_relative = 1e-12);
        let a = ablated_cost(&p, &rec("m", 100, 50, 30)).unwrap();
        approx::assert_relative_eq!(a, 0.0001 + 0.00004, max_relative = 1e-12);
    }

    #[test]
    fn mismatched_model_rejected() {
        let p = pricing("a", "1", "1");
        assert_eq!(
            query_cost(&p, &rec("b", 1, 1, 0)),
            Err(CostError::ModelMismatch { pricing: "a".into(), record: "b".into() })
        );
        assert!(cost_breakdown(&p, [&rec("b", 1, 1, 0)], Scope::Query).is_err());
    }

    #[test]
    fn ablation_without_thinking_is_identity() {
        let p = pricing("m", "0.30", "1.20");
        let r = rec("m", 1234, 5678, 0);
        assert_eq!(ablated_cost(&p, &r).unwrap(), query_cost(&p, &r).unwrap());
    }

    #[test]
    fn breakdown_components() {
        let p = pricing("m", "1.00", "2.00");
        let b = cost_breakdown(&p, [&rec("m", 100, 50, 30)], Scope::Query).unwrap();
        approx::assert_relative_eq!(b.prompt_cost, 0.0001, max_relative = 1e-12);
        approx::assert_relative_eq!(b.thinking_cost, 0.00006, max_relative = 1e-12);
        approx::assert_relative_eq!(b.generation_cost, 0.00004, max_relative = 1e-12);
        approx::assert_relative_eq!(b.total_cost, 0.0002, max_relative = 1e-12);
    }

    #[test]
    fn thinking_share_edges() {
        let p = pricing("m", "1.00", "2.00");
        let all = cost_breakdown(&p, [&rec("m", 10, 40, 40), &rec("m", 5, 7, 7)], Scope::Dataset).unwrap();
        assert_eq!(thinking_share(&all, ShareBasis::Tokens).unwrap(), 1.0);
        let none = cost_breakdown(&p, [&rec("m", 10, 40, 0)], Scope::Dataset).unwrap();
        assert_eq!(none.thinking_cost, 0.0);
        assert_eq!(thinking_share(&none, ShareBasis::Tokens).unwrap(), 0.0);
        assert_eq!(thinking_share(&none, ShareBasis::Cost).unwrap(), 0.0);
        let empty = cost_breakdown(&p, [&rec("m", 0, 0, 0)], Scope::Query).unwrap();
        assert!(matches!(thinking_share(&empty, ShareBasis::Tokens), Err(CostError::ZeroDenominator(_))));
        assert!(matches!(thinking_share(&empty, ShareBasis::Cost), Err(CostError::ZeroDenominator(_))));
    }

    #[test]
    fn empty_cell_is_an_error() {
        let p = pricing("m", "1", "1");
        let l = Ledger::from_records(vec![rec("m", 1, 1, 0)]).unwrap();
        assert!(dataset_cost(&p, &l, "d").is_ok());
        assert!(matches!(dataset_cost(&p, &l, "other"), Err(CostError::EmptyCell { .. })));
    }
}
