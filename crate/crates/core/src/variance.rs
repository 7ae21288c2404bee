//! Within-query variability across repeated trials of the same query.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ModelPricing;
use crate::cost::{query_cost, CostError};
use crate::ledger::Ledger;

#[derive(Debug, Error, PartialEq)]
pub enum VarianceError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("mean is zero; coefficient of variation undefined")]
    ZeroMean,
    #[error("minimum observation is zero; max/min ratio undefined")]
    ZeroMinimum,
    #[error("non-finite or negative observation {0}")]
    InvalidObservation(f64),
    #[error("no repeated trials for model \"{0}\"")]
    NoRepeatedTrials(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    ThinkingTokens,
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub trial_index: u32,
    pub thinking_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialGroup {
    pub model_id: String,
    pub dataset_id: String,
    pub query_id: String,
    pub observations: Vec<Observation>,
}

impl TrialGroup {
    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| match metric {
                Metric::ThinkingTokens => o.thinking_tokens as f64,
                Metric::Cost => o.cost,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinQueryStats {
    pub k: usize,
    pub mean: f64,
    /// (k - 1) denominator.
    pub sample_std: f64,
    pub cv: f64,
    pub max_min_ratio: f64,
    /// Each observation divided by the group mean.
    pub normalized_values: Vec<f64>,
}

pub fn stats_of(values: &[f64]) -> Result<WithinQueryStats, VarianceError> {
    let k = values.len();
    if k < 2 {
        return Err(VarianceError::TooFewObservations(k));
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(VarianceError::InvalidObservation(bad));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if mean == 0.0 {
        return Err(VarianceError::ZeroMean);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == 0.0 {
        return Err(VarianceError::ZeroMinimum);
    }
    // Raw moments are exact for integer-valued observations (token counts),
    // which keeps cv bit-identical when the data is rescaled.
    let s1: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    let kf = k as f64;
    let spread = (kf * s2 - s1 * s1).max(0.0);
    let sample_std = (spread / (kf * (kf - 1.0))).sqrt();
    Ok(WithinQueryStats {
        k,
        mean,
        sample_std,
        cv: (kf * spread / ((kf - 1.0) * s1 * s1)).sqrt(),
        max_min_ratio: max / min,
        normalized_values: values.iter().map(|v| v / mean).collect(),
    })
}

pub fn within_query_stats(group: &TrialGroup, metric: Metric) -> Result<WithinQueryStats, VarianceError> {
    stats_of(&group.values(metric))
}

/// Every query of `pricing.model_id` with two or more trials, sorted by
/// (dataset, query).
pub fn trial_groups(ledger: &Ledger, pricing: &ModelPricing) -> Result<Vec<TrialGroup>, VarianceError> {
    let mut out = Vec::new();
    for (dataset_id, query_id) in ledger.queries_of_model(&pricing.model_id) {
        let trials = ledger.query_trials(&pricing.model_id, dataset_id, query_id);
        if trials.len() < 2 {
            continue;
        }
        let observations = trials
            .iter()
            .map(|r| {
                Ok(Observation {
                    trial_index: r.trial_index,
                    thinking_tokens: r.thinking_tokens,
                    cost: query_cost(pricing, r)?,
                })
            })
            .collect::<Result<_, CostError>>()?;
        out.push(TrialGroup {
            model_id: pricing.model_id.clone(),
            dataset_id: dataset_id.to_string(),
            query_id: query_id.to_string(),
            observations,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryVariance {
    pub model_id: String,
    pub dataset_id: String,
    pub query_id: String,
    pub k: usize,
    pub mean: f64,
    pub cv: f64,
    pub max_min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelVarianceSummary {
    pub model_id: String,
    pub metric: Metric,
    pub group_count: usize,
    /// Unweighted mean of per-query CV.
    pub mean_cv: f64,
    pub mean_max_min_ratio: f64,
    pub max_ratio: f64,
    pub per_query: Vec<QueryVariance>,
}

pub fn summarize_groups(
    model_id: &str,
    groups: &[TrialGroup],
    metric: Metric,
) -> Result<ModelVarianceSummary, VarianceError> {
    if groups.is_empty() {
        return Err(VarianceError::NoRepeatedTrials(model_id.to_string()));
    }
    let mut per_query = Vec::with_capacity(groups.len());
    for g in groups {
        let s = within_query_stats(g, metric)?;
        per_query.push(QueryVariance {
            model_id: g.model_id.clone(),
            dataset_id: g.dataset_id.clone(),
            query_id: g.query_id.clone(),
            k: s.k,
            mean: s.mean,
            cv: s.cv,
            max_min_ratio: s.max_min_ratio,
        });
    }
    let n = per_query.len() as f64;
    Ok(ModelVarianceSummary {
        model_id: model_id.to_string(),
        metric,
        group_count: per_query.len(),
        mean_cv: per_query.iter().map(|q| q.cv).sum::<f64>() / n,
        mean_max_min_ratio: per_query.iter().map(|q| q.max_min_ratio).sum::<f64>() / n,
        max_ratio: per_query.iter().map(|q| q.max_min_ratio).fold(f64::NEG_INFINITY, f64::max),
        per_query,
    })
}

pub fn model_variance_summary(
    ledger: &Ledger,
    pricing: &ModelPricing,
    metric: Metric,
) -> Result<ModelVarianceSummary, VarianceError> {
    let groups = trial_groups(ledger, pricing)?;
    summarize_groups(&pricing.model_id, &groups, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(values: &[u64]) -> TrialGroup {
        TrialGroup {
            model_id: "m".into(),
            dataset_id: "d".into(),
            query_id: "q".into(),
            observations: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Observation {
                    trial_index: i as u32,
                    thinking_tokens: v,
                    cost: v as f64 * 1e-6,
                })
                .collect(),
        }
    }

    #[test]
    fn constant_group() {
        let s = within_query_stats(&group(&[5, 5, 5]), Metric::ThinkingTokens).unwrap();
        assert_eq!(s.cv, 0.0);
        assert_eq!(s.max_min_ratio, 1.0);
        assert_eq!(s.normalized_values, vec![1.0; 3]);
    }

    #[test]
    fn two_point_group() {
        let s = within_query_stats(&group(&[2, 4]), Metric::ThinkingTokens).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.sample_std - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.cv - 0.471_404_520_791_031_7).abs() < 1e-12);
        assert_eq!(s.max_min_ratio, 2.0);
    }

    #[test]
    fn case_study_gap() {
        let s = within_query_stats(&group(&[562, 11_000]), Metric::ThinkingTokens).unwrap();
        assert!((s.max_min_ratio - 19.5730).abs() < 1e-3);
    }

    #[test]
    fn error_paths() {
        assert_eq!(stats_of(&[1.0]), Err(VarianceError::TooFewObservations(1)));
        assert_eq!(stats_of(&[0.0, 0.0]), Err(VarianceError::ZeroMean));
        assert_eq!(stats_of(&[0.0, 3.0]), Err(VarianceError::ZeroMinimum));
        assert!(matches!(stats_of(&[1.0, f64::NAN]), Err(VarianceError::InvalidObservation(_))));
    }

    #[test]
    fn summary_means_per_query_cv() {
        let groups = vec![group(&[2, 4]), group(&[3, 3])];
        let s = summarize_groups("m", &groups, Metric::ThinkingTokens).unwrap();
        assert!((s.mean_cv - 0.471_404_520_791_031_7 / 2.0).abs() < 1e-12);
        assert_eq!(s.max_ratio, 2.0);
        assert_eq!(
            summarize_groups("m", &[], Metric::Cost),
            Err(VarianceError::NoRepeatedTrials("m".into()))
        );
    }
}
