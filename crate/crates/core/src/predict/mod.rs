//! Per-query cost prediction baselines.
//!
//! Three predictors, all fitted per model: the training-set mean, a
//! prompt-length least-squares line, and k-nearest neighbours over query
//! embeddings. Evaluation is mean absolute error on a dataset-stratified
//! hold-out split.

pub mod embedding;
mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, PricingCatalog};
use crate::cost::{query_cost, CostError};
use crate::ledger::{Ledger, TrialFilter};
use embedding::{EmbeddingError, EmbeddingProvider};

pub use split::{stratified_split, SplitSpec, StratifyKey};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("empty input")]
    EmptyInput,
    #[error("test_ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("stratum \"{stratum}\" has {size} quer(ies); at least 2 are needed")]
    StratumTooSmall { stratum: String, size: usize },
    #[error("no training rows for model \"{0}\"")]
    EmptyTraining(String),
    #[error("model \"{model_id}\" has {available} embedded training queries, k = {k}")]
    InsufficientNeighbors {
        model_id: String,
        k: usize,
        available: usize,
    },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query \"{0}\" has no embedding")]
    MissingEmbedding(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("text unavailable for record \"{0}\"; embeddings need query_text")]
    TextUnavailable(String),
    #[error("no predictions to score")]
    NothingToScore,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub prompt_tokens: u64,
    pub actual_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Mean,
    PromptLengthLr,
    EmbeddingKnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborPooling {
    #[default]
    Unweighted,
    /// Weights 1/distance; an exact match (distance 0) takes all the weight.
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnOptions {
    pub k: usize,
    pub metric: DistanceMetric,
    pub pooling: NeighborPooling,
}

impl Default for KnnOptions {
    fn default() -> Self {
        KnnOptions {
            k: DEFAULT_K,
            metric: DistanceMetric::Cosine,
            pooling: NeighborPooling::Unweighted,
        }
    }
}

fn model_rows<'a>(train: &'a [LabeledQuery], model_id: &'a str) -> impl Iterator<Item = &'a LabeledQuery> + 'a {
    train.iter().filter(move |q| q.model_id == model_id)
}

// Summed in sorted order so the result depends only on the multiset.
fn mean_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Training-set mean cost of the query's model.
pub fn predict_mean(train: &[LabeledQuery], query: &LabeledQuery) -> Result<f64, PredictError> {
    let costs: Vec<f64> = model_rows(train, &query.model_id).map(|q| q.actual_cost).collect();
    if costs.is_empty() {
        return Err(PredictError::EmptyTraining(query.model_id.clone()));
    }
    Ok(mean_of(costs))
}

/// `cost = alpha * prompt_tokens + beta`, fitted by ordinary least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    /// All prompt lengths were equal; the fit is the training mean.
    pub fallback_to_mean: bool,
}

impl LinearFit {
    pub fn predict(&self, prompt_tokens: u64) -> f64 {
        self.alpha * prompt_tokens as f64 + self.beta
    }
}

pub fn fit_line(points: &[(f64, f64)]) -> Option<LinearFit> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Some(LinearFit {
            alpha: 0.0,
            beta: y_mean,
            n: points.len(),
            fallback_to_mean: true,
        });
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum();
    let alpha = sxy / sxx;
    Some(LinearFit {
        alpha,
        beta: y_mean - alpha * x_mean,
        n: points.len(),
        fallback_to_mean: false,
    })
}

/// One least-squares line per model in `train`.
pub fn fit_prompt_length_lr(train: &[LabeledQuery]) -> Result<BTreeMap<String, LinearFit>, PredictError> {
    if train.is_empty() {
        return Err(PredictError::EmptyInput);
    }
    let mut points: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for q in train {
        points
            .entry(q.model_id.as_str())
            .or_default()
            .push((q.prompt_tokens as f64, q.actual_cost));
    }
    Ok(points
        .into_iter()
        .filter_map(|(m, pts)| fit_line(&pts).map(|f| (m.to_string(), f)))
        .collect())
}

fn distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
        DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
    }
}

/// Mean cost of the `k` training queries of the same model nearest to
/// `query`. Equal distances are broken by ascending query id.
pub fn predict_knn(train: &[LabeledQuery], query: &LabeledQuery, opts: KnnOptions) -> Result<f64, PredictError> {
    if opts.k == 0 {
        return Err(PredictError::ZeroK);
    }
    let target = query
        .embedding
        .as_deref()
        .ok_or_else(|| PredictError::MissingEmbedding(query.query_id.clone()))?;
    let mut scored: Vec<(f64, &LabeledQuery)> = Vec::new();
    for row in model_rows(train, &query.model_id) {
        let Some(e) = row.embedding.as_deref() else {
            continue;
        };
        if e.len() != target.len() {
            return Err(PredictError::DimensionMismatch {
                expected: e.len(),
                got: target.len(),
            });
        }
        scored.push((distance(opts.metric, e, target), row));
    }
    if scored.len() < opts.k {
        return Err(PredictError::InsufficientNeighbors {
            model_id: query.model_id.clone(),
            k: opts.k,
            available: scored.len(),
        });
    }
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.query_id.cmp(&b.1.query_id))
            .then_with(|| a.1.dataset_id.cmp(&b.1.dataset_id))
    });
    let nearest = &scored[..opts.k];
    Ok(match opts.pooling {
        NeighborPooling::Unweighted => mean_of(nearest.iter().map(|(_, q)| q.actual_cost).collect()),
        NeighborPooling::InverseDistance => {
            let exact: Vec<f64> = nearest.iter().filter(|(d, _)| *d <= 0.0).map(|(_, q)| q.actual_cost).collect();
            if !exact.is_empty() {
                mean_of(exact)
            } else {
                let w: f64 = nearest.iter().map(|(d, _)| 1.0 / d).sum();
                nearest.iter().map(|(d, q)| q.actual_cost / d).sum::<f64>() / w
            }
        }
    })
}

/// Mean absolute error over (predicted, actual) pairs.
pub fn evaluate_mae(predictions: &[(f64, f64)]) -> Result<f64, PredictError> {
    if predictions.is_empty() {
        return Err(PredictError::NothingToScore);
    }
    Ok(predictions.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPrediction {
    pub query_id: String,
    pub dataset_id: String,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub model_id: String,
    pub baseline: Baseline,
    /// Pooled over every test query of the model.
    pub mae: f64,
    pub per_dataset_mae: BTreeMap<String, f64>,
    pub per_query: Vec<QueryPrediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub baseline: Baseline,
    pub split: SplitSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnOptions>,
    pub train_size: usize,
    pub test_size: usize,
    pub models: Vec<PredictionReport>,
    /// Unweighted mean of per-model MAE.
    pub average_mae: f64,
}

/// Fits `baseline` on the training split and scores it on the test split.
pub fn run_experiment(
    queries: &[LabeledQuery],
    spec: &SplitSpec,
    baseline: Baseline,
    knn: KnnOptions,
) -> Result<ExperimentReport, PredictError> {
    let (train, test) = stratified_split(queries, spec)?;
    let fits = match baseline {
        Baseline::PromptLengthLr => Some(fit_prompt_length_lr(&train)?),
        _ => None,
    };
    let mut by_model: BTreeMap<&str, Vec<QueryPrediction>> = BTreeMap::new();
    for q in &test {
        let predicted = match baseline {
            Baseline::Mean => predict_mean(&train, q)?,
            Baseline::PromptLengthLr => fits
                .as_ref()
                .and_then(|f| f.get(&q.model_id))
                .ok_or_else(|| PredictError::EmptyTraining(q.model_id.clone()))?
                .predict(q.prompt_tokens),
            Baseline::EmbeddingKnn => predict_knn(&train, q, knn)?,
        };
        by_model.entry(q.model_id.as_str()).or_default().push(QueryPrediction {
            query_id: q.query_id.clone(),
            dataset_id: q.dataset_id.clone(),
            predicted,
            actual: q.actual_cost,
        });
    }
    let mut models = Vec::new();
    for (model_id, mut per_query) in by_model {
        per_query.sort_by(|a, b| (&a.dataset_id, &a.query_id).cmp(&(&b.dataset_id, &b.query_id)));
        let pairs: Vec<(f64, f64)> = per_query.iter().map(|p| (p.predicted, p.actual)).collect();
        let datasets: BTreeSet<&str> = per_query.iter().map(|p| p.dataset_id.as_str()).collect();
        let mut per_dataset_mae = BTreeMap::new();
        for d in datasets {
            let sub: Vec<(f64, f64)> = per_query
                .iter()
                .filter(|p| p.dataset_id == d)
                .map(|p| (p.predicted, p.actual))
                .collect();
            per_dataset_mae.insert(d.to_string(), evaluate_mae(&sub)?);
        }
        models.push(PredictionReport {
            model_id: model_id.to_string(),
            baseline,
            mae: evaluate_mae(&pairs)?,
            per_dataset_mae,
            fit: fits.as_ref().and_then(|f| f.get(model_id).copied()),
            per_query,
        });
    }
    if models.is_empty() {
        return Err(PredictError::NothingToScore);
    }
    let average_mae = models.iter().map(|m| m.mae).sum::<f64>() / models.len() as f64;
    Ok(ExperimentReport {
        baseline,
        split: spec.clone(),
        knn: (baseline == Baseline::EmbeddingKnn).then_some(knn),
        train_size: train.len(),
        test_size: test.len(),
        models,
        average_mae,
    })
}

/// One labelled query per original-trial record, costed with the catalog.
/// With an embedding provider, every record must carry `query_text`.
pub fn labeled_queries(
    ledger: &Ledger,
    catalog: &PricingCatalog,
    embeddings: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<LabeledQuery>, PredictError> {
    let mut out = Vec::new();
    for r in ledger.records().iter().filter(|r| TrialFilter::OriginalsOnly.admits(r)) {
        let pricing = catalog.get(&r.model_id)?;
        let embedding = match embeddings {
            None => None,
            Some(provider) => {
                let text = r
                    .query_text
                    .as_deref()
                    .ok_or_else(|| PredictError::TextUnavailable(r.record_id.clone()))?;
                Some(provider.get(text)?)
            }
        };
        out.push(LabeledQuery {
            query_id: r.query_id.clone(),
            dataset_id: r.dataset_id.clone(),
            model_id: r.model_id.clone(),
            prompt_tokens: r.prompt_tokens,
            actual_cost: query_cost(pricing, r)?,
            embedding,
        });
    }
    if out.is_empty() {
        return Err(PredictError::EmptyInput);
    }
    Ok(out)
}
