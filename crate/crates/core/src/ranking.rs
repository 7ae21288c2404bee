//! Listed-price vs actual-cost rankings.
//!
//! A pricing reversal is an unordered model pair where the model with the
//! strictly lower listed price has the strictly higher cost. Agreement between
//! the two orders is summarised with Kendall's tau-a (fixed `C(n,2)`
//! denominator, tied pairs count as neither concordant nor discordant).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{CatalogError, PricingCatalog, UnitPrice};
use crate::cost::{dataset_cost_in_mode, CostError, CostMode};
use crate::ledger::{Ledger, TrialFilter};

/// Task id that pools every per-task comparison.
pub const ALL_TASKS: &str = "ALL";

#[derive(Debug, Error, PartialEq)]
pub enum RankingError {
    #[error("nothing to rank")]
    Empty,
    #[error("non-finite value for \"{0}\"")]
    NonFinite(String),
    #[error("rankings are not permutations of the same set")]
    MismatchedSets,
    #[error("ranking needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("task \"{task_id}\" has {count} model(s); at least 2 are needed")]
    TooFewModels { task_id: String, count: usize },
    #[error("unknown task \"{0}\"")]
    UnknownTask(String),
    #[error("unknown model_id \"{0}\"")]
    UnknownModel(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl From<CatalogError> for RankingError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownModel(m) => RankingError::UnknownModel(m),
            other => RankingError::UnknownModel(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalPair {
    pub cheaper_listed_model: String,
    pub pricier_listed_model: String,
    pub cheaper_listed_price: f64,
    pub pricier_listed_price: f64,
    /// Cost incurred by the cheaper-listed model.
    pub cheaper_listed_cost: f64,
    pub pricier_listed_cost: f64,
    /// Pricier listed price over cheaper listed price; > 1.
    pub price_ratio: f64,
    /// Cheaper-listed model's cost over the pricier-listed model's cost; > 1.
    pub cost_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingComparison {
    pub task_id: String,
    pub cost_mode: CostMode,
    /// Ascending listed price.
    pub price_ranking: Vec<String>,
    /// Ascending cost.
    pub cost_ranking: Vec<String>,
    pub costs: BTreeMap<String, f64>,
    pub reversal_pairs: Vec<ReversalPair>,
    pub reversal_count: usize,
    pub pair_count: usize,
    pub reversal_rate: f64,
    pub kendall_tau: f64,
}

/// Per-task comparisons counted together as independent pair judgements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledComparison {
    pub cost_mode: CostMode,
    pub per_task: Vec<RankingComparison>,
    pub reversal_count: usize,
    pub pair_count: usize,
    pub reversal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub task_id: String,
    pub tau_actual: f64,
    pub tau_ablated: f64,
    pub reversals_actual: usize,
    pub reversals_ablated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationAverages {
    pub tau_actual: f64,
    pub tau_ablated: f64,
    pub reversals_actual: f64,
    pub reversals_ablated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Unweighted means over tasks.
    pub average: AblationAverages,
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Model ids in ascending value order; ties fall back to lexicographic id.
pub fn rank_models<'a, I>(values: I) -> Result<Vec<String>, RankingError>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut v: Vec<(&str, f64)> = values.into_iter().collect();
    if v.is_empty() {
        return Err(RankingError::Empty);
    }
    if let Some((m, _)) = v.iter().find(|(_, x)| !x.is_finite()) {
        return Err(RankingError::NonFinite(m.to_string()));
    }
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(v.into_iter().map(|(m, _)| m.to_string()).collect())
}

/// Listed-price order of the given models.
pub fn price_ranking<'a>(
    catalog: &PricingCatalog,
    models: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<String>, RankingError> {
    let mut v: Vec<(&str, UnitPrice)> = models
        .into_iter()
        .map(|m| Ok((m, catalog.listed_price(m)?)))
        .collect::<Result<_, RankingError>>()?;
    if v.is_empty() {
        return Err(RankingError::Empty);
    }
    v.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(v.into_iter().map(|(m, _)| m.to_string()).collect())
}

/// Every pair whose listed-price order and cost order strictly disagree,
/// sorted by (cheaper-listed, pricier-listed) model id.
pub fn find_reversals(
    catalog: &PricingCatalog,
    costs: &BTreeMap<String, f64>,
) -> Result<Vec<ReversalPair>, RankingError> {
    let mut priced = Vec::with_capacity(costs.len());
    for (m, &c) in costs {
        if !c.is_finite() {
            return Err(RankingError::NonFinite(m.clone()));
        }
        priced.push((m.as_str(), catalog.listed_price(m)?, c));
    }
    let mut out = Vec::new();
    for (i, a) in priced.iter().enumerate() {
        for b in &priced[i + 1..] {
            let (cheap, dear) = match a.1.cmp(&b.1) {
                std::cmp::Ordering::Less => (a, b),
                std::cmp::Ordering::Greater => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            if cheap.2 > dear.2 {
                let cheap_price = cheap.1.usd_per_mtok();
                let dear_price = dear.1.usd_per_mtok();
                out.push(ReversalPair {
                    cheaper_listed_model: cheap.0.to_string(),
                    pricier_listed_model: dear.0.to_string(),
                    cheaper_listed_price: cheap_price,
                    pricier_listed_price: dear_price,
                    cheaper_listed_cost: cheap.2,
                    pricier_listed_cost: dear.2,
                    price_ratio: dear_price / cheap_price,
                    cost_ratio: cheap.2 / dear.2,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        (&x.cheaper_listed_model, &x.pricier_listed_model)
            .cmp(&(&y.cheaper_listed_model, &y.pricier_listed_model))
    });
    Ok(out)
}

/// (price_ratio, cost_ratio) of a reversed pair.
pub fn reversal_severity(pair: &ReversalPair) -> (f64, f64) {
    (pair.price_ratio, pair.cost_ratio)
}

/// Kendall's tau between two rankings of the same items.
pub fn kendall_tau<T: Eq + Hash>(ranking_a: &[T], ranking_b: &[T]) -> Result<f64, RankingError> {
    let n = ranking_a.len();
    if n != ranking_b.len() {
        return Err(RankingError::MismatchedSets);
    }
    if n < 2 {
        return Err(RankingError::TooShort(n));
    }
    let pos_b: HashMap<&T, usize> = ranking_b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    let distinct_a: HashSet<&T> = ranking_a.iter().collect();
    if pos_b.len() != n || distinct_a.len() != n {
        return Err(RankingError::MismatchedSets);
    }
    let mut in_b = Vec::with_capacity(n);
    for x in ranking_a {
        in_b.push(*pos_b.get(x).ok_or(RankingError::MismatchedSets)?);
    }
    let mut discordant = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if in_b[i] > in_b[j] {
                discordant += 1;
            }
        }
    }
    let total = pairs(n);
    Ok((total as f64 - 2.0 * discordant as f64) / total as f64)
}

/// Tau-a over paired observations; tied pairs in either coordinate count as
/// neither concordant nor discordant.
pub fn kendall_tau_a(x: &[f64], y: &[f64]) -> Result<f64, RankingError> {
    let n = x.len();
    if n != y.len() {
        return Err(RankingError::MismatchedSets);
    }
    if n < 2 {
        return Err(RankingError::TooShort(n));
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            if x[i] == x[j] || y[i] == y[j] {
                continue;
            }
            if (x[i] < x[j]) == (y[i] < y[j]) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    Ok((concordant - discordant) as f64 / pairs(n) as f64)
}

/// Builds the comparison for an explicit model → cost map.
pub fn compare_costs(
    catalog: &PricingCatalog,
    task_id: &str,
    cost_mode: CostMode,
    costs: BTreeMap<String, f64>,
) -> Result<RankingComparison, RankingError> {
    if costs.len() < 2 {
        return Err(RankingError::TooFewModels {
            task_id: task_id.to_string(),
            count: costs.len(),
        });
    }
    let price_ranking = price_ranking(catalog, costs.keys().map(String::as_str))?;
    let cost_ranking = rank_models(costs.iter().map(|(m, c)| (m.as_str(), *c)))?;
    let reversal_pairs = find_reversals(catalog, &costs)?;
    let listed: Vec<f64> = costs
        .keys()
        .map(|m| catalog.listed_price(m).map(|p| p.micros() as f64))
        .collect::<Result<_, _>>()?;
    let values: Vec<f64> = costs.values().copied().collect();
    let kendall_tau = kendall_tau_a(&listed, &values)?;
    let pair_count = pairs(costs.len());
    let reversal_count = reversal_pairs.len();
    Ok(RankingComparison {
        task_id: task_id.to_string(),
        cost_mode,
        price_ranking,
        cost_ranking,
        costs,
        reversal_pairs,
        reversal_count,
        pair_count,
        reversal_rate: reversal_count as f64 / pair_count as f64,
        kendall_tau,
    })
}

/// Dataset costs of every model that ran `task_id`.
pub fn task_costs(
    catalog: &PricingCatalog,
    ledger: &Ledger,
    task_id: &str,
    cost_mode: CostMode,
) -> Result<BTreeMap<String, f64>, RankingError> {
    let models = ledger.models_in_dataset(task_id, TrialFilter::OriginalsOnly);
    if models.is_empty() {
        return Err(RankingError::UnknownTask(task_id.to_string()));
    }
    models
        .into_iter()
        .map(|m| {
            let pricing = catalog.get(m)?;
            Ok((m.to_string(), dataset_cost_in_mode(pricing, ledger, task_id, cost_mode)?))
        })
        .collect()
}

pub fn compare_rankings(
    catalog: &PricingCatalog,
    ledger: &Ledger,
    task_id: &str,
    cost_mode: CostMode,
) -> Result<RankingComparison, RankingError> {
    let costs = task_costs(catalog, ledger, task_id, cost_mode)?;
    compare_costs(catalog, task_id, cost_mode, costs)
}

/// One comparison per task (sorted by task id), with pair counts pooled.
pub fn pooled_comparison(
    catalog: &PricingCatalog,
    ledger: &Ledger,
    cost_mode: CostMode,
) -> Result<PooledComparison, RankingError> {
    let per_task = ledger
        .dataset_ids()
        .into_iter()
        .map(|d| compare_rankings(catalog, ledger, d, cost_mode))
        .collect::<Result<Vec<_>, _>>()?;
    if per_task.is_empty() {
        return Err(RankingError::Empty);
    }
    let reversal_count = per_task.iter().map(|c| c.reversal_count).sum();
    let pair_count = per_task.iter().map(|c| c.pair_count).sum::<usize>();
    Ok(PooledComparison {
        cost_mode,
        per_task,
        reversal_count,
        pair_count,
        reversal_rate: reversal_count as f64 / pair_count as f64,
    })
}

/// Per-task tau and reversal counts with and without thinking-token spend.
pub fn ablation_report(catalog: &PricingCatalog, ledger: &Ledger) -> Result<AblationReport, RankingError> {
    let actual = pooled_comparison(catalog, ledger, CostMode::Actual)?;
    let ablated = pooled_comparison(catalog, ledger, CostMode::Ablated)?;
    let rows: Vec<AblationRow> = actual
        .per_task
        .iter()
        .zip(&ablated.per_task)
        .map(|(a, b)| AblationRow {
            task_id: a.task_id.clone(),
            tau_actual: a.kendall_tau,
            tau_ablated: b.kendall_tau,
            reversals_actual: a.reversal_count,
            reversals_ablated: b.reversal_count,
        })
        .collect();
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&AblationRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let average = AblationAverages {
        tau_actual: mean(&|r| r.tau_actual),
        tau_ablated: mean(&|r| r.tau_ablated),
        reversals_actual: mean(&|r| r.reversals_actual as f64),
        reversals_ablated: mean(&|r| r.reversals_ablated as f64),
    };
    Ok(AblationReport { rows, average })
}
