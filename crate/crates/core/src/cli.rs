//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad input (files, flags, unknown ids), 2 an
//! internal invariant did not hold.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::catalog::{load_catalog, PricingCatalog};
use crate::collect::{self, CollectorConfig, DryRunTransport, HttpTransport};
use crate::cost::{cost_breakdown, thinking_share, CostMatrix, CostMode, Scope, ShareBasis};
use crate::fixtures;
use crate::http::RetryPolicy;
use crate::ledger::{append_jsonl, ingest_records, IngestMode, Ledger, TrialFilter};
use crate::predict::embedding::{CachedEmbedder, EmbeddingCache, EmbeddingProvider, HttpEmbedder};
use crate::predict::{
    labeled_queries, run_experiment, Baseline, DistanceMetric, ExperimentReport, KnnOptions, NeighborPooling,
    PredictError, SplitSpec,
};
use crate::ranking::{ablation_report, compare_rankings, pooled_comparison, RankingComparison, RankingError, ALL_TASKS};
use crate::report::{self, Cell, Format, ReportEnvelope, Table, MACHINE_DECIMALS};
use crate::variance::{model_variance_summary, Metric, ModelVarianceSummary, VarianceError};

#[derive(Debug, Parser)]
#[command(name = "cost-audit", version, about = "Audit what reasoning-model API calls actually cost")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Decimal places for numbers in JSON and CSV output.
    #[arg(long, global = true, default_value_t = MACHINE_DECIMALS, value_parser = clap::value_parser!(u32).range(0..=12))]
    pub decimals: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Json,
    Table,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Table => Format::Table,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModeArg {
    Actual,
    Ablated,
}

impl From<CostModeArg> for CostMode {
    fn from(m: CostModeArg) -> Self {
        match m {
            CostModeArg::Actual => CostMode::Actual,
            CostModeArg::Ablated => CostMode::Ablated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArg {
    Mean,
    Lr,
    Knn,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Mean => Baseline::Mean,
            BaselineArg::Lr => Baseline::PromptLengthLr,
            BaselineArg::Knn => Baseline::EmbeddingKnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Tokens,
    Cost,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Tokens => Metric::ThinkingTokens,
            MetricArg::Cost => Metric::Cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceArg {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Inputs {
    /// Pricing catalog CSV.
    #[arg(long, conflicts_with = "paper_fixture")]
    pub catalog: Option<PathBuf>,
    /// Usage ledger (JSON lines, or CSV by extension).
    #[arg(long, conflicts_with = "paper_fixture")]
    pub ledger: Option<PathBuf>,
    /// Use the bundled dataset instead of --catalog/--ledger.
    #[arg(long)]
    pub paper_fixture: bool,
    /// Skip invalid ledger lines instead of rejecting the file.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cost per (model, dataset) and per-model totals.
    Audit {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = CostModeArg::Actual)]
        cost_mode: CostModeArg,
    },
    /// Pairs where the cheaper-listed model costs more.
    Reversals {
        #[command(flatten)]
        inputs: Inputs,
        /// Dataset id, or ALL to pool every dataset.
        #[arg(long, default_value = ALL_TASKS)]
        task: String,
        #[arg(long, value_enum, default_value_t = CostModeArg::Actual)]
        cost_mode: CostModeArg,
    },
    /// Rank agreement with and without thinking-token spend.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = ALL_TASKS)]
        task: String,
    },
    /// Prompt, thinking and generation shares of spend.
    Breakdown {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = ALL_TASKS)]
        task: String,
    },
    /// Within-query variability across repeated trials.
    Variance {
        #[command(flatten)]
        inputs: Inputs,
        /// Defaults to both metrics.
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Per-query cost prediction baselines.
    Predict {
        #[command(flatten)]
        inputs: Inputs,
        /// Defaults to all three.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long, default_value_t = crate::predict::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        test_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistanceArg::Cosine)]
        distance: DistanceArg,
        /// Weight neighbours by inverse distance.
        #[arg(long)]
        weighted: bool,
        /// Embedding cache file.
        #[arg(long, conflicts_with = "paper_fixture")]
        embedding_cache: Option<PathBuf>,
        /// Never call the embedding endpoint; cache misses are errors.
        #[arg(long)]
        offline: bool,
    },
    /// Call a chat-completion endpoint and append usage records.
    Collect {
        /// Collector TOML config.
        #[arg(long)]
        config: PathBuf,
        /// Queries as JSON lines with query_id, dataset_id and text.
        #[arg(long)]
        queries: PathBuf,
        /// Ledger to append to; existing keys are refused.
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        trials: u32,
        /// Read canned responses from --responses instead of the network.
        #[arg(long, requires = "responses")]
        dry_run: bool,
        #[arg(long)]
        responses: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

fn input_error(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        error: e.into(),
    }
}

fn invariant_error(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: e.into(),
    }
}

fn ranking_error(e: RankingError) -> CliError {
    match e {
        RankingError::NonFinite(_) | RankingError::MismatchedSets => invariant_error(e),
        other => input_error(other),
    }
}

fn variance_error(e: VarianceError) -> CliError {
    match e {
        VarianceError::InvalidObservation(_) => invariant_error(e),
        other => input_error(other),
    }
}

/// A command's result before formatting.
pub struct Rendered {
    pub command: &'static str,
    pub snapshot: chrono::NaiveDate,
    pub parameters: Value,
    pub payload: Value,
    pub tables: Vec<Table>,
    /// Exit code to use after printing; collect sets 1 on an aborted run.
    pub exit_code: u8,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(invariant_error)
}

fn load_inputs(inputs: &Inputs, fixture: fn() -> Result<Ledger, crate::ledger::LedgerError>) -> Result<(PricingCatalog, Ledger), CliError> {
    if inputs.paper_fixture {
        let catalog = fixtures::pricing().map_err(invariant_error)?;
        let ledger = fixture().map_err(invariant_error)?;
        return Ok((catalog, ledger));
    }
    let catalog_path = inputs
        .catalog
        .as_ref()
        .ok_or_else(|| input_error(anyhow!("--catalog is required (or use --paper-fixture)")))?;
    let ledger_path = inputs
        .ledger
        .as_ref()
        .ok_or_else(|| input_error(anyhow!("--ledger is required (or use --paper-fixture)")))?;
    let catalog = load_catalog(catalog_path).map_err(input_error)?;
    let mode = if inputs.lenient { IngestMode::Lenient } else { IngestMode::Strict };
    let ledger = ingest_records(ledger_path, mode).map_err(input_error)?;
    for (line, reason) in &ledger.ingest_report().skipped {
        log::warn!("skipped ledger line {line}: {reason}");
    }
    ledger.ensure_priced(&catalog).map_err(input_error)?;
    Ok((catalog, ledger))
}

fn inputs_params(inputs: &Inputs) -> Value {
    json!({
        "catalog": inputs.catalog.as_ref().map(|p| p.display().to_string()),
        "ledger": inputs.ledger.as_ref().map(|p| p.display().to_string()),
        "paper_fixture": inputs.paper_fixture,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn ingest_summary(ledger: &Ledger) -> Value {
    let report = ledger.ingest_report();
    json!({
        "records": ledger.len(),
        "missing_thinking": report.missing_thinking,
        "skipped_lines": report.skipped.iter().map(|(l, r)| json!({"line": l, "reason": r})).collect::<Vec<_>>(),
    })
}

fn cmd_audit(inputs: &Inputs, cost_mode: CostModeArg) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::aggregate_ledger)?;
    let matrix = CostMatrix::build(&catalog, &ledger, cost_mode.into()).map_err(input_error)?;
    let mut models = Vec::new();
    let mut columns = vec!["model".to_string(), "listed_price".to_string()];
    columns.extend(matrix.datasets.iter().cloned());
    columns.push("total".into());
    let mut table = Table::with_columns("cost (USD)", columns);
    for m in &matrix.models {
        let listed = catalog.listed_price(m).map_err(input_error)?;
        let total = matrix.row_total(m).ok_or_else(|| invariant_error(anyhow!("no row for {m}")))?;
        let cells: BTreeMap<&str, f64> = matrix
            .datasets
            .iter()
            .filter_map(|d| matrix.get(m, d).map(|c| (d.as_str(), c)))
            .collect();
        let mut row: Vec<Cell> = vec![m.as_str().into(), Cell::Money(listed.usd_per_mtok())];
        row.extend(matrix.datasets.iter().map(|d| matrix.get(m, d).map_or(Cell::Empty, Cell::Money)));
        row.push(Cell::Money(total));
        table.push(row);
        models.push(json!({
            "model_id": m,
            "listed_price_per_mtok": listed.usd_per_mtok(),
            "costs": cells,
            "total": total,
        }));
    }
    Ok(Rendered {
        command: "audit",
        snapshot: catalog.snapshot_date(),
        parameters: merge(inputs_params(inputs), json!({"cost_mode": cost_mode})),
        payload: json!({
            "cost_mode": CostMode::from(cost_mode),
            "datasets": matrix.datasets,
            "models": models,
            "ingest": ingest_summary(&ledger),
        }),
        tables: vec![table],
        exit_code: 0,
    })
}

fn comparison_row(c: &RankingComparison) -> Vec<Cell> {
    vec![
        c.task_id.as_str().into(),
        Cell::Int(c.reversal_count as u64),
        Cell::Int(c.pair_count as u64),
        Cell::Real(c.reversal_rate),
        Cell::Real(c.kendall_tau),
    ]
}

fn pair_tables(comparisons: &[&RankingComparison], summary_total: Option<Vec<Cell>>) -> Vec<Table> {
    let mut summary = Table::new("reversals per task", &["task", "reversals", "pairs", "rate", "kendall_tau"]);
    let mut pairs = Table::new(
        "reversed pairs",
        &["task", "cheaper_listed", "pricier_listed", "price_ratio", "cost_ratio", "cheaper_cost", "pricier_cost"],
    );
    for c in comparisons {
        summary.push(comparison_row(c));
        for p in &c.reversal_pairs {
            pairs.push(vec![
                c.task_id.as_str().into(),
                p.cheaper_listed_model.as_str().into(),
                p.pricier_listed_model.as_str().into(),
                Cell::Real(p.price_ratio),
                Cell::Real(p.cost_ratio),
                Cell::Money(p.cheaper_listed_cost),
                Cell::Money(p.pricier_listed_cost),
            ]);
        }
    }
    if let Some(row) = summary_total {
        summary.push(row);
    }
    vec![summary, pairs]
}

fn cmd_reversals(inputs: &Inputs, task: &str, cost_mode: CostModeArg) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::aggregate_ledger)?;
    let mode = cost_mode.into();
    let (payload, tables) = if task == ALL_TASKS {
        let pooled = pooled_comparison(&catalog, &ledger, mode).map_err(ranking_error)?;
        let expected: usize = pooled.per_task.iter().map(|c| c.reversal_pairs.len()).sum();
        if expected != pooled.reversal_count {
            return Err(invariant_error(anyhow!("pooled reversal count disagrees with pair lists")));
        }
        let total = vec![
            ALL_TASKS.into(),
            Cell::Int(pooled.reversal_count as u64),
            Cell::Int(pooled.pair_count as u64),
            Cell::Real(pooled.reversal_rate),
            Cell::Empty,
        ];
        let refs: Vec<&RankingComparison> = pooled.per_task.iter().collect();
        let tables = pair_tables(&refs, Some(total));
        (to_value(&pooled)?, tables)
    } else {
        let c = compare_rankings(&catalog, &ledger, task, mode).map_err(ranking_error)?;
        let tables = pair_tables(&[&c], None);
        (to_value(&c)?, tables)
    };
    Ok(Rendered {
        command: "reversals",
        snapshot: catalog.snapshot_date(),
        parameters: merge(inputs_params(inputs), json!({"task": task, "cost_mode": cost_mode})),
        payload,
        tables,
        exit_code: 0,
    })
}

fn cmd_ablate(inputs: &Inputs, task: &str) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::aggregate_ledger)?;
    let report = ablation_report(&catalog, &ledger).map_err(ranking_error)?;
    let mut table = Table::new(
        "thinking-token ablation",
        &["task", "tau_actual", "tau_ablated", "reversals_actual", "reversals_ablated"],
    );
    let payload = if task == ALL_TASKS {
        for r in &report.rows {
            table.push(vec![
                r.task_id.as_str().into(),
                Cell::Real(r.tau_actual),
                Cell::Real(r.tau_ablated),
                Cell::Int(r.reversals_actual as u64),
                Cell::Int(r.reversals_ablated as u64),
            ]);
        }
        let a = &report.average;
        table.push(vec![
            "Average".into(),
            Cell::Real(a.tau_actual),
            Cell::Real(a.tau_ablated),
            Cell::Real(a.reversals_actual),
            Cell::Real(a.reversals_ablated),
        ]);
        to_value(&report)?
    } else {
        let row = report
            .rows
            .iter()
            .find(|r| r.task_id == task)
            .ok_or_else(|| input_error(RankingError::UnknownTask(task.to_string())))?;
        table.push(vec![
            row.task_id.as_str().into(),
            Cell::Real(row.tau_actual),
            Cell::Real(row.tau_ablated),
            Cell::Int(row.reversals_actual as u64),
            Cell::Int(row.reversals_ablated as u64),
        ]);
        json!({ "rows": [to_value(row)?] })
    };
    Ok(Rendered {
        command: "ablate",
        snapshot: catalog.snapshot_date(),
        parameters: merge(inputs_params(inputs), json!({"task": task})),
        payload,
        tables: vec![table],
        exit_code: 0,
    })
}

fn cmd_breakdown(inputs: &Inputs, task: &str) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::aggregate_ledger)?;
    if task != ALL_TASKS && !ledger.dataset_ids().contains(task) {
        return Err(input_error(RankingError::UnknownTask(task.to_string())));
    }
    let scope = if task == ALL_TASKS { Scope::Workload } else { Scope::Dataset };
    let mut table = Table::new(
        "cost breakdown (USD)",
        &[
            "model",
            "prompt_cost",
            "thinking_cost",
            "generation_cost",
            "total_cost",
            "thinking_tokens",
            "thinking_share_tokens",
            "thinking_share_cost",
        ],
    );
    let mut rows = Vec::new();
    for m in ledger.model_ids() {
        let pricing = catalog.get(m).map_err(input_error)?;
        let records: Vec<_> = ledger
            .for_model(m, TrialFilter::OriginalsOnly)
            .filter(|r| task == ALL_TASKS || r.dataset_id == task)
            .collect();
        if records.is_empty() {
            continue;
        }
        let b = cost_breakdown(pricing, records, scope).map_err(invariant_error)?;
        let total = b.prompt_cost + b.thinking_cost + b.generation_cost;
        if (total - b.total_cost).abs() > 1e-9 * total.abs().max(1.0) {
            return Err(invariant_error(anyhow!("breakdown of {m} does not sum to its total")));
        }
        let share_tokens = thinking_share(&b, ShareBasis::Tokens).ok();
        let share_cost = thinking_share(&b, ShareBasis::Cost).ok();
        table.push(vec![
            m.into(),
            Cell::Money(b.prompt_cost),
            Cell::Money(b.thinking_cost),
            Cell::Money(b.generation_cost),
            Cell::Money(b.total_cost),
            Cell::Int(b.thinking_tokens),
            share_tokens.map_or(Cell::Empty, Cell::Real),
            share_cost.map_or(Cell::Empty, Cell::Real),
        ]);
        let mut v = to_value(&b)?;
        if let Value::Object(map) = &mut v {
            map.insert("thinking_share_tokens".into(), json!(share_tokens));
            map.insert("thinking_share_cost".into(), json!(share_cost));
        }
        rows.push(v);
    }
    Ok(Rendered {
        command: "breakdown",
        snapshot: catalog.snapshot_date(),
        parameters: merge(inputs_params(inputs), json!({"task": task})),
        payload: json!({ "task": task, "models": rows }),
        tables: vec![table],
        exit_code: 0,
    })
}

fn cmd_variance(inputs: &Inputs, metric: Option<MetricArg>, model: Option<&str>) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::repeated_trials)?;
    let metrics: Vec<Metric> = match metric {
        Some(m) => vec![m.into()],
        None => vec![Metric::ThinkingTokens, Metric::Cost],
    };
    let models: Vec<&str> = match model {
        Some(m) => {
            if !ledger.model_ids().contains(m) {
                return Err(input_error(anyhow!("model \"{m}\" is not in the ledger")));
            }
            vec![m]
        }
        None => ledger.model_ids().into_iter().collect(),
    };
    let mut summaries: Vec<ModelVarianceSummary> = Vec::new();
    for m in models {
        let pricing = catalog.get(m).map_err(input_error)?;
        for &metric in &metrics {
            match model_variance_summary(&ledger, pricing, metric) {
                Ok(s) => summaries.push(s),
                Err(VarianceError::NoRepeatedTrials(_)) if model.is_none() => {}
                Err(e) => return Err(variance_error(e)),
            }
        }
    }
    if summaries.is_empty() {
        return Err(input_error(anyhow!("no query in the ledger has repeated trials")));
    }
    let mut table = Table::new(
        "within-query variability",
        &["model", "metric", "queries", "mean_cv", "mean_max_min", "max_ratio"],
    );
    for s in &summaries {
        table.push(vec![
            s.model_id.as_str().into(),
            match s.metric {
                Metric::ThinkingTokens => "thinking_tokens".into(),
                Metric::Cost => "cost".into(),
            },
            Cell::Int(s.group_count as u64),
            Cell::Real(s.mean_cv),
            Cell::Real(s.mean_max_min_ratio),
            Cell::Real(s.max_ratio),
        ]);
    }
    Ok(Rendered {
        command: "variance",
        snapshot: catalog.snapshot_date(),
        parameters: merge(inputs_params(inputs), json!({"metric": metric, "model": model})),
        payload: json!({ "summaries": to_value(&summaries)? }),
        tables: vec![table],
        exit_code: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    inputs: &Inputs,
    baseline: Option<BaselineArg>,
    k: usize,
    test_ratio: f64,
    seed: u64,
    distance: DistanceArg,
    weighted: bool,
    embedding_cache: Option<&PathBuf>,
    offline: bool,
) -> Result<Rendered, CliError> {
    let (catalog, ledger) = load_inputs(inputs, fixtures::predict_demo)?;
    let spec = SplitSpec::new(test_ratio, seed).map_err(input_error)?;
    let knn = KnnOptions {
        k,
        metric: match distance {
            DistanceArg::Cosine => DistanceMetric::Cosine,
            DistanceArg::Euclidean => DistanceMetric::Euclidean,
        },
        pooling: if weighted { NeighborPooling::InverseDistance } else { NeighborPooling::Unweighted },
    };
    let baselines: Vec<Baseline> = match baseline {
        Some(b) => vec![b.into()],
        None => vec![Baseline::Mean, Baseline::PromptLengthLr, Baseline::EmbeddingKnn],
    };
    let needs_embeddings = baselines.contains(&Baseline::EmbeddingKnn);

    let remote;
    let provider: Option<CachedEmbedder> = if !needs_embeddings {
        None
    } else if inputs.paper_fixture {
        Some(CachedEmbedder::offline(fixtures::predict_demo_embeddings().map_err(invariant_error)?))
    } else {
        let path = embedding_cache
            .ok_or_else(|| input_error(anyhow!("--embedding-cache is required for the knn baseline")))?;
        let cache = EmbeddingCache::open(path).map_err(input_error)?;
        if offline {
            Some(CachedEmbedder::offline(cache))
        } else {
            remote = HttpEmbedder::from_env(RetryPolicy::default()).map_err(input_error)?;
            Some(CachedEmbedder::online(cache, &remote))
        }
    };
    let queries = labeled_queries(&ledger, &catalog, provider.as_ref().map(|p| p as &dyn EmbeddingProvider))
        .map_err(input_error)?;
    let mut experiments: Vec<ExperimentReport> = Vec::new();
    for b in &baselines {
        let report = run_experiment(&queries, &spec, *b, knn).map_err(|e| match e {
            PredictError::NothingToScore => invariant_error(e),
            other => input_error(other),
        })?;
        experiments.push(report);
    }

    let mut overview = Table::new("prediction MAE (USD)", &["model", "baseline", "test_queries", "mae"]);
    let mut per_dataset = Table::new("MAE per dataset (USD)", &["model", "baseline", "dataset", "mae"]);
    for e in &experiments {
        let name = baseline_name(e.baseline);
        for m in &e.models {
            overview.push(vec![
                m.model_id.as_str().into(),
                name.into(),
                Cell::Int(m.per_query.len() as u64),
                Cell::Real(m.mae),
            ]);
            for (d, mae) in &m.per_dataset_mae {
                per_dataset.push(vec![m.model_id.as_str().into(), name.into(), d.as_str().into(), Cell::Real(*mae)]);
            }
        }
        overview.push(vec!["Average".into(), name.into(), Cell::Int(e.test_size as u64), Cell::Real(e.average_mae)]);
    }
    let mut payload = json!({ "experiments": to_value(&experiments)? });
    if inputs.paper_fixture {
        payload["reference_mae"] = reference_mae()?;
    }
    Ok(Rendered {
        command: "predict",
        snapshot: catalog.snapshot_date(),
        parameters: merge(
            inputs_params(inputs),
            json!({
                "baseline": baseline,
                "k": k,
                "test_ratio": test_ratio,
                "seed": seed,
                "distance": distance,
                "weighted": weighted,
                "offline": offline || inputs.paper_fixture,
                "embedding_cache": embedding_cache.map(|p| p.display().to_string()),
            }),
        ),
        payload,
        tables: vec![overview, per_dataset],
        exit_code: 0,
    })
}

fn baseline_name(b: Baseline) -> &'static str {
    match b {
        Baseline::Mean => "mean",
        Baseline::PromptLengthLr => "prompt_length_lr",
        Baseline::EmbeddingKnn => "embedding_knn",
    }
}

/// Published per-model MAE, shipped for side-by-side reading only.
fn reference_mae() -> Result<Value, CliError> {
    let mut rdr = csv::Reader::from_reader(fixtures::REFERENCE_MAE_CSV.as_bytes());
    let mut out = serde_json::Map::new();
    for row in rdr.deserialize::<BTreeMap<String, String>>() {
        let mut row = row.map_err(invariant_error)?;
        let model = row.remove("model_id").unwrap_or_default();
        let values: BTreeMap<String, f64> = row
            .into_iter()
            .map(|(k, v)| v.parse::<f64>().map(|x| (k, x)))
            .collect::<Result<_, _>>()
            .map_err(invariant_error)?;
        out.insert(model, json!(values));
    }
    Ok(Value::Object(out))
}

#[allow(clippy::too_many_arguments)]
fn cmd_collect(
    config_path: &PathBuf,
    queries_path: &PathBuf,
    ledger_path: &PathBuf,
    catalog_path: &PathBuf,
    trials: u32,
    dry_run: bool,
    responses: Option<&PathBuf>,
) -> Result<Rendered, CliError> {
    let config = CollectorConfig::load(config_path).map_err(input_error)?;
    let catalog = load_catalog(catalog_path).map_err(input_error)?;
    let pricing = catalog.get(&config.model_id).map_err(input_error)?;
    let queries = collect::load_queries(queries_path).map_err(input_error)?;
    let existing = if ledger_path.exists() {
        Some(ingest_records(ledger_path, IngestMode::Strict).map_err(input_error)?)
    } else {
        None
    };
    let http;
    let dry;
    let transport: &dyn collect::ChatTransport = if dry_run {
        let dir = responses.ok_or_else(|| input_error(anyhow!("--dry-run needs --responses")))?;
        dry = DryRunTransport::new(dir);
        &dry
    } else {
        http = HttpTransport::new(&config).map_err(input_error)?;
        &http
    };
    let outcome = collect::collect(&config, transport, &queries, trials, existing.as_ref(), Some(pricing), |r| {
        append_jsonl(ledger_path, std::slice::from_ref(r))
    })
    .map_err(input_error)?;
    if outcome.records.len() + outcome.failures.len() != outcome.requested {
        return Err(invariant_error(anyhow!(
            "{} records + {} failures != {} requested",
            outcome.records.len(),
            outcome.failures.len(),
            outcome.requested
        )));
    }
    let mut table = Table::new("failures", &["query_id", "dataset_id", "trial", "kind", "attempts", "message"]);
    for f in &outcome.failures {
        table.push(vec![
            f.query_id.as_str().into(),
            f.dataset_id.as_str().into(),
            Cell::Int(f.trial_index as u64),
            to_value(&f.kind)?.as_str().unwrap_or_default().into(),
            Cell::Int(f.attempts as u64),
            f.message.as_str().into(),
        ]);
    }
    let mut summary = Table::new("collection", &["model", "requested", "collected", "failed", "spend_usd"]);
    summary.push(vec![
        outcome.model_id.as_str().into(),
        Cell::Int(outcome.requested as u64),
        Cell::Int(outcome.records.len() as u64),
        Cell::Int(outcome.failures.len() as u64),
        outcome.spend_usd.map_or(Cell::Empty, Cell::Money),
    ]);
    let exit_code = if let Some(reason) = &outcome.aborted {
        log::error!("collection aborted: {reason}");
        1
    } else {
        0
    };
    Ok(Rendered {
        command: "collect",
        snapshot: catalog.snapshot_date(),
        parameters: json!({
            "config": config_path.display().to_string(),
            "queries": queries_path.display().to_string(),
            "ledger": ledger_path.display().to_string(),
            "catalog": catalog_path.display().to_string(),
            "trials": trials,
            "dry_run": dry_run,
        }),
        payload: json!({
            "model_id": outcome.model_id,
            "requested": outcome.requested,
            "collected": outcome.records.len(),
            "failures": to_value(&outcome.failures)?,
            "warnings": outcome.warnings,
            "spend_usd": outcome.spend_usd,
            "aborted": outcome.aborted,
        }),
        tables: vec![summary, table],
        exit_code,
    })
}

pub fn execute(cli: &Cli) -> Result<Rendered, CliError> {
    match &cli.command {
        Command::Audit { inputs, cost_mode } => cmd_audit(inputs, *cost_mode),
        Command::Reversals { inputs, task, cost_mode } => cmd_reversals(inputs, task, *cost_mode),
        Command::Ablate { inputs, task } => cmd_ablate(inputs, task),
        Command::Breakdown { inputs, task } => cmd_breakdown(inputs, task),
        Command::Variance { inputs, metric, model } => cmd_variance(inputs, *metric, model.as_deref()),
        Command::Predict {
            inputs,
            baseline,
            k,
            test_ratio,
            seed,
            distance,
            weighted,
            embedding_cache,
            offline,
        } => cmd_predict(
            inputs,
            *baseline,
            *k,
            *test_ratio,
            *seed,
            *distance,
            *weighted,
            embedding_cache.as_ref(),
            *offline,
        ),
        Command::Collect {
            config,
            queries,
            ledger,
            catalog,
            trials,
            dry_run,
            responses,
        } => cmd_collect(config, queries, ledger, catalog, *trials, *dry_run, responses.as_ref()),
    }
}

pub fn render(cli: &Cli, r: &Rendered) -> Result<String, CliError> {
    let mut parameters = r.parameters.clone();
    if let Value::Object(map) = &mut parameters {
        map.insert("format".into(), to_value(&cli.format)?);
    }
    let envelope = ReportEnvelope {
        tool_version: report::TOOL_VERSION.to_string(),
        catalog_snapshot_date: r.snapshot,
        command: r.command.to_string(),
        parameters,
        payload: r.payload.clone(),
        generated_at: report::generated_at(),
    };
    match Format::from(cli.format) {
        Format::Json => report::render_json(&envelope, cli.decimals).map_err(invariant_error),
        Format::Table => Ok(report::render_table(&envelope, &r.tables)),
        Format::Csv => report::render_csv(&envelope, &r.tables, cli.decimals).map_err(invariant_error),
    }
}

/// Parses `args`, runs the command and writes the report to `out`.
/// Diagnostics go to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let result = execute(&cli).and_then(|r| render(&cli, &r).map(|text| (text, r.exit_code)));
    match result {
        Ok((text, code)) => {
            if let Err(e) = out.write_all(text.as_bytes()).context("writing report") {
                let _ = writeln!(err, "error: {e:#}");
                return 1;
            }
            code
        }
        Err(CliError { code, error }) => {
            let _ = writeln!(err, "error: {error:#}");
            code
        }
    }
}
