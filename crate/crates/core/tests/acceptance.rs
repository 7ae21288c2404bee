//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use cost_audit::catalog::{ModelPricing, PricingCatalog, UnitPrice};
use cost_audit::cost::{ablated_cost, cost_breakdown, query_cost, CostMatrix, CostMode, Scope};
use cost_audit::fixtures;
use cost_audit::ledger::{aggregate_usage, Ledger, TrialFilter, UsageRecord};
use cost_audit::predict::{
    fit_prompt_length_lr, predict_knn, predict_mean, stratified_split, KnnOptions, LabeledQuery, SplitSpec,
};
use cost_audit::ranking::{ablation_report, compare_costs, compare_rankings, pooled_comparison};
use cost_audit::variance::stats_of;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
}

fn within(label: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    if (got - want).abs() <= tol {
        Ok(format!("{label} {got:.6} (want {want} ± {tol})"))
    } else {
        Err(format!("{label} {got:.6} outside {want} ± {tol}"))
    }
}

fn all(parts: Vec<Result<String, String>>) -> Result<String, String> {
    let mut ok = Vec::new();
    for p in parts {
        ok.push(p?);
    }
    Ok(ok.join("; "))
}

fn paper() -> (PricingCatalog, Ledger) {
    (fixtures::pricing().unwrap(), fixtures::aggregate_ledger().unwrap())
}

fn c1() -> Result<String, String> {
    let (cat, led) = paper();
    let p = pooled_comparison(&cat, &led, CostMode::Actual).map_err(|e| e.to_string())?;
    if p.reversal_count != 55 || p.pair_count != 252 || p.per_task.len() != 9 {
        return Err(format!("{}/{} over {} tasks", p.reversal_count, p.pair_count, p.per_task.len()));
    }
    within("55/252 rate", p.reversal_rate, 0.2183, 1e-4)
}

fn c2() -> Result<String, String> {
    let (cat, led) = paper();
    let mut parts = Vec::new();
    for (task, count, rate) in [("ArenaHard", 3, 0.107), ("MMLUPro", 9, 0.321)] {
        let c = compare_rankings(&cat, &led, task, CostMode::Actual).map_err(|e| e.to_string())?;
        if c.reversal_count != count {
            return Err(format!("{task}: {} reversals, want {count}", c.reversal_count));
        }
        parts.push(within(&format!("{task} {count} reversals, rate"), c.reversal_rate, rate, 5e-4));
    }
    all(parts)
}

fn c3() -> Result<String, String> {
    let (cat, led) = paper();
    let c = compare_rankings(&cat, &led, "MMLUPro", CostMode::Actual).map_err(|e| e.to_string())?;
    let pair = |pricier: &str| {
        c.reversal_pairs
            .iter()
            .find(|p| p.cheaper_listed_model == "Gemini 3 Flash" && p.pricier_listed_model == pricier)
            .ok_or_else(|| format!("no Flash/{pricier} reversal"))
    };
    let haiku = pair("Claude Haiku 4.5")?;
    let gpt = pair("GPT-5.2")?;
    all(vec![
        within("Flash/Haiku cost ratio", haiku.cost_ratio, 27.99, 0.05),
        within("Flash/Haiku price ratio", haiku.price_ratio, 1.714, 0.001),
        within("Flash/GPT-5.2 cost ratio", gpt.cost_ratio, 6.24, 0.02),
    ])
}

fn c4() -> Result<String, String> {
    let (cat, led) = paper();
    let m = CostMatrix::build(&cat, &led, CostMode::Actual).map_err(|e| e.to_string())?;
    let flash = m.row_total("Gemini 3 Flash").ok_or("missing Flash")?;
    let gpt = m.row_total("GPT-5.2").ok_or("missing GPT-5.2")?;
    all(vec![
        within("Flash total", flash, 642.97, 0.01),
        within("GPT-5.2 total", gpt, 526.60, 0.01),
        within("ratio", flash / gpt, 1.221, 0.002),
    ])
}

fn c5() -> Result<String, String> {
    let (cat, led) = paper();
    let actual = compare_rankings(&cat, &led, "MMLUPro", CostMode::Actual).map_err(|e| e.to_string())?;
    let ablated = compare_rankings(&cat, &led, "MMLUPro", CostMode::Ablated).map_err(|e| e.to_string())?;
    if (actual.reversal_count, ablated.reversal_count) != (9, 2) {
        return Err(format!("MMLUPro reversals {} -> {}", actual.reversal_count, ablated.reversal_count));
    }
    // published cell total minus published thinking tokens at the output rate
    let expected_cells = [("Gemini 3 Flash", 219.47 - 71_489_000.0 * 3.0 / 1e6), ("Kimi K2.5", 44.40 - 13_538_000.0 * 3.0 / 1e6)];
    let mut parts = vec![
        Ok("MMLUPro reversals 9 -> 2".to_string()),
        within("MMLUPro tau actual", actual.kendall_tau, 0.357, 1e-3),
        within("MMLUPro tau ablated", ablated.kendall_tau, 0.857, 1e-3),
    ];
    for (m, want) in expected_cells {
        parts.push(within(&format!("{m} ablated MMLUPro"), ablated.costs[m], want, 0.02));
    }
    let r = ablation_report(&cat, &led).map_err(|e| e.to_string())?;
    parts.push(within("avg tau actual", r.average.tau_actual, 0.563, 0.01));
    parts.push(within("avg tau ablated", r.average.tau_ablated, 0.873, 0.01));
    parts.push(within("avg reversals actual", r.average.reversals_actual, 6.1, 0.05));
    parts.push(within("avg reversals ablated", r.average.reversals_ablated, 1.8, 0.05));
    all(parts)
}

fn c6() -> Result<String, String> {
    let (_, led) = paper();
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for a in aggregate_usage(&led, TrialFilter::OriginalsOnly) {
        *totals.entry(a.model_id).or_default() += a.total_thinking_tokens;
    }
    let flash = totals["Gemini 3 Flash"] as f64 / 1000.0;
    let opus = totals["Claude Opus 4.6"] as f64 / 1000.0;
    all(vec![
        within("Flash thinking (k)", flash, 208_681.0, 1000.0),
        within("Opus thinking (k)", opus, 24_197.0, 1000.0),
        within("ratio", flash / opus, 8.62, 0.02),
    ])
}

fn c7() -> Result<String, String> {
    let cat = fixtures::pricing().unwrap();
    let models: Vec<String> = cat.model_ids().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen_d = std::collections::BTreeSet::new();
    for trial in 0..1000 {
        let mut costs = BTreeMap::new();
        while costs.len() < models.len() {
            let c: f64 = rng.gen_range(0.01..1000.0);
            if costs.values().all(|&v: &f64| v != c) {
                costs.insert(models[costs.len()].clone(), c);
            }
        }
        let r = compare_costs(&cat, "random", CostMode::Actual, costs).map_err(|e| e.to_string())?;
        let d = r.reversal_count;
        // exact rational (28 - 2d)/28, rounded once
        let exact = (28 - 2 * d as i64) as f64 / 28.0;
        if r.pair_count != 28 || r.kendall_tau.to_bits() != exact.to_bits() {
            return Err(format!("trial {trial}: tau {} vs 1 - 2*{d}/28", r.kendall_tau));
        }
        seen_d.insert(d);
    }
    Ok(format!("1000 vectors, tau == (28 - 2d)/28 bit-for-bit, {} distinct d", seen_d.len()))
}

fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Selection by repeated minimum scan, no sorting.
fn scan_knn(train: &[LabeledQuery], probe: &[f64], k: usize) -> f64 {
    let mut taken = vec![false; train.len()];
    let mut picked = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, t) in train.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = cosine(t.embedding.as_ref().unwrap(), probe);
            best = match best {
                None => Some(i),
                Some(b) => {
                    let db = cosine(train[b].embedding.as_ref().unwrap(), probe);
                    if d < db || (d == db && t.query_id < train[b].query_id) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let b = best.unwrap();
        taken[b] = true;
        picked.push(train[b].actual_cost);
    }
    picked.sort_by(f64::total_cmp);
    picked.iter().sum::<f64>() / k as f64
}

fn c8() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // (a)
    let train: Vec<LabeledQuery> = (0..50)
        .map(|i| {
            let x = rng.gen_range(50..5000u64);
            LabeledQuery {
                query_id: format!("q{i:02}"),
                dataset_id: "d".into(),
                model_id: "m".into(),
                prompt_tokens: x,
                actual_cost: 3e-6 * x as f64 + 0.01 + rng.gen_range(-0.005..0.005),
                embedding: None,
            }
        })
        .collect();
    let fit = fit_prompt_length_lr(&train).map_err(|e| e.to_string())?["m"];
    let pts: Vec<(f64, f64)> = train.iter().map(|q| (q.prompt_tokens as f64, q.actual_cost)).collect();
    let (alpha, beta) = normal_equations(&pts);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    if rel(fit.alpha, alpha) > 1e-9 || rel(fit.beta, beta) > 1e-9 {
        return Err(format!("LR ({}, {}) vs oracle ({alpha}, {beta})", fit.alpha, fit.beta));
    }
    // (b), (c)
    let train: Vec<LabeledQuery> = (0..20)
        .map(|i| LabeledQuery {
            query_id: format!("t{i:02}"),
            dataset_id: "d".into(),
            model_id: "m".into(),
            prompt_tokens: 100,
            actual_cost: rng.gen_range(0.0..0.5),
            embedding: Some((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        })
        .collect();
    let mut probes = 0;
    for p in 0..25 {
        let emb: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe = LabeledQuery {
            query_id: format!("p{p}"),
            embedding: Some(emb.clone()),
            ..train[0].clone()
        };
        for k in [1, 3, 5] {
            let got = predict_knn(&train, &probe, KnnOptions { k, ..Default::default() }).map_err(|e| e.to_string())?;
            let want = scan_knn(&train, &emb, k);
            if got.to_bits() != want.to_bits() {
                return Err(format!("probe {p} k={k}: {got} vs scan {want}"));
            }
        }
        let full = predict_knn(&train, &probe, KnnOptions { k: train.len(), ..Default::default() }).map_err(|e| e.to_string())?;
        let mean = predict_mean(&train, &probe).map_err(|e| e.to_string())?;
        if full.to_bits() != mean.to_bits() {
            return Err(format!("k=|train| gives {full}, mean baseline {mean}"));
        }
        probes += 1;
    }
    // (d)
    let mut qs = Vec::new();
    for (d, n) in [("AIME", 10), ("GPQA", 10), ("MMLUPro", 10), ("HLE", 7)] {
        for i in 0..n {
            qs.push(LabeledQuery {
                query_id: format!("{d}-{i}"),
                dataset_id: d.into(),
                ..train[0].clone()
            });
        }
    }
    let spec = SplitSpec::new(0.2, 42).map_err(|e| e.to_string())?;
    let first = stratified_split(&qs, &spec).map_err(|e| e.to_string())?;
    let second = stratified_split(&qs, &spec).map_err(|e| e.to_string())?;
    if first != second {
        return Err("split differs between runs with the same seed".into());
    }
    for (d, want) in [("AIME", 2), ("GPQA", 2), ("MMLUPro", 2), ("HLE", 1)] {
        let got = first.1.iter().filter(|q| q.dataset_id == d).count();
        if got != want {
            return Err(format!("{d}: {got} test queries, want {want}"));
        }
    }
    Ok(format!(
        "LR matches normal equations to 1e-9; KNN == scan for k in {{1,3,5}} over {probes} probes; k=|train| == mean; split stable with exact counts"
    ))
}

fn c9() -> Result<String, String> {
    let s = |v: &[f64]| stats_of(v).map_err(|e| e.to_string());
    let constant = s(&[5.0, 5.0, 5.0])?;
    if constant.cv != 0.0 {
        return Err(format!("cv{{5,5,5}} = {}", constant.cv));
    }
    let mut parts = vec![
        Ok("cv{5,5,5} = 0".to_string()),
        within("cv{2,4}", s(&[2.0, 4.0])?.cv, 0.4714, 1e-4),
        within("max/min{562,11000}", s(&[562.0, 11000.0])?.max_min_ratio, 19.57, 0.01),
    ];
    let groups: [&[f64]; 3] = [&[2.0, 4.0], &[562.0, 11000.0], &[1.0, 2.0, 3.0, 5.0, 8.0, 13.0]];
    for g in groups {
        let base = s(g)?;
        for lambda in [0.5, 3.0, 10.0] {
            let scaled: Vec<f64> = g.iter().map(|v| v * lambda).collect();
            let t = s(&scaled)?;
            if t.cv != base.cv || t.max_min_ratio != base.max_min_ratio {
                return Err(format!(
                    "scale {lambda} on {g:?}: cv {} vs {}, ratio {} vs {}",
                    t.cv, base.cv, t.max_min_ratio, base.max_min_ratio
                ));
            }
        }
    }
    parts.push(Ok("cv and max/min unchanged under scaling by 0.5, 3, 10".into()));
    all(parts)
}

fn c10() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut zero_thinking = 0;
    for i in 0..100 {
        let pricing = ModelPricing::new(
            "m",
            "p",
            UnitPrice::from_micros(rng.gen_range(0..30_000_000)),
            UnitPrice::from_micros(rng.gen_range(100_000..80_000_000)),
            NaiveDate::from_ymd_opt(2026, 2, 28).unwrap(),
        );
        let output = rng.gen_range(0..200_000u64);
        let thinking = if i % 5 == 0 { 0 } else { rng.gen_range(0..=output) };
        zero_thinking += (thinking == 0) as usize;
        let r = UsageRecord {
            record_id: format!("r{i}"),
            model_id: "m".into(),
            dataset_id: "d".into(),
            query_id: format!("q{i}"),
            trial_index: 0,
            prompt_tokens: rng.gen_range(0..100_000),
            output_tokens: output,
            thinking_tokens: thinking,
            timestamp: None,
            query_text: None,
            aggregate: false,
        };
        let cost = query_cost(&pricing, &r).map_err(|e| e.to_string())?;
        let b = cost_breakdown(&pricing, [&r], Scope::Query).map_err(|e| e.to_string())?;
        let sum = b.prompt_cost + b.thinking_cost + b.generation_cost;
        if (sum - cost).abs() > 1e-9 * cost.abs() {
            return Err(format!("record {i}: components {sum} vs cost {cost}"));
        }
        let abl = ablated_cost(&pricing, &r).map_err(|e| e.to_string())?;
        if abl > cost || ((abl == cost) != (r.thinking_tokens == 0)) {
            return Err(format!("record {i}: ablated {abl}, cost {cost}, thinking {}", r.thinking_tokens));
        }
    }
    Ok(format!("100 records ({zero_thinking} without thinking): closure within 1e-9, ablated <= cost, equal iff n_t = 0"))
}

fn main() {
    let mut report = Report { failed: 0 };
    report.check(1, "pooled reversal rate", c1());
    report.check(2, "per-task extremes", c2());
    report.check(3, "reversal severity", c3());
    report.check(4, "workload totals", c4());
    report.check(5, "ablation restores rankings", c5());
    report.check(6, "thinking-token aggregates", c6());
    report.check(7, "tau identity", c7());
    report.check(8, "prediction oracle equivalence", c8());
    report.check(9, "variance properties", c9());
    report.check(10, "cost linearity and breakdown closure", c10());
    if report.failed > 0 {
        println!("{} criterion(s) failed", report.failed);
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
