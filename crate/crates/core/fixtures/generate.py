#!/usr/bin/env python3
"""Regenerates the bundled fixtures. Deterministic: re-running produces identical bytes.

aggregate_ledger.jsonl
    One synthetic record per (model, dataset) cell of the published cost and
    thinking-token tables. thinking_tokens = table value x 1000; the remaining
    cost (total minus thinking) is split evenly between prompt and generation
    spend and converted to whole tokens.
repeated_trials_aime.jsonl
    30 queries x 6 trials (trial 0 = original) for three models, thinking-token
    dispersion calibrated to a target mean within-query CV per model.
predict_demo.jsonl / predict_demo.embeddings
    Small labelled corpus with query text and a matching offline embedding cache.
"""
import hashlib
import json
import math
import os
import random
import statistics

HERE = os.path.dirname(os.path.abspath(__file__))

PRICING = [
    ("GPT-5.2", "OpenAI", "1.75", "14.00"),
    ("GPT-5 Mini", "OpenAI", "0.25", "2.00"),
    ("Gemini 3.1 Pro", "Google", "2.00", "12.00"),
    ("Gemini 3 Flash", "Google", "0.50", "3.00"),
    ("Claude Opus 4.6", "Anthropic", "5.00", "25.00"),
    ("Claude Haiku 4.5", "Anthropic", "1.00", "5.00"),
    ("Kimi K2.5", "Moonshot AI", "0.60", "3.00"),
    ("MiniMax-M2.5", "MiniMax", "0.30", "1.20"),
]
DATASETS = ["AIME", "ARC-AGI", "ArenaHard", "GPQA", "HLE", "LiveCodeBench", "LiveMathBench", "MMLUPro", "SimpleQA"]
COST = {
    "GPT-5.2": [6.19, 69.57, 28.22, 9.15, 253.47, 51.17, 5.01, 35.15, 68.67],
    "GPT-5 Mini": [0.61, 7.99, 4.00, 1.09, 18.73, 5.07, 0.66, 7.32, 7.45],
    "Gemini 3.1 Pro": [8.54, 70.55, 36.88, 15.41, 445.55, 106.53, 8.14, 110.47, 366.68],
    "Gemini 3 Flash": [3.13, 39.32, 8.70, 11.28, 176.47, 162.59, 5.52, 219.47, 16.49],
    "Claude Opus 4.6": [9.45, 85.33, 72.59, 18.36, 380.63, 77.21, 9.01, 74.01, 41.23],
    "Claude Haiku 4.5": [0.37, 3.69, 5.91, 0.75, 8.11, 7.11, 0.59, 7.84, 2.33],
    "Kimi K2.5": [3.02, 26.31, 10.17, 7.68, 136.52, 37.43, 3.36, 44.40, 21.12],
    "MiniMax-M2.5": [0.15, 1.40, 1.61, 0.46, 5.35, 2.40, 0.26, 4.84, 6.50],
}
THINKING_K = {
    "GPT-5.2": [389, 4596, 1090, 585, 17309, 3284, 289, 1804, 4722],
    "GPT-5 Mini": [272, 3617, 1140, 482, 8766, 2097, 284, 2964, 3530],
    "Gemini 3.1 Pro": [646, 5340, 2061, 1147, 35735, 8231, 586, 8007, 30122],
    "Gemini 3 Flash": [994, 12579, 2087, 3619, 57797, 53338, 1754, 71489, 5024],
    "Claude Opus 4.6": [321, 2797, 1019, 614, 13599, 2405, 279, 1827, 1336],
    "Claude Haiku 4.5": [0.1, 0.8, 1.5, 0.4, 4.3, 2.1, 0.2, 6.0, 8.7],
    "Kimi K2.5": [967, 8320, 2410, 2453, 44627, 11738, 1059, 13538, 6484],
    "MiniMax-M2.5": [120, 818, 1053, 357, 4259, 1785, 197, 3455, 5185],
}
PRICE = {m: (float(i), float(o)) for m, _, i, o in PRICING}


def line(rec):
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n"


def write_catalog():
    with open(os.path.join(HERE, "pricing_2026-02-28.csv"), "w") as f:
        f.write("model_id,provider,input_price_per_mtok,output_price_per_mtok,snapshot_date\n")
        for m, p, i, o in PRICING:
            f.write(f"{m},{p},{i},{o},2026-02-28\n")


def write_aggregate():
    out = []
    for m, *_ in PRICING:
        p_in, p_out = PRICE[m]
        for j, d in enumerate(DATASETS):
            cost = COST[m][j]
            thinking = round(THINKING_K[m][j] * 1000)
            rest = cost * 1e6 - p_out * thinking
            assert rest > 0, (m, d)
            prompt = round(rest / 2 / p_in)
            gen = round((cost * 1e6 - p_in * prompt - p_out * thinking) / p_out)
            out.append(line({
                "record_id": f"agg:{m}:{d}",
                "model_id": m,
                "dataset_id": d,
                "query_id": "aggregate",
                "trial_index": 0,
                "prompt_tokens": prompt,
                "output_tokens": thinking + gen,
                "thinking_tokens": thinking,
                "aggregate": True,
            }))
    with open(os.path.join(HERE, "aggregate_ledger.jsonl"), "w") as f:
        f.writelines(out)


def cv(xs):
    return statistics.stdev(xs) / statistics.fmean(xs)


def write_trials():
    rng = random.Random(20260228)
    targets = {"GPT-5 Mini": 0.38, "GPT-5.2": 0.24, "Gemini 3 Flash": 0.13}
    out = []
    for m, target in targets.items():
        bases = [math.exp(rng.gauss(math.log(6000), 0.6)) for _ in range(30)]
        noise = [[rng.gauss(0, 1) for _ in range(6)] for _ in range(30)]
        prompts = [rng.randint(80, 400) for _ in range(30)]

        def groups(scale):
            gs = []
            for b, z in zip(bases, noise):
                mu = statistics.fmean(z)
                gs.append([max(50, round(b * (1 + scale * (x - mu)))) for x in z])
            return gs

        lo, hi = 0.0, 2.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if statistics.fmean(cv(g) for g in groups(mid)) < target:
                lo = mid
            else:
                hi = mid
        for q, (g, pt) in enumerate(zip(groups((lo + hi) / 2), prompts)):
            qid = f"aime-{q:02d}"
            for t, think in enumerate(g):
                gen = 150 + (q * 7 + t * 13) % 90
                out.append(line({
                    "record_id": f"rt:{m}:{qid}:{t}",
                    "model_id": m,
                    "dataset_id": "AIME",
                    "query_id": qid,
                    "trial_index": t,
                    "prompt_tokens": pt,
                    "output_tokens": think + gen,
                    "thinking_tokens": think,
                    "timestamp": f"2026-03-{1 + t:02d}T12:00:00Z",
                }))
    with open(os.path.join(HERE, "repeated_trials_aime.jsonl"), "w") as f:
        f.writelines(out)


def write_predict_demo():
    rng = random.Random(7)
    dim = 16
    centers = {d: [rng.gauss(0, 1) for _ in range(dim)] for d in ["AIME", "GPQA", "MMLUPro"]}
    scale = {"AIME": 9000, "GPQA": 4000, "MMLUPro": 1200}
    models = {"GPT-5.2": 1.0, "Claude Haiku 4.5": 0.05}
    recs, cache = [], {}
    for d, c in centers.items():
        for q in range(20):
            text = f"{d} practice item {q}: difficulty {rng.randint(1, 9)}"
            emb = [round(x + rng.gauss(0, 0.4), 6) for x in c]
            h = hashlib.sha256(text.encode()).hexdigest()
            cache[h] = emb
            difficulty = 1 + abs(emb[0] - c[0]) * 2
            prompt = rng.randint(60, 900)
            for m, mult in models.items():
                think = round(scale[d] * difficulty * mult * rng.uniform(0.6, 1.4))
                gen = rng.randint(100, 600)
                recs.append(line({
                    "record_id": f"demo:{m}:{d}:{q}",
                    "model_id": m,
                    "dataset_id": d,
                    "query_id": f"{d.lower()}-{q:02d}",
                    "trial_index": 0,
                    "prompt_tokens": prompt,
                    "output_tokens": think + gen,
                    "thinking_tokens": think,
                    "query_text": text,
                }))
    with open(os.path.join(HERE, "predict_demo.jsonl"), "w") as f:
        f.writelines(recs)
    with open(os.path.join(HERE, "predict_demo.embeddings"), "w") as f:
        for h, v in cache.items():
            f.write(f"{h}\t{dim}\t{','.join(repr(x) for x in v)}\n")


def write_reference_mae():
    rows = [
        ("GPT-5.2", "0.0490", "0.0487", "0.0458"),
        ("GPT-5 Mini", "0.0039", "0.0038", "0.0027"),
        ("Gemini 3.1 Pro", "0.1117", "0.1120", "0.0941"),
        ("Gemini 3 Flash", "0.0555", "0.0549", "0.0344"),
        ("Claude Opus 4.6", "0.0721", "0.0715", "0.0520"),
        ("Claude Haiku 4.5", "0.0023", "0.0022", "0.0013"),
        ("Kimi K2.5", "0.0233", "0.0229", "0.0138"),
        ("MiniMax-M2.5", "0.0008", "0.0008", "0.0006"),
        ("Average", "0.0398", "0.0394", "0.0306"),
    ]
    with open(os.path.join(HERE, "reference_prediction_mae.csv"), "w") as f:
        f.write("model_id,mean,prompt_length_lr,embedding_knn\n")
        for r in rows:
            f.write(",".join(r) + "\n")


if __name__ == "__main__":
    write_catalog()
    write_aggregate()
    write_trials()
    write_predict_demo()
    write_reference_mae()
