"""Scenario pipeline, strategy comparison and report files."""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import flops, ilsa
from .. import numerics as nx
from .. import model as tm
from .. import planner as pl
from .. import temporal as tf
from . import baselines, metrics
from .config import RunConfig
from .scenario import generate_scenario

METRICS = ("recall", "coverage", "diversity")


@dataclass
class Models:
    weights: list
    tfm: tf.TfmWeights
    adapter: tf.Adapter
    planner: pl.PlannerWeights


def build_models(cfg: RunConfig):
    seed = cfg.bench.weight_seed
    s = cfg.scenario
    return Models(
        weights=tm.init_weights(cfg.arch, seed, std=cfg.init.init_std, qk_gain=cfg.init.qk_gain),
        tfm=tf.init_tfm_weights(s.history, s.dim, seed, num_heads=cfg.tfm.num_heads,
                                num_layers=cfg.tfm.num_layers, std=cfg.tfm.init_std),
        adapter=tf.init_adapter(s.dim, cfg.arch.d_model, seed, identity=cfg.tfm.identity_adapter),
        planner=pl.init_planner_weights(cfg.planner, cfg.arch.d_model, seed),
    )


def embed_scenario(cfg, models, seed):
    """Fused visual tokens followed by text tokens, plus the scenario and layout."""
    scen, frames, text, layout = generate_scenario(seed, cfg.scenario)
    visual = models.adapter(tf.tfm_forward(frames, models.tfm))
    return scen, np.vstack([visual, text]), layout


@dataclass
class SparseInputs:
    h: np.ndarray            # input of the first sparse layer
    scoring: np.ndarray      # position-free, mask-free weights
    causal: np.ndarray       # rotated, causal weights of the same layer
    layout: tm.SequenceLayout
    layer: int


def sparse_layer_inputs(cfg, models, embeddings, layout):
    """Run the dense prefix up to and including the first sparse layer's attention."""
    if not cfg.arch.sparse_layers:
        raise ValueError("the benchmark needs at least one sparse layer")
    first = cfg.arch.sparse_layers[0]
    h = embeddings
    for i in range(first):
        h, _ = tm.decoder_layer_forward(h, models.weights[i], cfg.arch, layout.position)
    # only the attention weights of the sparse layer are needed here, not its output
    w = models.weights[first]
    att = tm.attention_forward(nx.rms_norm(h, w.attn_norm), w, cfg.arch, layout.position, want_scoring=True)
    return SparseInputs(h, att.scoring_weights, att.causal_weights, layout, first)


def decide(cfg, strategy, x: SparseInputs, seed):
    """Retained visual rows for one strategy (and the ILSA decision when it has one)."""
    rate = cfg.prune.rate_for_layer(x.layer)
    b, _, _ = cfg.prune.budget(len(x.layout.visual), rate)
    if strategy == "ilsa":
        d = ilsa.ilsa_step(x.h, x.scoring, x.layout, cfg.prune, rate).validate(x.layout)
        return d.I_final, d
    if strategy == "positional":
        d = baselines.positional_step(x.h, x.causal, x.layout, cfg.prune, rate).validate(x.layout)
        return d.I_final, d
    if strategy == "random":
        return baselines.baseline_random(x.layout, b, seed), None
    anchors = ilsa.select_text_anchors(x.h, x.layout)
    scores = ilsa.importance_scores(x.scoring, anchors, x.layout)
    if strategy == "global_top":
        return baselines.baseline_global_top(scores, b), None
    if strategy == "per_view_average":
        return baselines.baseline_per_view_average(scores, x.layout, b), None
    raise ValueError(f"unknown strategy {strategy!r}")


def evaluate_seed(cfg, models, seed):
    scen, emb, layout = embed_scenario(cfg, models, seed)
    x = sparse_layer_inputs(cfg, models, emb, layout)
    rate = cfg.prune.rate_for_layer(x.layer)
    b, big_k, small_k = cfg.prune.budget(len(layout.visual), rate)
    rec = {"seed": seed, "B": b, "K": big_k, "k": small_k, "visual_tokens": int(len(layout.visual)),
           "planted": [int(layout.position[i]) for i in scen.planted], "strategies": {}}
    for name in cfg.bench.strategies:
        kept, decision = decide(cfg, name, x, seed)
        if len(kept) != b:
            raise AssertionError(f"{name} retained {len(kept)} tokens, budget {b}")
        row = {
            "retained": [int(layout.position[i]) for i in kept],
            "recall": metrics.salient_recall(kept, scen.planted),
            "coverage": metrics.view_coverage(kept, layout),
            "diversity": metrics.pairwise_diversity(x.h, kept),
        }
        if decision is not None:
            row["decision"] = decision.to_record(layout)
        rec["strategies"][name] = row
    return rec


def aggregate(records, strategies):
    out = {}
    for name in strategies:
        out[name] = {m: metrics.mean_std([r["strategies"][name][m] for r in records]) for m in METRICS}
    return out


def flops_section(cfg, num_visual, num_text):
    dense = flops.model_macs(cfg.arch, num_visual, num_text)
    pruned = flops.model_macs(cfg.arch, num_visual, num_text, cfg=cfg.prune)
    big = flops.summary(flops.FlopsArchAssumptions(), [(cfg.prune.sparse_layers, cfg.prune.pruning_rate)],
                        cfg.prune.recycle_fraction)
    return {
        "desk_llm_mac_ratio": sum(pruned.values()) / sum(dense.values()),
        "desk_llm_macs": {"dense": dense, "pruned": pruned},
        "reference_7b": {"dense_gflops": big["dense"]["total_gflops"], "pruned": big["pruned"]},
    }


_worker_state = {}


def _init_worker(cfg):
    _worker_state["cfg"] = cfg
    _worker_state["models"] = build_models(cfg)


def _run_one(seed):
    return evaluate_seed(_worker_state["cfg"], _worker_state["models"], seed)


def run_bench(cfg: RunConfig):
    """Evaluate every strategy on every seed. Records come back in seed order."""
    seeds = cfg.bench.seed_list
    if cfg.bench.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(cfg.bench.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            records = list(pool.map(_run_one, seeds))
    else:
        models = build_models(cfg)
        records = [evaluate_seed(cfg, models, s) for s in seeds]
    s = cfg.scenario
    config = cfg.as_dict()
    config["bench"].pop("workers")  # never changes results, so keep it out of the bytes
    return {
        "config": config,
        "seeds": seeds,
        "summary": aggregate(records, cfg.bench.strategies) if records else {},
        "flops": flops_section(cfg, s.visual_tokens, s.text_tokens),
        "records": records,
    }


def write_reports(report, out_dir):
    """report.json, summary.csv and per_seed.csv; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in
             (("json", "report.json"), ("summary", "summary.csv"), ("per_seed", "per_seed.csv"))}
    with open(paths["json"], "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "metric", "mean", "std", "n"])
        for name, by_metric in report["summary"].items():
            for m, st in by_metric.items():
                w.writerow([name, m, _fmt(st["mean"]), _fmt(st["std"]), st["n"]])
    with open(paths["per_seed"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "strategy", "B"] + list(METRICS))
        for r in report["records"]:
            for name, row in r["strategies"].items():
                w.writerow([r["seed"], name, r["B"]] + [_fmt(row[m]) for m in METRICS])
    return paths


def _fmt(x):
    return "" if x is None else repr(float(x))


def forward_scenario(cfg, seed, models=None):
    """Full pipeline on one scenario: fusion, pruned decoder, trajectory."""
    models = models or build_models(cfg)
    scen, emb, layout = embed_scenario(cfg, models, seed)
    h, out_layout, trace = tm.model_forward(emb, layout, cfg.arch, models.weights,
                                            sparsifier=ilsa.make_sparsifier(cfg.prune))
    traj = pl.plan(h, cfg.planner, models.planner)
    record = {
        "seed": seed,
        "scenario": scen.describe(),
        "lengths": trace.lengths,
        "final_positions": out_layout.position.tolist(),
        "decisions": [],
    }
    seen = layout
    for layer, d in trace.decisions:
        record["decisions"].append({"layer": layer, **d.to_record(seen)})
        seen = seen.take(np.union1d(seen.non_visual, d.I_final))
    record["recall"] = metrics.salient_recall(
        np.flatnonzero(np.isin(layout.position, out_layout.position)), scen.planted)
    return record, traj
