"""Shared orchestration: bundles, method dispatch, response documents, sweeps.

Both the command-line interface and the HTTP service funnel through these
functions, so a request answered over HTTP and the same parameters run via
the CLI produce identical documents.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .attributes import ImageRecord, SimilarityBundle, build_bundle, normalize_weights
from .baselines import BaselineConfig, clustering_rerank, kdpp_rerank, mmr_rerank
from .core import RankedList, RerankConfig, StepDiagnostic, greedy_rerank
from .dataio import Query, TaskConfig
from .errors import ValidationError
from .metrics import diversity_metric, harmonic_mean, mean_average_precision, ncs_at_k, prs

METHODS = ("msdpp", "mmr", "kdpp", "clustering", "none")

TIME_BINS = 24
LAT_BINS = 18
LON_BINS = 36


def make_bundle(records: list[ImageRecord], query: Query, task: TaskConfig) -> SimilarityBundle:
    return build_bundle(
        records,
        query.relevance,
        task.rerank.specs,
        task.rerank.top_n,
        theta=task.rerank.theta,
        full_circle_time=task.time_full_circle,
    )


def apply_overrides(cfg: RerankConfig, overrides: dict | None) -> RerankConfig:
    """New config with per-request parameter overrides applied.

    ``overrides`` may set ``theta``, ``k``, ``tn_mode``, and per-attribute
    ``weight``/``direction`` under ``attributes: {name: {...}}``.
    """
    if not overrides:
        return cfg
    unknown = set(overrides) - {"theta", "k", "tn_mode", "attributes"}
    if unknown:
        raise ValidationError(f"unknown override fields {sorted(unknown)}")
    specs = list(cfg.specs)
    for name, patch in (overrides.get("attributes") or {}).items():
        idx = next((i for i, s in enumerate(specs) if s.name == name), None)
        if idx is None:
            raise ValidationError(f"override references unknown attribute {name!r}")
        bad = set(patch) - {"weight", "direction"}
        if bad:
            raise ValidationError(f"attribute override for {name!r}: unknown fields {sorted(bad)}")
        spec = specs[idx]
        if "weight" in patch:
            spec = replace(spec, weight=float(patch["weight"]))
        if "direction" in patch:
            spec = replace(spec, direction=int(patch["direction"]))
        specs[idx] = spec
    return RerankConfig(
        theta=float(overrides.get("theta", cfg.theta)),
        specs=tuple(specs),
        k=int(overrides.get("k", cfg.k)),
        top_n=cfg.top_n,
        tn_mode=overrides.get("tn_mode", cfg.tn_mode),
    )


def default_baseline(task: TaskConfig, method: str) -> BaselineConfig:
    """Baseline hyperparameters from the config, or sensible defaults."""
    if task.baseline is not None and task.baseline.method == method:
        return task.baseline
    cfg = task.rerank
    mode = "mixed" if any(s.direction == -1 for s in cfg.specs) else "increase"
    lam = cfg.theta if method == "kdpp" else 0.5
    return BaselineConfig(
        method=method,
        lambda_or_theta=lam,
        specs=cfg.specs,
        num_clusters=min(40, max(1, cfg.top_n // 5)),
        mode=mode,
        k=cfg.k,
    )


def run_method(bundle: SimilarityBundle, task: TaskConfig, method: str, cfg: RerankConfig) -> RankedList:
    if method == "msdpp":
        return greedy_rerank(bundle, cfg)
    if method == "none":
        return _passthrough(bundle, cfg.k)
    baseline = replace(default_baseline(task, method), specs=cfg.specs, k=cfg.k)
    if method == "mmr":
        return mmr_rerank(bundle, baseline)
    if method == "kdpp":
        return kdpp_rerank(bundle, baseline)
    if method == "clustering":
        n = len(bundle)
        if baseline.num_clusters > n:
            baseline = replace(baseline, num_clusters=n)
        return clustering_rerank(bundle, baseline)
    raise ValidationError(f"method must be one of {METHODS}, got {method!r}")


def _passthrough(bundle: SimilarityBundle, k: int) -> RankedList:
    """Top-k of the candidate order (descending relevance) with no re-ranking."""
    if k > len(bundle):
        raise ValidationError(f"k={k} exceeds the {len(bundle)} available candidates")
    diagnostics = tuple(
        StepDiagnostic(
            step=s,
            chosen_id=bundle.candidate_ids[s],
            objective=float(bundle.relevance_diag[s]),
            gain=float(bundle.relevance_diag[s]),
            logdets={},
        )
        for s in range(k)
    )
    return RankedList(ids=bundle.candidate_ids[:k], diagnostics=diagnostics)


def retrieval_for(ranked_ids, query: Query, task: TaskConfig, k: int):
    """(kind, value) for one query's ranked list, or (kind, None) when the
    required ground truth is absent and the metric was not forced."""
    kind = task.retrieval_metric
    if kind == "auto":
        kind = "map" if query.relevant_ids else ("ncs_at_k" if query.semantic_scores else "none")
    if kind == "map":
        if not query.relevant_ids:
            raise ValidationError(f"query {query.query_id!r}: MAP requested but relevant_ids missing")
        return "map", mean_average_precision([list(ranked_ids)], [query.relevant_ids])
    if kind == "ncs_at_k":
        if not query.semantic_scores:
            raise ValidationError(
                f"query {query.query_id!r}: ncs_at_k requested but semantic_scores missing"
            )
        return "ncs_at_k", ncs_at_k(list(ranked_ids), query.semantic_scores, k=min(10, k))
    return "none", None


def time_histogram(records_by_id: dict[str, ImageRecord], ids) -> list[int] | None:
    """Hourly counts over the ranked items that carry a time attribute."""
    bins = [0] * TIME_BINS
    seen = False
    for i in ids:
        t = records_by_id[i].time_minutes
        if t is not None:
            bins[min(int(t // 60.0), TIME_BINS - 1)] += 1
            seen = True
    return bins if seen else None


def location_heat(records_by_id: dict[str, ImageRecord], ids) -> dict | None:
    """Counts on a 10-degree lat/lon grid over ranked items with coordinates."""
    cells: dict[tuple[int, int], int] = {}
    for i in ids:
        rec = records_by_id[i]
        if rec.lat_deg is None or rec.lon_deg is None:
            continue
        lat_bin = min(int((rec.lat_deg + 90.0) // 10.0), LAT_BINS - 1)
        lon_bin = min(int((rec.lon_deg + 180.0) // 10.0), LON_BINS - 1)
        cells[(lat_bin, lon_bin)] = cells.get((lat_bin, lon_bin), 0) + 1
    if not cells:
        return None
    return {
        "lat_bins": LAT_BINS,
        "lon_bins": LON_BINS,
        "cell_deg": 10,
        "cells": [[a, b, c] for (a, b), c in sorted(cells.items())],
    }


def config_echo(cfg: RerankConfig) -> dict:
    specs = normalize_weights(cfg.specs)
    return {
        "theta": cfg.theta,
        "k": cfg.k,
        "top_n": cfg.top_n,
        "tn_mode": cfg.tn_mode,
        "attributes": [
            {"name": s.name, "kind": s.kind, "direction": s.direction, "weight": s.weight}
            for s in specs
        ],
    }


def rerank_document(
    records_by_id: dict[str, ImageRecord],
    query: Query,
    bundle: SimilarityBundle,
    task: TaskConfig,
    method: str,
    cfg: RerankConfig,
    include_diagnostics: bool = False,
) -> dict:
    """One query's full response document."""
    ranked = run_method(bundle, task, method, cfg)
    per_vs, dm = diversity_metric(ranked, bundle, normalize_weights(cfg.specs), cfg.k)
    kind, value = retrieval_for(ranked.ids, query, task, cfg.k)
    hm = harmonic_mean(value, dm) if value is not None else None
    doc = {
        "query_id": query.query_id,
        "method": method,
        "k": cfg.k,
        "ranked": [
            {"id": i, "relevance": float(bundle.relevance_diag[bundle.index_of(i)])}
            for i in ranked.ids
        ],
        "metrics": {
            "per_attribute_vs": per_vs,
            "dm": dm,
            "retrieval": None if value is None else {"kind": kind, "value": value},
            "hm": hm,
        },
        "time_histogram": time_histogram(records_by_id, ranked.ids),
        "location_heat": location_heat(records_by_id, ranked.ids),
        "config": config_echo(cfg),
    }
    if include_diagnostics:
        doc["diagnostics"] = [_diag_dict(d) for d in ranked.diagnostics]
    return doc


def rerank_all(
    records: list[ImageRecord],
    queries: list[Query],
    task: TaskConfig,
    method: str,
    *,
    include_diagnostics: bool = False,
    jobs: int = 1,
) -> list[dict]:
    """Response documents for every query, optionally fanning out over a
    thread pool; output order always follows the input query order."""
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    records_by_id = {r.id: r for r in records}
    cfg = task.rerank

    def one(query: Query) -> dict:
        bundle = make_bundle(records, query, task)
        return rerank_document(records_by_id, query, bundle, task, method, cfg, include_diagnostics)

    if jobs <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, queries))


def evaluate_documents(docs: list[dict], queries: list[Query], task: TaskConfig) -> dict:
    """Aggregate report over rerank response documents.

    Diversity values come from the documents (they were computed against the
    full similarity bundles); retrieval metrics are recomputed against the
    query ground truth, which also validates that the required truth exists.
    """
    by_id = {q.query_id: q for q in queries}
    per_query = []
    kinds = set()
    for doc in docs:
        qid = doc.get("query_id")
        if qid not in by_id:
            raise ValidationError(f"results reference unknown query_id {qid!r}")
        ids = [r["id"] for r in doc["ranked"]]
        kind, value = retrieval_for(ids, by_id[qid], task, int(doc.get("k", task.rerank.k)))
        kinds.add(kind)
        dm = float(doc["metrics"]["dm"])
        per_query.append(
            {
                "query_id": qid,
                "retrieval": None if value is None else {"kind": kind, "value": value},
                "per_attribute_vs": doc["metrics"]["per_attribute_vs"],
                "dm": dm,
                "hm": harmonic_mean(value, dm) if value is not None else None,
            }
        )
    if not per_query:
        raise ValidationError("no result documents to evaluate")

    dms = [p["dm"] for p in per_query]
    rets = [p["retrieval"]["value"] for p in per_query if p["retrieval"] is not None]
    attr_names = list(per_query[0]["per_attribute_vs"])
    mean_vs = {
        a: float(np.mean([p["per_attribute_vs"][a] for p in per_query])) for a in attr_names
    }
    mean_dm = float(np.mean(dms))
    mean_ret = float(np.mean(rets)) if rets else None
    return {
        "queries": len(per_query),
        "retrieval_kind": sorted(kinds - {"none"})[0] if kinds - {"none"} else "none",
        "mean_retrieval": mean_ret,
        "mean_dm": mean_dm,
        "mean_per_attribute_vs": mean_vs,
        "hm": harmonic_mean(mean_ret, mean_dm) if mean_ret is not None else None,
        "per_query": per_query,
    }


def weight_sweep(
    records: list[ImageRecord],
    queries: list[Query],
    task: TaskConfig,
    attribute: str,
    grid=None,
    overrides: dict | None = None,
) -> dict:
    """Sweep one attribute's preference weight over a grid, averaging
    metrics across queries, and score how faithfully diversity follows the
    weight (PRS over the swept attribute's mean normalized Vendi score).

    A grid value w is the swept attribute's normalized share: the other
    attributes split the remaining 1 - w in their configured proportions.
    """
    base_cfg = apply_overrides(task.rerank, overrides)
    if all(s.name != attribute for s in base_cfg.specs):
        raise ValidationError(f"sweep attribute {attribute!r} is not in the configured attributes")
    grid = [float(w) for w in (grid if grid is not None else task.weight_grid)]
    if not grid:
        raise ValidationError("sweep grid is empty")
    if sorted(grid) != grid:
        raise ValidationError("sweep grid must be non-decreasing")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValidationError("weight grid values must lie in [0, 1]")

    records_by_id = {r.id: r for r in records}
    bundles = [make_bundle(records, q, task) for q in queries]
    points = []
    for w in grid:
        cfg = apply_overrides(base_cfg, {"attributes": _shared_out_weights(base_cfg, attribute, w)})
        docs = [
            rerank_document(records_by_id, q, b, task, "msdpp", cfg)
            for q, b in zip(queries, bundles)
        ]
        points.append(_sweep_point({"weight": w}, docs))
    curve = [p["per_attribute_vs"][attribute] for p in points]
    distinct = [w for i, w in enumerate(grid) if i == 0 or w > grid[i - 1]]
    sweep_prs = (
        prs(curve, grid) if len(distinct) >= 2 and max(curve) > min(curve) else 0.0
    )
    return {
        "kind": "weight",
        "attribute": attribute,
        "tn_mode": base_cfg.tn_mode,
        "theta": base_cfg.theta,
        "points": points,
        "prs": {attribute: sweep_prs},
    }


def theta_sweep(
    records: list[ImageRecord],
    queries: list[Query],
    task: TaskConfig,
    grid=None,
    overrides: dict | None = None,
) -> dict:
    """Sweep the accuracy/diversity trade-off parameter."""
    base_cfg = apply_overrides(task.rerank, overrides)
    grid = [float(t) for t in (grid if grid is not None else task.theta_grid)]
    if not grid:
        raise ValidationError("sweep grid is empty")
    records_by_id = {r.id: r for r in records}
    bundles = [make_bundle(records, q, task) for q in queries]
    points = []
    for theta in grid:
        cfg = apply_overrides(base_cfg, {"theta": theta})
        docs = [
            rerank_document(records_by_id, q, b, task, "msdpp", cfg)
            for q, b in zip(queries, bundles)
        ]
        points.append(_sweep_point({"theta": theta}, docs))
    return {"kind": "theta", "tn_mode": base_cfg.tn_mode, "points": points}


def grid_search(records, queries, task: TaskConfig) -> dict:
    """Exhaustive search over theta and per-attribute weights, reporting the
    configuration with the best harmonic-mean score."""
    from itertools import product

    records_by_id = {r.id: r for r in records}
    bundles = [make_bundle(records, q, task) for q in queries]
    names = [s.name for s in task.rerank.specs]
    points = []
    best = None
    for theta in task.theta_grid:
        for combo in product(task.weight_grid, repeat=len(names)):
            if sum(combo) <= 0:
                continue
            overrides = {
                "theta": theta,
                "attributes": {n: {"weight": w} for n, w in zip(names, combo)},
            }
            cfg = apply_overrides(task.rerank, overrides)
            docs = [
                rerank_document(records_by_id, q, b, task, "msdpp", cfg)
                for q, b in zip(queries, bundles)
            ]
            point = _sweep_point({"theta": theta, "weights": dict(zip(names, combo))}, docs)
            points.append(point)
            if point["hm"] is not None and (best is None or point["hm"] > best["hm"]):
                best = point
    return {"kind": "grid_search", "points": points, "best": best}


def dump_ndjson(docs: list[dict]) -> str:
    return "".join(json.dumps(doc, sort_keys=True, default=_json_default) + "\n" for doc in docs)


def _shared_out_weights(cfg: RerankConfig, attribute: str, w: float) -> dict:
    """Weight overrides giving the swept attribute share w and the rest 1 - w
    in their configured proportions."""
    others = [s for s in cfg.specs if s.name != attribute]
    rest = sum(s.weight for s in others)
    patches = {attribute: {"weight": w}}
    for s in others:
        share = (1.0 - w) * (s.weight / rest) if rest > 0 else (1.0 - w) / max(len(others), 1)
        patches[s.name] = {"weight": share}
    if w == 1.0 and not others:
        patches = {attribute: {"weight": 1.0}}
    return patches


def _sweep_point(params: dict, docs: list[dict]) -> dict:
    rets = [d["metrics"]["retrieval"]["value"] for d in docs if d["metrics"]["retrieval"]]
    dms = [d["metrics"]["dm"] for d in docs]
    names = list(docs[0]["metrics"]["per_attribute_vs"])
    point = dict(params)
    point["per_attribute_vs"] = {
        a: float(np.mean([d["metrics"]["per_attribute_vs"][a] for d in docs])) for a in names
    }
    point["dm"] = float(np.mean(dms))
    point["retrieval"] = float(np.mean(rets)) if rets else None
    point["hm"] = harmonic_mean(point["retrieval"], point["dm"]) if rets else None
    return point


def _diag_dict(d: StepDiagnostic) -> dict:
    out = {
        "step": d.step,
        "chosen_id": d.chosen_id,
        "objective": d.objective,
        "gain": d.gain,
        "logdets": d.logdets,
    }
    if d.tn_b is not None:
        out["tn_b"] = d.tn_b
        out["tn_scales"] = d.tn_scales
    if d.tn_sum_scale is not None:
        out["tn_sum_scale"] = d.tn_sum_scale
    return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
