"""Reference diversifiers: MMR, greedy k-DPP, and clustering-based re-ranking.

Each baseline consumes the same per-query bundle as the main engine and
returns a ``RankedList`` with the shared deterministic tie-break (score,
then raw relevance, then ascending id). Multi-source variants follow the
conventional recipes: MMR and clustering concatenate the per-attribute
embeddings scaled by direction * weight; k-DPP averages the signed,
weighted similarity matrices into one kernel.

Diversity-decreasing attributes enter through their sign: a negated
similarity matrix for single-source MMR / k-DPP (repaired back to SPD for
the determinant), a negative coefficient elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attributes import (
    AttributeSpec,
    SimilarityBundle,
    inverse_distance_similarity,
    normalize_weights,
    relevance_alpha,
)
from .core import RankedList, StepDiagnostic, _argmax_with_ties
from .errors import ValidationError
from .spdlinalg import DEFAULT_EIG_FLOOR, ensure_spd

BASELINE_METHODS = ("mmr", "kdpp", "clustering")
CLUSTER_GRID = (40, 60, 80)

KMEANS_MAX_ITER = 50
KMEANS_TOL = 1e-8


@dataclass(frozen=True)
class BaselineConfig:
    """Baseline method selection plus its hyperparameters.

    ``lambda_or_theta`` is the MMR trade-off lambda in [0, 1] or the DPP
    trade-off theta in (0, 1), depending on the method. ``mode`` describes
    the task: ``increase`` (all diversities raised) or ``mixed`` (some
    attribute is being concentrated), which switches the clustering
    selection strategy.
    """

    method: str
    lambda_or_theta: float
    specs: tuple[AttributeSpec, ...]
    num_clusters: int = 40
    mode: str = "increase"
    k: int = 20

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ValidationError(f"method must be one of {BASELINE_METHODS}, got {self.method!r}")
        if self.mode not in ("increase", "mixed"):
            raise ValidationError(f"mode must be 'increase' or 'mixed', got {self.mode!r}")
        if self.method == "mmr" and not 0.0 <= self.lambda_or_theta <= 1.0:
            raise ValidationError(f"mmr lambda must lie in [0, 1], got {self.lambda_or_theta}")
        if self.method == "kdpp":
            relevance_alpha(self.lambda_or_theta)
        if self.method == "clustering" and self.num_clusters < 1:
            raise ValidationError(f"num_clusters must be >= 1, got {self.num_clusters}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "specs", tuple(self.specs))
        normalize_weights(self.specs)


def mmr_rerank(bundle: SimilarityBundle, config: BaselineConfig) -> RankedList:
    """Maximal marginal relevance: greedy argmax of
    ``(1 - lambda) * r_j - lambda * max_{y in Y} sim(j, y)``.

    Single-source uses the attribute's similarity matrix (negated when the
    direction is -1); multi-source measures similarity on the concatenated
    weighted embeddings.
    """
    n, k = _check_k(bundle, config)
    lam = config.lambda_or_theta
    sim = _mmr_similarity(bundle, config)
    rel = bundle.relevance_diag

    selected: list[int] = []
    remaining = np.arange(n)
    diagnostics: list[StepDiagnostic] = []
    for step in range(k):
        if selected:
            penalty = np.max(sim[np.ix_(remaining, selected)], axis=1)
        else:
            penalty = np.zeros(len(remaining))
        scores = (1.0 - lam) * rel[remaining] - lam * penalty
        pick = _argmax_with_ties(scores, rel[remaining], bundle.candidate_ids, remaining)
        chosen = int(remaining[pick])
        diagnostics.append(
            StepDiagnostic(
                step=step,
                chosen_id=bundle.candidate_ids[chosen],
                objective=float(scores[pick]),
                gain=float(scores[pick]),
                logdets={},
            )
        )
        selected.append(chosen)
        remaining = remaining[remaining != chosen]
    return _as_ranked(bundle, selected, diagnostics)


def kdpp_rerank(bundle: SimilarityBundle, config: BaselineConfig) -> RankedList:
    """Greedy MAP selection for a single-kernel DPP.

    The kernel is the attribute's similarity matrix (single-source) or the
    signed weighted average of all attribute matrices (multi-source), SPD
    repaired either way. Scores are evaluated in the log domain:
    ``2 * alpha * sum(r) + log det(S_Y)``.
    """
    n, k = _check_k(bundle, config)
    alpha = relevance_alpha(config.lambda_or_theta)
    kernel = _kdpp_kernel(bundle, config)
    rel = bundle.relevance_diag

    selected: list[int] = []
    remaining = np.arange(n)
    diagnostics: list[StepDiagnostic] = []
    prev = 0.0
    for step in range(k):
        m = len(selected) + 1
        idx_rows = np.empty((len(remaining), m), dtype=np.intp)
        idx_rows[:, :-1] = np.array(selected, dtype=np.intp)
        idx_rows[:, -1] = remaining
        stack = kernel[idx_rows[:, :, None], idx_rows[:, None, :]]
        try:
            chols = np.linalg.cholesky(stack)
            logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=-2, axis2=-1)), axis=-1)
        except np.linalg.LinAlgError:
            w = np.linalg.eigvalsh(stack)
            logdets = np.sum(np.log(np.maximum(w, DEFAULT_EIG_FLOOR)), axis=-1)
        scores = 2.0 * alpha * rel[idx_rows].sum(axis=1) + logdets
        pick = _argmax_with_ties(scores, rel[remaining], bundle.candidate_ids, remaining)
        chosen = int(remaining[pick])
        objective = float(scores[pick])
        diagnostics.append(
            StepDiagnostic(
                step=step,
                chosen_id=bundle.candidate_ids[chosen],
                objective=objective,
                gain=objective - prev,
                logdets={"kernel": float(logdets[pick])},
            )
        )
        prev = objective
        selected.append(chosen)
        remaining = remaining[remaining != chosen]
    return _as_ranked(bundle, selected, diagnostics)


def clustering_rerank(bundle: SimilarityBundle, config: BaselineConfig) -> RankedList:
    """Cluster candidates on their (weighted, concatenated) features, rank
    clusters by mean relevance, and select round-robin across clusters
    (increase mode) or cluster by cluster (mixed mode)."""
    n, k = _check_k(bundle, config)
    if config.num_clusters > n:
        raise ValidationError(f"num_clusters ({config.num_clusters}) exceeds candidates ({n})")
    feats = _concat_features(bundle, config)
    labels, _ = kmeans(feats, config.num_clusters, bundle.relevance_diag)
    order = ranked_from_clusters(labels, bundle.relevance_diag, bundle.candidate_ids, k, config.mode)
    diagnostics = [
        StepDiagnostic(
            step=s,
            chosen_id=bundle.candidate_ids[i],
            objective=float(bundle.relevance_diag[i]),
            gain=float(bundle.relevance_diag[i]),
            logdets={},
        )
        for s, i in enumerate(order)
    ]
    return _as_ranked(bundle, order, diagnostics)


def kmeans(features: np.ndarray, n_clusters: int, relevance: np.ndarray):
    """Lloyd's algorithm with deterministic farthest-point seeding.

    The first centroid is the highest-relevance item; each further centroid
    is the point farthest from all chosen so far. Iterates until centroid
    movement falls below ``KMEANS_TOL`` or ``KMEANS_MAX_ITER`` passes.
    Returns (labels, centers). Empty clusters keep their previous centroid.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValidationError(f"n_clusters must lie in [1, {n}], got {n_clusters}")

    seeds = [int(np.argmax(relevance))]
    min_dist = np.linalg.norm(x - x[seeds[0]], axis=1)
    while len(seeds) < n_clusters:
        nxt = int(np.argmax(min_dist))
        seeds.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(x - x[nxt], axis=1))
    centers = x[seeds].copy()

    labels = np.zeros(n, dtype=np.intp)
    for _ in range(KMEANS_MAX_ITER):
        dists = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        for c in range(n_clusters):
            members = labels == c
            if np.any(members):
                new_centers[c] = x[members].mean(axis=0)
        movement = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if movement < KMEANS_TOL:
            break
    return labels, centers


def ranked_from_clusters(labels, relevance, ids, k: int, mode: str) -> list[int]:
    """Selection order given cluster labels.

    Clusters are ranked by mean relevance (descending). ``increase`` mode
    rotates over clusters in rank order, taking each cluster's next most
    relevant item and skipping exhausted clusters; any other mode exhausts
    each cluster before moving to the next.
    """
    labels = np.asarray(labels)
    rel = np.asarray(relevance, dtype=np.float64)
    clusters = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = sorted(members, key=lambda i: (-rel[i], ids[i]))
        clusters.append((-float(rel[members].mean() if len(members) else -math.inf), int(c), list(members)))
    clusters.sort(key=lambda t: (t[0], t[1]))
    queues = [m for _, _, m in clusters]

    order: list[int] = []
    if mode == "increase":
        while len(order) < k:
            progressed = False
            for q in queues:
                if q and len(order) < k:
                    order.append(q.pop(0))
                    progressed = True
            if not progressed:
                break
    else:
        for q in queues:
            for i in q:
                if len(order) >= k:
                    break
                order.append(i)
    return order


def _check_k(bundle: SimilarityBundle, config: BaselineConfig):
    n = len(bundle)
    if config.k > n:
        raise ValidationError(f"k={config.k} exceeds the {n} available candidates")
    return n, config.k


def _as_ranked(bundle, selected, diagnostics) -> RankedList:
    ids = tuple(bundle.candidate_ids[i] for i in selected)
    return RankedList(ids=ids, diagnostics=tuple(diagnostics))


def _mmr_similarity(bundle: SimilarityBundle, config: BaselineConfig) -> np.ndarray:
    specs = normalize_weights(config.specs)
    if len(specs) == 1:
        spec = specs[0]
        return spec.direction * bundle.sim_for(spec.name)
    return inverse_distance_similarity(_concat_features(bundle, config))


def _kdpp_kernel(bundle: SimilarityBundle, config: BaselineConfig) -> np.ndarray:
    specs = normalize_weights(config.specs)
    if len(specs) == 1:
        kernel = specs[0].direction * bundle.sim_for(specs[0].name)
    else:
        kernel = sum(s.direction * s.weight * bundle.sim_for(s.name) for s in specs)
    return ensure_spd(kernel, floor=DEFAULT_EIG_FLOOR)


def _concat_features(bundle: SimilarityBundle, config: BaselineConfig) -> np.ndarray:
    specs = normalize_weights(config.specs)
    parts = []
    for spec in specs:
        if spec.name not in bundle.embeddings:
            raise ValidationError(f"bundle has no embeddings for attribute {spec.name!r}")
        parts.append(spec.direction * spec.weight * bundle.embeddings[spec.name])
    return np.concatenate(parts, axis=1)
