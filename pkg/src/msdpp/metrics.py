"""Evaluation metrics: Vendi-score diversity, retrieval accuracy, and the
preference reflection score.

The Vendi score of a similarity matrix K over n items is the exponential of
the order-q Renyi entropy of the eigenvalues of K/n; it behaves like an
effective number of distinct items, from 1 (all identical) to n (all
orthogonal). Per-attribute scores are normalized by the list length and
flipped for diversity-decreasing attributes, then combined by harmonic mean
into a single diversity metric (DM). The overall metric is the harmonic
mean of DM with a retrieval metric (MAP or NCS@k).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attributes import AttributeSpec, SimilarityBundle
from .core import RankedList
from .errors import ValidationError

DEFAULT_VENDI_Q = 0.1


@dataclass(frozen=True)
class EvalReport:
    """Metric values for one ranked list or one aggregated run."""

    retrieval_kind: str
    retrieval_value: float | None
    per_attribute_vs: dict[str, float]
    dm: float
    hm: float | None
    prs: float | None = None


def vendi_score(k_sub: np.ndarray, q: float = DEFAULT_VENDI_Q) -> float:
    """Effective number of distinct items in a similarity matrix.

    ``(sum_i lambda_i^q)^(1/(1-q))`` over the nonnegative eigenvalues of
    ``k_sub / n``. Requires ``q > 0`` and ``q != 1``; zero eigenvalues
    contribute zero, the standard Renyi-entropy limit.
    """
    if not (q > 0.0 and q != 1.0):
        raise ValidationError(f"q must be > 0 and != 1, got {q}")
    k = np.asarray(k_sub, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {k.shape}")
    n = k.shape[0]
    lam = np.linalg.eigvalsh(0.5 * (k + k.T) / n)
    lam = lam[lam > 0.0]
    return float(np.sum(lam**q) ** (1.0 / (1.0 - q)))


def diversity_metric(
    ranked: RankedList | list[str] | tuple[str, ...],
    bundle: SimilarityBundle,
    specs: tuple[AttributeSpec, ...],
    k: int,
) -> tuple[dict[str, float], float]:
    """Per-attribute normalized Vendi scores and their harmonic mean.

    For each attribute the Vendi score of the top-k similarity submatrix is
    normalized to ``vs / k`` (direction +1) or ``1 - vs / k`` (direction -1),
    so higher is always better for the configured task.
    """
    ids = ranked.ids if isinstance(ranked, RankedList) else tuple(ranked)
    if len(ids) < k:
        raise ValidationError(f"ranked list has {len(ids)} items, need at least k={k}")
    idx = np.array([bundle.index_of(i) for i in ids[:k]], dtype=np.intp)

    per_attribute: dict[str, float] = {}
    for spec in specs:
        sub = bundle.sim_for(spec.name)[np.ix_(idx, idx)]
        vs = vendi_score(sub)
        normalized = vs / k
        per_attribute[spec.name] = normalized if spec.direction == 1 else 1.0 - normalized
    return per_attribute, harmonic_mean_many(list(per_attribute.values()))


def mean_average_precision(
    rankings: list[list[str] | tuple[str, ...]],
    relevant: list[set[str] | frozenset[str]],
) -> float:
    """Mean over queries of average precision along each ranking.

    AP divides by ``min(|relevant|, len(ranking))`` so a perfect truncated
    list scores 1. Queries with no relevant ids are excluded with a warning.
    """
    if len(rankings) != len(relevant):
        raise ValidationError("rankings and relevant sets must align")
    values = []
    for qi, (ranking, rel) in enumerate(zip(rankings, relevant)):
        if not rel:
            warnings.warn(f"query #{qi} has no relevant ids; excluded from MAP", stacklevel=2)
            continue
        hits = 0
        precision_sum = 0.0
        for pos, item in enumerate(ranking, start=1):
            if item in rel:
                hits += 1
                precision_sum += hits / pos
        values.append(precision_sum / min(len(rel), len(ranking)))
    if not values:
        raise ValidationError("no queries with relevant ids; MAP is undefined")
    return float(np.mean(values))


def ncs_at_k(
    ranking: list[str] | tuple[str, ...], semantic_scores: dict[str, float], k: int = 10
) -> float:
    """Ratio of the semantic score retrieved in the top-k to the best
    achievable top-k score. Defined as 0 when every score is 0."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if any(v < 0 for v in semantic_scores.values()):
        raise ValidationError("semantic scores must be >= 0")
    retrieved = sum(semantic_scores.get(i, 0.0) for i in ranking[:k])
    ceiling = sum(sorted(semantic_scores.values(), reverse=True)[:k])
    if ceiling == 0.0:
        return 0.0
    return retrieved / ceiling


def harmonic_mean(x: float, y: float) -> float:
    """``2xy / (x + y)``; 0 when either input is 0."""
    if x < 0 or y < 0:
        raise ValidationError(f"harmonic_mean requires nonnegative inputs, got ({x}, {y})")
    if x + y == 0.0:
        return 0.0
    return 2.0 * x * y / (x + y)


def harmonic_mean_many(values: list[float]) -> float:
    """Harmonic mean of any number of nonnegative values; 0 if any is 0."""
    if not values:
        raise ValidationError("harmonic_mean_many needs at least one value")
    if any(v < 0 for v in values):
        raise ValidationError("harmonic mean requires nonnegative inputs")
    if any(v == 0.0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def prs(
    div_values: list[float] | np.ndarray,
    weights: list[float] | np.ndarray,
    *,
    mean_slope: bool = False,
) -> float:
    """Preference reflection score: summed slopes of min-max-normalized
    diversity against the preference weight across a sweep.

    Consecutive equal weights contribute nothing. A constant diversity
    series has no spread to normalize and scores 0. ``mean_slope=True``
    divides by the number of intervals; this variant is a convenience for
    cross-sweep comparison, not part of the reference definition.
    """
    d = np.asarray(div_values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if d.shape != w.shape or d.ndim != 1 or d.size < 2:
        raise ValidationError("div_values and weights must be equal-length 1-D with >= 2 points")
    dw = np.diff(w)
    if np.any(dw < 0) or not np.any(dw > 0):
        raise ValidationError("weights must be non-decreasing with at least one strict increase")

    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        return 0.0
    norm = (d - lo) / (hi - lo)

    total = 0.0
    for j in range(1, d.size):
        if w[j] > w[j - 1]:
            total += (norm[j] - norm[j - 1]) / (w[j] - w[j - 1])
    if mean_slope:
        total /= d.size - 1
    return float(total)
