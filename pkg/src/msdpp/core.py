"""Multi-source DPP objective and greedy top-K selection.

The model scores a candidate subset Y by

    log f(Y) = 2 * alpha * sum(r_j) + log det(expm(T(Y)))

where T(Y) is the unified tangent matrix: the weighted, signed sum of the
matrix logarithms of the per-attribute similarity submatrices. Because
``log det(expm(T)) == trace(T)`` identically, the log objective reduces to
the trace of the tangent, which is how it is evaluated here.

Tangent normalization (TN) rescales each attribute's tangent (mode ``tv``),
and optionally their weighted sum (mode ``tv_m``), to the Frobenius norm of
the relevance matrix's tangent. That keeps a single attribute's raw norm
from dominating the mix, so user weights act on comparable quantities.

Greedy selection appends, at each step, the candidate with the highest log
objective. With TN off the per-step scores collapse to weighted sums of
Cholesky log-determinants (no eigendecompositions), which is the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeSpec, SimilarityBundle, normalize_weights, relevance_alpha
from .errors import ValidationError
from .spdlinalg import DEFAULT_EIG_FLOOR, log_det

TN_MODES = ("off", "tv", "tv_m")

# Frobenius norms at or below this count as a zero tangent: the scale factor
# is defined as 0 and the term drops out instead of producing 0/0.
_ZERO_NORM = 1e-15


@dataclass(frozen=True)
class RerankConfig:
    """Inference-time parameters: trade-off theta, list length k, prefilter
    size, tangent-normalization mode, and the active attribute specs."""

    theta: float
    specs: tuple[AttributeSpec, ...]
    k: int = 20
    top_n: int = 200
    tn_mode: str = "off"

    def __post_init__(self):
        relevance_alpha(self.theta)  # validates the open interval
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.top_n < self.k:
            raise ValidationError(f"top_n ({self.top_n}) must be >= k ({self.k})")
        if self.tn_mode not in TN_MODES:
            raise ValidationError(f"tn_mode must be one of {TN_MODES}, got {self.tn_mode!r}")
        object.__setattr__(self, "specs", tuple(self.specs))
        normalize_weights(self.specs)  # validates names and weight sum

    def normalized_specs(self) -> tuple[AttributeSpec, ...]:
        return normalize_weights(self.specs)


@dataclass(frozen=True)
class StepDiagnostic:
    """What the greedy loop saw when it chose one item."""

    step: int
    chosen_id: str
    objective: float
    gain: float
    logdets: dict[str, float]
    tn_b: float | None = None
    tn_scales: dict[str, float] | None = None
    tn_sum_scale: float | None = None


@dataclass(frozen=True)
class RankedList:
    """Ordered selection with one diagnostic record per step."""

    ids: tuple[str, ...]
    diagnostics: tuple[StepDiagnostic, ...] = field(default=())

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("ranked ids must be distinct")
        if self.diagnostics and len(self.diagnostics) != len(self.ids):
            raise ValidationError("diagnostics length must equal the number of ids")


def unified_tangent(
    bundle: SimilarityBundle, subset: list[int] | np.ndarray, config: RerankConfig
) -> np.ndarray:
    """Tangent matrix of the unified similarity matrix for one subset.

    With TN off this is the plain weighted signed sum of the per-attribute
    matrix logs. Mode ``tv`` rescales each log to Frobenius norm
    ``b = ||logm R_sub||_F`` (R being the diagonal exp(alpha * r) relevance
    matrix); mode ``tv_m`` additionally rescales the sum back to norm ``b``.
    When ``b`` is 0 the normalization has no reference scale and the mode
    falls back to ``off`` for this subset.
    """
    idx = _check_subset(bundle, subset)
    specs = config.normalized_specs()
    alpha = relevance_alpha(config.theta)

    logs, norms, _ = _attribute_logs(bundle, specs, idx)
    b = _relevance_tangent_norm(bundle.relevance_diag[idx], alpha)

    mode = config.tn_mode if b > _ZERO_NORM else "off"
    if mode == "off":
        scales = np.ones(len(specs))
    else:
        scales = np.where(norms > _ZERO_NORM, b / np.where(norms > _ZERO_NORM, norms, 1.0), 0.0)

    total = np.zeros((len(idx), len(idx)))
    for spec, a, scale in zip(specs, logs, scales):
        total += spec.direction * spec.weight * scale * a
    if mode == "tv_m":
        total_norm = float(np.linalg.norm(total))
        if total_norm > _ZERO_NORM:
            total *= b / total_norm
    return total


def f_ms_log(
    bundle: SimilarityBundle, subset: list[int] | np.ndarray, config: RerankConfig
) -> float:
    """Log objective of one subset: relevance term plus the log-determinant
    of the unified similarity matrix (the trace of its tangent)."""
    idx = _check_subset(bundle, subset)
    alpha = relevance_alpha(config.theta)
    rel = 2.0 * alpha * float(np.sum(bundle.relevance_diag[idx]))
    return rel + float(np.trace(unified_tangent(bundle, idx, config)))


def f_ms_log_fast(
    bundle: SimilarityBundle, subset: list[int] | np.ndarray, config: RerankConfig
) -> float:
    """Cholesky-only evaluation of the log objective, valid with TN off.

    Uses the identity trace(logm S) == log det(S) per attribute, so no
    eigendecomposition is needed. Raises ``ValidationError`` when called
    with a tangent-normalization mode active, where the identity does not
    apply to the rescaled tangents.
    """
    if config.tn_mode != "off":
        raise ValidationError("f_ms_log_fast requires tn_mode='off'")
    idx = _check_subset(bundle, subset)
    specs = config.normalized_specs()
    alpha = relevance_alpha(config.theta)
    total = 2.0 * alpha * float(np.sum(bundle.relevance_diag[idx]))
    for spec in specs:
        sub = bundle.sim_for(spec.name)[np.ix_(idx, idx)]
        total += spec.direction * spec.weight * log_det(sub, floor=DEFAULT_EIG_FLOOR)
    return total


def greedy_rerank(bundle: SimilarityBundle, config: RerankConfig) -> RankedList:
    """Greedy top-k selection under the multi-source objective.

    Each step evaluates the log objective of appending every remaining
    candidate and keeps the argmax; ties go to the higher raw relevance,
    then the lexicographically smaller id. Evaluation is batched over
    candidates but is numerically the same objective as ``f_ms_log``.
    """
    n = len(bundle)
    if config.k > n:
        raise ValidationError(f"k={config.k} exceeds the {n} available candidates")
    specs = config.normalized_specs()
    alpha = relevance_alpha(config.theta)
    svw = np.array([s.direction * s.weight for s in specs])
    mats = [bundle.sim_for(s.name) for s in specs]
    rel = bundle.relevance_diag

    selected: list[int] = []
    remaining = np.arange(n)
    diagnostics: list[StepDiagnostic] = []
    prev_objective = 0.0

    for step in range(config.k):
        # index rows: one candidate subset (selected + [j]) per remaining j
        m = len(selected) + 1
        idx_rows = np.empty((len(remaining), m), dtype=np.intp)
        idx_rows[:, :-1] = np.array(selected, dtype=np.intp)
        idx_rows[:, -1] = remaining

        rel_rows = rel[idx_rows]
        rel_sums = rel_rows.sum(axis=1)

        if config.tn_mode == "off":
            logdets = np.stack([_batched_chol_logdet(mat, idx_rows) for mat in mats])
            div = svw @ logdets
            scales = None
            sum_scales = None
            b = None
        else:
            logdets, div, b, scales, sum_scales = _batched_tn_scores(
                mats, idx_rows, rel_rows, svw, alpha, config.tn_mode
            )
        scores = 2.0 * alpha * rel_sums + div

        pick = _argmax_with_ties(scores, rel[remaining], bundle.candidate_ids, remaining)
        chosen = int(remaining[pick])
        objective = float(scores[pick])
        diagnostics.append(
            StepDiagnostic(
                step=step,
                chosen_id=bundle.candidate_ids[chosen],
                objective=objective,
                gain=objective - prev_objective,
                logdets={s.name: float(logdets[i, pick]) for i, s in enumerate(specs)},
                tn_b=None if b is None else float(b[pick]),
                tn_scales=None
                if scales is None
                else {s.name: float(scales[i, pick]) for i, s in enumerate(specs)},
                tn_sum_scale=None if sum_scales is None else float(sum_scales[pick]),
            )
        )
        prev_objective = objective
        selected.append(chosen)
        remaining = remaining[remaining != chosen]

    ids = tuple(bundle.candidate_ids[i] for i in selected)
    return RankedList(ids=ids, diagnostics=tuple(diagnostics))


def _check_subset(bundle: SimilarityBundle, subset) -> np.ndarray:
    idx = np.asarray(subset, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("subset must be a non-empty index sequence")
    if len(np.unique(idx)) != idx.size:
        raise ValidationError("subset indices must be distinct")
    if idx.min() < 0 or idx.max() >= len(bundle):
        raise ValidationError("subset index out of range")
    return idx


def _attribute_logs(bundle, specs, idx):
    """Matrix logs of the per-attribute submatrices, their Frobenius norms,
    and their traces (which equal the submatrix log-determinants)."""
    logs, norms, traces = [], [], []
    for spec in specs:
        sub = bundle.sim_for(spec.name)[np.ix_(idx, idx)]
        w, v = np.linalg.eigh(0.5 * (sub + sub.T))
        logw = np.log(np.maximum(w, DEFAULT_EIG_FLOOR))
        a = (v * logw) @ v.T
        logs.append(0.5 * (a + a.T))
        norms.append(float(np.sqrt(np.sum(logw * logw))))
        traces.append(float(np.sum(logw)))
    return logs, np.array(norms), np.array(traces)


def _relevance_tangent_norm(r_sub: np.ndarray, alpha: float) -> float:
    """Frobenius norm of logm(diag(exp(alpha * r))) == ||alpha * r||_2."""
    return float(alpha * np.sqrt(np.sum(r_sub * r_sub)))


def _batched_chol_logdet(mat: np.ndarray, idx_rows: np.ndarray) -> np.ndarray:
    """Log-determinants of the stacked submatrices mat[row, row], via Cholesky."""
    stack = mat[idx_rows[:, :, None], idx_rows[:, None, :]]
    try:
        chols = np.linalg.cholesky(stack)
        diags = np.diagonal(chols, axis1=-2, axis2=-1)
        return 2.0 * np.sum(np.log(diags), axis=-1)
    except np.linalg.LinAlgError:
        # repair margin exhausted on some candidate; eigenvalue fallback
        w = np.linalg.eigvalsh(stack)
        return np.sum(np.log(np.maximum(w, DEFAULT_EIG_FLOOR)), axis=-1)


def _batched_tn_scores(mats, idx_rows, rel_rows, svw, alpha, tn_mode):
    """Per-candidate diversity terms under tangent normalization.

    Returns (logdets, div, b, scales, sum_scales), each indexed by candidate
    row; ``logdets`` and ``scales`` have one row per attribute.
    """
    n_cand, m = idx_rows.shape
    n_att = len(mats)

    eig_w = np.empty((n_att, n_cand, m))
    eig_v = np.empty((n_att, n_cand, m, m))
    for i, mat in enumerate(mats):
        stack = mat[idx_rows[:, :, None], idx_rows[:, None, :]]
        w, v = np.linalg.eigh(stack)
        eig_w[i] = w
        eig_v[i] = v

    logw = np.log(np.maximum(eig_w, DEFAULT_EIG_FLOOR))
    norms = np.sqrt(np.sum(logw * logw, axis=-1))  # (n_att, n_cand)
    traces = np.sum(logw, axis=-1)
    logdets = traces

    b = alpha * np.sqrt(np.sum(rel_rows * rel_rows, axis=1))  # (n_cand,)
    tn_active = b > _ZERO_NORM
    scales = np.where(
        tn_active[None, :] & (norms > _ZERO_NORM),
        b[None, :] / np.where(norms > _ZERO_NORM, norms, 1.0),
        np.where(tn_active[None, :], 0.0, 1.0),
    )

    coeff = svw[:, None] * scales  # (n_att, n_cand)
    div = np.sum(coeff * traces, axis=0)
    sum_scales = None

    if tn_mode == "tv_m":
        # the summed tangent's Frobenius norm needs the actual matrices
        tangents = np.einsum("acij,acj,ackj->acik", eig_v, logw, eig_v)
        total = np.sum(coeff[:, :, None, None] * tangents, axis=0)
        total_norms = np.sqrt(np.sum(total * total, axis=(1, 2)))
        sum_scales = np.where(
            tn_active & (total_norms > _ZERO_NORM),
            b / np.where(total_norms > _ZERO_NORM, total_norms, 1.0),
            1.0,
        )
        div = sum_scales * div

    return logdets, div, b, scales, sum_scales


def _argmax_with_ties(scores, rel_remaining, candidate_ids, remaining) -> int:
    """Argmax over candidate scores; ties prefer higher relevance, then
    lexicographically smaller id."""
    best = np.max(scores)
    tied = np.flatnonzero(scores == best)
    if len(tied) > 1:
        best_rel = np.max(rel_remaining[tied])
        tied = tied[rel_remaining[tied] == best_rel]
    if len(tied) > 1:
        tied = sorted(tied, key=lambda t: candidate_ids[remaining[t]])
    return int(tied[0])
