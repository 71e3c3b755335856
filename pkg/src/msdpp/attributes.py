"""Attribute embeddings, similarity matrices, and candidate-set bundles.

A gallery item carries an appearance feature vector and optional metadata
attributes (time of day, geographic coordinates, arbitrary named vectors).
Each attribute used by a task is embedded into a small Euclidean vector and
turned into an inverse-distance similarity matrix over the query's candidate
set. The bundle groups those matrices with the raw relevance scores so the
re-ranking engines can work from one immutable snapshot per query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .spdlinalg import DEFAULT_EIG_FLOOR, ensure_spd

ATTRIBUTE_KINDS = ("appearance", "time", "geo", "generic")
MINUTES_PER_DAY = 1440.0


@dataclass(frozen=True)
class ImageRecord:
    """One gallery item: id, appearance feature, optional metadata attributes."""

    id: str
    appearance: np.ndarray
    time_minutes: float | None = None
    lat_deg: float | None = None
    lon_deg: float | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id must be a non-empty string")
        vec = np.asarray(self.appearance, dtype=np.float64)
        if vec.ndim == 2:
            # multi-vector features collapse to their mean
            vec = vec.mean(axis=0)
        if vec.ndim != 1 or vec.size == 0:
            raise ValidationError(f"record {self.id!r}: appearance must be a non-empty vector")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"record {self.id!r}: appearance has non-finite entries")
        object.__setattr__(self, "appearance", vec)
        if self.time_minutes is not None and not 0.0 <= self.time_minutes < MINUTES_PER_DAY:
            raise ValidationError(
                f"record {self.id!r}: time_minutes {self.time_minutes} outside [0, 1440)"
            )
        if (self.lat_deg is None) != (self.lon_deg is None):
            raise ValidationError(f"record {self.id!r}: lat_deg and lon_deg must come together")
        if self.lat_deg is not None:
            _check_latlon(self.lat_deg, self.lon_deg, self.id)
        clean_extra = {}
        for name, val in (self.extra or {}).items():
            arr = np.asarray(val, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
                raise ValidationError(f"record {self.id!r}: extra vector {name!r} is invalid")
            clean_extra[name] = arr
        object.__setattr__(self, "extra", clean_extra)


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute's role in a task: what it is, which way to push, how hard.

    ``direction`` is +1 to increase the attribute's diversity, -1 to decrease
    it. ``weight`` is the user preference; weights across the active task are
    normalized to sum to 1 before inference (see ``normalize_weights``).
    """

    name: str
    kind: str
    direction: int
    weight: float

    def __post_init__(self):
        if not self.name:
            raise ValidationError("attribute name must be non-empty")
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValidationError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.direction not in (-1, 1):
            raise ValidationError(f"attribute {self.name!r}: direction must be -1 or +1")
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise ValidationError(f"attribute {self.name!r}: weight must be finite and >= 0")


def normalize_weights(specs: tuple[AttributeSpec, ...]) -> tuple[AttributeSpec, ...]:
    """Rescale spec weights to sum to 1, preserving order and directions."""
    if not specs:
        raise ValidationError("at least one attribute spec is required")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate attribute names: {names}")
    total = sum(s.weight for s in specs)
    if total <= 0.0:
        raise ValidationError("attribute weights sum to 0; at least one must be positive")
    return tuple(replace(s, weight=s.weight / total) for s in specs)


@dataclass(frozen=True)
class SimilarityBundle:
    """Per-query snapshot: candidate ids, per-attribute similarity matrices,
    raw relevance scores, and the embeddings the matrices were built from.

    ``sims`` pairs each attribute spec (as configured at build time) with its
    SPD-repaired similarity matrix over the candidates. ``relevance_diag``
    holds the raw upstream scores in candidate order. ``alpha`` records the
    relevance trade-off used when the bundle was built; inference recomputes
    it from the active config.
    """

    candidate_ids: tuple[str, ...]
    sims: tuple[tuple[AttributeSpec, np.ndarray], ...]
    relevance_diag: np.ndarray
    alpha: float
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.candidate_ids)

    def sim_for(self, name: str) -> np.ndarray:
        for spec, mat in self.sims:
            if spec.name == name:
                return mat
        raise ValidationError(f"bundle has no similarity matrix for attribute {name!r}")

    def index_of(self, image_id: str) -> int:
        try:
            return self.candidate_ids.index(image_id)
        except ValueError:
            raise ValidationError(f"id {image_id!r} is not in the candidate set") from None


def embed_time(time_minutes: float, *, full_circle: bool = False) -> np.ndarray:
    """Embed a time of day as a point on the unit circle.

    The angle is ``z = (t / 1440) * pi``, so a full day spans a half circle;
    ``full_circle=True`` uses ``2*pi`` instead (00:00 and 23:59 nearly
    coincide rather than sitting nearly antipodal).
    """
    if not 0.0 <= time_minutes < MINUTES_PER_DAY:
        raise ValidationError(f"time_minutes {time_minutes} outside [0, 1440)")
    span = 2.0 * math.pi if full_circle else math.pi
    z = (time_minutes / MINUTES_PER_DAY) * span
    return np.array([math.cos(z), math.sin(z)], dtype=np.float64)


def embed_geo(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Embed latitude/longitude (degrees) as a unit vector on the sphere."""
    _check_latlon(lat_deg, lon_deg)
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    return np.array(
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)],
        dtype=np.float64,
    )


def inverse_distance_similarity(embeddings: np.ndarray) -> np.ndarray:
    """Raw similarity matrix ``1 / (||e_i - e_j|| + 1)``, unit diagonal.

    This is the pre-repair matrix: symmetric, entries in (0, 1], but not
    necessarily positive definite (duplicate rows make it singular).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValidationError(f"expected a non-empty 2-D embedding array, got shape {emb.shape}")
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    sim = 1.0 / (dist + 1.0)
    np.fill_diagonal(sim, 1.0)
    return 0.5 * (sim + sim.T)


def similarity_matrix(embeddings: np.ndarray, *, floor_scale: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Inverse-distance similarity, repaired to SPD.

    The eigenvalue floor is ``floor_scale`` relative to the mean diagonal
    entry (exactly ``floor_scale`` for the unit-diagonal raw matrix).
    """
    raw = inverse_distance_similarity(embeddings)
    floor = floor_scale * float(np.trace(raw)) / raw.shape[0]
    return ensure_spd(raw, floor=floor)


def relevance_alpha(theta: float) -> float:
    """Trade-off scale ``alpha = theta / (2 (1 - theta))`` for ``theta`` in (0, 1)."""
    if not (isinstance(theta, (int, float)) and math.isfinite(theta) and 0.0 < theta < 1.0):
        raise ValidationError(f"theta must lie in the open interval (0, 1), got {theta}")
    return theta / (2.0 * (1.0 - theta))


def attribute_embedding(record: ImageRecord, spec: AttributeSpec, *, full_circle_time: bool = False) -> np.ndarray:
    """Embedded vector of one attribute for one record.

    Raises ``ValidationError`` naming the record and attribute when the
    record lacks the attribute.
    """
    if spec.kind == "appearance":
        return record.appearance
    if spec.kind == "time":
        if record.time_minutes is None:
            raise ValidationError(f"record {record.id!r} is missing attribute {spec.name!r} (time)")
        return embed_time(record.time_minutes, full_circle=full_circle_time)
    if spec.kind == "geo":
        if record.lat_deg is None or record.lon_deg is None:
            raise ValidationError(f"record {record.id!r} is missing attribute {spec.name!r} (geo)")
        return embed_geo(record.lat_deg, record.lon_deg)
    if spec.name not in record.extra:
        raise ValidationError(f"record {record.id!r} is missing attribute {spec.name!r}")
    return record.extra[spec.name]


def build_bundle(
    gallery: list[ImageRecord],
    scores: dict[str, float],
    specs: tuple[AttributeSpec, ...] | list[AttributeSpec],
    top_n: int,
    *,
    theta: float = 0.5,
    full_circle_time: bool = False,
) -> SimilarityBundle:
    """Prefilter the gallery to the top ``top_n`` ids by relevance and build
    one similarity matrix per attribute spec over that candidate set.

    Candidates are ordered by descending score with ties broken by ascending
    id; the ordering and every matrix are deterministic functions of the
    inputs. Appearance dimensions must agree across the gallery.
    """
    specs = tuple(specs)
    if not specs:
        raise ValidationError("at least one attribute spec is required")
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    if not gallery:
        raise ValidationError("gallery is empty")

    dim = gallery[0].appearance.size
    by_id: dict[str, ImageRecord] = {}
    for rec in gallery:
        if rec.appearance.size != dim:
            raise ValidationError(
                f"record {rec.id!r}: appearance dimension {rec.appearance.size} != {dim}"
            )
        if rec.id in by_id:
            raise ValidationError(f"duplicate record id {rec.id!r}")
        by_id[rec.id] = rec

    missing = [rec.id for rec in gallery if rec.id not in scores]
    if missing:
        raise ValidationError(f"scores missing for ids: {missing[:5]}")
    for rec in gallery:
        if not math.isfinite(scores[rec.id]):
            raise ValidationError(f"non-finite relevance score for id {rec.id!r}")

    order = sorted(by_id, key=lambda i: (-scores[i], i))
    candidate_ids = tuple(order[: min(top_n, len(order))])

    embeddings: dict[str, np.ndarray] = {}
    sims = []
    for spec in specs:
        emb = np.stack(
            [
                attribute_embedding(by_id[i], spec, full_circle_time=full_circle_time)
                for i in candidate_ids
            ]
        )
        embeddings[spec.name] = emb
        sims.append((spec, similarity_matrix(emb)))

    relevance = np.array([scores[i] for i in candidate_ids], dtype=np.float64)
    return SimilarityBundle(
        candidate_ids=candidate_ids,
        sims=tuple(sims),
        relevance_diag=relevance,
        alpha=relevance_alpha(theta),
        embeddings=embeddings,
    )


def _check_latlon(lat_deg: float, lon_deg: float, rec_id: str | None = None) -> None:
    ctx = f"record {rec_id!r}: " if rec_id else ""
    if not (math.isfinite(lat_deg) and -90.0 <= lat_deg <= 90.0):
        raise ValidationError(f"{ctx}lat_deg {lat_deg} outside [-90, 90]")
    if not (math.isfinite(lon_deg) and -180.0 < lon_deg <= 180.0):
        raise ValidationError(f"{ctx}lon_deg {lon_deg} outside (-180, 180]")
