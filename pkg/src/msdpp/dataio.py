"""File formats, task configuration, and synthetic instance generation.

Galleries and queries are newline-delimited JSON, one object per line, so
they stream and diff cleanly and any upstream retriever can produce them:

gallery line::

    {"id": "img0003", "appearance": [..floats..], "time_minutes": 812.5,
     "lat_deg": 35.1, "lon_deg": 139.7, "extra": {"name": [..floats..]}}

query line::

    {"query_id": "q0", "text": "...", "relevance": {"img0003": 0.71, ...},
     "relevant_ids": ["img0003", ...], "semantic_scores": {"img0003": 0.9}}

Only ``id``/``appearance`` and ``query_id``/``relevance`` are mandatory.
Floats are serialized at full round-trip precision, so write-then-load is
bit-exact. The task config is a single JSON document validated against the
engine and baseline parameter contracts on load.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attributes import AttributeSpec, ImageRecord
from .baselines import BaselineConfig
from .core import RerankConfig
from .errors import ValidationError

_GALLERY_KEYS = {"id", "appearance", "time_minutes", "lat_deg", "lon_deg", "extra"}
_QUERY_KEYS = {"query_id", "text", "relevance", "relevant_ids", "semantic_scores"}
_CONFIG_KEYS = {
    "theta",
    "k",
    "top_n",
    "tn_mode",
    "attributes",
    "baseline",
    "sweep",
    "seed",
    "retrieval_metric",
    "time_full_circle",
}


@dataclass(frozen=True)
class Query:
    """One query: upstream relevance scores plus optional ground truth."""

    query_id: str
    relevance: dict[str, float]
    text: str | None = None
    relevant_ids: frozenset[str] = frozenset()
    semantic_scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.query_id:
            raise ValidationError("query_id must be non-empty")
        if not self.relevance:
            raise ValidationError(f"query {self.query_id!r}: relevance map is empty")
        for i, v in self.relevance.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValidationError(f"query {self.query_id!r}: non-finite relevance for {i!r}")


@dataclass(frozen=True)
class TaskConfig:
    """Validated contents of a task config document."""

    rerank: RerankConfig
    baseline: BaselineConfig | None = None
    weight_grid: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    theta_grid: tuple[float, ...] = (0.75, 0.8, 0.85, 0.9, 0.95)
    seed: int = 0
    retrieval_metric: str = "auto"
    time_full_circle: bool = False


def load_gallery(path: str | Path) -> list[ImageRecord]:
    """Parse a gallery file; errors cite the offending line."""
    records: list[ImageRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_ndjson(path):
        unknown = set(obj) - _GALLERY_KEYS
        if unknown:
            raise ValidationError(f"{path}:{lineno}: unknown gallery fields {sorted(unknown)}")
        if "id" not in obj or "appearance" not in obj:
            raise ValidationError(f"{path}:{lineno}: gallery record needs 'id' and 'appearance'")
        try:
            rec = ImageRecord(
                id=str(obj["id"]),
                appearance=np.asarray(obj["appearance"], dtype=np.float64),
                time_minutes=obj.get("time_minutes"),
                lat_deg=obj.get("lat_deg"),
                lon_deg=obj.get("lon_deg"),
                extra={k: np.asarray(v, dtype=np.float64) for k, v in (obj.get("extra") or {}).items()},
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if rec.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    if not records:
        warnings.warn(f"gallery file {path} is empty", stacklevel=2)
    if records:
        dim = records[0].appearance.size
        for rec in records:
            if rec.appearance.size != dim:
                raise ValidationError(
                    f"{path}: record {rec.id!r} appearance dimension {rec.appearance.size} != {dim}"
                )
    return records


def load_queries(path: str | Path, gallery: list[ImageRecord] | None = None) -> list[Query]:
    """Parse a query file; optionally cross-validate ids against a gallery."""
    queries: list[Query] = []
    seen: set[str] = set()
    known = {r.id for r in gallery} if gallery is not None else None
    for lineno, obj in _iter_ndjson(path):
        unknown = set(obj) - _QUERY_KEYS
        if unknown:
            raise ValidationError(f"{path}:{lineno}: unknown query fields {sorted(unknown)}")
        if "query_id" not in obj or "relevance" not in obj:
            raise ValidationError(f"{path}:{lineno}: query record needs 'query_id' and 'relevance'")
        try:
            q = Query(
                query_id=str(obj["query_id"]),
                relevance={str(k): float(v) for k, v in obj["relevance"].items()},
                text=obj.get("text"),
                relevant_ids=frozenset(str(i) for i in obj.get("relevant_ids") or []),
                semantic_scores={str(k): float(v) for k, v in (obj.get("semantic_scores") or {}).items()},
            )
        except (ValidationError, TypeError, AttributeError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if q.query_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate query_id {q.query_id!r}")
        seen.add(q.query_id)
        if known is not None:
            for i in list(q.relevance) + list(q.relevant_ids) + list(q.semantic_scores):
                if i not in known:
                    raise ValidationError(f"{path}:{lineno}: unknown image id {i!r}")
        queries.append(q)
    return queries


def save_gallery(records: list[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {"id": rec.id, "appearance": rec.appearance.tolist()}
            if rec.time_minutes is not None:
                obj["time_minutes"] = rec.time_minutes
            if rec.lat_deg is not None:
                obj["lat_deg"] = rec.lat_deg
                obj["lon_deg"] = rec.lon_deg
            if rec.extra:
                obj["extra"] = {k: v.tolist() for k, v in rec.extra.items()}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def save_queries(queries: list[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj: dict = {"query_id": q.query_id, "relevance": q.relevance}
            if q.text is not None:
                obj["text"] = q.text
            if q.relevant_ids:
                obj["relevant_ids"] = sorted(q.relevant_ids)
            if q.semantic_scores:
                obj["semantic_scores"] = q.semantic_scores
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_task_config(path: str | Path) -> TaskConfig:
    """Load and validate a JSON task config document."""
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    return task_config_from_dict(obj, source=str(path))


def task_config_from_dict(obj: dict, source: str = "config") -> TaskConfig:
    if not isinstance(obj, dict):
        raise ValidationError(f"{source}: config must be a JSON object")
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"{source}: unknown config fields {sorted(unknown)}")
    attrs = obj.get("attributes")
    if not attrs:
        raise ValidationError(f"{source}: config needs a non-empty 'attributes' list")
    specs = tuple(
        AttributeSpec(
            name=a["name"],
            kind=a.get("kind", a["name"] if a["name"] in ("appearance", "time", "geo") else "generic"),
            direction=int(a.get("direction", 1)),
            weight=float(a.get("weight", 1.0)),
        )
        for a in attrs
    )
    rerank = RerankConfig(
        theta=float(obj.get("theta", 0.9)),
        specs=specs,
        k=int(obj.get("k", 20)),
        top_n=int(obj.get("top_n", 200)),
        tn_mode=obj.get("tn_mode", "off"),
    )
    baseline = None
    if obj.get("baseline"):
        b = obj["baseline"]
        baseline = BaselineConfig(
            method=b["method"],
            lambda_or_theta=float(b.get("lambda_or_theta", 0.5)),
            specs=specs,
            num_clusters=int(b.get("num_clusters", 40)),
            mode=b.get("mode", "increase"),
            k=rerank.k,
        )
    sweep = obj.get("sweep") or {}
    retrieval_metric = obj.get("retrieval_metric", "auto")
    if retrieval_metric not in ("auto", "map", "ncs_at_k"):
        raise ValidationError(f"{source}: retrieval_metric must be auto, map, or ncs_at_k")
    kwargs = {}
    if "weight_grid" in sweep:
        kwargs["weight_grid"] = tuple(float(w) for w in sweep["weight_grid"])
    if "theta_grid" in sweep:
        kwargs["theta_grid"] = tuple(float(t) for t in sweep["theta_grid"])
    return TaskConfig(
        rerank=rerank,
        baseline=baseline,
        seed=int(obj.get("seed", 0)),
        retrieval_metric=retrieval_metric,
        time_full_circle=bool(obj.get("time_full_circle", False)),
        **kwargs,
    )


@dataclass(frozen=True)
class SyntheticData:
    """Generated gallery, queries, and the ground-truth cluster labels."""

    records: list[ImageRecord]
    queries: list[Query]
    labels: np.ndarray

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        gpath, qpath = out / "gallery.ndjson", out / "queries.ndjson"
        save_gallery(self.records, gpath)
        save_queries(self.queries, qpath)
        return gpath, qpath


def gen_synthetic(
    seed: int,
    n_items: int,
    d_appearance: int = 16,
    clusters: int = 4,
    *,
    n_queries: int = 4,
    with_time: bool = True,
    with_geo: bool = True,
    time_spread_minutes: float = 45.0,
    geo_spread_deg: float = 3.0,
    appearance_noise: float = 0.3,
    center_scale: float = 0.75,
    relevance_noise: float = 0.05,
) -> SyntheticData:
    """Clustered synthetic retrieval instances, reproducible from the seed.

    Appearance vectors come from Gaussian blobs. Times and locations also
    concentrate around cluster anchors, but each attribute has its own
    independent partition of the items; otherwise appearance diversity and
    attribute diversity would select the same items and preference weights
    between them would have nothing to trade off. Query relevance is a
    noisy cosine similarity to a blob centroid, with the blob's members as
    the relevant set and the noise-free similarity as the semantic score.
    """
    if clusters < 1 or n_items < clusters:
        raise ValidationError(f"need n_items >= clusters >= 1, got {n_items}, {clusters}")
    if n_queries < 1:
        raise ValidationError("n_queries must be >= 1")
    for name, val in [
        ("time_spread_minutes", time_spread_minutes),
        ("geo_spread_deg", geo_spread_deg),
        ("appearance_noise", appearance_noise),
        ("center_scale", center_scale),
    ]:
        if not (math.isfinite(val) and val > 0):
            raise ValidationError(f"{name} must be finite and > 0, got {val}")

    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(clusters, d_appearance))
    # cluster time/geo anchors are stratified so blobs occupy distinct bands
    time_anchor = (np.arange(clusters) + rng.uniform(0.2, 0.8, clusters)) * (1440.0 / clusters)
    lat_anchor = rng.uniform(-55.0, 55.0, clusters)
    lon_anchor = (np.arange(clusters) + rng.uniform(0.2, 0.8, clusters)) * (360.0 / clusters) - 180.0

    labels = np.sort(rng.integers(0, clusters, size=n_items))
    # guarantee every cluster appears
    labels[:clusters] = np.arange(clusters)
    labels = np.sort(labels)
    time_labels = rng.integers(0, clusters, size=n_items)
    geo_labels = rng.integers(0, clusters, size=n_items)

    feats = centers[labels] + rng.normal(0.0, appearance_noise, size=(n_items, d_appearance))
    times = (time_anchor[time_labels] + rng.normal(0.0, time_spread_minutes, n_items)) % 1440.0
    lats = np.clip(lat_anchor[geo_labels] + rng.normal(0.0, geo_spread_deg, n_items), -90.0, 90.0)
    lons = ((lon_anchor[geo_labels] + rng.normal(0.0, geo_spread_deg, n_items) + 180.0) % 360.0) - 180.0
    lons = np.where(lons == -180.0, 180.0, lons)

    width = max(4, len(str(n_items)))
    ids = [f"img{i:0{width}d}" for i in range(n_items)]
    records = [
        ImageRecord(
            id=ids[i],
            appearance=feats[i],
            time_minutes=float(times[i]) if with_time else None,
            lat_deg=float(lats[i]) if with_geo else None,
            lon_deg=float(lons[i]) if with_geo else None,
        )
        for i in range(n_items)
    ]

    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    queries = []
    for qi in range(n_queries):
        target = qi % clusters
        qvec = centers[target] + rng.normal(0.0, 0.1 * center_scale, d_appearance)
        qvec /= np.linalg.norm(qvec)
        cos = unit @ qvec
        noisy = cos + rng.normal(0.0, relevance_noise, n_items)
        queries.append(
            Query(
                query_id=f"q{qi}",
                text=f"synthetic query targeting blob {target}",
                relevance={ids[i]: float(noisy[i]) for i in range(n_items)},
                relevant_ids=frozenset(ids[i] for i in range(n_items) if labels[i] == target),
                semantic_scores={ids[i]: float(max(cos[i], 0.0)) for i in range(n_items)},
            )
        )
    return SyntheticData(records=records, queries=queries, labels=labels)


def _iter_ndjson(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj
