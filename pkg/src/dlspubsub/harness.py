"""Seeded workload generation, the brute-force matching oracle and FPR measurement."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cbf import CBFParams, CountingBloomFilter
from .errors import SchemaError
from .labels import (
    NUMERIC,
    ContentSchema,
    Subscription,
    event_labels,
    labels_for_boxes,
    normalize_predicate,
)

UNIFORM = "uniform"
ZIPF = "zipf"
MAX_ZIPF_SUPPORT = 1 << 26


@dataclass(frozen=True)
class WorkloadSpec:
    """How to draw subscriptions and events.

    ``max_interval_len`` of ``None`` means one eighth of each domain width.
    """

    distribution: str = UNIFORM
    n_subscriptions: int = 0
    n_events: int = 0
    max_interval_len: Union[None, int, Tuple[int, ...]] = None
    seed: int = 0
    zipf_s: float = 1.0

    def __post_init__(self) -> None:
        if self.distribution not in (UNIFORM, ZIPF):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.n_subscriptions < 0 or self.n_events < 0:
            raise ValueError("workload sizes must be non-negative")
        if self.zipf_s <= 0:
            raise ValueError("zipf exponent must be positive")
        lens = self.max_interval_len
        if lens is not None and min(np.atleast_1d(lens)) < 1:
            raise ValueError("max_interval_len must be at least 1")

    def interval_lengths(self, schema: ContentSchema) -> List[int]:
        if self.max_interval_len is None:
            return [max(1, dim.width // 8) for dim in schema.dims]
        if isinstance(self.max_interval_len, int):
            return [self.max_interval_len] * schema.d
        if len(self.max_interval_len) != schema.d:
            raise ValueError("one max_interval_len per dimension expected")
        return list(self.max_interval_len)


@dataclass
class Boxes:
    """``n`` closed integer rectangles stored as ``(n, d)`` bound arrays."""

    lows: np.ndarray
    highs: np.ndarray

    def __len__(self) -> int:
        return len(self.lows)

    def to_subscriptions(self, schema: ContentSchema) -> List[Subscription]:
        return [Subscription.box(schema, list(zip(lo, hi)))
                for lo, hi in zip(self.lows.tolist(), self.highs.tolist())]

    def labels(self, schema: ContentSchema, app_id: int = 0) -> List[Tuple[int, ...]]:
        return labels_for_boxes(schema, self.lows, self.highs, app_id)

    def subset(self, idx) -> "Boxes":
        return Boxes(self.lows[idx], self.highs[idx])


def _numeric_only(schema: ContentSchema) -> None:
    if any(dim.kind != NUMERIC for dim in schema.dims):
        raise SchemaError("workload generation supports numeric dimensions only")


@lru_cache(maxsize=8)
def _zipf_cdf(n: int, s: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    cdf = np.cumsum(weights)
    return cdf / cdf[-1]


def zipf_ranks(rng: np.random.Generator, n_values: int, s: float, size) -> np.ndarray:
    """Ranks in ``1..n_values`` with ``P(r) ~ r**-s`` via inverse CDF."""
    if n_values > MAX_ZIPF_SUPPORT:
        raise SchemaError(f"zipf support of {n_values} values is too large to tabulate")
    cdf = _zipf_cdf(n_values, float(s))
    ranks = np.searchsorted(cdf, rng.random(size), side="right") + 1
    return np.minimum(ranks, n_values)


def _draw_values(rng, spec: WorkloadSpec, schema: ContentSchema, n: int) -> np.ndarray:
    out = np.empty((n, schema.d), dtype=np.int64)
    for j, dim in enumerate(schema.dims):
        if spec.distribution == UNIFORM:
            out[:, j] = rng.integers(dim.lower, dim.upper, size=n, endpoint=True)
        else:
            out[:, j] = dim.lower + zipf_ranks(rng, dim.width, spec.zipf_s, n) - 1
    return out


def gen_subscription_boxes(spec: WorkloadSpec, schema: ContentSchema) -> Boxes:
    _numeric_only(schema)
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.n_subscriptions
    lows = _draw_values(rng, spec, schema, n)
    lengths = np.empty_like(lows)
    for j, max_len in enumerate(spec.interval_lengths(schema)):
        lengths[:, j] = rng.integers(1, max_len, size=n, endpoint=True)
    uppers = np.array([dim.upper for dim in schema.dims], dtype=np.int64)
    highs = np.minimum(lows + lengths, uppers)
    return Boxes(lows, highs)


def gen_subscriptions(spec: WorkloadSpec, schema: ContentSchema) -> List[Subscription]:
    return gen_subscription_boxes(spec, schema).to_subscriptions(schema)


def gen_event_array(spec: WorkloadSpec, schema: ContentSchema) -> np.ndarray:
    _numeric_only(schema)
    rng = np.random.default_rng([spec.seed, 1])
    return _draw_values(rng, spec, schema, spec.n_events)


def gen_events(spec: WorkloadSpec, schema: ContentSchema) -> List[Tuple[int, ...]]:
    return [tuple(row) for row in gen_event_array(spec, schema).tolist()]


@dataclass
class OracleIndex:
    """Flat list of normalised rectangles, scanned linearly."""

    lows: np.ndarray
    highs: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_boxes(cls, boxes: Boxes, ids: Optional[Sequence[int]] = None) -> "OracleIndex":
        ids = np.arange(len(boxes)) if ids is None else np.asarray(ids)
        return cls(np.asarray(boxes.lows, dtype=np.int64), np.asarray(boxes.highs, dtype=np.int64), ids)

    @classmethod
    def from_subscriptions(cls, schema: ContentSchema, subs: Sequence[Subscription],
                           ids: Optional[Sequence[int]] = None) -> "OracleIndex":
        _numeric_only(schema)
        lows = np.array([[d.lower for d in schema.dims]] * len(subs), dtype=np.int64).reshape(-1, schema.d)
        highs = np.array([[d.upper for d in schema.dims]] * len(subs), dtype=np.int64).reshape(-1, schema.d)
        for i, s in enumerate(subs):
            for pred in s.predicates:
                j = schema.dim_index(pred.attr)
                p = normalize_predicate(pred, schema.dims[j])
                lows[i, j], highs[i, j] = p.low, p.high
        return cls.from_boxes(Boxes(lows, highs), ids)

    def __len__(self) -> int:
        return len(self.ids)

    def match_matrix(self, events) -> np.ndarray:
        """``(n_events, n_subs)`` boolean containment matrix."""
        ev = np.asarray(events, dtype=np.int64).reshape(-1, self.lows.shape[1] if self.lows.ndim == 2 else 1)
        if len(self) == 0:
            return np.zeros((len(ev), 0), dtype=bool)
        hit = np.ones((len(ev), len(self)), dtype=bool)
        for j in range(ev.shape[1]):
            col = ev[:, j:j + 1]
            hit &= (self.lows[None, :, j] <= col) & (col <= self.highs[None, :, j])
        return hit


def oracle_match(index: OracleIndex, event) -> np.ndarray:
    """Ids of every rectangle containing ``event`` (closed bounds)."""
    if len(index) == 0:
        return index.ids[:0]
    e = np.asarray(event, dtype=np.int64)
    hit = np.all((index.lows <= e) & (e <= index.highs), axis=1)
    return index.ids[hit]


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


@dataclass
class FPRResult:
    decisions: int
    negatives: int
    false_positives: int
    mapping_fps: int
    cbf_fps: int
    saturation_events: int = 0
    distinct_labels: int = 0
    inserted_labels: int = 0

    @property
    def total_fpr(self) -> float:
        return self.false_positives / self.decisions if self.decisions else 0.0

    @property
    def mapping_fpr(self) -> float:
        return self.mapping_fps / self.decisions if self.decisions else 0.0

    @property
    def cbf_fpr(self) -> float:
        return self.cbf_fps / self.decisions if self.decisions else 0.0

    def as_dict(self) -> Dict[str, float]:
        return {
            "decisions": self.decisions,
            "negatives": self.negatives,
            "false_positives": self.false_positives,
            "mapping_fps": self.mapping_fps,
            "cbf_fps": self.cbf_fps,
            "mapping_fpr": self.mapping_fpr,
            "cbf_fpr": self.cbf_fpr,
            "total_fpr": self.total_fpr,
            "distinct_labels": self.distinct_labels,
            "inserted_labels": self.inserted_labels,
            "saturation_events": self.saturation_events,
        }


def measure_fpr(schema: ContentSchema, subscriptions: Boxes, events, cbf_params: CBFParams,
                n_subscribers: int = 1, app_id: int = 0,
                label_sets: Optional[List[Tuple[int, ...]]] = None) -> FPRResult:
    """Single-broker false-positive accounting over (event, subscriber) decisions.

    Subscription ``i`` belongs to subscriber ``i % n_subscribers``; each
    subscriber owns one filter holding the labels of all its subscriptions.
    A decision is positive when the subscriber's filter reports the event
    label.  Rates are false positives over all decisions; each false
    positive is either a *mapping* one (label really in the
    subscriber's label sets) or a *cbf* one (it is not).
    """
    events = np.asarray(events, dtype=np.int64).reshape(-1, schema.d)
    if label_sets is None:
        label_sets = subscriptions.labels(schema, app_id)
    owner = np.arange(len(subscriptions)) % n_subscribers
    ev_labels = event_labels(schema, events, app_id)

    positive = np.zeros((len(events), n_subscribers), dtype=bool)
    mapped = np.zeros_like(positive)
    saturation = distinct = inserted = 0
    for s in range(n_subscribers):
        mine = [label_sets[i] for i in np.flatnonzero(owner == s)]
        flat = np.fromiter((l for ls in mine for l in ls), dtype=np.uint64)
        f = CountingBloomFilter(cbf_params)
        f.add_many(flat)
        saturation += f.saturation_events
        union = np.unique(flat)
        distinct += union.size
        inserted += flat.size
        positive[:, s] = f.query_many(ev_labels) >= 1
        mapped[:, s] = np.isin(ev_labels, union)

    truth = np.zeros_like(positive)
    index = OracleIndex.from_boxes(subscriptions)
    onehot = np.zeros((len(subscriptions), n_subscribers), dtype=np.int32)
    onehot[np.arange(len(subscriptions)), owner] = 1
    for sl in _chunks(len(events), max(1, 4_000_000 // max(1, len(subscriptions)))):
        truth[sl] = (index.match_matrix(events[sl]).astype(np.int32) @ onehot) > 0

    fp = positive & ~truth
    return FPRResult(
        decisions=int(positive.size),
        negatives=int((~truth).sum()),
        false_positives=int(fp.sum()),
        mapping_fps=int((fp & mapped).sum()),
        cbf_fps=int((fp & ~mapped).sum()),
        saturation_events=saturation,
        distinct_labels=distinct,
        inserted_labels=inserted,
    )
