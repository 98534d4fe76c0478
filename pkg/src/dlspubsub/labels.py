"""Content-space partitioning and range-label encoding.

The content space is a product of integer attribute domains.  Each numeric
dimension is cut into ``2**bits`` intervals, each discrete dimension maps its
admissible values to list positions.  A cell of the resulting grid is named
by a *range label*: the bit concatenation ``[app_id | idx_1 | ... | idx_d]``
with ``idx_1`` most significant after the namespace prefix.

Labels are plain non-negative ``int`` values.  A label set is a sorted tuple
of distinct labels, which is the order in which
:func:`subscription_to_labels` naturally produces them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EmptyRangeError,
    IndexOverflowError,
    LabelSetOverflowError,
    MalformedLabelError,
    OutOfDomainError,
    SchemaError,
    TypeMismatchError,
)

NUMERIC = "numeric"
DISCRETE = "discrete"

MAX_LABEL_BITS = 64
DEFAULT_LABEL_SET_CAP = 1 << 20

RangeLabel = int
LabelSet = Tuple[int, ...]
EventPoint = Tuple[object, ...]


@dataclass(frozen=True)
class DimensionSpec:
    """One attribute axis.

    Numeric dimensions span the inclusive integer domain ``[lower, upper]``;
    discrete dimensions enumerate their admissible ``values`` in order.
    """

    name: str
    bits: int
    lower: int = 0
    upper: int = 0
    values: Optional[Tuple[object, ...]] = None
    _positions: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not 1 <= self.bits <= 32:
            raise SchemaError(f"{self.name}: bits must be in [1, 32], got {self.bits}")
        g = 1 << self.bits
        if self.values is None:
            if self.upper < self.lower:
                raise SchemaError(f"{self.name}: upper bound below lower bound")
            if self.upper - self.lower + 1 < g:
                raise SchemaError(
                    f"{self.name}: domain width {self.upper - self.lower + 1} "
                    f"smaller than granule count {g}"
                )
        else:
            values = tuple(self.values)
            object.__setattr__(self, "values", values)
            if len(set(values)) != len(values):
                raise SchemaError(f"{self.name}: duplicate discrete values")
            if not values or len(values) > g:
                raise SchemaError(f"{self.name}: need 1..{g} discrete values, got {len(values)}")
            object.__setattr__(self, "lower", 0)
            object.__setattr__(self, "upper", len(values) - 1)
            object.__setattr__(self, "_positions", {v: i for i, v in enumerate(values)})

    @classmethod
    def numeric(cls, name: str, lower: int, upper: int, bits: int) -> "DimensionSpec":
        return cls(name=name, bits=bits, lower=lower, upper=upper)

    @classmethod
    def discrete(cls, name: str, values: Iterable[object], bits: int) -> "DimensionSpec":
        return cls(name=name, bits=bits, values=tuple(values))

    @property
    def kind(self) -> str:
        return NUMERIC if self.values is None else DISCRETE

    @property
    def granules(self) -> int:
        return 1 << self.bits

    @property
    def width(self) -> int:
        return self.upper - self.lower + 1

    @property
    def cardinality(self) -> int:
        """Number of interval indices an event can actually produce."""
        return self.granules if self.values is None else len(self.values)

    def position(self, value) -> int:
        try:
            return self._positions[value]
        except (KeyError, TypeError):
            raise OutOfDomainError(f"{value!r} is not an admissible value of {self.name}") from None


@dataclass(frozen=True)
class ContentSchema:
    dims: Tuple[DimensionSpec, ...]
    app_id_bits: int = 0
    label_set_cap: int = DEFAULT_LABEL_SET_CAP

    def __post_init__(self) -> None:
        dims = tuple(self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise SchemaError("a schema needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise SchemaError("dimension names must be unique")
        if self.app_id_bits < 0:
            raise SchemaError("app_id_bits must be non-negative")
        if self.label_bits > MAX_LABEL_BITS:
            raise SchemaError(f"label needs {self.label_bits} bits, limit is {MAX_LABEL_BITS}")
        if self.label_set_cap < 1:
            raise SchemaError("label_set_cap must be positive")

    @classmethod
    def uniform(cls, d: int, bits: int, lower: int = 0, upper: int = (1 << 20) - 1,
                app_id_bits: int = 0) -> "ContentSchema":
        """``d`` identical numeric dimensions named ``a1..ad``."""
        dims = tuple(DimensionSpec.numeric(f"a{i + 1}", lower, upper, bits) for i in range(d))
        return cls(dims=dims, app_id_bits=app_id_bits)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def label_bits(self) -> int:
        return self.app_id_bits + sum(dim.bits for dim in self.dims)

    @property
    def label_bytes(self) -> int:
        return max(1, (self.label_bits + 7) // 8)

    @property
    def n_total(self) -> int:
        return math.prod(dim.granules for dim in self.dims)

    def dim_index(self, name: str) -> int:
        for i, dim in enumerate(self.dims):
            if dim.name == name:
                return i
        raise SchemaError(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class Predicate:
    """``attr in [low, high]`` for numeric attributes, ``attr in values`` for discrete ones.

    ``low``/``high`` of ``None`` stand for the domain MIN/MAX.
    """

    attr: str
    low: Optional[int] = None
    high: Optional[int] = None
    type: str = "int"
    values: Optional[frozenset] = None

    @classmethod
    def compare(cls, attr: str, op: str, value: int) -> "Predicate":
        if op in (">=", "ge"):
            return cls(attr, low=value)
        if op in (">", "gt"):
            return cls(attr, low=value + 1)
        if op in ("<=", "le"):
            return cls(attr, high=value)
        if op in ("<", "lt"):
            return cls(attr, high=value - 1)
        if op in ("=", "==", "eq"):
            return cls(attr, low=value, high=value)
        raise ValueError(f"unsupported operator {op!r}")

    @classmethod
    def one_of(cls, attr: str, values: Iterable[object]) -> "Predicate":
        return cls(attr, type="set", values=frozenset(values))


@dataclass(frozen=True)
class Subscription:
    predicates: Tuple[Predicate, ...] = ()

    def __post_init__(self) -> None:
        preds = tuple(self.predicates)
        object.__setattr__(self, "predicates", preds)
        attrs = [p.attr for p in preds]
        if len(set(attrs)) != len(attrs):
            raise SchemaError("at most one predicate per attribute")

    @classmethod
    def box(cls, schema: ContentSchema, bounds: Sequence[Tuple[int, int]]) -> "Subscription":
        """Rectangle subscription constraining every numeric dimension in order."""
        return cls(tuple(Predicate(dim.name, lo, hi) for dim, (lo, hi) in zip(schema.dims, bounds)))


def normalize_predicate(pred: Predicate, dim: DimensionSpec) -> Predicate:
    """Close single-sided bounds with the domain MIN/MAX and clamp into the domain."""
    if pred.attr != dim.name:
        raise SchemaError(f"predicate on {pred.attr!r} applied to dimension {dim.name!r}")
    if dim.kind == NUMERIC:
        if pred.type != "int" or pred.values is not None:
            raise TypeMismatchError(f"{dim.name} is numeric, predicate type is {pred.type!r}")
        low = dim.lower if pred.low is None else max(pred.low, dim.lower)
        high = dim.upper if pred.high is None else min(pred.high, dim.upper)
        if low > high:
            raise EmptyRangeError(f"{dim.name}: [{pred.low}, {pred.high}] misses [{dim.lower}, {dim.upper}]")
        return Predicate(pred.attr, low, high, "int")
    if pred.type != "set" or pred.values is None:
        raise TypeMismatchError(f"{dim.name} is discrete, predicate type is {pred.type!r}")
    kept = frozenset(v for v in pred.values if v in dim._positions)
    if not kept:
        raise EmptyRangeError(f"{dim.name}: no admissible value selected")
    return Predicate(pred.attr, type="set", values=kept)


def interval_index(dim: DimensionSpec, value) -> int:
    if dim.kind == DISCRETE:
        return dim.position(value)
    if isinstance(value, bool) or not isinstance(value, int):
        try:
            if int(value) != value:
                raise OutOfDomainError(f"{dim.name}: non-integer value {value!r}")
            value = int(value)
        except (TypeError, ValueError):
            raise OutOfDomainError(f"{dim.name}: non-integer value {value!r}") from None
    if not dim.lower <= value <= dim.upper:
        raise OutOfDomainError(f"{dim.name}: {value} outside [{dim.lower}, {dim.upper}]")
    g = 1 << dim.bits
    return min((value - dim.lower) * g // (dim.upper - dim.lower + 1), g - 1)


def encode_label(schema: ContentSchema, app_id: int, indices: Sequence[int]) -> RangeLabel:
    if len(indices) != schema.d:
        raise IndexOverflowError(f"expected {schema.d} indices, got {len(indices)}")
    if not 0 <= app_id < (1 << schema.app_id_bits):
        raise IndexOverflowError(f"app_id {app_id} does not fit in {schema.app_id_bits} bits")
    label = app_id
    for dim, idx in zip(schema.dims, indices):
        if not 0 <= idx < (1 << dim.bits):
            raise IndexOverflowError(f"{dim.name}: index {idx} >= {1 << dim.bits}")
        label = (label << dim.bits) | idx
    return label


def decode_label(schema: ContentSchema, label: RangeLabel) -> Tuple[int, Tuple[int, ...]]:
    if label < 0 or label >> schema.label_bits:
        raise MalformedLabelError(f"label {label:#x} has bits above position {schema.label_bits}")
    indices = []
    for dim in reversed(schema.dims):
        idx = label & ((1 << dim.bits) - 1)
        if idx >= dim.granules:
            raise MalformedLabelError(f"{dim.name}: index {idx} out of range")
        indices.append(idx)
        label >>= dim.bits
    return label, tuple(reversed(indices))


def event_to_label(schema: ContentSchema, app_id: int, event: Sequence) -> RangeLabel:
    if len(event) != schema.d:
        raise OutOfDomainError(f"event has {len(event)} values, schema has {schema.d} dimensions")
    return encode_label(schema, app_id, [interval_index(dim, v) for dim, v in zip(schema.dims, event)])


def _index_choices(schema: ContentSchema, s: Subscription):
    by_attr = {}
    for pred in s.predicates:
        schema.dim_index(pred.attr)
        by_attr[pred.attr] = pred
    choices = []
    for dim in schema.dims:
        pred = by_attr.get(dim.name)
        if pred is None:
            choices.append(range(dim.cardinality))
            continue
        pred = normalize_predicate(pred, dim)
        if dim.kind == DISCRETE:
            choices.append(sorted(dim.position(v) for v in pred.values))
        else:
            choices.append(range(interval_index(dim, pred.low), interval_index(dim, pred.high) + 1))
    return choices


def label_count(schema: ContentSchema, s: Subscription) -> int:
    """Size of the label set without materialising it."""
    return math.prod(len(c) for c in _index_choices(schema, s))


def subscription_to_labels(schema: ContentSchema, app_id: int, s: Subscription,
                           cap: Optional[int] = None) -> LabelSet:
    """Minimum bounding set of cells intersecting the subscription, as sorted labels."""
    choices = _index_choices(schema, s)
    cap = schema.label_set_cap if cap is None else cap
    size = math.prod(len(c) for c in choices)
    if size > cap:
        raise LabelSetOverflowError(f"subscription expands to {size} labels (cap {cap})")
    encode_label(schema, app_id, [0] * schema.d)  # validates app_id
    labels = [app_id]
    for dim, idxs in zip(schema.dims, choices):
        shift = dim.bits
        labels = [(x << shift) | i for x in labels for i in idxs]
    return tuple(labels)


def matches(schema: ContentSchema, s: Subscription, event: Sequence) -> bool:
    """Exact Boolean evaluation of the conjunction against an event."""
    for pred in s.predicates:
        dim = schema.dims[schema.dim_index(pred.attr)]
        value = event[schema.dim_index(pred.attr)]
        pred = normalize_predicate(pred, dim)
        if dim.kind == DISCRETE:
            if value not in pred.values:
                return False
        elif not pred.low <= value <= pred.high:
            return False
    return True


def label_to_bytes(schema: ContentSchema, label: RangeLabel) -> bytes:
    return label.to_bytes(schema.label_bytes, "big")


def label_from_bytes(schema: ContentSchema, data: bytes) -> RangeLabel:
    if len(data) != schema.label_bytes:
        raise MalformedLabelError(f"expected {schema.label_bytes} bytes, got {len(data)}")
    label = int.from_bytes(data, "big")
    decode_label(schema, label)
    return label


def format_label(schema: ContentSchema, label: RangeLabel) -> str:
    """Human form ``'011-010'`` (app id first when namespaced)."""
    app_id, indices = decode_label(schema, label)
    parts = [format(i, f"0{dim.bits}b") for dim, i in zip(schema.dims, indices)]
    if schema.app_id_bits:
        parts.insert(0, format(app_id, f"0{schema.app_id_bits}b"))
    return "-".join(parts)


def box_index_ranges(schema: ContentSchema, lows, highs):
    """Per-dimension interval index bounds for many rectangles at once.

    ``lows``/``highs`` are ``(n, d)`` integer arrays of normalised bounds on an
    all-numeric schema.  Returns ``(lo_idx, hi_idx)`` of the same shape.
    """
    lows = np.asarray(lows, dtype=np.int64)
    highs = np.asarray(highs, dtype=np.int64)
    lo_idx = np.empty_like(lows)
    hi_idx = np.empty_like(highs)
    for j, dim in enumerate(schema.dims):
        if dim.kind != NUMERIC:
            raise SchemaError("vectorised box mapping needs numeric dimensions")
        g = dim.granules
        lo_idx[:, j] = np.minimum((lows[:, j] - dim.lower) * g // dim.width, g - 1)
        hi_idx[:, j] = np.minimum((highs[:, j] - dim.lower) * g // dim.width, g - 1)
    return lo_idx, hi_idx


def labels_for_boxes(schema: ContentSchema, lows, highs, app_id: int = 0) -> list:
    """Label set of every rectangle; equivalent to :func:`subscription_to_labels` per row."""
    lo_idx, hi_idx = box_index_ranges(schema, lows, highs)
    encode_label(schema, app_id, [0] * schema.d)
    shifts = [dim.bits for dim in schema.dims]
    cap = schema.label_set_cap
    out = []
    for lo_row, hi_row in zip(lo_idx.tolist(), hi_idx.tolist()):
        labels = [app_id]
        size = 1
        for shift, lo, hi in zip(shifts, lo_row, hi_row):
            size *= hi - lo + 1
            if size > cap:
                raise LabelSetOverflowError(f"rectangle expands to more than {cap} labels")
            if lo == hi:
                labels = [(x << shift) | lo for x in labels]
            else:
                labels = [(x << shift) | i for x in labels for i in range(lo, hi + 1)]
        out.append(tuple(labels))
    return out


def event_labels(schema: ContentSchema, events, app_id: int = 0):
    """Labels of many events (``(n, d)`` integer array) as a uint64 numpy array."""
    events = np.asarray(events, dtype=np.int64)
    if events.size and (np.any(events < [d.lower for d in schema.dims])
                        or np.any(events > [d.upper for d in schema.dims])):
        raise OutOfDomainError("event value outside its domain")
    idx, _ = box_index_ranges(schema, events, events)
    labels = np.full(len(events), app_id, dtype=np.uint64)
    for j, dim in enumerate(schema.dims):
        labels = (labels << np.uint64(dim.bits)) | idx[:, j].astype(np.uint64)
    return labels
