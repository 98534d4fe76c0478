"""Counting Bloom filter with saturating counters and double hashing.

Positions come from two seeded 64-bit hashes combined as
``(h1 + i*h2) mod m`` (Kirsch-Mitzenmacher).  Counters saturate at
``2**counter_bits - 1`` and a counter that reaches the ceiling is sticky: it
is never decremented again, so deletions can only over-estimate.
"""
from __future__ import annotations

import math
import struct
from array import array
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from .errors import DomainError

MASK64 = (1 << 64) - 1
DEFAULT_SEED_A = 0x5EED_0001
DEFAULT_SEED_B = 0x5EED_0002

_HEADER = struct.Struct(">QBBQQ")


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash64(label: int, seed: int) -> int:
    """Seeded 64-bit hash of a label."""
    return _splitmix64((label & MASK64) ^ _splitmix64(seed & MASK64))


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash64_array(labels, seed: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.uint64)
    return _splitmix64_np(labels ^ np.uint64(_splitmix64(seed & MASK64)))


@dataclass(frozen=True)
class CBFParams:
    m: int
    k_h: int
    counter_bits: int = 4
    seed_a: int = DEFAULT_SEED_A
    seed_b: int = DEFAULT_SEED_B

    def __post_init__(self) -> None:
        if not 1 <= self.m <= 1 << 32:
            raise DomainError(f"m must be in [1, 2**32], got {self.m}")
        if not 1 <= self.k_h <= 16:
            raise DomainError(f"k_h must be in [1, 16], got {self.k_h}")
        if not 2 <= self.counter_bits <= 16:
            raise DomainError(f"counter_bits must be in [2, 16], got {self.counter_bits}")
        for seed in (self.seed_a, self.seed_b):
            if not 0 <= seed <= MASK64:
                raise DomainError("seeds must be unsigned 64-bit integers")

    @classmethod
    def for_load(cls, m: int, n_expected: int, **kw) -> "CBFParams":
        """Params with the usual optimum ``k_h = round(m/n * ln 2)``, clipped to [1, 16]."""
        return cls(m=m, k_h=optimal_hash_count(m, n_expected), **kw)

    @property
    def max_count(self) -> int:
        return (1 << self.counter_bits) - 1

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.m, self.k_h, self.counter_bits, self.seed_a, self.seed_b)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CBFParams":
        m, k_h, bits, seed_a, seed_b = _HEADER.unpack(data[:_HEADER.size])
        return cls(m, k_h, bits, seed_a, seed_b)


def optimal_hash_count(m: int, n_expected: int) -> int:
    if n_expected <= 0:
        return 16
    return max(1, min(16, round(m / n_expected * math.log(2))))


def positions(params: CBFParams, label: int) -> Tuple[int, ...]:
    m = params.m
    h1 = hash64(label, params.seed_a) % m
    h2 = hash64(label, params.seed_b) % m
    return tuple((h1 + i * h2) % m for i in range(params.k_h))


def positions_array(params: CBFParams, labels) -> np.ndarray:
    """Vectorised :func:`positions`; returns shape ``(len(labels), k_h)``."""
    m = np.uint64(params.m)
    h1 = hash64_array(labels, params.seed_a) % m
    h2 = hash64_array(labels, params.seed_b) % m
    steps = np.arange(params.k_h, dtype=np.uint64)
    return ((h1[:, None] + steps[None, :] * h2[:, None]) % m).astype(np.int64)


class _PositionCache:
    # One per distinct params value; filters sharing params share the cache.
    __slots__ = ("params", "table")
    limit = 1 << 21

    def __init__(self, params: CBFParams):
        self.params = params
        self.table = {}

    def __call__(self, label: int) -> Tuple[int, ...]:
        pos = self.table.get(label)
        if pos is None:
            if len(self.table) >= self.limit:
                self.table.clear()
            pos = self.table[label] = positions(self.params, label)
        return pos


_caches = {}


def _cache_for(params: CBFParams) -> _PositionCache:
    cache = _caches.get(params)
    if cache is None:
        cache = _caches[params] = _PositionCache(params)
    return cache


class CountingBloomFilter:
    """Counter vector with add, delete and min-counter multiplicity query."""

    def __init__(self, params: CBFParams):
        self.params = params
        typecode = "B" if params.counter_bits <= 8 else "H"
        self.counters = array(typecode, bytes(params.m * array(typecode).itemsize))
        self.n_inserted = 0
        self.saturation_events = 0
        self.underflow_events = 0
        self._max = params.max_count
        self._pos = _cache_for(params)

    def __repr__(self) -> str:
        p = self.params
        return f"CountingBloomFilter(m={p.m}, k_h={p.k_h}, n_inserted={self.n_inserted})"

    def positions(self, label: int) -> Tuple[int, ...]:
        return self._pos(label)

    # A saturation event is an operation the counter cannot represent: an
    # increment past the maximum, or a decrement skipped on a pinned counter.

    def add(self, label: int) -> None:
        counters, top = self.counters, self._max
        for p in self._pos(label):
            c = counters[p]
            if c < top:
                counters[p] = c + 1
            else:
                self.saturation_events += 1
        self.n_inserted += 1

    def delete(self, label: int) -> None:
        counters, top = self.counters, self._max
        for p in self._pos(label):
            c = counters[p]
            if c == 0:
                self.underflow_events += 1
            elif c < top:
                counters[p] = c - 1
            else:
                self.saturation_events += 1
        self.n_inserted -= 1

    def query(self, label: int) -> int:
        counters = self.counters
        return min([counters[p] for p in self._pos(label)])

    def __contains__(self, label: int) -> bool:
        return self.query(label) > 0

    def add_many(self, labels: Iterable[int]) -> None:
        """Bulk :meth:`add`; same final state and event counts as adding one by one."""
        labels = np.fromiter(labels, dtype=np.uint64)
        if labels.size == 0:
            return
        pos = positions_array(self.params, labels).ravel()
        hits = np.bincount(pos, minlength=self.params.m)
        view = self.view()
        before = view.astype(np.int64)
        top = self._max
        after = np.minimum(before + hits, top)
        self.saturation_events += int(np.maximum(before + hits - top, 0).sum())
        view[:] = after
        self.n_inserted += int(labels.size)

    def query_many(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.uint64)
        if labels.size == 0:
            return np.zeros(0, dtype=np.int64)
        return self.view()[positions_array(self.params, labels)].min(axis=1).astype(np.int64)

    def view(self) -> np.ndarray:
        """Writable numpy view of the counters."""
        return np.frombuffer(self.counters, dtype=np.uint8 if self.counters.typecode == "B" else np.uint16)

    def nonzero_positions(self) -> np.ndarray:
        return np.flatnonzero(self.view())

    def total(self) -> int:
        return int(self.view().sum(dtype=np.int64))

    def is_empty(self) -> bool:
        return not self.view().any()

    def to_bytes(self) -> bytes:
        """Params header followed by the counters packed ``counter_bits`` each, MSB first."""
        b = self.params.counter_bits
        vals = self.view().astype(np.uint16)
        shifts = np.arange(b - 1, -1, -1, dtype=np.uint16)
        bits = ((vals[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        return self.params.to_bytes() + np.packbits(bits.ravel()).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CountingBloomFilter":
        params = CBFParams.from_bytes(data)
        body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
        b = params.counter_bits
        if body.size != (params.m * b + 7) // 8:
            raise DomainError("snapshot length does not match its header")
        bits = np.unpackbits(body)[: params.m * b].reshape(params.m, b).astype(np.uint16)
        weights = (1 << np.arange(b - 1, -1, -1)).astype(np.uint16)
        f = cls(params)
        f.view()[:] = bits @ weights
        f.n_inserted = f.total() // params.k_h
        return f


def _check_domain(m, n, k) -> None:
    if np.any(np.asarray(m) <= 0) or np.any(np.asarray(k) <= 0):
        raise DomainError("m and k_h must be positive")
    if np.any(np.asarray(n) < 0):
        raise DomainError("n must be non-negative")


def theoretical_fpr_exact(m, n, k_h):
    """``(1 - (1 - 1/m)**(k n))**k``; accepts scalars or numpy arrays."""
    _check_domain(m, n, k_h)
    m, n, k = (np.asarray(x, dtype=np.float64) for x in (m, n, k_h))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_keep = np.where(m > 1, np.log1p(-1.0 / np.maximum(m, 2.0)), -np.inf)
        exponent = np.where(n > 0, k * n * log_keep, 0.0)
        p = (-np.expm1(exponent)) ** k
    return float(p) if p.ndim == 0 else p


def theoretical_fpr_approx(m, n, k_h):
    """``(1 - exp(-k n / m))**k``."""
    _check_domain(m, n, k_h)
    m, n, k = (np.asarray(x, dtype=np.float64) for x in (m, n, k_h))
    p = (-np.expm1(-k * n / m)) ** k
    return float(p) if p.ndim == 0 else p
