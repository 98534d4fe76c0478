"""Experiment drivers shared by the CLI and the acceptance suite.

Each driver is deterministic for a fixed seed apart from wall-clock columns.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .broker import CLIENT, BrokerState
from .cbf import CBFParams, optimal_hash_count
from .harness import (
    Boxes,
    WorkloadSpec,
    gen_event_array,
    gen_subscription_boxes,
    measure_fpr,
)
from .labels import ContentSchema, event_labels, labels_for_boxes
from .overlay import CheckResult, Overlay, Topology, TraceRecord, end_to_end_check

DOMAIN_UPPER = (1 << 20) - 1

# Workload for the granule / filter-size FPR sweeps: 3 dimensions, 8000
# subscriptions, rectangles up to 2**15 wide per side, Zipf exponent 1.2.
FPR_DIMS = 3
FPR_SUBSCRIPTIONS = 8000
FPR_EVENTS = 20000
FPR_MAX_INTERVAL = 1 << 15
FPR_ZIPF_S = 1.2
FPR_SEED = 1


def auto_params(m: int, n_expected: int, k_h: Optional[int] = None, counter_bits: int = 4,
                **seeds) -> CBFParams:
    k = optimal_hash_count(m, n_expected) if k_h is None else k_h
    return CBFParams(m=m, k_h=k, counter_bits=counter_bits, **seeds)


# false-positive sweeps


def fpr_point(distribution: str, granule_bits: int, m_bits: int, *, d: int = FPR_DIMS,
              n_subs: int = FPR_SUBSCRIPTIONS, n_events: int = FPR_EVENTS,
              max_interval_len: int = FPR_MAX_INTERVAL, zipf_s: float = FPR_ZIPF_S,
              seed: int = FPR_SEED, k_h: Optional[int] = None, n_subscribers: int = 1,
              _cache: Optional[dict] = None) -> Dict[str, float]:
    schema = ContentSchema.uniform(d, granule_bits, upper=DOMAIN_UPPER)
    spec = WorkloadSpec(distribution, n_subs, n_events, max_interval_len, seed, zipf_s)
    key = (distribution, granule_bits, d, n_subs, n_events, max_interval_len, zipf_s, seed)
    if _cache is not None and key in _cache:
        boxes, events, label_sets = _cache[key]
    else:
        boxes = gen_subscription_boxes(spec, schema)
        events = gen_event_array(spec, schema)
        label_sets = boxes.labels(schema)
        if _cache is not None:
            _cache[key] = (boxes, events, label_sets)
    params = auto_params(1 << m_bits, max(1, n_subs // n_subscribers), k_h)
    res = measure_fpr(schema, boxes, events, params, n_subscribers=n_subscribers, label_sets=label_sets)
    row = {"dist": distribution, "g": 1 << granule_bits, "m_bits": m_bits, "k_h": params.k_h}
    row.update(res.as_dict())
    return row


def fpr_granule_sweep(distribution: str, granule_bits: Sequence[int] = (3, 4, 5, 6, 7),
                      m_bits: int = 16, **kw) -> List[Dict[str, float]]:
    return [fpr_point(distribution, gb, m_bits, **kw) for gb in granule_bits]


def fpr_m_sweep(distribution: str, m_bits: Sequence[int] = (8, 10, 12, 14, 16),
                granule_bits: int = 5, **kw) -> List[Dict[str, float]]:
    cache: dict = {}
    return [fpr_point(distribution, granule_bits, mb, _cache=cache, **kw) for mb in m_bits]


# single-broker benchmark


@dataclass
class BenchRow:
    n_subscriptions: int
    d: int
    g: int
    insert_us: float
    distinct_forwarded: int
    delete_us: float
    match_us: float
    labels_inserted: int


def _build_broker(params: CBFParams, n_clients: int):
    broker = BrokerState(params, name="B")
    clients = [broker.attach(CLIENT) for _ in range(n_clients)]
    return broker, clients


def bench_single_broker(schema: ContentSchema, spec: WorkloadSpec, checkpoints: Sequence[int],
                        params: CBFParams, n_clients: int = 16, n_match_events: int = 20000,
                        n_delete: int = 1000, repeats: int = 3, boxes: Optional[Boxes] = None,
                        events: Optional[np.ndarray] = None) -> List[BenchRow]:
    """Grow one broker through ``checkpoints`` subscriptions, timing each phase.

    At every checkpoint the broker's distinct forwarded-label count is read,
    a fixed event batch is matched (best of ``repeats``) and ``n_delete``
    subscriptions are removed and re-inserted to time deletion.  ``boxes``
    and ``events`` replace the generated workload when given.
    """
    total = max(checkpoints) if checkpoints else 0
    if boxes is None:
        boxes = gen_subscription_boxes(WorkloadSpec(spec.distribution, total, 0, spec.max_interval_len,
                                                    spec.seed, spec.zipf_s), schema)
    elif len(boxes) < total:
        raise ValueError(f"workload holds {len(boxes)} subscriptions, checkpoint needs {total}")
    if events is None:
        ev_spec = WorkloadSpec(spec.distribution, 0, n_match_events, spec.max_interval_len, spec.seed, spec.zipf_s)
        events = gen_event_array(ev_spec, schema)
    label_sets = labels_for_boxes(schema, boxes.lows[:total], boxes.highs[:total])
    ev_labels = event_labels(schema, events).tolist()
    broker, clients = _build_broker(params, n_clients)
    rng = np.random.default_rng([spec.seed, 3])
    owner = rng.integers(0, n_clients, size=total)
    publishers = [clients[i] for i in rng.integers(0, n_clients, size=len(ev_labels))]
    forwarded = set()
    rows = []
    done = 0
    insert_time = 0.0
    inserted = 0
    for n in sorted(checkpoints):
        t0 = time.perf_counter()
        for i in range(done, n):
            fwd = broker.on_subscribe(clients[owner[i]], label_sets[i])
            forwarded.update(fwd.labels)
        insert_time += time.perf_counter() - t0
        inserted += n - done
        done = n

        match_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for label, pub in zip(ev_labels, publishers):
                broker.match_event(label, pub)
            match_times.append(time.perf_counter() - t0)

        victims = list(range(max(0, n - n_delete), n))
        t0 = time.perf_counter()
        for i in victims:
            broker.on_unsubscribe(clients[owner[i]], label_sets[i])
        delete_time = time.perf_counter() - t0
        for i in victims:
            broker.on_subscribe(clients[owner[i]], label_sets[i])

        rows.append(BenchRow(
            n_subscriptions=n,
            d=schema.d,
            g=schema.dims[0].granules,
            insert_us=1e6 * insert_time / max(1, inserted),
            distinct_forwarded=len(forwarded),
            delete_us=1e6 * delete_time / max(1, len(victims)),
            match_us=1e6 * min(match_times) / max(1, len(ev_labels)),
            labels_inserted=sum(len(label_sets[i]) for i in range(n)),
        ))
    return rows


# overlay simulation


@dataclass
class SimResult:
    check: CheckResult
    metrics: dict
    traces: List[TraceRecord] = field(default_factory=list)
    saturation_events: int = 0
    underflow_events: int = 0


def simulate(topology: Topology, schema: ContentSchema, spec: WorkloadSpec, *,
             allow_mismatch: bool = False, require_exact: bool = True, app_id: int = 0,
             boxes: Optional[Boxes] = None, points: Optional[np.ndarray] = None) -> SimResult:
    """Subscribe, let the network settle, then publish and check every delivery.

    Subscriptions go to clients and events come from clients drawn with the
    workload seed; ``boxes`` and ``points`` override the generated workload.
    """
    sim = Overlay(topology, allow_mismatch=allow_mismatch)
    if boxes is None:
        boxes = gen_subscription_boxes(spec, schema)
    if points is None:
        points = gen_event_array(spec, schema)
    clients = sorted(topology.clients)
    rng = np.random.default_rng([spec.seed, 2])
    owner = rng.integers(0, len(clients), size=len(boxes)) if clients else np.zeros(0, dtype=np.int64)
    publisher = rng.integers(0, len(clients), size=len(points)) if clients else np.zeros(0, dtype=np.int64)
    label_sets = labels_for_boxes(schema, boxes.lows, boxes.highs, app_id)

    per_client: Dict[str, List[int]] = {c: [] for c in clients}
    for i, ls in enumerate(label_sets):
        client = clients[owner[i]]
        per_client[client].append(i)
        sim.subscribe(client, ls)
    sim.run_to_quiescence()

    subs = {c: boxes.subset(np.asarray(idx, dtype=np.int64)) for c, idx in per_client.items()}
    sets = {c: [label_sets[i] for i in idx] for c, idx in per_client.items()}
    events = [(clients[publisher[i]], row) for i, row in enumerate(points.tolist())]
    check = end_to_end_check(sim, schema, subs, events, app_id=app_id,
                             require_exact=require_exact, label_sets=sets)
    return SimResult(check, sim.metrics.as_dict(), sim.traces, sim.saturation_events, sim.underflow_events)

