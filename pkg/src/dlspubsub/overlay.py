"""Deterministic simulation of a tree of brokers with attached clients.

Messages are processed one at a time from a single FIFO queue, which keeps
every link FIFO and makes a run a pure function of topology and input order.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .broker import CLIENT, LINK, BrokerState, ConnectionId, MsgKind
from .cbf import CBFParams
from .errors import (
    CyclicTopologyError,
    ParamsMismatchError,
    SaturationAbort,
    TopologyError,
    UnknownClientError,
)
from .harness import Boxes, OracleIndex
from .labels import ContentSchema, event_labels, labels_for_boxes


@dataclass
class Topology:
    brokers: List[str]
    links: List[Tuple[str, str]]
    clients: Dict[str, str]
    cbf_params: CBFParams
    # per-broker params; anything differing from cbf_params breaks the FN guarantee
    overrides: Dict[str, CBFParams] = field(default_factory=dict)

    @classmethod
    def chain(cls, n_brokers: int, clients_per_broker: int, cbf_params: CBFParams) -> "Topology":
        brokers = [f"B{i + 1}" for i in range(n_brokers)]
        links = list(zip(brokers, brokers[1:]))
        clients = {f"{b}c{j + 1}": b for b in brokers for j in range(clients_per_broker)}
        return cls(brokers, links, clients, cbf_params)

    def validate(self, allow_mismatch: bool = False) -> None:
        if not self.brokers:
            raise TopologyError("topology has no brokers")
        if len(set(self.brokers)) != len(self.brokers):
            raise TopologyError("duplicate broker id")
        known = set(self.brokers)
        parent = {b: b for b in self.brokers}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        seen = set()
        for a, b in self.links:
            if a not in known or b not in known:
                raise TopologyError(f"link {a}-{b} names an unknown broker")
            if a == b or frozenset((a, b)) in seen:
                raise CyclicTopologyError(f"link {a}-{b} closes a cycle")
            seen.add(frozenset((a, b)))
            ra, rb = find(a), find(b)
            if ra == rb:
                raise CyclicTopologyError(f"link {a}-{b} closes a cycle")
            parent[ra] = rb
        if len({find(b) for b in self.brokers}) != 1:
            raise TopologyError("broker graph is not connected")
        for client, home in self.clients.items():
            if home not in known:
                raise TopologyError(f"client {client} attached to unknown broker {home}")
        for broker, params in self.overrides.items():
            if broker not in known:
                raise TopologyError(f"override for unknown broker {broker}")
            if params != self.cbf_params and not allow_mismatch:
                raise ParamsMismatchError(f"broker {broker} uses {params}, network uses {self.cbf_params}")


@dataclass
class TraceRecord:
    event_id: int
    label: int
    publisher: str
    delivered: List[str] = field(default_factory=list)
    hops: List[str] = field(default_factory=list)


@dataclass
class SimMetrics:
    forwarded_subscription_labels: Counter = field(default_factory=Counter)
    forwarded_unsubscription_labels: Counter = field(default_factory=Counter)
    distinct_forwarded_labels: int = 0
    deliveries: int = 0
    publishes: int = 0
    steps: int = 0

    def copy(self) -> "SimMetrics":
        return SimMetrics(Counter(self.forwarded_subscription_labels),
                          Counter(self.forwarded_unsubscription_labels),
                          self.distinct_forwarded_labels, self.deliveries, self.publishes, self.steps)

    def minus(self, before: "SimMetrics") -> "SimMetrics":
        sub = self.forwarded_subscription_labels.copy()
        sub.subtract(before.forwarded_subscription_labels)
        unsub = self.forwarded_unsubscription_labels.copy()
        unsub.subtract(before.forwarded_unsubscription_labels)
        return SimMetrics(+sub, +unsub,
                          self.distinct_forwarded_labels - before.distinct_forwarded_labels,
                          self.deliveries - before.deliveries,
                          self.publishes - before.publishes,
                          self.steps - before.steps)

    def as_dict(self) -> dict:
        return {
            "forwarded_subscription_labels": dict(sorted(self.forwarded_subscription_labels.items())),
            "forwarded_unsubscription_labels": dict(sorted(self.forwarded_unsubscription_labels.items())),
            "distinct_forwarded_labels": self.distinct_forwarded_labels,
            "deliveries": self.deliveries,
            "publishes": self.publishes,
            "steps": self.steps,
        }


class Overlay:
    """Simulation state: brokers, link wiring, the message queue and collected traces."""

    def __init__(self, topology: Topology, allow_mismatch: bool = False):
        topology.validate(allow_mismatch)
        self.topology = topology
        self.brokers: Dict[str, BrokerState] = {
            b: BrokerState(topology.overrides.get(b, topology.cbf_params), name=b) for b in topology.brokers
        }
        # (broker, connection at broker) -> (peer broker, connection at peer)
        self.peer: Dict[Tuple[str, ConnectionId], Tuple[str, ConnectionId]] = {}
        self.link_conn: Dict[Tuple[str, str], ConnectionId] = {}
        for a, b in topology.links:
            ca = self.brokers[a].attach(LINK)
            cb = self.brokers[b].attach(LINK)
            self.peer[(a, ca)] = (b, cb)
            self.peer[(b, cb)] = (a, ca)
            self.link_conn[(a, b)] = ca
            self.link_conn[(b, a)] = cb
        self.client_conn: Dict[str, Tuple[str, ConnectionId]] = {}
        self.conn_client: Dict[Tuple[str, ConnectionId], str] = {}
        for client in sorted(topology.clients):
            home = topology.clients[client]
            cid = self.brokers[home].attach(CLIENT)
            self.client_conn[client] = (home, cid)
            self.conn_client[(home, cid)] = client
        self.queue = deque()
        self.metrics = SimMetrics()
        self.traces: List[TraceRecord] = []
        self._forwarded = set()

    def __repr__(self) -> str:
        return f"Overlay(brokers={list(self.brokers)}, clients={len(self.client_conn)})"

    # input

    def inject(self, client: str, kind: MsgKind, labels: Sequence[int]) -> Optional[TraceRecord]:
        try:
            home, cid = self.client_conn[client]
        except KeyError:
            raise UnknownClientError(f"unknown client {client!r}") from None
        kind = MsgKind(kind)
        trace = None
        if kind == MsgKind.PUBLISH:
            if len(labels) != 1:
                raise ValueError("a publish carries exactly one label")
            trace = TraceRecord(len(self.traces), labels[0], client)
            self.traces.append(trace)
            self.metrics.publishes += 1
        self.queue.append((home, cid, kind, tuple(labels), trace))
        return trace

    def subscribe(self, client: str, labels: Sequence[int]) -> None:
        self.inject(client, MsgKind.SUBSCRIBE, labels)

    def unsubscribe(self, client: str, labels: Sequence[int]) -> None:
        self.inject(client, MsgKind.UNSUBSCRIBE, labels)

    def publish(self, client: str, label: int) -> TraceRecord:
        return self.inject(client, MsgKind.PUBLISH, (label,))

    # processing

    def step(self) -> bool:
        if not self.queue:
            return False
        broker_name, origin, kind, labels, trace = self.queue.popleft()
        broker = self.brokers[broker_name]
        self.metrics.steps += 1
        if kind == MsgKind.PUBLISH:
            self._route(broker_name, broker, origin, labels[0], trace)
            return True
        if kind == MsgKind.SUBSCRIBE:
            fwd = broker.on_subscribe(origin, labels)
            tally = self.metrics.forwarded_subscription_labels
        else:
            fwd = broker.on_unsubscribe(origin, labels)
            tally = self.metrics.forwarded_unsubscription_labels
        for link, out in fwd.per_link.items():
            if not out:
                continue
            peer, peer_cid = self.peer[(broker_name, link)]
            tally[f"{broker_name}->{peer}"] += len(out)
            if kind == MsgKind.SUBSCRIBE:
                self._forwarded.update(out)
                self.metrics.distinct_forwarded_labels = len(self._forwarded)
            self.queue.append((peer, peer_cid, kind, tuple(out), None))
        return True

    def _route(self, name: str, broker: BrokerState, origin: ConnectionId, label: int, trace) -> None:
        for dest in broker.match_event(label, origin):
            if dest.kind == CLIENT:
                client = self.conn_client[(name, dest)]
                trace.delivered.append(client)
                trace.hops.append(f"{name}>{client}")
                self.metrics.deliveries += 1
            else:
                peer, peer_cid = self.peer[(name, dest)]
                trace.hops.append(f"{name}>{peer}")
                self.queue.append((peer, peer_cid, MsgKind.PUBLISH, (label,), trace))

    def run_to_quiescence(self) -> SimMetrics:
        before = self.metrics.copy()
        while self.step():
            pass
        return self.metrics.minus(before)

    # diagnostics

    @property
    def saturation_events(self) -> int:
        return sum(b.saturation_events for b in self.brokers.values())

    @property
    def underflow_events(self) -> int:
        return sum(b.underflow_events for b in self.brokers.values())

    def counter_events(self) -> Dict[str, Tuple[int, int]]:
        return {n: (b.saturation_events, b.underflow_events) for n, b in self.brokers.items()}

    def forwarding_filter(self, a: str, b: str):
        """Broker ``a``'s forwarding filter toward neighbour ``b``."""
        return self.brokers[a].sff_out[self.link_conn[(a, b)]]

    def routing_table(self, a: str, b: str):
        """Broker ``a``'s ERT for neighbour ``b``."""
        return self.brokers[a].erts[self.link_conn[(a, b)]]


def build(topology: Topology, allow_mismatch: bool = False) -> Overlay:
    return Overlay(topology, allow_mismatch)


@dataclass
class CheckResult:
    events: int = 0
    decisions: int = 0
    deliveries: int = 0
    false_negatives: int = 0
    mapping_fps: int = 0
    cbf_fps: int = 0
    true_positives: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def end_to_end_check(sim: Overlay, schema: ContentSchema, subscriptions: Mapping[str, Boxes],
                     events: Sequence[Tuple[str, Sequence[int]]], app_id: int = 0,
                     require_exact: bool = True,
                     label_sets: Optional[Mapping[str, List[Tuple[int, ...]]]] = None) -> CheckResult:
    """Publish ``events`` and compare deliveries with the exact oracle.

    ``subscriptions`` maps each client to the rectangles it has already
    subscribed (and the network has absorbed).  With ``require_exact`` a run
    whose filters saw saturation or underflow aborts with
    :class:`~dlspubsub.errors.SaturationAbort`, because the no-false-negative
    argument only covers exact counters.
    """
    if require_exact and (sim.saturation_events or sim.underflow_events):
        detail = ", ".join(f"{n}: sat={s} under={u}" for n, (s, u) in sim.counter_events().items())
        raise SaturationAbort(f"counter saturation/underflow during run ({detail})")

    clients = sorted(subscriptions)
    owner_parts, lows, highs = [], [], []
    label_owner: Dict[int, set] = {}
    for ci, client in enumerate(clients):
        boxes = subscriptions[client]
        lows.append(boxes.lows)
        highs.append(boxes.highs)
        owner_parts.append(np.full(len(boxes), ci))
        sets = label_sets[client] if label_sets is not None else labels_for_boxes(schema, boxes.lows, boxes.highs, app_id)
        for ls in sets:
            for label in ls:
                label_owner.setdefault(label, set()).add(client)
    if clients:
        index = OracleIndex.from_boxes(Boxes(np.concatenate(lows).reshape(-1, schema.d),
                                             np.concatenate(highs).reshape(-1, schema.d)))
        owner = np.concatenate(owner_parts)
    else:
        index = OracleIndex.from_boxes(Boxes(np.zeros((0, schema.d), np.int64), np.zeros((0, schema.d), np.int64)))
        owner = np.zeros(0, dtype=np.int64)

    points = np.asarray([e for _, e in events], dtype=np.int64).reshape(-1, schema.d)
    ev_labels = event_labels(schema, points, app_id).tolist()
    result = CheckResult(events=len(events), decisions=len(events) * len(sim.client_conn))
    chunk = max(1, 2_000_000 // max(1, len(index)))
    for start in range(0, len(events), chunk):
        block = index.match_matrix(points[start:start + chunk])
        for row, offset in zip(block, range(start, start + chunk)):
            publisher = events[offset][0]
            label = ev_labels[offset]
            trace = sim.publish(publisher, label)
            sim.run_to_quiescence()
            truth = {clients[i] for i in np.unique(owner[row])}
            truth.discard(publisher)
            delivered = set(trace.delivered)
            mapped = label_owner.get(label, ())
            result.deliveries += len(delivered)
            result.false_negatives += len(truth - delivered)
            result.true_positives += len(truth & delivered)
            for client in delivered - truth:
                if client in mapped:
                    result.mapping_fps += 1
                else:
                    result.cbf_fps += 1
    return result
