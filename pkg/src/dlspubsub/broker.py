"""A single broker node: per-client filters, SFF, per-neighbour ERTs.

Every filter a broker owns is built from one network-wide
:class:`~dlspubsub.cbf.CBFParams`, so a false positive in a forwarding filter
reproduces bit-for-bit in the neighbour's routing table.

Besides the broker-wide ``sff`` the broker keeps one forwarding filter per
outgoing link (``sff_out[link]``).  It aggregates the labels received from
every source *except* that link and decides what gets forwarded over it.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from .cbf import CBFParams, CountingBloomFilter
from .errors import MalformedLabelError, NonEmptyTableError, UnknownConnectionError

CLIENT = "client"
LINK = "link"


@dataclass(frozen=True, order=True)
class ConnectionId:
    kind: str
    id: int

    def __str__(self) -> str:
        return f"{self.kind}:{self.id}"


class MsgKind(enum.IntEnum):
    SUBSCRIBE = 0x01
    UNSUBSCRIBE = 0x02
    PUBLISH = 0x03


@dataclass(frozen=True)
class BrokerMsg:
    kind: MsgKind
    payload: Tuple[int, ...]
    origin: ConnectionId

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload", tuple(self.payload))
        if self.kind == MsgKind.PUBLISH and len(self.payload) != 1:
            raise ValueError("a publish message carries exactly one label")


_MSG_HEAD = struct.Struct(">BI")


def encode_message(kind: MsgKind, labels: Sequence[int], label_bytes: int) -> bytes:
    """1-byte kind, 4-byte big-endian count, fixed-width big-endian labels."""
    out = bytearray(_MSG_HEAD.pack(int(kind), len(labels)))
    for label in labels:
        out += label.to_bytes(label_bytes, "big")
    return bytes(out)


def decode_message(data: bytes, label_bytes: int) -> Tuple[MsgKind, Tuple[int, ...]]:
    if len(data) < _MSG_HEAD.size:
        raise MalformedLabelError("truncated message header")
    raw_kind, count = _MSG_HEAD.unpack_from(data)
    kind = MsgKind(raw_kind)
    body = data[_MSG_HEAD.size:]
    if len(body) != count * label_bytes:
        raise MalformedLabelError(f"expected {count} labels of {label_bytes} bytes, got {len(body)} bytes")
    labels = tuple(int.from_bytes(body[i:i + label_bytes], "big") for i in range(0, len(body), label_bytes))
    if kind == MsgKind.PUBLISH and count != 1:
        raise MalformedLabelError("publish message must carry one label")
    return kind, labels


@dataclass
class Forwarding:
    """Output of a (un)subscription step.

    ``labels`` are the labels new (or last-referenced) at this broker
    according to the SFF; ``per_link`` holds what actually goes out on each
    neighbour link.
    """

    labels: List[int] = field(default_factory=list)
    per_link: Dict[ConnectionId, List[int]] = field(default_factory=dict)


class BrokerState:
    def __init__(self, params: CBFParams, name: str = ""):
        self.params = params
        self.name = name
        self.sff = CountingBloomFilter(params)
        self.client_cbfs: Dict[ConnectionId, CountingBloomFilter] = {}
        self.erts: Dict[ConnectionId, CountingBloomFilter] = {}
        self.sff_out: Dict[ConnectionId, CountingBloomFilter] = {}
        self.filter_ops = 0
        self.last_match_queries = 0
        self.leaked_detaches = 0
        self._next_id = 0

    def __repr__(self) -> str:
        return f"BrokerState({self.name!r}, clients={len(self.client_cbfs)}, links={len(self.erts)})"

    # connections

    def attach(self, kind: str) -> ConnectionId:
        if kind not in (CLIENT, LINK):
            raise ValueError(f"unknown connection kind {kind!r}")
        cid = ConnectionId(kind, self._next_id)
        self._next_id += 1
        if kind == CLIENT:
            self.client_cbfs[cid] = CountingBloomFilter(self.params)
        else:
            self.erts[cid] = CountingBloomFilter(self.params)
            self.sff_out[cid] = CountingBloomFilter(self.params)
        return cid

    def detach(self, cid: ConnectionId, force: bool = False) -> None:
        table = self.table(cid)
        if not table.is_empty():
            if not force:
                raise NonEmptyTableError(f"{cid} still holds subscriptions")
            # SFF counters contributed by this connection are left in place.
            self.leaked_detaches += 1
        if cid.kind == CLIENT:
            del self.client_cbfs[cid]
        else:
            del self.erts[cid]
            del self.sff_out[cid]

    def table(self, cid: ConnectionId) -> CountingBloomFilter:
        """The filter recording what ``cid`` subscribed to (client CBF or ERT)."""
        tables = self.client_cbfs if cid.kind == CLIENT else self.erts
        try:
            return tables[cid]
        except KeyError:
            raise UnknownConnectionError(f"{cid} is not attached to broker {self.name!r}") from None

    def filters(self) -> List[CountingBloomFilter]:
        return [self.sff, *self.client_cbfs.values(), *self.erts.values(), *self.sff_out.values()]

    @property
    def saturation_events(self) -> int:
        return sum(f.saturation_events for f in self.filters())

    @property
    def underflow_events(self) -> int:
        return sum(f.underflow_events for f in self.filters())

    # message handling

    def on_subscribe(self, origin: ConnectionId, labels: Iterable[int]) -> Forwarding:
        table = self.table(origin)
        sff = self.sff
        outs = [(cid, f) for cid, f in self.sff_out.items() if cid != origin]
        fwd = Forwarding(per_link={cid: [] for cid, _ in outs})
        new = fwd.labels
        ops = 0
        for label in labels:
            table.add(label)
            if sff.query(label) == 0:
                new.append(label)
            sff.add(label)
            ops += 3
            for cid, f in outs:
                if f.query(label) == 0:
                    fwd.per_link[cid].append(label)
                f.add(label)
                ops += 2
        self.filter_ops += ops
        return fwd

    def on_unsubscribe(self, origin: ConnectionId, labels: Iterable[int]) -> Forwarding:
        table = self.table(origin)
        sff = self.sff
        outs = [(cid, f) for cid, f in self.sff_out.items() if cid != origin]
        fwd = Forwarding(per_link={cid: [] for cid, _ in outs})
        for label in labels:
            count = sff.query(label)
            if count == 1:
                fwd.labels.append(label)
            if count != 0:
                sff.delete(label)
            if table.query(label) != 0:
                table.delete(label)
            for cid, f in outs:
                count = f.query(label)
                if count == 1:
                    fwd.per_link[cid].append(label)
                if count != 0:
                    f.delete(label)
        return fwd

    def match_event(self, label: int, origin: ConnectionId) -> List[ConnectionId]:
        """Links and clients whose tables may hold ``label``; ``origin`` is skipped."""
        self.table(origin)
        dests = []
        queries = 0
        for cid, rt in self.erts.items():
            if cid == origin:
                continue
            queries += 1
            if rt.query(label) >= 1:
                dests.append(cid)
        for cid, cbf in self.client_cbfs.items():
            if cid == origin:
                continue
            queries += 1
            if cbf.query(label) >= 1:
                dests.append(cid)
        self.last_match_queries = queries
        return dests

    def handle(self, msg: BrokerMsg):
        if msg.kind == MsgKind.SUBSCRIBE:
            return self.on_subscribe(msg.origin, msg.payload)
        if msg.kind == MsgKind.UNSUBSCRIBE:
            return self.on_unsubscribe(msg.origin, msg.payload)
        return self.match_event(msg.payload[0], msg.origin)
