import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlspubsub.broker import (
    CLIENT,
    LINK,
    BrokerMsg,
    BrokerState,
    ConnectionId,
    MsgKind,
    decode_message,
    encode_message,
)
from dlspubsub.cbf import CBFParams, positions
from dlspubsub.errors import MalformedLabelError, NonEmptyTableError, UnknownConnectionError

P = CBFParams(1 << 12, 4, counter_bits=8)
L1, L2, L3 = 0b011011, 0b010010, 0b100000


def fresh(n_clients=2, n_links=0, params=P):
    b = BrokerState(params, "B")
    clients = [b.attach(CLIENT) for _ in range(n_clients)]
    links = [b.attach(LINK) for _ in range(n_links)]
    return b, clients, links


# subscribe


def test_first_subscription_is_forwarded():
    b, (c1, c2), _ = fresh()
    fwd = b.on_subscribe(c1, [L1, L2])
    assert fwd.labels == [L1, L2]
    assert b.sff.query(L1) == b.sff.query(L2) == 1
    assert b.client_cbfs[c1].query(L1) == 1


def test_duplicate_label_is_aggregated():
    b, (c1, c2), _ = fresh()
    b.on_subscribe(c1, [L1, L2])
    fwd = b.on_subscribe(c2, [L1])
    assert fwd.labels == []
    assert b.sff.query(L1) == 2


def test_sff_false_positive_suppresses_forwarding():
    params = CBFParams(16, 2)
    b, (c1, c2), _ = fresh(params=params)
    held = list(range(6))
    b.on_subscribe(c1, held)
    covered = set(b.sff.nonzero_positions().tolist())
    ghost = next(x for x in range(100, 10_000) if set(positions(params, x)) <= covered)
    assert b.on_subscribe(c2, [ghost]).labels == []


def test_resubscribing_forwards_nothing():
    b, (c1, _), (link,) = fresh(n_links=1)
    first = b.on_subscribe(c1, [L1, L2, L3])
    second = b.on_subscribe(c1, [L1, L2, L3])
    assert first.per_link[link] == [L1, L2, L3]
    assert second.labels == [] and second.per_link[link] == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sets(st.integers(0, 1 << 20), max_size=20), min_size=1, max_size=6))
def test_aggregation_idempotent(label_sets):
    b, (c1, c2), (link,) = fresh(n_links=1, params=CBFParams(1 << 16, 4, counter_bits=8))
    for ls in label_sets:
        b.on_subscribe(c1, sorted(ls))
    again = b.on_subscribe(c2 if len(label_sets) % 2 else c1, sorted(set().union(*label_sets)))
    assert again.labels == [] and again.per_link[link] == []


def test_counter_accounting_without_collisions():
    b, (c1, c2), (link,) = fresh(n_links=1, params=CBFParams(1 << 20, 3, counter_bits=8))
    b.on_subscribe(c1, [L1, L2])
    b.on_subscribe(c2, [L1])
    b.on_subscribe(link, [L1, L3])
    assert b.sff.query(L1) == 3 and b.sff.query(L2) == 1 and b.sff.query(L3) == 1
    # forwarding filter toward the link ignores what came from that link
    assert b.sff_out[link].query(L1) == 2 and b.sff_out[link].query(L3) == 0


def test_filter_ops_per_label():
    b, (c1,), _ = fresh(n_clients=1)
    b.on_subscribe(c1, [L1, L2, L3])
    assert b.filter_ops == 9
    b2, (c,), links = fresh(n_clients=1, n_links=2)
    b2.on_subscribe(c, [L1])
    assert b2.filter_ops == 3 + 2 * 2


# per-link forwarding


def test_label_from_link_then_local_client_is_sent_back_upstream():
    """A client subscribing a label the broker first learnt from a neighbour
    must still announce it to that neighbour."""
    b, (c1,), (up,) = fresh(n_clients=1, n_links=1)
    from_up = b.on_subscribe(up, [L1])
    assert from_up.labels == [L1] and up not in from_up.per_link
    local = b.on_subscribe(c1, [L1])
    assert local.labels == []  # broker-wide filter already holds it
    assert local.per_link[up] == [L1]


def test_link_origin_not_echoed():
    b, _, (l1, l2) = fresh(n_clients=0, n_links=2)
    fwd = b.on_subscribe(l1, [L1])
    assert set(fwd.per_link) == {l2} and fwd.per_link[l2] == [L1]


# unsubscribe


def test_last_reference_is_forwarded():
    b, (c1, _), (link,) = fresh(n_links=1)
    b.on_subscribe(c1, [L1])
    fwd = b.on_unsubscribe(c1, [L1])
    assert fwd.labels == [L1] and fwd.per_link[link] == [L1]
    assert b.sff.query(L1) == 0 and b.client_cbfs[c1].is_empty() and b.sff_out[link].is_empty()


def test_shared_label_unsubscribe_forwards_nothing():
    b, (c1, c2), (link,) = fresh(n_links=1)
    b.on_subscribe(c1, [L1])
    b.on_subscribe(c2, [L1])
    fwd = b.on_unsubscribe(c1, [L1])
    assert fwd.labels == [] and fwd.per_link[link] == []
    assert b.sff.query(L1) == 1


def test_unsubscribe_unknown_label_changes_nothing():
    b, (c1, _), (link,) = fresh(n_links=1)
    b.on_subscribe(c1, [L1])
    before = [f.to_bytes() for f in b.filters()]
    fwd = b.on_unsubscribe(c1, [L3])
    assert fwd.labels == [] and fwd.per_link[link] == []
    assert [f.to_bytes() for f in b.filters()] == before
    assert b.underflow_events == 0


def test_subscribe_then_unsubscribe_restores_state():
    b, (c1, c2), (link,) = fresh(n_links=1)
    b.on_subscribe(c2, [L2])
    before = [f.to_bytes() for f in b.filters()]
    b.on_subscribe(c1, [L1, L2, L3])
    b.on_unsubscribe(c1, [L1, L2, L3])
    assert [f.to_bytes() for f in b.filters()] == before


# matching


def test_match_delivers_to_other_client():
    b, (c1, c2), _ = fresh()
    b.on_subscribe(c1, [L1])
    assert b.match_event(L1, c2) == [c1]
    assert b.last_match_queries == 1


def test_match_no_self_echo():
    b, (c1, c2), _ = fresh()
    b.on_subscribe(c1, [L1])
    assert b.match_event(L1, c1) == []


def test_match_routes_over_links_and_skips_origin_link():
    b, (c1,), (l1, l2) = fresh(n_clients=1, n_links=2)
    b.on_subscribe(l1, [L1])
    b.on_subscribe(l2, [L1])
    assert b.match_event(L1, c1) == [l1, l2]
    assert b.match_event(L1, l1) == [l2]
    assert b.last_match_queries == 2


def test_match_false_positive_on_colliding_ert():
    params = CBFParams(16, 2)
    b, (c1,), (link,) = fresh(n_clients=1, n_links=1, params=params)
    b.on_subscribe(link, list(range(6)))
    covered = set(b.erts[link].nonzero_positions().tolist())
    ghost = next(x for x in range(100, 10_000) if set(positions(params, x)) <= covered)
    assert b.match_event(ghost, c1) == [link]


def test_match_query_count_independent_of_load():
    b, clients, links = fresh(n_clients=5, n_links=2)
    b.match_event(L1, clients[0])
    q0 = b.last_match_queries
    for i, c in enumerate(clients):
        b.on_subscribe(c, list(range(i * 1000, i * 1000 + 500)))
    b.match_event(L1, clients[0])
    assert b.last_match_queries == q0 == 6


def test_unknown_origin():
    b, _, _ = fresh()
    ghost = ConnectionId(CLIENT, 99)
    for call in (lambda: b.on_subscribe(ghost, [L1]), lambda: b.on_unsubscribe(ghost, [L1]),
                 lambda: b.match_event(L1, ghost)):
        with pytest.raises(UnknownConnectionError):
            call()


# attach / detach


def test_attach_detach():
    b = BrokerState(P)
    before = [f.to_bytes() for f in b.filters()]
    c = b.attach(CLIENT)
    d = b.attach(CLIENT)
    assert c != d
    b.detach(c)
    b.detach(d)
    assert [f.to_bytes() for f in b.filters()] == before
    with pytest.raises(UnknownConnectionError):
        b.detach(c)
    with pytest.raises(ValueError):
        b.attach("satellite")


def test_forced_detach_leaks_sff():
    b, (c1, _), _ = fresh()
    b.on_subscribe(c1, [L1])
    with pytest.raises(NonEmptyTableError):
        b.detach(c1)
    b.detach(c1, force=True)
    assert c1 not in b.client_cbfs
    assert b.sff.query(L1) == 1 and b.leaked_detaches == 1


# messages


def test_handle_dispatch():
    b, (c1, c2), _ = fresh()
    assert b.handle(BrokerMsg(MsgKind.SUBSCRIBE, [L1], c1)).labels == [L1]
    assert b.handle(BrokerMsg(MsgKind.PUBLISH, [L1], c2)) == [c1]
    assert b.handle(BrokerMsg(MsgKind.UNSUBSCRIBE, [L1], c1)).labels == [L1]
    with pytest.raises(ValueError):
        BrokerMsg(MsgKind.PUBLISH, [L1, L2], c1)


def test_wire_roundtrip():
    data = encode_message(MsgKind.SUBSCRIBE, [L1, L2, L3], 2)
    assert data[:5] == b"\x01\x00\x00\x00\x03"
    assert decode_message(data, 2) == (MsgKind.SUBSCRIBE, (L1, L2, L3))
    with pytest.raises(MalformedLabelError):
        decode_message(data[:-1], 2)
    with pytest.raises(MalformedLabelError):
        decode_message(encode_message(MsgKind.PUBLISH, [L1, L2], 1), 1)
    with pytest.raises(MalformedLabelError):
        decode_message(b"\x03", 1)
