"""Content-based publish/subscribe over discrete label sets.

The content space is cut into a grid of labelled cells; a subscription
becomes the set of cells its rectangle touches and an event becomes one
cell.  Brokers aggregate and route those labels with counting Bloom filters.
"""
from .broker import CLIENT, LINK, BrokerMsg, BrokerState, ConnectionId, Forwarding, MsgKind
from .cbf import (
    CBFParams,
    CountingBloomFilter,
    optimal_hash_count,
    positions,
    theoretical_fpr_approx,
    theoretical_fpr_exact,
)
from .errors import DLSError, SaturationAbort
from .harness import (
    FPRResult,
    OracleIndex,
    WorkloadSpec,
    gen_events,
    gen_subscriptions,
    measure_fpr,
    oracle_match,
)
from .labels import (
    ContentSchema,
    DimensionSpec,
    Predicate,
    Subscription,
    decode_label,
    encode_label,
    event_to_label,
    interval_index,
    label_count,
    matches,
    normalize_predicate,
    subscription_to_labels,
)
from .overlay import CheckResult, Overlay, Topology, build, end_to_end_check

__version__ = "0.1.0"

__all__ = [
    "BrokerMsg", "BrokerState", "CBFParams", "CLIENT", "CheckResult", "ConnectionId", "ContentSchema",
    "CountingBloomFilter", "DLSError", "DimensionSpec", "FPRResult", "Forwarding", "LINK", "MsgKind",
    "OracleIndex", "Overlay", "Predicate", "SaturationAbort", "Subscription", "Topology", "WorkloadSpec",
    "build", "decode_label", "encode_label", "end_to_end_check", "event_to_label", "gen_events",
    "gen_subscriptions", "interval_index", "label_count", "matches", "measure_fpr", "normalize_predicate",
    "optimal_hash_count", "oracle_match", "positions", "subscription_to_labels", "theoretical_fpr_approx",
    "theoretical_fpr_exact",
]
