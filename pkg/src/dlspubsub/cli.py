"""``dlspubsub`` command line: gen, bench, fpr and sim.

Every command writes a table (CSV or JSON) to ``--out`` or stdout and exits
nonzero on configuration errors.  ``sim`` also exits nonzero when any
matching event misses a subscriber, unless ``--negative-control`` is given.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

from . import experiments, formats
from .cbf import CBFParams
from .errors import DLSError, SaturationAbort
from .harness import UNIFORM, ZIPF, WorkloadSpec, gen_event_array, gen_subscription_boxes
from .labels import ContentSchema
from .overlay import Topology

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FALSE_NEGATIVES = 3
EXIT_SATURATION = 4

SUBS_FILE = "subscriptions.tsv"
EVENTS_FILE = "events.tsv"

BENCH_METRICS = ("distinct_forwarded", "labels_inserted", "insert_us", "delete_us", "match_us")
TIMING = {"insert_us", "delete_us", "match_us"}
FPR_GRANULES = (8, 16, 32, 64, 128)
FPR_METRICS = ("k_h", "mapping_fpr", "cbf_fpr", "total_fpr", "false_positives", "decisions", "saturation_events")


class ConfigError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _granule_bits(g: int) -> int:
    if g < 2 or g & (g - 1):
        raise ConfigError(f"granule count must be a power of two >= 2, got {g}")
    return g.bit_length() - 1


def _schema(args, granule: Optional[int] = None) -> ContentSchema:
    if args.schema:
        return formats.load_schema(args.schema)
    g = granule if granule is not None else args.granule[0]
    return ContentSchema.uniform(args.dims, _granule_bits(g), upper=experiments.DOMAIN_UPPER)


def _spec(args, n_subs: int, n_events: int) -> WorkloadSpec:
    return WorkloadSpec(args.dist, n_subs, n_events, args.max_len, args.seed, args.zipf_s)


def _params(args, n_expected: int) -> CBFParams:
    return experiments.auto_params(1 << args.m_bits, max(1, n_expected), args.k_hash, args.counter_bits)


def _load_workload(directory: Optional[str]):
    if not directory:
        return None, None, None
    d = Path(directory)
    schema, boxes = formats.read_subscriptions(d / SUBS_FILE)
    ev_schema, events = formats.read_events(d / EVENTS_FILE)
    if ev_schema != schema:
        raise ConfigError(f"{d}: subscription and event files disagree on the schema")
    return schema, boxes, events


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# commands


def cmd_gen(args) -> int:
    schema = _schema(args)
    n_subs = args.n_subs[0] if args.n_subs else 0
    spec = _spec(args, n_subs, args.n_events)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    formats.dump_schema(schema, out / "schema.json")
    formats.write_subscriptions(out / SUBS_FILE, schema, gen_subscription_boxes(spec, schema), spec)
    formats.write_events(out / EVENTS_FILE, schema, gen_event_array(spec, schema), spec)
    print(f"wrote {spec.n_subscriptions} subscriptions and {spec.n_events} events to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    loaded_schema, boxes, events = _load_workload(args.workload)
    checkpoints = sorted(set(args.n_subs or [10_000]))
    granules = [None] if (loaded_schema or args.schema) else args.granule
    rows = []
    for g in granules:
        schema = loaded_schema or _schema(args, g)
        spec = _spec(args, max(checkpoints), args.n_events)
        # the forwarding filter holds distinct labels, never more than the grid has cells
        params = _params(args, min(max(checkpoints), schema.n_total))
        for r in experiments.bench_single_broker(schema, spec, checkpoints, params, n_clients=args.clients,
                                                 n_match_events=args.n_events, repeats=args.repeats,
                                                 boxes=boxes, events=events):
            row = asdict(r)
            if not args.timing:
                for key in TIMING:
                    row.pop(key)
            rows.append(row)
    across = "g" if len(granules) > 1 else "n_subscriptions"
    metrics = [m for m in BENCH_METRICS if args.timing or m not in TIMING]
    table = formats.pivot(rows, across, metrics) if args.format == "csv" else rows
    _emit(formats.render_table(table, args.format), args.out)
    return EXIT_OK


def cmd_fpr(args) -> int:
    n_subs = args.n_subs[0] if args.n_subs else experiments.FPR_SUBSCRIPTIONS
    kw = dict(d=args.dims, n_subs=n_subs, n_events=args.n_events, max_interval_len=args.max_len,
              zipf_s=args.zipf_s, seed=args.seed, k_h=args.k_hash)
    if args.sweep == "granule":
        bits = [_granule_bits(g) for g in args.granule or FPR_GRANULES]
        rows = experiments.fpr_granule_sweep(args.dist, bits, m_bits=args.m_bits, **kw)
        across = "g"
    else:
        g = (args.granule or [32])[0]
        rows = experiments.fpr_m_sweep(args.dist, args.m_sweep, granule_bits=_granule_bits(g), **kw)
        across = "m_bits"
    table = formats.pivot(rows, across, FPR_METRICS) if args.format == "csv" else rows
    _emit(formats.render_table(table, args.format), args.out)
    return EXIT_OK


def _sim_topology(args) -> Topology:
    if args.topology:
        return formats.load_topology(args.topology)
    params = CBFParams(1 << args.m_bits, args.k_hash or 4, args.counter_bits)
    topology = Topology.chain(args.brokers, args.clients, params)
    if args.negative_control and len(topology.brokers) > 1:
        # the middle broker hashes with different seeds than everyone else
        mid = topology.brokers[len(topology.brokers) // 2]
        topology.overrides[mid] = CBFParams(params.m, params.k_h, params.counter_bits,
                                            seed_a=params.seed_a ^ 0x5A5A, seed_b=params.seed_b ^ 0xA5A5)
    return topology


def cmd_sim(args) -> int:
    loaded_schema, boxes, events = _load_workload(args.workload)
    schema = loaded_schema or _schema(args)
    n_subs = args.n_subs[0] if args.n_subs else 0
    spec = _spec(args, n_subs, args.n_events)
    topology = _sim_topology(args)
    try:
        res = experiments.simulate(topology, schema, spec, allow_mismatch=args.negative_control,
                                   require_exact=not args.negative_control, boxes=boxes, points=events)
    except SaturationAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_SATURATION
    row = dict(res.check.as_dict())
    row["saturation_events"] = res.saturation_events
    row["underflow_events"] = res.underflow_events
    row["distinct_forwarded_labels"] = res.metrics["distinct_forwarded_labels"]
    for link, count in res.metrics["forwarded_subscription_labels"].items():
        row[f"forwarded[{link}]"] = count
    _emit(formats.render_table([row], args.format), args.out)
    if args.trace:
        formats.write_trace(args.trace, res.traces)
    fn = res.check.false_negatives
    if fn:
        print(f"false negatives: {fn}", file=sys.stderr)
        if not args.negative_control:
            return EXIT_FALSE_NEGATIVES
    return EXIT_OK


# parser


def _common(p: argparse.ArgumentParser, *, n_subs_default: Optional[str] = None,
            n_events: int = 0, m_bits: int = 14, max_len: Optional[int] = None,
            zipf_s: float = 1.0, granule: Optional[str] = "32", dims: int = 3) -> None:
    p.add_argument("--schema", help="JSON schema file; overrides --dims/--granule")
    p.add_argument("--workload", help="directory holding subscriptions.tsv and events.tsv")
    p.add_argument("--dist", choices=(UNIFORM, ZIPF), default=UNIFORM)
    p.add_argument("--zipf-s", type=float, default=zipf_s)
    p.add_argument("--n-subs", type=_int_list, default=_int_list(n_subs_default) if n_subs_default else None,
                   help="subscription count (bench: comma-separated checkpoints)")
    p.add_argument("--n-events", type=int, default=n_events)
    p.add_argument("--max-len", type=int, default=max_len, help="largest interval length per dimension")
    p.add_argument("--dims", type=int, default=dims)
    p.add_argument("--granule", type=_int_list, default=_int_list(granule) if granule else None,
                   help="granules per dimension (comma-separated for sweeps; fpr defaults: "
                        "8..128 for the granule sweep, 32 for the m sweep)")
    p.add_argument("--m-bits", type=int, default=m_bits, help="log2 of the filter size")
    p.add_argument("--k-hash", type=int, default=None, help="hash count (default: optimal for the load)")
    p.add_argument("--counter-bits", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (gen: directory)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlspubsub", description="label-set pub/sub experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a seeded workload")
    _common(p, n_subs_default="1000", n_events=1000)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="single-broker timing and forwarding table")
    _common(p, n_subs_default="10000", n_events=20000, m_bits=18)
    p.add_argument("--clients", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="omit wall-clock columns so output is byte-reproducible")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fpr", help="false-positive sweeps over granules or filter size")
    _common(p, n_events=experiments.FPR_EVENTS, m_bits=16, max_len=experiments.FPR_MAX_INTERVAL,
            zipf_s=experiments.FPR_ZIPF_S, dims=experiments.FPR_DIMS, granule=None)
    p.set_defaults(seed=experiments.FPR_SEED)
    p.add_argument("--sweep", choices=("granule", "m"), default="granule")
    p.add_argument("--m-sweep", type=_int_list, default=_int_list("8,10,12,14,16"),
                   help="log2 filter sizes for --sweep m")
    p.set_defaults(func=cmd_fpr)

    p = sub.add_parser("sim", help="overlay simulation with the zero-false-negative check")
    _common(p, n_subs_default="1000", n_events=1000)
    p.add_argument("--topology", help="JSON topology file (default: a chain)")
    p.add_argument("--brokers", type=int, default=3)
    p.add_argument("--clients", type=int, default=10, help="clients per broker in the default chain")
    p.add_argument("--trace", help="write the per-event delivery trace here")
    p.add_argument("--negative-control", action="store_true",
                   help="allow mismatched filter params and report false negatives without failing")
    p.set_defaults(func=cmd_sim)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fpr" and args.sweep == "granule" and args.schema:
            raise ConfigError("fpr sweeps build their own schema; drop --schema")
        return args.func(args)
    except (ConfigError, DLSError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
