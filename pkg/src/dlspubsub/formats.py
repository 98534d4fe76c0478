"""Plain-file formats: JSON schema and topology files, tab-separated workloads,
traces and result tables.

Workload files start with ``#`` header lines carrying the schema and the
generator settings, so a file is enough to rerun an experiment bit for bit.
Subscription lines hold ``low_1 high_1 ... low_d high_d``; event lines hold
``v_1 ... v_d``; fields are tab separated.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .cbf import CBFParams
from .errors import SchemaError, TopologyError
from .harness import Boxes, WorkloadSpec
from .labels import DISCRETE, ContentSchema, DimensionSpec
from .overlay import Topology, TraceRecord

PathLike = Union[str, Path]
WORKLOAD_MAGIC = "# dlspubsub-workload 1"
SUBSCRIPTIONS = "subscriptions"
EVENTS = "events"


# schema


def schema_to_dict(schema: ContentSchema) -> dict:
    dims = []
    for dim in schema.dims:
        if dim.kind == DISCRETE:
            dims.append({"name": dim.name, "bits": dim.bits, "values": list(dim.values)})
        else:
            dims.append({"name": dim.name, "bits": dim.bits, "lower": dim.lower, "upper": dim.upper})
    return {"app_id_bits": schema.app_id_bits, "dimensions": dims}


def schema_from_dict(data: Mapping) -> ContentSchema:
    try:
        dims = []
        for entry in data["dimensions"]:
            if "values" in entry:
                dims.append(DimensionSpec.discrete(entry["name"], entry["values"], entry["bits"]))
            else:
                dims.append(DimensionSpec.numeric(entry["name"], entry["lower"], entry["upper"], entry["bits"]))
        return ContentSchema(dims, app_id_bits=int(data.get("app_id_bits", 0)))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema document: {exc!r}") from None


def load_schema(path: PathLike) -> ContentSchema:
    return schema_from_dict(json.loads(Path(path).read_text()))


def dump_schema(schema: ContentSchema, path: PathLike) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2, sort_keys=True) + "\n")


# topology


def params_to_dict(p: CBFParams) -> dict:
    return {"m": p.m, "k_h": p.k_h, "counter_bits": p.counter_bits, "seed_a": p.seed_a, "seed_b": p.seed_b}


def topology_from_dict(data: Mapping) -> Topology:
    try:
        params = CBFParams(**data["cbf"])
        overrides = {b: CBFParams(**p) for b, p in data.get("overrides", {}).items()}
        links = [tuple(pair) for pair in data.get("links", [])]
        if any(len(pair) != 2 for pair in links):
            raise TopologyError("every link needs exactly two endpoints")
        return Topology(list(data["brokers"]), links, dict(data.get("clients", {})), params, overrides)
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"malformed topology document: {exc!r}") from None


def topology_to_dict(t: Topology) -> dict:
    out = {
        "brokers": list(t.brokers),
        "links": [list(pair) for pair in t.links],
        "clients": dict(sorted(t.clients.items())),
        "cbf": params_to_dict(t.cbf_params),
    }
    if t.overrides:
        out["overrides"] = {b: params_to_dict(p) for b, p in sorted(t.overrides.items())}
    return out


def load_topology(path: PathLike) -> Topology:
    return topology_from_dict(json.loads(Path(path).read_text()))


def dump_topology(t: Topology, path: PathLike) -> None:
    Path(path).write_text(json.dumps(topology_to_dict(t), indent=2, sort_keys=True) + "\n")


# workloads


def _header(kind: str, schema: ContentSchema, spec: Optional[WorkloadSpec], count: int) -> List[str]:
    lines = [WORKLOAD_MAGIC, f"# kind={kind}", f"# count={count}",
             "# schema=" + json.dumps(schema_to_dict(schema), sort_keys=True, separators=(",", ":"))]
    if spec is not None:
        lines.append(f"# dist={spec.distribution} seed={spec.seed} zipf_s={spec.zipf_s!r} "
                     f"max_interval_len={spec.max_interval_len}")
    return lines


def _write_rows(path: PathLike, header: List[str], rows: np.ndarray) -> None:
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    for row in rows.tolist():
        buf.write("\t".join(map(str, row)) + "\n")
    Path(path).write_text(buf.getvalue())


def write_subscriptions(path: PathLike, schema: ContentSchema, boxes: Boxes,
                        spec: Optional[WorkloadSpec] = None) -> None:
    rows = np.empty((len(boxes), 2 * schema.d), dtype=np.int64)
    rows[:, 0::2] = boxes.lows
    rows[:, 1::2] = boxes.highs
    _write_rows(path, _header(SUBSCRIPTIONS, schema, spec, len(boxes)), rows)


def write_events(path: PathLike, schema: ContentSchema, events: np.ndarray,
                 spec: Optional[WorkloadSpec] = None) -> None:
    events = np.asarray(events, dtype=np.int64).reshape(-1, schema.d)
    _write_rows(path, _header(EVENTS, schema, spec, len(events)), events)


def read_workload(path: PathLike) -> Tuple[str, ContentSchema, np.ndarray]:
    """Return ``(kind, schema, rows)`` for a file written by this module."""
    meta: Dict[str, str] = {}
    rows = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != WORKLOAD_MAGIC:
            raise SchemaError(f"{path}: not a workload file")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta.setdefault(key, value)
            elif line:
                try:
                    rows.append([int(x) for x in line.split("\t")])
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: non-integer field") from None
    if "schema" not in meta or meta.get("kind") not in (SUBSCRIPTIONS, EVENTS):
        raise SchemaError(f"{path}: header lacks schema or kind")
    schema = schema_from_dict(json.loads(meta["schema"]))
    width = 2 * schema.d if meta["kind"] == SUBSCRIPTIONS else schema.d
    if any(len(r) != width for r in rows):
        raise SchemaError(f"{path}: expected {width} fields per line")
    data = np.asarray(rows, dtype=np.int64).reshape(-1, width)
    return meta["kind"], schema, data


def read_subscriptions(path: PathLike) -> Tuple[ContentSchema, Boxes]:
    kind, schema, data = read_workload(path)
    if kind != SUBSCRIPTIONS:
        raise SchemaError(f"{path} holds {kind}, not subscriptions")
    return schema, Boxes(data[:, 0::2].copy(), data[:, 1::2].copy())


def read_events(path: PathLike) -> Tuple[ContentSchema, np.ndarray]:
    kind, schema, data = read_workload(path)
    if kind != EVENTS:
        raise SchemaError(f"{path} holds {kind}, not events")
    return schema, data


# traces and tables


def write_trace(path: PathLike, traces: Iterable[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["event_id", "label", "publisher", "delivered", "hops"])
        for t in traces:
            w.writerow([t.event_id, t.label, t.publisher, ",".join(sorted(t.delivered)), ",".join(t.hops)])


def render_table(rows: Sequence[Mapping], fmt: str) -> str:
    """Rows as CSV (columns from the first row) or as indented JSON."""
    if fmt == "json":
        return json.dumps(list(rows), indent=2, sort_keys=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def pivot(rows: Sequence[Mapping], across: str, metrics: Sequence[str]) -> List[Dict]:
    """One row per metric, one column per value of ``across``."""
    out = []
    for metric in metrics:
        row = {"metric": metric}
        for r in rows:
            row[f"{across}={r[across]}"] = r[metric]
        out.append(row)
    return out
