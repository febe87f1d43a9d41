"""Streaming readers for scalar (.sca) and vector (.vec) result files.

Every reader is a generator over the input stream: memory use is bounded by
the longest line plus one entry per declared vector, never by file size.

Scalar subset, one directive per line (tokens separated by blanks, double
quotes allowed around tokens containing blanks)::

    version 3                      (optional, first line only)
    run <runId>
    attr <key> <value>
    itervar <name> <value>
    param <pattern> <value>
    scalar <module> <name> <float>

Vector subset::

    vector <id> <module> <name> TV
    <id> <time> <value>

Vector files may also carry the ``version``/``run``/``attr``/``itervar``/
``param`` header lines of the scalar format.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import shlex
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional

from .errors import CampaignStateError, OrphanRunError, ResultParseError
from .factors import format_value, infer_value

log = logging.getLogger(__name__)


class RunEntry(NamedTuple):
    run_id: str


class AttrEntry(NamedTuple):
    run_id: Optional[str]
    key: str
    value: str


class ItervarEntry(NamedTuple):
    run_id: Optional[str]
    name: str
    value: str


class ParamEntry(NamedTuple):
    run_id: Optional[str]
    pattern: str
    value: str


class ScalarRecord(NamedTuple):
    run_id: Optional[str]
    module: str
    name: str
    value: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


class VectorDecl(NamedTuple):
    vector_id: int
    module: str
    name: str


class VectorSample(NamedTuple):
    vector_id: int
    time: float
    value: float


@dataclass
class ParseStats:
    """Counters filled in while a parse generator is consumed."""

    lines: int = 0
    records: int = 0
    skipped: int = 0
    nonfinite: int = 0
    time_warnings: int = 0
    skipped_directives: dict = field(default_factory=dict)


def _split(line: str, lineno: int) -> list[str]:
    if '"' not in line:
        return line.split()
    try:
        return shlex.split(line, comments=False, posix=True)
    except ValueError:
        raise ResultParseError("unbalanced quotes", lineno, line.rstrip("\n")) from None


def _header(parts, lineno, line, run_id):
    """Handle the directives shared by scalar and vector files."""
    d = parts[0]
    if d == "run":
        if len(parts) != 2:
            raise ResultParseError("expected 'run <runId>'", lineno, line)
        return RunEntry(parts[1])
    if d in ("attr", "itervar", "param"):
        if len(parts) != 3:
            raise ResultParseError(f"expected '{d} <name> <value>'", lineno, line)
        cls = {"attr": AttrEntry, "itervar": ItervarEntry, "param": ParamEntry}[d]
        return cls(run_id, parts[1], parts[2])
    return None


def _skip_or_raise(parts, lineno, line, strict, stats):
    if strict:
        raise ResultParseError(f"unknown directive {parts[0]!r}", lineno, line)
    stats.skipped += 1
    stats.skipped_directives[parts[0]] = stats.skipped_directives.get(parts[0], 0) + 1


def _version_ok(parts, lineno, line, seen_content):
    if seen_content:
        raise ResultParseError("'version' must be the first line", lineno, line)
    if len(parts) != 2 or not parts[1].isdigit():
        raise ResultParseError("expected 'version <n>'", lineno, line)


def parse_scalar_file(stream: Iterable[str], *, strict: bool = True, stats: ParseStats | None = None) -> Iterator:
    """Yield RunEntry, AttrEntry, ItervarEntry, ParamEntry and ScalarRecord items in file order."""
    stats = stats if stats is not None else ParseStats()
    run_id = None
    seen_content = False
    for lineno, raw in enumerate(stream, 1):
        stats.lines += 1
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = _split(line, lineno)
        d = parts[0]
        if d == "scalar":
            if len(parts) != 4:
                raise ResultParseError("expected 'scalar <module> <name> <value>'", lineno, line)
            try:
                value = float(parts[3])
            except ValueError:
                raise ResultParseError("scalar value is not a number", lineno, line) from None
            if not math.isfinite(value):
                stats.nonfinite += 1
            stats.records += 1
            item = ScalarRecord(run_id, parts[1], parts[2], value)
        elif d == "version":
            _version_ok(parts, lineno, line, seen_content)
            seen_content = True
            continue
        else:
            item = _header(parts, lineno, line, run_id)
            if item is None:
                _skip_or_raise(parts, lineno, line, strict, stats)
                seen_content = True
                continue
            if isinstance(item, RunEntry):
                run_id = item.run_id
        seen_content = True
        yield item


def parse_vector_file(
    stream: Iterable[str],
    *,
    strict: bool = True,
    monotone_error: bool = False,
    stats: ParseStats | None = None,
) -> Iterator:
    """Yield VectorDecl and VectorSample items (plus header entries) in file order.

    A sample whose time is lower than the previous sample of the same vector
    is counted in ``stats.time_warnings``, or raises when ``monotone_error``.
    """
    stats = stats if stats is not None else ParseStats()
    last_time: dict[int, float] = {}
    run_id = None
    seen_content = False
    warned = False
    for lineno, line in enumerate(stream, 1):
        stats.lines += 1
        if line[:1].isdigit():
            parts = line.split()
            try:
                if len(parts) != 3:
                    raise ValueError
                vid = int(parts[0])
                t = float(parts[1])
                v = float(parts[2])
            except ValueError:
                raise ResultParseError("expected '<id> <time> <value>'", lineno, line.rstrip("\r\n")) from None
            prev = last_time.get(vid)
            if prev is None:
                raise ResultParseError(f"sample for undeclared vector {vid}", lineno, line.rstrip("\r\n"))
            if not t >= 0.0 or t == math.inf:
                raise ResultParseError("sample time must be finite and non-negative", lineno, line.rstrip("\r\n"))
            if t < prev:
                if monotone_error:
                    raise ResultParseError(f"time goes backwards in vector {vid}", lineno, line.rstrip("\r\n"))
                stats.time_warnings += 1
                if not warned:
                    log.warning("line %d: time goes backwards in vector %d", lineno, vid)
                    warned = True
            last_time[vid] = t
            if not math.isfinite(v):
                stats.nonfinite += 1
            stats.records += 1
            seen_content = True
            yield VectorSample(vid, t, v)
            continue

        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = _split(line, lineno)
        d = parts[0]
        if d == "vector":
            if len(parts) != 5 or parts[4] != "TV" or not parts[1].isdigit():
                raise ResultParseError("expected 'vector <id> <module> <name> TV'", lineno, line)
            vid = int(parts[1])
            if vid in last_time:
                raise ResultParseError(f"vector {vid} declared twice", lineno, line)
            last_time[vid] = 0.0
            item = VectorDecl(vid, parts[2], parts[3])
        elif d == "version":
            _version_ok(parts, lineno, line, seen_content)
            seen_content = True
            continue
        else:
            item = _header(parts, lineno, line, run_id)
            if item is None:
                _skip_or_raise(parts, lineno, line, strict, stats)
                seen_content = True
                continue
            if isinstance(item, RunEntry):
                run_id = item.run_id
        seen_content = True
        yield item


class TaggedRecord(NamedTuple):
    run_key: str
    rep: int
    factors: Mapping
    record: object  # ScalarRecord or VectorSample
    series: Optional[str] = None  # "<module>.<name>" for vector samples


def run_index(manifest) -> dict:
    """Map run key -> RunRecord; accepts a Manifest or an existing mapping."""
    if isinstance(manifest, Mapping):
        return manifest
    return {r.key: r for r in manifest.records}


def tag(records: Iterable, manifest, run_id: str | None = None) -> Iterator[TaggedRecord]:
    """Join scalar records and vector samples with their run's factor values.

    ``run_id`` is used for items that carry no run of their own (vector files
    without a ``run`` line, or scalars before the first ``run`` line).
    Itervar lines are checked against the manifest.
    """
    index = run_index(manifest)
    current = run_id
    series: dict[int, str] = {}

    def lookup(rid):
        if rid is None or rid not in index:
            raise OrphanRunError(rid)
        return index[rid]

    for item in records:
        if isinstance(item, ScalarRecord):
            rec = lookup(item.run_id if item.run_id is not None else run_id)
            yield TaggedRecord(rec.key, rec.rep, rec.assignment, item)
        elif isinstance(item, VectorSample):
            rec = lookup(current)
            yield TaggedRecord(rec.key, rec.rep, rec.assignment, item, series[item.vector_id])
        elif isinstance(item, VectorDecl):
            series[item.vector_id] = f"{item.module}.{item.name}"
        elif isinstance(item, RunEntry):
            current = item.run_id
        elif isinstance(item, ItervarEntry):
            rec = lookup(item.run_id if item.run_id is not None else current)
            if item.name in rec.assignment and format_value(rec.assignment[item.name]) != item.value:
                raise CampaignStateError(
                    f"run {rec.key}: itervar {item.name}={item.value} disagrees with the manifest"
                )


SCALAR_TAIL = ("module", "name", "value")
VECTOR_TAIL = ("vector", "time", "value")


def _kind(tagged: TaggedRecord) -> str:
    return "vector" if isinstance(tagged.record, VectorSample) else "scalar"


def _json_num(x: float):
    return x if math.isfinite(x) else None


def export(tagged: Iterable[TaggedRecord], fmt: str, sink, factor_names=(), kind: str = "scalar") -> int:
    """Write tagged records as CSV or JSON lines; returns the number of rows.

    CSV columns: ``runkey,rep,<factor names sorted>,module,name,value`` for
    scalars and ``runkey,rep,<factors>,vector,time,value`` for vector samples.
    JSON lines carry the same fields, with factors nested under ``factors``.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown export format {fmt!r}")
    if kind not in ("scalar", "vector"):
        raise ValueError(f"unknown record kind {kind!r}")
    names = sorted(factor_names)
    tail = SCALAR_TAIL if kind == "scalar" else VECTOR_TAIL
    writer = None
    if fmt == "csv":
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["runkey", "rep", *names, *tail])
    n = 0
    for t in tagged:
        if _kind(t) != kind:
            raise ValueError(f"cannot mix {_kind(t)} records into a {kind} export")
        r = t.record
        if kind == "scalar":
            fields = (r.module, r.name, r.value)
        else:
            fields = (t.series, r.time, r.value)
        if writer is not None:
            writer.writerow(
                [t.run_key, t.rep, *(format_value(t.factors[k]) for k in names),
                 fields[0], fields[1] if kind == "scalar" else repr(fields[1]), repr(fields[2])]
            )
        else:
            obj = {"runkey": t.run_key, "rep": t.rep, "factors": {k: t.factors[k] for k in names}}
            if kind == "scalar":
                obj.update(module=fields[0], name=fields[1], value=_json_num(fields[2]))
            else:
                obj.update(vector=fields[0], time=fields[1], value=_json_num(fields[2]))
            sink.write(json.dumps(obj, ensure_ascii=False) + "\n")
        n += 1
    return n


def read_export(stream, fmt: str) -> Iterator[TaggedRecord]:
    """Inverse of :func:`export` for scalar exports."""
    if fmt == "jsonl":
        for line in stream:
            if not line.strip():
                continue
            obj = json.loads(line)
            value = obj["value"]
            yield TaggedRecord(
                obj["runkey"], obj["rep"], obj["factors"],
                ScalarRecord(obj["runkey"], obj["module"], obj["name"], math.nan if value is None else float(value)),
            )
        return
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return
    if tuple(header[-3:]) != SCALAR_TAIL or header[:2] != ["runkey", "rep"]:
        raise ResultParseError("not a scalar export (unexpected header)", 1, ",".join(header))
    names = header[2:-3]
    for lineno, row in enumerate(reader, 2):
        if len(row) != len(header):
            raise ResultParseError("wrong number of columns", lineno, ",".join(row))
        try:
            factors = {k: infer_value(v) for k, v in zip(names, row[2:-3])}
            rec = ScalarRecord(row[0], row[-3], row[-2], float(row[-1]))
            yield TaggedRecord(row[0], int(row[1]), factors, rec)
        except ValueError:
            raise ResultParseError("malformed row", lineno, ",".join(row)) from None


def iter_campaign(manifest, kind: str = "scalar", *, strict: bool = True, stats: ParseStats | None = None):
    """Parse and tag the result files of every done run, in manifest order."""
    stats = stats if stats is not None else ParseStats()
    index = run_index(manifest)
    for rec in manifest.records:
        if rec.status != "done":
            continue
        if kind == "scalar":
            path = manifest.resolve(rec.sca_path)
            with open(path, encoding="utf-8") as fh:
                yield from tag(parse_scalar_file(fh, strict=strict, stats=stats), index, rec.key)
        else:
            path = manifest.resolve(rec.vec_path)
            with open(path, encoding="utf-8") as fh:
                yield from tag(parse_vector_file(fh, strict=strict, stats=stats), index, rec.key)
