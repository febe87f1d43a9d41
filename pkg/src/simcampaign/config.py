"""Scenario definition files.

Two files describe a campaign.  The parameters file holds fixed settings::

    **.parameter = 50
    seed = 7            # optional base seed for the whole campaign

The factors file declares iteration variables plus an optional repetition
count::

    **.factA = ${ 50 , 100 }
    **.factB = ${ 1 , 2 }
    repeat = 2

A factor is named after the last dotted component of its key
(``**.factA`` -> ``factA``).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import CampaignError, DefinitionError
from .factors import FactorDef, FactorSpace, RunPoint, Value, format_value, infer_value, run_key

U64 = 1 << 64
_ITERVAR_RE = re.compile(r"\$\{(.*)\}\Z", re.S)


class Param(NamedTuple):
    key: str
    value: Value
    raw: str


@dataclass(frozen=True)
class ParamSet:
    entries: tuple = ()

    def __len__(self):
        return len(self.entries)

    def get(self, key, default=None):
        for p in self.entries:
            if p.key == key:
                return p.value
        return default


@dataclass(frozen=True)
class CampaignDef:
    params: ParamSet = field(default_factory=ParamSet)
    space: FactorSpace = field(default_factory=FactorSpace)
    base_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.base_seed < U64:
            raise CampaignError(f"base seed {self.base_seed} is not a 64-bit unsigned integer")
        keys = {p.key for p in self.params.entries}
        for f in self.space.factors:
            if f.pattern in keys:
                raise CampaignError(f"{f.pattern!r} is declared both as a parameter and as a factor")

    def params_digest(self) -> str:
        text = "".join(f"{p.key}={p.raw}\n" for p in self.params.entries)
        return hashlib.sha256(text.encode()).hexdigest()


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _assignments(text: str):
    """Yield (line number, key, raw value) for every non-blank, non-comment line."""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        key, eq, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not eq:
            raise DefinitionError("expected 'key = value'", lineno)
        if not key:
            raise DefinitionError("empty key", lineno)
        yield lineno, key, raw


def parse_params(text: str) -> ParamSet:
    entries = []
    seen = {}
    for lineno, key, raw in _assignments(text):
        if key in seen:
            raise DefinitionError(f"duplicate key {key!r} (first defined on line {seen[key]})", lineno)
        if not raw:
            raise DefinitionError(f"missing value for {key!r}", lineno)
        seen[key] = lineno
        entries.append(Param(key, infer_value(raw), raw))
    return ParamSet(tuple(entries))


def factor_name(pattern: str) -> str:
    return pattern.rsplit(".", 1)[-1]


def parse_factors(text: str) -> FactorSpace:
    factors = []
    seen = {}
    repeat = None
    for lineno, key, raw in _assignments(text):
        if key == "repeat":
            if repeat is not None:
                raise DefinitionError("'repeat' given twice", lineno)
            value = infer_value(raw)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise DefinitionError(f"repeat must be a positive integer, got {raw!r}", lineno)
            repeat = value
            continue
        m = _ITERVAR_RE.match(raw)
        if m is None:
            raise DefinitionError(f"expected '${{ v1 , v2 , ... }}' for {key!r}", lineno)
        body = m.group(1).strip()
        if not body:
            raise DefinitionError(f"empty value list for {key!r}", lineno)
        items = [s.strip() for s in body.split(",")]
        if any(not s for s in items):
            raise DefinitionError(f"empty item in value list for {key!r}", lineno)
        name = factor_name(key)
        if name in seen:
            raise DefinitionError(f"duplicate factor {name!r} (first defined on line {seen[name]})", lineno)
        seen[name] = lineno
        try:
            factors.append(FactorDef(name, tuple(infer_value(s) for s in items), key))
        except CampaignError as exc:
            raise DefinitionError(str(exc), lineno) from None
    return FactorSpace(tuple(factors), repeat or 1)


def ini_value(value: Value) -> str:
    if isinstance(value, str):
        return f'"{value}"'
    return format_value(value)


def render_factors(space: FactorSpace) -> str:
    """Canonical factors-file text; parse_factors(render_factors(s)) == s."""
    lines = [f"{f.pattern} = ${{ {' , '.join(ini_value(v) for v in f.levels)} }}" for f in space.factors]
    lines.append(f"repeat = {space.repetitions}")
    return "\n".join(lines) + "\n"


def load_campaign(params_text: str, factors_text: str) -> CampaignDef:
    """Build a CampaignDef; a ``seed`` entry in the parameters file becomes the base seed."""
    params = parse_params(params_text)
    base_seed = 0
    kept = []
    for p in params.entries:
        if p.key == "seed":
            if isinstance(p.value, bool) or not isinstance(p.value, int) or not 0 <= p.value < U64:
                raise DefinitionError(f"seed must be an unsigned 64-bit integer, got {p.raw!r}")
            base_seed = p.value
        else:
            kept.append(p)
    space = parse_factors(factors_text)
    try:
        return CampaignDef(ParamSet(tuple(kept)), space, base_seed)
    except CampaignError as exc:
        raise DefinitionError(str(exc)) from None


def materialize(defn: CampaignDef, point: RunPoint) -> str:
    lines = [f"{p.key} = {p.raw}" for p in defn.params.entries]
    for f in defn.space.factors:
        lines.append(f"{f.pattern} = {ini_value(point.assignment[f.name])}")
    lines.append(f"# runkey = {run_key(point)}")
    return "\n".join(lines) + "\n"
