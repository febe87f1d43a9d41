"""Factor spaces, run enumeration and factor-based run identity.

A campaign is the cartesian product of every factor's levels times the
repetition axis.  Runs are enumerated with the repetition index varying
fastest, then the first-declared factor, and so on up to the last-declared
factor, which varies slowest.  That position in the enumeration is the
*legacy id*; it shifts whenever levels or repetitions are added.  The
*run key* on the other hand is derived from the factor values alone and is
stable under such extensions.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

from .errors import (
    CampaignError,
    PointNotInSpaceError,
    PredicateSyntaxError,
    UnknownFactorError,
)

Value = Union[int, float, str, bool]

_INT_RE = re.compile(r"[+-]?\d+\Z")
_FLOAT_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z|[+-]?(inf|nan)\Z", re.I)
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
# characters that would make a run key ambiguous
_KEY_UNSAFE = set(",=#\n\r")


def infer_value(text: str) -> Value:
    """Type a raw token: int, then float, then bool, else string.

    Double-quoted text is always a string (quotes removed).
    """
    text = text.strip()
    if len(text) >= 2 and text[0] == '"' and text[-1] == '"':
        return text[1:-1]
    if _INT_RE.match(text):
        return int(text)
    if _FLOAT_RE.match(text):
        return float(text)
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    return text


def format_value(value: Value) -> str:
    """Canonical rendering used in run keys and exports."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        # repr is the shortest string that round-trips
        return repr(value)
    return str(value)


def value_key(value: Value) -> tuple:
    """Equality key that keeps booleans apart from the numbers 0 and 1."""
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("num", value)
    return ("str", value)


@dataclass(frozen=True)
class FactorDef:
    name: str
    levels: tuple
    pattern: str = ""

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.pattern:
            object.__setattr__(self, "pattern", f"**.{self.name}")
        if not self.name or not _NAME_RE.match(self.name):
            raise CampaignError(f"invalid factor name {self.name!r}")
        if not self.levels:
            raise CampaignError(f"factor {self.name!r} has no levels")
        seen_keys, seen_text = set(), set()
        for level in self.levels:
            if not isinstance(level, (int, float, str)):
                raise CampaignError(f"factor {self.name!r}: unsupported level {level!r}")
            if isinstance(level, float) and math.isnan(level):
                raise CampaignError(f"factor {self.name!r}: NaN is not a valid level")
            if isinstance(level, str) and (not level or _KEY_UNSAFE & set(level)):
                raise CampaignError(
                    f"factor {self.name!r}: string level {level!r} is empty or "
                    "contains one of , = # or a newline"
                )
            k, t = value_key(level), format_value(level)
            if k in seen_keys or t in seen_text:
                raise CampaignError(f"factor {self.name!r}: duplicate level {t}")
            seen_keys.add(k)
            seen_text.add(t)

    def index(self, value: Value) -> int:
        k = value_key(value)
        for i, level in enumerate(self.levels):
            if value_key(level) == k:
                return i
        raise PointNotInSpaceError(f"{format_value(value)} is not a level of {self.name!r}")


@dataclass(frozen=True)
class FactorSpace:
    factors: tuple = ()
    repetitions: int = 1

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not isinstance(self.repetitions, int) or self.repetitions < 1:
            raise CampaignError(f"repetitions must be a positive integer, got {self.repetitions!r}")
        names = [f.name for f in self.factors]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise CampaignError(f"duplicate factor name(s): {', '.join(sorted(dup))}")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.factors]

    def factor(self, name: str) -> FactorDef:
        for f in self.factors:
            if f.name == name:
                return f
        raise UnknownFactorError(name)

    def with_repetitions(self, repetitions: int) -> "FactorSpace":
        return FactorSpace(self.factors, repetitions)

    def with_levels(self, name: str, extra: Sequence[Value]) -> "FactorSpace":
        old = self.factor(name)
        new = FactorDef(old.name, old.levels + tuple(extra), old.pattern)
        return FactorSpace(tuple(new if f.name == name else f for f in self.factors), self.repetitions)

    def with_factor(self, factor: FactorDef) -> "FactorSpace":
        return FactorSpace(self.factors + (factor,), self.repetitions)


@dataclass(frozen=True)
class RunPoint:
    assignment: Mapping[str, Value]
    rep: int = 0

    def __hash__(self):
        return hash(run_key(self))

    def __eq__(self, other):
        if not isinstance(other, RunPoint):
            return NotImplemented
        return run_key(self) == run_key(other)


def count(space: FactorSpace) -> int:
    return math.prod(len(f.levels) for f in space.factors) * space.repetitions


def expand(space: FactorSpace) -> list[RunPoint]:
    names = space.names
    # product() varies its last argument fastest
    axes = [f.levels for f in reversed(space.factors)] + [range(space.repetitions)]
    points = []
    for combo in itertools.product(*axes):
        values = combo[-2::-1]
        points.append(RunPoint(dict(zip(names, values)), combo[-1]))
    return points


def run_key(point: RunPoint) -> str:
    body = ",".join(f"{n}={format_value(point.assignment[n])}" for n in sorted(point.assignment))
    return f"{body}#r={point.rep}"


def parse_run_key(key: str) -> tuple[dict[str, str], int]:
    """Split a run key into its raw (string) factor values and repetition."""
    body, sep, rep = key.rpartition("#r=")
    if not sep or not rep.isdigit():
        raise ValueError(f"malformed run key {key!r}")
    values = {}
    if body:
        for item in body.split(","):
            name, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed run key {key!r}")
            values[name] = value
    return values, int(rep)


def legacy_id(point: RunPoint, space: FactorSpace) -> int:
    """Position of ``point`` in ``expand(space)``, computed in mixed radix."""
    if set(point.assignment) != set(space.names):
        raise PointNotInSpaceError(f"point {run_key(point)} does not match the factor space")
    if not 0 <= point.rep < space.repetitions:
        raise PointNotInSpaceError(f"repetition {point.rep} outside [0, {space.repetitions})")
    idx = 0
    for f in reversed(space.factors):
        idx = idx * len(f.levels) + f.index(point.assignment[f.name])
    return idx * space.repetitions + point.rep


# -- selection predicates ---------------------------------------------------

@dataclass(frozen=True)
class Clause:
    name: str
    op: str  # "=", "!=" or "in"
    values: tuple

    def __call__(self, assignment: Mapping[str, Value]) -> bool:
        actual = value_key(assignment[self.name])
        hit = any(value_key(v) == actual for v in self.values)
        return not hit if self.op == "!=" else hit


@dataclass(frozen=True)
class Predicate:
    clauses: tuple = field(default_factory=tuple)
    text: str = ""

    def names(self) -> set[str]:
        return {c.name for c in self.clauses}

    def __call__(self, point) -> bool:
        assignment = point.assignment if isinstance(point, RunPoint) else point
        return all(c(assignment) for c in self.clauses)


MATCH_ALL = Predicate()

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<op>!=|=|\{|\}|,)
  | (?P<quoted>"[^"]*")
  | (?P<word>[^\s=!{},"]+)
    """,
    re.X,
)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PredicateSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def parse_predicate(text: str) -> Predicate:
    """Parse ``name=v``, ``name!=v`` and ``name in {v1,...}`` clauses joined by ``and``.

    The empty string matches every run.
    """
    tokens = _tokenize(text)
    i = 0

    def expect_value():
        nonlocal i
        kind, tok, pos = tokens[i]
        if kind not in ("word", "quoted"):
            raise PredicateSyntaxError("expected a value", pos)
        i += 1
        return infer_value(tok)

    clauses = []
    if tokens[0][0] == "end":
        return Predicate((), text)
    while True:
        kind, tok, pos = tokens[i]
        if kind != "word" or not _NAME_RE.match(tok):
            raise PredicateSyntaxError("expected a factor name", pos)
        name = tok
        i += 1
        kind, tok, pos = tokens[i]
        if tok in ("=", "!="):
            i += 1
            clauses.append(Clause(name, tok, (expect_value(),)))
        elif kind == "word" and tok == "in":
            i += 1
            if tokens[i][1] != "{":
                raise PredicateSyntaxError("expected '{'", tokens[i][2])
            i += 1
            values = [expect_value()]
            while tokens[i][1] == ",":
                i += 1
                values.append(expect_value())
            if tokens[i][1] != "}":
                raise PredicateSyntaxError("expected ',' or '}'", tokens[i][2])
            i += 1
            clauses.append(Clause(name, "in", tuple(values)))
        else:
            raise PredicateSyntaxError("expected '=', '!=' or 'in'", pos)
        kind, tok, pos = tokens[i]
        if kind == "end":
            break
        if kind == "word" and tok == "and":
            i += 1
            continue
        raise PredicateSyntaxError("expected 'and'", pos)
    return Predicate(tuple(clauses), text)


def select(points: Iterable[RunPoint], pred: Predicate, space: FactorSpace | None = None) -> list[RunPoint]:
    """Order-preserving filter; unknown factor names in ``pred`` raise UnknownFactorError."""
    points = list(points)
    if space is not None:
        known = set(space.names)
    elif points:
        known = set(points[0].assignment)
    else:
        known = None
    if known is not None:
        for name in sorted(pred.names()):
            if name not in known:
                raise UnknownFactorError(name)
    return [p for p in points if pred(p)]
