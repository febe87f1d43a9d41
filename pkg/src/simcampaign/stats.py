"""Plot-ready statistics over tagged scalar records.

Confidence intervals are Student-t intervals on the replication means.
Quartiles use linear interpolation between order statistics at position
``(n - 1) * p`` (Hyndman & Fan type 7).  Factorial analysis follows the
usual 2^k r sign-table method: effects, sums of squares, allocation of
variation and effect confidence intervals.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import EmptyResultError, IncompleteDesignError, UnknownFactorError
from .factors import format_value, value_key

log = logging.getLogger(__name__)


class Accumulator:
    """Welford running mean / variance."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "Accumulator") -> "Accumulator":
        """Combine two accumulators (Chan et al.); returns a new one."""
        out = Accumulator()
        n = self.n + other.n
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.n = n
        out.mean = self.mean + delta * other.n / n
        out.m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return out

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def stddev(self) -> float:
        return math.sqrt(self.variance) if self.n > 1 else math.nan


def t_quantile(p: float, dof: int) -> float:
    """Inverse CDF of Student's t with ``dof`` degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if int(dof) != dof or dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    from scipy.special import stdtrit

    return float(stdtrit(int(dof), p))


@dataclass
class GroupStats:
    group: dict
    n: int
    mean: float
    stddev: float
    ci_half_width: Optional[float]  # None when n == 1
    level: float

    @property
    def ci_defined(self) -> bool:
        return self.ci_half_width is not None


def group_key(group: Mapping) -> str:
    return ",".join(f"{k}={format_value(group[k])}" for k in sorted(group))


def _metric_values(tagged, metric, by):
    """Yield (group dict, value) for finite samples of ``metric``; counts exclusions."""
    found = False
    skipped = 0
    for t in tagged:
        if t.record.name != metric:
            continue
        found = True
        for name in by:
            if name not in t.factors:
                raise UnknownFactorError(name)
        if not math.isfinite(t.record.value):
            skipped += 1
            continue
        yield {name: t.factors[name] for name in by}, t.record.value
    if skipped:
        log.warning("excluded %d non-finite %s value(s)", skipped, metric)
    if not found:
        raise EmptyResultError(f"no records for metric {metric!r}")


def group_mean_ci(tagged: Iterable, metric: str, by: Sequence[str] = (), level: float = 0.95) -> list[GroupStats]:
    """Per-group mean, sample standard deviation and t confidence half-width."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    accs: dict[str, tuple[dict, Accumulator]] = {}
    for group, value in _metric_values(tagged, metric, by):
        key = group_key(group)
        if key not in accs:
            accs[key] = (group, Accumulator())
        accs[key][1].add(value)
    if not accs:
        raise EmptyResultError(f"no finite values for metric {metric!r}")
    out = []
    for key in sorted(accs):
        group, acc = accs[key]
        if acc.n > 1:
            sd = math.sqrt(acc.m2 / (acc.n - 1))
            hw = t_quantile((1 + level) / 2, acc.n - 1) * sd / math.sqrt(acc.n)
        else:
            sd, hw = 0.0, None
        out.append(GroupStats(group, acc.n, acc.mean, sd, hw, level))
    return out


def ecdf(samples: Iterable[float]) -> list[tuple[float, float]]:
    xs = sorted(samples)
    if not xs:
        raise EmptyResultError("ECDF of an empty sample")
    n = len(xs)
    out = []
    for i, x in enumerate(xs):
        if i + 1 < n and xs[i + 1] == x:
            continue
        out.append((x, (i + 1) / n))
    return out


class FiveNumber(NamedTuple):
    min: float
    q1: float
    median: float
    q3: float
    max: float


def _type7(xs, p):
    h = (len(xs) - 1) * p
    lo = math.floor(h)
    if lo + 1 >= len(xs):
        return xs[lo]
    return xs[lo] + (h - lo) * (xs[lo + 1] - xs[lo])


def five_number(samples: Iterable[float]) -> FiveNumber:
    xs = sorted(samples)
    if not xs:
        raise EmptyResultError("five-number summary of an empty sample")
    return FiveNumber(xs[0], _type7(xs, 0.25), _type7(xs, 0.5), _type7(xs, 0.75), xs[-1])


@dataclass
class EcdfTable:
    group: dict
    points: list


@dataclass
class BoxStats:
    group: dict
    n: int
    summary: FiveNumber


def grouped_samples(tagged, metric, by=()) -> list[tuple[dict, list]]:
    """Materialize the finite samples of one metric per group (sorted by group key)."""
    groups: dict[str, tuple[dict, list]] = {}
    for group, value in _metric_values(tagged, metric, by):
        groups.setdefault(group_key(group), (group, []))[1].append(value)
    return [groups[k] for k in sorted(groups)]


def ecdf_by_group(tagged, metric, by=()) -> list[EcdfTable]:
    return [EcdfTable(g, ecdf(v)) for g, v in grouped_samples(tagged, metric, by)]


def box_by_group(tagged, metric, by=()) -> list[BoxStats]:
    return [BoxStats(g, len(v), five_number(v)) for g, v in grouped_samples(tagged, metric, by)]


# -- 2^k r factorial designs --------------------------------------------------

def subset_label(subset: Sequence[int], names: Sequence[str]) -> str:
    letters = all(len(n) == 1 for n in names)
    return ("" if letters else ":").join(names[i] for i in subset)


def effect_subsets(k: int) -> list[tuple[int, ...]]:
    """Nonempty factor subsets in standard order: A, B, AB, C, AC, BC, ABC, ..."""
    return [tuple(i for i in range(k) if mask >> i & 1) for mask in range(1, 2 ** k)]


@dataclass
class FactorialResult:
    k: int
    r: int
    names: list
    q0: float
    effects: dict  # label -> q
    ss: dict  # label -> sum of squares
    sse: float
    sst: float
    variation_pct: dict  # label -> percent
    error_pct: float
    level: float
    effect_ci_half_width: Optional[float]  # None when r == 1
    degenerate: bool = False
    labels: list = field(default_factory=list)


def factorial_2kr(
    responses: Mapping[tuple, float],
    level: float = 0.90,
    names: Sequence[str] | None = None,
) -> FactorialResult:
    """Analyze a complete 2^k r design.

    ``responses`` maps ``(levels, rep)`` to the observed response, where
    ``levels`` is a tuple of -1/+1 of length k and ``rep`` runs over 0..r-1.
    """
    if not responses:
        raise IncompleteDesignError("no responses")
    cells: dict[tuple, dict] = {}
    k = None
    for key, y in responses.items():
        levels, rep = key
        levels = tuple(levels)
        if k is None:
            k = len(levels)
        if len(levels) != k:
            raise IncompleteDesignError(f"cell {levels} has {len(levels)} levels, expected {k}")
        if any(v not in (-1, 1) for v in levels):
            raise IncompleteDesignError(f"cell {levels}: levels must be -1 or +1")
        cells.setdefault(levels, {})[rep] = float(y)
    names = list(names) if names is not None else [chr(ord("A") + i) for i in range(k)]
    if len(names) != k:
        raise ValueError(f"{len(names)} names for {k} factors")

    all_cells = list(itertools.product((-1, 1), repeat=k))
    missing = [c for c in all_cells if c not in cells]
    if missing:
        raise IncompleteDesignError(f"missing cell {_cell_text(missing[0], names)}")
    r = len(cells[all_cells[0]])
    for c in all_cells:
        if sorted(cells[c]) != list(range(r)):
            raise IncompleteDesignError(
                f"cell {_cell_text(c, names)} has replications {sorted(cells[c])}, expected 0..{r - 1}"
            )

    # rows ordered with the first factor varying fastest
    order = sorted(all_cells, key=lambda c: c[::-1])
    signs = np.array(order, dtype=float)  # (2^k, k)
    y = np.array([[cells[c][j] for j in range(r)] for c in order])  # (2^k, r)
    means = y.mean(axis=1)
    ncells = 2 ** k

    subsets = effect_subsets(k)
    labels = [subset_label(s, names) for s in subsets]
    q0 = float(means.mean())
    effects, ss = {}, {}
    for s, label in zip(subsets, labels):
        col = np.prod(signs[:, list(s)], axis=1)
        q = float(col @ means) / ncells
        effects[label] = q
        ss[label] = ncells * r * q * q
    sse = float(((y - means[:, None]) ** 2).sum())
    sst = float(((y - q0) ** 2).sum())

    degenerate = sst == 0.0 or bool(np.all(y == y.flat[0]))
    if degenerate:
        pct = {label: 0.0 for label in labels}
        err_pct = 0.0
    else:
        pct = {label: 100.0 * ss[label] / sst for label in labels}
        err_pct = 100.0 * sse / sst

    hw = None
    if r >= 2:
        dof = ncells * (r - 1)
        se = math.sqrt(sse / dof)
        hw = t_quantile((1 + level) / 2, dof) * se / math.sqrt(ncells * r)
    return FactorialResult(k, r, names, q0, effects, ss, sse, sst, pct, err_pct, level, hw, degenerate, labels)


def _cell_text(cell, names):
    return "(" + ", ".join(f"{n}={'+' if v > 0 else '-'}" for n, v in zip(names, cell)) + ")"


def _level_order(value):
    if isinstance(value, bool):
        return (0, value)
    if isinstance(value, (int, float)):
        return (1, value)
    return (2, str(value))


def design_from_tagged(tagged, metric: str, factors: Sequence[str]):
    """Build factorial responses from tagged records.

    Each factor must take exactly two values; the lower one is coded -1.
    Replications are renumbered 0..r-1 within each cell in repetition order.
    Returns ``(responses, {factor: (low, high)})``.
    """
    factors = list(factors)
    obs = []
    for t in tagged:
        if t.record.name != metric:
            continue
        for name in factors:
            if name not in t.factors:
                raise UnknownFactorError(name)
        obs.append((tuple(t.factors[f] for f in factors), t.rep, t.record.value))
    if not obs:
        raise EmptyResultError(f"no records for metric {metric!r}")
    skipped = sum(1 for *_, v in obs if not math.isfinite(v))
    if skipped:
        log.warning("excluded %d non-finite %s value(s)", skipped, metric)
        obs = [o for o in obs if math.isfinite(o[2])]

    coding = {}
    for i, name in enumerate(factors):
        values = {}
        for combo, _, _ in obs:
            values.setdefault(value_key(combo[i]), combo[i])
        if len(values) != 2:
            raise IncompleteDesignError(
                f"factor {name!r} has {len(values)} level(s) in the data, a 2^k r design needs exactly 2"
            )
        low, high = sorted(values.values(), key=_level_order)
        coding[name] = (low, high)

    cells: dict[tuple, list] = {}
    for combo, rep, value in obs:
        signs = tuple(1 if value_key(v) == value_key(coding[f][1]) else -1 for f, v in zip(factors, combo))
        cells.setdefault(signs, []).append((rep, value))
    for signs in itertools.product((-1, 1), repeat=len(factors)):
        if signs not in cells:
            where = ", ".join(
                f"{f}={format_value(coding[f][1] if s > 0 else coding[f][0])}" for f, s in zip(factors, signs)
            )
            raise IncompleteDesignError(f"missing cell ({where})")
    responses = {}
    for signs, items in cells.items():
        items.sort(key=lambda it: it[0])
        reps = [rep for rep, _ in items]
        if len(set(reps)) != len(reps):
            raise IncompleteDesignError(
                f"cell {_cell_text(signs, factors)} has several runs per repetition; "
                "fix the remaining factors with a filter"
            )
        for j, (_, value) in enumerate(items):
            responses[(signs, j)] = value
    return responses, coding


def _fmt(x, digits):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, f".{digits}g")
    return str(x)


def write_table(result, digits: int = 6) -> bytes:
    """Render an analysis result as CSV bytes.

    Schemas (group columns are the group-by factors, sorted by name):

    * GroupStats list: ``<group>,n,mean,stddev,ci_half_width,level``
      (``ci_half_width`` is empty for single-sample groups)
    * ECDF (points or EcdfTable list): ``<group>,x,F``
    * five-number summary or BoxStats list: ``<group>,n,min,q1,median,q3,max``
    * FactorialResult: ``effect,q,ss,variation_pct,ci_half_width`` with one
      row per effect in standard order, then ``error`` (``q`` and
      ``ci_half_width`` empty).  The grand mean and SST are not part of the
      table.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    f = lambda x: _fmt(x, digits)  # noqa: E731

    if isinstance(result, FactorialResult):
        w.writerow(["effect", "q", "ss", "variation_pct", "ci_half_width"])
        for label in result.labels:
            w.writerow([label, f(result.effects[label]), f(result.ss[label]),
                        f(result.variation_pct[label]), f(result.effect_ci_half_width)])
        w.writerow(["error", "", f(result.sse), f(result.error_pct), ""])
        return buf.getvalue().encode()

    if isinstance(result, FiveNumber):
        result = [BoxStats({}, None, result)]
    elif isinstance(result, list) and result and isinstance(result[0], tuple) and not isinstance(result[0], BoxStats):
        result = [EcdfTable({}, result)]
    if not isinstance(result, list):
        raise TypeError(f"cannot tabulate {type(result).__name__}")
    names = sorted(result[0].group) if result else []
    gcols = lambda g: [format_value(g[k]) for k in names]  # noqa: E731

    if not result or isinstance(result[0], GroupStats):
        w.writerow([*names, "n", "mean", "stddev", "ci_half_width", "level"])
        for s in result:
            w.writerow([*gcols(s.group), s.n, f(s.mean), f(s.stddev), f(s.ci_half_width), f(s.level)])
    elif isinstance(result[0], EcdfTable):
        w.writerow([*names, "x", "F"])
        for t in result:
            for x, p in t.points:
                w.writerow([*gcols(t.group), f(x), f(p)])
    elif isinstance(result[0], BoxStats):
        w.writerow([*names, "n", "min", "q1", "median", "q3", "max"])
        for b in result:
            w.writerow([*gcols(b.group), "" if b.n is None else b.n, *(f(v) for v in b.summary)])
    else:
        raise TypeError(f"cannot tabulate list of {type(result[0]).__name__}")
    return buf.getvalue().encode()
