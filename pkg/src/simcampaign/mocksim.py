"""Deterministic M/M/1 queue used as a stand-in simulator.

Random numbers come straight from a SplitMix64 stream seeded with the run
seed; each 64-bit output ``x`` maps to ``u = (x >> 11) * 2**-53`` (``u == 0``
is replaced by ``2**-53``) and exponential variates are ``-ln(u) / rate``.
Customers draw their interarrival time and then their service time, in
customer order, so the byte output is fixed for a given config and seed.
No warm-up period is discarded.

Usage::

    mocksim --config run.ini --out rundir [--seed N]
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
TWO_M53 = 2.0 ** -53

SCA_NAME = "results.sca"
VEC_NAME = "results.vec"
MODULE = "mm1.server"


def splitmix64(state: int) -> tuple[int, int]:
    """Advance ``state`` once; return (new state, output)."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def unit_interval(x: int) -> float:
    u = (x >> 11) * TWO_M53
    return u if u > 0.0 else TWO_M53


def uniform_stream(seed: int):
    """Infinite stream of doubles in (0, 1)."""
    state = seed & MASK64
    while True:
        state = (state + GOLDEN) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        u = ((z ^ (z >> 31)) >> 11) * TWO_M53
        yield u if u > 0.0 else TWO_M53


@dataclass(frozen=True)
class SimConfig:
    lam: float
    mu: float
    customers: int
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0 or not self.mu > 0:
            raise ValueError("arrival and service rates must be positive")
        if self.customers < 1:
            raise ValueError("customers must be >= 1")


@dataclass
class SimResult:
    mean_sojourn: float
    mean_queue_wait: float
    throughput: float
    served: int
    mean_interarrival: float
    mean_in_system: float
    end_time: float
    # (departure time, sojourn) per customer, in departure order
    samples: list = field(default_factory=list, repr=False)


def simulate(cfg: SimConfig) -> SimResult:
    uni = uniform_stream(cfg.seed)
    log = math.log
    lam, mu, n = cfg.lam, cfg.mu, cfg.customers
    inf = math.inf

    queue = deque()  # (arrival time, service time) of customers in system
    samples = []
    sum_sojourn = sum_wait = area = 0.0
    in_system = 0
    last_event = 0.0

    arrivals = 1
    next_arr = -log(next(uni)) / lam
    next_svc = -log(next(uni)) / mu
    next_dep = inf
    while len(samples) < n:
        if next_arr <= next_dep:
            now = next_arr
            area += in_system * (now - last_event)
            last_event = now
            queue.append((now, next_svc))
            in_system += 1
            if in_system == 1:
                next_dep = now + next_svc
            if arrivals < n:
                arrivals += 1
                next_arr = now - log(next(uni)) / lam
                next_svc = -log(next(uni)) / mu
            else:
                next_arr = inf
        else:
            now = next_dep
            area += in_system * (now - last_event)
            last_event = now
            arrived, _ = queue.popleft()
            in_system -= 1
            sojourn = now - arrived
            sum_sojourn += sojourn
            samples.append((now, sojourn))
            if queue:
                head_arr, head_svc = queue[0]
                sum_wait += now - head_arr
                next_dep = now + head_svc
            else:
                next_dep = inf
    return SimResult(
        mean_sojourn=sum_sojourn / n,
        mean_queue_wait=sum_wait / n,
        throughput=n / last_event,
        served=n,
        mean_interarrival=_last_arrival_time(samples) / n,
        mean_in_system=area / last_event,
        end_time=last_event,
        samples=samples,
    )


def _last_arrival_time(samples):
    # FIFO: the last customer to leave arrived last
    dep, sojourn = samples[-1]
    return dep - sojourn


def _num(x) -> str:
    return repr(float(x))


def _token(text: str) -> str:
    if text and not any(c.isspace() or c == '"' for c in text):
        return text
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_results(result: SimResult, outdir, run_id: str, seed: int, itervars=()) -> tuple[Path, Path]:
    """Write ``results.sca`` and ``results.vec`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sca = outdir / SCA_NAME
    vec = outdir / VEC_NAME
    lines = ["version 3", f"run {_token(run_id)}"]
    lines += [f"itervar {name} {_token(value)}" for name, value in itervars]
    lines.append(f"attr seed {seed}")
    lines += [
        f"scalar {MODULE} meanSojourn {_num(result.mean_sojourn)}",
        f"scalar {MODULE} meanQueueWait {_num(result.mean_queue_wait)}",
        f"scalar {MODULE} throughput {_num(result.throughput)}",
        f"scalar {MODULE} servedCount {result.served}",
    ]
    sca.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(vec, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"vector 0 {MODULE} sojourn TV\n")
        fh.writelines([f"0 {t!r} {s!r}\n" for t, s in result.samples])
    return sca, vec


def _lookup(params, name):
    from .config import factor_name

    for p in params.entries:
        if factor_name(p.key) == name:
            return p.value
    raise KeyError(name)


def main(argv=None) -> int:
    from .config import parse_params
    from .errors import DefinitionError
    from .factors import parse_run_key

    ap = argparse.ArgumentParser(prog="mocksim", description="Deterministic M/M/1 stand-in simulator.")
    ap.add_argument("--config", required=True, help="materialized ini file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides $CAMPAIGN_SEED")
    args = ap.parse_args(argv)

    try:
        params = parse_params(Path(args.config).read_text(encoding="utf-8"))
        cfg = SimConfig(
            lam=float(_lookup(params, "lambda")),
            mu=float(_lookup(params, "mu")),
            customers=int(_lookup(params, "customers")),
            seed=args.seed if args.seed is not None else int(os.environ.get("CAMPAIGN_SEED", "0")),
        )
    except KeyError as exc:
        print(f"mocksim: missing config key {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, DefinitionError) as exc:
        print(f"mocksim: {exc}", file=sys.stderr)
        return 2

    runkey = os.environ.get("CAMPAIGN_RUNKEY")
    itervars = ()
    if runkey:
        values, _ = parse_run_key(runkey)
        itervars = tuple(values.items())
    run_id = runkey or f"mocksim-{cfg.seed}"
    result = simulate(cfg)
    write_results(result, args.out, run_id, cfg.seed, itervars)
    return 0


if __name__ == "__main__":
    sys.exit(main())
