"""Campaign planning and execution.

A campaign lives in one output directory::

    <outdir>/manifest.json
    <outdir>/<sanitized run key>/config.ini, results.sca, results.vec, stdout.log

The manifest is rewritten (temp file + rename) after every status change,
so a killed launcher can be resumed.  Paths inside it are relative to the
manifest's directory.

Seeds follow the seed-set convention: the seed depends only on the base
seed and the repetition index, so every configuration of repetition ``r``
uses the same random stream.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import re
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .config import CampaignDef, Param, ParamSet, materialize
from .errors import CampaignError, CampaignStateError, UnknownFactorError
from .factors import (
    MATCH_ALL,
    FactorDef,
    FactorSpace,
    Predicate,
    RunPoint,
    expand,
    format_value,
    infer_value,
    legacy_id,
    run_key,
    value_key,
)
from .mocksim import MASK64, SCA_NAME, VEC_NAME, splitmix64

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.ini"
LOG_NAME = "stdout.log"
BUILTIN_PLACEHOLDERS = ("config", "seed", "rep", "runkey", "outdir")
STATUSES = ("pending", "running", "done", "failed")

_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")
_SAFE_RE = re.compile(r"[^A-Za-z0-9._+\-]")


def seed_for(base_seed: int, rep: int) -> int:
    """SplitMix64 output for state ``base_seed + rep``."""
    if rep < 0:
        raise ValueError("rep must be >= 0")
    return splitmix64((base_seed + rep) & MASK64)[1]


def sanitize_key(key: str) -> str:
    s = key.replace("=", "-").replace(",", "_").replace("#", "+")
    return _SAFE_RE.sub(lambda m: "%{:02X}".format(ord(m.group())), s)


def check_template(template: str, space: FactorSpace) -> None:
    names = set(BUILTIN_PLACEHOLDERS) | set(space.names)
    used = _PLACEHOLDER_RE.findall(template)
    unknown = sorted({u for u in used if u not in names})
    if unknown:
        raise CampaignError(f"unknown placeholder(s) in command template: {', '.join('{' + u + '}' for u in unknown)}")
    if "config" not in used:
        raise CampaignError("command template must contain {config}")
    shlex.split(template)


@dataclass
class RunRecord:
    key: str
    assignment: dict
    rep: int
    seed: int
    config_path: str
    sca_path: str
    vec_path: str
    status: str = "pending"
    exit_code: Optional[int] = None
    error: Optional[str] = None
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    @property
    def point(self) -> RunPoint:
        return RunPoint(self.assignment, self.rep)

    @property
    def run_dir(self) -> str:
        return str(Path(self.config_path).parent)

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "rep": self.rep,
            "assignment": {k: self.assignment[k] for k in sorted(self.assignment)},
            "status": self.status,
            "seed": self.seed,
            "exit_code": self.exit_code,
            "error": self.error,
            "config_path": self.config_path,
            "sca_path": self.sca_path,
            "vec_path": self.vec_path,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            key=d["key"], assignment=dict(d["assignment"]), rep=d["rep"], seed=d["seed"],
            config_path=d["config_path"], sca_path=d["sca_path"], vec_path=d["vec_path"],
            status=d["status"], exit_code=d.get("exit_code"), error=d.get("error"),
            started_at=d.get("started_at"), finished_at=d.get("finished_at"),
        )


@dataclass
class Manifest:
    path: Path
    campaign: CampaignDef
    template: str
    records: list = field(default_factory=list)
    filter: str = ""

    @property
    def root(self) -> Path:
        return Path(self.path).parent

    @property
    def space(self) -> FactorSpace:
        return self.campaign.space

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def by_key(self) -> dict:
        return {r.key: r for r in self.records}

    def counts(self) -> dict:
        out = {s: 0 for s in STATUSES}
        for r in self.records:
            out[r.status] += 1
        return out

    def to_dict(self) -> dict:
        c = self.campaign
        return {
            "format_version": FORMAT_VERSION,
            "campaign": {
                "params": [{"key": p.key, "value": p.raw} for p in c.params.entries],
                "params_digest": c.params_digest(),
                "factors": [
                    {"name": f.name, "pattern": f.pattern, "levels": list(f.levels)} for f in c.space.factors
                ],
                "repetitions": c.space.repetitions,
                "base_seed": c.base_seed,
            },
            "command": self.template,
            "filter": self.filter,
            "runs": [r.to_dict() for r in self.records],
        }

    def save(self) -> None:
        """Atomically replace the manifest file."""
        path = Path(self.path)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        try:
            data = json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n"
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise CampaignStateError(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CampaignStateError(f"cannot read manifest {path}: {exc}") from exc
        if d.get("format_version") != FORMAT_VERSION:
            raise CampaignStateError(f"{path}: unsupported format_version {d.get('format_version')!r}")
        c = d["campaign"]
        params = ParamSet(tuple(Param(p["key"], infer_value(p["value"]), p["value"]) for p in c["params"]))
        space = FactorSpace(
            tuple(FactorDef(f["name"], tuple(f["levels"]), f["pattern"]) for f in c["factors"]),
            c["repetitions"],
        )
        campaign = CampaignDef(params, space, c["base_seed"])
        if campaign.params_digest() != c["params_digest"]:
            raise CampaignStateError(f"{path}: parameter digest mismatch")
        records = [RunRecord.from_dict(r) for r in d["runs"]]
        if len({r.key for r in records}) != len(records):
            raise CampaignStateError(f"{path}: duplicate run keys")
        return cls(path, campaign, d["command"], records, d.get("filter", ""))


def _new_record(manifest: Manifest, point: RunPoint) -> RunRecord:
    key = run_key(point)
    d = sanitize_key(key)
    rec = RunRecord(
        key=key,
        assignment=dict(point.assignment),
        rep=point.rep,
        seed=seed_for(manifest.campaign.base_seed, point.rep),
        config_path=f"{d}/{CONFIG_NAME}",
        sca_path=f"{d}/{SCA_NAME}",
        vec_path=f"{d}/{VEC_NAME}",
    )
    _write_config(manifest, rec)
    return rec


def _write_config(manifest: Manifest, rec: RunRecord) -> None:
    path = manifest.resolve(rec.config_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(materialize(manifest.campaign, rec.point), encoding="utf-8")


def _sort_records(manifest: Manifest) -> None:
    space = manifest.space
    manifest.records.sort(key=lambda r: legacy_id(r.point, space))


def _check_predicate(pred: Predicate, space: FactorSpace) -> None:
    for name in sorted(pred.names()):
        if name not in space.names:
            raise UnknownFactorError(name)


def plan(defn: CampaignDef, template: str, pred: Predicate = MATCH_ALL, outdir=".") -> Manifest:
    """Create the campaign directory: one pending record and config file per selected run."""
    check_template(template, defn.space)
    _check_predicate(pred, defn.space)
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(outdir / MANIFEST_NAME, defn, template, [], pred.text)
        manifest.records = [_new_record(manifest, p) for p in expand(defn.space) if pred(p)]
    except OSError as exc:
        raise CampaignStateError(f"cannot write campaign files: {exc}") from exc
    if not manifest.records:
        log.warning("the selection matches no runs")
    manifest.save()
    return manifest


def build_command(manifest: Manifest, rec: RunRecord) -> tuple[list[str], dict]:
    run_dir = manifest.resolve(rec.run_dir).resolve()
    values = {
        "config": str(manifest.resolve(rec.config_path).resolve()),
        "seed": str(rec.seed),
        "rep": str(rec.rep),
        "runkey": rec.key,
        "outdir": str(run_dir),
    }
    for name, value in rec.assignment.items():
        values.setdefault(name, format_value(value))
    sub = lambda tok: _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], tok)  # noqa: E731
    argv = [sub(tok) for tok in shlex.split(manifest.template)]
    env = dict(os.environ)
    env.update(CAMPAIGN_RUNKEY=rec.key, CAMPAIGN_SEED=str(rec.seed), CAMPAIGN_REP=str(rec.rep))
    return argv, env


def subprocess_executor(argv, env, cwd) -> int:
    """Run one child, its output going to ``stdout.log`` in the run directory."""
    with open(Path(cwd) / LOG_NAME, "wb") as out:
        return subprocess.run(argv, env=env, cwd=cwd, stdout=out, stderr=subprocess.STDOUT).returncode


def _prepare_run_dir(manifest: Manifest, rec: RunRecord) -> Path:
    run_dir = manifest.resolve(rec.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    keep = Path(rec.config_path).name
    for entry in run_dir.iterdir():
        if entry.name != keep and entry.is_file():
            entry.unlink()
    if not (run_dir / keep).exists():
        _write_config(manifest, rec)
    return run_dir


def _stamp() -> float:
    return round(time.time(), 3)


def launch(
    manifest: Manifest,
    parallelism: int = 1,
    *,
    pred: Predicate = MATCH_ALL,
    executor: Callable | None = None,
    retry_failed: bool = False,
) -> Manifest:
    """Execute pending runs (and failed ones if ``retry_failed``) with at most ``parallelism`` children.

    Workers only run processes; every status change is sent back to the
    calling thread, which is the only writer of the manifest.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    _check_predicate(pred, manifest.space)
    executor = executor or subprocess_executor
    wanted = ("pending", "failed") if retry_failed else ("pending",)
    todo = [i for i, r in enumerate(manifest.records) if r.status in wanted and pred(r.point)]
    if not todo:
        return manifest

    jobs: queue.Queue = queue.Queue()
    for i in todo:
        jobs.put(i)
    events: queue.Queue = queue.Queue()

    def worker():
        while True:
            try:
                i = jobs.get_nowait()
            except queue.Empty:
                return
            rec = manifest.records[i]
            try:
                run_dir = _prepare_run_dir(manifest, rec)
                argv, env = build_command(manifest, rec)
                events.put(("start", i, _stamp()))
                code = executor(argv, env, str(run_dir))
            except Exception as exc:  # spawn or preparation failure is a run failure
                events.put(("error", i, f"{type(exc).__name__}: {exc}", _stamp()))
            else:
                events.put(("exit", i, code, _stamp()))

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(min(parallelism, len(todo)))]
    for t in threads:
        t.start()
    finished = 0
    try:
        while finished < len(todo):
            ev = events.get()
            rec = manifest.records[ev[1]]
            if ev[0] == "start":
                rec.status, rec.started_at = "running", ev[2]
                rec.exit_code = rec.error = rec.finished_at = None
            elif ev[0] == "error":
                rec.status, rec.exit_code, rec.error, rec.finished_at = "failed", None, ev[2], ev[3]
                finished += 1
                log.error("run %s could not be started: %s", rec.key, ev[2])
            else:
                code = ev[2]
                rec.exit_code, rec.finished_at = code, ev[3]
                if code != 0:
                    rec.status, rec.error = "failed", f"exit code {code}"
                elif not manifest.resolve(rec.sca_path).exists():
                    rec.status, rec.error = "failed", "exit code 0 but no scalar result file"
                else:
                    rec.status, rec.error = "done", None
                finished += 1
                if rec.status == "failed":
                    log.error("run %s failed: %s", rec.key, rec.error)
            manifest.save()
    finally:
        # no new children after an abort; running ones are waited for
        while True:
            try:
                jobs.get_nowait()
            except queue.Empty:
                break
        for t in threads:
            t.join()
    return manifest


def resume(manifest: Manifest, parallelism: int = 1, **kwargs) -> Manifest:
    """Re-run pending and failed runs; runs left 'running' by a crash count as pending."""
    changed = False
    for rec in manifest.records:
        if rec.status == "running":
            rec.status, rec.started_at = "pending", None
            changed = True
    if changed:
        manifest.save()
    return launch(manifest, parallelism, retry_failed=True, **kwargs)


def _configurations(manifest: Manifest) -> list[dict]:
    seen, out = set(), []
    for rec in manifest.records:
        key = run_key(RunPoint(rec.assignment, 0))
        if key not in seen:
            seen.add(key)
            out.append(rec.assignment)
    return out


def _replace_space(manifest: Manifest, space: FactorSpace) -> None:
    c = manifest.campaign
    manifest.campaign = CampaignDef(c.params, space, c.base_seed)


def extend_repetitions(manifest: Manifest, new_r: int) -> Manifest:
    """Add pending runs for repetitions ``R .. new_r - 1`` of every planned configuration."""
    old_r = manifest.space.repetitions
    if new_r <= old_r:
        raise CampaignError(f"new repetition count {new_r} must exceed the current {old_r}")
    configs = _configurations(manifest)
    _replace_space(manifest, manifest.space.with_repetitions(new_r))
    for assignment in configs:
        for rep in range(old_r, new_r):
            manifest.records.append(_new_record(manifest, RunPoint(dict(assignment), rep)))
    _sort_records(manifest)
    manifest.save()
    return manifest


def add_levels(manifest: Manifest, name: str, levels) -> Manifest:
    """Add levels to an existing factor; existing run keys are unaffected."""
    space = manifest.space.with_levels(name, levels)
    configs = _configurations(manifest)
    _replace_space(manifest, space)
    others = {run_key(RunPoint({k: v for k, v in a.items() if k != name}, 0)): a for a in configs}
    for assignment in others.values():
        for level in levels:
            for rep in range(space.repetitions):
                manifest.records.append(_new_record(manifest, RunPoint({**assignment, name: level}, rep)))
    _sort_records(manifest)
    manifest.save()
    return manifest


def add_factor(manifest: Manifest, factor: FactorDef, baseline) -> Manifest:
    """Add a new factor to a running campaign.

    Existing runs are taken to have used ``baseline`` for the new factor and
    are re-keyed accordingly (their directories and result files stay where
    they are).  Pending runs are added for every other level.
    """
    if factor.name in manifest.space.names:
        raise CampaignError(f"factor {factor.name!r} already exists")
    factor.index(baseline)
    configs = _configurations(manifest)
    _replace_space(manifest, manifest.space.with_factor(factor))
    for rec in manifest.records:
        rec.assignment = {**rec.assignment, factor.name: baseline}
        rec.key = run_key(rec.point)
    for assignment in configs:
        for level in factor.levels:
            if value_key(level) == value_key(baseline):
                continue
            for rep in range(manifest.space.repetitions):
                manifest.records.append(_new_record(manifest, RunPoint({**assignment, factor.name: level}, rep)))
    _sort_records(manifest)
    manifest.save()
    return manifest
