"""Command-line front end: generate, run, extend, status, parse, analyze.

Exit codes: 0 success, 1 usage error, 2 definition parse error, 3 one or
more runs failed, 4 data or result-file error, 5 analysis error.  Data goes
to stdout (or ``--out``); diagnostics go to stderr.  The manifest argument
defaults to ``$CAMPAIGN_MANIFEST``.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
from contextlib import contextmanager
from pathlib import Path

from . import launcher, results, stats
from .config import load_campaign
from .errors import (
    AnalysisError,
    CampaignError,
    CampaignStateError,
    DefinitionError,
    OrphanRunError,
    PredicateSyntaxError,
    ResultParseError,
    UnknownFactorError,
)
from .factors import MATCH_ALL, parse_predicate

EXIT_OK, EXIT_USAGE, EXIT_DEFINITION, EXIT_RUNS_FAILED, EXIT_DATA, EXIT_ANALYSIS = range(6)

log = logging.getLogger("simcampaign")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def default_command() -> str:
    return f"{shlex.quote(sys.executable)} -m simcampaign.mocksim --config {{config}} --out {{outdir}}"


def _manifest_path(arg) -> Path:
    path = arg or os.environ.get("CAMPAIGN_MANIFEST")
    if not path:
        raise UsageError("no manifest given and $CAMPAIGN_MANIFEST is not set")
    path = Path(path)
    if path.is_dir():
        path = path / launcher.MANIFEST_NAME
    if not path.exists():
        raise UsageError(f"manifest {path} does not exist")
    return path


def _predicate(text):
    if not text:
        return MATCH_ALL
    try:
        return parse_predicate(text)
    except PredicateSyntaxError as exc:
        raise UsageError(f"bad filter {text!r}: {exc}") from None


def _read(path, what) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {what} file: {exc}") from None


@contextmanager
def _output(path, binary=False):
    if path in (None, "-"):
        yield sys.stdout.buffer if binary else sys.stdout
        return
    with open(path, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8", "newline": ""})) as fh:
        yield fh


def cmd_generate(args) -> int:
    params_text = _read(args.params, "parameters")
    factors_text = _read(args.factors, "factors")
    try:
        defn = load_campaign(params_text, factors_text)
    except DefinitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEFINITION
    try:
        manifest = launcher.plan(defn, args.cmd or default_command(), _predicate(args.filter), args.outdir)
    except UnknownFactorError as exc:
        raise UsageError(str(exc)) from None
    except CampaignStateError:
        raise
    except CampaignError as exc:
        raise UsageError(str(exc)) from None
    print(f"{len(manifest.records)} runs")
    print(f"manifest written to {manifest.path}", file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    manifest = launcher.Manifest.load(_manifest_path(args.manifest))
    pred = _predicate(args.filter)
    if args.cmd:
        try:
            launcher.check_template(args.cmd, manifest.space)
        except (CampaignError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        manifest.template = args.cmd
        manifest.save()
    try:
        launcher.resume(manifest, args.jobs, pred=pred)
    except UnknownFactorError as exc:
        raise UsageError(str(exc)) from None
    selected = [r for r in manifest.records if pred(r.point)]
    failed = [r for r in selected if r.status != "done"]
    print(f"{len(selected) - len(failed)} of {len(selected)} selected runs done", file=sys.stderr)
    if failed:
        print(f"{len(failed)} run(s) failed:", file=sys.stderr)
        for r in failed:
            print(f"  {r.key}: {r.error or r.status}", file=sys.stderr)
        return EXIT_RUNS_FAILED
    return EXIT_OK


def cmd_extend(args) -> int:
    manifest = launcher.Manifest.load(_manifest_path(args.manifest))
    try:
        launcher.extend_repetitions(manifest, args.repeat)
    except CampaignStateError:
        raise
    except CampaignError as exc:
        raise UsageError(str(exc)) from None
    print(f"{len(manifest.records)} runs")
    return EXIT_OK


def cmd_status(args) -> int:
    manifest = launcher.Manifest.load(_manifest_path(args.manifest))
    for status, n in manifest.counts().items():
        print(f"{status} {n}")
    return EXIT_OK


def _metric_filter(tagged, metric, kind):
    for t in tagged:
        name = t.record.name if kind == "scalar" else t.series.rsplit(".", 1)[-1]
        if name == metric or (kind == "vector" and t.series == metric):
            yield t


def cmd_parse(args) -> int:
    manifest = launcher.Manifest.load(_manifest_path(args.manifest))
    if not any(r.status == "done" for r in manifest.records):
        print("error: the campaign has no completed runs", file=sys.stderr)
        return EXIT_DATA
    kind = "vector" if args.vectors else "scalar"
    pstats = results.ParseStats()
    tagged = results.iter_campaign(manifest, kind, strict=not args.lenient, stats=pstats)
    if args.metric:
        tagged = _metric_filter(tagged, args.metric, kind)
    with _output(args.out) as sink:
        n = results.export(tagged, args.format, sink, manifest.space.names, kind)
    print(f"{n} records", file=sys.stderr)
    if pstats.skipped:
        print(f"skipped {pstats.skipped} line(s) with unknown directives: {pstats.skipped_directives}", file=sys.stderr)
    if pstats.nonfinite:
        print(f"warning: {pstats.nonfinite} non-finite value(s)", file=sys.stderr)
    return EXIT_OK


def _tagged_source(args):
    if args.input:
        fmt = "jsonl" if str(args.input).endswith((".jsonl", ".json")) else "csv"
        try:
            fh = open(args.input, encoding="utf-8", newline="")
        except OSError as exc:
            raise UsageError(f"cannot read {args.input}: {exc}") from None

        def gen():
            with fh:
                yield from results.read_export(fh, fmt)

        return gen()
    manifest = launcher.Manifest.load(_manifest_path(args.manifest))
    return results.iter_campaign(manifest, "scalar", strict=not args.lenient)


def _filtered(tagged, pred):
    for t in tagged:
        for name in pred.names():
            if name not in t.factors:
                raise UnknownFactorError(name)
        if pred(t.factors):
            yield t


def _split_names(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def cmd_analyze(args) -> int:
    pred = _predicate(args.filter)
    tagged = _filtered(_tagged_source(args), pred)
    if args.kind == "mean":
        table = stats.group_mean_ci(tagged, args.metric, _split_names(args.by), args.level)
    elif args.kind == "ecdf":
        table = stats.ecdf_by_group(tagged, args.metric, _split_names(args.by))
    elif args.kind == "box":
        table = stats.box_by_group(tagged, args.metric, _split_names(args.by))
    else:
        factors = _split_names(args.factors)
        if not factors:
            raise UsageError("factorial analysis needs --factors")
        responses, coding = stats.design_from_tagged(tagged, args.metric, factors)
        table = stats.factorial_2kr(responses, args.level, names=factors)
        for name, (low, high) in coding.items():
            print(f"{name}: -1 = {low}, +1 = {high}", file=sys.stderr)
        print(f"grand mean {table.q0:.6g}, SST {table.sst:.6g}, r = {table.r}", file=sys.stderr)
    with _output(args.out, binary=True) as sink:
        sink.write(stats.write_table(table, args.digits))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simcampaign", description="Simulation campaign generator, launcher, parser and analyzer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="plan a campaign from a parameters and a factors file")
    g.add_argument("params", help="fixed parameters file")
    g.add_argument("factors", help="factors file (iteration variables, repeat)")
    g.add_argument("outdir", help="campaign directory")
    g.add_argument("--cmd", help="command template (default: bundled mocksim)")
    g.add_argument("--filter", default="", help="only plan runs matching this predicate")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="execute pending and failed runs")
    r.add_argument("manifest", nargs="?")
    r.add_argument("-j", "--jobs", type=int, default=os.cpu_count() or 1, help="parallel processes")
    r.add_argument("--filter", default="", help="only run runs matching this predicate")
    r.add_argument("--cmd", help="replace the command template stored in the manifest")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("extend", help="increase the number of repetitions")
    e.add_argument("manifest", nargs="?")
    e.add_argument("--repeat", type=int, required=True, help="new repetition count")
    e.set_defaults(func=cmd_extend)

    s = sub.add_parser("status", help="count runs by state")
    s.add_argument("manifest", nargs="?")
    s.set_defaults(func=cmd_status)

    pa = sub.add_parser("parse", help="export tagged results of completed runs")
    pa.add_argument("manifest", nargs="?")
    pa.add_argument("--out", help="output file (default stdout)")
    pa.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    pa.add_argument("--metric", help="only this scalar (or vector) name")
    pa.add_argument("--vectors", action="store_true", help="export vector samples instead of scalars")
    pa.add_argument("--lenient", action="store_true", help="skip unknown directives instead of failing")
    pa.set_defaults(func=cmd_parse)

    a = sub.add_parser("analyze", help="statistics tables")
    asub = a.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind, help_text in (
        ("mean", "per-group mean with t confidence interval"),
        ("ecdf", "empirical CDF per group"),
        ("box", "five-number summary per group"),
        ("factorial", "2^k r factorial analysis"),
    ):
        k = asub.add_parser(kind, help=help_text)
        k.add_argument("manifest", nargs="?")
        k.add_argument("--input", help="read an export (csv or .jsonl) instead of the manifest")
        k.add_argument("--metric", required=True)
        if kind == "factorial":
            k.add_argument("--factors", required=True, help="comma-separated two-level factors")
            k.add_argument("--level", type=float, default=0.90)
        else:
            k.add_argument("--by", default="", help="comma-separated group-by factors")
            k.add_argument("--level", type=float, default=0.95)
        k.add_argument("--filter", default="", help="only records matching this predicate")
        k.add_argument("--out", help="output file (default stdout)")
        k.add_argument("--digits", type=int, default=6, help="significant digits")
        k.add_argument("--lenient", action="store_true")
        k.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ResultParseError, OrphanRunError, CampaignStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AnalysisError, UnknownFactorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command != "analyze" else EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
