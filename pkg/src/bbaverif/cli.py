"""Command-line front end.

Exit codes: 0 success or pass, 1 property or equivalence failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .check import DEFAULT_BASELINES, SuiteAborted, reference_comparison, run_suite, write_report
from .equiv import Relation, equivalent, minimize
from .explore import LimitExceeded, Limits, deadlocks, generate, product
from .kernel import KernelError
from .lts import (Lts, LtsError, format_label, hide, hide_all_but, read_aut, rename, stats, write_aut,
                  write_dot)
from .model import Config, ConfigError, Style, build_network

log = logging.getLogger("bbaverif")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> Config:
    cfg = Config()
    if args.config:
        cfg = Config.from_json(_read_text(args.config))
    changes = {}
    if args.nodes is not None:
        changes["n"] = args.nodes
    if args.honest is not None:
        changes["h"] = args.honest
    if args.threshold is not None:
        changes["t"] = args.threshold
    elif args.nodes is not None and not args.config:
        changes["t"] = min(3, args.nodes)
    if args.style is not None:
        changes["style"] = Style(args.style)
    if "n" in changes and "h" not in changes and not args.config:
        changes["h"] = changes["n"]
    return replace(cfg, **changes) if changes else cfg


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load(path) -> Lts:
    try:
        return read_aut(Path(path).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _limits(args) -> Limits:
    return Limits(max_states=args.max_states, max_seconds=args.max_seconds)


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _config(args)
    lts = generate(build_network(cfg), _limits(args), args.jobs)
    _write(args.output, write_aut(lts))
    st = stats(lts)
    print(f"{cfg.name()} ({cfg.style.value}): {st.states} states, {st.transitions} transitions")
    return 0


def cmd_stats(args) -> int:
    st = stats(_load(args.input))
    print(f"states: {st.states}")
    print(f"transitions: {st.transitions}")
    print(f"labels: {st.distinct_visible_labels}")
    print(f"tau transitions: {st.tau_transitions}")
    print(f"deadlock states: {st.deadlock_states}")
    return 0


def cmd_deadlocks(args) -> int:
    found = deadlocks(_load(args.input))
    if not found:
        print("no deadlocks")
        return 0
    for state, trace in found:
        print(f"deadlock state {state}: {' ; '.join(format_label(a) for a in trace) or '<initial>'}")
    return 1


def cmd_hide(args) -> int:
    if not args.pattern and not args.keep:
        raise UsageError("hide: give at least one --pattern or --keep")
    lts = _load(args.input)
    if args.keep:
        lts = hide_all_but(lts, args.keep)
    if args.pattern:
        lts = hide(lts, args.pattern)
    _write(args.output, write_aut(lts))
    return 0


def _parse_rule(text: str) -> tuple[str, str]:
    if "=>" not in text:
        raise UsageError(f"rename rule {text!r} is not of the form RE=>TEMPLATE")
    pattern, template = text.split("=>", 1)
    return pattern, template


def cmd_rename(args) -> int:
    lts = rename(_load(args.input), [_parse_rule(r) for r in args.rule])
    _write(args.output, write_aut(lts))
    return 0


def cmd_minimize(args) -> int:
    quotient, _ = minimize(_load(args.input), Relation(args.relation))
    _write(args.output, write_aut(quotient))
    return 0


def cmd_compare(args) -> int:
    verdict = equivalent(_load(args.a), _load(args.b), Relation(args.relation))
    if args.json:
        _write(args.json, (json.dumps(verdict.to_json(), indent=2) + "\n").encode())
    if verdict.equal:
        print(f"equal ({args.relation})")
        return 0
    print(f"distinct ({args.relation}); distinguishing trace: "
          f"{' ; '.join(format_label(a) for a in verdict.trace)}")
    return 1


def cmd_product(args) -> int:
    gates = [g for g in args.sync.split(",") if g] if args.sync else []
    _write(args.output, write_aut(product(_load(args.a), _load(args.b), gates)))
    return 0


def cmd_check(args) -> int:
    cfg = _config(args)
    baselines = Path(args.baselines) if args.baselines else DEFAULT_BASELINES
    try:
        report = run_suite(cfg, limits=_limits(args), jobs=args.jobs, baseline_dir=baselines,
                           freeze=args.freeze)
    except SuiteAborted as exc:
        report = exc.report
    print(f"{cfg.name()} ({cfg.style.value})")
    print(report.table())
    st = report.statistics
    if st:
        print()
        print(reference_comparison([((cfg.h, cfg.n - cfg.h), st)]))
    if args.json:
        write_report(report, args.json)
    return 0 if report.aborted is None and all(p.verdict != "fail" for p in report.properties) else 1


def cmd_export_dot(args) -> int:
    _write(args.output, write_dot(_load(args.input), highlight_deadlocks=args.deadlocks_red))
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bbaverif", description="Model generation and checking for BBA* networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_flags(p):
        p.add_argument("--nodes", type=int, help="number of nodes n")
        p.add_argument("--honest", type=int, help="number of honest nodes h (default n)")
        p.add_argument("--threshold", type=int, help="vote threshold t (default min(3, n))")
        p.add_argument("--style", choices=[s.value for s in Style], help="process encoding style")
        p.add_argument("--config", metavar="FILE", help="JSON configuration; flags override it")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for generation")
        p.add_argument("--max-states", type=int, default=Limits.max_states)
        p.add_argument("--max-seconds", type=float, default=Limits.max_seconds)

    p = sub.add_parser("generate", help="generate the LTS of a network")
    model_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="print state, transition and label counts")
    p.add_argument("input")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("deadlocks", help="list deadlocks with shortest traces (exit 1 if any)")
    p.add_argument("input")
    p.set_defaults(func=cmd_deadlocks)

    p = sub.add_parser("hide", help="turn matching labels into tau")
    p.add_argument("--pattern", action="append", default=[], help="regex matched against the full label")
    p.add_argument("--keep", action="append", default=[], help="gate to keep; all others are hidden")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_hide)

    p = sub.add_parser("rename", help="rewrite labels with regex rules")
    p.add_argument("--rule", action="append", required=True, help="RE=>TEMPLATE, $N for groups")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_rename)

    p = sub.add_parser("minimize", help="quotient by a bisimulation")
    p.add_argument("--relation", choices=[r.value for r in Relation], default="strong")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("compare", help="check two LTSs for equivalence (exit 1 if distinct)")
    p.add_argument("--relation", choices=[r.value for r in Relation], default="strong")
    p.add_argument("--json", metavar="OUT", help="write the verdict as JSON")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("product", help="parallel composition synchronizing on the given gates")
    p.add_argument("--sync", default="", help="comma-separated gate names")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_product)

    p = sub.add_parser("check", help="run the property suite (exit 1 on any failure)")
    model_flags(p)
    p.add_argument("--json", metavar="OUT", help="write the report as JSON")
    p.add_argument("--baselines", metavar="DIR", help="directory of frozen slice baselines")
    p.add_argument("--freeze", action="store_true", help="overwrite baselines with this run's slices")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export-dot", help="write a Graphviz rendering")
    p.add_argument("--deadlocks-red", action="store_true", help="fill deadlock states in red")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_dot)
    return parser


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("BBA_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 0
    except (UsageError, ConfigError, LtsError, KernelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LimitExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
