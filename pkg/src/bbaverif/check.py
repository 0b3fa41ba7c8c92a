"""Property suite: reference behaviours, inevitability and the suite runner."""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .equiv import Relation, equivalent, minimize
from .explore import LimitExceeded, Limits, deadlocks, generate, trace_to
from .kernel import (AllOf, Const, Instance, Local, Loop, ProcessDef, ProcessNetwork, Send,
                     alt, emit, seq)
from .lts import (Abstract, Label, Lts, Pid, compile_patterns, format_label, hide,
                  hide_all_but, make_lts, matches_any, normalize, read_aut, rename, stats,
                  write_aut)
from .model import Config, Faults, Style, build_network

log = logging.getLogger(__name__)

DEFAULT_BASELINES = Path(__file__).parent / "baselines"

# Reference state counts of an existing compiled model of the same protocol,
# before and after strong minimization, and its label count for 4 nodes.
REFERENCE_STATES = {(1, 0): 1723, (0, 1): 3130, (4, 0): 20905, (2, 2): 35059}
REFERENCE_STRONG_STATES = {(1, 0): 558, (0, 1): 840, (4, 0): 12059, (2, 2): 19486}
REFERENCE_LABELS = 131


# -- reference behaviours ------------------------------------------------------

def ref_sync() -> Lts:
    return make_lts(2, [(0, "SYNC !BEGIN", 1), (1, "SYNC !END", 0)])


def ref_hypercube(n: int) -> Lts:
    """Every node queries its counter once per phase, in any order, forever."""
    if n < 1:
        raise ValueError("need at least one node")
    full = (1 << n) - 1
    trs = []
    for subset in range(full):
        for i in range(n):
            if not subset & (1 << i):
                target = subset | (1 << i)
                trs.append((subset, f"TALLY !{i + 1} !X !X", 0 if target == full else target))
    return normalize(make_lts(full, trs))


_HIDDEN_STEPS = (r"STEP_[ABC] !.*", "DONE")


def selfprop_network(n: int) -> ProcessNetwork:
    """n copies of: step; (step [] step; SELF_PROPAGATE !i !X), joined at a barrier.

    The STEP_* gates stand for internal moves and DONE for the joint
    termination of the parallel block; all four are hidden by ref_selfprop.
    """
    procs, insts = [], []
    for i in range(1, n + 1):
        me = Send(Const(Pid(i)))
        body = Loop("again", seq(
            emit("STEP_A", me),
            alt(emit("STEP_B", me),
                seq(emit("STEP_C", me), emit("SELF_PROPAGATE", me, Send(Const(Abstract("X")))))),
            emit("DONE"),
        ))
        procs.append(ProcessDef(f"P_{i}", (), body))
        insts.append(Instance(f"p{i}", f"P_{i}", (), "component", i))
    sync = {"STEP_A": Local(), "STEP_B": Local(), "STEP_C": Local(),
            "SELF_PROPAGATE": Local(), "DONE": AllOf("component")}
    return ProcessNetwork(procs, insts, sync)


def selfprop_component() -> Lts:
    """A single p(1) without the enclosing loop."""
    me = Send(Const(Pid(1)))
    body = seq(emit("STEP_A", me),
               alt(emit("STEP_B", me),
                   seq(emit("STEP_C", me), emit("SELF_PROPAGATE", me, Send(Const(Abstract("X")))))))
    net = ProcessNetwork([ProcessDef("P_1", (), body)], [Instance("p1", "P_1")],
                         {g: Local() for g in ("STEP_A", "STEP_B", "STEP_C", "SELF_PROPAGATE")})
    return hide(generate(net), _HIDDEN_STEPS)


def ref_selfprop(n: int) -> Lts:
    if n < 1:
        raise ValueError("need at least one node")
    return normalize(hide(generate(selfprop_network(n)), _HIDDEN_STEPS))


def ref_interface(corrupted: bool, decision_step: bool = True) -> Lts:
    """Block interface: each received block is committed or replaced by an empty block.

    In the corrupted variant a block carrying bit one is always rejected.
    With ``decision_step`` the outcome is fixed by an internal move before the
    commit event is observed, as happens when the tally decides it; without
    it both commit events hang directly off the receiving state.
    """
    r0, r1 = "RECEIVE_BLOCK_PROPOSAL !0", "RECEIVE_BLOCK_PROPOSAL !1"
    c, e = "COMMIT_PROPOSED_BLOCK", "COMMIT_EMPTY_BLOCK"
    if not decision_step:
        trs = [(0, r0, 1), (0, r1, 2), (1, c, 0), (1, e, 0), (2, e, 0)]
        if not corrupted:
            trs.append((2, c, 0))
        return normalize(make_lts(3, trs))
    trs = [(0, r0, 1), (0, r1, 2), (1, "i", 3), (1, "i", 4), (2, "i", 4), (3, c, 0), (4, e, 0)]
    if not corrupted:
        trs.append((2, "i", 3))
    return normalize(make_lts(5, trs))


# -- slices ------------------------------------------------------------------------

INTERFACE_GATES = ("RECEIVE_BLOCK_PROPOSAL", "COMMIT_PROPOSED_BLOCK", "COMMIT_EMPTY_BLOCK")


def slice_lts(lts: Lts, keep: Iterable[str], rules: Iterable[tuple[str, str]] = (),
              relation: Relation = Relation.BRANCHING) -> Lts:
    """Hide all gates but ``keep``, apply rename rules, then minimize."""
    sliced = rename(hide_all_but(lts, keep), list(rules))
    return minimize(sliced, relation)[0]


def sync_slice(lts: Lts) -> Lts:
    return slice_lts(lts, ["SYNC"])


def tally_slice(lts: Lts) -> Lts:
    return slice_lts(lts, ["TALLY"], [(r"TALLY !([0-9]+) !.*", "TALLY !$1 !X !X")])


def selfprop_slice(lts: Lts) -> Lts:
    return slice_lts(lts, ["SELF_PROPAGATE"],
                     [(r"SELF_PROPAGATE !([0-9]+) !.*", "SELF_PROPAGATE !$1 !X")])


def interface_slice(lts: Lts) -> Lts:
    return slice_lts(lts, INTERFACE_GATES)


BASELINE_SLICES: dict[str, tuple[str, tuple[str, ...], tuple[tuple[str, str], ...]]] = {
    "P4": ("PROPAGATE slice (bit renamed to X) matches frozen baseline",
           ("PROPAGATE",), ((r"PROPAGATE !([0-9]+) !.*", "PROPAGATE !$1 !X"),)),
    "P6": ("P_IN/P_OUT slice matches frozen baseline", ("P_IN", "P_OUT"), ()),
    "P7": ("P_ZERO/P_ONE slice matches frozen baseline", ("P_ZERO", "P_ONE"), ()),
}


# -- inevitability -----------------------------------------------------------------------

@dataclass
class InevitabilityResult:
    holds: bool
    # on failure: trace to and including the x-transition, then the escaping path
    prefix: list[Label] = field(default_factory=list)
    path: list[Label] = field(default_factory=list)
    kind: str = ""  # "deadlock", "forbidden", or "lasso"
    loop_start: int | None = None

    def __bool__(self):
        return self.holds

    def describe(self) -> str:
        if self.holds:
            return "TRUE"
        pre = " ; ".join(format_label(a) for a in self.prefix)
        path = [format_label(a) for a in self.path]
        if self.kind == "lasso":
            stem, cycle = path[:self.loop_start], path[self.loop_start:]
            return f"FALSE after [{pre}]: stem {stem} then cycle {cycle} avoids the goal"
        if self.kind == "deadlock":
            return f"FALSE after [{pre}]: path {path} ends in a deadlock"
        return f"FALSE after [{pre}]: path {path} performs a forbidden event first"


def inevitable(lts: Lts, x: Iterable[str], y: Iterable[str], z: Iterable[str]) -> InevitabilityResult:
    """After every reachable x-transition, all maximal paths reach a z-transition without
    an earlier y-transition (one matching both y and z counts as z).

    Computed as a backward attractor: a state is good when it has successors
    and each outgoing transition is a z-transition or a non-y transition into
    a good state.
    """
    xs, ys, zs = compile_patterns(x), compile_patterns(y), compile_patterns(z)
    kind_of: dict[Label, str] = {}
    for a in lts.labels:
        text = format_label(a)
        if matches_any(zs, text):
            kind_of[a] = "z"
        elif matches_any(ys, text):
            kind_of[a] = "y"
        else:
            kind_of[a] = "-"
    n = lts.n_states
    pending = [0] * n
    blocked = [False] * n
    preds: list[list[int]] = [[] for _ in range(n)]
    for s, a, d in lts.transitions:
        k = kind_of[a]
        if k == "y":
            blocked[s] = True
        elif k == "-":
            pending[s] += 1
            preds[d].append(s)
    good = [False] * n
    queue = deque(s for s in range(n) if lts.out[s] and not blocked[s] and pending[s] == 0)
    for s in queue:
        good[s] = True
    while queue:
        d = queue.popleft()
        for s in preds[d]:
            pending[s] -= 1
            if pending[s] == 0 and not blocked[s] and not good[s]:
                good[s] = True
                queue.append(s)

    reachable = _reachable(lts)
    for s, a, d in sorted(lts.transitions, key=lambda t: (t[0], format_label(t[1]), t[2])):
        if s in reachable and matches_any(xs, format_label(a)) and not good[d]:
            prefix = trace_to(lts, s) + [a]
            return _escape(lts, d, kind_of, good, prefix)
    return InevitabilityResult(True)


def _reachable(lts: Lts) -> set[int]:
    seen = {lts.initial}
    stack = [lts.initial]
    while stack:
        for _, d in lts.out[stack.pop()]:
            if d not in seen:
                seen.add(d)
                stack.append(d)
    return seen


def _escape(lts: Lts, start: int, kind_of, good, prefix) -> InevitabilityResult:
    path: list[Label] = []
    seen = {start: 0}
    s = start
    while True:
        out = sorted(lts.out[s], key=lambda e: (format_label(e[0]), e[1]))
        if not out:
            return InevitabilityResult(False, prefix, path, "deadlock")
        bad = [a for a, _ in out if kind_of[a] == "y"]
        if bad:
            return InevitabilityResult(False, prefix, path + [bad[0]], "forbidden")
        a, d = next((a, d) for a, d in out if kind_of[a] == "-" and not good[d])
        path.append(a)
        if d in seen:
            return InevitabilityResult(False, prefix, path, "lasso", seen[d])
        seen[d] = len(path)
        s = d


def inevitable_by_paths(lts: Lts, x, y, z) -> bool:
    """Exhaustive simple-path enumeration; reference oracle for small graphs."""
    xs, ys, zs = compile_patterns(x), compile_patterns(y), compile_patterns(z)

    def ok_from(s, on_path):
        if not lts.out[s]:
            return False
        for a, d in lts.out[s]:
            text = format_label(a)
            if matches_any(zs, text):
                continue
            if matches_any(ys, text):
                return False
            if d in on_path or not ok_from(d, on_path | {d}):
                return False
        return True

    reachable = _reachable(lts)
    return all(ok_from(d, frozenset((d,))) for s, a, d in lts.transitions
               if s in reachable and matches_any(xs, format_label(a)))


def p9b_patterns(pid: int, step: int) -> tuple[list[str], list[str], list[str]]:
    x = [rf"SET_BIT !{pid} !{step} !.*"]
    y = [r"RECEIVE_BLOCK_PROPOSAL !.*", rf"SET_BIT !{pid} !.* !.*"]
    z = [r"RECEIVE_BLOCK_PROPOSAL !.*", rf"SET_BIT !{pid} !{step + 1} !.*"]
    return x, y, z


# -- suite -------------------------------------------------------------------------------------

@dataclass
class PropertyResult:
    id: str
    description: str
    verdict: str  # pass | fail | skipped
    diagnostic: str = ""
    seconds: float = 0.0
    artifacts: list[str] = field(default_factory=list)


@dataclass
class PropertyReport:
    config: dict
    properties: list[PropertyResult] = field(default_factory=list)
    statistics: dict = field(default_factory=dict)
    aborted: str | None = None

    @property
    def passed(self) -> bool:
        return self.aborted is None and all(p.verdict == "pass" for p in self.properties)

    def verdict(self, pid: str) -> str:
        return next(p.verdict for p in self.properties if p.id == pid)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "aborted": self.aborted,
            "statistics": self.statistics,
            "properties": [
                {"id": p.id, "description": p.description, "verdict": p.verdict,
                 "diagnostic": p.diagnostic, "seconds": round(p.seconds, 3),
                 "artifacts": p.artifacts}
                for p in self.properties
            ],
        }

    def table(self) -> str:
        width = max((len(p.id) for p in self.properties), default=4)
        lines = [f"{'property':<{width}}  verdict  seconds  description"]
        for p in self.properties:
            lines.append(f"{p.id:<{width}}  {p.verdict:<7}  {p.seconds:7.2f}  {p.description}")
            if p.diagnostic and p.verdict != "pass":
                lines.append(f"{'':<{width}}  -> {p.diagnostic}")
        if self.aborted:
            lines.append(f"aborted: {self.aborted}")
        return "\n".join(lines)


class SuiteAborted(Exception):
    def __init__(self, report: PropertyReport):
        super().__init__(report.aborted)
        self.report = report


def _config_dict(cfg: Config) -> dict:
    return {"n": cfg.n, "h": cfg.h, "t": cfg.t, "c": cfg.c, "pv": str(cfg.pv), "ph": str(cfg.ph),
            "style": cfg.style.value}


def baseline_path(directory: Path, family: str, cfg: Config) -> Path:
    return Path(directory) / f"{family}_n{cfg.n}_h{cfg.h}_t{cfg.t}.aut"


def _diff(verdict) -> str:
    trace = " ; ".join(format_label(a) for a in verdict.trace)
    return f"not equivalent (separated at refinement round {verdict.round}); trace: [{trace}]"


def run_suite(cfg: Config, faults: Faults = Faults(), limits: Limits = Limits(), jobs: int = 1,
              baseline_dir: Path | None = DEFAULT_BASELINES, freeze: bool = False,
              include_style_check: bool = True) -> PropertyReport:
    """Run the property catalogue on the model of ``cfg``.

    Properties are independent: a failing one does not stop the others. A
    generation limit aborts the suite and raises SuiteAborted with the
    partial report.
    """
    report = PropertyReport(_config_dict(cfg))
    t0 = time.monotonic()
    try:
        lts = generate(build_network(cfg, faults), limits, jobs)
    except LimitExceeded as exc:
        report.aborted = str(exc)
        raise SuiteAborted(report) from exc
    gen_seconds = time.monotonic() - t0
    st = stats(lts)
    report.statistics = {
        "states": st.states, "transitions": st.transitions,
        "labels": st.distinct_visible_labels, "generation_seconds": round(gen_seconds, 3),
    }

    def run(pid: str, description: str, body: Callable[[], tuple[str, str, list[str]]]):
        start = time.monotonic()
        try:
            verdict, diagnostic, artifacts = body()
        except LimitExceeded:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded, suite continues
            log.exception("property %s crashed", pid)
            verdict, diagnostic, artifacts = "skipped", f"error: {exc}", []
        report.properties.append(
            PropertyResult(pid, description, verdict, diagnostic, time.monotonic() - start, artifacts))

    def p1():
        dead = deadlocks(lts)
        if not dead:
            return "pass", "", []
        state, trace = dead[0]
        return "fail", (f"{len(dead)} deadlock state(s); shortest trace to state {state}: "
                        f"[{' ; '.join(format_label(a) for a in trace)}]"), []

    def compare(sliced: Lts, reference: Lts):
        v = equivalent(sliced, reference, Relation.BRANCHING)
        return ("pass", "", []) if v.equal else ("fail", _diff(v), [])

    corrupted = cfg.h < cfg.t
    run("P1", "absence of deadlocks", p1)
    run("P2", "SYNC slice is an alternation of BEGIN and END", lambda: compare(sync_slice(lts), ref_sync()))
    run("P3", f"TALLY slice is the cyclic {cfg.n}-dimensional hypercube",
        lambda: compare(tally_slice(lts), ref_hypercube(cfg.n)))
    run("P4", BASELINE_SLICES["P4"][0], lambda: _baseline(lts, "P4", cfg, baseline_dir, freeze))
    run("P5", "SELF_PROPAGATE slice matches the parallel p(1..n) reference",
        lambda: compare(selfprop_slice(lts), ref_selfprop(cfg.n)))
    run("P6", BASELINE_SLICES["P6"][0], lambda: _baseline(lts, "P6", cfg, baseline_dir, freeze))
    run("P7", BASELINE_SLICES["P7"][0], lambda: _baseline(lts, "P7", cfg, baseline_dir, freeze))
    run("P8", f"block interface slice shows {'corrupted' if corrupted else 'normal'} behaviour",
        lambda: compare(interface_slice(lts), ref_interface(corrupted)))
    for pid in range(1, cfg.n + 1):
        def p9(pid=pid):
            for step in (0, 1):
                res = inevitable(lts, *p9b_patterns(pid, step))
                if not res:
                    return "fail", f"STEP={step}: {res.describe()}", []
            return "pass", "", []
        run(f"P9b[{pid}]", f"after SET_BIT !{pid} !STEP (STEP<2) the next step or round is inevitable", p9)

    if include_style_check:
        def style_eq():
            try:
                other = generate(build_network(_with_style(cfg, _OTHER_STYLE[cfg.style]), faults),
                                 limits, jobs)
            except LimitExceeded as exc:
                report.aborted = str(exc)
                raise
            report.statistics["other_style_states"] = other.n_states
            v = equivalent(lts, other, Relation.STRONG)
            return ("pass", "", []) if v.equal else ("fail", _diff(v), [])
        try:
            run("STYLE-EQ", "loop and recursive encodings are strongly bisimilar", style_eq)
        except LimitExceeded:
            raise SuiteAborted(report) from None

    strong = minimize(lts, Relation.STRONG)[0]
    report.statistics["strong_states"] = strong.n_states
    report.statistics["suite_seconds"] = round(time.monotonic() - t0, 3)
    key = (cfg.h, cfg.n - cfg.h)
    if key in REFERENCE_STATES:
        report.statistics["reference_states"] = REFERENCE_STATES[key]
        report.statistics["reference_strong_states"] = REFERENCE_STRONG_STATES[key]
    if cfg.n == 4:
        report.statistics["reference_labels"] = REFERENCE_LABELS
    return report


_OTHER_STYLE = {Style.LOOP: Style.RECURSIVE, Style.RECURSIVE: Style.LOOP}


def _with_style(cfg: Config, style: Style) -> Config:
    return replace(cfg, style=style)


def _baseline(lts: Lts, family: str, cfg: Config, directory: Path | None, freeze: bool):
    _, keep, rules = BASELINE_SLICES[family]
    sliced = slice_lts(lts, keep, rules)
    if directory is None:
        return "skipped", "no baseline directory", []
    path = baseline_path(directory, family, cfg)
    if freeze or not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_aut(sliced))
        return "skipped", f"baseline frozen at {path}", [str(path)]
    frozen = read_aut(path.read_bytes())
    v = equivalent(sliced, frozen, Relation.BRANCHING)
    if v.equal:
        return "pass", "", [str(path)]
    return "fail", f"differs from {path}: {_diff(v)}", [str(path)]


def write_report(report: PropertyReport, path: Path):
    Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n")


COUNT_NOTES = (
    "Generated state counts are not expected to match the reference figures exactly. "
    "Control steps (assignments, case analysis, loop entry) are folded into the next "
    "visible event instead of producing internal transitions, so fewer intermediate "
    "states exist than in a compiled process-algebra model. "
    "The attacking node always fixes its coin to one and votes one, "
    "while the original malicious-node code is unpublished, which affects the A(2,2) "
    "and A(0,1) figures. "
    "The order of threshold tests inside one step does not change behaviour for "
    "t > n/2, which covers every configuration in the table. "
    "The single-node configurations are standalone one-node networks with threshold "
    "min(3, n) = 1, so each counter only ever sees its own vote; the reference "
    "single-node models keep a much larger tally state space, hence the largest gap."
)


def reference_comparison(rows: Iterable[tuple[tuple[int, int], dict]]) -> str:
    """Side-by-side table of our counts and the reference figures.

    ``rows`` pairs an (honest, malicious) key with a report's statistics.
    """
    lines = [f"{'config':<8} {'states':>8} {'ref':>8} {'ratio':>6} "
             f"{'strong':>8} {'ref':>8} {'labels':>7}"]
    for (h, m), st in rows:
        ref = REFERENCE_STATES.get((h, m))
        ref_strong = REFERENCE_STRONG_STATES.get((h, m))
        ratio = f"{ref / st['states']:.1f}" if ref else "-"
        lines.append(f"{f'A({h},{m})':<8} {st['states']:>8} {ref or '-':>8} {ratio:>6} "
                     f"{st.get('strong_states', '-'):>8} {ref_strong or '-':>8} {st['labels']:>7}")
    lines.append(f"reference label count for 4-node models: {REFERENCE_LABELS}")
    return "\n".join(lines)
