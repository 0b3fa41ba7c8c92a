"""Labelled transition systems: values, labels, Aldebaran/DOT IO and slicing."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from functools import cached_property, lru_cache
from typing import Iterable, NamedTuple

PROB_SCALE = 10000

BIT, PID, STEP, TAG, COUNT, PROB, ABSTRACT = (
    "bit", "pid", "step", "tag", "count", "prob", "abstract")
_KIND_ORDER = {k: i for i, k in enumerate((BIT, PID, STEP, TAG, COUNT, PROB, ABSTRACT))}


class LtsError(Exception):
    """Base class for LTS related failures."""


class LabelParseError(LtsError):
    def __init__(self, text: str, offset: int, reason: str):
        super().__init__(f"cannot parse label {text!r} at offset {offset}: {reason}")
        self.text = text
        self.offset = offset


class AutFormatError(LtsError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class PatternError(LtsError):
    """Invalid regular expression in a hide/rename/inevitability pattern."""


class RenameError(LtsError):
    pass


class Value(NamedTuple):
    """A typed offer value. Use the constructor helpers below, not this class."""

    kind: str
    val: int | str

    def sort_key(self):
        return (_KIND_ORDER[self.kind], self.val if isinstance(self.val, int) else 0, str(self.val))

    def __str__(self):
        return format_value(self)


def Bit(v: int) -> Value:
    if v not in (0, 1):
        raise ValueError(f"bit out of range: {v}")
    return Value(BIT, v)


def Pid(v: int) -> Value:
    if not isinstance(v, int) or v < 1:
        raise ValueError(f"pid out of range: {v}")
    return Value(PID, v)


def Step(v: int) -> Value:
    if v not in (0, 1, 2):
        raise ValueError(f"step out of range: {v}")
    return Value(STEP, v)


def Tag(v: str) -> Value:
    if v not in ("BEGIN", "END"):
        raise ValueError(f"tag out of range: {v}")
    return Value(TAG, v)


def Count(v: int) -> Value:
    if not isinstance(v, int) or v < 0:
        raise ValueError(f"count out of range: {v}")
    return Value(COUNT, v)


def Prob(ticks: int) -> Value:
    """Probability as an integer number of 1e-4 ticks."""
    if not isinstance(ticks, int) or not 0 <= ticks <= PROB_SCALE:
        raise ValueError(f"probability ticks out of range: {ticks}")
    return Value(PROB, ticks)


def prob_from_str(text: str) -> Value:
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise ValueError(f"not a decimal probability: {text!r}") from None
    scaled = d * PROB_SCALE
    if scaled != scaled.to_integral_value():
        raise ValueError(f"probability {text} is not a multiple of 0.0001")
    return Prob(int(scaled))


def Abstract(symbol: str = "X") -> Value:
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", symbol):
        raise ValueError(f"bad abstract symbol: {symbol!r}")
    return Value(ABSTRACT, symbol)


def format_value(v: Value) -> str:
    if v.kind == TAG or v.kind == ABSTRACT:
        return v.val
    if v.kind == PROB:
        whole, frac = divmod(v.val, PROB_SCALE)
        digits = f"{frac:04d}".rstrip("0") or "0"
        return f"{whole}.{digits}"
    return str(v.val)


class Label(NamedTuple):
    """A gate with its ordered offers; ``gate is None`` encodes tau."""

    gate: str | None
    offers: tuple[Value, ...] = ()

    @property
    def is_tau(self) -> bool:
        return self.gate is None

    def __str__(self):
        return format_label(self)


TAU = Label(None, ())

# Offer profiles of the model alphabet; used to type offers when parsing.
GATE_PROFILES: dict[str, tuple[str, ...]] = {
    "SYNC": (TAG,),
    "RECEIVE_BLOCK_PROPOSAL": (BIT,),
    "COMMIT_PROPOSED_BLOCK": (),
    "COMMIT_EMPTY_BLOCK": (),
    "SET_BIT": (PID, STEP, BIT),
    "P_ZERO": (PID, PROB),
    "P_ONE": (PID, PROB),
    "P_IN": (PID, PROB),
    "P_OUT": (PID, PROB),
    "SELF_PROPAGATE": (PID, BIT),
    "PROPAGATE": (PID, BIT),
    "TALLY": (PID, COUNT, COUNT),
}
MODEL_GATES = frozenset(GATE_PROFILES)


@lru_cache(maxsize=None)
def format_label(label: Label) -> str:
    if label.gate is None:
        return "i"
    if not label.offers:
        return label.gate
    return label.gate + "".join(" !" + format_value(v) for v in label.offers)


_GATE_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_OFFER_RE = re.compile(r" !([0-9]+\.[0-9]+|[0-9]+|[A-Za-z_][A-Za-z0-9_]*)")


def _typed(kind: str, raw: str) -> Value:
    if kind == PROB:
        return prob_from_str(raw)
    if kind == TAG:
        return Tag(raw)
    n = int(raw)
    return {BIT: Bit, PID: Pid, STEP: Step, COUNT: Count}[kind](n)


def _by_shape(raw: str) -> Value:
    if raw[0].isdigit():
        return prob_from_str(raw) if "." in raw else Count(int(raw))
    return Abstract(raw)


@lru_cache(maxsize=None)
def parse_label(text: str) -> Label:
    if text == "i":
        return TAU
    m = _GATE_RE.match(text)
    if not m:
        raise LabelParseError(text, 0, "expected a gate name")
    gate = m.group()
    pos = m.end()
    raws: list[tuple[int, str]] = []
    while pos < len(text):
        om = _OFFER_RE.match(text, pos)
        if not om:
            raise LabelParseError(text, pos, "expected ' !offer'")
        raws.append((pos, om.group(1)))
        pos = om.end()
    profile = GATE_PROFILES.get(gate)
    offers = []
    for i, (at, raw) in enumerate(raws):
        try:
            if raw[0].isdigit() and profile is not None and len(profile) == len(raws):
                try:
                    offers.append(_typed(profile[i], raw))
                except ValueError:
                    offers.append(_by_shape(raw))
            elif profile is not None and len(profile) == len(raws) and profile[i] == TAG:
                offers.append(Tag(raw) if raw in ("BEGIN", "END") else Abstract(raw))
            else:
                offers.append(_by_shape(raw))
        except ValueError as exc:
            raise LabelParseError(text, at, str(exc)) from None
    return Label(gate, tuple(offers))


def label_key(label: Label) -> str:
    return format_label(label)


@dataclass(frozen=True)
class Stats:
    states: int
    transitions: int
    distinct_visible_labels: int
    tau_transitions: int
    deadlock_states: int

    def as_tuple(self):
        return (self.states, self.transitions, self.distinct_visible_labels,
                self.tau_transitions, self.deadlock_states)


@dataclass(frozen=True)
class Lts:
    """Finite LTS. Immutable; derived views are cached on first use."""

    n_states: int
    initial: int
    transitions: tuple[tuple[int, Label, int], ...]

    def __post_init__(self):
        if self.n_states < 1 and self.transitions:
            raise LtsError("transitions on an empty state set")
        if self.n_states and not 0 <= self.initial < self.n_states:
            raise LtsError(f"initial state {self.initial} out of range")
        for s, _, d in self.transitions:
            if not (0 <= s < self.n_states and 0 <= d < self.n_states):
                raise LtsError(f"transition ({s}, {d}) out of range")

    @cached_property
    def out(self) -> list[list[tuple[Label, int]]]:
        adj: list[list[tuple[Label, int]]] = [[] for _ in range(self.n_states)]
        for s, a, d in self.transitions:
            adj[s].append((a, d))
        return adj

    @cached_property
    def labels(self) -> frozenset[Label]:
        return frozenset(a for _, a, _ in self.transitions)

    def __repr__(self):
        return f"Lts(states={self.n_states}, transitions={len(self.transitions)}, initial={self.initial})"


def make_lts(n_states: int, transitions: Iterable[tuple[int, Label | str, int]], initial: int = 0) -> Lts:
    """Build an Lts, accepting label text in place of Label objects."""
    trs = tuple((s, parse_label(a) if isinstance(a, str) else a, d) for s, a, d in transitions)
    return Lts(n_states, initial, trs)


def _structural_colors(lts: Lts, text: dict[Label, str]) -> list[int] | None:
    """Numbering-independent state colours, or None when no state has two
    successors under the same label (then the plain order is already canonical).

    Colours come from iterated refinement over labelled in- and out-edges; ids
    are ranks of sorted signatures, so equal graphs get equal colours.
    """
    seen_pairs = set()
    tied = False
    for s, a, d in lts.transitions:
        key = (s, a)
        if key in seen_pairs:
            tied = True
            break
        seen_pairs.add(key)
    if not tied:
        return None
    reach = {lts.initial}
    stack = [lts.initial]
    while stack:
        for _, d in lts.out[stack.pop()]:
            if d not in reach:
                reach.add(d)
                stack.append(d)
    rank = {t: i for i, t in enumerate(sorted(set(text.values())))}
    out = [[] for _ in range(lts.n_states)]
    inc = [[] for _ in range(lts.n_states)]
    for s, a, d in set(lts.transitions):
        if s not in reach:
            continue
        out[s].append((rank[text[a]], d))
        inc[d].append((rank[text[a]], s))
    color = [1 if s == lts.initial else 0 for s in range(lts.n_states)]
    count = len(set(color))
    while True:
        sigs = [(color[s], tuple(sorted((a, color[d]) for a, d in out[s])),
                 tuple(sorted((a, color[p]) for a, p in inc[s]))) for s in range(lts.n_states)]
        ids = {sig: i for i, sig in enumerate(sorted(set(sigs)))}
        color = [ids[sig] for sig in sigs]
        if len(ids) == count:
            return color
        count = len(ids)


def normalize(lts: Lts) -> Lts:
    """Keep reachable states, renumber them in BFS order and drop duplicates.

    Successors are visited by label text; successors sharing a label are
    ordered by structural colour first, then by their input number.
    """
    text = {a: format_label(a) for a in lts.labels}
    color = _structural_colors(lts, text)
    out = lts.out
    index = {lts.initial: 0}
    order = [lts.initial]
    queue = deque([lts.initial])
    if color is None:
        succ_key = lambda e: (text[e[0]], e[1])  # noqa: E731
    else:
        succ_key = lambda e: (text[e[0]], color[e[1]], e[1])  # noqa: E731
    while queue:
        s = queue.popleft()
        for a, d in sorted(set(out[s]), key=succ_key):
            if d not in index:
                index[d] = len(order)
                order.append(d)
                queue.append(d)
    trs = {(index[s], a, index[d]) for s, a, d in lts.transitions if s in index}
    ordered = sorted(trs, key=lambda t: (t[0], text[t[1]], t[2]))
    return Lts(len(order), 0, tuple(ordered))


def is_normal(lts: Lts) -> bool:
    return normalize(lts) == lts


def stats(lts: Lts) -> Stats:
    outdeg = [0] * lts.n_states
    tau = 0
    visible = set()
    for s, a, _ in lts.transitions:
        outdeg[s] += 1
        if a.is_tau:
            tau += 1
        else:
            visible.add(format_label(a))
    return Stats(lts.n_states, len(lts.transitions), len(visible), tau,
                 sum(1 for d in outdeg if d == 0))


# -- Aldebaran ---------------------------------------------------------------

_HEADER_RE = re.compile(r"des\s*\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)\s*")
_EDGE_RE = re.compile(r'\(\s*(\d+)\s*,\s*(?:"((?:[^"\\]|\\.)*)"|([^,"]*?))\s*,\s*(\d+)\s*\)\s*')


def write_aut(lts: Lts) -> bytes:
    trs = sorted(lts.transitions, key=lambda t: (t[0], format_label(t[1]), t[2]))
    lines = [f"des ({lts.initial}, {len(trs)}, {lts.n_states})"]
    lines += [f'({s}, "{format_label(a)}", {d})' for s, a, d in trs]
    return ("\n".join(lines) + "\n").encode("ascii")


def read_aut(data: bytes | str) -> Lts:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise AutFormatError(1, "missing des header")
    m = _HEADER_RE.fullmatch(lines[0].rstrip("\r"))
    if not m:
        raise AutFormatError(1, "malformed des header")
    initial, n_trans, n_states = (int(g) for g in m.groups())
    if len(lines) - 1 != n_trans:
        raise AutFormatError(1, f"header announces {n_trans} transitions, found {len(lines) - 1}")
    if n_states and initial >= n_states:
        raise AutFormatError(1, f"initial state {initial} out of range")
    trs = []
    for lineno, line in enumerate(lines[1:], start=2):
        em = _EDGE_RE.fullmatch(line.rstrip("\r"))
        if not em:
            raise AutFormatError(lineno, "malformed transition")
        src, quoted, bare, dst = em.groups()
        s, d = int(src), int(dst)
        if s >= n_states or d >= n_states:
            raise AutFormatError(lineno, "state index out of range")
        raw = quoted if quoted is not None else bare.strip()
        try:
            label = parse_label(raw)
        except LabelParseError as exc:
            raise AutFormatError(lineno, str(exc)) from None
        trs.append((s, label, d))
    return Lts(n_states, initial, tuple(trs))


def write_dot(lts: Lts, highlight_deadlocks: bool = False) -> bytes:
    outdeg = [0] * lts.n_states
    for s, _, _ in lts.transitions:
        outdeg[s] += 1
    lines = ["digraph lts {", "  __init [shape=point];", f"  __init -> {lts.initial};"]
    for s in range(lts.n_states):
        attrs = ['shape=circle']
        if s == lts.initial:
            attrs.append("peripheries=2")
        if highlight_deadlocks and outdeg[s] == 0:
            attrs += ["color=red", "style=filled", "fillcolor=red"]
        lines.append(f"  {s} [{', '.join(attrs)}];")
    for s, a, d in sorted(lts.transitions, key=lambda t: (t[0], format_label(t[1]), t[2])):
        text = format_label(a).replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  {s} -> {d} [label="{text}"];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- slicing -------------------------------------------------------------------

def compile_patterns(patterns: Iterable[str]) -> list[re.Pattern]:
    compiled = []
    for p in patterns:
        try:
            compiled.append(re.compile(p))
        except re.error as exc:
            raise PatternError(f"invalid pattern {p!r}: {exc}") from None
    return compiled


def matches_any(compiled: list[re.Pattern], text: str) -> bool:
    return any(p.fullmatch(text) for p in compiled)


def hide(lts: Lts, patterns: Iterable[str]) -> Lts:
    compiled = compile_patterns(patterns)
    if not compiled:
        return lts
    verdict: dict[Label, Label] = {}
    for a in lts.labels:
        verdict[a] = TAU if (not a.is_tau and matches_any(compiled, format_label(a))) else a
    return Lts(lts.n_states, lts.initial,
               tuple((s, verdict[a], d) for s, a, d in lts.transitions))


def hide_all_but(lts: Lts, gates: Iterable[str]) -> Lts:
    """Hide every label whose gate is not in ``gates``."""
    keep = set(gates)
    return Lts(lts.n_states, lts.initial,
               tuple((s, a if a.gate in keep else TAU, d) for s, a, d in lts.transitions))


_DOLLAR_RE = re.compile(r"\$(\d+)")


def rename(lts: Lts, rules: Iterable[tuple[str, str]]) -> Lts:
    compiled = []
    for pattern, template in rules:
        (rx,) = compile_patterns([pattern])
        compiled.append((rx, _DOLLAR_RE.sub(r"\\g<\1>", template)))
    if not compiled:
        return lts
    mapping: dict[Label, Label] = {}
    for a in lts.labels:
        text = format_label(a)
        for rx, template in compiled:
            m = rx.fullmatch(text)
            if m:
                new_text = m.expand(template)
                try:
                    mapping[a] = parse_label(new_text)
                except LabelParseError as exc:
                    src = next(t for t in lts.transitions if t[1] == a)
                    raise RenameError(
                        f"rule {rx.pattern!r} turns {text!r} (transition {src[0]} -> {src[2]}) "
                        f"into unparsable {new_text!r}: {exc}") from None
                break
        else:
            mapping[a] = a
    return Lts(lts.n_states, lts.initial,
               tuple((s, mapping[a], d) for s, a, d in lts.transitions))
