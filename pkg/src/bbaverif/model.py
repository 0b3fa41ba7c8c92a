"""Finite-state model of the BBA* agreement protocol.

Nodes run an outer loop of rounds (one proposed block each) around an inner
loop of voting steps 0 -> 1 -> 2 -> 0. Each node owns a counter that collects
the votes broadcast during a step and hands them over in a single TALLY event.
Two equivalent encodings of the node and counter are provided: a loop style and
a recursive style made of mutually tail-calling processes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Union

from .kernel import (
    AllNodes, Assign, BinOp, Bind, Branch, Break, Call, Const, Guard, IfCase, Instance,
    Local, Loop, NodeWithOtherCounters, OneMinus, PairNodeCounter, ProcessDef,
    ProcessNetwork, Send, Term, Var, add, alt, bits, case, counts, emit, lt, seq,
)
from .lts import PROB_SCALE, Bit, Count, Pid, Prob, Step, Tag, Value, prob_from_str


class ConfigError(ValueError):
    pass


class Style(enum.Enum):
    LOOP = "loop"
    RECURSIVE = "rec"


class Morality(enum.Enum):
    HONEST = "honest"
    MALICIOUS = "malicious"
    DISGUISED = "disguised"


@dataclass(frozen=True)
class Faults:
    """Deliberate model defects, used only to show that checks can fail."""

    no_tally_reset: bool = False
    honest_votes_one: bool = False


@dataclass(frozen=True)
class Config:
    n: int = 4
    h: int = 4
    t: int = 3
    c: int = 3
    pv: Value = Prob(7500)
    ph: Value = Prob(7424)
    style: Style = Style.LOOP

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"need at least one node, got n={self.n}")
        if not 0 <= self.h <= self.n:
            raise ConfigError(f"honest count h={self.h} outside 0..{self.n}")
        if not 1 <= self.t <= self.n:
            raise ConfigError(f"threshold t={self.t} outside 1..{self.n}")
        for name in ("pv", "ph"):
            p = getattr(self, name)
            if p.kind != "prob" or not 0 < p.val < PROB_SCALE:
                raise ConfigError(f"{name} must be a probability strictly between 0 and 1")

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        allowed = {"n", "h", "t", "c", "pv", "ph", "style"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        kw = dict(data)
        for name in ("pv", "ph"):
            if name in kw:
                if not isinstance(kw[name], str):
                    raise ConfigError(f"{name} must be given as a decimal string")
                try:
                    kw[name] = prob_from_str(kw[name])
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
        if "style" in kw:
            try:
                kw["style"] = Style(kw["style"])
            except ValueError:
                raise ConfigError(f"unknown style {kw['style']!r}") from None
        for name in ("n", "h", "t", "c"):
            if name in kw and (not isinstance(kw[name], int) or isinstance(kw[name], bool)):
                raise ConfigError(f"{name} must be an integer")
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    def name(self) -> str:
        return f"A({self.h},{self.n - self.h}) T={self.t}"


def config_for(h: int, m: int, t: int | None = None, style: Style = Style.LOOP) -> Config:
    """A(h, m) with the default threshold clipped to the network size."""
    n = h + m
    return Config(n=n, h=h, t=min(3, n) if t is None else t, style=style)


def morality(pid: int, blk: int, cfg: Config) -> Morality:
    if pid <= cfg.h:
        return Morality.HONEST
    return Morality.MALICIOUS if blk == 1 else Morality.DISGUISED


# -- decisions -------------------------------------------------------------------

@dataclass(frozen=True)
class CommitProposed:
    pass


@dataclass(frozen=True)
class CommitEmpty:
    pass


@dataclass(frozen=True)
class Continue:
    bit: int
    next_step: int


@dataclass(frozen=True)
class Flip:
    next_step: int


Decision = Union[CommitProposed, CommitEmpty, Continue, Flip]

# Per step: ordered (tested count, outcome) rows, the last one unconditional.
DECISION_TABLE: dict[int, tuple[tuple[str | None, Decision], ...]] = {
    0: (("k0", CommitProposed()), ("k1", Continue(1, 1)), (None, Continue(0, 1))),
    1: (("k1", CommitEmpty()), ("k0", Continue(0, 2)), (None, Continue(1, 2))),
    2: (("k0", Continue(0, 0)), ("k1", Continue(1, 0)), (None, Flip(0))),
}


def decide(step: int, k0: int, k1: int, t: int) -> Decision:
    counts_ = {"k0": k0, "k1": k1}
    for tested, outcome in DECISION_TABLE[step]:
        if tested is None or counts_[tested] >= t:
            return outcome
    raise AssertionError("decision table rows must end unconditionally")


def one_minus(p: Value) -> Value:
    return Prob(PROB_SCALE - p.val)


# -- counter ------------------------------------------------------------------------

def _increment(b: str) -> Term:
    return case(Var(b), [
        (Bit(0), Assign("K0", add(Var("K0"), Const(Count(1))))),
        (Bit(1), Assign("K1", add(Var("K1"), Const(Count(1))))),
    ])


def _room(cfg: Config):
    return lt(add(Var("K0"), Var("K1")), Const(Count(cfg.n)))


def counter_term(pid: int, cfg: Config, faults: Faults = Faults()) -> Term:
    """Loop-style counter body; K0 and K1 are local and start at zero."""
    others = tuple(Pid(j) for j in range(1, cfg.n + 1) if j != pid)
    reset = seq() if faults.no_tally_reset else seq(Assign("K0", Const(Count(0))),
                                                     Assign("K1", Const(Count(0))))
    return seq(
        Assign("K0", Const(Count(0))),
        Assign("K1", Const(Count(0))),
        Loop("counter", alt(
            seq(Guard(_room(cfg)), emit("SELF_PROPAGATE", Send(Const(Pid(pid))), Bind("b", bits())),
                _increment("b")),
            seq(Guard(_room(cfg)), emit("PROPAGATE", Bind("j", others), Bind("b", bits())),
                _increment("b")),
            seq(emit("TALLY", Send(Const(Pid(pid))), Send(Var("K0")), Send(Var("K1"))), reset),
        )),
    )


def counter_processes(pid: int, cfg: Config, faults: Faults = Faults()) -> list[ProcessDef]:
    """Recursive-style counter: one process whose parameters carry the tallies."""
    name = f"COUNTER_{pid}"
    others = tuple(Pid(j) for j in range(1, cfg.n + 1) if j != pid)

    def again(b: str):
        return case(Var(b), [
            (Bit(0), Call(name, (add(Var("K0"), Const(Count(1))), Var("K1")))),
            (Bit(1), Call(name, (Var("K0"), add(Var("K1"), Const(Count(1)))))),
        ])

    after_tally = (Call(name, (Var("K0"), Var("K1"))) if faults.no_tally_reset
                   else Call(name, (Const(Count(0)), Const(Count(0)))))
    body = alt(
        seq(Guard(_room(cfg)), emit("SELF_PROPAGATE", Send(Const(Pid(pid))), Bind("b", bits())),
            again("b")),
        seq(Guard(_room(cfg)), emit("PROPAGATE", Bind("j", others), Bind("b", bits())), again("b")),
        seq(emit("TALLY", Send(Const(Pid(pid))), Send(Var("K0")), Send(Var("K1"))), after_tally),
    )
    return [ProcessDef(name, ("K0", "K1"), body)]


# -- node ---------------------------------------------------------------------------------

def _pid(pid: int):
    return Const(Pid(pid))


def _set_attacking(pid: int, cfg: Config) -> Term:
    # A is a bit: 1 while the node attacks the current block
    return case(Var("blk"), [
        (Bit(b), Assign("A", Const(Bit(int(morality(pid, b, cfg) is Morality.MALICIOUS)))))
        for b in (0, 1)
    ])


def _set_bit(pid: int) -> Term:
    return emit("SET_BIT", Send(_pid(pid)), Send(Var("S")), Send(Var("B")))


def _coin(pid: int, p) -> Term:
    """B drawn at random (B = 0 with probability p), or forced to 1 by an attacker."""
    return case(Var("A"), [
        (Bit(1), Assign("B", Const(Bit(1)))),
        (Bit(0), alt(
            seq(emit("P_ZERO", Send(_pid(pid)), Send(p)), Assign("B", Const(Bit(0)))),
            seq(emit("P_ONE", Send(_pid(pid)), Send(OneMinus(p))), Assign("B", Const(Bit(1)))),
        )),
    ])


def flip_coin(pid: int, step, p) -> Term:
    return seq(Assign("S", step), _coin(pid, p), _set_bit(pid))


def fix_coin(pid: int, bit: int, step: int) -> Term:
    return seq(
        case(Var("A"), [(Bit(1), Assign("B", Const(Bit(1)))), (Bit(0), Assign("B", Const(Bit(bit))))]),
        Assign("S", Const(Step(step))),
        _set_bit(pid),
    )


def _vote(faults: Faults) -> Term:
    if faults.honest_votes_one:
        return Assign("V", Const(Bit(1)))
    return case(Var("A"), [(Bit(1), Assign("V", Const(Bit(1)))), (Bit(0), Assign("V", Var("B")))])


def _voting_phase(pid: int, cfg: Config, faults: Faults) -> Term:
    return seq(
        emit("SYNC", Send(Const(Tag("BEGIN")))),
        alt(
            seq(emit("P_IN", Send(_pid(pid)), Send(Const(cfg.pv))), _vote(faults),
                emit("SELF_PROPAGATE", Send(_pid(pid)), Send(Var("V"))),
                emit("PROPAGATE", Send(_pid(pid)), Send(Var("V")))),
            emit("P_OUT", Send(_pid(pid)), Send(Const(one_minus(cfg.pv)))),
        ),
        emit("SYNC", Send(Const(Tag("END")))),
    )


def _tally(pid: int, cfg: Config) -> Term:
    return emit("TALLY", Send(_pid(pid)), Bind("k0", counts(cfg.n)), Bind("k1", counts(cfg.n)))


def broadcast(pid: int, cfg: Config, faults: Faults = Faults()) -> Term:
    """One voting phase between the two barriers, ending with the tally query."""
    return seq(_voting_phase(pid, cfg, faults), _tally(pid, cfg))


def _decision_term(cfg: Config, on_outcome) -> Term:
    """Case analysis on the step and the tallies, following DECISION_TABLE."""
    def rows(step):
        branches = []
        for tested, outcome in DECISION_TABLE[step]:
            guard = None if tested is None else BinOp(">=", Var(tested), Const(Count(cfg.t)))
            branches.append(Branch(None, guard, on_outcome(outcome)))
        return IfCase(None, tuple(branches))
    return case(Var("S"), [(Step(s), rows(s)) for s in (0, 1, 2)])


def node_term(pid: int, cfg: Config, faults: Faults = Faults()) -> Term:
    """Loop-style node body."""
    def outcome(d: Decision) -> Term:
        if isinstance(d, CommitProposed):
            return seq(emit("COMMIT_PROPOSED_BLOCK"), Break("step"))
        if isinstance(d, CommitEmpty):
            return seq(emit("COMMIT_EMPTY_BLOCK"), Break("step"))
        if isinstance(d, Continue):
            return fix_coin(pid, d.bit, d.next_step)
        return flip_coin(pid, Const(Step(d.next_step)), Const(Prob(5000)))

    return Loop("round", seq(
        emit("RECEIVE_BLOCK_PROPOSAL", Bind("blk", bits())),
        _set_attacking(pid, cfg),
        flip_coin(pid, Const(Step(0)), Const(cfg.ph)),
        Loop("step", seq(broadcast(pid, cfg, faults), _decision_term(cfg, outcome))),
    ))


def node_processes(pid: int, cfg: Config, faults: Faults = Faults()) -> list[ProcessDef]:
    """Recursive-style node: processes N, N1..N4 calling each other in tail position."""
    n0, n1, n2, n3, n4 = (f"N{k}_{pid}" for k in ("", "1", "2", "3", "4"))
    state = (Var("A"), Var("S"), Var("B"))

    def outcome(d: Decision) -> Term:
        if isinstance(d, CommitProposed):
            return seq(emit("COMMIT_PROPOSED_BLOCK"), Call(n0))
        if isinstance(d, CommitEmpty):
            return seq(emit("COMMIT_EMPTY_BLOCK"), Call(n0))
        if isinstance(d, Continue):
            bit = case(Var("A"), [(Bit(1), Assign("B", Const(Bit(1)))),
                                  (Bit(0), Assign("B", Const(Bit(d.bit))))])
            return seq(bit, Call(n2, (Var("A"), Const(Step(d.next_step)), Var("B"))))
        return Call(n1, (Var("A"), Const(Step(d.next_step)), Const(Prob(5000))))

    return [
        ProcessDef(n0, (), seq(
            emit("RECEIVE_BLOCK_PROPOSAL", Bind("blk", bits())),
            _set_attacking(pid, cfg),
            Call(n1, (Var("A"), Const(Step(0)), Const(cfg.ph))))),
        ProcessDef(n1, ("A", "S", "P"), seq(_coin(pid, Var("P")), Call(n2, state))),
        ProcessDef(n2, ("A", "S", "B"), seq(_set_bit(pid), _voting_phase(pid, cfg, faults),
                                                   Call(n3, state))),
        ProcessDef(n3, ("A", "S", "B"), seq(
            _tally(pid, cfg), Call(n4, state + (Var("k0"), Var("k1"))))),
        ProcessDef(n4, ("A", "S", "B", "k0", "k1"), _decision_term(cfg, outcome)),
    ]


# -- network ---------------------------------------------------------------------------------

SYNC_TABLE = {
    "SYNC": AllNodes(),
    "RECEIVE_BLOCK_PROPOSAL": AllNodes(),
    "COMMIT_PROPOSED_BLOCK": AllNodes(),
    "COMMIT_EMPTY_BLOCK": AllNodes(),
    "SELF_PROPAGATE": PairNodeCounter(),
    "TALLY": PairNodeCounter(),
    "PROPAGATE": NodeWithOtherCounters(),
    "SET_BIT": Local(),
    "P_IN": Local(),
    "P_OUT": Local(),
    "P_ZERO": Local(),
    "P_ONE": Local(),
}


def node_and_counter_defs(pid: int, cfg: Config, faults: Faults = Faults()):
    """Process definitions plus the two instances for node ``pid``."""
    if cfg.style is Style.LOOP:
        procs = [ProcessDef(f"NODE_{pid}", (), node_term(pid, cfg, faults)),
                 ProcessDef(f"COUNTER_{pid}", (), counter_term(pid, cfg, faults))]
        node = Instance(f"node{pid}", f"NODE_{pid}", (), "node", pid)
        counter = Instance(f"counter{pid}", f"COUNTER_{pid}", (), "counter", pid)
    else:
        procs = node_processes(pid, cfg, faults) + counter_processes(pid, cfg, faults)
        node = Instance(f"node{pid}", f"N_{pid}", (), "node", pid)
        counter = Instance(f"counter{pid}", f"COUNTER_{pid}",
                           (("K0", Count(0)), ("K1", Count(0))), "counter", pid)
    return procs, node, counter


def build_network(cfg: Config, faults: Faults = Faults()) -> ProcessNetwork:
    """n nodes followed by their n counters, synchronized per SYNC_TABLE."""
    procs, nodes, counters = [], [], []
    for pid in range(1, cfg.n + 1):
        p, node, counter = node_and_counter_defs(pid, cfg, faults)
        procs += p
        nodes.append(node)
        counters.append(counter)
    return ProcessNetwork(procs, nodes + counters, SYNC_TABLE)
