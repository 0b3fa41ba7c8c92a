"""Process terms and their operational semantics.

A sequential process is written as a tree of combinators (:class:`Emit`,
:class:`Seq`, :class:`Alt`, :class:`Loop`, ...). Each process is compiled to a
small control-flow graph; an instance rests at an emission or a choice point
and everything in between (assignments, case analysis, guards, loop jumps,
tail calls) is executed eagerly, so every transition of the network carries a
gate. Instances synchronize according to a per-gate participation rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

from .lts import Label, Value, Bit, Count, Prob, PROB_SCALE

MAX_CONTROL_STEPS = 10_000


class KernelError(Exception):
    """Static error in a process term or network."""


class InvariantError(KernelError):
    """A runtime condition that static checks should have excluded."""


# -- expressions -------------------------------------------------------------

class Expr:
    def eval(self, env: dict):
        raise NotImplementedError

    def reads(self) -> frozenset[str]:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Expr):
    value: Value

    def eval(self, env):
        return self.value

    def reads(self):
        return frozenset()


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def eval(self, env):
        return env[self.name]

    def reads(self):
        return frozenset((self.name,))


def _ival(x):
    return x.val if isinstance(x, Value) else x


_COMPARE = {
    "=": lambda a, b: a == b,
    "<>": lambda a, b: a != b,
    "<": lambda a, b: _ival(a) < _ival(b),
    "<=": lambda a, b: _ival(a) <= _ival(b),
    ">": lambda a, b: _ival(a) > _ival(b),
    ">=": lambda a, b: _ival(a) >= _ival(b),
    "and": lambda a, b: a and b,
    "or": lambda a, b: a or b,
}


@dataclass(frozen=True)
class BinOp(Expr):
    """Equality, order, boolean connectives and bounded +/- on integer values."""

    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in _COMPARE and self.op not in ("+", "-"):
            raise KernelError(f"unsupported operator {self.op!r}")

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op in ("+", "-"):
            if not (isinstance(a, Value) and isinstance(b, Value) and isinstance(a.val, int)):
                raise InvariantError(f"arithmetic on non-integer values {a!r}, {b!r}")
            n = a.val + b.val if self.op == "+" else a.val - b.val
            if n < 0:
                raise InvariantError(f"arithmetic underflow in {self}")
            return Value(a.kind, n)
        return _COMPARE[self.op](a, b)

    def reads(self):
        return self.left.reads() | self.right.reads()


@dataclass(frozen=True)
class OneMinus(Expr):
    arg: Expr

    def eval(self, env):
        p = self.arg.eval(env)
        return Prob(PROB_SCALE - p.val)

    def reads(self):
        return self.arg.reads()


def eq(a: Expr, b: Expr) -> BinOp:
    return BinOp("=", a, b)


def lt(a: Expr, b: Expr) -> BinOp:
    return BinOp("<", a, b)


def add(a: Expr, b: Expr) -> BinOp:
    return BinOp("+", a, b)


# -- offers and terms ----------------------------------------------------------

@dataclass(frozen=True)
class Send:
    expr: Expr


@dataclass(frozen=True)
class Bind:
    var: str
    domain: tuple[Value, ...]


Offer = Union[Send, Bind]


class Term:
    pass


@dataclass(frozen=True)
class Emit(Term):
    gate: str
    offers: tuple[Offer, ...] = ()


@dataclass(frozen=True)
class Seq(Term):
    items: tuple[Term, ...]


@dataclass(frozen=True)
class Alt(Term):
    branches: tuple[Term, ...]


@dataclass(frozen=True)
class Assign(Term):
    var: str
    expr: Expr


@dataclass(frozen=True)
class Branch:
    pattern: Value | None
    guard: Expr | None
    body: Term


@dataclass(frozen=True)
class IfCase(Term):
    """First matching branch runs; with no scrutinee only guards are tested.
    No matching branch blocks the process."""

    scrutinee: Expr | None
    branches: tuple[Branch, ...]


@dataclass(frozen=True)
class Guard(Term):
    cond: Expr


@dataclass(frozen=True)
class Loop(Term):
    loop_id: str
    body: Term


@dataclass(frozen=True)
class Break(Term):
    loop_id: str


@dataclass(frozen=True)
class Call(Term):
    process: str
    args: tuple[Expr, ...] = ()


NIL = Seq(())


def seq(*items: Term) -> Seq:
    return Seq(tuple(items))


def alt(*branches: Term) -> Alt:
    return Alt(tuple(branches))


def if_(cond: Expr, then: Term, else_: Term = NIL) -> IfCase:
    return IfCase(None, (Branch(None, cond, then), Branch(None, None, else_)))


def case(scrutinee: Expr, arms: Iterable[tuple[Value | None, Term]]) -> IfCase:
    return IfCase(scrutinee, tuple(Branch(p, None, body) for p, body in arms))


def emit(gate: str, *offers: Offer) -> Emit:
    return Emit(gate, tuple(offers))


# -- networks -------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessDef:
    name: str
    params: tuple[str, ...]
    body: Term


@dataclass(frozen=True)
class Instance:
    name: str
    process: str
    args: tuple[tuple[str, Value], ...] = ()
    role: str = ""
    pid: int | None = None


class SyncRule:
    local = False

    def groups(self, instances: Sequence[Instance]) -> list[tuple[Value | None, tuple[int, ...]]]:
        """(first-offer key, participant indices) for every synchronization group."""
        raise NotImplementedError


class Local(SyncRule):
    """Emitted by one instance alone."""

    local = True

    def groups(self, instances):
        return []

    def __repr__(self):
        return "Local()"


@dataclass(frozen=True)
class AllOf(SyncRule):
    role: str = "node"

    def groups(self, instances):
        members = tuple(i for i, inst in enumerate(instances) if inst.role == self.role)
        return [(None, members)] if members else []


@dataclass(frozen=True)
class PairNodeCounter(SyncRule):
    """The node selected by the first offer and its own counter."""

    node_role: str = "node"
    counter_role: str = "counter"

    def groups(self, instances):
        out = []
        for i, inst in enumerate(instances):
            if inst.role == self.node_role:
                members = [i] + [j for j, c in enumerate(instances)
                                 if c.role == self.counter_role and c.pid == inst.pid]
                out.append((Value("pid", inst.pid), tuple(sorted(members))))
        return out


@dataclass(frozen=True)
class NodeWithOtherCounters(SyncRule):
    """The node selected by the first offer and the counters of all other nodes."""

    node_role: str = "node"
    counter_role: str = "counter"

    def groups(self, instances):
        out = []
        for i, inst in enumerate(instances):
            if inst.role == self.node_role:
                members = [i] + [j for j, c in enumerate(instances)
                                 if c.role == self.counter_role and c.pid != inst.pid]
                out.append((Value("pid", inst.pid), tuple(sorted(members))))
        return out


AllNodes = AllOf


# CFG node kinds
_EMIT, _ASSIGN, _ALT, _CASE, _GUARD, _CALL, _END, _JUMP = range(8)
STUCK = -1


class _Compiler:
    def __init__(self):
        self.nodes: list[list] = []
        self.entry: dict[str, int] = {}
        self.end: dict[str, int] = {}
        self.owner: list[str] = []

    def new(self, *node) -> int:
        self.nodes.append(list(node))
        self.owner.append(self.current)
        return len(self.nodes) - 1

    def process(self, pdef: ProcessDef):
        self.current = pdef.name
        end = self.new(_END)
        self.end[pdef.name] = end
        self.entry[pdef.name] = self.term(pdef.body, end, {})

    def term(self, t: Term, k: int, loops: dict[str, int]) -> int:
        if isinstance(t, Emit):
            return self.new(_EMIT, t.gate, t.offers, k)
        if isinstance(t, Seq):
            for item in reversed(t.items):
                k = self.term(item, k, loops)
            return k
        if isinstance(t, Alt):
            if not t.branches:
                raise KernelError("empty alt")
            return self.new(_ALT, [self.term(b, k, loops) for b in t.branches])
        if isinstance(t, Assign):
            return self.new(_ASSIGN, t.var, t.expr, k)
        if isinstance(t, IfCase):
            arms = [(b.pattern, b.guard, self.term(b.body, k, loops)) for b in t.branches]
            return self.new(_CASE, t.scrutinee, arms)
        if isinstance(t, Guard):
            return self.new(_GUARD, t.cond, k)
        if isinstance(t, Loop):
            head = self.new(_JUMP, None)
            body = self.term(t.body, head, {**loops, t.loop_id: k})
            if body == head:
                raise KernelError(f"loop {t.loop_id!r} has an empty body")
            self.nodes[head][1] = body
            return head
        if isinstance(t, Break):
            if t.loop_id not in loops:
                raise KernelError(f"break {t.loop_id!r} outside of its loop in {self.current}")
            return loops[t.loop_id]
        if isinstance(t, Call):
            if k != self.end[self.current]:
                raise KernelError(f"call to {t.process} is not in tail position in {self.current}")
            return self.new(_CALL, t.process, t.args)
        raise KernelError(f"unknown term {t!r}")


def _cfg_succ(node) -> list[int]:
    kind = node[0]
    if kind in (_EMIT, _ASSIGN, _GUARD):
        return [node[-1]]
    if kind == _ALT:
        return list(node[1])
    if kind == _CASE:
        return [arm[2] for arm in node[2]]
    if kind == _JUMP:
        return [node[1]]
    return []


def _node_reads(node) -> frozenset[str]:
    kind = node[0]
    if kind == _EMIT:
        r = frozenset()
        for o in node[2]:
            if isinstance(o, Send):
                r |= o.expr.reads()
        return r
    if kind == _ASSIGN:
        return node[2].reads()
    if kind == _CASE:
        r = node[1].reads() if node[1] is not None else frozenset()
        for _, guard, _ in node[2]:
            if guard is not None:
                r |= guard.reads()
        return r
    if kind == _GUARD:
        return node[1].reads()
    if kind == _CALL:
        r = frozenset()
        for a in node[2]:
            r |= a.reads()
        return r
    return frozenset()


def _node_writes(node) -> frozenset[str]:
    if node[0] == _EMIT:
        return frozenset(o.var for o in node[2] if isinstance(o, Bind))
    if node[0] == _ASSIGN:
        return frozenset((node[1],))
    return frozenset()


class _Pending(NamedTuple):
    gate: str
    vector: tuple  # Value or Bind per offer position
    pc: int
    env: tuple  # sorted (name, value) items


class ProcessNetwork:
    """Instances of sequential processes composed in parallel.

    Construction compiles every process and runs the static checks: tail
    calls only, breaks inside their loop, definite assignment before use,
    one participation rule per emitted gate and consistent offer arities.
    """

    def __init__(self, processes: Iterable[ProcessDef], instances: Iterable[Instance],
                 sync: dict[str, SyncRule]):
        self.processes = {p.name: p for p in processes}
        self.instances = tuple(instances)
        self.sync = dict(sync)
        comp = _Compiler()
        for p in self.processes.values():
            comp.process(p)
        self._nodes = [tuple(n) for n in comp.nodes]
        self._entry = comp.entry
        self._owner = comp.owner
        self._check()
        self._live = self._liveness()
        self._groups = {g: r.groups(self.instances) for g, r in self.sync.items() if not r.local}
        self._local_gates = frozenset(g for g, r in self.sync.items() if r.local)
        self._emit_cache: dict = {}
        self._fire_cache: dict = {}

    # -- static checks ------------------------------------------------------

    def _check(self):
        arity: dict[str, int] = {}
        for node in self._nodes:
            if node[0] == _EMIT:
                gate, offers = node[1], node[2]
                if gate not in self.sync:
                    raise KernelError(f"gate {gate} has no synchronization rule")
                if arity.setdefault(gate, len(offers)) != len(offers):
                    raise KernelError(f"gate {gate} used with offer arities {arity[gate]} and {len(offers)}")
            elif node[0] == _CALL:
                target = self.processes.get(node[1])
                if target is None:
                    raise KernelError(f"call to undefined process {node[1]}")
                if len(target.params) != len(node[2]):
                    raise KernelError(f"call to {node[1]} with {len(node[2])} arguments, "
                                      f"expected {len(target.params)}")
        for inst in self.instances:
            p = self.processes.get(inst.process)
            if p is None:
                raise KernelError(f"instance {inst.name} of undefined process {inst.process}")
            if set(dict(inst.args)) != set(p.params):
                raise KernelError(f"instance {inst.name} does not initialize exactly {p.params}")
        for gate, rule in self.sync.items():
            if not rule.local:
                for key, members in rule.groups(self.instances):
                    if not members:
                        raise KernelError(f"gate {gate} has an empty participant set for {key}")
        for p in self.processes.values():
            self._check_assigned(p)

    def _check_assigned(self, p: ProcessDef):
        nodes = self._nodes
        entry = self._entry[p.name]
        assigned: dict[int, frozenset[str]] = {entry: frozenset(p.params)}
        work = [entry]
        while work:
            pc = work.pop()
            node = nodes[pc]
            out = assigned[pc] | _node_writes(node)
            for nxt in _cfg_succ(node):
                prev = assigned.get(nxt)
                new = out if prev is None else prev & out
                if new != prev:
                    assigned[nxt] = new
                    work.append(nxt)
        for pc, have in assigned.items():
            missing = _node_reads(nodes[pc]) - have
            if missing:
                raise KernelError(f"process {p.name} may read unassigned {sorted(missing)}")

    def _liveness(self) -> list[tuple[str, ...]]:
        nodes = self._nodes
        preds: list[list[int]] = [[] for _ in nodes]
        for pc, node in enumerate(nodes):
            for nxt in _cfg_succ(node):
                preds[nxt].append(pc)
        live = [frozenset() for _ in nodes]
        work = list(range(len(nodes)))
        while work:
            pc = work.pop()
            node = nodes[pc]
            after = frozenset().union(*(live[n] for n in _cfg_succ(node)))
            new = (after - _node_writes(node)) | _node_reads(node)
            if new != live[pc]:
                live[pc] = new
                work.extend(preds[pc])
        return [tuple(sorted(v)) for v in live]

    # -- dynamics -----------------------------------------------------------

    def _settle(self, pc: int, env: dict) -> tuple:
        nodes = self._nodes
        for _ in range(MAX_CONTROL_STEPS):
            node = nodes[pc]
            kind = node[0]
            if kind in (_EMIT, _ALT, _END):
                return (pc, tuple(env[v] for v in self._live[pc]))
            if kind == _ASSIGN:
                env[node[1]] = node[2].eval(env)
                pc = node[3]
            elif kind == _CASE:
                pc = self._select(node, env)
                if pc == STUCK:
                    return (STUCK, ())
            elif kind == _GUARD:
                if not node[1].eval(env):
                    return (STUCK, ())
                pc = node[2]
            elif kind == _CALL:
                target = self.processes[node[1]]
                env = {name: a.eval(env) for name, a in zip(target.params, node[2])}
                pc = self._entry[node[1]]
            else:  # _JUMP
                pc = node[1]
        raise InvariantError(f"more than {MAX_CONTROL_STEPS} control steps without an emission "
                             f"in process {self._owner[pc]}")

    @staticmethod
    def _select(node, env) -> int:
        scrut = node[1].eval(env) if node[1] is not None else None
        for pattern, guard, nxt in node[2]:
            if pattern is not None and pattern != scrut:
                continue
            if guard is not None and not guard.eval(env):
                continue
            return nxt
        return STUCK

    def _env(self, local: tuple) -> dict:
        pc, values = local
        return dict(zip(self._live[pc], values))

    def _expand(self, pc: int, env: dict, out: list, budget: list):
        """Collect the emissions offered from ``pc`` through control steps."""
        nodes = self._nodes
        while True:
            budget[0] -= 1
            if budget[0] < 0:
                raise InvariantError(f"control steps do not terminate in process {self._owner[pc]}")
            node = nodes[pc]
            kind = node[0]
            if kind == _EMIT:
                vector = tuple(o if isinstance(o, Bind) else o.expr.eval(env) for o in node[2])
                out.append(_Pending(node[1], vector, pc, tuple(sorted(env.items()))))
                return
            if kind == _ALT:
                for nxt in node[1]:
                    self._expand(nxt, dict(env), out, budget)
                return
            if kind == _END:
                return
            if kind == _ASSIGN:
                env[node[1]] = node[2].eval(env)
                pc = node[3]
            elif kind == _CASE:
                pc = self._select(node, env)
                if pc == STUCK:
                    return
            elif kind == _GUARD:
                if not node[1].eval(env):
                    return
                pc = node[2]
            elif kind == _CALL:
                target = self.processes[node[1]]
                env = {name: a.eval(env) for name, a in zip(target.params, node[2])}
                pc = self._entry[node[1]]
            else:
                pc = node[1]

    def emissions(self, local: tuple) -> tuple[_Pending, ...]:
        cached = self._emit_cache.get(local)
        if cached is None:
            if local[0] == STUCK:
                cached = ()
            else:
                out: list[_Pending] = []
                self._expand(local[0], self._env(local), out, [MAX_CONTROL_STEPS])
                cached = tuple(out)
            self._emit_cache[local] = cached
        return cached

    def _fire(self, pending: _Pending, binding: tuple) -> tuple:
        key = (pending, binding)
        res = self._fire_cache.get(key)
        if res is None:
            env = dict(pending.env)
            env.update(binding)
            res = self._settle(self._nodes[pending.pc][3], env)
            self._fire_cache[key] = res
        return res

    def initial_state(self) -> tuple:
        return tuple(self._settle(self._entry[inst.process], dict(inst.args))
                     for inst in self.instances)

    def successors(self, state: tuple) -> list[tuple[Label, tuple]]:
        offered: list[dict[str, list[_Pending]]] = []
        for local in state:
            by_gate: dict[str, list[_Pending]] = {}
            for p in self.emissions(local):
                by_gate.setdefault(p.gate, []).append(p)
            offered.append(by_gate)
        result = []
        for i, by_gate in enumerate(offered):
            for gate, pendings in by_gate.items():
                if gate not in self._local_gates:
                    continue
                for p in pendings:
                    for values, binds in unify_offers([p.vector]):
                        nxt = list(state)
                        nxt[i] = self._fire(p, binds[0])
                        result.append((Label(gate, values), tuple(nxt)))
        for gate, groups in self._groups.items():
            for key, members in groups:
                choices = []
                for m in members:
                    ps = offered[m].get(gate)
                    if not ps:
                        break
                    choices.append(ps)
                else:
                    for combo in itertools.product(*choices):
                        for values, binds in unify_offers([p.vector for p in combo]):
                            if key is not None and values[0] != key:
                                continue
                            nxt = list(state)
                            for m, p, b in zip(members, combo, binds):
                                nxt[m] = self._fire(p, b)
                            result.append((Label(gate, values), tuple(nxt)))
        return result

    def valuation(self, state: tuple, index: int) -> dict:
        """Variables of instance ``index`` in ``state`` (live ones only)."""
        return self._env(state[index])

    def control_point(self, state: tuple, index: int) -> int:
        return state[index][0]


def unify_offers(vectors: Sequence[Sequence]) -> list[tuple[tuple[Value, ...], list[tuple]]]:
    """Solve one multiway rendezvous.

    Each vector holds, per offer position, either a sent Value or a
    :class:`Bind` hole. Returns every (agreed values, per-participant
    bindings) solution, bindings as sorted (var, value) tuples.
    """
    if not vectors:
        return [((), [])]
    width = len(vectors[0])
    if any(len(v) != width for v in vectors):
        raise KernelError("offer arity mismatch in synchronization")
    per_pos: list[list[Value]] = []
    for pos in range(width):
        sent = {v[pos] for v in vectors if not isinstance(v[pos], Bind)}
        binds = [v[pos] for v in vectors if isinstance(v[pos], Bind)]
        if len(sent) > 1:
            return []
        if sent:
            (val,) = sent
            if any(val not in b.domain for b in binds):
                return []
            per_pos.append([val])
        else:
            common = set(binds[0].domain)
            for b in binds[1:]:
                common &= set(b.domain)
            per_pos.append(sorted(common, key=Value.sort_key))
    out = []
    for values in itertools.product(*per_pos):
        bindings = []
        ok = True
        for vec in vectors:
            b: dict[str, Value] = {}
            for pos, o in enumerate(vec):
                if isinstance(o, Bind):
                    if b.setdefault(o.var, values[pos]) != values[pos]:
                        ok = False
            bindings.append(tuple(sorted(b.items())))
        if ok:
            out.append((tuple(values), bindings))
    return out


def bits() -> tuple[Value, ...]:
    return (Bit(0), Bit(1))


def counts(n: int) -> tuple[Value, ...]:
    return tuple(Count(k) for k in range(n + 1))
