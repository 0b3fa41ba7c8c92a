"""Strong and branching bisimulation: minimization and equivalence checking."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .lts import TAU, Label, Lts, format_label, normalize


class Relation(enum.Enum):
    STRONG = "strong"
    BRANCHING = "branching"


@dataclass(frozen=True)
class Partition:
    block: tuple[int, ...]
    count: int


@dataclass
class Verdict:
    relation: Relation
    equal: bool
    states_a: int
    states_b: int
    round: int | None = None
    trace: list[Label] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "relation": self.relation.value,
            "equal": self.equal,
            "states_a": self.states_a,
            "states_b": self.states_b,
            "diagnostic_trace": None if self.equal else [format_label(a) for a in self.trace],
        }


class TooLarge(Exception):
    pass


# -- strong: splitter-based refinement --------------------------------------

def _strong_partition(n: int, transitions, watch: tuple[int, int] | None = None):
    """Coarsest strong bisimulation. Returns (block per state, split step that
    first separated the ``watch`` pair or None)."""
    label_id: dict[Label, int] = {}
    pred: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for s, a, d in transitions:
        pred[d].append((label_id.setdefault(a, len(label_id)), s))
    block = [0] * n
    members: list[set[int]] = [set(range(n))]
    work = deque([0])
    queued = {0}
    step = 0
    separated = None
    while work:
        splitter = work.popleft()
        queued.discard(splitter)
        step += 1
        by_label: dict[int, set[int]] = {}
        for t in list(members[splitter]):
            for a, s in pred[t]:
                by_label.setdefault(a, set()).add(s)
        for a in sorted(by_label):
            pre = by_label[a]
            touched: dict[int, list[int]] = {}
            for s in pre:
                touched.setdefault(block[s], []).append(s)
            for b, hit in touched.items():
                if len(hit) == len(members[b]):
                    continue
                new = len(members)
                members.append(set(hit))
                members[b].difference_update(hit)
                for s in hit:
                    block[s] = new
                for x in (b, new):
                    if x not in queued:
                        queued.add(x)
                        work.append(x)
        if watch is not None and separated is None and block[watch[0]] != block[watch[1]]:
            separated = step
    return block, separated


# -- branching: tau-SCC collapse and signature refinement ----------------------

def _tau_sccs(n: int, tau_succ: list[list[int]]) -> list[int]:
    """Tarjan's algorithm, iterative. Component ids are in reverse topological order."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    comp = [-1] * n
    stack: list[int] = []
    counter = 0
    ncomp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        call = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while call:
            v, i = call[-1]
            succ = tau_succ[v]
            if i < len(succ):
                call[-1] = (v, i + 1)
                w = succ[i]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    call.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
            else:
                call.pop()
                if call:
                    u = call[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp[w] = ncomp
                        if w == v:
                            break
                    ncomp += 1
    return comp


def _branching_partition(n: int, transitions, watch: tuple[int, int] | None = None):
    tau_succ: list[list[int]] = [[] for _ in range(n)]
    for s, a, d in transitions:
        if a.is_tau:
            tau_succ[s].append(d)
    comp = _tau_sccs(n, tau_succ)
    m = max(comp) + 1 if n else 0
    label_id: dict[Label, int] = {TAU: 0}
    edges: list[set[tuple[int, int]]] = [set() for _ in range(m)]
    for s, a, d in transitions:
        cs, cd = comp[s], comp[d]
        if a.is_tau and cs == cd:
            continue
        edges[cs].add((label_id.setdefault(a, len(label_id)), cd))
    edge_list = [sorted(e) for e in edges]
    # Tarjan numbers components so that tau-successors have smaller ids.
    order = range(m)
    block = [0] * m
    count = 1
    rounds = 0
    separated = None
    while True:
        rounds += 1
        sig: list[frozenset] = [frozenset()] * m
        for c in order:
            own = block[c]
            parts = set()
            inherited = []
            for a, d in edge_list[c]:
                if a == 0 and block[d] == own:
                    inherited.append(sig[d])
                else:
                    parts.add((a, block[d]))
            sig[c] = frozenset(parts).union(*inherited) if inherited else frozenset(parts)
        ids: dict = {}
        new_block = [ids.setdefault((block[c], sig[c]), len(ids)) for c in range(m)]
        if watch is not None and separated is None and \
                new_block[comp[watch[0]]] != new_block[comp[watch[1]]]:
            separated = rounds
        block = new_block
        if len(ids) == count:
            break
        count = len(ids)
    return [block[comp[s]] for s in range(n)], separated


def _partition(lts_n: int, transitions, relation: Relation, watch=None):
    if relation is Relation.STRONG:
        return _strong_partition(lts_n, transitions, watch)
    return _branching_partition(lts_n, transitions, watch)


def _quotient(lts: Lts, block: list[int], relation: Relation) -> tuple[Lts, Partition]:
    nblocks = max(block) + 1
    trs = set()
    for s, a, d in lts.transitions:
        bs, bd = block[s], block[d]
        if relation is Relation.BRANCHING and a.is_tau and bs == bd:
            continue
        trs.add((bs, a, bd))
    raw = Lts(nblocks, block[lts.initial], tuple(trs))
    quotient = normalize(raw)
    # map raw block ids onto normalized state numbers
    renumber = _bfs_numbering(raw)
    mapped = tuple(renumber.get(b, -1) for b in block)
    return quotient, Partition(mapped, quotient.n_states)


def _bfs_numbering(lts: Lts) -> dict[int, int]:
    out = lts.out
    index = {lts.initial: 0}
    queue = deque([lts.initial])
    while queue:
        s = queue.popleft()
        for a, d in sorted(set(out[s]), key=lambda e: (format_label(e[0]), e[1])):
            if d not in index:
                index[d] = len(index)
                queue.append(d)
    return index


def minimize(lts: Lts, relation: Relation = Relation.STRONG) -> tuple[Lts, Partition]:
    """Quotient by the coarsest bisimulation of the given kind."""
    block, _ = _partition(lts.n_states, lts.transitions, relation)
    return _quotient(lts, block, relation)


def _union(a: Lts, b: Lts):
    off = a.n_states
    trs = list(a.transitions) + [(s + off, l, d + off) for s, l, d in b.transitions]
    return a.n_states + b.n_states, trs, (a.initial, b.initial + off)


def equivalent(a: Lts, b: Lts, relation: Relation = Relation.STRONG) -> Verdict:
    n, trs, (ia, ib) = _union(a, b)
    block, separated = _partition(n, trs, relation, watch=(ia, ib))
    if block[ia] == block[ib]:
        return Verdict(relation, True, a.n_states, b.n_states)
    trace = _distinguishing_trace(n, trs, block, ia, ib, relation)
    return Verdict(relation, False, a.n_states, b.n_states, separated, trace)


def _distinguishing_trace(n, trs, block, ia, ib, relation) -> list[Label]:
    """Shortest trace, over the quotient of the union, to a pair of states whose
    enabled label sets differ; the differing label is appended."""
    out: list[dict[Label, set[int]]] = [dict() for _ in range(max(block) + 1)]
    for s, a, d in trs:
        bs, bd = block[s], block[d]
        if relation is Relation.BRANCHING and a.is_tau and bs == bd:
            continue
        out[bs].setdefault(a, set()).add(bd)
    start = (block[ia], block[ib])
    parent: dict[tuple[int, int], tuple | None] = {start: None}
    queue = deque([start])
    while queue:
        p, q = queue.popleft()
        lp, lq = set(out[p]), set(out[q])
        if lp != lq:
            diff = sorted(lp ^ lq, key=format_label)[0]
            trace = [diff]
            node = (p, q)
            while parent[node] is not None:
                node, label = parent[node]
                trace.append(label)
            trace.reverse()
            return trace
        for a in sorted(lp, key=format_label):
            for p2 in sorted(out[p][a]):
                for q2 in sorted(out[q][a]):
                    if p2 != q2 and (p2, q2) not in parent:
                        parent[(p2, q2)] = ((p, q), a)
                        queue.append((p2, q2))
    return []


# -- oracle ------------------------------------------------------------------------

BRUTE_FORCE_LIMIT = 64


def brute_force_equivalent(a: Lts, b: Lts, relation: Relation = Relation.STRONG) -> Verdict:
    """Greatest fixpoint over all state pairs by naive iteration (test oracle)."""
    n, trs, (ia, ib) = _union(a, b)
    if n > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{n} combined states exceed the oracle limit of {BRUTE_FORCE_LIMIT}")
    out = [[] for _ in range(n)]
    tau = [[] for _ in range(n)]
    for s, l, d in trs:
        out[s].append((l, d))
        if l.is_tau:
            tau[s].append(d)
    closure = []
    for s in range(n):
        seen = {s}
        stack = [s]
        while stack:
            x = stack.pop()
            for y in tau[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        closure.append(seen)
    rel = {(p, q) for p in range(n) for q in range(n)}

    def matched(p, q):
        for l, p2 in out[p]:
            if relation is Relation.STRONG:
                if not any(l2 == l and (p2, q2) in rel for l2, q2 in out[q]):
                    return False
            else:
                if l.is_tau and (p2, q) in rel:
                    continue
                if not any((p, q1) in rel and l2 == l and (p2, q2) in rel
                           for q1 in closure[q] for l2, q2 in out[q1]):
                    return False
        return True

    changed = True
    while changed:
        changed = False
        for p, q in list(rel):
            if not (matched(p, q) and matched(q, p)):
                rel.discard((p, q))
                changed = True
    return Verdict(relation, (ia, ib) in rel, a.n_states, b.n_states)
