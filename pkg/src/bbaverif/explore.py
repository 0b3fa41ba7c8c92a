"""Explicit-state generation, deadlock diagnostics and LTS-level composition."""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable

from .kernel import ProcessNetwork
from .lts import Label, Lts, format_label, normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Limits:
    max_states: int = 10_000_000
    max_seconds: float = 600.0

    def __post_init__(self):
        if self.max_states <= 0 or self.max_seconds <= 0:
            raise ValueError("limits must be positive")


class LimitExceeded(Exception):
    def __init__(self, reason: str, states: int, transitions: int, frontier: int):
        super().__init__(f"{reason} after {states} states, {transitions} transitions "
                         f"(frontier {frontier})")
        self.states = states
        self.transitions = transitions
        self.frontier = frontier


class UnreachableState(Exception):
    pass


_worker_net: ProcessNetwork | None = None


def _worker_init(net: ProcessNetwork):
    global _worker_net
    _worker_net = net


def _worker_expand(states: list) -> list:
    return [_worker_net.successors(s) for s in states]


def generate(net: ProcessNetwork, limits: Limits = Limits(), jobs: int = 1) -> Lts:
    """All states reachable from the initial global state, as a normalized Lts.

    With ``jobs > 1`` each BFS level is expanded by worker processes; the
    merge is done in frontier order, so the result does not depend on ``jobs``.
    """
    start = time.monotonic()
    init = net.initial_state()
    index = {init: 0}
    frontier = [init]
    transitions: list[tuple[int, Label, int]] = []
    pool = ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(net,)) if jobs > 1 else None
    last_report = start
    try:
        while frontier:
            if pool is not None and len(frontier) >= 4 * jobs:
                size = -(-len(frontier) // (4 * jobs))
                chunks = [frontier[i:i + size] for i in range(0, len(frontier), size)]
                expanded = [succ for part in pool.map(_worker_expand, chunks) for succ in part]
            else:
                expanded = [net.successors(s) for s in frontier]
            nxt = []
            for state, succs in zip(frontier, expanded):
                src = index[state]
                for label, target in succs:
                    dst = index.get(target)
                    if dst is None:
                        dst = len(index)
                        index[target] = dst
                        nxt.append(target)
                    transitions.append((src, label, dst))
            frontier = nxt
            now = time.monotonic()
            if len(index) > limits.max_states:
                raise LimitExceeded("state limit exceeded", len(index), len(transitions), len(frontier))
            if now - start > limits.max_seconds:
                raise LimitExceeded("time limit exceeded", len(index), len(transitions), len(frontier))
            if now - last_report > 2.0:
                last_report = now
                log.info("%d states (%.0f/s), frontier %d", len(index),
                         len(index) / (now - start), len(frontier))
    finally:
        if pool is not None:
            pool.shutdown()
    log.debug("generated %d states, %d transitions in %.2fs", len(index), len(transitions),
              time.monotonic() - start)
    return normalize(Lts(len(index), 0, tuple(transitions)))


def _bfs_parents(lts: Lts) -> dict[int, tuple[int, Label] | None]:
    parent: dict[int, tuple[int, Label] | None] = {lts.initial: None}
    queue = deque([lts.initial])
    out = lts.out
    while queue:
        s = queue.popleft()
        for a, d in sorted(out[s], key=lambda e: (format_label(e[0]), e[1])):
            if d not in parent:
                parent[d] = (s, a)
                queue.append(d)
    return parent


def _path(parent, target: int) -> list[Label]:
    trace = []
    while parent[target] is not None:
        target, label = parent[target]
        trace.append(label)
    trace.reverse()
    return trace


def trace_to(lts: Lts, target: int) -> list[Label]:
    """A shortest label sequence from the initial state to ``target``."""
    if not 0 <= target < lts.n_states:
        raise UnreachableState(f"state {target} does not exist")
    parent = _bfs_parents(lts)
    if target not in parent:
        raise UnreachableState(f"state {target} is unreachable")
    return _path(parent, target)


def deadlocks(lts: Lts) -> list[tuple[int, list[Label]]]:
    """Every reachable state without successors, with a shortest trace to it."""
    parent = _bfs_parents(lts)
    out = lts.out
    return [(s, _path(parent, s)) for s in sorted(parent) if not out[s]]


def replay(lts: Lts, trace: Iterable[Label]) -> set[int]:
    """States reachable by following ``trace``; empty if it cannot be replayed."""
    current = {lts.initial}
    for label in trace:
        current = {d for s in current for a, d in lts.out[s] if a == label}
        if not current:
            break
    return current


def product(a: Lts, b: Lts, sync_gates: Iterable[str]) -> Lts:
    """Parallel composition: labels on ``sync_gates`` need both sides, the rest interleave."""
    gates = frozenset(sync_gates)
    start = (a.initial, b.initial)
    index = {start: 0}
    queue = deque([start])
    trs = []

    def visit(pair):
        dst = index.get(pair)
        if dst is None:
            dst = index[pair] = len(index)
            queue.append(pair)
        return dst

    while queue:
        p, q = queue.popleft()
        src = index[(p, q)]
        b_sync: dict[Label, list[int]] = {}
        for label, d in b.out[q]:
            if label.gate in gates and not label.is_tau:
                b_sync.setdefault(label, []).append(d)
            else:
                trs.append((src, label, visit((p, d))))
        for label, d in a.out[p]:
            if label.gate in gates and not label.is_tau:
                for d2 in b_sync.get(label, ()):
                    trs.append((src, label, visit((d, d2))))
            else:
                trs.append((src, label, visit((d, q))))
    return normalize(Lts(len(index), 0, tuple(trs)))
