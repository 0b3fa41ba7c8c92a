import pytest
from hypothesis import given, settings

from bbaverif.equiv import Relation, equivalent
from bbaverif.explore import (LimitExceeded, Limits, UnreachableState, deadlocks, generate,
                              product, replay, trace_to)
from bbaverif.lts import format_label, make_lts, parse_label, write_aut
from bbaverif.model import build_network, config_for

from conftest import lts_strategy

SYNC_LABELS = ("a", "b", "c", "i")


def texts(trace):
    return [format_label(a) for a in trace]


def test_generate_is_normalized_and_deterministic():
    net = build_network(config_for(1, 0))
    first = generate(net)
    assert write_aut(first) == write_aut(generate(build_network(config_for(1, 0))))
    assert first.initial == 0


def test_parallel_generation_is_identical():
    net = build_network(config_for(2, 1))
    assert write_aut(generate(net, jobs=2)) == write_aut(generate(net, jobs=1))


def test_state_limit():
    with pytest.raises(LimitExceeded) as err:
        generate(build_network(config_for(4, 0)), Limits(max_states=500))
    assert err.value.states > 500
    assert err.value.frontier > 0


def test_time_limit():
    with pytest.raises(LimitExceeded, match="time"):
        generate(build_network(config_for(4, 0)), Limits(max_seconds=1e-9))


def test_limits_must_be_positive():
    with pytest.raises(ValueError):
        Limits(max_states=0)


def test_deadlocks_with_shortest_traces():
    lts = make_lts(5, [(0, "a", 1), (0, "b", 2), (1, "c", 3), (2, "d", 0), (0, "e", 4), (4, "f", 0)])
    found = deadlocks(lts)
    assert [(s, texts(t)) for s, t in found] == [(3, ["a", "c"])]


def test_deadlock_free_model(a40):
    assert deadlocks(a40) == []


def test_trace_to_and_replay():
    lts = make_lts(4, [(0, "a", 1), (1, "b", 2), (0, "c", 2), (3, "a", 3)])
    assert texts(trace_to(lts, 2)) == ["c"]
    assert trace_to(lts, 0) == []
    with pytest.raises(UnreachableState):
        trace_to(lts, 3)
    with pytest.raises(UnreachableState):
        trace_to(lts, 9)
    assert replay(lts, [parse_label("a"), parse_label("b")]) == {2}
    assert replay(lts, [parse_label("b")]) == set()


def test_product_synchronizes_and_interleaves():
    a = make_lts(2, [(0, "a", 1), (1, "s", 0)])
    b = make_lts(2, [(0, "b", 1), (1, "s", 0)])
    p = product(a, b, ["s"])
    assert (p.n_states, len(p.transitions)) == (4, 5)
    assert sum(1 for _, l, _ in p.transitions if l.gate == "s") == 1


def test_product_never_synchronizes_tau():
    a = make_lts(2, [(0, "i", 1)])
    p = product(a, a, ["i"])
    assert p.n_states == 4


@settings(max_examples=60, deadline=None)
@given(lts_strategy(4, SYNC_LABELS), lts_strategy(4, SYNC_LABELS))
def test_product_commutative(a, b):
    assert equivalent(product(a, b, ["a", "b"]), product(b, a, ["a", "b"]), Relation.STRONG).equal


@settings(max_examples=40, deadline=None)
@given(lts_strategy(3, SYNC_LABELS), lts_strategy(3, SYNC_LABELS), lts_strategy(3, SYNC_LABELS))
def test_product_associative(a, b, c):
    gates = ["a"]
    left = product(product(a, b, gates), c, gates)
    right = product(a, product(b, c, gates), gates)
    assert equivalent(left, right, Relation.STRONG).equal
