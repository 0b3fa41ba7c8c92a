import itertools

import pytest

from bbaverif.explore import generate
from bbaverif.kernel import (NIL, AllOf, Assign, Bind, Break, Call, Const, Guard, Instance,
                             KernelError, Local, Loop, NodeWithOtherCounters, PairNodeCounter,
                             ProcessDef, ProcessNetwork, Send, Var, add, alt, bits, case, counts,
                             emit, eq, if_, seq, unify_offers)
from bbaverif.lts import Bit, Count, Pid, format_label, stats


def net(body, sync=None, params=(), args=()):
    return ProcessNetwork([ProcessDef("P", params, body)], [Instance("p", "P", args)], sync or {})


def labels(lts):
    return sorted({format_label(a) for _, a, _ in lts.transitions})


def test_sequence_and_loop():
    body = Loop("l", seq(emit("A"), emit("B")))
    lts = generate(net(body, {"A": Local(), "B": Local()}))
    assert (lts.n_states, len(lts.transitions)) == (2, 2)


def test_control_steps_are_absorbed():
    body = Loop("l", seq(Assign("x", Const(Count(0))), emit("A", Send(Var("x"))),
                         Assign("x", add(Var("x"), Const(Count(1)))),
                         if_(eq(Var("x"), Const(Count(1))), emit("B"), emit("C"))))
    lts = generate(net(body, {"A": Local(), "B": Local(), "C": Local()}))
    assert stats(lts).tau_transitions == 0
    assert labels(lts) == ["A !0", "B"]


def test_break_leaves_the_named_loop():
    body = seq(Loop("outer", seq(emit("A"), Loop("inner", seq(emit("B"), Break("outer"))))),
               emit("END"))
    lts = generate(net(body, {g: Local() for g in ("A", "B", "END")}))
    assert [format_label(a) for _, a, _ in lts.transitions] == ["A", "B", "END"]


def test_case_without_match_blocks():
    body = seq(Assign("x", Const(Bit(1))), case(Var("x"), [(Bit(0), emit("A"))]))
    lts = generate(net(body, {"A": Local()}))
    assert (lts.n_states, len(lts.transitions)) == (1, 0)


def test_first_matching_branch_wins():
    body = seq(Assign("x", Const(Bit(1))), case(Var("x"), [(Bit(1), emit("A")), (None, emit("B"))]))
    assert labels(generate(net(body, {"A": Local(), "B": Local()}))) == ["A"]


def test_guard_blocks_branch():
    body = Loop("l", alt(seq(Guard(eq(Const(Bit(0)), Const(Bit(1)))), emit("A")), emit("B")))
    assert labels(generate(net(body, {"A": Local(), "B": Local()}))) == ["B"]


def test_bind_enumerates_domain_and_binds_variable():
    body = Loop("l", seq(emit("A", Bind("b", bits())), emit("B", Send(Var("b")))))
    lts = generate(net(body, {"A": Local(), "B": Local()}))
    assert labels(lts) == ["A !0", "A !1", "B !0", "B !1"]


def test_tail_recursion():
    p = ProcessDef("P", ("k",), seq(emit("A", Send(Var("k"))),
                                    case(Var("k"), [(Count(2), Call("P", (Const(Count(0)),))),
                                                    (None, Call("P", (add(Var("k"), Const(Count(1))),)))])))
    network = ProcessNetwork([p], [Instance("p", "P", (("k", Count(0)),))], {"A": Local()})
    lts = generate(network)
    assert (lts.n_states, labels(lts)) == (3, ["A !0", "A !1", "A !2"])


def test_liveness_projection_merges_states():
    # x is dead after A, so both branches reach the same state
    body = Loop("l", seq(alt(Assign("x", Const(Bit(0))), Assign("x", Const(Bit(1)))),
                         emit("A", Send(Var("x"))), emit("B")))
    lts = generate(net(body, {"A": Local(), "B": Local()}))
    assert lts.n_states == 2


@pytest.mark.parametrize("build,message", [
    (lambda: net(seq(Call("P"), emit("A")), {"A": Local()}), "tail"),
    (lambda: net(Break("nowhere")), "loop"),
    (lambda: net(emit("A", Send(Var("x"))), {"A": Local()}), "unassigned"),
    (lambda: net(emit("A")), "synchronization rule"),
    (lambda: net(seq(emit("A"), emit("A", Send(Const(Bit(0))))), {"A": Local()}), "arit"),
    (lambda: net(Call("Q")), "undefined"),
    (lambda: net(NIL, params=("k",)), "initialize"),
])
def test_static_errors(build, message):
    with pytest.raises(KernelError, match=message):
        build()


def test_definite_assignment_is_path_sensitive():
    body = seq(alt(Assign("x", Const(Bit(0))), emit("B")), emit("A", Send(Var("x"))))
    with pytest.raises(KernelError, match="unassigned"):
        net(body, {"A": Local(), "B": Local()})


def _nodes_and_counters(n, node_body, counter_body, sync):
    procs = [ProcessDef(f"N{i}", (), node_body(i)) for i in range(1, n + 1)]
    procs += [ProcessDef(f"C{i}", (), counter_body(i)) for i in range(1, n + 1)]
    insts = [Instance(f"n{i}", f"N{i}", (), "node", i) for i in range(1, n + 1)]
    insts += [Instance(f"c{i}", f"C{i}", (), "counter", i) for i in range(1, n + 1)]
    return ProcessNetwork(procs, insts, sync)


def test_allof_barrier_needs_everyone():
    network = _nodes_and_counters(
        3, lambda i: Loop("l", seq(emit("STEP", Send(Const(Pid(i)))), emit("SYNC"))),
        lambda i: NIL, {"STEP": Local(), "SYNC": AllOf("node")})
    lts = generate(network)
    # 2^3 combinations of who has stepped; SYNC only from the full one
    assert lts.n_states == 8
    assert sum(1 for _, a, _ in lts.transitions if a.gate == "SYNC") == 1


def test_pair_node_counter_matches_own_counter_only():
    network = _nodes_and_counters(
        2, lambda i: emit("TALLY", Send(Const(Pid(i))), Bind("k", counts(2))),
        lambda i: emit("TALLY", Send(Const(Pid(i))), Send(Const(Count(i)))),
        {"TALLY": PairNodeCounter()})
    assert labels(generate(network)) == ["TALLY !1 !1", "TALLY !2 !2"]


def test_propagate_reaches_all_other_counters_at_once():
    network = _nodes_and_counters(
        3, lambda i: emit("PROPAGATE", Send(Const(Pid(i))), Send(Const(Bit(1)))),
        lambda i: Loop("l", seq(emit("PROPAGATE", Bind("j", tuple(Pid(k) for k in (1, 2, 3) if k != i)),
                                     Bind("b", bits())))),
        {"PROPAGATE": NodeWithOtherCounters()})
    lts = generate(network)
    assert labels(lts) == ["PROPAGATE !1 !1", "PROPAGATE !2 !1", "PROPAGATE !3 !1"]
    assert lts.n_states == 8


def test_unify_offers():
    x = Bind("x", bits())
    assert unify_offers([(Bit(1),), (x,)]) == [((Bit(1),), [(), (("x", Bit(1)),)])]
    assert unify_offers([(Bit(1),), (Bit(0),)]) == []
    both = unify_offers([(x,), (Bind("y", (Bit(1), Count(3))),)])
    assert both == [((Bit(1),), [(("x", Bit(1)),), (("y", Bit(1)),)])]
    # the same variable bound twice must receive equal values
    assert [v for v, _ in unify_offers([(x, x)])] == [(Bit(0), Bit(0)), (Bit(1), Bit(1))]


def test_alt_branch_order_does_not_change_successor_set():
    branches = [emit("A", Send(Const(Bit(0)))), seq(emit("B"), emit("C")), emit("A", Bind("b", bits()))]
    sync = {"A": Local(), "B": Local(), "C": Local()}
    reference = None
    for order in itertools.permutations(branches):
        lts = generate(net(Loop("l", alt(*order)), sync))
        if reference is None:
            reference = lts
        assert lts == reference


def test_valuation_shows_live_variables():
    body = seq(Assign("x", Const(Bit(1))), emit("A", Send(Var("x"))), emit("B"))
    network = net(body, {"A": Local(), "B": Local()})
    s0 = network.initial_state()
    assert network.valuation(s0, 0) == {"x": Bit(1)}
    (_, s1), = network.successors(s0)
    assert network.valuation(s1, 0) == {}
    assert network.control_point(s1, 0) != network.control_point(s0, 0)
