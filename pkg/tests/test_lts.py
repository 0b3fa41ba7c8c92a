import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbaverif.lts import (TAU, Abstract, AutFormatError, Bit, Count, Label, LabelParseError,
                          LtsError, PatternError, Pid, Prob, RenameError, Step, Tag,
                          format_label, hide, hide_all_but, is_normal, make_lts, normalize,
                          parse_label, prob_from_str, read_aut, rename, stats, write_aut, write_dot)

from conftest import lts_strategy, random_lts


def test_value_ranges():
    with pytest.raises(ValueError):
        Bit(2)
    with pytest.raises(ValueError):
        Pid(0)
    with pytest.raises(ValueError):
        Step(3)
    with pytest.raises(ValueError):
        Tag("MIDDLE")
    with pytest.raises(ValueError):
        Count(-1)
    with pytest.raises(ValueError):
        Prob(10001)
    with pytest.raises(ValueError):
        Abstract("1x")


def test_probabilities_are_exact_ticks():
    assert prob_from_str("0.75") == Prob(7500)
    assert prob_from_str("0.7424") == Prob(7424)
    with pytest.raises(ValueError):
        prob_from_str("0.00001")
    assert format_label(Label("P_IN", (Pid(1), Prob(7500)))) == "P_IN !1 !0.75"
    assert format_label(Label("P_ONE", (Pid(2), Prob(2576)))) == "P_ONE !2 !0.2576"


def test_parse_uses_gate_profiles():
    assert parse_label("SET_BIT !1 !0 !1") == Label("SET_BIT", (Pid(1), Step(0), Bit(1)))
    assert parse_label("SYNC !BEGIN") == Label("SYNC", (Tag("BEGIN"),))
    assert parse_label("TALLY !2 !X !X") == Label("TALLY", (Pid(2), Abstract(), Abstract()))
    assert parse_label("i") is TAU
    # unknown gates fall back to shape typing
    assert parse_label("FOO !3 !0.5 !bar") == Label("FOO", (Count(3), Prob(5000), Abstract("bar")))


@pytest.mark.parametrize("text,offset", [("!x", 0), ("SYNC BEGIN", 4), ("TALLY !1 !", 8)])
def test_parse_errors_carry_offset(text, offset):
    with pytest.raises(LabelParseError) as err:
        parse_label(text)
    assert err.value.offset == offset


values = st.one_of(
    st.integers(0, 1).map(Bit), st.integers(1, 9).map(Pid), st.integers(0, 2).map(Step),
    st.sampled_from(["BEGIN", "END"]).map(Tag), st.integers(0, 20).map(Count),
    st.integers(0, 10000).map(Prob), st.sampled_from(["X", "Y"]).map(Abstract),
)


@given(st.sampled_from(["G", "H_2"]), st.lists(values, max_size=4))
def test_format_parse_inverse_for_unprofiled_gates(gate, offers):
    label = Label(gate, tuple(offers))
    text = format_label(label)
    assert format_label(parse_label(text)) == text


@given(st.integers(1, 4), st.integers(0, 2), st.integers(0, 1))
def test_format_parse_inverse_for_model_labels(pid, step, bit):
    label = Label("SET_BIT", (Pid(pid), Step(step), Bit(bit)))
    assert parse_label(format_label(label)) == label


def test_make_lts_rejects_out_of_range():
    with pytest.raises(LtsError):
        make_lts(2, [(0, "a", 2)])
    with pytest.raises(LtsError):
        make_lts(2, [], initial=5)


def test_normalize_renumbers_and_prunes():
    lts = make_lts(5, [(3, "b", 1), (3, "a", 2), (2, "x", 3), (3, "a", 2), (4, "z", 4)], initial=3)
    norm = normalize(lts)
    assert norm.n_states == 3
    assert write_aut(norm).decode() == (
        'des (0, 3, 3)\n(0, "a", 1)\n(0, "b", 2)\n(1, "x", 0)\n')


@settings(max_examples=200)
@given(lts_strategy(), st.randoms(use_true_random=False))
def test_normalize_idempotent_and_permutation_invariant(lts, rnd):
    norm = normalize(lts)
    assert normalize(norm) == norm
    assert is_normal(norm)
    perm = list(range(lts.n_states))
    rnd.shuffle(perm)
    shuffled = make_lts(lts.n_states, [(perm[s], a, perm[d]) for s, a, d in lts.transitions],
                        perm[lts.initial])
    assert normalize(shuffled) == norm


def test_normalize_idempotent_on_thousand_random_lts():
    rng = random.Random(1)
    for _ in range(1000):
        norm = normalize(random_lts(rng, 10))
        assert normalize(norm) == norm


def test_stats_tuple():
    lts = make_lts(3, [(0, "a", 1), (1, "i", 2), (1, "a", 0)])
    assert stats(lts).as_tuple() == (3, 3, 1, 1, 1)


def test_aut_roundtrip_and_format():
    lts = normalize(make_lts(2, [(0, "SYNC !BEGIN", 1), (1, "SYNC !END", 0), (1, "i", 1)]))
    data = write_aut(lts)
    assert data == b'des (0, 3, 2)\n(0, "SYNC !BEGIN", 1)\n(1, "SYNC !END", 0)\n(1, "i", 1)\n'
    assert read_aut(data) == lts


@given(lts_strategy())
def test_aut_roundtrip_on_normal_lts(lts):
    norm = normalize(lts)
    assert read_aut(write_aut(norm)) == norm


def test_read_aut_accepts_unquoted_labels():
    lts = read_aut("des (0, 1, 1)\n(0, a, 0)\n")
    assert lts.transitions == ((0, parse_label("a"), 0),)


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("des (0, 2, 1)\n(0, \"a\", 0)\n", 1),
    ("des (0, 1, 1)\n(0, \"a\", 3)\n", 2),
    ("des (0, 1, 1)\n(0 \"a\" 0)\n", 2),
    ("des (0, 1, 1)\n(0, \"a !\", 0)\n", 2),
])
def test_read_aut_errors_report_line(text, line):
    with pytest.raises(AutFormatError) as err:
        read_aut(text)
    assert err.value.line == line


def test_hide_fullmatch_and_keep():
    lts = make_lts(2, [(0, "SYNC !BEGIN", 1), (1, "SYNC_X", 0), (1, "TALLY !1 !0 !0", 0)])
    hidden = hide(lts, ["SYNC.*"])
    assert [format_label(a) for _, a, _ in hidden.transitions] == ["i", "i", "TALLY !1 !0 !0"]
    assert hide(lts, ["SYNC"]) == lts
    kept = hide_all_but(lts, ["TALLY"])
    assert [a.is_tau for _, a, _ in kept.transitions] == [True, True, False]
    with pytest.raises(PatternError):
        hide(lts, ["(unclosed"])


def test_negative_lookahead_hides_all_but_sync():
    lts = make_lts(2, [(0, "SYNC !BEGIN", 1), (1, "TALLY !1 !0 !0", 0)])
    hidden = hide(lts, ["(?!SYNC).*"])
    assert [format_label(a) for _, a, _ in hidden.transitions] == ["SYNC !BEGIN", "i"]


def test_rename_first_rule_wins_and_groups():
    lts = make_lts(1, [(0, "TALLY !2 !1 !0", 0), (0, "PROPAGATE !3 !1", 0)])
    out = rename(lts, [(r"TALLY !([0-9]+) !.*", "TALLY !$1 !X !X"), (r"TALLY.*", "NEVER"),
                       (r"PROPAGATE !(\d+) !(\d+)", "PROPAGATE !$1 !X")])
    assert sorted(format_label(a) for _, a, _ in out.transitions) == ["PROPAGATE !3 !X",
                                                                       "TALLY !2 !X !X"]


def test_rename_to_unparsable_names_transition():
    lts = make_lts(2, [(0, "a", 1)])
    with pytest.raises(RenameError, match="0 -> 1"):
        rename(lts, [("a", "!!")])


def test_dot_parses_with_pydot():
    pydot = pytest.importorskip("pydot")
    lts = make_lts(3, [(0, 'SYNC !BEGIN', 1), (1, "i", 2)])
    (graph,) = pydot.graph_from_dot_data(write_dot(lts, highlight_deadlocks=True).decode())
    edges = {(e.get_source(), e.get_destination(), e.get_label()) for e in graph.get_edges()}
    assert ("0", "1", '"SYNC !BEGIN"') in edges
    node2 = graph.get_node("2")[0]
    assert node2.get("fillcolor") == "red"
    assert graph.get_node("0")[0].get("peripheries") == "2"


def test_normalize_ignores_unreachable_structure_when_breaking_ties():
    # 1 and 2 are both a-successors of 0; only an unreachable state tells them apart
    base = [(0, "a", 1), (0, "a", 2), (1, "b", 0), (2, "b", 0)]
    lts = make_lts(4, base + [(3, "c", 2)])
    norm = normalize(lts)
    assert normalize(norm) == norm


def test_normalize_invariant_on_permuted_ten_state_graphs():
    rng = random.Random(7)
    for _ in range(300):
        lts = random_lts(rng, 10, density=2.5)
        perm = list(range(lts.n_states))
        rng.shuffle(perm)
        shuffled = make_lts(lts.n_states, [(perm[s], a, perm[d]) for s, a, d in lts.transitions],
                            perm[lts.initial])
        assert normalize(shuffled) == normalize(lts)
