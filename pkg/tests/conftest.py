import random

import pytest
from hypothesis import strategies as st

from bbaverif.check import run_suite
from bbaverif.explore import generate
from bbaverif.lts import TAU, make_lts
from bbaverif.model import Faults, Style, build_network, config_for

SMALL_LABELS = ("a", "b", "c", "i")


@pytest.fixture(scope="session")
def models():
    """Generated LTSs keyed by (honest, malicious, style), built on first use."""
    cache = {}

    def get(h, m, style=Style.LOOP):
        key = (h, m, style)
        if key not in cache:
            cache[key] = generate(build_network(config_for(h, m, style=style)))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    """run_suite results keyed by (honest, malicious, faults), built on first use.

    Fault-free runs use the shipped baselines; faulty runs get a scratch
    directory so they never overwrite them.
    """
    cache = {}

    def get(h, m, faults=Faults()):
        key = (h, m, faults)
        if key not in cache:
            if faults == Faults():
                cache[key] = run_suite(config_for(h, m))
            else:
                cache[key] = run_suite(config_for(h, m), faults,
                                       baseline_dir=tmp_path_factory.mktemp("baselines"),
                                       include_style_check=False)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def a40(models):
    return models(4, 0)


@pytest.fixture(scope="session")
def a22(models):
    return models(2, 2)


def random_lts(rng: random.Random, max_states: int = 8, labels=SMALL_LABELS, density: float = 1.5):
    n = rng.randint(1, max_states)
    count = rng.randint(0, int(density * n) + 1)
    trs = [(rng.randrange(n), rng.choice(labels), rng.randrange(n)) for _ in range(count)]
    return make_lts(n, trs, rng.randrange(n))


@st.composite
def lts_strategy(draw, max_states=8, labels=SMALL_LABELS):
    n = draw(st.integers(1, max_states))
    trs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.sampled_from(labels),
                                  st.integers(0, n - 1)), max_size=3 * n))
    return make_lts(n, trs, draw(st.integers(0, n - 1)))


def perturbed(rng: random.Random, lts):
    """A copy of ``lts`` with a duplicated state and possibly an inserted tau step."""
    n = lts.n_states
    trs = list(lts.transitions)
    victim = rng.randrange(n)
    copy = n
    trs += [(copy if s == victim else s, a, d) for s, a, d in lts.transitions if s == victim]
    trs += [(s, a, copy) for s, a, d in lts.transitions if d == victim and rng.random() < 0.5]
    n += 1
    if trs and rng.random() < 0.5:
        k = rng.randrange(len(trs))
        s, a, d = trs[k]
        trs[k] = (s, a, n)
        trs.append((n, TAU, d))
        n += 1
    return make_lts(n, trs, lts.initial)


def random_pair(rng: random.Random, max_states: int = 8):
    a = random_lts(rng, max_states // 2 if rng.random() < 0.5 else max_states)
    if rng.random() < 0.5 and a.n_states + 2 <= max_states:
        return a, perturbed(rng, a)
    return a, random_lts(rng, max_states)
