import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fquant.rng import RngStream


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40))
@settings(max_examples=30, deadline=None)
def test_same_seed_and_counter_same_draws(seed, counter):
    a = RngStream(seed, counter).normal(16)
    b = RngStream(seed, counter).normal(16)
    assert np.array_equal(a, b)


def test_counter_and_children_give_distinct_streams():
    base = RngStream(7)
    draws = [base.normal(8), base.advance(1).normal(8), base.child("a").normal(8), base.child("b").normal(8)]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j])


def test_child_is_stable():
    assert RngStream(1).child("x") == RngStream(1).child("x")
    assert RngStream(1).child(("level", 3)) != RngStream(1).child(("level", 4))


def test_advance_composes():
    assert RngStream(3).advance(2).advance(5) == RngStream(3, 7)
