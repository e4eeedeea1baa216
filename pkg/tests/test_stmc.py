import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopclock.stmc import batch_stmc, check_lambda, window_arrays, window_stats

from helpers import make_game


def plain_game(P):
    return make_game("p" * len(P), P)


def test_worked_example():
    P = [0, 0, 2, 2, 2, 5, 5, 7, 7]
    w = window_stats(P, plain_game(P), 4, 2)
    assert (w.dpre_num, w.dpost_num, w.valid) == (2, 3, True)
    assert w.y == 0.5


def test_constant_margin_gives_zero():
    P = [3] * 12
    for t, w in batch_stmc(plain_game(P), 2, "home"):
        if w.valid:
            assert w.y == 0


def test_boundary_is_invalid():
    P = list(range(12))
    assert not window_stats(P, plain_game(P), 1, 4).valid
    assert not window_stats(P, plain_game(P), 9, 4).valid
    assert window_stats(P, plain_game(P), 5, 4).valid


@pytest.mark.parametrize("lam", [0, -2, 3, 2.5, True])
def test_bad_lambda(lam):
    with pytest.raises(ValueError):
        check_lambda(lam)


def test_empty_game():
    assert batch_stmc([], 2, "home") == []


def test_only_final_period_end():
    n, lam = 15, 2
    game = make_game("p" * (n - 1) + "e", [0] * n)
    valid = {t for t, w in batch_stmc(game, lam, "home") if w.valid}
    # period end at n-1 blocks every window that reaches it
    assert valid == {t for t in range(n) if t - lam - 1 >= 0 and t + lam < n - 1}


def test_timeout_blocks_neighbours_but_not_itself():
    n, lam, k = 20, 2, 9
    kinds = ["p"] * n
    kinds[k] = "T"
    stats = dict(batch_stmc(make_game(kinds, [0] * n), lam, "home"))
    assert stats[k].valid
    for t in range(k - lam, k + lam + 1):
        if t != k:
            assert not stats[t].valid


# -- properties ------------------------------------------------------------------

games = st.integers(min_value=0, max_value=40).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from("ppppppTto"), min_size=n, max_size=n),
        st.lists(st.integers(-4, 4), min_size=n, max_size=n),
    )
)


def build(kinds_steps):
    kinds, steps = kinds_steps
    margins, m = [], 0
    for code, d in zip(kinds, steps):
        if code == "p":
            m += d
        margins.append(m)
    return make_game(kinds, margins)


@settings(max_examples=200, deadline=None)
@given(games, st.sampled_from([2, 4, 6]))
def test_vectorised_matches_scalar(data, lam):
    game = build(data)
    P = [i.margin_home for i in game]
    for t, w in batch_stmc(game, lam, "home"):
        assert w == window_stats(P, game, t, lam)


@settings(max_examples=200, deadline=None)
@given(games, st.sampled_from([2, 4, 6]))
def test_validity_rule_by_enumeration(data, lam):
    game = build(data)
    n = len(game)
    for t, w in batch_stmc(game, lam, "home"):
        expected = (t - lam - 1 >= 0 and t + lam <= n - 1
                    and not any(game[k].is_interruption for k in range(t - lam, t + lam + 1) if k != t))
        assert w.valid == expected


@settings(max_examples=100, deadline=None)
@given(games, st.sampled_from([2, 4]))
def test_side_antisymmetry_and_exact_scale(data, lam):
    game = build(data)
    home = batch_stmc(game, lam, "home")
    away = batch_stmc(game, lam, "away")
    for (t, h), (_, a) in zip(home, away):
        assert h.valid == a.valid
        if h.valid:
            assert h.y == -a.y
            assert (h.y * lam) == int(h.y * lam)


@settings(max_examples=100, deadline=None)
@given(games, st.integers(-50, 50))
def test_shift_invariance(data, c):
    game = build(data)
    P = np.array([i.margin_home for i in game], dtype=np.int64)
    interruption = np.array([i.is_interruption for i in game], dtype=bool)
    a = window_arrays(P, interruption, 2)
    b = window_arrays(P + c, interruption, 2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
