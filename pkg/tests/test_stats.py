import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from oracles import exact_mwu_p
from plotbench.stats import (
    bonferroni, bootstrap_ci, chi2_sf, kruskal_wallis, letter_display, mann_whitney_u, rankdata,
)

REF = json.loads((Path(__file__).parent / "fixtures" / "stats_reference.json").read_text())


@pytest.mark.parametrize("case", REF["kruskal"])
def test_kruskal_reference(case):
    h, p = kruskal_wallis(case["groups"])
    assert h == pytest.approx(case["h"], abs=1e-6)
    assert p == pytest.approx(case["p"], abs=1e-4)


@pytest.mark.parametrize("case", REF["mannwhitney_exact"] + REF["mannwhitney_asymptotic"])
def test_mann_whitney_reference(case):
    u, p = mann_whitney_u(case["a"], case["b"])
    assert u == pytest.approx(case["u"], abs=1e-6)
    assert p == pytest.approx(case["p"], abs=1e-4)


def test_smallest_exact_case():
    u, p = mann_whitney_u([1, 2], [3, 4])
    assert u == 0
    assert p == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_exact_with_ties_matches_enumeration(a, b):
    assert mann_whitney_u(a, b)[1] == pytest.approx(exact_mwu_p(a, b), abs=1e-12)


def test_rankdata_ties():
    assert rankdata([3, 1, 3, 2]) == [3.5, 1.0, 3.5, 2.0]
    assert rankdata([5.0, 5.0]) == list(sps.rankdata([5.0, 5.0]))


def test_chi2_sf():
    assert chi2_sf(3.84, 1) == pytest.approx(sps.chi2.sf(3.84, 1), abs=1e-12)
    assert chi2_sf(0, 3) == 1.0


def test_kruskal_all_equal():
    assert kruskal_wallis([[1, 1], [1, 1, 1]]) == (0.0, 1.0)


def test_bonferroni():
    assert bonferroni([0.01, 0.4], 3) == [0.03, 1.0]
    with pytest.raises(ValueError):
        bonferroni([0.1, 0.2], 1)


def test_letters_textbook():
    # a < b < c in means; a differs from c only
    sig = [[False, False, True], [False, False, False], [True, False, False]]
    assert letter_display([1.0, 2.0, 3.0], sig) == ["a", "ab", "b"]


def test_letters_none_significant():
    assert letter_display([3, 1, 2], [[False] * 3] * 3) == ["a", "a", "a"]


def test_letters_all_different_follow_means():
    sig = [[i != j for j in range(3)] for i in range(3)]
    assert letter_display([5.0, 1.0, 3.0], sig) == ["c", "a", "b"]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda k: st.tuples(
    st.lists(st.floats(0, 10), min_size=k, max_size=k),
    st.lists(st.booleans(), min_size=k * k, max_size=k * k))))
def test_letters_respect_significance(args):
    means, flags = args
    k = len(means)
    sig = [[False] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            sig[i][j] = sig[j][i] = flags[i * k + j]
    letters = letter_display(means, sig)
    for i in range(k):
        assert letters[i]
        for j in range(i + 1, k):
            share = bool(set(letters[i]) & set(letters[j]))
            assert share != sig[i][j]


def test_bootstrap_degenerate_and_deterministic():
    assert bootstrap_ci([2.0, 2.0, 2.0]) == (2.0, 2.0)
    assert bootstrap_ci([4.0]) == (4.0, 4.0)
    x = np.random.default_rng(1).normal(10, 2, 40)
    lo, hi = bootstrap_ci(x, seed=5)
    assert (lo, hi) == bootstrap_ci(x, seed=5)
    assert lo < x.mean() < hi


def test_bootstrap_coverage():
    rng = np.random.default_rng(11)
    hits = 0
    for i in range(200):
        x = rng.exponential(1.0, 30)
        lo, hi = bootstrap_ci(x, n_boot=500, seed=i)
        hits += lo <= 1.0 <= hi
    assert hits / 200 > 0.85
