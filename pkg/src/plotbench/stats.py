"""Rank tests, multiple-comparison correction, compact letter display, bootstrap CIs."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from typing import Sequence

import numpy as np
from scipy.special import gammaincc, ndtr, ndtri

EXACT_MAX_N = 8


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _tie_sum(values: Sequence[float]) -> float:
    return float(sum(t**3 - t for t in Counter(values).values()))


def chi2_sf(x: float, df: int) -> float:
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Kruskal-Wallis H with tie correction; p from chi-square with k-1 df."""
    groups = [list(map(float, g)) for g in groups]
    if len(groups) < 2 or any(len(g) == 0 for g in groups):
        raise ValueError("need at least two non-empty groups")
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = rankdata(pooled)
    h = 0.0
    start = 0
    for g in groups:
        r = sum(ranks[start:start + len(g)])
        h += r * r / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - _tie_sum(pooled) / (n**3 - n) if n > 1 else 0.0
    if correction <= 0:
        return 0.0, 1.0
    h = max(h / correction, 0.0)
    return h, chi2_sf(h, len(groups) - 1)


def _u_from_ranks(ranks_a: Sequence[float], n1: int) -> float:
    return sum(ranks_a) - n1 * (n1 + 1) / 2.0


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """U for sample ``a`` and a two-sided p value.

    Exact permutation p (ties included) when both samples have at most eight
    values; otherwise the normal approximation with tie and continuity
    corrections.
    """
    a, b = list(map(float, a)), list(map(float, b))
    n1, n2 = len(a), len(b)
    if not n1 or not n2:
        raise ValueError("both samples must be non-empty")
    pooled = a + b
    ranks = rankdata(pooled)
    u = _u_from_ranks(ranks[:n1], n1)
    mu = n1 * n2 / 2.0

    if n1 <= EXACT_MAX_N and n2 <= EXACT_MAX_N:
        dev = abs(u - mu)
        hits = total = 0
        for idx in itertools.combinations(range(n1 + n2), n1):
            total += 1
            if abs(_u_from_ranks([ranks[i] for i in idx], n1) - mu) >= dev - 1e-9:
                hits += 1
        return u, hits / total

    n = n1 + n2
    var = n1 * n2 / 12.0 * ((n + 1) - _tie_sum(pooled) / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    p = 2.0 * (1.0 - float(ndtr(max(z, 0.0))))
    return u, min(1.0, p)


def bonferroni(pvals: Sequence[float], m: int | None = None) -> list[float]:
    m = len(pvals) if m is None else m
    if m < len(pvals):
        raise ValueError("m must be at least the number of p values")
    return [min(1.0, m * p) for p in pvals]


def letter_display(means: Sequence[float], significant: Sequence[Sequence[bool]]) -> list[str]:
    """Compact letter display by insert-and-absorb.

    Groups sharing a letter are not significantly different. Letters go to
    columns in order of their best member, ranking groups by ascending mean
    with input order breaking ties.
    """
    k = len(means)
    sig = [[bool(significant[i][j]) for j in range(k)] for i in range(k)]
    for i in range(k):
        for j in range(k):
            if sig[i][j] != sig[j][i]:
                raise ValueError("significance matrix must be symmetric")
    columns: list[frozenset[int]] = [frozenset(range(k))] if k else []
    for i, j in itertools.combinations(range(k), 2):
        if not sig[i][j]:
            continue
        nxt: list[frozenset[int]] = []
        for col in columns:
            if i in col and j in col:
                nxt.extend([col - {i}, col - {j}])
            else:
                nxt.append(col)
        # absorb: drop duplicates and columns contained in another column
        uniq = list(dict.fromkeys(nxt))
        columns = [c for c in uniq if c and not any(c < other for other in uniq)]
    rank = {g: r for r, g in enumerate(sorted(range(k), key=lambda g: (means[g], g)))}
    columns.sort(key=lambda c: min(rank[g] for g in c))
    letters = ["" for _ in range(k)]
    for n, col in enumerate(columns):
        letter = _letter(n)
        for g in sorted(col):
            letters[g] += letter
    return letters


def _letter(n: int) -> str:
    s = ""
    n += 1
    while n:
        n, r = divmod(n - 1, 26)
        s = chr(ord("a") + r) + s
    return s


def bootstrap_ci(values: Sequence[float], level: float = 0.95, n_boot: int = 2000,
                 seed: int = 0) -> tuple[float, float]:
    """Bias-corrected percentile bootstrap interval for the mean."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    mean = float(x.mean())
    if x.size == 1 or np.all(x == x[0]):
        return mean, mean
    rng = np.random.default_rng(seed)
    boots = x[rng.integers(0, x.size, size=(n_boot, x.size))].mean(axis=1)
    below = (np.sum(boots < mean) + 0.5 * np.sum(boots == mean)) / n_boot
    below = min(max(below, 0.5 / n_boot), 1 - 0.5 / n_boot)
    z0 = float(ndtri(below))
    alpha = 1.0 - level
    lo_q = float(ndtr(2 * z0 + ndtri(alpha / 2)))
    hi_q = float(ndtr(2 * z0 + ndtri(1 - alpha / 2)))
    lo, hi = np.quantile(boots, [lo_q, hi_q])
    return float(lo), float(hi)
