"""Upper bound on the error of the empty-bucket termination assumption.

The model treats a lookup as terminating when the bucket covering the target is
empty; this module bounds the probability that the responsible node nevertheless
failed to fit into the routing table, maximized over requester positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import binom_pmf, window_low
from .routing import SystemProfile


@dataclass(frozen=True)
class BoundCurve:
    profile: str
    points: tuple  # ((n, bound), ...)


def _binom_ccdf(trials: int, p: float, k: int) -> float:
    """P(Binomial(trials, p) > k); partial sum, k is small."""
    if p <= 0.0:
        return 0.0
    acc = 0.0
    for z in range(0, k + 1):
        acc += binom_pmf(trials, z, p)
    return max(0.0, 1.0 - acc)


def _p_other_levels(profile: SystemProfile, n: int, d: int) -> float:
    """Union bound over the requester's other levels overflowing their capacity."""
    b = profile.b
    denom = 1.0 - 2.0 ** (d - 1 - b)
    total = 0.0
    for i in range(2, d + 1):
        p = 2.0 ** (d - i - b) / denom
        k = profile.bucket_capacity(max(d - i, 1))
        total += _binom_ccdf(n - 1, p, k)
    return total


def _kad_qij(b: int, d: int, l: int, j: int, i: int) -> float:
    """Binomial parameter of the i-th closest same-level bucket's population,
    conditioned on all closer ones being empty (three published case families)."""
    if d == b:
        return 2.0**-4 / (1.0 - i * 2.0**-4)
    if l == 4:
        if i == 1:
            return 2.0 ** (d - 4 - b) / (1.0 - 2.0 ** (d - 4 - b))
        return 2.0 ** (d - 3 - b) / (1.0 - 2.0 * 2.0 ** (d - 4 - b) - (i - 2) * 2.0 ** (d - 3 - b))
    if j in (1, 2):  # XOR distance starts with 11
        if i <= 2:
            return 2.0 ** (d - 3 - b) / (1.0 - i * 2.0 ** (d - 3 - b))
        return 2.0 ** (d - 4 - b) / (1.0 - 3.0 * 2.0 ** (d - 3 - b) - (i - 3) * 2.0 ** (d - 4 - b))
    # j == 3: the two closest buckets resolve four additional bits
    if i <= 2:
        return 2.0 ** (d - 4 - b) / (1.0 - 2.0 ** (d - 3 - b) - (i - 1) * 2.0 ** (d - 4 - b))
    return 2.0 ** (d - 4 - b) / (1.0 - 2.0 ** (d - 3 - b) - 2.0 * 2.0 ** (d - 4 - b) - (i - 3) * 2.0 ** (d - 3 - b))


def _kad_nested(profile: SystemProfile, n: int, d: int, l: int, p_levels: float) -> float:
    """max over bucket positions j of the nested same-level overflow recursion."""
    b = profile.b
    k = profile.bucket_capacity(d)
    if d == b:
        j_cases = [0]
        a = 7
    elif l == 4:
        j_cases = [4]
        a = 4
    else:
        j_cases = [1, 3]
        a = 4
    best = 0.0
    for j in j_cases:
        acc = p_levels
        for i in range(a, 0, -1):
            q = _kad_qij(b, d, l, j, i)
            q = min(max(q, 0.0), 1.0)
            p_over = _binom_ccdf(n - 1, q, k)
            p_zero = (1.0 - q) ** (n - 1)
            acc = p_over + p_zero * acc
        best = max(best, acc)
    return best


def empty_bucket_bound(profile: SystemProfile, n: int) -> float:
    """The published upper bound, maximized over requester distance and level shape."""
    if n < 2:
        raise ValueError("n >= 2 required")
    b = profile.b
    lo = max(window_low(profile, n), 2)
    best = 0.0
    multi = any(len(profile.level_row(d)) > 1 or max(profile.level_row(d)) > 1 for d in range(1, b + 1))
    for d in range(lo, b + 1):
        p_levels = _p_other_levels(profile, n, d)
        for l in profile.level_row(d):
            p_e1 = (1.0 - 2.0 ** (d - l - b)) ** (n - 1)
            if multi:
                p_e2 = _kad_nested(profile, n, d, l, 5.0 * p_levels)
            else:
                p_e2 = p_levels
            best = max(best, p_e1 * min(p_e2, 1.0))
    return best


def default_grid(n_min: int = 1000, n_max: int = 4_000_000, points: int = 60) -> list[int]:
    if points < 1:
        raise ValueError("points >= 1 required")
    if points == 1:
        return [int(n_min)]
    grid = np.unique(np.round(np.logspace(math.log10(n_min), math.log10(n_max), points)).astype(int))
    return [int(x) for x in grid]


def bound_curve(profile: SystemProfile, grid) -> BoundCurve:
    pts = tuple((int(n), empty_bucket_bound(profile, int(n))) for n in grid)
    return BoundCurve(profile.name, pts)


def count_local_maxima(curve: BoundCurve, n_min: int = 1000, n_max: int = 1_000_000) -> int:
    """Sawtooth detector: strict local maxima of the bound over [n_min, n_max]."""
    pts = [(n, v) for n, v in curve.points if n_min <= n <= n_max]
    count = 0
    for i in range(1, len(pts) - 1):
        if pts[i][1] > pts[i - 1][1] and pts[i][1] > pts[i + 1][1]:
            count += 1
    return count
