"""Analytical Markov-chain hop-count model for Kademlia-type routing.

The chain state is the sorted tuple of bit distances of the alpha closest queried
nodes to the target; the absorbing state TERMINAL means the responsible node is
known. Success within h hops is the terminal mass after h-1 transition steps.

Closest-contact laws come in two variants:

* ``exact`` (default): the same decomposition as the published propositions but
  with exact multinomial pattern occupancy and exact hypergeometric extras. This
  variant agrees with Monte Carlo bucket construction at sampling precision.
* ``printed``: the propositions transcribed literally, including their shifted
  pattern-geometry indices and Bose-Einstein occupancy factor. Kept for
  documentation and comparison; it deviates measurably from sampled buckets.

Tuple laws are *unconditional* closest-contact distance laws; the probability
that the responsible node is already known (``p_empty``) is tracked separately,
which mirrors how the transition operator combines absorption and movement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .routing import DIVERSE, STANDARD, SystemProfile

TERMINAL = "terminal"

_GRID_SPAN = 64  # values further than this below a region top carry < 2^-64 mass


class UnsupportedParameterError(ValueError):
    """Requested a law outside the analytically supported parameter range."""


# ------------------------------------------------------------------ numerics


def comb0(n: int, k: int) -> int:
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


def binom_pmf(m: int, z: int, p: float) -> float:
    """P(Binomial(m, p) = z), evaluated in log space for large m."""
    if not 0 <= z <= m:
        raise ValueError("need 0 <= z <= m")
    if not 0.0 <= p <= 1.0:
        raise ValueError("need p in [0, 1]")
    if p == 0.0:
        return 1.0 if z == 0 else 0.0
    if p == 1.0:
        return 1.0 if z == m else 0.0
    lg = (
        math.lgamma(m + 1)
        - math.lgamma(z + 1)
        - math.lgamma(m - z + 1)
        + z * math.log(p)
        + (m - z) * math.log1p(-p)
    )
    return math.exp(lg)


def _binom_window(trials: int, p: float, tail: float = 1e-12):
    """Index range [lo, hi] covering all but ~tail of Binomial(trials, p)."""
    mean = trials * p
    sd = math.sqrt(max(mean * (1 - p), 0.0))
    halfw = 12.0 * sd + 4.0
    lo = max(0, int(mean - halfw))
    hi = min(trials, int(mean + halfw) + 1)
    return lo, hi


def over_prob(a: int, b: int, c: int) -> float:
    """P(c draws from a b-set all land in a fixed a-subset) = C(a,c)/C(b,c)."""
    if c < 0 or a < 0 or b < a:
        raise ValueError("need 0 <= c and 0 <= a <= b")
    if c > a:
        return 0.0
    den = comb0(b, c)
    if den == 0:
        return 0.0
    return comb0(a, c) / den


def _over0(a: int, b: int, c: int) -> float:
    """over_prob with out-of-range arguments treated as zero-count events."""
    den = comb0(b, c)
    if den == 0:
        return 0.0
    return comb0(a, c) / den


def empty_region_prob(d: int, n: int, b: int) -> float:
    """P(no other node in a 2^d-identifier region) = (1 - 2^(d-b))^(n-1)."""
    if d > b or n < 1:
        raise ValueError("need d <= b and n >= 1")
    return (1.0 - 2.0 ** (d - b)) ** (n - 1)


def occupancy_dist(M: int, bins: int) -> list[float]:
    """P(exactly i of ``bins`` equally likely bins occupied by M balls)."""
    out = [0.0] * (bins + 1)
    if bins == 0 or M == 0:
        out[0] = 1.0
        return out
    for i in range(1, min(bins, M) + 1):
        s = 0.0
        for t in range(i + 1):
            s += (-1) ** t * comb0(i, t) * ((i - t) / bins) ** M
        out[i] = comb0(bins, i) * max(s, 0.0)
    return out


@lru_cache(maxsize=65536)
def _scaled_surj(M: int, i: int) -> float:
    """Surjections(M, i) / i^M, i.e. P(M balls cover all of i bins)."""
    if i == 0:
        return 1.0 if M == 0 else 0.0
    if M < i:
        return 0.0
    if M <= 4 * i * max(1.0, math.log(i + 1)):
        total = sum((-1) ** t * math.comb(i, t) * (i - t) ** M for t in range(i + 1))
        return total / float(i**M)
    return math.fsum((-1) ** t * math.comb(i, t) * ((i - t) / i) ** M for t in range(i + 1))


@lru_cache(maxsize=65536)
def _count_given_occupied(M: int, i: int) -> tuple:
    """P(a specific occupied bin holds c balls | M balls occupy exactly i bins),
    as ((c, prob), ...); symmetric over the occupied bins, pruned below 1e-14."""
    if i <= 0 or M < i:
        return ()
    if i == 1:
        return ((M, 1.0),)
    base = _scaled_surj(M, i)
    if base <= 0.0:
        return ((max(M // i, 1), 1.0),)
    out = []
    log_i = math.log(i)
    log_i1 = math.log(i - 1)
    for c in range(1, M - (i - 1) + 1):
        s1 = _scaled_surj(M - c, i - 1)
        if s1 <= 0.0:
            continue
        lg = (
            math.lgamma(M + 1) - math.lgamma(c + 1) - math.lgamma(M - c + 1)
            + math.log(s1) - math.log(base) + (M - c) * log_i1 - M * log_i
        )
        p = math.exp(lg)
        if p > 1e-14:
            out.append((c, p))
        elif out:
            break
    return tuple(out)


def _p_extra_hits(pool: int, pool_hit: int, draws: int) -> float:
    """P(at least one of `draws` uniform no-replacement picks from a `pool` lands
    in a `pool_hit`-sized subset)."""
    draws = min(draws, pool)
    if draws <= 0 or pool_hit <= 0 or pool <= 0:
        return 0.0
    if pool_hit >= pool:
        return 1.0
    miss = 1.0
    for t in range(draws):
        miss *= (pool - pool_hit - t) / (pool - t)
        if miss <= 0.0:
            return 1.0
    return 1.0 - miss


@lru_cache(maxsize=16384)
def _dup_prob(M: int, i: int, draws: int) -> float:
    """P(an extra contact lands on the single nearest occupied pattern), mixing the
    pattern's population over the exact occupancy-conditioned count law."""
    if draws <= 0 or M - i <= 0:
        return 0.0
    return sum(p * _p_extra_hits(M - i, c - 1, draws) for c, p in _count_given_occupied(M, i))


# ------------------------------------------------------------- order statistics


def _ring_pmf(j: int, region_exp: int) -> float:
    """One uniform node over the 2^region_exp ids within bit distance region_exp of x."""
    if region_exp <= 0:
        return 1.0 if j == 0 else 0.0
    if j == 0:
        return 2.0**-region_exp
    if 1 <= j <= region_exp:
        return 2.0 ** (j - 1 - region_exp)
    return 0.0


def upsilon(deltas, region_exp: int, a: int) -> float:
    """P(the len(deltas) closest of a iid uniform nodes in a radius-region_exp ball
    have bit distances exactly deltas); zero when a < len(deltas)."""
    deltas = tuple(sorted(deltas))
    gamma = len(deltas)
    if a < gamma:
        return 0.0
    if gamma == 0:
        return 1.0
    if any(dd < 0 or dd > max(region_exp, 0) for dd in deltas):
        raise ValueError("delta outside the region")
    top = deltas[-1]
    counts: dict[int, int] = {}
    for v in deltas:
        counts[v] = counts.get(v, 0) + 1
    c_top = counts.pop(top)
    coeff = 1.0
    rem = a
    prob = 1.0
    for v, c in counts.items():
        coeff *= comb0(rem, c)
        rem -= c
        prob *= _ring_pmf(v, region_exp) ** c
    pt = _ring_pmf(top, region_exp)
    above = max(0.0, 1.0 - 2.0 ** (min(top, region_exp) - region_exp)) if region_exp > 0 else 0.0
    tail = 0.0
    for w in range(c_top, rem + 1):
        tail += comb0(rem, w) * pt**w * above ** (rem - w)
    return coeff * prob * tail


@lru_cache(maxsize=100_000)
def _upsilon_grid(gamma: int, region_exp: int, a: int, lo: int) -> tuple:
    """Sorted-tuple law of the gamma closest of a iid nodes; values below lo are
    clamped into the lo bin. Returns ((tuple, prob), ...) pruned at 1e-18."""
    if a < gamma:
        return ()
    W = region_exp
    if W <= 0:
        t = tuple([max(lo, 0)] * gamma)
        return ((t, 1.0),)
    start = max(lo, 0, W - _GRID_SPAN)
    vals = [start] + list(range(start + 1, W + 1))
    pmf = {start: 2.0 ** (start - W)}
    for j in range(start + 1, W + 1):
        pmf[j] = 2.0 ** (j - 1 - W)
    cdf = {}
    c = 0.0
    for v in vals:
        c += pmf[v]
        cdf[v] = c
    import itertools

    out = []
    for tup in itertools.combinations_with_replacement(vals, gamma):
        top = tup[-1]
        counts: dict[int, int] = {}
        for v in tup:
            counts[v] = counts.get(v, 0) + 1
        c_top = counts.pop(top)
        coeff = 1.0
        rem = a
        prob = 1.0
        for v, cc in counts.items():
            coeff *= comb0(rem, cc)
            rem -= cc
            prob *= pmf[v] ** cc
        pt = pmf[top]
        above = max(0.0, 1.0 - cdf[top])
        tail = 0.0
        for w in range(c_top, rem + 1):
            tail += comb0(rem, w) * pt**w * above ** (rem - w)
        v = coeff * prob * tail
        if v > 1e-18:
            out.append((tup, v))
    return tuple(out)


# ------------------------------------------------------------------- bit gain


def _bitgain_cdf(i: int, l: int) -> float:
    """F^l(i) = 1 - 2^(l-i) for i >= l, else 0 (published one-contact gain CDF)."""
    if i < l:
        return 0.0
    return 1.0 - 2.0 ** (l - i)


def bitgain_standard(l: int, k: int, tol: float = 1e-12) -> float:
    """Expected bit gain of the best of k uniformly selected bucket contacts."""
    if k < 1 or l < 0:
        raise ValueError("need k >= 1 and l >= 0")
    total = float(l)
    i = l + 1
    while True:
        term = 1.0 - _bitgain_cdf(i, l) ** k
        total += term
        if term < tol and i > l + 4:
            break
        i += 1
    return total


def bitgain_diverse(l: int, k: int, tol: float = 1e-12) -> float:
    """Expected bit gain under diversity-maximized selection; q = floor(log2 k)."""
    if k < 1 or l < 0:
        raise ValueError("need k >= 1 and l >= 0")
    q = int(math.floor(math.log2(k)))
    if q == 0:
        return bitgain_standard(l, k, tol)
    total = float(l + q)
    i = l + q + 1
    while True:
        term = 1.0 - _bitgain_cdf(i - q, l) * _bitgain_cdf(i, l) ** (k - 2**q)
        total += term
        if term < tol and i > l + q + 4:
            break
        i += 1
    return total


# ------------------------------------------------------------------ law object


@dataclass
class ClosestContactLaw:
    """Closest-contact distance law of one routing table toward a target.

    ``tuples`` is the unconditional law of the sorted gamma closest contact
    distances (short buckets padded with the nearest spill distance); it sums to
    1 up to ``truncation``. ``p_empty`` is the separate probability that the
    table already contains the responsible node (or the covering bucket region
    is empty, which the model treats as termination).
    """

    gamma: int
    d: int
    p_empty: float
    tuples: dict
    source: str = "exact"
    truncation: float = 0.0

    def normalized_tuples(self) -> dict:
        s = sum(self.tuples.values())
        if s <= 0.0:
            return {}
        return {t: v / s for t, v in self.tuples.items()}

    def distribution(self) -> dict:
        """Merged view over S_gamma plus TERMINAL, summing to 1."""
        out = {TERMINAL: self.p_empty}
        scale = 1.0 - self.p_empty
        for t, v in self.normalized_tuples().items():
            out[t] = scale * v
        return out


def _pad_tuple(gamma: int, padval: int, hi: int) -> tuple:
    return tuple([min(padval, hi)] * gamma)


# ------------------------------------------------------- success probabilities


def _p_empty_standard(d: int, l: int, n: int, k: int, b: int) -> float:
    p = 2.0 ** (d - l - b)
    total = binom_pmf(n - 1, 0, p)
    lo, hi = _binom_window(n - 1, p)
    for m in range(max(1, lo), hi + 1):
        total += binom_pmf(n - 1, m, p) * min(1.0, k / m)
    return min(total, 1.0)


def _rho_printed(j: int, m: int, k: int, q: int) -> float:
    """Published rho_j: Bose-Einstein occupancy factor, numerator k + 2^q - i - 1."""
    Q = 2**q
    val = 1.0 / j
    den = comb0(m - j + Q - 2, Q - 2)
    acc = 0.0
    if den > 0:
        for i in range(1, Q):
            w = comb0(Q - 1, i) * comb0(m - j, i - 1)
            if w == 0:
                continue
            acc += (w / den) * min(1.0, (k + Q - i - 1) / max(1, m - i - 1))
    return val + (1 - 1.0 / j) * acc


def _p_empty_diverse_printed(d: int, l: int, n: int, k: int, q: int, b: int) -> float:
    p = 2.0 ** (d - l - b)
    Q = 2**q
    total = binom_pmf(n - 1, 0, p)
    lo, hi = _binom_window(n - 1, p)
    for m in range(max(1, lo), hi + 1):
        bm = binom_pmf(n - 1, m, p)
        if bm < 1e-16:
            continue
        inner = binom_pmf(m, 0, 2.0**-q) * min(1.0, k / m)
        jlo, jhi = _binom_window(m, 2.0**-q)
        for j in range(max(1, jlo), jhi + 1):
            bj = binom_pmf(m, j, 2.0**-q)
            if bj < 1e-15:
                continue
            inner += bj * _rho_printed(j, m, k, q)
        total += bm * min(inner, 1.0)
    return min(total, 1.0)


def _p_empty_diverse_exact(d: int, l: int, n: int, k: int, q: int, b: int) -> float:
    """Exact-occupancy replacement for the published termination probability."""
    Dl = d - l
    p = 2.0 ** (Dl - b)
    Q = 2**q
    total = binom_pmf(n - 1, 0, p)
    lo, hi = _binom_window(n - 1, p)
    Wp = max(Dl - q, 0)
    em_pat = empty_region_prob(Wp, n, b) if Wp <= b else 0.0
    dense = (Q - 1) * em_pat < 1e-12 and (n - 1) * p / Q > 16
    occ_cache: dict[int, list[float]] = {}
    for m in range(max(1, lo), hi + 1):
        bm = binom_pmf(n - 1, m, p)
        if bm < 1e-16:
            continue
        bj0 = binom_pmf(m, 0, 2.0**-q)
        if bj0 > 1e-12 and not dense:
            # own pattern empty: the responsible node sits in the nearest occupied
            # pattern and is in the bucket if picked as representative or extra
            occd0 = occupancy_dist(m, Q - 1)
            acc0 = 0.0
            for i, pi in enumerate(occd0):
                if pi < 1e-14 or i == 0:
                    continue
                pool = m - i
                dr = min(max(k - i, 0), pool)
                term = 0.0
                for c, pc in _count_given_occupied(m, i):
                    ex = dr * (c - 1) / pool if pool > 0 else 0.0
                    term += pc * min(1.0, (1.0 + min(ex, c - 1)) / c)
                acc0 += pi * term
            inner = bj0 * acc0
        else:
            inner = bj0 * min(1.0, k / m)
        jlo, jhi = _binom_window(m, 2.0**-q)
        for j in range(max(1, jlo), jhi + 1):
            bj = binom_pmf(m, j, 2.0**-q)
            if bj < 1e-15:
                continue
            if dense:
                pool = m - Q
                extras = min(k - Q, pool) if pool > 0 else 0
                ea = extras * (j - 1) / pool if pool > 0 else 0.0
                inner += bj * (1.0 + min(ea, j - 1)) / j
                continue
            M = m - j
            occd = occ_cache.get(M)
            if occd is None:
                occd = occ_cache[M] = occupancy_dist(M, Q - 1)
            acc = 0.0
            for i, pi in enumerate(occd):
                if pi == 0.0:
                    continue
                occ = i + 1
                pool = m - occ
                extras = min(max(0, k - occ), pool)
                ea = extras * (j - 1) / pool if pool > 0 else 0.0
                acc += pi * (1.0 + min(ea, j - 1))
            inner += bj * acc / j
        total += bm * min(inner, 1.0)
    return min(total, 1.0)


def success_prob(scheme: str, d: int, l: int, n: int, k: int, q: int, *, b: int,
                 variant: str = "exact") -> float:
    """P(C = terminal | D=d, L_d=l): the queried table knows the responsible node."""
    if n < 1 or d > b:
        raise ValueError("need n >= 1 and d <= b")
    if n == 1:
        return 1.0
    if scheme == STANDARD:
        return _p_empty_standard(d, l, n, k, b)
    if scheme == DIVERSE:
        if q <= 0:
            return _p_empty_standard(d, l, n, k, b)
        if variant == "printed":
            return _p_empty_diverse_printed(d, l, n, k, q, b)
        return _p_empty_diverse_exact(d, l, n, k, q, b)
    raise ValueError(f"unknown scheme {scheme!r}")


# ------------------------------------------------------------------- tuple laws


def closest_law_standard(gamma: int, d: int, l: int, n: int, k: int, *, b: int,
                         lo: int = 0, absorb_responsible: bool = True) -> ClosestContactLaw:
    """Closest-gamma contact law for uniform bucket selection.

    With absorb_responsible=False and a table that holds every other node
    (n - 1 <= k), the law is the whole-space order-statistics law over n-1 nodes.
    """
    if gamma < 1:
        raise ValueError("gamma >= 1 required")
    Dl = d - l
    if Dl < 0:
        raise ValueError("need l <= d")
    if not absorb_responsible:
        if n - 1 <= k:
            tuples = {t: v for t, v in _upsilon_grid(gamma, b, n - 1, lo)}
            return ClosestContactLaw(gamma, d, 0.0, tuples, truncation=1.0 - sum(tuples.values()))
        raise UnsupportedParameterError("absorb_responsible=False supported only for n-1 <= k")
    p = 2.0 ** (Dl - b)
    pe = _p_empty_standard(d, l, n, k, b) if n > 1 else 1.0
    padval = min(Dl + 1, b)
    law: dict = {}
    size_w: dict[int, float] = {}
    short = binom_pmf(n - 1, 0, p)
    mlo, mhi = _binom_window(n - 1, p)
    for m in range(max(1, mlo), mhi + 1):
        bm = binom_pmf(n - 1, m, p)
        if bm < 1e-16:
            continue
        size_w[min(k, m)] = size_w.get(min(k, m), 0.0) + bm
    for c, w in size_w.items():
        if c >= gamma:
            for tup, u in _upsilon_grid(gamma, Dl, c, lo):
                law[tup] = law.get(tup, 0.0) + w * u
        elif c == 0:
            short += w
        else:
            for tup, u in _upsilon_grid(c, Dl, c, lo):
                padded = tuple(sorted(tup + (padval,) * (gamma - c)))
                law[padded] = law.get(padded, 0.0) + w * u
    if short > 0.0:
        tup = _pad_tuple(gamma, padval, b)
        law[tup] = law.get(tup, 0.0) + short
    return ClosestContactLaw(gamma, d, pe, law, truncation=max(0.0, 1.0 - sum(law.values())))


@lru_cache(maxsize=65536)
def _ring_slot_configs(need: int, q: int, i: int, M: int, draws: int) -> tuple:
    """Law of the ring offsets of the `need` nearest contact slots among the non-own
    patterns: i patterns occupied (uniform positions) by M balls, plus `draws`
    extra contacts drawn from the M - i surplus balls. A repeated offset means two
    contacts from the same ring; the nearest occupied pattern may contribute a
    duplicate slot through an extra landing on it. Short tuples when starved."""
    Q = 2**q
    pd = _dup_prob(M, i, draws) if need >= 2 else 0.0
    res: dict[tuple, float] = {}

    def emit(prefix, pr):
        key = tuple(prefix)
        res[key] = res.get(key, 0.0) + pr

    def rec(t, rem_i, avail, prefix, pr, first_pending):
        if len(prefix) >= need or rem_i == 0 or t < 0:
            emit(prefix[:need], pr)
            return
        ring_sz = 2 ** (q - 1 - t)
        den = comb0(avail, rem_i)
        if den == 0:
            emit(prefix[:need], pr)
            return
        for w in range(0, min(ring_sz, rem_i) + 1):
            pw = comb0(ring_sz, w) * comb0(avail - ring_sz, rem_i - w) / den
            if pw <= 0.0:
                continue
            if w == 0:
                rec(t - 1, rem_i, avail - ring_sz, prefix, pr * pw, first_pending)
                continue
            if first_pending and w == 1 and need - len(prefix) >= 2 and pd > 0.0:
                rec(t - 1, rem_i - 1, avail - ring_sz, prefix + [t, t], pr * pw * pd, False)
                rec(t - 1, rem_i - 1, avail - ring_sz, prefix + [t], pr * pw * (1.0 - pd), False)
            else:
                take = min(w, need - len(prefix))
                rec(t - 1, rem_i - w, avail - ring_sz, prefix + [t] * take, pr * pw, False)

    rec(q - 1, i, Q - 1, [], 1.0, True)
    return tuple(res.items())


def _dense_ring_offsets(q: int, need: int) -> tuple:
    """Nearest `need` ring offsets when every pattern is occupied."""
    offsets = []
    for t in range(q - 1, -1, -1):
        offsets.extend([t] * (2 ** (q - 1 - t)))
        if len(offsets) >= need:
            break
    return tuple(offsets[:need])


def _closest_law_diverse_exact(gamma, d, l, n, k, q, b, lo) -> ClosestContactLaw:
    Dl = d - l
    Wp = max(Dl - q, 0)
    p = 2.0 ** (Dl - b)
    Q = 2**q
    padval = min(Dl + 1, b)
    w_ups: dict[int, float] = {}
    w_mix: dict[tuple, float] = {}
    w_short = binom_pmf(n - 1, 0, p)
    em_pat = empty_region_prob(Wp, n, b)
    dense = (Q - 1) * em_pat < 1e-12 and (n - 1) * p / Q > 16
    occ_cache: dict[int, list[float]] = {}
    if dense:
        extras = k - Q
        for a_x in range(0, extras + 1):
            pa = binom_pmf(extras, a_x, 1.0 / Q)
            if pa < 1e-15:
                continue
            npat = a_x + 1
            if npat >= gamma:
                w_ups[a_x] = w_ups.get(a_x, 0.0) + pa
                continue
            need = gamma - npat
            if need == 1 or q == 1:
                rings = _dense_ring_offsets(q, need)
                w_mix[(npat, rings)] = w_mix.get((npat, rings), 0.0) + pa
            else:
                # second ring slot: extra on the sibling pattern, else next ring
                pdense = 1.0 - (1.0 - 1.0 / (Q - 1)) ** max(extras - a_x, 0)
                w_mix[(npat, (q - 1, q - 1))] = w_mix.get((npat, (q - 1, q - 1)), 0.0) + pa * pdense
                w_mix[(npat, (q - 1, q - 2))] = w_mix.get((npat, (q - 1, q - 2)), 0.0) + pa * (1.0 - pdense)
    else:
        mlo, mhi = _binom_window(n - 1, p)
        for m in range(max(1, mlo), mhi + 1):
            bm = binom_pmf(n - 1, m, p)
            if bm < 1e-16:
                continue
            for j in range(0, m + 1):
                bj = binom_pmf(m, j, 1.0 / Q)
                if bj < 1e-14:
                    continue
                M = m - j
                occd = occ_cache.get(M)
                if occd is None:
                    occd = occ_cache[M] = occupancy_dist(M, Q - 1)
                for i, pi in enumerate(occd):
                    if pi < 1e-15:
                        continue
                    w0 = bm * bj * pi
                    if j == 0:
                        if i == 0:
                            w_short += w0
                            continue
                        dr0 = min(max(k - i, 0), M - i)
                        for offs, pr in _ring_slot_configs(gamma, q, i, M, dr0):
                            if len(offs) < gamma:
                                w_short += w0 * pr
                            else:
                                w_mix[(0, offs)] = w_mix.get((0, offs), 0.0) + w0 * pr
                        continue
                    occ = i + 1
                    pool = m - occ
                    extras = min(max(0, k - occ), pool)
                    amax = min(extras, j - 1)
                    den = comb0(pool, extras)
                    for a_x in range(0, amax + 1):
                        if den > 0:
                            pa = comb0(j - 1, a_x) * comb0(pool - (j - 1), extras - a_x) / den
                        else:
                            pa = 1.0 if a_x == 0 else 0.0
                        if pa < 1e-14:
                            continue
                        w = w0 * pa
                        npat = a_x + 1
                        if npat >= gamma:
                            w_ups[a_x] = w_ups.get(a_x, 0.0) + w
                        else:
                            need = gamma - npat
                            if i == 0:
                                w_short += w
                                continue
                            dr = min(max(k - occ - a_x, 0), M - i)
                            for offs, pr in _ring_slot_configs(need, q, i, M, dr):
                                if len(offs) < need:
                                    w_short += w * pr
                                else:
                                    w_mix[(npat, offs)] = w_mix.get((npat, offs), 0.0) + w * pr
    pe = success_prob(DIVERSE, d, l, n, k, q, b=b, variant="exact")
    law: dict = {}
    for a_x, w in w_ups.items():
        for tup, u in _upsilon_grid(gamma, Wp, a_x + 1, lo):
            law[tup] = law.get(tup, 0.0) + w * u
    for (npat, offs), w in w_mix.items():
        ring_vals = [max(min(Dl - t, b), lo) for t in offs]
        if npat == 0:
            tup = tuple(sorted(ring_vals))
            law[tup] = law.get(tup, 0.0) + w
        else:
            for sub, u in _upsilon_grid(npat, Wp, npat, lo):
                tup = tuple(sorted(list(sub) + ring_vals))
                law[tup] = law.get(tup, 0.0) + w * u
    if w_short > 1e-15:
        tup = _pad_tuple(gamma, padval, b)
        law[tup] = law.get(tup, 0.0) + w_short
    return ClosestContactLaw(gamma, d, pe, law, truncation=max(0.0, 1.0 - sum(law.values())))


def _closest_law_diverse_printed(gamma, d, l, n, k, q, b, lo) -> ClosestContactLaw:
    """Propositions for the two and three closest contacts, transcribed literally."""
    Dl = d - l
    W = max(Dl - q - 1, 0)
    Q = 2**q
    em = empty_region_prob(W, n, b)
    law: dict = {}
    sup1 = Dl - q - 1  # published support bound: zero at or above Dl - q

    def ups1(d1):
        return upsilon((d1,), W, 1)

    if gamma == 2:
        for d1 in range(max(lo, 0), max(sup1, lo - 1) + 1):
            u1 = ups1(d1) if sup1 >= 0 else 0.0
            if u1 <= 0.0:
                continue
            for eta in range(1, q + 1):
                d2 = Dl - eta
                if d2 < d1 or d2 < Dl - q:
                    continue
                acc = 0.0
                for r in range(0, Q):
                    b0 = binom_pmf(r + k - Q, 0, 1.0 / (Q - r))
                    if b0 == 0.0:
                        continue
                    brk = _over0(r, Q - 1, 2 ** (q - eta) - 1) - _over0(r, Q - 1, 2 ** (q - eta + 1) - 1)
                    acc += binom_pmf(Q - 1, r, em) * b0 * brk
                if acc > 0.0:
                    law[(d1, d2)] = law.get((d1, d2), 0.0) + u1 * acc
            for d2 in range(d1, sup1 + 1):
                acc = 0.0
                for r in range(0, Q):
                    wr = binom_pmf(Q - 1, r, em)
                    if wr < 1e-18:
                        continue
                    inner = 0.0
                    for a in range(0, r + k - Q + 1):
                        ba = binom_pmf(r + k - Q, a, 1.0 / (Q - r))
                        if ba < 1e-18:
                            continue
                        inner += ba * upsilon((d1, d2), W, a + 1)
                    acc += wr * inner
                if acc > 0.0:
                    law[(d1, d2)] = law.get((d1, d2), 0.0) + acc
    elif gamma == 3:
        def p_r(r, eta2):
            num = comb0(Q - 1 - r, 1) * comb0(r - 2 ** (q - eta2) + 1, 2 ** (q - eta2) - 1)
            den = comb0(Q - 2 ** (q - eta2), 2 ** (q - eta2))
            return num / den if den else 0.0

        for d1 in range(max(lo, 0), max(sup1, lo - 1) + 1):
            u1 = ups1(d1) if sup1 >= 0 else 0.0
            if u1 <= 0.0:
                continue
            # both second and third from ring patterns
            for eta2 in range(1, q + 1):
                d2 = Dl - eta2
                if d2 < d1 or d2 < Dl - q:
                    continue
                for eta3 in range(0, eta2 + 1):
                    d3 = Dl - eta3
                    if d3 < d2:
                        continue
                    acc = 0.0
                    for r in range(0, Q - 1):
                        wr = binom_pmf(Q - 1, r, em)
                        b0 = binom_pmf(r + k - Q, 0, 1.0 / (Q - r))
                        lead = wr * b0 * _over0(r, Q - 1, 2 ** (q - eta2) - 1)
                        if lead == 0.0:
                            continue
                        pr = p_r(r, eta2)
                        if eta2 == eta3:
                            case = (1.0 - _over0(r - 2 ** (q - eta2) + 1, Q - 2 ** (q - eta2), 2 ** (q - eta2)) - pr)
                            case += pr * (1.0 - binom_pmf(k - Q + r, 0, 1.0 / (Q - r - 1)) if Q - r - 1 > 0 else 0.0)
                        else:
                            gap_hi = sum(2**ii for ii in range(q - eta2 + 2, q - eta3 + 1))
                            gap_hi2 = sum(2**ii for ii in range(q - eta2 + 2, q - eta3 + 2))
                            bb = binom_pmf(k - Q + r, 0, 1.0 / (Q - r - 1)) if Q - r - 1 > 0 else 0.0
                            case = pr * bb * (
                                _over0(r - 2 ** (q - eta2) + 2, Q - 2 ** (q - eta2 + 1), gap_hi)
                                - _over0(r - 2 ** (q - eta2) + 2, Q - 2 ** (q - eta2 + 1), gap_hi2)
                            )
                        acc += lead * max(case, 0.0)
                    if acc > 0.0:
                        t = (d1, d2, d3)
                        law[t] = law.get(t, 0.0) + u1 * acc
            # second within the own pattern, third from a ring
            for d2 in range(d1, sup1 + 1):
                u2 = upsilon((d1, d2), W, 2)
                if u2 <= 0.0:
                    continue
                for eta3 in range(0, q + 1):
                    d3 = Dl - eta3
                    if d3 < Dl - q or d3 < d2:
                        continue
                    acc = 0.0
                    for r in range(0, Q - 1):
                        wr = binom_pmf(Q - 1, r, em)
                        b1 = binom_pmf(r + k - Q, 1, 1.0 / (Q - r))
                        brk = _over0(r, Q - 1, 2 ** (q - eta3) - 1) - _over0(r, Q - 1, 2 ** (q - eta3 + 1) - 1)
                        acc += wr * b1 * brk
                    if acc > 0.0:
                        t = (d1, d2, d3)
                        law[t] = law.get(t, 0.0) + u2 * acc
            # all three within the own pattern
            for d2 in range(d1, sup1 + 1):
                for d3 in range(d2, sup1 + 1):
                    acc = 0.0
                    for r in range(0, Q):
                        wr = binom_pmf(Q - 1, r, em)
                        if wr < 1e-18:
                            continue
                        inner = 0.0
                        for a in range(2, r + k - Q + 1):
                            ba = binom_pmf(r + k - Q, a, 1.0 / (Q - r))
                            if ba < 1e-18:
                                continue
                            inner += ba * upsilon((d1, d2, d3), W, a + 1)
                        acc += wr * inner
                    if acc > 0.0:
                        t = (d1, d2, d3)
                        law[t] = law.get(t, 0.0) + acc
    else:
        raise UnsupportedParameterError("printed propositions cover gamma in {2, 3} only")
    pe = success_prob(DIVERSE, d, l, n, k, q, b=b, variant="printed")
    return ClosestContactLaw(gamma, d, pe, law, source="printed",
                             truncation=max(0.0, 1.0 - sum(law.values())))


def closest_law_diverse(gamma: int, d: int, l: int, n: int, k: int, q: int, *, b: int,
                        lo: int = 0, variant: str = "exact") -> ClosestContactLaw:
    """Closest-gamma contact law under diversity-maximized selection.

    gamma=2 matches beta=2 reply semantics, gamma=3 the alpha=3 requester view;
    other gamma values are not derived analytically and raise.
    """
    if gamma not in (1, 2, 3):
        raise UnsupportedParameterError(f"gamma={gamma} not supported analytically")
    if d - l < 0:
        raise ValueError("need l <= d")
    if q <= 0 or n - 1 <= 1:
        law = closest_law_standard(gamma, d, l, n, k, b=b, lo=lo)
        return ClosestContactLaw(gamma, d, law.p_empty, law.tuples, truncation=law.truncation)
    if variant == "printed":
        if gamma == 1:
            raise UnsupportedParameterError("printed propositions cover gamma in {2, 3} only")
        return _closest_law_diverse_printed(gamma, d, l, n, k, q, b, lo)
    return _closest_law_diverse_exact(gamma, d, l, n, k, q, b, lo)


def mix_over_levels(laws_by_l: dict, row: dict) -> ClosestContactLaw:
    """L-row weighted mixture of per-(d, l) laws: sum_l law_l * L[d][l]."""
    if abs(sum(row.values()) - 1.0) > 1e-9:
        raise ValueError("level row must sum to 1")
    gamma = d = None
    pe = 0.0
    tuples: dict = {}
    trunc = 0.0
    source = "exact"
    for l, w in row.items():
        law = laws_by_l[l]
        gamma, d = law.gamma, law.d
        source = law.source
        pe += w * law.p_empty
        trunc += w * law.truncation
        for t, v in law.tuples.items():
            tuples[t] = tuples.get(t, 0.0) + w * v
    return ClosestContactLaw(gamma, d, pe, tuples, source=source, truncation=trunc)


# ------------------------------------------------------- Monte Carlo fallback


def mc_closest_law(gamma: int, d: int, l: int, n: int, k: int, q: int, scheme: str, *,
                   b: int, lo: int = 0, samples: int = 200_000, seed: int = 12345) -> ClosestContactLaw:
    """Sampling-based law builder used for (alpha, beta) outside the analytical range."""
    rng = np.random.default_rng(seed)
    Dl = d - l
    Wp = max(Dl - q, 0)
    Q = 2**q
    p_region = 2.0 ** (Dl - b)
    padval = min(Dl + 1, b)
    counts: dict = {}
    n_empty = 0
    done = 0
    chunk = 50_000
    while done < samples:
        c = min(chunk, samples - done)
        done += c
        m = rng.binomial(n - 1, p_region, size=c)
        for mi in m:
            if mi == 0:
                n_empty += 1
                continue
            pats = rng.integers(0, Q, size=mi)
            us = rng.random(mi)
            order = np.lexsort((us, pats != 0, np.where(pats == 0, 0, Q - 1 - _ring_of(pats, q))))
            # representative per occupied pattern, extras by uniform keys
            chosen = []
            seen = {}
            keyorder = np.argsort(us)
            for idx in keyorder:
                pp = int(pats[idx])
                if pp not in seen:
                    seen[pp] = idx
            reps = set(seen.values())
            if scheme == DIVERSE:
                chosen = list(reps)
                extras = [int(i) for i in keyorder if int(i) not in reps][: max(0, k - len(reps))]
                chosen += extras
            else:
                chosen = [int(i) for i in keyorder[:k]]
            dists = []
            for idx in chosen:
                pp = int(pats[idx])
                if pp == 0:
                    dists.append(_sample_ring(rng, Wp))
                else:
                    dists.append(Dl - _ring_of(np.array([pp]), q)[0])
            dists.sort()
            # responsible: nearest node overall; in-bucket test
            # nearest node: pattern 0 member if any, else nearest occupied ring; approximate
            # membership by sampled construction: responsible is in bucket iff its index chosen
            j_count = int((pats == 0).sum())
            if j_count > 0:
                members = np.where(pats == 0)[0]
                resp = members[int(rng.integers(0, j_count))]  # symmetric stand-in
            else:
                ring_off = _ring_of(pats, q)
                best = np.argmax(ring_off)
                resp = int(best)
            if int(resp) in set(chosen):
                n_empty += 1
                continue
            t = tuple(min(b, max(lo, int(x))) for x in dists[:gamma])
            if len(t) < gamma:
                t = tuple(sorted(list(t) + [padval] * (gamma - len(t))))
            counts[t] = counts.get(t, 0) + 1
    tuples = {t: v / done for t, v in counts.items()}
    return ClosestContactLaw(gamma, d, n_empty / done, tuples, source="monte_carlo",
                             truncation=0.0)


def _ring_of(pats, q):
    """Ring offset t of non-own patterns: first differing pattern bit from the top."""
    pats = np.asarray(pats)
    bl = np.zeros_like(pats)
    nz = pats > 0
    bl[nz] = np.floor(np.log2(pats[nz])).astype(pats.dtype) + 1
    return q - bl


def _sample_ring(rng, W):
    if W <= 0:
        return 0
    u = rng.random()
    j = int(math.floor(math.log2(max(u, 2.0**-60)))) + W + 1
    return min(max(j, 0), W)


# ------------------------------------------------------------- state machinery


@dataclass
class StateDistribution:
    """Probability vector over sorted alpha-tuples plus the absorbing TERMINAL."""

    probs: dict = field(default_factory=dict)
    truncation_loss: float = 0.0

    def terminal_mass(self) -> float:
        return self.probs.get(TERMINAL, 0.0)

    def total_mass(self) -> float:
        return sum(self.probs.values())

    def check(self, tol: float = 1e-9) -> None:
        if abs(self.total_mass() + self.truncation_loss - 1.0) > tol:
            raise AssertionError("state distribution mass defect exceeds tolerance")
        if any(v < -1e-15 for v in self.probs.values()):
            raise AssertionError("negative probability")


def window_low(profile: SystemProfile, n: int) -> int:
    """Lower bit-distance cut: states below are clamped upward (mass preserved)."""
    return max(0, profile.b - (math.ceil(math.log2(max(n, 2))) + 16))


def _profile_law(profile: SystemProfile, n: int, scheme: str, gamma: int, d: int,
                 lo: int, variant: str) -> ClosestContactLaw:
    laws = {}
    row = profile.level_row(d)
    k = profile.bucket_capacity(d)
    q = profile.q_for(d)
    for l in row:
        if scheme == STANDARD:
            laws[l] = closest_law_standard(gamma, d, l, n, k, b=profile.b, lo=lo)
        else:
            laws[l] = closest_law_diverse(gamma, d, l, n, k, q, b=profile.b, lo=lo, variant=variant)
    return mix_over_levels(laws, row)


# ------------------------------------------------------------ transition engine


@lru_cache(maxsize=8)
def _triple_template(nv: int):
    """Sorted index triples over nv values plus 8-corner lookup for differencing."""
    triples = []
    index = {}
    for i in range(nv):
        for j in range(i, nv):
            for k in range(j, nv):
                index[(i, j, k)] = len(triples)
                triples.append((i, j, k))
    V = np.array(triples, dtype=np.int64)
    ncells = len(triples)
    corners = np.empty((8, ncells), dtype=np.int64)
    signs = []
    ci = 0
    for e1 in (0, 1):
        for e2 in (0, 1):
            for e3 in (0, 1):
                signs.append((-1) ** (e1 + e2 + e3))
                col = np.empty(ncells, dtype=np.int64)
                for ix, (i, j, k) in enumerate(triples):
                    r3 = k - e3
                    r2 = min(j - e2, r3)
                    r1 = min(i - e1, r2)
                    col[ix] = index.get((r1, r2, r3), -1) if r1 >= 0 else -1
                corners[ci] = col
                ci += 1
    return V, corners, np.array(signs, dtype=np.float64), index


class _ChainEngine:
    """Caches per-distance reply laws and transition rows for one (profile, n, scheme)."""

    def __init__(self, profile: SystemProfile, n: int, scheme: str, variant: str = "exact",
                 force_generic: bool = False):
        self.profile = profile
        self.n = n
        self.scheme = scheme
        self.variant = variant
        self.b = profile.b
        self.lo = window_low(profile, n)
        self.vals = list(range(self.lo, self.b + 1))
        self.nv = len(self.vals)
        self.law_source = "analytic"
        self._pair: dict[int, dict] = {}
        self._pE: dict[int, float] = {}
        self._J: dict[int, np.ndarray] = {}
        self._Z1: dict[int, np.ndarray] = {}
        self._rows: dict = {}
        self._generic = force_generic or profile.beta != 2 or profile.alpha != 3
        for d in self.vals:
            if d == 0:
                # a contact at distance zero is the responsible node itself
                self._pair[d] = {}
                self._pE[d] = 1.0
                continue
            law = self._reply_law(d)
            tuples = law.normalized_tuples()
            self._pair[d] = tuples
            self._pE[d] = law.p_empty
            if not self._generic:
                self._J[d], self._Z1[d] = self._cdf_arrays(tuples)
        if not self._generic:
            self._V, self._corners, self._signs, self._cellindex = _triple_template(self.nv)

    def _reply_law(self, d):
        gamma = self.profile.beta
        try:
            return _profile_law(self.profile, self.n, self.scheme, gamma, d, self.lo, self.variant)
        except UnsupportedParameterError:
            self.law_source = "monte_carlo"
            return mc_closest_law(gamma, d, next(iter(self.profile.level_row(d))), self.n,
                                  self.profile.bucket_capacity(d), self.profile.q_for(d),
                                  self.scheme, b=self.b, lo=self.lo)

    def _cdf_arrays(self, tuples):
        nv, lo = self.nv, self.lo
        pm = np.zeros((nv, nv))
        for (z1, z2), v in tuples.items():
            pm[z1 - lo, z2 - lo] += v
        J = np.cumsum(np.cumsum(pm, axis=0), axis=1)
        Z1 = J[:, -1].copy()
        return J, Z1

    def initial(self) -> StateDistribution:
        alpha = self.profile.alpha
        probs: dict = {}
        pe_total = 0.0
        for d in self.vals:
            if d < 1:
                continue
            # P(D = d) = 2^(d-1-b); everything at or below the window foot folds into it
            wd = 2.0 ** (d - 1 - self.b) if d > self.lo else 2.0 ** (d - self.b)
            try:
                law = _profile_law(self.profile, self.n, self.scheme, alpha, d, self.lo, self.variant)
            except UnsupportedParameterError:
                self.law_source = "monte_carlo"
                law = mc_closest_law(alpha, d, next(iter(self.profile.level_row(d))), self.n,
                                     self.profile.bucket_capacity(d), self.profile.q_for(d),
                                     self.scheme, b=self.b, lo=self.lo)
            pe_total += wd * law.p_empty
            scale = wd * (1.0 - law.p_empty)
            for t, v in law.normalized_tuples().items():
                probs[t] = probs.get(t, 0.0) + scale * v
        probs[TERMINAL] = pe_total
        # numerical defect (window feet, float error) is tracked, not renormalized
        loss = max(0.0, 1.0 - sum(probs.values()))
        return StateDistribution(probs, loss)

    # ---- vectorized alpha=3/beta=2 row

    def _row(self, state):
        row = self._rows.get(state)
        if row is not None:
            return row
        keep = 1.0
        for d in state:
            keep *= 1.0 - self._pE[d]
        p_abs = 1.0 - keep
        if p_abs >= 1.0 - 1e-15:
            empty = {} if self._generic else (np.empty(0, dtype=np.int64), np.empty(0))
            self._rows[state] = (1.0, empty)
            return self._rows[state]
        if self._generic:
            nxt = self._row_generic(state)
            self._rows[state] = (p_abs, nxt)
            return self._rows[state]
        F = self._joint_cdf(state)
        pmf = (self._signs[:, None] * np.where(self._corners >= 0, F[np.maximum(self._corners, 0)], 0.0)).sum(axis=0)
        np.maximum(pmf, 0.0, out=pmf)
        nz = np.nonzero(pmf > 1e-16)[0]
        self._rows[state] = (p_abs, (nz, pmf[nz]))
        return self._rows[state]

    def _joint_cdf(self, state):
        """F(cell) = P(M1 <= v1, M2 <= v2, M3 <= v3) for the union of three replies."""
        V1, V2, V3 = self._V[:, 0], self._V[:, 1], self._V[:, 2]
        ds = [state[0], state[1], state[2]]
        Z = [self._Z1[d] for d in ds]
        J = [self._J[d] for d in ds]
        z1_1 = [Z[g][V1] for g in range(3)]
        z1_2 = [Z[g][V2] for g in range(3)]
        z1_3 = [Z[g][V3] for g in range(3)]
        j22 = [J[g][V2, V2] for g in range(3)]
        j33 = [J[g][V3, V3] for g in range(3)]
        j12 = [J[g][V1, V2] for g in range(3)]
        j13 = [J[g][V1, V3] for g in range(3)]
        j23 = [J[g][V2, V3] for g in range(3)]

        a1 = [1.0 - z1_1[g] for g in range(3)]
        PA = a1[0] * a1[1] * a1[2]

        p0 = [1.0 - z1_2[g] for g in range(3)]
        p1 = [z1_2[g] - j22[g] for g in range(3)]
        PB = p0[0] * p0[1] * p0[2]
        for g in range(3):
            PB = PB + p1[g] * p0[(g + 1) % 3] * p0[(g + 2) % 3]

        r0 = [1.0 - z1_3[g] for g in range(3)]
        r1 = [z1_3[g] - j33[g] for g in range(3)]
        r2 = [j33[g] for g in range(3)]
        PC = r0[0] * r0[1] * r0[2]
        for g in range(3):
            PC = PC + r1[g] * r0[(g + 1) % 3] * r0[(g + 2) % 3]
            PC = PC + r2[g] * r0[(g + 1) % 3] * r0[(g + 2) % 3]
        for g in range(3):
            h = (g + 1) % 3
            PC = PC + r1[g] * r1[h] * r0[(g + 2) % 3]

        q1 = [(z1_2[g] - z1_1[g]) - (j22[g] - j12[g]) for g in range(3)]
        PAB = p0[0] * p0[1] * p0[2]
        for g in range(3):
            PAB = PAB + q1[g] * p0[(g + 1) % 3] * p0[(g + 2) % 3]

        s1 = [(z1_3[g] - z1_1[g]) - (j33[g] - j13[g]) for g in range(3)]
        s2 = [j33[g] - j13[g] for g in range(3)]
        PAC = r0[0] * r0[1] * r0[2]
        for g in range(3):
            PAC = PAC + s1[g] * r0[(g + 1) % 3] * r0[(g + 2) % 3]
            PAC = PAC + s2[g] * r0[(g + 1) % 3] * r0[(g + 2) % 3]
        for g in range(3):
            h = (g + 1) % 3
            PAC = PAC + s1[g] * s1[h] * r0[(g + 2) % 3]

        s00 = r0
        s01 = [(z1_3[g] - z1_2[g]) - (j33[g] - j23[g]) for g in range(3)]
        s02 = [j33[g] - j23[g] for g in range(3)]
        s11 = [z1_2[g] - j23[g] for g in range(3)]
        s12 = [j23[g] - j22[g] for g in range(3)]
        base = s00[0] * s00[1] * s00[2]
        for g in range(3):
            base = base + s01[g] * s00[(g + 1) % 3] * s00[(g + 2) % 3]
            base = base + s02[g] * s00[(g + 1) % 3] * s00[(g + 2) % 3]
        for g in range(3):
            h = (g + 1) % 3
            base = base + s01[g] * s01[h] * s00[(g + 2) % 3]
        PBC = base.copy()
        for g in range(3):
            h, o = (g + 1) % 3, (g + 2) % 3
            PBC = PBC + s11[g] * (s00[h] * s00[o] + s01[h] * s00[o] + s01[o] * s00[h])
            PBC = PBC + s12[g] * s00[h] * s00[o]

        t11 = [(z1_2[g] - z1_1[g]) - (j23[g] - j13[g]) for g in range(3)]
        t12 = [(j23[g] - j13[g]) - (j22[g] - j12[g]) for g in range(3)]
        PABC = base.copy()
        for g in range(3):
            h, o = (g + 1) % 3, (g + 2) % 3
            PABC = PABC + t11[g] * (s00[h] * s00[o] + s01[h] * s00[o] + s01[o] * s00[h])
            PABC = PABC + t12[g] * s00[h] * s00[o]

        return 1.0 - PA - PB - PC + PAB + PAC + PBC - PABC

    # ---- generic (any alpha/beta) dict-merge row

    def _row_generic(self, state):
        alpha = self.profile.alpha
        acc = {(): 1.0}
        for d in state[:alpha]:
            nxt: dict = {}
            for ta, pa in acc.items():
                for tb, pb in self._pair[d].items():
                    merged = tuple(sorted(ta + tb)[:alpha])
                    nxt[merged] = nxt.get(merged, 0.0) + pa * pb
            if len(nxt) > 20000:
                nxt = dict(sorted(nxt.items(), key=lambda kv: -kv[1])[:20000])
            acc = nxt
        s = sum(acc.values())
        return {t: v / s for t, v in acc.items()}

    def step(self, dist: StateDistribution) -> StateDistribution:
        probs: dict = {TERMINAL: dist.probs.get(TERMINAL, 0.0)}
        loss = dist.truncation_loss
        if self._generic:
            for state, mass in dist.probs.items():
                if state == TERMINAL:
                    continue
                if mass < 1e-14:
                    loss += mass
                    continue
                p_abs, nxt = self._row(tuple(state))
                probs[TERMINAL] += mass * p_abs
                rem = mass * (1.0 - p_abs)
                for t, v in nxt.items():
                    probs[t] = probs.get(t, 0.0) + rem * v
            return StateDistribution(probs, loss)
        vec = np.zeros(len(self._V))
        term = probs[TERMINAL]
        for state, mass in dist.probs.items():
            if state == TERMINAL:
                continue
            if mass < 1e-14:
                loss += mass
                continue
            p_abs, (idx, val) = self._row(tuple(int(s) for s in state))
            term += mass * p_abs
            rem = mass * (1.0 - p_abs)
            row_sum = val.sum()
            if row_sum > 0:
                vec[idx] += (rem / row_sum) * val
        out: dict = {TERMINAL: term}
        nz = np.nonzero(vec > 1e-16)[0]
        for ix in nz:
            i, j, k = self._V[ix]
            out[(int(i) + self.lo, int(j) + self.lo, int(k) + self.lo)] = float(vec[ix])
        loss += max(0.0, dist.total_mass() - sum(out.values()) - (loss - dist.truncation_loss))
        return StateDistribution(out, loss)


_ENGINES: dict = {}


def _engine(profile: SystemProfile, n: int, scheme: str, variant: str = "exact") -> _ChainEngine:
    key = (profile.cache_key(), n, scheme, variant)
    eng = _ENGINES.get(key)
    if eng is None:
        eng = _ENGINES[key] = _ChainEngine(profile, n, scheme, variant)
    return eng


def initial_distribution(profile: SystemProfile, n: int, scheme: str, *,
                         variant: str = "exact") -> StateDistribution:
    """Law of the requester's alpha closest contacts, mixed over P(D=d) = 2^(d-1-b)."""
    return _engine(profile, n, scheme, variant).initial()


def transition_apply(dist: StateDistribution, profile: SystemProfile, n: int, scheme: str, *,
                     variant: str = "exact") -> StateDistribution:
    """One Markov step: absorb via per-node termination, else top-alpha of replies."""
    return _engine(profile, n, scheme, variant).step(dist)


@dataclass
class HopCountResult:
    profile: str
    scheme: str
    n: int
    cdf: list
    mean: float
    residual_mass: float
    truncation_loss: float
    residual_warning: bool
    law_source: str

    def pmf(self) -> list:
        out = []
        prev = 0.0
        for c in self.cdf:
            out.append(c - prev)
            prev = c
        return out


def hop_count_cdf(profile: SystemProfile, n: int, scheme: str, h_max: int = 16, *,
                  variant: str = "exact") -> HopCountResult:
    """P(responsible node found within h hops), h = 1..h_max, plus the mean."""
    if scheme not in (STANDARD, DIVERSE):
        raise ValueError(f"unknown scheme {scheme!r}")
    eng = _engine(profile, n, scheme, variant)
    dist = eng.initial()
    cdf = [dist.terminal_mass()]
    for _ in range(2, h_max + 1):
        dist = eng.step(dist)
        cdf.append(dist.terminal_mass())
    mean = cdf[0]
    for h in range(2, h_max + 1):
        mean += h * (cdf[h - 1] - cdf[h - 2])
    residual = 1.0 - cdf[-1]
    mean += (h_max + 1) * residual
    return HopCountResult(
        profile=profile.name,
        scheme=scheme,
        n=n,
        cdf=cdf,
        mean=mean,
        residual_mass=residual,
        truncation_loss=dist.truncation_loss,
        residual_warning=residual > 1e-4,
        law_source=eng.law_source,
    )
