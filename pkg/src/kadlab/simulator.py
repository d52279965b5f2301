"""Network assembly, churn, experiment execution, and statistics.

Steady-state tables are constructed analytically (every bucket holds its region's
population up to capacity, selected per scheme), which is the no-churn stationary
point. The churn engine is event-driven: per-contact liveness probing is realized
by scheduling the eviction of a departed contact after a detection delay drawn
from the probe schedule, which is distribution-equivalent to periodic probing.
"""

from __future__ import annotations

import bisect
import heapq
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from scipy import stats as _sstats

from .lookup import lookup, lookup_rounds
from .routing import (
    DIVERSE,
    Contact,
    MaintenanceConfig,
    RoutingTable,
    SystemProfile,
    STANDARD,
)


class RunAborted(RuntimeError):
    """Raised when the online population collapses during a churn run."""


@dataclass(frozen=True)
class ChurnSpec:
    """Session-based churn: departures end exponential (or Pareto) sessions and a
    Poisson arrival stream of fresh identifiers keeps the expected population at n.
    mean_deadtime is carried for configuration parity; rejoining nodes take fresh
    identifiers, so it does not alter the online dynamics."""

    enabled: bool = False
    mean_session: float = 20000.0
    lifetime_distribution: str = "exponential"
    pareto_shape: float = 3.0
    mean_deadtime: float = 20000.0

    def __post_init__(self):
        if self.mean_session <= 0:
            raise ValueError("mean_session must be positive")
        if self.lifetime_distribution not in ("exponential", "pareto"):
            raise ValueError("lifetime_distribution must be exponential or pareto")


@dataclass(frozen=True)
class SimConfig:
    lookup_mode: str = "strict"
    lookup_spacing: float = 3.0
    rtt: float = 1.0
    warmup_sessions: float = 2.0
    maintenance: MaintenanceConfig = MaintenanceConfig()
    oracle_candidates: int = 3


class Network:
    """All simulated nodes of one run plus the global liveness/responsibility oracle."""

    def __init__(self, profile: SystemProfile, scheme: str, seed: int):
        self.profile = profile
        self.scheme = scheme
        self.seed = seed
        self.time = 0.0
        self.tables: dict[int, RoutingTable] = {}
        self.online_ids: list[int] = []  # sorted
        self.online: set[int] = set()

    # -- lookup/service protocol

    def is_online(self, ident: int) -> bool:
        return ident in self.online

    def table_closest(self, owner: int, target: int, gamma: int) -> list[int]:
        return [c.id for c in self.tables[owner].closest_contacts(target, gamma)]

    closest_of = table_closest

    def responsible_for(self, target: int) -> int | None:
        """XOR-closest online node, found by trie descent over the sorted id list."""
        ids = self.online_ids
        if not ids:
            return None
        i0, i1 = 0, len(ids)
        base = 0
        for bitpos in range(self.profile.b - 1, -1, -1):
            if i1 - i0 == 1:
                break
            pivot = base | (1 << bitpos)
            mid = bisect.bisect_left(ids, pivot, i0, i1)
            if (target >> bitpos) & 1:
                if mid < i1:
                    i0, base = mid, pivot
                else:
                    i1 = mid
            else:
                if mid > i0:
                    i1 = mid
                else:
                    i0, base = mid, pivot
        return ids[i0]

    # -- membership

    def add_node(self, ident: int, table: RoutingTable) -> None:
        self.tables[ident] = table
        bisect.insort(self.online_ids, ident)
        self.online.add(ident)

    def remove_node(self, ident: int) -> None:
        self.online.discard(ident)
        i = bisect.bisect_left(self.online_ids, ident)
        if i < len(self.online_ids) and self.online_ids[i] == ident:
            del self.online_ids[i]
        self.tables.pop(ident, None)


def _level_bucket_keys(table: RoutingTable, d: int) -> list[tuple]:
    row = table.profile.level_row(d)
    lmax = min(max(row), d)
    keys = []
    seen = set()
    for p in range(1 << (lmax - 1), 1 << lmax):
        xor = p << (d - lmax)
        key = table.bucket_key(table.owner ^ xor)
        if key not in seen:
            seen.add(key)
            keys.append(key)
    return keys


def build_table(owner: int, sorted_ids: list[int], profile: SystemProfile, scheme: str,
                rng: random.Random, now: float = 0.0) -> RoutingTable:
    """Steady-state table: each bucket holds min(capacity, region population)
    contacts, selected uniformly (standard) or pattern-first (diverse)."""
    table = RoutingTable(owner, profile, scheme)
    b = profile.b
    for d in range(b, 0, -1):
        for key in _level_bucket_keys(table, d):
            bucket = table._bucket_from_key(key)
            lo, hi = bucket.region()
            i0 = bisect.bisect_left(sorted_ids, lo)
            i1 = bisect.bisect_left(sorted_ids, hi)
            pop = i1 - i0
            if pop == 0:
                continue
            cap = bucket.capacity
            if pop <= cap:
                chosen = range(i0, i1)
            elif scheme == STANDARD:
                chosen = rng.sample(range(i0, i1), cap)
            else:
                chosen = _diverse_pick(sorted_ids, i0, i1, lo, hi, bucket.q, cap, rng)
            for idx in chosen:
                table.insert_unchecked(bucket, Contact(sorted_ids[idx], now, now))
        # stop once no node is closer than the current level
        shift = d - 1
        blo = (owner >> shift) << shift
        i0 = bisect.bisect_left(sorted_ids, blo)
        i1 = bisect.bisect_left(sorted_ids, blo + (1 << shift))
        if i1 - i0 - (1 if blo <= owner < blo + (1 << shift) else 0) <= 0:
            break
    return table


def _diverse_pick(sorted_ids, i0, i1, lo, hi, q, cap, rng):
    """One uniform representative per non-empty q-bit pattern class, rest uniform."""
    step = (hi - lo) >> q
    chosen = []
    taken = set()
    for s in range(1 << q):
        a = bisect.bisect_left(sorted_ids, lo + s * step, i0, i1)
        bnd = bisect.bisect_left(sorted_ids, lo + (s + 1) * step, i0, i1)
        if bnd > a:
            idx = rng.randrange(a, bnd)
            chosen.append(idx)
            taken.add(idx)
    remaining = cap - len(chosen)
    pop = i1 - i0
    if remaining > 0:
        if pop - len(taken) <= remaining:
            chosen.extend(i for i in range(i0, i1) if i not in taken)
        else:
            while remaining > 0:
                idx = rng.randrange(i0, i1)
                if idx not in taken:
                    taken.add(idx)
                    chosen.append(idx)
                    remaining -= 1
    return chosen


def draw_ids(n: int, b: int, rng: random.Random) -> list[int]:
    ids: set[int] = set()
    while len(ids) < n:
        ids.add(rng.getrandbits(b))
    return sorted(ids)


def build_network(profile: SystemProfile, n: int, scheme: str, seed: int) -> Network:
    """n uniform nodes with steady-state routing tables."""
    if n < 1:
        raise ValueError("n >= 1 required")
    net = Network(profile, scheme, seed)
    rng_ids = random.Random(f"{seed}:ids")
    rng_sel = random.Random(f"{seed}:sel:{scheme}")
    ids = draw_ids(n, profile.b, rng_ids)
    net.online_ids = list(ids)
    net.online = set(ids)
    for owner in ids:
        net.tables[owner] = build_table(owner, ids, profile, scheme, rng_sel)
    return net


class NetworkOracle:
    """Maintenance peer oracle backed by the network's global online view."""

    def __init__(self, net: Network, rng: random.Random):
        self.net = net
        self.rng = rng

    def candidates(self, lo: int, hi: int, count: int, exclude) -> list[int]:
        ids = self.net.online_ids
        i0 = bisect.bisect_left(ids, lo)
        i1 = bisect.bisect_left(ids, hi)
        if i1 <= i0:
            return []
        out = []
        for _ in range(count * 4):
            if len(out) >= count:
                break
            cand = ids[self.rng.randrange(i0, i1)]
            if cand not in exclude and cand not in out:
                out.append(cand)
        return out

    def is_alive(self, ident: int) -> bool:
        return ident in self.net.online


# ------------------------------------------------------------------ churn engine

_DEPART, _ARRIVE, _EVICT, _POPPASS, _LOOKUP = range(5)


class ChurnEngine:
    """Event-driven churn: sessions, arrivals, stale detection, refills, lookups."""

    def __init__(self, net: Network, spec: ChurnSpec, seed: int, config: SimConfig):
        self.net = net
        self.spec = spec
        self.config = config
        # world events (arrivals, sessions, identifiers) are scheme-independent so
        # paired-seed runs of both schemes see identical populations; maintenance
        # and lookup draws get their own streams
        self.rng_world = random.Random(f"{seed}:world")
        self.rng = random.Random(f"{seed}:maint:{net.scheme}")
        self.rng_lookup = random.Random(f"{seed}:lookups")
        self.target_n = len(net.online_ids)
        self.heap: list = []
        self.seq = 0
        self.time = 0.0
        self.holders: dict[int, list[int]] = {}
        self.underfull: dict[int, set] = {}
        self.starved: dict[int, set] = {}
        self.used_ids: set[int] = set(net.online)
        self.oracle = NetworkOracle(net, self.rng)
        self.samples: list[int] = []
        self.lookups_failed = 0
        for owner, table in net.tables.items():
            for cid in table.contacts:
                self.holders.setdefault(cid, []).append(owner)
            uf = {k for k, bk in table.buckets.items() if len(bk.ids) < bk.capacity and self._region_has_spare(table, bk)}
            if uf:
                self.underfull[owner] = uf
        for ident in net.online_ids:
            self._push(self._session_end(0.0), _DEPART, ident)
            self._push(self.rng.uniform(0, config.maintenance.population_period), _POPPASS, ident)
        self._push(self.rng_world.expovariate(self.target_n / spec.mean_session), _ARRIVE, None)

    def _region_has_spare(self, table, bucket) -> bool:
        lo, hi = bucket.region()
        ids = self.net.online_ids
        return bisect.bisect_left(ids, hi) - bisect.bisect_left(ids, lo) > len(bucket.ids)

    # -- protocol passthrough for lookups

    @property
    def profile(self):
        return self.net.profile

    def is_online(self, ident):
        return self.net.is_online(ident)

    def table_closest(self, owner, target, gamma):
        return self.net.table_closest(owner, target, gamma)

    closest_of = table_closest

    def responsible_for(self, target):
        return self.net.responsible_for(target)

    # -- events

    def _push(self, t, kind, data):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, data))

    def _session_end(self, now: float) -> float:
        s = self.spec.mean_session
        if self.spec.lifetime_distribution == "pareto":
            a = self.spec.pareto_shape
            xm = s * (a - 1) / a
            return now + xm * self.rng_world.paretovariate(a)
        return now + self.rng_world.expovariate(1.0 / s)

    def run_until(self, t_end: float) -> None:
        while self.heap and self.heap[0][0] <= t_end:
            t, _, kind, data = heapq.heappop(self.heap)
            self.time = t
            if kind == _DEPART:
                self._on_depart(data)
            elif kind == _ARRIVE:
                self._on_arrive()
            elif kind == _EVICT:
                self._on_evict(*data)
            elif kind == _POPPASS:
                self._on_poppass(data)
            elif kind == _LOOKUP:
                self._on_lookup_step(data)
        self.time = t_end

    def _on_depart(self, ident):
        if ident not in self.net.online:
            return
        self.net.remove_node(ident)
        if not self.net.online:
            raise RunAborted("population collapsed")
        self.underfull.pop(ident, None)
        self.starved.pop(ident, None)
        mc = self.config.maintenance
        for holder in self.holders.pop(ident, []):
            if holder not in self.net.online:
                continue
            table = self.net.tables[holder]
            c = table.contacts.get(ident)
            if c is None:
                continue
            period = mc.freshness_age
            if self.time - c.first_seen > mc.long_lived_age:
                period *= mc.long_lived_multiplier
            self._push(self.time + self.rng.uniform(0.0, period), _EVICT, (holder, ident))

    def _on_arrive(self):
        self._push(self.time + self.rng_world.expovariate(self.target_n / self.spec.mean_session), _ARRIVE, None)
        while True:
            ident = self.rng_world.getrandbits(self.net.profile.b)
            if ident not in self.used_ids:
                break
        self.used_ids.add(ident)
        table = build_table(ident, self.net.online_ids, self.net.profile, self.net.scheme,
                            self.rng, now=self.time)
        self.net.add_node(ident, table)
        for cid in table.contacts:
            self.holders.setdefault(cid, []).append(ident)
        uf = {k for k, bk in table.buckets.items() if len(bk.ids) < bk.capacity}
        if uf:
            self.underfull[ident] = uf
        self._push(self._session_end(self.time), _DEPART, ident)
        self._push(self.time + self.rng.uniform(0, self.config.maintenance.population_period), _POPPASS, ident)

    def _on_evict(self, holder, ident):
        if holder not in self.net.online or ident in self.net.online:
            return
        table = self.net.tables.get(holder)
        if table is None:
            return
        c = table.contacts.get(ident)
        if c is None:
            return
        c.stale = True
        key = table.bucket_key(ident)
        bucket = table.buckets[key]
        bucket.ids.remove(ident)
        del table.contacts[ident]
        self._refill(holder, table, key, bucket)

    def _refill(self, holder, table, key, bucket=None):
        if bucket is None:
            bucket = table.buckets.get(key)
        if bucket is None or len(bucket.ids) >= bucket.capacity:
            return
        lo, hi = bucket.region()
        ids = self.net.online_ids
        i0 = bisect.bisect_left(ids, lo)
        i1 = bisect.bisect_left(ids, hi)
        online = self.net.online
        spare = (i1 - i0) - sum(1 for cid in bucket.ids if cid in online)
        if spare <= 0:
            # region exhausted; rechecked slowly as arrivals land
            self._mark(self.starved, self.underfull, holder, key)
            return
        cands = []
        rng = self.rng
        contacts = table.contacts
        want = self.config.oracle_candidates
        span = i1 - i0
        for _ in range(want * 4):
            cand = ids[i0 + int(rng.random() * span)]
            if cand != holder and cand not in contacts and cand not in cands:
                cands.append(cand)
                if len(cands) >= want:
                    break
        if not cands:
            self._mark(self.underfull, self.starved, holder, key)
            return
        if table.scheme == DIVERSE:
            present = {bucket.pattern(i) for i in bucket.ids}
            cands.sort(key=lambda cd: bucket.pattern(cd) in present)
        cand = cands[0]
        bucket.ids.append(cand)
        table.contacts[cand] = Contact(cand, self.time, self.time)
        self.holders.setdefault(cand, []).append(holder)
        if len(bucket.ids) < bucket.capacity:
            self._mark(self.underfull, self.starved, holder, key)
        else:
            for dct in (self.underfull, self.starved):
                ks = dct.get(holder)
                if ks is not None:
                    ks.discard(key)
                    if not ks:
                        del dct[holder]

    def _mark(self, into, outof, holder, key):
        into.setdefault(holder, set()).add(key)
        ks = outof.get(holder)
        if ks is not None:
            ks.discard(key)
            if not ks:
                del outof[holder]

    def _on_poppass(self, ident):
        if ident not in self.net.online:
            return
        self._push(self.time + self.config.maintenance.population_period, _POPPASS, ident)
        table = self.net.tables[ident]
        keys = self.underfull.get(ident)
        if keys:
            for key in list(keys)[:2]:
                self._refill(ident, table, key)
        stv = self.starved.get(ident)
        if stv and self.rng.random() < 0.1:
            self._refill(ident, table, next(iter(stv)))

    # -- measurement

    def schedule_lookup(self, t, origin_hint=None):
        self._push(t, _LOOKUP, {"gen": None, "origin": origin_hint})

    def _on_lookup_step(self, state):
        if state["gen"] is None:
            ids = self.net.online_ids
            if not ids:
                raise RunAborted("population collapsed")
            origin = ids[self.rng_lookup.randrange(len(ids))]
            target = self.rng_lookup.getrandbits(self.net.profile.b)
            state["gen"] = lookup_rounds(self, origin, target, self.config.lookup_mode)
        try:
            next(state["gen"])
            self._push(self.time + self.config.rtt, _LOOKUP, state)
        except StopIteration as stop:
            self.samples.append(stop.value.hops)

    # -- diagnostics

    def stale_fraction(self, sample: int = 300) -> float:
        ids = self.net.online_ids
        if not ids:
            return 0.0
        step = max(1, len(ids) // sample)
        total = stale = 0
        for ident in ids[::step]:
            for cid in self.net.tables[ident].contacts:
                total += 1
                stale += cid not in self.net.online
        return stale / total if total else 0.0

    def mean_level_degree(self, level: int) -> float:
        degs = []
        for table in self.net.tables.values():
            for bucket in table.buckets.values():
                if bucket.prefix_len == level and bucket.ids:
                    degs.append(bucket.diversity_degree())
        return sum(degs) / len(degs) if degs else 0.0


# ------------------------------------------------------------------- experiments


@dataclass
class ExperimentReport:
    """Aggregated hop-count statistics; ci95 is a Student-t interval over run means
    and the median is the median of run means (fractional, as reported upstream)."""

    profile: str
    scheme: str
    n: int
    runs: int
    lookups_per_run: int
    seed: int
    churn_mean_session: float | None
    run_means: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    sample_mean: float = 0.0
    ci95_halfwidth: float = 0.0
    median: float = 0.0
    cdf: dict = field(default_factory=dict)
    aborted_runs: int = 0
    run_stats: list = field(default_factory=list)

    @classmethod
    def aggregate(cls, profile, scheme, n, lookups_per_run, seed, churn_mean, per_run):
        ok = [r for r in per_run if r is not None]
        rep = cls(profile, scheme, n, len(per_run), lookups_per_run, seed, churn_mean)
        rep.aborted_runs = len(per_run) - len(ok)
        for samples, stats in ok:
            rep.samples.extend(samples)
            rep.run_means.append(sum(samples) / len(samples))
            rep.run_stats.append(stats)
        if not rep.run_means:
            return rep
        rep.sample_mean = sum(rep.samples) / len(rep.samples)
        rep.median = statistics.median(rep.run_means)
        if len(rep.run_means) >= 2:
            sd = statistics.stdev(rep.run_means)
            tval = float(_sstats.t.ppf(0.975, len(rep.run_means) - 1))
            rep.ci95_halfwidth = tval * sd / math.sqrt(len(rep.run_means))
        total = len(rep.samples)
        cum = 0
        for h in range(1, max(rep.samples) + 1):
            cum += sum(1 for s in rep.samples if s == h)
            rep.cdf[h] = cum / total
        return rep

    def cdf_mean(self) -> float:
        mean = 0.0
        prev = 0.0
        for h in sorted(self.cdf):
            mean += h * (self.cdf[h] - prev)
            prev = self.cdf[h]
        return mean

    def to_json_dict(self) -> dict:
        return {
            "profile": self.profile,
            "scheme": self.scheme,
            "n": self.n,
            "runs": self.runs,
            "lookups_per_run": self.lookups_per_run,
            "seed": self.seed,
            "churn_mean_session": self.churn_mean_session,
            "sample_mean": self.sample_mean,
            "ci95_halfwidth": self.ci95_halfwidth,
            "median": self.median,
            "run_means": self.run_means,
            "cdf": {str(k): v for k, v in sorted(self.cdf.items())},
            "aborted_runs": self.aborted_runs,
            "run_stats": self.run_stats,
        }


def _run_one(args) -> tuple | None:
    (profile, n, scheme, churn, lookups_per_run, run_seed, config) = args
    net = build_network(profile, n, scheme, run_seed)
    stats: dict = {}
    if churn is not None and churn.enabled:
        engine = ChurnEngine(net, churn, run_seed, config)
        warmup = config.warmup_sessions * churn.mean_session
        try:
            engine.run_until(warmup)
            for i in range(lookups_per_run):
                engine.schedule_lookup(warmup + i * config.lookup_spacing)
            engine.run_until(warmup + lookups_per_run * config.lookup_spacing + 100 * config.rtt)
        except RunAborted:
            return None
        stats["stale_fraction"] = engine.stale_fraction()
        stats["online_end"] = len(net.online_ids)
        if profile.name == "kad":
            stats["mean_level4_degree"] = engine.mean_level_degree(4)
        samples = engine.samples[:lookups_per_run]
        if len(samples) < lookups_per_run:
            return None
        return samples, stats
    rng = random.Random(f"{run_seed}:lookups")
    samples = []
    for _ in range(lookups_per_run):
        origin = net.online_ids[rng.randrange(len(net.online_ids))]
        target = rng.getrandbits(profile.b)
        res = lookup(net, origin, target, mode=config.lookup_mode)
        samples.append(res.hops)
    stats["online_end"] = len(net.online_ids)
    return samples, stats


def run_experiment(profile: SystemProfile, n: int, scheme: str, churn: ChurnSpec | None = None,
                   lookups_per_run: int = 500, runs: int = 10, seed: int = 42,
                   config: SimConfig = SimConfig(), workers: int = 1) -> ExperimentReport:
    """Paper-style experiment: `runs` independent seeded runs, aggregated."""
    if runs < 2:
        raise ValueError("runs >= 2 required for the confidence interval")
    jobs = [(profile, n, scheme, churn, lookups_per_run, seed + r, config) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_run_one, jobs))
    else:
        per_run = [_run_one(j) for j in jobs]
    churn_mean = churn.mean_session if churn is not None and churn.enabled else None
    return ExperimentReport.aggregate(profile.name, scheme, n, lookups_per_run, seed, churn_mean, per_run)


@dataclass
class PairedReport:
    standard: ExperimentReport
    modified: ExperimentReport
    gain_pct: float
    gain_min: float
    gain_max: float

    def to_json_dict(self) -> dict:
        return {
            "standard": self.standard.to_json_dict(),
            "modified": self.modified.to_json_dict(),
            "gain_pct": self.gain_pct,
            "gain_min": self.gain_min,
            "gain_max": self.gain_max,
        }


def paired_gain(std: ExperimentReport, mod: ExperimentReport) -> tuple[float, float, float]:
    """Gain between (standard mean - CI) and (modified mean + CI), in percent,
    plus per-run-pair minimum and maximum gains."""
    lo = std.sample_mean - std.ci95_halfwidth
    hi = mod.sample_mean + mod.ci95_halfwidth
    gain = (lo - hi) / lo * 100.0 if lo > 0 else 0.0
    per_run = [
        (s - m) / s * 100.0
        for s, m in zip(std.run_means, mod.run_means)
        if s > 0
    ]
    if not per_run:
        return gain, 0.0, 0.0
    return gain, min(per_run), max(per_run)


def compare_schemes(profile: SystemProfile, n: int, churn: ChurnSpec | None = None,
                    lookups_per_run: int = 500, runs: int = 10, seed: int = 42,
                    config: SimConfig = SimConfig(), workers: int = 1) -> PairedReport:
    """Run standard and diverse schemes on paired seeds and report the gain."""
    std = run_experiment(profile, n, STANDARD, churn, lookups_per_run, runs, seed, config, workers)
    mod = run_experiment(profile, n, DIVERSE, churn, lookups_per_run, runs, seed, config, workers)
    gain, gmin, gmax = paired_gain(std, mod)
    return PairedReport(std, mod, gain, gmin, gmax)
