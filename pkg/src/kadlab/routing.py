"""Routing tables for Kademlia-type systems with pluggable contact selection.

A table partitions the identifier space into prefix buckets per its SystemProfile.
Two selection schemes are supported: "standard" (uniform contacts, stale-replacement
only) and "diverse" (replacements must not decrease the bucket's diversity degree).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .idspace import bit_distance_int, diversity_degree_int

STANDARD = "standard"
DIVERSE = "diverse"
SCHEMES = (STANDARD, DIVERSE)

INSERTED = "inserted"
REPLACED = "replaced"
REJECTED = "rejected"


# --------------------------------------------------------------------------- profiles


@dataclass(frozen=True)
class SystemProfile:
    """Parameters of a Kademlia-type system.

    k_default/k_overrides realize the capacity vector k[d] (bit distance d of the
    bucket's region to the table owner); level_rows realize the row-stochastic L
    matrix as sparse rows {l: weight}, defaulting to the single-bucket row {1: 1}.
    """

    name: str
    b: int
    alpha: int
    beta: int
    k_default: int
    k_overrides: tuple = ()  # ((d, k), ...)
    l_row_default: tuple = ((1, 1.0),)
    l_row_overrides: tuple = ()  # ((d, ((l, w), ...)), ...)

    def bucket_capacity(self, d: int) -> int:
        for dd, k in self.k_overrides:
            if dd == d:
                return k
        return self.k_default

    def level_row(self, d: int) -> dict[int, float]:
        for dd, row in self.l_row_overrides:
            if dd == d:
                return dict(row)
        return dict(self.l_row_default)

    def q_for(self, d: int) -> int:
        return int(math.floor(math.log2(self.bucket_capacity(d))))

    def k_vector(self):
        """Dense capacity vector indexed by bit distance 0..b (index 0 mirrors 1)."""
        v = [self.bucket_capacity(max(d, 1)) for d in range(self.b + 1)]
        return v

    def L_matrix(self):
        """Dense (b+1) x (b+1) row-stochastic matrix; row 0 is a point mass."""
        import numpy as np

        m = np.zeros((self.b + 1, self.b + 1))
        m[0][0] = 1.0
        for d in range(1, self.b + 1):
            for l, w in self.level_row(d).items():
                m[d][l] = w
        return m

    def validate(self) -> None:
        for d in range(1, self.b + 1):
            row = self.level_row(d)
            if abs(sum(row.values()) - 1.0) > 1e-12:
                raise ValueError(f"L row {d} does not sum to 1")
            if self.bucket_capacity(d) < 1:
                raise ValueError(f"k[{d}] < 1")

    def cache_key(self) -> tuple:
        return (self.name, self.b, self.alpha, self.beta, self.k_default,
                self.k_overrides, self.l_row_default, self.l_row_overrides)


def mdht_profile(alpha: int = 3, beta: int = 2) -> SystemProfile:
    """Mainline-DHT table shape: one k=8 bucket per level, b=160."""
    return SystemProfile("mdht", 160, alpha, beta, 8)


def imdht_profile(alpha: int = 3, beta: int = 2) -> SystemProfile:
    """MDHT variant with enlarged top buckets 128/64/32/16."""
    return SystemProfile(
        "imdht", 160, alpha, beta, 8,
        k_overrides=((160, 128), (159, 64), (158, 32), (157, 16)),
    )


def kad_profile(alpha: int = 3, beta: int = 2) -> SystemProfile:
    """KAD shape: b=128, k=10, multiple buckets per level resolved by 3 or 4 digits."""
    return SystemProfile(
        "kad", 128, alpha, beta, 10,
        l_row_default=((3, 0.75), (4, 0.25)),
        l_row_overrides=((128, ((4, 1.0),)),),
    )


_PROFILES = {"mdht": mdht_profile, "imdht": imdht_profile, "kad": kad_profile}


def get_profile(name: str, alpha: int | None = None, beta: int | None = None) -> SystemProfile:
    try:
        factory = _PROFILES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown profile {name!r} (choose from {sorted(_PROFILES)})")
    kwargs = {}
    if alpha is not None:
        kwargs["alpha"] = alpha
    if beta is not None:
        kwargs["beta"] = beta
    return factory(**kwargs)


# --------------------------------------------------------------------------- contacts


@dataclass(slots=True)
class Contact:
    """A routing-table entry. Times are simulated seconds."""

    id: int
    first_seen: float = 0.0
    last_verified: float = 0.0
    stale: bool = False

    def __post_init__(self):
        if self.last_verified < self.first_seen:
            raise ValueError("last_verified < first_seen")


@dataclass(slots=True)
class Bucket:
    """Fixed-capacity cell holding contact ids that share a common prefix."""

    prefix_val: int
    prefix_len: int
    capacity: int
    width: int
    ids: list = field(default_factory=list)
    q: int = -1

    def __post_init__(self):
        if self.q < 0:
            self.q = self.capacity.bit_length() - 1

    @property
    def common_prefix(self) -> str:
        return format(self.prefix_val, f"0{self.prefix_len}b") if self.prefix_len else ""

    def covers(self, ident: int) -> bool:
        return ident >> (self.width - self.prefix_len) == self.prefix_val

    def region(self) -> tuple[int, int]:
        """Half-open id interval [lo, hi) covered by this bucket."""
        shift = self.width - self.prefix_len
        return self.prefix_val << shift, (self.prefix_val + 1) << shift

    def diversity_degree(self) -> int:
        if not self.ids:
            return 0
        q = self.q
        if self.prefix_len + q > self.width:
            q = self.width - self.prefix_len
            if q < 1:
                return 1
        return diversity_degree_int(self.ids, self.width, self.prefix_len, q)

    def pattern(self, ident: int) -> int:
        q = self.q
        shift = self.width - self.prefix_len - q
        return (ident >> shift) & ((1 << q) - 1)


@dataclass(frozen=True, slots=True)
class OfferResult:
    status: str
    evicted: Contact | None = None


@dataclass(slots=True)
class MaintenanceReport:
    inserted: int = 0
    evicted: int = 0
    probed: int = 0


@dataclass(frozen=True)
class MaintenanceConfig:
    population_period: float = 60.0
    freshness_age: float = 300.0
    long_lived_age: float = 3600.0
    long_lived_multiplier: float = 4.0
    candidates_per_bucket: int = 3


class RoutingTable:
    """Single-owner prefix-partitioned contact store."""

    __slots__ = ("owner", "profile", "scheme", "buckets", "contacts")

    def __init__(self, owner: int, profile: SystemProfile, scheme: str = STANDARD):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.owner = owner
        self.profile = profile
        self.scheme = scheme
        self.buckets: dict[tuple, Bucket] = {}
        self.contacts: dict[int, Contact] = {}

    # -- bucket geometry

    def bucket_key(self, target: int) -> tuple:
        """(d, l, resolved-digit pattern) for the bucket covering target."""
        d = bit_distance_int(self.owner, target)
        if d == 0:
            raise ValueError("target equals table owner")
        x = self.owner ^ target  # in [2^(d-1), 2^d)
        row = self.profile.level_row(d)
        if len(row) == 1:
            l = next(iter(row))
        else:
            # bands of the level's XOR range, largest l nearest the owner
            u = x - (1 << (d - 1))
            frac = u / (1 << (d - 1))
            cum = 0.0
            l = None
            for li in sorted(row, reverse=True):
                cum += row[li]
                if frac < cum or li == min(row):
                    l = li
                    break
        l = min(l, d)
        pattern = x >> (d - l) if d > l else x
        return (d, l, pattern)

    def _bucket_from_key(self, key: tuple) -> Bucket:
        bucket = self.buckets.get(key)
        if bucket is None:
            d, l, pattern = key
            b = self.profile.b
            # value prefix of the region: owner's top (b-d) bits then pattern XOR'd in
            prefix_len = b - d + l
            prefix_val = (self.owner >> (b - prefix_len)) ^ pattern
            bucket = Bucket(prefix_val, prefix_len, self.profile.bucket_capacity(d), b)
            self.buckets[key] = bucket
        return bucket

    def bucket_for(self, target: int) -> Bucket:
        return self._bucket_from_key(self.bucket_key(target))

    # -- mutation

    def offer_contact(self, c: Contact) -> OfferResult:
        """Insert, replace, or reject a live candidate per the table's scheme."""
        if c.id == self.owner:
            raise ValueError("cannot store the owner as a contact")
        if c.stale:
            raise ValueError("stale candidates are not offered")
        bucket = self.bucket_for(c.id)
        if c.id in self.contacts:
            return OfferResult(REJECTED)
        if len(bucket.ids) < bucket.capacity:
            bucket.ids.append(c.id)
            self.contacts[c.id] = c
            return OfferResult(INSERTED)
        if self.scheme == STANDARD:
            stale = [self.contacts[i] for i in bucket.ids if self.contacts[i].stale]
            if not stale:
                return OfferResult(REJECTED)
            victim = min(stale, key=lambda s: s.last_verified)
            self._swap(bucket, victim, c)
            return OfferResult(REPLACED, victim)
        return self._offer_diverse(bucket, c)

    def _offer_diverse(self, bucket: Bucket, c: Contact) -> OfferResult:
        degree = bucket.diversity_degree()
        patterns: dict[int, list[Contact]] = {}
        for i in bucket.ids:
            patterns.setdefault(bucket.pattern(i), []).append(self.contacts[i])
        cpat = bucket.pattern(c.id)

        def degree_after(victim: Contact) -> int:
            vpat = bucket.pattern(victim.id)
            pats = set(patterns)
            if len(patterns[vpat]) == 1:
                pats.discard(vpat)
            pats.add(cpat)
            return len(pats)

        stale = [self.contacts[i] for i in bucket.ids if self.contacts[i].stale]
        if stale:
            # prefer evicting stale, but never let the degree drop
            best = max(stale, key=lambda s: (degree_after(s), -s.last_verified))
            if degree_after(best) >= degree:
                self._swap(bucket, best, c)
                return OfferResult(REPLACED, best)
        if cpat in patterns:
            return OfferResult(REJECTED)  # cannot increase the degree
        # victim from the most-represented pattern class; ties: lowest pattern value
        vpat = min(patterns, key=lambda p: (-len(patterns[p]), p))
        if len(patterns[vpat]) < 2:
            return OfferResult(REJECTED)  # all classes singletons: degree already maximal here
        victim = max(patterns[vpat], key=lambda s: s.first_seen)  # youngest first_seen
        self._swap(bucket, victim, c)
        return OfferResult(REPLACED, victim)

    def _swap(self, bucket: Bucket, victim: Contact, c: Contact) -> None:
        bucket.ids.remove(victim.id)
        del self.contacts[victim.id]
        bucket.ids.append(c.id)
        self.contacts[c.id] = c

    def insert_unchecked(self, bucket: Bucket, c: Contact) -> None:
        """Capacity-checked raw insert used by network builders."""
        if len(bucket.ids) >= bucket.capacity:
            raise ValueError("bucket full")
        bucket.ids.append(c.id)
        self.contacts[c.id] = c

    def remove(self, ident: int) -> Contact | None:
        c = self.contacts.pop(ident, None)
        if c is None:
            return None
        bucket = self.bucket_for(ident)
        try:
            bucket.ids.remove(ident)
        except ValueError:
            pass
        return c

    # -- queries

    def closest_contacts(self, target: int, gamma: int) -> list[Contact]:
        """The gamma contacts minimizing XOR distance to target, ascending."""
        if gamma < 1:
            raise ValueError("gamma >= 1 required")
        shiftable = []
        for key, bucket in self.buckets.items():
            if not bucket.ids:
                continue
            shift = bucket.width - bucket.prefix_len
            min_xor = ((target >> shift) ^ bucket.prefix_val) << shift
            shiftable.append((min_xor, bucket))
        shiftable.sort(key=lambda t: t[0])
        best: list[tuple[int, int]] = []  # (xor, id)
        for min_xor, bucket in shiftable:
            if len(best) >= gamma and min_xor > best[gamma - 1][0]:
                break
            for i in bucket.ids:
                best.append((i ^ target, i))
            best.sort()
            del best[gamma + 8:]
        return [self.contacts[i] for _, i in best[:gamma]]

    def contact_count(self) -> int:
        return len(self.contacts)

    # -- maintenance

    def maintenance_tick(self, now: float, peer_oracle, config: MaintenanceConfig = MaintenanceConfig()) -> MaintenanceReport:
        """One maintenance round: population pass then freshness pass.

        peer_oracle must provide candidates(lo, hi, count, exclude) -> list[int] and
        is_alive(id) -> bool; an oracle raising OracleUnavailable yields a no-op report.
        """
        report = MaintenanceReport()
        try:
            for key in list(self.buckets):
                bucket = self.buckets[key]
                if len(bucket.ids) < bucket.capacity:
                    lo, hi = bucket.region()
                    exclude = set(bucket.ids) | {self.owner}
                    for cand in peer_oracle.candidates(lo, hi, config.candidates_per_bucket, exclude):
                        res = self.offer_contact(Contact(cand, first_seen=now, last_verified=now))
                        if res.status == INSERTED:
                            report.inserted += 1
                        elif res.status == REPLACED:
                            report.evicted += 1
                            report.inserted += 1
            for key in list(self.buckets):
                bucket = self.buckets[key]
                for ident in list(bucket.ids):
                    c = self.contacts[ident]
                    period = config.freshness_age
                    if now - c.first_seen > config.long_lived_age:
                        period *= config.long_lived_multiplier
                    if now - c.last_verified <= period:
                        continue
                    report.probed += 1
                    if peer_oracle.is_alive(ident):
                        c.last_verified = now
                        continue
                    c.stale = True
                    self.remove(ident)
                    report.evicted += 1
                    lo, hi = bucket.region()
                    exclude = set(bucket.ids) | {self.owner}
                    for cand in peer_oracle.candidates(lo, hi, config.candidates_per_bucket, exclude):
                        res = self.offer_contact(Contact(cand, first_seen=now, last_verified=now))
                        if res.status in (INSERTED, REPLACED):
                            report.inserted += 1
                            break
        except OracleUnavailable:
            return MaintenanceReport()
        return report

    # -- serialization

    def to_json_dict(self) -> dict:
        hexw = (self.profile.b + 3) // 4
        buckets = []
        for key in sorted(self.buckets):
            bucket = self.buckets[key]
            buckets.append(
                {
                    "prefix": bucket.common_prefix,
                    "capacity": bucket.capacity,
                    "contacts": [format(i, f"0{hexw}x") for i in sorted(bucket.ids)],
                    "diversity_degree": bucket.diversity_degree(),
                }
            )
        return {
            "owner": format(self.owner, f"0{hexw}x"),
            "scheme": self.scheme,
            "buckets": buckets,
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=None, sort_keys=True)


class OracleUnavailable(RuntimeError):
    """Raised by peer oracles that cannot answer; maintenance reports zero actions."""


def diversity_cdf(tables, level: int):
    """Empirical degree CDFs of buckets whose common prefix has the given length,
    grouped by fill count. Returns {fill_count: {degree: cumulative fraction}}."""
    groups: dict[int, list[int]] = {}
    for table in tables:
        for bucket in table.buckets.values():
            if bucket.prefix_len != level or not bucket.ids:
                continue
            groups.setdefault(len(bucket.ids), []).append(bucket.diversity_degree())
    out: dict[int, dict[int, float]] = {}
    for fill, degrees in groups.items():
        total = len(degrees)
        maxdeg = max(degrees)
        cum = 0
        cdf = {}
        for m in range(1, maxdeg + 1):
            cum += sum(1 for g in degrees if g == m)
            cdf[m] = cum / total
        out[fill] = cdf
    return out


def diversity_cdf_from_dumps(dumps, level: int):
    """Same CDF computed from to_json_dict() payloads (the dump wire format)."""
    groups: dict[int, list[int]] = {}
    for dump in dumps:
        for bucket in dump["buckets"]:
            if len(bucket["prefix"]) != level or not bucket["contacts"]:
                continue
            groups.setdefault(len(bucket["contacts"]), []).append(bucket["diversity_degree"])
    out: dict[int, dict[int, float]] = {}
    for fill, degrees in groups.items():
        total = len(degrees)
        cum = 0
        cdf = {}
        for m in range(1, max(degrees) + 1):
            cum += sum(1 for g in degrees if g == m)
            cdf[m] = cum / total
        out[fill] = cdf
    return out
