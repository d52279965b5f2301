import json
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from kadlab.routing import (
    Bucket,
    Contact,
    DIVERSE,
    INSERTED,
    MaintenanceConfig,
    REJECTED,
    REPLACED,
    RoutingTable,
    STANDARD,
    SystemProfile,
    diversity_cdf,
    diversity_cdf_from_dumps,
    get_profile,
    imdht_profile,
    kad_profile,
    mdht_profile,
)


class TestProfiles:
    def test_mdht_preset(self):
        p = mdht_profile()
        assert (p.b, p.alpha, p.beta) == (160, 3, 2)
        assert all(p.bucket_capacity(d) == 8 for d in (1, 80, 160))
        assert p.level_row(37) == {1: 1.0}

    def test_mdht_protocol_faithful_alternative(self):
        p = get_profile("mdht", alpha=4, beta=1)
        assert (p.alpha, p.beta) == (4, 1)

    def test_imdht_preset(self):
        p = imdht_profile()
        assert [p.bucket_capacity(d) for d in (160, 159, 158, 157, 156, 1)] == [128, 64, 32, 16, 8, 8]
        assert [p.q_for(d) for d in (160, 159, 158, 157, 156)] == [7, 6, 5, 4, 3]

    def test_kad_preset(self):
        p = kad_profile()
        assert (p.b, p.alpha, p.beta) == (128, 3, 2)
        assert p.bucket_capacity(64) == 10
        assert p.level_row(128) == {4: 1.0}
        assert p.level_row(100) == {3: 0.75, 4: 0.25}

    def test_matrix_contracts(self):
        p = kad_profile()
        p.validate()
        L = p.L_matrix()
        assert L.shape == (129, 129)
        assert L.sum(axis=1) == pytest.approx(1.0)
        assert len(p.k_vector()) == 129

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            get_profile("chord")


def contact(i, t=0.0):
    return Contact(i, t, t)


class TestBucketFor:
    def test_mdht_single_bucket_per_level(self):
        p = mdht_profile()
        table = RoutingTable(0, p)
        d = 150
        keys = {table.bucket_key((1 << (d - 1)) | random.Random(i).getrandbits(d - 1)) for i in range(50)}
        assert len(keys) == 1
        assert next(iter(keys))[0] == d

    def test_kad_top_level_eight_buckets(self):
        # the d=b level resolves four digits (the forced bit plus three): 8 buckets
        p = kad_profile()
        table = RoutingTable(0, p)
        rng = random.Random(7)
        keys = {table.bucket_key((1 << 127) | rng.getrandbits(127)) for _ in range(400)}
        assert len(keys) == 8
        assert all(k[1] == 4 for k in keys)

    def test_kad_lower_level_split(self):
        # 3/4 of a level resolved by three digits, 1/4 (nearest the owner) by four
        p = kad_profile()
        table = RoutingTable(0, p)
        d = 100
        rng = random.Random(9)
        keys = {table.bucket_key(rng.getrandbits(d - 1) | (1 << (d - 1))) for _ in range(2000)}
        l3 = [k for k in keys if k[1] == 3]
        l4 = [k for k in keys if k[1] == 4]
        assert len(l3) == 3 and len(l4) == 2
        region = sum(2 ** (d - k[1]) for k in keys)
        assert region == 2 ** (d - 1)
        # four-digit buckets occupy the quarter closest to the owner
        assert all(k[2] >> (k[1] - 3) == 0b100 for k in l4)

    def test_owner_rejected(self):
        table = RoutingTable(5, mdht_profile())
        with pytest.raises(ValueError):
            table.bucket_key(5)

    @given(st.integers(0, 2**128 - 1), st.integers(0, 2**128 - 1))
    @settings(max_examples=200, deadline=None)
    def test_partition(self, owner, target):
        if owner == target:
            return
        table = RoutingTable(owner, kad_profile())
        bucket = table.bucket_for(target)
        assert bucket.covers(target)
        d, l, _ = table.bucket_key(target)
        lo, hi = bucket.region()
        assert hi - lo == 2 ** (d - l)
        assert not bucket.covers(owner)


class TestOfferContact:
    def build_full(self, scheme, pattern_values):
        p = kad_profile()
        table = RoutingTable(0, p, scheme)
        d = 120
        base = 1 << (d - 1)  # bucket at distance d, l=3 region
        bucket = table.bucket_for(base)
        lo, hi = bucket.region()
        step = (hi - lo) >> bucket.q
        for i, pv in enumerate(pattern_values):
            table.insert_unchecked(bucket, contact(lo + pv * step + i + 1, float(i)))
        return table, bucket, lo, step

    def test_insert_into_empty(self):
        for scheme in (STANDARD, DIVERSE):
            table = RoutingTable(0, kad_profile(), scheme)
            res = table.offer_contact(contact(1 << 100))
            assert res.status == INSERTED

    def test_diverse_replacement_raises_degree(self):
        table, bucket, lo, step = self.build_full(DIVERSE, [3] * 10)
        assert bucket.diversity_degree() == 1
        res = table.offer_contact(contact(lo + 5 * step + 99))
        assert res.status == REPLACED
        assert bucket.diversity_degree() == 2

    def test_diverse_rejects_at_max_degree(self):
        table, bucket, lo, step = self.build_full(DIVERSE, [0, 1, 2, 3, 4, 5, 6, 7, 0, 1])
        assert bucket.diversity_degree() == 8
        res = table.offer_contact(contact(lo + 3 * step + 999))
        assert res.status == REJECTED

    def test_standard_full_rejects_live(self):
        table, bucket, lo, step = self.build_full(STANDARD, [3] * 10)
        assert table.offer_contact(contact(lo + 5 * step + 99)).status == REJECTED

    def test_standard_replaces_oldest_stale(self):
        table, bucket, lo, step = self.build_full(STANDARD, list(range(8)) + [0, 1])
        ids = list(bucket.ids)
        table.contacts[ids[4]].stale = True
        table.contacts[ids[4]].last_verified = 50.0
        table.contacts[ids[6]].stale = True
        table.contacts[ids[6]].last_verified = 10.0
        res = table.offer_contact(contact(lo + 3 * step + 999))
        assert res.status == REPLACED
        assert res.evicted.id == ids[6]  # oldest last_verified among stale

    def test_diverse_prefers_stale_victim(self):
        table, bucket, lo, step = self.build_full(DIVERSE, [0, 0, 1, 2, 3, 4, 5, 6, 7, 1])
        dup0 = [i for i in bucket.ids if bucket.pattern(i) == 0]
        table.contacts[dup0[0]].stale = True
        res = table.offer_contact(contact(lo + 2 * step + 999))  # pattern already present
        assert res.status == REPLACED
        assert res.evicted.id == dup0[0]
        assert bucket.diversity_degree() == 8

    def test_duplicate_id_rejected(self):
        table = RoutingTable(0, kad_profile(), STANDARD)
        c = contact(1 << 100)
        table.offer_contact(c)
        assert table.offer_contact(contact(1 << 100)).status == REJECTED

    @given(st.lists(st.integers(0, 2**20 - 1), min_size=1, max_size=60), st.integers(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_diverse_degree_monotone(self, offsets, _):
        p = SystemProfile("tiny", 32, 3, 2, 8)
        table = RoutingTable(0, p, DIVERSE)
        base = 1 << 30
        last = {}
        for off in offsets:
            cand = base | (off & ((1 << 30) - 1))
            if cand == 0:
                continue
            key = table.bucket_key(cand)
            bucket = table._bucket_from_key(key)
            before = bucket.diversity_degree()
            table.offer_contact(contact(cand))
            after = bucket.diversity_degree()
            assert after >= before
            last[key] = after


class TestClosestContacts:
    def test_exhaustive_oracle(self):
        rng = random.Random(3)
        p = kad_profile()
        table = RoutingTable(rng.getrandbits(128), p, STANDARD)
        added = []
        while len(added) < 1000:
            c = rng.getrandbits(128)
            if c != table.owner and table.offer_contact(contact(c)).status == INSERTED:
                added.append(c)
        for _ in range(25):
            target = rng.getrandbits(128)
            got = [c.id for c in table.closest_contacts(target, 3)]
            want = sorted(table.contacts, key=lambda i: i ^ target)[:3]
            assert got == want

    def test_empty_table(self):
        table = RoutingTable(0, kad_profile())
        assert table.closest_contacts(123, 3) == []

    def test_fewer_than_gamma(self):
        table = RoutingTable(0, kad_profile())
        table.offer_contact(contact(1 << 100))
        assert len(table.closest_contacts(5, 3)) == 1


class _DictOracle:
    def __init__(self, alive, extra=()):
        self.alive_set = set(alive)
        self.extra = list(extra)

    def candidates(self, lo, hi, count, exclude):
        return [c for c in self.extra if lo <= c < hi and c not in exclude][:count]

    def is_alive(self, ident):
        return ident in self.alive_set


class TestMaintenance:
    def test_static_full_table_noop(self):
        rng = random.Random(1)
        table = RoutingTable(rng.getrandbits(128), kad_profile(), STANDARD)
        members = [rng.getrandbits(128) for _ in range(400)]
        for c in members:
            table.offer_contact(contact(c))
        oracle = _DictOracle(alive=members)
        report = table.maintenance_tick(1.0, oracle)
        assert report.inserted == 0 and report.evicted == 0

    def test_departed_contact_evicted_within_period(self):
        rng = random.Random(2)
        table = RoutingTable(rng.getrandbits(128), kad_profile(), DIVERSE)
        members = [rng.getrandbits(128) for _ in range(50)]
        for c in members:
            table.offer_contact(contact(c))
        gone = members[7]
        alive = [c for c in members if c != gone]
        cfg = MaintenanceConfig(freshness_age=300.0, long_lived_age=1e9)
        report = table.maintenance_tick(301.0, _DictOracle(alive=alive), cfg)
        assert gone not in table.contacts
        assert report.evicted >= 1
        assert report.probed >= 1

    def test_population_pass_fills(self):
        rng = random.Random(5)
        table = RoutingTable(rng.getrandbits(128), kad_profile(), STANDARD)
        seedc = rng.getrandbits(128)
        table.offer_contact(contact(seedc))
        bucket = table.bucket_for(seedc)
        lo, hi = bucket.region()
        news = [lo + 17, lo + 23456]
        report = table.maintenance_tick(1.0, _DictOracle(alive=news + [seedc], extra=news))
        assert report.inserted >= 2

    def test_oracle_unavailable(self):
        from kadlab.routing import OracleUnavailable

        class Broken:
            def candidates(self, *a):
                raise OracleUnavailable()

            def is_alive(self, ident):
                raise OracleUnavailable()

        table = RoutingTable(0, kad_profile())
        table.offer_contact(contact(1 << 100))
        report = table.maintenance_tick(1e9, Broken())
        assert (report.inserted, report.evicted, report.probed) == (0, 0, 0)


class TestSerializationAndCdf:
    def test_dump_consumed_by_diversity_cdf(self):
        rng = random.Random(4)
        table = RoutingTable(rng.getrandbits(128), kad_profile(), DIVERSE)
        for _ in range(300):
            table.offer_contact(contact(rng.getrandbits(128)))
        payload = json.loads(table.dump_json())
        assert payload["scheme"] == DIVERSE
        assert all(set(b) == {"prefix", "capacity", "contacts", "diversity_degree"}
                   for b in payload["buckets"])
        direct = diversity_cdf([table], 4)
        via_dump = diversity_cdf_from_dumps([payload], 4)
        assert direct == via_dump

    def test_cdf_trivial_cases(self):
        p = kad_profile()
        t1 = RoutingTable(0, p)
        base = 1 << 127
        bucket = t1.bucket_for(base)
        lo, step = bucket.region()[0], (bucket.region()[1] - bucket.region()[0]) >> 3
        for s in (0, 1, 5):
            t1.insert_unchecked(bucket, contact(lo + s * step + 1))
        cdf = diversity_cdf([t1], 4)
        assert cdf == {3: {1: 0.0, 2: 0.0, 3: 1.0}}

    def test_max_degree_step(self):
        p = kad_profile()
        t1 = RoutingTable(0, p)
        bucket = t1.bucket_for(1 << 127)
        lo, step = bucket.region()[0], (bucket.region()[1] - bucket.region()[0]) >> 3
        for s in range(8):
            t1.insert_unchecked(bucket, contact(lo + s * step))
        cdf = diversity_cdf([t1], 4)[8]
        assert cdf[7] == 0.0 and cdf[8] == 1.0
