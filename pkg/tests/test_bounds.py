import pytest

from kadlab.bounds import bound_curve, count_local_maxima, default_grid, empty_bucket_bound
from kadlab.routing import SystemProfile, get_profile

SPOT_NS = [1000, 3700, 21000, 140000, 1_000_000, 4_000_000]


class TestBound:
    def test_mdht_small_everywhere(self):
        for n in SPOT_NS:
            assert empty_bucket_bound(get_profile("mdht"), n) < 1e-5

    def test_imdht_identical_to_mdht(self):
        for n in SPOT_NS:
            a = empty_bucket_bound(get_profile("mdht"), n)
            b = empty_bucket_bound(get_profile("imdht"), n)
            assert b == pytest.approx(a, rel=1e-9, abs=1e-30)

    def test_kad_capped(self):
        for n in SPOT_NS:
            v = empty_bucket_bound(get_profile("kad"), n)
            assert 0.0 <= v < 5e-4

    def test_monotone_in_capacity(self):
        fat = SystemProfile("mdht16", 160, 3, 2, 16)
        for n in SPOT_NS:
            assert empty_bucket_bound(fat, n) <= empty_bucket_bound(get_profile("mdht"), n) + 1e-18

    def test_requires_two_nodes(self):
        with pytest.raises(ValueError):
            empty_bucket_bound(get_profile("kad"), 1)


class TestCurve:
    def test_default_grid_shape(self):
        grid = default_grid()
        assert len(grid) >= 55
        assert grid[0] == 1000 and grid[-1] == 4_000_000
        with pytest.raises(ValueError):
            default_grid(points=0)

    def test_single_point_grid(self):
        assert default_grid(5000, 5000, 1) == [5000]

    def test_sawtooth_on_coarse_grid(self):
        curve = bound_curve(get_profile("mdht"), default_grid(points=40))
        assert count_local_maxima(curve) >= 3
