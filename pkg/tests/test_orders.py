import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from o2osim.orders import IntensityProfile, generate_orders, intensity, sample_dropoff, step_intensities
from o2osim.rng import substream
from o2osim.world import Zone

ZEROS = (0.0, 0.0, 0.0, 0.0)


def one_bump(a, b, c, mult=1.0):
    # the remaining four components are switched off
    return IntensityProfile((a,) + ZEROS, (b,) + ZEROS, (c,) + (1.0,) * 4, mult)


def poisson_counts(mean, draws, seed=0, mult=1.0):
    rng = substream(seed, 1)
    zones = [Zone(0, (10, 10), 3, 1.0)]
    prof = one_bump(1.0, 0.5, 0.1, mult)
    return np.array([len(generate_orders(0, 120, prof, zones, rng, width=20, height=20, mean=mean * mult))
                     for _ in range(draws)])


profiles = st.builds(
    IntensityProfile,
    st.tuples(*[st.floats(0, 20)] * 5),
    st.tuples(*[st.floats(0, 0.999)] * 5),
    st.tuples(*[st.floats(0.01, 1)] * 5),
    st.floats(0, 5),
)


class TestIntensity:
    def test_single_peak(self):
        assert intensity(0.5, one_bump(1, 0.5, 0.1)) == pytest.approx(1.0)

    def test_closed_form(self):
        # x=1 lies outside [0, 1), so approach it from below
        assert intensity(1 - 1e-12, one_bump(2, 0.0, 1.0)) == pytest.approx(2 * math.exp(-1), rel=1e-9)
        assert 2 * math.exp(-1) == pytest.approx(0.7358, abs=1e-4)

    def test_zero_multiplier(self):
        prof = IntensityProfile((6, 10, 4, 8, 3), (0.1, 0.3, 0.5, 0.7, 0.9), (0.05,) * 5, 0.0)
        assert all(v == 0 for v in step_intensities(prof, 120))

    def test_domain(self):
        with pytest.raises(ValueError):
            intensity(1.0, one_bump(1, 0.5, 0.1))
        with pytest.raises(ValueError):
            IntensityProfile((1, 1), (0, 0), (1, 1))
        with pytest.raises(ValueError):
            one_bump(1, 0.5, 0.0)

    @given(profiles, st.floats(0, 0.999), st.permutations(range(5)))
    def test_nonnegative_and_permutation_invariant(self, prof, x, perm):
        v = intensity(x, prof)
        assert v >= 0
        shuffled = IntensityProfile(tuple(prof.a[i] for i in perm), tuple(prof.b[i] for i in perm),
                                    tuple(prof.c[i] for i in perm), prof.volume_multiplier)
        assert intensity(x, shuffled) == pytest.approx(v, rel=1e-12, abs=1e-300)


class TestGenerate:
    def test_zero_volume_never_generates(self):
        assert poisson_counts(0.0, 200).sum() == 0

    def test_poisson_mean(self):
        assert abs(poisson_counts(3.0, 10_000).mean() - 3.0) < 0.1

    def test_linear_in_volume(self):
        base = poisson_counts(3.0, 10_000, seed=1).mean()
        double = poisson_counts(3.0, 10_000, seed=2, mult=2.0).mean()
        assert double / base == pytest.approx(2.0, rel=0.05)

    def test_no_zones(self):
        with pytest.raises(ValueError):
            generate_orders(0, 120, one_bump(1, 0.5, 0.1), [], substream(0, 1), width=5, height=5)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 9), st.integers(0, 9))
    def test_pickups_in_zone_and_dropoffs_in_grid(self, seed, radius, cx, cy):
        zones = [Zone(0, (cx, cy), radius, 0.5), Zone(1, (9 - cx, 9 - cy), radius, 0.5)]
        orders = generate_orders(0, 120, one_bump(1, 0.5, 0.1), zones, substream(seed, 1),
                                 width=10, height=10, mean=8.0, d_max=4)
        for o in orders:
            assert zones[o.zone].contains(o.pickup)
            assert 0 <= o.dropoff[0] < 10 and 0 <= o.dropoff[1] < 10
            dist = abs(o.pickup[0] - o.dropoff[0]) + abs(o.pickup[1] - o.dropoff[1])
            assert dist <= 4
            assert o.fee == pytest.approx(2.0 + 0.1 * dist)

    def test_ids_are_consecutive(self):
        orders = generate_orders(5, 120, one_bump(1, 0.5, 0.1), [Zone(0, (5, 5), 2, 1.0)], substream(0, 1),
                                 width=10, height=10, next_id=40, mean=20.0)
        assert [o.id for o in orders] == list(range(40, 40 + len(orders)))
        assert all(o.created_step == 5 for o in orders)

    def test_dropoff_ring_away_from_edges(self):
        rng = substream(3, 9)
        for _ in range(500):
            d = sample_dropoff(rng, (50, 50), 10, 100, 100)
            assert 1 <= abs(d[0] - 50) + abs(d[1] - 50) <= 10


class TestSubstreams:
    def test_streams_are_addressed_not_sequential(self):
        a = substream(7, 2, 17).random(5)
        substream(7, 2, 3).random(100)
        assert np.array_equal(a, substream(7, 2, 17).random(5))

    def test_distinct_keys_differ(self):
        assert not np.array_equal(substream(7, 0).random(5), substream(7, 1).random(5))
        assert not np.array_equal(substream(7, 0).random(5), substream(8, 0).random(5))
