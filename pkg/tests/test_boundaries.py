"""Tests for the sequential stopping boundaries."""

import io

import numpy as np
import pytest

from pochange.boundaries import (
    BoundarySet,
    build_boundaries,
    read_boundaries,
    spending,
    write_boundaries,
)


def crossing_fractions(b, split, walks, rng):
    """Monte-Carlo first-exit fractions (upper, lower) over ``walks`` paths."""
    h = b.horizon
    steps = rng.random((walks, h)) < split
    paths = np.cumsum(steps, axis=1)
    up = paths >= b.upper[1:][None, :]
    down = paths <= b.lower[1:][None, :]
    first_up = np.where(up.any(axis=1), up.argmax(axis=1), h)
    first_down = np.where(down.any(axis=1), down.argmax(axis=1), h)
    return np.mean(first_up < first_down), np.mean(first_down < first_up)


class TestConstruction:
    def test_spending(self):
        assert spending(1000, 0.01) == pytest.approx(0.005)
        assert np.all(np.diff(spending(np.arange(1, 100), 0.1)) > 0)

    @pytest.mark.parametrize("split", [0.04, 0.05, 0.2, 0.5])
    def test_monotone_and_ordered(self, split):
        b = build_boundaries(split, 1e-3, 3000)
        assert np.all(np.diff(b.upper[1:]) >= 0)
        assert np.all(np.diff(b.lower[1:]) >= 0)
        assert np.all(b.lower[1:] < b.upper[1:])
        width = b.upper[1:] - b.lower[1:]
        assert width[-1] < b.horizon / 2

    def test_exact_absorbed_mass_within_budget(self):
        b = build_boundaries(0.05, 1e-3, 20000)
        up, down = b.absorbed
        half = 0.5 * spending(20000, 1e-3)
        assert up <= half + 1e-15 and down <= half + 1e-15
        # greedy spending uses most of the budget
        assert up > 0.5 * half and down > 0.5 * half

    def test_lower_unreachable_early(self):
        b = build_boundaries(0.05, 1e-3, 100)
        assert b.lower[1] < 0
        zeros = np.zeros(100, int)
        hit = np.flatnonzero(zeros <= b.lower[1:])
        assert hit.size == 0 or hit[0] > 0

    def test_extend_matches_fresh_build(self):
        a = build_boundaries(0.05, 1e-3, 500).extend(2000)
        b = build_boundaries(0.05, 1e-3, 2000)
        assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)

    @pytest.mark.parametrize("eps", [0.0, 0.5, -1.0])
    def test_rejects_eps(self, eps):
        with pytest.raises(ValueError):
            build_boundaries(0.05, eps, 10)

    def test_rejects_split(self):
        with pytest.raises(ValueError):
            build_boundaries(1.0, 1e-3, 10)


class TestRiskContract:
    @pytest.mark.parametrize("split", [0.05, 0.3])
    def test_monte_carlo_crossings(self, split):
        eps = 0.01
        b = build_boundaries(split, eps, 2000)
        up, down = crossing_fractions(b, split, 10_000, np.random.default_rng(7))
        slack = 3 * np.sqrt(eps / (2 * 10_000))
        assert up <= eps / 2 + slack
        assert down <= eps / 2 + slack


class TestCrossSplit:
    def test_natural_ordering(self):
        bs = [build_boundaries(s, 1e-3, 5000) for s in (0.04, 0.05, 0.06)]
        for lo, hi in zip(bs, bs[1:]):
            assert np.all(lo.upper <= hi.upper)
            assert np.all(lo.lower <= hi.lower)

    def test_set_is_clamped_monotone(self):
        bs = BoundarySet.build([0.06, 0.04, 0.05, 0.5], 1e-3, 2000)
        assert np.all(np.diff(bs.upper, axis=0) >= 0)
        assert np.all(np.diff(bs.lower, axis=0) >= 0)
        assert bs.splits.tolist() == [0.04, 0.05, 0.06, 0.5]

    def test_ensure_grows(self):
        bs = BoundarySet.build([0.05], 1e-3, 100)
        bs.ensure(1000)
        assert bs.horizon >= 1000


class TestTables:
    def test_round_trip(self):
        b = build_boundaries(0.05, 1e-3, 300)
        buf = io.StringIO()
        write_boundaries(b, buf)
        back = read_boundaries(io.StringIO(buf.getvalue()))
        assert back.split == 0.05 and back.eps == 1e-3
        assert np.array_equal(back.lower, b.lower) and np.array_equal(back.upper, b.upper)
        assert not back.extendable

    def test_rejects_missing_header(self):
        with pytest.raises(ValueError):
            read_boundaries(io.StringIO("ell\tlower\tupper\n1\t-1\t2\n"))

    def test_rejects_gaps(self):
        with pytest.raises(ValueError):
            read_boundaries(io.StringIO("# split=0.05 eps=0.001\n1\t-1\t2\n3\t-1\t3\n"))
