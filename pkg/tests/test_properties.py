"""Property-based checks of the invariants the statistic must satisfy."""

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from oracles import two_sample_profile
from pochange import ChangeShape, FunctionalDataset, Grid, WeightSpec, statistic
from pochange.boundaries import build_boundaries
from pochange.core import BatchStatistic, abrupt_z, counts, cusum_field, sum_weights, y_process


@st.composite
def datasets(draw, n_min=3, n_max=12, q_max=6):
    n = draw(st.integers(n_min, n_max))
    q = draw(st.integers(1, q_max))
    seed = draw(st.integers(0, 2**32 - 1))
    p_obs = draw(st.floats(0.3, 1.0))
    rng = np.random.default_rng(seed)
    mask = rng.random((n, q)) < p_obs
    mask[rng.integers(n, size=q), np.arange(q)] = True
    values = np.where(mask, rng.normal(size=(n, q)) * draw(st.floats(0.1, 10)), np.nan)
    pts = np.sort(rng.choice(np.linspace(0, 1, 5 * q + 1), q, replace=False))
    return FunctionalDataset(Grid(pts), mask, values)


shapes = st.sampled_from(
    [ChangeShape.abrupt(), ChangeShape.linear(), ChangeShape.polynomial(2), ChangeShape.polynomial(0.5)]
)
weights = st.builds(WeightSpec, st.sampled_from([0.0, 0.25, 0.5]), st.sampled_from(["sum", "integral"]))


@given(datasets(), shapes, weights, st.floats(0.01, 100))
def test_scale_equivariance(ds, shape, wspec, c):
    base = statistic(ds, shape, wspec)
    scaled = statistic(FunctionalDataset(ds.grid, ds.mask, ds.values * c), shape, wspec)
    assert np.allclose(scaled.profile, c**2 * base.profile, rtol=1e-9, atol=1e-12 * c**2)


@given(datasets(), shapes, weights, st.floats(-50, 50))
def test_shift_invariance(ds, shape, wspec, a):
    base = statistic(ds, shape, wspec)
    shifted = statistic(FunctionalDataset(ds.grid, ds.mask, ds.values + a), shape, wspec)
    scale = max(1.0, base.statistic) * (1 + abs(a)) ** 2
    assert np.allclose(shifted.profile, base.profile, rtol=1e-7, atol=1e-9 * scale)


@given(datasets(), st.integers(0, 2**32 - 1))
def test_counts_and_weights_permutation_invariant(ds, seed):
    perm = np.random.default_rng(seed).permutation(ds.n)
    pds = ds.permuted(perm)
    big, _ = counts(ds.mask)
    pbig, _ = counts(pds.mask)
    assert np.array_equal(big, pbig)
    # sum-type abrupt weights see the mask only through N(u) and N_k(u),
    # which a shuffle inside the first k rows and inside the rest leaves intact
    k = int(np.random.default_rng(seed).integers(1, ds.n))
    head = np.random.default_rng(seed + 1).permutation(k)
    tail = k + np.random.default_rng(seed + 2).permutation(ds.n - k)
    block = ds.permuted(np.r_[head, tail])
    shape = ChangeShape.abrupt()
    assert np.array_equal(sum_weights(ds.mask, shape, 0.5, k), sum_weights(block.mask, shape, 0.5, k))


@given(datasets(), shapes)
def test_gamma_zero_modes_agree(ds, shape):
    a = statistic(ds, shape, WeightSpec(0.0, "sum"))
    b = statistic(ds, shape, WeightSpec(0.0, "integral"))
    assert np.array_equal(a.profile, b.profile)


@given(datasets(), st.sampled_from([0.0, 0.25, 0.5]), st.data())
def test_abrupt_identity(ds, gamma, data):
    k = data.draw(st.integers(1, ds.n - 1))
    big, nk = counts(ds.mask)
    ok = (nk[k - 1] > 0) & (nk[k - 1] < big)
    y = y_process(ds, ChangeShape.abrupt(), k)
    w = sum_weights(ds.mask, ChangeShape.abrupt(), gamma, k)
    z = abrupt_z(ds, gamma, k)
    # the segment-mean form carries the opposite sign of the partial-sum form
    assert np.allclose(-z[ok], (np.sqrt(w) * y)[ok], rtol=1e-9, atol=1e-12)
    assert np.all(z[~ok] == 0)


@given(datasets())
def test_two_sample_identity(ds):
    prof = statistic(ds, ChangeShape.abrupt(), WeightSpec(0.5)).profile
    ref = two_sample_profile(ds.values.tolist(), ds.mask.tolist(), list(ds.grid.points))
    assert np.allclose(prof, ref, rtol=1e-9, atol=1e-12)


@given(datasets(), shapes, weights, st.integers(0, 2**32 - 1))
def test_fast_and_dense_routes_agree(ds, shape, wspec, seed):
    batch = BatchStatistic(ds, shape, wspec)
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(ds.n) for _ in range(4)])
    fast, dense = batch.profiles(perms), batch.profiles_dense(perms)
    scale = max(1.0, float(np.abs(dense).max()))
    assert np.allclose(fast, dense, rtol=1e-9, atol=1e-10 * scale)


@given(datasets(), shapes, weights)
def test_profile_nonnegative_and_khat_is_argmax(ds, shape, wspec):
    res = statistic(ds, shape, wspec)
    assert np.all(res.profile >= 0)
    assert res.profile[res.k_hat - 1] == res.statistic
    assert np.all(res.profile[: res.k_hat - 1] < res.statistic)


@given(datasets(), shapes, weights)
def test_field_matches_profile(ds, shape, wspec):
    fld = cusum_field(ds, shape, wspec)
    assert np.allclose(fld.profile, statistic(ds, shape, wspec).profile, rtol=1e-9, atol=1e-12)


@given(st.floats(0.02, 0.45), st.sampled_from([1e-3, 1e-2]), st.integers(10, 400))
def test_boundary_monotonicity(split, eps, horizon):
    b = build_boundaries(split, eps, horizon)
    assert np.all(np.diff(b.lower[1:]) >= 0) and np.all(np.diff(b.upper[1:]) >= 0)
    assert np.all(b.lower[1:] < b.upper[1:])
    steps = np.arange(1, horizon + 1)
    assert np.all(b.upper[1:] >= 0) and np.all(b.lower[1:] <= steps)


@given(datasets(n_min=4), st.floats(0.5, 3))
def test_explicit_volumes_match_default_cells(ds, r):
    shape = ChangeShape.polynomial(r)
    base = statistic(ds, shape, WeightSpec(0.25))
    explicit = FunctionalDataset(Grid(ds.grid.points, volumes=ds.grid.cell_lengths), ds.mask, ds.values)
    assert np.array_equal(statistic(explicit, shape, WeightSpec(0.25)).profile, base.profile)
