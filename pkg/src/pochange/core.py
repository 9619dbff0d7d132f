"""Missingness-aware weighted CUSUM statistics for partially observed curves.

Curves ``X_1, ..., X_n`` are recorded on a common grid ``u_1 < ... < u_q`` and
each curve is observed only on a subset of the grid (``mask``).  For a
candidate change ``k`` and a change function ``h`` the centred, ``h``-weighted
partial sum at location ``u`` is

    Y(u) = N(u)^{-1/2} * sum_i h((i - k) / n) O_i(u) (X_i(u) - Xbar(u))

where ``N(u)`` counts observed curves and ``Xbar`` is the pooled mean of the
observed values.  The statistic is the maximum over ``k`` of the
quadrature-approximated squared L2 norm of the weighted field
``Z = sqrt(w) * Y * 1[0 < N_k < N]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import simpson

from . import _kernels

__all__ = [
    "Grid",
    "ChangeShape",
    "WeightSpec",
    "FunctionalDataset",
    "CusumField",
    "TestResult",
    "counts",
    "pooled_mean",
    "y_process",
    "sum_weights",
    "integral_weights",
    "integral_weight_at",
    "z_process",
    "abrupt_z",
    "quadrature",
    "cusum_field",
    "statistic",
    "estimate_changepoint",
    "BatchStatistic",
]


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    """Sorted evaluation points in ``[0, 1]`` with their quadrature cells.

    ``volumes`` overrides the one-dimensional Voronoi cell lengths; use it for
    domains of dimension > 1 where the cell volumes ``vol(D ∩ V_j)`` are
    computed elsewhere.
    """

    points: np.ndarray
    volumes: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 1:
            raise ValueError("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("grid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        if self.volumes is not None:
            vol = np.asarray(self.volumes, dtype=float).ravel()
            if vol.shape != pts.shape:
                raise ValueError("one cell volume per grid point is required")
            if np.any(vol < 0) or not np.all(np.isfinite(vol)):
                raise ValueError("cell volumes must be finite and non-negative")
            object.__setattr__(self, "volumes", vol)

    @classmethod
    def equidistant(cls, q: int) -> "Grid":
        if q < 2:
            raise ValueError("an equidistant grid needs q >= 2")
        return cls(np.arange(q) / (q - 1))

    @property
    def q(self) -> int:
        return self.points.size

    @property
    def cell_bounds(self) -> np.ndarray:
        """``v_0 = 0``, midpoints between neighbours, ``v_q = 1``."""
        mid = 0.5 * (self.points[:-1] + self.points[1:])
        return np.concatenate(([0.0], mid, [1.0]))

    @property
    def cell_lengths(self) -> np.ndarray:
        if self.volumes is not None:
            return self.volumes.copy()
        return np.diff(self.cell_bounds)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        same_vol = (self.volumes is None and other.volumes is None) or (
            self.volumes is not None
            and other.volumes is not None
            and np.array_equal(self.volumes, other.volumes)
        )
        return np.array_equal(self.points, other.points) and same_vol


def quadrature(grid: Grid) -> np.ndarray:
    """Quadrature weights (Voronoi cell lengths) attached to the grid points."""
    return grid.cell_lengths


@dataclass(frozen=True)
class ChangeShape:
    """Temporal profile ``h`` of the mean shift, with ``h(x) = 0`` for ``x <= 0``.

    Build instances with :meth:`abrupt`, :meth:`polynomial`, :meth:`linear`
    or :meth:`tabulated`, or parse a label such as ``"abrupt"``, ``"lin"`` or
    ``"pol:0.5"`` with :meth:`parse`.
    """

    kind: Literal["abrupt", "polynomial", "tabulated"]
    r: float | None = None
    knots_x: tuple[float, ...] = ()
    knots_y: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.r is None or not self.r > 0 or not np.isfinite(self.r):
                raise ValueError("polynomial change needs an exponent r > 0")
        elif self.kind == "tabulated":
            x = np.asarray(self.knots_x, dtype=float)
            y = np.asarray(self.knots_y, dtype=float)
            if x.size < 2 or x.size != y.size:
                raise ValueError("tabulated change needs >= 2 (x, h(x)) knots")
            if np.any(np.diff(x) <= 0):
                raise ValueError("knot locations must be strictly increasing")
            if np.any(np.diff(y) < 0) or y[0] != 0.0:
                raise ValueError("knot values must start at 0 and be nondecreasing")
        elif self.kind != "abrupt":
            raise ValueError(f"unknown change kind {self.kind!r}")

    @classmethod
    def abrupt(cls) -> "ChangeShape":
        return cls("abrupt")

    @classmethod
    def polynomial(cls, r: float) -> "ChangeShape":
        return cls("polynomial", r=float(r))

    @classmethod
    def linear(cls) -> "ChangeShape":
        return cls("polynomial", r=1.0)

    @classmethod
    def tabulated(cls, x, y) -> "ChangeShape":
        return cls(
            "tabulated",
            knots_x=tuple(float(v) for v in x),
            knots_y=tuple(float(v) for v in y),
        )

    @classmethod
    def parse(cls, text: str) -> "ChangeShape":
        key = text.strip().lower()
        if key in ("abrupt", "abr"):
            return cls.abrupt()
        if key in ("lin", "linear"):
            return cls.linear()
        if key.startswith("pol:"):
            return cls.polynomial(float(key[4:]))
        raise ValueError(f"cannot parse change shape {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "abrupt":
            return "abrupt"
        if self.kind == "polynomial":
            return "lin" if self.r == 1.0 else f"pol:{self.r:g}"
        return "tabulated"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pos = x > 0
        if self.kind == "abrupt":
            return pos.astype(float)
        if self.kind == "polynomial":
            return np.where(pos, np.power(np.where(pos, x, 0.0), self.r), 0.0)
        vals = np.interp(x, self.knots_x, self.knots_y, left=0.0, right=self.knots_y[-1])
        return np.where(pos, vals, 0.0)

    def design(self, n: int) -> np.ndarray:
        """Matrix ``H[k-1, i-1] = h((i - k) / n)`` for ``k = 1..n-1``, ``i = 1..n``."""
        k = np.arange(1, n)[:, None]
        i = np.arange(1, n + 1)[None, :]
        return self((i - k) / n)


@dataclass(frozen=True)
class WeightSpec:
    """Tuning exponent ``gamma`` in ``[0, 1/2]`` and the weighting mode.

    ``"sum"`` uses the exact missingness-dependent weights, ``"integral"`` the
    location-free integral approximation evaluated at ``k / n``.
    """

    gamma: float = 0.0
    mode: Literal["sum", "integral"] = "sum"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 0.5:
            raise ValueError("gamma must lie in [0, 1/2]")
        if self.mode not in ("sum", "integral"):
            raise ValueError("weight mode must be 'sum' or 'integral'")


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """``n`` partially observed curves on a common grid.

    ``values`` holds ``NaN`` wherever ``mask`` is False.
    """

    grid: Grid
    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        values = np.asarray(self.values, dtype=float)
        if mask.ndim != 2 or values.shape != mask.shape:
            raise ValueError("mask and values must be n x q arrays of equal shape")
        n, q = mask.shape
        if q != self.grid.q:
            raise ValueError(f"dataset has {q} columns but grid has {self.grid.q} points")
        if n < 2:
            raise ValueError("at least two curves are required")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed values must be finite")
        empty = np.flatnonzero(mask.sum(axis=0) == 0)
        if empty.size:
            raise ValueError(f"grid columns without any observation: {empty.tolist()}")
        values = np.where(mask, values, np.nan)
        mask.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def q(self) -> int:
        return self.mask.shape[1]

    @property
    def filled(self) -> np.ndarray:
        """Values with unobserved entries replaced by 0 (so ``O * X`` is safe)."""
        return np.where(self.mask, self.values, 0.0)

    def permuted(self, perm) -> "FunctionalDataset":
        perm = np.asarray(perm)
        return FunctionalDataset(self.grid, self.mask[perm], self.values[perm])


@dataclass(frozen=True, eq=False)
class CusumField:
    z: np.ndarray
    cell_lengths: np.ndarray
    profile: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "profile", (self.z**2) @ self.cell_lengths)


@dataclass(frozen=True, eq=False)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    k_hat: int
    profile: np.ndarray


# --------------------------------------------------------------------------
# Reference operations (one candidate change at a time)
# --------------------------------------------------------------------------


def counts(mask) -> tuple[np.ndarray, np.ndarray]:
    """Column totals ``N`` and prefix totals ``N_k`` (row ``k-1`` holds ``N_k``)."""
    m = np.asarray(mask).astype(np.int64)
    nk = np.cumsum(m, axis=0)
    return nk[-1].copy(), nk


def pooled_mean(ds: FunctionalDataset) -> np.ndarray:
    n_obs, _ = counts(ds.mask)
    if np.any(n_obs == 0):
        raise ValueError("pooled mean undefined on columns without observations")
    return ds.filled.sum(axis=0) / n_obs


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must satisfy 1 <= k <= n-1 (got k={k}, n={n})")


def y_process(ds: FunctionalDataset, shape: ChangeShape, k: int) -> np.ndarray:
    """Centred ``h``-weighted partial sum at candidate change ``k``."""
    n = ds.n
    _check_k(k, n)
    h = shape((np.arange(1, n + 1) - k) / n)[:, None]
    n_obs, _ = counts(ds.mask)
    centred = np.where(ds.mask, ds.values - pooled_mean(ds), 0.0)
    return (h * centred).sum(axis=0) / np.sqrt(n_obs)


def _power_weight(braced, gamma: float) -> np.ndarray:
    """``braced^(-2 gamma)`` with the degenerate value 0 mapped to weight 0."""
    braced = np.asarray(braced, dtype=float)
    if gamma == 0.0:
        return np.ones_like(braced)
    out = np.zeros_like(braced)
    pos = braced > 0
    out[pos] = braced[pos] ** (-2.0 * gamma)
    return out


def sum_weights(mask, shape: ChangeShape, gamma: float, k: int) -> np.ndarray:
    """Exact missingness-dependent weight at every grid location."""
    m = np.asarray(mask, dtype=float)
    n = m.shape[0]
    _check_k(k, n)
    h = shape((np.arange(1, n + 1) - k) / n)
    n_obs = m.sum(axis=0)
    first = (h**2) @ m / n_obs
    second = (h @ m / n_obs) ** 2
    return _power_weight(np.maximum(first - second, 0.0), gamma)


def _integral_braced(shape: ChangeShape, t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    if shape.kind == "abrupt":
        return t * s
    if shape.kind == "polynomial":
        r = shape.r
        return s ** (2 * r + 1) * (1.0 / (2 * r + 1) - s / (r + 1) ** 2)
    panels = 10 * n
    out = np.empty(t.shape)
    for idx, upper in np.ndenumerate(s):
        if upper <= 0:
            out[idx] = 0.0
            continue
        z = np.linspace(0.0, upper, panels + 1)
        hz = shape(z)
        out[idx] = simpson(hz**2, x=z) - simpson(hz, x=z) ** 2
    return out


def integral_weight_at(shape: ChangeShape, gamma: float, t, n: int = 100) -> np.ndarray:
    """Integral-approximation weight at rescaled time ``t`` in ``[0, 1]``.

    ``n`` only sets the resolution of the Simpson rule for tabulated shapes.
    """
    if not 0.0 <= gamma <= 0.5:
        raise ValueError("gamma must lie in [0, 1/2]")
    braced = _integral_braced(shape, t, n)
    return _power_weight(np.maximum(braced, 0.0), gamma)


def integral_weights(shape: ChangeShape, gamma: float, k: int, n: int) -> float:
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must satisfy 0 <= k <= n-1 (got k={k}, n={n})")
    return float(integral_weight_at(shape, gamma, k / n, n))


def z_process(ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec, k: int) -> np.ndarray:
    y = y_process(ds, shape, k)
    n_obs, nk = counts(ds.mask)
    active = (nk[k - 1] > 0) & (nk[k - 1] < n_obs)
    if wspec.mode == "sum":
        w = sum_weights(ds.mask, shape, wspec.gamma, k)
    else:
        w = np.full(ds.q, integral_weights(shape, wspec.gamma, k, ds.n))
    return np.where(active, np.sqrt(w) * y, 0.0)


def abrupt_z(ds: FunctionalDataset, gamma: float, k: int) -> np.ndarray:
    """Abrupt-change field as a scaled difference of segment means."""
    _check_k(k, ds.n)
    if not 0.0 <= gamma <= 0.5:
        raise ValueError("gamma must lie in [0, 1/2]")
    n_obs, nk = counts(ds.mask)
    sums = np.cumsum(ds.filled, axis=0)
    n1 = nk[k - 1].astype(float)
    n2 = n_obs - n1
    s1 = sums[k - 1]
    s2 = sums[-1] - s1
    mu1 = np.divide(s1, n1, out=np.zeros_like(s1), where=n1 > 0)
    mu2 = np.divide(s2, n2, out=np.zeros_like(s2), where=n2 > 0)
    frac = n1 * n2 / n_obs.astype(float) ** 2
    return np.sqrt(n_obs) * frac ** (1.0 - gamma) * (mu1 - mu2)


# --------------------------------------------------------------------------
# Vectorised statistic
# --------------------------------------------------------------------------


class BatchStatistic:
    """Profiles of many row-permutations of one dataset at once.

    Everything invariant under joint row permutation of ``(values, mask)``
    is computed once: column counts, pooled means, quadrature weights, the
    change design matrix and the integral-type weights.
    """

    def __init__(self, ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec):
        self.ds = ds
        self.shape = shape
        self.wspec = wspec
        self.n, self.q = ds.n, ds.q
        self.cell = quadrature(ds.grid)
        self._mask = ds.mask.astype(float)
        self._ox = ds.filled
        self.n_obs = self._mask.sum(axis=0)
        self.xbar = self._ox.sum(axis=0) / self.n_obs
        self._sqrt_n = np.sqrt(self.n_obs)
        t = np.arange(1, self.n) / self.n
        self.integral_w = integral_weight_at(shape, wspec.gamma, t, self.n)
        if shape.kind != "abrupt":
            self.design = shape.design(self.n)
            self.design_sq = self.design**2
        self._order = self._recursion_order()
        if self._order is not None:
            self._wtable = self._abrupt_weight_table()

    # Largest integer exponent handled by the moment recursion.
    MAX_RECURSION_ORDER = 4

    def _recursion_order(self):
        if self.shape.kind == "abrupt":
            return 0
        r = self.shape.r
        if self.shape.kind == "polynomial" and float(r).is_integer() and r <= self.MAX_RECURSION_ORDER:
            return int(r)
        return None

    def _abrupt_weight_table(self) -> np.ndarray:
        size = self.n + 1
        nk = np.arange(size, dtype=float)[:, None]
        tot = np.arange(size, dtype=float)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = nk * (tot - nk) / tot**2
            table = np.where(frac > 0, frac, 1.0) ** (-2.0 * self.wspec.gamma)
        return np.where(frac > 0, table, 0.0)

    def fields_sq(self, perms: np.ndarray) -> np.ndarray:
        """Squared weighted fields, shape ``(n-1, B, q)``."""
        perms = np.atleast_2d(np.asarray(perms, dtype=np.intp))
        rows = perms.T  # (n, B): gather straight into (n, B, q) layout
        mask = self._mask[rows]
        ox = self._ox[rows]
        n, b, q = mask.shape
        nk = np.cumsum(mask[:-1], axis=0)
        active = (nk > 0) & (nk < self.n_obs)
        gamma = self.wspec.gamma

        if self.shape.kind == "abrupt":
            sk = np.cumsum(ox[:-1], axis=0)
            y_sq = (sk - nk * self.xbar) ** 2 / self.n_obs
            if self.wspec.mode == "sum" and gamma > 0:
                frac = nk * (self.n_obs - nk) / self.n_obs**2
                w = np.where(active, np.where(active, frac, 1.0) ** (-2.0 * gamma), 0.0)
                return w * y_sq
        else:
            m2 = mask.reshape(n, b * q)
            a1 = (self.design @ m2).reshape(n - 1, b, q)
            sx = (self.design @ ox.reshape(n, b * q)).reshape(n - 1, b, q)
            y_sq = (sx - a1 * self.xbar) ** 2 / self.n_obs
            if self.wspec.mode == "sum" and gamma > 0:
                a2 = (self.design_sq @ m2).reshape(n - 1, b, q)
                a1 /= self.n_obs
                var = a2 / self.n_obs - a1 * a1
                ok = active & (var > 0)
                w = np.where(ok, np.where(ok, var, 1.0) ** (-2.0 * gamma), 0.0)
                return w * y_sq
        if self.wspec.mode == "integral" and gamma > 0:
            y_sq *= self.integral_w[:, None, None]
        return np.where(active, y_sq, 0.0)

    def profiles(self, perms: np.ndarray) -> np.ndarray:
        """Quadrature profiles, shape ``(B, n-1)``."""
        if self._order is None:
            return self.profiles_dense(perms)
        perms = np.ascontiguousarray(np.atleast_2d(perms), dtype=np.intp)
        gamma = float(self.wspec.gamma)
        sum_mode = self.wspec.mode == "sum"
        if self._order == 0:
            return _kernels.abrupt_profiles(
                perms, self._mask, self._ox, self.n_obs, self.xbar, self.cell,
                gamma, sum_mode, self.integral_w, self._wtable,
            )
        if self._order == 1:
            return _kernels.linear_profiles(
                perms, self._mask, self._ox, self.n_obs, self.xbar, self.cell,
                gamma, sum_mode, self.integral_w,
            )
        return _kernels.poly_profiles(
            perms, self._mask, self._ox, self.n_obs, self.xbar, self.cell,
            self._order, float(self.wspec.gamma), self.wspec.mode == "sum",
            self.integral_w, self._wtable,
        )

    def profiles_dense(self, perms: np.ndarray) -> np.ndarray:
        """Same as :meth:`profiles` through the dense matrix route."""
        return (self.fields_sq(perms) @ self.cell).T

    def __call__(self, perms: np.ndarray) -> np.ndarray:
        return self.profiles(perms).max(axis=1)


def cusum_field(ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec) -> CusumField:
    """Weighted field ``Z[k-1, j]`` for all ``k = 1..n-1`` (signs dropped).

    The entries are the non-negative square roots of ``Z^2``; use
    :func:`z_process` or :func:`abrupt_z` when the sign matters.
    """
    z_sq = BatchStatistic(ds, shape, wspec).fields_sq(np.arange(ds.n)[None, :])[:, 0, :]
    return CusumField(np.sqrt(z_sq), quadrature(ds.grid))


def statistic(ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec) -> TestResult:
    """Maximum over ``k`` of the quadrature-approximated squared field norm."""
    profile = BatchStatistic(ds, shape, wspec).profiles(np.arange(ds.n)[None, :])[0]
    k_hat = int(np.argmax(profile)) + 1
    return TestResult(float(profile[k_hat - 1]), k_hat, profile)


def estimate_changepoint(result: TestResult) -> int:
    """Location of the profile maximum (smallest ``k`` on ties)."""
    return int(np.argmax(result.profile)) + 1
