"""Deliberately naive reference implementations used as test oracles.

Everything here is written with explicit Python loops straight from the
defining formulas and shares no code with the package.
"""

import itertools
import math

import numpy as np
from scipy import integrate


def h_value(kind, r, x):
    if x <= 0:
        return 0.0
    if kind == "abrupt":
        return 1.0
    return x**r


def voronoi_cells(points):
    q = len(points)
    out = []
    for j in range(q):
        left = 0.0 if j == 0 else (points[j - 1] + points[j]) / 2
        right = 1.0 if j == q - 1 else (points[j] + points[j + 1]) / 2
        out.append(right - left)
    return out


def integral_weight_quad(kind, r, gamma, t):
    """Weight from the defining integrals, evaluated by adaptive quadrature."""
    upper = 1.0 - t
    if gamma == 0:
        return 1.0
    if upper <= 0:
        return 0.0
    f1 = integrate.quad(lambda z: h_value(kind, r, z) ** 2, 0, upper, epsabs=1e-14, epsrel=1e-13)[0]
    f2 = integrate.quad(lambda z: h_value(kind, r, z), 0, upper, epsabs=1e-14, epsrel=1e-13)[0]
    braced = f1 - f2**2
    return braced ** (-2 * gamma) if braced > 0 else 0.0


def naive_profile(values, mask, points, kind="abrupt", r=1.0, gamma=0.0, mode="sum"):
    """Profile over k = 1..n-1 by direct evaluation of every sum."""
    n, q = len(mask), len(mask[0])
    cells = voronoi_cells(points)
    prof = []
    for k in range(1, n):
        total = 0.0
        for j in range(q):
            big_n = sum(1 for i in range(n) if mask[i][j])
            nk = sum(1 for i in range(k) if mask[i][j])
            if not 0 < nk < big_n:
                continue
            xbar = sum(values[i][j] for i in range(n) if mask[i][j]) / big_n
            y = 0.0
            s1 = s2 = 0.0
            for i in range(n):
                if mask[i][j]:
                    hv = h_value(kind, r, (i + 1 - k) / n)
                    y += hv * (values[i][j] - xbar)
                    s1 += hv
                    s2 += hv * hv
            y /= math.sqrt(big_n)
            if gamma == 0:
                w = 1.0
            elif mode == "sum":
                var = s2 / big_n - (s1 / big_n) ** 2
                w = var ** (-2 * gamma) if var > 0 else 0.0
            else:
                w = integral_weight_quad(kind, r, gamma, k / n)
            total += w * y * y * cells[j]
        prof.append(total)
    return prof


def complete_cusum_profile(values, points, kind="abrupt", r=1.0, gamma=0.0):
    """Full-data statistic ``nu(k, n) ||Y_{n,k,h}||^2`` with ``1/sqrt(n)`` scaling."""
    n, q = len(values), len(values[0])
    cells = voronoi_cells(points)
    prof = []
    for k in range(1, n):
        hv = [h_value(kind, r, (i + 1 - k) / n) for i in range(n)]
        var = sum(v * v for v in hv) / n - (sum(hv) / n) ** 2
        nu = 1.0 if gamma == 0 else (var ** (-2 * gamma) if var > 0 else 0.0)
        total = 0.0
        for j in range(q):
            col = [values[i][j] for i in range(n)]
            mean = sum(col) / n
            y = sum(hv[i] * (col[i] - mean) for i in range(n)) / math.sqrt(n)
            total += nu * y * y * cells[j]
        prof.append(total)
    return prof


def classical_cusum_profile(values, points, gamma=0.0):
    """Abrupt full-data field from the partial-sum form, weighted by ``[t(1-t)]^(-2 gamma)``."""
    n, q = len(values), len(values[0])
    cells = voronoi_cells(points)
    prof = []
    for k in range(1, n):
        t = k / n
        w = (t * (1 - t)) ** (-2 * gamma)
        total = 0.0
        for j in range(q):
            col = [values[i][j] for i in range(n)]
            wn = (sum(col[:k]) - k / n * sum(col)) / math.sqrt(n)
            total += w * wn * wn * cells[j]
        prof.append(total)
    return prof


def two_sample_profile(values, mask, points):
    """Two-sample norms of centred segment means, summed."""
    n, q = len(mask), len(mask[0])
    cells = voronoi_cells(points)
    prof = []
    for k in range(1, n):
        total = 0.0
        for j in range(q):
            first = [values[i][j] for i in range(k) if mask[i][j]]
            second = [values[i][j] for i in range(k, n) if mask[i][j]]
            if not first or not second:
                continue
            allv = first + second
            xbar = sum(allv) / len(allv)
            m1 = sum(first) / len(first)
            m2 = sum(second) / len(second)
            total += (len(first) * (m1 - xbar) ** 2 + len(second) * (m2 - xbar) ** 2) * cells[j]
        prof.append(total)
    return prof


def brute_force_exact_p(values, mask, points, kind="abrupt", r=1.0, gamma=0.0, mode="sum"):
    """Enumerate all joint row permutations, recomputing every statistic from scratch."""
    n = len(mask)
    t = max(naive_profile(values, mask, points, kind, r, gamma, mode))
    scale = max(abs(t), 1e-300)
    hits = 0
    total = 0
    for perm in itertools.permutations(range(n)):
        pv = [values[i] for i in perm]
        pm = [mask[i] for i in perm]
        stat = max(naive_profile(pv, pm, points, kind, r, gamma, mode))
        hits += stat > t + 1e-10 * scale
        total += 1
    return hits / total


def random_masked(rng, n, q, p_obs=0.7):
    """Random data with every column observed at least once (as nested lists)."""
    while True:
        mask = rng.random((n, q)) < p_obs
        if mask.any(axis=0).all():
            break
    values = np.where(mask, rng.normal(size=(n, q)), np.nan)
    return values, mask
