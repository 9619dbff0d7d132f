"""Compiled inner loops for the permutation hot path."""

import numba
import numpy as np


@numba.njit(cache=True)
def fisher_yates(draws, n):
    """Row ``r`` shuffles ``range(n)``; ``draws[r, c]`` is the swap partner for ``i = n-1-c``."""
    rows = draws.shape[0]
    out = np.empty((rows, n), np.intp)
    for r in range(rows):
        for i in range(n):
            out[r, i] = i
        for c in range(n - 1):
            i = n - 1 - c
            j = draws[r, c]
            tmp = out[r, i]
            out[r, i] = out[r, j]
            out[r, j] = tmp
    return out


@numba.njit(inline="always")
def _sum_weight(var, gamma):
    if var <= 0.0:
        return 0.0
    if gamma == 0.5:
        return 1.0 / var
    if gamma == 0.25:
        return 1.0 / np.sqrt(var)
    return var ** (-2.0 * gamma)


@numba.njit(cache=True)
def _binomials(top):
    c = np.zeros((top + 1, top + 1))
    for m in range(top + 1):
        c[m, 0] = 1.0
        for l in range(1, m + 1):
            c[m, l] = c[m - 1, l - 1] + c[m - 1, l]
    return c


@numba.njit(cache=True)
def poly_profiles(perms, mask, ox, n_obs, xbar, cell, r, gamma, sum_mode, iweight, wtable):
    """Profiles for ``h(x) = (x)_+^r`` with integer ``r >= 0`` (``r = 0`` is abrupt).

    Walks ``k`` downwards keeping the suffix moments
    ``M_m(k) = sum_{i>k} (i-k)^m a_i`` via
    ``M_m(k-1) = sum_l C(m, l) M_l(k) + a_k``; the mask moments are integer
    valued and therefore exact.

    ``wtable[nk, N]`` holds the abrupt sum-type weights (used when ``r = 0``).
    """
    b_total, n = perms.shape
    q = mask.shape[1]
    top = 2 * r
    binom = _binomials(top)
    mo = np.zeros((top + 1, q))
    mx = np.zeros((r + 1, q))
    scale1 = 1.0 / float(n) ** r
    scale2 = scale1 * scale1
    out = np.zeros((b_total, n - 1))
    for b in range(b_total):
        mo[:, :] = 0.0
        mx[:, :] = 0.0
        for k in range(n - 1, 0, -1):
            row = perms[b, k]
            for j in range(q):
                a = mask[row, j]
                ax = ox[row, j]
                for m in range(top, -1, -1):
                    acc = a
                    for l in range(m + 1):
                        acc += binom[m, l] * mo[l, j]
                    mo[m, j] = acc
                for m in range(r, -1, -1):
                    acc = ax
                    for l in range(m + 1):
                        acc += binom[m, l] * mx[l, j]
                    mx[m, j] = acc
            total = 0.0
            for j in range(q):
                nn = n_obs[j]
                after = mo[0, j]
                nk = nn - after
                if nk <= 0.0 or after <= 0.0:
                    continue
                a1 = mo[r, j] * scale1
                y = mx[r, j] * scale1 - a1 * xbar[j]
                z2 = y * y / nn
                if gamma > 0.0:
                    if sum_mode:
                        if r == 0:
                            w = wtable[int(nk), int(nn)]
                        else:
                            a1n = a1 / nn
                            var = mo[top, j] * scale2 / nn - a1n * a1n
                            w = _sum_weight(var, gamma)
                    else:
                        w = iweight[k - 1]
                    z2 *= w
                total += z2 * cell[j]
            out[b, k - 1] = total
    return out


@numba.njit(cache=True)
def abrupt_profiles(perms, mask, ox, n_obs, xbar, cell, gamma, sum_mode, iweight, wtable):
    """Profiles for the abrupt shape; suffix counts and sums in one pass."""
    b_total, n = perms.shape
    q = mask.shape[1]
    after = np.empty(q)
    sx = np.empty(q)
    scaled = cell / n_obs
    out = np.zeros((b_total, n - 1))
    for b in range(b_total):
        after[:] = 0.0
        sx[:] = 0.0
        for k in range(n - 1, 0, -1):
            row = perms[b, k]
            total = 0.0
            for j in range(q):
                a = after[j] + mask[row, j]
                s = sx[j] + ox[row, j]
                after[j] = a
                sx[j] = s
                nn = n_obs[j]
                if a <= 0.0 or a >= nn:
                    continue
                y = s - a * xbar[j]
                z2 = y * y * scaled[j]
                if sum_mode and gamma > 0.0:
                    z2 *= wtable[int(nn - a), int(nn)]
                total += z2
            if not sum_mode and gamma > 0.0:
                total *= iweight[k - 1]
            out[b, k - 1] = total
    return out


@numba.njit(cache=True)
def linear_profiles(perms, mask, ox, n_obs, xbar, cell, gamma, sum_mode, iweight):
    """Profiles for ``h(x) = (x)_+`` via first and second suffix moments."""
    b_total, n = perms.shape
    q = mask.shape[1]
    cnt = np.empty(q)
    m1 = np.empty(q)
    m2 = np.empty(q)
    sx = np.empty(q)
    mx = np.empty(q)
    scaled = cell / n_obs
    inv_n = 1.0 / n
    out = np.zeros((b_total, n - 1))
    for b in range(b_total):
        cnt[:] = 0.0
        m1[:] = 0.0
        m2[:] = 0.0
        sx[:] = 0.0
        mx[:] = 0.0
        for k in range(n - 1, 0, -1):
            row = perms[b, k]
            total = 0.0
            for j in range(q):
                c = cnt[j] + mask[row, j]
                m2[j] += 2.0 * m1[j] + c
                m1[j] += c
                cnt[j] = c
                s = sx[j] + ox[row, j]
                mx[j] += s
                sx[j] = s
                nn = n_obs[j]
                if c <= 0.0 or c >= nn:
                    continue
                a1 = m1[j] * inv_n
                y = mx[j] * inv_n - a1 * xbar[j]
                z2 = y * y * scaled[j]
                if sum_mode and gamma > 0.0:
                    a1n = a1 / nn
                    z2 *= _sum_weight(m2[j] * inv_n * inv_n / nn - a1n * a1n, gamma)
                total += z2
            if not sum_mode and gamma > 0.0:
                total *= iweight[k - 1]
            out[b, k - 1] = total
    return out
