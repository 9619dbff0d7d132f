"""Stopping boundaries for sequential Monte-Carlo tests of a Bernoulli mean.

For a split point ``s`` the walk ``S_l = sum_{b <= l} I_b`` of i.i.d.
Bernoulli(``s``) indicators should rarely leave the corridor
``L_l < S_l < U_l``.  The boundaries are built greedily from the exact law of
the not-yet-stopped walk: with spending ``eps_l = eps * l / (l + 1000)`` each
side may absorb cumulative mass ``eps_l / 2``; at every step ``U_l`` is the
smallest and ``L_l`` the largest value that keeps the absorbed mass within
budget.  ``U_l`` is additionally kept nondecreasing (raising an upper boundary
only removes crossings).

Boundary arrays are indexed by ``l`` with a dummy entry at ``l = 0``.
"""

from __future__ import annotations

import io
import threading
from pathlib import Path

import numba
import numpy as np

__all__ = [
    "Boundaries",
    "BoundarySet",
    "build_boundaries",
    "spending",
    "write_boundaries",
    "read_boundaries",
    "cached_boundary_set",
]

SPENDING_DELAY = 1000


def spending(ell, eps: float):
    """Cumulative two-sided error allowed up to step ``ell``."""
    ell = np.asarray(ell, dtype=float)
    return eps * ell / (ell + SPENDING_DELAY)


@numba.njit(cache=True)
def _advance(dist, lo, spent_up, spent_lo, ell0, steps, p, eps, u_prev):
    # dist[j] is the probability that S = lo + j and the walk is still alive.
    width = dist.size
    buf = np.zeros(width + steps + 1)
    buf[:width] = dist
    lower = np.empty(steps, np.int64)
    upper = np.empty(steps, np.int64)
    q = 1.0 - p
    for t in range(steps):
        ell = ell0 + t + 1
        width += 1
        for j in range(width - 1, 0, -1):
            buf[j] = buf[j] * q + buf[j - 1] * p
        buf[0] = buf[0] * q
        half = 0.5 * eps * ell / (ell + 1000.0)

        # upper side: smallest U with absorbed tail within budget
        room = half - spent_up
        tail = 0.0
        cut = width
        while cut > 1 and tail + buf[cut - 1] <= room:
            tail += buf[cut - 1]
            cut -= 1
        u = lo + cut
        if u < u_prev:
            u = u_prev
            cut = u - lo
            tail = 0.0
            for j in range(cut, width):
                tail += buf[j]
        spent_up += tail
        for j in range(cut, width):
            buf[j] = 0.0
        width = cut
        u_prev = u

        # lower side: largest L with absorbed head within budget
        room = half - spent_lo
        head = 0.0
        start = 0
        while start < width - 1 and head + buf[start] <= room:
            head += buf[start]
            start += 1
        spent_lo += head
        if start > 0:
            for j in range(width - start):
                buf[j] = buf[j + start]
            for j in range(width - start, width):
                buf[j] = 0.0
            width -= start
            lo += start
        lower[t] = lo - 1
        upper[t] = u
    return buf[:width].copy(), lo, spent_up, spent_lo, lower, upper


class Boundaries:
    """Lower/upper stopping boundaries for one split point.

    Instances built with :func:`build_boundaries` keep the state of the
    dynamic programme and can be extended with :meth:`extend`; instances read
    from a table have a fixed horizon.
    """

    def __init__(self, split: float, eps: float, lower, upper, state=None):
        self.split = float(split)
        self.eps = float(eps)
        self.lower = np.asarray(lower, dtype=np.int64)
        self.upper = np.asarray(upper, dtype=np.int64)
        self._state = state

    @property
    def horizon(self) -> int:
        return self.lower.size - 1

    @property
    def extendable(self) -> bool:
        return self._state is not None

    def extend(self, horizon: int) -> "Boundaries":
        if horizon <= self.horizon:
            return self
        if self._state is None:
            raise ValueError("boundaries read from a table cannot be extended")
        dist, lo, spent_up, spent_lo = self._state
        dist, lo, spent_up, spent_lo, low, up = _advance(
            dist, lo, spent_up, spent_lo, self.horizon, horizon - self.horizon,
            self.split, self.eps, int(self.upper[-1]),
        )
        self._state = (dist, lo, spent_up, spent_lo)
        self.lower = np.concatenate((self.lower, low))
        self.upper = np.concatenate((self.upper, up))
        return self

    @property
    def absorbed(self) -> tuple[float, float]:
        """Exact (upper, lower) crossing mass up to the current horizon."""
        if self._state is None:
            raise ValueError("absorbed mass is only tracked for built boundaries")
        return self._state[2], self._state[3]

    def __repr__(self):
        return f"Boundaries(split={self.split}, eps={self.eps}, horizon={self.horizon})"


def build_boundaries(split: float, epsilon: float, horizon: int) -> Boundaries:
    """Greedy spending-sequence boundaries for Bernoulli(``split``) walks."""
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie in (0, 1)")
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    b = Boundaries(split, epsilon, [-1], [1], state=(np.ones(1), 0, 0.0, 0.0))
    return b.extend(int(horizon))


class BoundarySet:
    """Boundaries for every split point of a bucket set, made monotone in the split.

    For splits ``s_1 < s_2`` the upper boundary of ``s_2`` is raised to at
    least that of ``s_1`` and the lower boundary of ``s_1`` lowered to at most
    that of ``s_2``.  Both adjustments only shrink crossing events, so each
    split keeps its error budget.
    """

    def __init__(self, raw: list[Boundaries]):
        raw = sorted(raw, key=lambda b: b.split)
        splits = [b.split for b in raw]
        if len(set(splits)) != len(splits):
            raise ValueError("duplicate split points")
        eps = {b.eps for b in raw}
        if len(eps) > 1:
            raise ValueError("all boundaries must share one tolerance")
        self.raw = raw
        self.splits = np.array(splits)
        self.eps = raw[0].eps if raw else None
        self._clamp()

    @classmethod
    def build(cls, splits, eps: float, horizon: int = 1024) -> "BoundarySet":
        return cls([build_boundaries(s, eps, horizon) for s in splits])

    @property
    def horizon(self) -> int:
        return min(b.horizon for b in self.raw)

    @property
    def extendable(self) -> bool:
        return all(b.extendable for b in self.raw)

    def _clamp(self):
        h = self.horizon
        low = np.stack([b.lower[: h + 1] for b in self.raw])
        up = np.stack([b.upper[: h + 1] for b in self.raw])
        self.upper = np.maximum.accumulate(up, axis=0)
        self.lower = np.minimum.accumulate(low[::-1], axis=0)[::-1]
        if np.any(self.lower[:, 1:] >= self.upper[:, 1:]):
            raise ValueError("lower boundary must stay below the upper boundary")

    def ensure(self, horizon: int) -> "BoundarySet":
        if horizon <= self.horizon:
            return self
        if not self.extendable:
            return self
        target = max(horizon, 2 * self.horizon)
        for b in self.raw:
            b.extend(target)
        self._clamp()
        return self


_CACHE: dict[tuple, BoundarySet] = {}
_CACHE_LOCK = threading.Lock()


def cached_boundary_set(splits, eps: float) -> BoundarySet:
    """Process-wide shared :class:`BoundarySet` for ``(splits, eps)``."""
    key = (tuple(float(s) for s in sorted(splits)), float(eps))
    with _CACHE_LOCK:
        bs = _CACHE.get(key)
        if bs is None:
            bs = _CACHE[key] = BoundarySet.build(key[0], key[1])
    return bs


def write_boundaries(b: Boundaries, dest) -> None:
    """Write ``ell, lower, upper`` columns (tab separated) with a comment header."""
    buf = io.StringIO()
    buf.write(f"# split={b.split!r} eps={b.eps!r}\n")
    buf.write("ell\tlower\tupper\n")
    ell = np.arange(1, b.horizon + 1)
    rows = np.column_stack((ell, b.lower[1:], b.upper[1:]))
    np.savetxt(buf, rows, fmt="%d", delimiter="\t")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def read_boundaries(src) -> Boundaries:
    """Inverse of :func:`write_boundaries`."""
    text = src.read() if hasattr(src, "read") else Path(src).read_text()
    lines = text.splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, val = item.partition("=")
                meta[key] = float(val)
        elif line.strip() and not line.startswith("ell"):
            body.append(line)
    if "split" not in meta or "eps" not in meta:
        raise ValueError("boundary table lacks the '# split=... eps=...' header")
    rows = np.loadtxt(io.StringIO("\n".join(body)), dtype=np.int64, ndmin=2)
    if rows.shape[1] != 3 or not np.array_equal(rows[:, 0], np.arange(1, len(rows) + 1)):
        raise ValueError("boundary table must list ell = 1, 2, ... consecutively")
    lower = np.concatenate(([-1], rows[:, 1]))
    upper = np.concatenate(([1], rows[:, 2]))
    return Boundaries(meta["split"], meta["eps"], lower, upper)
