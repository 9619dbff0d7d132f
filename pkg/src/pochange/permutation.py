"""Permutation p-values: exact enumeration, plain Monte Carlo, and the
sequential bucket procedure with bounded resampling risk.

A *statistic* is any callable mapping an integer array of permutations with
shape ``(B, n)`` to ``B`` statistic values.  It may expose ``observed`` (the
value at the identity) and ``atol`` (absolute tolerance under which two
values count as tied, to absorb floating-point noise); both default to the
identity evaluation and 0.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .boundaries import BoundarySet, cached_boundary_set
from .core import BatchStatistic, ChangeShape, FunctionalDataset, WeightSpec

__all__ = [
    "PermutationPlan",
    "Bucket",
    "BucketSet",
    "Decision",
    "exact_p",
    "vanilla_p",
    "seq_decide",
    "seq_decide_stream",
    "permute_adapter",
    "PermutationAdapter",
    "TAU_MAX",
]

TAU_MAX = 10**7
ENUMERATION_CAP = 8


# --------------------------------------------------------------------------
# Permutations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PermutationPlan:
    """Reproducible stream of uniform random permutations of ``range(n)``.

    Permutation ``b`` lives in block ``b // block``; every block is shuffled
    by a Philox generator keyed by ``seed`` whose counter is offset by the
    block index, so the permutation depends only on ``(seed, b, n)``.
    """

    seed: int
    n: int
    block: int = 64

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def block_perms(self, m: int) -> np.ndarray:
        bitgen = np.random.Philox(key=self.seed, counter=int(m) << 64)
        rng = np.random.Generator(bitgen)
        # column c holds the Fisher-Yates partner of position n-1-c
        highs = np.arange(self.n, 1, -1)
        draws = rng.integers(0, highs, size=(self.block, self.n - 1))
        return _kernels.fisher_yates(draws.astype(np.intp), self.n)

    def perms(self, start: int, stop: int) -> np.ndarray:
        """Permutations with indices ``start <= b < stop``."""
        if stop <= start:
            return np.empty((0, self.n), dtype=np.intp)
        first, last = start // self.block, (stop - 1) // self.block
        blocks = np.concatenate([self.block_perms(m) for m in range(first, last + 1)])
        off = first * self.block
        return blocks[start - off : stop - off]

    def permutation(self, b: int) -> np.ndarray:
        return self.perms(b, b + 1)[0]


def _observed(statistic, n: int) -> float:
    t = getattr(statistic, "observed", None)
    if t is None:
        t = float(np.asarray(statistic(np.arange(n)[None, :]))[0])
    return float(t)


def _exceed(statistic, perms, t: float) -> np.ndarray:
    atol = getattr(statistic, "atol", 0.0)
    return np.asarray(statistic(perms)) > t + atol


# --------------------------------------------------------------------------
# Buckets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bucket:
    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(f"bucket ({self.lo}, {self.hi}) must satisfy 0 <= lo < hi <= 1")

    def __contains__(self, p: float) -> bool:
        above = p >= self.lo if self.lo_closed else p > self.lo
        below = p <= self.hi if self.hi_closed else p < self.hi
        return above and below

    def covers(self, a: float, b: float) -> bool:
        """Whether the open interval ``(a, b)`` lies inside the bucket."""
        return self.lo <= a and b <= self.hi

    def __str__(self):
        return f"{'[' if self.lo_closed else '('}{self.lo:g}, {self.hi:g}{']' if self.hi_closed else ')'}"


_INTERVAL = re.compile(r"^\s*([\[(])\s*([^,\s]+)\s*,\s*([^\])\s]+)\s*([\])])\s*$")


def _parse_bucket(text: str) -> Bucket:
    m = _INTERVAL.match(text)
    if m:
        lo, hi = float(m.group(2)), float(m.group(3))
        return Bucket(lo, hi, m.group(1) == "[" and lo == 0.0, m.group(4) == "]" and hi == 1.0)
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"cannot parse bucket {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    return Bucket(lo, hi, lo == 0.0, hi == 1.0)


@dataclass(frozen=True)
class BucketSet:
    """Overlapping p-value buckets covering ``[0, 1]``.

    Every split point (interior bucket endpoint) must be an interior point of
    some bucket; otherwise the procedure need not stop for p-values equal to
    that split.
    """

    buckets: tuple[Bucket, ...]

    def __post_init__(self):
        if not self.buckets:
            raise ValueError("need at least one bucket")
        object.__setattr__(self, "buckets", tuple(sorted(self.buckets, key=lambda b: (b.lo, b.hi))))
        probes = sorted({0.0, 1.0, *self.splits})
        mids = [(a + b) / 2 for a, b in zip(probes, probes[1:])]
        for p in (*probes, *mids):
            if not any(p in b for b in self.buckets):
                raise ValueError(f"buckets do not cover p = {p:g}")
        for s in self.splits:
            if not any(b.lo < s < b.hi for b in self.buckets):
                raise ValueError(f"split point {s:g} is not interior to any bucket")

    @property
    def splits(self) -> np.ndarray:
        pts = {b.lo for b in self.buckets} | {b.hi for b in self.buckets}
        return np.array(sorted(p for p in pts if 0.0 < p < 1.0))

    @classmethod
    def default(cls) -> "BucketSet":
        return cls((Bucket(0.0, 0.05, True), Bucket(0.04, 0.06), Bucket(0.05, 1.0, hi_closed=True)))

    @classmethod
    def stars(cls) -> "BucketSet":
        return cls((
            Bucket(0.0, 1e-3, True),
            Bucket(1e-3, 0.01),
            Bucket(0.01, 0.05),
            Bucket(0.05, 1.0, hi_closed=True),
            Bucket(5e-4, 2e-3),
            Bucket(8e-3, 1.2e-2),
            Bucket(4.5e-2, 6.5e-2),
        ))

    @classmethod
    def parse(cls, text: str) -> "BucketSet":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        return cls(tuple(_parse_bucket(ln) for ln in lines if ln))

    @classmethod
    def from_spec(cls, spec: str) -> "BucketSet":
        """``"default"``, ``"stars"`` or a path to a file with one bucket per line."""
        if spec == "default":
            return cls.default()
        if spec == "stars":
            return cls.stars()
        return cls.parse(Path(spec).read_text())

    def first_covering(self, a: float, b: float) -> Bucket | None:
        for bucket in self.buckets:
            if bucket.covers(a, b):
                return bucket
        return None

    def __str__(self):
        return "{" + ", ".join(str(b) for b in self.buckets) + "}"


# --------------------------------------------------------------------------
# Exact and plain Monte-Carlo p-values
# --------------------------------------------------------------------------


def exact_p(statistic: Callable, n: int, cap: int = ENUMERATION_CAP, chunk: int = 5040, valid: bool = False) -> float:
    """Share of all ``n!`` permutations whose statistic strictly exceeds the observed one.

    ``valid=True`` counts ties as well (``#{T_pi >= t} / n!``).  Statistics
    that depend on the data only through a split of the rows are tied on
    whole cosets of permutations, and only the tie-counting p-value keeps the
    level exactly.
    """
    if n > cap:
        raise ValueError(f"exact enumeration refused for n={n} > cap={cap}")
    t = _observed(statistic, n)
    atol = getattr(statistic, "atol", 0.0)
    hits = 0
    it = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        vals = np.asarray(statistic(block))
        hits += int((vals >= t - atol).sum() if valid else (vals > t + atol).sum())
    return hits / math.factorial(n)


def vanilla_p(statistic: Callable, plan: PermutationPlan, B: int, valid: bool = False, chunk: int = 4096) -> float:
    """Plain Monte-Carlo p-value from permutations ``0..B-1`` of ``plan``.

    ``valid=True`` returns ``(1 + #{T_b >= t}) / (B + 1)`` instead of the
    share of strict exceedances.
    """
    if B < 1:
        raise ValueError("B must be positive")
    t = _observed(statistic, plan.n)
    atol = getattr(statistic, "atol", 0.0)
    hits = 0
    for start in range(0, B, chunk):
        vals = np.asarray(statistic(plan.perms(start, min(B, start + chunk))))
        hits += int((vals >= t - atol).sum() if valid else (vals > t + atol).sum())
    return (1 + hits) / (B + 1) if valid else hits / B


# --------------------------------------------------------------------------
# Sequential procedure
# --------------------------------------------------------------------------


@dataclass
class Decision:
    bucket: Bucket
    tau: int
    s_tau: int
    flagged: bool = False
    interval: tuple[float, float] = (0.0, 1.0)
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bucket_lo": self.bucket.lo,
            "bucket_hi": self.bucket.hi,
            "bucket": str(self.bucket),
            "tau": self.tau,
            "s_tau": self.s_tau,
            "flagged": self.flagged,
        }


def seq_decide_stream(
    indicators: Callable[[int, int], np.ndarray],
    buckets: BucketSet | None = None,
    epsilon: float = 1e-3,
    tau_max: int = TAU_MAX,
    boundaries: BoundarySet | None = None,
    trace: bool = False,
    first_chunk: int = 64,
    max_chunk: int = 8192,
) -> Decision:
    """Run the bucket procedure on an indicator stream.

    ``indicators(start, stop)`` returns the 0/1 indicators with indices
    ``start <= b < stop`` (step ``l = b + 1``).  Indicators may be computed
    in chunks ahead of time, but they are folded into the stopping state
    strictly in index order.
    """
    buckets = buckets or BucketSet.default()
    splits = buckets.splits
    if boundaries is None:
        boundaries = cached_boundary_set(splits, epsilon)
    elif not np.allclose(boundaries.splits, splits):
        raise ValueError("boundary splits do not match the bucket split points")
    lo, hi = 0.0, 1.0
    events = []
    s_prev = 0
    ell = 0
    chunk = first_chunk
    while ell < tau_max:
        stop = min(ell + chunk, tau_max)
        boundaries.ensure(stop)
        if boundaries.horizon < stop:
            stop = boundaries.horizon
            if stop <= ell:
                break
        ind = np.asarray(indicators(ell, stop), dtype=np.int64)
        path = s_prev + np.cumsum(ind)
        steps = np.arange(ell + 1, stop + 1)
        pos = 0  # offset inside this chunk still to be scanned
        while pos < path.size:
            live = np.flatnonzero((splits > lo) & (splits < hi))
            if live.size == 0:
                break
            seg = path[pos:]
            idx = steps[pos:]
            up = seg[None, :] >= boundaries.upper[live][:, idx]
            down = seg[None, :] <= boundaries.lower[live][:, idx]
            hit = up | down
            any_hit = hit.any(axis=1)
            if not any_hit.any():
                pos = path.size
                break
            first = np.where(any_hit, hit.argmax(axis=1), seg.size)
            when = int(first.min())
            at = first == when
            ups = live[at & up[:, when]]
            downs = live[at & down[:, when]]
            if ups.size:
                lo = max(lo, float(splits[ups].max()))
            if downs.size:
                hi = min(hi, float(splits[downs].min()))
            step = int(idx[when])
            if trace:
                events.append({
                    "ell": step,
                    "s": int(seg[when]),
                    "upper": splits[ups].tolist(),
                    "lower": splits[downs].tolist(),
                    "interval": (lo, hi),
                })
            chosen = buckets.first_covering(lo, hi)
            if chosen is not None:
                return Decision(chosen, step, int(seg[when]), False, (lo, hi), events)
            pos += when + 1
        s_prev = int(path[-1])
        ell = stop
        chunk = min(2 * chunk, max_chunk)
    mid = 0.5 * (lo + hi)
    fallback = next((b for b in buckets.buckets if mid in b), buckets.buckets[-1])
    return Decision(fallback, ell, s_prev, True, (lo, hi), events)


def seq_decide(
    statistic: Callable,
    plan: PermutationPlan,
    buckets: BucketSet | None = None,
    epsilon: float = 1e-3,
    tau_max: int = TAU_MAX,
    boundaries: BoundarySet | None = None,
    trace: bool = False,
) -> Decision:
    """Sequential Monte-Carlo permutation test returning a p-value bucket."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    t = _observed(statistic, plan.n)

    def stream(start, stop):
        return _exceed(statistic, plan.perms(start, stop), t)

    return seq_decide_stream(stream, buckets, epsilon, tau_max, boundaries, trace)


# --------------------------------------------------------------------------
# Adapter for the functional change statistic
# --------------------------------------------------------------------------


class PermutationAdapter:
    """Statistic of jointly permuted ``(curve, mask)`` rows.

    Relative tie tolerance: values within ``1e-10`` of the larger of the
    observed statistic and the uncentred data energy count as ties.
    """

    RTOL = 1e-10

    def __init__(self, ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec, chunk: int = 512):
        self.batch = BatchStatistic(ds, shape, wspec)
        self.n = ds.n
        self.chunk = chunk
        ident = np.arange(ds.n)[None, :]
        self.profile = self.batch.profiles(ident)[0]
        self.observed = float(self.profile.max())
        energy = float((ds.filled**2).sum(axis=0) @ self.batch.cell)
        self.atol = self.RTOL * max(self.observed, energy)

    @property
    def k_hat(self) -> int:
        return int(np.argmax(self.profile)) + 1

    def __call__(self, perms) -> np.ndarray:
        perms = np.atleast_2d(perms)
        if len(perms) <= self.chunk:
            return self.batch(perms)
        return np.concatenate([self.batch(perms[i : i + self.chunk]) for i in range(0, len(perms), self.chunk)])


def permute_adapter(ds: FunctionalDataset, shape: ChangeShape, wspec: WeightSpec) -> PermutationAdapter:
    return PermutationAdapter(ds, shape, wspec)
