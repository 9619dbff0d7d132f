"""Synthetic partially observed curves and Monte-Carlo size/power studies.

Curves follow ``X_i(u) = delta(u) h((i - k) / n) + eta_i(u)`` with a truncated
cosine expansion for ``eta`` and one of several random observation-set
designs.  Every random quantity of a replication is derived from
``(seed, rep)`` alone, so all cells of a study see the same noise, masks and
permutation streams (common random numbers) and the table does not depend on
the number of workers.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ChangeShape, FunctionalDataset, Grid, WeightSpec
from .permutation import (
    TAU_MAX,
    BucketSet,
    PermutationAdapter,
    PermutationPlan,
    exact_p,
    seq_decide,
    vanilla_p,
)

__all__ = [
    "NoiseSpec",
    "Delta",
    "ScenarioSpec",
    "MissingnessSpec",
    "MethodSpec",
    "RepSeeds",
    "StudyConfig",
    "StudyCell",
    "RepOutcome",
    "gen_noise",
    "gen_mask",
    "gen_dataset",
    "run_rep",
    "run_cell",
    "run_study",
    "summarize",
    "workers_from_env",
    "STUDY_COLUMNS",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "POCHANGE_WORKERS"
MAX_MASK_DRAWS = 1000


# --------------------------------------------------------------------------
# Specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """``eta(u) = sum_{j=0}^{J} sqrt(scale * base^-j) xi_j cos(j pi u)``."""

    J: int = 20
    scale: float = 0.5
    base: float = 3.0

    def __post_init__(self):
        if self.J < 0 or self.scale <= 0 or self.base <= 1:
            raise ValueError("need J >= 0, scale > 0 and base > 1")

    @property
    def lambdas(self) -> np.ndarray:
        return self.scale * self.base ** -np.arange(self.J + 1, dtype=float)

    def variance(self, u) -> np.ndarray:
        """Pointwise variance ``sum_j lambda_j cos^2(j pi u)``."""
        u = np.asarray(u, dtype=float)
        basis = np.cos(np.pi * np.multiply.outer(u, np.arange(self.J + 1)))
        return basis**2 @ self.lambdas


@dataclass(frozen=True)
class Delta:
    """Change magnitude ``delta(u)``.

    kinds: ``constant`` (``c``), ``expdecay`` (``a * exp(-b u)``) and
    ``normalized`` (constant ``c`` with ``c (1 - kappa)^r = 1``; ``r = 0``
    for abrupt changes).
    """

    kind: str = "constant"
    c: float = 1.0
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "expdecay", "normalized"):
            raise ValueError(f"unknown delta kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Delta":
        """``0.7``, ``exp:1.2,2`` or ``normalized``."""
        text = text.strip()
        if text == "normalized":
            return cls("normalized")
        if text.startswith("exp:"):
            a, b = (float(v) for v in text[4:].split(","))
            return cls("expdecay", a=a, b=b)
        return cls("constant", c=float(text))

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return f"{self.c:g}"
        if self.kind == "expdecay":
            return f"exp:{self.a:g},{self.b:g}"
        return "normalized"

    def __call__(self, u, kappa: float, shape: ChangeShape) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full(u.shape, self.c)
        if self.kind == "expdecay":
            return self.a * np.exp(-self.b * u)
        reach = float(shape(np.array([1.0 - kappa]))[0])
        if reach <= 0:
            raise ValueError("normalized delta needs h(1 - kappa) > 0")
        return np.full(u.shape, 1.0 / reach)


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative model of the mean: change at ``k = floor(n kappa)``."""

    n: int
    kappa: float = 0.5
    shape: ChangeShape = field(default_factory=ChangeShape.abrupt)
    delta: Delta = field(default_factory=Delta)
    null: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")

    @property
    def change_index(self) -> int:
        return math.floor(self.n * self.kappa)

    def signal(self, grid: Grid) -> np.ndarray:
        if self.null:
            return np.zeros((self.n, grid.q))
        i = np.arange(1, self.n + 1)
        g = self.shape((i - self.change_index) / self.n)
        return np.outer(g, self.delta(grid.points, self.kappa, self.shape))


@dataclass(frozen=True)
class MissingnessSpec:
    """Observation-set design: ``M1``, ``M2``, ``M3``, ``C`` or ``M2drift``."""

    pattern: str = "M1"

    PATTERNS = ("M1", "M2", "M3", "C", "M2drift")

    def __post_init__(self):
        canon = {p.lower(): p for p in self.PATTERNS}
        key = self.pattern.strip().lower()
        if key == "complete":
            key = "c"
        if key not in canon:
            raise ValueError(f"unknown missingness pattern {self.pattern!r}")
        object.__setattr__(self, "pattern", canon[key])


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_noise(nspec: NoiseSpec, grid: Grid, n: int, seed) -> np.ndarray:
    rng = _rng(seed)
    xi = rng.standard_normal((n, nspec.J + 1))
    basis = np.cos(np.pi * np.outer(np.arange(nspec.J + 1), grid.points))
    return (xi * np.sqrt(nspec.lambdas)) @ basis


def _outside(u, lo, hi) -> np.ndarray:
    return (u[None, :] < lo[:, None]) | (u[None, :] > hi[:, None])


def _draw_mask(pattern: str, u: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if pattern == "C":
        return np.ones((n, u.size), dtype=bool)
    if pattern == "M1":
        u1, u2 = rng.random(n), rng.random(n)
        centre = 1.5 * np.sqrt(u1)
        return _outside(u, centre - u2 / 2, centre + u2 / 2)
    if pattern in ("M2", "M2drift"):
        v1, v2, u2 = rng.random(n), rng.random(n), rng.random(n)
        if pattern == "M2":
            prob = np.full(n, 0.7)
        else:
            prob = np.where(np.arange(1, n + 1) <= n / 2, 0.7, 0.9)
        hit = rng.random(n) < prob
        centre = np.sqrt((v1 + v2) / 2)
        keep = _outside(u, centre - u2 / 5, centre + u2 / 5)
        return keep | ~hit[:, None]
    # M3
    full = rng.random(n) < 0.3
    left = rng.random(n) < 0.5
    root = np.sqrt(rng.random(n))
    hi, lo = (1 + root) / 2, (1 - root) / 2
    mask = np.where(left[:, None], u[None, :] <= hi[:, None], u[None, :] >= lo[:, None])
    return mask | full[:, None]


def gen_mask(mspec: MissingnessSpec, grid: Grid, n: int, seed) -> np.ndarray:
    """Observation mask; re-drawn with a fresh sub-seed while a column is empty."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for attempt in range(MAX_MASK_DRAWS):
        child = np.random.SeedSequence(seq.entropy, spawn_key=(*seq.spawn_key, attempt))
        mask = _draw_mask(mspec.pattern, grid.points, n, np.random.default_rng(child))
        if mask.any(axis=0).all():
            if attempt:
                log.info("mask %s n=%d re-drawn %d time(s) for empty columns", mspec.pattern, n, attempt)
            return mask
    raise RuntimeError(f"no valid {mspec.pattern} mask after {MAX_MASK_DRAWS} draws")


@dataclass(frozen=True)
class RepSeeds:
    """Independent seeds for noise, mask and permutations of one replication."""

    noise: np.random.SeedSequence
    mask: np.random.SeedSequence
    perm: int

    @classmethod
    def derive(cls, seed: int, rep: int) -> "RepSeeds":
        noise, mask, perm = np.random.SeedSequence(seed, spawn_key=(rep,)).spawn(3)
        return cls(noise, mask, int(perm.generate_state(1, np.uint64)[0]))


def gen_dataset(scenario: ScenarioSpec, mspec: MissingnessSpec, nspec: NoiseSpec, grid: Grid, seed) -> FunctionalDataset:
    """Dataset from ``seed`` (an int, a :class:`RepSeeds` or a ``SeedSequence``)."""
    if not isinstance(seed, RepSeeds):
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        noise_seq, mask_seq = seq.spawn(2)
    else:
        noise_seq, mask_seq = seed.noise, seed.mask
    x = scenario.signal(grid) + gen_noise(nspec, grid, scenario.n, np.random.default_rng(noise_seq))
    mask = gen_mask(mspec, grid, scenario.n, mask_seq)
    return FunctionalDataset(grid, mask, np.where(mask, x, np.nan))


# --------------------------------------------------------------------------
# Studies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """``seq`` (sequential buckets), ``vanilla:<B>`` or ``exact``."""

    kind: str = "seq"
    B: int = 0

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        text = text.strip()
        if text in ("seq", "exact"):
            return cls(text)
        if text.startswith("vanilla:"):
            B = int(text.split(":", 1)[1])
            if B < 1:
                raise ValueError("vanilla needs B >= 1")
            return cls("vanilla", B)
        raise ValueError(f"unknown method {text!r}")

    @property
    def label(self) -> str:
        return f"vanilla:{self.B}" if self.kind == "vanilla" else self.kind


@dataclass(frozen=True)
class StudyCell:
    """One fully specified combination of data model and test."""

    n: int
    kappa: float
    shape: str  # data change function
    delta: str
    missingness: str
    null: bool
    stat: str  # statistic change function
    gamma: float
    weights: str
    method: str
    eps: float
    buckets: str
    q: int
    alpha: float

    def scenario(self) -> ScenarioSpec:
        return ScenarioSpec(self.n, self.kappa, ChangeShape.parse(self.shape), Delta.parse(self.delta), self.null)

    def wspec(self) -> WeightSpec:
        return WeightSpec(self.gamma, self.weights)

    def data_key(self) -> tuple:
        return (self.n, self.kappa, self.shape, self.delta, self.missingness, self.null, self.q)


@dataclass
class StudyConfig:
    """Cartesian grid of study cells plus replication settings.

    List-valued fields are crossed; ``r`` (when given) turns a polynomial data
    shape ``pol`` into ``pol:<r>``.
    """

    n: list = field(default_factory=lambda: [50])
    kappa: list = field(default_factory=lambda: [0.5])
    shape: list = field(default_factory=lambda: ["abrupt"])
    r: list = field(default_factory=list)
    delta: list = field(default_factory=lambda: ["0.7"])
    missingness: list = field(default_factory=lambda: ["M1"])
    null: list = field(default_factory=lambda: [False])
    stat: list = field(default_factory=lambda: ["abrupt"])
    gamma: list = field(default_factory=lambda: [0.0])
    weights: list = field(default_factory=lambda: ["sum"])
    method: list = field(default_factory=lambda: ["seq"])
    eps: list = field(default_factory=lambda: [1e-3])
    buckets: list = field(default_factory=lambda: ["default"])
    q: list = field(default_factory=lambda: [100])
    alpha: float = 0.05
    reps: int = 500
    seed: int = 1
    tau_max: int = TAU_MAX

    def shapes(self) -> list[str]:
        if not self.r:
            return list(self.shape)
        out = []
        for s in self.shape:
            if s in ("pol", "polynomial"):
                out.extend(f"pol:{float(r):g}" for r in self.r)
            else:
                out.append(s)
        return out

    def cells(self) -> list[StudyCell]:
        grid = itertools.product(
            self.n, self.kappa, self.shapes(), self.delta, self.missingness, self.null,
            self.stat, self.gamma, self.weights, self.method, self.eps, self.buckets, self.q,
        )
        cells = [StudyCell(*combo, alpha=self.alpha) for combo in grid]
        for c in cells:  # validate early
            c.scenario()
            c.wspec()
            ChangeShape.parse(c.stat)
            MethodSpec.parse(c.method)
            MissingnessSpec(c.missingness)
            if c.q < 2:
                raise ValueError("q must be at least 2")
        return cells


@dataclass
class RepOutcome:
    rep: int
    statistic: float
    k_hat: int
    rejected: bool
    borderline: bool
    p_value: float = float("nan")
    bucket: str = ""
    tau: int = 0
    flagged: bool = False


def run_rep(cell: StudyCell, rep: int, seed: int, tau_max: int = TAU_MAX) -> RepOutcome:
    seeds = RepSeeds.derive(seed, rep)
    grid = Grid.equidistant(cell.q)
    ds = gen_dataset(cell.scenario(), MissingnessSpec(cell.missingness), NoiseSpec(), grid, seeds)
    adapter = PermutationAdapter(ds, ChangeShape.parse(cell.stat), cell.wspec())
    method = MethodSpec.parse(cell.method)
    plan = PermutationPlan(seeds.perm, ds.n)
    base = dict(rep=rep, statistic=adapter.observed, k_hat=adapter.k_hat)
    if method.kind == "seq":
        d = seq_decide(adapter, plan, BucketSet.from_spec(cell.buckets), cell.eps, tau_max)
        b = d.bucket
        return RepOutcome(
            **base, rejected=b.hi <= cell.alpha, borderline=b.lo < cell.alpha < b.hi,
            bucket=str(b), tau=d.tau, flagged=d.flagged,
        )
    if method.kind == "exact":
        p = exact_p(adapter, ds.n)
    else:
        p = vanilla_p(adapter, plan, method.B)
    return RepOutcome(**base, rejected=p < cell.alpha, borderline=False, p_value=p)


def _run_chunk(args):
    cell, reps, seed, tau_max = args
    return [run_rep(cell, r, seed, tau_max) for r in reps]


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_cell(cell: StudyCell, reps: int, seed: int, workers: int = 1, tau_max: int = TAU_MAX) -> list[RepOutcome]:
    """All replications of one cell, ordered by replication index."""
    if workers <= 1 or reps < 2:
        return [run_rep(cell, r, seed, tau_max) for r in range(reps)]
    chunks = [range(i, reps, workers * 4) for i in range(min(reps, workers * 4))]
    with ProcessPoolExecutor(workers) as pool:
        parts = pool.map(_run_chunk, [(cell, c, seed, tau_max) for c in chunks])
        out = [o for part in parts for o in part]
    return sorted(out, key=lambda o: o.rep)


STUDY_COLUMNS = (
    "n", "kappa", "shape", "delta", "missingness", "null", "stat", "gamma", "weights",
    "method", "eps", "buckets", "q", "reps", "seed",
    "rejection", "borderline", "flagged",
    "tau_min", "tau_median", "tau_mean", "tau_max", "tau_sd",
    "significant", "khat_median", "khat_q1", "khat_q3", "khat_rel_median",
)


def summarize(cell: StudyCell, outcomes: list[RepOutcome], seed: int) -> dict:
    reps = len(outcomes)
    rej = np.array([o.rejected for o in outcomes])
    tau = np.array([o.tau for o in outcomes], dtype=float)
    khat = np.array([o.k_hat for o in outcomes if o.rejected], dtype=float)
    is_seq = MethodSpec.parse(cell.method).kind == "seq"
    nan = float("nan")
    rec = {k: v for k, v in asdict(cell).items() if k != "alpha"}
    rec.update(reps=reps, seed=seed)
    rec["rejection"] = float(rej.mean()) if reps else nan
    rec["borderline"] = float(np.mean([o.borderline for o in outcomes])) if is_seq and reps else nan
    rec["flagged"] = int(sum(o.flagged for o in outcomes))
    if is_seq and reps:
        rec.update(
            tau_min=int(tau.min()), tau_median=float(np.median(tau)), tau_mean=float(tau.mean()),
            tau_max=int(tau.max()), tau_sd=float(tau.std(ddof=1)) if reps > 1 else 0.0,
        )
    else:
        rec.update(tau_min=nan, tau_median=nan, tau_mean=nan, tau_max=nan, tau_sd=nan)
    rec["significant"] = int(khat.size)
    if khat.size:
        q1, med, q3 = np.quantile(khat, [0.25, 0.5, 0.75])
        rec.update(khat_median=float(med), khat_q1=float(q1), khat_q3=float(q3), khat_rel_median=float(med) / cell.n)
    else:
        rec.update(khat_median=nan, khat_q1=nan, khat_q3=nan, khat_rel_median=nan)
    return {k: rec[k] for k in STUDY_COLUMNS}


def run_study(config: StudyConfig, workers: int | None = None, progress=None) -> list[dict]:
    """One summary record per cell, in the order of :meth:`StudyConfig.cells`.

    ``progress`` is an optional text stream receiving one line per finished
    cell.
    """
    workers = workers_from_env() if workers is None else workers
    records = []
    cells = config.cells()
    for i, cell in enumerate(cells, 1):
        try:
            outcomes = run_cell(cell, config.reps, config.seed, workers, config.tau_max)
        except Exception as exc:
            raise RuntimeError(f"study cell {i} ({cell}) failed: {exc}") from exc
        records.append(summarize(cell, outcomes, config.seed))
        if progress is not None:
            rec = records[-1]
            print(f"[{i}/{len(cells)}] {cell.stat} n={cell.n} {cell.missingness} gamma={cell.gamma:g} "
                  f"{cell.weights}: rejection={rec['rejection']:.3f}", file=progress, flush=True)
    return records
