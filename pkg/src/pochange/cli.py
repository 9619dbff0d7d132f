"""Command-line interface: ``pochange {test,simulate,gen,boundaries}``.

Exit codes: 0 success, 2 invalid input, 3 sequential decision hit the
resampling cap (flagged).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .boundaries import BoundarySet, build_boundaries, read_boundaries, write_boundaries
from .core import ChangeShape, Grid, WeightSpec
from .io import (
    ConfigError,
    CurveFileError,
    ResultRecord,
    format_table,
    read_config,
    read_curves,
    write_curves,
)
from .permutation import (
    TAU_MAX,
    BucketSet,
    PermutationAdapter,
    PermutationPlan,
    exact_p,
    seq_decide,
    vanilla_p,
)
from .simulation import (
    STUDY_COLUMNS,
    Delta,
    MethodSpec,
    MissingnessSpec,
    NoiseSpec,
    ScenarioSpec,
    gen_dataset,
    run_study,
)

EXIT_OK, EXIT_INPUT, EXIT_FLAGGED = 0, 2, 3


class InputError(Exception):
    pass


def _shape(text):
    try:
        return ChangeShape.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _method(text):
    try:
        return MethodSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pochange", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one curve matrix for a mean change")
    t.add_argument("input", help="curve matrix file (header row of locations, NA for missing)")
    t.add_argument("--shape", type=_shape, default=ChangeShape.abrupt(), help="abrupt | lin | pol:<r>")
    t.add_argument("--gamma", type=float, default=0.0)
    t.add_argument("--weights", choices=("sum", "integral"), default="sum")
    t.add_argument("--method", type=_method, default=MethodSpec("seq"), help="seq | vanilla:<B> | exact")
    t.add_argument("--eps", type=float, default=1e-3)
    t.add_argument("--buckets", default="default", help="default | stars | <file>")
    t.add_argument("--boundaries", nargs="+", metavar="FILE", help="boundary tables, one per split point")
    t.add_argument("--seed", type=_seed, default=1)
    t.add_argument("--tau-max", type=int, default=TAU_MAX)
    t.add_argument("--drop-empty-columns", action="store_true")
    t.add_argument("--format", choices=("tsv", "json"), default="tsv")
    t.add_argument("--profile", metavar="PATH", help="also write the profile over k")

    s = sub.add_parser("simulate", help="run a Monte-Carlo study from a config file")
    s.add_argument("config")
    s.add_argument("--out", metavar="PATH")
    s.add_argument("--workers", type=int, help="worker processes (default: POCHANGE_WORKERS or all cores)")

    g = sub.add_parser("gen", help="write a synthetic curve matrix")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--q", type=int, default=100)
    g.add_argument("--kappa", type=float, default=0.5)
    g.add_argument("--shape", type=_shape, default=ChangeShape.abrupt())
    g.add_argument("--delta", default="0.7", help="<c> | exp:<a>,<b> | normalized")
    g.add_argument("--missingness", default="M1", help="M1 | M2 | M3 | C | M2drift")
    g.add_argument("--null", action="store_true")
    g.add_argument("--seed", type=_seed, default=1)
    g.add_argument("--out", required=True)

    b = sub.add_parser("boundaries", help="export stopping boundaries")
    b.add_argument("--split", type=float, required=True)
    b.add_argument("--eps", type=float, default=1e-3)
    b.add_argument("--horizon", type=int, default=1000)
    b.add_argument("--out", metavar="PATH")
    return p


def cmd_test(args) -> int:
    try:
        cm = read_curves(args.input, args.drop_empty_columns)
    except OSError as exc:
        raise InputError(str(exc)) from None
    try:
        wspec = WeightSpec(args.gamma, args.weights)
        buckets = BucketSet.from_spec(args.buckets)
        if not 0.0 < args.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        boundaries = None
        if args.boundaries:
            boundaries = BoundarySet([read_boundaries(f) for f in args.boundaries])
            if boundaries.eps != args.eps or not np.allclose(boundaries.splits, buckets.splits):
                raise ValueError("boundary tables do not match --eps and the bucket split points")
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from None
    ds = cm.dataset
    adapter = PermutationAdapter(ds, args.shape, wspec)
    rec = ResultRecord(
        input=str(args.input), n=ds.n, q=ds.q, shape=args.shape.label, gamma=args.gamma,
        weights=args.weights, method=args.method.label, eps=args.eps, buckets=args.buckets,
        seed=args.seed, statistic=adapter.observed, k_hat=adapter.k_hat,
        dropped_columns=",".join(cm.dropped),
    )
    plan = PermutationPlan(args.seed, ds.n)
    if args.method.kind == "exact":
        try:
            rec.p_value = exact_p(adapter, ds.n)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    elif args.method.kind == "vanilla":
        rec.p_value = vanilla_p(adapter, plan, args.method.B)
    else:
        d = seq_decide(adapter, plan, buckets, args.eps, args.tau_max, boundaries)
        rec.bucket, rec.bucket_lo, rec.bucket_hi = str(d.bucket), d.bucket.lo, d.bucket.hi
        rec.tau, rec.s_tau, rec.flagged = d.tau, d.s_tau, d.flagged
    if args.profile:
        rows = [{"k": k, "profile": float(v)} for k, v in enumerate(adapter.profile, 1)]
        Path(args.profile).write_text(format_table(rows))
    sys.stdout.write(rec.to_json() if args.format == "json" else rec.to_tsv())
    return EXIT_FLAGGED if rec.flagged else EXIT_OK


def cmd_simulate(args) -> int:
    try:
        cfg = read_config(args.config)
    except OSError as exc:
        raise InputError(str(exc)) from None
    except ConfigError as exc:
        raise InputError(f"{args.config}: {exc}") from None
    records = run_study(cfg, workers=args.workers, progress=sys.stderr)
    table = format_table(records, STUDY_COLUMNS)
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return EXIT_FLAGGED if any(r["flagged"] for r in records) else EXIT_OK


def cmd_gen(args) -> int:
    try:
        scenario = ScenarioSpec(args.n, args.kappa, args.shape, Delta.parse(args.delta), args.null)
        mspec = MissingnessSpec(args.missingness)
        if args.q < 2:
            raise ValueError("q must be at least 2")
    except ValueError as exc:
        raise InputError(str(exc)) from None
    ds = gen_dataset(scenario, mspec, NoiseSpec(), Grid.equidistant(args.q), args.seed)
    try:
        write_curves(ds, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def cmd_boundaries(args) -> int:
    try:
        b = build_boundaries(args.split, args.eps, args.horizon)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.out:
        try:
            write_boundaries(b, args.out)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from None
    else:
        write_boundaries(b, sys.stdout)
    return EXIT_OK


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "gen": cmd_gen, "boundaries": cmd_boundaries}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, CurveFileError) as exc:
        print(f"pochange {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
