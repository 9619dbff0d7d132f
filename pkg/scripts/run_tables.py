#!/usr/bin/env python3
"""Run the Monte-Carlo study configs in scripts/configs and write TSV tables.

Usage::

    python scripts/run_tables.py                     # every config, full reps
    python scripts/run_tables.py null drift --reps 100
    POCHANGE_WORKERS=8 python scripts/run_tables.py weights

Tables go to ``results/<config>.tsv`` (override with ``--out-dir``).  With
``--reps`` the replication count of every config is replaced, which keeps
the cell grid but trades precision for time.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from pochange.io import format_table, read_config
from pochange.simulation import STUDY_COLUMNS, run_study

CONFIG_DIR = Path(__file__).resolve().parent / "configs"


def main(argv=None):
    names = sorted(p.stem for p in CONFIG_DIR.glob("*.cfg"))
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", metavar="CONFIG", help=f"subset of {names}")
    ap.add_argument("--reps", type=int, help="override the replication count")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args(argv)
    unknown = sorted(set(args.configs) - set(names))
    if unknown:
        ap.error(f"unknown config(s): {unknown}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in args.configs or names:
        cfg = read_config(CONFIG_DIR / f"{name}.cfg")
        if args.reps:
            cfg = replace(cfg, reps=args.reps)
        print(f"{name}: {len(cfg.cells())} cells x {cfg.reps} reps", file=sys.stderr)
        start = time.perf_counter()
        records = run_study(cfg, workers=args.workers, progress=sys.stderr)
        (out_dir / f"{name}.tsv").write_text(format_table(records, STUDY_COLUMNS))
        print(f"{name}: done in {time.perf_counter() - start:.1f}s -> {out_dir / name}.tsv", file=sys.stderr)


if __name__ == "__main__":
    main()
