"""Command line: ``pegelab <experiment> --config <path> --out <dir> [--seeds N] [--threads K]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as C
from .experiments import run_experiment

log = logging.getLogger("pegelab")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_outputs(result, cfg: dict, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    h = C.config_hash(cfg)
    for name, table in result.tables.items():
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(table.header) + ["n_seeds", "config_hash"])
            for row in table.rows:
                w.writerow([_cell(v) for v in row] + [result.n_seeds, h])
    summary = {"experiment": cfg["experiment"], "config_hash": h, "n_seeds": result.n_seeds,
               "tables": sorted(f"{n}.csv" for n in result.tables), **_clean(result.summary)}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config_echo.json"), "w") as fh:
        json.dump({"config": cfg, "config_hash": h}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pegelab", description=__doc__)
    ap.add_argument("experiment", choices=C.EXPERIMENTS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seeds", type=int, default=None, help="override the seed count")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    raw = C.load(args.config)
    raw.setdefault("experiment", args.experiment)
    if raw["experiment"] != args.experiment:
        ap.error(f"config is for {raw['experiment']!r}, not {args.experiment!r}")
    if args.threads < 1:
        ap.error("--threads must be positive")
    try:
        cfg = C.resolve(raw, args.seeds)
    except C.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("running %s (config %s)", args.experiment, C.config_hash(cfg)[:12])
    result = run_experiment(cfg, args.threads)
    summary = write_outputs(result, cfg, args.out)
    print(json.dumps({k: v for k, v in summary.items() if not isinstance(v, (dict, list))},
                     indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
