"""Command-line interface: run a case, run a convergence study, or validate
a configuration file.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config
from .driver import convergence_study, run_case
from .mesh import MeshError
from .physics import NonPhysicalState


def _setup_logging():
    level = os.environ.get("HPR_ALE_LOG", "warn").lower()
    levels = {
        "error": logging.ERROR,
        "warn": logging.WARNING,
        "info": logging.INFO,
        "debug": logging.DEBUG,
    }
    logging.basicConfig(
        level=levels.get(level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def main(argv=None):
    _setup_logging()
    ap = argparse.ArgumentParser(
        prog="hpr-ale",
        description="Direct ALE ADER-WENO finite-volume solver for the "
        "unified hyperbolic model of continuum mechanics",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a case to its final time")
    runp.add_argument("config")
    runp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    runp.add_argument("--out", default=None, help="output directory")

    conv = sub.add_parser("converge", help="convergence study on a mesh sequence")
    conv.add_argument("config")
    conv.add_argument("--meshes", required=True,
                      help="comma-separated generator resolutions, e.g. 27,54,78")
    conv.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    conv.add_argument("--out", default=None)

    val = sub.add_parser("validate", help="validate a configuration file")
    val.add_argument("config")

    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"{args.config}: OK ({cfg.name}, ic={cfg.initial}, "
              f"order={cfg.order}, t_final={cfg.t_final})")
        return 0

    try:
        if args.command == "run":
            out = args.out or f"out_{cfg.name}"
            summary = run_case(cfg, outdir=out, workers=args.workers)
            print(f"{cfg.name}: t={summary['t_final']:.6g} in "
                  f"{summary['steps']} steps ({summary['cells']} cells, "
                  f"{summary['wall_seconds']:.1f}s)")
            if "l2_rho_error" in summary:
                print(f"  L2(rho) error vs exact: {summary['l2_rho_error']:.6e}")
            print(f"  outputs in {out}/")
            return 0
        # converge
        res = [int(t) for t in args.meshes.split(",")]
        rows = convergence_study(cfg, res, workers=args.workers)
        print(f"{'h':>12} {'L2(rho)':>14} {'order':>8}")
        lines = []
        for h, err, order in rows:
            o = f"{order:8.2f}" if order == order and order is not None else "      --"
            line = f"{h:12.5e} {err:14.6e} {o}"
            print(line)
            lines.append((h, err, order))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, f"convergence_{cfg.name}.csv"), "w") as f:
                f.write("h,l2_rho,order\n")
                for h, err, order in lines:
                    f.write(f"{h},{err},{'' if order is None else order}\n")
        return 0
    except (NonPhysicalState, MeshError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
