#!/usr/bin/env python3
"""Self-convergence table for a run configuration.

    python3 scripts/convergence_study.py configs/symmetric2.json --levels 3

Solves on the configured lattice and on successive refinements (half the
spacing and half the time step), then reports, per level, the largest
difference from the next finer solve on the coarse nodes and the observed
order log2(e_k / e_{k+1}).
"""
from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from switchgrid import config as C
from switchgrid.scheme import restrict, solve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--levels", type=int, default=3, help="number of refinements")
    ap.add_argument("--force", action="store_true", help="solve even if assumption checks fail")
    args = ap.parse_args(argv)
    cfg = C.load(args.config)

    lattices = [cfg.lattice]
    for _ in range(args.levels):
        lattices.append(lattices[-1].refined())
    fields = []
    for lat in lattices:
        start = time.perf_counter()
        fields.append(solve(cfg.problem, cfg.model, lat, cfg.solver, force=args.force).field)
        print(f"solved nodes={lat.nodes} steps={lat.time_steps} in {time.perf_counter() - start:.2f}s",
              flush=True)

    errors = [float(np.abs(restrict(fine, coarse.lattice) - coarse.values).max())
              for coarse, fine in zip(fields, fields[1:])]
    print(f"{'nodes':>12} {'steps':>6} {'max |u_h - u_h/2|':>18} {'order':>6}")
    for k, (lat, err) in enumerate(zip(lattices, errors)):
        order = ""
        if k + 1 < len(errors) and errors[k + 1] > 0 and err > 0:
            order = f"{math.log2(err / errors[k + 1]):6.2f}"
        print(f"{str(lat.nodes):>12} {lat.time_steps:>6} {err:18.3e} {order:>6}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
