"""Sup error, unresolved fractions, stopping-sum ratios and Carleson constants
across epsilon for one field on the flat unit cube.

    python3 scripts/epsilon_sweep.py --field harmonic_sinexp --depth 8 --eps 0.05 0.1 0.2
"""
import argparse
import time

from epslab.approximant import (build_approximant, build_forest, carleson_decomposition,
                                stopping_sums)
from epslab.fields import builtin_field
from epslab.geometry import LipschitzGraph, RootCube
from epslab.io import write_csv

COLUMNS = ("epsilon", "depth", "sup_error", "bound", "leaf_fraction", "cell_fraction",
           "s1_ratio", "s2_ratio", "mu1", "mu2", "mu3", "seconds")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--field", default="harmonic_sinexp")
    ap.add_argument("--depth", type=int, nargs="+", default=[8])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    ap.add_argument("--k-blue", type=float, default=0.5)
    ap.add_argument("--no-carleson", action="store_true", help="skip the (slow) Carleson constants")
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    fld = builtin_field(args.field)
    graph, root = LipschitzGraph.flat(1), RootCube.unit(1)
    rows = []
    for depth in args.depth:
        for eps in args.eps:
            t = time.perf_counter()
            forest = build_forest(fld, graph, root, eps, args.k_blue, depth)
            approx = build_approximant(forest, check=False)
            sums = stopping_sums(forest)
            row = {"epsilon": eps, "depth": depth, "sup_error": approx.sup_error, "bound": approx.bound,
                   "leaf_fraction": forest.unresolved_fraction,
                   "cell_fraction": forest.unresolved_cell_fraction,
                   "s1_ratio": sums.ratio1_lo, "s2_ratio": sums.ratio2}
            if not args.no_carleson:
                car = carleson_decomposition(approx, forest, graph, fld)
                row.update(mu1=car.mu1.value, mu2=car.mu2.value, mu3=car.mu3.value)
            row["seconds"] = time.perf_counter() - t
            rows.append(row)
            print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    if args.csv:
        write_csv(args.csv, COLUMNS, rows)


if __name__ == "__main__":
    main()
