"""Mean of A^2 over dyadic cubes, per generation, for the field corpus."""
import argparse

from epslab.approximant import prop24_check
from epslab.fields import builtin_field
from epslab.geometry import LipschitzGraph, RootCube

CORPUS = {"constant": {}, "coordinate_y": {}, "harmonic_sinexp": {}, "paraboloid": {}}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--depth", type=int, default=9, help="cone quadrature depth")
    ap.add_argument("--generations", type=int, default=6)
    args = ap.parse_args()

    graph, root = LipschitzGraph.flat(1), RootCube.unit(1)
    for name, params in CORPUS.items():
        rep = prop24_check(builtin_field(name, **params), graph, root, args.alpha,
                           range(args.generations), args.depth)
        per = " ".join(f"{v:.3e}" for v in rep.per_generation_max)
        print(f"{name:16s} spread {rep.spread:9.3g}  per generation {per}")


if __name__ == "__main__":
    main()
