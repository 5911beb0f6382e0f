"""Exact tail measures of seeded dyadic martingales against (3/4)^m."""
import argparse
from fractions import Fraction

from epslab.goodlambda import build_families, decay_check, passing_martingales, verify_properties


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--depth", type=int, default=10)
    ap.add_argument("--lam", default="1")
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--seed0", type=int, default=0)
    args = ap.parse_args()

    lam = Fraction(args.lam)
    found = passing_martingales(args.count, args.depth, lam, args.seed0)
    worst = [Fraction(0)] * args.M
    for seed, df in found:
        fam = build_families(df, lam, steps=args.M)
        props = verify_properties(fam, df, lam)
        rows = decay_check(df, lam, args.M, fam)
        for r in rows:
            worst[r.m - 1] = max(worst[r.m - 1], r.tail)
        tails = " ".join(str(r.tail) for r in rows)
        print(f"seed {seed:3d}  properties {'ok' if props.all else 'FAIL'}  tails {tails}")
    print(f"{len(found)} martingales passed the hypothesis")
    for m, w in enumerate(worst, start=1):
        print(f"m={m}  t={3 * m * lam}  worst tail {w} ({float(w):.4f})  bound {float(Fraction(3, 4) ** m):.4f}")


if __name__ == "__main__":
    main()
