"""Exit criteria of the lab, each at its stated tolerance.

Every test records one pass/fail line, printed in the pytest terminal
summary (``pytest tests/test_acceptance.py -m acceptance``).
"""
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record
from epslab.approximant import (build_approximant, build_forest, carleson_decomposition,
                                prop24_check, stopping_sums)
from epslab.fields import builtin_field, check_sharp, classify
from epslab.geometry import ConeSpec, DomainPoint, LipschitzGraph, RootCube, cone_membership, shadow
from epslab.goodlambda import (build_families, c2_constant, decay_check, passing_martingales,
                               verify_properties)
from epslab.grid import AdaptedGrid
from epslab.io import dumps_json, forest_dict
from epslab.operators import (CountingParams, area_function, counting_function, fatou_average,
                              total_variation)

pytestmark = pytest.mark.acceptance

FLAT = LipschitzGraph.flat(1)
ROOT = RootCube.unit(1)
EPS = (0.05, 0.1, 0.2)
SINEXP = builtin_field("harmonic_sinexp")
HARMONIC = {"constant": builtin_field("constant"), "coordinate_y": builtin_field("coordinate_y"),
            "sinexp_k1": SINEXP, "sinexp_k2": builtin_field("harmonic_sinexp", k=2)}
GRID_DEPTH = 10


@pytest.fixture(scope="module")
def runs():
    """Construction runs shared by criteria 1 and 2: ``{(depth, eps): dict}``."""
    out = {}
    for depth in (7, 8):
        for eps in EPS:
            t = time.perf_counter()
            forest = build_forest(SINEXP, FLAT, ROOT, eps, 0.5, depth, GRID_DEPTH)
            approx = build_approximant(forest, check=False)
            car = carleson_decomposition(approx, forest, FLAT, SINEXP)
            out[depth, eps] = {"forest": forest, "approx": approx, "car": car,
                               "seconds": time.perf_counter() - t}
    return out


def test_criterion_1_error_bound(runs):
    ok, parts = True, []
    for eps in EPS:
        r = runs[8, eps]
        a, f = r["approx"], r["forest"]
        bound = 1.5 * eps + a.grid_term
        good = (a.sup_error <= bound and f.unresolved_cell_fraction < 0.01 and r["seconds"] < 120)
        ok &= good
        parts.append(f"eps={eps}: sup={a.sup_error:.4f} <= {bound:.4f}, unresolved cells "
                     f"{100 * f.unresolved_cell_fraction:.3f}% (leaves {100 * f.unresolved_fraction:.2f}%), "
                     f"{r['seconds']:.1f}s")
    record(1, ok, "; ".join(parts))
    assert ok


def test_criterion_2_carleson_refinement(runs):
    ok, worst = True, 1.0
    for eps in EPS:
        c7, c8 = runs[7, eps]["car"], runs[8, eps]["car"]
        for a, b in ((c7.mu1, c8.mu1), (c7.mu2, c8.mu2), (c7.mu3, c8.mu3)):
            finite = math.isfinite(a.value) and math.isfinite(b.value) and a.value > 0 and b.value > 0
            f = max(a.value, b.value) / min(a.value, b.value) if finite else math.inf
            worst = max(worst, f)
            ok &= finite and f <= 1.5
    record(2, ok, f"worst depth 7->8 factor {worst:.3f} (limit 1.5)")
    assert ok


def test_criterion_3_stopping_sum_scaling():
    ok, parts = True, []
    for name in ("sinexp_k1", "sinexp_k2"):
        s = [stopping_sums(build_forest(HARMONIC[name], FLAT, ROOT, e, 0.5, 8, GRID_DEPTH)) for e in EPS]
        r1 = [x.ratio1_lo for x in s]
        r2 = [x.ratio2 for x in s]
        sp1, sp2 = max(r1) / min(r1), max(r2) / min(r2)
        ok &= sp1 <= 5 and sp2 <= 5
        parts.append(f"{name}: S1 spread {sp1:.2f}, S2 spread {sp2:.2f}")
    record(3, ok, "; ".join(parts) + " (limit 5)")
    assert ok


def test_criterion_4_area_integral_ratio():
    ok, parts = True, []
    pts = AdaptedGrid(FLAT, ROOT, 6).points.reshape(-1, 2)
    for name, fld in HARMONIC.items():
        if not check_sharp(fld, pts, 0.5).holds:
            continue
        rep = prop24_check(fld, FLAT, ROOT, 0.5)
        good = math.isfinite(rep.max_ratio) and rep.spread <= 10
        ok &= good
        parts.append(f"{name}: max {rep.max_ratio:.3g}, spread {rep.spread:.3g}")
    record(4, ok, "; ".join(parts) + " (limit 10)")
    assert ok


def test_criterion_5_area_oracle():
    est = area_function(builtin_field("coordinate_y"), FLAT, 0.0, ConeSpec(1.0, 0.0, 1.0), depth=9)
    ok = abs(est.value - 1.0) <= 0.01
    record(5, ok, f"A = {est.value:.5f} (1 +- 1%)")
    assert ok


def test_criterion_6_counting_fatou():
    const = builtin_field("constant", c=0.5)
    y = builtin_field("coordinate_y", clip=[0.0, 1.0])
    window, radii = (0.25, 0.75), [0.5, 0.25, 0.125]
    verts = np.linspace(0.25, 0.75, 9)

    n_const = [counting_function(const, FLAT, v, CountingParams(0.5, 0.1, 0.5, 0.5), 9).value for v in verts]
    f_const = fatou_average(const, FLAT, CountingParams(0.5, 0.1, 0.5, 0.5), window, radii, 8, 9).value
    zero_ok = all(n == 0 for n in n_const) and f_const == 0

    mono_ok = True
    for v in verts:
        ns = [counting_function(y, FLAT, v, CountingParams(0.5, e, 0.5, 0.5), 9).value
              for e in (0.05, 0.1, 0.2, 0.4)]
        mono_ok &= all(a >= b for a, b in zip(ns, ns[1:]))

    f8 = fatou_average(y, FLAT, CountingParams(0.5, 0.2, 0.5, 0.5), window, radii, 8, 9).value
    f9 = fatou_average(y, FLAT, CountingParams(0.5, 0.2, 0.5, 0.5), window, radii, 9, 9).value
    stable = f8 > 0 and abs(f9 - f8) <= 0.2 * f8

    hand = [counting_function(builtin_field("coordinate_y"), FLAT, 0.0,
                              CountingParams(1.0, 0.6, 0.5, 1.0), d).value for d in (9, 10)]
    hand_ok = hand == [2, 2]
    ok = zero_ok and mono_ok and stable and hand_ok
    record(6, ok, f"constant N=0 & Fatou=0: {zero_ok}; eps-monotone: {mono_ok}; "
                  f"Fatou depth 8/9 = {f8:g}/{f9:g}; hand N at depths 9,10 = {hand}")
    assert ok


def test_criterion_7_goodlambda_decay():
    t = time.perf_counter()
    lam = Fraction(1)
    found = passing_martingales(20, 10, lam, seed0=0)
    ok = len(found) == 20
    worst_rel = 0.0
    for _, df in found:
        fam = build_families(df, lam)
        ok &= verify_properties(fam, df, lam).all
        for row in decay_check(df, lam, 4, fam):
            ok &= row.tail <= Fraction(3, 4) ** row.m and row.ok
    c2 = c2_constant(lam)
    for m in range(1, 5):
        e = math.exp(-c2 * 3 * m * float(lam))
        worst_rel = max(worst_rel, abs(e - 0.75 ** m) / 0.75 ** m)
    secs = time.perf_counter() - t
    ok &= worst_rel <= 1e-12 and secs < 10
    record(7, ok, f"{len(found)} martingales, identity rel err {worst_rel:.1e}, {secs:.2f}s")
    assert ok


def test_criterion_8_classifier():
    pts = AdaptedGrid(FLAT, ROOT, 6).points.reshape(-1, 2)
    harm = {k: classify(f, pts).theta_sup for k, f in HARMONIC.items()}
    harm_ok = all(v < 1e-6 for v in harm.values())
    par = classify(builtin_field("paraboloid"), pts)
    par_ok = abs(par.theta_sup - 1.0) <= 0.01 and par.prop31
    yrep = classify(builtin_field("coordinate_y"), pts, alpha=0.5)
    y_ok = yrep.prop33["power"] and yrep.implied_theta == 0.5
    ok = harm_ok and par_ok and y_ok
    record(8, ok, f"harmonic theta max {max(harm.values()):.1e}; paraboloid theta "
                  f"{par.theta_sup:.4f}, prop31 {par.prop31}; u=y power branch {yrep.prop33['power']}, "
                  f"theta {yrep.implied_theta}")
    assert ok


def test_criterion_9_invariants():
    corpus = list(HARMONIC.values()) + [builtin_field("paraboloid")]
    part_ok = True
    for fld in corpus:
        for eps in EPS:
            f = build_forest(fld, FLAT, ROOT, eps, 0.5, 6)
            vol = f.region_volumes()
            ids, counts = np.unique(f.labels, return_counts=True)
            cells = dict(zip(ids.tolist(), counts.tolist()))
            part_ok &= abs(sum(vol.values()) - 1.0) <= 1e-15
            part_ok &= all(abs(cells.get(k, 0) * f.grid.cell_volume - v) <= 1e-15 for k, v in vol.items())

    dumps = [dumps_json(forest_dict(build_forest(SINEXP, FLAT, ROOT, 0.1, 0.5, 7))) for _ in range(2)]
    det_ok = dumps[0] == dumps[1] and json.loads(dumps[0])["nodes"]

    rng = np.random.default_rng(9)
    tv_ok = True
    for n in (1, 2):
        g = AdaptedGrid(LipschitzGraph.flat(n), RootCube.unit(n), 4)
        for _ in range(20):
            v = rng.integers(0, 4, size=g.shape).astype(float)
            tv_ok &= total_variation(v, g).volume_mass() == 0

    alpha, mism = 0.7, 0
    for _ in range(1000):
        w = rng.uniform(-1, 1)
        z = np.array([rng.uniform(-1, 1), rng.uniform(0.01, 1)])
        inside = cone_membership(FLAT, w, ConeSpec(alpha), DomainPoint(z[0], z[1]))
        d = shadow(FLAT, z, alpha, resolution=8).distance
        mism += inside != (math.hypot(z[0] - w, z[1]) < math.sqrt(1 + alpha ** 2) * d)
    ok = part_ok and bool(det_ok) and tv_ok and mism == 0
    record(9, ok, f"partition {part_ok}; deterministic dumps {bool(det_ok)}; TV face-only {tv_ok}; "
                  f"cone/shadow mismatches {mism}/1000")
    assert ok
