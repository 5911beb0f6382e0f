import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epslab.fields import builtin_field
from epslab.geometry import ConeSpec, LipschitzGraph, RootCube
from epslab.grid import AdaptedGrid
from epslab.operators import (CellMeasure, CountingParams, PointMeasure, area_function,
                              carleson_constant, chain_levels, counting_function, dyadic_radii,
                              fatou_average, nontangential_max, total_variation)

FLAT = LipschitzGraph.flat(1)
ROOT = RootCube.unit(1)
Y = builtin_field("coordinate_y")
Y1 = builtin_field("coordinate_y", clip=[0.0, 1.0])
CONST = builtin_field("constant", c=0.4)
SINEXP = builtin_field("harmonic_sinexp")


# -- area function -------------------------------------------------------------------

def test_area_constant_zero():
    assert area_function(CONST, FLAT, 0.3, ConeSpec(0.5, 0, 1)).value == 0


@pytest.mark.parametrize("alpha,t", [(1.0, 1.0), (0.5, 1.0), (0.7, 0.4)])
def test_area_y_closed_form(alpha, t):
    # A^2 = int_0^t 2 alpha y dy
    est = area_function(Y, FLAT, 0.0, ConeSpec(alpha, 0, t), depth=9)
    assert est.value == pytest.approx(t * math.sqrt(alpha), rel=0.01)
    assert not est.diverged


def test_area_sloped_boundary():
    # phi = x/2: cone rows have half-widths alpha h / (1 -+ alpha/2); |grad u| = 1
    g = LipschitzGraph.linear(0.5)
    a = 1.0
    est = area_function(Y, g, 0.0, ConeSpec(a, 0, 1), depth=9)
    width = a / (1 - a / 2) + a / (1 + a / 2)
    assert est.value == pytest.approx(math.sqrt(width / 2), rel=0.01)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.05, 0.9), ds=st.floats(0.0, 0.5), x=st.floats(0.2, 0.8))
def test_area_truncation_monotone(s, ds, x):
    a = area_function(SINEXP, FLAT, x, ConeSpec(0.5, 0, s), depth=7).value
    b = area_function(SINEXP, FLAT, x, ConeSpec(0.5, 0, s + ds), depth=7).value
    assert a <= b + 1e-12


@pytest.mark.parametrize("name", ["coordinate_y", "harmonic_sinexp", "paraboloid"])
def test_area_refinement_converges(name):
    f = builtin_field(name)
    est = area_function(f, FLAT, 0.4, ConeSpec(0.5, 0, 1), depth=10)
    assert est.error / est.value < 0.02


@pytest.mark.parametrize("p", [0.5, 0.25])
def test_area_power_closed_form(p):
    # |grad u|^2 = p^2 y^(2p-2); A^2 = alpha p t^(2p)
    est = area_function(builtin_field("power_alpha", p=p), FLAT, 0.5, ConeSpec(0.5, 0, 1), depth=9)
    assert est.value == pytest.approx(math.sqrt(0.5 * p), rel=0.02)


def test_area_n2_linear():
    g = LipschitzGraph.flat(2)
    f = builtin_field("coordinate_y", 2)
    # n = 2: weight y^-1, disk slices of area pi (alpha y)^2
    est = area_function(f, g, [0.0, 0.0], ConeSpec(0.5, 0, 1), depth=6)
    assert est.value == pytest.approx(math.sqrt(math.pi * 0.25 / 2), rel=0.03)


# -- nontangential maximal function -------------------------------------------------------

def test_nt_y_reaches_ceiling():
    est = nontangential_max(Y, FLAT, 0.0, ConeSpec(0.5, 0, 0.8), depth=9)
    assert 0.8 - 0.8 * 2 ** -9 <= est.value < 0.8


def test_nt_constant():
    assert nontangential_max(builtin_field("constant", c=-0.7), FLAT, 0.2,
                             ConeSpec(0.5, 0, 1)).value == pytest.approx(0.7)


@settings(max_examples=25, deadline=None)
@given(a1=st.floats(0.1, 0.9), da=st.floats(0, 0.5), x=st.floats(0.1, 0.9))
def test_nt_aperture_monotone(a1, da, x):
    f = builtin_field("paraboloid")
    lo = nontangential_max(f, FLAT, x, ConeSpec(a1, 0, 0.5), depth=7).value
    hi = nontangential_max(f, FLAT, x, ConeSpec(a1 + da, 0, 0.5), depth=7).value
    assert lo <= hi + 1e-12


# -- counting function ------------------------------------------------------------------

def test_counting_constant_zero():
    for eps in (1e-6, 0.1, 1.0):
        assert counting_function(CONST, FLAT, 0.0, CountingParams(1.0, eps, 0.5, 0.9)).value == 0


@pytest.mark.parametrize("depth", [9, 10])
def test_counting_hand_derived_two(depth):
    # alpha = 1 needs L = 0; the hand argument rules out length 3
    res = counting_function(Y, FLAT, 0.0, CountingParams(1.0, 0.6, 0.5, 1.0), depth=depth)
    assert res.value == 2
    a, b = res.chain
    assert abs(b[1] - a[1]) >= 0.6 and np.hypot(*b) < 0.5 * np.hypot(*a)


@settings(max_examples=25, deadline=None)
@given(e1=st.floats(0.05, 0.5), de=st.floats(0, 0.5), x=st.floats(0.2, 0.8))
def test_counting_epsilon_monotone(e1, de, x):
    n1 = counting_function(SINEXP, FLAT, x, CountingParams(0.9, e1, 0.5, 0.5), depth=6).value
    n2 = counting_function(SINEXP, FLAT, x, CountingParams(0.9, e1 + de, 0.5, 0.5), depth=6).value
    assert n2 <= n1


def _dag(dist, vals, eps, beta):
    g = nx.DiGraph()
    g.add_nodes_from(range(len(dist)))
    a, b = np.nonzero((dist[None, :] < beta * dist[:, None])
                      & (np.abs(vals[None, :] - vals[:, None]) >= eps))
    g.add_edges_from(zip(a.tolist(), b.tolist()))
    return g


def test_chain_dag_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(1, 25))
        dist = rng.uniform(0.01, 1, k)
        if rng.random() < 0.3:
            dist = np.round(dist, 1) + 0.01  # ties in distance
        vals = rng.normal(size=k)
        eps = float(rng.uniform(0.1, 1.5))
        beta = float(rng.uniform(0.2, 0.95))
        g = _dag(dist, vals, eps, beta)
        assert nx.is_directed_acyclic_graph(g)
        longest = len(nx.dag_longest_path(g))
        assert int(chain_levels(dist, vals, eps, beta).max()) == longest


def test_counting_matches_dag_on_cone_grid():
    f = builtin_field("harmonic_sinexp", k=3)
    p = CountingParams(0.8, 0.05, 0.6, 0.5)
    res = counting_function(f, FLAT, 0.37, p, depth=4)
    from epslab.operators import _cone_points
    pts = _cone_points(FLAT, 0.37, p.alpha, 0.0, p.r, 4)
    dist = np.linalg.norm(pts - [0.37, 0.0], axis=-1)
    g = _dag(dist, f.u(pts), p.eps, p.beta)
    longest = len(nx.dag_longest_path(g))
    assert res.value == (longest if longest >= 2 else 0)


def test_counting_params_validated():
    with pytest.raises(ValueError):
        CountingParams(1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        CountingParams(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        CountingParams(0.0, 0.1, 0.5)


# -- Carleson constants ------------------------------------------------------------------

def test_carleson_zero_measure():
    g = AdaptedGrid(FLAT, ROOT, 4)
    r = carleson_constant(CellMeasure.zeros(g), FLAT, [0.5, 0.25], [[0.5]])
    assert r.value == 0 and r.witness_x is None


def test_carleson_half_disk_volume():
    g = AdaptedGrid(FLAT, RootCube((-1.0,), 2.0), 9)
    mu = CellMeasure(g, np.full(g.shape, g.cell_volume))
    R = 0.5
    r = carleson_constant(mu, FLAT, [R, R / 2, R / 4], [[0.0]])
    assert r.value == pytest.approx(math.pi * R / 2, rel=0.01)
    assert r.witness_r == R


def test_carleson_point_mass():
    h = 0.3
    mu = PointMeasure(np.array([[0.2, h]]), np.array([1.0]))
    radii = np.linspace(0.05, 1, 96)
    r = carleson_constant(mu, FLAT, radii, [[0.2]])
    assert r.value == pytest.approx(1 / radii[radii >= h][0])
    assert r.value <= 1 / h


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_carleson_homogeneous(lam, seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0, 1, 20), rng.uniform(0, 1, 20)])
    w = rng.uniform(0, 1, 20)
    radii = dyadic_radii(1.0, 4)
    xs = np.linspace(0, 1, 9)
    a = carleson_constant(PointMeasure(pts, w), FLAT, radii, xs).value
    b = carleson_constant(PointMeasure(pts, lam * w), FLAT, radii, xs).value
    assert b == pytest.approx(lam * a, rel=1e-12)


def test_measure_rejects_negative():
    g = AdaptedGrid(FLAT, ROOT, 3)
    with pytest.raises(ValueError):
        CellMeasure(g, -np.ones(g.shape))


# -- total variation ---------------------------------------------------------------------

def test_tv_constant():
    g = AdaptedGrid(FLAT, ROOT, 5)
    assert total_variation(np.full(g.shape, 2.0), g).total_mass() == 0


def test_tv_indicator_face():
    g = AdaptedGrid(FLAT, ROOT, 6)
    v = (g.x_centers[:, 0] < 0.5)[:, None] * np.ones(g.shape)
    tv = total_variation(v, g)
    assert tv.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert tv.volume_mass() == 0


def test_tv_smooth_y():
    g = AdaptedGrid(FLAT, ROOT, 6)
    hn = np.arange(g.Nh + 1) * g.dx
    v = np.tile(hn, (g.N + 1, 1))
    assert total_variation(v, g, kind="node").total_mass() == pytest.approx(1.0, rel=1e-12)


def test_tv_node_sloped_graph_cartesian():
    # u = y on phi = x/2: in adapted coordinates u = h + x/2, |grad u| = 1
    gr = LipschitzGraph.linear(0.5)
    g = AdaptedGrid(gr, ROOT, 5)
    xn = np.arange(g.N + 1) * g.dx
    hn = np.arange(g.Nh + 1) * g.dx
    v = hn[None, :] + 0.5 * xn[:, None]
    tv = total_variation(v, g, kind="node")
    assert tv.total_mass() == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), levels=st.integers(1, 5), n=st.integers(1, 2))
def test_tv_piecewise_constant_face_only(seed, levels, n):
    rng = np.random.default_rng(seed)
    root = RootCube.unit(n)
    g = AdaptedGrid(LipschitzGraph.flat(n), root, 3)
    v = rng.integers(0, levels, size=g.shape).astype(float)
    tv = total_variation(v, g)
    assert tv.volume_mass() == 0
    expect = sum(np.abs(np.diff(v, axis=a)).sum() * g.dx ** n for a in range(n + 1))
    assert tv.face_mass() == pytest.approx(expect, rel=1e-12)


# -- Fatou average -------------------------------------------------------------------------

def test_fatou_constant_zero():
    r = fatou_average(CONST, FLAT, CountingParams(0.5, 0.1, 0.5, 0.5), (0.25, 0.75),
                      [0.5, 0.25], depth=6, samples=5)
    assert r.value == 0


def test_fatou_requires_bounded_field():
    with pytest.raises(ValueError):
        fatou_average(builtin_field("constant", c=2.0), FLAT, CountingParams(0.5, 0.1, 0.5, 0.5),
                      (0.25, 0.75), [0.5], depth=5, samples=3)


def test_fatou_doubling_eps_never_increases():
    p1 = CountingParams(0.5, 0.1, 0.5, 0.5)
    p2 = CountingParams(0.5, 0.2, 0.5, 0.5)
    a = fatou_average(Y1, FLAT, p1, (0.25, 0.75), [0.5, 0.25], depth=7, samples=5).value
    b = fatou_average(Y1, FLAT, p2, (0.25, 0.75), [0.5, 0.25], depth=7, samples=5).value
    assert 0 < b <= a
