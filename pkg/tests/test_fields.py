import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epslab.fields import (Ball, BallSampler, BoxSampler, ScalarField, ball_integral,
                           builtin_field, check_sharp, check_star, classify, default_balls,
                           fd_gradient, fd_laplacian, field_from_grid, morrey_ratio,
                           oscillation, sharp_ratio, star_ratios)
from epslab.geometry import LipschitzGraph, RootCube

FLAT = LipschitzGraph.flat(1)
ROOT = RootCube.unit(1)


def interior(n=1, count=1000, seed=0, lo=0.05, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(count, n + 1))


HARMONIC = [("constant", {}), ("coordinate_y", {}), ("harmonic_sinexp", {}),
            ("harmonic_sinexp", {"k": 2})]
CORPUS = HARMONIC + [("paraboloid", {}), ("power_alpha", {"p": 0.5})]


# -- builtins ----------------------------------------------------------------------

def test_constant():
    f = builtin_field("constant", c=1.0)
    p = interior(count=10)
    assert np.all(f.u(p) == 1) and np.all(f.grad(p) == 0) and np.all(f.laplacian(p) == 0)


def test_coordinate_y():
    f = builtin_field("coordinate_y")
    p = interior(count=10)
    np.testing.assert_array_equal(f.u(p), p[:, 1])
    assert np.all(f.laplacian(p) == 0)


def test_sinexp_closed_form():
    f = builtin_field("harmonic_sinexp")
    p = np.array([[0.5, 0.0], [0.25, 1.0]])
    np.testing.assert_allclose(f.u(p), [1.0, math.sin(math.pi / 4) * math.exp(-math.pi)])
    # second differences of the closed form vanish (harmonic)
    np.testing.assert_allclose(fd_laplacian(f.u, interior(count=50), 1e-3), 0, atol=2e-5)


def test_unknown_builtin():
    with pytest.raises(ValueError):
        builtin_field("nope")
    with pytest.raises(ValueError):
        builtin_field("constant", bogus=1)


@pytest.mark.parametrize("name,params", CORPUS)
@pytest.mark.parametrize("n", [1, 2])
def test_fd_gradient_matches_analytic(name, params, n):
    f = builtin_field(name, n, **params)
    p = interior(n)
    g = f.grad(p)
    fd = fd_gradient(f.u, p, 1e-3)
    scale = np.maximum(np.linalg.norm(g, axis=-1), 1e-3)
    assert np.max(np.linalg.norm(fd - g, axis=-1) / scale) < 1e-4


def test_fd_error_is_second_order():
    f = builtin_field("harmonic_sinexp")
    p = interior(count=200)
    e1 = np.max(np.abs(fd_gradient(f.u, p, 1e-2) - f.grad(p)))
    e2 = np.max(np.abs(fd_gradient(f.u, p, 5e-3) - f.grad(p)))
    assert 3.5 < e1 / e2 < 4.5


@pytest.mark.parametrize("name,params", CORPUS)
def test_evaluators_finite(name, params):
    f = builtin_field(name, **params)
    p = interior()
    assert np.all(np.isfinite(f.u(p))) and np.all(np.isfinite(f.grad(p)))
    assert np.all(np.isfinite(f.laplacian(p)))


def test_field_from_grid_roundtrip():
    xs = np.linspace(0, 1, 33)
    ys = np.linspace(0, 1, 33)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    f = field_from_grid(xs, ys, X + 2 * Y)
    p = interior(count=50, hi=0.95)
    np.testing.assert_allclose(f.u(p), p[:, 0] + 2 * p[:, 1], atol=1e-12)
    np.testing.assert_allclose(f.grad(p), np.tile([1.0, 2.0], (50, 1)), atol=1e-9)
    np.testing.assert_allclose(f.laplacian(p), 0.0, atol=1e-8)


def test_field_from_grid_cubic_exact():
    xs = np.linspace(0, 1, 9)
    ys = np.linspace(0, 2, 17)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    f = field_from_grid(xs, ys, X ** 3 - 3 * X * Y ** 2)
    p = interior(count=50, hi=0.95)
    x, y = p[:, 0], p[:, 1]
    np.testing.assert_allclose(f.u(p), x ** 3 - 3 * x * y ** 2, atol=1e-10)
    np.testing.assert_allclose(f.laplacian(p), 0.0, atol=1e-8)


# -- oscillation ---------------------------------------------------------------------

def test_oscillation_constant():
    f = builtin_field("constant", c=3.0)
    est = oscillation(f, lambda p: np.ones(len(p), bool), BoxSampler((0, 0), (1, 1), 0.1))
    assert est.value == 0 and est.error_bound == 0


def test_oscillation_coordinate_y_unit_cube():
    f = builtin_field("coordinate_y")
    s = BoxSampler((0.0, 0.0), (1.0, 1.0), 1 / 64)
    est = oscillation(f, lambda p: np.ones(len(p), bool), s)
    assert est.value <= 1.0 <= est.value + est.error_bound


def test_oscillation_paraboloid_ball():
    f = builtin_field("paraboloid")
    s = BallSampler((0.0, 0.5), 0.25)
    est = oscillation(f, lambda p: np.ones(len(p), bool), s)
    assert est.value == pytest.approx(0.75 ** 2 - 0.25 ** 2, abs=1e-12)


def test_oscillation_empty_region():
    with pytest.raises(ValueError):
        oscillation(builtin_field("coordinate_y"), lambda p: np.zeros(len(p), bool),
                    BoxSampler((0, 0), (1, 1), 0.5))


# -- condition (#) -----------------------------------------------------------------

def test_sharp_coordinate_y():
    r = check_sharp(builtin_field("coordinate_y"), interior(), 0.1)
    assert r.theta_sup == 0 and r.holds


def test_sharp_paraboloid():
    r = check_sharp(builtin_field("paraboloid"), interior(), 0.99)
    assert r.theta_sup == pytest.approx(1.0, abs=1e-12) and not r.holds


@pytest.mark.parametrize("name,params", HARMONIC)
def test_sharp_harmonic_zero(name, params):
    r = check_sharp(builtin_field(name, **params), interior(), 0.5)
    assert r.theta_sup < 1e-6


def test_sharp_hard_failure_at_critical_point():
    # u = 1 + |z|^2 has grad 0 and u lap u = 4 at the origin
    f = builtin_field("paraboloid").shifted(1.0)
    ratio, hard = sharp_ratio(f, np.array([[0.0, 0.0], [0.3, 0.2]]))
    assert hard.tolist() == [True, False] and math.isinf(ratio[0])


def test_sharp_rejects_theta():
    with pytest.raises(ValueError):
        check_sharp(builtin_field("coordinate_y"), interior(), 1.0)


@settings(max_examples=30, deadline=None)
@given(lam=st.sampled_from([2.0, -3.0, 0.5]), seed=st.integers(0, 100))
def test_theta_scale_invariant(lam, seed):
    p = interior(count=200, seed=seed)
    for name in ("paraboloid", "harmonic_sinexp"):
        f = builtin_field(name)
        a = sharp_ratio(f, p)[0]
        b = sharp_ratio(f.scaled(lam), p)[0]
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)


# -- ball conditions -----------------------------------------------------------------

def _balls(levels=(0.5, 0.25)):
    return default_balls(FLAT, ROOT, 0.0, per_axis=4, levels=levels)


def test_star_constant_zero():
    r = check_star(builtin_field("constant"), FLAT, ROOT, 1.0, balls=_balls())
    assert r.star_ratio_sup == 0 and r.holds


@pytest.mark.parametrize("eta", [0.0, 0.5])
def test_star_coordinate_y_closed_form(eta):
    b = Ball(np.array([0.3, 0.8]), 0.2)
    r = star_ratios(builtin_field("coordinate_y"), FLAT, [b], eta)
    assert r.sup == pytest.approx(2 / ((1 + eta) * math.sqrt(math.pi)), rel=2e-3)


@pytest.mark.parametrize("eta", [0.0, 0.5])
def test_morrey_coordinate_y_closed_form(eta):
    b = Ball(np.array([0.3, 0.8]), 0.2)
    r = morrey_ratio(builtin_field("coordinate_y"), FLAT, [b], eta)
    assert r.sup == pytest.approx(4 / (math.pi * (1 + eta) ** 2), rel=4e-3)


def test_morrey_constant_zero():
    assert morrey_ratio(builtin_field("constant"), FLAT, _balls()).sup == 0


def test_star_paraboloid_bounded_across_refinement():
    f = builtin_field("paraboloid")
    coarse = star_ratios(f, FLAT, _balls((0.5, 0.25))).sup
    fine = star_ratios(f, FLAT, _balls((0.5, 0.25, 0.125, 0.0625))).sup
    assert math.isfinite(coarse) and fine <= 1.5 * coarse


def test_morrey_sinexp_stable():
    f = builtin_field("harmonic_sinexp")
    a = morrey_ratio(f, FLAT, _balls(), cells=24).sup
    b = morrey_ratio(f, FLAT, _balls(), cells=48).sup
    assert math.isfinite(a) and abs(a - b) / b < 0.02


def test_ball_violating_domain_rejected():
    with pytest.raises(ValueError):
        star_ratios(builtin_field("coordinate_y"), FLAT, [Ball(np.array([0.5, 0.3]), 0.2)])


def test_ball_integral_area():
    one = lambda p: np.ones(len(p))  # noqa: E731
    assert ball_integral(one, [0.0, 0.0], 1.0) == pytest.approx(math.pi, rel=3e-3)
    assert ball_integral(one, [0.0, 0.0], 1.0, supersample=8) == pytest.approx(math.pi, rel=2e-4)
    assert ball_integral(one, [0.0, 0.0, 0.0], 2.0) == pytest.approx(32 * math.pi / 3, rel=5e-3)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-5, 5))
def test_ratios_shift_invariant(c):
    f = builtin_field("harmonic_sinexp")
    balls = _balls((0.5,))
    a = morrey_ratio(f, FLAT, balls).ratios
    b = morrey_ratio(f.shifted(c), FLAT, balls).ratios
    np.testing.assert_allclose(a, b, rtol=1e-9)
    # the star ratio carries |u lap u|, which vanishes for harmonic u
    a = star_ratios(f, FLAT, balls).ratios
    b = star_ratios(f.shifted(c), FLAT, balls).ratios
    np.testing.assert_allclose(a, b, rtol=1e-9)


# -- classifier ---------------------------------------------------------------------

def test_classify_paraboloid():
    rep = classify(builtin_field("paraboloid"), interior())
    assert rep.prop31 and rep.theta_sup == pytest.approx(1.0, abs=0.01) and not rep.sharp


def test_classify_power_branch_for_y():
    rep = classify(builtin_field("coordinate_y"), interior(), alpha=0.5)
    assert rep.prop33["power"] and rep.implied_theta == 0.5


def test_classify_constant_all_branches():
    rep = classify(builtin_field("constant", c=1.0), interior())
    assert rep.prop31 and rep.prop32 and rep.sharp
    assert all(rep.prop33[k] for k in ("u_lap_u_nonneg", "log", "inverse", "power"))


def test_classify_nonpositive_samples_noted():
    rep = classify(builtin_field("harmonic_sinexp"), interior(lo=-1.0) * [1, 1])
    assert rep.notes and rep.prop33["log"] is False


def test_classify_report_nonnegative():
    rep = classify(builtin_field("harmonic_sinexp"), interior(), graph=FLAT, balls=_balls())
    assert rep.theta_sup >= 0 and rep.star_ratio_sup >= 0 and rep.morrey_ratio_sup >= 0
    assert rep.sharp  # theta_sup < 1


def test_from_function_is_fd():
    f = ScalarField.from_function(lambda p: p[..., 0] * p[..., 1], 1)
    p = interior(count=20)
    np.testing.assert_allclose(f.grad(p), p[:, ::-1], atol=1e-9)
    assert not f.analytic
