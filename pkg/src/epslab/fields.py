"""Scalar fields on the domain and the function-class diagnostics.

A field bundles evaluators for ``u``, ``grad u`` and ``lap u``; all take
points of shape ``(..., n+1)``.  The diagnostics sample the pointwise ratio
``|u lap u| / |grad u|^2``, the ball-oscillation conditions and the sign
conditions of the sufficient criteria for the oscillation condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .geometry import LipschitzGraph, RootCube, distance_to_boundary

Array = np.ndarray

BUILTIN_FIELDS = ("constant", "coordinate_y", "harmonic_sinexp", "paraboloid",
                  "power_alpha", "custom")


# -- finite differences --------------------------------------------------

def fd_gradient(u: Callable[[Array], Array], points, delta: float = 1e-3) -> Array:
    """Central differences, second order in ``delta``."""
    p = np.asarray(points, dtype=float)
    g = np.empty(p.shape, dtype=float)
    for i in range(p.shape[-1]):
        e = np.zeros(p.shape[-1])
        e[i] = delta
        g[..., i] = (u(p + e) - u(p - e)) / (2 * delta)
    return g


def fd_laplacian(u: Callable[[Array], Array], points, delta: float = 1e-3) -> Array:
    p = np.asarray(points, dtype=float)
    centre = u(p)
    out = np.zeros(p.shape[:-1])
    for i in range(p.shape[-1]):
        e = np.zeros(p.shape[-1])
        e[i] = delta
        out += u(p + e) + u(p - e) - 2 * centre
    return out / delta ** 2


@dataclass(frozen=True)
class ScalarField:
    n: int
    u: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    laplacian: Callable[[Array], Array]
    sup_norm_hint: Optional[float] = None
    name: str = "custom"
    analytic: bool = True

    @classmethod
    def from_function(cls, u: Callable[[Array], Array], n: int = 1, delta: float = 1e-3,
                      sup_norm_hint: Optional[float] = None, name: str = "custom") -> "ScalarField":
        """Field whose derivatives come from central finite differences of step ``delta``."""
        return cls(n, u, lambda p: fd_gradient(u, p, delta), lambda p: fd_laplacian(u, p, delta),
                   sup_norm_hint, name, analytic=False)

    def scaled(self, lam: float) -> "ScalarField":
        hint = None if self.sup_norm_hint is None else abs(lam) * self.sup_norm_hint
        return replace(self, u=lambda p: lam * self.u(p), grad=lambda p: lam * self.grad(p),
                       laplacian=lambda p: lam * self.laplacian(p), sup_norm_hint=hint,
                       name=f"{lam}*{self.name}")

    def shifted(self, c: float) -> "ScalarField":
        hint = None if self.sup_norm_hint is None else self.sup_norm_hint + abs(c)
        return replace(self, u=lambda p: self.u(p) + c, sup_norm_hint=hint,
                       name=f"{self.name}+{c}")

    def fd_view(self, delta: float = 1e-3) -> "ScalarField":
        return ScalarField.from_function(self.u, self.n, delta, self.sup_norm_hint, self.name)


def _y(p) -> Array:
    return np.asarray(p, dtype=float)[..., -1]


def builtin_field(name: str, n: int = 1, **params) -> ScalarField:
    """Analytic corpus fields.

    ``constant(c)``, ``coordinate_y(clip=None)``, ``harmonic_sinexp(k=1)``
    (``prod sin(k pi x_i) * exp(-k pi sqrt(n) y)``), ``paraboloid``
    (``|x|^2 + y^2``), ``power_alpha(p=0.5)`` (``y^p`` on ``y > 0``) and
    ``custom`` (``function=`` callable, or ``grid=(xs, ys, values)``).
    """
    if name == "constant":
        c = float(params.pop("c", 1.0))
        _no_extra(name, params)
        return ScalarField(n, lambda p: np.full(np.shape(p)[:-1], c),
                           lambda p: np.zeros(np.shape(p)),
                           lambda p: np.zeros(np.shape(p)[:-1]), abs(c), name)
    if name == "coordinate_y":
        clip = params.pop("clip", None)
        _no_extra(name, params)
        if clip is None:
            def grad(p):
                g = np.zeros(np.shape(p))
                g[..., -1] = 1.0
                return g
            return ScalarField(n, _y, grad, lambda p: np.zeros(np.shape(p)[:-1]), None, name)
        lo, hi = (float(v) for v in clip)

        def grad_clipped(p):
            g = np.zeros(np.shape(p))
            y = _y(p)
            g[..., -1] = ((y > lo) & (y < hi)).astype(float)
            return g
        return ScalarField(n, lambda p: np.clip(_y(p), lo, hi), grad_clipped,
                           lambda p: np.zeros(np.shape(p)[:-1]), max(abs(lo), abs(hi)),
                           f"{name}[{lo},{hi}]")
    if name == "harmonic_sinexp":
        k = float(params.pop("k", 1.0))
        _no_extra(name, params)
        w = k * math.pi
        decay = w * math.sqrt(n)

        def u(p):
            p = np.asarray(p, dtype=float)
            return np.prod(np.sin(w * p[..., :-1]), axis=-1) * np.exp(-decay * p[..., -1])

        def grad(p):
            p = np.asarray(p, dtype=float)
            s = np.sin(w * p[..., :-1])
            c = np.cos(w * p[..., :-1])
            e = np.exp(-decay * p[..., -1])
            g = np.empty(p.shape)
            for i in range(n):
                others = np.prod(np.delete(s, i, axis=-1), axis=-1) if n > 1 else 1.0
                g[..., i] = w * c[..., i] * others * e
            g[..., -1] = -decay * np.prod(s, axis=-1) * e
            return g
        # harmonic: the Laplacian vanishes identically
        return ScalarField(n, u, grad, lambda p: np.zeros(np.shape(p)[:-1]), 1.0, name)
    if name == "paraboloid":
        _no_extra(name, params)
        return ScalarField(n, lambda p: np.sum(np.square(p), axis=-1),
                           lambda p: 2.0 * np.asarray(p, dtype=float),
                           lambda p: np.full(np.shape(p)[:-1], 2.0 * (n + 1)), None, name)
    if name == "power_alpha":
        a = float(params.pop("p", params.pop("alpha", 0.5)))
        _no_extra(name, params)

        def pos(p):
            y = _y(p)
            return np.where(y > 0, y, np.nan)

        def grad(p):
            g = np.zeros(np.shape(p))
            g[..., -1] = a * pos(p) ** (a - 1)
            return g
        return ScalarField(n, lambda p: pos(p) ** a, grad,
                           lambda p: a * (a - 1) * pos(p) ** (a - 2), None, f"power_{a}")
    if name == "custom":
        if "function" in params:
            fn = params.pop("function")
            delta = float(params.pop("delta", 1e-3))
            hint = params.pop("sup_norm_hint", None)
            _no_extra(name, params)
            return ScalarField.from_function(fn, n, delta, hint, name)
        if "grid" in params:
            xs, ys, values = params.pop("grid")
            delta = params.pop("delta", None)
            _no_extra(name, params)
            return field_from_grid(xs, ys, values, delta)
        raise ValueError("custom field needs 'function' or 'grid'")
    raise ValueError(f"unknown builtin field {name!r}; expected one of {BUILTIN_FIELDS}")


def _no_extra(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"unexpected parameters for {name}: {sorted(params)}")


def field_from_grid(xs, ys, values, delta: Optional[float] = None) -> ScalarField:
    """Field sampled on a regular ``(x, y)`` grid (n = 1).

    Bicubic spline through the samples (bilinear below four nodes per
    axis); derivatives come from the spline itself unless ``delta`` asks
    for central differences.  Queries are clamped to the sample box.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    kx = 3 if len(xs) >= 4 else 1
    ky = 3 if len(ys) >= 4 else 1
    spl = RectBivariateSpline(xs, ys, values, kx=kx, ky=ky)
    lo = np.array([xs[0], ys[0]])
    hi = np.array([xs[-1], ys[-1]])

    def ev(p, dx=0, dy=0):
        p = np.asarray(p, dtype=float)
        q = np.clip(p, lo, hi).reshape(-1, 2)
        return spl.ev(q[:, 0], q[:, 1], dx=dx, dy=dy).reshape(p.shape[:-1])

    hint = float(np.max(np.abs(values)))
    if delta is not None:
        return ScalarField.from_function(ev, 1, delta, hint, "grid")
    return ScalarField(1, ev, lambda p: np.stack([ev(p, 1, 0), ev(p, 0, 1)], axis=-1),
                       lambda p: ev(p, 2, 0) + ev(p, 0, 2), hint, "grid", analytic=False)


# -- samplers ------------------------------------------------------------

@dataclass(frozen=True)
class BoxSampler:
    """Lattice of nodes ``lo + k * spacing`` inside the box ``[lo, hi]``."""

    lo: tuple
    hi: tuple
    spacing: float

    def points(self) -> Array:
        axes = [np.arange(a, b + 0.5 * self.spacing, self.spacing)
                for a, b in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


@dataclass(frozen=True)
class OscillationEstimate:
    value: float
    error_bound: float
    count: int


def oscillation(fld: ScalarField, region: Callable[[Array], Array], sampler) -> OscillationEstimate:
    """Sampled ``max - min`` of ``u`` over the region.

    The true oscillation exceeds the sampled one by at most
    ``2 * max|grad u| * spacing`` (reported as ``error_bound``).
    """
    pts = sampler.points()
    pts = pts[np.asarray(region(pts), dtype=bool)]
    if len(pts) == 0:
        raise ValueError("region contains no samples")
    vals = fld.u(pts)
    lip = float(np.max(np.linalg.norm(fld.grad(pts), axis=-1)))
    return OscillationEstimate(float(np.max(vals) - np.min(vals)),
                               2.0 * lip * sampler.spacing, len(pts))


# -- pointwise class (#) ---------------------------------------------------

@dataclass(frozen=True)
class SharpReport:
    theta_sup: float
    theta: float
    holds: bool
    hard_failures: int
    witness: Optional[Array] = None


def sharp_ratio(fld: ScalarField, points, zero_tol: float = 1e-14) -> tuple[Array, Array]:
    """Pointwise ``|u lap u| / |grad u|^2`` with 0/0 -> 0; second array flags hard failures."""
    p = np.asarray(points, dtype=float)
    num = np.abs(fld.u(p) * fld.laplacian(p))
    den = np.sum(np.square(fld.grad(p)), axis=-1)
    critical = den <= zero_tol
    hard = critical & (num > zero_tol)
    ratio = np.divide(num, den, out=np.zeros_like(num), where=~critical)
    ratio[hard] = np.inf
    return ratio, hard


def check_sharp(fld: ScalarField, points, theta: float) -> SharpReport:
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    p = np.asarray(points, dtype=float)
    ratio, hard = sharp_ratio(fld, p)
    i = int(np.argmax(ratio))
    sup = float(ratio.flat[i])
    return SharpReport(sup, theta, bool(sup <= theta and not hard.any()), int(hard.sum()),
                       p.reshape(-1, p.shape[-1])[i])


# -- ball conditions -------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: Array
    radius: float


@lru_cache(maxsize=16)
def _unit_ball_rule(dim: int, cells: int, supersample: int) -> tuple[Array, Array]:
    """Midpoint nodes of a cube lattice over ``[-1, 1]^dim`` and covered fractions."""
    step = 2.0 / cells
    ax = -1 + (np.arange(cells) + 0.5) * step
    nodes = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    half_diag = 0.5 * step * math.sqrt(dim)
    r = np.linalg.norm(nodes, axis=-1)
    frac = (r + half_diag <= 1.0).astype(float)
    partial = (r - half_diag < 1.0) & (r + half_diag > 1.0)
    sub = -0.5 * step + (np.arange(supersample) + 0.5) * step / supersample
    offs = np.stack(np.meshgrid(*([sub] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    inside = np.linalg.norm(nodes[partial][:, None, :] + offs[None], axis=-1) < 1.0
    frac[partial] = inside.mean(axis=1)
    keep = frac > 0
    return nodes[keep], frac[keep] * step ** dim


def ball_integral(f: Callable[[Array], Array], center, radius: float, cells: int = 32,
                  supersample: int = 4) -> float:
    """Midpoint rule over a ball with supersampled coverage of boundary cells."""
    c = np.asarray(center, dtype=float)
    nodes, w = _unit_ball_rule(len(c), cells, supersample)
    return float(np.sum(f(c + radius * nodes) * w) * radius ** len(c))


def ball_samples(center, radius: float, per_radius: int = 16) -> Array:
    """Lattice points of spacing ``radius / per_radius`` in the closed ball, aligned on the center."""
    c = np.asarray(center, dtype=float)
    k = np.arange(-per_radius, per_radius + 1)
    offs = np.stack(np.meshgrid(*([k] * len(c)), indexing="ij"), axis=-1).reshape(-1, len(c))
    offs = offs[np.sum(offs * offs, axis=-1) <= per_radius ** 2]
    return c + offs * (radius / per_radius)


@dataclass(frozen=True)
class BallSampler:
    """Center-aligned lattice in a closed ball, for :func:`oscillation`."""

    center: tuple
    radius: float
    per_radius: int = 16

    @property
    def spacing(self) -> float:
        return self.radius / self.per_radius

    def points(self) -> Array:
        return ball_samples(self.center, self.radius, self.per_radius)


def default_balls(graph: LipschitzGraph, root: RootCube, eta: float = 0.0, per_axis: int = 6,
                  levels: Sequence[float] = (0.5, 0.25, 0.125, 0.0625)) -> list[Ball]:
    """Centers on a lattice over the root at heights ``h``; ``r = h / (2 (1+eta) sqrt(1+L^2))``."""
    L = graph.lipschitz_L
    out = []
    xs = [root.origin[i] + (np.arange(per_axis) + 0.5) * root.side / per_axis
          for i in range(root.n)]
    base = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, root.n)
    for h in levels:
        hh = h * root.side
        r = hh / (2 * (1 + eta) * math.sqrt(1 + L * L))
        for x in base:
            out.append(Ball(np.append(x, float(graph(x)) + hh), r))
    return out


def _validate_ball(graph: LipschitzGraph, ball: Ball, eta: float) -> None:
    h = float(graph.height(ball.center))
    need = 2 * ball.radius
    if h / math.sqrt(1 + graph.lipschitz_L ** 2) >= need:
        return
    if h <= 0 or distance_to_boundary(graph, ball.center) < need:
        raise ValueError(f"ball {ball} violates 2B inside the domain")


@dataclass(frozen=True)
class BallRatio:
    sup: float
    witness: Optional[Ball]
    ratios: Array


def _ball_ratios(fld: ScalarField, graph: LipschitzGraph, balls: Iterable[Ball], eta: float,
                 density: Callable[[Array], Array], squared: bool, cells: int,
                 per_radius: int) -> BallRatio:
    n = fld.n
    vals = []
    balls = list(balls)
    for b in balls:
        _validate_ball(graph, b, eta)
        osc = np.ptp(fld.u(ball_samples(b.center, b.radius, per_radius)))
        integral = ball_integral(density, b.center, (1 + eta) * b.radius, cells)
        denom = b.radius ** (1 - n) * integral
        num = osc * osc if squared else osc
        if not squared:
            denom = math.sqrt(max(denom, 0.0))
        if denom <= 0:
            vals.append(0.0 if num == 0 else math.inf)
        else:
            vals.append(num / denom)
    vals = np.asarray(vals)
    if len(vals) == 0:
        return BallRatio(0.0, None, vals)
    i = int(np.argmax(vals))
    return BallRatio(float(vals[i]), balls[i], vals)


def star_ratios(fld: ScalarField, graph: LipschitzGraph, balls: Iterable[Ball], eta: float = 0.0,
                cells: int = 32, per_radius: int = 16) -> BallRatio:
    """``osc_B u / (r^{1-n} int_{(1+eta)B} |grad u|^2 + |u lap u|)^{1/2}`` per ball."""
    def density(p):
        return np.sum(np.square(fld.grad(p)), axis=-1) + np.abs(fld.u(p) * fld.laplacian(p))
    return _ball_ratios(fld, graph, balls, eta, density, False, cells, per_radius)


@dataclass(frozen=True)
class StarReport:
    star_ratio_sup: float
    C: float
    eta: float
    holds: bool
    witness: Optional[Ball]


def check_star(fld: ScalarField, graph: LipschitzGraph, root: RootCube, C: float,
               eta: float = 0.0, balls: Optional[Iterable[Ball]] = None, **kw) -> StarReport:
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    balls = default_balls(graph, root, eta) if balls is None else balls
    res = star_ratios(fld, graph, balls, eta, **kw)
    return StarReport(res.sup, C, eta, res.sup <= C, res.witness)


def morrey_ratio(fld: ScalarField, graph: LipschitzGraph, balls: Iterable[Ball],
                 eta: float = 0.0, cells: int = 32, per_radius: int = 16) -> BallRatio:
    """``(osc_B u)^2 / (r^{1-n} int_{(1+eta)B} |grad u|^2)``; zero denominators give inf."""
    def density(p):
        return np.sum(np.square(fld.grad(p)), axis=-1)
    return _ball_ratios(fld, graph, balls, eta, density, True, cells, per_radius)


# -- sufficient conditions -----------------------------------------------------

@dataclass
class ClassReport:
    theta_sup: float
    sharp: bool
    hard_failures: int
    star_ratio_sup: Optional[float] = None
    morrey_ratio_sup: Optional[float] = None
    prop31: bool = False
    prop32: Optional[bool] = None
    prop32_alpha: Optional[float] = None
    prop33: dict = field(default_factory=dict)
    implied_theta: Optional[float] = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "theta_sup": self.theta_sup, "sharp": self.sharp,
            "hard_failures": self.hard_failures, "star_ratio_sup": self.star_ratio_sup,
            "morrey_ratio_sup": self.morrey_ratio_sup, "prop31": self.prop31,
            "prop32": self.prop32, "prop32_alpha": self.prop32_alpha,
            "prop33": dict(self.prop33), "implied_theta": self.implied_theta,
            "notes": list(self.notes),
        }


def classify(fld: ScalarField, points, *, alpha: float = 0.5, grad_power: Optional[float] = 1.0,
             graph: Optional[LipschitzGraph] = None, balls: Optional[Iterable[Ball]] = None,
             eta: float = 0.0, delta: float = 1e-3, tol: float = 1e-10) -> ClassReport:
    """Evaluate every sufficient-condition branch on the sample points.

    ``alpha`` is the exponent of the ``lap u^alpha <= 0`` branch (implied
    ``theta = 1 - alpha``); ``grad_power`` the exponent of the subharmonic
    ``|grad u|^a`` branch, checked with finite differences of step ``delta``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, fld.n + 1)
    u = fld.u(p)
    g = fld.grad(p)
    lap = fld.laplacian(p)
    gsq = np.sum(g * g, axis=-1)
    ratio, hard = sharp_ratio(fld, p)
    theta_sup = float(np.max(ratio))
    rep = ClassReport(theta_sup, bool(theta_sup < 1 and not hard.any()), int(hard.sum()))

    rep.prop31 = bool(np.all(u >= -tol) and np.all(lap >= -tol))

    if grad_power is not None:
        if not 0 < grad_power <= 2:
            raise ValueError("grad_power must lie in (0, 2]")
        def gp(q):
            return np.linalg.norm(fld.grad(q), axis=-1) ** grad_power
        lap_gp = fd_laplacian(gp, p, delta)
        slack = 1e-6 * (1 + float(np.max(np.abs(gp(p)))))
        rep.prop32 = bool(np.all(u >= -tol) and np.all(lap_gp >= -slack))
        rep.prop32_alpha = grad_power

    positive = u > 0
    uLu = u * lap
    branches: dict = {"u_lap_u_nonneg": bool(np.all(uLu >= -tol))}
    if not positive.all():
        rep.notes.append(f"{int((~positive).sum())} samples with u <= 0 invalidate ln/inverse/power branches")
        branches.update(log=False, inverse=False, power=False)
    else:
        branches["log"] = bool(np.all((uLu - gsq) / u ** 2 <= tol))
        branches["inverse"] = bool(np.all((2 * gsq - uLu) / u ** 3 >= -tol))
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        lap_pow = alpha * u ** (alpha - 2) * (uLu - (1 - alpha) * gsq)
        branches["power"] = bool(np.all(lap_pow <= tol))
        branches["alpha"] = alpha
        if branches["power"]:
            rep.implied_theta = 1 - alpha
    rep.prop33 = branches

    if graph is not None and balls is not None:
        balls = list(balls)
        rep.star_ratio_sup = star_ratios(fld, graph, balls, eta).sup
        rep.morrey_ratio_sup = morrey_ratio(fld, graph, balls, eta).sup
    return rep
