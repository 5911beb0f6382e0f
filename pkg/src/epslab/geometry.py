"""Lipschitz-graph domains, cones, curved dyadic cubes and their companions.

A domain is ``{(x, y) : y > phi(x)}`` with ``phi`` L-Lipschitz on R^n.  Points
of R^{n+1} are stored as arrays whose last axis holds ``(x_1, ..., x_n, y)``.
Every curved cube is the straight box ``Q x [0, l(Q)]`` in the adapted
coordinates ``(x, h)``, ``h = y - phi(x)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import RegularGridInterpolator

Array = np.ndarray


def _as_x(x, n: int) -> Array:
    """Coerce boundary coordinates to shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    if n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


@dataclass(frozen=True)
class LipschitzGraph:
    """Boundary function ``phi: R^n -> R`` with a declared Lipschitz constant.

    ``phi`` and ``grad_phi`` receive arrays of shape ``(..., n)``.
    """

    n: int
    phi: Callable[[Array], Array]
    lipschitz_L: float
    grad_phi: Optional[Callable[[Array], Array]] = None
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.lipschitz_L >= 0:
            raise ValueError("lipschitz_L must be nonnegative")

    def __call__(self, x) -> Array:
        return np.asarray(self.phi(_as_x(x, self.n)), dtype=float)

    def gradient(self, x, delta: float = 1e-6) -> Array:
        x = _as_x(x, self.n)
        if self.grad_phi is not None:
            return np.asarray(self.grad_phi(x), dtype=float)
        g = np.empty(x.shape, dtype=float)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = delta
            g[..., i] = (self(x + e) - self(x - e)) / (2 * delta)
        return g

    def area_element(self, x) -> Array:
        g = self.gradient(x)
        return np.sqrt(1.0 + np.sum(g * g, axis=-1))

    def height(self, points) -> Array:
        """``y - phi(x)`` for points of shape ``(..., n+1)``."""
        p = np.asarray(points, dtype=float)
        return p[..., -1] - self(p[..., :-1])

    # -- constructors ---------------------------------------------------
    @classmethod
    def flat(cls, n: int = 1) -> "LipschitzGraph":
        return cls(n, lambda x: np.zeros(x.shape[:-1]), 0.0,
                   lambda x: np.zeros(x.shape), name="flat")

    @classmethod
    def linear(cls, slope: Sequence[float] | float, offset: float = 0.0) -> "LipschitzGraph":
        a = np.atleast_1d(np.asarray(slope, dtype=float))
        return cls(len(a), lambda x: x @ a + offset, float(np.linalg.norm(a)),
                   lambda x: np.broadcast_to(a, x.shape).copy(), name="linear")

    @classmethod
    def abs_cone(cls, n: int = 1, slope: float = 1.0) -> "LipschitzGraph":
        """``phi(x) = slope * |x|`` (a cone with apex at the origin)."""
        def grad(x):
            r = np.linalg.norm(x, axis=-1, keepdims=True)
            return slope * np.divide(x, r, out=np.zeros_like(x), where=r > 0)
        return cls(n, lambda x: slope * np.linalg.norm(x, axis=-1), abs(slope), grad,
                   name="abs")

    @classmethod
    def sinusoid(cls, amplitude: float, frequency: float = 1.0) -> "LipschitzGraph":
        """``phi(x) = amplitude * sin(2 pi frequency x)`` for n = 1."""
        w = 2 * math.pi * frequency
        return cls(1, lambda x: amplitude * np.sin(w * x[..., 0]), abs(amplitude) * w,
                   lambda x: amplitude * w * np.cos(w * x), name="sinusoid")

    @classmethod
    def from_samples(cls, axes, values) -> "LipschitzGraph":
        """Piecewise-linear graph through boundary samples.

        For n = 1 ``axes`` is the list of abscissae.  For n >= 2 ``axes`` is a
        tuple of 1-D grid axes and ``values`` has the matching grid shape
        (multilinear interpolation).  Queries outside the sample box are
        clamped to it, which keeps the Lipschitz bound valid.
        """
        values = np.asarray(values, dtype=float)
        if not isinstance(axes, tuple):
            xs = np.asarray(axes, dtype=float)
            order = np.argsort(xs)
            xs, ys = xs[order], values[order]
            if np.any(np.diff(xs) <= 0):
                raise ValueError("boundary abscissae must be distinct")
            L = float(np.max(np.abs(np.diff(ys) / np.diff(xs)))) if len(xs) > 1 else 0.0
            return cls(1, lambda x: np.interp(x[..., 0], xs, ys), L, name="samples")
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        interp = RegularGridInterpolator(axes, values, method="linear")
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
        slopes = []
        for i, a in enumerate(axes):
            d = np.diff(values, axis=i) / np.expand_dims(
                np.diff(a), tuple(k for k in range(len(axes)) if k != i))
            slopes.append(np.max(np.abs(d)) if d.size else 0.0)
        L = float(np.sqrt(np.sum(np.square(slopes))))
        return cls(len(axes), lambda x: interp(np.clip(x, lo, hi)), L, name="samples")


@dataclass(frozen=True)
class ConeSpec:
    """Truncated cone ``Gamma_{alpha, s, t}``; ``s``, ``t`` are heights above the graph."""

    alpha: float
    s: float = 0.0
    t: float = math.inf

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("cone aperture must be positive")
        if not 0 <= self.s <= self.t:
            raise ValueError("cone truncation requires 0 <= s <= t")

    def check_graph(self, graph: LipschitzGraph) -> None:
        if graph.lipschitz_L > 0 and self.alpha * graph.lipschitz_L >= 1:
            raise ValueError(f"aperture {self.alpha} must be < 1/L = {1 / graph.lipschitz_L}")


@dataclass(frozen=True)
class RootCube:
    origin: tuple = (0.0,)
    side: float = 1.0

    @property
    def n(self) -> int:
        return len(self.origin)

    @classmethod
    def unit(cls, n: int = 1) -> "RootCube":
        return cls((0.0,) * n, 1.0)


@dataclass(frozen=True)
class CurvedCube:
    """Dyadic cube ``Q^m_j`` of the root, with its curved lift above the graph."""

    m: int
    j: tuple
    root: RootCube = field(default_factory=RootCube)

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("generation must be nonnegative")
        if len(self.j) != self.root.n:
            raise ValueError("index length must equal the root dimension")
        if any(not 0 <= k < 2 ** self.m for k in self.j):
            raise ValueError(f"index {self.j} out of range for generation {self.m}")

    @property
    def n(self) -> int:
        return self.root.n

    @property
    def side(self) -> float:
        return self.root.side * 2.0 ** (-self.m)

    @property
    def lower(self) -> Array:
        return np.asarray(self.root.origin, dtype=float) + np.asarray(self.j) * self.side

    @property
    def center_x(self) -> Array:
        return self.lower + 0.5 * self.side

    def contains_x(self, x) -> Array:
        x = _as_x(x, self.n)
        lo = self.lower
        return np.all((x >= lo) & (x <= lo + self.side), axis=-1)

    def parent(self) -> "CurvedCube":
        if self.m == 0:
            raise ValueError("root cube has no parent")
        return CurvedCube(self.m - 1, tuple(k // 2 for k in self.j), self.root)


@dataclass(frozen=True)
class DomainPoint:
    x: Array
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", float(self.y))

    def height(self, graph: LipschitzGraph) -> float:
        return self.y - float(graph(self.x))

    def in_domain(self, graph: LipschitzGraph) -> bool:
        return self.height(graph) > 0

    def as_array(self) -> Array:
        return np.append(self.x, self.y)

    @classmethod
    def from_array(cls, p) -> "DomainPoint":
        p = np.asarray(p, dtype=float)
        return cls(p[:-1], p[-1])


def _points(p) -> Array:
    if isinstance(p, DomainPoint):
        return p.as_array()
    return np.asarray(p, dtype=float)


# -- predicates ---------------------------------------------------------

def cone_mask(graph: LipschitzGraph, vertex_x, cone: ConeSpec, points) -> Array:
    """Vectorised membership in ``Gamma_{alpha,s,t}(vertex_x)`` (strict inequalities)."""
    p = _points(points)
    vx = _as_x(vertex_x, graph.n).reshape(graph.n)
    x, y = p[..., :-1], p[..., -1]
    h = y - graph(x)
    radial = np.linalg.norm(x - vx, axis=-1)
    return (radial < cone.alpha * (y - float(graph(vx)))) & (h > cone.s) & (h < cone.t)


def cone_membership(graph: LipschitzGraph, vertex_x, cone: ConeSpec, p: DomainPoint) -> bool:
    return bool(cone_mask(graph, vertex_x, cone, p))


def box_mask(graph: LipschitzGraph, cube: CurvedCube, points, h_lo: float, h_hi: float) -> Array:
    """Points with ``x`` in the closed base of ``cube`` and ``h_lo <= h <= h_hi``."""
    p = _points(points)
    h = graph.height(p)
    return cube.contains_x(p[..., :-1]) & (h >= h_lo) & (h <= h_hi)


def cube_membership(graph: LipschitzGraph, cube: CurvedCube, p) -> Array | bool:
    out = box_mask(graph, cube, p, 0.0, cube.side)
    return bool(out) if np.ndim(out) == 0 else out


def centers(graph: LipschitzGraph, cube: CurvedCube):
    """Center, associated center (shifted up by l) and the half-shifted center."""
    xq = cube.center_x
    base = float(graph(xq))
    l = cube.side
    return (DomainPoint(xq, base + 0.5 * l),
            DomainPoint(xq, base + 1.5 * l),
            DomainPoint(xq, base + l))


def translated_box_bounds(cube: CurvedCube) -> tuple[float, float]:
    """Height range of ``T(Q)``; for the root cube only its upper half."""
    l = cube.side
    if cube.m == 0:
        return 0.5 * l, l
    return 0.5 * l, 1.5 * l


def translated_box(graph: LipschitzGraph, cube: CurvedCube) -> Callable[[Array], Array]:
    lo, hi = translated_box_bounds(cube)
    return lambda points: box_mask(graph, cube, points, lo, hi)


def dyadic_children(cube: CurvedCube) -> list[CurvedCube]:
    return [CurvedCube(cube.m + 1, tuple(2 * k + b for k, b in zip(cube.j, bits)), cube.root)
            for bits in itertools.product((0, 1), repeat=cube.n)]


def adapted_volume(cube: CurvedCube) -> float:
    return cube.side ** (cube.n + 1)


# -- distances, shadows, ball/box comparisons ----------------------------

def distance_to_boundary(graph: LipschitzGraph, z, resolution: int = 64) -> float:
    """Euclidean distance from ``z`` to the graph.

    Grid search over boundary points within horizontal distance ``h`` of
    ``z`` followed by a local polish; clamped to ``[h / sqrt(1+L^2), h]``.
    """
    p = _points(z)
    zx, zy = p[:-1], p[-1]
    h = zy - float(graph(zx))
    if h <= 0:
        raise ValueError("point is not inside the domain")
    ax = np.linspace(-h, h, 2 * resolution + 1)
    offsets = np.stack(np.meshgrid(*([ax] * graph.n), indexing="ij"), axis=-1).reshape(-1, graph.n)
    offsets = offsets[np.linalg.norm(offsets, axis=-1) <= h]
    xs = zx + offsets
    d = np.hypot(np.linalg.norm(offsets, axis=-1), zy - graph(xs))
    best = xs[np.argmin(d)]

    def dist(x):
        x = np.atleast_1d(x)
        return float(np.hypot(np.linalg.norm(x - zx), zy - float(graph(x))))

    step = h / resolution
    if graph.n == 1:
        res = optimize.minimize_scalar(dist, bounds=(best[0] - step, best[0] + step),
                                       method="bounded", options={"xatol": 1e-12})
        polished = res.fun
    else:
        polished = optimize.minimize(dist, best, method="Nelder-Mead",
                                     options={"xatol": 1e-10, "fatol": 1e-12}).fun
    dmin = min(float(np.min(d)), float(polished))
    lower = h / math.sqrt(1.0 + graph.lipschitz_L ** 2)
    return float(min(max(dmin, lower), h))


@dataclass(frozen=True)
class Shadow:
    """Ball ``B(z, (1+alpha) d(z, boundary))``, to be intersected with the boundary."""

    center: DomainPoint
    radius: float
    distance: float
    alpha: float

    def contains_boundary_point(self, graph: LipschitzGraph, omega_x) -> Array:
        w = _as_x(omega_x, graph.n)
        pts = np.concatenate([w, graph(w)[..., None]], axis=-1)
        return np.linalg.norm(pts - self.center.as_array(), axis=-1) < self.radius


def shadow(graph: LipschitzGraph, z, alpha: float, resolution: int = 64) -> Shadow:
    p = z if isinstance(z, DomainPoint) else DomainPoint.from_array(z)
    if not p.in_domain(graph):
        raise ValueError("shadow requires a point inside the domain")
    d = distance_to_boundary(graph, p, resolution)
    return Shadow(p, (1.0 + alpha) * d, d, alpha)


def ball_box_constant(n: int, L: float) -> float:
    return math.sqrt(n + 1 + L * L)


@dataclass(frozen=True)
class BallBoxResult:
    ok: bool
    inner_ok: bool
    outer_ok: bool
    inner_radius: float
    outer_radius: float
    witness: Optional[Array] = None


def ball_box_check(graph: LipschitzGraph, cube: CurvedCube, inner: Optional[float] = None,
                   outer: Optional[float] = None, samples: int = 48) -> BallBoxResult:
    """Sampled check of ``B(c, inner) <= Q_hat <= B(c, outer)`` around the cube center.

    Defaults: ``inner = l / (2 sqrt(1+L^2))`` (the largest radius that always
    fits) and ``outer = sqrt(n+1+L^2) l``.  Pass ``inner=l`` to test the
    literal radius-``l`` inner ball, which does not fit inside a cube of
    side ``l``.
    """
    l = cube.side
    L = graph.lipschitz_L
    n = cube.n
    inner = l / (2 * math.sqrt(1 + L * L)) if inner is None else inner
    outer = ball_box_constant(n, L) * l if outer is None else outer
    c = centers(graph, cube)[0].as_array()

    t = np.linspace(-1.0, 1.0, samples + 1)
    grid = np.stack(np.meshgrid(*([t] * (n + 1)), indexing="ij"), axis=-1).reshape(-1, n + 1)
    ball_pts = c + inner * grid[np.linalg.norm(grid, axis=-1) <= 1.0]
    # closed inner ball vs closed cube: allow boundary contact up to rounding
    h = graph.height(ball_pts)
    inside = cube.contains_x(ball_pts[:, :-1]) & (h >= -1e-12) & (h <= l + 1e-12)
    witness = None
    inner_ok = bool(np.all(inside))
    if not inner_ok:
        witness = ball_pts[np.argmin(inside)]

    u = np.linspace(0.0, 1.0, samples + 1)
    box = np.stack(np.meshgrid(*([u] * (n + 1)), indexing="ij"), axis=-1).reshape(-1, n + 1)
    xs = cube.lower + box[:, :-1] * l
    cube_pts = np.concatenate([xs, (graph(xs) + box[:, -1] * l)[:, None]], axis=1)
    dist = np.linalg.norm(cube_pts - c, axis=-1)
    outer_ok = bool(np.all(dist <= outer * (1 + 1e-12)))
    if not outer_ok and witness is None:
        witness = cube_pts[np.argmax(dist)]
    return BallBoxResult(inner_ok and outer_ok, inner_ok, outer_ok, inner, outer, witness)
