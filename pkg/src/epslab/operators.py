"""Boundary-behaviour operators: area, nontangential and counting functions,
Carleson constants of grid measures and total variation of grid fields.

Cone integrals are done in adapted coordinates ``(z, h)``.  For ``n = 1``
each row ``h`` of a cone is an interval in ``z`` (the map
``z -> |z - x| - alpha*phi(z)`` is monotone on each side of the vertex when
``alpha * L < 1``), so rows are integrated exactly against a piecewise
constant integrand through prefix sums.  Higher ``n`` falls back to masks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import ConeSpec, LipschitzGraph, _as_x, cone_mask
from .grid import AdaptedGrid

Array = np.ndarray


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    diverged: bool = False


# -- measures --------------------------------------------------------------

@dataclass(frozen=True)
class PointMeasure:
    """Finitely many weighted points in Cartesian coordinates."""

    points: Array
    weights: Array

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("measure weights must be nonnegative")

    def point_masses(self) -> tuple[Array, Array]:
        return np.atleast_2d(np.asarray(self.points, dtype=float)), np.asarray(self.weights, dtype=float)

    def total_mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class CellMeasure:
    """Volume weights per cell plus jump weights per interior face.

    ``face_weights[a]`` holds the faces orthogonal to axis ``a`` (the last
    axis is ``h``) and has the grid shape with ``shape[a] - 1`` along ``a``.
    Mass is placed at cell and face centers.
    """

    grid: AdaptedGrid
    volume_weights: Array
    face_weights: tuple = field(default=())

    def __post_init__(self):
        g = self.grid
        vw = np.asarray(self.volume_weights, dtype=float)
        if vw.shape != g.shape:
            raise ValueError(f"volume weights shape {vw.shape} != grid shape {g.shape}")
        fw = tuple(self.face_weights)
        if not fw:
            fw = tuple(np.zeros(_face_shape(g.shape, a)) for a in range(g.n + 1))
        if len(fw) != g.n + 1:
            raise ValueError("one face-weight array per axis is required")
        for a, w in enumerate(fw):
            if np.shape(w) != _face_shape(g.shape, a):
                raise ValueError(f"face weights on axis {a} have shape {np.shape(w)}")
        if np.any(vw < 0) or any(np.any(np.asarray(w) < 0) for w in fw):
            raise ValueError("measure weights must be nonnegative")
        object.__setattr__(self, "volume_weights", vw)
        object.__setattr__(self, "face_weights", tuple(np.asarray(w, dtype=float) for w in fw))

    @classmethod
    def zeros(cls, grid: AdaptedGrid) -> "CellMeasure":
        return cls(grid, np.zeros(grid.shape))

    def volume_mass(self) -> float:
        return float(self.volume_weights.sum())

    def face_mass(self) -> float:
        return float(sum(w.sum() for w in self.face_weights))

    def total_mass(self) -> float:
        return self.volume_mass() + self.face_mass()

    def scaled(self, lam: float) -> "CellMeasure":
        if lam < 0:
            raise ValueError("scale must be nonnegative")
        return CellMeasure(self.grid, lam * self.volume_weights,
                           tuple(lam * w for w in self.face_weights))

    def __add__(self, other: "CellMeasure") -> "CellMeasure":
        if other.grid != self.grid:
            raise ValueError("measures live on different grids")
        return CellMeasure(self.grid, self.volume_weights + other.volume_weights,
                           tuple(a + b for a, b in zip(self.face_weights, other.face_weights)))

    def point_masses(self) -> tuple[Array, Array]:
        return self._point_masses

    @cached_property
    def _point_masses(self) -> tuple[Array, Array]:
        g = self.grid
        pts, wts = [], []
        idx = np.nonzero(self.volume_weights)
        if idx[0].size:
            pts.append(_cell_points(g, idx, offset_axis=None))
            wts.append(self.volume_weights[idx])
        for a, w in enumerate(self.face_weights):
            idx = np.nonzero(w)
            if idx[0].size:
                pts.append(_cell_points(g, idx, offset_axis=a))
                wts.append(w[idx])
        if not pts:
            return np.zeros((0, g.n + 1)), np.zeros(0)
        return np.concatenate(pts), np.concatenate(wts)


def _face_shape(shape: tuple, axis: int) -> tuple:
    s = list(shape)
    s[axis] -= 1
    return tuple(s)


def _cell_points(g: AdaptedGrid, idx: tuple, offset_axis: Optional[int]) -> Array:
    """Cartesian centers of cells (or of the face after each cell along ``offset_axis``)."""
    coords = []
    for a in range(g.n):
        c = g.root.origin[a] + (idx[a] + 0.5) * g.dx
        if offset_axis == a:
            c = c + 0.5 * g.dx
        coords.append(c)
    x = np.stack(coords, axis=-1)
    h = (idx[g.n] + 0.5) * g.dx
    if offset_axis == g.n:
        h = h + 0.5 * g.dx
    return np.concatenate([x, (g.graph(x) + h)[:, None]], axis=-1)


def face_areas(grid: AdaptedGrid, axis: int) -> Array:
    """Cartesian areas of the interior faces orthogonal to ``axis``.

    Faces of constant ``x_a`` are vertical and have area ``dx^(n-1) * dh``;
    faces of constant ``h`` are graph translates with area element
    ``sqrt(1 + |grad phi|^2)``.
    """
    g = grid
    shape = _face_shape(g.shape, axis)
    if axis < g.n:
        return np.full(shape, g.dx ** g.n)
    ae = g.graph.area_element(g.x_centers) * g.dx ** g.n
    return np.broadcast_to(ae[..., None], shape)


def total_variation(values, grid: AdaptedGrid, kind: str = "cell") -> CellMeasure:
    """Total-variation measure of a grid field.

    ``kind="cell"``: piecewise constant per cell, jump part only.
    ``kind="node"``: continuous, given at the ``(N+1)^n x (Nh+1)`` nodes;
    per-cell gradients from edge differences, mapped to Cartesian
    derivatives through ``d/dx = d/dx' - (d phi/dx) d/dh``.
    """
    v = np.asarray(values, dtype=float)
    g = grid
    if kind == "cell":
        if v.shape != g.shape:
            raise ValueError(f"cell values shape {v.shape} != grid shape {g.shape}")
        faces = tuple(np.abs(np.diff(v, axis=a)) * face_areas(g, a) for a in range(g.n + 1))
        return CellMeasure(g, np.zeros(g.shape), faces)
    if kind != "node":
        raise ValueError("kind must be 'cell' or 'node'")
    node_shape = tuple(s + 1 for s in g.shape)
    if v.shape != node_shape:
        raise ValueError(f"node values shape {v.shape} != {node_shape}")
    d = g.n + 1
    partial = []
    for a in range(d):
        diff = np.diff(v, axis=a) / g.dx
        for b in range(d):
            if b != a:
                sl_lo = [slice(None)] * d
                sl_hi = [slice(None)] * d
                sl_lo[b] = slice(0, -1)
                sl_hi[b] = slice(1, None)
                diff = 0.5 * (diff[tuple(sl_lo)] + diff[tuple(sl_hi)])
        partial.append(diff)
    dphi = g.graph.gradient(g.x_centers)
    dphi = dphi.reshape(g.x_centers.shape[:-1] + (g.n,))
    dh = partial[-1]
    sq = dh * dh
    for a in range(g.n):
        cart = partial[a] - dphi[..., a][..., None] * dh
        sq = sq + cart * cart
    return CellMeasure(g, np.sqrt(sq) * g.cell_volume)


# -- Carleson constants -------------------------------------------------------

@dataclass(frozen=True)
class CarlesonResult:
    value: float
    witness_x: Optional[Array]
    witness_r: Optional[float]
    ratios: Array


def dyadic_radii(diam: float, levels: int) -> list[float]:
    return [diam * 2.0 ** -i for i in range(levels + 1)]


def carleson_constant(measure, graph: LipschitzGraph, radii: Sequence[float],
                      boundary_samples) -> CarlesonResult:
    """``max mu(B((x, phi(x)), r)) / r^n`` over samples ``x`` and radii ``r``.

    Balls are closed; mass sits at the measure's point locations.
    """
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive")
    xs = _as_x(boundary_samples, graph.n).reshape(-1, graph.n)
    pts, w = measure.point_masses()
    n = graph.n
    ratios = np.zeros((len(xs), len(radii)))
    if len(w):
        centres = np.concatenate([xs, graph(xs)[:, None]], axis=-1)
        rmax = radii[-1]
        for i, c in enumerate(centres):
            d = np.linalg.norm(pts - c, axis=-1)
            near = d <= rmax
            if not near.any():
                continue
            order = np.argsort(d[near], kind="stable")
            ds = d[near][order]
            cum = np.concatenate([[0.0], np.cumsum(w[near][order])])
            ratios[i] = cum[np.searchsorted(ds, radii, side="right")] / radii ** n
    k = int(np.argmax(ratios))
    i, j = np.unravel_index(k, ratios.shape)
    value = float(ratios[i, j])
    if value == 0.0:
        return CarlesonResult(0.0, None, None, ratios)
    return CarlesonResult(value, xs[i], float(radii[j]), ratios)


# -- cones in one boundary dimension ------------------------------------------

def _cone_half_width(graph: LipschitzGraph, alpha: float, h) -> Array:
    """Upper bound on ``|z - x|`` inside the cone at height ``h`` above the vertex."""
    aL = alpha * graph.lipschitz_L
    if aL >= 1:
        raise ValueError("aperture must satisfy alpha < 1/L")
    return alpha * np.asarray(h, dtype=float) / (1 - aL)


def cone_intervals(graph: LipschitzGraph, x0, alpha: float, h, iters: int = 60) -> tuple[Array, Array]:
    """Endpoints of the cone row ``{z : |z - x0| < alpha (h + phi(z) - phi(x0))}`` (n = 1).

    ``x0`` and ``h`` broadcast together.  Solved by vectorised bisection.
    """
    x0 = np.asarray(x0, dtype=float)
    h = np.asarray(h, dtype=float)
    x0, h = np.broadcast_arrays(x0, h)
    p0 = graph(x0[..., None])
    W = _cone_half_width(graph, alpha, h)

    def solve(sign):
        lo = np.zeros_like(h)
        hi = W.copy()
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            z = x0 + sign * mid
            g = mid - alpha * (graph(z[..., None]) - p0) - alpha * h
            inside = g < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return x0 + sign * 0.5 * (lo + hi)

    return solve(-1.0), solve(1.0)


def _prefix(values: Array, dz: float) -> Array:
    """Prefix integrals along the last axis at cell edges."""
    zeros = np.zeros(values.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(values, axis=-1) * dz], axis=-1)


def _interval_integral(prefix: Array, z_edges: Array, lo: Array, hi: Array) -> Array:
    """Integral over ``[lo, hi]`` of a row with cell edges ``z_edges`` (rows broadcast)."""
    out = np.empty(np.broadcast(lo, hi).shape)
    for r in range(prefix.shape[0]):
        out[..., r] = (np.interp(hi[..., r], z_edges, prefix[r])
                       - np.interp(lo[..., r], z_edges, prefix[r]))
    return out


def _density(fld, pts: Array) -> Array:
    g = fld.grad(pts)
    return np.sum(g * g, axis=-1)


def area_rows(fld, graph: LipschitzGraph, vertices, alpha: float, s: float, t: float,
              depth: int) -> tuple[Array, Array]:
    """Row contributions to ``A^2`` for many vertices (n = 1).

    Rows partition ``(s, t)`` into ``2**depth`` strips; returns the row
    centers and an array ``(V, rows)`` of row integrals, so cumulative sums
    give ``A^2`` for every truncation height on the row lattice.
    """
    if graph.n != 1:
        raise ValueError("area_rows handles one boundary dimension")
    xv = np.atleast_1d(np.asarray(vertices, dtype=float)).ravel()
    rows = 2 ** depth
    dh = (t - s) / rows
    hc = s + (np.arange(rows) + 0.5) * dh
    W = float(_cone_half_width(graph, alpha, t))
    lo_z, hi_z = xv.min() - W - dh, xv.max() + W + dh
    ncols = int(math.ceil((hi_z - lo_z) / dh))
    z_edges = lo_z + np.arange(ncols + 1) * dh
    zc = 0.5 * (z_edges[1:] + z_edges[:-1])
    phi_z = graph(zc[:, None])
    pts = np.stack(np.broadcast_arrays(zc[None, :], phi_z[None, :] + hc[:, None]), axis=-1)
    dens = _density(fld, pts)
    prefix = _prefix(dens, dh)
    zl, zr = cone_intervals(graph, xv[:, None], alpha, hc[None, :])
    return hc, _interval_integral(prefix, z_edges, zl, zr) * dh


def _area_sq_brute(fld, graph: LipschitzGraph, vertex, cone: ConeSpec, t: float, depth: int) -> float:
    n = graph.n
    x0 = _as_x(vertex, n).reshape(n)
    rows = 2 ** depth
    dh = (t - cone.s) / rows
    hc = cone.s + (np.arange(rows) + 0.5) * dh
    W = float(_cone_half_width(graph, cone.alpha, t))
    k = int(math.ceil(W / dh))
    axes = [x0[a] + (np.arange(-k, k) + 0.5) * dh for a in range(n)]
    xg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    phi = graph(xg)
    phi0 = float(graph(x0))
    total = 0.0
    for h in hc:
        pts = np.concatenate([xg, (phi + h)[:, None]], axis=-1)
        inside = cone_mask(graph, x0, ConeSpec(cone.alpha, cone.s, t), pts)
        if inside.any():
            weight = (pts[inside, -1] - phi0) ** (1 - n)
            total += float(np.sum(_density(fld, pts[inside]) * weight))
    return total * dh ** (n + 1)


def _area_value(fld, graph, vertex, cone, t, depth) -> float:
    if graph.n == 1:
        _, r = area_rows(fld, graph, [float(np.ravel(vertex)[0])], cone.alpha, cone.s, t, depth)
        return math.sqrt(max(float(r.sum()), 0.0))
    return math.sqrt(max(_area_sq_brute(fld, graph, vertex, cone, t, depth), 0.0))


def area_function(fld, graph: LipschitzGraph, vertex_x, cone: ConeSpec, depth: int = 9,
                  height_cap: float = 1.0) -> Estimate:
    """Truncated area function with a refinement error estimate.

    An infinite upper truncation is replaced by ``height_cap``.  The error
    is the change from ``depth - 1``; ``diverged`` is raised when the
    successive changes stop contracting while still above 5%.
    """
    cone.check_graph(graph)
    t = cone.t if math.isfinite(cone.t) else height_cap
    if t <= cone.s:
        return Estimate(0.0, 0.0)
    vals = [_area_value(fld, graph, vertex_x, cone, t, d) for d in (depth - 2, depth - 1, depth)]
    if not all(math.isfinite(v) for v in vals):
        return Estimate(float("nan"), float("inf"), True)
    e1 = abs(vals[2] - vals[1])
    e0 = abs(vals[1] - vals[0])
    rel = e1 / vals[2] if vals[2] > 0 else 0.0
    return Estimate(vals[2], e1, bool(rel > 0.05 and e1 > 0.75 * e0))


# -- nontangential maximal function ---------------------------------------

def _cone_points(graph: LipschitzGraph, vertex_x, alpha: float, s: float, t: float,
                 depth: int) -> Array:
    """Cell-center samples of ``Gamma_{alpha,s,t}`` at spacing ``(t - s) 2^-depth``."""
    n = graph.n
    x0 = _as_x(vertex_x, n).reshape(n)
    rows = 2 ** depth
    dh = (t - s) / rows
    hc = s + (np.arange(rows) + 0.5) * dh
    W = float(_cone_half_width(graph, alpha, t))
    k = int(math.ceil(W / dh))
    axes = [x0[a] + np.arange(-k, k + 1) * dh for a in range(n)]
    xg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    phi = graph(xg)
    pts = np.empty((len(hc), len(xg), n + 1))
    pts[..., :n] = xg[None]
    pts[..., n] = phi[None] + hc[:, None]
    pts = pts.reshape(-1, n + 1)
    return pts[cone_mask(graph, x0, ConeSpec(alpha, s, t), pts)]


def nontangential_max(fld, graph: LipschitzGraph, vertex_x, cone: ConeSpec, depth: int = 9,
                      height_cap: float = 1.0) -> Estimate:
    """Sampled sup of ``|u|`` over the cone; error is the gain from the last refinement."""
    cone.check_graph(graph)
    t = cone.t if math.isfinite(cone.t) else height_cap
    vals = []
    for d in (depth - 1, depth):
        pts = _cone_points(graph, vertex_x, cone.alpha, cone.s, t, d)
        vals.append(float(np.max(np.abs(fld.u(pts)))) if len(pts) else 0.0)
    return Estimate(vals[1], abs(vals[1] - vals[0]))


# -- counting function ----------------------------------------------------------

@dataclass(frozen=True)
class CountingParams:
    r: float
    eps: float
    beta: float
    alpha: float = 0.5

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class CountResult:
    value: int
    chain: Array
    n_points: int


def chain_levels(dist: Array, vals: Array, eps: float, beta: float) -> Array:
    """Longest admissible chain ending at each point (1 for a lone point).

    Point ``b`` can follow ``a`` iff ``dist[b] < beta * dist[a]`` and
    ``|vals[b] - vals[a]| >= eps``.  Level ``k + 1`` is reachable at ``b``
    iff some level-``k`` point farther than ``dist[b] / beta`` carries a
    value at least ``eps`` away; suffix max/min over the distance order
    answer that in ``O(P log P)`` per level.
    """
    dist = np.asarray(dist, dtype=float)
    vals = np.asarray(vals, dtype=float)
    level = np.ones(len(dist), dtype=np.int64)
    if len(dist) == 0:
        return level
    order = np.argsort(dist, kind="stable")
    threshold = dist / beta
    active = np.ones(len(dist), dtype=bool)
    k = 1
    while True:
        a = order[active[order]]
        if a.size == 0:
            break
        da = dist[a]
        va = vals[a]
        smax = np.maximum.accumulate(va[::-1])[::-1]
        smin = np.minimum.accumulate(va[::-1])[::-1]
        start = np.searchsorted(da, threshold, side="right")
        ok = start < len(a)
        st = np.minimum(start, len(a) - 1)
        up = ok & (smax[st] >= vals + eps)
        down = ok & (smin[st] <= vals - eps)
        nxt = up | down
        if not nxt.any():
            break
        k += 1
        level[nxt] = k
        active = nxt
    return level


def _backtrack(dist: Array, vals: Array, level: Array, eps: float, beta: float) -> list[int]:
    b = int(np.argmax(level))
    chain = [b]
    while level[b] > 1:
        cand = np.nonzero((level >= level[b] - 1) & (dist > dist[b] / beta)
                          & (np.abs(vals - vals[b]) >= eps))[0]
        b = int(cand[np.argmax(level[cand])])
        chain.append(b)
    return chain[::-1]


def counting_function(fld, graph: LipschitzGraph, vertex_x, params: CountingParams,
                      depth: int = 9) -> CountResult:
    """Longest admissible chain among cone samples, counted in points.

    A chain without any admissible jump counts as 0, so fields without
    ``eps``-jumps give 0.  Samples are cell centers of ``Gamma_{alpha,0,r}``
    at spacing ``r 2^-depth``; the result is a lower bound for the sup.
    """
    ConeSpec(params.alpha).check_graph(graph)
    pts = _cone_points(graph, vertex_x, params.alpha, 0.0, params.r, depth)
    if len(pts) == 0:
        return CountResult(0, np.zeros((0, graph.n + 1)), 0)
    n = graph.n
    x0 = _as_x(vertex_x, n).reshape(n)
    X = np.append(x0, float(graph(x0)))
    dist = np.linalg.norm(pts - X, axis=-1)
    vals = fld.u(pts)
    level = chain_levels(dist, vals, params.eps, params.beta)
    top = int(level.max())
    if top < 2:
        return CountResult(0, np.zeros((0, n + 1)), len(pts))
    chain = _backtrack(dist, vals, level, params.eps, params.beta)
    return CountResult(top, pts[chain], len(pts))


# -- quantitative Fatou average -----------------------------------------------

@dataclass(frozen=True)
class FatouResult:
    value: float
    witness_omega: Optional[Array]
    witness_r: Optional[float]
    table: list


def fatou_average(fld, graph: LipschitzGraph, params: CountingParams, boundary_window,
                  radii: Sequence[float], depth: int = 8, samples: int = 17) -> FatouResult:
    """``sup_{omega, r} r^-n int_{B(omega, r)} N(r, eps, beta) dsigma`` on a window.

    ``boundary_window`` is ``(lo, hi)`` per boundary axis.  Boundary points
    are cell midpoints of ``samples`` cells per axis carrying the surface
    weight ``sqrt(1 + |grad phi|^2) * dz^n``; ``params.r`` is ignored in
    favour of each radius in ``radii``.
    """
    n = graph.n
    lo, hi = (np.asarray(b, dtype=float).reshape(n) for b in zip(*_window(boundary_window, n)))
    dz = (hi - lo) / samples
    axes = [lo[a] + (np.arange(samples) + 0.5) * dz[a] for a in range(n)]
    zs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    sigma = graph.area_element(zs) * float(np.prod(dz))
    P = np.concatenate([zs, graph(zs)[:, None]], axis=-1)
    hint = getattr(fld, "sup_norm_hint", None)
    if hint is not None and hint > 1 + 1e-12:
        raise ValueError(f"fatou average needs ||u|| <= 1, sup_norm_hint = {hint}")
    best = (0.0, None, None)
    table = []
    for r in sorted(float(r) for r in radii):
        if not 0 < r < 1:
            raise ValueError("radii must lie in (0, 1)")
        p = CountingParams(r, params.eps, params.beta, params.alpha)
        counts = np.empty(len(zs))
        for i, z in enumerate(zs):
            pts = _cone_points(graph, z, p.alpha, 0.0, r, depth)
            if len(pts) and np.max(np.abs(fld.u(pts))) > 1 + 1e-12:
                raise ValueError("fatou average needs ||u|| <= 1 on the cones")
            counts[i] = counting_function(fld, graph, z, p, depth).value
        for i, w in enumerate(P):
            inside = np.linalg.norm(P - w, axis=-1) <= r
            avg = float(np.sum(counts[inside] * sigma[inside])) / r ** n
            table.append({"omega": zs[i].tolist(), "r": r, "value": avg})
            if avg > best[0]:
                best = (avg, zs[i], r)
    return FatouResult(best[0], best[1], best[2], table)


def _window(window, n: int):
    w = np.asarray(window, dtype=float)
    if w.shape == (2,):
        w = np.tile(w, (n, 1))
    if w.shape != (n, 2):
        raise ValueError("boundary window must be (lo, hi) or one pair per axis")
    return [tuple(row) for row in w]
