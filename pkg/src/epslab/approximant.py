"""Stopping-time forest, the piecewise constant first approximation and the
epsilon-approximant, with the quantitative checks around them.

All dyadic cubes of generation ``0..max_depth`` are stored as arrays of
shape ``(2**m,)*n`` per generation.  The root is the only member of ``G_0``;
a cube is *selected* (joins the next ``G`` family) when the value at its
associated center differs by more than ``eps`` from the center value of its
governing cube, the deepest selected strict ancestor.  A selected cube
governs its own subtree, so maximality holds by construction.

Region assignment, colors and measures live on an :class:`AdaptedGrid`
with ``grid_depth >= max_depth + 2`` so the finest cube spans four cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .geometry import (ConeSpec, CurvedCube, LipschitzGraph, RootCube, box_mask,
                       translated_box_bounds)
from .grid import AdaptedGrid, GridSamples, block_reduce, expand, sample_field
from .operators import (CarlesonResult, CellMeasure, area_rows, carleson_constant,
                        dyadic_radii, face_areas, _area_sq_brute)

Array = np.ndarray


class ApproximationError(RuntimeError):
    """The measured sup error exceeds the proven bound plus the grid term."""

    def __init__(self, message: str, witness: Array, error: float, bound: float):
        super().__init__(message)
        self.witness = witness
        self.error = error
        self.bound = bound


def jump_selected(gov_values, assoc_values, eps: float) -> Array:
    """Stopping rule ``|u(x_gov) - u(x^l)| > eps``."""
    return np.abs(np.asarray(gov_values) - np.asarray(assoc_values)) > eps


def cube_centers_x(root: RootCube, m: int) -> Array:
    n = root.n
    side = root.side * 2.0 ** -m
    axes = [root.origin[a] + (np.arange(2 ** m) + 0.5) * side for a in range(n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class StoppingForest:
    graph: LipschitzGraph
    root: RootCube
    epsilon: float
    k_blue: float
    max_depth: int
    grid: AdaptedGrid
    samples: GridSamples
    center_values: list
    assoc_values: list
    selected: list
    gen_k: list
    gov_values: list
    gov_ids: list
    unresolved: Array
    labels: Array
    phi1: Array
    blue: Optional[list] = None
    osc: Optional[list] = None
    osc_error: Optional[list] = None

    @property
    def n(self) -> int:
        return self.root.n

    def side(self, m: int) -> float:
        return self.root.side * 2.0 ** -m

    @cached_property
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for m in range(self.max_depth + 1):
            out.append(acc)
            acc += 2 ** (self.n * m)
        return out

    def node_id(self, m: int, j: Sequence[int]) -> int:
        return self.offsets[m] + int(np.ravel_multi_index(tuple(j), (2 ** m,) * self.n))

    def node_of(self, node_id: int) -> tuple[int, tuple]:
        m = int(np.searchsorted(self.offsets, node_id, side="right") - 1)
        j = np.unravel_index(node_id - self.offsets[m], (2 ** m,) * self.n)
        return m, tuple(int(v) for v in j)

    def in_G(self, m: int, j: Sequence[int]) -> bool:
        return bool(self.selected[m][tuple(j)])

    def G_nodes(self) -> list[tuple[int, tuple]]:
        """Members of ``G`` in ``(m, j)`` lexicographic order."""
        out = []
        for m, s in enumerate(self.selected):
            for j in zip(*np.nonzero(s)):
                out.append((m, tuple(int(v) for v in j)))
        return out

    def G_families(self) -> dict[int, list]:
        fam: dict = {}
        for m, j in self.G_nodes():
            fam.setdefault(int(self.gen_k[m][j]), []).append((m, j))
        return fam

    def children_in_G1(self, m: int, j: Sequence[int]) -> list[tuple[int, tuple]]:
        """The maximal selected cubes governed by ``(m, j)``."""
        me = self.node_id(m, j)
        out = []
        for mm in range(m + 1, self.max_depth + 1):
            hit = self.selected[mm] & (self.gov_ids[mm] == me)
            for jj in zip(*np.nonzero(hit)):
                out.append((mm, tuple(int(v) for v in jj)))
        return out

    @property
    def unresolved_fraction(self) -> float:
        """Fraction of finest cubes that are unresolved leaves."""
        return float(self.unresolved.mean())

    @property
    def unresolved_cell_fraction(self) -> float:
        """Fraction of grid cells lying inside an unresolved leaf cube."""
        g = self.grid
        rows = g.level_rows(0.0, self.side(self.max_depth))
        cols = expand(self.unresolved, self.n, g.block(self.max_depth))
        hit = int(cols.sum()) * len(range(g.Nh)[rows])
        return hit / float(np.prod(g.shape))

    @property
    def colored(self) -> bool:
        return self.blue is not None

    def iter_nodes(self) -> Iterator[dict]:
        for m in range(self.max_depth + 1):
            for j in np.ndindex(*self.selected[m].shape):
                color = None
                if self.blue is not None:
                    color = "blue" if self.blue[m][j] else "red"
                k = int(self.gen_k[m][j])
                yield {"m": m, "j": [int(v) for v in j],
                       "generation_k": k if k >= 0 else None,
                       "selected": bool(self.selected[m][j]), "color": color,
                       "value": float(self.center_values[m][j])}

    def region_volumes(self) -> dict[int, float]:
        """Adapted volume of each ``R(Q)`` from the tree: own cube minus its ``G_1`` cubes."""
        d = self.n + 1
        vol = {}
        for m, j in self.G_nodes():
            vol[self.node_id(m, j)] = self.side(m) ** d
        for m, j in self.G_nodes():
            if m == 0:
                continue
            vol[int(self.gov_ids[m][j])] -= self.side(m) ** d
        return vol


def build_forest(fld, graph: LipschitzGraph, root: RootCube, epsilon: float, k_blue: float = 0.5,
                 max_depth: int = 6, grid_depth: Optional[int] = None,
                 classify: bool = True) -> StoppingForest:
    """Run the stopping time down to ``max_depth`` and rasterise the regions.

    Leaves whose children would still be selected are flagged unresolved;
    their cells keep the deepest selected ancestor's value.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not k_blue > 0:
        raise ValueError("k_blue must be positive")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    gd = max_depth + 2 if grid_depth is None else grid_depth
    if gd < max_depth + 2:
        raise ValueError("grid_depth must be at least max_depth + 2")
    n = root.n
    grid = AdaptedGrid(graph, root, gd)
    samples = sample_field(fld, grid)

    center_vals, assoc_vals = [], []
    for m in range(max_depth + 2):
        xc = cube_centers_x(root, m)
        base = graph(xc)
        l = root.side * 2.0 ** -m
        center_vals.append(np.asarray(fld.u(np.concatenate([xc, (base + 0.5 * l)[..., None]], -1))))
        assoc_vals.append(np.asarray(fld.u(np.concatenate([xc, (base + 1.5 * l)[..., None]], -1))))

    ones = (1,) * n
    selected = [np.ones(ones, dtype=bool)]
    gen_k = [np.zeros(ones, dtype=np.int64)]
    gov_values = [np.full(ones, np.nan)]
    gov_ids = [np.full(ones, -1, dtype=np.int64)]
    carry_val = center_vals[0]
    carry_id = np.zeros(ones, dtype=np.int64)
    carry_k = np.zeros(ones, dtype=np.int64)
    offset = 1
    for m in range(1, max_depth + 1):
        ids = offset + np.arange(2 ** (n * m), dtype=np.int64).reshape((2 ** m,) * n)
        offset += 2 ** (n * m)
        gv = expand(carry_val, n, 2)
        gi = expand(carry_id, n, 2)
        gk = expand(carry_k, n, 2)
        s = jump_selected(gv, assoc_vals[m], epsilon)
        selected.append(s)
        gov_values.append(gv)
        gov_ids.append(gi)
        gen_k.append(np.where(s, gk + 1, -1))
        carry_val = np.where(s, center_vals[m], gv)
        carry_id = np.where(s, ids, gi)
        carry_k = np.where(s, gk + 1, gk)
    nxt = jump_selected(expand(carry_val, n, 2), assoc_vals[max_depth + 1], epsilon)
    unresolved = block_reduce(nxt, n, max_depth, "any")

    labels = np.zeros(grid.shape, dtype=np.int64)
    phi1 = np.full(grid.shape, float(center_vals[0].ravel()[0]))
    offset = 1
    for m in range(1, max_depth + 1):
        ids = offset + np.arange(2 ** (n * m), dtype=np.int64).reshape((2 ** m,) * n)
        offset += 2 ** (n * m)
        rows = grid.level_rows(0.0, root.side * 2.0 ** -m)
        b = grid.block(m)
        s = expand(selected[m], n, b)[..., None]
        sub_l = labels[..., rows]
        sub_p = phi1[..., rows]
        labels[..., rows] = np.where(s, expand(ids, n, b)[..., None], sub_l)
        phi1[..., rows] = np.where(s, expand(center_vals[m], n, b)[..., None], sub_p)

    forest = StoppingForest(graph, root, float(epsilon), float(k_blue), max_depth, grid, samples,
                            center_vals, assoc_vals, selected, gen_k, gov_values, gov_ids,
                            unresolved, labels, phi1)
    if classify:
        red_blue_classify(forest)
    return forest


def red_blue_classify(forest: StoppingForest, fld=None) -> StoppingForest:
    """Tag ``T(Q)`` of every dyadic cube up to ``max_depth``.

    Blue iff ``osc + err <= k eps``, where ``osc`` is sampled on cell centers
    and ``err = 2 max|grad u| * half_diagonal`` bounds the sampling gap; the
    ambiguity band counts as red.
    """
    grid = forest.grid
    n = forest.n
    if fld is not None:
        forest.samples = sample_field(fld, grid)
    u = forest.samples.u
    gn = forest.samples.grad_norm
    hd = grid.half_diagonal()
    blue, osc, err = [], [], []
    for m in range(forest.max_depth + 1):
        lo, hi = translated_box_bounds(CurvedCube(m, (0,) * n, forest.root))
        rows = grid.level_rows(lo, hi)
        cmax = block_reduce(u[..., rows].max(axis=-1), n, m, "max")
        cmin = block_reduce(u[..., rows].min(axis=-1), n, m, "min")
        gmax = block_reduce(gn[..., rows].max(axis=-1), n, m, "max")
        o = cmax - cmin
        e = 2.0 * gmax * hd
        osc.append(o)
        err.append(e)
        blue.append(o + e <= forest.k_blue * forest.epsilon)
    forest.blue, forest.osc, forest.osc_error = blue, osc, err
    return forest


def red_mask(forest: StoppingForest) -> Array:
    """Cells whose centers lie in some red ``T(Q)``."""
    if not forest.colored:
        red_blue_classify(forest)
    grid = forest.grid
    n = forest.n
    mask = np.zeros(grid.shape, dtype=bool)
    for m in range(forest.max_depth + 1):
        red = ~forest.blue[m]
        if not red.any():
            continue
        lo, hi = translated_box_bounds(CurvedCube(m, (0,) * n, forest.root))
        rows = grid.level_rows(lo, hi)
        mask[..., rows] |= expand(red, n, grid.block(m))[..., None]
    return mask


@dataclass(frozen=True)
class PhiOne:
    values: Array
    labels: Array
    unresolved_leaves: int
    unresolved_fraction: float


def build_phi1(forest: StoppingForest, fld=None) -> PhiOne:
    """Piecewise constant ``u(x_Q)`` on each ``R(Q)``, rasterised on cell centers."""
    return PhiOne(forest.phi1, forest.labels, int(forest.unresolved.sum()),
                  forest.unresolved_fraction)


@dataclass
class ApproximantField:
    grid: AdaptedGrid
    phi1: Array
    approximant: Array
    red: Array
    u: Array
    sup_error: float
    bound: float
    grid_term: float
    witness: Array
    jump: Optional[CellMeasure] = None

    def evaluate(self, points) -> Array:
        """Cell lookup of the approximant at Cartesian points inside the root box."""
        return self.approximant[self.cell_index(points)]

    def cell_index(self, points) -> tuple:
        g = self.grid
        p = np.asarray(points, dtype=float)
        x, h = p[..., :-1], g.graph.height(p)
        idx = []
        for a in range(g.n):
            idx.append(np.clip(np.floor((x[..., a] - g.root.origin[a]) / g.dx).astype(int), 0, g.N - 1))
        idx.append(np.clip(np.floor(h / g.dx).astype(int), 0, g.Nh - 1))
        return tuple(idx)


def error_bound_terms(forest: StoppingForest) -> tuple[float, float]:
    """``(grid_term, trunc_term)`` added to ``(k + 1) eps``.

    ``grid_term = 2 max|grad u| * half_diagonal``.  Cells below the finest
    translated boxes are controlled through the leaf column up to the
    finest associated center; ``trunc_term`` is how much that column
    oscillation exceeds ``k eps``.
    """
    grid = forest.grid
    n = forest.n
    hd = grid.half_diagonal()
    G = float(forest.samples.grad_norm.max())
    D = forest.max_depth
    rows = grid.level_rows(0.0, 1.5 * forest.side(D))
    u = forest.samples.u[..., rows]
    col = block_reduce(u.max(axis=-1), n, D, "max") - block_reduce(u.min(axis=-1), n, D, "min")
    col_osc = float(col.max()) + 2.0 * G * hd
    trunc = max(0.0, col_osc - forest.k_blue * forest.epsilon)
    return 2.0 * G * hd, trunc


def build_approximant(forest: StoppingForest, fld=None, check: bool = True) -> ApproximantField:
    """``u`` on the red set, ``phi1`` elsewhere; verifies the sup-error bound."""
    red = red_mask(forest)
    u = forest.samples.u
    approx = np.where(red, u, forest.phi1)
    diff = np.abs(u - approx)
    i = int(np.argmax(diff))
    sup = float(diff.flat[i])
    gterm, trunc = error_bound_terms(forest)
    bound = (forest.k_blue + 1.0) * forest.epsilon + gterm + trunc
    witness = forest.grid.points.reshape(-1, forest.n + 1)[i]
    if check and sup > bound:
        raise ApproximationError(f"sup error {sup:.6g} exceeds bound {bound:.6g}", witness, sup, bound)
    return ApproximantField(forest.grid, forest.phi1, approx, red, u, sup, bound, gterm + trunc, witness)


# -- Carleson decomposition -------------------------------------------------

def _face_pairs(arr: Array, axis: int) -> tuple[Array, Array]:
    lo = [slice(None)] * arr.ndim
    hi = [slice(None)] * arr.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return arr[tuple(lo)], arr[tuple(hi)]


def _face_centers(grid: AdaptedGrid, axis: int, idx: tuple) -> Array:
    from .operators import _cell_points
    return _cell_points(grid, idx, offset_axis=axis)


def decomposition_measures(approx: ApproximantField, fld) -> tuple[CellMeasure, CellMeasure, CellMeasure]:
    """``(mu1, mu2, mu3)``: the jump measure ``|grad phi1|`` of the regions,
    ``|grad u|`` on the red set and the jump of the approximant across the
    red boundary."""
    g = approx.grid
    d = g.n + 1
    red = approx.red
    phi1 = approx.phi1
    mu1_faces, mu3_faces = [], []
    for a in range(d):
        area = face_areas(g, a)
        r0, r1 = _face_pairs(red, a)
        p0, p1 = _face_pairs(phi1, a)
        mu1_faces.append(np.abs(p1 - p0) * area)
        mixed = r0 ^ r1
        w = np.zeros(mixed.shape)
        idx = np.nonzero(mixed)
        if idx[0].size:
            pts = _face_centers(g, a, idx)
            other = np.where(r0[idx], p1[idx], p0[idx])
            w[idx] = np.abs(np.asarray(fld.u(pts)) - other) * np.asarray(area)[idx]
        mu3_faces.append(w)
    zeros = np.zeros(g.shape)
    mu1 = CellMeasure(g, zeros, tuple(mu1_faces))
    gn = np.linalg.norm(np.asarray(fld.grad(g.points)), axis=-1)
    mu2 = CellMeasure(g, np.where(red, gn, 0.0) * g.cell_volume)
    mu3 = CellMeasure(g, zeros, tuple(mu3_faces))
    return mu1, mu2, mu3


def boundary_samples(root: RootCube, spacing_exp: int = 6) -> Array:
    """Boundary nodes at spacing ``side * 2^-spacing_exp`` (at most 17 per axis when n > 1)."""
    k = spacing_exp if root.n == 1 else min(spacing_exp, 4)
    t = np.linspace(0.0, 1.0, 2 ** k + 1)
    axes = [root.origin[a] + root.side * t for a in range(root.n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, root.n)


@dataclass
class RatioMax:
    value: float
    m: Optional[int]
    j: Optional[tuple]
    per_generation: list


@dataclass
class CarlesonReport:
    mu1: CarlesonResult
    mu2: CarlesonResult
    mu3: CarlesonResult
    car1: RatioMax
    car2: RatioMax
    masses: dict
    measures: tuple = field(repr=False, default=())

    def as_dict(self) -> dict:
        def c(res: CarlesonResult) -> dict:
            return {"value": res.value,
                    "witness_x": None if res.witness_x is None else [float(v) for v in res.witness_x],
                    "witness_r": res.witness_r}

        def r(x: RatioMax) -> dict:
            return {"value": x.value, "m": x.m, "j": None if x.j is None else list(x.j),
                    "per_generation": x.per_generation}
        return {"mu1_phi1_jumps": c(self.mu1), "mu2_grad_u_red": c(self.mu2),
                "mu3_red_jumps": c(self.mu3), "car1": r(self.car1), "car2": r(self.car2),
                "masses": dict(self.masses)}


def _subtree_max(forest: StoppingForest, per_cube: list, scale: Callable[[int], float]) -> RatioMax:
    """Max over cubes ``Q`` of ``scale(m) * sum of per_cube over cubes inside Q``."""
    n = forest.n
    D = forest.max_depth
    agg = [None] * (D + 1)
    agg[D] = per_cube[D].astype(float)
    for m in range(D - 1, -1, -1):
        agg[m] = per_cube[m] + block_reduce(agg[m + 1], n, m, "sum")
    best = RatioMax(0.0, None, None, [])
    for m in range(D + 1):
        ratio = agg[m] * scale(m)
        k = int(np.argmax(ratio))
        v = float(ratio.flat[k])
        best.per_generation.append(v)
        if v > best.value:
            best.value, best.m = v, m
            best.j = tuple(int(t) for t in np.unravel_index(k, ratio.shape))
    return best


def carleson_decomposition(approx: ApproximantField, forest: StoppingForest, graph: LipschitzGraph,
                           fld, radii: Optional[Sequence[float]] = None,
                           samples: Optional[Array] = None) -> CarlesonReport:
    """Carleson constants of the three measures plus the red-box packing ratios car1 and car2."""
    root = forest.root
    radii = dyadic_radii(root.side, 6) if radii is None else radii
    samples = boundary_samples(root) if samples is None else samples
    mu1, mu2, mu3 = decomposition_measures(approx, fld)
    res = [carleson_constant(mu, graph, radii, samples) for mu in (mu1, mu2, mu3)]

    grid = forest.grid
    n = forest.n
    eps = forest.epsilon
    gn = forest.samples.grad_norm
    integ, sizes = [], []
    for m in range(forest.max_depth + 1):
        lo, hi = translated_box_bounds(CurvedCube(m, (0,) * n, root))
        rows = grid.level_rows(lo, hi)
        red = ~forest.blue[m]
        I = block_reduce(gn[..., rows].sum(axis=-1), n, m, "sum") * grid.cell_volume
        integ.append(np.where(red, I, 0.0))
        sizes.append(np.where(red, forest.side(m) ** n, 0.0))
    car1 = _subtree_max(forest, integ, lambda m: eps / forest.side(m) ** n)
    car2 = _subtree_max(forest, sizes, lambda m: eps * eps / forest.side(m) ** n)
    masses = {"mu1": mu1.total_mass(), "mu2": mu2.total_mass(), "mu3": mu3.total_mass()}
    return CarlesonReport(res[0], res[1], res[2], car1, car2, masses, (mu1, mu2, mu3))


# -- stopping sums -------------------------------------------------------------

@dataclass
class StoppingSums:
    s1_lo: dict
    s1_hi: dict
    s2: dict
    ratio1_lo: float
    ratio1_hi: float
    ratio2: float
    witness1: Optional[tuple]
    witness2: Optional[tuple]

    def as_dict(self) -> dict:
        return {"ratio1_lo": self.ratio1_lo, "ratio1_hi": self.ratio1_hi, "ratio2": self.ratio2,
                "witness1": None if self.witness1 is None else [self.witness1[0], list(self.witness1[1])],
                "witness2": None if self.witness2 is None else [self.witness2[0], list(self.witness2[1])],
                "g_nodes": len(self.s2)}


def region_face_lattice(forest: StoppingForest) -> Array:
    """Flat face areas of ``R``-region boundaries on the doubled lattice.

    Cells sit at odd lattice indices, faces between them at even ones.
    Faces separating two regions belong to both boundaries (weight 2), the
    lateral walls and the top of the root to one; bottom faces lie on the
    graph and carry nothing.
    """
    g = forest.grid
    d = g.n + 1
    lab = forest.labels
    W = np.zeros(tuple(2 * s + 1 for s in g.shape))
    for a in range(d):
        flat = g.dx ** g.n
        l0, l1 = _face_pairs(lab, a)
        sl = [slice(1, None, 2)] * d
        sl[a] = slice(2, -2, 2)
        W[tuple(sl)] = 2.0 * flat * (l0 != l1)
        sl[a] = slice(-1, None)
        W[tuple(sl)] = flat
        if a < g.n:
            sl[a] = slice(0, 1)
            W[tuple(sl)] = flat
    return W


def _box_sums(prefix: Array, lo: Array, hi: Array) -> Array:
    """Inclusive box sums from a zero-padded prefix-sum array (rows of ``lo``/``hi``)."""
    d = lo.shape[1]
    total = np.zeros(len(lo))
    for corner in range(2 ** d):
        idx, sign = [], 1
        for a in range(d):
            if corner >> a & 1:
                idx.append(lo[:, a])
                sign = -sign
            else:
                idx.append(hi[:, a] + 1)
        total += sign * prefix[tuple(idx)]
    return total


def stopping_sums(forest: StoppingForest) -> StoppingSums:
    g = forest.grid
    n = forest.n
    eps = forest.epsilon
    W = region_face_lattice(forest)
    P = W
    for a in range(W.ndim):
        P = np.cumsum(P, axis=a)
    P = np.pad(P, [(1, 0)] * W.ndim)
    nodes = forest.G_nodes()
    lo = np.zeros((len(nodes), n + 1), dtype=np.int64)
    hi = np.zeros((len(nodes), n + 1), dtype=np.int64)
    for i, (m, j) in enumerate(nodes):
        b = g.block(m)
        for a in range(n):
            lo[i, a] = 2 * j[a] * b
            hi[i, a] = 2 * (j[a] + 1) * b
        hi[i, n] = 2 * b
    s1 = _box_sums(P, lo, hi)
    stretch = math.sqrt(1 + g.graph.lipschitz_L ** 2)

    D = forest.max_depth
    own = [np.where(forest.selected[m], forest.side(m) ** n, 0.0) for m in range(D + 1)]
    agg = [None] * (D + 1)
    agg[D] = own[D]
    for m in range(D - 1, -1, -1):
        agg[m] = own[m] + block_reduce(agg[m + 1], n, m, "sum")

    s1_lo, s1_hi, s2 = {}, {}, {}
    r1 = r2 = 0.0
    w1 = w2 = None
    for i, (m, j) in enumerate(nodes):
        scale = eps * eps / forest.side(m) ** n
        s1_lo[(m, j)] = float(s1[i])
        s1_hi[(m, j)] = float(s1[i]) * stretch
        s2[(m, j)] = float(agg[m][j])
        if s1[i] * scale > r1:
            r1, w1 = float(s1[i] * scale), (m, j)
        if agg[m][j] * scale > r2:
            r2, w2 = float(agg[m][j] * scale), (m, j)
    return StoppingSums(s1_lo, s1_hi, s2, r1, r1 * stretch, r2, w1, w2)


# -- R-tilde regions --------------------------------------------------------------

def _deck_samples(cube: CurvedCube, per_axis: int = 33) -> Array:
    t = np.linspace(0.0, 1.0, per_axis)
    axes = [cube.lower[a] + cube.side * t for a in range(cube.n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cube.n)


def rtilde_piece(forest: StoppingForest, m: int, j: Sequence[int], alpha: float,
                 deck_samples: int = 33) -> Callable[[Array], Array]:
    """Region attached to one ``G_1`` cube: its ``T`` box if red, else the union
    of cones ``Gamma_{alpha, 0, l/2}`` over the upper deck, relative to the graph
    lifted by ``l``.  The union over the deck is evaluated on a deck lattice."""
    graph = forest.graph
    cube = CurvedCube(m, tuple(j), forest.root)
    l = cube.side
    if not forest.colored:
        red_blue_classify(forest)
    if not forest.blue[m][tuple(j)]:
        lo, hi = translated_box_bounds(cube)
        return lambda pts: box_mask(graph, cube, pts, lo, hi)
    deck = _deck_samples(cube, deck_samples)
    deck_phi = graph(deck)

    def pred(points):
        p = np.asarray(points, dtype=float)
        x, y = p[..., :-1], p[..., -1]
        h = y - graph(x)
        best = np.full(h.shape, np.inf)
        for X, ph in zip(deck, deck_phi):
            best = np.minimum(best, np.linalg.norm(x - X, axis=-1) + alpha * ph)
        inside = best < alpha * (y - l)
        return inside & (h > l) & (h < 1.5 * l)
    return pred


def rtilde_region(forest: StoppingForest, node: tuple, alpha: float) -> Callable[[Array], Array]:
    m, j = node
    pieces = [rtilde_piece(forest, mm, jj, alpha) for mm, jj in forest.children_in_G1(m, j)]

    def pred(points):
        p = np.asarray(points, dtype=float)
        out = np.zeros(p.shape[:-1], dtype=bool)
        for piece in pieces:
            out |= piece(p)
        return out
    return pred


@dataclass
class Lemma22Report:
    ratios: dict
    max_ratio: float
    witness: Optional[tuple]

    def as_dict(self) -> dict:
        return {"max_ratio": self.max_ratio,
                "witness": None if self.witness is None else [self.witness[0], list(self.witness[1])],
                "nodes": len(self.ratios)}


def lemma22_ratios(forest: StoppingForest, alpha: float) -> Lemma22Report:
    """``eps^2 sum_{G_1(Q)} l(Q_j)^n / int_{R~(Q)} |grad u|^2 h`` for each ``Q`` in ``G``.

    The integral runs over grid cells whose centers lie in ``R~``; pieces
    reaching outside the root columns are clipped to the grid.
    """
    g = forest.grid
    n = forest.n
    eps = forest.epsilon
    dens = forest.samples.grad_norm ** 2 * g.h_axis * g.cell_volume
    pts = g.points
    ratios = {}
    best, wit = 0.0, None
    for node in forest.G_nodes():
        kids = forest.children_in_G1(*node)
        if not kids:
            continue
        mask = np.zeros(g.shape, dtype=bool)
        for mm, jj in kids:
            l = forest.side(mm)
            pad = int(math.ceil(alpha * 0.5 * l / g.dx)) + 1
            b = g.block(mm)
            win = tuple(slice(max(jj[a] * b - pad, 0), min((jj[a] + 1) * b + pad, g.N))
                        for a in range(n))
            rows = g.level_rows(0.5 * l, 1.5 * l)
            sl = win + (rows,)
            mask[sl] |= rtilde_piece(forest, mm, jj, alpha)(pts[sl])
        num = eps * eps * sum(forest.side(mm) ** n for mm, _ in kids)
        den = float(dens[mask].sum())
        r = num / den if den > 0 else math.inf
        ratios[node] = r
        if r > best:
            best, wit = r, node
    return Lemma22Report(ratios, best, wit)


# -- area-integral ratios ----------------------------------------------------------

@dataclass
class Prop24Report:
    generations: list
    per_generation_max: list
    per_generation_min: list
    max_ratio: float
    spread: float
    ratios: list = field(repr=False, default_factory=list)

    def as_dict(self) -> dict:
        return {"generations": self.generations, "per_generation_max": self.per_generation_max,
                "per_generation_min": self.per_generation_min, "max_ratio": self.max_ratio,
                "spread": self.spread}


def prop24_check(fld, graph: LipschitzGraph, root: RootCube, alpha: float,
                 depth_range: Sequence[int] = range(6), depth: int = 9,
                 vertices_per_axis: int = 256) -> Prop24Report:
    """``int_Q A_{alpha,0,l(Q)}(x)^2 dx / l(Q)^n`` for all dyadic ``Q`` in the range.

    For ``n = 1`` one cumulative row sweep per vertex yields ``A^2`` at every
    dyadic truncation height.  The spread is the ratio of the largest to the
    smallest per-generation maximum (1 when every ratio vanishes).
    """
    ConeSpec(alpha).check_graph(graph)
    gens = sorted(depth_range)
    n = root.n
    if n == 1:
        xs = root.origin[0] + (np.arange(vertices_per_axis) + 0.5) * root.side / vertices_per_axis
        _, rows = area_rows(fld, graph, xs, alpha, 0.0, root.side, depth)
        cum = np.cumsum(rows, axis=1)
        a2 = {m: cum[:, (2 ** depth >> m) - 1] for m in gens}
        xv = xs[:, None]
    else:
        k = min(vertices_per_axis, 8)
        t = (np.arange(k) + 0.5) / k
        axes = [root.origin[a] + root.side * t for a in range(n)]
        xv = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        a2 = {m: np.array([_area_sq_brute(fld, graph, x, ConeSpec(alpha), root.side * 2.0 ** -m,
                                          min(depth, 5)) for x in xv]) for m in gens}
    per_max, per_min, table = [], [], []
    for m in gens:
        l = root.side * 2.0 ** -m
        idx = np.floor((xv - np.asarray(root.origin)) / l).astype(int)
        flat = np.ravel_multi_index(tuple(idx.T), (2 ** m,) * n)
        sums = np.bincount(flat, weights=a2[m], minlength=2 ** (n * m))
        counts = np.bincount(flat, minlength=2 ** (n * m))
        ratio = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)  # mean A^2 = int/|Q|
        per_max.append(float(ratio.max()))
        per_min.append(float(ratio.min()))
        table.append(ratio)
    top = max(per_max)
    bottom = min(per_max)
    spread = 1.0 if top == 0 else (math.inf if bottom == 0 else top / bottom)
    return Prop24Report(gens, per_max, per_min, top, spread, table)


# -- global extension ---------------------------------------------------------------

@dataclass
class GlobalExtension:
    graph: LipschitzGraph
    center: Array
    pieces: list
    sup_errors: list

    def cube_index(self, points) -> Array:
        """Smallest ``k`` with the point in ``Q_k``-hat (``K`` + 1 when outside all)."""
        p = np.asarray(points, dtype=float)
        x = p[..., :-1]
        h = self.graph.height(p)
        out = np.full(p.shape[:-1], len(self.pieces) + 1)
        for k in range(len(self.pieces), 0, -1):
            half = 2.0 ** (k - 1)
            inside = np.all(np.abs(x - self.center) <= half, axis=-1) & (h >= 0) & (h <= 2.0 ** k)
            out = np.where(inside, k, out)
        return out

    def __call__(self, points) -> Array:
        p = np.asarray(points, dtype=float)
        k = self.cube_index(p)
        out = np.full(p.shape[:-1], np.nan)
        for i, piece in enumerate(self.pieces, start=1):
            sel = k == i
            if sel.any():
                out[sel] = piece.evaluate(p[sel])
        return out


def global_extension(fld, graph: LipschitzGraph, center, K: int, epsilon: float,
                     k_blue: float = 0.5, max_depth: int = 6) -> GlobalExtension:
    """Approximants on the concentric cubes ``Q_k`` (side ``2^k``), ``k = 1..K``;
    a point uses the approximant of the smallest cube containing it."""
    if K < 1:
        raise ValueError("K must be >= 1")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    pieces, errs = [], []
    for k in range(1, K + 1):
        side = 2.0 ** k
        root = RootCube(tuple(float(v) for v in c - side / 2), side)
        forest = build_forest(fld, graph, root, epsilon, k_blue, max_depth)
        approx = build_approximant(forest)
        pieces.append(approx)
        errs.append(approx.sup_error)
    return GlobalExtension(graph, c, pieces, errs)
