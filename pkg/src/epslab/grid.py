"""Uniform cell grids in graph-adapted coordinates ``(x, h)``.

The root cube ``Q0 x [0, height]`` is split into ``2**depth`` cells per
horizontal axis and cells of the same size vertically.  Arrays indexed by
cells have shape ``(N,) * n + (Nh,)``; the vertical axis is last.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .geometry import LipschitzGraph, RootCube

Array = np.ndarray


@dataclass(frozen=True)
class AdaptedGrid:
    graph: LipschitzGraph
    root: RootCube
    depth: int
    height: Optional[float] = None

    def __post_init__(self):
        if self.graph.n != self.root.n:
            raise ValueError("graph and root cube dimensions differ")
        if self.depth < 1:
            raise ValueError("grid depth must be >= 1")

    @property
    def n(self) -> int:
        return self.root.n

    @property
    def N(self) -> int:
        return 2 ** self.depth

    @property
    def dx(self) -> float:
        return self.root.side / self.N

    @property
    def Nh(self) -> int:
        H = self.root.side if self.height is None else self.height
        return int(round(H / self.dx))

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n + (self.Nh,)

    @property
    def cell_volume(self) -> float:
        return self.dx ** (self.n + 1)

    def x_axis(self, i: int = 0) -> Array:
        return self.root.origin[i] + (np.arange(self.N) + 0.5) * self.dx

    @cached_property
    def h_axis(self) -> Array:
        return (np.arange(self.Nh) + 0.5) * self.dx

    @cached_property
    def x_centers(self) -> Array:
        axes = [self.x_axis(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def phi_centers(self) -> Array:
        return self.graph(self.x_centers)

    @cached_property
    def points(self) -> Array:
        """Cartesian coordinates of all cell centers, shape ``shape + (n+1,)``."""
        xs = np.broadcast_to(self.x_centers[..., None, :], self.shape + (self.n,))
        ys = self.phi_centers[..., None] + self.h_axis
        return np.concatenate([xs, ys[..., None]], axis=-1)

    def half_diagonal(self) -> float:
        """Largest Cartesian distance from a cell point to its cell center."""
        a = 0.5 * self.dx
        return math.sqrt(self.n * a * a + (a + self.graph.lipschitz_L * math.sqrt(self.n) * a) ** 2)

    def level_rows(self, h_lo: float, h_hi: float) -> slice:
        """Rows whose centers lie in ``[h_lo, h_hi]`` (bounds on the cell lattice)."""
        lo = int(math.ceil(h_lo / self.dx - 0.5 - 1e-9))
        hi = int(math.floor(h_hi / self.dx - 0.5 + 1e-9)) + 1
        return slice(max(lo, 0), min(hi, self.Nh))

    def block(self, m: int) -> int:
        """Cells per axis of a generation-``m`` dyadic cube."""
        if m > self.depth:
            raise ValueError(f"generation {m} finer than the grid")
        return 2 ** (self.depth - m)


def block_reduce(arr: Array, n: int, m: int, how: str = "sum") -> Array:
    """Reduce the leading ``n`` axes over dyadic blocks of generation ``m``.

    ``arr`` has shape ``(N,)*n + rest``; the result has shape ``(2**m,)*n + rest``.
    """
    N = arr.shape[0]
    b = N // 2 ** m
    shape = []
    for _ in range(n):
        shape += [2 ** m, b]
    rest = arr.shape[n:]
    view = arr.reshape(tuple(shape) + rest)
    axes = tuple(2 * i + 1 for i in range(n))
    return getattr(np, how)(view, axis=axes)


def expand(level: Array, n: int, factor: int) -> Array:
    """Repeat each entry of the leading ``n`` axes ``factor`` times."""
    out = level
    for ax in range(n):
        out = np.repeat(out, factor, axis=ax)
    return out


@dataclass
class GridSamples:
    """A field evaluated at the cell centers of an adapted grid."""

    grid: AdaptedGrid
    u: Array
    grad: Array

    @cached_property
    def grad_norm(self) -> Array:
        return np.linalg.norm(self.grad, axis=-1)


def sample_field(field, grid: AdaptedGrid) -> GridSamples:
    pts = grid.points
    return GridSamples(grid, np.asarray(field.u(pts), dtype=float),
                       np.asarray(field.grad(pts), dtype=float))
