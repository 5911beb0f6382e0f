"""Exact good-lambda stopping families on dyadic intervals.

Values, cube constants and thresholds are rationals.  Internally they are
scaled to a common denominator and compared as integers, so every set
measure is an exact count of finest cells over ``2**depth``.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Optional, Sequence

import numpy as np

Array = np.ndarray
MAX_DEPTH = 20


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v)  # exact binary value
    return Fraction(v)


def _exact_average(values: Sequence[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values)


@dataclass(frozen=True)
class DyadicFunction:
    """Values on the ``2**depth`` finest cells of ``[0, 1]`` and constants ``a_Q``.

    ``a[m][j]`` is the constant of the cube ``[j 2^-m, (j+1) 2^-m]``; when not
    supplied it is the exact cube average.
    """

    depth: int
    values: tuple
    a: Optional[tuple] = None

    def __post_init__(self):
        if not 0 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must lie in [0, {MAX_DEPTH}]")
        vals = tuple(_frac(v) for v in self.values)
        if len(vals) != 2 ** self.depth:
            raise ValueError(f"expected {2 ** self.depth} values, got {len(vals)}")
        object.__setattr__(self, "values", vals)
        if self.a is None:
            levels = [vals]
            for _ in range(self.depth):
                prev = levels[-1]
                levels.append(tuple((prev[2 * i] + prev[2 * i + 1]) / 2 for i in range(len(prev) // 2)))
            object.__setattr__(self, "a", tuple(reversed(levels)))
        else:
            a = tuple(tuple(_frac(v) for v in row) for row in self.a)
            if len(a) != self.depth + 1 or any(len(row) != 2 ** m for m, row in enumerate(a)):
                raise ValueError("a must hold 2**m constants for every generation m <= depth")
            object.__setattr__(self, "a", a)

    @property
    def cells(self) -> int:
        return 2 ** self.depth

    def cube_cells(self, m: int, j: int) -> slice:
        b = 2 ** (self.depth - m)
        return slice(j * b, (j + 1) * b)

    @cached_property
    def _scale(self) -> int:
        dens = [v.denominator for v in self.values]
        dens += [v.denominator for row in self.a for v in row]
        return reduce(math.lcm, dens, 1)

    def scaled(self, lam: Fraction) -> tuple[Array, list, int]:
        """Integer images of values, constants and ``lam`` over a common denominator."""
        lam = _frac(lam)
        s = math.lcm(self._scale, lam.denominator)
        vals = [int(v * s) for v in self.values]
        big = max([abs(v) for v in vals] + [abs(int(lam * s))]) >= 2 ** 60
        dtype = object if big else np.int64
        v = np.array(vals, dtype=dtype)
        a = [np.array([int(x * s) for x in row], dtype=dtype) for row in self.a]
        return v, a, int(lam * s)

    def to_json(self) -> dict:
        return {"depth": self.depth, "values": [str(v) for v in self.values],
                "a": [[str(v) for v in row] for row in self.a]}

    @classmethod
    def from_json(cls, obj: dict) -> "DyadicFunction":
        unknown = set(obj) - {"depth", "values", "a"}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        return cls(int(obj["depth"]), tuple(obj["values"]), obj.get("a"))


def synth_martingale(depth: int, increment, seed: int) -> DyadicFunction:
    """``f = sum`` over generations ``1..depth`` of a seeded random ``+-inc`` per
    dyadic cube; each finest cell collects the increments of its ancestors."""
    if depth > MAX_DEPTH:
        raise ValueError(f"depth {depth} exceeds the cell budget {MAX_DEPTH}")
    inc = _frac(increment)
    rng = random.Random(seed)
    vals = [Fraction(0)]
    for _ in range(depth):
        nxt = []
        for v in vals:
            for _ in range(2):
                nxt.append(v + (inc if rng.random() < 0.5 else -inc))
        vals = nxt
    return DyadicFunction(depth, tuple(vals))


# -- hypothesis ----------------------------------------------------------------------

def _exceed(v: Array, ref, lam: int) -> Array:
    return np.abs(v - ref) > lam


def _block_counts(mask: Array, size: int) -> Array:
    return mask.reshape(-1, size).sum(axis=1)


@dataclass(frozen=True)
class HypothesisResult:
    holds: bool
    worst_ratio: Fraction
    worst_cube: tuple
    c: Fraction


def check_hypothesis(df: DyadicFunction, lam, c=Fraction(1, 4)) -> HypothesisResult:
    """``|{x in Q : |f - a_Q| > lam}| < c |Q|`` for every dyadic ``Q``."""
    c = _frac(c)
    lam = _frac(lam)
    if not 0 < c < Fraction(1, 2):
        raise ValueError("c must lie in (0, 1/2)")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    v, a, L = df.scaled(lam)
    worst, where = Fraction(0), (0, 0)
    for m in range(df.depth + 1):
        size = 2 ** (df.depth - m)
        refs = np.repeat(a[m], size)
        counts = _block_counts(_exceed(v, refs, L), size)
        j = int(np.argmax(counts))
        r = Fraction(int(counts[j]), size)
        if r > worst:
            worst, where = r, (m, j)
    return HypothesisResult(worst < c, worst, where, c)


# -- families ------------------------------------------------------------------------

@dataclass
class StoppingFamilies:
    """``steps[i]`` lists the cubes ``(m, j)`` of ``G_{i+1}``; ``parents[i]`` the
    reference cube each was selected against."""

    depth: int
    lam: Fraction
    steps: list
    parents: list
    masks: list = field(default_factory=list)

    def measure(self, step: int) -> Fraction:
        return Fraction(sum(2 ** (self.depth - m) for m, _ in self.steps[step - 1]), 2 ** self.depth)


def _select_maximal(exceed: Array, depth: int, ref: tuple, include_ref: bool) -> list:
    """Maximal dyadic subcubes of ``ref`` whose exceed fraction is at least 1/3."""
    m0, j0 = ref
    sl = slice(j0 * 2 ** (depth - m0), (j0 + 1) * 2 ** (depth - m0))
    e = exceed[sl]
    taken = np.zeros(e.size, dtype=bool)
    out = []
    for m in range(m0 if include_ref else m0 + 1, depth + 1):
        size = 2 ** (depth - m)
        counts = _block_counts(e, size)
        blocked = _block_counts(taken, size) > 0
        hit = (3 * counts >= size) & ~blocked
        for k in np.nonzero(hit)[0]:
            out.append((m, j0 * 2 ** (m - m0) + int(k)))
            taken[int(k) * size:(int(k) + 1) * size] = True
    return out


def build_families(df: DyadicFunction, lam, steps: int = 4, strict: bool = True,
                   c=Fraction(1, 4)) -> StoppingFamilies:
    """Iterate the stopping rule ``|{x in Q_j : |f - a_ref| > lam}| >= |Q_j| / 3``.

    ``G_1`` is taken inside the root with reference ``a_root``; ``G_{k+1}``
    inside each ``Q_j`` of ``G_k`` with reference ``a_{Q_j}``.  With
    ``strict`` the hypothesis at ``c`` must hold first.
    """
    lam = _frac(lam)
    if strict:
        hyp = check_hypothesis(df, lam, c)
        if not hyp.holds:
            raise ValueError(f"hypothesis fails on cube {hyp.worst_cube} with ratio {hyp.worst_ratio}")
    v, a, L = df.scaled(lam)
    D = df.depth
    current = [(0, 0)]
    fam = StoppingFamilies(D, lam, [], [], [])
    for step in range(steps):
        sel, par = [], []
        for ref in current:
            m, j = ref
            if step > 0 and m == D:
                continue
            exceed = _exceed(v, a[m][j], L)
            for cube in _select_maximal(exceed, D, ref, include_ref=(step == 0)):
                if step > 0 and cube == ref:
                    continue
                sel.append(cube)
                par.append(ref)
        mask = np.zeros(2 ** D, dtype=bool)
        for m, j in sel:
            mask[df.cube_cells(m, j)] = True
        fam.steps.append(sel)
        fam.parents.append(par)
        fam.masks.append(mask)
        current = sel
        if not sel:
            for _ in range(step + 1, steps):
                fam.steps.append([])
                fam.parents.append([])
                fam.masks.append(np.zeros(2 ** D, dtype=bool))
            break
    return fam


# -- properties ----------------------------------------------------------------------

@dataclass
class PropertyReport:
    i: bool
    ii: bool
    iii: bool
    iv: bool
    constants: bool
    nesting: bool
    sums: list
    witnesses: dict

    @property
    def all(self) -> bool:
        return self.i and self.ii and self.iii and self.iv and self.constants and self.nesting

    def as_dict(self) -> dict:
        return {"i": self.i, "ii": self.ii, "iii": self.iii, "iv": self.iv,
                "constants": self.constants, "nesting": self.nesting,
                "sums": [str(s) for s in self.sums],
                "witnesses": {k: list(w) if isinstance(w, tuple) else w
                              for k, w in self.witnesses.items()}}


def verify_properties(fam: StoppingFamilies, df: DyadicFunction, lam) -> PropertyReport:
    """Properties (i)-(iv) of every step, relative to each step's reference cubes,
    plus ``|a_ref - a_Qj| <= 2 lam`` and strict nesting."""
    lam = _frac(lam)
    v, a, L = df.scaled(lam)
    D = df.depth
    wit: dict = {}
    ok_i = (0, 0) not in (fam.steps[0] if fam.steps else [])
    if not ok_i:
        wit["i"] = (0, 0)
    ok_ii = ok_const = ok_nest = True
    for step, (cubes, refs) in enumerate(zip(fam.steps, fam.parents)):
        for (m, j), (rm, rj) in zip(cubes, refs):
            size = 2 ** (D - m)
            cnt = int(_exceed(v[df.cube_cells(m, j)], a[rm][rj], L).sum())
            if not (3 * cnt >= size and 3 * cnt < 2 * size):
                ok_ii = False
                wit.setdefault("ii", (step + 1, m, j, str(Fraction(cnt, size))))
            if abs(a[m][j] - a[rm][rj]) > 2 * L:
                ok_const = False
                wit.setdefault("constants", (step + 1, m, j))
            if step > 0 and not (m > rm and j >> (m - rm) == rj):
                ok_nest = False
                wit.setdefault("nesting", (step + 1, m, j))
    # (iii): outside G_1 the deviation from a_root is at most lam
    mask1 = fam.masks[0] if fam.masks else np.zeros(2 ** D, dtype=bool)
    bad = np.nonzero(~mask1 & _exceed(v, a[0][0], L))[0]
    ok_iii = bad.size == 0
    if not ok_iii:
        wit["iii"] = int(bad[0])
    sums = [fam.measure(k + 1) for k in range(len(fam.steps))]
    ok_iv = all(s <= Fraction(3, 4) ** (k + 1) for k, s in enumerate(sums))
    if not ok_iv:
        wit["iv"] = next(k + 1 for k, s in enumerate(sums) if s > Fraction(3, 4) ** (k + 1))
    return PropertyReport(ok_i, ok_ii, ok_iii, ok_iv, ok_const, ok_nest, sums, wit)


# -- decay ------------------------------------------------------------------------------

def c2_constant(lam) -> float:
    return math.log(4.0 / 3.0) / (3.0 * float(lam))


@dataclass
class DecayRow:
    m: int
    threshold: Fraction
    tail: Fraction
    bound: Fraction
    family_sum: Optional[Fraction]
    outside_ok: Optional[bool]
    exp_bound: float
    identity_rel_err: float

    @property
    def ok(self) -> bool:
        fam_ok = self.family_sum is None or self.family_sum <= self.bound
        return self.tail <= self.bound and fam_ok and self.outside_ok is not False

    def as_dict(self) -> dict:
        return {"m": self.m, "t": str(self.threshold), "tail": str(self.tail),
                "bound": str(self.bound),
                "family_sum": None if self.family_sum is None else str(self.family_sum),
                "outside_ok": self.outside_ok, "exp_bound": self.exp_bound,
                "identity_rel_err": self.identity_rel_err, "ok": self.ok}


def decay_check(df: DyadicFunction, lam, M: int = 4, families: Optional[StoppingFamilies] = None) -> list[DecayRow]:
    """Exact tails ``|{|f - a_root| > 3 m lam}|`` against ``(3/4)^m``.

    Also compares ``(3/4)^m`` with ``exp(-c2 t)`` at ``t = 3 m lam`` and, when
    families are given, checks ``sum_{G_m} |Q| <= (3/4)^m`` and
    ``|f - a_root| < 3 m lam`` off ``G_m``.
    """
    lam = _frac(lam)
    v, a, L = df.scaled(lam)
    D = df.depth
    c2 = c2_constant(lam)
    rows = []
    dev = np.abs(v - a[0][0])
    for m in range(1, M + 1):
        t = 3 * m * lam
        tail = Fraction(int((dev > 3 * m * L).sum()), 2 ** D)
        bound = Fraction(3, 4) ** m
        e = math.exp(-c2 * float(t))
        rel = abs(e - float(bound)) / float(bound)
        fsum = outside = None
        if families is not None and m <= len(families.steps):
            fsum = families.measure(m)
            outside = bool(np.all(dev[~families.masks[m - 1]] < 3 * m * L))
        rows.append(DecayRow(m, t, tail, bound, fsum, outside, e, rel))
    return rows


def passing_martingales(count: int, depth: int, lam, seed0: int = 0, c=Fraction(1, 4),
                        max_tries: int = 1000) -> list[tuple[int, DyadicFunction]]:
    """The first ``count`` seeds from ``seed0`` whose martingale (increment ``lam/4``)
    satisfies the hypothesis at ``c``."""
    lam = _frac(lam)
    out = []
    seed = seed0
    while len(out) < count and seed < seed0 + max_tries:
        df = synth_martingale(depth, lam / 4, seed)
        if check_hypothesis(df, lam, c).holds:
            out.append((seed, df))
        seed += 1
    return out


def dumps(df: DyadicFunction) -> str:
    return json.dumps(df.to_json(), sort_keys=True)
