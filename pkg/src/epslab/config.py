"""Experiment configuration: JSON or TOML in, validated dataclasses out.

JSON is the canonical serialization; ``parse_config(serialize(cfg))``
returns an equal config.  Unknown keys are rejected and range errors name
the offending key.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from dataclasses import field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .fields import ScalarField, builtin_field
from .geometry import LipschitzGraph, RootCube

GRAPH_KINDS = ("flat", "linear", "abs", "sinusoid", "samples")
FIELD_NAMES = ("constant", "coordinate_y", "harmonic_sinexp", "paraboloid", "power_alpha", "file")
MAX_TREE_DEPTH = 12


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class DomainConfig:
    kind: str = "flat"
    n: int = 1
    params: dict = dc_field(default_factory=dict)
    file: Optional[str] = None
    origin: Optional[list] = None
    side: float = 1.0


@dataclass
class FieldConfig:
    name: str = "harmonic_sinexp"
    params: dict = dc_field(default_factory=dict)
    file: Optional[str] = None


@dataclass
class GoodLambdaConfig:
    lam: str = "1"
    depth: int = 8
    c: str = "1/4"
    steps: int = 4
    M: int = 4


@dataclass
class ExperimentConfig:
    domain: DomainConfig = dc_field(default_factory=DomainConfig)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    max_depth: int = 6
    grid_depth: Optional[int] = None
    epsilons: list = dc_field(default_factory=lambda: [0.1])
    k_blue: float = 0.5
    eta: float = 0.0
    alpha: Optional[float] = None
    beta: float = 0.5
    class_alpha: float = 0.5
    class_depth: int = 6
    count_eps: float = 0.25
    count_radius: float = 0.5
    r_ladder: list = dc_field(default_factory=lambda: [0.5, 0.25, 0.125])
    window: list = dc_field(default_factory=lambda: [0.25, 0.75])
    operator_depth: int = 8
    fatou_samples: int = 9
    carleson_levels: int = 6
    seed: int = 0
    out: str = "out"
    goodlambda: GoodLambdaConfig = dc_field(default_factory=GoodLambdaConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def graph(self) -> LipschitzGraph:
        return make_graph(self.domain)

    def root(self) -> RootCube:
        d = self.domain
        origin = tuple(float(v) for v in d.origin) if d.origin is not None else (0.0,) * d.n
        return RootCube(origin, float(d.side))

    def scalar_field(self) -> ScalarField:
        return make_field(self.field, self.domain.n)

    @property
    def lam(self) -> Fraction:
        return Fraction(self.goodlambda.lam)

    @property
    def c(self) -> Fraction:
        return Fraction(self.goodlambda.c)


# -- builders -------------------------------------------------------------------------

def make_graph(d: DomainConfig) -> LipschitzGraph:
    p = dict(d.params)
    try:
        if d.kind == "flat":
            _no_params(p, "domain.params")
            return LipschitzGraph.flat(d.n)
        if d.kind == "linear":
            slope = p.pop("slope", [0.0] * d.n)
            offset = float(p.pop("offset", 0.0))
            _no_params(p, "domain.params")
            g = LipschitzGraph.linear(slope, offset)
            if g.n != d.n:
                raise ConfigError(f"slope has {g.n} components for n = {d.n}", "domain.params.slope")
            return g
        if d.kind == "abs":
            slope = float(p.pop("slope", 1.0))
            _no_params(p, "domain.params")
            return LipschitzGraph.abs_cone(d.n, slope)
        if d.kind == "sinusoid":
            if d.n != 1:
                raise ConfigError("sinusoid boundaries need n = 1", "domain.n")
            amp = float(p.pop("amplitude", 0.1))
            freq = float(p.pop("frequency", 1.0))
            _no_params(p, "domain.params")
            return LipschitzGraph.sinusoid(amp, freq)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "domain.params") from None
    if d.kind == "samples":
        from .io import read_boundary_csv
        if not d.file:
            raise ConfigError("samples boundary needs a file", "domain.file")
        try:
            g = read_boundary_csv(d.file)
        except ValueError as exc:
            raise ConfigError(str(exc), "domain.file") from None
        if g.n != d.n:
            raise ConfigError(f"file has n = {g.n}, config says {d.n}", "domain.n")
        return g
    raise ConfigError(f"unknown kind {d.kind!r}; expected one of {GRAPH_KINDS}", "domain.kind")


def make_field(f: FieldConfig, n: int) -> ScalarField:
    if f.name == "file":
        from .io import load_field_file
        if not f.file:
            raise ConfigError("file field needs a path", "field.file")
        if n != 1:
            raise ConfigError("sampled fields need n = 1", "domain.n")
        try:
            return load_field_file(f.file)
        except ValueError as exc:
            raise ConfigError(str(exc), "field.file") from None
    if f.name not in FIELD_NAMES:
        raise ConfigError(f"unknown field {f.name!r}; expected one of {FIELD_NAMES}", "field.name")
    try:
        return builtin_field(f.name, n, **dict(f.params))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "field.params") from None


def _no_params(p: dict, key: str) -> None:
    if p:
        raise ConfigError(f"unexpected keys {sorted(p)}", key)


# -- parsing ---------------------------------------------------------------------------

def _section(cls, raw: Any, key: str):
    if not isinstance(raw, dict):
        raise ConfigError("expected a table", key)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", key)
    return cls(**raw)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table")
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", unknown[0])
    raw = dict(raw)
    kw = {}
    kw["domain"] = _section(DomainConfig, raw.pop("domain", {}), "domain")
    kw["field"] = _section(FieldConfig, raw.pop("field", {}), "field")
    kw["goodlambda"] = _section(GoodLambdaConfig, raw.pop("goodlambda", {}), "goodlambda")
    kw.update(raw)
    cfg = ExperimentConfig(**kw)
    return validate(cfg)


def _num(v, key: str, integer: bool = False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", key)
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"expected an integer, got {v!r}", key)
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"must be finite, got {v!r}", key)
    return float(v)


def _frac_str(v, key: str) -> str:
    try:
        f = Fraction(str(v)) if not isinstance(v, Fraction) else v
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"expected a rational, got {v!r}", key) from None
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def _check(ok: bool, key: str, msg: str) -> None:
    if not ok:
        raise ConfigError(msg, key)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Normalise types, fill derived defaults and enforce ranges in place."""
    d = cfg.domain
    d.n = _num(d.n, "domain.n", True)
    _check(1 <= d.n <= 3, "domain.n", f"must lie in [1, 3], got {d.n}")
    _check(d.kind in GRAPH_KINDS, "domain.kind", f"unknown kind {d.kind!r}; expected one of {GRAPH_KINDS}")
    _check(isinstance(d.params, dict), "domain.params", "expected a table")
    d.side = _num(d.side, "domain.side")
    _check(d.side > 0, "domain.side", f"must be positive, got {d.side}")
    if d.origin is not None:
        _check(isinstance(d.origin, list) and len(d.origin) == d.n, "domain.origin",
               f"expected {d.n} coordinates")
        d.origin = [_num(v, "domain.origin") for v in d.origin]
    _check(isinstance(cfg.field.params, dict), "field.params", "expected a table")
    _check(cfg.field.name in FIELD_NAMES, "field.name",
           f"unknown field {cfg.field.name!r}; expected one of {FIELD_NAMES}")

    cfg.max_depth = _num(cfg.max_depth, "max_depth", True)
    _check(1 <= cfg.max_depth <= MAX_TREE_DEPTH, "max_depth", f"must lie in [1, {MAX_TREE_DEPTH}]")
    if cfg.grid_depth is not None:
        cfg.grid_depth = _num(cfg.grid_depth, "grid_depth", True)
        _check(cfg.max_depth + 2 <= cfg.grid_depth <= MAX_TREE_DEPTH + 2, "grid_depth",
               f"must lie in [max_depth + 2, {MAX_TREE_DEPTH + 2}]")
    _check(isinstance(cfg.epsilons, list), "epsilons", "expected a list")
    cfg.epsilons = [_num(e, "epsilons") for e in cfg.epsilons]
    _check(all(e > 0 for e in cfg.epsilons), "epsilons", "every epsilon must be positive")
    cfg.k_blue = _num(cfg.k_blue, "k_blue")
    _check(0 < cfg.k_blue < 1, "k_blue", f"must lie in (0, 1), got {cfg.k_blue}")
    cfg.eta = _num(cfg.eta, "eta")
    _check(0 <= cfg.eta < 1, "eta", f"must lie in [0, 1), got {cfg.eta}")
    cfg.beta = _num(cfg.beta, "beta")
    _check(0 < cfg.beta < 1, "beta", f"must lie in (0, 1), got {cfg.beta}")
    cfg.class_alpha = _num(cfg.class_alpha, "class_alpha")
    _check(0 < cfg.class_alpha < 1, "class_alpha", f"must lie in (0, 1), got {cfg.class_alpha}")
    cfg.count_eps = _num(cfg.count_eps, "count_eps")
    _check(cfg.count_eps > 0, "count_eps", "must be positive")
    cfg.count_radius = _num(cfg.count_radius, "count_radius")
    _check(cfg.count_radius > 0, "count_radius", "must be positive")
    _check(isinstance(cfg.r_ladder, list), "r_ladder", "expected a list")
    cfg.r_ladder = [_num(r, "r_ladder") for r in cfg.r_ladder]
    _check(all(0 < r < 1 for r in cfg.r_ladder), "r_ladder", "radii must lie in (0, 1)")
    _check(isinstance(cfg.window, list) and len(cfg.window) == 2, "window", "expected [lo, hi]")
    cfg.window = [_num(v, "window") for v in cfg.window]
    _check(cfg.window[0] < cfg.window[1], "window", "lo must be below hi")
    for key in ("class_depth", "operator_depth", "fatou_samples", "carleson_levels", "seed"):
        setattr(cfg, key, _num(getattr(cfg, key), key, True))
    _check(2 <= cfg.class_depth <= 10, "class_depth", "must lie in [2, 10]")
    _check(2 <= cfg.operator_depth <= 12, "operator_depth", "must lie in [2, 12]")
    _check(1 <= cfg.fatou_samples <= 257, "fatou_samples", "must lie in [1, 257]")
    _check(1 <= cfg.carleson_levels <= 12, "carleson_levels", "must lie in [1, 12]")
    _check(cfg.seed >= 0, "seed", "must be nonnegative")
    _check(isinstance(cfg.out, str) and cfg.out != "", "out", "expected a directory name")

    gl = cfg.goodlambda
    gl.lam = _frac_str(gl.lam, "goodlambda.lam")
    _check(Fraction(gl.lam) > 0, "goodlambda.lam", "must be positive")
    gl.c = _frac_str(gl.c, "goodlambda.c")
    _check(0 < Fraction(gl.c) < Fraction(1, 2), "goodlambda.c", "must lie in (0, 1/2)")
    gl.depth = _num(gl.depth, "goodlambda.depth", True)
    _check(0 <= gl.depth <= 20, "goodlambda.depth", "must lie in [0, 20]")
    gl.steps = _num(gl.steps, "goodlambda.steps", True)
    _check(gl.steps >= 1, "goodlambda.steps", "must be >= 1")
    gl.M = _num(gl.M, "goodlambda.M", True)
    _check(gl.M >= 1, "goodlambda.M", "must be >= 1")

    if d.kind != "samples":
        L = make_graph(d).lipschitz_L
        if cfg.alpha is None:
            cfg.alpha = 0.5 / max(L, 1.0)
        cfg.alpha = _num(cfg.alpha, "alpha")
        _check(cfg.alpha > 0 and (L == 0 or cfg.alpha * L < 1), "alpha",
               f"must lie in (0, 1/L) with L = {L:g}, got {cfg.alpha}")
    elif cfg.alpha is not None:
        cfg.alpha = _num(cfg.alpha, "alpha")
        _check(cfg.alpha > 0, "alpha", "must be positive")
    return cfg


def resolve_alpha(cfg: ExperimentConfig, graph: LipschitzGraph) -> float:
    """Cone aperture after the boundary is known (sample files are read lazily)."""
    L = graph.lipschitz_L
    a = 0.5 / max(L, 1.0) if cfg.alpha is None else cfg.alpha
    if not (L == 0 or a * L < 1):
        raise ConfigError(f"must lie in (0, 1/L) with L = {L:g}, got {a}", "alpha")
    return a


def parse_text(text: str, fmt: str = "json") -> ExperimentConfig:
    if fmt == "json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    elif fmt == "toml":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"parse error: {exc}") from None
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return from_dict(raw)


def parse_config(path) -> ExperimentConfig:
    """Read a ``.json`` or ``.toml`` file (other suffixes are sniffed)."""
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        fmt = "json"
    elif p.suffix.lower() == ".toml":
        fmt = "toml"
    else:
        fmt = "json" if text.lstrip().startswith("{") else "toml"
    return parse_text(text, fmt)


def serialize(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
