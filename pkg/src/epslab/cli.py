"""Command-line runner: ``lab <command> --config P [--out D] [--depth N] [--seed S]``.

Exit codes: 0 every gate passed, 1 some gate failed, 2 invalid config,
3 I/O failure.  ``LAB_THREADS`` caps the worker threads used across
epsilon values; report assembly is sequential so outputs do not depend
on it.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import io as lab_io
from .approximant import (build_approximant, build_forest, carleson_decomposition,
                          prop24_check, stopping_sums)
from .config import ConfigError, ExperimentConfig, parse_config, resolve_alpha, validate
from .fields import classify, default_balls
from .geometry import ConeSpec
from .goodlambda import (build_families, check_hypothesis, decay_check, synth_martingale,
                         verify_properties)
from .grid import AdaptedGrid
from .operators import (CountingParams, area_function, counting_function, dyadic_radii,
                        fatou_average, nontangential_max)

SCHEMA_VERSION = "1"
COMMANDS = ("approximate", "verify", "classify", "fatou", "goodlambda", "sweep")
UNRESOLVED_CELL_LIMIT = 0.01

SWEEP_COLUMNS = ("epsilon", "sup_error", "bound", "unresolved_leaf_fraction",
                 "unresolved_cell_fraction", "g_nodes", "s1_ratio_lo", "s1_ratio_hi", "s2_ratio",
                 "carleson_mu1", "carleson_mu2", "carleson_mu3", "car1", "car2")
DECAY_COLUMNS = ("m", "t", "tail", "bound", "family_sum", "outside_ok", "exp_bound",
                 "identity_rel_err", "ok")
VERTEX_COLUMNS = ("vertex", "area", "area_error", "area_diverged", "nt_max", "count")
FATOU_COLUMNS = ("omega", "r", "value")


@dataclass
class RunResult:
    command: str
    results: dict
    gates: dict
    tables: dict = field(default_factory=dict)    # name -> (columns, rows)
    forest: Optional[dict] = None
    grids: dict = field(default_factory=dict)     # name -> approximant

    @property
    def passed(self) -> bool:
        return all(self.gates.values())


def lab_threads() -> int:
    raw = os.environ.get("LAB_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"LAB_THREADS must be an integer, got {raw!r}") from None
    if v < 1:
        raise ConfigError("LAB_THREADS must be >= 1")
    return v


def _map(fn: Callable, items: Sequence) -> list:
    threads = min(lab_threads(), max(1, len(items)))
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _key(eps: float) -> str:
    return f"eps={eps!r}"


# -- pipelines --------------------------------------------------------------------------

def _epsilon_run(cfg: ExperimentConfig, graph, root, fld, eps: float, keep: bool = False) -> dict:
    forest = build_forest(fld, graph, root, eps, cfg.k_blue, cfg.max_depth, cfg.grid_depth)
    approx = build_approximant(forest, check=False)
    car = carleson_decomposition(approx, forest, graph, fld,
                                 radii=dyadic_radii(root.side, cfg.carleson_levels))
    sums = stopping_sums(forest)
    out = {"epsilon": eps, "sup_error": approx.sup_error, "bound": approx.bound,
           "grid_term": approx.grid_term, "witness": approx.witness,
           "unresolved_leaves": int(forest.unresolved.sum()),
           "unresolved_leaf_fraction": forest.unresolved_fraction,
           "unresolved_cell_fraction": forest.unresolved_cell_fraction,
           "carleson": car.as_dict(), "stopping_sums": sums.as_dict()}
    if keep:
        out["_forest"] = forest
        out["_approx"] = approx
    return out


def _sweep_row(r: dict) -> dict:
    c = r["carleson"]
    s = r["stopping_sums"]
    return {"epsilon": r["epsilon"], "sup_error": r["sup_error"], "bound": r["bound"],
            "unresolved_leaf_fraction": r["unresolved_leaf_fraction"],
            "unresolved_cell_fraction": r["unresolved_cell_fraction"], "g_nodes": s["g_nodes"],
            "s1_ratio_lo": s["ratio1_lo"], "s1_ratio_hi": s["ratio1_hi"], "s2_ratio": s["ratio2"],
            "carleson_mu1": c["mu1_phi1_jumps"]["value"], "carleson_mu2": c["mu2_grad_u_red"]["value"],
            "carleson_mu3": c["mu3_red_jumps"]["value"], "car1": c["car1"]["value"],
            "car2": c["car2"]["value"]}


def _approx_gates(runs: list) -> dict:
    gates = {}
    for r in runs:
        k = _key(r["epsilon"])
        gates[f"sup_error_within_bound[{k}]"] = r["sup_error"] <= r["bound"]
        gates[f"unresolved_cells_below_1pct[{k}]"] = r["unresolved_cell_fraction"] < UNRESOLVED_CELL_LIMIT
        c = r["carleson"]
        gates[f"carleson_finite[{k}]"] = all(
            math.isfinite(c[m]["value"]) for m in ("mu1_phi1_jumps", "mu2_grad_u_red", "mu3_red_jumps"))
    return gates


def run_approximate(cfg: ExperimentConfig) -> RunResult:
    graph, root, fld = cfg.graph(), cfg.root(), cfg.scalar_field()
    runs = _map(lambda e: _epsilon_run(cfg, graph, root, fld, e, keep=True), cfg.epsilons)
    forests, grids = [], {}
    for i, r in enumerate(runs):
        forest, approx = r.pop("_forest"), r.pop("_approx")
        forests.append(lab_io.forest_dict(forest))
        if graph.n == 1:
            grids[f"approximant_{i}"] = approx
    res = RunResult("approximate", {"runs": runs}, _approx_gates(runs),
                    {"approximate": (SWEEP_COLUMNS, [_sweep_row(r) for r in runs])},
                    {"forests": forests} if forests else None, grids)
    return res


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    graph, root, fld = cfg.graph(), cfg.root(), cfg.scalar_field()
    runs = _map(lambda e: _epsilon_run(cfg, graph, root, fld, e), cfg.epsilons)
    rows = [_sweep_row(r) for r in runs]
    summary = {}
    for col in ("s1_ratio_lo", "s2_ratio"):
        vals = [r[col] for r in rows if r[col] > 0]
        summary[f"{col}_spread"] = max(vals) / min(vals) if vals else None
    return RunResult("sweep", {"runs": runs, "summary": summary}, _approx_gates(runs),
                     {"sweep": (SWEEP_COLUMNS, rows)})


def run_verify(cfg: ExperimentConfig) -> RunResult:
    """Invariant checks on the first epsilon: partition, determinism, bound."""
    graph, root, fld = cfg.graph(), cfg.root(), cfg.scalar_field()
    alpha = resolve_alpha(cfg, graph)
    if not cfg.epsilons:
        raise ConfigError("verify needs at least one epsilon", "epsilons")
    eps = cfg.epsilons[0]
    f1 = build_forest(fld, graph, root, eps, cfg.k_blue, cfg.max_depth, cfg.grid_depth)
    f2 = build_forest(fld, graph, root, eps, cfg.k_blue, cfg.max_depth, cfg.grid_depth)
    deterministic = lab_io.dumps_json(lab_io.forest_dict(f1)) == lab_io.dumps_json(lab_io.forest_dict(f2))

    vol = f1.region_volumes()
    cells = np.bincount(f1.labels.ravel(), minlength=max(vol) + 1) * f1.grid.cell_volume
    worst = max(abs(cells[k] - v) for k, v in vol.items())
    stray = int(np.setdiff1d(np.unique(f1.labels), list(vol)).size)
    total = float(sum(vol.values()))
    partition = worst <= 1e-12 * root.side ** (root.n + 1) and stray == 0 \
        and abs(total - root.side ** (root.n + 1)) <= 1e-12

    approx = build_approximant(f1, check=False)
    sums = stopping_sums(f1)
    p24 = prop24_check(fld, graph, root, alpha, range(min(6, cfg.max_depth + 1)),
                       depth=cfg.operator_depth + 1)
    results = {"epsilon": eps, "alpha": alpha, "deterministic_dump": deterministic,
               "partition_max_volume_error": worst, "partition_stray_labels": stray,
               "sup_error": approx.sup_error, "bound": approx.bound,
               "unresolved_cell_fraction": f1.unresolved_cell_fraction,
               "unresolved_leaf_fraction": f1.unresolved_fraction,
               "stopping_sums": sums.as_dict(), "prop24": p24.as_dict()}
    gates = {"forest_deterministic": deterministic, "region_partition_exact": partition,
             "sup_error_within_bound": approx.sup_error <= approx.bound,
             "unresolved_cells_below_1pct": f1.unresolved_cell_fraction < UNRESOLVED_CELL_LIMIT}
    return RunResult("verify", results, gates, forest={"forests": [lab_io.forest_dict(f1)]})


def run_classify(cfg: ExperimentConfig) -> RunResult:
    graph, root, fld = cfg.graph(), cfg.root(), cfg.scalar_field()
    pts = AdaptedGrid(graph, root, cfg.class_depth).points.reshape(-1, root.n + 1)
    balls = default_balls(graph, root, cfg.eta)
    rep = classify(fld, pts, alpha=cfg.class_alpha, graph=graph, balls=balls, eta=cfg.eta)
    finite = bool(np.all(np.isfinite(fld.u(pts))))
    return RunResult("classify", {"report": rep.as_dict(), "samples": int(len(pts))},
                     {"samples_finite": finite})


def run_fatou(cfg: ExperimentConfig) -> RunResult:
    graph, fld = cfg.graph(), cfg.scalar_field()
    alpha = resolve_alpha(cfg, graph)
    params = CountingParams(cfg.count_radius, cfg.count_eps, cfg.beta, alpha)
    cone = ConeSpec(alpha, 0.0, cfg.count_radius)
    n = graph.n
    lo, hi = cfg.window
    t = lo + (np.arange(cfg.fatou_samples) + 0.5) * (hi - lo) / cfg.fatou_samples
    verts = np.stack(np.meshgrid(*[t] * n, indexing="ij"), axis=-1).reshape(-1, n)
    rows, diverged = [], False
    for v in verts:
        a = area_function(fld, graph, v, cone, depth=cfg.operator_depth)
        nt = nontangential_max(fld, graph, v, cone, depth=cfg.operator_depth)
        cnt = counting_function(fld, graph, v, params, depth=cfg.operator_depth)
        diverged |= bool(a.diverged)
        rows.append({"vertex": v, "area": a.value, "area_error": a.error,
                     "area_diverged": bool(a.diverged), "nt_max": nt.value, "count": cnt.value})
    results = {"alpha": alpha, "vertices": len(rows)}
    gates = {"area_converged": not diverged}
    tables = {"vertices": (VERTEX_COLUMNS, rows)}
    try:
        fat = fatou_average(fld, graph, params, (lo, hi), cfg.r_ladder,
                            depth=cfg.operator_depth, samples=cfg.fatou_samples)
        results["fatou"] = {"value": fat.value, "witness_omega": fat.witness_omega,
                            "witness_r": fat.witness_r}
        gates["fatou_finite"] = math.isfinite(fat.value)
        tables["fatou"] = (FATOU_COLUMNS, fat.table)
    except ValueError as exc:
        results["fatou"] = {"error": str(exc)}
        gates["field_bounded_by_one"] = False
    return RunResult("fatou", results, gates, tables)


def run_goodlambda(cfg: ExperimentConfig) -> RunResult:
    gl = cfg.goodlambda
    lam, c = cfg.lam, cfg.c
    df = synth_martingale(gl.depth, lam / 4, cfg.seed)
    hyp = check_hypothesis(df, lam, c)
    results = {"depth": gl.depth, "lambda": str(lam), "c": str(c), "seed": cfg.seed,
               "hypothesis": {"holds": hyp.holds, "worst_ratio": str(hyp.worst_ratio),
                              "worst_cube": list(hyp.worst_cube)}}
    gates = {"hypothesis_holds": hyp.holds}
    fam = None
    if hyp.holds:
        fam = build_families(df, lam, gl.steps, strict=True, c=c)
        props = verify_properties(fam, df, lam)
        results["families"] = {"steps": [[list(q) for q in s] for s in fam.steps],
                               "measures": [str(fam.measure(k + 1)) for k in range(len(fam.steps))]}
        results["properties"] = props.as_dict()
        gates["properties_hold"] = props.all
    rows = decay_check(df, lam, gl.M, fam)
    results["decay"] = [r.as_dict() for r in rows]
    gates["decay_bound_holds"] = all(r.ok for r in rows)
    gates["identity_within_1e-12"] = all(r.identity_rel_err <= 1e-12 for r in rows)
    table = [{k: v for k, v in r.as_dict().items()} for r in rows]
    return RunResult("goodlambda", results, gates, {"decay": (DECAY_COLUMNS, table)})


PIPELINES = {"approximate": run_approximate, "verify": run_verify, "classify": run_classify,
             "fatou": run_fatou, "goodlambda": run_goodlambda, "sweep": run_sweep}


def run(cfg: ExperimentConfig, command: str) -> RunResult:
    if command not in PIPELINES:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}", "command")
    return PIPELINES[command](cfg)


# -- reports -----------------------------------------------------------------------------

def emit_report(result: RunResult, cfg: ExperimentConfig, out_dir) -> Path:
    """Write ``report.json``, ``tables/*.csv`` and, when present, ``forest.json``
    and approximant grids.  Content depends only on config and seed."""
    out = Path(out_dir)
    tables = {}
    for name, (cols, rows) in sorted(result.tables.items()):
        rel = f"tables/{name}.csv"
        lab_io.write_csv(out / rel, cols, rows)
        tables[name] = rel
    files = {"tables": tables}
    if result.forest is not None:
        lab_io.write_json(out / "forest.json", result.forest)
        files["forest"] = "forest.json"
    grids = {}
    for name, approx in sorted(result.grids.items()):
        rel = f"grids/{name}.f64"
        lab_io.write_approximant_grid(out / rel, approx)
        grids[name] = rel
    if grids:
        files["grids"] = grids
    report = {"schema_version": SCHEMA_VERSION, "command": result.command,
              "config": cfg.to_dict(), "gates": dict(sorted(result.gates.items())),
              "passed": result.passed, "results": result.results, "files": files}
    return lab_io.write_json(out / "report.json", report)


# -- entry point -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="epsilon-approximability experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON or TOML experiment config")
    ap.add_argument("--out", default=None, help="output directory (overrides config.out)")
    ap.add_argument("--depth", type=int, default=None, help="override max_depth")
    ap.add_argument("--seed", type=int, default=None, help="override seed")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.depth is not None:
            cfg.max_depth = args.depth
            if cfg.grid_depth is not None and cfg.grid_depth < args.depth + 2:
                cfg.grid_depth = None
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        validate(cfg)
        result = run(cfg, args.command)
    except ConfigError as exc:
        print(f"lab: invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lab: I/O error: {exc}", file=sys.stderr)
        return 3
    try:
        path = emit_report(result, cfg, cfg.out)
    except OSError as exc:
        print(f"lab: I/O error: {exc}", file=sys.stderr)
        return 3
    failed = sorted(k for k, v in result.gates.items() if not v)
    print(f"{args.command}: {'ok' if not failed else 'FAILED ' + ', '.join(failed)} -> {path}")
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
