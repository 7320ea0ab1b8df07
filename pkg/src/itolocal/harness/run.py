"""Experiment dispatch, aggregation and report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from .. import __version__
from ..bv2d import Rect, RefinementPolicy, variation
from ..itoformula import (FunctionSpec, convergence_breakdowns, default_level_spacing,
                          eval_curve, eval_ito_process, eval_semimartingale, fold, krylov_family,
                          summarize_convergence)
from ..localtime import LevelGrid, local_time_occupation, local_time_tanaka, occupation_check
from ..mollifier import convergence_report, is_decreasing
from ..pathsim import RNG_ALGORITHM, ItoProcessSpec, TimeGrid, simulate_bm_batch, simulate_ito
from .builtins import builtin
from .config import ExperimentConfig
from .expr import Expression, inline_spec

WORKERS_ENV = "ITOLOCAL_WORKERS"
BOOTSTRAP_RESAMPLES = 1000
_BATCH = 64

DEFAULT_FAMILY = [
    {"name": "1", "f": "1 + 0*x"},
    {"name": "x^2", "f": "x**2"},
    {"name": "sin(pi x)", "f": "sin(pi*x)"},
    {"name": "1{x>0}", "f": "where(x > 0, 1.0, 0.0)", "breakpoints": [0.0]},
]


@dataclass
class Metric:
    """A reported quantity; ``op`` is ``<=``, ``>=``, ``==`` or ``info`` (no verdict)."""

    name: str
    value: Any
    tolerance: Any = None
    op: str = "info"
    ci: tuple[float, float] | None = None

    @property
    def verdict(self) -> bool | None:
        if self.op == "info":
            return None
        if self.op == "==":
            return self.value == self.tolerance
        if isinstance(self.value, float) and math.isnan(self.value):
            return False
        return self.value <= self.tolerance if self.op == "<=" else self.value >= self.tolerance

    def row(self) -> dict:
        lo, hi = self.ci if self.ci else ("", "")
        v = {None: "", True: "pass", False: "fail"}[self.verdict]
        return {"metric": self.name, "value": _fmt(self.value), "op": self.op,
                "tolerance": _fmt(self.tolerance), "ci_lo": _fmt(lo), "ci_hi": _fmt(hi),
                "verdict": v}


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Report:
    config: dict
    metrics: list[Metric]
    data: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    rng: str = RNG_ALGORITHM
    version: str = __version__
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(m.verdict is not False for m in self.metrics)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["metric", "value", "op", "tolerance", "ci_lo", "ci_hi",
                                 "verdict"], lineterminator="\n")
        w.writeheader()
        for m in self.metrics:
            w.writerow(m.row())
        return buf.getvalue()

    def data_csv(self) -> str:
        if not self.data:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, list(self.data[0]), lineterminator="\n")
        w.writeheader()
        for r in self.data:
            w.writerow({k: _fmt(v) for k, v in r.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"config": self.config, "passed": self.passed,
                "metrics": [{**asdict(m), "verdict": m.verdict} for m in self.metrics],
                "wall_clock_s": self.wall_clock, "rng": self.rng, "version": self.version,
                "extra": self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "report.json", out / "metrics.csv"]
        files[0].write_text(self.to_json() + "\n")
        files[1].write_text(self.metrics_csv())
        if self.data:
            files.append(out / "data.csv")
            files[-1].write_text(self.data_csv())
        return files


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


# --------------------------------------------------------------------------
# Resolution helpers


def resolve_function(cfg: ExperimentConfig) -> FunctionSpec:
    fn = cfg.function
    if "inline" in fn:
        return inline_spec(fn["inline"])
    return builtin(fn.get("builtin", "tanaka"), **fn.get("params", {}))


def _coef(v):
    return float(v) if isinstance(v, (int, float)) else Expression(v)


def resolve_process(cfg: ExperimentConfig) -> ItoProcessSpec:
    p = cfg.process
    return ItoProcessSpec(_coef(p.get("sigma", 1.0)), _coef(p.get("b", 0.0)),
                          float(p.get("x0", 0.0)), float(p.get("delta", 1.0)),
                          float(p.get("K", 1.0)), name=f"sigma={p.get('sigma', 1.0)}, b={p.get('b', 0.0)}")


def _is_bm(spec: ItoProcessSpec) -> bool:
    return (not callable(spec.sigma) and not callable(spec.b)
            and float(spec.sigma) == 1.0 and float(spec.b) == 0.0)


def simulate_paths(cfg: ExperimentConfig, grid: TimeGrid, start: int, count: int):
    spec = resolve_process(cfg)
    if _is_bm(spec):
        return simulate_bm_batch(grid, cfg.seed, count, start, x0=spec.x0)
    return simulate_ito(spec, grid, cfg.seed, paths=np.arange(start, start + count))


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    size = math.ceil(n / parts)
    return [(lo, min(size, n - lo)) for lo in range(0, n, size)]


def _map(fn, cfg_dict: dict, n: int) -> list:
    """Run ``fn(cfg_dict, start, count)`` over path ranges; results in path order."""
    w = n_workers()
    ranges = _split(n, w) if w > 1 else [(0, n)]
    if w == 1 or len(ranges) == 1:
        return [fn(cfg_dict, s, c) for s, c in ranges]
    with ProcessPoolExecutor(max_workers=w) as ex:
        futs = [ex.submit(fn, cfg_dict, s, c) for s, c in ranges]
        return [f.result() for f in futs]


def bootstrap_mean_ci(values: np.ndarray, seed: int) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.all(values == values[0]):
        v = float(values.mean()) if values.size else math.nan
        return (v, v)
    res = stats.bootstrap((values,), np.mean, n_resamples=BOOTSTRAP_RESAMPLES,
                          confidence_level=0.95, method="percentile",
                          random_state=np.random.default_rng(seed))
    return (float(res.confidence_interval.low), float(res.confidence_interval.high))


# --------------------------------------------------------------------------
# Experiment kinds


def _formula_chunk(cfg_dict: dict, start: int, count: int):
    cfg = ExperimentConfig(**cfg_dict)
    fspec = resolve_function(cfg)
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    da = cfg.grid.get("da") or default_level_spacing(grid.dt)
    parts = []
    for lo in range(start, start + count, _BATCH):
        path = simulate_paths(cfg, grid, lo, min(_BATCH, start + count - lo))
        if cfg.variant == "curve":
            parts.append(eval_curve(fspec, path, form=cfg.curve_form, da=da))
        elif cfg.variant == "ito_process":
            parts.append(eval_ito_process(fspec, resolve_process(cfg), path,
                                          cfg.process.get("N", 10.0), da=da))
        else:
            parts.append(eval_semimartingale(fspec, path, da=da))
    return fold(parts)


def run_formula_check(cfg: ExperimentConfig) -> Report:
    tb = fold(_map(_formula_chunk, cfg.to_dict(), cfg.n_paths))
    norm = tb.normalized
    tol = cfg.tolerances["normalized_residual"]
    mean = tb.mean()
    metrics = [
        Metric("mean_normalized_residual", float(norm.mean()), tol, "<=",
               bootstrap_mean_ci(norm, cfg.seed)),
        Metric("all_terms_finite", bool(tb.all_finite()), True, "=="),
        Metric("mean_abs_residual", mean["abs_residual"]),
    ] + [Metric(f"mean_{k}", mean[k]) for k in ("lhs", "term_dt", "term_dx", "term_lap",
                                               "term_boundary", "term_2d", "term_curve")]
    data = [{"path": i, **{k: float(np.atleast_1d(getattr(tb, k))[i]) for k in
                           ("lhs", "term_dt", "term_dx", "term_lap", "term_boundary", "term_2d",
                            "term_curve", "residual")}, "normalized": float(norm[i])}
            for i in range(tb.n_paths)]
    return Report(cfg.to_dict(), metrics, data)


def _occupation_chunk(cfg_dict: dict, start: int, count: int):
    cfg = ExperimentConfig(**cfg_dict)
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    da = cfg.grid.get("da", 2.0**-7)
    g = Expression(cfg.g)
    rows = []
    for lo in range(start, start + count, _BATCH):
        path = simulate_paths(cfg, grid, lo, min(_BATCH, start + count - lo))
        levels = LevelGrid.covering(path.x, da, align="nodes")
        chk = occupation_check(g, path, levels)
        fld = local_time_occupation(path, levels)
        occ0 = fld.at(0.0)[:, -1]
        tan0 = local_time_tanaka(path, 0.0, width=da)[:, -1]
        mass = 2.0 * da * fld.final().sum(axis=-1)
        for i in range(path.n_paths):
            rows.append({"path": lo + i, "lhs": float(chk.lhs[i]), "rhs": float(chk.rhs[i]),
                         "relative_error": float(chk.rel_error[i]),
                         "L_T0_occupation": float(occ0[i]), "L_T0_tanaka": float(tan0[i]),
                         "mass_over_qv": float(mass[i] / path.qv[i, -1])})
    return rows


def run_occupation(cfg: ExperimentConfig) -> Report:
    rows = [r for part in _map(_occupation_chunk, cfg.to_dict(), cfg.n_paths) for r in part]
    rel = np.array([r["relative_error"] for r in rows])
    tol = cfg.tolerances["relative_error"]
    frac = float(np.mean(rel <= tol))
    occ = np.array([r["L_T0_occupation"] for r in rows])
    gap = np.abs(occ - np.array([r["L_T0_tanaka"] for r in rows]))
    metrics = [
        Metric(f"fraction_relative_error_le_{tol:g}", frac, cfg.tolerances["fraction"], ">="),
        Metric("max_relative_error", float(rel.max())),
        Metric("mean_L_T(0)", float(occ.mean()), ci=bootstrap_mean_ci(occ, cfg.seed)),
        Metric("max_estimator_gap_at_0", float(gap.max())),
    ]
    if "estimator_gap" in cfg.tolerances:
        metrics.append(Metric("max_estimator_gap_at_0_check", float(gap.max()),
                              cfg.tolerances["estimator_gap"], "<="))
    return Report(cfg.to_dict(), metrics, rows)


def run_krylov(cfg: ExperimentConfig) -> Report:
    spec = resolve_process(cfg)
    N = float(cfg.process.get("N", 2.0))
    fam_cfg = cfg.family or DEFAULT_FAMILY
    family = {m.get("name", m["f"]): (Expression(m["f"]), m.get("breakpoints", []))
              for m in fam_cfg}
    steps = cfg.steps_list or [cfg.n_steps]
    rows, sups = [], []
    problems = spec.check_bounds(cfg.horizon, (-N, N))
    for n in steps:
        reps = krylov_family(family, spec, N, cfg.horizon, cfg.n_paths, n, cfg.seed)
        finite = [r.ratio for r in reps if math.isfinite(r.ratio)]
        sups.append(max(finite) if finite else math.nan)
        for r in reps:
            rows.append({"n_steps": n, "name": r.name, "lhs": r.lhs, "ci_lo": r.lhs_ci[0],
                         "ci_hi": r.lhs_ci[1], "rhs": r.rhs, "ratio": r.ratio,
                         "degenerate": r.degenerate, "inconsistent": r.inconsistent})
    all_finite = all(math.isfinite(r["ratio"]) for r in rows)
    change = abs(sups[-1] - sups[0]) / sups[0] if sups[0] else math.nan
    metrics = [Metric("coefficient_bounds_ok", not problems, True, "=="),
               Metric("all_ratios_finite", all_finite, True, "=="),
               Metric("sup_ratio_relative_change", change, cfg.tolerances["stability"], "<=")]
    metrics += [Metric(f"sup_ratio_n{n}", s) for n, s in zip(steps, sups)]
    ones = [r for r in rows if r["name"] == "1"]
    if ones:
        # E[t ^ tau_N] <= t for the constant function
        metrics.append(Metric("constant_lhs_ci_lo_le_t", min(r["ci_lo"] for r in ones),
                              cfg.horizon, "<="))
    rep = Report(cfg.to_dict(), metrics, rows)
    rep.extra["bound_violations"] = problems
    return rep


def run_variation(cfg: ExperimentConfig) -> Report:
    fspec = resolve_function(cfg)
    surf = fspec.grad_left_v
    if surf is None:
        raise ValueError(f"function {fspec.name!r} has no BV gradient part to measure")
    if fspec.curve is not None:
        surf = surf.shifted(fspec.curve)
    box = cfg.box or list(fspec.box)
    res = variation(surf, Rect(*box), RefinementPolicy(tol=cfg.tolerances["convergence"]))
    rows = [{"cells": c, "variation": v} for c, v in res.refinement_trace]
    metrics = [Metric("variation", res.value),
               Metric("converged", bool(res.converged), True, "=="),
               Metric("refinement_monotone", bool(res.is_monotone()), True, "==")]
    return Report(cfg.to_dict(), metrics, rows)


def run_mollifier(cfg: ExperimentConfig) -> Report:
    fspec = resolve_function(cfg)
    m = cfg.mollifier
    ns = m.get("ns", [1, 2, 4, 8, 16, 32, 64])
    pts = [tuple(p) for p in m.get("points", [[0.5, 0.0], [0.5, 0.5]])]
    direction = tuple(m.get("direction", ["-", "-"]))
    rows = convergence_report(fspec.f, fspec.dt_left, fspec.grad_left, ns, pts, direction,
                              m.get("order", 64))
    final = max(r.err_dx for r in rows if r.n == max(ns))
    data = [{"point": f"({r.t:g},{r.x:g})", "n": r.n, "err_f": r.err_f, "err_dt": r.err_dt,
             "err_dx": r.err_dx, "boundary": r.boundary} for r in rows]
    metrics = [Metric("err_dx_decreasing", is_decreasing(rows, "err_dx", 1e-9), True, "=="),
               Metric(f"max_err_dx_at_n{max(ns)}", final, cfg.tolerances["final_error"], "<="),
               Metric(f"max_err_f_at_n{max(ns)}", max(r.err_f for r in rows if r.n == max(ns)))]
    return Report(cfg.to_dict(), metrics, data)


def _convergence_chunk(cfg_dict: dict, start: int, count: int):
    cfg = ExperimentConfig(**cfg_dict)
    fspec = resolve_function(cfg)
    spec = resolve_process(cfg) if cfg.variant == "ito_process" else None
    return convergence_breakdowns(fspec, cfg.variant, _exponents(cfg), count, cfg.seed,
                                  cfg.horizon, spec, cfg.process.get("N", 10.0), cfg.curve_form,
                                  None, start)


def _exponents(cfg: ExperimentConfig) -> list[int]:
    return sorted(cfg.grid.get("exponents", [10, 12, 14]))


def run_convergence(cfg: ExperimentConfig) -> Report:
    parts = _map(_convergence_chunk, cfg.to_dict(), cfg.n_paths)
    merged = {k: fold([p[k] for p in parts]) for k in _exponents(cfg)}
    fname = resolve_function(cfg).name
    study = summarize_convergence(merged, cfg.variant, fname, cfg.horizon)
    last = study.levels[-1]
    norm = merged[max(merged)].normalized
    metrics = [
        Metric("mean_abs_residual_strictly_decreasing", study.strictly_decreasing(), True, "=="),
        Metric(f"mean_normalized_residual_n{last.n_steps}", last.mean_normalized,
               cfg.tolerances["normalized_residual"], "<=", bootstrap_mean_ci(norm, cfg.seed)),
        Metric("loglog_slope_dt", study.slope),
    ]
    return Report(cfg.to_dict(), metrics, study.rows())


DISPATCH = {
    "formula-check": run_formula_check,
    "occupation": run_occupation,
    "krylov": run_krylov,
    "variation": run_variation,
    "mollifier-report": run_mollifier,
    "convergence": run_convergence,
}


def run(cfg: ExperimentConfig, out_dir=None) -> Report:
    """Dispatch ``cfg``, time it, and write outputs when ``out_dir`` (or ``cfg.output``) is set."""
    t0 = time.perf_counter()
    rep = DISPATCH[cfg.kind](cfg)
    rep.wall_clock = time.perf_counter() - t0
    rep.extra.setdefault("workers", n_workers())
    target = out_dir or cfg.output
    if target:
        rep.write(target)
    return rep
