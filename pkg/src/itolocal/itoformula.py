"""Term-by-term evaluation of generalized Ito identities on simulated paths.

For ``f = f_h + f_v`` the identity checked is

    f(T, X_T) - f(0, X_0) = int d_t^- f ds + int grad^- f dX + 1/2 int lap^- f_h d<X>
                            + int L_T(x) d_x grad^- f_v(T, x)
                            - iint L_s(x) d_{s,x} grad^- f_v(s, x)

with ``L`` in the half-occupation-density convention.  The curve variant
either runs the same assembly on ``X* = X - l`` against the surface
``grad^- f_v(t, x + l(t))`` (``form='shifted'``) or replaces both
Stieltjes terms by ``int jump(s) d_s L*_s(0)`` (``form='jump'``).

Field conventions: ``L`` is read piecewise constant on each level cell
``[a_j, a_j + da)``; jumps of ``grad^- f_v`` are expected to sit inside
cells, which ``LevelGrid.covering(..., align='cells')`` arranges for
jumps at multiples of ``da``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .bv2d import Surface2D
from .localtime import LevelGrid, LocalTimeField, local_time_occupation
from .pathsim import (Curve, ItoProcessSpec, SemimartingalePath, TimeGrid, aggregate_increments,
                      bm_from_increments, brownian_increments, first_exit, shift_by_curve,
                      simulate_ito)

VARIANTS = ("semimartingale", "curve", "ito_process")
TERMS = ("lhs", "term_dt", "term_dx", "term_lap", "term_boundary", "term_2d", "term_curve",
         "residual")

# paths per evaluation chunk for the step-wise surface reads
_CHUNK_CELLS = 2**22


def _zero(t, x):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)


@dataclass
class FunctionSpec:
    """The ``f`` of an Ito identity with its one-sided derivative fields.

    All callables take broadcastable arrays ``(t, x)``.  ``grad_left_v`` is
    the left-continuous ``grad^- f_v`` as a :class:`Surface2D`; ``None``
    means ``f_v = 0``.  For the curve variant give ``curve`` plus either a
    BV ``grad_left_v`` (shifted form) or ``jump`` (jump form), and
    ``lap_left`` for the Laplacian of ``f`` off the curve.
    """

    name: str
    f: Callable
    dt_left: Callable
    grad_left: Callable
    f_h: Callable = _zero
    grad_h: Callable = _zero
    lap_left_h: Callable = _zero
    f_v: Callable = _zero
    grad_left_v: Surface2D | None = None
    curve: Curve | None = None
    jump: Callable | None = None
    lap_left: Callable | None = None
    box: tuple[float, float, float, float] = (0.0, 1.0, -2.0, 2.0)
    variants: tuple[str, ...] = ("semimartingale",)
    notes: str = ""

    @property
    def has_bv_part(self) -> bool:
        return self.grad_left_v is not None


@dataclass
class TermBreakdown:
    """Per-path (or averaged) terms of one identity and its residual."""

    variant: str
    lhs: np.ndarray
    term_dt: np.ndarray
    term_dx: np.ndarray
    term_lap: np.ndarray
    term_boundary: np.ndarray
    term_2d: np.ndarray
    term_curve: np.ndarray
    residual: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        return np.abs(self.residual) / (1.0 + np.abs(self.lhs))

    @property
    def n_paths(self) -> int:
        return int(np.size(self.lhs))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, k))) for k in TERMS)

    def mean(self) -> dict:
        out = {k: float(np.mean(getattr(self, k))) for k in TERMS}
        out["abs_residual"] = float(np.mean(np.abs(self.residual)))
        out["normalized_residual"] = float(np.mean(self.normalized))
        return out

    def to_json(self) -> str:
        d = {"variant": self.variant, "n_paths": self.n_paths, "mean": self.mean(),
             "per_path": {k: np.atleast_1d(getattr(self, k)).tolist() for k in TERMS},
             "meta": self.meta}
        return json.dumps(d, indent=2, default=str)

    def to_csv(self, path) -> None:
        cols = [np.atleast_1d(getattr(self, k)) for k in TERMS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", *TERMS, "normalized"])
            norm = np.atleast_1d(self.normalized)
            for i in range(cols[0].size):
                w.writerow([i, *(repr(float(c[i])) for c in cols), repr(float(norm[i]))])


def fold(parts: Sequence[TermBreakdown]) -> TermBreakdown:
    """Concatenate per-path breakdowns (chunks or workers) into one."""
    if not parts:
        raise ValueError("nothing to fold")
    cat = {k: np.concatenate([np.atleast_1d(getattr(p, k)) for p in parts]) for k in TERMS}
    return TermBreakdown(parts[0].variant, meta=dict(parts[0].meta), **cat)


def default_level_spacing(dt: float) -> float:
    """Dyadic ``da`` near ``dt^{1/4} / 8``.

    The occupation estimator's bias is ``O(da)`` while its noise per cell
    grows like ``sqrt(dt)/da``; this choice keeps both below the Tanaka
    residual targets on ``[0, 1]`` for ``2^12 .. 2^18`` steps.
    """
    return 2.0 ** math.floor(math.log2(dt**0.25 / 8.0) + 0.5)


def _stop_mask(n: int, stop) -> np.ndarray | None:
    if stop is None:
        return None
    stop = np.asarray(stop)
    return np.arange(n) < (stop[..., None] if stop.ndim else stop)


def _take_at(arr: np.ndarray, stop) -> np.ndarray:
    if stop is None:
        return arr[..., -1]
    stop = np.asarray(stop)
    if arr.ndim == 1:
        return arr[int(stop)]
    return np.take_along_axis(arr, np.broadcast_to(stop, arr.shape[:1])[:, None], axis=-1)[:, 0]


def _chunks(P: int, n: int):
    step = max(1, _CHUNK_CELLS // max(n, 1))
    for lo in range(0, P, step):
        yield slice(lo, min(P, lo + step))


def boundary_term(L_end: np.ndarray, levels: LevelGrid, h: Surface2D, t_end) -> np.ndarray:
    """``int L_T(x) d_x h(T, x)`` for ``L_T`` piecewise constant on the level cells.

    Exact for that ``L_T``: cell ``j`` carries ``h(T, a_{j+1}) - h(T, a_j)``
    with ``h`` read left-continuously.
    """
    nodes = levels.nodes
    t_end = np.asarray(t_end, dtype=float)
    H = h.eval_left(t_end[..., None], nodes)
    return (L_end * np.diff(H, axis=-1)).sum(axis=-1)


def boundary_term_steps(fld: LocalTimeField, h: Surface2D, t_end) -> np.ndarray:
    """:func:`boundary_term` summed over time steps instead of levels.

    ``L_T(a_j) = sum of w_k over steps with bin j``, so the same value is
    ``sum_k w_k D_{j_k}(T)``.  The reduction runs over the ``n`` steps, which
    keeps every path's value independent of how paths are batched.
    """
    t_end = np.asarray(t_end, dtype=float)
    D = np.diff(h.eval_left(t_end[..., None], fld.levels.nodes), axis=-1)
    Dk = np.take_along_axis(D, fld.bins, axis=-1) if D.ndim == 2 else D[fld.bins]
    return (fld.weights * Dk).sum(axis=-1)


def stieltjes_2d_term(fld: LocalTimeField, h: Surface2D, stop=None) -> np.ndarray:
    """``iint L_s(x) d_{s,x} h`` over ``[0, t_stop] x levels`` by lower-left corner sums.

    Summation by parts on the time axis reads only the cell visited per
    step: with ``D_j(t) = h(t, a_{j+1}) - h(t, a_j)`` the corner sum equals
    ``sum_k w_k (D_{j_k}(t_end) - D_{j_k}(t_{k+1}))``.  Agrees with the dense
    corner sum (``bv2d.grid_ls_sum_2d``) to rounding.
    """
    grid, levels = fld.grid, fld.levels
    t = grid.times
    n = grid.n_steps
    bins, w = fld.bins, fld.weights
    single = bins.ndim == 1
    if single:
        bins, w = bins[None, :], w[None, :]
    P = bins.shape[0]
    kend = np.full(P, n) if stop is None else np.broadcast_to(np.asarray(stop), (P,))
    t_end = t[kend]
    D_end = np.diff(h.eval_left(t_end[:, None], levels.nodes), axis=-1)
    out = np.empty(P)
    da, lo = levels.da, levels.origin
    t1 = t[1:]
    for sl in _chunks(P, n):
        a0 = lo + bins[sl] * da
        d = h.eval_left(t1, a0 + da) - h.eval_left(t1, a0)
        out[sl] = (w[sl] * (np.take_along_axis(D_end[sl], bins[sl], axis=-1) - d)).sum(axis=-1)
    return float(out[0]) if single else out


def _assemble(fspec: FunctionSpec, path: SemimartingalePath, star: SemimartingalePath,
              levels: LevelGrid, hv: Surface2D | None, variant: str, stop=None,
              jump_form: bool = False) -> TermBreakdown:
    """Shared term assembly; ``star`` carries the local time, ``path`` the rest."""
    t = path.t
    n = path.grid.n_steps
    tl = t[:-1]
    xl = path.x[..., :-1]
    dx = np.diff(path.x, axis=-1)
    dq = np.diff(path.qv, axis=-1)
    mask = _stop_mask(n, stop)

    def masked(v):
        v = np.broadcast_to(v, dx.shape)
        return v if mask is None else np.where(mask, v, 0.0)

    t_end = t[-1] if stop is None else t[np.asarray(stop)]
    x_end = _take_at(path.x, stop)
    x0 = path.x[..., 0]
    lhs = np.asarray(fspec.f(t_end, x_end), dtype=float) - np.asarray(fspec.f(0.0, x0), dtype=float)
    term_dt = (masked(fspec.dt_left(tl, xl)) * path.grid.dt).sum(axis=-1)
    term_dx = (masked(fspec.grad_left(tl, xl)) * dx).sum(axis=-1)
    lap = fspec.lap_left if (jump_form and fspec.lap_left is not None) else fspec.lap_left_h
    term_lap = 0.5 * (masked(lap(tl, xl)) * dq).sum(axis=-1)
    zeros = np.zeros(np.shape(lhs))
    term_boundary, term_2d, term_curve = zeros, zeros.copy(), zeros.copy()
    meta = {"n_steps": n, "horizon": path.grid.horizon, "da": levels.da,
            "level_origin": levels.origin, "levels": levels.count, "seed": path.seed,
            "function": fspec.name}
    if jump_form:
        fld = local_time_occupation(star, levels, stop)
        j0 = int(levels.cell_of(0.0))
        inc = np.where(fld.bins == j0, fld.weights, 0.0)
        term_curve = (np.asarray(fspec.jump(tl), dtype=float) * inc).sum(axis=-1)
        residual = lhs - (term_dt + term_dx + term_lap + term_curve)
    else:
        if hv is not None:
            fld = local_time_occupation(star, levels, stop)
            term_boundary = np.asarray(boundary_term_steps(fld, hv, t_end), dtype=float)
            term_2d = np.asarray(stieltjes_2d_term(fld, hv, stop), dtype=float)
        residual = lhs - (term_dt + term_dx + term_lap + term_boundary - term_2d)
    if stop is not None:
        meta["stopped_paths"] = int(np.sum(np.asarray(stop) < n))
    return TermBreakdown(variant, lhs, term_dt, term_dx, term_lap, term_boundary, term_2d,
                         term_curve, residual, meta)


def covering_levels(x, da: float | None, dt: float) -> LevelGrid:
    return LevelGrid.covering(x, default_level_spacing(dt) if da is None else da, align="cells")


def eval_semimartingale(fspec: FunctionSpec, path: SemimartingalePath,
                        levels: LevelGrid | None = None, da: float | None = None) -> TermBreakdown:
    """All terms of the semimartingale identity on each path of ``path``."""
    levels = levels or covering_levels(path.x, da, path.grid.dt)
    return _assemble(fspec, path, path, levels, fspec.grad_left_v, "semimartingale")


def eval_curve(fspec: FunctionSpec, path: SemimartingalePath, levels: LevelGrid | None = None,
               form: str = "shifted", curve: Curve | None = None,
               da: float | None = None) -> TermBreakdown:
    """Curve variant with ``X* = X - l`` and its local time.

    ``form='shifted'`` integrates against ``grad^- f_v(t, x + l(t))``;
    ``form='jump'`` uses ``int jump(s) d_s L*_s(0)`` and the off-curve
    Laplacian ``lap_left``.
    """
    curve = curve or fspec.curve
    if curve is None:
        raise ValueError(f"function {fspec.name!r} declares no curve")
    if form not in ("shifted", "jump"):
        raise ValueError(f"unknown curve form {form!r}")
    star = shift_by_curve(path, curve)
    levels = levels or covering_levels(star.x, da, path.grid.dt)
    if form == "jump":
        if fspec.jump is None:
            raise ValueError(f"function {fspec.name!r} declares no jump function")
        return _assemble(fspec, path, star, levels, None, "curve", jump_form=True)
    hv = None if fspec.grad_left_v is None else fspec.grad_left_v.shifted(curve)
    return _assemble(fspec, path, star, levels, hv, "curve")


def eval_ito_process(fspec: FunctionSpec, spec: ItoProcessSpec, path: SemimartingalePath,
                     N: float = 10.0, levels: LevelGrid | None = None,
                     da: float | None = None) -> TermBreakdown:
    """The identity on ``[0, T ^ tau_N]`` for an Euler path of ``spec``."""
    stop = first_exit(path, N)
    levels = levels or covering_levels(path.x, da, path.grid.dt)
    out = _assemble(fspec, path, path, levels, fspec.grad_left_v, "ito_process", stop=stop)
    out.meta.update(N=N, process=spec.name or repr(spec))
    return out


# --------------------------------------------------------------------------
# Krylov estimate


@dataclass
class KrylovReport:
    lhs: float
    lhs_ci: tuple[float, float]
    rhs: float
    ratio: float
    degenerate: bool
    inconsistent: bool
    N: float
    t: float
    delta: float
    K: float
    n_paths: int
    n_steps: int
    name: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def l2_norm(f: Callable, t: float, N: float, points_x: Sequence[float] = ()) -> float:
    """``(int_0^t int_{-N}^N f^2 dx dr)^{1/2}`` by adaptive quadrature."""
    pts = [p for p in points_x if -N < p < N]
    opts_x = {"points": pts, "limit": 200} if pts else {"limit": 200}
    val, _ = integrate.nquad(lambda x, r: float(f(r, x)) ** 2, [[-N, N], [0.0, t]],
                             opts=[opts_x, {"limit": 200}])
    return math.sqrt(max(val, 0.0))


def krylov_check(f: Callable, spec: ItoProcessSpec, N: float, t: float, n_paths: int,
                 n_steps: int = 2**12, seed: int = 0, points_x: Sequence[float] = (),
                 name: str = "", dw: np.ndarray | None = None) -> KrylovReport:
    """Both sides of the Krylov estimate ``E int_0^{t ^ tau_N} |f| dr <= M ||f||_2``.

    ``lhs`` is a Monte Carlo mean with a normal 95% interval; ``rhs`` the
    ``L^2`` norm over ``[0, t] x [-N, N]``.
    """
    grid = TimeGrid(t, n_steps)
    if dw is None:
        dw = brownian_increments(grid, seed, np.arange(n_paths))
    path = simulate_ito(spec, grid, dw=dw, paths=np.arange(n_paths))
    path.seed = seed
    stop = first_exit(path, N)
    mask = _stop_mask(n_steps, stop)
    vals = np.abs(np.broadcast_to(np.asarray(f(path.t[:-1], path.x[:, :-1]), dtype=float),
                                  mask.shape))
    per = np.where(mask, vals, 0.0).sum(axis=-1) * grid.dt
    lhs = float(per.mean())
    half = 1.96 * float(per.std(ddof=1)) / math.sqrt(n_paths) if n_paths > 1 else math.inf
    rhs = l2_norm(f, t, N, points_x)
    degenerate = rhs == 0.0 and lhs == 0.0
    inconsistent = rhs == 0.0 and lhs > 0.0
    ratio = math.nan if degenerate else (math.inf if inconsistent else lhs / rhs)
    return KrylovReport(lhs, (lhs - half, lhs + half), rhs, ratio, degenerate, inconsistent,
                        N, t, spec.delta, spec.K, n_paths, n_steps, name)


def krylov_family(family: dict[str, tuple[Callable, Sequence[float]]], spec: ItoProcessSpec,
                  N: float, t: float, n_paths: int, n_steps: int, seed: int = 0) -> list[KrylovReport]:
    """Reports for each ``name -> (f, x-breakpoints)`` on common Brownian increments."""
    grid = TimeGrid(t, n_steps)
    dw = brownian_increments(grid, seed, np.arange(n_paths))
    return [krylov_check(f, spec, N, t, n_paths, n_steps, seed, pts, name, dw=dw)
            for name, (f, pts) in family.items()]


# --------------------------------------------------------------------------
# Refinement studies


@dataclass
class ConvergenceLevel:
    n_steps: int
    da: float
    mean_abs_residual: float
    mean_normalized: float
    n_paths: int


@dataclass
class ConvergenceStudy:
    levels: list[ConvergenceLevel]
    slope: float
    variant: str
    function: str

    def strictly_decreasing(self, column: str = "mean_abs_residual") -> bool:
        v = [getattr(l, column) for l in self.levels]
        return all(b < a for a, b in zip(v, v[1:]))

    def rows(self) -> list[dict]:
        return [asdict(l) for l in self.levels]


def fit_slope(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    ok = (h > 0) & (err > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def evaluate_variant(fspec: FunctionSpec, variant: str, path: SemimartingalePath,
                     da: float | None = None, spec: ItoProcessSpec | None = None,
                     N: float = 10.0, form: str = "jump") -> TermBreakdown:
    if variant == "semimartingale":
        return eval_semimartingale(fspec, path, da=da)
    if variant == "curve":
        return eval_curve(fspec, path, form=form, da=da)
    if variant == "ito_process":
        if spec is None:
            raise ValueError("the ito_process variant needs an ItoProcessSpec")
        return eval_ito_process(fspec, spec, path, N, da=da)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def convergence_breakdowns(fspec: FunctionSpec, variant: str, exponents: Sequence[int],
                           n_paths: int, seed: int = 0, horizon: float = 1.0,
                           spec: ItoProcessSpec | None = None, N: float = 10.0,
                           form: str = "jump", da: Callable[[float], float] | None = None,
                           start: int = 0, chunk: int = 64) -> dict[int, TermBreakdown]:
    """Per-path breakdowns at ``n_steps = 2^k`` on coupled Brownian increments.

    Increments are drawn once at the finest level and summed for the
    coarser ones, so all levels see the same Brownian paths.  Paths are
    ``start .. start + n_paths - 1``.
    """
    exps = sorted(exponents)
    fine = TimeGrid(horizon, 2 ** exps[-1])
    da_of = da or default_level_spacing
    acc: dict[int, list[TermBreakdown]] = {k: [] for k in exps}
    x0 = 0.0 if spec is None else spec.x0
    for lo in range(start, start + n_paths, chunk):
        idx = np.arange(lo, min(start + n_paths, lo + chunk))
        dw = brownian_increments(fine, seed, idx)
        for k in exps:
            grid = TimeGrid(horizon, 2**k)
            dwk = aggregate_increments(dw, 2 ** (exps[-1] - k))
            if variant == "ito_process":
                path = simulate_ito(spec, grid, dw=dwk, paths=idx)
                path.seed = seed
            else:
                path = bm_from_increments(grid, dwk, x0, seed, tuple(int(i) for i in idx))
            acc[k].append(evaluate_variant(fspec, variant, path, da_of(grid.dt), spec, N, form))
    return {k: fold(v) for k, v in acc.items()}


def summarize_convergence(breakdowns: dict[int, TermBreakdown], variant: str, function: str,
                          horizon: float = 1.0,
                          da: Callable[[float], float] | None = None) -> ConvergenceStudy:
    da_of = da or default_level_spacing
    rows = []
    for k in sorted(breakdowns):
        tb = breakdowns[k]
        rows.append(ConvergenceLevel(2**k, da_of(horizon / 2**k),
                                     float(np.mean(np.abs(tb.residual))),
                                     float(np.mean(tb.normalized)), tb.n_paths))
    slope = fit_slope([horizon / r.n_steps for r in rows], [r.mean_abs_residual for r in rows])
    return ConvergenceStudy(rows, slope, variant, function)


def residual_convergence(fspec: FunctionSpec, variant: str, exponents: Sequence[int],
                         n_paths: int, seed: int = 0, horizon: float = 1.0,
                         spec: ItoProcessSpec | None = None, N: float = 10.0,
                         form: str = "jump", da: Callable[[float], float] | None = None,
                         chunk: int = 64) -> ConvergenceStudy:
    """Mean ``|residual|`` and mean normalized residual per dyadic level, with a log-log slope in ``dt``."""
    parts = convergence_breakdowns(fspec, variant, exponents, n_paths, seed, horizon, spec, N,
                                   form, da, 0, chunk)
    return summarize_convergence(parts, variant, fspec.name, horizon, da)
