"""Local-time fields of simulated semimartingales.

Convention: ``L_t(a) = lim 1/(2 eps) int_0^t 1_[a, a+eps)(X_s) d<M,M>_s``,
i.e. half the usual occupation density, so the occupation-times formula
reads ``int g(s, X_s) d<M,M>_s = 2 int int g(s, a) dL_s(a) da``.

The grid estimator ties ``eps`` to the level spacing.  Each time step adds
``dqv_k / (2 da)`` to exactly one level cell, so a field is stored as the
per-step cell index and weight; dense ``(time, level)`` matrices are
produced on demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .pathsim import Curve, SemimartingalePath, TimeGrid, shift_by_curve

CONVENTION = "half-occupation-density"


@dataclass(frozen=True)
class LevelGrid:
    """Uniform levels ``a_j = origin + j * da``, ``j = 0..count-1``; cell ``j`` is ``[a_j, a_j + da)``."""

    origin: float
    da: float
    count: int

    def __post_init__(self):
        if not self.da > 0:
            raise ValueError(f"level spacing must be positive, got {self.da}")
        if self.count < 1:
            raise ValueError("level grid needs at least one cell")

    @classmethod
    def covering(cls, x, da: float, align: str = "cells", margin: int = 1) -> "LevelGrid":
        """Smallest grid covering ``[min x - margin*da, max x + margin*da]``.

        ``align='nodes'`` puts every multiple of ``da`` on a level;
        ``align='cells'`` centres each multiple of ``da`` inside a cell, so a
        jump sitting on such a multiple never falls on a cell edge.
        """
        x = np.asarray(x, dtype=float)
        if align not in ("nodes", "cells"):
            raise ValueError(f"unknown alignment {align!r}")
        shift = 0.0 if align == "nodes" else -0.5
        lo = float(np.min(x)) - margin * da
        hi = float(np.max(x)) + margin * da
        k0 = math.floor(lo / da - shift)
        k1 = math.floor(hi / da - shift)
        return cls((k0 + shift) * da, da, k1 - k0 + 1)

    @property
    def levels(self) -> np.ndarray:
        return self.origin + np.arange(self.count) * self.da

    @property
    def nodes(self) -> np.ndarray:
        """Cell edges ``a_0 .. a_count`` (one more than the levels)."""
        return self.origin + np.arange(self.count + 1) * self.da

    @property
    def upper(self) -> float:
        return self.origin + self.count * self.da

    def cell_of(self, a):
        """Index of the cell containing ``a`` (the cadlag reading of a field at ``a``)."""
        return np.floor((np.asarray(a, dtype=float) - self.origin) / self.da).astype(np.int64)

    def covers(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.min(x) >= self.origin and np.max(x) < self.upper)


@dataclass
class LocalTimeField:
    """``L(t_k, a_j)`` stored as per-step increments.

    ``bins[..., k]`` is the cell visited at step ``k`` and ``weights[..., k]``
    the amount added to it over ``[t_k, t_{k+1})``.
    """

    grid: TimeGrid
    levels: LevelGrid
    bins: np.ndarray
    weights: np.ndarray
    convention: str = CONVENTION
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.levels.da

    @property
    def batched(self) -> bool:
        return self.bins.ndim == 2

    def at_time(self, k: int | np.ndarray | None = None) -> np.ndarray:
        """Profile ``L(t_k, .)`` over all levels; ``k`` may be per-path."""
        J = self.levels.count
        n = self.bins.shape[-1]
        w = self.weights
        if k is not None:
            k = np.asarray(k)
            mask = np.arange(n) < (k[..., None] if k.ndim else k)
            w = np.where(mask, w, 0.0)
        if not self.batched:
            return np.bincount(self.bins, weights=w, minlength=J)[:J]
        P = self.bins.shape[0]
        flat = (self.bins + J * np.arange(P)[:, None]).ravel()
        return np.bincount(flat, weights=w.ravel(), minlength=P * J).reshape(P, J)

    final = at_time

    def at_level(self, j: int | np.ndarray) -> np.ndarray:
        """Time series ``L(t_k, a_j)``, ``k = 0..n``; ``j`` may be per-path."""
        j = np.asarray(j)
        hits = self.bins == (j[..., None] if j.ndim else j)
        inc = np.where(hits, self.weights, 0.0)
        out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
        np.cumsum(inc, axis=-1, out=out[..., 1:])
        return out

    def at(self, a) -> np.ndarray:
        """Cadlag reading at level ``a``: the series of the cell containing ``a``."""
        return self.at_level(self.levels.cell_of(a))

    def dense(self, stride: int = 1) -> np.ndarray:
        """Full matrix ``(..., rows, levels)`` at time indices ``0, stride, ..., n``."""
        n = self.bins.shape[-1]
        ks = np.arange(0, n + 1, stride)
        if ks[-1] != n:
            ks = np.append(ks, n)
        return np.stack([self.at_time(k) for k in ks], axis=-2), ks

    def to_csv(self, path, row: int | None = None, stride: int = 1) -> None:
        """CSV matrix (rows = times, columns = levels) and a ``.json`` header."""
        fld = self if row is None else LocalTimeField(self.grid, self.levels, self.bins[row],
                                                      self.weights[row], self.convention,
                                                      self.seed, self.meta)
        if fld.batched:
            raise ValueError("select a row to export a batched field")
        mat, ks = fld.dense(stride)
        t = ks * self.grid.dt
        header = "t," + ",".join(f"{a:.17g}" for a in self.levels.levels)
        np.savetxt(path, np.column_stack([t, mat]), delimiter=",", header=header, comments="",
                   fmt="%.17g")
        side = {"levels": {"origin": self.levels.origin, "da": self.levels.da,
                           "count": self.levels.count},
                "horizon": self.grid.horizon, "n_steps": self.grid.n_steps, "stride": stride,
                "convention": self.convention, "eps": self.eps, "seed": self.seed,
                "row": row, **self.meta}
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, default=str))


def local_time_occupation(path: SemimartingalePath, levels: LevelGrid,
                          stop: np.ndarray | int | None = None) -> LocalTimeField:
    """Occupation estimator ``L(t_k, a_j) = 1/(2 da) sum_{i<k} 1_[a_j, a_j+da)(X_i) dqv_i``.

    ``stop`` truncates accumulation at that step index (per path allowed).
    """
    xl = path.x[..., :-1]
    if not levels.covers(xl):
        raise ValueError(f"level grid [{levels.origin}, {levels.upper}) does not cover the path "
                         f"range [{np.min(xl)}, {np.max(xl)}]")
    bins = levels.cell_of(xl)
    w = np.diff(path.qv, axis=-1) / (2.0 * levels.da)
    if stop is not None:
        stop = np.asarray(stop)
        w = np.where(np.arange(w.shape[-1]) < (stop[..., None] if stop.ndim else stop), w, 0.0)
    return LocalTimeField(path.grid, levels, bins, w, seed=path.seed,
                          meta={"paths": list(path.paths)})


def _sgn_left(y):
    return np.where(y > 0, 1.0, -1.0)


def _band_abs(y, w):
    """Average of ``|y - u|`` over ``u`` in ``[0, w)`` and its derivative in ``y``."""
    inside = (y * y + (w - y) ** 2) / (2 * w)
    val = np.where(y <= 0, w / 2 - y, np.where(y >= w, y - w / 2, inside))
    der = np.where(y <= 0, -1.0, np.where(y >= w, 1.0, (2 * y - w) / w))
    return val, der


def local_time_tanaka(path: SemimartingalePath, a: float, width: float | None = None) -> np.ndarray:
    """Tanaka estimator ``1/2 (|X_t - a| - |X_0 - a| - int sgn^-(X - a) dX)`` along the grid.

    With ``width`` the level is averaged over ``[a, a + width)`` (Tanaka's
    identity for the averaged absolute value), which is the quantity the
    occupation estimator with that cell width targets.
    """
    y = path.x - a
    if width is None:
        val, der = np.abs(y), _sgn_left(y[..., :-1])
    else:
        val, der = _band_abs(y, width)
        der = der[..., :-1]
    integ = np.zeros_like(y)
    np.cumsum(der * np.diff(path.x, axis=-1), axis=-1, out=integ[..., 1:])
    return 0.5 * (val - val[..., :1] - integ)


def dt_stieltjes(phi: np.ndarray, L: np.ndarray) -> np.ndarray | float:
    """``sum_k phi(t_k) (L(t_{k+1}) - L(t_k))`` along the last axis."""
    dL = np.diff(np.asarray(L, dtype=float), axis=-1)
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] == dL.shape[-1] + 1:
        phi = phi[..., :-1]
    if phi.shape[-1] != dL.shape[-1]:
        raise ValueError(f"integrand has {phi.shape[-1]} values for {dL.shape[-1]} increments")
    out = (phi * dL).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def integration_by_parts_rhs(phi: np.ndarray, dphi: np.ndarray, L: np.ndarray,
                             dt: float) -> np.ndarray | float:
    """``phi(T) L_T - int_0^T phi'(s) L_s ds`` with trapezoidal quadrature."""
    L = np.asarray(L, dtype=float)
    g = np.asarray(dphi, dtype=float) * L
    integ = dt * (g[..., 1:] + g[..., :-1]).sum(axis=-1) / 2
    out = np.asarray(phi)[..., -1] * L[..., -1] - integ
    return float(out) if np.ndim(out) == 0 else out


_GL3 = np.polynomial.legendre.leggauss(3)


def cell_average(g: Callable, t, lo, da: float) -> np.ndarray:
    """Average of ``g(t, .)`` over ``[lo, lo + da)`` by 3-point Gauss-Legendre."""
    z, w = _GL3
    acc = 0.0
    for zi, wi in zip(z, w):
        acc = acc + wi * np.asarray(g(t, lo + 0.5 * da * (zi + 1.0)), dtype=float)
    return 0.5 * acc


@dataclass
class OccupationCheck:
    lhs: np.ndarray | float
    rhs: np.ndarray | float
    rel_error: np.ndarray | float


def occupation_check(g: Callable, path: SemimartingalePath, levels: LevelGrid,
                     dense: bool = False) -> OccupationCheck:
    """Both sides of the occupation-times formula on the grid.

    ``lhs = sum_k g(t_k, X_k) dqv_k``.  ``rhs = 2 sum_j int_cell_j g(., a) da
    d_t L(., a_j)``: the field is piecewise constant on each cell, so ``g``
    is integrated across the cell.  ``dense=True`` assembles the rhs level
    by level with ``dt_stieltjes`` (slow; for cross-checks).
    """
    t = path.t[:-1]
    xl = path.x[..., :-1]
    dq = np.diff(path.qv, axis=-1)
    lhs = (np.asarray(g(t, xl), dtype=float) * dq).sum(axis=-1)
    fld = local_time_occupation(path, levels)
    da = levels.da
    if dense:
        lv = levels.levels
        rhs = np.zeros(np.shape(lhs))
        for j, a in enumerate(lv):
            phi = np.broadcast_to(cell_average(g, t, a, da), t.shape)
            rhs = rhs + 2.0 * da * dt_stieltjes(phi, fld.at_level(j))
    else:
        lo = levels.origin + fld.bins * da
        gbar = cell_average(g, np.broadcast_to(t, xl.shape), lo, da)
        rhs = 2.0 * da * (gbar * fld.weights).sum(axis=-1)
    lhs_a, rhs_a = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(lhs_a == rhs_a, 0.0, np.abs(lhs_a - rhs_a) / np.abs(lhs_a))
    if np.ndim(rel) == 0:
        return OccupationCheck(float(lhs_a), float(rhs_a), float(rel))
    return OccupationCheck(lhs_a, rhs_a, rel)


def curve_local_time(path: SemimartingalePath, curve: Curve, levels: LevelGrid,
                     stop=None) -> LocalTimeField:
    """Local time of ``X - l``."""
    return local_time_occupation(shift_by_curve(path, curve), levels, stop)
