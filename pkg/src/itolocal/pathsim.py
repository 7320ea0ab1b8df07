"""Simulation of continuous semimartingales on uniform time grids.

Paths are numpy arrays whose last axis is time, so every function here
accepts a single path (``shape (n+1,)``) or a batch (``shape (P, n+1)``).

Randomness: each path owns a Philox4x64-10 stream keyed by
``SeedSequence(seed, spawn_key=(path_index,))``.  A path therefore depends
only on ``(seed, path_index, grid)``, never on batching or worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

RNG_ALGORITHM = "numpy.Philox4x64-10/SeedSequence(seed,spawn_key=(path,))"


class PathError(RuntimeError):
    """Non-finite values during simulation."""


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.horizon, self.n_steps // factor)


@dataclass
class SemimartingalePath:
    """``X = X0 + M + V`` sampled on ``grid`` with realized ``<M,M>`` in ``qv``."""

    grid: TimeGrid
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    qv: np.ndarray
    x0: np.ndarray | float
    seed: int | None = None
    paths: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.times

    @property
    def batched(self) -> bool:
        return self.x.ndim == 2

    @property
    def n_paths(self) -> int:
        return self.x.shape[0] if self.batched else 1

    def row(self, i: int) -> "SemimartingalePath":
        if not self.batched:
            raise IndexError("single path has no rows")
        x0 = np.asarray(self.x0)
        return replace(self, x=self.x[i], m=self.m[i], v=self.v[i], qv=self.qv[i],
                       x0=float(x0[i]) if x0.ndim else float(x0),
                       paths=(self.paths[i],) if self.paths else ())

    def increments(self, part: str = "x") -> np.ndarray:
        return np.diff(getattr(self, part), axis=-1)

    def check_decomposition(self) -> float:
        """Largest ``|X - (X0 + M + V)|``; zero for paths built here."""
        x0 = np.asarray(self.x0, dtype=float)
        if x0.ndim:
            x0 = x0[:, None]
        return float(np.max(np.abs(self.x - (x0 + self.m + self.v))))

    def to_csv(self, path, row: int | None = None) -> None:
        """Write columns ``t, X, M, V, qv`` plus a ``.json`` sidecar with seed and spec."""
        p = self if row is None else self.row(row)
        if p.batched:
            raise ValueError("select a row to export a batched path")
        data = np.column_stack([p.t, p.x, p.m, p.v, p.qv])
        np.savetxt(path, data, delimiter=",", header="t,X,M,V,qv", comments="", fmt="%.17g")
        side = {"seed": p.seed, "paths": list(p.paths), "rng": RNG_ALGORITHM,
                "horizon": p.grid.horizon, "n_steps": p.grid.n_steps, "x0": float(p.x0),
                **p.meta}
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, default=str))


def path_rng(seed: int, path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path),))
    return np.random.Generator(np.random.Philox(ss))


def brownian_increments(grid: TimeGrid, seed: int, paths) -> np.ndarray:
    """Standard Brownian increments, one row per requested path index."""
    scalar = np.ndim(paths) == 0
    idx = np.atleast_1d(paths)
    sq = math.sqrt(grid.dt)
    out = np.empty((idx.size, grid.n_steps))
    for r, i in enumerate(idx):
        out[r] = path_rng(seed, int(i)).standard_normal(grid.n_steps)
    out *= sq
    return out[0] if scalar else out


def aggregate_increments(dw: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (coarse-grid coupling)."""
    n = dw.shape[-1]
    if factor < 1 or n % factor:
        raise ValueError(f"cannot aggregate {n} increments by {factor}")
    return dw.reshape(*dw.shape[:-1], n // factor, factor).sum(axis=-1)


def _cumulative(inc: np.ndarray) -> np.ndarray:
    out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def bm_from_increments(grid: TimeGrid, dw: np.ndarray, x0=0.0, seed=None, paths=()) -> SemimartingalePath:
    if dw.shape[-1] != grid.n_steps:
        raise ValueError(f"{dw.shape[-1]} increments for a {grid.n_steps}-step grid")
    m = _cumulative(dw)
    v = np.zeros_like(m)
    qv = _cumulative(dw * dw)
    if dw.ndim == 2:
        x0 = np.full(dw.shape[0], float(x0))
        x = x0[:, None] + m + v
    else:
        x0 = float(x0)
        x = x0 + m + v
    return SemimartingalePath(grid, x, m, v, qv, x0, seed,
                              tuple(int(p) for p in np.atleast_1d(paths)), {"process": "bm"})


def simulate_bm(grid: TimeGrid, seed: int, path: int = 0, x0: float = 0.0) -> SemimartingalePath:
    """Brownian motion with ``V = 0`` and realized ``qv = sum (dM)^2``."""
    return bm_from_increments(grid, brownian_increments(grid, seed, path), x0, seed, (path,))


def simulate_bm_batch(grid: TimeGrid, seed: int, n_paths: int, start: int = 0,
                      x0: float = 0.0) -> SemimartingalePath:
    idx = np.arange(start, start + n_paths)
    return bm_from_increments(grid, brownian_increments(grid, seed, idx), x0, seed, tuple(idx))


@dataclass(frozen=True)
class ItoProcessSpec:
    """``dX = sigma(t, X) dW + b(t, X) dt`` with ellipticity bounds.

    ``sigma`` and ``b`` may be numbers or vectorized callables of ``(t, x)``.
    """

    sigma: Callable | float
    b: Callable | float
    x0: float = 0.0
    delta: float = 1.0
    K: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"ellipticity bound delta must be positive, got {self.delta}")
        if self.K < self.delta:
            raise ValueError(f"bound K={self.K} below delta={self.delta}")

    def sigma_at(self, t, x):
        return _coef(self.sigma, t, x)

    def b_at(self, t, x):
        return _coef(self.b, t, x)

    def check_bounds(self, horizon: float, x_range=(-10.0, 10.0), n: int = 64) -> list[str]:
        """Spot-check ``sigma >= delta`` and ``|sigma| + |b| <= K`` on a grid; returns violations."""
        t = np.linspace(0.0, horizon, n)[:, None]
        x = np.linspace(*x_range, n)[None, :]
        sig = np.broadcast_to(self.sigma_at(t, x), (n, n))
        drift = np.broadcast_to(self.b_at(t, x), (n, n))
        problems = []
        if sig.min() < self.delta:
            problems.append(f"sigma min {sig.min():.6g} < delta {self.delta}")
        total = np.abs(sig) + np.abs(drift)
        if total.max() > self.K:
            problems.append(f"|sigma| + |b| max {total.max():.6g} > K {self.K}")
        return problems


def _coef(c, t, x):
    if callable(c):
        return np.asarray(c(t, x), dtype=float)
    return np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, float(c))


def simulate_ito(spec: ItoProcessSpec, grid: TimeGrid, seed: int | None = None, path: int = 0,
                 dw: np.ndarray | None = None, paths=None) -> SemimartingalePath:
    """Euler-Maruyama path(s) of ``spec``.

    Increments come from the per-path streams unless ``dw`` is given (one
    row per path).  ``M`` accumulates ``sigma dW``, ``V`` accumulates
    ``b dt`` and ``qv`` accumulates ``sigma^2 dt``.
    """
    if dw is None:
        if seed is None:
            raise ValueError("need a seed or explicit increments")
        idx = path if paths is None else np.asarray(paths)
        dw = brownian_increments(grid, seed, idx)
        paths = np.atleast_1d(idx)
    dw = np.asarray(dw, dtype=float)
    if dw.shape[-1] != grid.n_steps:
        raise ValueError(f"{dw.shape[-1]} increments for a {grid.n_steps}-step grid")
    single = dw.ndim == 1
    dw2 = dw[None, :] if single else dw
    P, n = dw2.shape
    t = grid.times
    dt = grid.dt
    m = np.zeros((P, n + 1))
    v = np.zeros((P, n + 1))
    q = np.zeros((P, n + 1))
    x = np.empty((P, n + 1))
    x0 = float(spec.x0)
    x[:, 0] = x0
    const = not callable(spec.sigma) and not callable(spec.b)
    if const:
        sig, drift = float(spec.sigma), float(spec.b)
        m[:, 1:] = np.cumsum(sig * dw2, axis=1)
        v[:, 1:] = np.cumsum(np.full((P, n), drift * dt), axis=1)
        q[:, 1:] = np.cumsum(np.full((P, n), sig * sig * dt), axis=1)
        x[:] = x0 + m + v
    else:
        for k in range(n):
            xk = x[:, k]
            sig = np.broadcast_to(spec.sigma_at(t[k], xk), (P,))
            drift = np.broadcast_to(spec.b_at(t[k], xk), (P,))
            m[:, k + 1] = m[:, k] + sig * dw2[:, k]
            v[:, k + 1] = v[:, k] + drift * dt
            q[:, k + 1] = q[:, k] + sig * sig * dt
            x[:, k + 1] = x0 + m[:, k + 1] + v[:, k + 1]
            if not np.all(np.isfinite(x[:, k + 1])):
                bad = np.flatnonzero(~np.isfinite(x[:, k + 1]))
                raise PathError(f"non-finite value at step {k + 1} (t={t[k + 1]:.6g}) "
                                f"in path rows {bad.tolist()}; sigma={sig[bad]}, b={drift[bad]}")
    if not np.all(np.isfinite(x)):
        raise PathError("non-finite values in simulated path")
    pidx = tuple(int(p) for p in np.atleast_1d(paths if paths is not None else path))
    meta = {"process": "ito", "spec": spec.name or repr(spec)}
    if single:
        return SemimartingalePath(grid, x[0], m[0], v[0], q[0], x0, seed, pidx, meta)
    return SemimartingalePath(grid, x, m, v, q, np.full(P, x0), seed, pidx, meta)


def ito_integral(h: np.ndarray, path: SemimartingalePath, part: str = "x") -> np.ndarray | float:
    """Left-endpoint sum ``sum_k h(t_k) (Y(t_{k+1}) - Y(t_k))`` for ``Y`` in ``{x, m, v}``.

    ``h`` holds values at the ``n`` left endpoints (or all ``n+1`` grid
    points; the last one is ignored).
    """
    if part not in ("x", "m", "v"):
        raise ValueError(f"unknown integrator part {part!r}")
    dy = np.diff(getattr(path, part), axis=-1)
    h = np.asarray(h, dtype=float)
    if h.shape[-1] == dy.shape[-1] + 1:
        h = h[..., :-1]
    if h.shape[-1] != dy.shape[-1]:
        raise ValueError(f"integrand has {h.shape[-1]} values for {dy.shape[-1]} increments")
    out = (h * dy).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


class Curve:
    """Continuous curve ``l(t)`` of bounded variation.

    ``variation`` optionally gives the exact total variation on ``[0, T]``;
    otherwise it is estimated on a fine grid.
    """

    def __init__(self, func: Callable, variation: Callable | None = None, name: str = ""):
        self._func = func
        self._variation = variation
        self.name = name

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self._func(t), dtype=float), t.shape).copy()

    def total_variation(self, horizon: float, n: int = 2**16) -> float:
        if self._variation is not None:
            return float(self._variation(horizon))
        t = np.linspace(0.0, horizon, n + 1)
        return float(np.abs(np.diff(self(t))).sum())


def shift_by_curve(path: SemimartingalePath, curve: Curve) -> SemimartingalePath:
    """``X* = X - l``; ``l - l(0)`` goes into the BV part, ``M`` and ``qv`` are kept."""
    lt = curve(path.t)
    l0 = lt[0]
    v = path.v - (lt - l0)
    x0 = np.asarray(path.x0, dtype=float) - l0
    x = (x0[:, None] if x0.ndim else x0) + path.m + v
    meta = dict(path.meta, curve=curve.name or repr(curve))
    return replace(path, x=x, v=v, x0=x0 if x0.ndim else float(x0), meta=meta)


def first_exit(path: SemimartingalePath, N: float) -> np.ndarray | int:
    """Smallest ``k`` with ``|X(t_k)| >= N``, or ``n_steps`` if the level is never reached."""
    if not N > 0:
        raise ValueError(f"exit level must be positive, got {N}")
    hit = np.abs(path.x) >= N
    idx = np.where(hit.any(axis=-1), hit.argmax(axis=-1), path.grid.n_steps)
    return int(idx) if np.ndim(idx) == 0 else idx
