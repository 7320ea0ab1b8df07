"""Bump-kernel mollification of two-parameter functions.

``rho(x) = c exp(1 / ((x - 1)^2 - 1))`` on ``(0, 2)``, normalised to unit
mass.  ``f_n(s, x) = int int rho(tau) rho(z) f(s -/+ tau/n, x -/+ z/n)``
with the minus signs for left (default) and plus signs for right
mollification in each variable; ``f`` is extended evenly to negative
times.  Derivatives of ``f_n`` are taken by differentiating the kernel.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .bv2d import Surface2D


def _bump_shape(x):
    x = np.asarray(x, dtype=float)
    u = x - 1.0
    inside = (x > 0.0) & (x < 2.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = np.exp(1.0 / np.where(inside, u * u - 1.0, -1.0))
    return np.where(inside, val, 0.0)


@functools.lru_cache(maxsize=1)
def bump_constant() -> float:
    """``c`` with ``int_0^2 rho = 1`` (adaptive quadrature, cached)."""
    mass, _ = integrate.quad(lambda x: float(_bump_shape(x)), 0.0, 2.0,
                             epsabs=1e-15, epsrel=1e-13, limit=200)
    return 1.0 / mass


def bump(x):
    """The normalised kernel ``rho``; zero outside ``(0, 2)``."""
    out = bump_constant() * _bump_shape(x)
    return float(out) if np.ndim(out) == 0 else out


def bump_prime(x):
    """``rho'(x) = rho(x) * (-2 (x-1) / ((x-1)^2 - 1)^2)`` (zero outside ``(0, 2)``)."""
    x = np.asarray(x, dtype=float)
    u = x - 1.0
    inside = (x > 0.0) & (x < 2.0)
    den = np.where(inside, u * u - 1.0, -1.0)
    out = np.where(inside, bump(x) * (-2.0 * u / (den * den)), 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class MollifierSpec:
    n: int = 1
    direction_t: str = "-"
    direction_x: str = "-"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"smoothing index must be >= 1, got {self.n}")
        for d in (self.direction_t, self.direction_x):
            if d not in ("-", "+"):
                raise ValueError(f"direction must be '-' or '+', got {d!r}")

    @property
    def c(self) -> float:
        return bump_constant()

    def sign_t(self) -> float:
        return -1.0 if self.direction_t == "-" else 1.0

    def sign_x(self) -> float:
        return -1.0 if self.direction_x == "-" else 1.0


@functools.lru_cache(maxsize=8)
def _nodes(order: int):
    z, w = np.polynomial.legendre.leggauss(order)
    z = z + 1.0  # map (-1, 1) -> (0, 2); Jacobian 1
    wr = bump(z) * w
    wp = bump_prime(z) * w
    # renormalise so constants and slopes are reproduced exactly (int rho' z = -1)
    return z, w, wr / wr.sum(), wp / -(wp * z).sum()


def _reflect(s):
    return np.abs(s)


class SmoothedSurface:
    """``f_n`` for a given surface (or plain callable) and mollifier spec.

    Evaluation uses tensor Gauss-Legendre quadrature of fixed ``order`` per
    axis on ``(0, 2)^2``.
    """

    def __init__(self, f: Surface2D | Callable, spec: MollifierSpec, order: int = 64):
        self.f = f
        self.spec = spec
        self.order = order

    def _kernel_sum(self, s, x, wt, wx):
        z, _, _, _ = _nodes(self.order)
        n = self.spec.n
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(s, x).shape
        st = s[..., None, None] + self.spec.sign_t() * z[:, None] / n
        xs = x[..., None, None] + self.spec.sign_x() * z[None, :] / n
        vals = np.asarray(self.f(_reflect(st), xs), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite function values inside the mollifier window")
        out = np.einsum("...ij,i,j->...", np.broadcast_to(vals, shape + (z.size, z.size)), wt, wx)
        return float(out) if out.ndim == 0 else out

    def __call__(self, s, x):
        _, _, wr, _ = _nodes(self.order)
        return self._kernel_sum(s, x, wr, wr)

    def dt(self, s, x):
        """``d f_n / ds``: ``-sign_t * n * int int rho'(tau) rho(z) f(...)``."""
        _, _, wr, wp = _nodes(self.order)
        return -self.spec.sign_t() * self.spec.n * self._kernel_sum(s, x, wp, wr)

    def dx(self, s, x):
        """``d f_n / dx``: ``-sign_x * n * int int rho(tau) rho'(z) f(...)``."""
        _, _, wr, wp = _nodes(self.order)
        return -self.spec.sign_x() * self.spec.n * self._kernel_sum(s, x, wr, wp)


def mollify(f: Surface2D | Callable, spec: MollifierSpec, order: int = 64) -> SmoothedSurface:
    return SmoothedSurface(f, spec, order)


@dataclass
class ConvergenceRow:
    t: float
    x: float
    n: int
    err_f: float
    err_dt: float
    err_dx: float
    boundary: bool


def convergence_report(f: Callable, dt_ref: Callable | None, dx_ref: Callable | None,
                       ns: Sequence[int], points: Sequence[tuple[float, float]],
                       direction: tuple[str, str] = ("-", "-"), order: int = 64) -> list[ConvergenceRow]:
    """Errors of ``f_n``, ``d_t f_n`` and ``grad f_n`` against reference one-sided values.

    Rows whose time lies within ``2/n`` of zero are marked ``boundary``
    (the even time reflection enters the window there).  Time-derivative
    errors at ``t = 0`` are NaN.
    """
    rows = []
    for t, x in points:
        for n in ns:
            sm = mollify(f, MollifierSpec(n, *direction), order)
            ef = abs(sm(t, x) - float(f(t, x)))
            edt = math.nan
            if dt_ref is not None and t > 0:
                edt = abs(sm.dt(t, x) - float(dt_ref(t, x)))
            edx = math.nan if dx_ref is None else abs(sm.dx(t, x) - float(dx_ref(t, x)))
            rows.append(ConvergenceRow(t, x, n, ef, edt, edx, t < 2.0 / n))
    return rows


def is_decreasing(rows: Sequence[ConvergenceRow], column: str = "err_dx", slack: float = 1e-12) -> bool:
    """True when every point's error column is nonincreasing in ``n``."""
    by_pt: dict[tuple[float, float], list[tuple[int, float]]] = {}
    for r in rows:
        by_pt.setdefault((r.t, r.x), []).append((r.n, getattr(r, column)))
    for seq in by_pt.values():
        vals = [v for _, v in sorted(seq) if not math.isnan(v)]
        if any(b > a + slack for a, b in zip(vals, vals[1:])):
            return False
    return True


def write_report_csv(path, rows: Sequence[ConvergenceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "t", "x", "n", "err_f", "err_dt", "err_dx", "boundary"])
        for i, r in enumerate(rows):
            pt = f"({r.t:g},{r.x:g})"
            w.writerow([pt, repr(r.t), repr(r.x), r.n, repr(r.err_f), repr(r.err_dt),
                        repr(r.err_dx), int(r.boundary)])
