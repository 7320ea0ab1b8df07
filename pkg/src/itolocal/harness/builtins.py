"""Built-in function specs.

Every callable is a module-level function or a ``functools.partial`` of
one, so specs pickle cleanly into worker processes.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from ..bv2d import Surface2D
from ..itoformula import FunctionSpec
from ..pathsim import Curve

NAMES = ("tanaka", "square", "paper-example-1", "paper-example-2", "curve-kink", "heat-smooth")

PI = math.pi


def _zero(t, x):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)


def _const(t, x, value=0.0):
    return np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, float(value))


# ---- |x| -------------------------------------------------------------------

def _abs(t, x):
    return np.abs(x) + 0.0 * t


def _sgn_left(t, x):
    return np.where(np.asarray(x) > 0, 1.0, -1.0) + 0.0 * np.asarray(t)


def tanaka() -> FunctionSpec:
    grad_v = Surface2D(_sgn_left, left_continuous=True, jumps_x=(0.0,), name="sgn-")
    return FunctionSpec("tanaka", _abs, _zero, _sgn_left, f_v=_abs, grad_left_v=grad_v,
                        lap_left=_zero, box=(0.0, 1.0, -2.0, 2.0),
                        variants=("semimartingale", "ito_process"),
                        notes="f = |x|; d_x grad^- f is an atom of mass 2 at 0")


# ---- x^2 -------------------------------------------------------------------

def _sq(t, x):
    return np.asarray(x) ** 2 + 0.0 * t


def _twice(t, x):
    return 2.0 * np.asarray(x) + 0.0 * t


def square() -> FunctionSpec:
    two = functools.partial(_const, value=2.0)
    return FunctionSpec("square", _sq, _zero, _twice, f_h=_sq, grad_h=_twice, lap_left_h=two,
                        lap_left=two, variants=("semimartingale", "curve", "ito_process"))


# ---- (sin pi x sin pi t)^+ ---------------------------------------------------

def even_cell(t, x):
    """Left-closed-at-the-top cell parity: true on ``(i-1, i] x (j-1, j]`` with ``i + j`` even.

    This is the region whose closure-from-below carries the positive part
    of ``sin(pi x) sin(pi t)``, so indicators built on it are left
    continuous in both variables.
    """
    return (np.ceil(t) + np.ceil(x)) % 2 == 0


def _ex1_f(t, x):
    return np.maximum(np.sin(PI * x) * np.sin(PI * t), 0.0)


def _ex1_dt(t, x):
    return np.where(even_cell(t, x), PI * np.sin(PI * x) * np.cos(PI * t), 0.0)


def _ex1_grad(t, x):
    return np.where(even_cell(t, x), PI * np.cos(PI * x) * np.sin(PI * t), 0.0)


def _ex1_lap(t, x):
    return np.where(even_cell(t, x), -PI * PI * np.sin(PI * x) * np.sin(PI * t), 0.0)


def _integers(lo: float, hi: float) -> tuple[float, ...]:
    return tuple(float(k) for k in range(math.ceil(lo), math.floor(hi) + 1))


def paper_example_1(box=(0.0, 2.0, -2.0, 2.0)) -> FunctionSpec:
    s0, s1, x0, x1 = box
    grad_v = Surface2D(_ex1_grad, left_continuous=True, jumps_s=_integers(s0, s1),
                       jumps_x=_integers(x0 - 8, x1 + 8), name="example-1 grad^-")
    return FunctionSpec("paper-example-1", _ex1_f, _ex1_dt, _ex1_grad, f_v=_ex1_f,
                        grad_left_v=grad_v, lap_left=_ex1_lap, box=tuple(box),
                        notes="f_h = 0; grad^- f jumps across integer lines in t and x")


# ---- cbrt(sin pi x) (sin pi x sin pi t)^+ ------------------------------------

def _ex2_f(t, x):
    s = np.sin(PI * x)
    return np.cbrt(s) * np.maximum(s * np.sin(PI * t), 0.0)


def _ex2_dt(t, x):
    s = np.sin(PI * x)
    return np.where(even_cell(t, x), PI * np.abs(s) ** (4.0 / 3.0) * np.cos(PI * t), 0.0)


def _ex2_grad(t, x):
    s = np.sin(PI * x)
    return np.where(even_cell(t, x), (4.0 / 3.0) * PI * np.cos(PI * x) * np.cbrt(s)
                    * np.sin(PI * t), 0.0)


def _ex2_lines(lo: float, hi: float) -> tuple[float, ...]:
    # integer lines plus the zeros x = j +- 1/6 of the mixed derivative, so that
    # dyadic partitions split the surface into pieces of constant increment sign
    ints = _integers(lo - 1, hi + 1)
    pts = [v for j in ints for v in (j, j + 1.0 / 6.0, j + 5.0 / 6.0)]
    return tuple(sorted(p for p in pts if lo <= p <= hi))


def paper_example_2(box=(0.0, 2.0, -2.0, 2.0)) -> FunctionSpec:
    s0, s1, x0, x1 = box
    grad_v = Surface2D(_ex2_grad, left_continuous=True, jumps_s=_integers(s0, s1),
                       jumps_x=_ex2_lines(x0 - 8, x1 + 8), name="example-2 grad^-")
    return FunctionSpec("paper-example-2", _ex2_f, _ex2_dt, _ex2_grad, f_v=_ex2_f,
                        grad_left_v=grad_v, box=tuple(box),
                        notes="f_h = 0; grad^- f continuous, lap^- f unbounded near integers")


# ---- (x - l(t))^+ ------------------------------------------------------------

class SineCurve:
    """``l(t) = amplitude * sin(frequency * t)``."""

    def __init__(self, amplitude: float = 0.2, frequency: float = 1.0):
        self.amplitude, self.frequency = float(amplitude), float(frequency)

    def __call__(self, t):
        return self.amplitude * np.sin(self.frequency * np.asarray(t, dtype=float))

    def derivative(self, t):
        return self.amplitude * self.frequency * np.cos(self.frequency * np.asarray(t, dtype=float))

    def variation(self, horizon: float) -> float:
        """Exact total variation on ``[0, horizon]``: sum over the monotone pieces."""
        pts = [0.0]
        w = abs(self.frequency)
        k = 0
        while w > 0 and (PI / 2 + k * PI) / w < horizon:
            pts.append((PI / 2 + k * PI) / w)
            k += 1
        pts.append(horizon)
        return float(np.abs(np.diff(self(np.array(pts)))).sum())


def _kink_f(t, x, curve):
    return np.maximum(np.asarray(x) - curve(t), 0.0)


def _kink_ind(t, x, curve):
    return np.where(np.asarray(x) > curve(t), 1.0, 0.0)


def _kink_dt(t, x, curve):
    return -curve.derivative(t) * _kink_ind(t, x, curve)


def _kink_fh(t, x, curve):
    return _zero(t, x)


def _one(t):
    return np.ones(np.shape(t))


def curve_kink(amplitude: float = 0.2, frequency: float = 1.0) -> FunctionSpec:
    c = SineCurve(amplitude, frequency)
    curve = Curve(c, variation=c.variation, name=f"{amplitude:g}*sin({frequency:g}t)")
    f = functools.partial(_kink_f, curve=c)
    ind = functools.partial(_kink_ind, curve=c)
    grad_v = Surface2D(ind, left_continuous=True, name="1{x>l(t)}")
    return FunctionSpec("curve-kink", f, functools.partial(_kink_dt, curve=c), ind,
                        f_v=f, grad_left_v=grad_v, curve=curve, jump=_one, lap_left=_zero,
                        box=(0.0, 1.0, -2.0, 2.0), variants=("curve", "semimartingale"),
                        notes="f_h = 0, f_v = jump * (x - l)^+ with jump = 1")


# ---- e^{t/2} cos x -----------------------------------------------------------

def _heat_f(t, x):
    return np.exp(0.5 * t) * np.cos(x)


def _heat_dt(t, x):
    return 0.5 * np.exp(0.5 * t) * np.cos(x)


def _heat_grad(t, x):
    return -np.exp(0.5 * t) * np.sin(x)


def _heat_lap(t, x):
    return -np.exp(0.5 * t) * np.cos(x)


def heat_smooth() -> FunctionSpec:
    return FunctionSpec("heat-smooth", _heat_f, _heat_dt, _heat_grad, f_h=_heat_f,
                        grad_h=_heat_grad, lap_left_h=_heat_lap, lap_left=_heat_lap,
                        variants=("semimartingale", "curve", "ito_process"),
                        notes="space-time harmonic for Brownian motion: the dt and Laplacian terms cancel")


_FACTORIES = {
    "tanaka": tanaka,
    "square": square,
    "paper-example-1": paper_example_1,
    "paper-example-2": paper_example_2,
    "curve-kink": curve_kink,
    "heat-smooth": heat_smooth,
}


def builtin(name: str, **params) -> FunctionSpec:
    """Fully populated spec for a built-in name; ``params`` go to the factory."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown builtin {name!r}; available: {', '.join(NAMES)}") from None
    return factory(**params)
