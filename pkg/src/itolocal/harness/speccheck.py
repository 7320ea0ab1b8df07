"""Consistency diagnostics for a FunctionSpec."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bv2d import Rect, RefinementPolicy, variation
from ..itoformula import FunctionSpec


@dataclass
class Diagnostics:
    checks: dict[str, bool] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    variation: float | None = None
    variation_converged: bool | None = None

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def record(self, name: str, bad: list[str]) -> None:
        self.checks[name] = not bad
        self.failures.extend(f"{name}: {b}" for b in bad)


def _near(values, lines, width):
    values = np.asarray(values, dtype=float)
    out = np.zeros(values.shape, dtype=bool)
    for c in lines:
        out |= np.abs(values - c) < width
    return out


def spec_check(fspec: FunctionSpec, n_t: int = 9, n_x: int = 13, h: float = 1e-6,
               rtol: float = 1e-4, max_failures: int = 20,
               policy: RefinementPolicy | None = None) -> Diagnostics:
    """Left difference quotients, the ``f_h + f_v`` split and the BV part's variation.

    Points within ``4h`` of declared jump lines (or of the curve) are
    skipped for the difference checks, where only one-sided limits exist.
    """
    s0, s1, x0, x1 = fspec.box
    t = np.linspace(s0, s1, n_t)[:, None]
    x = np.linspace(x0, x1, n_x)[None, :]
    t, x = np.broadcast_arrays(t, x)
    hv = fspec.grad_left_v
    jumps_s = hv.jumps_s if hv is not None else ()
    jumps_x = hv.jumps_x if hv is not None else ()
    skip = _near(x, jumps_x, 4 * h) | _near(t, jumps_s, 4 * h)
    if fspec.curve is not None:
        skip |= np.abs(x - fspec.curve(t)) < 4 * h
    out = Diagnostics()

    def compare(name, got, want, mask):
        got = np.broadcast_to(np.asarray(got, float), t.shape)
        want = np.broadcast_to(np.asarray(want, float), t.shape)
        bad_mask = mask & ~(np.abs(got - want) <= rtol * (1.0 + np.abs(want)))
        bad = [f"(t={t[i]:.6g}, x={x[i]:.6g}) got {got[i]:.8g} expected {want[i]:.8g}"
               for i in zip(*np.nonzero(bad_mask))]
        out.record(name, bad[:max_failures])

    f = fspec.f
    fd_x = (f(t, x) - f(t, x - h)) / h
    compare("grad_left", fspec.grad_left(t, x), fd_x, ~skip)
    tmask = ~skip & (t - h >= s0)
    fd_t = (f(t, x) - f(t - h, x)) / h
    compare("dt_left", fspec.dt_left(t, x), fd_t, tmask)
    all_pts = np.ones(t.shape, dtype=bool)
    compare("split_f", fspec.f_h(t, x) + fspec.f_v(t, x), f(t, x), all_pts)
    if hv is not None:
        compare("split_grad", np.asarray(fspec.grad_h(t, x)) + hv.eval_left(t, x),
                fspec.grad_left(t, x), ~skip)
        surf = hv if fspec.curve is None else hv.shifted(fspec.curve)
        res = variation(surf, Rect(s0, s1, x0, x1), policy or RefinementPolicy(tol=1e-6,
                                                                               max_cells=2**20))
        out.variation, out.variation_converged = res.value, res.converged
        bad = [] if (np.isfinite(res.value) and res.converged) else [
            f"variation {res.value:.6g} not converged (trace {res.refinement_trace[-3:]})"]
        out.record("variation", bad)
    else:
        compare("split_grad", fspec.grad_h(t, x), fspec.grad_left(t, x), ~skip)
    return out
