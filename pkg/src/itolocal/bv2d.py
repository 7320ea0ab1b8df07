"""Two-parameter bounded-variation calculus.

Rectangle increments, Vitali variation over refined partitions, Jordan
decomposition into monotone surfaces, and one- and two-parameter
Lebesgue-Stieltjes integrals.

Conventions used throughout:

* Rectangles are half-open, ``[s1, s2) x [x1, x2)``, and a surface is
  read through its left-continuous version (``Surface2D.eval_left``).
* Stieltjes sums evaluate the integrand at the lower-left corner of each
  cell.
* Partitions at level ``m`` are the absolute dyadic lattice ``k * 2**-m``
  intersected with the rectangle, plus its endpoints and any declared jump
  coordinates.  Rectangles sharing lattice-aligned edges therefore share
  grid lines at equal levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

#: Default convergence tolerances (absolute) by surface kind.
TOL_ANALYTIC = 1e-8
TOL_GRID = 1e-4
#: Refinement budget in cells.
MAX_CELLS = 2**24
#: Floating-point slack for increments that should be nonnegative.
NEG_CLAMP = 1e-12


class NonConvergenceError(RuntimeError):
    """Raised by integrals that exhaust the refinement budget when asked to."""

    def __init__(self, message, last_two=(math.nan, math.nan)):
        super().__init__(message)
        self.last_two = last_two


@dataclass(frozen=True)
class Rect:
    """Closed box ``[s_lo, s_hi] x [x_lo, x_hi]`` (time x space)."""

    s_lo: float
    s_hi: float
    x_lo: float
    x_hi: float

    def __post_init__(self):
        vals = (self.s_lo, self.s_hi, self.x_lo, self.x_hi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rectangle bounds {vals}")
        if self.s_hi < self.s_lo or self.x_hi < self.x_lo:
            raise ValueError(f"invalid rectangle {vals}: upper bound below lower bound")

    @property
    def width_s(self) -> float:
        return self.s_hi - self.s_lo

    @property
    def width_x(self) -> float:
        return self.x_hi - self.x_lo

    def split_s(self, s: float) -> tuple["Rect", "Rect"]:
        return Rect(self.s_lo, s, self.x_lo, self.x_hi), Rect(s, self.s_hi, self.x_lo, self.x_hi)

    def split_x(self, x: float) -> tuple["Rect", "Rect"]:
        return Rect(self.s_lo, self.s_hi, self.x_lo, x), Rect(self.s_lo, self.s_hi, x, self.x_hi)


@dataclass(frozen=True)
class Partition2D:
    s_points: np.ndarray
    x_points: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_points, dtype=float)
        x = np.asarray(self.x_points, dtype=float)
        for name, p in (("s_points", s), ("x_points", x)):
            if p.ndim != 1 or p.size < 2:
                raise ValueError(f"{name} needs at least two points")
            if np.any(np.diff(p) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        object.__setattr__(self, "s_points", s)
        object.__setattr__(self, "x_points", x)

    @property
    def n_cells(self) -> int:
        return (self.s_points.size - 1) * (self.x_points.size - 1)

    @property
    def rect(self) -> Rect:
        return Rect(self.s_points[0], self.s_points[-1], self.x_points[0], self.x_points[-1])

    def refines(self, other: "Partition2D") -> bool:
        return bool(
            np.isin(other.s_points, self.s_points).all()
            and np.isin(other.x_points, self.x_points).all()
        )


class Surface2D:
    """A function of ``(s, x)`` with a left-continuous reading.

    ``func`` must accept broadcastable numpy arrays.  ``left`` is an optional
    analytic left-limit evaluator.  Without it, surfaces flagged
    ``left_continuous`` read ``func`` directly and all others are read at
    ``(s - h, x - h)`` with ``h = left_step``.

    ``jumps_s`` / ``jumps_x`` list coordinates of lines across which the
    surface may jump; they are added to every refinement partition.
    """

    def __init__(
        self,
        func: Callable,
        *,
        left: Callable | None = None,
        left_continuous: bool = False,
        left_step: float = 2.0**-40,
        kind: str = "analytic",
        jumps_s: Sequence[float] = (),
        jumps_x: Sequence[float] = (),
        name: str = "",
    ):
        if kind not in ("analytic", "grid"):
            raise ValueError(f"unknown surface kind {kind!r}")
        self._func = func
        self._left = left
        self.left_continuous = left_continuous
        self.left_step = float(left_step)
        self.kind = kind
        self.jumps_s = tuple(float(v) for v in jumps_s)
        self.jumps_x = tuple(float(v) for v in jumps_x)
        self.name = name
        # declared jump lines get right-limit companion nodes in partitions
        self.split_jumps = True

    def __repr__(self):
        return f"Surface2D({self.name or self._func!r}, kind={self.kind})"

    def eval(self, s, x):
        s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
        return np.asarray(self._func(s, x), dtype=float)

    __call__ = eval

    def eval_left(self, s, x):
        if self._left is not None:
            s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
            return np.asarray(self._left(s, x), dtype=float)
        if self.left_continuous:
            return self.eval(s, x)
        h = self.left_step
        return self.eval(np.asarray(s, dtype=float) - h, np.asarray(x, dtype=float) - h)

    @property
    def tolerance(self) -> float:
        return TOL_GRID if self.kind == "grid" else TOL_ANALYTIC

    def read(self, s, x, left_s: bool = True, left_x: bool = True):
        """Evaluate taking the left limit only in the selected coordinates.

        Surfaces with an analytic or built-in left reading ignore the flags.
        """
        if self._left is not None or self.left_continuous:
            return self.eval_left(s, x)
        h = self.left_step
        s = np.asarray(s, dtype=float) - (h if left_s else 0.0)
        x = np.asarray(x, dtype=float) - (h if left_x else 0.0)
        return self.eval(s, x)

    def shifted(self, curve: Callable, name: str = "") -> "Surface2D":
        """``(t, x) -> self(t, x + curve(t))``; jump lines in x are not carried over."""

        def fn(s, x):
            return self.eval(s, x + curve(s))

        def left(s, x):
            return self.eval_left(s, x + curve(s))

        return Surface2D(fn, left=left, kind=self.kind, jumps_s=self.jumps_s,
                         name=name or f"{self.name}(x+l)")

    def nodes(self, partition: Partition2D) -> np.ndarray:
        """Left-continuous values on the partition nodes, shape ``(len(s), len(x))``."""
        return self.eval_left(partition.s_points[:, None], partition.x_points[None, :])


class GridSurface(Surface2D):
    """Surface sampled on a tensor grid.

    ``mode='bilinear'`` interpolates (continuous, hence left continuous);
    ``mode='step'`` is the left-continuous step function taking the value of
    the smallest node ``>= (s, x)``.
    """

    def __init__(self, s_nodes, x_nodes, values, mode: str = "bilinear", name: str = ""):
        s_nodes = np.asarray(s_nodes, dtype=float)
        x_nodes = np.asarray(x_nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (s_nodes.size, x_nodes.size):
            raise ValueError(f"values shape {values.shape} does not match grid "
                             f"({s_nodes.size}, {x_nodes.size})")
        if mode not in ("bilinear", "step"):
            raise ValueError(f"unknown interpolation mode {mode!r}")
        self.s_nodes, self.x_nodes, self.values, self.mode = s_nodes, x_nodes, values, mode
        super().__init__(self._interp, left_continuous=True, kind="grid",
                         jumps_s=s_nodes, jumps_x=x_nodes, name=name)
        self.split_jumps = mode == "step"

    @property
    def rect(self) -> Rect:
        return Rect(self.s_nodes[0], self.s_nodes[-1], self.x_nodes[0], self.x_nodes[-1])

    def _interp(self, s, x):
        sn, xn, v = self.s_nodes, self.x_nodes, self.values
        if self.mode == "step":
            i = np.clip(np.searchsorted(sn, s, side="left"), 0, sn.size - 1)
            j = np.clip(np.searchsorted(xn, x, side="left"), 0, xn.size - 1)
            return v[i, j]
        s = np.clip(s, sn[0], sn[-1])
        x = np.clip(x, xn[0], xn[-1])
        i = np.clip(np.searchsorted(sn, s, side="right") - 1, 0, max(sn.size - 2, 0))
        j = np.clip(np.searchsorted(xn, x, side="right") - 1, 0, max(xn.size - 2, 0))
        if sn.size == 1 or xn.size == 1:
            return v[i, j]
        ws = (s - sn[i]) / (sn[i + 1] - sn[i])
        wx = (x - xn[j]) / (xn[j + 1] - xn[j])
        return ((1 - ws) * (1 - wx) * v[i, j] + ws * (1 - wx) * v[i + 1, j]
                + (1 - ws) * wx * v[i, j + 1] + ws * wx * v[i + 1, j + 1])


# --------------------------------------------------------------------------
# Grid files


def load_grid_surface(path, mode: str = "bilinear") -> GridSurface:
    """Read a surface grid file.

    Format (whitespace separated, ``#`` starts a comment)::

        ns nx
        s_lo s_hi
        x_lo x_hi
        v[0,0] v[0,1] ... v[0,nx-1]
        ...
        v[ns-1,0] ...

    Rows follow the time coordinate, columns the space coordinate; nodes are
    uniformly spaced and include both endpoints.
    """
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if len(tokens) < 6:
        raise ValueError(f"{path}: truncated header")
    ns, nx = int(tokens[0]), int(tokens[1])
    s_lo, s_hi, x_lo, x_hi = map(float, tokens[2:6])
    vals = np.array(tokens[6:], dtype=float)
    if ns < 1 or nx < 1 or vals.size != ns * nx:
        raise ValueError(f"{path}: expected {ns}x{nx} values, found {vals.size}")
    return GridSurface(np.linspace(s_lo, s_hi, ns), np.linspace(x_lo, x_hi, nx),
                       vals.reshape(ns, nx), mode=mode, name=Path(path).stem)


def save_grid_surface(path, surface: Surface2D, rect: Rect, ns: int, nx: int) -> None:
    s = np.linspace(rect.s_lo, rect.s_hi, ns)
    x = np.linspace(rect.x_lo, rect.x_hi, nx)
    vals = surface.eval_left(s[:, None], x[None, :])
    lines = ["# surface2d grid: ns nx / s range / x range / row-major values",
             f"{ns} {nx}", f"{rect.s_lo!r} {rect.s_hi!r}", f"{rect.x_lo!r} {rect.x_hi!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in vals]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Partitions


#: Offset of the right-limit companion node placed above each declared jump.
JUMP_OFFSET = 2.0**-32


def lattice_points(lo: float, hi: float, level: int, extra: Sequence[float] = (),
                   companions: bool = False) -> np.ndarray:
    """Endpoints, dyadic lattice ``k * 2**-level`` strictly inside, and extras inside.

    With ``companions`` each extra ``e`` in ``[lo, hi)`` also gets the node
    ``e + JUMP_OFFSET``, so the cell ``[e, e + JUMP_OFFSET)`` isolates a jump
    at ``e`` from the smooth variation next to it.
    """
    if hi == lo:
        return np.array([lo])
    h = 2.0**-level
    k0, k1 = math.floor(lo / h) + 1, math.ceil(hi / h) - 1
    inner = np.arange(k0, k1 + 1, dtype=float) * h if k1 >= k0 else np.empty(0)
    ex = [e for e in extra if lo < e < hi]
    if companions:
        ex += [e + JUMP_OFFSET for e in extra if lo <= e and e + JUMP_OFFSET < hi]
    pts = np.concatenate(([lo], inner, np.asarray(ex, dtype=float), [hi]))
    pts = np.unique(pts)
    return pts[(pts >= lo) & (pts <= hi)]


def start_level(r: Rect) -> int:
    """Coarsest lattice level giving at least two cells along each nondegenerate side."""
    widths = [w for w in (r.width_s, r.width_x) if w > 0]
    if not widths:
        return 0
    return math.ceil(-math.log2(min(widths) / 2))


def dyadic_partition(r: Rect, level: int, jumps_s=(), jumps_x=(),
                     companions: bool = False) -> Partition2D:
    return Partition2D(lattice_points(r.s_lo, r.s_hi, level, jumps_s, companions),
                       lattice_points(r.x_lo, r.x_hi, level, jumps_x, companions))


# --------------------------------------------------------------------------
# Increments and variation


def cell_increments(values: np.ndarray) -> np.ndarray:
    """Rectangle increments of every grid cell from node values ``(..., ns, nx)``."""
    return values[..., 1:, 1:] - values[..., 1:, :-1] - values[..., :-1, 1:] + values[..., :-1, :-1]


def rect_increment(f: Surface2D, r: Rect) -> float:
    """``f(s2,x2) - f(s2,x1) - f(s1,x2) + f(s1,x1)`` with left-continuous corners."""
    s = np.array([r.s_lo, r.s_hi])
    x = np.array([r.x_lo, r.x_hi])
    v = f.eval_left(s[:, None], x[None, :])
    return float(v[1, 1] - v[1, 0] - v[0, 1] + v[0, 0])


def variation_on_partition(f: Surface2D, p: Partition2D) -> float:
    """``V_P(f)``: sum of absolute rectangle increments over the cells of ``p``."""
    return float(np.abs(cell_increments(f.nodes(p))).sum())


@dataclass
class RefinementPolicy:
    """Controls dyadic refinement.

    ``tol`` defaults to the surface's kind-specific tolerance.  ``level``
    pins a single lattice level (no convergence loop), which keeps grids of
    lattice-aligned rectangles aligned.
    """

    tol: float | None = None
    max_cells: int = MAX_CELLS
    min_level: int | None = None
    max_level: int | None = None
    level: int | None = None


@dataclass
class VariationResult:
    value: float
    refinement_trace: list[tuple[int, float]]
    converged: bool
    tolerance: float
    partition: Partition2D | None = field(default=None, repr=False)

    def is_monotone(self, slack: float = NEG_CLAMP) -> bool:
        vals = [v for _, v in self.refinement_trace]
        return all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(vals, vals[1:]))


def _levels(r: Rect, policy: RefinementPolicy, f: Surface2D):
    if policy.level is not None:
        yield policy.level, dyadic_partition(r, policy.level, f.jumps_s, f.jumps_x, f.split_jumps)
        return
    lvl = start_level(r) if policy.min_level is None else policy.min_level
    while True:
        p = dyadic_partition(r, lvl, f.jumps_s, f.jumps_x, f.split_jumps)
        if p.n_cells > policy.max_cells:
            return
        yield lvl, p
        if policy.max_level is not None and lvl >= policy.max_level:
            return
        lvl += 1


def variation(f: Surface2D, r: Rect, policy: RefinementPolicy | None = None) -> VariationResult:
    """Vitali variation of ``f`` on ``r`` as a supremum over nested dyadic partitions.

    Refinement stops when two successive levels differ by less than the
    tolerance; ``converged`` is False when the cell budget runs out first.
    Degenerate rectangles have zero variation.
    """
    policy = policy or RefinementPolicy()
    tol = f.tolerance if policy.tol is None else policy.tol
    if r.width_s == 0 or r.width_x == 0:
        return VariationResult(0.0, [(0, 0.0)], True, tol)
    trace: list[tuple[int, float]] = []
    best = 0.0
    last_p = None
    converged = False
    for _, p in _levels(r, policy, f):
        v = variation_on_partition(f, p)
        if not math.isfinite(v):
            raise ValueError(f"non-finite variation estimate on {r} ({f!r})")
        trace.append((p.n_cells, v))
        best = max(best, v)
        last_p = p
        if policy.level is not None:
            converged = True
            break
        if len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) < tol:
            converged = True
            break
    if not trace:
        raise ValueError(f"refinement budget {policy.max_cells} too small for {r}")
    return VariationResult(best, trace, converged, tol, last_p)


def sectional_variation(f: Surface2D, s: float, lo: float, hi: float, tol: float | None = None,
                        max_points: int = MAX_CELLS) -> VariationResult:
    """Total variation of ``x -> f(s, x)`` on ``[lo, hi]`` (``V_{f(s)}[lo, hi]``).

    Reported separately from the two-parameter variation; neither controls
    the other.
    """
    tol = f.tolerance if tol is None else tol
    if hi <= lo:
        return VariationResult(0.0, [(0, 0.0)], True, tol)
    lvl = math.ceil(-math.log2((hi - lo) / 2))
    trace = []
    converged = False
    while True:
        x = lattice_points(lo, hi, lvl, f.jumps_x, f.split_jumps)
        if x.size > max_points:
            break
        v = float(np.abs(np.diff(f.eval_left(np.full_like(x, s), x))).sum())
        trace.append((x.size - 1, v))
        if len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) < tol:
            converged = True
            break
        lvl += 1
    return VariationResult(max(v for _, v in trace), trace, converged, tol)


# --------------------------------------------------------------------------
# Jordan decomposition


@dataclass
class JordanPair:
    """``f = f1 - f2`` with ``f1``, ``f2`` increasing, on a quarter-space grid."""

    f1: GridSurface
    f2: GridSurface
    base: tuple[float, float]
    partition: Partition2D
    converged: bool
    variation: np.ndarray = field(repr=False)

    def min_increment(self) -> float:
        return float(min(cell_increments(self.f1.values).min(initial=0.0),
                         cell_increments(self.f2.values).min(initial=0.0)))


def cumulative_variation(values: np.ndarray) -> np.ndarray:
    """``V(i, j)`` = variation over the subgrid ``[0..i] x [0..j]`` of node values."""
    inc = np.abs(cell_increments(values))
    out = np.zeros_like(values, dtype=float)
    out[1:, 1:] = inc.cumsum(axis=0).cumsum(axis=1)
    return out


def jordan_decompose(f: Surface2D, base: tuple[float, float], r: Rect,
                     policy: RefinementPolicy | None = None,
                     partition: Partition2D | None = None) -> JordanPair:
    """Decompose ``f`` on the quarter-space anchored at ``base``.

    ``2 f1 = V_f([t, s] x [a, x]) + f`` and ``2 f2 = V_f - f`` on the nodes of
    the converged variation partition of ``[t, r.s_hi] x [a, r.x_hi]`` (or
    the given ``partition``).  Node values use the left-continuous reading
    of ``f``; at the quarter-space boundary that reading is one-sided.
    """
    t, a = base
    if t > r.s_lo or a > r.x_lo:
        raise ValueError(f"base {base} must lie below and left of {r}")
    box = Rect(t, r.s_hi, a, r.x_hi)
    converged = True
    if partition is None:
        res = variation(f, box, policy)
        converged = res.converged
        partition = res.partition
        if partition is None:
            partition = dyadic_partition(box, start_level(box), f.jumps_s, f.jumps_x,
                                          f.split_jumps)
    sp, xp = partition.s_points, partition.x_points
    vals = f.nodes(partition)
    # quarter-space edges: left limits taken from inside only
    vals[0, :] = f.read(np.full(xp.size, sp[0]), xp, left_s=False)
    vals[:, 0] = f.read(sp, np.full(sp.size, xp[0]), left_x=False)
    vals[0, 0] = f.read(sp[0], xp[0], left_s=False, left_x=False)
    V = cumulative_variation(vals)
    f1 = GridSurface(partition.s_points, partition.x_points, 0.5 * (V + vals), mode="step",
                     name=f"{f.name}+")
    f2 = GridSurface(partition.s_points, partition.x_points, 0.5 * (V - vals), mode="step",
                     name=f"{f.name}-")
    return JordanPair(f1, f2, (t, a), partition, converged, V)


# --------------------------------------------------------------------------
# Lebesgue-Stieltjes integrals


def _richardson(seq: list[float], max_order: int = 3) -> list[float]:
    """Diagonal of the Richardson table for estimates at halving mesh sizes.

    Error expansion assumed in integer powers of the mesh: ``c1 h + c2 h^2 + ...``.
    """
    table: list[list[float]] = []
    diag = []
    for i, v in enumerate(seq):
        row = [v]
        for p in range(1, min(i, max_order) + 1):
            prev = table[i - 1][p - 1]
            row.append(row[p - 1] + (row[p - 1] - prev) / (2.0**p - 1.0))
        table.append(row)
        diag.append(row[-1])
    return diag


@dataclass
class IntegralResult:
    value: float
    converged: bool
    trace: list[tuple[int, float]]
    last_two: tuple[float, float]


def grid_ls_sum_2d(G: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``sum_{k,j} G[k, j] * mu(cell_kj)`` with ``mu`` the increments of node values ``H``.

    ``G`` holds lower-left corner values, shape ``(..., ns-1, nx-1)``.
    """
    return (G * cell_increments(H)).sum(axis=(-2, -1))


def grid_ls_sum_1d(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``sum_j g[j] * (h[j+1] - h[j])`` along the last axis."""
    return (g * np.diff(h, axis=-1)).sum(axis=-1)


def ls_integral_2d(g: Callable, f: Surface2D, r: Rect, tol: float | None = None,
                   policy: RefinementPolicy | None = None, extrapolate: bool = True,
                   raise_on_failure: bool = False) -> IntegralResult:
    """``iint_r g d_{s,x} f`` as a limit of lower-left corner Stieltjes sums.

    With ``extrapolate`` the corner sums at successive dyadic levels are
    Richardson-accelerated (the sums carry an error expansion in powers of
    the mesh when ``g`` is smooth and jumps of ``f`` sit on partition lines);
    the limit is unchanged.
    """
    policy = policy or RefinementPolicy()
    tol = (f.tolerance if policy.tol is None else policy.tol) if tol is None else tol
    raw, trace = [], []
    for _, p in _levels(r, policy, f):
        s, x = p.s_points, p.x_points
        G = np.asarray(g(s[:-1, None], x[None, :-1]), dtype=float)
        G = np.broadcast_to(G, (s.size - 1, x.size - 1))
        raw.append(float(grid_ls_sum_2d(G, f.nodes(p))))
        est = _richardson(raw)[-1] if extrapolate else raw[-1]
        trace.append((p.n_cells, est))
        if len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) < tol * max(1.0, abs(est)):
            return IntegralResult(est, True, trace, (trace[-2][1], est))
    last_two = (trace[-2][1] if len(trace) > 1 else math.nan, trace[-1][1] if trace else math.nan)
    if raise_on_failure:
        raise NonConvergenceError(f"2D Stieltjes sums did not converge on {r}; last two "
                                  f"estimates {last_two}", last_two)
    return IntegralResult(last_two[1], False, trace, last_two)


class Curve1D:
    """One-variable left-continuous function with declared jump points."""

    def __init__(self, func: Callable, jumps: Sequence[float] = (), name: str = ""):
        self._func = func
        self.jumps = tuple(float(v) for v in jumps)
        self.name = name

    def __call__(self, x):
        return np.asarray(self._func(np.asarray(x, dtype=float)), dtype=float)


def ls_integral_1d(g: Callable, h: Curve1D | Callable, lo: float, hi: float,
                   tol: float = TOL_ANALYTIC, max_points: int = MAX_CELLS,
                   extrapolate: bool = True, raise_on_failure: bool = False) -> IntegralResult:
    """``int_[lo, hi) g dh`` by lower-endpoint Riemann-Stieltjes sums.

    ``h`` is read left-continuously, so a jump at ``x`` contributes
    ``g(x) * (h(x+) - h(x))``.
    """
    jumps = getattr(h, "jumps", ())
    if hi <= lo:
        return IntegralResult(0.0, True, [(0, 0.0)], (0.0, 0.0))
    lvl = math.ceil(-math.log2((hi - lo) / 2))
    raw, trace = [], []
    while True:
        x = lattice_points(lo, hi, lvl, jumps, companions=True)
        if x.size > max_points:
            break
        gx = np.broadcast_to(np.asarray(g(x[:-1]), dtype=float), (x.size - 1,))
        raw.append(float(grid_ls_sum_1d(gx, h(x))))
        est = _richardson(raw)[-1] if extrapolate else raw[-1]
        trace.append((x.size - 1, est))
        if len(trace) >= 2 and abs(trace[-1][1] - trace[-2][1]) < tol * max(1.0, abs(est)):
            return IntegralResult(est, True, trace, (trace[-2][1], est))
        lvl += 1
    last_two = (trace[-2][1] if len(trace) > 1 else math.nan, trace[-1][1] if trace else math.nan)
    if raise_on_failure:
        raise NonConvergenceError(f"1D Stieltjes sums did not converge on [{lo}, {hi}]; "
                                  f"last two estimates {last_two}", last_two)
    return IntegralResult(last_two[1], False, trace, last_two)
