"""Acceptance suite: one verdict line per criterion (see the terminal summary).

Each test records its checks at the acceptance tolerances and then asserts
them, so a failing criterion both prints FAIL and fails the test.
"""

import math
import time

import mpmath
import numpy as np
import pytest
from scipy import integrate

from itolocal.bv2d import (Rect, RefinementPolicy, Surface2D, jordan_decompose, ls_integral_2d,
                           variation)
from itolocal.harness.builtins import builtin
from itolocal.harness.config import ExperimentConfig
from itolocal.harness.run import run
from itolocal.itoformula import (TERMS, convergence_breakdowns, eval_curve, eval_semimartingale,
                                 covering_levels, summarize_convergence)
from itolocal.localtime import (LevelGrid, local_time_occupation, local_time_tanaka,
                                occupation_check)
from itolocal.mollifier import MollifierSpec, bump, bump_constant, mollify
from itolocal.pathsim import Curve, TimeGrid, simulate_bm_batch

pytestmark = pytest.mark.acceptance

DYADIC = [12, 14, 16]


def _study(name, variant, n_paths, seed, form="jump"):
    fs = builtin(name)
    t0 = time.perf_counter()
    parts = convergence_breakdowns(fs, variant, DYADIC, n_paths, seed, form=form)
    study = summarize_convergence(parts, variant, fs.name)
    return study, time.perf_counter() - t0


def test_c01_tanaka_identity(criterion):
    c = criterion(1, "Tanaka identity, |x| on BM, 1024 paths")
    study, secs = _study("tanaka", "semimartingale", 1024, seed=7)
    res = [lv.mean_abs_residual for lv in study.levels]
    last = study.levels[-1].mean_normalized
    c.check(f"mean normalized residual at 2^16 = {last:.4f} <= 0.05", last <= 0.05)
    c.check("mean |residual| strictly decreasing over 2^12, 2^14, 2^16: "
            + " > ".join(f"{r:.4f}" for r in res), study.strictly_decreasing())
    c.check(f"runtime {secs:.0f} s <= 120 s", secs <= 120)
    assert c.ok, c.line()


def test_c02_classical_reduction(criterion):
    c = criterion(2, "classical reduction, x^2 with f_v = 0")
    p = simulate_bm_batch(TimeGrid(1.0, 2**14), 2, 256)
    tb = eval_semimartingale(builtin("square"), p)
    worst = float(np.max(tb.normalized))
    c.check(f"max per-path normalized residual {worst:.2e} <= 1e-3", worst <= 1e-3)
    c.check("term_boundary and term_2d exactly 0",
            not tb.term_boundary.any() and not tb.term_2d.any())
    assert c.ok, c.line()


def test_c03_occupation_formula(criterion):
    c = criterion(3, "occupation-times formula, g = x^2, 256 paths")
    p = simulate_bm_batch(TimeGrid(1.0, 2**14), 3, 256)
    levels = LevelGrid.covering(p.x, 2**-7, align="nodes")
    chk = occupation_check(lambda t, x: x**2, p, levels)
    frac = float(np.mean(chk.rel_error <= 0.02))
    c.check(f"fraction of paths with relative error <= 2%: {frac:.3f} >= 0.95 "
            f"(max {np.max(chk.rel_error):.2e})", frac >= 0.95)
    assert c.ok, c.line()


def test_c04_local_time_calibration(criterion):
    c = criterion(4, "local-time calibration, 1024 paths, da = 2^-7")
    da = 2**-7
    grid = TimeGrid(1.0, 2**18)
    occ, gaps = [], []
    for lo in range(0, 1024, 32):
        p = simulate_bm_batch(grid, 4, 32, start=lo)
        levels = LevelGrid.covering(p.x, da, align="nodes")
        L = local_time_occupation(p, levels).final()[:, levels.cell_of(0.0)]
        tan = local_time_tanaka(p, 0.0, width=da)[:, -1]
        occ.append(L)
        gaps.append(np.abs(L - tan))
    occ, gaps = np.concatenate(occ), np.concatenate(gaps)
    target = 1.0 / math.sqrt(2.0 * math.pi)
    c.check(f"mean L_1(0) = {occ.mean():.4f} within 0.02 of {target:.4f}",
            abs(occ.mean() - target) <= 0.02)
    c.check(f"max per-path occupation/Tanaka gap {gaps.max():.4f} <= 0.05 (n = 2^18)",
            gaps.max() <= 0.05)
    assert c.ok, c.line()


def _surfaces():
    corner = Surface2D(lambda s, x: ((s >= 0.5) & (x >= 0.5)).astype(float),
                       left=lambda s, x: ((s > 0.5) & (x > 0.5)).astype(float),
                       jumps_s=(0.5,), jumps_x=(0.5,), name="corner step")
    return {
        "example-1 grad^-": builtin("paper-example-1").grad_left_v,
        "sgn^- step": builtin("tanaka").grad_left_v,
        "corner step": corner,
        "s*x": Surface2D(lambda s, x: s * x, left_continuous=True),
    }


def test_c05_jordan_decomposition(criterion):
    c = criterion(5, "Jordan decomposition")
    r = Rect(0.0, 1.0, -0.5, 1.0)
    for name, f in _surfaces().items():
        jp = jordan_decompose(f, (r.s_lo, r.x_lo), r, RefinementPolicy(level=6))
        p = jp.partition
        want = f.nodes(p)
        want[0, :] = f.read(np.full(p.x_points.size, p.s_points[0]), p.x_points, left_s=False)
        want[:, 0] = f.read(p.s_points, np.full(p.s_points.size, p.x_points[0]), left_x=False)
        err = float(np.max(np.abs(jp.f1.values - jp.f2.values - want)))
        c.check(f"{name}: min increment {jp.min_increment():.1e} >= -1e-12, |f1-f2-f| {err:.1e}",
                jp.min_increment() >= -1e-12 and err <= 1e-12)
    assert c.ok, c.line()


def test_c06_variation_additivity(criterion):
    c = criterion(6, "variation additivity and refinement monotonicity")
    lvl = RefinementPolicy(level=6)
    quads = (Rect(0, .5, 0, .5), Rect(0, .5, .5, 1), Rect(.5, 1, 0, .5), Rect(.5, 1, .5, 1))
    for name, f in _surfaces().items():
        big = variation(f, Rect(0, 1, 0, 1), lvl).value
        gap = abs(big - sum(variation(f, q, lvl).value for q in quads))
        mono = variation(f, Rect(0, 1, -0.5, 1), RefinementPolicy(max_cells=2**16)).is_monotone()
        c.check(f"{name}: four-rectangle gap {gap:.1e}, monotone {mono}",
                gap <= 1e-12 * max(1.0, big) and mono)
    assert c.ok, c.line()


def test_c07_ls_integral_oracle(criterion):
    c = criterion(7, "2D Lebesgue-Stieltjes integral vs density quadrature")
    r = Rect(0.0, 1.5, -0.5, 1.0)
    cases = {
        "s*x": (Surface2D(lambda s, x: s * x, left_continuous=True), lambda s, x: 1.0),
        "sin s sin x": (Surface2D(lambda s, x: np.sin(s) * np.sin(x), left_continuous=True),
                        lambda s, x: np.cos(s) * np.cos(x)),
    }
    polys = {"1 + s^2 x": lambda s, x: 1 + s**2 * x, "(s-x)^3 + 2s": lambda s, x: (s - x) ** 3 + 2 * s}
    for fname, (f, dens) in cases.items():
        for gname, g in polys.items():
            oracle, _ = integrate.dblquad(lambda x, s: g(s, x) * dens(s, x), r.s_lo, r.s_hi,
                                          r.x_lo, r.x_hi, epsabs=1e-13, epsrel=1e-13)
            val = ls_integral_2d(g, f, r).value
            rel = abs(val - oracle) / abs(oracle)
            c.check(f"{fname}, g = {gname}: rel error {rel:.1e} <= 1e-6", rel <= 1e-6)
    assert c.ok, c.line()


def test_c08_example_1(criterion):
    c = criterion(8, "example-1 identity, 512 paths on [0, 1]")
    study, secs = _study("paper-example-1", "semimartingale", 512, seed=8)
    last = study.levels[-1].mean_normalized
    c.check(f"mean normalized residual at 2^16 = {last:.4f} <= 0.1", last <= 0.1)
    c.check("strictly decreasing: " + " > ".join(f"{lv.mean_abs_residual:.4f}"
                                                 for lv in study.levels),
            study.strictly_decreasing())
    c.check(f"runtime {secs:.0f} s <= 300 s", secs <= 300)
    assert c.ok, c.line()


def test_c09_curve_formula(criterion):
    c = criterion(9, "curve identity, (x - l)^+ with l = 0.2 sin t, 512 paths")
    study, _ = _study("curve-kink", "curve", 512, seed=9, form="jump")
    last = study.levels[-1].mean_normalized
    c.check(f"mean normalized residual at 2^16 = {last:.4f} <= 0.1", last <= 0.1)
    p = simulate_bm_batch(TimeGrid(1.0, 2**12), 9, 64)
    zero = Curve(lambda t: 0.0 * t, name="0")
    for name in ("tanaka", "paper-example-1"):
        fs = builtin(name)
        levels = covering_levels(p.x, None, p.grid.dt)
        a = eval_semimartingale(fs, p, levels)
        b = eval_curve(fs, p, levels, form="shifted", curve=zero)
        same = all(np.array_equal(getattr(a, k), getattr(b, k)) for k in TERMS)
        c.check(f"l = 0 bit-identical to the semimartingale form ({name})", same)
    assert c.ok, c.line()


def test_c10_krylov(criterion, tmp_path):
    c = criterion(10, "Krylov estimate, sigma = 1, b = 0, N = 2, t = 1")
    cfg = ExperimentConfig.from_dict({"kind": "krylov", "n_paths": 1024, "seed": 10,
                                      "process": {"N": 2.0}, "steps_list": [2**12, 2**14]})
    rep = run(cfg)
    m = {x.name: x for x in rep.metrics}
    ratios = [r["ratio"] for r in rep.data]
    c.check(f"all {len(ratios)} ratios finite", all(math.isfinite(v) for v in ratios))
    change = m["sup_ratio_relative_change"].value
    c.check(f"sup ratio {m['sup_ratio_n4096'].value:.4f} -> {m['sup_ratio_n16384'].value:.4f}, "
            f"change {change:.2%} <= 10%", change <= 0.10)
    ones = [r for r in rep.data if r["name"] == "1"]
    lo = min(r["ci_lo"] for r in ones)
    c.check(f"f = 1: lhs CI lower end {lo:.4f} <= 1", lo <= 1.0)
    assert c.ok, c.line()


def test_c11_mollifier(criterion):
    c = criterion(11, "mollifier")
    mass, _ = integrate.quad(bump, 0.0, 2.0, epsabs=1e-14, epsrel=1e-13)
    c.check(f"|int rho - 1| = {abs(mass - 1):.1e} <= 1e-10", abs(mass - 1) <= 1e-10)
    mpmath.mp.dps = 30
    ref = float(1 / mpmath.quad(lambda x: mpmath.exp(1 / ((x - 1) ** 2 - 1)), [0, 1, 2]))
    c.check(f"|c - oracle| = {abs(bump_constant() - ref):.1e} <= 1e-8",
            abs(bump_constant() - ref) <= 1e-8)
    err = abs(mollify(lambda t, x: np.maximum(x, 0.0) + 0 * t, MollifierSpec(64)).dx(0.5, 0.0))
    c.check(f"left-mollified grad of x^+ at 0, n = 64: error {err:.1e} <= 1e-3", err <= 1e-3)
    assert c.ok, c.line()
