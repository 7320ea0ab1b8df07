import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from itolocal.mollifier import (MollifierSpec, bump, bump_constant, bump_prime,
                                convergence_report, is_decreasing, mollify, write_report_csv)


def test_unit_mass():
    mass, _ = integrate.quad(bump, 0.0, 2.0, epsabs=1e-14, epsrel=1e-13)
    assert abs(mass - 1.0) <= 1e-10


def test_constant_matches_mpmath():
    mpmath.mp.dps = 30
    mass = mpmath.quad(lambda x: mpmath.exp(1 / ((x - 1) ** 2 - 1)), [0, 1, 2])
    assert abs(bump_constant() - float(1 / mass)) <= 1e-8


def test_support():
    assert bump(0.0) == 0.0 and bump(2.0) == 0.0 and bump(-1.0) == 0.0
    assert bump(1.0) > 0


def test_derivative_matches_finite_difference():
    x = np.linspace(0.1, 1.9, 13)
    h = 1e-6
    fd = (bump(x + h) - bump(x - h)) / (2 * h)
    assert np.max(np.abs(fd - bump_prime(x))) <= 1e-6


def test_spec_validation():
    with pytest.raises(ValueError):
        MollifierSpec(0)
    with pytest.raises(ValueError):
        MollifierSpec(1, "<")


def test_constant_is_preserved():
    sm = mollify(lambda t, x: 3.0 + 0 * t * x, MollifierSpec(4))
    assert sm(0.5, 0.2) == pytest.approx(3.0, abs=1e-12)
    assert abs(sm.dx(0.5, 0.2)) < 1e-10


def test_linear_shift():
    # left mollification of x is x - E[z]/n = x - 1/n (the kernel is symmetric about 1)
    for n in (1, 4, 16):
        sm = mollify(lambda t, x: x + 0 * t, MollifierSpec(n))
        assert sm(0.5, 0.3) == pytest.approx(0.3 - 1 / n, abs=1e-12)
        assert sm.dx(0.5, 0.3) == pytest.approx(1.0, abs=1e-10)


def test_positive_part_left_and_right_derivatives_at_kink():
    f = lambda t, x: np.maximum(x, 0.0) + 0 * t  # noqa: E731
    for n in (4, 64):
        assert abs(mollify(f, MollifierSpec(n)).dx(0.5, 0.0)) <= 1e-3
        assert mollify(f, MollifierSpec(n, "-", "+")).dx(0.5, 0.0) == pytest.approx(1.0, abs=1e-3)


def test_dt_and_dx_match_finite_differences():
    f = lambda t, x: np.sin(t) * np.cos(2 * x)  # noqa: E731
    sm = mollify(f, MollifierSpec(3))
    h = 1e-5
    fd_t = (sm(0.9 + h, 0.4) - sm(0.9 - h, 0.4)) / (2 * h)
    fd_x = (sm(0.9, 0.4 + h) - sm(0.9, 0.4 - h)) / (2 * h)
    assert sm.dt(0.9, 0.4) == pytest.approx(fd_t, abs=1e-6)
    assert sm.dx(0.9, 0.4) == pytest.approx(fd_x, abs=1e-6)


def test_even_reflection_near_zero():
    # f(s) = s extended evenly: the window below zero sees |s|
    sm = mollify(lambda t, x: t + 0 * x, MollifierSpec(1))
    assert sm(0.0, 0.0) == pytest.approx(1.0, abs=1e-10)


def test_convergence_report(tmp_path):
    f = lambda t, x: np.maximum(x, 0.0) * (1 + t)  # noqa: E731
    dx_ref = lambda t, x: np.where(x > 0, 1.0 + t, 0.0)  # noqa: E731
    dt_ref = lambda t, x: np.maximum(x, 0.0)  # noqa: E731
    rows = convergence_report(f, dt_ref, dx_ref, [2, 8, 32, 64], [(0.5, 0.0), (0.5, 0.3)])
    assert is_decreasing(rows, "err_dx")
    # the time smoothing shifts t by about 1/n, so the error off the kink is O(1/n)
    off = [r.err_dx for r in rows if r.x == 0.3]
    assert off[-1] < 0.02 and off[-1] < off[0] / 16
    kink = convergence_report(lambda t, x: np.maximum(x, 0.0) + 0 * t, None,
                              lambda t, x: 0.0 * x, [64], [(0.5, 0.0)])
    assert kink[0].err_dx <= 1e-3
    write_report_csv(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().count("\n") == len(rows) + 1
    assert math.isnan(convergence_report(f, dt_ref, None, [2], [(0.0, 0.1)])[0].err_dt)
