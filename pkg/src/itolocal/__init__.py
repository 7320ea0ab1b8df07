"""Numerical checks of generalized Ito formulae with local time.

Modules: :mod:`bv2d` (two-parameter BV calculus), :mod:`pathsim`
(semimartingale simulation), :mod:`localtime` (local-time fields),
:mod:`mollifier` (bump-kernel smoothing), :mod:`itoformula` (term-by-term
identities) and :mod:`harness` (configs, reports, CLI).
"""

__version__ = "0.1.0"
