"""Calibration of the dual-norm tail constant used by the residual
certificate.

The certificate needs zeta_lhat >= |(r(psi_lam))_{lam outside S(T, lhat)}| /
|(r(psi_lam))_all| for the residuals encountered.  The constant in that
bound is not available analytically, so this mode measures the ratio on
random piecewise polynomials over random adaptive tilings and reports the
implied constant with a safety margin.
"""

from __future__ import annotations

import math

import numpy as np

from .tiling import PiecewisePoly, cell_children, root_cell


def random_tiling(d, rng, max_depth=6, split_p=0.45):
    cells = [root_cell(d)]
    out = []
    while cells:
        c = cells.pop()
        if c[0] < max_depth and rng.random() < split_p:
            cells.extend(cell_children(c))
        else:
            out.append(c)
    return out


def measure_tail_constant(basis, lhat, samples=12, seed=0, deep=4, degree=2):
    """Max measured ratio * 2^lhat over random samples (the implied C)."""
    rng = np.random.default_rng(seed)
    d = basis.d
    worst = 0.0
    for _ in range(samples):
        tiling = random_tiling(d, rng, max_depth=6 if d == 1 else 4)
        pieces = {}
        for c in tiling:
            if d == 1:
                pieces[c] = rng.standard_normal(degree + 1)
            else:
                pieces[c] = rng.standard_normal((degree + 1, degree + 1))
        r = PiecewisePoly(d, pieces)
        S = basis.tree_from_tiling(tiling, lhat)
        maxlev = max(c[0] for c in tiling) + lhat + deep
        Sdeep = set()
        for lvl in range(maxlev + 1):
            Sdeep.update(basis.level_indices(lvl))
        vals = basis.dual_coefficients(r, Sdeep)
        total = sum(v * v for v in vals.values())
        tail = sum(v * v for lam, v in vals.items() if lam not in S)
        if total > 0:
            worst = max(worst, math.sqrt(tail / total))
    return worst * 2.0**lhat


def calibrated_tail_constant(basis, lhat, margin=1.6, **kw):
    return margin * measure_tail_constant(basis, lhat, **kw)
