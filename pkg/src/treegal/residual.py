"""Certified residual approximation with per-index spatial tree supports.

ResApprox reconstructs the current iterate as piecewise polynomials,
applies the operator semidiscretely to a halving sequence of tolerances,
assembles the strong-form residuals per stochastic index, projects them
onto graded wavelet trees over their minimal tilings, and stops when
either the relative accuracy of the computed coefficients is certified or
the computable bound b = (1 - zeta_lhat)^{-1} |r| + eta drops below the
target.
"""

from __future__ import annotations

import math

from .apply_op import build_plan
from .coeffvector import CoeffVector, lambda_size, sorted_nus
from .context import ConfigError
from .multi_index import MultiIndex
from .tiling import strong_apply, to_minimal_tiling

_ZERO = MultiIndex.zero()


class ResidualResult:
    __slots__ = (
        "Lambda_plus",
        "r",
        "eta",
        "b",
        "branch",
        "rnorm",
        "iterations",
        "plan_stats",
        "log_rows",
    )

    def __init__(self):
        self.Lambda_plus = {}
        self.r = CoeffVector()
        self.eta = 0.0
        self.b = 0.0
        self.branch = None
        self.rnorm = 0.0
        self.iterations = 0
        self.plan_stats = None
        self.log_rows = []


def res_approx(ctx, v, zeta, eta0, eps, max_rounds=200, polys=None, sink=None):
    """(Lambda_plus, r, eta, b) with |B v - f| <= b; either b <= eps or r
    carries relative accuracy zeta."""
    zl = ctx.zeta_lhat
    if not 0.0 < zl < zeta < 1.0:
        raise ConfigError("need 0 < zeta_lhat < zeta < 1 (got %g, %g)" % (zl, zeta))
    if eta0 <= 0.0 or eps <= 0.0:
        raise ConfigError("tolerances must be positive")
    for nu in v.nus():
        if not ctx.basis.is_tree(set(v.spatial(nu))):
            raise ConfigError("iterate support is not a spatial tree")

    if polys is None:
        polys = {nu: ctx.basis.reconstruct(v.spatial(nu)) for nu in v.nus()}

    factor = ctx.eta_factor
    eta = factor * eta0
    rel_factor = (zeta - zl) / ((1.0 + zeta) * (1.0 + zl))
    out = ResidualResult()
    av_cache = {}
    f_zero = ctx.f.is_zero()

    for round_no in range(max_rounds):
        eta = eta / factor
        plan = build_plan(ctx, v, eta, polys=polys)
        f_plus = set(plan.entries.keys())
        if not f_zero:
            f_plus.add(_ZERO)
        r = CoeffVector()
        Lambda_plus = {}
        for nu in sorted_nus(f_plus):
            contribs = []
            if nu == _ZERO and not f_zero:
                contribs.extend((c, p) for c, p in ctx.f.pieces.items())
            for mu_id, nu_src, weight in plan.entries.get(nu, ()):
                key = (mu_id, nu_src)
                av = av_cache.get(key)
                if av is None:
                    theta = (
                        ctx.field.theta0 if mu_id == 0 else ctx.field.theta(mu_id)
                    )
                    av = strong_apply(theta, polys[nu_src])
                    av_cache[key] = av
                contribs.extend(
                    (c, -weight * p) for c, p in av.pieces.items()
                )
            rhat = to_minimal_tiling(ctx.d, contribs)
            cells = rhat.support_cells()
            if not cells:
                continue
            splus = ctx.basis.tree_from_tiling(cells, ctx.lhat)
            if ctx.dual_route == "direct":
                vals = ctx.basis.dual_coefficients_direct(rhat, splus)
            else:
                vals = ctx.basis.dual_coefficients(rhat, splus)
            Lambda_plus[nu] = splus
            for lam in sorted(splus):
                r.set(nu, lam, vals[lam])
        rnorm = r.norm()
        b = rnorm / (1.0 - zl) + eta
        out.iterations = round_no + 1
        row = {
            "eta": eta,
            "rnorm": rnorm,
            "cardinality": lambda_size(Lambda_plus),
            "active_nu": len(Lambda_plus),
            "max_mu_level": plan.max_mu_level(ctx.field),
        }
        out.log_rows.append(row)
        if sink is not None:
            sink(row)
        if eta <= rel_factor * rnorm or b <= eps:
            out.Lambda_plus = Lambda_plus
            out.r = r
            out.eta = eta
            out.b = b
            out.rnorm = rnorm
            out.branch = "relative" if eta <= rel_factor * rnorm else "target"
            out.plan_stats = plan.stats()
            return out
    raise ConfigError("residual loop exceeded %d halvings" % max_rounds)
