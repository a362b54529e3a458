"""Problem context: field + basis + right-hand side + derived constants.

Bundles everything the algorithm stages share: the coefficient field, the
wavelet basis descriptor, the piecewise-polynomial right-hand side, the
operator norm bounds r_B <= <Bv,v>/|v|^2 <= R_B, the semidiscrete
truncation constant C_B, and the dual-norm tail factor zeta_lhat used by
the residual certificate.  Finite-section Riesz estimates are widened by
a safety margin before entering any bound that must hold from above.
"""

from __future__ import annotations

import math

from .coefficient_field import make_hat_field
from .tiling import constant_poly, inner_product
from .wavelet import build_basis


class ConfigError(ValueError):
    pass


class ProblemContext:
    def __init__(
        self,
        field,
        basis,
        f=None,
        cb_override=None,
        lhat=1,
        tail_constant=1.0,
        eta_factor=None,
        riesz_margin=1.5,
        dual_route="singlescale",
    ):
        self.field = field
        self.basis = basis
        self.f = f if f is not None else constant_poly(field.d, 1.0)
        self.lhat = int(lhat)
        self.tail_constant = float(tail_constant)
        self.zeta_lhat = self.tail_constant * 2.0 ** (-self.lhat)
        self.riesz_margin = float(riesz_margin)
        self.dual_route = dual_route

        r = field.ellipticity_constant()
        self.r = r
        c_psi, C_psi = basis.c_psi, basis.C_psi
        self.r_B = c_psi**2 * r
        self.R_B = self.riesz_margin * C_psi**2 * (2.0 * field.theta0_sup() - r)
        ratio = self.riesz_margin * C_psi / c_psi
        self.C_B_formula = field.level_truncation_constant(ratio)
        self.C_B = float(cb_override) if cb_override is not None else self.C_B_formula
        self.eta_factor = (
            float(eta_factor)
            if eta_factor is not None
            else 2.0 ** (field.alpha / field.d)
        )
        self._f_dual_cache = {}
        self._theta_grad_cache = {}

    @property
    def d(self):
        return self.field.d

    def f_dual(self, lam):
        """f(psi~_lam), cached."""
        v = self._f_dual_cache.get(lam)
        if v is None:
            v = inner_product(self.f, self.basis.h1_function(lam))
            self._f_dual_cache[lam] = v
        return v

    def kappa_bound(self):
        return self.R_B / self.r_B

    def summary(self):
        return {
            "d": self.d,
            "alpha": self.field.alpha,
            "c": self.field.c,
            "r": self.r,
            "r_B": self.r_B,
            "R_B": self.R_B,
            "C_B": self.C_B,
            "C_B_formula": self.C_B_formula,
            "c_psi": self.basis.c_psi,
            "C_psi": self.basis.C_psi,
            "zeta_lhat": self.zeta_lhat,
            "eta_factor": self.eta_factor,
        }


_BASIS_CACHE = {}


def cached_basis(d, order=4):
    key = (d, order)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = build_basis(d, order)
    return _BASIS_CACHE[key]


def make_context(
    d=1,
    alpha=1.0,
    c=0.1,
    L_max=24,
    f_value=1.0,
    order=4,
    cb_override=None,
    lhat=1,
    tail_constant=1.0,
    eta_factor=None,
    riesz_margin=1.5,
    dual_route="singlescale",
):
    field = make_hat_field(d, alpha, c, L_max)
    basis = cached_basis(d, order)
    f = constant_poly(d, f_value)
    return ProblemContext(
        field,
        basis,
        f,
        cb_override=cb_override,
        lhat=lhat,
        tail_constant=tail_constant,
        eta_factor=eta_factor,
        riesz_margin=riesz_margin,
        dual_route=dual_route,
    )
