"""Brute-force ground truth: dense truncated assembly, direct solves, and
parametric sampling checks.  Deliberately simple and factorization-based;
not part of the measured complexity path.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .coeffvector import CoeffVector, sorted_nus
from .galerkin import assemble_restricted, rhs_vector
from .multi_index import MultiIndex


class SizeOverflowError(ValueError):
    pass


def enumerate_nu_cut(dim_cap, order_cap):
    """All multi-indices with dimension <= dim_cap and total order <= order_cap."""
    out = []

    def rec(pos, prefix, remaining):
        if pos > dim_cap:
            out.append(MultiIndex.encode(prefix))
            return
        for v in range(0, remaining + 1):
            rec(pos + 1, prefix + [v], remaining - v)

    rec(1, [], order_cap)
    uniq = {nu.code: nu for nu in out}
    return sorted(uniq.values(), key=MultiIndex.sort_key)


def spatial_cut(basis, J):
    out = []
    for lvl in range(J + 1):
        out.extend(basis.level_indices(lvl))
    return sorted(out)


class TruncatedProblem:
    """Dense symmetric section of B over F_cut x S_cut with right-hand side."""

    def __init__(self, gal, nus, lams, max_unknowns=20000):
        n = len(nus) * len(lams)
        if n > max_unknowns:
            raise SizeOverflowError("dense section with %d unknowns" % n)
        self.gal = gal
        self.nus = list(nus)
        self.lams = list(lams)
        Lambda = {nu: set(lams) for nu in nus}
        A, order, index = assemble_restricted(gal, Lambda, gal.field.L_max + 1)
        self.order = order
        self.index = index
        self.A = A.toarray()
        self.b = rhs_vector(gal, order)
        self._chol = None

    @property
    def n(self):
        return len(self.order)

    def is_symmetric(self):
        return float(np.max(np.abs(self.A - self.A.T))) == 0.0

    def chol(self):
        if self._chol is None:
            self._chol = sla.cho_factor(self.A)
        return self._chol

    def solve(self):
        x = sla.cho_solve(self.chol(), self.b)
        return x

    def solution_vector(self):
        return self.to_coeffvector(self.solve())

    def to_coeffvector(self, x):
        out = CoeffVector()
        for i, (nu, lam) in enumerate(self.order):
            if x[i] != 0.0:
                out.set(nu, lam, float(x[i]))
        return out

    def from_coeffvector(self, v):
        x = np.zeros(self.n)
        for i, key in enumerate(self.order):
            x[i] = v.get(*key)
        return x

    def residual(self, x):
        return self.A @ x - self.b

    def residual_norm(self, v):
        return float(np.linalg.norm(self.residual(self.from_coeffvector(v))))

    def galerkin_on(self, Lambda):
        """Exact Galerkin solution with support in Lambda (subset of the cut)."""
        idx = [
            self.index[(nu, lam)]
            for nu in sorted_nus(Lambda.keys())
            for lam in sorted(Lambda[nu])
        ]
        sub = self.A[np.ix_(idx, idx)]
        xb = sla.solve(sub, self.b[idx], assume_a="pos")
        x = np.zeros(self.n)
        x[idx] = xb
        return x

    def eig_range(self):
        ev = np.linalg.eigvalsh(self.A)
        return float(ev[0]), float(ev[-1])

    def energy_norm(self, x):
        return math.sqrt(float(x @ (self.A @ x)))


def assemble_dense(gal, dim_cap=2, order_cap=2, J=2, max_unknowns=20000):
    nus = enumerate_nu_cut(dim_cap, order_cap)
    lams = spatial_cut(gal.basis, J)
    return TruncatedProblem(gal, nus, lams, max_unknowns)


def sample_coefficient(gal, y):
    """a(y) as a PiecewisePoly for a finitely supported draw {mu_id: value}."""
    from .tiling import add_scaled

    a = gal.field.theta0
    for mu_id in sorted(y):
        if y[mu_id] != 0.0:
            a = add_scaled(a, float(y[mu_id]), gal.field.theta(mu_id))
    return a


def sample_solve(gal, y, J):
    """Deterministic solve with coefficient a(y) on the uniform space of
    wavelet levels <= J; returns the coefficient dict over that space."""
    from .tiling import inner_product, strong_apply

    a = sample_coefficient(gal, y)
    # ellipticity of the realized coefficient must hold for valid fields
    lams = spatial_cut(gal.basis, J)
    n = len(lams)
    A = np.zeros((n, n))
    pps = [gal.basis.h1_function(lam) for lam in lams]
    for i in range(n):
        Ai = strong_apply(a, pps[i])
        for j in range(i, n):
            if not gal._support_overlap(lams[i], lams[j]):
                continue
            A[i, j] = A[j, i] = inner_product(Ai, pps[j])
    b = np.array([gal.ctx.f_dual(lam) for lam in lams])
    x = sla.solve(A, b, assume_a="pos")
    return dict(zip(lams, x))


def legendre_combination(gal, u, y):
    """Spatial coefficient dict of sum_nu u_nu L_nu(y) for a draw y."""
    from .legendre import eval_product

    out = {}
    for nu in u.nus():
        ln = eval_product(nu, y)
        if ln == 0.0:
            continue
        for lam, val in u.spatial(nu).items():
            out[lam] = out.get(lam, 0.0) + ln * val
    return out
