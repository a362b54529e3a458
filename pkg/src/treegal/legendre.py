"""Orthonormal Legendre polynomials on [-1,1] with the uniform measure.

The three-term recursion y*L_k = sqrt(b_{k+1}) L_{k+1} + sqrt(b_k) L_{k-1}
with b_0 = 0, b_k = 1/(4 - k^{-2}) drives both point evaluation and the
bidiagonal coupling operators M_mu acting on coefficient families over the
stochastic index set.
"""

from __future__ import annotations

import math

import numpy as np


class DomainError(ValueError):
    """Evaluation point outside [-1, 1]."""


def beta(k):
    """Recursion coefficient b_k; b_0 = 0, b_k in (1/4, 1/3] for k >= 1."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    if k == 0:
        return 0.0
    return 1.0 / (4.0 - 1.0 / (k * k))


class RecursionTable:
    """Cached beta and sqrt(beta) values up to the largest degree seen."""

    def __init__(self):
        self._beta = [0.0]
        self._sqrt = [0.0]

    def _grow(self, k):
        while len(self._beta) <= k:
            j = len(self._beta)
            b = beta(j)
            self._beta.append(b)
            self._sqrt.append(math.sqrt(b))

    def beta(self, k):
        self._grow(k)
        return self._beta[k]

    def sqrt_beta(self, k):
        self._grow(k)
        return self._sqrt[k]


_TABLE = RecursionTable()


def sqrt_beta(k):
    return _TABLE.sqrt_beta(k)


def eval_legendre(k, y):
    """L_k(y) by forward recursion; orthonormal w.r.t. dy/2 on [-1,1]."""
    yarr = np.asarray(y, dtype=float)
    if np.any(np.abs(yarr) > 1.0 + 1e-14):
        raise DomainError("evaluation point outside [-1,1]")
    prev = np.zeros_like(yarr)
    cur = np.ones_like(yarr)
    for j in range(k):
        nxt = (yarr * cur - _TABLE.sqrt_beta(j) * prev) / _TABLE.sqrt_beta(j + 1)
        prev, cur = cur, nxt
    if np.isscalar(y):
        return float(cur)
    return cur


def eval_product(nu, y):
    """Product Legendre polynomial L_nu(y) for y given as {coordinate: value}.

    Coordinates missing from y are evaluated at 0 only if nu is zero there;
    otherwise a KeyError propagates (the caller controls the draw).
    """
    out = 1.0
    for pos, val in nu.entries():
        out *= eval_legendre(val, y[pos])
    return out


def apply_M(mu, v):
    """Action of M_mu on a finitely supported family {nu: value}.

    M_0 is the identity.  For mu >= 1, (M_mu v)_nu = sqrt(b_{nu_mu + 1})
    v_{nu + e_mu} + sqrt(b_{nu_mu}) v_{nu - e_mu}; values may be scalars or
    numpy arrays.
    """
    if mu == 0:
        return dict(v)
    out = {}
    for nu, val in v.items():
        m = nu[mu]
        up = nu.shift(mu, +1)
        w = _TABLE.sqrt_beta(m + 1)
        if up in out:
            out[up] = out[up] + w * val
        else:
            out[up] = w * val
        down = nu.shift(mu, -1)
        if down is not None:
            w = _TABLE.sqrt_beta(m)
            if down in out:
                out[down] = out[down] + w * val
            else:
                out[down] = w * val
    return out


def coupling_weight(nu, nu_src, mu):
    """Matrix entry (M_mu)_{nu, nu_src} for mu >= 1, zero if uncoupled."""
    m = nu[mu]
    if nu_src == nu.shift(mu, +1):
        return _TABLE.sqrt_beta(m + 1)
    down = nu.shift(mu, -1)
    if down is not None and nu_src == down:
        return _TABLE.sqrt_beta(m)
    return 0.0
