"""Finitely supported elements of l2(F x S) and index-set helpers.

A CoeffVector maps stochastic multi-indices to spatial coefficient dicts
(wavelet index -> float).  Index sets Lambda are plain dicts
{MultiIndex: set of wavelet indices}; all iteration that affects float
accumulation order is done over canonically sorted keys for bitwise
reproducible runs.
"""

from __future__ import annotations

import math

from .multi_index import MultiIndex


def sorted_nus(keys):
    return sorted(keys, key=MultiIndex.sort_key)


class CoeffVector:
    __slots__ = ("data",)

    def __init__(self, data=None):
        self.data = {}
        if data:
            for nu, spatial in data.items():
                cleaned = {lam: float(v) for lam, v in spatial.items() if v != 0.0}
                if cleaned:
                    self.data[nu] = cleaned

    def copy(self):
        out = CoeffVector()
        out.data = {nu: dict(sp) for nu, sp in self.data.items()}
        return out

    def __bool__(self):
        return any(self.data.values())

    def nus(self):
        return sorted_nus(self.data.keys())

    def spatial(self, nu):
        return self.data.get(nu, {})

    def get(self, nu, lam):
        return self.data.get(nu, {}).get(lam, 0.0)

    def set(self, nu, lam, value):
        if value == 0.0:
            sp = self.data.get(nu)
            if sp and lam in sp:
                del sp[lam]
                if not sp:
                    del self.data[nu]
            return
        self.data.setdefault(nu, {})[lam] = float(value)

    def add(self, nu, lam, value):
        if value == 0.0:
            return
        sp = self.data.setdefault(nu, {})
        sp[lam] = sp.get(lam, 0.0) + float(value)

    def axpy(self, s, other):
        """self += s * other."""
        for nu in other.nus():
            for lam, v in sorted(other.data[nu].items()):
                self.add(nu, lam, s * v)

    def nu_norm(self, nu):
        sp = self.data.get(nu)
        if not sp:
            return 0.0
        return math.sqrt(sum(v * v for v in sp.values()))

    def norm(self):
        return math.sqrt(
            sum(v * v for sp in self.data.values() for v in sp.values())
        )

    def support_size(self):
        return sum(len(sp) for sp in self.data.values())

    def restricted(self, Lambda):
        out = CoeffVector()
        for nu, lams in Lambda.items():
            sp = self.data.get(nu)
            if not sp:
                continue
            kept = {lam: sp[lam] for lam in lams if lam in sp}
            if kept:
                out.data[nu] = kept
        return out

    def support_set(self):
        return {nu: set(sp.keys()) for nu, sp in self.data.items()}

    def items(self):
        for nu in self.nus():
            sp = self.data[nu]
            for lam in sorted(sp):
                yield nu, lam, sp[lam]


def lambda_size(Lambda):
    return sum(len(s) for s in Lambda.values())


def lambda_union(a, b):
    out = {nu: set(s) for nu, s in a.items()}
    for nu, s in b.items():
        out.setdefault(nu, set()).update(s)
    return out


def lambda_contains(a, b):
    """True if b is contained in a."""
    for nu, s in b.items():
        sa = a.get(nu)
        if sa is None or not s <= sa:
            return False
    return True


def lambda_max_support(Lambda):
    out = 0
    for nu in Lambda:
        out = max(out, nu.support_size())
    return out
