"""Adaptive level-truncated application of B in the stochastic variables.

Given a finitely supported coefficient family v, the plan assigns to each
source index nu' a truncation level l (from the bucket it falls into) and
collects, for every output index nu, the weighted pairs (mu, nu') whose
contributions (M_mu)_{nu,nu'} A_mu v_{nu'} realize an approximation w of
B v with certified accuracy eta.  Bucketing is by binary binning on the
spatial norms |v_nu| (near-best up to the factor 2), buckets are nested,
and the truncation levels minimize the predicted work subject to the
accuracy constraint.
"""

from __future__ import annotations

import math

from .coeffvector import sorted_nus
from .multi_index import MultiIndex

_ZERO = MultiIndex.zero()


class InfeasibleToleranceError(ValueError):
    pass


class ApplyPlan:
    """Work plan (M(nu))_{nu in F} plus the bookkeeping of its derivation."""

    __slots__ = (
        "entries",
        "buckets",
        "bucket_norms",
        "levels",
        "J",
        "delta",
        "eta",
        "certified_tail",
        "empty_reason",
    )

    def __init__(self):
        self.entries = {}
        self.buckets = []
        self.bucket_norms = []
        self.levels = []
        self.J = -1
        self.delta = 0.0
        self.eta = 0.0
        self.certified_tail = 0.0
        self.empty_reason = None

    def is_empty(self):
        return not self.entries

    def output_nus(self):
        return sorted_nus(self.entries.keys())

    def pair_count(self):
        return sum(len(v) for v in self.entries.values())

    def max_mu_level(self, field):
        top = -1
        for pairs in self.entries.values():
            for mu_id, _, _ in pairs:
                if mu_id > 0:
                    top = max(top, field.level_of(mu_id))
        return top

    def stats(self):
        return {
            "J": self.J,
            "levels": list(self.levels),
            "bucket_sizes": [len(b) for b in self.buckets],
            "bucket_norms": list(self.bucket_norms),
            "delta": self.delta,
            "pairs": self.pair_count(),
            "outputs": len(self.entries),
        }


def bucket_by_binning(norm_pairs):
    """Order (nu, norm) pairs by binary bins on the norm, largest bin first.

    Elements within a bin keep their (canonical) input order; the nested
    buckets F_j are then prefixes of the returned ranking, which realizes
    the near-best condition with constant 2.
    """
    items = [(nu, w) for nu, w in norm_pairs if w > 0.0]
    if not items:
        return []
    top = max(w for _, w in items)
    bins = {}
    for nu, w in items:
        p = min(int(math.floor(math.log2(top / w))), 512) if w < top else 0
        bins.setdefault(p, []).append((nu, w))
    ranked = []
    for p in sorted(bins):
        ranked.extend(bins[p])
    return ranked


def choose_levels(dnorms, counts, eta_minus_delta, C_B, alpha, d, L_max):
    """Truncation levels l_j realizing sum_j C_B 2^{-alpha l_j} |d_j| <=
    eta - delta with near-minimal predicted work sum_j 2^{d l_j} N_j.

    Levels are clamped to [1, L_max + 1]: the lower clamp keeps the
    certificate valid (the tail bound only covers l >= 1), the upper clamp
    is free because the field is truncated at L_max.
    """
    if eta_minus_delta <= 0.0:
        raise InfeasibleToleranceError("eta <= delta in level selection")
    if not dnorms:
        return []
    q = alpha / (alpha + d)
    total = 0.0
    for dn, n in zip(dnorms, counts):
        if dn > 0.0:
            total += dn ** (d / (alpha + d)) * n**q
    levels = []
    for dn, n in zip(dnorms, counts):
        if dn <= 0.0:
            levels.append(0)
            continue
        arg = (C_B / eta_minus_delta) * (dn / n) ** q * total
        l = math.ceil(math.log2(arg) / alpha) if arg > 0 else 1
        levels.append(int(min(max(l, 1), L_max + 1)))
    return levels


def certified_tail(levels, dnorms, C_B, alpha, L_max=None):
    """Certified bound on |B v - w|; levels beyond the truncated field are
    exact and contribute nothing."""
    total = 0.0
    for l, dn in zip(levels, dnorms):
        if dn <= 0.0:
            continue
        if L_max is not None and l >= L_max + 1:
            continue
        total += C_B * 2.0 ** (-alpha * l) * dn
    return total


def build_plan(ctx, v, eta, polys=None, restrict_outputs=None):
    """Algorithm steps (i)-(iii): buckets, levels, and the pair sets M(nu).

    polys: optional {nu: PiecewisePoly} used to bound the spatial support
    of v_nu when enumerating field indices (tightens M(nu) to nonzero
    contributions); restrict_outputs: optional set of output nu to keep.
    """
    plan = ApplyPlan()
    plan.eta = eta
    if eta <= 0.0:
        raise InfeasibleToleranceError("eta must be positive")
    norm_pairs = [(nu, v.nu_norm(nu)) for nu in v.nus()]
    vnorm = math.sqrt(sum(w * w for _, w in norm_pairs))
    if ctx.R_B * vnorm <= eta:
        plan.empty_reason = "operator-norm early exit"
        return plan

    ranked = bucket_by_binning(norm_pairs)
    nsupp = len(ranked)
    jbar = max(0, math.ceil(math.log2(nsupp))) if nsupp else 0
    # suffix sums of squared norms for the bucket tails
    sq = [w * w for _, w in ranked]
    suffix = [0.0] * (nsupp + 1)
    for i in range(nsupp - 1, -1, -1):
        suffix[i] = suffix[i + 1] + sq[i]
    J = None
    for j in range(jbar + 1):
        cut = min(2**j, nsupp)
        delta = ctx.R_B * math.sqrt(max(suffix[cut], 0.0))
        if delta <= eta / 2.0:
            J = j
            plan.delta = delta
            break
    if J is None:  # full support always satisfies delta = 0
        J = jbar
        plan.delta = 0.0
    plan.J = J

    slices = []
    prev = 0
    for j in range(J + 1):
        cut = min(2**j, nsupp)
        slices.append(ranked[prev:cut])
        prev = cut
    plan.buckets = [[nu for nu, _ in sl] for sl in slices]
    dnorms = [math.sqrt(sum(w * w for _, w in sl)) for sl in slices]
    counts = [min(2**j, nsupp) for j in range(J + 1)]
    plan.bucket_norms = dnorms
    levels = choose_levels(
        dnorms, counts, eta - plan.delta, ctx.C_B, ctx.field.alpha, ctx.d, ctx.field.L_max
    )
    plan.levels = levels
    plan.certified_tail = certified_tail(
        levels, dnorms, ctx.C_B, ctx.field.alpha, ctx.field.L_max
    )

    field = ctx.field
    whole = tuple((0.0, 1.0) for _ in range(ctx.d))
    entries = {}

    def emit(nu_out, mu_id, nu_src, weight):
        if restrict_outputs is not None and nu_out not in restrict_outputs:
            return
        entries.setdefault(nu_out, []).append((mu_id, nu_src, weight))

    from .legendre import sqrt_beta

    for j, sl in enumerate(slices):
        l_j = levels[j]
        if l_j < 1:
            continue
        for nu_src, _ in sl:
            box = whole
            if polys is not None:
                pp = polys.get(nu_src)
                if pp is not None and not pp.is_zero():
                    bb = pp.bounding_box()
                    if bb is not None:
                        box = bb
            emit(nu_src, 0, nu_src, 1.0)
            for k in range(0, l_j):
                for mu_id in field.ids_overlapping(k, box):
                    m = nu_src[mu_id]
                    up = nu_src.shift(mu_id, +1)
                    emit(up, mu_id, nu_src, sqrt_beta(m + 1))
                    if m > 0:
                        down = nu_src.shift(mu_id, -1)
                        emit(down, mu_id, nu_src, sqrt_beta(m))
    plan.entries = entries
    return plan


def plan_for_truncated_operator(ctx, F, L, polys=None):
    """Pairs realizing B_L w for supp_F w within F, outputs restricted to F.

    Used by the Galerkin defect solver: all mu with level < L applied to
    every nu in F.
    """
    from .legendre import sqrt_beta

    field = ctx.field
    Fset = set(F)
    whole = tuple((0.0, 1.0) for _ in range(ctx.d))
    entries = {}

    def emit(nu_out, mu_id, nu_src, weight):
        if nu_out in Fset:
            entries.setdefault(nu_out, []).append((mu_id, nu_src, weight))

    for nu_src in sorted_nus(F):
        box = whole
        if polys is not None and nu_src in polys and not polys[nu_src].is_zero():
            bb = polys[nu_src].bounding_box()
            if bb is not None:
                box = bb
        if L >= 1:
            emit(nu_src, 0, nu_src, 1.0)
        for k in range(0, L):
            for mu_id in field.ids_overlapping(k, box):
                m = nu_src[mu_id]
                emit(nu_src.shift(mu_id, +1), mu_id, nu_src, sqrt_beta(m + 1))
                if m > 0:
                    emit(nu_src.shift(mu_id, -1), mu_id, nu_src, sqrt_beta(m))
    return entries
