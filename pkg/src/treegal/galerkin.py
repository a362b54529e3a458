"""Galerkin solves on tree index sets: exact cached entries, restricted
matrix assembly, the defect-correction solver, and the practical cached
conjugate-gradient solver used in the experiments.

Entries <A_mu psi~_{lam'}, psi~_lam> = int theta_mu grad psi~_{lam'} .
grad psi~_lam are exact polynomial quadratures on the common refinement of
the supports and are cached with symmetry normalization.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .apply_op import build_plan, plan_for_truncated_operator
from .coeffvector import CoeffVector, sorted_nus
from .multi_index import MultiIndex
from .tiling import (
    PiecewisePoly,
    cell_contains,
    cell_measure,
    poly_add,
    poly_diff,
    poly_integral_local,
    poly_mul,
    restrict_coeffs,
    strong_apply,
    to_minimal_tiling,
)

_ZERO = MultiIndex.zero()


class ConvergenceError(RuntimeError):
    pass


class EntryCache:
    """LRU cache of stiffness entries keyed by (mu, lam, lam')."""

    def __init__(self, budget=4_000_000):
        self.budget = budget
        self.data = OrderedDict()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(mu_id, lam1, lam2):
        if lam2 < lam1:
            lam1, lam2 = lam2, lam1
        return (mu_id, lam1, lam2)

    def get(self, key):
        v = self.data.get(key)
        if v is not None or key in self.data:
            self.hits += 1
            self.data.move_to_end(key)
        else:
            self.misses += 1
        return v

    def put(self, key, value):
        self.data[key] = value
        if len(self.data) > self.budget:
            self.data.popitem(last=False)

    def stats(self):
        return {"size": len(self.data), "hits": self.hits, "misses": self.misses}


class GalerkinContext:
    """Problem context extension holding the entry cache and gradient data."""

    def __init__(self, ctx, cache_budget=4_000_000):
        self.ctx = ctx
        self.basis = ctx.basis
        self.field = ctx.field
        self.cache = EntryCache(cache_budget)
        self._grad_cache = {}

    def _grads(self, lam):
        """[(cell, [gcomp_arrays...])] global-value gradient pieces of psi~."""
        got = self._grad_cache.get(lam)
        if got is None:
            s = self.basis.h1_scale(lam)
            out = []
            for cell, c in self.basis.pieces(lam):
                fac = s * 2.0 ** cell[0]
                if self.ctx.d == 1:
                    out.append((cell, (fac * poly_diff(c),)))
                else:
                    out.append((cell, (fac * poly_diff(c, 0), fac * poly_diff(c, 1))))
            self._grad_cache[lam] = out
            got = out
        return got

    def _support_overlap(self, lam1, lam2, extra_box=None):
        b1 = self.basis.support(lam1)
        b2 = self.basis.support(lam2)
        for i in range(self.ctx.d):
            lo = max(b1[i][0], b2[i][0])
            hi = min(b1[i][1], b2[i][1])
            if extra_box is not None:
                lo = max(lo, extra_box[i][0])
                hi = min(hi, extra_box[i][1])
            if lo >= hi - 1e-14:
                return False
        return True

    def entry(self, mu_id, lam1, lam2):
        """<A_mu psi~_{lam2}, psi~_{lam1}> exactly; 0 without quadrature when
        supports are disjoint."""
        key = EntryCache.key(mu_id, lam1, lam2)
        got = self.cache.get(key)
        if got is not None:
            return got
        theta_box = None
        if mu_id > 0:
            theta_box = self.field.support_box(mu_id)
        if not self._support_overlap(lam1, lam2, theta_box):
            self.cache.put(key, 0.0)
            return 0.0
        if mu_id == 0:
            theta = self.field.theta0
        else:
            theta = self.field.theta(mu_id)
        total = 0.0
        g2 = self._grads(lam2)
        for cell1, grads1 in self._grads(lam1):
            for cell2, grads2 in g2:
                if cell1[0] <= cell2[0]:
                    if not cell_contains(cell1, cell2):
                        continue
                    cell = cell2
                    comps1 = [restrict_coeffs(g, cell1, cell) for g in grads1]
                    comps2 = grads2
                else:
                    if not cell_contains(cell2, cell1):
                        continue
                    cell = cell1
                    comps1 = grads1
                    comps2 = [restrict_coeffs(g, cell2, cell) for g in grads2]
                dot = poly_mul(comps1[0], comps2[0])
                for a, b in zip(comps1[1:], comps2[1:]):
                    dot = poly_add(dot, poly_mul(a, b))
                total += self._integrate_theta(theta, cell, dot)
        self.cache.put(key, total)
        return total

    @staticmethod
    def _integrate_theta(theta, cell, dot):
        total = 0.0
        for tc, tp in theta.pieces.items():
            if tc[0] <= cell[0]:
                if cell_contains(tc, cell):
                    sub = restrict_coeffs(tp, tc, cell)
                    total += cell_measure(cell) * poly_integral_local(
                        poly_mul(sub, dot)
                    )
            elif cell_contains(cell, tc):
                sub = restrict_coeffs(dot, cell, tc)
                total += cell_measure(tc) * poly_integral_local(poly_mul(sub, tp))
        return total


# ---------------------------------------------------------------------------
# restricted matrix assembly


def coupled_pairs(Lambda, L_cut, field):
    """All (nu_low, nu_high, mu_id) couplings within Lambda with field level
    of mu below L_cut, plus the diagonal (nu, nu, 0) couplings."""
    Fset = set(Lambda.keys())
    pairs = []
    for nu in sorted_nus(Fset):
        pairs.append((nu, nu, 0))
        for mu_id, _ in nu.entries():
            if mu_id > field.count:
                continue
            if field.level_of(mu_id) >= L_cut:
                continue
            down = nu.shift(mu_id, -1)
            if down in Fset:
                pairs.append((down, nu, mu_id))
    return pairs


def assemble_restricted(gal, Lambda, L_cut):
    """Sparse SPD matrix of (B_{L_cut})|_Lambda and the row index map."""
    order = []
    for nu in sorted_nus(Lambda.keys()):
        for lam in sorted(Lambda[nu]):
            order.append((nu, lam))
    index = {key: i for i, key in enumerate(order)}
    rows, cols, vals = [], [], []
    from .legendre import sqrt_beta

    for nu_low, nu_high, mu_id in coupled_pairs(Lambda, L_cut, gal.field):
        if mu_id == 0:
            weight = 1.0
        else:
            weight = sqrt_beta(nu_high[mu_id])
        lams1 = sorted(Lambda[nu_low])
        lams2 = sorted(Lambda[nu_high])
        theta_box = gal.field.support_box(mu_id) if mu_id else None
        for lam1 in lams1:
            i = index[(nu_low, lam1)]
            for lam2 in lams2:
                if not gal._support_overlap(lam1, lam2, theta_box):
                    continue
                a = gal.entry(mu_id, lam1, lam2)
                if a == 0.0:
                    continue
                j = index[(nu_high, lam2)]
                v = weight * a
                rows.append(i)
                cols.append(j)
                vals.append(v)
                if nu_low != nu_high:
                    rows.append(j)
                    cols.append(i)
                    vals.append(v)
    n = len(order)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return A, order, index


def rhs_vector(gal, order):
    b = np.zeros(len(order))
    for i, (nu, lam) in enumerate(order):
        if nu == _ZERO:
            b[i] = gal.ctx.f_dual(lam)
    return b


def truncation_level(gal, eps_half, vnorm):
    """Smallest L >= 1 with C_B 2^{-alpha L} vnorm <= eps_half."""
    if vnorm <= 0.0:
        return 1
    alpha = gal.field.alpha
    L = math.ceil(math.log2(gal.ctx.C_B * vnorm / eps_half) / alpha)
    return int(min(max(L, 1), gal.field.L_max + 1))


def _cg(A, b, x0, tol_resid, maxiter):
    """Plain CG with stopping on the true residual norm."""
    x = x0.copy()
    r = b - A @ x
    p = r.copy()
    rs = float(r @ r)
    it = 0
    while math.sqrt(rs) > tol_resid and it < maxiter:
        Ap = A @ p
        denom = float(p @ Ap)
        if denom <= 0.0:
            raise ConvergenceError("matrix not positive definite in CG")
        a = rs / denom
        x += a * p
        r -= a * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, math.sqrt(rs), it


def gal_solve_cg(gal, Lambda, v, eps, direct_threshold=1500):
    """Inexact CG on the cached restricted matrix; certified
    |(B v~ - f)|_Lambda| <= eps."""
    if not Lambda:
        return CoeffVector(), {"iterations": 0, "L": 0, "n": 0}
    vnorm = v.norm()
    L = truncation_level(gal, eps / 2.0, max(vnorm, 1.0))
    info = {}
    for _ in range(8):
        A, order, index = assemble_restricted(gal, Lambda, L)
        b = rhs_vector(gal, order)
        x0 = np.zeros(len(order))
        for i, (nu, lam) in enumerate(order):
            x0[i] = v.get(nu, lam)
        if len(order) <= direct_threshold:
            lu = spla.splu(A.tocsc())
            x = lu.solve(b)
            resid = float(np.linalg.norm(b - A @ x))
            iters = 0
        else:
            kappa = gal.ctx.kappa_bound()
            cap = int(10 * math.sqrt(kappa) * max(1.0, abs(math.log(eps)))) + 20
            x, resid, iters = _cg(A, b, x0, eps / 2.0, cap)
            if resid > eps / 2.0:
                raise ConvergenceError(
                    "CG did not reach tolerance: resid %.3g > %.3g" % (resid, eps / 2)
                )
        xnorm = float(np.linalg.norm(x))
        tail = gal.ctx.C_B * 2.0 ** (-gal.field.alpha * L) * xnorm
        if tail <= eps / 2.0 + 1e-300:
            info = {"iterations": iters, "L": L, "n": len(order), "resid": resid,
                    "tail": tail}
            break
        L += 1
    out = CoeffVector()
    for i, (nu, lam) in enumerate(order):
        if x[i] != 0.0:
            out.set(nu, lam, float(x[i]))
    return out, info


# ---------------------------------------------------------------------------
# strong-form pipeline (GalApply) and the defect-correction solver


def gal_apply(gal, Lambda, v, entries, f0=None, polys=None):
    """Strong-form application restricted to Lambda.

    Computes w with w_nu ~ (sum over M(nu) couplings of A_mu v_{nu'})
    minus delta_{0,nu} f0, evaluated exactly as piecewise polynomials and
    projected onto the wavelet indices of Lambda (dual coefficients on
    S(T(w_nu), 0) intersected with S_nu).
    """
    ctx = gal.ctx
    basis = gal.basis
    if polys is None:
        polys = {nu: basis.reconstruct(v.spatial(nu)) for nu in v.nus()}
    out = CoeffVector()
    out_nus = set(Lambda.keys())
    all_nus = set(entries.keys())
    if f0 is not None and not f0.is_zero():
        all_nus.add(_ZERO)
    for nu in sorted_nus(all_nus):
        if nu not in out_nus:
            continue
        contribs = []
        if f0 is not None and nu == _ZERO:
            contribs.extend((c, -p) for c, p in f0.pieces.items())
        for mu_id, nu_src, weight in entries.get(nu, ()):
            pp = polys.get(nu_src)
            if pp is None or pp.is_zero():
                continue
            theta = ctx.field.theta0 if mu_id == 0 else ctx.field.theta(mu_id)
            av = strong_apply(theta, pp)
            contribs.extend((c, weight * p) for c, p in av.pieces.items())
        what = to_minimal_tiling(ctx.d, contribs)
        if what.is_zero():
            continue
        splus = basis.tree_from_tiling(what.support_cells(), 0)
        keep = splus & Lambda[nu]
        if not keep:
            continue
        vals = basis.dual_coefficients(what, keep)
        for lam, val in vals.items():
            out.set(nu, lam, val)
    return out


def gal_solve_defect(gal, Lambda, v, delta, eps, polys=None):
    """Defect-correction solve: residual via Apply + GalApply, correction by
    CG on the fixed truncated operator over Lambda."""
    ctx = gal.ctx
    if not Lambda:
        return CoeffVector(), {"iterations": 0, "L": 0}
    F = sorted_nus(Lambda.keys())
    if polys is None:
        polys = {nu: gal.basis.reconstruct(v.spatial(nu)) for nu in v.nus()}
    plan = build_plan(ctx, v, eps / 3.0, polys=polys, restrict_outputs=set(F))
    r0 = gal_apply(gal, Lambda, v, plan.entries, f0=ctx.f, polys=polys)

    ratio = eps / (3.0 * (eps + delta))
    alpha = ctx.field.alpha
    L = math.ceil(math.log2(ctx.C_B / (ctx.r_B * ratio)) / alpha)
    L = int(min(max(L, 1), ctx.field.L_max + 1))

    A, order, index = assemble_restricted(gal, Lambda, L)
    r0_vec = np.zeros(len(order))
    for i, key in enumerate(order):
        r0_vec[i] = r0.get(*key)
    kappa = gal.ctx.kappa_bound()
    cap = int(10 * math.sqrt(kappa) * max(1.0, abs(math.log(eps)))) + 20
    s, resid, iters = _cg(A, -r0_vec, np.zeros(len(order)), eps / 3.0, cap)
    if resid > eps / 3.0:
        raise ConvergenceError("defect CG stalled at %.3g" % resid)
    out = v.copy()
    for i, (nu, lam) in enumerate(order):
        if s[i] != 0.0:
            out.add(nu, lam, float(s[i]))
    return out, {"iterations": iters, "L": L, "resid": resid}


def restricted_residual_norm(gal, Lambda, v, L=None):
    """Exact |(B v - f)|_Lambda| for supp v within Lambda (the field is
    finite, so B is exact for L = L_max + 1)."""
    if not Lambda:
        return 0.0
    for nu in v.nus():
        lams = Lambda.get(nu)
        if lams is None or not set(v.spatial(nu)) <= lams:
            raise ValueError("restricted residual needs supp v within Lambda")
    L = gal.field.L_max + 1 if L is None else L
    A, order, _ = assemble_restricted(gal, Lambda, L)
    x = np.zeros(len(order))
    for i, key in enumerate(order):
        x[i] = v.get(*key)
    b = rhs_vector(gal, order)
    return float(np.linalg.norm(A @ x - b))
