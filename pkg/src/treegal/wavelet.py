"""C^1 piecewise-cubic multiwavelet Riesz basis of H^1_0((0,1)^d).

Single-scale spaces V_l are C^1 cubic splines on the uniform dyadic grid
with 2^l cells, vanishing on the boundary, spanned by Hermite-type dofs
(value, h * slope) at grid nodes.  Level-l wavelets (l >= 1) are local
combinations of level-l dofs that are L2-orthogonal to the whole coarse
space V_{l-1}, computed once from local Gram systems: an interior stencil
of two generators per new node plus boundary blocks (levels 1..3 are built
globally, levels >= 4 reuse translated stencils).  Level-0 indices are the
V_0 dofs themselves.  The H^1 basis functions carry the scaling
g * 2^{-level} on the L2-normalized generators.

For d=2 the basis consists of isotropic tensor products: at level l the
types are (wavelet x coarse scaling), (coarse scaling x wavelet) and
(wavelet x wavelet), which keeps L2-orthogonality between levels.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.linalg import eigh, null_space

from .tiling import (
    PiecewisePoly,
    StructureError,
    cell_box,
    cell_parent,
    inner_product,
    h1_inner_product,
    poly_add,
    poly_integral_local,
    poly_mul,
    poly_pair_integral,
    restrict_coeffs,
    to_minimal_tiling,
)

V, S = 0, 1  # dof kinds: value, scaled slope

# Hermite cubics on [0,1]: value/slope at the left node, value/slope right.
_H00 = np.array([1.0, 0.0, -3.0, 2.0])
_H10 = np.array([0.0, 1.0, -2.0, 1.0])
_H01 = np.array([0.0, 0.0, 3.0, -2.0])
_H11 = np.array([0.0, 0.0, -1.0, 1.0])

GLOBAL_LEVEL_MAX = 2  # levels built as one global complement
_BUILD_LEVEL = 5  # reference level for the translated stencils


def phi_dofs(level):
    """Dof list of Phi_level: (node, kind), value dofs only at interior nodes."""
    n = 2**level
    out = [(0, S)]
    for i in range(1, n):
        out.append((i, V))
        out.append((i, S))
    out.append((n, S))
    return out


_DOF_PIECES = {}


def phi_dof_pieces(level, node, kind):
    """Pieces of the dof function on cells (level, (node-1,)) and (level, (node,))."""
    key = (level, node, kind)
    got = _DOF_PIECES.get(key)
    if got is None:
        n = 2**level
        got = []
        if node >= 1:
            got.append(((level, (node - 1,)), _H01 if kind == V else _H11))
        if node <= n - 1:
            got.append(((level, (node,)), _H00 if kind == V else _H10))
        _DOF_PIECES[key] = got
    return got


def phi_dof_l2(level, node, kind):
    """L2 norm of the dof function."""
    total = 0.0
    for _, c in phi_dof_pieces(level, node, kind):
        total += poly_integral_local(poly_mul(c, c))
    return np.sqrt(total * 0.5**level)


def _dof_poly(level, node, kind):
    return PiecewisePoly(1, dict(phi_dof_pieces(level, node, kind)))


def refinement_mask(node, kind):
    """Coefficients of a coarse dof function in the next-finer dof basis.

    Scale-invariant because dofs are (value, h * slope).  Keys are fine
    (node, kind) with fine node = 2 * coarse node + offset.
    """
    base = 2 * node
    if kind == V:
        return {
            (base - 1, V): 0.5,
            (base - 1, S): 0.75,
            (base, V): 1.0,
            (base + 1, V): 0.5,
            (base + 1, S): -0.75,
        }
    return {
        (base - 1, V): -0.125,
        (base - 1, S): -0.125,
        (base, S): 0.5,
        (base + 1, V): 0.125,
        (base + 1, S): -0.125,
    }


def _clip_mask(mask, n):
    """Drop dof keys that do not exist on a grid with n cells (boundary BC)."""
    out = {}
    for (node, kind), val in mask.items():
        if node < 0 or node > n:
            continue
        if kind == V and (node == 0 or node == n):
            continue
        out[(node, kind)] = val
    return out


class ConstructionError(RuntimeError):
    """The local Gram systems did not produce a valid complement basis."""


def _solve_block(level, dof_nodes, coarse_nodes):
    """Wavelet masks for one window.

    dof_nodes: fine nodes whose dofs span the window trial space.
    coarse_nodes: coarse nodes whose dofs give the orthogonality constraints.
    Returns a list of mask dicts {(node, kind): coeff} producing functions
    that are L2-orthonormal within the block.
    """
    n = 2**level
    nc = n // 2
    fine = []
    for node in dof_nodes:
        if 1 <= node <= n - 1:
            fine.append((node, V))
            fine.append((node, S))
        elif node in (0, n):
            fine.append((node, S))
    coarse = []
    for node in coarse_nodes:
        if 1 <= node <= nc - 1:
            coarse.append((node, V))
            coarse.append((node, S))
        elif node in (0, nc):
            coarse.append((node, S))
    fine_pp = [_dof_poly(level, nd, kd) for nd, kd in fine]
    coarse_pp = [_dof_poly(level - 1, nd, kd) for nd, kd in coarse]
    G = np.array([[inner_product(cp, fp) for fp in fine_pp] for cp in coarse_pp])
    N = null_space(G)
    if N.shape[1] == 0:
        raise ConstructionError("empty complement in window")
    M = np.array([[inner_product(a, b) for b in fine_pp] for a in fine_pp])
    B = N.T @ M @ N
    evals, evecs = eigh(B)
    if evals.min() <= 1e-10 * evals.max():
        raise ConstructionError("singular block Gram system")
    W = N @ (evecs @ np.diag(evals**-0.5) @ evecs.T)
    masks = []
    for col in range(W.shape[1]):
        entries = {}
        for row, dof in enumerate(fine):
            if abs(W[row, col]) > 1e-13:
                entries[dof] = float(W[row, col])
        masks.append(entries)
    # deterministic order and sign: by center of mass, then lexicographic
    def com(mask):
        wsum = sum(v * v for v in mask.values())
        return sum(node * v * v for (node, _), v in mask.items()) / wsum

    def keyfn(mask):
        return (round(com(mask), 9), sorted(mask.items()))

    masks.sort(key=keyfn)
    for mask in masks:
        anchor = min(mask)
        if mask[anchor] < 0:
            for dof in mask:
                mask[dof] = -mask[dof]
    return masks


class Basis1D:
    """Descriptor of the univariate basis: masks, supports, Riesz data."""

    def __init__(self, order=4):
        if order != 4:
            raise ConstructionError(
                "only the cubic (order 4) C^1 family is implemented"
            )
        self.order = order
        self.global_masks = {}  # level -> list of mask dicts (absolute nodes)
        self.left_masks = []  # 4 masks, absolute nodes at any level >= 4
        self.right_masks = []  # 4 masks, nodes stored as offsets from n
        self.interior_masks = []  # 2 masks, nodes as offsets from the new node
        self.g_scale = 1.0
        self.c_psi = None
        self.C_psi = None
        self._mask_cache = {}
        self._build()

    # -- construction ---------------------------------------------------

    def _build(self):
        for level in range(1, GLOBAL_LEVEL_MAX + 1):
            n = 2**level
            masks = _solve_block(level, range(0, n + 1), range(0, n // 2 + 1))
            expect = 2 ** (level - 1) * 2
            if len(masks) != expect:
                raise ConstructionError(
                    "level %d complement has %d functions, expected %d"
                    % (level, len(masks), expect)
                )
            self.global_masks[level] = masks
        lvl = _BUILD_LEVEL
        n = 2**lvl
        self.left_masks = _solve_block(lvl, range(0, 6), range(0, 4))
        if len(self.left_masks) != 4:
            raise ConstructionError("left block size %d" % len(self.left_masks))
        right = _solve_block(lvl, range(n - 5, n + 1), range(n // 2 - 3, n // 2 + 1))
        if len(right) != 4:
            raise ConstructionError("right block size %d" % len(right))
        self.right_masks = [
            {(node - n, kind): v for (node, kind), v in m.items()} for m in right
        ]
        i = n // 2 + 1  # interior new node (odd, well inside)
        coarse_nodes = [(i - 3) // 2, (i - 1) // 2, (i + 1) // 2, (i + 3) // 2]
        interior = _solve_block(lvl, range(i - 2, i + 3), coarse_nodes)
        if len(interior) != 2:
            raise ConstructionError("interior block size %d" % len(interior))
        self.interior_masks = [
            {(node - i, kind): v for (node, kind), v in m.items()} for m in interior
        ]
        self._validate_spanning()

    def _validate_spanning(self):
        """All level masks plus refined coarse dofs must span V_level."""
        for level in (2, 3, 4, _BUILD_LEVEL):
            n = 2**level
            dofs = phi_dofs(level)
            index = {dof: i for i, dof in enumerate(dofs)}
            cols = []
            for lam in self.level_indices(level):
                colv = np.zeros(len(dofs))
                for dof, val in self.mask(lam).items():
                    colv[index[dof]] = val
                cols.append(colv)
            for cn, ck in phi_dofs(level - 1):
                colv = np.zeros(len(dofs))
                for dof, val in _clip_mask(refinement_mask(cn, ck), n).items():
                    colv[index[dof]] = val
                cols.append(colv)
            A = np.column_stack(cols)
            if A.shape[0] != A.shape[1]:
                raise ConstructionError("dof count mismatch at level %d" % level)
            if np.linalg.matrix_rank(A) != A.shape[0]:
                raise ConstructionError("complement does not span level %d" % level)

    # -- index bookkeeping -----------------------------------------------

    def n_roots(self):
        return len(phi_dofs(0))

    def level_indices(self, level):
        """All wavelet indices (level, t, k) on one level."""
        if level == 0:
            return [(0, t, 0) for t in range(self.n_roots())]
        if level <= GLOBAL_LEVEL_MAX:
            count = len(self.global_masks[level])
            return [(level, idx % 2, idx // 2) for idx in range(count)]
        half = 2 ** (level - 1)
        out = []
        for k in range(half):
            out.append((level, 0, k))
            out.append((level, 1, k))
        return out

    def _case(self, lam):
        """(case, payload): case in {root, global, left, right, interior}."""
        level, t, k = lam
        if level == 0:
            return "root", t
        if level <= GLOBAL_LEVEL_MAX:
            return "global", 2 * k + t
        half = 2 ** (level - 1)
        if k <= 1:
            return "left", 2 * k + t
        if k >= half - 2:
            return "right", 2 * (k - (half - 2)) + t
        return "interior", t

    def mask(self, lam):
        """Mask over Phi_level dofs producing the L2-normalized generator."""
        got = self._mask_cache.get(lam)
        if got is None:
            got = self._mask_uncached(lam)
            self._mask_cache[lam] = got
        return got

    def _mask_uncached(self, lam):
        level, t, k = lam
        case, payload = self._case(lam)
        if case == "root":
            node, kind = phi_dofs(0)[payload]
            return {(node, kind): 1.0 / phi_dof_l2(0, node, kind)}
        if case == "global":
            return self.global_masks[level][payload]
        scale = 2.0 ** ((level - _BUILD_LEVEL) / 2.0)
        n = 2**level
        if case == "left":
            return {dof: scale * v for dof, v in self.left_masks[payload].items()}
        if case == "right":
            return {
                (node + n, kind): scale * v
                for (node, kind), v in self.right_masks[payload].items()
            }
        i = 2 * k + 1
        return {
            (node + i, kind): scale * v
            for (node, kind), v in self.interior_masks[t].items()
        }

    def support(self, lam):
        """(lo, hi) of the generator's support."""
        level, t, k = lam
        n = 2**level
        if level == 0:
            node, kind = phi_dofs(0)[t]
            return (max(0.0, node - 1.0), min(1.0, node + 1.0))
        mask = self.mask(lam)
        nodes = [node for node, _ in mask]
        return (max(0, min(nodes) - 1) / n, min(n, max(nodes) + 1) / n)

    def center(self, lam):
        """Center of mass of the squared mask; breaks parent ties."""
        level, t, k = lam
        if level == 0:
            node, _ = phi_dofs(0)[t]
            return float(node)
        mask = self.mask(lam)
        wsum = sum(v * v for v in mask.values())
        return sum(node * v * v for (node, _), v in mask.items()) / wsum / 2**level

    def level_indices_overlapping(self, level, lo, hi, tol=1e-12):
        """Indices on one level whose support overlaps (lo, hi)."""
        if lo >= hi:
            return []
        if level <= GLOBAL_LEVEL_MAX:
            return [
                lam
                for lam in self.level_indices(level)
                if self._overlap(self.support(lam), lo, hi, tol)
            ]
        n = 2**level
        half = n // 2
        out = []
        if lo < 6.0 / n:
            for t in range(2):
                for k in (0, 1):
                    lam = (level, t, k)
                    if self._overlap(self.support(lam), lo, hi, tol):
                        out.append(lam)
        kmin = max(2, (int(np.floor(lo * n)) - 3) // 2)
        kmax = min(half - 3, (int(np.ceil(hi * n)) + 3) // 2)
        for k in range(kmin, kmax + 1):
            i = 2 * k + 1
            if (i - 3) / n < hi - tol and (i + 3) / n > lo + tol:
                out.append((level, 0, k))
                out.append((level, 1, k))
        if hi > (n - 6.0) / n:
            for t in range(2):
                for k in (half - 2, half - 1):
                    lam = (level, t, k)
                    if self._overlap(self.support(lam), lo, hi, tol) and lam not in out:
                        out.append(lam)
        return sorted(set(out))

    @staticmethod
    def _overlap(sup, lo, hi, tol=1e-12):
        return sup[0] < hi - tol and sup[1] > lo + tol

    def pieces(self, lam):
        """L2-normalized generator as [(cell, coeffs)] on level-|lam| cells."""
        level = lam[0]
        acc = {}
        for (node, kind), w in self.mask(lam).items():
            for cell, c in phi_dof_pieces(level, node, kind):
                if cell in acc:
                    acc[cell] = poly_add(acc[cell], w * c)
                else:
                    acc[cell] = w * np.asarray(c)
        return [(cell, c) for cell, c in sorted(acc.items()) if np.any(c != 0.0)]

    # -- serialization ----------------------------------------------------

    def state(self):
        def enc_masks(masks):
            return [
                [[node, kind, val] for (node, kind), val in sorted(m.items())]
                for m in masks
            ]

        return {
            "version": 1,
            "order": self.order,
            "global": {str(l): enc_masks(m) for l, m in self.global_masks.items()},
            "left": enc_masks(self.left_masks),
            "right": enc_masks(self.right_masks),
            "interior": enc_masks(self.interior_masks),
            "g_scale": self.g_scale,
            "c_psi": self.c_psi,
            "C_psi": self.C_psi,
        }

    def load_state(self, state):
        def dec_masks(raw):
            return [
                {(int(n), int(k)): float(v) for n, k, v in entries} for entries in raw
            ]

        if state.get("version") != 1:
            raise ValueError("unknown descriptor version")
        self._mask_cache = {}
        self.global_masks = {int(l): dec_masks(m) for l, m in state["global"].items()}
        self.left_masks = dec_masks(state["left"])
        self.right_masks = dec_masks(state["right"])
        self.interior_masks = dec_masks(state["interior"])
        self.g_scale = state["g_scale"]
        self.c_psi = state["c_psi"]
        self.C_psi = state["C_psi"]


class BasisDescriptor:
    """Full basis interface for d = 1 or 2, including tree machinery.

    Wavelet indices are tuples (level, t, pos): for d=1 pos is the position
    k; for d=2, t in {1, 2, 3} selects (w x phi), (phi x w), (w x w) and pos
    is the pair of axis labels; level-0 indices are (0, 0, (i, j)).
    """

    def __init__(self, d, order=4, _defer=False):
        self.d = d
        self.one = Basis1D(order) if not _defer else None
        self._parent_cache = {}
        self._children_cache = {}
        self._pieces_cache = {}
        self._support_cache = {}
        self._coarser_cache = {}
        self._sigma_cache = {}
        self._cell_tree_cache = {}
        self._closure_cache = {}
        self._sigma_items_cache = {}
        if not _defer:
            self._calibrate()

    # -- calibration -------------------------------------------------------

    def _calibrate(self):
        """Fix the global H^1 normalization so c_psi * C_psi = 1 and record
        the Riesz range estimates from finite sections."""
        self.one.g_scale = 1.0
        lo, hi, _ = self.riesz_range(4 if self.d == 1 else 2)
        g = 1.0 / np.sqrt(lo * hi)
        self.one.g_scale = g
        self.one.c_psi = lo * g
        self.one.C_psi = hi * g

    def riesz_range(self, up_to_level):
        """(sqrt(min), sqrt(max), per-level list) of the H^1 Gram spectrum
        of the scaled basis restricted to levels <= L."""
        lams = []
        for lvl in range(up_to_level + 1):
            lams.extend(self.level_indices(lvl))
        per_level = []
        lo = hi = None
        for L in range(1, up_to_level + 1):
            sub = [lam for lam in lams if lam[0] <= L]
            G = np.zeros((len(sub), len(sub)))
            pps = [self.h1_function(lam) for lam in sub]
            for a in range(len(sub)):
                for b in range(a, len(sub)):
                    G[a, b] = G[b, a] = h1_inner_product(pps[a], pps[b])
            ev = np.linalg.eigvalsh(G)
            lo, hi = np.sqrt(ev[0]), np.sqrt(ev[-1])
            per_level.append((L, float(lo), float(hi)))
        return float(lo), float(hi), per_level

    @property
    def c_psi(self):
        return self.one.c_psi

    @property
    def C_psi(self):
        return self.one.C_psi

    @property
    def riesz_ratio(self):
        return self.one.C_psi / self.one.c_psi

    def h1_scale(self, lam):
        return self.one.g_scale * 2.0 ** (-lam[0])

    # -- index sets ---------------------------------------------------------

    def level_indices(self, level):
        if self.d == 1:
            return self.one.level_indices(level)
        if level == 0:
            n = self.one.n_roots()
            return [(0, 0, (i, j)) for i in range(n) for j in range(n)]
        w1 = self.one.level_indices(level)
        phi_prev = phi_dofs(level - 1)
        out = []
        for _, t, k in w1:
            wcode = 2 * k + t
            for c in range(len(phi_prev)):
                out.append((level, 1, (wcode, c)))
                out.append((level, 2, (c, wcode)))
        for _, t1, k1 in w1:
            for _, t2, k2 in w1:
                out.append((level, 3, (2 * k1 + t1, 2 * k2 + t2)))
        return sorted(set(out))

    def support(self, lam):
        got = self._support_cache.get(lam)
        if got is None:
            got = self._support_uncached(lam)
            self._support_cache[lam] = got
        return got

    def _support_uncached(self, lam):
        if self.d == 1:
            return (self.one.support(lam),)
        level, t, pos = lam
        if level == 0:
            i, j = pos
            return (
                self.one.support((0, i, 0)),
                self.one.support((0, j, 0)),
            )
        a, b = pos
        if t == 1:
            return (
                self.one.support((level, a % 2, a // 2)),
                self._phi_support(level - 1, b),
            )
        if t == 2:
            return (
                self._phi_support(level - 1, a),
                self.one.support((level, b % 2, b // 2)),
            )
        return (
            self.one.support((level, a % 2, a // 2)),
            self.one.support((level, b % 2, b // 2)),
        )

    def _phi_support(self, level, dof_idx):
        node, _ = phi_dofs(level)[dof_idx]
        n = 2**level
        return (max(0, node - 1) / n, min(n, node + 1) / n)

    def support_measure(self, lam):
        box = self.support(lam)
        out = 1.0
        for lo, hi in box:
            out *= max(0.0, hi - lo)
        return out

    def level_indices_overlapping(self, level, box, tol=1e-12):
        """Indices at `level` whose support overlaps the open box."""
        if self.d == 1:
            return self.one.level_indices_overlapping(level, box[0][0], box[0][1], tol)
        (lx, hx), (ly, hy) = box
        if level == 0:
            n = self.one.n_roots()
            out = []
            for i in range(n):
                if not Basis1D._overlap(self.one.support((0, i, 0)), lx, hx, tol):
                    continue
                for j in range(n):
                    if Basis1D._overlap(self.one.support((0, j, 0)), ly, hy, tol):
                        out.append((0, 0, (i, j)))
            return out
        wx = self.one.level_indices_overlapping(level, lx, hx, tol)
        wy = self.one.level_indices_overlapping(level, ly, hy, tol)
        px = self._phi_overlapping(level - 1, lx, hx, tol)
        py = self._phi_overlapping(level - 1, ly, hy, tol)
        out = []
        for _, t, k in wx:
            wcode = 2 * k + t
            for c in py:
                out.append((level, 1, (wcode, c)))
        for c in px:
            for _, t, k in wy:
                out.append((level, 2, (c, 2 * k + t)))
        for _, t1, k1 in wx:
            for _, t2, k2 in wy:
                out.append((level, 3, (2 * k1 + t1, 2 * k2 + t2)))
        return out

    def _phi_overlapping(self, level, lo, hi, tol=1e-12):
        dofs = phi_dofs(level)
        n = 2**level
        nmin = max(0, int(np.floor(lo * n)))
        nmax = min(n, int(np.ceil(hi * n)))
        out = []
        for idx, (node, _) in enumerate(dofs):
            if nmin - 1 <= node <= nmax + 1 and Basis1D._overlap(
                self._phi_support(level, idx), lo, hi, tol
            ):
                out.append(idx)
        return out

    # -- tree structure -------------------------------------------------------

    def center(self, lam):
        if self.d == 1:
            return (self.one.center(lam),)
        level, t, pos = lam
        if level == 0:
            i, j = pos
            return (self.one.center((0, i, 0)), self.one.center((0, j, 0)))
        a, b = pos
        cx = (
            self.one.center((level, a % 2, a // 2))
            if t in (1, 3)
            else self._phi_center(level - 1, a)
        )
        cy = (
            self.one.center((level, b % 2, b // 2))
            if t in (2, 3)
            else self._phi_center(level - 1, b)
        )
        return (cx, cy)

    def _phi_center(self, level, dof_idx):
        node, _ = phi_dofs(level)[dof_idx]
        return node / 2**level

    def parent(self, lam):
        """Designated parent: maximal support overlap at the coarser level;
        ties resolved by mask-center distance, then lexicographically."""
        if lam[0] == 0:
            return None
        par = self._parent_cache.get(lam)
        if par is None:
            box = self.support(lam)
            cands = self.level_indices_overlapping(lam[0] - 1, box)
            if not cands:
                raise StructureError("no overlapping parent for %r" % (lam,))
            ctr = self.center(lam)
            best = None
            best_key = None
            for cand in sorted(cands):
                m = self._overlap_measure(self.support(cand), box)
                dist = sum(
                    (a - b) ** 2 for a, b in zip(self.center(cand), ctr)
                )
                key = (-round(m, 12), round(dist, 12), cand)
                if best_key is None or key < best_key:
                    best, best_key = cand, key
            par = best
            self._parent_cache[lam] = par
        return par

    @staticmethod
    def _overlap_measure(box1, box2):
        out = 1.0
        for (a1, b1), (a2, b2) in zip(box1, box2):
            out *= max(0.0, min(b1, b2) - max(a1, a2))
        return out

    def children(self, lam):
        kids = self._children_cache.get(lam)
        if kids is None:
            box = self.support(lam)
            cands = self.level_indices_overlapping(lam[0] + 1, box)
            kids = tuple(sorted(c for c in cands if self.parent(c) == lam))
            self._children_cache[lam] = kids
        return kids

    def coarser_overlapping(self, lam):
        """All indices one level down with positive support overlap (the
        gradedness neighborhood)."""
        if lam[0] == 0:
            return ()
        got = self._coarser_cache.get(lam)
        if got is None:
            got = tuple(
                self.level_indices_overlapping(lam[0] - 1, self.support(lam))
            )
            self._coarser_cache[lam] = got
        return got

    def complete_to_tree(self, S):
        out = set(S)
        stack = [lam for lam in out if lam[0] > 0]
        while stack:
            lam = stack.pop()
            par = self.parent(lam)
            if par is not None and par not in out:
                out.add(par)
                stack.append(par)
        out.update(self.level_indices(0))
        return out

    def complete_to_graded(self, S):
        """Smallest graded tree containing S; idempotent."""
        out = set(self.level_indices(0))
        for lam in S:
            if lam[0] > 0:
                out.update(self.graded_closure(lam))
            else:
                out.add(lam)
        return out

    def is_graded(self, S):
        Sset = set(S)
        for lam in Sset:
            if lam[0] == 0:
                continue
            if self.parent(lam) not in Sset:
                return False
            for nb in self.coarser_overlapping(lam):
                if nb not in Sset:
                    return False
        return True

    def is_tree(self, S):
        Sset = set(S)
        for lam in self.level_indices(0):
            if lam not in Sset:
                return False
        for lam in Sset:
            if lam[0] > 0 and self.parent(lam) not in Sset:
                return False
        return True

    def graded_closure(self, lam):
        """Smallest graded tree fragment containing lam (without the
        level-0 block), cached; unions of closures are graded."""
        got = self._closure_cache.get(lam)
        if got is None:
            if lam[0] == 0:
                got = frozenset((lam,))
            else:
                acc = {lam}
                par = self.parent(lam)
                if par is not None:
                    acc.update(self.graded_closure(par))
                for nb in self.coarser_overlapping(lam):
                    acc.update(self.graded_closure(nb))
                got = frozenset(acc)
            self._closure_cache[lam] = got
        return got

    def tree_from_tiling(self, cells, lhat):
        """Graded tree with all indices up to lhat levels above each cell."""
        S = set(self.level_indices(0))
        for cell in cells:
            key = (cell, lhat)
            got = self._cell_tree_cache.get(key)
            if got is None:
                j = cell[0]
                box = cell_box(cell)
                raw = set()
                for level in range(0, j + lhat + 1):
                    raw.update(self.level_indices_overlapping(level, box))
                closed = set()
                for lam in raw:
                    closed.update(self.graded_closure(lam))
                got = frozenset(closed)
                self._cell_tree_cache[key] = got
            S.update(got)
        return S

    # -- generators as piecewise polynomials ---------------------------------

    def pieces(self, lam):
        """L2-normalized generator pieces [(cell, coeffs)]."""
        got = self._pieces_cache.get(lam)
        if got is None:
            if self.d == 1:
                got = self.one.pieces(lam)
            else:
                got = self._pieces_2d(lam)
            self._pieces_cache[lam] = got
        return got

    def _axis_pieces(self, level, code, is_wavelet):
        if is_wavelet:
            return self.one.pieces((level, code % 2, code // 2))
        node, kind = phi_dofs(level - 1)[code]
        nrm = phi_dof_l2(level - 1, node, kind)
        return [
            (cell, np.asarray(c) / nrm) for cell, c in phi_dof_pieces(level - 1, node, kind)
        ]

    def _pieces_2d(self, lam):
        level, t, pos = lam
        if level == 0:
            i, j = pos
            px = self.one.pieces((0, i, 0))
            py = self.one.pieces((0, j, 0))
        else:
            a, b = pos
            px = self._axis_pieces(level, a, t in (1, 3))
            py = self._axis_pieces(level, b, t in (2, 3))
        out = []
        for (jx, (kx,)), cx in px:
            for (jy, (ky,)), cy in py:
                # bring both to the finer of the two axis levels
                jj = max(jx, jy)
                for sx in range(2 ** (jj - jx)):
                    for sy in range(2 ** (jj - jy)):
                        cellx = (kx << (jj - jx)) + sx
                        celly = (ky << (jj - jy)) + sy
                        ax = restrict_coeffs(cx, (jx, (kx,)), (jj, (cellx,)))
                        ay = restrict_coeffs(cy, (jy, (ky,)), (jj, (celly,)))
                        out.append(((jj, (cellx, celly)), np.outer(ax, ay)))
        return out

    def h1_function(self, lam):
        """The H^1-scaled basis function as a PiecewisePoly."""
        s = self.h1_scale(lam)
        return PiecewisePoly(
            self.d, {cell: s * np.asarray(c) for cell, c in self.pieces(lam)}
        )

    def mean_value(self, lam):
        """Integral of the generator (vanishing moment check)."""
        total = 0.0
        for cell, c in self.pieces(lam):
            total += poly_integral_local(c) * (0.5 ** (cell[0] * self.d))
        return total

    # -- multiscale <-> locally single-scale transforms ------------------------

    def _sigma_mask(self, lam):
        """Mask of the H^1-scaled function over single-scale dofs.

        Keys: d=1 (level, node, kind); d=2 (level, (nx, kx), (ny, ky)).
        Level-l wavelets use Phi_l dofs; for d=2 mixed types the coarse
        scaling factor is refined one level so everything sits in Phi_l.
        """
        got = self._sigma_cache.get(lam)
        if got is not None:
            return got
        got = self._sigma_mask_uncached(lam)
        self._sigma_cache[lam] = got
        return got

    def _sigma_mask_uncached(self, lam):
        level = lam[0]
        s = self.h1_scale(lam)
        if self.d == 1:
            return {
                (level, node, kind): s * v
                for (node, kind), v in self.one.mask(lam).items()
            }
        _, t, pos = lam
        if level == 0:
            i, j = pos
            mx = self.one.mask((0, i, 0))
            my = self.one.mask((0, j, 0))
        else:
            a, b = pos
            mx = self._axis_sigma(level, a, t in (1, 3))
            my = self._axis_sigma(level, b, t in (2, 3))
        out = {}
        for (nx, kx), vx in mx.items():
            for (ny, ky), vy in my.items():
                out[(level, (nx, kx), (ny, ky))] = s * vx * vy
        return out

    def _axis_sigma(self, level, code, is_wavelet):
        if is_wavelet:
            return self.one.mask((level, code % 2, code // 2))
        node, kind = phi_dofs(level - 1)[code]
        nrm = phi_dof_l2(level - 1, node, kind)
        n = 2**level
        return {
            dof: v / nrm for dof, v in _clip_mask(refinement_mask(node, kind), n).items()
        }

    def multiscale_to_singlescale(self, Shat, w, check_graded=True):
        """Coefficients s over Sigma(Shat) with sum w_lam psi~_lam =
        sum s_dof phi_dof, block-diagonal by level."""
        if check_graded and not self.is_graded(Shat):
            raise StructureError("index set is not a graded tree")
        s = {}
        for lam, val in w.items():
            if val == 0.0:
                continue
            for dof, m in self._sigma_mask(lam).items():
                s[dof] = s.get(dof, 0.0) + val * m
        return s

    def sigma_dofs(self, Shat):
        """The single-scale index set Sigma(Shat) used by the transforms."""
        out = set()
        for lam in Shat:
            out.update(self._sigma_mask(lam).keys())
        return out

    def transpose_transform(self, Shat, s, check_graded=True):
        """r_lam = sum_dof mask_lam[dof] * s[dof] for lam in Shat."""
        if check_graded and not self.is_graded(Shat):
            raise StructureError("index set is not a graded tree")
        out = {}
        for lam in Shat:
            acc = 0.0
            for dof, m in self._sigma_mask(lam).items():
                v = s.get(dof)
                if v is not None:
                    acc += m * v
            out[lam] = acc
        return out

    def phi_dof_pieces_nd(self, dof):
        """Pieces of a single-scale dof function (as used by the transforms)."""
        if self.d == 1:
            level, node, kind = dof
            return phi_dof_pieces(level, node, kind)
        level, (nx, kx), (ny, ky) = dof
        px = phi_dof_pieces(level, nx, kx)
        py = phi_dof_pieces(level, ny, ky)
        out = []
        for (j, (cx,)), ax in px:
            for (_, (cy,)), ay in py:
                out.append(((j, (cx, cy)), np.outer(ax, ay)))
        return out

    def reconstruct(self, w):
        """Tree-supported coefficient dict -> PiecewisePoly (exact)."""
        if not w:
            return PiecewisePoly(self.d, {})
        s = self.multiscale_to_singlescale(set(w), w, check_graded=False)
        contribs = []
        for dof, val in s.items():
            if val == 0.0:
                continue
            for cell, c in self.phi_dof_pieces_nd(dof):
                contribs.append((cell, val * np.asarray(c)))
        return to_minimal_tiling(self.d, contribs)

    def dual_coefficients(self, r, Shat, check_graded=False):
        """(r(psi~_lam))_{lam in Shat} via single-scale integrals and the
        transpose transform; exact for piecewise polynomial r."""
        rindex = _PieceIndex(r)
        memo = {}
        out = {}
        integrate = rindex.integrate_against
        for lam in Shat:
            acc = 0.0
            for dof, m in self._sigma_items(lam):
                v = memo.get(dof)
                if v is None:
                    v = 0.0
                    for cell, c in self.phi_dof_pieces_nd(dof):
                        v += integrate(cell, c)
                    memo[dof] = v
                acc += m * v
            out[lam] = acc
        return out

    def _sigma_items(self, lam):
        got = self._sigma_items_cache.get(lam)
        if got is None:
            got = tuple(self._sigma_mask(lam).items())
            self._sigma_items_cache[lam] = got
        return got

    def dual_coefficients_direct(self, r, Shat):
        """Same values by direct quadrature of r against each wavelet."""
        out = {}
        for lam in Shat:
            pp = self.h1_function(lam)
            out[lam] = inner_product(r, pp)
        return out

    def _integrate_against_dof(self, r, dof, rindex=None):
        if rindex is None:
            rindex = _PieceIndex(r)
        total = 0.0
        for cell, c in self.phi_dof_pieces_nd(dof):
            total += rindex.integrate_against(cell, c)
        return total

    # -- persistence -----------------------------------------------------------

    def save(self, path):
        state = {"d": self.d, "one": self.one.state()}
        with open(path, "w") as fh:
            json.dump(state, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            state = json.load(fh)
        obj = cls(state["d"], _defer=True)
        obj.one = Basis1D.__new__(Basis1D)
        obj.one.order = state["one"]["order"]
        obj.one.load_state(state["one"])
        return obj


def cell_box_contains(anc, desc):
    ja, ka = anc
    jd, kd = desc
    if jd < ja:
        return False
    s = jd - ja
    return all((b >> s) == a for a, b in zip(ka, kd))


def _meas(cell):
    return 0.5 ** (cell[0] * len(cell[1]))


class _PieceIndex:
    """Ancestor/descendant lookup structure over the disjoint cells of a
    piecewise polynomial, for O(depth + hits) overlap queries."""

    __slots__ = ("pieces", "below", "min_level")

    def __init__(self, r):
        self.pieces = r.pieces
        below = {}
        min_level = 0
        if r.pieces:
            min_level = min(c[0] for c in r.pieces)
        for cell in r.pieces:
            p = cell_parent(cell)
            while p is not None and p[0] >= min_level - 1:
                below.setdefault(p, []).append(cell)
                p = cell_parent(p)
        self.below = below
        self.min_level = min_level

    def integrate_against(self, cell, coeffs):
        """Integral of r times the polynomial `coeffs` given on `cell`."""
        total = 0.0
        pieces = self.pieces
        # r-cells strictly below the query cell
        for rc in self.below.get(cell, ()):
            sub = restrict_coeffs(coeffs, cell, rc)
            total += poly_pair_integral(sub, pieces[rc]) * _meas(rc)
        # the r-cell at or above the query cell (at most one; cells disjoint)
        probe = cell
        floor = self.min_level
        while probe is not None and probe[0] >= floor:
            rp = pieces.get(probe)
            if rp is not None:
                if probe == cell:
                    total += poly_pair_integral(coeffs, rp) * _meas(cell)
                else:
                    sub = restrict_coeffs(rp, probe, cell)
                    total += poly_pair_integral(sub, coeffs) * _meas(cell)
                break
            probe = cell_parent(probe)
        return total


def build_basis(d, order=4):
    """Construct and calibrate the basis descriptor."""
    return BasisDescriptor(d, order)
