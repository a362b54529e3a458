"""Affine multilevel diffusion coefficients built from hierarchical hats.

The expansion a(y) = theta_0 + sum_mu y_mu theta_mu uses dilated/translated
hat functions theta(x) = max(1 - |2x - 1|, 0).  For d=1 the level-l family
is theta_{l,k}(x) = c 2^{-alpha l} theta(2^l x - k), k = 0..2^l - 1; for
d=2 the isotropic products over the index grid with half-integer shifts
where at least one coordinate shift is integral.  Coordinates are numbered
by level, then lexicographic position, which fixes the coordinate ids used
by the stochastic multi-indices.
"""

from __future__ import annotations

import numpy as np

from .tiling import PiecewisePoly, constant_poly


class NonEllipticError(ValueError):
    """theta_0 - sum |theta_mu| is not bounded away from zero."""


def _hat(s):
    s = np.asarray(s, dtype=float)
    return np.maximum(1.0 - np.abs(2.0 * s - 1.0), 0.0)


def _hat_pieces_1d(level, kk2, amp):
    """Pieces of amp * theta(2^l x - kk2/2) on cells of level l+1.

    kk2 is the doubled position (even for integer shifts, odd for the
    half-integer shifts of the 2d family).  Support is
    [kk2 / 2^{l+1}, kk2 / 2^{l+1} + 2^{-l}], i.e. two level-(l+1) cells.
    Returns [(j, cell_index, coeffs), ...] with the rising piece first.
    """
    j = level + 1
    return [
        (j, kk2, np.array([0.0, amp])),
        (j, kk2 + 1, np.array([amp, -amp])),
    ]


class CoeffField:
    """Hat-family coefficient field with a fixed enumeration of M."""

    def __init__(self, d, alpha, c, L_max, theta0=None):
        if d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if alpha <= 0 or c < 0 or L_max < 0:
            raise ValueError("need alpha > 0, c >= 0, L_max >= 0")
        self.d = d
        self.alpha = float(alpha)
        self.c = float(c)
        self.L_max = int(L_max)
        self.theta0 = theta0 if theta0 is not None else constant_poly(d, 1.0)
        self._theta_cache = {}
        self._level_offsets = self._build_offsets()
        self._ellipticity = None
        # for d=2: per-level list of (K1, K2) doubled positions
        self._pos2 = {}

    # -- enumeration ----------------------------------------------------

    def _level_count(self, level):
        if self.d == 1:
            return 2**level
        n_all = 2 ** (level + 1) - 1  # doubled positions 0..2^{l+1}-2
        n_half = 2**level - 1
        return n_all * n_all - n_half * n_half

    def _build_offsets(self):
        offsets = [0]
        for lvl in range(self.L_max + 1):
            offsets.append(offsets[-1] + self._level_count(lvl))
        return offsets

    @property
    def count(self):
        """Total number of coordinates (the truncated M)."""
        return self._level_offsets[-1]

    def _positions2(self, level):
        pos = self._pos2.get(level)
        if pos is None:
            n_all = 2 ** (level + 1) - 1
            pos = [
                (K1, K2)
                for K1 in range(n_all)
                for K2 in range(n_all)
                if K1 % 2 == 0 or K2 % 2 == 0
            ]
            self._pos2[level] = pos
        return pos

    def level_of(self, mu_id):
        if not 1 <= mu_id <= self.count:
            raise KeyError(mu_id)
        lo, hi = 0, self.L_max
        while lo < hi:
            mid = (lo + hi) // 2
            if self._level_offsets[mid + 1] >= mu_id:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def position_of(self, mu_id):
        """(level, doubled position tuple); positions are doubled so that
        the d=2 half-integer shifts map to integers."""
        lvl = self.level_of(mu_id)
        rank = mu_id - 1 - self._level_offsets[lvl]
        if self.d == 1:
            return lvl, (2 * rank,)
        return lvl, self._positions2(lvl)[rank]

    def id_of(self, level, pos):
        """Inverse of position_of (pos doubled)."""
        if self.d == 1:
            return self._level_offsets[level] + pos[0] // 2 + 1
        rank = self._positions2(level).index(tuple(pos))
        return self._level_offsets[level] + rank + 1

    # -- realizations -----------------------------------------------------

    def amplitude(self, level):
        return self.c * 2.0 ** (-self.alpha * level)

    def theta(self, mu_id):
        pp = self._theta_cache.get(mu_id)
        if pp is None:
            lvl, pos = self.position_of(mu_id)
            amp = self.amplitude(lvl)
            if self.d == 1:
                pieces = {
                    (j, (k,)): amp * coeffs
                    for j, k, coeffs in _hat_pieces_1d(lvl, pos[0], 1.0)
                }
                pp = PiecewisePoly(1, pieces)
            else:
                px = _hat_pieces_1d(lvl, pos[0], 1.0)
                py = _hat_pieces_1d(lvl, pos[1], 1.0)
                pieces = {}
                for j, cx, ax in px:
                    for _, cy, ay in py:
                        pieces[(j, (cx, cy))] = amp * np.outer(ax, ay)
                pp = PiecewisePoly(2, pieces)
            self._theta_cache[mu_id] = pp
        return pp

    def support_box(self, mu_id):
        """((lo, hi), ...) of supp theta_mu."""
        lvl, pos = self.position_of(mu_id)
        h = 0.5 ** (lvl + 1)
        return tuple((K * h, K * h + 2 * h) for K in pos)

    def ids_overlapping(self, level, box):
        """Coordinate ids at a given level whose support overlaps the open box."""
        if level > self.L_max:
            return []
        h = 0.5 ** (level + 1)
        ranges = []
        for lo, hi in box:
            kmin = int(np.floor(lo / h)) - 1
            kmax = int(np.ceil(hi / h))
            kmin = max(kmin, 0)
            kmax = min(kmax, 2 ** (level + 1) - 2)
            ranges.append((kmin, kmax))
        out = []
        if self.d == 1:
            kmin, kmax = ranges[0]
            for K in range(kmin, kmax + 1):
                if K % 2 == 0 and self._overlaps(level, (K,), box):
                    out.append(self._level_offsets[level] + K // 2 + 1)
        else:
            pos_list = self._positions2(level)
            (k1min, k1max), (k2min, k2max) = ranges
            index = {p: r for r, p in enumerate(pos_list)}
            for K1 in range(k1min, k1max + 1):
                for K2 in range(k2min, k2max + 1):
                    if K1 % 2 and K2 % 2:
                        continue
                    if not self._overlaps(level, (K1, K2), box):
                        continue
                    r = index.get((K1, K2))
                    if r is not None:
                        out.append(self._level_offsets[level] + r + 1)
        return out

    def _overlaps(self, level, pos, box):
        h = 0.5 ** (level + 1)
        for K, (lo, hi) in zip(pos, box):
            if K * h >= hi - 1e-15 or K * h + 2 * h <= lo + 1e-15:
                return False
        return True

    # -- structural constants ----------------------------------------------

    def C2(self):
        """Levelwise bound: ess-sup sum_{|mu|=l} |theta_mu| <= C2 2^{-alpha l}."""
        return self.c

    def level_sum_sup(self, grid_pow=12):
        """Measured sup over x of sum_mu |theta_mu(x)| for the truncated field,
        computed on the vertex grid where the sum is piecewise (bi)linear,
        plus a sound tail bound for levels above the grid resolution."""
        if self.c == 0.0:
            return 0.0
        if self.d == 1:
            G = grid_pow
            x = np.linspace(0.0, 1.0, 2**(G + 1) + 1)
            total = np.zeros_like(x)
            for lvl in range(min(self.L_max, G) + 1):
                total += self.amplitude(lvl) * _hat(2**lvl * x - np.floor(2**lvl * x))
            exact = float(np.max(total))
            tail_from = min(self.L_max, G) + 1
        else:
            G = min(grid_pow, 7)
            n = 2**(G + 1) + 1
            x = np.linspace(0.0, 1.0, n)
            X, Y = np.meshgrid(x, x, indexing="ij")
            total = np.zeros_like(X)
            for lvl in range(min(self.L_max, G) + 1):
                sx = 2**lvl * X
                sy = 2**lvl * Y
                # A: all shifts spaced 1/2; H: half-integer shifts only
                Ax = _hat(sx - np.floor(sx)) + self._half_family(sx, lvl)
                Ay = _hat(sy - np.floor(sy)) + self._half_family(sy, lvl)
                Hx = self._half_family(sx, lvl)
                Hy = self._half_family(sy, lvl)
                total += self.amplitude(lvl) * (Ax * Ay - Hx * Hy)
            exact = float(np.max(total))
            tail_from = min(self.L_max, G) + 1
        if tail_from <= self.L_max:
            a = self.alpha
            tail = self.c * 2.0 ** (-a * tail_from) / (1.0 - 2.0**-a)
        else:
            tail = 0.0
        return exact + tail

    @staticmethod
    def _half_family(s, lvl):
        """sum over half-integer shifts k of theta(s - k) within [0, 2^l - 1]."""
        t = s - 0.5
        vals = _hat(t - np.floor(t))
        # half shifts exist only for k in {1/2, ..., 2^l - 3/2}: t in (0, 2^l - 1)
        mask = (t > 0.0) & (t < 2**lvl - 1.0)
        return np.where(mask, vals, 0.0)

    def ellipticity_constant(self):
        """r = ess-inf(theta_0 - sum |theta_mu|), sound from below."""
        if self._ellipticity is None:
            sup_sum = self.level_sum_sup()
            # theta_0 minimum: exact for a constant; sampled for general pieces
            if len(self.theta0.pieces) == 1:
                coeffs = next(iter(self.theta0.pieces.values()))
                if np.asarray(coeffs).size == 1:
                    t0min = float(np.asarray(coeffs).ravel()[0])
                else:
                    t0min = self._theta0_min()
            else:
                t0min = self._theta0_min()
            r = t0min - sup_sum
            if r <= 0:
                raise NonEllipticError("ellipticity constant %.3g <= 0" % r)
            self._ellipticity = r
        return self._ellipticity

    def _theta0_min(self):
        if self.d == 1:
            x = np.linspace(0, 1, 4097)
            return float(np.min(self.theta0.eval(x)))
        x = np.linspace(0, 1, 257)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return float(np.min(self.theta0.eval((X.ravel(), Y.ravel()))))

    def theta0_sup(self):
        if len(self.theta0.pieces) == 1:
            coeffs = np.asarray(next(iter(self.theta0.pieces.values())))
            if coeffs.size == 1:
                return float(coeffs.ravel()[0])
        if self.d == 1:
            x = np.linspace(0, 1, 4097)
            return float(np.max(self.theta0.eval(x)))
        x = np.linspace(0, 1, 257)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return float(np.max(self.theta0.eval((X.ravel(), Y.ravel()))))

    def level_truncation_constant(self, riesz_ratio):
        """C_B = (C_Psi / c_Psi) * C2 / (1 - 2^{-alpha})."""
        return riesz_ratio * self.C2() / (1.0 - 2.0**-self.alpha)

    def overlap_bound(self, up_to_level=None):
        """Max count of same-level thetas sharing support with any theta."""
        best = 0
        top = self.L_max if up_to_level is None else min(up_to_level, self.L_max)
        for lvl in range(top + 1):
            if self.d == 1:
                best = max(best, 1)
                continue
            pos = self._positions2(lvl)
            posset = set(pos)
            for K1, K2 in pos:
                n = 0
                for d1 in (-1, 0, 1):
                    for d2 in (-1, 0, 1):
                        q = (K1 + d1, K2 + d2)
                        if q != (K1, K2) and q in posset:
                            n += 1
                best = max(best, n + 1)
        return best


def make_hat_field(d, alpha, c, L_max=24, theta0=None):
    return CoeffField(d, alpha, c, L_max, theta0)
