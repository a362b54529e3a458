"""Dyadic cells, tilings, and piecewise-polynomial calculus on (0,1)^d.

A cell is (level j, position k) with k a d-tuple, covering the box
prod_i (k_i 2^-j, (k_i+1) 2^-j).  A PiecewisePoly maps disjoint cells to
monomial coefficient arrays in cell-local coordinates (the cell mapped to
the unit cube), which keeps coefficients well-scaled at deep levels.
All products, derivatives and integrals are exact polynomial operations;
numerical quadrature appears only in the test oracles.
"""

from __future__ import annotations

import heapq

import numpy as np

DEGREE_CAP = 12


class StructureError(ValueError):
    """Input violates a structural precondition (tree/tiling shape)."""


class DegreeOverflowError(ValueError):
    """Polynomial degree exceeds the configured cap."""


# ---------------------------------------------------------------------------
# cell arithmetic


def cell_children(cell):
    j, k = cell
    if len(k) == 1:
        (a,) = k
        return [(j + 1, (2 * a,)), (j + 1, (2 * a + 1,))]
    a, b = k
    return [
        (j + 1, (2 * a, 2 * b)),
        (j + 1, (2 * a, 2 * b + 1)),
        (j + 1, (2 * a + 1, 2 * b)),
        (j + 1, (2 * a + 1, 2 * b + 1)),
    ]


def cell_parent(cell):
    j, k = cell
    if j == 0:
        return None
    if len(k) == 1:
        return (j - 1, (k[0] >> 1,))
    return (j - 1, (k[0] >> 1, k[1] >> 1))


def cell_box(cell):
    """((lo_1, hi_1), ..., (lo_d, hi_d)) as floats."""
    j, k = cell
    h = 0.5**j
    return tuple((a * h, (a + 1) * h) for a in k)


def cell_measure(cell):
    j, k = cell
    return 0.5 ** (j * len(k))


def cell_contains(anc, desc):
    """True if desc is equal to or a descendant of anc."""
    ja, ka = anc
    jd, kd = desc
    if jd < ja:
        return False
    s = jd - ja
    return all((b >> s) == a for a, b in zip(ka, kd))


def root_cell(d):
    return (0, (0,) * d)


def is_tiling(cells, d):
    """Disjoint interiors and full coverage of (0,1)^d, by measure."""
    cells = list(cells)
    for i, c in enumerate(cells):
        for c2 in cells[i + 1 :]:
            if cell_contains(c, c2) or cell_contains(c2, c):
                return False
    total = sum(cell_measure(c) for c in cells)
    return abs(total - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# local polynomial helpers (monomial coefficients on [0,1]^d)

_SUBDIV = {}


def _subdiv_matrix(half):
    """Matrix taking p to the coefficients of p((t + half)/2)."""
    M = _SUBDIV.get(half)
    if M is None:
        n = DEGREE_CAP + 1
        M = np.zeros((n, n))
        for i in range(n):
            # ((t + half)/2)^i expanded in t
            coeffs = np.zeros(n)
            coeffs[0] = 1.0
            for _ in range(i):
                shifted = np.roll(coeffs, 1)
                shifted[0] = 0.0
                coeffs = shifted + half * coeffs
            M[:, i] = coeffs * (0.5**i)
        _SUBDIV[half] = M
    return M


_EXTEND = {}


def _extend_matrix(half):
    """Matrix taking child coefficients q to p with q(t) = p((t+half)/2),
    i.e. the coefficients of q(2 s - half) in the parent coordinate s."""
    M = _EXTEND.get(half)
    if M is None:
        n = DEGREE_CAP + 1
        M = np.zeros((n, n))
        for i in range(n):
            coeffs = np.zeros(n)
            coeffs[0] = 1.0
            for _ in range(i):
                shifted = np.roll(coeffs, 1)
                shifted[0] = 0.0
                coeffs = 2.0 * shifted - half * coeffs
            M[:, i] = coeffs
        _EXTEND[half] = M
    return M


def _apply_sep(M0, M1, c):
    if c.ndim == 1:
        return M0[: len(c), : len(c)] @ c
    return (
        M0[: c.shape[0], : c.shape[0]]
        @ c
        @ M1[: c.shape[1], : c.shape[1]].T
    )


_RESTRICT_PATH = {}


def _path_matrix(path):
    """Composite restriction matrix for a tuple of half-bits, coarse first."""
    M = _RESTRICT_PATH.get(path)
    if M is None:
        M = _subdiv_matrix(path[0])
        for b in path[1:]:
            M = _subdiv_matrix(b) @ M
        _RESTRICT_PATH[path] = M
    return M


def restrict_coeffs(coeffs, cell, subcell):
    """Restrict local coefficients on cell to a descendant subcell."""
    j, k = cell
    js, ks = subcell
    steps = js - j
    if steps == 0:
        return np.asarray(coeffs, dtype=float)
    out = np.asarray(coeffs, dtype=float)
    if len(k) == 1:
        path = tuple((ks[0] >> (steps - 1 - s)) & 1 for s in range(steps))
        M = _path_matrix(path)
        return M[: len(out), : len(out)] @ out
    px = tuple((ks[0] >> (steps - 1 - s)) & 1 for s in range(steps))
    py = tuple((ks[1] >> (steps - 1 - s)) & 1 for s in range(steps))
    Mx = _path_matrix(px)
    My = _path_matrix(py)
    return Mx[: out.shape[0], : out.shape[0]] @ out @ My[: out.shape[1], : out.shape[1]].T


def extend_to_parent(coeffs, child_cell):
    """Parent-cell coefficients of the polynomial given on one child."""
    j, k = child_cell
    d = len(k)
    halves = tuple(a & 1 for a in k)
    c = np.asarray(coeffs, dtype=float)
    if d == 1:
        return _apply_sep(_extend_matrix(halves[0]), None, c)
    return _apply_sep(_extend_matrix(halves[0]), _extend_matrix(halves[1]), c)


def poly_eval_local(coeffs, pts):
    """Evaluate local-coordinate coefficients at points in [0,1]^d."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        return np.polynomial.polynomial.polyval(pts, c)
    x, y = pts
    return np.polynomial.polynomial.polyval2d(x, y, c)


def poly_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        out = np.convolve(a, b)
    else:
        out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
        for i in range(a.shape[0]):
            row = a[i]
            for j in range(a.shape[1]):
                if row[j]:
                    out[i : i + b.shape[0], j : j + b.shape[1]] += row[j] * b
    if max(out.shape) - 1 > DEGREE_CAP:
        raise DegreeOverflowError("degree %d exceeds cap" % (max(out.shape) - 1))
    return out


def poly_diff(c, axis=0):
    """Local-coordinate derivative (no level factor)."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        if len(c) <= 1:
            return np.zeros(1)
        return c[1:] * np.arange(1, len(c))
    if axis == 0:
        if c.shape[0] <= 1:
            return np.zeros((1, c.shape[1]))
        return c[1:, :] * np.arange(1, c.shape[0])[:, None]
    if c.shape[1] <= 1:
        return np.zeros((c.shape[0], 1))
    return c[:, 1:] * np.arange(1, c.shape[1])[None, :]


_INTW = [1.0 / np.arange(1, n + 1) for n in range(1, 2 * DEGREE_CAP + 4)]
_PAIRH = None


def _pair_matrix():
    global _PAIRH
    if _PAIRH is None:
        n = 2 * DEGREE_CAP + 4
        i = np.arange(n)
        _PAIRH = 1.0 / (i[:, None] + i[None, :] + 1.0)
    return _PAIRH


def poly_integral_local(c):
    """Integral over the unit cube of the local polynomial."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        return float(c @ _INTW[len(c) - 1])
    wx = _INTW[c.shape[0] - 1]
    wy = _INTW[c.shape[1] - 1]
    return float(wx @ c @ wy)


def poly_pair_integral(p, q):
    """Integral over the unit cube of p * q without forming the product."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    H = _pair_matrix()
    if p.ndim == 1:
        return float(p @ H[: len(p), : len(q)] @ q)
    Hx = H[: p.shape[0], : q.shape[0]]
    Hy = H[: p.shape[1], : q.shape[1]]
    return float(np.sum(p * (Hx @ q @ Hy.T)))


def _pad_to(c, shape):
    c = np.asarray(c, dtype=float)
    out = np.zeros(shape)
    if c.ndim == 1:
        out[: len(c)] = c
    else:
        out[: c.shape[0], : c.shape[1]] = c
    return out


def poly_add(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        n = max(len(a), len(b))
        return _pad_to(a, (n,)) + _pad_to(b, (n,))
    shape = (max(a.shape[0], b.shape[0]), max(a.shape[1], b.shape[1]))
    return _pad_to(a, shape) + _pad_to(b, shape)


def _is_zero_poly(c, tol=0.0):
    return bool(np.all(np.abs(c) <= tol))


# ---------------------------------------------------------------------------
# PiecewisePoly


class PiecewisePoly:
    """Piecewise polynomial over disjoint dyadic cells of (0,1)^d."""

    __slots__ = ("d", "pieces")

    def __init__(self, d, pieces=None):
        self.d = d
        self.pieces = dict(pieces or {})

    def copy(self):
        return PiecewisePoly(self.d, {c: np.array(p) for c, p in self.pieces.items()})

    def is_zero(self):
        return not self.pieces

    def cells(self):
        return sorted(self.pieces)

    def support_cells(self, tol=0.0):
        return [c for c in sorted(self.pieces) if not _is_zero_poly(self.pieces[c], tol)]

    def bounding_box(self):
        if not self.pieces:
            return None
        boxes = [cell_box(c) for c in self.pieces]
        return tuple(
            (min(b[i][0] for b in boxes), max(b[i][1] for b in boxes))
            for i in range(self.d)
        )

    def eval(self, points):
        """Evaluate at global points; shape (n,) for d=1, (2, n) for d=2."""
        pts = np.asarray(points, dtype=float)
        if self.d == 1:
            x = np.atleast_1d(pts)
            out = np.zeros_like(x)
            for (j, (k,)), c in self.pieces.items():
                h = 0.5**j
                lo, hi = k * h, (k + 1) * h
                m = (x >= lo) & (x <= hi)
                if np.any(m):
                    out[m] = poly_eval_local(c, np.clip((x[m] - lo) / h, 0, 1))
            return out
        x, y = pts
        out = np.zeros_like(np.atleast_1d(x), dtype=float)
        for (j, (kx, ky)), c in self.pieces.items():
            h = 0.5**j
            m = (x >= kx * h) & (x <= (kx + 1) * h) & (y >= ky * h) & (y <= (ky + 1) * h)
            if np.any(m):
                tx = np.clip((x[m] - kx * h) / h, 0, 1)
                ty = np.clip((y[m] - ky * h) / h, 0, 1)
                out[m] = poly_eval_local(c, (tx, ty))
        return out

    def integral(self):
        return sum(
            cell_measure(c) * poly_integral_local(p) for c, p in self.pieces.items()
        )

    def l2_norm_sq(self):
        return sum(
            cell_measure(c) * poly_integral_local(poly_mul(p, p))
            for c, p in self.pieces.items()
        )

    def h1_seminorm_sq(self):
        total = 0.0
        for cell, p in self.pieces.items():
            fac = 4.0 ** cell[0] * cell_measure(cell)
            if self.d == 1:
                dp = poly_diff(p)
                total += fac * poly_integral_local(poly_mul(dp, dp))
            else:
                for ax in (0, 1):
                    dp = poly_diff(p, ax)
                    total += fac * poly_integral_local(poly_mul(dp, dp))
        return total

    def scaled(self, s):
        return PiecewisePoly(self.d, {c: s * np.asarray(p) for c, p in self.pieces.items()})

    def to_csv_lines(self):
        """Debug serialization: level, positions, shape, flattened coefficients."""
        lines = []
        for (j, k), p in sorted(self.pieces.items()):
            flat = ";".join(repr(float(v)) for v in np.asarray(p).ravel())
            shape = "x".join(str(s) for s in np.asarray(p).shape)
            lines.append("%d,%s,%s,%s" % (j, ":".join(map(str, k)), shape, flat))
        return lines


# ---------------------------------------------------------------------------
# minimal-tiling transform (push overlapped pieces down, then merge up)


def to_minimal_tiling(d, contributions, merge_tol=1e-13):
    """Combine possibly overlapping (cell, coeffs) contributions into the
    representation on the minimal tiling of their sum.

    Pieces whose cell has a strict descendant among the inputs are pushed
    down onto children (top-down), then full sibling groups whose pieces
    extend to a single parent polynomial are merged until minimal.
    """
    if not contributions:
        return PiecewisePoly(d, {})
    acc = {}
    for cell, coeffs in contributions:
        if cell in acc:
            acc[cell] = poly_add(acc[cell], coeffs)
        else:
            acc[cell] = np.asarray(coeffs, dtype=float)

    # every strict ancestor of an input cell marks a "must split" location
    marks = set()
    for cell in acc:
        p = cell_parent(cell)
        while p is not None and p not in marks:
            marks.add(p)
            p = cell_parent(p)

    heap = [(cell[0], cell) for cell in acc]
    heapq.heapify(heap)
    while heap:
        _, cell = heapq.heappop(heap)
        if cell not in acc or cell not in marks:
            continue
        coeffs = acc.pop(cell)
        for child in cell_children(cell):
            sub = restrict_coeffs(coeffs, cell, child)
            if child in acc:
                acc[child] = poly_add(acc[child], sub)
            else:
                acc[child] = sub
                heapq.heappush(heap, (child[0], child))

    result = acc

    # merge pass: collapse sibling groups extendable to one parent polynomial
    changed = True
    nchild = 2**d
    while changed:
        changed = False
        parents = {}
        for cell in result:
            par = cell_parent(cell)
            if par is not None:
                parents.setdefault(par, []).append(cell)
        for par, kids in sorted(parents.items(), key=lambda t: -t[0][0]):
            if len(kids) != nchild or any(k not in result for k in kids):
                continue
            kids = sorted(kids)
            cand = extend_to_parent(result[kids[0]], kids[0])
            scale = max(1.0, float(np.max(np.abs(cand))) if cand.size else 0.0)
            ok = True
            for kid in kids:
                back = restrict_coeffs(cand, par, kid)
                diff = poly_add(back, -np.asarray(result[kid], dtype=float))
                if not np.all(np.abs(diff) <= merge_tol * scale):
                    ok = False
                    break
            if ok:
                for kid in kids:
                    del result[kid]
                result[par] = cand
                changed = True

    out = {c: p for c, p in result.items() if not _is_zero_poly(p)}
    return PiecewisePoly(d, out)


# ---------------------------------------------------------------------------
# binary operations on piecewise polynomials


def _overlap_pairs(f, g):
    """Yield (cell, cf, cg) on the common refinement of the two supports."""
    gitems = list(g.pieces.items())
    for cf_cell, cf in f.pieces.items():
        for cg_cell, cg in gitems:
            if cf_cell[0] <= cg_cell[0]:
                if cell_contains(cf_cell, cg_cell):
                    yield cg_cell, restrict_coeffs(cf, cf_cell, cg_cell), cg
            elif cell_contains(cg_cell, cf_cell):
                yield cf_cell, cf, restrict_coeffs(cg, cg_cell, cf_cell)


def inner_product(f, g):
    """Exact integral of f*g over the domain."""
    total = 0.0
    for cell, cf, cg in _overlap_pairs(f, g):
        total += cell_measure(cell) * poly_integral_local(poly_mul(cf, cg))
    return total


def h1_inner_product(f, g):
    total = 0.0
    for cell, cf, cg in _overlap_pairs(f, g):
        fac = 4.0 ** cell[0] * cell_measure(cell)
        if f.d == 1:
            total += fac * poly_integral_local(poly_mul(poly_diff(cf), poly_diff(cg)))
        else:
            for ax in (0, 1):
                total += fac * poly_integral_local(
                    poly_mul(poly_diff(cf, ax), poly_diff(cg, ax))
                )
    return total


def add_scaled(f, s, g):
    """f + s*g on a common (re-minimized) tiling."""
    contribs = [(c, p) for c, p in f.pieces.items()]
    contribs += [(c, s * np.asarray(p, dtype=float)) for c, p in g.pieces.items()]
    return to_minimal_tiling(f.d, contribs)


def strong_apply(theta, v):
    """-div(theta grad v) piecewise on the common refinement of supports;
    exact for continuous theta and C^1 v."""
    d = v.d
    pieces = {}
    for cell, ct, cv in _overlap_pairs(theta, v):
        fac = 4.0 ** cell[0]
        if d == 1:
            res = -fac * poly_diff(poly_mul(ct, poly_diff(cv)))
        else:
            rx = poly_diff(poly_mul(ct, poly_diff(cv, 0)), 0)
            ry = poly_diff(poly_mul(ct, poly_diff(cv, 1)), 1)
            res = -fac * poly_add(rx, ry)
        if not _is_zero_poly(res):
            if cell in pieces:
                pieces[cell] = poly_add(pieces[cell], res)
            else:
                pieces[cell] = res
    return PiecewisePoly(d, pieces)


def constant_poly(d, value=1.0):
    if d == 1:
        return PiecewisePoly(1, {root_cell(1): np.array([float(value)])})
    return PiecewisePoly(2, {root_cell(2): np.array([[float(value)]])})
