"""Quasi-optimal tree coarsening by greedy expansion with modified errors.

Works on forests over (nu, lambda) nodes where, per stochastic index, all
level-0 spatial indices are grouped into one logical root.  The error of a
node is the squared subtree norm of the residual below it; the modified
error combines a node's error harmonically with its parent's, and the
greedy loop expands the leaf of largest modified error until the retained
energy meets the budget.  Both an exact-sort frontier and the linear-time
binary-binning frontier are provided.
"""

from __future__ import annotations

import heapq
import math

from .coeffvector import sorted_nus

ROOT = ("#", 0, 0)  # logical group of all level-0 spatial indices


def subtree_norms(values, parent_fn):
    """Squared subtree sums t(n)^2 = value(n)^2 + sum over children.

    `values`: {node: value} whose key set is closed under parent_fn (a
    forest); parent_fn(node) -> parent or None for roots.  Returns the
    dict of squared sums.
    """
    order = sorted(values, key=lambda n: -_depth(n, parent_fn))
    t2 = {n: float(v) ** 2 for n, v in values.items()}
    for n in order:
        p = parent_fn(n)
        if p is not None and p in t2:
            t2[p] += t2[n]
    return t2


def _depth(node, parent_fn, _cache={}):
    d = 0
    n = node
    while True:
        p = parent_fn(n)
        if p is None:
            return d
        n = p
        d += 1


class _ExactFrontier:
    def __init__(self):
        self.heap = []
        self.counter = 0

    def push(self, emod, node):
        heapq.heappush(self.heap, (-emod, self.counter, node))
        self.counter += 1

    def pop(self):
        _, _, node = heapq.heappop(self.heap)
        return node

    def __bool__(self):
        return bool(self.heap)


class _BinnedFrontier:
    """Bins [2^-p emax, 2^-p-1 emax); pop serves the highest nonempty bin
    in insertion order."""

    MAX_BIN = 400

    def __init__(self, emax):
        self.emax = emax
        self.bins = {}
        self.low = 0

    def _bin(self, emod):
        if emod <= 0.0:
            return self.MAX_BIN
        p = int(math.floor(math.log2(self.emax / emod))) if emod < self.emax else 0
        return min(max(p, 0), self.MAX_BIN)

    def push(self, emod, node):
        p = self._bin(emod)
        self.bins.setdefault(p, []).append(node)
        self.low = min(self.low, p)

    def pop(self):
        p = self.low
        while p <= self.MAX_BIN:
            q = self.bins.get(p)
            if q:
                node = q.pop(0)
                if not q:
                    del self.bins[p]
                self.low = p
                return node
            p += 1
        raise IndexError("empty frontier")

    def __bool__(self):
        return bool(self.bins)


def greedy_select(roots, children_fn, e_values, budget, mode="binned"):
    """Greedy expansion engine.

    roots: iterable of root nodes; children_fn(node) -> children (only
    those carrying error need be returned); e_values(node) -> e(node).
    Expands until E <= budget.  Returns (interior list in expansion order,
    final E, modified errors seen).
    """
    roots = list(roots)
    e = {n: float(e_values(n)) for n in roots}
    emod = dict(e)
    E = sum(e.values())
    if not roots:
        return [], 0.0, emod
    emax = max(emod.values())
    frontier = _BinnedFrontier(emax) if mode == "binned" else _ExactFrontier()
    for n in roots:
        if emod[n] > 0.0:
            frontier.push(emod[n], n)
    interior = []
    while E > budget + 1e-15 * max(1.0, abs(budget)) and frontier:
        node = frontier.pop()
        kids = list(children_fn(node))
        interior.append(node)
        E -= e[node]
        for kid in kids:
            ek = float(e_values(kid))
            e[kid] = ek
            if ek > 0.0:
                em = 1.0 / (1.0 / ek + 1.0 / emod[node]) if emod[node] > 0 else 0.0
                emod[kid] = em
                frontier.push(em, kid)
                E += ek
            else:
                emod[kid] = 0.0
    return interior, E, emod


def tree_approx(basis, Lambda0, Lambda_plus, r, budget, mode="binned"):
    """Select Lambda-flat containing Lambda0 with |r restricted|^2 >=
    |r|^2 - budget, quasi-optimally among spatial trees.

    Lambda0, Lambda_plus: {nu: set(lam)}, each spatial set a tree (or
    empty); supp r lies within Lambda_plus.  Level-0 spatial indices are
    grouped: the logical root of a new nu carries the whole |r_nu|^2 and
    expanding it admits all level-0 indices at once.
    """
    level0 = list(basis.level_indices(0))

    def parent_grouped(lam):
        if lam[0] == 0:
            return None
        if lam[0] == 1:
            return ROOT
        return basis.parent(lam)

    # squared subtree sums per nu, with level-0 grouped into the logical root
    t2_by_nu = {}
    for nu in sorted_nus(Lambda_plus.keys()):
        lams = Lambda_plus[nu]
        if not lams:
            continue
        spatial = r.spatial(nu)
        t2 = {lam: spatial.get(lam, 0.0) ** 2 for lam in lams if lam[0] > 0}
        # accumulate children into parents, finest level first; parents are
        # present because Lambda_plus is a tree per nu
        for lam in sorted(t2, key=lambda l: -l[0]):
            p = parent_grouped(lam)
            if p != ROOT:
                t2[p] = t2.get(p, 0.0) + t2[lam]
        root_sq = sum(spatial.get(lam, 0.0) ** 2 for lam in lams if lam[0] == 0)
        root_sq += sum(t2[lam] for lam in t2 if lam[0] == 1)
        t2[ROOT] = root_sq
        t2_by_nu[nu] = t2

    roots = []
    for nu in sorted_nus(t2_by_nu.keys()):
        t2 = t2_by_nu[nu]
        S0 = Lambda0.get(nu, set())
        if not S0:
            if t2[ROOT] > 0.0:
                roots.append((nu, ROOT))
        else:
            S0g = set(S0) | {ROOT}
            for lam in sorted(l for l in t2 if l != ROOT):
                if lam not in S0 and parent_grouped(lam) in S0g and t2[lam] > 0.0:
                    roots.append((nu, lam))

    def e_value(node):
        nu, lam = node
        return t2_by_nu.get(nu, {}).get(lam, 0.0)

    def children(node):
        nu, lam = node
        t2 = t2_by_nu.get(nu, {})
        if lam == ROOT:
            kids = [l for l in t2 if l != ROOT and l[0] == 1]
        else:
            kids = [l for l in basis.children(lam) if l in t2]
        return [(nu, l) for l in sorted(kids)]

    interior, E, _ = greedy_select(roots, children, e_value, budget, mode)

    out = {nu: set(s) for nu, s in Lambda0.items()}
    for nu, lam in interior:
        S = out.setdefault(nu, set())
        if lam == ROOT:
            S.update(level0)
        else:
            S.add(lam)
    # ensure the level-0 block is present wherever a nu is active
    for nu, S in out.items():
        if S:
            S.update(level0)
    return out
