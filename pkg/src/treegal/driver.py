"""Outer adaptive loop: residual estimation, bulk-chasing tree selection,
and Galerkin solves, with parameter validation and convergence history."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dfield

from .coarsen import tree_approx
from .coeffvector import (
    CoeffVector,
    lambda_contains,
    lambda_max_support,
    lambda_size,
)
from .context import ConfigError
from .galerkin import GalerkinContext, gal_solve_cg, gal_solve_defect
from .residual import res_approx


@dataclass
class AgmParams:
    omega0: float = 0.5
    omega1: float = 0.7
    zeta: float = 0.1
    gamma: float = 0.1
    eps: float = 1e-3
    solver: str = "cg"  # or "defect"
    coarsen_mode: str = "binned"
    max_iter: int = 200
    strict: bool = False

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class RunResult:
    u: CoeffVector
    Lambda: dict
    history: list
    converged: bool
    b: float


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


def validate(params, kappa_bound, zeta_lhat):
    """Classify the parameter set: 'strict' satisfies the convergence-proof
    constraints, 'relaxed' the minimal experiment-mode requirements."""
    p = params
    if not (0.0 < p.omega0 <= p.omega1 < 1.0):
        raise ConfigError("need 0 < omega0 <= omega1 < 1")
    if not (zeta_lhat < p.zeta < 1.0):
        raise ConfigError("need zeta in (zeta_lhat, 1)")
    if p.gamma <= 0.0:
        raise ConfigError("need gamma > 0")
    binding = []
    if not p.zeta < p.omega0 / (p.omega0 + 1.0):
        binding.append("zeta < omega0/(omega0+1)")
    if not (
        p.omega1 * (1.0 - p.zeta) + p.zeta
        < (1.0 - 2.0 * p.zeta) * kappa_bound**-0.5
    ):
        binding.append("omega1 constraint")
    gmax = ((1.0 - p.zeta) * p.omega0 - p.zeta) / ((1.0 + p.zeta) * kappa_bound)
    if not (0.0 < p.gamma < gmax):
        binding.append("gamma < ((1-zeta)omega0 - zeta)/((1+zeta)kappa)")
    mode = "strict" if not binding else "relaxed"
    if p.strict and binding:
        raise ConfigError("strict mode violated: " + "; ".join(binding))
    return mode, binding


def contraction_factor(params, kappa):
    """rho from the convergence analysis (diagnostic only)."""
    z, w0, g = params.zeta, params.omega0, params.gamma
    val = 1.0 - ((1.0 - z) * w0 - z) ** 2 / kappa + g**2 * (1.0 + z) ** 2 * kappa
    return math.sqrt(max(val, 0.0))


def f_norm_proxy(ctx):
    """Computable lower-bound proxy of |f| in dual coefficients with the
    tail correction."""
    cells = ctx.f.support_cells()
    if not cells:
        return 0.0
    S = ctx.basis.tree_from_tiling(cells, ctx.lhat)
    total = sum(ctx.f_dual(lam) ** 2 for lam in sorted(S))
    return math.sqrt(total) / (1.0 - ctx.zeta_lhat)


def run(ctx, params, sink=None, gal=None):
    """Adaptive Galerkin iteration; returns the iterate with certified
    residual bound <= params.eps and the per-iteration history."""
    mode, binding = validate(params, ctx.kappa_bound(), ctx.zeta_lhat)
    gal = gal or GalerkinContext(ctx)
    u = CoeffVector()
    Lambda = {}
    history = []
    t_start = time.perf_counter()

    fproxy = f_norm_proxy(ctx)
    if fproxy == 0.0:
        return RunResult(u, Lambda, history, True, 0.0)
    r_prev_norm = fproxy / ctx.r_B

    for k in range(params.max_iter):
        t0 = time.perf_counter()
        eta0 = params.zeta / (1.0 + params.zeta) * r_prev_norm
        polys = {nu: ctx.basis.reconstruct(u.spatial(nu)) for nu in u.nus()}
        res = res_approx(ctx, u, params.zeta, eta0, params.eps, polys=polys)
        row = {
            "k": k,
            "dofs": lambda_size(Lambda),
            "residual_bound": res.b,
            "eta": res.eta,
            "active_nu": len(Lambda),
            "max_supp_nu": lambda_max_support(Lambda),
            "wall_time_s": time.perf_counter() - t_start,
            "branch": res.branch,
        }
        history.append(row)
        if sink is not None:
            sink(row)
        if res.b <= params.eps:
            return RunResult(u, Lambda, history, True, res.b)

        budget = (1.0 - params.omega0**2) * res.rnorm**2
        new_Lambda = tree_approx(
            ctx.basis, Lambda, res.Lambda_plus, res.r, budget, mode=params.coarsen_mode
        )
        if not lambda_contains(new_Lambda, Lambda):
            raise NonConvergenceError("index sets are not nested", history)
        Lambda = new_Lambda
        # support growth law from the bidiagonal couplings
        if lambda_max_support(Lambda) > k:
            raise NonConvergenceError("support growth law violated", history)

        target = params.gamma * res.rnorm
        if params.solver == "defect":
            u, _info = gal_solve_defect(gal, Lambda, u, res.b, target, polys=polys)
        else:
            u, _info = gal_solve_cg(gal, Lambda, u, target)
        u = u.restricted(Lambda)
        r_prev_norm = res.rnorm
        del t0
    raise NonConvergenceError(
        "no convergence within %d iterations" % params.max_iter, history
    )
