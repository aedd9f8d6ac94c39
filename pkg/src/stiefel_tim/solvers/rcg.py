"""Riemannian conjugate gradient with Armijo backtracking."""

import time

import numpy as np

from ..manifold import HorizontalVector, RetractionError, retract, transport
from ..problem import cost, riemannian_gradient
from .options import SolverOptions, SolverReport, Status

__all__ = ["rcg_solve", "armijo_search"]

BETA_GUARD = 1e-14


def armijo_search(p, Y, f, direction, slope, opts, alpha0):
    """Backtrack from `alpha0` until sufficient decrease holds.

    Returns ``(alpha, Y_new, f_new)`` or ``None`` when the backtracking budget
    is exhausted. Trial points that lose rank count as failed trials.
    """
    alpha = alpha0
    for _ in range(opts.armijo_max_backtracks + 1):
        try:
            Y_new = retract(Y, direction, alpha)
        except RetractionError:
            alpha *= opts.armijo_backtrack
            continue
        f_new = cost(p, Y_new)
        if f_new <= f + opts.armijo_c1 * alpha * slope:
            return alpha, Y_new, f_new
        alpha *= opts.armijo_backtrack
    return None


def _initial_step(opts, last_length, eta_norm):
    # try twice the length of the last accepted step; interpolating from the
    # last decrease locks into ever smaller steps on flat stretches
    if last_length is not None and last_length > 0:
        return 2.0 * last_length / eta_norm
    return opts.armijo_initial_step / eta_norm


def rcg_solve(p, Y0, opts=None):
    """Minimize the fixed-rank cost from `Y0` by Riemannian CG.

    Search directions follow ``eta = -grad + beta * T(eta_prev)`` with a
    Hestenes-Stiefel `beta`. The direction falls back to steepest descent
    when the `beta` denominator vanishes or `eta` is not a descent direction.

    Returns
    -------
    Y : FactorPoint
    report : SolverReport
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    report = SolverReport("rcg")
    Y = Y0
    f = cost(p, Y)
    G = riemannian_gradient(p, Y)
    gn = G.norm()
    report.record(f, gn, 0.0)
    eta = HorizontalVector(-G.xi, Y)
    last_length = None
    it = 0
    while True:
        if f < opts.cost_tol:
            report.status = Status.CONVERGED_COST
            break
        if gn < opts.grad_tol:
            report.status = Status.CONVERGED_GRADIENT
            break
        early = opts.early_exit(report.objective)
        if early is not None:
            report.status = early
            break
        if it >= opts.max_iters:
            report.status = Status.MAX_ITERS
            break
        slope = eta.inner(G)
        if slope >= 0:
            eta = HorizontalVector(-G.xi, Y)
            slope = -gn * gn
        found = armijo_search(p, Y, f, eta, slope, opts, _initial_step(opts, last_length, eta.norm()))
        if found is None and not np.array_equal(eta.xi, -G.xi):
            eta = HorizontalVector(-G.xi, Y)
            slope = -gn * gn
            found = armijo_search(p, Y, f, eta, slope, opts, opts.armijo_initial_step / gn)
        if found is None:
            report.status = Status.STALLED
            break
        alpha, Y_new, f_new = found
        last_length = alpha * eta.norm()
        G_new = riemannian_gradient(p, Y_new)
        eta_t = transport(eta, Y_new)
        if opts.beta_rule == "hs":
            diff = G_new.xi - transport(G, Y_new).xi
            denom = eta_t.inner(HorizontalVector(diff, Y_new))
            beta = 0.0 if abs(denom) < BETA_GUARD else G_new.inner(HorizontalVector(diff, Y_new)) / denom
        else:
            beta = 0.0
        eta = HorizontalVector(-G_new.xi + beta * eta_t.xi, Y_new)
        if eta.inner(G_new) >= 0:
            eta = HorizontalVector(-G_new.xi, Y_new)
        f, Y, G = f_new, Y_new, G_new
        gn = G.norm()
        it += 1
        report.record(f, gn, alpha)
    report.iterations = it
    report.wall_time = time.perf_counter() - start
    return Y, report
