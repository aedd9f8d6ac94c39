"""Alternating minimization baseline over the factors of ``X = L R^H``.

Each half-step freezes one factor and runs gradient descent with Armijo
backtracking on the resulting convex least-squares problem.
"""

import time

import numpy as np

from ..manifold import random_point
from ..problem import apply_affine
from .options import SolverOptions, SolverReport, Status

__all__ = ["altmin_solve", "altmin_factors"]


def _residual_matrix(sys, X):
    C = apply_affine(sys, X) - sys.b
    return 0.5 * float(np.vdot(C, C).real), _scatter(sys, C)


def _scatter(sys, C):
    S = np.zeros(sys.m * sys.n, dtype=complex)
    S[sys.flat_index] = C[sys.owner]
    return S.reshape(sys.m, sys.n)


def _half_step(sys, fixed, moving, left, opts, tol, alpha):
    """Gradient descent on one factor; returns ``(moving, f, alpha)``.

    With one factor frozen the constraint residual is affine in the other,
    ``C(M - s g) = C(M) - s A(g)``, so backtracking trials only cost a vector
    update.
    """
    fixed_h = fixed.conj().T

    def image(M):
        return apply_affine(sys, M @ fixed_h if left else fixed @ M.conj().T)

    C = image(moving) - sys.b
    f = 0.5 * float(np.vdot(C, C).real)
    for _ in range(opts.altmin_inner_iters):
        S = _scatter(sys, C)
        g = S @ fixed if left else S.conj().T @ fixed
        gg = float(np.vdot(g, g).real)
        if np.sqrt(gg) < tol or f < opts.cost_tol:
            break
        Ag = image(g)
        step = alpha * 2.0
        for _ in range(opts.armijo_max_backtracks + 1):
            C_new = C - step * Ag
            f_new = 0.5 * float(np.vdot(C_new, C_new).real)
            if f_new <= f - opts.armijo_c1 * step * gg:
                break
            step *= opts.armijo_backtrack
        else:
            break
        moving, f, C, alpha = moving - step * g, f_new, C_new, step
    return moving, f, alpha


def altmin_factors(sys, L, R, opts=None):
    """Run alternating minimization from the factors ``(L, R)``.

    Returns ``(L, R, report)``. The gradient norm in the report is that of
    the joint Euclidean gradient ``[S R; S^H L]``.
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    report = SolverReport("altmin")
    inner_tol = opts.altmin_inner_tol_ratio * opts.grad_tol
    alpha_l = alpha_r = opts.armijo_initial_step / 2.0

    def measure():
        f, S = _residual_matrix(sys, L @ R.conj().T)
        gn = np.sqrt(np.linalg.norm(S @ R) ** 2 + np.linalg.norm(S.conj().T @ L) ** 2)
        return f, gn

    f, gn = measure()
    report.record(f, gn, 0.0)
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
        L, _, alpha_l = _half_step(sys, R, L, True, opts, inner_tol, alpha_l)
        R, _, alpha_r = _half_step(sys, L, R, False, opts, inner_tol, alpha_r)
        f_new, gn = measure()
        it += 1
        report.record(f_new, gn, alpha_l)
        if f_new >= f and gn >= opts.grad_tol:
            f = f_new
            report.status = Status.STALLED
            break
        f = f_new
    report.iterations = it
    report.wall_time = time.perf_counter() - start
    return L, R, report


def altmin_solve(sys, r, seed=None, opts=None):
    """Alternating minimization at rank `r` from a random start.

    Returns
    -------
    X : (m, n) complex ndarray
    report : SolverReport
    """
    Y0 = random_point(sys.N, r, seed).Y
    L, R, report = altmin_factors(sys, Y0[: sys.m].copy(), Y0[sys.m :].copy(), opts)
    return L @ R.conj().T, report
