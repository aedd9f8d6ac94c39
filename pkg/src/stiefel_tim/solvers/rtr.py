"""Riemannian trust-region method with a truncated CG inner solver."""

import time

import numpy as np

from ..linalg import real_trace_metric
from ..manifold import HorizontalVector, RetractionError, retract
from ..problem import cost, hessian_operator, riemannian_gradient
from .options import SolverOptions, SolverReport, Status

__all__ = ["rtr_solve", "truncated_cg", "steihaug_cg"]

# tCG exit reasons
NEGATIVE_CURVATURE = "negative-curvature"
EXCEEDED_RADIUS = "exceeded-radius"
RESIDUAL_TARGET = "residual-target"
MAX_INNER = "max-inner"


def _boundary_step(eta, delta_dir, radius, inner):
    """Both roots ``tau`` of ``||eta + tau * delta_dir|| = radius`` (ascending)."""
    a = inner(delta_dir, delta_dir)
    b = inner(eta, delta_dir)
    c = inner(eta, eta) - radius * radius
    disc = np.sqrt(max(b * b - a * c, 0.0))
    # avoid cancellation in the root of larger magnitude
    if b >= 0:
        t_neg = (-b - disc) / a
        t_pos = c / (a * t_neg) if t_neg != 0 else 0.0
    else:
        t_pos = (-b + disc) / a
        t_neg = c / (a * t_pos) if t_pos != 0 else 0.0
    return t_neg, t_pos


def steihaug_cg(hess, grad, radius, inner, kappa=0.1, theta=1.0, max_inner=None):
    """Truncated CG for ``min <g, eta> + 1/2 <H eta, eta>`` s.t. ``||eta|| <= radius``.

    Works on any vector space given the operator `hess` and the real inner
    product `inner`.

    Returns
    -------
    eta, H_eta : arrays
        Approximate minimizer and its image under `hess`.
    n_inner : int
    reason : str
    """
    eta = np.zeros_like(grad)
    H_eta = np.zeros_like(grad)
    r = grad
    r_r = inner(r, r)
    r0_norm = np.sqrt(r_r)
    if max_inner is None:
        max_inner = grad.size
    if r0_norm == 0:
        return eta, H_eta, 0, RESIDUAL_TARGET
    target = r0_norm * min(r0_norm**theta, kappa)
    delta_dir = -r
    # <eta, eta>, <eta, delta>, <delta, delta> by the usual CG recurrences
    e_e, e_d, d_d = 0.0, 0.0, r_r
    for j in range(max_inner):
        H_delta = hess(delta_dir)
        curv = inner(delta_dir, H_delta)
        if not np.isfinite(curv) or curv <= 0:
            taus = _boundary_step(eta, delta_dir, radius, inner)
            rd = inner(r, delta_dir)
            dHd = curv if np.isfinite(curv) else 0.0
            tau = min(taus, key=lambda t: t * rd + 0.5 * t * t * dHd)
            return eta + tau * delta_dir, H_eta + tau * H_delta, j + 1, NEGATIVE_CURVATURE
        alpha = r_r / curv
        e_e_next = e_e + 2.0 * alpha * e_d + alpha * alpha * d_d
        if e_e_next >= radius * radius:
            tau = _boundary_step(eta, delta_dir, radius, inner)[1]
            return eta + tau * delta_dir, H_eta + tau * H_delta, j + 1, EXCEEDED_RADIUS
        eta = eta + alpha * delta_dir
        H_eta = H_eta + alpha * H_delta
        r = r + alpha * H_delta
        r_r_next = inner(r, r)
        if np.sqrt(r_r_next) <= target:
            return eta, H_eta, j + 1, RESIDUAL_TARGET
        beta = r_r_next / r_r
        delta_dir = -r + beta * delta_dir
        e_e = e_e_next
        e_d = beta * (e_d + alpha * d_d)
        d_d = r_r_next + beta * beta * d_d
        r_r = r_r_next
    return eta, H_eta, max_inner, MAX_INNER


def _fast_metric(a, b):
    return np.vdot(a, b).real


def truncated_cg(p, Y, grad, delta, opts=None, hess=None):
    """Approximately solve the trust-region subproblem at `Y`.

    Returns the step as a HorizontalVector together with ``H[step]``, the
    number of inner iterations and the exit reason.
    """
    opts = opts or SolverOptions()
    hess = hess or hessian_operator(p, Y)
    max_inner = opts.tcg_max_inner or 3 * Y.shape[0] * Y.shape[1]
    eta, H_eta, n_inner, reason = steihaug_cg(
        hess, grad.xi, delta, _fast_metric, opts.tcg_kappa, opts.tcg_theta, max_inner
    )
    return HorizontalVector(eta, Y), H_eta, n_inner, reason


def rtr_solve(p, Y0, opts=None, hessian_sign=1.0):
    """Minimize the fixed-rank cost from `Y0` by Riemannian trust regions.

    `hessian_sign` is a fault-injection hook used by the self-check suites.
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    report = SolverReport("rtr")
    Y = Y0
    f = cost(p, Y)
    G = riemannian_gradient(p, Y)
    gn = G.norm()
    delta = opts.tr_delta0
    report.record(f, gn, delta)
    eps = np.finfo(float).eps
    it = 0
    while True:
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
        hess = hessian_operator(p, Y, sign=hessian_sign)
        eta, H_eta, n_inner, reason = truncated_cg(p, Y, G, delta, opts, hess)
        report.inner_iterations += n_inner
        model_decrease = -(eta.inner(G) + 0.5 * real_trace_metric(eta.xi, H_eta))
        try:
            Y_new = retract(Y, eta)
            f_new = cost(p, Y_new)
        except RetractionError:
            Y_new, f_new = None, np.inf
        if model_decrease > 0 and np.isfinite(f_new):
            # guards rho against round-off once f is tiny
            reg = max(1.0, abs(f)) * eps * 1e3
            rho = (f - f_new + reg) / (model_decrease + reg)
        else:
            rho = -np.inf
        if rho < opts.tr_rho_shrink:
            delta *= opts.tr_shrink_factor
        elif rho > opts.tr_rho_expand and reason in (NEGATIVE_CURVATURE, EXCEEDED_RADIUS):
            delta = min(opts.tr_expand_factor * delta, opts.tr_delta_max)
        if rho > opts.tr_rho_accept and f_new <= f:
            Y, f = Y_new, f_new
            G = riemannian_gradient(p, Y)
            gn = G.norm()
        it += 1
        report.record(f, gn, delta)
    report.iterations = it
    report.wall_time = time.perf_counter() - start
    return Y, report
