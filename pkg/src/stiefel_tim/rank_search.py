"""Rank-increase search, solution recovery and beamformer extraction."""

from dataclasses import dataclass, field

import numpy as np

from .linalg import numeric_rank, svd
from .manifold import FactorPoint, random_point
from .problem import (
    InternalConsistencyError,
    ProblemHandle,
    apply_affine,
    balance_factors,
    build_affine_system,
    recover_X,
    residual,
)
from .solvers import SolverOptions, altmin_factors, rcg_solve, rtr_solve

__all__ = [
    "RESIDUAL_TOL",
    "SOLVERS",
    "RankAttempt",
    "RankSearchResult",
    "RankSearchFailure",
    "BeamformerSet",
    "UnsupportedCaseError",
    "minimize_rank",
    "solve_at_rank",
    "recover_X",
    "extract_beamformers",
    "nuclear_norm_analytic_optimum",
    "restart_seed",
]

RESIDUAL_TOL = 1e-3
SOLVERS = ("rtr", "rcg", "altmin")
NEGLIGIBLE = 1e-8  # relative block norm below which a beamformer is treated as off


class RankSearchFailure(RuntimeError):
    """No rank up to the search limit met the acceptance criterion."""


class UnsupportedCaseError(ValueError):
    pass


@dataclass
class RankAttempt:
    rank: int
    attempts: int
    best_residual: float
    iterations: int
    reports: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "rank": self.rank,
            "attempts": self.attempts,
            "best_residual": self.best_residual,
            "iterations": self.iterations,
        }


@dataclass
class RankSearchResult:
    solver: str
    success: bool
    rank: int | None
    X: np.ndarray | None
    Y: FactorPoint | None
    residual: float
    dof: tuple
    per_rank: list

    @property
    def iterations(self):
        return sum(a.iterations for a in self.per_rank)

    def to_dict(self):
        return {
            "solver": self.solver,
            "success": self.success,
            "rank": self.rank,
            "dof": list(self.dof),
            "residual": self.residual,
            "per_rank": [a.to_dict() for a in self.per_rank],
        }


def restart_seed(seed, rank, attempt):
    """Independent, reproducible seed for one (rank, attempt) start point."""
    return np.random.SeedSequence([int(seed), int(rank), int(attempt)])


def solve_at_rank(system, r, solver, Y0, opts=None):
    """Run one solver from `Y0`; returns ``(Y, report)`` as raw factors."""
    opts = opts or SolverOptions()
    if solver == "altmin":
        m = system.m
        L, R, report = altmin_factors(system, Y0.Y[:m].copy(), Y0.Y[m:].copy(), opts)
        return np.vstack([L, R]), report
    p = ProblemHandle(system, r)
    if solver == "rtr":
        Y, report = rtr_solve(p, Y0, opts)
    elif solver == "rcg":
        Y, report = rcg_solve(p, Y0, opts)
    else:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    return Y.Y, report


def minimize_rank(
    inst,
    solver="rtr",
    opts=None,
    restarts=3,
    seed=0,
    max_rank=None,
    tol=RESIDUAL_TOL,
    cost_eps=None,
    system=None,
    balance=True,
    stop_early=False,
):
    """Smallest rank at which `solver` finds a (near) feasible ``X``.

    Ranks are tried in increasing order from 1 up to `max_rank` (default
    ``N``). At each rank up to `restarts` independent random starts are
    solved; the rank is accepted as soon as one of them reaches
    ``residual < tol`` (or ``f < cost_eps`` when that is given).

    With `balance`, each random start is refactored so that both factors
    carry equal weight (same ``X``), which speeds up all solvers markedly.

    With `stop_early`, solvers stop as soon as the residual drops to half of
    `tol` (unless `opts` already sets a cost target); accepted points
    are then only loosely converged.

    The reported rank is an upper bound on the true minimal rank: the
    solvers are local and may miss feasible points.
    """
    system = system or build_affine_system(inst)
    opts = opts or SolverOptions()
    max_rank = max_rank or system.N
    if stop_early and opts.cost_target is None:
        # residual = ||A(X) - b|| / sqrt(m) and f = ||A(X) - b||^2 / 2
        opts = opts.updated(cost_target=0.5 * system.m * (tol / 2) ** 2)
    per_rank = []
    m, n = system.m, system.n
    for r in range(1, max_rank + 1):
        attempt = RankAttempt(r, 0, np.inf, 0)
        per_rank.append(attempt)
        for t in range(restarts):
            Y0 = random_point(system.N, r, restart_seed(seed, r, t))
            if balance:
                Y0 = balance_factors(Y0, m)
            Y, report = solve_at_rank(system, r, solver, Y0, opts)
            attempt.attempts += 1
            attempt.iterations += report.iterations
            attempt.reports.append(report)
            X = recover_X(Y, m, n)
            res = residual(system, X)
            attempt.best_residual = min(attempt.best_residual, res)
            if cost_eps is not None:
                ok = 0.5 * np.linalg.norm(apply_affine(system, X) - system.b) ** 2 < cost_eps
            else:
                ok = res < tol
            if ok:
                return RankSearchResult(
                    solver=solver,
                    success=True,
                    rank=r,
                    X=X,
                    Y=FactorPoint(Y),
                    residual=res,
                    dof=tuple(dk / r for dk in inst.d),
                    per_rank=per_rank,
                )
    return RankSearchResult(solver, False, None, None, None, np.inf, (), per_rank)


@dataclass
class BeamformerSet:
    """Receive filters ``U_k`` (r x d_k) and precoders ``V_ji`` (r x d_i), i in S_j."""

    receive: list
    precoders: dict

    @property
    def r(self):
        return self.receive[0].shape[0]

    def transmitter_power(self, j):
        return sum(float(np.linalg.norm(V) ** 2) for (jj, _), V in self.precoders.items() if jj == j)


def extract_beamformers(X, inst, r, normalize=True):
    """Split a rank-`r` solution into receive filters and precoders.

    With the truncated SVD ``X = U_r S V_r^H``, the receive filters are the
    row blocks of ``(U_r S^{1/2})^H`` and the precoders are the column blocks
    of ``S^{1/2} V_r^H``, so that ``U_k^H V_ji`` reproduces block ``(k, (j, i))``.
    With `normalize`, each transmitter's precoders are scaled to unit total
    Frobenius norm and each receive filter to unit norm. A transmitter (or
    receiver) whose block is below ``NEGLIGIBLE`` relative to the factor norm
    is switched off: its block is set to zero instead of rescaled, so that
    round-off in an unused block is not amplified into interference.
    """
    X = np.asarray(X)
    m = inst.m
    if X.shape != (m, inst.n):
        raise ValueError(f"X must be {m} x {inst.n}, got {X.shape}")
    U, sigma, V = svd(X)
    if numeric_rank(sigma) > r:
        raise InternalConsistencyError(f"X has numeric rank {numeric_rank(sigma)} > {r}")
    root = np.sqrt(sigma[:r])
    Uh = (U[:, :r] * root).conj().T  # r x m, so that X ~ Uh^H @ Vh
    Vh = (V[:, :r] * root).conj().T  # r x n
    off = inst.offsets
    receive = [Uh[:, off[k] : off[k] + inst.d[k]] for k in range(inst.K)]
    precoders = {}
    for j in range(inst.K):
        for i in sorted(inst.sharing[j]):
            c = j * m + off[i]
            precoders[(j, i)] = Vh[:, c : c + inst.d[i]]
    if normalize:
        floor = NEGLIGIBLE * np.sqrt(sigma[0]) if sigma.size else 0.0
        for k, Uk in enumerate(receive):
            nrm = np.linalg.norm(Uk)
            receive[k] = Uk / nrm if nrm > floor else np.zeros_like(Uk)
        for j in range(inst.K):
            keys = [key for key in precoders if key[0] == j]
            nrm = np.sqrt(sum(np.linalg.norm(precoders[key]) ** 2 for key in keys))
            for key in keys:
                precoders[key] = precoders[key] / nrm if nrm > floor else np.zeros_like(precoders[key])
    return BeamformerSet(receive, precoders)


def nuclear_norm_analytic_optimum(system, inst):
    """Closed-form nuclear-norm minimizer for single-stream instances.

    Row ``k`` of ``X*`` spreads ``1/|D_k|`` evenly over the desired entries
    ``D_k`` (transmitters that reach ``k`` and hold message ``k``); all other
    entries are zero. ``X* X*^H`` is diagonal, so ``X*`` always has full row
    rank: the convex relaxation never produces a low-rank solution.

    Returns
    -------
    X : (K, K^2) ndarray
    full_rank : bool
    """
    if any(dk != 1 for dk in inst.d):
        raise UnsupportedCaseError("closed form only covers single-stream instances")
    K = inst.K
    X = np.zeros((K, K * K))
    for k in range(K):
        D = [j * K + k for j in range(K) if (k, j) in inst.edges and k in inst.sharing[j]]
        X[k, D] = 1.0 / len(D)
    if not np.allclose(apply_affine(system, X), system.b, rtol=0, atol=1e-12):
        raise InternalConsistencyError("analytic optimum is infeasible")
    full_rank = numeric_rank(svd(X)[1]) == K
    return X, full_rank
