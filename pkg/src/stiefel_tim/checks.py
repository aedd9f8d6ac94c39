"""Self-check suites run by ``stiefel-tim check``.

Each suite draws its own random cases from a seed and returns a
:class:`SuiteResult`. The Hessian suite accepts a sign hook so that the
harness can confirm it catches a corrupted second-order model.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import solve_skew_lyapunov
from .manifold import FactorPoint, complex_gaussian, project_horizontal, random_horizontal, random_point
from .problem import ProblemHandle, build_affine_system, cost, hessian_operator, riemannian_gradient
from .rank_search import extract_beamformers, minimize_rank, nuclear_norm_analytic_optimum

__all__ = [
    "SuiteResult",
    "geometry_suite",
    "gradient_suite",
    "hessian_suite",
    "nuclear_norm_suite",
    "alignment_suite",
    "run_all",
    "random_problem",
]


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    worst: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.cases > 0 and not self.failures

    def note(self, key, value):
        self.worst[key] = max(self.worst.get(key, 0.0), float(value))

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = ", ".join(f"{k}={v:.2e}" for k, v in sorted(self.worst.items()))
        return f"{status} {self.name}: {self.cases} cases, {len(self.failures)} failures ({self.seconds:.1f}s){'; ' + extra if extra else ''}"


def _skew(rng, r):
    A = complex_gaussian(rng, (r, r))
    return A - A.conj().T


def geometry_suite(seed=0, cases=1000, max_N=30, max_r=6):
    """Horizontal projection, vertical kernel, unitary equivariance, Lyapunov residuals."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("geometry")
    start = time.perf_counter()
    for case in range(cases):
        N = int(rng.integers(2, max_N + 1))
        r = int(rng.integers(1, min(max_r, N) + 1))
        Y = random_point(N, r, rng)
        v = complex_gaussian(rng, (N, r))
        scale = np.linalg.norm(v)
        Pv = project_horizontal(Y, v).xi
        idem = np.linalg.norm(project_horizontal(Y, Pv).xi - Pv) / scale
        Omega = _skew(rng, r)
        vert = Y.Y @ Omega
        kill = np.linalg.norm(project_horizontal(Y, vert).xi) / np.linalg.norm(vert)
        Q, _ = np.linalg.qr(complex_gaussian(rng, (r, r)))
        equi = np.linalg.norm(project_horizontal(FactorPoint(Y.Y @ Q), v @ Q).xi - Pv @ Q) / scale
        S = _skew(rng, r)
        W = solve_skew_lyapunov(Y.gram, S)
        lyap = np.linalg.norm(Y.gram @ W + W @ Y.gram - S) / max(1.0, np.linalg.norm(S))
        cond = np.linalg.cond(Y.gram)
        # round-off in the projection grows with the conditioning of Y^H Y
        tol = 1e-10 * max(1.0, cond)
        for key, val in (("idempotence", idem), ("vertical", kill), ("equivariance", equi)):
            res.note(key, val / max(1.0, cond))
            if val > tol:
                res.failures.append((case, key, val))
        res.note("lyapunov", lyap)
        if lyap > 1e-10:
            res.failures.append((case, "lyapunov", lyap))
        res.cases += 1
    res.seconds = time.perf_counter() - start
    return res


def random_problem(rng, K_max=5, r_max=4):
    """A small random instance with a random full-rank point of moderate size."""
    from .experiments import random_topology

    K = int(rng.integers(1, K_max + 1))
    d = int(rng.integers(1, 3))
    inst = random_topology(K, rng.random(), rng.random(), d, rng)
    sys = build_affine_system(inst)
    r = int(rng.integers(1, min(r_max, sys.N) + 1))
    Y = random_point(sys.N, r, rng)
    Y = FactorPoint(Y.Y / np.sqrt(np.linalg.norm(Y.Y)))
    return ProblemHandle(sys, r), Y


def gradient_suite(seed=0, cases=100, h=1e-5, rtol=1e-6):
    """Riemannian gradient against central differences along horizontal directions."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradient")
    start = time.perf_counter()
    for case in range(cases):
        p, Y = random_problem(rng)
        G = riemannian_gradient(p, Y)
        xi = random_horizontal(Y, rng)
        fd = (cost(p, FactorPoint(Y.Y + h * xi.xi)) - cost(p, FactorPoint(Y.Y - h * xi.xi))) / (2 * h)
        exact = G.inner(xi)
        err = abs(fd - exact) / max(G.norm() * xi.norm(), 1e-300)
        res.note("fd_rel_error", err)
        if err > rtol:
            res.failures.append((case, "fd", err))
        if not G.is_horizontal(1e-8):
            res.failures.append((case, "horizontal", None))
        res.cases += 1
    res.seconds = time.perf_counter() - start
    return res


def hessian_suite(seed=0, cases=100, sym_rtol=1e-8, hessian_sign=1.0):
    """Self-adjointness and first-order agreement with differenced gradients.

    The differenced gradient ``P_h(grad f(Y + t eta) - grad f(Y)) / t`` must
    approach ``Hess f(Y)[eta]`` with error shrinking roughly tenfold per
    tenfold decrease of ``t``. `hessian_sign` multiplies the operator under
    test; any value other than one should make the suite fail.
    """
    rng = np.random.default_rng(seed)
    res = SuiteResult("hessian")
    start = time.perf_counter()
    steps = (1e-3, 1e-4, 1e-5)
    for case in range(cases):
        p, Y = random_problem(rng)
        H = hessian_operator(p, Y, sign=hessian_sign)
        eta, zeta = random_horizontal(Y, rng), random_horizontal(Y, rng)
        He, Hz = H(eta.xi), H(zeta.xi)
        a = np.vdot(zeta.xi, He).real
        b = np.vdot(eta.xi, Hz).real
        sym = abs(a - b) / max(np.linalg.norm(He) + np.linalg.norm(Hz), 1e-300)
        res.note("asymmetry", sym)
        if sym > sym_rtol:
            res.failures.append((case, "symmetry", sym))
        g0 = riemannian_gradient(p, Y).xi
        scale = max(np.linalg.norm(He), np.linalg.norm(g0), 1e-300)
        errs = []
        for t in steps:
            gt = riemannian_gradient(p, FactorPoint(Y.Y + t * eta.xi)).xi
            fd = project_horizontal(Y, (gt - g0) / t).xi
            errs.append(np.linalg.norm(fd - He) / scale)
        # first-order decay, unless already at round-off level
        decays = errs[-1] < 1e-7 or all(e2 <= 0.2 * e1 for e1, e2 in zip(errs, errs[1:]))
        res.note("fd_rel_error", errs[-1])
        if not decays:
            res.failures.append((case, "fd_decay", errs))
        res.cases += 1
    res.seconds = time.perf_counter() - start
    return res


def nuclear_norm_suite(seed=0, cases=20):
    """The closed-form nuclear-norm minimizer is feasible and always full rank."""
    from .experiments import random_topology

    rng = np.random.default_rng(seed)
    grid = (0.2, 0.5, 0.8)
    res = SuiteResult("nuclear-norm")
    start = time.perf_counter()
    for case in range(cases):
        K = int(rng.integers(2, 9))
        p, q = grid[case % 3], grid[(case // 3) % 3]
        inst = random_topology(K, p, q, 1, rng)
        X, full = nuclear_norm_analytic_optimum(build_affine_system(inst), inst)
        if not full:
            res.failures.append((case, "rank", None))
        res.cases += 1
    res.seconds = time.perf_counter() - start
    return res


# accept a rank only once the solver reaches an exact solution; points that
# merely meet the residual rule can be limits of ever larger factors
EXACT_COST = 1e-20


def alignment_suite(seed=0, instances=3, draws=100, K=4, tol=1e-6):
    """Topology-only solutions align every random generic channel draw."""
    from .experiments import random_topology, sample_channels, verify_alignment

    rng = np.random.default_rng(seed)
    res = SuiteResult("alignment")
    start = time.perf_counter()
    for case in range(instances):
        inst = random_topology(K, 0.5, 0.5, 1, rng)
        found = minimize_rank(inst, "rtr", seed=int(rng.integers(2**31)), cost_eps=EXACT_COST)
        if not found.success:
            res.failures.append((case, "rank-search", None))
            continue
        bf = extract_beamformers(found.X, inst, found.rank)
        for _ in range(draws):
            ch = sample_channels(inst, "generic-gaussian", rng)
            if not verify_alignment(inst, ch, bf, tol):
                res.failures.append((case, "verify", found.residual))
                break
            res.cases += 1
    res.seconds = time.perf_counter() - start
    return res


def run_all(seed=0, quick=False, hessian_sign=1.0):
    """Every suite; `quick` shrinks case counts for smoke runs."""
    scale = 10 if quick else 1
    return [
        geometry_suite(seed, cases=1000 // scale),
        gradient_suite(seed, cases=100 // scale),
        hessian_suite(seed, cases=100 // scale, hessian_sign=hessian_sign),
        nuclear_norm_suite(seed, cases=20),
        alignment_suite(seed, instances=3, draws=100 // scale),
    ]
