"""Topological cooperation as a generalized low-rank problem.

A network instance (connectivity, message sharing, stream counts) is turned
into an affine system ``A(X) = b`` over ``X = U^H V`` in ``C^{m x n}``.
Each scalar constraint is ``sum of X entries over a support set == target``
with unit coefficients, so a constraint is stored as a list of flat indices.

Column layout of ``X``: transmitter-major, then message, then stream. The
block for precoder ``V_ji`` (transmitter ``j``, message ``i``) occupies
columns ``j*m + off[i] : j*m + off[i] + d_i`` where ``off`` are the stream
offsets of the receivers. Row block ``k`` holds rows ``off[k] : off[k] + d_k``.

Indices are 0-based internally and 1-based in JSON files and error messages.
"""

import json
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError, svd
from .manifold import FactorPoint, HorizontalVector

__all__ = [
    "MalformedInstanceError",
    "InternalConsistencyError",
    "NetworkInstance",
    "AffineSystem",
    "ProblemHandle",
    "build_affine_system",
    "cost",
    "euclidean_gradient",
    "riemannian_gradient",
    "riemannian_hessian",
    "hessian_operator",
    "apply_affine",
    "residual",
    "recover_X",
    "balance_factors",
]

SUM_TO_IDENTITY = 0
ZERO = 1


class MalformedInstanceError(ValueError):
    """A network instance violates its structural invariants."""


class InternalConsistencyError(AssertionError):
    """A computed quantity violates an identity it must satisfy by construction."""


@dataclass(frozen=True)
class NetworkInstance:
    """Connectivity pattern, per-transmitter message sets and stream counts.

    Attributes
    ----------
    K : int
        Number of transmitter/receiver pairs.
    d : tuple of int
        Streams per message.
    edges : frozenset of (int, int)
        Pairs ``(k, j)``: receiver ``k`` hears transmitter ``j``.
    sharing : tuple of frozenset of int
        ``sharing[j]`` is the set of messages available at transmitter ``j``.
    """

    K: int
    d: tuple
    edges: frozenset
    sharing: tuple

    def __post_init__(self):
        K = self.K
        if not isinstance(K, (int, np.integer)) or K < 1:
            raise MalformedInstanceError(f"K: must be a positive integer, got {K!r}")
        d = tuple(int(x) for x in self.d)
        if len(d) != K:
            raise MalformedInstanceError(f"d: expected {K} stream counts, got {len(d)}")
        if any(x < 1 for x in d):
            raise MalformedInstanceError("d: stream counts must be >= 1")
        edges = frozenset((int(k), int(j)) for k, j in self.edges)
        for k, j in edges:
            if not (0 <= k < K and 0 <= j < K):
                raise MalformedInstanceError(f"edges: pair [{k + 1}, {j + 1}] out of range 1..{K}")
        for k in range(K):
            if (k, k) not in edges:
                raise MalformedInstanceError(f"edges: direct link [{k + 1}, {k + 1}] missing")
        if len(self.sharing) != K:
            raise MalformedInstanceError(f"sharing: expected {K} sets, got {len(self.sharing)}")
        sharing = tuple(frozenset(int(i) for i in s) for s in self.sharing)
        for j, s in enumerate(sharing):
            if j not in s:
                raise MalformedInstanceError(f"sharing: transmitter {j + 1} must hold its own message")
            if any(not 0 <= i < K for i in s):
                raise MalformedInstanceError(f"sharing: index out of range 1..{K} at transmitter {j + 1}")
        object.__setattr__(self, "K", int(K))
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "sharing", sharing)

    @classmethod
    def from_lists(cls, K, d, edges, sharing):
        if isinstance(d, (int, np.integer)):
            d = [d] * K
        return cls(K, tuple(d), frozenset(map(tuple, edges)), tuple(map(frozenset, sharing)))

    @property
    def m(self):
        return sum(self.d)

    @property
    def n(self):
        return self.K * self.m

    @property
    def N(self):
        return self.m + self.n

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.d)[:-1]]).astype(int)

    def connected(self, k, j):
        return (k, j) in self.edges

    # JSON uses 1-based indices.
    def to_dict(self):
        return {
            "K": self.K,
            "d": list(self.d),
            "edges": sorted([k + 1, j + 1] for k, j in self.edges),
            "sharing": [sorted(i + 1 for i in s) for s in self.sharing],
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise MalformedInstanceError("topology: expected a JSON object")
        for key in ("K", "edges", "sharing"):
            if key not in data:
                raise MalformedInstanceError(f"{key}: missing field")
        K = data["K"]
        if not isinstance(K, int) or isinstance(K, bool) or K < 1:
            raise MalformedInstanceError(f"K: must be a positive integer, got {K!r}")
        d = data.get("d", [1] * K)
        if isinstance(d, int):
            d = [d] * K
        if not isinstance(d, list) or not all(isinstance(x, int) for x in d):
            raise MalformedInstanceError("d: must be an integer or a list of integers")
        try:
            edges = [(int(k) - 1, int(j) - 1) for k, j in data["edges"]]
        except (TypeError, ValueError):
            raise MalformedInstanceError("edges: must be a list of [k, j] pairs") from None
        try:
            sharing = [[int(i) - 1 for i in s] for s in data["sharing"]]
        except (TypeError, ValueError):
            raise MalformedInstanceError("sharing: must be a list of index lists") from None
        return cls.from_lists(K, d, edges, sharing)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedInstanceError(f"topology: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class AffineSystem:
    """Sparse unit-coefficient constraints ``<A_i, X> = b_i`` on ``X`` (m x n).

    ``flat_index[t]`` is a position in ``X.ravel()`` that belongs to constraint
    ``owner[t]``. Every position is owned by at most one constraint, so the
    coefficient matrices have disjoint supports.
    """

    m: int
    n: int
    flat_index: np.ndarray
    owner: np.ndarray
    b: np.ndarray
    kind: np.ndarray

    @property
    def N(self):
        return self.m + self.n

    @property
    def l(self):
        return self.b.size

    @property
    def rows(self):
        return self.flat_index // self.n

    @property
    def cols(self):
        return self.flat_index % self.n

    def coefficient_matrix(self, i):
        """Dense ``A_i`` (m x n); for tests and small instances."""
        A = np.zeros(self.m * self.n)
        A[self.flat_index[self.owner == i]] = 1.0
        return A.reshape(self.m, self.n)

    def lifted_matrix(self, i):
        """Dense ``B_i = [[0, A_i], [0, 0]]`` (N x N)."""
        B = np.zeros((self.N, self.N))
        B[: self.m, self.m :] = self.coefficient_matrix(i)
        return B

    def supports(self):
        """Constraint supports as a list of sorted flat-index tuples."""
        order = np.argsort(self.owner, kind="stable")
        split = np.cumsum(np.bincount(self.owner, minlength=self.l))[:-1]
        return [tuple(sorted(s)) for s in np.split(self.flat_index[order], split)]


def build_affine_system(inst: NetworkInstance) -> AffineSystem:
    """Assemble the alignment constraints of `inst` as an affine system.

    For each receiver ``k`` the desired blocks ``X^k_{kj}`` over transmitters
    ``j`` that reach ``k`` and hold message ``k`` must sum to the identity
    (one scalar constraint per entry). For every connected pair ``(k, j)`` and
    every other message ``i`` held at ``j``, block ``X^i_{kj}`` must vanish
    (one scalar constraint per entry).
    """
    m, n = inst.m, inst.n
    off = inst.offsets
    flat, owner, b, kind = [], [], [], []
    seen = set()
    count = 0

    def block_entry(k, j, i, a, c):
        return (off[k] + a) * n + j * m + off[i] + c

    for k in range(inst.K):
        senders = [j for j in range(inst.K) if (k, j) in inst.edges and k in inst.sharing[j]]
        for a in range(inst.d[k]):
            for c in range(inst.d[k]):
                support = tuple(block_entry(k, j, k, a, c) for j in senders)
                flat.extend(support)
                owner.extend([count] * len(support))
                b.append(1.0 if a == c else 0.0)
                kind.append(SUM_TO_IDENTITY)
                seen.add(support)
                count += 1
    for k in range(inst.K):
        for j in range(inst.K):
            if (k, j) not in inst.edges:
                continue
            for i in sorted(inst.sharing[j]):
                if i == k:
                    continue
                for a in range(inst.d[k]):
                    for c in range(inst.d[i]):
                        support = (block_entry(k, j, i, a, c),)
                        if support in seen:
                            continue
                        seen.add(support)
                        flat.append(support[0])
                        owner.append(count)
                        b.append(0.0)
                        kind.append(ZERO)
                        count += 1
    flat = np.asarray(flat, dtype=np.intp)
    if np.unique(flat).size != flat.size:
        raise InternalConsistencyError("constraint supports overlap")
    return AffineSystem(
        m=m,
        n=n,
        flat_index=flat,
        owner=np.asarray(owner, dtype=np.intp),
        b=np.asarray(b),
        kind=np.asarray(kind, dtype=np.int8),
    )


@dataclass(frozen=True, eq=False)
class ProblemHandle:
    """Fixed-rank least-squares subproblem at rank `r`."""

    system: AffineSystem
    r: int

    def __post_init__(self):
        if not 1 <= self.r <= self.system.N:
            raise DimensionError(f"rank must lie in [1, {self.system.N}], got {self.r}")


def apply_affine(sys: AffineSystem, X):
    """Vector of constraint values ``[<A_i, X>]``."""
    X = np.asarray(X)
    if X.shape != (sys.m, sys.n):
        raise DimensionError(f"X must be {sys.m} x {sys.n}, got {X.shape}")
    vals = X.ravel()[sys.flat_index]
    out = np.bincount(sys.owner, weights=vals.real, minlength=sys.l).astype(complex)
    out.imag = np.bincount(sys.owner, weights=vals.imag, minlength=sys.l)
    return out


def residual(sys: AffineSystem, X):
    """Normalized constraint violation ``m^{-1/2} ||A(X) - b||``."""
    return float(np.linalg.norm(apply_affine(sys, X) - sys.b) / np.sqrt(sys.m))


def recover_X(Y, m, n):
    """``X = L R^H`` from the stacked factor ``Y = [L; R]``."""
    Y = Y.Y if isinstance(Y, FactorPoint) else np.asarray(Y)
    if Y.shape[0] != m + n:
        raise DimensionError(f"factor has {Y.shape[0]} rows, expected {m + n}")
    return Y[:m] @ Y[m:].conj().T


def balance_factors(Y, m):
    """Refactor ``Y = [L; R]`` so that ``L^H L = R^H R``, keeping ``L R^H``.

    The cost only sees ``L R^H``, so every ``(L G, R G^{-H})`` is equally
    good, and first-order methods preserve ``L^H L - R^H R``. A random start
    has ``||R|| >> ||L||`` when ``n >> m``, which makes the descent badly
    conditioned; splitting the SVD of ``L R^H`` evenly removes that.
    """
    Y = Y.Y if isinstance(Y, FactorPoint) else np.asarray(Y)
    r = Y.shape[1]
    U, sigma, V = svd(Y[:m] @ Y[m:].conj().T)
    root = np.sqrt(sigma[:r])
    return FactorPoint(np.vstack([U[:, :r] * root, V[:, :r] * root]))


def _check_shape(p: ProblemHandle, Y: FactorPoint):
    if Y.shape != (p.system.N, p.r):
        raise DimensionError(f"point must be {p.system.N} x {p.r}, got {Y.shape}")


def _coefficients(sys, Y):
    """Constraint residuals ``C_i = <B_i, Y Y^H> - b_i``."""
    return apply_affine(sys, recover_X(Y, sys.m, sys.n)) - sys.b


def _weighted_sum(sys, coeffs):
    """Dense ``sum_i coeffs_i A_i``."""
    S = np.zeros(sys.m * sys.n, dtype=complex)
    S[sys.flat_index] = coeffs[sys.owner]
    return S.reshape(sys.m, sys.n)


def _lifted_product(S, Y, m):
    """``(S_lift + S_lift^H) @ Y`` with ``S_lift = [[0, S], [0, 0]]``."""
    return np.vstack([S @ Y[m:], S.conj().T @ Y[:m]])


def cost(p: ProblemHandle, Y: FactorPoint):
    """``f(Y) = 1/2 ||B(Y Y^H) - b||^2``."""
    _check_shape(p, Y)
    C = _coefficients(p.system, Y.Y)
    return 0.5 * float(np.vdot(C, C).real)


def euclidean_gradient(p: ProblemHandle, Y: FactorPoint):
    """``sum_i (C_i B_i + conj(C_i) B_i^H) Y``."""
    _check_shape(p, Y)
    sys = p.system
    S = _weighted_sum(sys, _coefficients(sys, Y.Y))
    return _lifted_product(S, Y.Y, sys.m)


def riemannian_gradient(p: ProblemHandle, Y: FactorPoint, rtol=1e-8) -> HorizontalVector:
    """Euclidean gradient, which is already horizontal; checked, not projected.

    ``Y^H grad = L^H S R + (L^H S R)^H``, so the round-off in its skew part
    scales with ``||S|| ||Y||^2`` rather than with ``||grad||``.
    """
    _check_shape(p, Y)
    sys = p.system
    S = _weighted_sum(sys, _coefficients(sys, Y.Y))
    xi = _lifted_product(S, Y.Y, sys.m)
    A = Y.Y.conj().T @ xi
    scale = np.linalg.norm(S) * np.linalg.norm(Y.Y) ** 2
    if np.linalg.norm(A - A.conj().T) > rtol * max(scale, np.finfo(float).tiny):
        raise InternalConsistencyError("gradient is not horizontal")
    return HorizontalVector(xi, Y)


def hessian_operator(p: ProblemHandle, Y: FactorPoint, sign=1.0):
    """Return ``eta -> Hess f(Y)[eta]`` acting on raw horizontal arrays.

    Everything that depends on `Y` alone (residual matrix, Gram eigenbasis)
    is computed once, and operands are stacked so that each product costs six
    small matrix multiplications; truncated CG calls this many times per
    outer step. `sign` exists as a fault injection hook for the self-check
    suites.
    """
    _check_shape(p, Y)
    sys = p.system
    m, n, l, r = sys.m, sys.n, sys.l, p.r
    Ym = Y.Y
    S = _weighted_sum(sys, _coefficients(sys, Ym))
    lam, Q = Y.gram_eig
    inv_sum = 1.0 / (lam[:, None] + lam[None, :])
    YQ = Ym @ Q
    QhYh = YQ.conj().T
    Qh = Q.conj().T
    index, owner = sys.flat_index, sys.owner
    # [L, eta_L] and [eta_R, R] for dX = L eta_R^H + eta_L R^H
    left = np.empty((m, 2 * r), dtype=complex)
    left[:, :r] = Ym[:m]
    right = np.empty((n, 2 * r), dtype=complex)
    right[:, r:] = Ym[m:]
    # [S, S_eta] @ [eta_R; R] and [S^H, S_eta^H] @ [eta_L; L]
    S_top = np.zeros((m, 2 * n), dtype=complex)
    S_top[:, :n] = S
    S_eta = S_top[:, n:]
    S_eta_flat = np.zeros(m * n, dtype=complex)
    S_bot = np.zeros((n, 2 * m), dtype=complex)
    S_bot[:, :m] = S.conj().T
    stack_top = np.empty((2 * n, r), dtype=complex)
    stack_top[n:] = Ym[m:]
    stack_bot = np.empty((2 * m, r), dtype=complex)
    stack_bot[m:] = Ym[:m]

    def apply(eta):
        # C_eta,i = <A_i, L eta_R^H + eta_L R^H>
        left[:, r:] = eta[:m]
        right[:, :r] = eta[m:]
        vals = (left @ right.conj().T).ravel()[index]
        c = np.bincount(owner, vals.real, l) + 1j * np.bincount(owner, vals.imag, l)
        S_eta_flat[index] = c[owner]
        S_eta[...] = S_eta_flat.reshape(m, n)
        S_bot[:, m:] = S_eta.conj().T
        stack_top[:n] = eta[m:]
        stack_bot[:m] = eta[:m]
        D = np.empty_like(eta)
        np.matmul(S_top, stack_top, out=D[:m])
        np.matmul(S_bot, stack_bot, out=D[m:])
        # horizontal projection in the eigenbasis of Y^H Y
        B = (QhYh @ D) @ Q
        M = (B - B.conj().T) * inv_sum
        D -= (YQ @ M) @ Qh
        if sign != 1.0:
            D *= sign
        return D

    return apply


def riemannian_hessian(p: ProblemHandle, Y: FactorPoint, eta: HorizontalVector) -> HorizontalVector:
    """Horizontal projection of the directional derivative of the gradient."""
    return HorizontalVector(hessian_operator(p, Y)(eta.xi), Y)
