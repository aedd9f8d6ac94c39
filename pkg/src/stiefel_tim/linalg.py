"""Dense complex kernels shared by the manifold and the solvers."""

import numpy as np

__all__ = [
    "DimensionError",
    "RankDeficiencyError",
    "herm_inner",
    "real_trace_metric",
    "solve_skew_lyapunov",
    "svd",
    "numeric_rank",
]


class DimensionError(ValueError):
    """Raised when matrix operands have incompatible shapes."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when a factor matrix has (numerically) lost full column rank."""


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def herm_inner(A, B):
    """Hermitian inner product ``Tr(A^H B)``, conjugate-linear in `A`."""
    A = np.asarray(A)
    B = np.asarray(B)
    _same_shape(A, B)
    return complex(np.vdot(A, B))


def real_trace_metric(xi, zeta):
    """Real part of the trace inner product, ``Tr(Re(xi^H zeta))``.

    This is the Riemannian metric used on the total space of complex
    ``N x r`` matrices. It is symmetric and bilinear over the reals.
    """
    xi = np.asarray(xi)
    zeta = np.asarray(zeta)
    _same_shape(xi, zeta)
    return float(np.vdot(xi, zeta).real)


def solve_skew_lyapunov(G, S, eig=None):
    """Solve ``G @ W + W @ G = S`` for skew-Hermitian `W`.

    Parameters
    ----------
    G : (r, r) complex ndarray
        Hermitian positive-definite matrix (a Gram matrix ``Y^H Y``).
    S : (r, r) complex ndarray
        Skew-Hermitian right-hand side.
    eig : tuple of (ndarray, ndarray), optional
        Precomputed ``(eigenvalues, eigenvectors)`` of `G`. Callers that solve
        many systems with the same `G` pass this to skip the decomposition.

    Returns
    -------
    W : (r, r) complex ndarray

    Raises
    ------
    RankDeficiencyError
        If the smallest eigenvalue of `G` is below ``1e-12`` times the largest.
    """
    S = np.asarray(S)
    if eig is None:
        G = np.asarray(G)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise DimensionError(f"Gram matrix must be square, got {G.shape}")
        lam, Q = np.linalg.eigh(G)
    else:
        lam, Q = eig
    if S.shape != (lam.size, lam.size):
        raise DimensionError(f"right-hand side {S.shape} does not match order {lam.size}")
    if not lam[-1] > 0 or lam[0] <= 1e-12 * lam[-1]:
        raise RankDeficiencyError("Gram matrix is not positive definite")
    M = (Q.conj().T @ S @ Q) / (lam[:, None] + lam[None, :])
    W = Q @ M @ Q.conj().T
    return 0.5 * (W - W.conj().T)


def svd(A):
    """Thin SVD ``A = U @ diag(sigma) @ V^H`` with descending `sigma`.

    Note that the third factor is returned as `V`, not ``V^H``.
    """
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("svd input contains non-finite entries")
    U, sigma, Vh = np.linalg.svd(A, full_matrices=False)
    return U, sigma, Vh.conj().T


def numeric_rank(sigma, tol_rel=1e-6):
    """Number of singular values above ``tol_rel * sigma[0]``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > tol_rel * sigma[0]))
