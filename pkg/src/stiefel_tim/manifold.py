"""Quotient geometry of full-column-rank complex matrices modulo U(r).

Points are ``N x r`` complex matrices ``Y`` of full column rank; ``Y`` and
``Y @ Q`` are identified for unitary ``Q``. Tangent vectors at a point are
stored through their horizontal lift, i.e. matrices ``xi`` with
``Y^H xi`` Hermitian.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import (
    DimensionError,
    RankDeficiencyError,
    real_trace_metric,
    solve_skew_lyapunov,
)

__all__ = [
    "FactorPoint",
    "HorizontalVector",
    "RetractionError",
    "project_horizontal",
    "retract",
    "transport",
    "random_point",
    "random_horizontal",
    "complex_gaussian",
]

# smallest/largest singular value ratio below which a factor is rank deficient
RANK_RTOL = 1e-10


class RetractionError(RankDeficiencyError):
    """The retracted point left the set of full-column-rank matrices."""


@dataclass(frozen=True, eq=False)
class FactorPoint:
    """Full-column-rank ``N x r`` complex matrix with its cached Gram matrix."""

    Y: np.ndarray
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Y = np.array(self.Y, dtype=complex)
        if Y.ndim != 2 or Y.shape[1] < 1 or Y.shape[1] > Y.shape[0]:
            raise DimensionError(f"factor must be N x r with 1 <= r <= N, got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise RankDeficiencyError("factor has non-finite entries")
        Y.setflags(write=False)
        gram = Y.conj().T @ Y
        gram = 0.5 * (gram + gram.conj().T)
        gram.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "gram", gram)
        lam = self.gram_eig[0]
        # singular values of Y are sqrt of the Gram eigenvalues
        if not lam[-1] > 0 or lam[0] <= (RANK_RTOL**2) * lam[-1]:
            raise RankDeficiencyError("factor is not of full column rank")

    @property
    def shape(self):
        return self.Y.shape

    @cached_property
    def gram_eig(self):
        return np.linalg.eigh(self.gram)


@dataclass(frozen=True, eq=False)
class HorizontalVector:
    """Horizontal lift `xi` of a tangent vector at `anchor`."""

    xi: np.ndarray
    anchor: FactorPoint

    def norm(self):
        return np.sqrt(real_trace_metric(self.xi, self.xi))

    def inner(self, other):
        return real_trace_metric(self.xi, other.xi)

    def is_horizontal(self, rtol=1e-10):
        Y = self.anchor.Y
        A = Y.conj().T @ self.xi
        scale = np.linalg.norm(self.xi) * np.linalg.norm(Y)
        return np.linalg.norm(A - A.conj().T) <= rtol * max(scale, np.finfo(float).tiny)


def _vertical_part(Y: FactorPoint, v):
    S = Y.Y.conj().T @ v
    S = S - S.conj().T
    return solve_skew_lyapunov(Y.gram, S, eig=Y.gram_eig)


def project_horizontal(Y: FactorPoint, v) -> HorizontalVector:
    """Orthogonal projection of `v` onto the horizontal space at `Y`.

    Returns ``v - Y @ W`` where the skew-Hermitian `W` solves
    ``Y^H Y W + W Y^H Y = Y^H v - v^H Y``.
    """
    v = np.asarray(v)
    if v.shape != Y.shape:
        raise DimensionError(f"direction {v.shape} does not match point {Y.shape}")
    W = _vertical_part(Y, v)
    return HorizontalVector(v - Y.Y @ W, Y)


def retract(Y: FactorPoint, xi: HorizontalVector, step=1.0) -> FactorPoint:
    """Map ``Y + step * xi`` back to a point, checking full column rank."""
    if step == 0:
        return Y
    try:
        return FactorPoint(Y.Y + step * xi.xi)
    except RankDeficiencyError as exc:
        raise RetractionError(str(exc)) from exc


def transport(xi: HorizontalVector, to: FactorPoint) -> HorizontalVector:
    """Carry `xi` to the horizontal space at `to`.

    The differential of the additive retraction is the identity; the result
    is re-projected so that it is horizontal at the destination.
    """
    if to is xi.anchor:
        return xi
    return project_horizontal(to, xi.xi)


def complex_gaussian(rng, shape):
    """Standard circularly-symmetric complex Gaussian samples, ``E|z|^2 = 1``."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_point(N, r, seed=None) -> FactorPoint:
    """I.i.d. standard complex Gaussian ``N x r`` factor, redrawn if rank deficient."""
    if not 1 <= r <= N:
        raise DimensionError(f"need 1 <= r <= N, got N={N}, r={r}")
    rng = np.random.default_rng(seed)
    while True:
        try:
            return FactorPoint(complex_gaussian(rng, (N, r)))
        except RankDeficiencyError:
            continue


def random_horizontal(Y: FactorPoint, seed=None) -> HorizontalVector:
    """Unit-norm random horizontal vector at `Y`."""
    rng = np.random.default_rng(seed)
    h = project_horizontal(Y, complex_gaussian(rng, Y.shape))
    return HorizontalVector(h.xi / h.norm(), Y)
